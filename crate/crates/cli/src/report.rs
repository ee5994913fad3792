//! Report bundle: every table in one directory, with no paths or
//! timestamps, so identical inputs give identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use effdim::EffDimReport;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, AccuracyRow, Confidence, EvalTable, FractionRow, Separation, SpectrumFit, ADVERSARIAL,
    CONFIDENCE, FITS, HISTOGRAM, OOD, RANDOM, SEPARATION, TRAINED,
};
use crate::pipeline::{read_json, write_json, Pipeline, TrainResult, TRAIN_LOG, TRAIN_RESULT};
use crate::pool::{FamilySummary, SUMMARY};
use crate::{Error, Result};

pub const REPORT_DIR: &str = "report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub test_accuracy: Vec<f64>,
    pub epochs: Vec<usize>,
    pub effdim_trained: Vec<f64>,
    pub effdim_random: Vec<f64>,
    pub channels: Vec<usize>,
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub profile: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub tasks: Vec<TaskSummary>,
    pub ood: Vec<AccuracyRow>,
    pub adversarial: Vec<FractionRow>,
    pub confidence: Vec<Confidence>,
    pub separation: Separation,
    pub fits: Vec<SpectrumFit>,
}

fn rel(p: &Pipeline, path: &Path) -> String {
    path.strip_prefix(&p.out)
        .unwrap_or(path)
        .display()
        .to_string()
}

/// Stage directories the report reads, as paths relative to the output
/// root, paired with whether they are complete.
pub fn required(p: &Pipeline) -> Vec<(String, bool)> {
    let mut dirs = Vec::new();
    for f in &p.cfg.families {
        dirs.push(p.sim_dir(f));
    }
    for t in &p.cfg.tasks {
        dirs.push(p.task_dir(t));
        for &s in &p.cfg.seeds {
            dirs.push(p.model_dir(t, s));
        }
        dirs.push(analysis::effdim_dir(p, t));
    }
    for s in p.eval_sets() {
        dirs.push(p.eval_dir(&s));
    }
    dirs.push(analysis::eval_dir(p));
    dirs.push(analysis::spectra_dir(p));
    dirs.into_iter()
        .map(|d| (rel(p, &d.path), d.is_complete()))
        .collect()
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).map_err(|e| Error::Artifact {
        path: from.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn write_effdim(w: &mut csv::Writer<fs::File>, variant: &str, r: &EffDimReport) -> Result<()> {
    for s in &r.stages {
        w.write_record([
            r.task.clone(),
            variant.into(),
            s.stage.to_string(),
            s.channels.to_string(),
            fmt(s.mean),
            fmt(s.std),
        ])?;
    }
    Ok(())
}

/// Collects the finished artifacts into `<out>/report`. Missing stages are
/// listed in the error after whatever exists has been written.
pub fn write_report(p: &Pipeline) -> Result<PathBuf> {
    let missing: Vec<String> = required(p)
        .into_iter()
        .filter(|(_, done)| !done)
        .map(|(path, _)| path)
        .collect();
    let dir = p.out.join(REPORT_DIR);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(dir.join("training_logs"))?;
    fs::create_dir_all(dir.join("spectra"))?;
    write_json(&dir.join("config.json"), &p.cfg)?;

    let mut sims = Vec::new();
    for f in &p.cfg.families {
        let d = p.sim_dir(f);
        if d.is_complete() {
            sims.push(read_json::<FamilySummary>(&d.path.join(SUMMARY))?);
        }
    }
    write_json(&dir.join("simulations.json"), &sims)?;

    let mut train = csv::Writer::from_path(dir.join("training.csv"))?;
    train.write_record(["task", "seed", "epochs", "test_accuracy"])?;
    let mut eff = csv::Writer::from_path(dir.join("effdim.csv"))?;
    eff.write_record(["task", "variant", "stage", "channels", "mean", "std"])?;
    let mut tasks = Vec::new();
    let mut eff_json = Vec::new();
    for t in &p.cfg.tasks {
        let mut ts = TaskSummary {
            task: t.name.clone(),
            test_accuracy: Vec::new(),
            epochs: Vec::new(),
            effdim_trained: Vec::new(),
            effdim_random: Vec::new(),
            channels: p.cfg.net.channels.clone(),
        };
        for &s in &p.cfg.seeds {
            let d = p.model_dir(t, s);
            if !d.is_complete() {
                continue;
            }
            let r: TrainResult = read_json(&d.path.join(TRAIN_RESULT))?;
            train.write_record([
                t.name.clone(),
                s.to_string(),
                r.epochs.to_string(),
                fmt(r.test_accuracy),
            ])?;
            ts.test_accuracy.push(r.test_accuracy);
            ts.epochs.push(r.epochs);
            copy(
                &d.path.join(TRAIN_LOG),
                &dir.join("training_logs")
                    .join(format!("{}-s{s}.csv", t.name)),
            )?;
        }
        let d = analysis::effdim_dir(p, t);
        if d.is_complete() {
            let trained: EffDimReport = read_json(&d.path.join(TRAINED))?;
            let random: EffDimReport = read_json(&d.path.join(RANDOM))?;
            write_effdim(&mut eff, "trained", &trained)?;
            write_effdim(&mut eff, "random", &random)?;
            ts.effdim_trained = trained.stages.iter().map(|s| s.mean).collect();
            ts.effdim_random = random.stages.iter().map(|s| s.mean).collect();
            eff_json.push(trained);
            eff_json.push(random);
        }
        tasks.push(ts);
    }
    train.flush()?;
    eff.flush()?;
    write_json(&dir.join("effdim.json"), &eff_json)?;

    let ev = analysis::eval_dir(p);
    let mut ood = Vec::new();
    let mut adversarial = Vec::new();
    let mut conf = Vec::new();
    if ev.is_complete() {
        let o: EvalTable<AccuracyRow> = read_json(&ev.path.join(OOD))?;
        let a: EvalTable<FractionRow> = read_json(&ev.path.join(ADVERSARIAL))?;
        conf = read_json(&ev.path.join(CONFIDENCE))?;
        write_json(&dir.join("ood.json"), &o)?;
        write_json(&dir.join("adversarial.json"), &a)?;
        write_json(&dir.join("confidence.json"), &conf)?;
        copy(&ev.path.join(HISTOGRAM), &dir.join("histogram.csv"))?;
        let mut w = csv::Writer::from_path(dir.join("ood.csv"))?;
        w.write_record(["dataset", "images", "accuracy", "std"])?;
        for r in &o.rows {
            w.write_record([
                r.dataset.clone(),
                r.images.to_string(),
                fmt(r.accuracy),
                fmt(r.std),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("adversarial.csv"))?;
        w.write_record(["dataset", "images", "chaos", "turbulence"])?;
        for r in &a.rows {
            w.write_record([
                r.dataset.clone(),
                r.images.to_string(),
                fmt(r.chaos),
                fmt(r.turbulence),
            ])?;
        }
        w.flush()?;
        ood = o.rows;
        adversarial = a.rows;
    }

    let sp = analysis::spectra_dir(p);
    let mut separation = None;
    let mut fits = Vec::new();
    if sp.is_complete() {
        let mut names: Vec<PathBuf> = fs::read_dir(&sp.path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        for f in names {
            let name = f.file_name().expect("directory entry has a name");
            if name != "DONE" {
                copy(&f, &dir.join("spectra").join(name))?;
            }
        }
        separation = Some(read_json(&sp.path.join(SEPARATION))?);
        fits = read_json(&sp.path.join(FITS))?;
    }

    if let Some(separation) = separation {
        let summary = Summary {
            profile: format!("{:?}", p.cfg.profile).to_lowercase(),
            seed: p.cfg.seed,
            seeds: p.cfg.seeds.clone(),
            tasks,
            ood,
            adversarial,
            confidence: conf,
            separation,
            fits,
        };
        write_json(&dir.join("summary.json"), &summary)?;
    }
    if !missing.is_empty() {
        let mut f = fs::File::create(dir.join("MISSING"))?;
        for m in &missing {
            writeln!(f, "{m}")?;
        }
        return Err(Error::Missing(missing));
    }
    Ok(dir)
}

pub fn read_summary(out: &Path) -> Result<Summary> {
    read_json(&out.join(REPORT_DIR).join("summary.json"))
}
