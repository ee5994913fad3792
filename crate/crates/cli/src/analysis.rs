//! Downstream stages: effective dimension, adversarial/OOD tables,
//! confidence histograms and spectra.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use effdim::{effdim_report, EffDimConfig, EffDimReport};
use flowlab::datasets::{image_to_f64, DatasetManifest, Split};
use flowlab::spectra::{
    fit_power_law, image_power_spectrum, mean_spectrum, EnergySpectrum, Regime,
};
use nnet::{Sample, StageNet};
use serde::{Deserialize, Serialize};

use crate::cache::StageDir;
use crate::config::{Role, TaskConfig, CHAOS, TURBULENCE};
use crate::pipeline::{read_json, write_json, EvalSet, EvalSource, Pipeline};
use crate::pool::read_spectra;
use crate::{Result, StageContext};

const FORMAT: u32 = 1;

pub const TRAINED: &str = "trained.json";
pub const RANDOM: &str = "random.json";
pub const OOD: &str = "ood.json";
pub const ADVERSARIAL: &str = "adversarial.json";
pub const HISTOGRAM: &str = "histogram.csv";
pub const CONFIDENCE: &str = "confidence.json";
pub const FITS: &str = "fits.json";
pub const IMAGE_SPECTRA: &str = "image_spectra.csv";
pub const SEPARATION: &str = "separation.json";

/// Probabilities above this are read as turbulence.
pub const THRESHOLD: f64 = 0.5;
/// Probabilities inside `(CONFIDENT, 1 - CONFIDENT)` count as unsure.
pub const CONFIDENT: f64 = 0.05;

// ---- effective dimension ------------------------------------------

pub fn effdim_dir(p: &Pipeline, task: &TaskConfig) -> StageDir {
    StageDir::new(
        &p.out,
        "effdim",
        &task.name,
        &(
            FORMAT,
            p.model_keys(task),
            p.task_dir(task).key,
            p.cfg.effdim_row_cap,
            p.cfg.seed,
        ),
    )
}

/// Trained and random-initialization reports for one task.
pub fn effdim_task(p: &Pipeline, task: &TaskConfig) -> Result<(EffDimReport, EffDimReport)> {
    let dir = effdim_dir(p, task);
    let stage = format!("effdim {}", task.name);
    if !dir.is_complete() {
        let models = p.models(task)?;
        let (_, test) = p.task_samples(task).stage(&stage)?;
        let initial = p
            .cfg
            .seeds
            .iter()
            .map(|&s| p.initial_checkpoint(s))
            .collect::<Result<Vec<_>>>()?;
        let cfg = EffDimConfig {
            row_cap: p.cfg.effdim_row_cap,
            seed: p.cfg.seed,
        };
        dir.ensure(|d| {
            let trained = effdim_report(&task.name, &models, &test, &cfg)?;
            let random = effdim_report(&format!("{}_random", task.name), &initial, &test, &cfg)?;
            write_json(&d.join(TRAINED), &trained)?;
            write_json(&d.join(RANDOM), &random)?;
            Ok(())
        })
        .stage(&stage)?;
    }
    Ok((
        read_json(&dir.path.join(TRAINED)).stage(&stage)?,
        read_json(&dir.path.join(RANDOM)).stage(&stage)?,
    ))
}

pub fn effdim(p: &Pipeline) -> Result<()> {
    for t in &p.cfg.tasks {
        effdim_task(p, t)?;
    }
    Ok(())
}

// ---- evaluation tables --------------------------------------------

/// Class fractions at threshold 0.5, pooled over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub dataset: String,
    pub images: usize,
    pub chaos: f64,
    pub turbulence: f64,
    pub per_seed_turbulence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub dataset: String,
    pub images: usize,
    pub accuracy: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable<R> {
    pub task: String,
    pub rows: Vec<R>,
    /// Datasets that could not be evaluated, with the reason.
    pub skipped: Vec<String>,
}

impl<R> EvalTable<R> {
    fn new(task: &str) -> Self {
        Self {
            task: task.into(),
            rows: Vec::new(),
            skipped: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub dataset: String,
    pub probabilities: usize,
    /// Share of probabilities outside `(0.05, 0.95)`.
    pub confident: f64,
}

pub fn fraction_row(dataset: &str, per_seed: &[Vec<f64>]) -> FractionRow {
    let images = per_seed.first().map_or(0, Vec::len);
    let positives: Vec<usize> = per_seed
        .iter()
        .map(|ps| ps.iter().filter(|&&q| q > THRESHOLD).count())
        .collect();
    let total = (images * per_seed.len()).max(1) as f64;
    let turbulence = positives.iter().sum::<usize>() as f64 / total;
    FractionRow {
        dataset: dataset.into(),
        images,
        chaos: 1.0 - turbulence,
        turbulence,
        per_seed_turbulence: positives
            .iter()
            .map(|&c| c as f64 / images.max(1) as f64)
            .collect(),
    }
}

pub fn accuracy_row(dataset: &str, per_seed: &[Vec<f64>], labels: &[u8]) -> AccuracyRow {
    let acc: Vec<f64> = per_seed
        .iter()
        .map(|ps| {
            let hits = ps
                .iter()
                .zip(labels)
                .filter(|(&q, &l)| (q > THRESHOLD) == (l == 1))
                .count();
            hits as f64 / labels.len().max(1) as f64
        })
        .collect();
    let (mean, std) = mean_std(&acc);
    AccuracyRow {
        dataset: dataset.into(),
        images: labels.len(),
        accuracy: mean,
        std,
        per_seed: acc,
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n.max(1.0);
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Counts of probabilities in `bins` equal bins over `[0, 1]`.
pub fn probability_histogram(probs: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &q in probs {
        counts[((q * bins as f64) as usize).min(bins - 1)] += 1;
    }
    counts
}

pub fn confidence(dataset: &str, probs: &[f64]) -> Confidence {
    let sure = probs
        .iter()
        .filter(|&&q| q <= CONFIDENT || q >= 1.0 - CONFIDENT)
        .count();
    Confidence {
        dataset: dataset.into(),
        probabilities: probs.len(),
        confident: sure as f64 / probs.len().max(1) as f64,
    }
}

fn probabilities(nets: &[StageNet<f32>], set: &[Sample]) -> Result<Vec<Vec<f64>>> {
    nets.iter()
        .map(|n| Ok(nnet::train::accuracy(n, set)?.1))
        .collect()
}

pub fn eval_dir(p: &Pipeline) -> StageDir {
    let task = p.eval_task();
    StageDir::new(
        &p.out,
        "eval",
        &task.name,
        &(
            FORMAT,
            p.model_keys(task),
            p.task_dir(task).key,
            p.eval_keys(),
            p.cfg.histogram_bins,
        ),
    )
}

struct Tables {
    ood: EvalTable<AccuracyRow>,
    adversarial: EvalTable<FractionRow>,
    histograms: Vec<(String, Vec<usize>)>,
    confidence: Vec<Confidence>,
}

fn build_tables(p: &Pipeline) -> Result<Tables> {
    let task = p.eval_task();
    let nets = p
        .models(task)?
        .iter()
        .map(|c| Ok(c.network()?))
        .collect::<Result<Vec<_>>>()?;
    let (_, test) = p.task_samples(task)?;
    let mut t = Tables {
        ood: EvalTable::new(&task.name),
        adversarial: EvalTable::new(&task.name),
        histograms: Vec::new(),
        confidence: Vec::new(),
    };
    let bins = p.cfg.histogram_bins;
    let probs = probabilities(&nets, &test)?;
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    t.ood.rows.push(accuracy_row("train", &probs, &labels));
    let pooled: Vec<f64> = probs.concat();
    t.histograms
        .push(("train".into(), probability_histogram(&pooled, bins)));
    t.confidence.push(confidence("train", &pooled));
    for set in p.eval_sets() {
        let (m, samples) = match p.eval_samples(&set) {
            Ok(x) => x,
            Err(e) => {
                log::warn!("skipping evaluation set {}: {e}", set.name);
                let skipped = format!("{}: {e}", set.name);
                match set.role {
                    Role::Ood => t.ood.skipped.push(skipped),
                    _ => t.adversarial.skipped.push(skipped),
                }
                continue;
            }
        };
        let probs = probabilities(&nets, &samples)?;
        let pooled: Vec<f64> = probs.concat();
        t.histograms
            .push((set.name.clone(), probability_histogram(&pooled, bins)));
        t.confidence.push(confidence(&set.name, &pooled));
        if set.role == Role::Ood {
            let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
            t.ood.rows.push(accuracy_row(&set.name, &probs, &labels));
        }
        let rows: Vec<&str> = m.split(Split::Test).map(|r| r.label.as_str()).collect();
        let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, l) in rows.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        let single = by_label.len() == 1;
        for (label, idx) in by_label {
            let sub: Vec<Vec<f64>> = probs
                .iter()
                .map(|ps| idx.iter().map(|&i| ps[i]).collect())
                .collect();
            let name = match (&set.source, single) {
                (EvalSource::Family { .. }, false) => format!("{}/{label}", set.name),
                _ => set.name.clone(),
            };
            t.adversarial.rows.push(fraction_row(&name, &sub));
        }
    }
    Ok(t)
}

pub fn evaluate(p: &Pipeline) -> Result<()> {
    let dir = eval_dir(p);
    if dir.is_complete() {
        return Ok(());
    }
    let tables = build_tables(p).stage("evaluate")?;
    dir.ensure(|d| {
        write_json(&d.join(OOD), &tables.ood)?;
        write_json(&d.join(ADVERSARIAL), &tables.adversarial)?;
        write_json(&d.join(CONFIDENCE), &tables.confidence)?;
        let bins = p.cfg.histogram_bins;
        let mut w = csv::Writer::from_path(d.join(HISTOGRAM))?;
        w.write_record(["dataset", "lo", "hi", "count"])?;
        for (name, counts) in &tables.histograms {
            for (b, c) in counts.iter().enumerate() {
                w.write_record([
                    name.clone(),
                    format!("{:.4}", b as f64 / bins as f64),
                    format!("{:.4}", (b + 1) as f64 / bins as f64),
                    c.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })
    .stage("evaluate")?;
    Ok(())
}

pub fn ood_table(p: &Pipeline) -> Result<EvalTable<AccuracyRow>> {
    evaluate(p)?;
    read_json(&eval_dir(p).path.join(OOD))
}

pub fn adversarial_table(p: &Pipeline) -> Result<EvalTable<FractionRow>> {
    evaluate(p)?;
    read_json(&eval_dir(p).path.join(ADVERSARIAL))
}

// ---- spectra --------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    pub family: String,
    pub window: String,
    pub snapshots: usize,
    pub band: (f64, f64),
    pub slope: Option<f64>,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub k_forcing: f64,
    /// Largest `|Δmean| / combined standard error` over shells below `k_forcing`.
    pub max_z: f64,
    pub shell: usize,
    pub shells: usize,
}

pub fn spectra_dir(p: &Pipeline) -> StageDir {
    let sims: Vec<String> = p.cfg.families.iter().map(|f| p.sim_dir(f).key).collect();
    let fourier: Vec<String> = p
        .eval_sets()
        .iter()
        .filter(|s| matches!(s.source, EvalSource::Fourier { .. }))
        .map(|s| p.eval_dir(s).key)
        .collect();
    StageDir::new(
        &p.out,
        "spectra",
        "spectra",
        &(FORMAT, sims, p.task_dir(p.eval_task()).key, fourier),
    )
}

fn fit(family: &str, window: &str, spectra: &[&EnergySpectrum], band: (f64, f64)) -> SpectrumFit {
    let f = (!spectra.is_empty())
        .then(|| fit_power_law(&mean_spectrum(spectra.iter().copied()), band).ok())
        .flatten();
    SpectrumFit {
        family: family.into(),
        window: window.into(),
        snapshots: spectra.len(),
        band,
        slope: f.as_ref().map(|f| f.slope),
        r2: f.as_ref().map(|f| f.r2),
    }
}

fn write_sim_spectra(p: &Pipeline, d: &Path, fits: &mut Vec<SpectrumFit>) -> Result<()> {
    for fam in &p.cfg.families {
        p.pool(fam)?;
        let series = read_spectra(&p.sim_dir(fam).path)?;
        let of = |r: Regime| -> Vec<&EnergySpectrum> {
            series.iter().filter(|s| s.2 == r).map(|s| &s.3).collect()
        };
        let (chaos, turb) = (of(Regime::Chaotic), of(Regime::Turbulent));
        let (cm, tm) = (
            mean_spectrum(chaos.iter().copied()),
            mean_spectrum(turb.iter().copied()),
        );
        let mut w = BufWriter::new(File::create(d.join(format!("sim_{}.csv", fam.name)))?);
        writeln!(w, "k,chaos,turbulence")?;
        for k in 0..cm.e.len().max(tm.e.len()) {
            let at = |s: &EnergySpectrum| s.e.get(k).copied().unwrap_or(0.0);
            writeln!(w, "{k},{:.9e},{:.9e}", at(&cm), at(&tm))?;
        }
        w.flush()?;

        // ensemble mean over runs at a couple dozen times
        let mut by_t: BTreeMap<u64, Vec<&EnergySpectrum>> = BTreeMap::new();
        for s in &series {
            by_t.entry(s.1.to_bits()).or_default().push(&s.3);
        }
        let times: Vec<f64> = by_t.keys().map(|&b| f64::from_bits(b)).collect();
        let every = (times.len() / 24).max(1);
        let mut w = BufWriter::new(File::create(d.join(format!("sim_{}_time.csv", fam.name)))?);
        writeln!(w, "t,k,e")?;
        for (i, (bits, specs)) in by_t.iter().enumerate() {
            if i % every != 0 && i + 1 != times.len() {
                continue;
            }
            let m = mean_spectrum(specs.iter().copied());
            for (k, e) in m.e.iter().enumerate() {
                writeln!(w, "{},{k},{e:.9e}", f64::from_bits(*bits))?;
            }
        }
        w.flush()?;

        let rc = p.cfg.regime.for_family(fam)?;
        fits.push(fit(&fam.name, "turbulent", &turb, rc.band()));
        let t_end = times.last().copied().unwrap_or(0.0);
        let late: Vec<&EnergySpectrum> = series
            .iter()
            .filter(|s| s.1 >= 0.9 * t_end)
            .map(|s| &s.3)
            .collect();
        fits.push(fit(&fam.name, "late", &late, (1.0, 4.0)));
    }
    Ok(())
}

struct ShellStats {
    mean: Vec<f64>,
    se: Vec<f64>,
}

fn shell_stats(spectra: &[EnergySpectrum]) -> ShellStats {
    let n = spectra.len() as f64;
    let len = spectra.iter().map(|s| s.e.len()).max().unwrap_or(0);
    let mut mean = vec![0.0; len];
    let mut se = vec![0.0; len];
    for k in 0..len {
        let v: Vec<f64> = spectra
            .iter()
            .map(|s| s.e.get(k).copied().unwrap_or(0.0))
            .collect();
        let (m, sd) = mean_std(&v);
        mean[k] = m;
        se[k] = sd / n.max(1.0).sqrt();
    }
    ShellStats { mean, se }
}

fn image_spectra(m: &DatasetManifest, label: &str, size: usize) -> Result<Vec<EnergySpectrum>> {
    m.split(Split::Test)
        .filter(|r| r.label == label)
        .map(|r| {
            Ok(image_power_spectrum(
                &image_to_f64(&m.load_image(r)?),
                size,
            )?)
        })
        .collect()
}

fn write_image_spectra(p: &Pipeline, d: &Path) -> Result<Separation> {
    let size = p.cfg.render.out_size;
    let task = p.task_dataset(p.eval_task())?;
    let mut groups: Vec<(String, ShellStats)> = Vec::new();
    for label in [CHAOS, TURBULENCE] {
        groups.push((
            label.into(),
            shell_stats(&image_spectra(&task, label, size)?),
        ));
    }
    let fourier: Vec<EvalSet> = p
        .eval_sets()
        .into_iter()
        .filter(|s| matches!(s.source, EvalSource::Fourier { .. }))
        .collect();
    for s in &fourier {
        let m = p.eval_set(s)?;
        groups.push((
            s.name.clone(),
            shell_stats(&image_spectra(&m, &s.name, size)?),
        ));
    }
    let len = groups.iter().map(|g| g.1.mean.len()).max().unwrap_or(0);
    let (c, t) = (&groups[0].1, &groups[1].1);
    let z: Vec<f64> = (0..len)
        .map(|k| {
            let se = (c.se[k].powi(2) + t.se[k].powi(2)).sqrt();
            if se > 0.0 {
                (c.mean[k] - t.mean[k]).abs() / se
            } else {
                0.0
            }
        })
        .collect();
    let mut w = BufWriter::new(File::create(d.join(IMAGE_SPECTRA))?);
    let mut header = vec!["k".to_string()];
    for (name, _) in &groups {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_se"));
    }
    header.push("z_chaos_turbulence".into());
    writeln!(w, "{}", header.join(","))?;
    for k in 0..len {
        let mut row = vec![k.to_string()];
        for (_, g) in &groups {
            row.push(format!("{:.9e}", g.mean.get(k).copied().unwrap_or(0.0)));
            row.push(format!("{:.9e}", g.se.get(k).copied().unwrap_or(0.0)));
        }
        row.push(format!("{:.6}", z[k]));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    let k_forcing = p
        .cfg
        .families_with(Role::Train)
        .filter_map(|f| f.dynamics.forcing())
        .map(|f| f.k_center)
        .fold(f64::INFINITY, f64::min);
    let below: Vec<usize> = (1..len).filter(|&k| (k as f64) < k_forcing).collect();
    let (shell, max_z) =
        below
            .iter()
            .map(|&k| (k, z[k]))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    Ok(Separation {
        k_forcing,
        max_z,
        shell,
        shells: below.len(),
    })
}

pub fn spectra(p: &Pipeline) -> Result<()> {
    let dir = spectra_dir(p);
    if dir.is_complete() {
        return Ok(());
    }
    // build upstream artifacts outside the staging directory
    p.task_dataset(p.eval_task())?;
    for s in p.eval_sets() {
        if matches!(s.source, EvalSource::Fourier { .. }) {
            p.eval_set(&s)?;
        }
    }
    dir.ensure(|d| {
        let mut fits = Vec::new();
        write_sim_spectra(p, d, &mut fits)?;
        write_json(&d.join(FITS), &fits)?;
        let sep = write_image_spectra(p, d)?;
        write_json(&d.join(SEPARATION), &sep)?;
        Ok(())
    })
    .stage("spectra")?;
    Ok(())
}
