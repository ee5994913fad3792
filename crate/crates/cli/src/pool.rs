//! Simulation stage: runs one family, labels each snapshot by regime and
//! keeps the rendered chaos/turbulence images as a pool for dataset builds.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use flowlab::compressible;
use flowlab::datasets::{render_field, FieldSelect, LabeledImage, RenderSpec};
use flowlab::fieldcore::RealField;
use flowlab::incompressible;
use flowlab::par;
use flowlab::rng::{stream_id, stream_rng};
use flowlab::spectra::{classify_regime, EnergySpectrum, Regime};
use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::config::{Dynamics, ExperimentConfig, FamilyConfig, CHAOS, TURBULENCE};
use crate::{Error, Result};

pub const POOL: &str = "pool.csv";
pub const SPECTRA: &str = "spectra.csv";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRow {
    pub path: String,
    pub label: String,
    pub sim_id: String,
    pub t: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sim_id: String,
    pub snapshots: usize,
    pub chaotic: usize,
    pub turbulent: usize,
    pub first_turbulent: Option<f64>,
    pub max_cfl: f64,
    pub max_rho_contrast: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: String,
    pub t_min: f64,
    pub smooth: usize,
    pub runs: Vec<RunReport>,
}

struct Frame {
    t: f64,
    spectrum: EnergySpectrum,
    image: Option<GrayImage>,
}

struct RunOutput {
    report: RunReport,
    frames: Vec<Frame>,
    regimes: Vec<Regime>,
}

fn pick<'a>(
    field: FieldSelect,
    omega: &'a RealField,
    vx: &'a RealField,
    vy: &'a RealField,
    rho: Option<&'a RealField>,
) -> Result<&'a RealField> {
    Ok(match field {
        FieldSelect::Vorticity => omega,
        FieldSelect::Vx => vx,
        FieldSelect::Vy => vy,
        FieldSelect::Density => {
            rho.ok_or_else(|| Error::Config("density requested for an incompressible run".into()))?
        }
    })
}

fn frame(
    t: f64,
    spectrum: EnergySpectrum,
    field: &RealField,
    render: &RenderSpec,
) -> flowlab::Result<Frame> {
    let r = render_field(field, render)?;
    Ok(Frame {
        t,
        spectrum,
        image: (!r.flat).then_some(r.image),
    })
}

fn run_one(cfg: &ExperimentConfig, fam: &FamilyConfig, run: usize) -> Result<RunOutput> {
    let sim_id = format!("{}-{run:03}", fam.name);
    let rng = stream_rng(
        cfg.seed,
        stream_id(&format!("sim/{}", fam.name), run as u64),
    );
    let render = cfg.render;
    let mut frames = Vec::new();
    let (max_cfl, max_rho_contrast) = match &fam.dynamics {
        Dynamics::Incompressible(c) => {
            let s = incompressible::run_simulation(c, rng, |snap| {
                let f = pick(render.field, &snap.omega, &snap.vx, &snap.vy, None)
                    .map_err(|e| flowlab::Error::Param(e.to_string()))?;
                frames.push(frame(snap.t, snap.spectrum, f, &render)?);
                Ok(())
            })?;
            (s.max_cfl, None)
        }
        Dynamics::Compressible(c) => {
            let s = compressible::run_simulation(c, rng, |snap| {
                let f = pick(
                    render.field,
                    &snap.omega,
                    &snap.vx,
                    &snap.vy,
                    Some(&snap.rho),
                )
                .map_err(|e| flowlab::Error::Param(e.to_string()))?;
                frames.push(frame(snap.t, snap.spectrum, f, &render)?);
                Ok(())
            })?;
            (s.max_cfl, Some(s.max_rho_contrast))
        }
    };
    let rc = cfg.regime.for_family(fam)?;
    let series: Vec<(f64, EnergySpectrum)> =
        frames.iter().map(|f| (f.t, f.spectrum.clone())).collect();
    let regimes = classify_regime(&series, &rc);
    let count = |r: Regime| regimes.iter().filter(|&&x| x == r).count();
    let report = RunReport {
        sim_id,
        snapshots: frames.len(),
        chaotic: count(Regime::Chaotic),
        turbulent: count(Regime::Turbulent),
        first_turbulent: frames
            .iter()
            .zip(&regimes)
            .find(|(_, r)| **r == Regime::Turbulent)
            .map(|(f, _)| f.t),
        max_cfl,
        max_rho_contrast,
    };
    log::info!(
        "{}: {} chaotic, {} turbulent, first turbulent at {:?}",
        report.sim_id,
        report.chaotic,
        report.turbulent,
        report.first_turbulent
    );
    Ok(RunOutput {
        report,
        frames,
        regimes,
    })
}

fn label_of(r: Regime) -> Option<&'static str> {
    match r {
        Regime::Chaotic => Some(CHAOS),
        Regime::Turbulent => Some(TURBULENCE),
        Regime::Discard => None,
    }
}

/// Runs every simulation of `fam` and writes the pool into `dir`.
pub fn simulate_family(cfg: &ExperimentConfig, fam: &FamilyConfig, dir: &Path) -> Result<()> {
    let rc = cfg.regime.for_family(fam)?;
    let outputs: Vec<RunOutput> = par::map_range(fam.runs, |r| run_one(cfg, fam, r))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut pool = csv::Writer::from_path(dir.join(POOL))?;
    let mut spectra = BufWriter::new(File::create(dir.join(SPECTRA))?);
    writeln!(spectra, "sim_id,t,regime,e")?;
    for out in &outputs {
        let sub = out.report.sim_id.clone();
        fs::create_dir_all(dir.join(&sub))?;
        for (i, (f, r)) in out.frames.iter().zip(&out.regimes).enumerate() {
            let e: Vec<String> = f.spectrum.e.iter().map(|v| format!("{v:.9e}")).collect();
            writeln!(spectra, "{sub},{},{r},{}", f.t, e.join(";"))?;
            let (Some(label), Some(img)) = (label_of(*r), &f.image) else {
                continue;
            };
            let path = format!("{sub}/{i:05}.png");
            img.save(dir.join(&path))?;
            pool.serialize(PoolRow {
                path,
                label: label.into(),
                sim_id: sub.clone(),
                t: f.t,
                regime: *r,
            })?;
        }
    }
    pool.flush()?;
    spectra.flush()?;
    let summary = FamilySummary {
        family: fam.name.clone(),
        t_min: rc.t_min,
        smooth: rc.smooth,
        runs: outputs.into_iter().map(|o| o.report).collect(),
    };
    serde_json::to_writer_pretty(File::create(dir.join(SUMMARY))?, &summary)?;
    Ok(())
}

/// A finished pool read back from disk.
#[derive(Debug, Clone)]
pub struct Pool {
    pub root: std::path::PathBuf,
    pub rows: Vec<PoolRow>,
    pub summary: FamilySummary,
}

impl Pool {
    pub fn read(dir: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        for r in csv::Reader::from_path(dir.join(POOL))?.deserialize() {
            rows.push(r?);
        }
        let summary = serde_json::from_reader(File::open(dir.join(SUMMARY))?)?;
        Ok(Self {
            root: dir.to_path_buf(),
            rows,
            summary,
        })
    }

    /// Whether a row lies within `(before, after)` time units of its run's
    /// first turbulent snapshot.
    fn near_onset(&self, row: &PoolRow, (before, after): (f64, f64)) -> bool {
        let onset = self
            .summary
            .runs
            .iter()
            .find(|r| r.sim_id == row.sim_id)
            .and_then(|r| r.first_turbulent);
        onset.is_some_and(|t0| row.t >= t0 - before && row.t < t0 + after)
    }

    /// Images of the given labels away from the onset of turbulence, ready
    /// for a dataset build.
    pub fn labeled(
        &self,
        labels: &[&str],
        render: &RenderSpec,
        guard: (f64, f64),
    ) -> Result<Vec<LabeledImage>> {
        let hash = render.hash();
        self.rows
            .iter()
            .filter(|r| labels.contains(&r.label.as_str()) && !self.near_onset(r, guard))
            .map(|r| {
                let image = image::open(self.root.join(&r.path))?.into_luma8();
                Ok(LabeledImage {
                    image,
                    label: r.label.clone(),
                    sim_id: r.sim_id.clone(),
                    t: Some(r.t),
                    regime: r.regime.to_string(),
                    generator: "simulation".into(),
                    render_hash: hash.clone(),
                })
            })
            .collect()
    }

    pub fn count(&self, label: &str, guard: (f64, f64)) -> usize {
        self.rows
            .iter()
            .filter(|r| r.label == label && !self.near_onset(r, guard))
            .count()
    }
}

/// Per-snapshot spectra: `(sim_id, t, regime, E(k))`.
pub fn read_spectra(dir: &Path) -> Result<Vec<(String, f64, Regime, EnergySpectrum)>> {
    let text = fs::read_to_string(dir.join(SPECTRA))?;
    let bad = |line: &str| Error::Artifact {
        path: dir.join(SPECTRA),
        reason: format!("malformed line {line:?}"),
    };
    text.lines()
        .skip(1)
        .map(|line| {
            let mut parts = line.splitn(4, ',');
            let (Some(id), Some(t), Some(r), Some(e)) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(line));
            };
            let regime = match r {
                "chaotic" => Regime::Chaotic,
                "turbulent" => Regime::Turbulent,
                "discard" => Regime::Discard,
                _ => return Err(bad(line)),
            };
            let e = e
                .split(';')
                .map(|v| v.parse::<f64>().map_err(|_| bad(line)))
                .collect::<Result<_>>()?;
            Ok((
                id.to_string(),
                t.parse().map_err(|_| bad(line))?,
                regime,
                EnergySpectrum { e },
            ))
        })
        .collect()
}
