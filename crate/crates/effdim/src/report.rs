use std::io::Write;

use flowlab::rng::{stream_id, stream_rng};
use nnet::{Checkpoint, Sample};
use serde::{Deserialize, Serialize};

use crate::{collect_activation_matrices, effective_dimension, explained_variance_ratios};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffDimConfig {
    /// Maximum rows per stage matrix; `None` keeps every row.
    pub row_cap: Option<usize>,
    pub seed: u64,
}

impl Default for EffDimConfig {
    fn default() -> Self {
        Self {
            row_cap: Some(2_000_000),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStat {
    pub stage: usize,
    pub channels: usize,
    pub mean: f64,
    /// Sample standard deviation over seeds.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffDimReport {
    pub task: String,
    pub stages: Vec<StageStat>,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<String>,
    pub caps: EffDimConfig,
}

impl EffDimReport {
    pub fn total_mean(&self) -> f64 {
        self.stages.iter().map(|s| s.mean).sum()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// One row per stage: `task,stage,channels,mean,std`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["task", "stage", "channels", "mean", "std"])?;
        for s in &self.stages {
            w.write_record([
                self.task.clone(),
                s.stage.to_string(),
                s.channels.to_string(),
                format!("{:.6}", s.mean),
                format!("{:.6}", s.std),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Per-stage effective dimension over a set of checkpoints (one per seed)
/// evaluated on the same samples.
pub fn effdim_report(
    task: &str,
    checkpoints: &[Checkpoint],
    samples: &[Sample],
    cfg: &EffDimConfig,
) -> Result<EffDimReport> {
    if checkpoints.len() < 2 {
        return Err(Error::TooFewSeeds(checkpoints.len()));
    }
    let first = &checkpoints[0].net;
    for c in &checkpoints[1..] {
        if c.net.channels != first.channels || c.net.input != first.input {
            return Err(Error::InconsistentStages(format!(
                "{:?} vs {:?}",
                first.channels, c.net.channels
            )));
        }
    }
    let mut per_seed: Vec<Vec<f64>> = vec![Vec::new(); first.channels.len()];
    for ckpt in checkpoints {
        let net = ckpt.network()?;
        let mut rng = stream_rng(cfg.seed, stream_id("effdim-rows", ckpt.seed()));
        let mats = collect_activation_matrices(&net, samples, cfg.row_cap, &mut rng)?;
        for (m, out) in mats.iter().zip(per_seed.iter_mut()) {
            out.push(effective_dimension(&explained_variance_ratios(m)?));
        }
    }
    let stages = per_seed
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let (mean, std) = mean_std(&v);
            StageStat {
                stage: i + 1,
                channels: first.channels[i],
                mean,
                std,
                per_seed: v,
            }
        })
        .collect();
    Ok(EffDimReport {
        task: task.into(),
        stages,
        seeds: checkpoints.iter().map(Checkpoint::seed).collect(),
        checkpoints: checkpoints.iter().map(Checkpoint::config_hash).collect(),
        caps: *cfg,
    })
}
