//! Seeded mini-batch training with early stopping on test accuracy.

use std::io::Write;

use flowlab::rng::{stream_id, stream_rng};
use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::net::{NetConfig, StageNet};
use crate::optim::{Adam, AdamConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once test accuracy reaches this.
    pub target_accuracy: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            weight_decay: 1e-4,
            batch_size: 32,
            max_epochs: 20,
            target_accuracy: 0.99,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr = {} must be positive",
                self.adam.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A normalized image with its binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f32>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch cross-entropy (decay term excluded).
    pub train_loss: f64,
    pub test_acc: f64,
}

pub fn write_log<W: Write>(w: W, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn check_split(name: &str, s: &[Sample]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::EmptySplit(name.into()));
    }
    let pos = s.iter().filter(|x| x.label == 1).count();
    let neg = s.len() - pos;
    if pos == 0 || neg == 0 || pos.max(neg) > 10 * pos.min(neg) {
        warn!("{name} split is imbalanced: {pos} positive / {neg} negative");
    }
    Ok(())
}

pub fn train(
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    cfg.validate()?;
    check_split("train", train_set)?;
    check_split("test", test_set)?;
    let mut net = StageNet::<f32>::init(net_cfg, &mut stream_rng(cfg.seed, stream_id("init", 0)))?;
    let mut adam = Adam::new(net.params.len());
    let wd = cfg.weight_decay as f32;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut stream_rng(
            cfg.seed,
            stream_id("shuffle", epoch as u64),
        ));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f32]> = chunk.iter().map(|&i| train_set[i].x.as_slice()).collect();
            let ys: Vec<u8> = chunk.iter().map(|&i| train_set[i].label).collect();
            let (loss, grad) = net.loss_and_grad(&xs, &ys, wd)?;
            let decay = 0.5
                * cfg.weight_decay
                * net.params.iter().map(|&p| (p as f64).powi(2)).sum::<f64>();
            loss_sum += loss as f64 - decay;
            adam.step(&cfg.adam, &mut net.params, &grad);
            batches += 1;
        }
        let (test_acc, _) = accuracy(&net, test_set)?;
        let row = EpochLog {
            epoch,
            train_loss: loss_sum / batches as f64,
            test_acc,
        };
        info!(
            "epoch {epoch}: train loss {:.4}, test accuracy {:.4}",
            row.train_loss, row.test_acc
        );
        log.push(row);
        if test_acc >= cfg.target_accuracy {
            break;
        }
    }
    let epoch = log.len();
    Ok((
        Checkpoint {
            net: net_cfg.clone(),
            train: cfg.clone(),
            epoch,
            params: net.params,
            adam,
        },
        log,
    ))
}

/// Accuracy at threshold 0.5 and every probability, in input order.
pub fn accuracy(net: &StageNet<f32>, set: &[Sample]) -> Result<(f64, Vec<f64>)> {
    let probs = flowlab::par::map_slice(set, |s| net.probability(&s.x));
    let probs: Vec<f64> = probs
        .into_iter()
        .map(|p| p.map(f64::from))
        .collect::<Result<_>>()?;
    let correct = probs
        .iter()
        .zip(set)
        .filter(|(&p, s)| (p > 0.5) == (s.label == 1))
        .count();
    Ok((correct as f64 / set.len().max(1) as f64, probs))
}

/// Accuracy and probabilities of a stored checkpoint on `set`.
pub fn evaluate(ckpt: &Checkpoint, set: &[Sample]) -> Result<(f64, Vec<f64>)> {
    if set.is_empty() {
        return Err(Error::EmptySplit("evaluation".into()));
    }
    accuracy(&ckpt.network()?, set)
}
