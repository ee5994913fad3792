//! Effective dimension of a representation: exponentiated Shannon
//! entropy of its PCA explained-variance ratios.
//!
//! Stage activations of shape `(N, C, H, W)` are flattened to an
//! `(N·H·W) × C` matrix (spatial positions are treated as samples), the
//! channel covariance is accumulated in one streaming pass, and its
//! eigenvalues give the ratios `r_i`.

mod covariance;
mod report;

pub use covariance::CovAccumulator;
pub use report::{effdim_report, EffDimConfig, EffDimReport, StageStat};

use flowlab::rng::FlowRng;
use nalgebra::{DMatrix, SymmetricEigen};
use nnet::{Sample, StageNet};
use rand::seq::index;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("stage {stage}: {rows} rows, need at least {need} (50 per channel)")]
    TooFewRows {
        stage: usize,
        rows: usize,
        need: usize,
    },

    #[error("activations have zero total variance")]
    Degenerate,

    #[error("non-finite activation in stage {0}")]
    NonFinite(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("need at least 2 seeds, got {0}")]
    TooFewSeeds(usize),

    #[error("checkpoints disagree on stage structure: {0}")]
    InconsistentStages(String),

    #[error(transparent)]
    Net(#[from] nnet::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Row-major `(rows × cols)` samples of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub stage: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ActivationMatrix {
    pub fn new(stage: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 || data.len() % cols != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of {cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(stage));
        }
        Ok(Self { stage, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }
}

/// Explained-variance ratios in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSpectrum(Vec<f64>);

impl VarianceSpectrum {
    /// Ratios from raw values; negatives are clipped and the rest
    /// renormalized.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        let top = values.iter().cloned().fold(0.0, f64::max);
        if !(top > 0.0) {
            return Err(Error::Degenerate);
        }
        for v in &mut values {
            if *v < 1e-12 * top {
                *v = 0.0;
            }
        }
        let total: f64 = values.iter().sum();
        values.iter_mut().for_each(|v| *v /= total);
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self(values))
    }

    pub fn from_covariance(cov: DMatrix<f64>) -> Result<Self> {
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("covariance is not finite".into()));
        }
        Self::from_values(
            SymmetricEigen::new(cov)
                .eigenvalues
                .iter()
                .copied()
                .collect(),
        )
    }

    pub fn ratios(&self) -> &[f64] {
        &self.0
    }
}

pub fn explained_variance_ratios(m: &ActivationMatrix) -> Result<VarianceSpectrum> {
    if m.rows() < 2 {
        return Err(Error::TooFewRows {
            stage: m.stage,
            rows: m.rows(),
            need: 2,
        });
    }
    let mut acc = CovAccumulator::new(m.cols);
    for r in m.row_iter() {
        acc.push(r);
    }
    VarianceSpectrum::from_covariance(acc.covariance())
}

/// `exp(−Σ r log r)` with `0·log 0 = 0`.
pub fn effective_dimension(s: &VarianceSpectrum) -> f64 {
    let h: f64 = s
        .ratios()
        .iter()
        .filter(|&&r| r > 0.0)
        .map(|&r| -r * r.ln())
        .sum();
    h.exp()
}

/// Flattened activations of all four stages over `samples`, one forward
/// pass per image. With `cap = Some(k)`, each stage keeps a uniform
/// seeded subset of at most `k` rows, in original order.
pub fn collect_activation_matrices(
    net: &StageNet<f32>,
    samples: &[Sample],
    cap: Option<usize>,
    rng: &mut FlowRng,
) -> Result<Vec<ActivationMatrix>> {
    let shapes = net.layout().stage_shapes();
    let per_image: Vec<usize> = shapes.iter().map(|&(_, s)| s * s).collect();
    // Row selection per stage, as sorted row indices or keep-all.
    let keep: Vec<Option<Vec<usize>>> = per_image
        .iter()
        .map(|&p| {
            let total = p * samples.len();
            cap.filter(|&k| k < total).map(|k| {
                let mut v = index::sample(rng, total, k).into_vec();
                v.sort_unstable();
                v
            })
        })
        .collect();
    let mut data: Vec<Vec<f64>> = shapes
        .iter()
        .zip(&keep)
        .zip(&per_image)
        .map(|((&(c, _), k), &p)| {
            Vec::with_capacity(c * k.as_ref().map_or(p * samples.len(), Vec::len))
        })
        .collect();
    let mut cursor = vec![0usize; shapes.len()];
    const BATCH: usize = 16;
    for (ci, chunk) in samples.chunks(BATCH).enumerate() {
        let outs = flowlab::par::map_slice(chunk, |s| net.forward_sample(&s.x));
        for (j, out) in outs.into_iter().enumerate() {
            let (_, stages) = out?;
            let img = ci * BATCH + j;
            for (s, act) in stages.iter().enumerate() {
                let (c, p) = (shapes[s].0, per_image[s]);
                let base = img * p;
                let mut push = |px: usize| {
                    for ch in 0..c {
                        data[s].push(act[ch * p + px] as f64);
                    }
                };
                match &keep[s] {
                    None => (0..p).for_each(&mut push),
                    Some(sel) => {
                        while cursor[s] < sel.len() && sel[cursor[s]] < base + p {
                            push(sel[cursor[s]] - base);
                            cursor[s] += 1;
                        }
                    }
                }
            }
        }
    }
    shapes
        .iter()
        .zip(data)
        .enumerate()
        .map(|(s, (&(c, _), d))| {
            let m = ActivationMatrix::new(s + 1, c, d)?;
            if m.rows() < 50 * c {
                return Err(Error::TooFewRows {
                    stage: s + 1,
                    rows: m.rows(),
                    need: 50 * c,
                });
            }
            Ok(m)
        })
        .collect()
}
