//! The staged classifier: stem, four stages of 3×3 conv + ReLU blocks,
//! global average pooling, one logit.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conv::{self, ConvShape};
use crate::scalar::Real;
use crate::{Error, Result};

pub const STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Channel width of each stage.
    pub channels: Vec<usize>,
    /// Conv blocks per stage.
    pub blocks: usize,
    /// Identity skips around shape-preserving blocks.
    #[serde(default)]
    pub skip: bool,
    /// Side of the square single-channel input.
    pub input: usize,
}

impl NetConfig {
    pub fn desk(input: usize) -> Self {
        Self {
            channels: vec![16, 32, 64, 128],
            blocks: 2,
            skip: false,
            input,
        }
    }

    pub fn paper(input: usize) -> Self {
        Self {
            channels: vec![64, 128, 256, 512],
            ..Self::desk(input)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != STAGES {
            return Err(Error::Config(format!(
                "need {STAGES} stages, got {}",
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) || self.channels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!(
                "channels {:?} must be positive and nondecreasing",
                self.channels
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Config("at least one block per stage".into()));
        }
        if self.input < 8 {
            return Err(Error::Config(format!("input side {} below 8", self.input)));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Side of each stage's output.
    pub fn stage_sides(&self) -> [usize; STAGES] {
        let mut s = [self.input; STAGES];
        for i in 1..STAGES {
            s[i] = (s[i - 1] - 1) / 2 + 1;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
struct Layer {
    shape: ConvShape,
    residual: bool,
    w: usize,
    b: usize,
}

/// Parameter layout shared by every float type.
#[derive(Debug, Clone)]
pub struct Layout {
    cfg: NetConfig,
    layers: Vec<Layer>,
    /// Index of the last layer of each stage.
    stage_end: [usize; STAGES],
    head_w: usize,
    head_b: usize,
    tensors: Vec<TensorInfo>,
    len: usize,
}

impl Layout {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = Vec::new();
        let mut len = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let off = len;
            len += shape.iter().product::<usize>();
            tensors.push(TensorInfo {
                name,
                shape,
                offset: off,
            });
            off
        };
        let mut layers = Vec::new();
        let mut stage_end = [0; STAGES];
        let mut side = cfg.input;
        let mut cin = 1;
        let mut add = |name: String, shape: ConvShape, residual: bool, layers: &mut Vec<Layer>| {
            let w = push(format!("{name}.w"), vec![shape.cout, shape.cin, 3, 3]);
            let b = push(format!("{name}.b"), vec![shape.cout]);
            layers.push(Layer {
                shape,
                residual,
                w,
                b,
            });
        };
        add(
            "stem".into(),
            ConvShape {
                cin,
                cout: cfg.channels[0],
                stride: 1,
                side,
            },
            false,
            &mut layers,
        );
        cin = cfg.channels[0];
        for (s, &c) in cfg.channels.iter().enumerate() {
            for blk in 0..cfg.blocks {
                let stride = if s > 0 && blk == 0 { 2 } else { 1 };
                let shape = ConvShape {
                    cin,
                    cout: c,
                    stride,
                    side,
                };
                let residual = cfg.skip && stride == 1 && cin == c;
                add(format!("s{}.b{blk}", s + 1), shape, residual, &mut layers);
                side = shape.out_side();
                cin = c;
            }
            stage_end[s] = layers.len() - 1;
        }
        let c4 = cfg.channels[STAGES - 1];
        let head_w = push("head.w".into(), vec![c4]);
        let head_b = push("head.b".into(), vec![1]);
        Ok(Self {
            cfg: cfg.clone(),
            layers,
            stage_end,
            head_w,
            head_b,
            tensors,
            len,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.len
    }

    /// `(channels, side)` of each stage's output.
    pub fn stage_shapes(&self) -> [(usize, usize); STAGES] {
        let mut out = [(0, 0); STAGES];
        for (o, &l) in out.iter_mut().zip(&self.stage_end) {
            let s = self.layers[l].shape;
            *o = (s.cout, s.out_side());
        }
        out
    }
}

/// A network with parameters stored in one flat vector.
#[derive(Debug, Clone)]
pub struct StageNet<T: Real> {
    layout: Layout,
    pub params: Vec<T>,
}

/// Per-sample intermediates kept for the backward pass.
struct Trace<T> {
    cols: Vec<Vec<T>>,
    outs: Vec<Vec<T>>,
    logit: T,
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy of a logit, `softplus(z) − y·z`.
pub fn bce_logit<T: Real>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

impl<T: Real> StageNet<T> {
    /// He-style initialization: conv weights `N(0, 2/fan_in)`, head
    /// `N(0, 1/C)`, biases zero.
    pub fn init<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        let layout = Layout::new(cfg)?;
        let mut params = vec![T::zero(); layout.len];
        for l in &layout.layers {
            let std = (2.0 / l.shape.k() as f64).sqrt();
            for p in &mut params[l.w..l.w + l.shape.weight_len()] {
                *p = T::of(std * rng.sample::<f64, _>(StandardNormal));
            }
        }
        let c4 = cfg.channels[STAGES - 1];
        let std = (1.0 / c4 as f64).sqrt();
        for p in &mut params[layout.head_w..layout.head_w + c4] {
            *p = T::of(std * rng.sample::<f64, _>(StandardNormal));
        }
        Ok(Self { layout, params })
    }

    pub fn from_params(cfg: &NetConfig, params: Vec<T>) -> Result<Self> {
        let layout = Layout::new(cfg)?;
        if params.len() != layout.len {
            return Err(Error::Shape(format!(
                "{} parameters for a net that needs {}",
                params.len(),
                layout.len
            )));
        }
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn config(&self) -> &NetConfig {
        &self.layout.cfg
    }

    pub fn zero_head(&mut self) {
        let c4 = self.layout.cfg.channels[STAGES - 1];
        let (w, b) = (self.layout.head_w, self.layout.head_b);
        self.params[w..w + c4]
            .iter_mut()
            .for_each(|p| *p = T::zero());
        self.params[b] = T::zero();
    }

    fn input_len(&self) -> usize {
        self.layout.cfg.input * self.layout.cfg.input
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "input has {} values, net expects {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, l: &Layer, x: &[T], cols: &mut Vec<T>) -> Vec<T> {
        let s = &l.shape;
        conv::im2col(s, x, cols);
        let mut y = Vec::new();
        conv::forward(
            s,
            &self.params[l.w..l.w + s.weight_len()],
            &self.params[l.b..l.b + s.cout],
            cols,
            &mut y,
        );
        if l.residual {
            y.iter_mut().zip(x).for_each(|(a, &b)| *a += b);
        }
        y.iter_mut().for_each(|v| *v = v.max(T::zero()));
        y
    }

    fn head(&self, last: &[T]) -> (Vec<T>, T) {
        let c4 = self.layout.cfg.channels[STAGES - 1];
        let p = last.len() / c4;
        let inv = T::one() / T::of(p as f64);
        let pooled: Vec<T> = last
            .chunks_exact(p)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let w = &self.params[self.layout.head_w..self.layout.head_w + c4];
        let z =
            pooled.iter().zip(w).map(|(&a, &b)| a * b).sum::<T>() + self.params[self.layout.head_b];
        (pooled, z)
    }

    /// Logit and the four stage outputs for one normalized image.
    pub fn forward_sample(&self, x: &[T]) -> Result<(T, Vec<Vec<T>>)> {
        self.check_input(x)?;
        let mut cols = Vec::new();
        let mut cur = x.to_vec();
        let mut stages = Vec::with_capacity(STAGES);
        let mut next_stage = 0;
        for (i, l) in self.layout.layers.iter().enumerate() {
            cur = self.layer_forward(l, &cur, &mut cols);
            if next_stage < STAGES && self.layout.stage_end[next_stage] == i {
                stages.push(cur.clone());
                next_stage += 1;
            }
        }
        let (_, z) = self.head(&cur);
        Ok((z, stages))
    }

    pub fn logit(&self, x: &[T]) -> Result<T> {
        self.check_input(x)?;
        let mut cols = Vec::new();
        let mut cur = x.to_vec();
        for l in &self.layout.layers {
            cur = self.layer_forward(l, &cur, &mut cols);
        }
        Ok(self.head(&cur).1)
    }

    pub fn probability(&self, x: &[T]) -> Result<T> {
        self.logit(x).map(sigmoid)
    }

    /// Probabilities and stage activations for a batch; activation `s` is
    /// laid out `(N, C_s, H_s, W_s)`.
    pub fn forward_with_stages(&self, batch: &[Vec<T>]) -> Result<(Vec<T>, Vec<Activation<T>>)> {
        let per = flowlab::par::map_slice(batch, |x| self.forward_sample(x));
        let shapes = self.layout.stage_shapes();
        let mut acts: Vec<Activation<T>> = shapes
            .iter()
            .map(|&(c, side)| Activation {
                shape: [batch.len(), c, side, side],
                data: Vec::with_capacity(batch.len() * c * side * side),
            })
            .collect();
        let mut probs = Vec::with_capacity(batch.len());
        for r in per {
            let (z, stages) = r?;
            probs.push(sigmoid(z));
            for (a, s) in acts.iter_mut().zip(stages) {
                a.data.extend(s);
            }
        }
        Ok((probs, acts))
    }

    fn trace(&self, x: &[T]) -> Trace<T> {
        let n = self.layout.layers.len();
        let mut cols = Vec::with_capacity(n);
        let mut outs: Vec<Vec<T>> = Vec::with_capacity(n);
        for l in &self.layout.layers {
            let mut c = Vec::new();
            let y = self.layer_forward(l, outs.last().map_or(x, |v| v.as_slice()), &mut c);
            cols.push(c);
            outs.push(y);
        }
        let (_, logit) = self.head(outs.last().expect("at least one layer"));
        Trace { cols, outs, logit }
    }

    /// Adds `scale · ∂BCE/∂θ` of one sample into `grad`; returns its loss.
    fn sample_grad(&self, x: &[T], y: T, scale: T, grad: &mut [T]) -> T {
        let tr = self.trace(x);
        let loss = bce_logit(tr.logit, y);
        let dz = (sigmoid(tr.logit) - y) * scale;
        let lay = &self.layout;
        let c4 = lay.cfg.channels[STAGES - 1];
        let last = tr.outs.last().expect("layers");
        let p = last.len() / c4;
        let inv = T::one() / T::of(p as f64);
        // head
        for (c, ch) in last.chunks_exact(p).enumerate() {
            grad[lay.head_w + c] += dz * ch.iter().copied().sum::<T>() * inv;
        }
        grad[lay.head_b] += dz;
        let mut dy: Vec<T> = Vec::with_capacity(last.len());
        for c in 0..c4 {
            let g = dz * self.params[lay.head_w + c] * inv;
            dy.extend(std::iter::repeat_n(g, p));
        }
        let mut dcols = Vec::new();
        for (i, l) in lay.layers.iter().enumerate().rev() {
            let s = &l.shape;
            // through the ReLU
            for (g, &o) in dy.iter_mut().zip(&tr.outs[i]) {
                if o <= T::zero() {
                    *g = T::zero();
                }
            }
            let (gw, rest) = grad[l.w..].split_at_mut(s.weight_len());
            let gb = &mut rest[l.b - l.w - s.weight_len()..][..s.cout];
            let w = &self.params[l.w..l.w + s.weight_len()];
            if i == 0 {
                conv::backward(s, w, &tr.cols[i], &dy, gw, gb, &mut dcols, None);
                break;
            }
            let mut dx = vec![T::zero(); s.in_len()];
            conv::backward(s, w, &tr.cols[i], &dy, gw, gb, &mut dcols, Some(&mut dx));
            if l.residual {
                dx.iter_mut().zip(&dy).for_each(|(a, &b)| *a += b);
            }
            dy = dx;
        }
        loss
    }

    /// Mean BCE plus `weight_decay/2 · ‖θ‖²` and its exact gradient.
    pub fn loss_and_grad(
        &self,
        batch: &[&[T]],
        labels: &[u8],
        weight_decay: T,
    ) -> Result<(T, Vec<T>)> {
        if batch.len() != labels.len() || batch.is_empty() {
            return Err(Error::Shape(format!(
                "{} inputs for {} labels",
                batch.len(),
                labels.len()
            )));
        }
        for x in batch {
            self.check_input(x)?;
        }
        let n = T::of(batch.len() as f64);
        let scale = T::one() / n;
        // Per-sample gradients reduced in batch order keep the sum
        // independent of scheduling.
        let idx: Vec<usize> = (0..batch.len()).collect();
        let per = flowlab::par::map_slice(&idx, |&i| {
            let mut g = vec![T::zero(); self.layout.len];
            let l = self.sample_grad(batch[i], T::of(labels[i] as f64), scale, &mut g);
            (l, g)
        });
        let mut grad = vec![T::zero(); self.layout.len];
        let mut loss = T::zero();
        for (l, g) in per {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
        }
        loss = loss / n;
        if weight_decay != T::zero() {
            let half = T::of(0.5) * weight_decay;
            loss += half * self.params.iter().map(|&p| p * p).sum::<T>();
            grad.iter_mut()
                .zip(&self.params)
                .for_each(|(g, &p)| *g += weight_decay * p);
        }
        Ok((loss, grad))
    }
}

/// A `(N, C, H, W)` activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Copy> Activation<T> {
    /// Rows of the `(N·H·W) × C` matrix used by PCA.
    pub fn pixel_rows(&self) -> impl Iterator<Item = Vec<T>> + '_ {
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        (0..n * hw).map(move |r| {
            let (s, px) = (r / hw, r % hw);
            (0..c).map(|ch| self.data[(s * c + ch) * hw + px]).collect()
        })
    }
}
