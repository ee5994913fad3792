//! Spectral and statistical diagnostics: shell spectra, power-law fits,
//! structure functions, PDFs and the chaos/turbulence regime labels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fieldcore::{Fft2, Grid2D, RealField, SpectralField};
use crate::{Error, Result};

/// Energy per integer shell `[k - ½, k + ½)`, `k` in units of the
/// fundamental wavenumber. `e[k]` is the shell with centre `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySpectrum {
    pub e: Vec<f64>,
}

impl EnergySpectrum {
    pub fn total(&self) -> f64 {
        self.e.iter().sum()
    }

    pub fn shells(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.e.iter().copied().enumerate()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W, t: Option<f64>) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        match t {
            Some(_) => wtr.write_record(["t", "k", "E"])?,
            None => wtr.write_record(["k", "E"])?,
        }
        for (k, e) in self.shells() {
            match t {
                Some(t) => wtr.write_record([fmt_f(t), k.to_string(), fmt_f(e)])?,
                None => wtr.write_record([k.to_string(), fmt_f(e)])?,
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

fn shell_count(grid: Grid2D) -> usize {
    let half = (grid.n() / 2) as f64;
    (half * std::f64::consts::SQRT_2).round() as usize + 1
}

fn shell_of(grid: Grid2D, ix: usize, iy: usize) -> usize {
    let kx = grid.wrap_index(ix) as f64;
    let ky = grid.wrap_index(iy) as f64;
    (kx * kx + ky * ky).sqrt().round() as usize
}

/// Accumulates `weight(mode) * mult * |c|²` into shells.
fn shell_sum(f: &SpectralField, mut weight: impl FnMut(usize, usize) -> f64) -> Vec<f64> {
    let grid = f.grid();
    let mut e = vec![0.0; shell_count(grid)];
    let nk = grid.nk();
    for iy in 0..grid.n() {
        for ix in 0..nk {
            let c = f.get(ix, iy);
            if c.re == 0.0 && c.im == 0.0 {
                continue;
            }
            e[shell_of(grid, ix, iy)] += f.multiplicity(ix) * c.norm_sqr() * weight(ix, iy);
        }
    }
    e
}

/// `E(k) = ½ Σ_{shell} (|v̂x|² + |v̂y|²) / n⁴`; the shells sum to `½⟨|v|²⟩`.
pub fn energy_spectrum(vx: &RealField, vy: &RealField) -> Result<EnergySpectrum> {
    if vx.grid() != vy.grid() {
        return Err(Error::Shape(
            "velocity components on different grids".into(),
        ));
    }
    let grid = vx.grid();
    let fft = Fft2::cached(grid.n());
    let ex = shell_sum(&fft.forward(vx)?, |_, _| 1.0);
    let ey = shell_sum(&fft.forward(vy)?, |_, _| 1.0);
    let n4 = (grid.len() * grid.len()) as f64;
    Ok(EnergySpectrum {
        e: ex
            .iter()
            .zip(&ey)
            .map(|(a, b)| 0.5 * (a + b) / n4)
            .collect(),
    })
}

/// Energy spectrum of an incompressible flow from its vorticity, using
/// `|v̂|² = |ω̂|² / |k|²`.
pub fn energy_spectrum_from_vorticity(omega_hat: &SpectralField) -> EnergySpectrum {
    let grid = omega_hat.grid();
    let k0 = grid.k0();
    let e = shell_sum(omega_hat, |ix, iy| {
        let kx = grid.wrap_index(ix) as f64 * k0;
        let ky = grid.wrap_index(iy) as f64 * k0;
        let k2 = kx * kx + ky * ky;
        if k2 == 0.0 {
            0.0
        } else {
            1.0 / k2
        }
    });
    let n4 = (grid.len() * grid.len()) as f64;
    EnergySpectrum {
        e: e.into_iter().map(|v| 0.5 * v / n4).collect(),
    }
}

/// Zero-mean, unit-std copy of `pixels`.
pub fn normalize(pixels: &[f64]) -> Result<Vec<f64>> {
    let n = pixels.len() as f64;
    let mean = pixels.iter().sum::<f64>() / n;
    let var = pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Degenerate(
            "image has zero standard deviation".into(),
        ));
    }
    let sd = var.sqrt();
    Ok(pixels.iter().map(|p| (p - mean) / sd).collect())
}

/// Shell-averaged `|f̂(k)|² / n²` of a square image after normalization to
/// zero mean and unit std. White noise of unit variance gives 1 per shell.
pub fn image_power_spectrum(pixels: &[f64], size: usize) -> Result<EnergySpectrum> {
    if pixels.len() != size * size {
        return Err(Error::Shape(format!(
            "{} pixels for a {size}x{size} image",
            pixels.len()
        )));
    }
    let norm = normalize(pixels)?;
    let grid = Grid2D::periodic(size)?;
    let field = RealField::new(grid, norm)?;
    let f = Fft2::cached(size).forward(&field)?;
    let power = shell_sum(&f, |_, _| 1.0);
    let mut counts = vec![0.0; power.len()];
    for iy in 0..size {
        for ix in 0..grid.nk() {
            counts[shell_of(grid, ix, iy)] += f.multiplicity(ix);
        }
    }
    let n2 = (size * size) as f64;
    Ok(EnergySpectrum {
        e: power
            .iter()
            .zip(&counts)
            .map(|(p, c)| if *c > 0.0 { p / c / n2 } else { 0.0 })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub k_lo: f64,
    pub k_hi: f64,
    pub shells: usize,
}

/// Least-squares line through `(ln k, ln E)` for shells with `k_lo <= k <= k_hi`.
pub fn fit_power_law(spec: &EnergySpectrum, band: (f64, f64)) -> Result<PowerLawFit> {
    let (lo, hi) = band;
    let pts: Vec<(f64, f64)> = spec
        .shells()
        .filter(|&(k, _)| k > 0 && (k as f64) >= lo && (k as f64) <= hi)
        .map(|(k, e)| (k as f64, e))
        .collect();
    if pts.len() < 4 {
        return Err(Error::Insufficient(format!(
            "{} shells in band [{lo}, {hi}], need 4",
            pts.len()
        )));
    }
    if let Some(&(k, e)) = pts.iter().find(|(_, e)| !(*e > 0.0)) {
        return Err(Error::Param(format!(
            "non-positive energy {e} at shell {k}"
        )));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok(PowerLawFit {
        slope,
        intercept,
        r2,
        k_lo: lo,
        k_hi: hi,
        shells: pts.len(),
    })
}

/// Ordinary least squares `y = a x + b`, returning `(a, b, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    (a, b, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFunctions {
    pub orders: Vec<u32>,
    /// Physical separations `lag * dx`.
    pub separations: Vec<f64>,
    /// `values[i][j]` is `S_{orders[i]}(separations[j])`.
    pub values: Vec<Vec<f64>>,
    /// Log-log slope of `|S_n|` against `r` per order (`NaN` when undefined).
    pub exponents: Vec<f64>,
}

/// Longitudinal structure functions averaged over the x and y directions
/// with periodic wrap. `lags` are separations in grid points.
pub fn structure_function(
    vx: &RealField,
    vy: &RealField,
    orders: &[u32],
    lags: &[usize],
) -> Result<StructureFunctions> {
    if vx.grid() != vy.grid() {
        return Err(Error::Shape(
            "velocity components on different grids".into(),
        ));
    }
    if let Some(&o) = orders.iter().find(|&&o| o == 0 || o > 8) {
        return Err(Error::Param(format!(
            "structure-function order {o} outside 1..=8"
        )));
    }
    let grid = vx.grid();
    let n = grid.n();
    let mut values = vec![vec![0.0; lags.len()]; orders.len()];
    for (j, &lag) in lags.iter().enumerate() {
        let mut sums = vec![0.0; orders.len()];
        for iy in 0..n {
            for ix in 0..n {
                let dx = vx.at((ix + lag) % n, iy) - vx.at(ix, iy);
                let dy = vy.at(ix, (iy + lag) % n) - vy.at(ix, iy);
                for (s, &o) in sums.iter_mut().zip(orders) {
                    *s += dx.powi(o as i32) + dy.powi(o as i32);
                }
            }
        }
        for (i, s) in sums.into_iter().enumerate() {
            values[i][j] = s / (2 * n * n) as f64;
        }
    }
    let separations: Vec<f64> = lags.iter().map(|&l| l as f64 * grid.dx()).collect();
    let exponents = values
        .iter()
        .map(|row| {
            let pts: Vec<(f64, f64)> = separations
                .iter()
                .zip(row)
                .filter(|(r, v)| **r > 0.0 && v.abs() > 0.0)
                .map(|(r, v)| (r.ln(), v.abs().ln()))
                .collect();
            if pts.len() < 2 {
                return f64::NAN;
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            linear_fit(&xs, &ys).0
        })
        .collect();
    Ok(StructureFunctions {
        orders: orders.to_vec(),
        separations,
        values,
        exponents,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    pub gauss_mean: f64,
    pub gauss_std: f64,
}

/// Normalized histogram with a moment-matched Gaussian.
pub fn histogram_pdf(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 10 {
        return Err(Error::Param(format!("{bins} bins, need at least 10")));
    }
    if values.is_empty() {
        return Err(Error::Insufficient("empty sample".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi == lo {
        // Constant sample: put it in the middle of the first bin.
        let w = if lo == 0.0 { 1.0 } else { lo.abs() * 1e-6 };
        lo -= 0.5 * w;
        hi = lo + w * bins as f64;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    Ok(Histogram {
        edges,
        density,
        gauss_mean: mean,
        gauss_std: std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Chaotic,
    Turbulent,
    Discard,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Chaotic => "chaotic",
            Regime::Turbulent => "turbulent",
            Regime::Discard => "discard",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub k_forcing: f64,
    pub target_slope: f64,
    pub slope_tol: f64,
    pub r2_min: f64,
    /// Fit band; `None` means `[max(4, k_f/4), 0.8 k_f]`.
    pub band: Option<(f64, f64)>,
    /// Snapshots with `t < t_min` are spin-up and discarded.
    pub t_min: f64,
    /// Each snapshot is judged on the mean spectrum of itself and up to
    /// `smooth` neighbours on either side; 0 judges snapshots alone.
    #[serde(default)]
    pub smooth: usize,
}

impl RegimeConfig {
    pub fn new(k_forcing: f64, t_min: f64) -> Self {
        Self {
            k_forcing,
            target_slope: -5.0 / 3.0,
            slope_tol: 0.35,
            r2_min: 0.95,
            band: None,
            t_min,
            smooth: 0,
        }
    }

    pub fn band(&self) -> (f64, f64) {
        self.band
            .unwrap_or(((self.k_forcing / 4.0).max(4.0), 0.8 * self.k_forcing))
    }

    pub fn is_turbulent(&self, spec: &EnergySpectrum) -> bool {
        match fit_power_law(spec, self.band()) {
            Ok(fit) => {
                (fit.slope - self.target_slope).abs() <= self.slope_tol && fit.r2 >= self.r2_min
            }
            Err(_) => false,
        }
    }
}

/// Shell-wise mean of spectra (shorter ones are zero-padded).
pub fn mean_spectrum<'a>(spectra: impl Iterator<Item = &'a EnergySpectrum>) -> EnergySpectrum {
    let mut e: Vec<f64> = Vec::new();
    let mut count = 0;
    for s in spectra {
        if s.e.len() > e.len() {
            e.resize(s.e.len(), 0.0);
        }
        e.iter_mut().zip(&s.e).for_each(|(a, b)| *a += b);
        count += 1;
    }
    e.iter_mut().for_each(|a| *a /= count.max(1) as f64);
    EnergySpectrum { e }
}

/// Characteristic time of white-in-time forcing: `η^(-1/3)` with
/// `η = f_ω,rms² · dt / 2` the enstrophy injection rate of a forcing
/// redrawn every step of length `dt`.
pub fn forcing_time(f_omega_rms: f64, dt: f64) -> f64 {
    (0.5 * f_omega_rms * f_omega_rms * dt).powf(-1.0 / 3.0)
}

/// Labels a spectrum time series. Snapshots after spin-up and before the
/// first turbulent snapshot are chaotic; after it, snapshots passing the
/// power-law test are turbulent and the rest discarded. A run that never
/// turns turbulent has no chaotic window and is discarded entirely.
pub fn classify_regime(series: &[(f64, EnergySpectrum)], cfg: &RegimeConfig) -> Vec<Regime> {
    let n = series.len();
    let turbulent: Vec<bool> = (0..n)
        .map(|i| {
            if series[i].0 < cfg.t_min {
                return false;
            }
            if cfg.smooth == 0 {
                return cfg.is_turbulent(&series[i].1);
            }
            let window = &series[i.saturating_sub(cfg.smooth)..(i + cfg.smooth + 1).min(n)];
            cfg.is_turbulent(&mean_spectrum(window.iter().map(|(_, s)| s)))
        })
        .collect();
    let Some(first) = turbulent.iter().position(|&b| b) else {
        log::warn!(
            "run never reached the turbulent regime ({} snapshots); all discarded",
            series.len()
        );
        return vec![Regime::Discard; series.len()];
    };
    series
        .iter()
        .enumerate()
        .map(|(i, (t, _))| {
            if *t < cfg.t_min {
                Regime::Discard
            } else if i < first {
                Regime::Chaotic
            } else if turbulent[i] {
                Regime::Turbulent
            } else {
                Regime::Discard
            }
        })
        .collect()
}
