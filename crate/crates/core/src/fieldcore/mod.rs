//! Periodic square grids, real and spectral fields, spectral calculus and
//! the `FLOW1` field file format.
//!
//! Spectral coefficients use the half-plane layout of a real 2D transform:
//! `n` rows indexed by `ky` (wrapped, `iy >= n/2` meaning `iy - n`) and
//! `n/2 + 1` columns indexed by `kx >= 0`. The forward transform is
//! unnormalized; the inverse divides by `n²`, so
//! `Σₓ f² = (1/n²) Σ_k |f̂|²` over the full (Hermitian-completed) plane.

mod fft;
mod io;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use fft::{transform_forward, transform_inverse, Fft2};
pub use io::{read_field, write_field, FieldHeader};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    n: usize,
    length: f64,
}

impl Grid2D {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 8 {
            return Err(Error::Grid(format!("n = {n} is below the minimum of 8")));
        }
        if !n.is_multiple_of(2) {
            return Err(Error::Grid(format!("n = {n} must be even")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Grid(format!("length = {length} must be positive")));
        }
        Ok(Self { n, length })
    }

    /// Grid on the default `2π` periodic box.
    pub fn periodic(n: usize) -> Result<Self> {
        Self::new(n, 2.0 * PI)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of stored `kx` columns in the half-plane layout.
    pub fn nk(&self) -> usize {
        self.n / 2 + 1
    }

    pub fn spectral_len(&self) -> usize {
        self.n * self.nk()
    }

    /// Fundamental wavenumber `2π / length`.
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// Two-thirds truncation wavenumber `(2/3)(n/2) k0`.
    pub fn dealias_cutoff(&self) -> f64 {
        (2.0 / 3.0) * (self.n as f64 / 2.0) * self.k0()
    }

    /// Signed integer wavenumber of a row or column index, in `[-n/2, n/2)`.
    pub fn wrap_index(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i >= n / 2 {
            i - n
        } else {
            i
        }
    }

    /// Sample coordinate `j * dx`.
    pub fn coord(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid2D,
    data: Vec<f64>,
}

impl RealField {
    pub fn new(grid: Grid2D, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} samples, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    /// Samples `f(x, y)` at grid points; row index is `y`.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut data = Vec::with_capacity(grid.len());
        for iy in 0..n {
            let y = grid.coord(iy);
            for ix in 0..n {
                data.push(f(grid.coord(ix), y));
            }
        }
        Self { grid, data }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.grid.n + ix]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        (self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.data)
    }
}

pub(crate) fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid2D,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.spectral_len()],
        }
    }

    pub fn from_coeffs(grid: Grid2D, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.spectral_len() {
            return Err(Error::Shape(format!(
                "{} coefficients, grid needs {}",
                coeffs.len(),
                grid.spectral_len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Index of the mode stored at column `ix` (kx >= 0) and row `iy`.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.grid.nk() + ix
    }

    pub fn get(&self, ix: usize, iy: usize) -> Complex64 {
        self.coeffs[self.index(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, value: Complex64) {
        let i = self.index(ix, iy);
        self.coeffs[i] = value;
    }

    /// Multiplicity of a stored mode in the full plane: columns `0` and
    /// `n/2` appear once, all other columns also stand for their conjugate.
    pub fn multiplicity(&self, ix: usize) -> f64 {
        if ix == 0 || ix == self.grid.n / 2 {
            1.0
        } else {
            2.0
        }
    }

    /// `Σ_k |f̂|²` over the full plane.
    pub fn full_plane_power(&self) -> f64 {
        let nk = self.grid.nk();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| self.multiplicity(i % nk) * c.norm_sqr())
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    /// Pairwise linear combination `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &SpectralField, b: f64) -> Result<SpectralField> {
        if self.grid != other.grid {
            return Err(Error::Shape("spectral fields on different grids".into()));
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x * a + y * b)
            .collect();
        Ok(SpectralField {
            grid: self.grid,
            coeffs,
        })
    }

    /// Largest deviation from Hermitian symmetry on the self-paired columns
    /// (`kx = 0` and `kx = n/2`), and where it occurs.
    pub fn hermitian_mismatch(&self) -> (f64, usize, usize) {
        let n = self.grid.n;
        let mut worst = (0.0, 0, 0);
        for &ix in &[0, n / 2] {
            for iy in 0..n {
                let jy = (n - iy) % n;
                let d = (self.get(ix, iy) - self.get(ix, jy).conj()).norm();
                if d > worst.0 {
                    worst = (d, ix, iy);
                }
            }
        }
        worst
    }

    /// Projects onto the Hermitian-consistent subspace by averaging each
    /// self-paired coefficient with the conjugate of its partner.
    pub fn enforce_hermitian(&mut self) {
        let n = self.grid.n;
        for &ix in &[0, n / 2] {
            for iy in 0..=n / 2 {
                let jy = (n - iy) % n;
                let a = self.get(ix, iy);
                let b = self.get(ix, jy);
                let avg = (a + b.conj()) * 0.5;
                self.set(ix, iy, avg);
                self.set(ix, jy, avg.conj());
            }
        }
    }
}

/// Wavenumber lookup for every stored spectral mode.
#[derive(Debug, Clone)]
pub struct WaveNumbers {
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub k2: Vec<f64>,
    pub k4: Vec<f64>,
}

impl WaveNumbers {
    pub fn new(grid: Grid2D) -> Self {
        let n = grid.n();
        let nk = grid.nk();
        let k0 = grid.k0();
        let len = grid.spectral_len();
        let (mut kx, mut ky, mut k2, mut k4) = (
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
        );
        for iy in 0..n {
            let qy = grid.wrap_index(iy) as f64 * k0;
            for ix in 0..nk {
                let qx = grid.wrap_index(ix) as f64 * k0;
                let q2 = qx * qx + qy * qy;
                kx.push(qx);
                ky.push(qy);
                k2.push(q2);
                k4.push(q2 * q2);
            }
        }
        Self { kx, ky, k2, k4 }
    }

    /// `|k|` in units of the fundamental wavenumber.
    pub fn shell_radius(&self, i: usize, grid: Grid2D) -> f64 {
        self.k2[i].sqrt() / grid.k0()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Spectral differential operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    /// `∂_axis^order`, multiplying by `(i k_axis)^order`.
    Partial { axis: Axis, order: u8 },
    /// `∇²`, multiplying by `-|k|²`.
    Laplacian,
    /// `∇⁴`, multiplying by `|k|⁴`.
    Biharmonic,
}

pub fn spectral_derivative(f: &SpectralField, op: Derivative) -> Result<SpectralField> {
    let grid = f.grid();
    let n = grid.n();
    let nk = grid.nk();
    let k0 = grid.k0();
    let mut out = f.clone();
    match op {
        Derivative::Partial { axis, order } => {
            if !matches!(order, 1 | 2 | 4) {
                return Err(Error::DerivativeOrder(order));
            }
            for iy in 0..n {
                for ix in 0..nk {
                    let (idx, nyquist) = match axis {
                        Axis::X => (grid.wrap_index(ix), ix == n / 2),
                        Axis::Y => (grid.wrap_index(iy), iy == n / 2),
                    };
                    let k = idx as f64 * k0;
                    let c = &mut out.coeffs[iy * nk + ix];
                    // The Nyquist mode of an odd derivative has no real
                    // counterpart and is dropped.
                    if nyquist && order % 2 == 1 {
                        *c = Complex64::new(0.0, 0.0);
                        continue;
                    }
                    let ik = Complex64::new(0.0, k);
                    *c *= ik.powi(order as i32);
                }
            }
        }
        Derivative::Laplacian | Derivative::Biharmonic => {
            let wn = WaveNumbers::new(grid);
            for (i, c) in out.coeffs.iter_mut().enumerate() {
                *c *= match op {
                    Derivative::Laplacian => -wn.k2[i],
                    _ => wn.k4[i],
                };
            }
        }
    }
    Ok(out)
}

/// True if the mode at storage indices `(ix, iy)` survives two-thirds truncation.
pub fn mode_kept(grid: Grid2D, ix: usize, iy: usize) -> bool {
    let cut = (2.0 / 3.0) * (grid.n() as f64 / 2.0);
    let kx = grid.wrap_index(ix).unsigned_abs() as f64;
    let ky = grid.wrap_index(iy).unsigned_abs() as f64;
    kx.max(ky) <= cut
}

/// Two-thirds rule truncation.
pub fn dealias(f: &SpectralField) -> SpectralField {
    let mut out = f.clone();
    dealias_in_place(&mut out);
    out
}

pub fn dealias_in_place(f: &mut SpectralField) {
    let grid = f.grid();
    let nk = grid.nk();
    for iy in 0..grid.n() {
        for ix in 0..nk {
            if !mode_kept(grid, ix, iy) {
                f.coeffs[iy * nk + ix] = Complex64::new(0.0, 0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_small_and_bad_length() {
        assert!(Grid2D::periodic(4).is_err());
        assert!(Grid2D::new(16, 0.0).is_err());
        assert!(Grid2D::new(16, -1.0).is_err());
        assert!(Grid2D::periodic(9).is_err());
        let g = Grid2D::periodic(64).unwrap();
        assert!((g.dx() - 2.0 * PI / 64.0).abs() < 1e-15);
    }

    #[test]
    fn wavenumbers_cover_half_open_range() {
        let g = Grid2D::periodic(16).unwrap();
        let wn = WaveNumbers::new(g);
        for (i, &k) in wn.kx.iter().chain(&wn.ky).enumerate() {
            assert!((-8.0..8.0).contains(&k), "mode {i}: {k}");
        }
        for i in 0..wn.k2.len() {
            assert_eq!(wn.k4[i], wn.k2[i] * wn.k2[i]);
        }
    }

    #[test]
    fn real_field_rejects_nan() {
        let g = Grid2D::periodic(8).unwrap();
        let mut data = vec![0.0; 64];
        data[5] = f64::NAN;
        assert!(matches!(
            RealField::new(g, data),
            Err(Error::NonFinite { index: 5, .. })
        ));
    }

    #[test]
    fn dealias_examples() {
        let g = Grid2D::periodic(64).unwrap();
        let mut f = SpectralField::zeros(g);
        let one = Complex64::new(1.0, 0.0);
        // 0.9 * k_max with k_max = 32
        let hi = (0.9_f64 * 32.0).round() as usize;
        f.set(hi, 3, one);
        f.set(0, 5, one);
        f.set(0, 64 - 5, one);
        let d = dealias(&f);
        assert_eq!(d.get(hi, 3), Complex64::new(0.0, 0.0));
        assert_eq!(d.get(0, 5), one);
        assert_eq!(dealias(&d), d);
    }

    #[test]
    fn derivative_rejects_order_three() {
        let g = Grid2D::periodic(16).unwrap();
        let f = SpectralField::zeros(g);
        assert!(matches!(
            spectral_derivative(
                &f,
                Derivative::Partial {
                    axis: Axis::X,
                    order: 3
                }
            ),
            Err(Error::DerivativeOrder(3))
        ));
    }
}
