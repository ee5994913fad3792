//! Gaussian random forcing supported on an annulus in Fourier space.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::fieldcore::{
    spectral_derivative, Axis, Derivative, Fft2, Grid2D, RealField, SpectralField, WaveNumbers,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    /// Annulus centre, in units of the fundamental wavenumber.
    pub k_center: f64,
    pub half_width: f64,
    /// Target rms of the forcing (of `f_ω` for [`make_forcing`]).
    pub amplitude: f64,
}

impl Default for ForcingSpec {
    fn default() -> Self {
        Self {
            k_center: 20.0,
            half_width: 1.5,
            amplitude: 1.0,
        }
    }
}

impl ForcingSpec {
    pub fn validate(&self, grid: Grid2D) -> Result<()> {
        let cut = grid.dealias_cutoff() / grid.k0();
        if !(self.k_center - self.half_width > 0.0) {
            return Err(Error::Param(format!(
                "annulus inner edge {} must be positive",
                self.k_center - self.half_width
            )));
        }
        if !(self.k_center + self.half_width < cut) {
            return Err(Error::Param(format!(
                "annulus outer edge {} must lie below the dealias cutoff {cut:.3}",
                self.k_center + self.half_width
            )));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::Param("forcing amplitude must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, k: f64) -> bool {
        (k - self.k_center).abs() <= self.half_width
    }
}

/// Independent complex Gaussian coefficients on the annulus, Hermitian on
/// the `kx = 0` column, rescaled so the real-space field has rms
/// `spec.amplitude`.
pub fn sample_annulus_scalar<R: Rng + ?Sized>(
    spec: &ForcingSpec,
    grid: Grid2D,
    rng: &mut R,
) -> Result<SpectralField> {
    spec.validate(grid)?;
    let mut f = draw_annulus(spec, grid, rng)?;
    let n2 = (grid.n() * grid.n()) as f64;
    let rms = (f.full_plane_power() / (n2 * n2)).sqrt();
    f.scale(spec.amplitude / rms);
    Ok(f)
}

fn draw_annulus<R: Rng + ?Sized>(
    spec: &ForcingSpec,
    grid: Grid2D,
    rng: &mut R,
) -> Result<SpectralField> {
    let n = grid.n();
    let nk = grid.nk();
    let mut f = SpectralField::zeros(grid);
    let mut count = 0usize;
    for iy in 0..n {
        let ky = grid.wrap_index(iy) as f64;
        for ix in 0..nk {
            let kx = grid.wrap_index(ix) as f64;
            if !spec.contains((kx * kx + ky * ky).sqrt()) {
                continue;
            }
            // Lower half of the kx = 0 column is the conjugate of the upper half.
            if ix == 0 && iy > n / 2 {
                continue;
            }
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let self_conjugate = ix == 0 && (iy == 0 || iy == n / 2);
            let c = if self_conjugate {
                Complex64::new(re, 0.0)
            } else {
                Complex64::new(re, im)
            };
            f.set(ix, iy, c);
            if ix == 0 && iy != 0 && iy != n / 2 {
                f.set(0, n - iy, c.conj());
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Param(format!(
            "annulus {} ± {} contains no modes",
            spec.k_center, spec.half_width
        )));
    }
    Ok(f)
}

/// One draw of divergence-free forcing.
#[derive(Debug, Clone)]
pub struct Forcing {
    pub phi_hat: SpectralField,
    pub f_omega_hat: SpectralField,
}

impl Forcing {
    /// Cartesian components `f = (-∂_y φ, ∂_x φ)` in sample space.
    pub fn vector(&self, fft: &Fft2) -> Result<(RealField, RealField)> {
        let fx = spectral_derivative(
            &self.phi_hat,
            Derivative::Partial {
                axis: Axis::Y,
                order: 1,
            },
        )?;
        let fy = spectral_derivative(
            &self.phi_hat,
            Derivative::Partial {
                axis: Axis::X,
                order: 1,
            },
        )?;
        let mut fx = fft.inverse(&fx)?;
        for v in fx.data_mut() {
            *v = -*v;
        }
        Ok((fx, fft.inverse(&fy)?))
    }

    pub fn omega(&self, fft: &Fft2) -> Result<RealField> {
        fft.inverse(&self.f_omega_hat)
    }
}

/// Draws a potential `φ` on the annulus and returns the curl forcing
/// `f = (-∂_y φ, ∂_x φ)` with `f_ω = ∂_x f_y - ∂_y f_x = ∇²φ`, scaled so
/// `f_ω` has rms `spec.amplitude`.
pub fn draw_forcing<R: Rng + ?Sized>(
    spec: &ForcingSpec,
    grid: Grid2D,
    wn: &WaveNumbers,
    rng: &mut R,
) -> Result<Forcing> {
    spec.validate(grid)?;
    let mut phi_hat = draw_annulus(spec, grid, rng)?;
    let mut f_omega_hat = phi_hat.clone();
    for (c, k2) in f_omega_hat.coeffs_mut().iter_mut().zip(&wn.k2) {
        *c *= -k2;
    }
    let n2 = (grid.n() * grid.n()) as f64;
    let rms = (f_omega_hat.full_plane_power() / (n2 * n2)).sqrt();
    let s = spec.amplitude / rms;
    phi_hat.scale(s);
    f_omega_hat.scale(s);
    Ok(Forcing {
        phi_hat,
        f_omega_hat,
    })
}

/// Sample-space forcing: `(f_x, f_y, f_ω)`.
pub fn make_forcing<R: Rng + ?Sized>(
    spec: &ForcingSpec,
    grid: Grid2D,
    rng: &mut R,
) -> Result<(RealField, RealField, RealField)> {
    let wn = WaveNumbers::new(grid);
    let forcing = draw_forcing(spec, grid, &wn, rng)?;
    let fft = Fft2::cached(grid.n());
    let (fx, fy) = forcing.vector(&fft)?;
    let fw = forcing.omega(&fft)?;
    Ok((fx, fy, fw))
}
