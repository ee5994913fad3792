//! Pseudo-spectral solver for the forced 2D vorticity equation
//!
//! ```text
//! ∂ₜω = -ν ∇⁴ω - (v·∇)ω + f_ω
//! ```
//!
//! Crank–Nicolson on the hyperviscous term, second-order Adams–Bashforth
//! on advection (explicit Euler on the first step), forcing redrawn every
//! step and added explicitly, two-thirds dealiasing after every product.
//!
//! Velocity follows `v = (∂_y ψ, -∂_x ψ)` with `ω = ∂_x v_y - ∂_y v_x = -∇²ψ`,
//! so `ψ̂ = ω̂ / |k|²`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fieldcore::{dealias_in_place, Fft2, Grid2D, RealField, SpectralField, WaveNumbers};
use crate::forcing::{draw_forcing, ForcingSpec};
use crate::rng::FlowRng;
use crate::spectra::{energy_spectrum_from_vorticity, EnergySpectrum};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompressibleConfig {
    pub n: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    /// Hyperviscosity coefficient multiplying `∇⁴ω`.
    pub nu: f64,
    /// Hyperviscosity order; only `p = 2` is supported.
    #[serde(default = "default_p")]
    pub p: u32,
    /// Linear friction; carried for completeness, must be 0.
    #[serde(default)]
    pub alpha: f64,
    pub dt: f64,
    pub forcing: Option<ForcingSpec>,
    pub t_end: f64,
    /// Steps between snapshots.
    pub snapshot_stride: usize,
    #[serde(default = "default_cfl")]
    pub cfl_limit: f64,
}

fn default_length() -> f64 {
    2.0 * std::f64::consts::PI
}
fn default_p() -> u32 {
    2
}
fn default_cfl() -> f64 {
    0.5
}

impl IncompressibleConfig {
    pub fn validate(&self) -> Result<Grid2D> {
        let grid = Grid2D::new(self.n, self.length)?;
        if self.p != 2 {
            return Err(Error::Param(format!(
                "hyperviscosity order p = {} (only 2)",
                self.p
            )));
        }
        if self.alpha != 0.0 {
            return Err(Error::Param("friction alpha must be 0".into()));
        }
        if !(self.nu >= 0.0) {
            return Err(Error::Param(format!(
                "nu = {} must be non-negative",
                self.nu
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Param(format!("dt = {} must be positive", self.dt)));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Param("snapshot_stride must be at least 1".into()));
        }
        if let Some(f) = &self.forcing {
            f.validate(grid)?;
        }
        Ok(grid)
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncompressibleState {
    pub omega_hat: SpectralField,
    pub t: f64,
}

/// Velocity components in spectral space, `(v̂x, v̂y)`.
fn velocity_hat(omega_hat: &SpectralField, wn: &WaveNumbers) -> (SpectralField, SpectralField) {
    let grid = omega_hat.grid();
    let n = grid.n();
    let nk = grid.nk();
    let mut vx = SpectralField::zeros(grid);
    let mut vy = SpectralField::zeros(grid);
    for iy in 0..n {
        for ix in 0..nk {
            let i = iy * nk + ix;
            if wn.k2[i] == 0.0 || ix == n / 2 || iy == n / 2 {
                continue;
            }
            let psi = omega_hat.coeffs()[i] / wn.k2[i];
            vx.coeffs_mut()[i] = Complex64::new(0.0, wn.ky[i]) * psi;
            vy.coeffs_mut()[i] = Complex64::new(0.0, -wn.kx[i]) * psi;
        }
    }
    (vx, vy)
}

fn check_zero_mean(omega_hat: &SpectralField) -> Result<()> {
    let grid = omega_hat.grid();
    let n2 = grid.len() as f64;
    let mean = omega_hat.coeffs()[0].norm() / n2;
    let rms = (omega_hat.full_plane_power() / (n2 * n2)).sqrt();
    if mean > 1e-12 * rms.max(1.0) {
        return Err(Error::Param(format!(
            "mean vorticity {mean:e} is incompatible with periodic inversion"
        )));
    }
    Ok(())
}

/// Sample-space velocity of a zero-mean vorticity field.
pub fn velocity_from_vorticity(omega_hat: &SpectralField) -> Result<(RealField, RealField)> {
    check_zero_mean(omega_hat)?;
    let grid = omega_hat.grid();
    let wn = WaveNumbers::new(grid);
    let fft = Fft2::cached(grid.n());
    let (vx, vy) = velocity_hat(omega_hat, &wn);
    Ok((fft.inverse(&vx)?, fft.inverse(&vy)?))
}

/// Dealiased advection term `(v·∇)ω` and the largest sample-space speed.
fn advection(omega_hat: &SpectralField, wn: &WaveNumbers, fft: &Fft2) -> (SpectralField, f64) {
    let grid = omega_hat.grid();
    let n = grid.n();
    let nk = grid.nk();
    let (vx_hat, vy_hat) = velocity_hat(omega_hat, wn);
    let mut wx = SpectralField::zeros(grid);
    let mut wy = SpectralField::zeros(grid);
    for iy in 0..n {
        for ix in 0..nk {
            if ix == n / 2 || iy == n / 2 {
                continue;
            }
            let i = iy * nk + ix;
            let w = omega_hat.coeffs()[i];
            wx.coeffs_mut()[i] = Complex64::new(0.0, wn.kx[i]) * w;
            wy.coeffs_mut()[i] = Complex64::new(0.0, wn.ky[i]) * w;
        }
    }
    let vx = fft.inverse_unchecked(&vx_hat);
    let vy = fft.inverse_unchecked(&vy_hat);
    let wx = fft.inverse_unchecked(&wx);
    let wy = fft.inverse_unchecked(&wy);
    let mut vmax2 = 0.0_f64;
    let prod: Vec<f64> = (0..grid.len())
        .map(|i| {
            let (a, b) = (vx.data()[i], vy.data()[i]);
            vmax2 = vmax2.max(a * a + b * b);
            a * wx.data()[i] + b * wy.data()[i]
        })
        .collect();
    let mut out = fft.forward_unchecked(grid, &prod);
    dealias_in_place(&mut out);
    out.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
    (out, vmax2.sqrt())
}

/// Dealiased `(v·∇)ω` for a zero-mean vorticity field.
pub fn nonlinear_term(omega_hat: &SpectralField) -> Result<SpectralField> {
    check_zero_mean(omega_hat)?;
    let grid = omega_hat.grid();
    let wn = WaveNumbers::new(grid);
    Ok(advection(omega_hat, &wn, &Fft2::cached(grid.n())).0)
}

pub struct IncompressibleSolver {
    cfg: IncompressibleConfig,
    grid: Grid2D,
    wn: WaveNumbers,
    fft: Arc<Fft2>,
    state: IncompressibleState,
    prev_nl: Option<SpectralField>,
    rng: FlowRng,
    max_cfl: f64,
    steps: u64,
}

impl IncompressibleSolver {
    /// Solver at rest (`v = 0`).
    pub fn new(cfg: IncompressibleConfig, rng: FlowRng) -> Result<Self> {
        let grid = cfg.validate()?;
        Ok(Self {
            wn: WaveNumbers::new(grid),
            fft: Fft2::cached(grid.n()),
            state: IncompressibleState {
                omega_hat: SpectralField::zeros(grid),
                t: 0.0,
            },
            prev_nl: None,
            cfg,
            grid,
            rng,
            max_cfl: 0.0,
            steps: 0,
        })
    }

    /// Replaces the state with a sample-space vorticity (mean removed, dealiased).
    pub fn set_vorticity(&mut self, omega: &RealField) -> Result<()> {
        if omega.grid() != self.grid {
            return Err(Error::Shape("initial vorticity on a different grid".into()));
        }
        let mut w = self.fft.forward(omega)?;
        w.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
        dealias_in_place(&mut w);
        self.state.omega_hat = w;
        self.prev_nl = None;
        Ok(())
    }

    pub fn state(&self) -> &IncompressibleState {
        &self.state
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn config(&self) -> &IncompressibleConfig {
        &self.cfg
    }

    pub fn max_cfl(&self) -> f64 {
        self.max_cfl
    }

    pub fn vorticity(&self) -> RealField {
        self.fft.inverse_unchecked(&self.state.omega_hat)
    }

    pub fn velocity(&self) -> (RealField, RealField) {
        let (vx, vy) = velocity_hat(&self.state.omega_hat, &self.wn);
        (
            self.fft.inverse_unchecked(&vx),
            self.fft.inverse_unchecked(&vy),
        )
    }

    pub fn spectrum(&self) -> EnergySpectrum {
        energy_spectrum_from_vorticity(&self.state.omega_hat)
    }

    pub fn energy(&self) -> f64 {
        self.spectrum().total()
    }

    /// `½⟨ω²⟩`.
    pub fn enstrophy(&self) -> f64 {
        let n2 = self.grid.len() as f64;
        0.5 * self.state.omega_hat.full_plane_power() / (n2 * n2)
    }

    pub fn step(&mut self) -> Result<()> {
        let dt = self.cfg.dt;
        let (adv, vmax) = advection(&self.state.omega_hat, &self.wn, &self.fft);
        let cfl = dt * vmax / self.grid.dx();
        self.max_cfl = self.max_cfl.max(cfl);
        if cfl > self.cfg.cfl_limit {
            return Err(Error::Cfl {
                t: self.state.t,
                cfl,
                limit: self.cfg.cfl_limit,
            });
        }
        let forcing = match &self.cfg.forcing {
            Some(spec) => Some(draw_forcing(spec, self.grid, &self.wn, &mut self.rng)?.f_omega_hat),
            None => None,
        };
        let a = 0.5 * self.cfg.nu * dt;
        let w = self.state.omega_hat.coeffs_mut();
        for i in 0..w.len() {
            let nl = match &self.prev_nl {
                Some(prev) => -1.5 * adv.coeffs()[i] + 0.5 * prev.coeffs()[i],
                None => -adv.coeffs()[i],
            };
            let f = forcing
                .as_ref()
                .map_or(Complex64::new(0.0, 0.0), |f| f.coeffs()[i]);
            let k4 = self.wn.k4[i];
            w[i] = ((1.0 - a * k4) * w[i] + dt * (nl + f)) / (1.0 + a * k4);
        }
        w[0] = Complex64::new(0.0, 0.0);
        dealias_in_place(&mut self.state.omega_hat);
        self.prev_nl = Some(adv);
        self.steps += 1;
        self.state.t = self.steps as f64 * dt;
        if let Some(bad) = self
            .state
            .omega_hat
            .coeffs()
            .iter()
            .find(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(Error::Diverged {
                t: self.state.t,
                reason: format!("non-finite vorticity coefficient {bad}"),
            });
        }
        Ok(())
    }
}

/// One stored snapshot of a run.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub index: usize,
    pub t: f64,
    pub omega: RealField,
    pub vx: RealField,
    pub vy: RealField,
    pub spectrum: EnergySpectrum,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub times: Vec<f64>,
    pub spectra: Vec<EnergySpectrum>,
    pub max_cfl: f64,
}

/// Runs from rest to `t_end`, handing each snapshot to `sink`.
pub fn run_simulation(
    cfg: &IncompressibleConfig,
    rng: FlowRng,
    mut sink: impl FnMut(Snapshot) -> Result<()>,
) -> Result<RunSummary> {
    let mut solver = IncompressibleSolver::new(cfg.clone(), rng)?;
    let mut summary = RunSummary::default();
    let steps = cfg.steps();
    let mut index = 0;
    for step in 0..=steps {
        if step % cfg.snapshot_stride == 0 {
            let spectrum = solver.spectrum();
            let (vx, vy) = solver.velocity();
            summary.times.push(solver.state.t);
            summary.spectra.push(spectrum.clone());
            sink(Snapshot {
                index,
                t: solver.state.t,
                omega: solver.vorticity(),
                vx,
                vy,
                spectrum,
            })?;
            index += 1;
        }
        if step < steps {
            solver.step()?;
        }
    }
    summary.max_cfl = solver.max_cfl;
    Ok(summary)
}
