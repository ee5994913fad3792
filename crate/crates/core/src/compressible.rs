//! Weakly compressible conformal fluid in 2+1 dimensions.
//!
//! Evolves the conserved densities
//!
//! ```text
//! E  = (ρ/2)(3γ² - 1)          ∂ₜE  + ∂ᵢSⁱ                  = -ν∇⁴E
//! Sⁱ = (3/2)ργ²vⁱ              ∂ₜSⁱ + ∂ⱼ(Sʲvⁱ + ρ/2 δⁱʲ)    = -ν∇⁴Sⁱ + fⁱ
//! ```
//!
//! with fourth-order centered fluxes, the squared five-point Laplacian for
//! `∇⁴` and SSP-RK3 in time. Units have `c = 1`; grids default to unit
//! spacing so `ν` is in grid units.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fieldcore::{spectral_derivative, Axis, Derivative, Fft2, Grid2D, RealField};
use crate::forcing::{make_forcing, ForcingSpec};
use crate::rng::FlowRng;
use crate::spectra::{energy_spectrum, EnergySpectrum};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressibleConfig {
    pub n: usize,
    /// Box side; `None` means unit grid spacing (`length = n`).
    #[serde(default)]
    pub length: Option<f64>,
    pub nu: f64,
    /// Fixed step; `None` picks `cfl·dx/2`, which respects the CFL bound
    /// for every subluminal state.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub forcing: Option<ForcingSpec>,
    pub t_end: f64,
    pub snapshot_stride: usize,
}

fn default_cfl() -> f64 {
    0.4
}

impl CompressibleConfig {
    /// Forced weakly compressible run at desk scale: 128², ν = 0.03,
    /// forcing annulus at k = 12.
    pub fn desk(t_end: f64) -> Self {
        Self {
            n: 128,
            length: None,
            nu: 0.03,
            dt: None,
            cfl: default_cfl(),
            forcing: Some(ForcingSpec {
                k_center: 12.0,
                half_width: 1.5,
                amplitude: 0.015,
            }),
            t_end,
            snapshot_stride: 250,
        }
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.n, self.length.unwrap_or(self.n as f64))
    }

    pub fn validate(&self) -> Result<Grid2D> {
        let grid = self.grid()?;
        if !(self.nu >= 0.0) {
            return Err(Error::Param(format!(
                "nu = {} must be non-negative",
                self.nu
            )));
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(Error::Param(format!(
                "cfl = {} must lie in (0, 0.5]",
                self.cfl
            )));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::Param(format!("dt = {dt} must be positive")));
            }
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Param("snapshot_stride must be at least 1".into()));
        }
        if let Some(f) = &self.forcing {
            f.validate(grid)?;
        }
        Ok(grid)
    }

    pub fn time_step(&self) -> Result<f64> {
        let grid = self.grid()?;
        Ok(self.dt.unwrap_or(0.5 * self.cfl * grid.dx()))
    }

    pub fn steps(&self) -> Result<usize> {
        Ok((self.t_end / self.time_step()?).round() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveState {
    pub rho: RealField,
    pub vx: RealField,
    pub vy: RealField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservedState {
    pub e: RealField,
    pub sx: RealField,
    pub sy: RealField,
    pub t: f64,
}

/// Pointwise `(ρ, vx, vy) -> (E, Sx, Sy)`; `None` unless `ρ > 0` and `v² < 1`.
pub fn to_conserved(rho: f64, vx: f64, vy: f64) -> Option<(f64, f64, f64)> {
    let v2 = vx * vx + vy * vy;
    if !(rho > 0.0 && v2 < 1.0) {
        return None;
    }
    let g2 = 1.0 / (1.0 - v2);
    let s = 1.5 * rho * g2;
    Some((0.5 * rho * (3.0 * g2 - 1.0), s * vx, s * vy))
}

/// Pointwise inverse of [`to_conserved`]. Physical states satisfy
/// `|S| < E`; anything else returns `Err(9E² - 8s²)`.
pub fn to_primitive(e: f64, sx: f64, sy: f64) -> std::result::Result<(f64, f64, f64), f64> {
    let s2 = sx * sx + sy * sy;
    let disc = 9.0 * e * e - 8.0 * s2;
    let s = s2.sqrt();
    // 9E² > 8s² alone admits E ≤ s < 1.06E, where the root gives |v| ≥ 1.
    if !(disc > 0.0 && e > 0.0 && s < e) {
        return Err(disc);
    }
    if s < 1e-14 * e {
        return Ok((e, 0.0, 0.0));
    }
    // (3E - √disc)/(2s) rewritten without the cancellation.
    let v = 4.0 * s / (3.0 * e + disc.sqrt());
    let v2 = v * v;
    let rho = 2.0 * e * (1.0 - v2) / (2.0 + v2);
    Ok((rho, v * sx / s, v * sy / s))
}

pub fn primitives_to_conserved(p: &PrimitiveState) -> Result<ConservedState> {
    let grid = p.rho.grid();
    if p.vx.grid() != grid || p.vy.grid() != grid {
        return Err(Error::Shape("primitive fields on different grids".into()));
    }
    let len = grid.len();
    let (mut e, mut sx, mut sy) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    for i in 0..len {
        let (r, vx, vy) = (p.rho.data()[i], p.vx.data()[i], p.vy.data()[i]);
        let c = to_conserved(r, vx, vy).ok_or_else(|| {
            Error::Param(format!(
                "unphysical primitive state at ({}, {}): rho = {r}, v² = {}",
                i % grid.n(),
                i / grid.n(),
                vx * vx + vy * vy
            ))
        })?;
        (e[i], sx[i], sy[i]) = c;
    }
    Ok(ConservedState {
        e: RealField::new(grid, e)?,
        sx: RealField::new(grid, sx)?,
        sy: RealField::new(grid, sy)?,
        t: 0.0,
    })
}

pub fn conserved_to_primitives(c: &ConservedState) -> Result<PrimitiveState> {
    let grid = c.e.grid();
    let mut prim = Primitives::new(grid.len());
    prim.recover(grid.n(), c.e.data(), c.sx.data(), c.sy.data())?;
    Ok(PrimitiveState {
        rho: RealField::new(grid, prim.rho)?,
        vx: RealField::new(grid, prim.vx)?,
        vy: RealField::new(grid, prim.vy)?,
    })
}

struct Primitives {
    rho: Vec<f64>,
    vx: Vec<f64>,
    vy: Vec<f64>,
}

impl Primitives {
    fn new(len: usize) -> Self {
        Self {
            rho: vec![0.0; len],
            vx: vec![0.0; len],
            vy: vec![0.0; len],
        }
    }

    fn recover(&mut self, n: usize, e: &[f64], sx: &[f64], sy: &[f64]) -> Result<()> {
        for i in 0..e.len() {
            match to_primitive(e[i], sx[i], sy[i]) {
                Ok((r, vx, vy)) => {
                    self.rho[i] = r;
                    self.vx[i] = vx;
                    self.vy[i] = vy;
                }
                Err(disc) => {
                    return Err(Error::Unphysical {
                        x: i % n,
                        y: i / n,
                        disc,
                    })
                }
            }
        }
        Ok(())
    }

    fn max_speed(&self) -> f64 {
        self.vx
            .iter()
            .zip(&self.vy)
            .map(|(a, b)| a * a + b * b)
            .fold(0.0, f64::max)
            .sqrt()
    }
}

/// Row `iy` of `f` with two wrapped cells on each side.
fn padded_row(f: &[f64], n: usize, iy: usize, buf: &mut [f64]) {
    let row = &f[iy * n..(iy + 1) * n];
    buf[2..n + 2].copy_from_slice(row);
    buf[..2].copy_from_slice(&row[n - 2..]);
    buf[n + 2..].copy_from_slice(&row[..2]);
}

/// `out += s·∂f` along `axis`, fourth-order centered, periodic.
fn add_d4(f: &[f64], n: usize, axis: Axis, s: f64, out: &mut [f64]) {
    let c = s / 12.0;
    match axis {
        Axis::X => {
            let mut buf = vec![0.0; n + 4];
            for iy in 0..n {
                padded_row(f, n, iy, &mut buf);
                let o = &mut out[iy * n..(iy + 1) * n];
                for (ix, o) in o.iter_mut().enumerate() {
                    let w = &buf[ix..ix + 5];
                    *o += c * (-w[4] + 8.0 * w[3] - 8.0 * w[1] + w[0]);
                }
            }
        }
        Axis::Y => {
            for iy in 0..n {
                let r = |d: usize| &f[((iy + n + d - 2) % n) * n..][..n];
                let (m2, m1, p1, p2) = (r(0), r(1), r(3), r(4));
                let o = &mut out[iy * n..(iy + 1) * n];
                for ix in 0..n {
                    o[ix] += c * (-p2[ix] + 8.0 * p1[ix] - 8.0 * m1[ix] + m2[ix]);
                }
            }
        }
    }
}

/// Five-point Laplacian times `s`.
fn laplacian(f: &[f64], n: usize, s: f64) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    let mut buf = vec![0.0; n + 4];
    for iy in 0..n {
        padded_row(f, n, iy, &mut buf);
        let up = &f[((iy + 1) % n) * n..][..n];
        let dn = &f[((iy + n - 1) % n) * n..][..n];
        let o = &mut out[iy * n..(iy + 1) * n];
        for ix in 0..n {
            let w = &buf[ix + 1..ix + 4];
            o[ix] = s * (w[0] + w[2] + up[ix] + dn[ix] - 4.0 * w[1]);
        }
    }
    out
}

/// Conserved-variable time derivatives `(Ė, Ṡx, Ṡy)`.
struct Rhs {
    e: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
}

fn rhs_raw(
    n: usize,
    dx: f64,
    nu: f64,
    u: [&[f64]; 3],
    forcing: Option<(&[f64], &[f64])>,
    prim: &mut Primitives,
) -> Result<Rhs> {
    let [e, sx, sy] = u;
    let len = e.len();
    prim.recover(n, e, sx, sy)?;
    let mut out = Rhs {
        e: vec![0.0; len],
        sx: vec![0.0; len],
        sy: vec![0.0; len],
    };
    let s = -1.0 / dx;
    add_d4(sx, n, Axis::X, s, &mut out.e);
    add_d4(sy, n, Axis::Y, s, &mut out.e);
    let mut fxx = vec![0.0; len];
    let mut fxy = vec![0.0; len];
    let mut fyy = vec![0.0; len];
    for i in 0..len {
        let p = 0.5 * prim.rho[i];
        fxx[i] = sx[i] * prim.vx[i] + p;
        fxy[i] = sx[i] * prim.vy[i];
        fyy[i] = sy[i] * prim.vy[i] + p;
    }
    // ∂ⱼ(Sʲvⁱ): Sʲvⁱ is symmetric, so the xy flux serves both components.
    add_d4(&fxx, n, Axis::X, s, &mut out.sx);
    add_d4(&fxy, n, Axis::Y, s, &mut out.sx);
    add_d4(&fxy, n, Axis::X, s, &mut out.sy);
    add_d4(&fyy, n, Axis::Y, s, &mut out.sy);
    if nu > 0.0 {
        let h2 = 1.0 / (dx * dx);
        for (q, o) in [(e, &mut out.e), (sx, &mut out.sx), (sy, &mut out.sy)] {
            let l = laplacian(q, n, h2);
            let b = laplacian(&l, n, h2);
            for (o, b) in o.iter_mut().zip(b) {
                *o -= nu * b;
            }
        }
    }
    if let Some((fx, fy)) = forcing {
        for i in 0..len {
            out.sx[i] += fx[i];
            out.sy[i] += fy[i];
        }
    }
    Ok(out)
}

/// Time derivatives of the conserved fields, with optional Cartesian forcing.
pub fn rhs(
    c: &ConservedState,
    nu: f64,
    forcing: Option<(&RealField, &RealField)>,
) -> Result<(RealField, RealField, RealField)> {
    let grid = c.e.grid();
    let mut prim = Primitives::new(grid.len());
    let r = rhs_raw(
        grid.n(),
        grid.dx(),
        nu,
        [c.e.data(), c.sx.data(), c.sy.data()],
        forcing.map(|(a, b)| (a.data(), b.data())),
        &mut prim,
    )?;
    Ok((
        RealField::new(grid, r.e)?,
        RealField::new(grid, r.sx)?,
        RealField::new(grid, r.sy)?,
    ))
}

pub struct CompressibleSolver {
    cfg: CompressibleConfig,
    grid: Grid2D,
    dt: f64,
    e: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
    prim: Primitives,
    rng: FlowRng,
    steps: u64,
    max_cfl: f64,
}

impl CompressibleSolver {
    /// Uniform rest state `(ρ, v) = (1, 0)`.
    pub fn new(cfg: CompressibleConfig, rng: FlowRng) -> Result<Self> {
        let grid = cfg.validate()?;
        let dt = cfg.time_step()?;
        let len = grid.len();
        Ok(Self {
            cfg,
            grid,
            dt,
            e: vec![1.0; len],
            sx: vec![0.0; len],
            sy: vec![0.0; len],
            prim: Primitives::new(len),
            rng,
            steps: 0,
            max_cfl: 0.0,
        })
    }

    pub fn set_primitives(&mut self, p: &PrimitiveState) -> Result<()> {
        if p.rho.grid() != self.grid {
            return Err(Error::Shape("initial state on a different grid".into()));
        }
        let c = primitives_to_conserved(p)?;
        self.e = c.e.into_data();
        self.sx = c.sx.into_data();
        self.sy = c.sy.into_data();
        Ok(())
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn max_cfl(&self) -> f64 {
        self.max_cfl
    }

    pub fn conserved(&self) -> Result<ConservedState> {
        Ok(ConservedState {
            e: RealField::new(self.grid, self.e.clone())?,
            sx: RealField::new(self.grid, self.sx.clone())?,
            sy: RealField::new(self.grid, self.sy.clone())?,
            t: self.t(),
        })
    }

    pub fn primitives(&self) -> Result<PrimitiveState> {
        conserved_to_primitives(&self.conserved()?)
    }

    /// Domain sums `(ΣE, ΣSx, ΣSy)·dx²`.
    pub fn integrals(&self) -> (f64, f64, f64) {
        let a = self.grid.dx() * self.grid.dx();
        let sum = |v: &[f64]| v.iter().sum::<f64>() * a;
        (sum(&self.e), sum(&self.sx), sum(&self.sy))
    }

    pub fn step(&mut self) -> Result<()> {
        let (n, dx, nu, dt) = (self.grid.n(), self.grid.dx(), self.cfg.nu, self.dt);
        self.prim.recover(n, &self.e, &self.sx, &self.sy)?;
        let cfl = dt * (self.prim.max_speed() + 1.0) / dx;
        self.max_cfl = self.max_cfl.max(cfl);
        if cfl > self.cfg.cfl {
            return Err(Error::Cfl {
                t: self.t(),
                cfl,
                limit: self.cfg.cfl,
            });
        }
        let forcing = match &self.cfg.forcing {
            Some(spec) => {
                let (fx, fy, _) = make_forcing(spec, self.grid, &mut self.rng)?;
                Some((fx.into_data(), fy.into_data()))
            }
            None => None,
        };
        let f = forcing.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
        let u0 = [self.e.clone(), self.sx.clone(), self.sy.clone()];

        let k = rhs_raw(n, dx, nu, [&u0[0], &u0[1], &u0[2]], f, &mut self.prim)?;
        let u1 = stage(&u0, &u0, &k, 0.0, dt);
        let k = rhs_raw(n, dx, nu, [&u1[0], &u1[1], &u1[2]], f, &mut self.prim)?;
        let u2 = stage(&u0, &u1, &k, 0.75, dt);
        let k = rhs_raw(n, dx, nu, [&u2[0], &u2[1], &u2[2]], f, &mut self.prim)?;
        let [e, sx, sy] = stage(&u0, &u2, &k, 1.0 / 3.0, dt);

        if let Some(i) = e.iter().chain(&sx).chain(&sy).position(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                t: self.t() + dt,
                reason: format!("non-finite conserved value at flat index {i}"),
            });
        }
        self.e = e;
        self.sx = sx;
        self.sy = sy;
        self.steps += 1;
        Ok(())
    }

    /// `ω = ∂ₓv_y - ∂_yv_x`, evaluated spectrally from the recovered velocity.
    pub fn vorticity(&self, p: &PrimitiveState) -> Result<RealField> {
        vorticity_of(&p.vx, &p.vy)
    }
}

/// `a·u0 + (1 - a)·(u + dt·k)`.
fn stage(u0: &[Vec<f64>; 3], u: &[Vec<f64>; 3], k: &Rhs, a: f64, dt: f64) -> [Vec<f64>; 3] {
    let ks = [&k.e, &k.sx, &k.sy];
    std::array::from_fn(|c| {
        u0[c]
            .iter()
            .zip(&u[c])
            .zip(ks[c])
            .map(|((&a0, &x), &d)| a * a0 + (1.0 - a) * (x + dt * d))
            .collect()
    })
}

pub fn vorticity_of(vx: &RealField, vy: &RealField) -> Result<RealField> {
    let grid = vx.grid();
    if vy.grid() != grid {
        return Err(Error::Shape(
            "velocity components on different grids".into(),
        ));
    }
    let fft = Fft2::cached(grid.n());
    let dxvy = spectral_derivative(
        &fft.forward(vy)?,
        Derivative::Partial {
            axis: Axis::X,
            order: 1,
        },
    )?;
    let dyvx = spectral_derivative(
        &fft.forward(vx)?,
        Derivative::Partial {
            axis: Axis::Y,
            order: 1,
        },
    )?;
    let mut w = dxvy.axpby(1.0, &dyvx, -1.0)?;
    w.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
    fft.inverse(&w)
}

#[derive(Debug, Clone)]
pub struct CompressibleSnapshot {
    pub index: usize,
    pub t: f64,
    pub rho: RealField,
    pub vx: RealField,
    pub vy: RealField,
    pub omega: RealField,
    pub spectrum: EnergySpectrum,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CompressibleSummary {
    pub times: Vec<f64>,
    pub spectra: Vec<EnergySpectrum>,
    /// Largest `std(ρ)/mean(ρ)` over the stored snapshots.
    pub max_rho_contrast: f64,
    pub max_cfl: f64,
}

/// Runs from rest to `t_end`, handing each snapshot to `sink`.
pub fn run_simulation(
    cfg: &CompressibleConfig,
    rng: FlowRng,
    mut sink: impl FnMut(CompressibleSnapshot) -> Result<()>,
) -> Result<CompressibleSummary> {
    let mut solver = CompressibleSolver::new(cfg.clone(), rng)?;
    let steps = cfg.steps()?;
    let mut summary = CompressibleSummary::default();
    let mut index = 0;
    for step in 0..=steps {
        if step % cfg.snapshot_stride == 0 {
            let p = solver.primitives()?;
            let omega = solver.vorticity(&p)?;
            let spectrum = energy_spectrum(&p.vx, &p.vy)?;
            let contrast = p.rho.std_dev() / p.rho.mean();
            summary.max_rho_contrast = summary.max_rho_contrast.max(contrast);
            summary.times.push(solver.t());
            summary.spectra.push(spectrum.clone());
            sink(CompressibleSnapshot {
                index,
                t: solver.t(),
                rho: p.rho,
                vx: p.vx,
                vy: p.vy,
                omega,
                spectrum,
            })?;
            index += 1;
        }
        if step < steps {
            solver.step()?;
        }
    }
    summary.max_cfl = solver.max_cfl();
    Ok(summary)
}
