use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use super::{check_finite, Grid2D, RealField, SpectralField};
use crate::{Error, Result};

/// Relative tolerance on Hermitian mismatch accepted by the inverse transform.
const HERMITIAN_TOL: f64 = 1e-9;

/// Immutable 2D real-transform plan for one grid size.
pub struct Fft2 {
    n: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut real = RealFftPlanner::<f64>::new();
        let mut cplx = FftPlanner::<f64>::new();
        Self {
            n,
            r2c: real.plan_fft_forward(n),
            c2r: real.plan_fft_inverse(n),
            col_fwd: cplx.plan_fft_forward(n),
            col_inv: cplx.plan_fft_inverse(n),
        }
    }

    /// Shared plan for `n`, cached per thread.
    pub fn cached(n: usize) -> Arc<Fft2> {
        thread_local! {
            static PLANS: RefCell<HashMap<usize, Arc<Fft2>>> = RefCell::new(HashMap::new());
        }
        PLANS.with(|p| {
            p.borrow_mut()
                .entry(n)
                .or_insert_with(|| Arc::new(Fft2::new(n)))
                .clone()
        })
    }

    fn check_grid(&self, grid: Grid2D) -> Result<()> {
        if grid.n() != self.n {
            return Err(Error::Shape(format!(
                "plan for n = {}, field has n = {}",
                self.n,
                grid.n()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, f: &RealField) -> Result<SpectralField> {
        self.check_grid(f.grid())?;
        check_finite(f.data())?;
        Ok(self.forward_unchecked(f.grid(), f.data()))
    }

    /// Forward transform of raw row-major samples without the finiteness scan.
    pub(crate) fn forward_unchecked(&self, grid: Grid2D, data: &[f64]) -> SpectralField {
        let n = self.n;
        let nk = n / 2 + 1;
        let mut out = vec![Complex64::new(0.0, 0.0); n * nk];
        let mut row = vec![0.0; n];
        let mut scratch = self.r2c.make_scratch_vec();
        for iy in 0..n {
            row.copy_from_slice(&data[iy * n..(iy + 1) * n]);
            self.r2c
                .process_with_scratch(&mut row, &mut out[iy * nk..(iy + 1) * nk], &mut scratch)
                .expect("row transform sizes are fixed by the plan");
        }
        self.columns(&mut out, &self.col_fwd);
        SpectralField::from_coeffs(grid, out).expect("length fixed by grid")
    }

    pub fn inverse(&self, f: &SpectralField) -> Result<RealField> {
        self.check_grid(f.grid())?;
        let scale = f.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.norm()));
        let (mismatch, ix, iy) = f.hermitian_mismatch();
        if mismatch > HERMITIAN_TOL * scale {
            return Err(Error::Hermitian { ix, iy, mismatch });
        }
        Ok(self.inverse_unchecked(f))
    }

    pub(crate) fn inverse_unchecked(&self, f: &SpectralField) -> RealField {
        let n = self.n;
        let nk = n / 2 + 1;
        let mut buf = f.coeffs().to_vec();
        self.columns(&mut buf, &self.col_inv);
        let mut data = vec![0.0; n * n];
        let mut scratch = self.c2r.make_scratch_vec();
        let norm = 1.0 / (n * n) as f64;
        for iy in 0..n {
            let row = &mut buf[iy * nk..(iy + 1) * nk];
            row[0].im = 0.0;
            row[nk - 1].im = 0.0;
            let out = &mut data[iy * n..(iy + 1) * n];
            self.c2r
                .process_with_scratch(row, out, &mut scratch)
                .expect("row transform sizes are fixed by the plan");
            for v in out.iter_mut() {
                *v *= norm;
            }
        }
        RealField::new(f.grid(), data).expect("finite coefficients give a finite field")
    }

    /// Full complex transform along `y` for every stored `kx` column.
    fn columns(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let nk = n / 2 + 1;
        let mut t = vec![Complex64::new(0.0, 0.0); n * nk];
        for iy in 0..n {
            for ix in 0..nk {
                t[ix * n + iy] = buf[iy * nk + ix];
            }
        }
        plan.process(&mut t);
        for ix in 0..nk {
            for iy in 0..n {
                buf[iy * nk + ix] = t[ix * n + iy];
            }
        }
    }
}

/// Unnormalized forward transform.
pub fn transform_forward(f: &RealField) -> Result<SpectralField> {
    Fft2::cached(f.grid().n()).forward(f)
}

/// Inverse transform, dividing by `n²`.
pub fn transform_inverse(f: &SpectralField) -> Result<RealField> {
    Fft2::cached(f.grid().n()).inverse(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldcore::{dealias, spectral_derivative, Axis, Derivative};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, seed: u64) -> RealField {
        let g = Grid2D::periodic(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        RealField::new(g, data).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn constant_field_has_only_dc() {
        let g = Grid2D::periodic(16).unwrap();
        let f = RealField::new(g, vec![2.5; 256]).unwrap();
        let s = transform_forward(&f).unwrap();
        for (i, c) in s.coeffs().iter().enumerate() {
            if i == 0 {
                assert!((c.re - 2.5 * 256.0).abs() < 1e-10 && c.im.abs() < 1e-10);
            } else {
                assert!(c.norm() < 1e-10, "mode {i}: {c}");
            }
        }
    }

    #[test]
    fn sine_has_two_modes() {
        let g = Grid2D::periodic(64).unwrap();
        let f = RealField::from_fn(g, |x, _| x.sin());
        let s = transform_forward(&f).unwrap();
        // kx = +1 is stored explicitly; kx = -1 is its conjugate partner.
        let mut nonzero = vec![];
        for iy in 0..64 {
            for ix in 0..33 {
                if s.get(ix, iy).norm() > 1e-9 {
                    nonzero.push((ix, iy));
                }
            }
        }
        assert_eq!(nonzero, vec![(1, 0)]);
        let c = s.get(1, 0);
        assert!((c.im + 64.0 * 64.0 / 2.0).abs() < 1e-8);
    }

    #[test]
    fn round_trip_and_parseval() {
        for (n, seed) in [(16, 1), (64, 2), (128, 3)] {
            let f = random_field(n, seed);
            let s = transform_forward(&f).unwrap();
            let back = transform_inverse(&s).unwrap();
            assert!(rel_err(back.data(), f.data()) < 1e-12);
            let direct: f64 = f.data().iter().map(|v| v * v).sum();
            let spectral = s.full_plane_power() / (n * n) as f64;
            assert!(((direct - spectral) / direct).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_edge_cases() {
        let g = Grid2D::periodic(16).unwrap();
        let z = transform_inverse(&SpectralField::zeros(g)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let mut dc = SpectralField::zeros(g);
        dc.set(0, 0, Complex64::new(3.0 * 256.0, 0.0));
        let c = transform_inverse(&dc).unwrap();
        assert!(c.data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn forward_of_inverse_is_identity() {
        let s = transform_forward(&random_field(32, 7)).unwrap();
        let s2 = transform_forward(&transform_inverse(&s).unwrap()).unwrap();
        let scale = s.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.norm()));
        for (a, b) in s.coeffs().iter().zip(s2.coeffs()) {
            assert!((a - b).norm() < 1e-12 * scale);
        }
    }

    #[test]
    fn hermitian_violation_rejected() {
        let g = Grid2D::periodic(16).unwrap();
        let mut s = SpectralField::zeros(g);
        s.set(0, 3, Complex64::new(1.0, 1.0));
        assert!(matches!(
            transform_inverse(&s),
            Err(Error::Hermitian { .. })
        ));
        s.enforce_hermitian();
        assert!(transform_inverse(&s).is_ok());
        let mut dc = SpectralField::zeros(g);
        dc.set(0, 0, Complex64::new(1.0, 0.5));
        assert!(transform_inverse(&dc).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let g = Grid2D::periodic(8).unwrap();
        let mut f = RealField::zeros(g);
        f.data_mut()[3] = f64::INFINITY;
        assert!(transform_forward(&f).is_err());
    }

    #[test]
    fn derivative_single_modes() {
        let g = Grid2D::periodic(64).unwrap();
        let f = RealField::from_fn(g, |x, _| x.sin());
        let d = spectral_derivative(
            &transform_forward(&f).unwrap(),
            Derivative::Partial {
                axis: Axis::X,
                order: 1,
            },
        )
        .unwrap();
        let d = transform_inverse(&d).unwrap();
        let expect = RealField::from_fn(g, |x, _| x.cos());
        let err = d
            .data()
            .iter()
            .zip(expect.data())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-10);

        let f = RealField::from_fn(g, |x, y| x.sin() * y.sin());
        // Exact single-mode input: transform round-off at high |k| would
        // otherwise be amplified by |k|⁴.
        let mut s = transform_forward(&f).unwrap();
        for c in s.coeffs_mut() {
            if c.norm() < 1e-6 {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        let b = spectral_derivative(&s, Derivative::Biharmonic).unwrap();
        let b = transform_inverse(&b).unwrap();
        for (a, e) in b.data().iter().zip(f.data()) {
            assert!((a - 4.0 * e).abs() < 1e-10);
        }
    }

    /// Eighth-order centered finite differences along x.
    fn fd8_x(f: &RealField) -> Vec<f64> {
        const C: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        let n = f.grid().n();
        let dx = f.grid().dx();
        let mut out = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let mut s = 0.0;
                for (j, c) in C.iter().enumerate() {
                    let m = j + 1;
                    s += c * (f.at((ix + m) % n, iy) - f.at((ix + n - m) % n, iy));
                }
                out[iy * n + ix] = s / dx;
            }
        }
        out
    }

    #[test]
    fn derivative_matches_finite_differences() {
        // Smooth random field: a band-limited superposition of low modes,
        // resolved well enough for 8th-order differences to reach 1e-6.
        let n = 128;
        let g = Grid2D::periodic(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let modes: Vec<(f64, f64, f64, f64)> = (0..12)
            .map(|_| {
                (
                    rng.random_range(-3..=3) as f64,
                    rng.random_range(-3..=3) as f64,
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let f = RealField::from_fn(g, |x, y| {
            modes
                .iter()
                .map(|(kx, ky, a, p)| a * (kx * x + ky * y + p).sin())
                .sum()
        });
        let d = spectral_derivative(
            &transform_forward(&f).unwrap(),
            Derivative::Partial {
                axis: Axis::X,
                order: 1,
            },
        )
        .unwrap();
        let d = transform_inverse(&d).unwrap();
        let fd = fd8_x(&f);
        let err = d
            .data()
            .iter()
            .zip(&fd)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6, "max error {err:e}");
    }

    #[test]
    fn derivative_is_linear() {
        let f = transform_forward(&random_field(32, 3)).unwrap();
        let h = transform_forward(&random_field(32, 4)).unwrap();
        let (a, b) = (0.7, -1.3);
        for op in [
            Derivative::Partial {
                axis: Axis::Y,
                order: 1,
            },
            Derivative::Partial {
                axis: Axis::X,
                order: 2,
            },
            Derivative::Laplacian,
            Derivative::Biharmonic,
        ] {
            let lhs = spectral_derivative(&f.axpby(a, &h, b).unwrap(), op).unwrap();
            let rhs = spectral_derivative(&f, op)
                .unwrap()
                .axpby(a, &spectral_derivative(&h, op).unwrap(), b)
                .unwrap();
            let scale = lhs.coeffs().iter().fold(0.0_f64, |m, c| m.max(c.norm()));
            for (x, y) in lhs.coeffs().iter().zip(rhs.coeffs()) {
                assert!((x - y).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn dealias_does_not_increase_energy() {
        let s = transform_forward(&random_field(32, 5)).unwrap();
        let d = dealias(&s);
        assert!(d.full_plane_power() <= s.full_plane_power());
        assert_eq!(dealias(&d), d);
    }
}
