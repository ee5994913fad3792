use flowlab::fieldcore::{
    dealias, read_field, spectral_derivative, transform_forward, transform_inverse, write_field,
    Axis, Derivative, Grid2D, RealField, SpectralField,
};
use flowlab::forcing::ForcingSpec;
use flowlab::incompressible::{
    nonlinear_term, run_simulation, velocity_from_vorticity, IncompressibleConfig,
    IncompressibleSolver,
};
use flowlab::rng::stream_rng;
use num_complex::Complex64;
use rand::Rng;
use std::collections::BTreeMap;

fn cfg(n: usize, nu: f64, dt: f64) -> IncompressibleConfig {
    IncompressibleConfig {
        n,
        length: 2.0 * std::f64::consts::PI,
        nu,
        p: 2,
        alpha: 0.0,
        dt,
        forcing: None,
        t_end: 1.0,
        snapshot_stride: 1,
        cfl_limit: 0.5,
    }
}

fn random_dealiased(n: usize, seed: u64) -> SpectralField {
    let g = Grid2D::periodic(n).unwrap();
    let mut rng = stream_rng(seed, 0);
    let data: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut w = transform_forward(&RealField::new(g, data).unwrap()).unwrap();
    w.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
    dealias(&w)
}

fn wrap(i: i64, n: usize) -> usize {
    i.rem_euclid(n as i64) as usize
}

/// Full-plane coefficients `F[iy][ix]` from the half-plane layout.
fn full_plane(f: &SpectralField) -> Vec<Vec<Complex64>> {
    let n = f.grid().n();
    let nk = f.grid().nk();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for iy in 0..n {
        for ix in 0..n {
            out[iy][ix] = if ix < nk {
                f.get(ix, iy)
            } else {
                f.get(n - ix, (n - iy) % n).conj()
            };
        }
    }
    out
}

fn signed(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[test]
fn nonlinear_term_matches_convolution_sum() {
    let n = 16;
    let w = random_dealiased(n, 7);
    let wf = full_plane(&w);
    let n2 = (n * n) as f64;
    let i = Complex64::new(0.0, 1.0);
    // v̂ = (i ky, -i kx) ω̂/k², ∇̂ω = (i kx, i ky) ω̂
    let mut oracle = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for py in 0..n {
        for px in 0..n {
            let (pkx, pky) = (signed(px, n) as f64, signed(py, n) as f64);
            let p2 = pkx * pkx + pky * pky;
            if p2 == 0.0 || wf[py][px].norm() == 0.0 {
                continue;
            }
            let vx = i * pky * wf[py][px] / p2;
            let vy = -i * pkx * wf[py][px] / p2;
            for qy in 0..n {
                for qx in 0..n {
                    let (qkx, qky) = (signed(qx, n) as f64, signed(qy, n) as f64);
                    let g = vx * i * qkx * wf[qy][qx] + vy * i * qky * wf[qy][qx];
                    let kx = wrap(signed(px, n) + signed(qx, n), n);
                    let ky = wrap(signed(py, n) + signed(qy, n), n);
                    oracle[ky][kx] += g / n2;
                }
            }
        }
    }
    let nl = nonlinear_term(&w).unwrap();
    let cut = n as f64 / 3.0;
    let mut worst = 0.0_f64;
    for iy in 0..n {
        for ix in 0..=n / 2 {
            let (kx, ky) = (signed(ix, n).abs() as f64, signed(iy, n).abs() as f64);
            let want = if kx.max(ky) <= cut && !(ix == 0 && iy == 0) {
                oracle[iy][ix]
            } else {
                Complex64::new(0.0, 0.0)
            };
            worst = worst.max((nl.get(ix, iy) - want).norm());
        }
    }
    assert!(worst < 1e-10, "max deviation {worst:e}");
}

#[test]
fn velocity_is_divergence_free() {
    let w = random_dealiased(32, 3);
    let (vx, vy) = velocity_from_vorticity(&w).unwrap();
    let fx = transform_forward(&vx).unwrap();
    let fy = transform_forward(&vy).unwrap();
    let dx = spectral_derivative(
        &fx,
        Derivative::Partial {
            axis: Axis::X,
            order: 1,
        },
    )
    .unwrap();
    let dy = spectral_derivative(
        &fy,
        Derivative::Partial {
            axis: Axis::Y,
            order: 1,
        },
    )
    .unwrap();
    let div = dx.axpby(1.0, &dy, 1.0).unwrap();
    let div = transform_inverse(&div).unwrap();
    assert!(div.max_abs() < 1e-10);
}

fn smooth_initial(n: usize) -> RealField {
    RealField::from_fn(Grid2D::periodic(n).unwrap(), |x, y| {
        x.sin() * y.sin() + 0.6 * (2.0 * x + y).cos() - 0.4 * (x - 3.0 * y).sin()
    })
}

fn evolve(n: usize, nu: f64, dt: f64, t_end: f64) -> RealField {
    let mut s = IncompressibleSolver::new(cfg(n, nu, dt), stream_rng(0, 0)).unwrap();
    s.set_vorticity(&smooth_initial(n)).unwrap();
    let steps = (t_end / dt).round() as usize;
    for _ in 0..steps {
        s.step().unwrap();
    }
    s.vorticity()
}

fn max_diff(a: &RealField, b: &RealField) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn time_stepping_is_second_order() {
    let (n, nu, t) = (32, 1e-3, 0.5);
    let coarse = evolve(n, nu, 0.02, t);
    let mid = evolve(n, nu, 0.01, t);
    let fine = evolve(n, nu, 0.005, t);
    let order = (max_diff(&coarse, &mid) / max_diff(&mid, &fine)).log2();
    assert!(order >= 1.9, "observed order {order}");
}

#[test]
fn inviscid_unforced_drift_is_small() {
    let mut s = IncompressibleSolver::new(cfg(64, 0.0, 1e-3), stream_rng(0, 0)).unwrap();
    s.set_vorticity(&smooth_initial(64)).unwrap();
    let (e0, z0) = (s.energy(), s.enstrophy());
    for _ in 0..100 {
        s.step().unwrap();
        assert_eq!(s.state().omega_hat.coeffs()[0], Complex64::new(0.0, 0.0));
    }
    let de = ((s.energy() - e0) / e0).abs();
    let dz = ((s.enstrophy() - z0) / z0).abs();
    assert!(
        de < 1e-6 && dz < 1e-6,
        "energy drift {de:e}, enstrophy drift {dz:e}"
    );
}

#[test]
fn same_seed_gives_identical_snapshot_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(32, 1e-4, 0.01);
    c.forcing = Some(ForcingSpec {
        k_center: 6.0,
        half_width: 1.5,
        amplitude: 5.0,
    });
    c.t_end = 0.5;
    c.snapshot_stride = 25;
    let mut paths = Vec::new();
    for run in 0..2 {
        run_simulation(&c, stream_rng(11, 2), |snap| {
            let p = dir.path().join(format!("r{run}_{}.flow", snap.index));
            let mut meta = BTreeMap::new();
            meta.insert("t".to_string(), serde_json::json!(snap.t));
            write_field(&p, &snap.omega, &meta)?;
            paths.push(p);
            Ok(())
        })
        .unwrap();
    }
    let half = paths.len() / 2;
    assert_eq!(half, 3);
    for k in 0..half {
        assert_eq!(
            std::fs::read(&paths[k]).unwrap(),
            std::fs::read(&paths[k + half]).unwrap()
        );
    }
    let (last, header) = read_field(&paths[half - 1]).unwrap();
    assert!(last.max_abs() > 0.0);
    assert_eq!(header.metadata["t"], serde_json::json!(0.5));
    let other = run_simulation(&c, stream_rng(12, 2), |_| Ok(())).unwrap();
    let first = run_simulation(&c, stream_rng(11, 2), |_| Ok(())).unwrap();
    assert_ne!(other.spectra.last(), first.spectra.last());
}
