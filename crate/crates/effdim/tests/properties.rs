use effdim::{
    collect_activation_matrices, effdim_report, effective_dimension, explained_variance_ratios,
    ActivationMatrix, EffDimConfig,
};
use flowlab::rng::stream_rng;
use nalgebra::DMatrix;
use nnet::{Adam, Checkpoint, NetConfig, Sample, StageNet, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect()
}

fn matrix(data: Vec<f64>, cols: usize) -> ActivationMatrix {
    ActivationMatrix::new(1, cols, data).unwrap()
}

/// Columns with very different scales so the spectrum is not flat.
fn anisotropic(rows: usize, seed: u64) -> Vec<f64> {
    let mut d = gaussian(rows, 6, seed);
    for (i, v) in d.iter_mut().enumerate() {
        *v *= [3.0, 2.0, 1.5, 1.0, 0.5, 0.1][i % 6];
        *v += [1.0, -2.0, 0.0, 5.0, 0.0, 0.0][i % 6];
    }
    d
}

#[test]
fn subspace_rank_is_recovered() {
    let basis = gaussian(3, 8, 1);
    let coeff = gaussian(500, 3, 2);
    let mut data = vec![0.0; 500 * 8];
    for r in 0..500 {
        for j in 0..8 {
            data[r * 8 + j] = (0..3).map(|k| coeff[r * 3 + k] * basis[k * 8 + j]).sum();
        }
    }
    let s = explained_variance_ratios(&matrix(data, 8)).unwrap();
    assert!(s.ratios()[..3].iter().all(|&r| r > 1e-3));
    assert!(s.ratios()[3..].iter().all(|&r| r < 1e-12));
}

#[test]
fn isotropic_data_uses_every_direction() {
    let c = 8;
    let s = explained_variance_ratios(&matrix(gaussian(40_000, c, 3), c)).unwrap();
    for r in s.ratios() {
        assert!((r - 1.0 / c as f64).abs() < 0.01, "{r}");
    }
    let d = effective_dimension(&s);
    assert!(d > 7.95 && d <= 8.0 + 1e-12);
}

#[test]
fn invariances() {
    let rows = 2000;
    let data = anisotropic(rows, 4);
    let base = explained_variance_ratios(&matrix(data.clone(), 6)).unwrap();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-10);

    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut stream_rng(5, 0));
    let permuted: Vec<f64> = order
        .iter()
        .flat_map(|&r| data[r * 6..(r + 1) * 6].to_vec())
        .collect();
    let s = explained_variance_ratios(&matrix(permuted, 6)).unwrap();
    assert!(close(s.ratios(), base.ratios()));

    let scaled: Vec<f64> = data.iter().map(|v| 37.5 * v).collect();
    let s = explained_variance_ratios(&matrix(scaled, 6)).unwrap();
    assert!(close(s.ratios(), base.ratios()));

    let q = DMatrix::from_vec(6, 6, gaussian(6, 6, 6)).qr().q();
    let rotated: Vec<f64> = data
        .chunks_exact(6)
        .flat_map(|r| {
            (0..6)
                .map(|j| (0..6).map(|k| r[k] * q[(k, j)]).sum::<f64>())
                .collect::<Vec<_>>()
        })
        .collect();
    let s = explained_variance_ratios(&matrix(rotated, 6)).unwrap();
    assert!(close(s.ratios(), base.ratios()));
    let d = effective_dimension(&base);
    assert!((1.0..=6.0).contains(&d));
}

fn tiny_net() -> NetConfig {
    NetConfig {
        channels: vec![2, 2, 3, 3],
        blocks: 1,
        skip: false,
        input: 16,
    }
}

fn samples(count: usize) -> Vec<Sample> {
    let mut rng = stream_rng(8, 0);
    (0..count)
        .map(|i| Sample {
            x: (0..256)
                .map(|_| rng.sample::<f32, _>(StandardNormal))
                .collect(),
            label: (i % 2) as u8,
        })
        .collect()
}

#[test]
fn activation_rows_follow_stage_geometry() {
    let net = StageNet::<f32>::init(&tiny_net(), &mut stream_rng(0, 0)).unwrap();
    let set = samples(40);
    let mats = collect_activation_matrices(&net, &set, None, &mut stream_rng(0, 1)).unwrap();
    let rows: Vec<usize> = mats.iter().map(ActivationMatrix::rows).collect();
    // 16², 8², 4², 2² positions per image
    assert_eq!(rows, vec![10240, 2560, 640, 160]);
    assert_eq!(mats[2].cols, 3);
}

#[test]
fn capped_subsets_are_reproducible_and_order_free() {
    let net = StageNet::<f32>::init(&tiny_net(), &mut stream_rng(0, 0)).unwrap();
    let set = samples(60);
    let a = collect_activation_matrices(&net, &set, Some(200), &mut stream_rng(3, 0)).unwrap();
    let b = collect_activation_matrices(&net, &set, Some(200), &mut stream_rng(3, 0)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].rows(), 200);
    assert_eq!(a[3].rows(), 200);
    assert_eq!(a[2].rows(), 200);

    let mut shuffled = set.clone();
    shuffled.shuffle(&mut stream_rng(4, 0));
    let full = collect_activation_matrices(&net, &set, None, &mut stream_rng(0, 0)).unwrap();
    let perm = collect_activation_matrices(&net, &shuffled, None, &mut stream_rng(0, 0)).unwrap();
    for (x, y) in full.iter().zip(&perm) {
        let dx = effective_dimension(&explained_variance_ratios(x).unwrap());
        let dy = effective_dimension(&explained_variance_ratios(y).unwrap());
        assert!((dx - dy).abs() < 1e-10);
    }
}

#[test]
fn too_few_rows_rejected() {
    let net = StageNet::<f32>::init(&tiny_net(), &mut stream_rng(0, 0)).unwrap();
    let err =
        collect_activation_matrices(&net, &samples(3), None, &mut stream_rng(0, 0)).unwrap_err();
    assert!(
        matches!(
            err,
            effdim::Error::TooFewRows {
                stage: 3,
                rows: 48,
                need: 150
            }
        ),
        "{err}"
    );
}

fn ckpt(seed: u64, cfg: &NetConfig) -> Checkpoint {
    let net = StageNet::<f32>::init(cfg, &mut stream_rng(seed, 0)).unwrap();
    Checkpoint {
        net: cfg.clone(),
        train: TrainConfig {
            seed,
            ..Default::default()
        },
        epoch: 0,
        adam: Adam::new(net.params.len()),
        params: net.params,
    }
}

#[test]
fn report_statistics() {
    let set = samples(60);
    let cfg = EffDimConfig::default();
    let same = vec![ckpt(1, &tiny_net()), ckpt(1, &tiny_net())];
    let r = effdim_report("toy", &same, &set, &cfg).unwrap();
    assert_eq!(r.stages.len(), 4);
    for s in &r.stages {
        assert_eq!(s.std, 0.0);
        assert!(s.mean >= 1.0 && s.mean <= s.channels as f64 + 1e-9);
        assert_eq!(s.per_seed.len(), 2);
    }
    assert!(matches!(
        effdim_report("toy", &same[..1], &set, &cfg),
        Err(effdim::Error::TooFewSeeds(1))
    ));
    let mut other = tiny_net();
    other.channels = vec![2, 3, 3, 3];
    let mixed = vec![ckpt(1, &tiny_net()), ckpt(2, &other)];
    assert!(matches!(
        effdim_report("toy", &mixed, &set, &cfg),
        Err(effdim::Error::InconsistentStages(_))
    ));
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("task,stage,channels,mean,std\ntoy,1,2,"));
}
