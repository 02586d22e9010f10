use super::*;
use crate::features::{prepare_identity, RawDataset};
use crate::tensor::inner_product;
use rand::{Rng, SeedableRng};

fn random_data(seed: u64, n: usize, shape: Vec<usize>, d: usize) -> FeaturizedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: usize = shape.iter().product();
    let feats = (0..n * p * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeaturizedDataset::from_features(shape, d, feats, y).unwrap()
}

fn random_bundle(seed: u64, shape: Vec<usize>, rank: usize, d: usize) -> CpFactorBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = shape
        .iter()
        .map(|&p| (0..p * rank * d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    CpFactorBundle::new(shape, rank, d, factors).unwrap()
}

fn variance(y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / y.len() as f64
}

#[test]
fn objective_of_zero_bundle_is_variance() {
    let data = random_data(1, 30, vec![3, 2], 2);
    let zero = CpFactorBundle::zeros(vec![3, 2], 2, 2);
    let v = objective(&data, &zero, 0.7).unwrap();
    assert!((v - variance(data.y())).abs() < 1e-12);
}

#[test]
fn objective_matches_tensor_route() {
    let data = random_data(2, 12, vec![3, 2, 2], 2);
    let bundle = random_bundle(3, vec![3, 2, 2], 2, 2);
    let lambda = 0.3;
    let mut risk = 0.0;
    for i in 0..data.n() {
        let mut p = 0.0;
        for h in 0..2 {
            p += inner_product(&bundle.compose(h).unwrap(), &data.feature_tensor(i, h)).unwrap();
        }
        let r = data.y()[i] - data.intercept() - p;
        risk += r * r;
    }
    risk /= data.n() as f64;
    let pen: f64 = (0..3)
        .map(|k| (0..bundle.shape()[k]).map(|j| bundle.group_norm(k, j)).sum::<f64>())
        .sum();
    let got = objective(&data, &bundle, lambda).unwrap();
    assert!((got - (risk + lambda * pen)).abs() < 1e-12);
    assert!((objective(&data, &bundle, 0.0).unwrap() - risk).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    let data = random_data(4, 15, vec![3, 4], 2);
    let bundle = random_bundle(5, vec![3, 4], 2, 2);
    for k in 0..2 {
        let g = grad_block(&data, &bundle, k).unwrap();
        let h = 1e-6;
        let mut fd = vec![0.0; g.len()];
        for (c, slot) in fd.iter_mut().enumerate() {
            let mut plus = bundle.clone();
            plus.factor_mut(k)[c] += h;
            let mut minus = bundle.clone();
            minus.factor_mut(k)[c] -= h;
            *slot = (objective(&data, &plus, 0.0).unwrap() - objective(&data, &minus, 0.0).unwrap())
                / (2.0 * h);
        }
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num / den <= 1e-6, "rel err {}", num / den);
    }
}

#[test]
fn gradient_at_zero_block_is_plug_in() {
    let data = random_data(6, 10, vec![2, 3], 1);
    let mut bundle = random_bundle(7, vec![2, 3], 1, 1);
    bundle.set_factor(0, vec![0.0; 2]).unwrap();
    let g = grad_block(&data, &bundle, 0).unwrap();
    let f = build_design(&data, &bundle, 0).unwrap();
    let want: Vec<f64> = f
        .tmatvec(&data.centered_y())
        .iter()
        .map(|v| -2.0 * v / data.n() as f64)
        .collect();
    for (a, b) in g.iter().zip(&want) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn large_lambda_gives_zero_model() {
    let data = random_data(8, 40, vec![3, 3], 2);
    let config = FitConfig {
        rank: 2,
        lambda: 1e6,
        ..FitConfig::default()
    };
    let res = fit(&data, &config).unwrap();
    assert!(res.bundle.is_zero());
    assert!((res.final_objective() - variance(data.y())).abs() < 1e-12);
    assert!(res.active_sets.iter().all(|s| s.is_empty()));
}

#[test]
fn threshold_at_lambda_max_is_sharp() {
    for (seed, shape) in [(9, vec![4, 3]), (10, vec![3, 3, 2])] {
        let data = random_data(seed, 50, shape, 2);
        let base = FitConfig {
            rank: 2,
            seed: 3,
            ..FitConfig::default()
        };
        let lmax = lambda_max(&data, &base).unwrap();
        let above = fit(&data, &FitConfig { lambda: 1.01 * lmax, ..base.clone() }).unwrap();
        assert!(above.bundle.is_zero());
        let below = fit(&data, &FitConfig { lambda: 0.5 * lmax, ..base }).unwrap();
        assert!(!below.bundle.is_zero());
    }
}

#[test]
fn objective_trace_is_monotone() {
    for seed in 0..5 {
        let data = random_data(10 + seed, 25, vec![3, 2, 2], 2);
        let config = FitConfig {
            rank: 2,
            lambda: 0.05,
            seed,
            ..FitConfig::default()
        };
        let res = fit(&data, &config).unwrap();
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn rebalance_keeps_trace_monotone_and_predictions() {
    let data = random_data(20, 30, vec![3, 3], 2);
    let b = random_bundle(21, vec![3, 3], 2, 2);
    let rb = rebalance(&b, &[0.1, 0.1]);
    let pen = |x: &CpFactorBundle| -> f64 {
        (0..2).map(|k| (0..3).map(|j| x.group_norm(k, j)).sum::<f64>()).collect::<Vec<_>>().iter().sum()
    };
    assert!(pen(&rb) <= pen(&b) + 1e-12);
    let mass: Vec<f64> = (0..2).map(|k| (0..3).map(|j| rb.group_norm(k, j)).sum()).collect();
    assert!((mass[0] - mass[1]).abs() < 1e-12);
    let p0 = predictions(&data, &b).unwrap();
    let p1 = predictions(&data, &rb).unwrap();
    for (a, c) in p0.iter().zip(&p1) {
        assert!((a - c).abs() < 1e-12);
    }
    let res = fit(
        &data,
        &FitConfig {
            lambda: 0.02,
            rebalance: true,
            ..FitConfig::default()
        },
    )
    .unwrap();
    for w in res.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-8);
    }
}

#[test]
fn active_sets_follow_group_norms() {
    let data = random_data(30, 40, vec![5, 3], 2);
    let lmax = lambda_max(&data, &FitConfig::default()).unwrap();
    let res = fit(
        &data,
        &FitConfig {
            lambda: 0.3 * lmax,
            ..FitConfig::default()
        },
    )
    .unwrap();
    for k in 0..2 {
        for j in 0..res.bundle.shape()[k] {
            assert_eq!(res.active_sets[k].contains(&j), res.bundle.group_norm(k, j) > 0.0);
        }
    }
}

#[test]
fn fit_is_bit_deterministic() {
    let data = random_data(40, 30, vec![3, 3], 2);
    let config = FitConfig {
        lambda: 0.01,
        seed: 11,
        ..FitConfig::default()
    };
    let a = fit(&data, &config).unwrap();
    let b = fit(&data, &config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn jacobi_scheme_runs() {
    let data = random_data(41, 30, vec![3, 3], 2);
    let res = fit(
        &data,
        &FitConfig {
            lambda: 0.05,
            update: UpdateScheme::Jacobi,
            max_sweeps: 20,
            ..FitConfig::default()
        },
    )
    .unwrap();
    assert!(res.sweeps >= 1);
}

#[test]
fn constant_response_is_degenerate() {
    let mut data = random_data(42, 10, vec![2, 2], 1);
    data = FeaturizedDataset::from_features(
        data.shape().to_vec(),
        1,
        data.features().to_vec(),
        vec![3.0; 10],
    )
    .unwrap();
    let res = fit(&data, &FitConfig::default()).unwrap();
    assert!(res.degenerate);
    assert!(res.bundle.is_zero());
    assert_eq!(res.intercept, 3.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let data = random_data(43, 10, vec![2, 2], 1);
    for bad in [
        FitConfig { rank: 0, ..FitConfig::default() },
        FitConfig { tol: 0.0, ..FitConfig::default() },
        FitConfig { lambda: -1.0, ..FitConfig::default() },
        FitConfig { way_lambdas: Some(vec![0.1]), ..FitConfig::default() },
    ] {
        assert!(fit(&data, &bad).is_err());
    }
}

fn rank_one_linear(n: usize, seed: u64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = [1.0, -0.5, 0.8];
    let b = [0.6, 1.2];
    let mut x = Vec::with_capacity(n * 6);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = 0.0;
        for (j, aj) in a.iter().enumerate() {
            for (l, bl) in b.iter().enumerate() {
                let v: f64 = rng.random();
                x.push(v);
                let _ = (j, l);
                s += aj * bl * v;
            }
        }
        y.push(s);
    }
    RawDataset::new(vec![3, 2], x, y).unwrap()
}

#[test]
fn noiseless_rank_one_linear_is_recovered() {
    let raw = rank_one_linear(200, 1);
    let (_, _, data) = prepare_identity(&raw).unwrap();
    let res = fit(
        &data,
        &FitConfig {
            rank: 1,
            lambda: 1e-9,
            tol: 1e-9,
            max_sweeps: 2000,
            ..FitConfig::default()
        },
    )
    .unwrap();
    let pred = predictions(&data, &res.bundle).unwrap();
    let mse: f64 = pred
        .iter()
        .zip(data.y())
        .map(|(p, y)| (y - data.intercept() - p).powi(2))
        .sum::<f64>()
        / data.n() as f64;
    assert!(mse <= 1e-4, "mse {mse}");
}

#[test]
fn predict_zero_bundle_returns_intercept() {
    let raw = rank_one_linear(20, 2);
    let (basis, scaler, data) = prepare_identity(&raw).unwrap();
    let model = StarModel::new(
        basis,
        scaler,
        data.intercept(),
        CpFactorBundle::zeros(vec![3, 2], 1, 1),
        0.0,
    )
    .unwrap();
    let v = model.predict(&raw.sample_tensor(3)).unwrap();
    assert_eq!(v, data.intercept());
}

#[test]
fn predict_matches_design_route() {
    let shape = vec![3, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f64> = (0..40 * 6).map(|_| rng.random()).collect();
    let y: Vec<f64> = (0..40).map(|_| rng.random()).collect();
    let raw = RawDataset::new(shape.clone(), x, y).unwrap();
    let (basis, scaler, data) = crate::features::prepare(&raw, &BasisConfig::default()).unwrap();
    let bundle = random_bundle(10, shape, 2, data.basis_count());
    let model = StarModel::new(basis, scaler, data.intercept(), bundle.clone(), 0.0).unwrap();
    for k in 0..2 {
        let f = build_design(&data, &bundle, k).unwrap();
        let route = f.matvec(bundle.factor(k));
        for i in 0..raw.n() {
            let p = model.predict(&raw.sample_tensor(i)).unwrap();
            assert!((p - data.intercept() - route[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn predict_rejects_wrong_shape() {
    let raw = rank_one_linear(10, 3);
    let (basis, scaler, data) = prepare_identity(&raw).unwrap();
    let model =
        StarModel::new(basis, scaler, data.intercept(), CpFactorBundle::zeros(vec![3, 2], 1, 1), 0.0)
            .unwrap();
    assert!(model.predict(&DenseTensor::zeros(vec![2, 3])).is_err());
}

#[test]
fn fit_from_truth_adjacent_start_reduces_estimation_error() {
    // exact low-rank signal in feature space, warm start near the truth
    let shape = vec![6, 4];
    let d = 2;
    let n = 300;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let truth = random_bundle(13, shape.clone(), 1, d);
    let feats: Vec<f64> = (0..n * 24 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let zero_y = FeaturizedDataset::from_features(shape.clone(), d, feats.clone(), vec![0.0; n]).unwrap();
    let signal = predictions(&zero_y, &truth).unwrap();
    let y: Vec<f64> = signal.iter().map(|s| s + 0.01 * rng.random_range(-1.0..1.0)).collect();
    let data = FeaturizedDataset::from_features(shape, d, feats, y).unwrap();
    let mut start = truth.clone();
    for k in 0..2 {
        for v in start.factor_mut(k) {
            *v += 0.1 * rng.random_range(-1.0..1.0);
        }
    }
    let e0 = estimation_error(&start, &truth).unwrap();
    let res = fit_from(
        &data,
        &FitConfig {
            rank: 1,
            lambda: 1e-4,
            ..FitConfig::default()
        },
        start,
    )
    .unwrap();
    let e1 = estimation_error(&res.bundle, &truth).unwrap();
    assert!(e1 < e0, "{e1} !< {e0}");
}
