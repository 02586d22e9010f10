use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use star_core::baselines::{fit_tlr_model, TlrConfig};
use star_core::estimator::{fit_raw, FitConfig, StarModel};
use star_core::eval::cv::{fold_indices, fold_scalers};
use star_core::eval::io::{model_from_str, model_to_string, read_dataset, write_dataset};
use star_core::eval::sensitivity::sensitivity_two_call;
use star_core::eval::{cross_validate, fold_assignment, sensitivity, CvConfig, Method};
use star_core::features::{prepare, RawDataset};
use star_core::sim::{simulate, Design, SimSpec};
use star_core::tensor::CpFactorBundle;

fn small_general(n: usize, seed: u64) -> RawDataset {
    let spec = SimSpec {
        p2: Some(4),
        ..SimSpec::new(Design::General, n, 12, 0.1, seed)
    };
    simulate(&spec).unwrap().data
}

fn uniform(shape: Vec<usize>, n: usize, lo: f64, hi: f64, seed: u64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: usize = shape.iter().product();
    let x = (0..n * p).map(|_| rng.random_range(lo..hi)).collect();
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    RawDataset::new(shape, x, y).unwrap()
}

fn quick_fit() -> FitConfig {
    FitConfig {
        rank: 1,
        max_sweeps: 30,
        inner_tol: 1e-6,
        rebalance: true,
        obj_tol: Some(1e-5),
        ..FitConfig::default()
    }
}

#[test]
fn cv_single_grid_point_is_selected() {
    let raw = small_general(60, 1);
    let cv = CvConfig {
        folds: 3,
        ranks: vec![2],
        lambdas: Some(vec![0.05]),
        ..CvConfig::default()
    };
    let rep = cross_validate(&raw, Method::Star, &quick_fit(), &cv).unwrap();
    assert_eq!(rep.points.len(), 1);
    assert_eq!((rep.selected_rank, rep.selected_lambda), (2, 0.05));
}

#[test]
fn cv_empty_grids_are_errors() {
    let raw = small_general(30, 2);
    for cv in [
        CvConfig {
            lambdas: Some(vec![]),
            ..CvConfig::default()
        },
        CvConfig {
            ranks: vec![],
            ..CvConfig::default()
        },
        CvConfig {
            lambda_fractions: Some(vec![]),
            ..CvConfig::default()
        },
    ] {
        assert!(cross_validate(&raw, Method::Star, &quick_fit(), &cv).is_err());
    }
}

#[test]
fn cv_is_deterministic() {
    let raw = small_general(60, 3);
    let cv = CvConfig {
        folds: 3,
        seed: 9,
        ranks: vec![1, 2],
        lambda_fractions: Some(vec![0.3, 0.05]),
        ..CvConfig::default()
    };
    let a = cross_validate(&raw, Method::Star, &quick_fit(), &cv).unwrap();
    let b = cross_validate(&raw, Method::Star, &quick_fit(), &cv).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.points.len(), 4);
    assert_eq!(a.lambda_max.len(), 2);
}

/// With λ past the zero threshold every fold predicts its training mean, so
/// the validation MSE has a closed form. A marker sample with a huge response
/// shows up only in the folds that train on it.
#[test]
fn zero_model_cv_matches_training_mean_oracle() {
    let mut raw = small_general(40, 4);
    let mut y = raw.y().to_vec();
    y[7] = 1e3;
    raw = RawDataset::new(raw.shape().to_vec(), raw.x().to_vec(), y).unwrap();
    let cv = CvConfig {
        folds: 4,
        seed: 5,
        ranks: vec![1],
        lambdas: Some(vec![1e9]),
        ..CvConfig::default()
    };
    let rep = cross_validate(&raw, Method::Star, &quick_fit(), &cv).unwrap();
    let assignment = fold_assignment(raw.n(), cv.folds, cv.seed);
    for f in 0..cv.folds {
        let (train, valid) = fold_indices(&assignment, f);
        let mean = train.iter().map(|&i| raw.y()[i]).sum::<f64>() / train.len() as f64;
        let oracle = valid.iter().map(|&i| (raw.y()[i] - mean).powi(2)).sum::<f64>() / valid.len() as f64;
        let got = rep.points[0].fold_mse[f];
        assert!((got - oracle).abs() <= 1e-9 * oracle.max(1.0), "fold {f}: {got} vs {oracle}");
    }
}

#[test]
fn fold_scalers_never_see_their_validation_marker() {
    let raw = uniform(vec![3, 2], 25, 0.0, 1.0, 6);
    let marker = 11;
    let mut x = raw.x().to_vec();
    for v in &mut x[marker * 6..(marker + 1) * 6] {
        *v = 1e3;
    }
    let raw = RawDataset::new(vec![3, 2], x, raw.y().to_vec()).unwrap();
    let assignment = fold_assignment(raw.n(), 5, 8);
    let scalers = fold_scalers(&raw, Method::Star, &FitConfig::default(), &assignment, 5).unwrap();
    for (f, s) in scalers.iter().enumerate() {
        let holds_marker = assignment[marker] == f;
        for &m in s.max() {
            assert_eq!(m == 1e3, !holds_marker, "fold {f}");
        }
    }
}

fn zero_model(shape: Vec<usize>, raw: &RawDataset) -> StarModel {
    let (basis, scaler, _) = prepare(raw, &Default::default()).unwrap();
    let d = basis.count();
    StarModel::new(basis, scaler, 0.7, CpFactorBundle::zeros(shape, 2, d), 0.0).unwrap()
}

#[test]
fn sensitivity_of_zero_model_is_zero() {
    let raw = uniform(vec![4, 3], 20, 0.0, 1.0, 10);
    let model = zero_model(vec![4, 3], &raw);
    let rep = sensitivity(&model, &raw, 0.1, None).unwrap();
    assert_eq!(rep.values.shape(), &[4, 3]);
    assert!(rep.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn sensitivity_errors() {
    let raw = uniform(vec![4, 3], 20, 0.0, 1.0, 10);
    let model = zero_model(vec![4, 3], &raw);
    assert!(sensitivity(&model, &raw, 0.0, None).is_err());
    assert!(sensitivity(&model, &raw, 0.1, Some(&[2])).is_err());
    let other = uniform(vec![3, 4], 5, 0.0, 1.0, 11);
    assert!(sensitivity(&model, &other, 0.1, None).is_err());
}

#[test]
fn tlr_sensitivity_does_not_depend_on_base_point() {
    let train = small_general(120, 12);
    let cfg = TlrConfig {
        fit: FitConfig {
            lambda: 1e-3,
            ..quick_fit()
        },
        ..TlrConfig::default()
    };
    let (model, _) = fit_tlr_model(&train, &cfg).unwrap();
    assert!(!model.bundle.is_zero());
    let shape = train.shape().to_vec();
    let a = uniform(shape.clone(), 15, 0.2, 0.5, 13);
    let b = uniform(shape, 9, 0.4, 0.7, 14);
    let sa = sensitivity(&model, &a, 0.2, None).unwrap();
    let sb = sensitivity(&model, &b, 0.2, None).unwrap();
    for (u, v) in sa.values.data().iter().zip(sb.values.data()) {
        assert!((u - v).abs() <= 1e-12, "{u} vs {v}");
    }
}

#[test]
fn sensitivity_matches_two_call_differences() {
    let train = small_general(100, 15);
    let (model, _) = fit_raw(
        &train,
        &FitConfig {
            lambda: 0.01,
            ..quick_fit()
        },
    )
    .unwrap();
    assert!(!model.bundle.is_zero());
    let test = small_general(7, 16);
    let full = sensitivity(&model, &test, 0.25, None).unwrap();
    for cell in [[0, 0], [3, 1], [11, 3], [5, 2]] {
        let want = sensitivity_two_call(&model, &test, 0.25, &[0, 1], &cell).unwrap();
        let got = full.values.get(&cell).unwrap();
        assert!((got - want).abs() <= 1e-12, "{cell:?}: {got} vs {want}");
    }
    let way1 = sensitivity(&model, &test, -0.1, Some(&[0])).unwrap();
    assert_eq!(way1.values.shape(), &[12]);
    for j in [0, 4, 9] {
        let want = sensitivity_two_call(&model, &test, -0.1, &[0], &[j]).unwrap();
        assert!((way1.values.data()[j] - want).abs() <= 1e-12);
    }
    let one = test.subset(&[3]);
    let single = sensitivity(&model, &one, 0.3, None).unwrap();
    let mut bumped = one.sample(0).to_vec();
    bumped[5] += 0.3;
    let hand = model.predict_raw(&bumped).unwrap() - model.predict_raw(one.sample(0)).unwrap();
    assert!((single.values.data()[5] - hand).abs() <= 1e-12);
}

#[test]
fn sensitivity_csv_lists_every_cell() {
    let raw = uniform(vec![2, 3], 4, 0.0, 1.0, 17);
    let model = zero_model(vec![2, 3], &raw);
    let rep = sensitivity(&model, &raw, 0.1, None).unwrap();
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "way1,way2,value");
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[6], "1,2,0");
}

#[test]
fn model_round_trip_predicts_identically() {
    let train = small_general(80, 18);
    let (model, _) = fit_raw(
        &train,
        &FitConfig {
            lambda: 0.02,
            ..quick_fit()
        },
    )
    .unwrap();
    let back = model_from_str(&model_to_string(&model).unwrap()).unwrap();
    assert_eq!(back, model);
    let test = small_general(20, 19);
    assert_eq!(
        back.predict_dataset(&test).unwrap(),
        model.predict_dataset(&test).unwrap()
    );
    assert!(model_from_str("format = \"other\"").is_err());
}

#[test]
fn simulated_dataset_round_trips_through_csv() {
    let raw = small_general(30, 20);
    let mut buf = Vec::new();
    write_dataset(&raw, &mut buf).unwrap();
    assert_eq!(read_dataset(buf.as_slice()).unwrap(), raw);
}

mod props {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest, ProptestConfig};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dataset_csv_round_trip_is_lossless(
            dims in proptest::collection::vec(1usize..4, 1..4),
            n in 0usize..5,
            seed in any::<u64>(),
            scale in -300i32..300,
        ) {
            let p: usize = dims.iter().product();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = 10f64.powi(scale);
            let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0) * f).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let raw = RawDataset::new(dims, x, y).unwrap();
            let mut buf = Vec::new();
            write_dataset(&raw, &mut buf).unwrap();
            prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), raw);
        }
    }
}
