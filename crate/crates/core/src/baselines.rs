//! Tensor linear regression as the one-basis, identity-feature special case.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimator::{fit, FitConfig, FitResult, StarModel};
use crate::features::{prepare_identity, RawDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TlrConfig {
    /// Solver and stopping knobs; `fit.basis` is ignored.
    pub fit: FitConfig,
    /// Candidate penalty levels for tuning; empty means the default grid.
    pub lambda_grid: Vec<f64>,
}

impl Default for TlrConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            lambda_grid: Vec::new(),
        }
    }
}

/// Fits rank-`R` linear tensor regression with group-lasso sparsity.
pub fn fit_tlr(raw: &RawDataset, config: &TlrConfig) -> Result<FitResult> {
    let (_, _, data) = prepare_identity(raw)?;
    fit(&data, &config.fit)
}

/// [`fit_tlr`] plus the featurization needed for prediction.
pub fn fit_tlr_model(raw: &RawDataset, config: &TlrConfig) -> Result<(StarModel, FitResult)> {
    let (basis, scaler, data) = prepare_identity(raw)?;
    let result = fit(&data, &config.fit)?;
    let model = StarModel::from_fit(basis, scaler, &result)?;
    Ok((model, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rank_one(n: usize, seed: u64) -> RawDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = [0.9, 0.0, -0.7, 0.4];
        let b = [1.1, -0.6, 0.3];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let mut s = 0.0;
            for aj in a {
                for bl in b {
                    let v: f64 = rng.random_range(-1.0..2.0);
                    s += aj * bl * v;
                    x.push(v);
                }
            }
            y.push(s);
        }
        RawDataset::new(vec![4, 3], x, y).unwrap()
    }

    #[test]
    fn recovers_noiseless_rank_one_linear_model() {
        let raw = rank_one(200, 1);
        let config = TlrConfig {
            fit: FitConfig {
                rank: 1,
                lambda: 1e-9,
                tol: 1e-9,
                max_sweeps: 2000,
                ..FitConfig::default()
            },
            ..TlrConfig::default()
        };
        let (model, _) = fit_tlr_model(&raw, &config).unwrap();
        let preds = model.predict_dataset(&raw).unwrap();
        let mse = preds
            .iter()
            .zip(raw.y())
            .map(|(p, y)| (p - y).powi(2))
            .sum::<f64>()
            / raw.n() as f64;
        assert!(mse <= 1e-4, "mse {mse}");
    }

    #[test]
    fn large_lambda_predicts_the_mean() {
        let raw = rank_one(50, 2);
        let config = TlrConfig {
            fit: FitConfig {
                lambda: 1e6,
                ..FitConfig::default()
            },
            ..TlrConfig::default()
        };
        let (model, res) = fit_tlr_model(&raw, &config).unwrap();
        assert!(res.bundle.is_zero());
        let mean = raw.y().iter().sum::<f64>() / raw.n() as f64;
        for p in model.predict_dataset(&raw).unwrap() {
            assert_eq!(p, mean);
        }
    }

    #[test]
    fn same_code_path_as_identity_fit() {
        let raw = rank_one(60, 3);
        let config = TlrConfig {
            fit: FitConfig {
                lambda: 0.01,
                seed: 5,
                ..FitConfig::default()
            },
            ..TlrConfig::default()
        };
        let a = fit_tlr(&raw, &config).unwrap();
        let (_, _, data) = prepare_identity(&raw).unwrap();
        let b = fit(&data, &config.fit).unwrap();
        assert_eq!(a, b);
    }
}
