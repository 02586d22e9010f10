//! K-fold cross-validation over a (λ, R) grid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::mse;
use super::Method;
use crate::error::{Result, StarError};
use crate::estimator::{fit_from, initialize, lambda_max_at, FitConfig, FitResult, StarModel};
use crate::features::{EntryScaler, RawDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Smallest mean validation MSE.
    #[default]
    Min,
    /// Largest λ (then smallest R) within one standard error of the minimum.
    OneSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub ranks: Vec<usize>,
    /// Absolute λ values used for every rank. Overrides the relative grid.
    pub lambdas: Option<Vec<f64>>,
    /// λ as fractions of each rank's `λ_max`; when `None`, `n_lambda`
    /// log-spaced values over `[lambda_min_ratio, 1]`.
    pub lambda_fractions: Option<Vec<f64>>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub selection: Selection,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            ranks: vec![1, 2, 3],
            lambdas: None,
            lambda_fractions: None,
            n_lambda: 10,
            lambda_min_ratio: 1e-3,
            selection: Selection::Min,
        }
    }
}

impl CvConfig {
    /// Relative grid, largest first.
    pub fn fractions(&self) -> Vec<f64> {
        let mut f = match &self.lambda_fractions {
            Some(f) => f.clone(),
            None => {
                let k = self.n_lambda.max(1);
                if k == 1 {
                    vec![1.0]
                } else {
                    let lo = self.lambda_min_ratio.ln();
                    (0..k)
                        .map(|i| (lo * i as f64 / (k - 1) as f64).exp())
                        .collect()
                }
            }
        };
        f.sort_by(|a, b| b.total_cmp(a));
        f
    }

    fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: &str| Err(StarError::InvalidArgument(m.to_string()));
        if self.folds < 2 {
            return bad("need at least 2 folds");
        }
        if n < self.folds {
            return bad("need n >= folds");
        }
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return bad("rank grid must be non-empty and positive");
        }
        match &self.lambdas {
            Some(l) if l.is_empty() => return bad("lambda grid is empty"),
            Some(l) if l.iter().any(|v| !(*v >= 0.0)) => return bad("lambdas must be >= 0"),
            _ => {}
        }
        if let Some(f) = &self.lambda_fractions {
            if f.is_empty() {
                return bad("lambda fraction grid is empty");
            }
            if f.iter().any(|v| !(*v >= 0.0)) {
                return bad("lambda fractions must be >= 0");
            }
        }
        if self.lambda_fractions.is_none() && (self.n_lambda == 0 || !(self.lambda_min_ratio > 0.0)) {
            return bad("need n_lambda >= 1 and lambda_min_ratio > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub rank: usize,
    pub lambda: f64,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
    /// Standard error of `mean_mse` across folds.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub seed: u64,
    /// `λ_max` on the full data, per rank in `ranks` order (relative grids).
    pub lambda_max: Vec<(usize, f64)>,
    pub points: Vec<CvPoint>,
    pub selected: usize,
    pub selected_lambda: f64,
    pub selected_rank: usize,
}

impl CvReport {
    /// One row per grid point: `rank,lambda,mean_mse,se,selected`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| StarError::Io(e.to_string());
        w.write_record(["rank", "lambda", "mean_mse", "se", "selected"])
            .map_err(io)?;
        for (i, p) in self.points.iter().enumerate() {
            w.write_record([
                p.rank.to_string(),
                p.lambda.to_string(),
                p.mean_mse.to_string(),
                p.se.to_string(),
                u8::from(i == self.selected).to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seeded random fold labels: a shuffled order of the samples is dealt out
/// round-robin, so fold sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut label = vec![0; n];
    for (i, &s) in order.iter().enumerate() {
        label[s] = i % folds;
    }
    label
}

/// `(training, validation)` sample indices of one fold.
pub fn fold_indices(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != fold)
}

/// Scalers fitted on each fold's training split, exactly as used by
/// [`cross_validate`].
pub fn fold_scalers(
    raw: &RawDataset,
    method: Method,
    base: &FitConfig,
    assignment: &[usize],
    folds: usize,
) -> Result<Vec<EntryScaler>> {
    (0..folds)
        .map(|f| {
            let (train, _) = fold_indices(assignment, f);
            Ok(method.prepare(&raw.subset(&train), &base.basis)?.1)
        })
        .collect()
}

fn lambda_grid(
    raw: &RawDataset,
    method: Method,
    base: &FitConfig,
    config: &CvConfig,
) -> Result<(Vec<(usize, f64)>, Vec<(usize, Vec<f64>)>)> {
    if let Some(l) = &config.lambdas {
        let mut l = l.clone();
        l.sort_by(|a, b| b.total_cmp(a));
        return Ok((
            Vec::new(),
            config.ranks.iter().map(|&r| (r, l.clone())).collect(),
        ));
    }
    let (_, _, data) = method.prepare(raw, &base.basis)?;
    let fractions = config.fractions();
    let maxes: Vec<(usize, f64)> = config
        .ranks
        .par_iter()
        .map(|&r| {
            let cfg = FitConfig { rank: r, ..base.clone() };
            let init = initialize(&data, &cfg)?;
            Ok((r, lambda_max_at(&data, &init)?))
        })
        .collect::<Result<_>>()?;
    let grid = maxes
        .iter()
        .map(|&(r, lm)| (r, fractions.iter().map(|f| f * lm).collect()))
        .collect();
    Ok((maxes, grid))
}

/// Validation MSE for every λ of one (fold, rank) cell.
fn fold_cell(
    raw: &RawDataset,
    method: Method,
    base: &FitConfig,
    assignment: &[usize],
    fold: usize,
    rank: usize,
    lambdas: &[f64],
) -> Result<Vec<f64>> {
    let (train_idx, valid_idx) = fold_indices(assignment, fold);
    let train = raw.subset(&train_idx);
    let valid = raw.subset(&valid_idx);
    let (basis, scaler, data) = method.prepare(&train, &base.basis)?;
    let cfg = FitConfig { rank, ..base.clone() };
    let init = initialize(&data, &cfg)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let c = FitConfig { lambda, ..cfg.clone() };
            let res = fit_from(&data, &c, init.clone())?;
            let model = StarModel::from_fit(basis.clone(), scaler.clone(), &res)?;
            mse(&model.predict_dataset(&valid)?, valid.y())
        })
        .collect()
}

/// Cross-validates `method` over the (λ, R) grid. Scalers, bases and
/// initializations are fitted on each training split only.
pub fn cross_validate(
    raw: &RawDataset,
    method: Method,
    base: &FitConfig,
    config: &CvConfig,
) -> Result<CvReport> {
    config.validate(raw.n())?;
    let (lambda_max, grid) = lambda_grid(raw, method, base, config)?;
    let assignment = fold_assignment(raw.n(), config.folds, config.seed);

    let cells: Vec<(usize, usize)> = (0..config.folds)
        .flat_map(|f| (0..grid.len()).map(move |g| (f, g)))
        .collect();
    let results: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(f, g)| fold_cell(raw, method, base, &assignment, f, grid[g].0, &grid[g].1))
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    for (g, (rank, lambdas)) in grid.iter().enumerate() {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let fold_mse: Vec<f64> = (0..config.folds)
                .map(|f| results[f * grid.len() + g][li])
                .collect();
            let k = fold_mse.len() as f64;
            let mean_mse = fold_mse.iter().sum::<f64>() / k;
            let var = fold_mse.iter().map(|v| (v - mean_mse).powi(2)).sum::<f64>() / (k - 1.0);
            points.push(CvPoint {
                rank: *rank,
                lambda,
                fold_mse,
                mean_mse,
                se: (var / k).sqrt(),
            });
        }
    }
    let selected = select(&points, config.selection);
    Ok(CvReport {
        folds: config.folds,
        seed: config.seed,
        lambda_max,
        selected_lambda: points[selected].lambda,
        selected_rank: points[selected].rank,
        points,
        selected,
    })
}

/// `a` preferred over `b` on equal scores: larger λ, then smaller R.
fn simpler(a: &CvPoint, b: &CvPoint) -> bool {
    a.lambda > b.lambda || (a.lambda == b.lambda && a.rank < b.rank)
}

fn select(points: &[CvPoint], rule: Selection) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        let b = &points[best];
        if p.mean_mse < b.mean_mse || (p.mean_mse == b.mean_mse && simpler(p, b)) {
            best = i;
        }
    }
    if rule == Selection::OneSe {
        let bound = points[best].mean_mse + points[best].se;
        for (i, p) in points.iter().enumerate() {
            if p.mean_mse <= bound && simpler(p, &points[best]) {
                best = i;
            }
        }
    }
    best
}

/// Refits the selected (λ, R) on all of `raw`.
pub fn fit_selected(
    raw: &RawDataset,
    method: Method,
    base: &FitConfig,
    report: &CvReport,
) -> Result<(StarModel, FitResult)> {
    let (basis, scaler, data) = method.prepare(raw, &base.basis)?;
    let cfg = FitConfig {
        rank: report.selected_rank,
        lambda: report.selected_lambda,
        ..base.clone()
    };
    let init = initialize(&data, &cfg)?;
    let res = fit_from(&data, &cfg, init)?;
    let model = StarModel::from_fit(basis, scaler, &res)?;
    Ok((model, res))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(rank: usize, lambda: f64, mean: f64, se: f64) -> CvPoint {
        CvPoint {
            rank,
            lambda,
            fold_mse: vec![],
            mean_mse: mean,
            se,
        }
    }

    #[test]
    fn ties_prefer_larger_lambda_then_smaller_rank() {
        let pts = vec![
            point(2, 0.1, 1.0, 0.0),
            point(1, 0.1, 1.0, 0.0),
            point(1, 0.05, 1.0, 0.0),
            point(3, 0.5, 2.0, 0.0),
        ];
        assert_eq!(select(&pts, Selection::Min), 1);
        let pts = vec![point(1, 0.1, 1.0, 0.0), point(1, 0.3, 1.0, 0.0)];
        assert_eq!(select(&pts, Selection::Min), 1);
    }

    #[test]
    fn one_se_rule_moves_to_simpler_models() {
        let pts = vec![
            point(2, 0.3, 1.04, 0.02),
            point(2, 0.1, 1.0, 0.1),
            point(2, 0.03, 0.95, 0.1),
        ];
        assert_eq!(select(&pts, Selection::Min), 2);
        assert_eq!(select(&pts, Selection::OneSe), 0);
    }

    #[test]
    fn fold_labels_are_balanced_and_seeded() {
        let a = fold_assignment(23, 5, 3);
        for f in 0..5 {
            let c = a.iter().filter(|&&v| v == f).count();
            assert!(c == 4 || c == 5);
        }
        assert_eq!(a, fold_assignment(23, 5, 3));
        assert_ne!(a, fold_assignment(23, 5, 4));
        // not contiguous blocks
        assert!(a.windows(2).any(|w| w[0] > w[1]));
    }

    #[test]
    fn default_fractions_span_the_path() {
        let f = CvConfig::default().fractions();
        assert_eq!(f.len(), 10);
        assert!((f[0] - 1.0).abs() < 1e-15);
        assert!((f[9] - 1e-3).abs() < 1e-15);
        assert!(f.windows(2).all(|w| w[0] > w[1]));
    }
}
