//! Penalized alternating minimization over the CP factor blocks.
//!
//! Each sweep visits the ways `k = 1..m` in turn, builds the design `F^k`
//! from the other blocks and replaces `b_k` with the minimizer of
//! `(1/n)‖ỹ − F^k b_k‖² + λ_k Σ_j ‖b_kj‖₂`. Sweeps stop once
//! `max_k ‖b_k^{new} − b_k^{old}‖₂ ≤ tol`.

pub mod design;
pub mod diagnostics;
pub mod solver;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};
use crate::features::{
    featurize_sample, prepare, BasisConfig, EntryScaler, FeatureBasis, FeaturizedDataset, RawDataset,
};
use crate::tensor::{CpFactorBundle, DenseTensor};

pub use design::{build_design, grad_block, DesignMatrix};
pub use diagnostics::{align, estimation_error};
pub use solver::{
    group_prox, solve_block, BlockPenalty, BlockProblem, BlockSolution, GroupLasso, Ridge,
    SolverOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScheme {
    /// Each block sees the blocks already updated in the current sweep.
    #[default]
    GaussSeidel,
    /// Every block in a sweep is solved against the previous sweep's iterate.
    Jacobi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub basis: BasisConfig,
    pub rank: usize,
    /// Shared group-lasso level.
    pub lambda: f64,
    /// Optional per-way levels overriding `lambda`.
    pub way_lambdas: Option<Vec<f64>>,
    pub max_sweeps: usize,
    /// Outer stopping threshold on `max_k ‖Δb_k‖₂`.
    pub tol: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Ridge level for the initial sweeps, relative to the mean diagonal of
    /// each block's Gram matrix.
    pub ridge_strength: f64,
    pub ridge_sweeps: usize,
    /// Factor applied to the fitted scale of the ridge start, spread evenly
    /// over the ways, before `λ_max` is read off.
    pub init_scale: f64,
    pub seed: u64,
    /// Rescale ways after every sweep so each carries the same penalty mass
    /// (see [`rebalance`]); kept only when the objective does not increase.
    pub rebalance: bool,
    /// Extra stopping rule: stop once a sweep lowers the objective by less
    /// than `obj_tol` relative to its value. `None` keeps only the factor
    /// change rule.
    pub obj_tol: Option<f64>,
    pub update: UpdateScheme,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            basis: BasisConfig::default(),
            rank: 2,
            lambda: 0.0,
            way_lambdas: None,
            max_sweeps: 200,
            tol: 1e-5,
            inner_tol: 1e-8,
            inner_max_iter: 10_000,
            ridge_strength: 0.3,
            ridge_sweeps: 5,
            init_scale: 0.1,
            seed: 0,
            rebalance: false,
            obj_tol: None,
            update: UpdateScheme::GaussSeidel,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, ways: usize) -> Result<()> {
        let bad = |msg: &str| Err(StarError::InvalidArgument(msg.to_string()));
        if self.rank == 0 {
            return bad("rank must be >= 1");
        }
        if !(self.tol > 0.0) || !(self.inner_tol > 0.0) {
            return bad("tolerances must be > 0");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and >= 0");
        }
        if matches!(self.obj_tol, Some(t) if !(t > 0.0)) {
            return bad("obj_tol must be > 0");
        }
        if !(self.ridge_strength >= 0.0) {
            return bad("ridge strength must be >= 0");
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return bad("init_scale must be finite and > 0");
        }
        if self.inner_max_iter == 0 {
            return bad("inner_max_iter must be >= 1");
        }
        if let Some(l) = &self.way_lambdas {
            if l.len() != ways {
                return bad("way_lambdas must have one entry per way");
            }
            if l.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return bad("way_lambdas must be finite and >= 0");
            }
        }
        Ok(())
    }

    pub fn lambdas(&self, ways: usize) -> Vec<f64> {
        self.way_lambdas
            .clone()
            .unwrap_or_else(|| vec![self.lambda; ways])
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.inner_tol,
            max_iter: self.inner_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub bundle: CpFactorBundle,
    pub intercept: f64,
    /// Entries along each way with a nonzero group.
    pub active_sets: Vec<Vec<usize>>,
    /// Objective at the starting point followed by one value per sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Number of block solves that hit the inner iteration cap.
    pub inner_failures: usize,
    /// Set when the response is constant and the zero model was returned.
    pub degenerate: bool,
    pub lambda: f64,
    pub rank: usize,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Model predictions without the intercept: `Σ_h ⟨B_h, F_h(X_i)⟩`.
pub fn predictions(data: &FeaturizedDataset, bundle: &CpFactorBundle) -> Result<Vec<f64>> {
    if data.shape() != bundle.shape() || data.basis_count() != bundle.basis_count() {
        return Err(StarError::ShapeMismatch {
            expected: data.shape().to_vec(),
            got: bundle.shape().to_vec(),
        });
    }
    let coef = interleaved_coefficients(bundle);
    Ok((0..data.n())
        .map(|i| {
            data.sample_features(i)
                .iter()
                .zip(&coef)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect())
}

/// `B_h[pos]` laid out as `[pos * d_n + h]`, matching feature storage.
fn interleaved_coefficients(bundle: &CpFactorBundle) -> Vec<f64> {
    let d = bundle.basis_count();
    let composed = bundle.compose_all();
    let p = composed[0].len();
    let mut out = vec![0.0; p * d];
    for (h, t) in composed.iter().enumerate() {
        for (pos, &v) in t.data().iter().enumerate() {
            out[pos * d + h] = v;
        }
    }
    out
}

fn penalty_value(bundle: &CpFactorBundle, lambdas: &[f64]) -> f64 {
    lambdas
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            if l == 0.0 {
                0.0
            } else {
                l * (0..bundle.shape()[k]).map(|j| bundle.group_norm(k, j)).sum::<f64>()
            }
        })
        .sum()
}

/// `(1/n) Σ_i (y_i − intercept − Σ_h⟨B_h, F_h(X_i)⟩)² + λ Σ_k Σ_j ‖b_kj‖₂`.
pub fn objective(data: &FeaturizedDataset, bundle: &CpFactorBundle, lambda: f64) -> Result<f64> {
    objective_with(data, bundle, &vec![lambda; bundle.ways()])
}

pub fn objective_with(
    data: &FeaturizedDataset,
    bundle: &CpFactorBundle,
    lambdas: &[f64],
) -> Result<f64> {
    let pred = predictions(data, bundle)?;
    let n = data.n() as f64;
    let risk = pred
        .iter()
        .zip(data.y())
        .map(|(p, y)| {
            let r = y - data.intercept() - p;
            r * r
        })
        .sum::<f64>()
        / n;
    Ok(risk + penalty_value(bundle, lambdas))
}

fn check_data(data: &FeaturizedDataset, config: &FitConfig) -> Result<()> {
    if data.n() < 2 {
        return Err(StarError::InvalidArgument("fit needs n >= 2".into()));
    }
    config.validate(data.ways())
}

fn response_is_constant(data: &FeaturizedDataset) -> bool {
    let y0 = data.y()[0];
    data.y().iter().all(|&v| v == y0)
}

fn random_start(data: &FeaturizedDataset, config: &FitConfig) -> CpFactorBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shape = data.shape().to_vec();
    let mut bundle = CpFactorBundle::zeros(shape.clone(), config.rank, data.basis_count());
    let gs = bundle.group_size();
    for (k, _) in shape.iter().enumerate() {
        let f = bundle.factor_mut(k);
        for g in f.chunks_mut(gs) {
            for v in g.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let nrm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm > 0.0 {
                g.iter_mut().for_each(|v| *v /= nrm);
            }
        }
    }
    bundle
}

/// Per-way `λ_max^k` at `bundle`: the group-lasso level above which the
/// block solve for way `k` returns zero.
pub fn block_lambda_max(data: &FeaturizedDataset, bundle: &CpFactorBundle) -> Result<Vec<f64>> {
    let yc = data.centered_y();
    (0..bundle.ways())
        .map(|k| Ok(BlockProblem::new(&build_design(data, bundle, k)?, &yc).lambda_max()))
        .collect()
}

/// Rescales whole ways (product of scales = 1, prediction unchanged) so that
/// every way has the same `λ_max^k`.
fn equalize_lambda_max(data: &FeaturizedDataset, bundle: &mut CpFactorBundle) -> Result<()> {
    let lm = block_lambda_max(data, bundle)?;
    if lm.iter().any(|&v| !(v > 0.0)) {
        return Ok(());
    }
    let m = lm.len() as f64;
    let log_mean = lm.iter().map(|v| v.ln()).sum::<f64>() / m;
    for (k, &v) in lm.iter().enumerate() {
        let c = (v.ln() - log_mean).exp();
        bundle.factor_mut(k).iter_mut().for_each(|x| *x *= c);
    }
    Ok(())
}

/// Starting point of the alternating iterations: seeded standard-normal
/// factors with unit group norms, `ridge_sweeps` ridge-penalized sweeps, and a
/// prediction-preserving rescaling that equalizes `λ_max` across ways.
pub fn initialize(data: &FeaturizedDataset, config: &FitConfig) -> Result<CpFactorBundle> {
    check_data(data, config)?;
    let mut bundle = random_start(data, config);
    let yc = data.centered_y();
    let opts = config.solver_options();
    for _ in 0..config.ridge_sweeps {
        for k in 0..bundle.ways() {
            let problem = BlockProblem::new(&build_design(data, &bundle, k)?, &yc);
            let alpha = config.ridge_strength * problem.mean_diagonal();
            let sol = problem.solve(&Ridge { alpha }, bundle.factor(k), opts);
            bundle.set_factor(k, sol.coef)?;
        }
    }
    let c = config.init_scale.powf(1.0 / bundle.ways() as f64);
    for k in 0..bundle.ways() {
        bundle.factor_mut(k).iter_mut().for_each(|x| *x *= c);
    }
    equalize_lambda_max(data, &mut bundle)?;
    Ok(bundle)
}

/// Top of the regularization path for `config.rank`: the common `λ_max^k`
/// at the initialization. Any `λ ≥` this value yields the zero model.
pub fn lambda_max(data: &FeaturizedDataset, config: &FitConfig) -> Result<f64> {
    let init = initialize(data, config)?;
    lambda_max_at(data, &init)
}

pub fn lambda_max_at(data: &FeaturizedDataset, init: &CpFactorBundle) -> Result<f64> {
    Ok(block_lambda_max(data, init)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// Rescales whole ways (product of scales = 1, so predictions are unchanged)
/// until every way carries the same penalty `λ_k Σ_j ‖b_kj‖₂`. This is the
/// exact minimizer of the objective along the per-way scaling directions;
/// the penalty can only go down. Bundles with an all-zero way (or zero
/// penalty weight) are returned unchanged.
pub fn rebalance(bundle: &CpFactorBundle, lambdas: &[f64]) -> CpFactorBundle {
    let m = bundle.ways();
    let mass: Vec<f64> = (0..m)
        .map(|k| lambdas[k] * (0..bundle.shape()[k]).map(|j| bundle.group_norm(k, j)).sum::<f64>())
        .collect();
    if mass.iter().any(|&v| !(v > 0.0)) {
        return bundle.clone();
    }
    let log_mean = mass.iter().map(|v| v.ln()).sum::<f64>() / m as f64;
    let mut out = bundle.clone();
    for (k, &v) in mass.iter().enumerate() {
        let c = (log_mean - v.ln()).exp();
        out.factor_mut(k).iter_mut().for_each(|x| *x *= c);
    }
    out
}

pub fn fit(data: &FeaturizedDataset, config: &FitConfig) -> Result<FitResult> {
    check_data(data, config)?;
    if response_is_constant(data) {
        return Ok(degenerate_result(data, config));
    }
    let init = initialize(data, config)?;
    fit_from(data, config, init)
}

fn degenerate_result(data: &FeaturizedDataset, config: &FitConfig) -> FitResult {
    let bundle = CpFactorBundle::zeros(data.shape().to_vec(), config.rank, data.basis_count());
    FitResult {
        active_sets: vec![Vec::new(); bundle.ways()],
        bundle,
        intercept: data.intercept(),
        objective_trace: vec![0.0],
        sweeps: 0,
        converged: true,
        inner_failures: 0,
        degenerate: true,
        lambda: config.lambda,
        rank: config.rank,
    }
}

/// Runs the alternating sweeps from a caller-supplied starting bundle.
pub fn fit_from(
    data: &FeaturizedDataset,
    config: &FitConfig,
    init: CpFactorBundle,
) -> Result<FitResult> {
    check_data(data, config)?;
    if init.shape() != data.shape()
        || init.basis_count() != data.basis_count()
        || init.rank() != config.rank
    {
        return Err(StarError::ShapeMismatch {
            expected: [data.shape().to_vec(), vec![config.rank, data.basis_count()]].concat(),
            got: [init.shape().to_vec(), vec![init.rank(), init.basis_count()]].concat(),
        });
    }
    if response_is_constant(data) {
        return Ok(degenerate_result(data, config));
    }
    let m = data.ways();
    let lambdas = config.lambdas(m);
    let yc = data.centered_y();
    let opts = config.solver_options();

    let mut bundle = init;
    let mut trace = vec![objective_with(data, &bundle, &lambdas)?];
    let mut converged = false;
    let mut sweeps = 0;
    let mut inner_failures = 0;

    while sweeps < config.max_sweeps {
        sweeps += 1;
        let previous = bundle.clone();
        for k in 0..m {
            let source = match config.update {
                UpdateScheme::GaussSeidel => &bundle,
                UpdateScheme::Jacobi => &previous,
            };
            let problem = BlockProblem::new(&build_design(data, source, k)?, &yc);
            let sol = problem.solve(
                &GroupLasso { lambda: lambdas[k] },
                previous.factor(k),
                opts,
            );
            if !sol.converged {
                inner_failures += 1;
            }
            bundle.set_factor(k, sol.coef)?;
        }
        let mut value = objective_with(data, &bundle, &lambdas)?;
        if config.rebalance {
            let candidate = rebalance(&bundle, &lambdas);
            let cv = objective_with(data, &candidate, &lambdas)?;
            if cv <= value {
                bundle = candidate;
                value = cv;
            }
        }
        let before = *trace.last().unwrap_or(&value);
        trace.push(value);

        let change = (0..m)
            .map(|k| {
                bundle
                    .factor(k)
                    .iter()
                    .zip(previous.factor(k))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if change <= config.tol {
            converged = true;
            break;
        }
        if let Some(ot) = config.obj_tol {
            if before - value <= ot * value.abs() {
                converged = true;
                break;
            }
        }
        if bundle.is_zero() {
            // zero is a fixed point of every later sweep
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        active_sets: (0..m).map(|k| bundle.active_set(k)).collect(),
        bundle,
        intercept: data.intercept(),
        objective_trace: trace,
        sweeps,
        converged,
        inner_failures,
        degenerate: false,
        lambda: config.lambda,
        rank: config.rank,
    })
}

/// A fitted model together with the featurization it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct StarModel {
    pub basis: FeatureBasis,
    pub scaler: EntryScaler,
    pub intercept: f64,
    pub bundle: CpFactorBundle,
    pub lambda: f64,
    coef: Vec<f64>,
}

impl StarModel {
    pub fn new(
        basis: FeatureBasis,
        scaler: EntryScaler,
        intercept: f64,
        bundle: CpFactorBundle,
        lambda: f64,
    ) -> Result<Self> {
        if scaler.shape() != bundle.shape() {
            return Err(StarError::ShapeMismatch {
                expected: scaler.shape().to_vec(),
                got: bundle.shape().to_vec(),
            });
        }
        if basis.count() != bundle.basis_count() || scaler.basis_count() != basis.count() {
            return Err(StarError::InvalidArgument(
                "basis, scaler and bundle disagree on the basis count".into(),
            ));
        }
        let coef = interleaved_coefficients(&bundle);
        Ok(Self {
            basis,
            scaler,
            intercept,
            bundle,
            lambda,
            coef,
        })
    }

    pub fn from_fit(basis: FeatureBasis, scaler: EntryScaler, fit: &FitResult) -> Result<Self> {
        Self::new(basis, scaler, fit.intercept, fit.bundle.clone(), fit.lambda)
    }

    pub fn shape(&self) -> &[usize] {
        self.bundle.shape()
    }

    /// Prediction for one raw sample given in row-major order.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coef.len() / self.basis.count() {
            return Err(StarError::LengthMismatch {
                left: x.len(),
                right: self.coef.len() / self.basis.count(),
            });
        }
        let mut feats = vec![0.0; self.coef.len()];
        featurize_sample(x, &self.basis, &self.scaler, &mut feats);
        Ok(self.intercept + feats.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Contribution `Σ_h B_h[pos] · (ψ_h(u) − mean_h)` of raw value `v` at
    /// position `pos`; predictions are the intercept plus the sum of these.
    pub fn entry_effect(&self, pos: usize, v: f64, buf: &mut [f64]) -> f64 {
        let d = self.basis.count();
        self.basis.eval_into(self.scaler.scale(pos, v), buf);
        let means = &self.scaler.means()[pos * d..(pos + 1) * d];
        let coef = &self.coef[pos * d..(pos + 1) * d];
        (0..d).map(|h| coef[h] * (buf[h] - means[h])).sum()
    }

    pub fn predict(&self, x: &DenseTensor) -> Result<f64> {
        if x.shape() != self.shape() {
            return Err(StarError::ShapeMismatch {
                expected: self.shape().to_vec(),
                got: x.shape().to_vec(),
            });
        }
        self.predict_raw(x.data())
    }

    pub fn predict_dataset(&self, raw: &RawDataset) -> Result<Vec<f64>> {
        if raw.shape() != self.shape() {
            return Err(StarError::ShapeMismatch {
                expected: self.shape().to_vec(),
                got: raw.shape().to_vec(),
            });
        }
        (0..raw.n()).map(|i| self.predict_raw(raw.sample(i))).collect()
    }
}

/// Featurizes `raw` with `config.basis`, fits, and packages the model.
pub fn fit_raw(raw: &RawDataset, config: &FitConfig) -> Result<(StarModel, FitResult)> {
    let (basis, scaler, data) = prepare(raw, &config.basis)?;
    let result = fit(&data, config)?;
    let model = StarModel::from_fit(basis, scaler, &result)?;
    Ok((model, result))
}

/// Free-function form of [`StarModel::predict`].
pub fn predict(model: &StarModel, x: &DenseTensor) -> Result<f64> {
    model.predict(x)
}

#[cfg(test)]
mod tests;
