//! Replicated simulation benchmarks: CV-tuned STAR and TLR on fresh data,
//! scored on large independent test sets.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, fit_selected, CvConfig};
use super::metrics::{median, mse};
use super::{derive_seed, Method};
use crate::error::{Result, StarError};
use crate::estimator::FitConfig;
use crate::features::RawDataset;
use crate::sim::{simulate, Design, SimSpec};

/// One grid coordinate of a benchmark table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub n: usize,
    pub p1: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub design: Design,
    pub settings: Vec<Setting>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub master_seed: u64,
    pub test_size: usize,
    pub p2: Option<usize>,
    pub p3: usize,
    pub range: (f64, f64),
    /// Base fit settings; rank and λ come from cross-validation.
    pub fit: FitConfig,
    /// CV grid; its seed is replaced by a derived per-run seed.
    pub cv: CvConfig,
    /// Bootstrap resamples for the standard error of the median.
    pub bootstrap: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            design: Design::General,
            settings: vec![Setting {
                n: 400,
                p1: 20,
                sigma: 0.1,
            }],
            methods: vec![Method::Star, Method::Tlr],
            replications: 10,
            master_seed: 0,
            test_size: 2000,
            p2: None,
            p3: 2,
            range: (0.0, 1.0),
            fit: FitConfig::default(),
            cv: CvConfig::default(),
            bootstrap: 500,
        }
    }
}

impl BenchmarkConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(StarError::InvalidArgument(m.to_string()));
        if self.replications == 0 {
            return bad("replications must be >= 1");
        }
        if self.settings.is_empty() || self.methods.is_empty() {
            return bad("need at least one setting and one method");
        }
        if self.test_size == 0 {
            return bad("test_size must be >= 1");
        }
        Ok(())
    }

    fn spec(&self, s: &Setting, n: usize, seed: u64) -> SimSpec {
        SimSpec {
            design: self.design,
            n,
            p1: s.p1,
            p2: self.p2,
            p3: self.p3,
            sigma: s.sigma,
            seed,
            range: self.range,
        }
    }
}

/// Outcome of one (setting, method, replication) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: usize,
    pub method: Method,
    pub rep: usize,
    /// MSE against the noisy test responses.
    pub test_mse: f64,
    /// MSE against the noiseless regression function.
    pub truth_mse: f64,
    pub rank: usize,
    pub lambda: f64,
    pub active_sets: Vec<Vec<usize>>,
    pub true_active_sets: Vec<Vec<usize>>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub design: Design,
    pub n: usize,
    pub p1: usize,
    pub sigma: f64,
    pub method: Method,
    pub reps: usize,
    pub median_test_mse: f64,
    /// Bootstrap standard error of `median_test_mse`.
    pub se: f64,
    pub median_truth_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub rows: Vec<BenchmarkRow>,
    pub records: Vec<RunRecord>,
}

impl BenchmarkResult {
    pub fn row(&self, n: usize, p1: usize, sigma: f64, method: Method) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.p1 == p1 && r.sigma == sigma && r.method == method)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| StarError::Io(e.to_string());
        w.write_record([
            "design",
            "n",
            "p1",
            "sigma",
            "method",
            "reps",
            "median_test_mse",
            "se",
            "median_truth_mse",
        ])
        .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.design.name().to_string(),
                r.n.to_string(),
                r.p1.to_string(),
                r.sigma.to_string(),
                r.method.name().to_string(),
                r.reps.to_string(),
                r.median_test_mse.to_string(),
                r.se.to_string(),
                r.median_truth_mse.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Test and truth MSE of one CV-tuned fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub test_mse: f64,
    pub truth_mse: f64,
    pub rank: usize,
    pub lambda: f64,
    pub active_sets: Vec<Vec<usize>>,
    pub converged: bool,
}

/// Cross-validates on `train`, refits the selected point and scores it on
/// `test` and on the noiseless test responses.
pub fn evaluate(
    train: &RawDataset,
    test: &RawDataset,
    noiseless: &[f64],
    method: Method,
    fit: &FitConfig,
    cv: &CvConfig,
) -> Result<Evaluation> {
    let report = cross_validate(train, method, fit, cv)?;
    let (model, res) = fit_selected(train, method, fit, &report)?;
    let pred = model.predict_dataset(test)?;
    Ok(Evaluation {
        test_mse: mse(&pred, test.y())?,
        truth_mse: mse(&pred, noiseless)?,
        rank: res.rank,
        lambda: res.lambda,
        active_sets: res.active_sets,
        converged: res.converged,
    })
}

const PURPOSE_TRAIN: u64 = 0;
const PURPOSE_TEST: u64 = 1;
const PURPOSE_CV: u64 = 2;
const PURPOSE_FIT: u64 = 3;
const PURPOSE_BOOT: u64 = 4;

fn design_id(d: Design) -> u64 {
    Design::ALL.iter().position(|&x| x == d).unwrap() as u64
}

fn method_id(m: Method) -> u64 {
    match m {
        Method::Star => 0,
        Method::Tlr => 1,
    }
}

/// Runs every (setting, replication, method) and aggregates medians.
///
/// Data seeds depend on the master seed, design, `n`, `p_1` and replication
/// but not on σ, so σ settings share covariates. Both methods see the same
/// data and the same CV folds. Output does not depend on thread scheduling.
pub fn benchmark(config: &BenchmarkConfig) -> Result<BenchmarkResult> {
    config.validate()?;
    for s in &config.settings {
        config.spec(s, s.n, 0).validate()?;
    }
    let jobs: Vec<(usize, usize, Method)> = (0..config.settings.len())
        .flat_map(|s| {
            (0..config.replications)
                .flat_map(move |rep| config.methods.iter().map(move |&m| (s, rep, m)))
        })
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(si, rep, method)| run(config, si, rep, method))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (si, s) in config.settings.iter().enumerate() {
        for &method in &config.methods {
            let runs: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.setting == si && r.method == method)
                .collect();
            let test: Vec<f64> = runs.iter().map(|r| r.test_mse).collect();
            let truth: Vec<f64> = runs.iter().map(|r| r.truth_mse).collect();
            let boot_seed = derive_seed(&[
                config.master_seed,
                design_id(config.design),
                s.n as u64,
                s.p1 as u64,
                s.sigma.to_bits(),
                method_id(method),
                PURPOSE_BOOT,
            ]);
            rows.push(BenchmarkRow {
                design: config.design,
                n: s.n,
                p1: s.p1,
                sigma: s.sigma,
                method,
                reps: runs.len(),
                median_test_mse: median(&test),
                se: bootstrap_median_se(&test, config.bootstrap, boot_seed),
                median_truth_mse: median(&truth),
            });
        }
    }
    Ok(BenchmarkResult { rows, records })
}

fn run(config: &BenchmarkConfig, si: usize, rep: usize, method: Method) -> Result<RunRecord> {
    let s = &config.settings[si];
    let seed = |purpose: u64| {
        derive_seed(&[
            config.master_seed,
            design_id(config.design),
            s.n as u64,
            s.p1 as u64,
            rep as u64,
            purpose,
        ])
    };
    let train = simulate(&config.spec(s, s.n, seed(PURPOSE_TRAIN)))?;
    let test = simulate(&config.spec(s, config.test_size, seed(PURPOSE_TEST)))?;
    let cv = CvConfig {
        seed: seed(PURPOSE_CV),
        ..config.cv.clone()
    };
    let fit = FitConfig {
        seed: seed(PURPOSE_FIT),
        ..config.fit.clone()
    };
    let e = evaluate(&train.data, &test.data, &test.noiseless, method, &fit, &cv)?;
    Ok(RunRecord {
        setting: si,
        method,
        rep,
        test_mse: e.test_mse,
        truth_mse: e.truth_mse,
        rank: e.rank,
        lambda: e.lambda,
        active_sets: e.active_sets,
        true_active_sets: train.active_sets,
        converged: e.converged,
    })
}

/// Standard deviation of the median over `resamples` seeded bootstrap draws.
/// Zero for a single value or no resamples.
pub fn bootstrap_median_se(values: &[f64], resamples: usize, seed: u64) -> f64 {
    let n = values.len();
    if n < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; n];
    let meds: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..n)];
            }
            median(&buf)
        })
        .collect();
    let mean = meds.iter().sum::<f64>() / resamples as f64;
    (meds.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}
