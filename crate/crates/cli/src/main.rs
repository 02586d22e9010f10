//! `star`: simulate, fit, predict, cross-validate, benchmark and map
//! sensitivities from the command line.
//!
//! Settings come from an optional TOML file (`--config`) and are overridden
//! by flags. Every run prints the resolved settings to stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence
//! (outputs are still written).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use star_core::estimator::{fit, lambda_max, FitConfig, StarModel};
use star_core::eval::io::{load_dataset, load_model, save_dataset, save_model};
use star_core::eval::{
    benchmark, cross_validate, fit_selected, mse, sensitivity, BenchmarkConfig, CvConfig, Method,
    Selection, Setting,
};
use star_core::sim::{simulate, Design, SimSpec};
use star_core::StarError;

#[derive(Parser, Debug)]
#[command(name = "star", version, about = "Sparse tensor additive regression")]
struct Cli {
    /// TOML settings file with optional [simulate], [fit], [cv], [benchmark]
    /// and [sensitivity] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit one model at a fixed penalty and rank.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Cross-validate over a (lambda, rank) grid and refit the selection.
    Cv(CvArgs),
    /// Replicated simulation benchmark of STAR against TLR.
    Benchmark(BenchmarkArgs),
    /// Mean prediction change per covariate position.
    Sensitivity(SensitivityArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Star,
    Tlr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Star => Method::Star,
            MethodArg::Tlr => Method::Tlr,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SelectionArg {
    Min,
    OneSe,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p1: Option<usize>,
    #[arg(long)]
    p2: Option<usize>,
    #[arg(long)]
    p3: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
}

/// Fit settings shared by `fit`, `cv` and `benchmark`.
#[derive(Args, Debug)]
struct FitFlags {
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Seed of the random start.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fit: FitFlags,
    #[arg(long, conflicts_with = "lambda_fraction")]
    lambda: Option<f64>,
    /// Penalty as a fraction of lambda_max at the start.
    #[arg(long)]
    lambda_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV with one `prediction` column; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    /// Grid report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Model refitted at the selected point.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitFlags,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    lambda_fractions: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    selection: Option<SelectionArg>,
    /// Seed of the fold assignment.
    #[arg(long)]
    cv_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Output table CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    design: Option<String>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    p1: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    /// Master seed; every run seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    lambda_fractions: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct SensitivityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Long-form CSV of the map.
    #[arg(long)]
    out: PathBuf,
    /// Raw-unit increment.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    /// 1-based ways spanning the map; all ways when omitted.
    #[arg(long, value_delimiter = ',')]
    ways: Option<Vec<usize>>,
}

/// Settings file layout.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    simulate: SimSpec,
    fit: FitSection,
    cv: CvConfig,
    benchmark: BenchmarkSection,
    sensitivity: SensitivitySection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct FitSection {
    method: Method,
    /// Penalty as a fraction of `lambda_max`; overrides `lambda` when set.
    lambda_fraction: Option<f64>,
    #[serde(flatten)]
    config: FitConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            method: Method::Star,
            lambda_fraction: None,
            config: FitConfig::default(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct BenchmarkSection {
    design: Design,
    n: Vec<usize>,
    p1: Vec<usize>,
    sigma: Vec<f64>,
    methods: Vec<Method>,
    replications: usize,
    seed: u64,
    test_size: usize,
    p2: Option<usize>,
    p3: usize,
    range: (f64, f64),
    bootstrap: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        Self {
            design: b.design,
            n: vec![400],
            p1: vec![20],
            sigma: vec![0.1],
            methods: b.methods,
            replications: b.replications,
            seed: b.master_seed,
            test_size: b.test_size,
            p2: b.p2,
            p3: b.p3,
            range: b.range,
            bootstrap: b.bootstrap,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SensitivitySection {
    delta: f64,
    ways: Option<Vec<usize>>,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        Self {
            delta: 1.0,
            ways: None,
        }
    }
}

/// Command-line misuse that the parser cannot catch.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

enum Status {
    Done,
    NotConverged,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))
}

fn print_resolved<T: Serialize>(section: &str, value: &T, seed: u64) -> Result<()> {
    let mut table = toml::Table::new();
    table.insert(section.to_string(), toml::Value::try_from(value)?);
    eprintln!("# resolved settings\n{}", toml::to_string(&table)?.trim_end());
    eprintln!("# seed = {seed}");
    Ok(())
}

fn read_data(path: &Path) -> Result<star_core::features::RawDataset> {
    load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn read_model(path: &Path) -> Result<StarModel> {
    load_model(path).with_context(|| format!("reading model {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn apply_fit_flags(section: &mut FitSection, flags: &FitFlags) {
    if let Some(m) = flags.method {
        section.method = m.into();
    }
    let c = &mut section.config;
    if let Some(r) = flags.rank {
        c.rank = r;
    }
    if let Some(v) = flags.max_sweeps {
        c.max_sweeps = v;
    }
    if let Some(v) = flags.tol {
        c.tol = v;
    }
    if let Some(v) = flags.seed {
        c.seed = v;
    }
}

fn run_simulate(cfg: FileConfig, a: SimulateArgs) -> Result<Status> {
    let mut spec = cfg.simulate;
    if let Some(d) = a.design {
        spec.design = d.parse().map_err(|e: StarError| usage(e.to_string()))?;
    }
    if let Some(v) = a.n {
        spec.n = v;
    }
    if let Some(v) = a.p1 {
        spec.p1 = v;
    }
    if a.p2.is_some() {
        spec.p2 = a.p2;
    }
    if let Some(v) = a.p3 {
        spec.p3 = v;
    }
    if let Some(v) = a.sigma {
        spec.sigma = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    print_resolved("simulate", &spec, spec.seed)?;
    let sim = simulate(&spec).map_err(|e| usage(e.to_string()))?;
    save_dataset(&sim.data, &a.out)?;
    eprintln!(
        "wrote {} samples of shape {:?} to {}",
        sim.data.n(),
        sim.data.shape(),
        a.out.display()
    );
    Ok(Status::Done)
}

fn run_fit(cfg: FileConfig, a: FitArgs) -> Result<Status> {
    let mut section = cfg.fit;
    apply_fit_flags(&mut section, &a.fit);
    if let Some(l) = a.lambda {
        section.config.lambda = l;
        section.lambda_fraction = None;
    }
    if a.lambda_fraction.is_some() {
        section.lambda_fraction = a.lambda_fraction;
    }
    let raw = read_data(&a.data)?;
    let (basis, scaler, data) = section.method.prepare(&raw, &section.config.basis)?;
    section.config.validate(data.ways()).map_err(|e| usage(e.to_string()))?;
    if let Some(f) = section.lambda_fraction {
        if !(f >= 0.0) {
            return Err(usage("lambda_fraction must be >= 0"));
        }
        section.config.lambda = f * lambda_max(&data, &section.config)?;
    }
    print_resolved("fit", &section, section.config.seed)?;
    let res = fit(&data, &section.config)?;
    let model = StarModel::from_fit(basis, scaler, &res)?;
    save_model(&model, &a.out)?;
    let sizes: Vec<usize> = res.active_sets.iter().map(Vec::len).collect();
    eprintln!(
        "lambda {} rank {}: objective {:.6e} after {} sweeps, active per way {:?}",
        res.lambda,
        res.rank,
        res.final_objective(),
        res.sweeps,
        sizes
    );
    if res.converged {
        Ok(Status::Done)
    } else {
        eprintln!("warning: no convergence within {} sweeps", section.config.max_sweeps);
        Ok(Status::NotConverged)
    }
}

fn run_predict(a: PredictArgs) -> Result<Status> {
    let model = read_model(&a.model)?;
    let raw = read_data(&a.data)?;
    eprintln!("# model {} on data {}", a.model.display(), a.data.display());
    let preds = model.predict_dataset(&raw)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(out, "prediction")?;
    for p in &preds {
        writeln!(out, "{p}")?;
    }
    out.flush()?;
    eprintln!("mse against the data responses: {}", mse(&preds, raw.y())?);
    Ok(Status::Done)
}

fn run_cv(cfg: FileConfig, a: CvArgs) -> Result<Status> {
    let mut section = cfg.fit;
    apply_fit_flags(&mut section, &a.fit);
    let mut cv = cfg.cv;
    if let Some(v) = a.folds {
        cv.folds = v;
    }
    if let Some(v) = a.ranks {
        cv.ranks = v;
    }
    if a.lambda_fractions.is_some() {
        cv.lambda_fractions = a.lambda_fractions;
    }
    if let Some(s) = a.selection {
        cv.selection = match s {
            SelectionArg::Min => Selection::Min,
            SelectionArg::OneSe => Selection::OneSe,
        };
    }
    if let Some(v) = a.cv_seed {
        cv.seed = v;
    }
    print_resolved("fit", &section, section.config.seed)?;
    print_resolved("cv", &cv, cv.seed)?;
    let raw = read_data(&a.data)?;
    let report = cross_validate(&raw, section.method, &section.config, &cv)
        .map_err(classify_config_error)?;
    report.write_csv(create(&a.out)?)?;
    eprintln!(
        "selected rank {} lambda {} (mean validation mse {})",
        report.selected_rank, report.selected_lambda, report.points[report.selected].mean_mse
    );
    if let Some(path) = a.model_out {
        let (model, res) = fit_selected(&raw, section.method, &section.config, &report)?;
        save_model(&model, &path)?;
        if !res.converged {
            eprintln!("warning: refit did not converge");
            return Ok(Status::NotConverged);
        }
    }
    Ok(Status::Done)
}

fn run_benchmark(cfg: FileConfig, a: BenchmarkArgs) -> Result<Status> {
    let mut b = cfg.benchmark;
    if let Some(d) = a.design {
        b.design = d.parse().map_err(|e: StarError| usage(e.to_string()))?;
    }
    if let Some(v) = a.n {
        b.n = v;
    }
    if let Some(v) = a.p1 {
        b.p1 = v;
    }
    if let Some(v) = a.sigma {
        b.sigma = v;
    }
    if let Some(v) = a.replications {
        b.replications = v;
    }
    if let Some(v) = a.test_size {
        b.test_size = v;
    }
    if let Some(v) = a.seed {
        b.seed = v;
    }
    let mut cv = cfg.cv;
    if let Some(v) = a.folds {
        cv.folds = v;
    }
    if let Some(v) = a.ranks {
        cv.ranks = v;
    }
    if a.lambda_fractions.is_some() {
        cv.lambda_fractions = a.lambda_fractions;
    }
    print_resolved("benchmark", &b, b.seed)?;
    print_resolved("fit", &cfg.fit, b.seed)?;
    print_resolved("cv", &cv, b.seed)?;
    let mut settings = Vec::new();
    for &n in &b.n {
        for &p1 in &b.p1 {
            for &sigma in &b.sigma {
                settings.push(Setting { n, p1, sigma });
            }
        }
    }
    let config = BenchmarkConfig {
        design: b.design,
        settings,
        methods: b.methods,
        replications: b.replications,
        master_seed: b.seed,
        test_size: b.test_size,
        p2: b.p2,
        p3: b.p3,
        range: b.range,
        fit: cfg.fit.config,
        cv,
        bootstrap: b.bootstrap,
    };
    let res = benchmark(&config).map_err(classify_config_error)?;
    res.write_csv(create(&a.out)?)?;
    for r in &res.rows {
        eprintln!(
            "n={} p1={} sigma={} {}: median test mse {:.4} (se {:.4})",
            r.n,
            r.p1,
            r.sigma,
            r.method.name(),
            r.median_test_mse,
            r.se
        );
    }
    let unconverged = res.records.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        eprintln!(
            "note: {unconverged} of {} final fits stopped at the sweep limit",
            res.records.len()
        );
    }
    Ok(Status::Done)
}

fn run_sensitivity(cfg: FileConfig, a: SensitivityArgs) -> Result<Status> {
    let mut s = cfg.sensitivity;
    if let Some(v) = a.delta {
        s.delta = v;
    }
    if a.ways.is_some() {
        s.ways = a.ways;
    }
    print_resolved("sensitivity", &s, 0)?;
    let ways: Option<Vec<usize>> = match &s.ways {
        Some(w) if w.contains(&0) => return Err(usage("ways are 1-based")),
        Some(w) => Some(w.iter().map(|k| k - 1).collect()),
        None => None,
    };
    let model = read_model(&a.model)?;
    let raw = read_data(&a.data)?;
    let report =
        sensitivity(&model, &raw, s.delta, ways.as_deref()).map_err(classify_config_error)?;
    report.write_csv(create(&a.out)?)?;
    eprintln!("wrote {} cells to {}", report.values.len(), a.out.display());
    Ok(Status::Done)
}

/// Invalid settings reported by the library are usage errors.
fn classify_config_error(e: StarError) -> anyhow::Error {
    match e {
        StarError::InvalidArgument(m) => usage(m),
        other => other.into(),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<StarError>() {
        Some(StarError::InvalidArgument(_)) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<Status> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => run_simulate(cfg, a),
        Command::Fit(a) => run_fit(cfg, a),
        Command::Predict(a) => run_predict(a),
        Command::Cv(a) => run_cv(cfg, a),
        Command::Benchmark(a) => run_benchmark(cfg, a),
        Command::Sensitivity(a) => run_sensitivity(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
