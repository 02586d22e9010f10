//! Synthetic regression designs with known additive structure.
//!
//! All designs draw covariate entries i.i.d. uniform on `[a, b]` (default
//! `[0, 1]`) and add `σ·N(0, 1)` noise. Entry indices are 0-based: entry `j`
//! uses the "odd" branch of a parity table when `j + 1` is odd.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};
use crate::features::{FeatureBasis, RawDataset};
use crate::tensor::{CpFactorBundle, DenseTensor};

/// Number of important entries along ways 1, 2, 3.
pub const ACTIVE_WAY1: usize = 10;
pub const ACTIVE_WAY2: usize = 4;
pub const ACTIVE_WAY3: usize = 2;

/// Floor applied to `|·|` before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// `X = x1 ∘ x2`, `y = Σ_{j<10, k<4} T_j(x1_j) · T_k(x2_k)`.
    LowRank,
    /// `y = Σ_{j<10, k<4} T_jk(X_jk)`.
    General,
    /// Three ways, `y = Σ_{j,k} sin(T_jk(X_jk0)) + log|T_jk(X_jk1)|`.
    ThreeWayCase1,
    /// Three ways, `y = sin(S) + log|S|` with `S = Σ_{j,k,l} T_jk(X_jkl)`.
    ThreeWayCase2,
}

impl Design {
    pub const ALL: [Design; 4] = [
        Design::LowRank,
        Design::General,
        Design::ThreeWayCase1,
        Design::ThreeWayCase2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Design::LowRank => "low_rank",
            Design::General => "general",
            Design::ThreeWayCase1 => "three_way_case1",
            Design::ThreeWayCase2 => "three_way_case2",
        }
    }

    pub fn is_three_way(self) -> bool {
        matches!(self, Design::ThreeWayCase1 | Design::ThreeWayCase2)
    }

    pub fn default_p2(self) -> usize {
        if self.is_three_way() {
            10
        } else {
            8
        }
    }
}

impl std::str::FromStr for Design {
    type Err = StarError;

    fn from_str(s: &str) -> Result<Self> {
        Design::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| StarError::InvalidArgument(format!("unknown design '{s}'")))
    }
}

/// Univariate building blocks of the generating functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// `−sin(1.5x)`
    NegSin,
    /// `x³ + 1.5(x − 0.5)²`
    CubicQuad,
    /// `−φ(x; 0.5, 0.8²)`
    NegNormalDensity,
    /// `sin(exp(−0.5x))`
    SinExp,
}

impl Component {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Component::NegSin => -(1.5 * x).sin(),
            Component::CubicQuad => x.powi(3) + 1.5 * (x - 0.5).powi(2),
            Component::NegNormalDensity => {
                let sd = 0.8;
                let z = (x - 0.5) / sd;
                -(-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
            }
            Component::SinExp => (-0.5 * x).exp().sin(),
        }
    }
}

fn odd(index0: usize) -> bool {
    index0 % 2 == 0
}

/// `T_jk` of the general and three-way designs.
pub fn component_functions(j: usize, k: usize) -> Component {
    match (odd(j), odd(k)) {
        (true, true) => Component::NegSin,
        (false, true) => Component::CubicQuad,
        (true, false) => Component::NegNormalDensity,
        (false, false) => Component::SinExp,
    }
}

/// `T_j` applied to the first low-rank generating vector.
pub fn way1_function(j: usize) -> Component {
    if odd(j) {
        Component::NegSin
    } else {
        Component::CubicQuad
    }
}

/// `T_k` applied to the second low-rank generating vector.
pub fn way2_function(k: usize) -> Component {
    if odd(k) {
        Component::NegNormalDensity
    } else {
        Component::SinExp
    }
}

fn log_abs(v: f64) -> f64 {
    v.abs().max(LOG_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub design: Design,
    pub n: usize,
    pub p1: usize,
    /// `None` uses the design default (8, or 10 for three-way designs).
    pub p2: Option<usize>,
    /// Third-way size for three-way designs.
    pub p3: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Covariate range `[a, b]`.
    pub range: (f64, f64),
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            design: Design::General,
            n: 400,
            p1: 20,
            p2: None,
            p3: 2,
            sigma: 0.1,
            seed: 0,
            range: (0.0, 1.0),
        }
    }
}

impl SimSpec {
    pub fn new(design: Design, n: usize, p1: usize, sigma: f64, seed: u64) -> Self {
        Self {
            design,
            n,
            p1,
            sigma,
            seed,
            ..Self::default()
        }
    }

    pub fn p2(&self) -> usize {
        self.p2.unwrap_or_else(|| self.design.default_p2())
    }

    pub fn shape(&self) -> Vec<usize> {
        if self.design.is_three_way() {
            vec![self.p1, self.p2(), self.p3]
        } else {
            vec![self.p1, self.p2()]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StarError::InvalidArgument(m));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.p1 < ACTIVE_WAY1 || self.p2() < ACTIVE_WAY2 {
            return bad(format!(
                "need p1 >= {ACTIVE_WAY1} and p2 >= {ACTIVE_WAY2}, got {} and {}",
                self.p1,
                self.p2()
            ));
        }
        if self.design.is_three_way() && self.p3 < ACTIVE_WAY3 {
            return bad(format!("need p3 >= {ACTIVE_WAY3}"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad("sigma must be finite and >= 0".into());
        }
        let (a, b) = self.range;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return bad("covariate range must satisfy a < b".into());
        }
        Ok(())
    }

    /// Important entries along each way.
    pub fn active_sets(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![(0..ACTIVE_WAY1).collect(), (0..ACTIVE_WAY2).collect()];
        if self.design.is_three_way() {
            sets.push((0..ACTIVE_WAY3).collect());
        }
        sets
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub data: RawDataset,
    pub noiseless: Vec<f64>,
    pub active_sets: Vec<Vec<usize>>,
}

/// Noiseless response for a general or three-way covariate (row-major
/// entries). The low-rank design is a function of its generating vectors;
/// use [`low_rank_function`] there.
pub fn true_function(spec: &SimSpec, x: &DenseTensor) -> Result<f64> {
    let shape = spec.shape();
    if x.shape() != shape.as_slice() {
        return Err(StarError::ShapeMismatch {
            expected: shape,
            got: x.shape().to_vec(),
        });
    }
    true_function_raw(spec.design, &shape, x.data())
}

fn true_function_raw(design: Design, shape: &[usize], x: &[f64]) -> Result<f64> {
    match design {
        Design::LowRank => Err(StarError::InvalidArgument(
            "the low-rank response depends on the generating vectors; use low_rank_function".into(),
        )),
        Design::General => {
            let p2 = shape[1];
            let mut s = 0.0;
            for j in 0..ACTIVE_WAY1 {
                for k in 0..ACTIVE_WAY2 {
                    s += component_functions(j, k).eval(x[j * p2 + k]);
                }
            }
            Ok(s)
        }
        Design::ThreeWayCase1 => {
            let (p2, p3) = (shape[1], shape[2]);
            let mut s = 0.0;
            for j in 0..ACTIVE_WAY1 {
                for k in 0..ACTIVE_WAY2 {
                    let f = component_functions(j, k);
                    let base = (j * p2 + k) * p3;
                    s += f.eval(x[base]).sin() + log_abs(f.eval(x[base + 1]));
                }
            }
            Ok(s)
        }
        Design::ThreeWayCase2 => {
            let (p2, p3) = (shape[1], shape[2]);
            let mut s = 0.0;
            for j in 0..ACTIVE_WAY1 {
                for k in 0..ACTIVE_WAY2 {
                    let f = component_functions(j, k);
                    for l in 0..ACTIVE_WAY3 {
                        s += f.eval(x[(j * p2 + k) * p3 + l]);
                    }
                }
            }
            Ok(case2_link(s))
        }
    }
}

/// `sin(S) + log|S|`, the outer map of the non-additive three-way design.
pub fn case2_link(s: f64) -> f64 {
    s.sin() + log_abs(s)
}

/// `(Σ_{j<10} T_j(x1_j)) · (Σ_{k<4} T_k(x2_k))`.
pub fn low_rank_function(x1: &[f64], x2: &[f64]) -> f64 {
    let a: f64 = (0..ACTIVE_WAY1).map(|j| way1_function(j).eval(x1[j])).sum();
    let b: f64 = (0..ACTIVE_WAY2).map(|k| way2_function(k).eval(x2[k])).sum();
    a * b
}

/// Draws `spec.n` samples. Covariates are drawn first, then the noise, so
/// two specs differing only in `σ` share covariates.
pub fn simulate(spec: &SimSpec) -> Result<SimOutput> {
    spec.validate()?;
    let shape = spec.shape();
    let p: usize = shape.iter().product();
    let (a, b) = spec.range;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = Vec::with_capacity(spec.n * p);
    let mut noiseless = Vec::with_capacity(spec.n);
    let draw = |rng: &mut ChaCha8Rng| a + (b - a) * rng.random::<f64>();
    for _ in 0..spec.n {
        match spec.design {
            Design::LowRank => {
                let (p1, p2) = (shape[0], shape[1]);
                let x1: Vec<f64> = (0..p1).map(|_| draw(&mut rng)).collect();
                let x2: Vec<f64> = (0..p2).map(|_| draw(&mut rng)).collect();
                for u in &x1 {
                    for v in &x2 {
                        x.push(u * v);
                    }
                }
                noiseless.push(low_rank_function(&x1, &x2));
            }
            design => {
                let start = x.len();
                for _ in 0..p {
                    x.push(draw(&mut rng));
                }
                noiseless.push(true_function_raw(design, &shape, &x[start..])?);
            }
        }
    }
    let y = noiseless
        .iter()
        .map(|f| {
            let e: f64 = StandardNormal.sample(&mut rng);
            f + spec.sigma * e
        })
        .collect();
    Ok(SimOutput {
        data: RawDataset::new(shape, x, y)?,
        noiseless,
        active_sets: spec.active_sets(),
    })
}

/// Population least-squares coefficients of a centered function on the
/// centered basis over `u ∈ [0, 1]`, from a midpoint grid.
pub fn project_onto_basis<F: Fn(f64) -> f64>(f: F, basis: &FeatureBasis) -> Vec<f64> {
    const GRID: usize = 20_000;
    let d = basis.count();
    let mut rows = Vec::with_capacity(GRID * d);
    let mut vals = Vec::with_capacity(GRID);
    let mut tmp = vec![0.0; d];
    for g in 0..GRID {
        let u = (g as f64 + 0.5) / GRID as f64;
        basis.eval_into(u, &mut tmp);
        rows.extend_from_slice(&tmp);
        vals.push(f(u));
    }
    let mean_f = vals.iter().sum::<f64>() / GRID as f64;
    let mut mean_b = vec![0.0; d];
    for r in rows.chunks(d) {
        for (m, v) in mean_b.iter_mut().zip(r) {
            *m += v / GRID as f64;
        }
    }
    // normal equations on centered columns
    let mut ata = vec![0.0; d * d];
    let mut atb = vec![0.0; d];
    for (r, &v) in rows.chunks(d).zip(&vals) {
        let c: Vec<f64> = r.iter().zip(&mean_b).map(|(a, m)| a - m).collect();
        for a in 0..d {
            atb[a] += c[a] * (v - mean_f);
            for b in 0..d {
                ata[a * d + b] += c[a] * c[b];
            }
        }
    }
    solve_spd(ata, atb, d)
}

/// Cholesky solve of a small symmetric positive definite system.
fn solve_spd(mut a: Vec<f64>, mut b: Vec<f64>, d: usize) -> Vec<f64> {
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= a[j * d + k] * a[j * d + k];
        }
        let l = s.max(f64::MIN_POSITIVE).sqrt();
        a[j * d + j] = l;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / l;
        }
    }
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * d + k] * b[k];
        }
        b[i] = s / a[i * d + i];
    }
    for i in (0..d).rev() {
        let mut s = b[i];
        for k in i + 1..d {
            s -= a[k * d + i] * b[k];
        }
        b[i] = s / a[i * d + i];
    }
    b
}

/// CP factors of the spline projection of the true additive function, in the
/// scaled coordinate `u = (x − a)/(b − a)`. Exact rank 2 for the general
/// design (rows split by parity of `j`) and rank 4 for the additive
/// three-way design (split by parity of `j` and by slice `l`). `None` for
/// designs that are not additive in the entries.
pub fn truth_bundle(spec: &SimSpec, basis: &FeatureBasis) -> Result<Option<CpFactorBundle>> {
    spec.validate()?;
    let shape = spec.shape();
    let d = basis.count();
    let (a, b) = spec.range;
    let coef = |f: &dyn Fn(f64) -> f64| project_onto_basis(|u| f(a + (b - a) * u), basis);
    match spec.design {
        Design::General => {
            let (p1, p2) = (shape[0], shape[1]);
            let rank = 2;
            let mut bundle = CpFactorBundle::zeros(shape.clone(), rank, d);
            // c[parity_j][k] = coefficients of T_jk
            let c: Vec<Vec<Vec<f64>>> = (0..2)
                .map(|pj| {
                    (0..ACTIVE_WAY2)
                        .map(|k| coef(&|x| component_functions(pj, k).eval(x)))
                        .collect()
                })
                .collect();
            for h in 0..d {
                for r in 0..rank {
                    let w1: Vec<f64> = (0..p1)
                        .map(|j| f64::from(u8::from(j < ACTIVE_WAY1 && j % 2 == r)))
                        .collect();
                    let w2: Vec<f64> = (0..p2)
                        .map(|k| if k < ACTIVE_WAY2 { c[r][k][h] } else { 0.0 })
                        .collect();
                    bundle.set_component(0, h, r, &w1);
                    bundle.set_component(1, h, r, &w2);
                }
            }
            Ok(Some(bundle))
        }
        Design::ThreeWayCase1 => {
            let (p1, p2, p3) = (shape[0], shape[1], shape[2]);
            let rank = 4;
            let mut bundle = CpFactorBundle::zeros(shape.clone(), rank, d);
            // rank index r = 2 * parity_j + l
            let c: Vec<Vec<Vec<f64>>> = (0..rank)
                .map(|r| {
                    let (pj, l) = (r / 2, r % 2);
                    (0..ACTIVE_WAY2)
                        .map(|k| {
                            let f = component_functions(pj, k);
                            if l == 0 {
                                coef(&|x| f.eval(x).sin())
                            } else {
                                coef(&|x| log_abs(f.eval(x)))
                            }
                        })
                        .collect()
                })
                .collect();
            for h in 0..d {
                for r in 0..rank {
                    let (pj, l) = (r / 2, r % 2);
                    let w1: Vec<f64> = (0..p1)
                        .map(|j| f64::from(u8::from(j < ACTIVE_WAY1 && j % 2 == pj)))
                        .collect();
                    let w2: Vec<f64> = (0..p2)
                        .map(|k| if k < ACTIVE_WAY2 { c[r][k][h] } else { 0.0 })
                        .collect();
                    let w3: Vec<f64> = (0..p3).map(|v| f64::from(u8::from(v == l))).collect();
                    bundle.set_component(0, h, r, &w1);
                    bundle.set_component(1, h, r, &w2);
                    bundle.set_component(2, h, r, &w3);
                }
            }
            Ok(Some(bundle))
        }
        Design::LowRank | Design::ThreeWayCase2 => Ok(None),
    }
}
