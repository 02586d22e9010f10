//! Per-entry scaling, basis expansion and centering of tensor covariates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};
use crate::spline::{BasisSpec, KnotPlacement, SplineBasis};
use crate::tensor::DenseTensor;

/// Raw covariate tensors with scalar responses.
///
/// `x` stores sample `i` at `x[i * P .. (i + 1) * P]` in row-major tensor
/// order, `P = Π p_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    shape: Vec<usize>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl RawDataset {
    pub fn new(shape: Vec<usize>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&p| p == 0) {
            return Err(StarError::InvalidArgument(format!(
                "covariate shape must be non-empty and positive, got {shape:?}"
            )));
        }
        let p: usize = shape.iter().product();
        if x.len() != y.len() * p {
            return Err(StarError::LengthMismatch {
                left: x.len(),
                right: y.len() * p,
            });
        }
        Ok(Self { shape, x, y })
    }

    pub fn from_tensors(samples: &[DenseTensor], y: Vec<f64>) -> Result<Self> {
        let shape = samples
            .first()
            .map(|t| t.shape().to_vec())
            .ok_or_else(|| StarError::InvalidArgument("no samples".into()))?;
        let mut x = Vec::with_capacity(samples.len() * samples[0].len());
        for t in samples {
            if t.shape() != shape.as_slice() {
                return Err(StarError::ShapeMismatch {
                    expected: shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
            x.extend_from_slice(t.data());
        }
        Self::new(shape, x, y)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn positions(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let p = self.positions();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn sample_tensor(&self, i: usize) -> DenseTensor {
        DenseTensor::new(self.shape.clone(), self.sample(i).to_vec()).expect("consistent shape")
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn subset(&self, indices: &[usize]) -> RawDataset {
        let p = self.positions();
        let mut x = Vec::with_capacity(indices.len() * p);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.sample(i));
            y.push(self.y[i]);
        }
        RawDataset {
            shape: self.shape.clone(),
            x,
            y,
        }
    }
}

/// Settings for the per-entry spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    pub order: usize,
    pub n_internal: usize,
    pub natural: bool,
    pub drop_constant: bool,
    pub knots: KnotPlacement,
}

impl Default for BasisConfig {
    /// Natural cubic splines with four internal knots and the constant
    /// direction removed: `d_n = 5`.
    fn default() -> Self {
        Self {
            order: 4,
            n_internal: 4,
            natural: true,
            drop_constant: true,
            knots: KnotPlacement::Uniform,
        }
    }
}

/// Univariate basis applied to every tensor entry after min-max scaling.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureBasis {
    Spline(SplineBasis),
    /// `ψ(u) = u`, one function; turns the model into linear tensor regression.
    Identity,
}

impl FeatureBasis {
    pub fn count(&self) -> usize {
        match self {
            FeatureBasis::Spline(b) => b.count(),
            FeatureBasis::Identity => 1,
        }
    }

    #[inline]
    pub fn eval_into(&self, u: f64, out: &mut [f64]) {
        match self {
            FeatureBasis::Spline(b) => b.eval_into(u, out),
            FeatureBasis::Identity => out[0] = u,
        }
    }

    pub fn spec(&self) -> BasisSpec {
        match self {
            FeatureBasis::Spline(b) => b.spec(),
            FeatureBasis::Identity => BasisSpec::Identity,
        }
    }

    pub fn from_spec(spec: &BasisSpec) -> Result<Self> {
        Ok(match SplineBasis::from_spec(spec)? {
            Some(b) => FeatureBasis::Spline(b),
            None => FeatureBasis::Identity,
        })
    }

    /// Builds the basis from `config`; quantile knots use the pooled scaled
    /// training values seen through `scaler`.
    pub fn from_config(
        config: &BasisConfig,
        raw: &RawDataset,
        scaler: &EntryScaler,
    ) -> Result<Self> {
        let basis = match config.knots {
            KnotPlacement::Uniform => SplineBasis::uniform(
                config.order,
                config.n_internal,
                config.natural,
                config.drop_constant,
            )?,
            KnotPlacement::Quantile => {
                let p = raw.positions();
                let mut pooled: Vec<f64> = (0..raw.n())
                    .flat_map(|i| {
                        raw.sample(i)
                            .iter()
                            .enumerate()
                            .map(|(pos, &v)| scaler.scale(pos, v))
                            .collect::<Vec<_>>()
                    })
                    .filter(|&u| u > 0.0 && u < 1.0)
                    .collect();
                debug_assert!(pooled.len() <= raw.n() * p);
                pooled.sort_by(f64::total_cmp);
                let knots = quantile_knots(&pooled, config.n_internal);
                SplineBasis::with_knots(
                    config.order,
                    knots,
                    config.natural,
                    config.drop_constant,
                )?
            }
        };
        Ok(FeatureBasis::Spline(basis))
    }
}

fn quantile_knots(sorted: &[f64], count: usize) -> Vec<f64> {
    let mut knots: Vec<f64> = Vec::with_capacity(count);
    if sorted.is_empty() {
        return (1..=count).map(|i| i as f64 / (count + 1) as f64).collect();
    }
    for i in 1..=count {
        let pos = i as f64 / (count + 1) as f64 * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        let hi = (lo + 1).min(sorted.len() - 1);
        let q = sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
        // keep strictly increasing
        if knots.last().is_none_or(|&last| q > last + 1e-9) && q < 1.0 {
            knots.push(q);
        }
    }
    knots
}

/// Per-entry min/max scaling and per-entry, per-basis centering means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryScaler {
    shape: Vec<usize>,
    basis_count: usize,
    min: Vec<f64>,
    max: Vec<f64>,
    /// `means[pos * d_n + h]`
    means: Vec<f64>,
}

impl EntryScaler {
    pub fn new(
        shape: Vec<usize>,
        basis_count: usize,
        min: Vec<f64>,
        max: Vec<f64>,
        means: Vec<f64>,
    ) -> Result<Self> {
        let p: usize = shape.iter().product();
        if min.len() != p || max.len() != p {
            return Err(StarError::LengthMismatch {
                left: min.len().min(max.len()),
                right: p,
            });
        }
        if means.len() != p * basis_count {
            return Err(StarError::LengthMismatch {
                left: means.len(),
                right: p * basis_count,
            });
        }
        if min.iter().zip(&max).any(|(a, b)| !(a <= b)) {
            return Err(StarError::InvalidArgument("scaler requires min <= max".into()));
        }
        Ok(Self {
            shape,
            basis_count,
            min,
            max,
            means,
        })
    }

    /// Fits min/max only; means are zero until [`fit_means`](Self::fit_means).
    pub fn fit_range(raw: &RawDataset) -> Result<Self> {
        if raw.n() < 2 {
            return Err(StarError::InvalidArgument(
                "scaler needs at least two samples".into(),
            ));
        }
        if raw.x().iter().any(|v| !v.is_finite()) {
            return Err(StarError::NonFinite("covariates".into()));
        }
        let p = raw.positions();
        let mut min = vec![f64::INFINITY; p];
        let mut max = vec![f64::NEG_INFINITY; p];
        for i in 0..raw.n() {
            for (pos, &v) in raw.sample(i).iter().enumerate() {
                min[pos] = min[pos].min(v);
                max[pos] = max[pos].max(v);
            }
        }
        Ok(Self {
            shape: raw.shape().to_vec(),
            basis_count: 0,
            min,
            max,
            means: Vec::new(),
        })
    }

    pub fn fit_means(&mut self, raw: &RawDataset, basis: &FeatureBasis) {
        let p = raw.positions();
        let d = basis.count();
        let mut sums = vec![0.0; p * d];
        let mut buf = vec![0.0; d];
        for i in 0..raw.n() {
            for (pos, &v) in raw.sample(i).iter().enumerate() {
                basis.eval_into(self.scale(pos, v), &mut buf);
                for (s, b) in sums[pos * d..(pos + 1) * d].iter_mut().zip(&buf) {
                    *s += b;
                }
            }
        }
        let n = raw.n() as f64;
        sums.iter_mut().for_each(|s| *s /= n);
        self.basis_count = d;
        self.means = sums;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn basis_count(&self) -> usize {
        self.basis_count
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Clamped min-max map of a raw value at linear position `pos`.
    #[inline]
    pub fn scale(&self, pos: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[pos], self.max[pos]);
        if hi == lo {
            0.5
        } else {
            (v.clamp(lo, hi) - lo) / (hi - lo)
        }
    }
}

/// Fits per-entry min/max on `raw`, then the centering means of `basis`.
pub fn fit_scaler(raw: &RawDataset, basis: &FeatureBasis) -> Result<EntryScaler> {
    let mut s = EntryScaler::fit_range(raw)?;
    s.fit_means(raw, basis);
    Ok(s)
}

/// Centered feature tensors `F_h(X_i)` for every sample, plus responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedDataset {
    shape: Vec<usize>,
    basis_count: usize,
    /// `features[(i * P + pos) * d_n + h]`
    features: Vec<f64>,
    y: Vec<f64>,
    intercept: f64,
}

impl FeaturizedDataset {
    /// Wraps precomputed features. The intercept is `mean(y)`.
    pub fn from_features(
        shape: Vec<usize>,
        basis_count: usize,
        features: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let p: usize = shape.iter().product();
        if features.len() != y.len() * p * basis_count {
            return Err(StarError::LengthMismatch {
                left: features.len(),
                right: y.len() * p * basis_count,
            });
        }
        if features.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(StarError::NonFinite("features".into()));
        }
        let intercept = if y.is_empty() {
            0.0
        } else {
            y.iter().sum::<f64>() / y.len() as f64
        };
        Ok(Self {
            shape,
            basis_count,
            features,
            y,
            intercept,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ways(&self) -> usize {
        self.shape.len()
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn positions(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn basis_count(&self) -> usize {
        self.basis_count
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Features of sample `i` laid out as `[pos * d_n + h]`.
    pub fn sample_features(&self, i: usize) -> &[f64] {
        let w = self.positions() * self.basis_count;
        &self.features[i * w..(i + 1) * w]
    }

    /// Responses minus the intercept.
    pub fn centered_y(&self) -> Vec<f64> {
        self.y.iter().map(|v| v - self.intercept).collect()
    }

    pub fn feature_tensor(&self, i: usize, h: usize) -> DenseTensor {
        let d = self.basis_count;
        let data = self
            .sample_features(i)
            .chunks(d)
            .map(|c| c[h])
            .collect();
        DenseTensor::new(self.shape.clone(), data).expect("consistent shape")
    }
}

/// Writes the centered features of one raw sample into `out` (`P · d_n`).
pub fn featurize_sample(
    x: &[f64],
    basis: &FeatureBasis,
    scaler: &EntryScaler,
    out: &mut [f64],
) {
    let d = basis.count();
    for (pos, &v) in x.iter().enumerate() {
        let slot = &mut out[pos * d..(pos + 1) * d];
        basis.eval_into(scaler.scale(pos, v), slot);
        for (s, m) in slot.iter_mut().zip(&scaler.means[pos * d..(pos + 1) * d]) {
            *s -= m;
        }
    }
}

pub fn featurize(
    raw: &RawDataset,
    basis: &FeatureBasis,
    scaler: &EntryScaler,
) -> Result<FeaturizedDataset> {
    if raw.shape() != scaler.shape() {
        return Err(StarError::ShapeMismatch {
            expected: scaler.shape().to_vec(),
            got: raw.shape().to_vec(),
        });
    }
    if scaler.basis_count() != basis.count() {
        return Err(StarError::InvalidArgument(format!(
            "scaler fitted for {} basis functions, basis has {}",
            scaler.basis_count(),
            basis.count()
        )));
    }
    if raw.x().iter().chain(raw.y()).any(|v| !v.is_finite()) {
        return Err(StarError::NonFinite("raw dataset".into()));
    }
    let w = raw.positions() * basis.count();
    let mut features = vec![0.0; raw.n() * w];
    features
        .par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(i, out)| featurize_sample(raw.sample(i), basis, scaler, out));
    FeaturizedDataset::from_features(raw.shape().to_vec(), basis.count(), features, raw.y().to_vec())
}

/// Fits basis and scaler on `raw` and featurizes it.
pub fn prepare(
    raw: &RawDataset,
    config: &BasisConfig,
) -> Result<(FeatureBasis, EntryScaler, FeaturizedDataset)> {
    let mut scaler = EntryScaler::fit_range(raw)?;
    let basis = FeatureBasis::from_config(config, raw, &scaler)?;
    scaler.fit_means(raw, &basis);
    let data = featurize(raw, &basis, &scaler)?;
    Ok((basis, scaler, data))
}

/// Identity-basis counterpart of [`prepare`].
pub fn prepare_identity(raw: &RawDataset) -> Result<(FeatureBasis, EntryScaler, FeaturizedDataset)> {
    let basis = FeatureBasis::Identity;
    let scaler = fit_scaler(raw, &basis)?;
    let data = featurize(raw, &basis, &scaler)?;
    Ok((basis, scaler, data))
}
