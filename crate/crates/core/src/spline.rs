//! Normalized B-spline bases on `[0, 1]`.
//!
//! Basis functions are built with the Cox–de Boor recursion on a clamped
//! knot vector (boundary knots repeated `order` times). Terms of the form
//! `0/0` arising from repeated knots are taken as zero. The last knot
//! interval is closed so that `x = 1` is covered.
//!
//! The natural variant imposes zero second derivative at both boundaries by
//! projecting the raw basis onto the orthogonal complement of the boundary
//! constraint rows, which removes two degrees of freedom and keeps every
//! basis value within `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};

/// Where internal knots are placed on the scaled `[0, 1]` axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnotPlacement {
    #[default]
    Uniform,
    /// Empirical quantiles of the pooled, min-max scaled training values.
    Quantile,
}

/// Serializable description of a feature basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    BSpline {
        order: usize,
        internal_knots: Vec<f64>,
        natural: bool,
        drop_constant: bool,
    },
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    order: usize,
    internal_knots: Vec<f64>,
    natural: bool,
    drop_constant: bool,
    /// Full clamped knot vector.
    knots: Vec<f64>,
    /// Row-major `raw_count × count` projection used by the natural variant.
    transform: Option<Vec<f64>>,
    count: usize,
}

/// `q`-th order B-spline basis with `n_internal` uniform internal knots at
/// `i / (n_internal + 1)`.
pub fn build_basis(order: usize, n_internal: usize, natural: bool) -> Result<SplineBasis> {
    SplineBasis::uniform(order, n_internal, natural, false)
}

impl SplineBasis {
    pub fn uniform(
        order: usize,
        n_internal: usize,
        natural: bool,
        drop_constant: bool,
    ) -> Result<Self> {
        let knots = (1..=n_internal)
            .map(|i| i as f64 / (n_internal + 1) as f64)
            .collect();
        Self::with_knots(order, knots, natural, drop_constant)
    }

    pub fn with_knots(
        order: usize,
        internal_knots: Vec<f64>,
        natural: bool,
        drop_constant: bool,
    ) -> Result<Self> {
        if order == 0 {
            return Err(StarError::InvalidArgument("spline order must be >= 1".into()));
        }
        if natural && order < 3 {
            return Err(StarError::InvalidArgument(
                "natural boundary constraint needs order >= 3".into(),
            ));
        }
        let mut prev = 0.0;
        for &k in &internal_knots {
            if !(k > prev && k < 1.0) {
                return Err(StarError::InvalidArgument(format!(
                    "internal knots must be strictly increasing in (0,1): {internal_knots:?}"
                )));
            }
            prev = k;
        }
        let mut knots = vec![0.0; order];
        knots.extend_from_slice(&internal_knots);
        knots.extend(std::iter::repeat_n(1.0, order));

        let raw = internal_knots.len() + order;
        let kept = raw - usize::from(drop_constant);
        let mut count = kept;
        let mut transform = None;
        if natural {
            if kept < 3 {
                return Err(StarError::InvalidArgument(
                    "too few basis functions for the natural constraint".into(),
                ));
            }
            let skip = usize::from(drop_constant);
            let c0 = second_derivatives(&knots, order, 0.0);
            let c1 = second_derivatives(&knots, order, 1.0);
            let constraints = [c0[skip..].to_vec(), c1[skip..].to_vec()];
            transform = Some(null_space_basis(&constraints, kept));
            count = kept - 2;
        }
        if count == 0 {
            return Err(StarError::InvalidArgument("basis would be empty".into()));
        }
        Ok(Self {
            order,
            internal_knots,
            natural,
            drop_constant,
            knots,
            transform,
            count,
        })
    }

    pub fn from_spec(spec: &BasisSpec) -> Result<Option<Self>> {
        match spec {
            BasisSpec::BSpline {
                order,
                internal_knots,
                natural,
                drop_constant,
            } => Self::with_knots(*order, internal_knots.clone(), *natural, *drop_constant)
                .map(Some),
            BasisSpec::Identity => Ok(None),
        }
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec::BSpline {
            order: self.order,
            internal_knots: self.internal_knots.clone(),
            natural: self.natural,
            drop_constant: self.drop_constant,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn internal_knots(&self) -> &[f64] {
        &self.internal_knots
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn is_natural(&self) -> bool {
        self.natural
    }

    /// Number of basis functions `d_n`.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Support `[t_h, t_{h+q}]` of raw basis function `h`.
    pub fn raw_support(&self, h: usize) -> (f64, f64) {
        (self.knots[h], self.knots[h + self.order])
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.count];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let x = x.clamp(0.0, 1.0);
        let raw = basis_values(&self.knots, self.order, x);
        let raw = &raw[usize::from(self.drop_constant)..];
        match &self.transform {
            None => out.copy_from_slice(raw),
            Some(t) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (i, &b) in raw.iter().enumerate() {
                    if b == 0.0 {
                        continue;
                    }
                    let row = &t[i * self.count..(i + 1) * self.count];
                    for (o, &w) in out.iter_mut().zip(row) {
                        *o += b * w;
                    }
                }
            }
        }
    }
}

/// Free-function form of [`SplineBasis::eval`].
pub fn eval_basis(basis: &SplineBasis, x: f64) -> Vec<f64> {
    basis.eval(x)
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Index `i` with `t_i <= x < t_{i+1}`; the last non-empty interval is
/// closed on the right.
fn knot_interval(t: &[f64], x: f64) -> Option<usize> {
    let end = *t.last()?;
    let last = t.iter().rposition(|&k| k < end)?;
    if x >= t[last + 1] {
        return Some(last);
    }
    (0..t.len() - 1).find(|&i| t[i] <= x && x < t[i + 1])
}

/// All `t.len() − order` B-spline values of the given order at `x`.
pub(crate) fn basis_values(t: &[f64], order: usize, x: f64) -> Vec<f64> {
    let mut b = vec![0.0; t.len() - 1];
    if let Some(i) = knot_interval(t, x) {
        b[i] = 1.0;
    }
    for q in 2..=order {
        let len = t.len() - q;
        let mut next = vec![0.0; len];
        for (i, slot) in next.iter_mut().enumerate() {
            let left = ratio(x - t[i], t[i + q - 1] - t[i]) * b[i];
            let right = ratio(t[i + q] - x, t[i + q] - t[i + 1]) * b[i + 1];
            *slot = left + right;
        }
        b = next;
    }
    b
}

fn derivatives(t: &[f64], order: usize, x: f64, nderiv: usize) -> Vec<f64> {
    if nderiv == 0 {
        return basis_values(t, order, x);
    }
    let lower = derivatives(t, order - 1, x, nderiv - 1);
    let scale = (order - 1) as f64;
    (0..t.len() - order)
        .map(|i| {
            scale
                * (ratio(lower[i], t[i + order - 1] - t[i])
                    - ratio(lower[i + 1], t[i + order] - t[i + 1]))
        })
        .collect()
}

fn second_derivatives(t: &[f64], order: usize, x: f64) -> Vec<f64> {
    derivatives(t, order, x, 2)
}

/// Orthonormal basis (as a row-major `dim × (dim − rows)` matrix) of the
/// complement of the row space of `constraints`, via Householder QR of the
/// transposed constraint matrix.
fn null_space_basis(constraints: &[Vec<f64>], dim: usize) -> Vec<f64> {
    // a: dim × c, column-major copy of constraintsᵀ
    let c = constraints.len();
    let mut a: Vec<Vec<f64>> = constraints.to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(c);
    for j in 0..c {
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = vec![0.0; dim];
        if norm > 0.0 {
            let alpha = if a[j][j] >= 0.0 { -norm } else { norm };
            v[j..].copy_from_slice(&a[j][j..]);
            v[j] -= alpha;
        }
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv > 0.0 {
            for col in a.iter_mut().skip(j) {
                let dot: f64 = col.iter().zip(&v).map(|(x, y)| x * y).sum();
                let s = 2.0 * dot / vv;
                for (x, vi) in col.iter_mut().zip(&v) {
                    *x -= s * vi;
                }
            }
        }
        reflectors.push(v);
    }
    // Q = H_1 H_2 … ; columns c.. of Q are Q e_i.
    let kept = dim - c;
    let mut out = vec![0.0; dim * kept];
    for col in 0..kept {
        let mut e = vec![0.0; dim];
        e[c + col] = 1.0;
        for v in reflectors.iter().rev() {
            let vv: f64 = v.iter().map(|x| x * x).sum();
            if vv == 0.0 {
                continue;
            }
            let dot: f64 = e.iter().zip(v).map(|(x, y)| x * y).sum();
            let s = 2.0 * dot / vv;
            for (x, vi) in e.iter_mut().zip(v) {
                *x -= s * vi;
            }
        }
        for (row, &val) in e.iter().enumerate() {
            out[row * kept + col] = val;
        }
    }
    out
}
