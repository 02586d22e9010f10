//! Dense m-way tensors and CP factor bundles.
//!
//! Storage is row-major (last index fastest). All indices in this API are
//! 0-based; entry `(j_1, ..., j_m)` lives at `Σ_k j_k · Π_{u>k} p_u`.

use std::ops::Range;

use crate::error::{Result, StarError};

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Calls `f(linear, multi_index)` for every position in row-major order.
pub fn for_each_index<F: FnMut(usize, &[usize])>(shape: &[usize], mut f: F) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for lin in 0..total {
        f(lin, &idx);
        for k in (0..shape.len()).rev() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&p| p == 0) {
            return Err(StarError::InvalidArgument(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(StarError::LengthMismatch {
                left: data.len(),
                right: expected,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_fn<F: FnMut(&[usize]) -> f64>(shape: Vec<usize>, mut f: F) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for_each_index(&shape, |_, idx| data.push(f(idx)));
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(StarError::OutOfRange(format!(
                "index {index:?} has wrong arity for shape {:?}",
                self.shape
            )));
        }
        let mut lin = 0;
        for (k, (&j, &p)) in index.iter().zip(&self.shape).enumerate() {
            if j >= p {
                return Err(StarError::OutOfRange(format!(
                    "index {j} >= {p} along way {k}"
                )));
            }
            lin = lin * p + j;
        }
        Ok(lin)
    }

    /// Inverse of [`linear_index`](Self::linear_index).
    pub fn multi_index(&self, mut linear: usize) -> Result<Vec<usize>> {
        if linear >= self.data.len() {
            return Err(StarError::OutOfRange(format!(
                "linear index {linear} >= {}",
                self.data.len()
            )));
        }
        let mut idx = vec![0; self.shape.len()];
        for k in (0..self.shape.len()).rev() {
            idx[k] = linear % self.shape[k];
            linear /= self.shape[k];
        }
        Ok(idx)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.linear_index(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let lin = self.linear_index(index)?;
        self.data[lin] = value;
        Ok(())
    }
}

/// Sum of elementwise products of two equally shaped tensors.
pub fn inner_product(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(StarError::ShapeMismatch {
            expected: a.shape.clone(),
            got: b.shape.clone(),
        });
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// The (m−1)-way tensor obtained by fixing way `k` at index `j`.
///
/// Slicing a 1-way tensor yields a single-element tensor of shape `[1]`.
pub fn mode_slice(t: &DenseTensor, k: usize, j: usize) -> Result<DenseTensor> {
    let m = t.ndim();
    if k >= m {
        return Err(StarError::OutOfRange(format!("way {k} >= {m}")));
    }
    if j >= t.shape[k] {
        return Err(StarError::OutOfRange(format!(
            "index {j} >= {} along way {k}",
            t.shape[k]
        )));
    }
    let mut out_shape: Vec<usize> = t
        .shape
        .iter()
        .enumerate()
        .filter(|&(u, _)| u != k)
        .map(|(_, &p)| p)
        .collect();
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for_each_index(&t.shape, |lin, idx| {
        if idx[k] == j {
            data.push(t.data[lin]);
        }
    });
    DenseTensor::new(out_shape, data)
}

/// Contiguous span of one group `(k, j)` within `factors[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    pub way: usize,
    pub entry: usize,
    pub span: Range<usize>,
}

/// Full CP parameter set `{β_khr}` for every way `k`, basis index `h` and
/// rank component `r`.
///
/// `factors[k]` has length `p_k · R · d_n`; `β_khr[j]` is stored at
/// `(j · R + r) · d_n + h`, so each entry `j` owns one contiguous group of
/// `R · d_n` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactorBundle {
    shape: Vec<usize>,
    rank: usize,
    basis_count: usize,
    factors: Vec<Vec<f64>>,
}

impl CpFactorBundle {
    pub fn new(
        shape: Vec<usize>,
        rank: usize,
        basis_count: usize,
        factors: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&p| p == 0) {
            return Err(StarError::InvalidArgument(format!(
                "bundle shape must be non-empty and positive, got {shape:?}"
            )));
        }
        if rank == 0 || basis_count == 0 {
            return Err(StarError::InvalidArgument(
                "rank and basis count must be positive".into(),
            ));
        }
        if factors.len() != shape.len() {
            return Err(StarError::LengthMismatch {
                left: factors.len(),
                right: shape.len(),
            });
        }
        for (k, f) in factors.iter().enumerate() {
            let want = shape[k] * rank * basis_count;
            if f.len() != want {
                return Err(StarError::LengthMismatch {
                    left: f.len(),
                    right: want,
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(StarError::NonFinite(format!("factor block {k}")));
            }
        }
        Ok(Self {
            shape,
            rank,
            basis_count,
            factors,
        })
    }

    pub fn zeros(shape: Vec<usize>, rank: usize, basis_count: usize) -> Self {
        let factors = shape
            .iter()
            .map(|&p| vec![0.0; p * rank * basis_count])
            .collect();
        Self {
            shape,
            rank,
            basis_count,
            factors,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ways(&self) -> usize {
        self.shape.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn basis_count(&self) -> usize {
        self.basis_count
    }

    pub fn group_size(&self) -> usize {
        self.rank * self.basis_count
    }

    pub fn factors(&self) -> &[Vec<f64>] {
        &self.factors
    }

    pub fn factor(&self, k: usize) -> &[f64] {
        &self.factors[k]
    }

    pub fn factor_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.factors[k]
    }

    pub fn set_factor(&mut self, k: usize, values: Vec<f64>) -> Result<()> {
        if values.len() != self.factors[k].len() {
            return Err(StarError::LengthMismatch {
                left: values.len(),
                right: self.factors[k].len(),
            });
        }
        self.factors[k] = values;
        Ok(())
    }

    #[inline]
    pub fn offset(&self, j: usize, r: usize, h: usize) -> usize {
        (j * self.rank + r) * self.basis_count + h
    }

    #[inline]
    pub fn beta(&self, k: usize, h: usize, r: usize, j: usize) -> f64 {
        self.factors[k][self.offset(j, r, h)]
    }

    /// The vector `β_khr ∈ R^{p_k}`.
    pub fn component(&self, k: usize, h: usize, r: usize) -> Vec<f64> {
        (0..self.shape[k]).map(|j| self.beta(k, h, r, j)).collect()
    }

    pub fn set_component(&mut self, k: usize, h: usize, r: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.shape[k]);
        for (j, &v) in values.iter().enumerate() {
            let o = self.offset(j, r, h);
            self.factors[k][o] = v;
        }
    }

    pub fn group_span(&self, j: usize) -> Range<usize> {
        let g = self.group_size();
        j * g..(j + 1) * g
    }

    pub fn groups(&self, k: usize) -> impl Iterator<Item = GroupIndex> + '_ {
        (0..self.shape[k]).map(move |j| GroupIndex {
            way: k,
            entry: j,
            span: self.group_span(j),
        })
    }

    pub fn group_norm(&self, k: usize, j: usize) -> f64 {
        self.factors[k][self.group_span(j)]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Entries `j` of way `k` whose group is not identically zero.
    pub fn active_set(&self, k: usize) -> Vec<usize> {
        (0..self.shape[k])
            .filter(|&j| self.group_norm(k, j) > 0.0)
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.factors.iter().all(|f| f.iter().all(|&v| v == 0.0))
    }

    /// Checks that `(m, R, d_n, shape)` agree.
    pub fn ensure_compatible(&self, other: &CpFactorBundle) -> Result<()> {
        if self.shape != other.shape
            || self.rank != other.rank
            || self.basis_count != other.basis_count
        {
            return Err(StarError::ShapeMismatch {
                expected: [self.shape.clone(), vec![self.rank, self.basis_count]].concat(),
                got: [other.shape.clone(), vec![other.rank, other.basis_count]].concat(),
            });
        }
        Ok(())
    }

    /// `B_h = Σ_r β_1hr ∘ … ∘ β_mhr`.
    pub fn compose(&self, h: usize) -> Result<DenseTensor> {
        if h >= self.basis_count {
            return Err(StarError::OutOfRange(format!(
                "basis index {h} >= {}",
                self.basis_count
            )));
        }
        let m = self.ways();
        let mut data = Vec::with_capacity(self.shape.iter().product());
        for_each_index(&self.shape, |_, idx| {
            let mut acc = 0.0;
            for r in 0..self.rank {
                let mut prod = 1.0;
                for k in 0..m {
                    prod *= self.beta(k, h, r, idx[k]);
                    if prod == 0.0 {
                        break;
                    }
                }
                acc += prod;
            }
            data.push(acc);
        });
        DenseTensor::new(self.shape.clone(), data)
    }

    /// All composed coefficient tensors `B_1 … B_{d_n}`.
    pub fn compose_all(&self) -> Vec<DenseTensor> {
        (0..self.basis_count)
            .map(|h| self.compose(h).expect("h in range"))
            .collect()
    }

    /// Sum over ways of squared Euclidean distances, without alignment.
    pub fn squared_distance(&self, other: &CpFactorBundle) -> Result<f64> {
        self.ensure_compatible(other)?;
        Ok(self
            .factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .sum())
    }
}

/// Free-function form of [`CpFactorBundle::compose`].
pub fn cp_compose(bundle: &CpFactorBundle, h: usize) -> Result<DenseTensor> {
    bundle.compose(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t2(rows: &[[f64; 2]; 2]) -> DenseTensor {
        DenseTensor::new(vec![2, 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let ones = DenseTensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(inner_product(&ones, &ones).unwrap(), 4.0);
        let zeros = DenseTensor::zeros(vec![2, 2]);
        let a = t2(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(inner_product(&a, &zeros).unwrap(), 0.0);
        let b = t2(&[[5.0, 6.0], [7.0, 8.0]]);
        assert_eq!(inner_product(&a, &b).unwrap(), 70.0);
    }

    #[test]
    fn inner_product_rejects_shape_mismatch() {
        let a = DenseTensor::zeros(vec![2, 2]);
        let b = DenseTensor::zeros(vec![4]);
        assert!(matches!(
            inner_product(&a, &b),
            Err(StarError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn compose_examples() {
        let b = CpFactorBundle::new(vec![2, 2], 1, 1, vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(b.compose(0).unwrap().data(), &[1.0; 4]);

        let zero_first =
            CpFactorBundle::new(vec![2, 2], 1, 1, vec![vec![0.0, 0.0], vec![3.0, -1.0]]).unwrap();
        assert!(zero_first.compose(0).unwrap().data().iter().all(|&v| v == 0.0));

        // β_{1h1}=(1,0), β_{2h1}=(0,1), β_{1h2}=(0,1), β_{2h2}=(1,0)
        let mut two = CpFactorBundle::zeros(vec![2, 2], 2, 1);
        two.set_component(0, 0, 0, &[1.0, 0.0]);
        two.set_component(1, 0, 0, &[0.0, 1.0]);
        two.set_component(0, 0, 1, &[0.0, 1.0]);
        two.set_component(1, 0, 1, &[1.0, 0.0]);
        assert_eq!(two.compose(0).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);

        assert!(matches!(two.compose(1), Err(StarError::OutOfRange(_))));
    }

    #[test]
    fn mode_slice_examples() {
        let eye = t2(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(mode_slice(&eye, 0, 0).unwrap().data(), &[1.0, 0.0]);

        let cube = DenseTensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        let s = mode_slice(&cube, 2, 1).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[1.0; 4]);

        let t = t2(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(mode_slice(&t, 1, 1).unwrap().data(), &[2.0, 4.0]);

        assert!(mode_slice(&t, 2, 0).is_err());
        assert!(mode_slice(&t, 0, 2).is_err());
    }

    #[test]
    fn flattening_matches_documented_layout() {
        let mut b = CpFactorBundle::zeros(vec![3, 2], 2, 4);
        b.factor_mut(0)[((2 * 2) + 1) * 4 + 3] = 7.0;
        assert_eq!(b.beta(0, 3, 1, 2), 7.0);
        let spans: Vec<_> = b.groups(0).map(|g| g.span).collect();
        assert_eq!(spans, vec![0..8, 8..16, 16..24]);
        assert_eq!(b.active_set(0), vec![2]);
    }

    #[test]
    fn new_rejects_bad_factors() {
        assert!(CpFactorBundle::new(vec![2], 1, 1, vec![vec![1.0]]).is_err());
        assert!(CpFactorBundle::new(vec![2], 1, 1, vec![vec![1.0, f64::NAN]]).is_err());
        assert!(DenseTensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    fn arb_shape() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..4)
    }

    proptest! {
        #[test]
        fn linear_index_round_trip(shape in arb_shape(), seed in 0usize..1000) {
            let t = DenseTensor::from_fn(shape.clone(), |idx| idx.iter().sum::<usize>() as f64);
            let lin = seed % t.len();
            let idx = t.multi_index(lin).unwrap();
            prop_assert_eq!(t.linear_index(&idx).unwrap(), lin);
            let mut copy = DenseTensor::zeros(shape);
            for l in 0..t.len() {
                let i = t.multi_index(l).unwrap();
                copy.set(&i, t.get(&i).unwrap()).unwrap();
            }
            prop_assert_eq!(copy, t);
        }

        #[test]
        fn compose_is_linear_in_each_block(
            shape in prop::collection::vec(1usize..4, 2..4),
            vals in prop::collection::vec(-2.0f64..2.0, 64),
            c in -3.0f64..3.0,
        ) {
            let rank = 2;
            let mut it = vals.iter().cycle();
            let factors: Vec<Vec<f64>> = shape
                .iter()
                .map(|&p| (0..p * rank).map(|_| *it.next().unwrap()).collect())
                .collect();
            let b = CpFactorBundle::new(shape.clone(), rank, 1, factors).unwrap();
            // scale rank-1 component of way 0 by c
            let mut scaled = b.clone();
            let comp: Vec<f64> = b.component(0, 0, 1).iter().map(|v| v * c).collect();
            scaled.set_component(0, 0, 1, &comp);
            let mut only_r1 = b.clone();
            only_r1.set_component(0, 0, 0, &vec![0.0; shape[0]]);
            let full = b.compose(0).unwrap();
            let part = only_r1.compose(0).unwrap();
            let got = scaled.compose(0).unwrap();
            for i in 0..full.len() {
                let want = full.data()[i] + (c - 1.0) * part.data()[i];
                prop_assert!((got.data()[i] - want).abs() < 1e-10);
            }
        }
    }
}
