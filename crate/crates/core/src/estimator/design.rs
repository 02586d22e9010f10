//! Per-way design matrices of the bi-convex rewrite.
//!
//! With every factor except way `k` held fixed, the prediction for sample
//! `i` is linear in `factors[k]`:
//!
//! ```text
//! F[i, (j, r, h)] = < ∘_{u≠k} β_uhr , slice_k(F_h(X_i), j) >
//! ```
//!
//! and the columns follow the bundle flattening, so `F · factors[k]` is the
//! model prediction (without intercept).

use rayon::prelude::*;

use crate::error::{Result, StarError};
use crate::features::FeaturizedDataset;
use crate::tensor::{for_each_index, CpFactorBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    way: usize,
    rows: usize,
    cols: usize,
    group_size: usize,
    /// Row-major `rows × cols`.
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_rows(way: usize, rows: usize, group_size: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || data.len() % rows != 0 {
            return Err(StarError::InvalidArgument(
                "design data length must be a positive multiple of rows".into(),
            ));
        }
        let cols = data.len() / rows;
        if group_size == 0 || cols % group_size != 0 {
            return Err(StarError::InvalidArgument(
                "columns must split into whole groups".into(),
            ));
        }
        Ok(Self {
            way,
            rows,
            cols,
            group_size,
            data,
        })
    }

    pub fn way(&self) -> usize {
        self.way
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups(&self) -> usize {
        self.cols / self.group_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.cols + c]
    }

    /// `F b`.
    pub fn matvec(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.cols);
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(b).map(|(a, x)| a * x).sum())
            .collect()
    }

    /// `Fᵀ v`.
    pub fn tmatvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &vi) in self.data.chunks(self.cols).zip(v) {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
        out
    }

    /// `FᵀF · scale`, row-major `cols × cols`.
    pub fn gram(&self, scale: f64) -> Vec<f64> {
        let (n, c) = (self.rows, self.cols);
        let mut g = vec![0.0; c * c];
        // SAFETY: pointers and strides describe the live buffers `self.data`
        // (n × c, row-major, read as its c × n transpose) and `g` (c × c).
        unsafe {
            matrixmultiply::dgemm(
                c,
                n,
                c,
                scale,
                self.data.as_ptr(),
                1,
                c as isize,
                self.data.as_ptr(),
                c as isize,
                1,
                0.0,
                g.as_mut_ptr(),
                c as isize,
                1,
            );
        }
        // exact symmetry regardless of accumulation order
        for a in 0..c {
            for b in a + 1..c {
                g[b * c + a] = g[a * c + b];
            }
        }
        g
    }
}

fn check_compatible(data: &FeaturizedDataset, bundle: &CpFactorBundle) -> Result<()> {
    if data.shape() != bundle.shape() || data.basis_count() != bundle.basis_count() {
        return Err(StarError::ShapeMismatch {
            expected: [data.shape().to_vec(), vec![data.basis_count()]].concat(),
            got: [bundle.shape().to_vec(), vec![bundle.basis_count()]].concat(),
        });
    }
    Ok(())
}

/// Builds `F^k` for `data` with every factor except way `k` taken from
/// `bundle`.
pub fn build_design(
    data: &FeaturizedDataset,
    bundle: &CpFactorBundle,
    k: usize,
) -> Result<DesignMatrix> {
    check_compatible(data, bundle)?;
    let m = bundle.ways();
    if k >= m {
        return Err(StarError::OutOfRange(format!("way {k} >= {m}")));
    }
    let rank = bundle.rank();
    let d = bundle.basis_count();
    let g = rank * d;
    let p = data.positions();
    let cols = bundle.shape()[k] * g;

    // Per position: entry index along way k and weights Π_{u≠k} β_uhr[j_u].
    let mut entry = vec![0usize; p];
    let mut weights = vec![0.0; p * g];
    for_each_index(bundle.shape(), |pos, idx| {
        entry[pos] = idx[k];
        let w = &mut weights[pos * g..(pos + 1) * g];
        for r in 0..rank {
            for h in 0..d {
                let mut prod = 1.0;
                for (u, &ju) in idx.iter().enumerate() {
                    if u != k {
                        prod *= bundle.beta(u, h, r, ju);
                    }
                }
                w[r * d + h] = prod;
            }
        }
    });

    let n = data.n();
    let mut out = vec![0.0; n * cols];
    out.par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| {
            let feats = data.sample_features(i);
            for pos in 0..p {
                let f = &feats[pos * d..(pos + 1) * d];
                let w = &weights[pos * g..(pos + 1) * g];
                let dst = &mut row[entry[pos] * g..(entry[pos] + 1) * g];
                for r in 0..rank {
                    for h in 0..d {
                        dst[r * d + h] += f[h] * w[r * d + h];
                    }
                }
            }
        });
    DesignMatrix::from_rows(k, n, g, out)
}

/// `(2/n) F^kᵀ (F^k b_k − ỹ)` with `ỹ = y − intercept`.
pub fn grad_block(
    data: &FeaturizedDataset,
    bundle: &CpFactorBundle,
    k: usize,
) -> Result<Vec<f64>> {
    let design = build_design(data, bundle, k)?;
    let fitted = design.matvec(bundle.factor(k));
    let resid: Vec<f64> = fitted
        .iter()
        .zip(data.y())
        .map(|(f, y)| f - (y - data.intercept()))
        .collect();
    let scale = 2.0 / data.n() as f64;
    Ok(design.tmatvec(&resid).into_iter().map(|v| v * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::inner_product;

    #[test]
    fn weights_collapse_to_row_sums() {
        // m=2, R=1, d=1, β_2 = ones: column j is Σ_l F[j, l]
        let shape = vec![2, 3];
        let feats: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 1.0).collect();
        let data =
            FeaturizedDataset::from_features(shape.clone(), 1, feats.clone(), vec![0.0, 1.0]).unwrap();
        let bundle =
            CpFactorBundle::new(shape, 1, 1, vec![vec![0.3, -0.2], vec![1.0; 3]]).unwrap();
        let f = build_design(&data, &bundle, 0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want: f64 = feats[i * 6 + j * 3..i * 6 + j * 3 + 3].iter().sum();
                assert!((f.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_other_factor_gives_zero_design() {
        let shape = vec![2, 2];
        let data =
            FeaturizedDataset::from_features(shape.clone(), 2, vec![1.0; 16], vec![0.0, 1.0]).unwrap();
        let bundle =
            CpFactorBundle::new(shape, 1, 2, vec![vec![1.0; 4], vec![0.0; 4]]).unwrap();
        let f = build_design(&data, &bundle, 0).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gram_matches_naive_product() {
        let f = DesignMatrix::from_rows(0, 3, 2, vec![1., 2., 0., -1., 3., 0.5, 0., 1., 2., 2., 1., 1.])
            .unwrap();
        let g = f.gram(1.0);
        for a in 0..4 {
            for b in 0..4 {
                let want: f64 = (0..3).map(|i| f.get(i, a) * f.get(i, b)).sum();
                assert!((g[a * 4 + b] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn design_route_matches_tensor_route_small() {
        let shape = vec![2, 3];
        let d = 2;
        let feats: Vec<f64> = (0..2 * 6 * d).map(|v| ((v * 7 % 11) as f64) / 5.0 - 1.0).collect();
        let data = FeaturizedDataset::from_features(shape.clone(), d, feats, vec![1.0, 2.0]).unwrap();
        let f0: Vec<f64> = (0..2 * 2 * d).map(|v| v as f64 * 0.1 - 0.3).collect();
        let f1: Vec<f64> = (0..3 * 2 * d).map(|v| 0.5 - v as f64 * 0.07).collect();
        let bundle = CpFactorBundle::new(shape, 2, d, vec![f0, f1]).unwrap();
        for k in 0..2 {
            let f = build_design(&data, &bundle, k).unwrap();
            let pred = f.matvec(bundle.factor(k));
            for (i, p) in pred.iter().enumerate() {
                let want: f64 = (0..d)
                    .map(|h| inner_product(&bundle.compose(h).unwrap(), &data.feature_tensor(i, h)).unwrap())
                    .sum();
                assert!((p - want).abs() < 1e-12);
            }
        }
    }
}
