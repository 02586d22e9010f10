//! Estimation-error diagnostic between a fitted bundle and a known truth.
//!
//! A CP bundle is only identified up to per-component scaling across ways,
//! sign flips and a permutation of the rank index, so both bundles are brought
//! to a canonical form before distances are taken.

use crate::error::Result;
use crate::tensor::CpFactorBundle;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Canonical form per `(h, r)`: every way's component gets the geometric mean
/// norm of the original components (product preserved), and ways `1..m−1`
/// have their largest-magnitude entry positive with the sign pushed into the
/// last way. Components where any way is zero become zero.
pub fn normalize(bundle: &CpFactorBundle) -> CpFactorBundle {
    let mut out = bundle.clone();
    let m = bundle.ways();
    for h in 0..bundle.basis_count() {
        for r in 0..bundle.rank() {
            let mut comps: Vec<Vec<f64>> = (0..m).map(|k| bundle.component(k, h, r)).collect();
            let norms: Vec<f64> = comps.iter().map(|c| norm(c)).collect();
            if norms.iter().any(|&v| v == 0.0) {
                for (k, c) in comps.iter().enumerate() {
                    out.set_component(k, h, r, &vec![0.0; c.len()]);
                }
                continue;
            }
            let g = (norms.iter().map(|v| v.ln()).sum::<f64>() / m as f64).exp();
            let mut sign = 1.0;
            for k in 0..m {
                let mut s = g / norms[k];
                if k + 1 < m {
                    let lead = comps[k]
                        .iter()
                        .copied()
                        .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
                    if lead < 0.0 {
                        s = -s;
                        sign = -sign;
                    }
                } else {
                    s *= sign;
                }
                comps[k].iter_mut().for_each(|v| *v *= s);
                out.set_component(k, h, r, &comps[k]);
            }
        }
    }
    out
}

fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).abs()
}

/// Rank permutation per `h`: `perm[h][s] = r` means truth rank `s` is paired
/// with estimate rank `r`. Pairs are taken greedily in decreasing `|cos|` of
/// the way-1 components; ties resolve to the lowest `(s, r)`.
fn match_ranks(est: &CpFactorBundle, truth: &CpFactorBundle) -> Vec<Vec<usize>> {
    let rank = est.rank();
    (0..est.basis_count())
        .map(|h| {
            let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(rank * rank);
            for s in 0..rank {
                let t = truth.component(0, h, s);
                for r in 0..rank {
                    pairs.push((abs_cosine(&est.component(0, h, r), &t), s, r));
                }
            }
            // stable sort keeps (s, r) order within equal similarities
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut perm = vec![usize::MAX; rank];
            let mut used = vec![false; rank];
            for (_, s, r) in pairs {
                if perm[s] == usize::MAX && !used[r] {
                    perm[s] = r;
                    used[r] = true;
                }
            }
            perm
        })
        .collect()
}

/// Returns `(aligned estimate, normalized truth)` in a common canonical form.
pub fn align(
    bundle: &CpFactorBundle,
    truth: &CpFactorBundle,
) -> Result<(CpFactorBundle, CpFactorBundle)> {
    bundle.ensure_compatible(truth)?;
    let est = normalize(bundle);
    let truth = normalize(truth);
    let perm = match_ranks(&est, &truth);
    let mut aligned = est.clone();
    for (h, p) in perm.iter().enumerate() {
        for (s, &r) in p.iter().enumerate() {
            for k in 0..est.ways() {
                aligned.set_component(k, h, s, &est.component(k, h, r));
            }
        }
    }
    Ok((aligned, truth))
}

/// `Σ_k ‖b_k − b_k*‖₂²` after canonicalizing and aligning both bundles.
pub fn estimation_error(bundle: &CpFactorBundle, truth: &CpFactorBundle) -> Result<f64> {
    let (a, t) = align(bundle, truth)?;
    a.squared_distance(&t)
}
