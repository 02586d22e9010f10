//! Block subproblem: `min_b (1/n)‖ỹ − F b‖² + pen(b)`.
//!
//! Solved with accelerated proximal gradient (FISTA with function-value
//! restart) on the Gram form `bᵀGb − 2cᵀb`, `G = FᵀF/n`, `c = Fᵀỹ/n`.
//! The step is `1/L` with `L = 2σ_max(G)` from power iteration, and the
//! iteration stops once the KKT residual of every group is within `tol`.

use super::design::DesignMatrix;

/// Separable penalty over contiguous, equally sized coefficient groups.
pub trait BlockPenalty: Sync {
    fn value(&self, b: &[f64], group_size: usize) -> f64;

    /// Proximal map of `step · pen` evaluated at `v`, written into `out`.
    fn prox(&self, v: &[f64], step: f64, group_size: usize, out: &mut [f64]);

    /// Optimality violation of one group given the smooth-part gradient.
    fn group_residual(&self, b: &[f64], grad: &[f64]) -> f64;
}

/// `λ Σ_g ‖b_g‖₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupLasso {
    pub lambda: f64,
}

/// `α ‖b‖₂²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ridge {
    pub alpha: f64,
}

/// Dot product with independent partial sums so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Groupwise soft-thresholding: each group `v_g` becomes
/// `max(0, 1 − τ/‖v_g‖) · v_g`.
pub fn group_prox(v: &[f64], tau: f64, group_size: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    group_prox_into(v, tau, group_size, &mut out);
    out
}

fn group_prox_into(v: &[f64], tau: f64, group_size: usize, out: &mut [f64]) {
    for (src, dst) in v.chunks(group_size).zip(out.chunks_mut(group_size)) {
        let nv = norm(src);
        if nv <= tau {
            dst.iter_mut().for_each(|x| *x = 0.0);
        } else {
            let s = 1.0 - tau / nv;
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = s * x;
            }
        }
    }
}

impl BlockPenalty for GroupLasso {
    fn value(&self, b: &[f64], group_size: usize) -> f64 {
        self.lambda * b.chunks(group_size).map(norm).sum::<f64>()
    }

    fn prox(&self, v: &[f64], step: f64, group_size: usize, out: &mut [f64]) {
        group_prox_into(v, step * self.lambda, group_size, out);
    }

    fn group_residual(&self, b: &[f64], grad: &[f64]) -> f64 {
        let nb = norm(b);
        if nb > 0.0 {
            grad.iter()
                .zip(b)
                .map(|(g, x)| {
                    let r = g + self.lambda * x / nb;
                    r * r
                })
                .sum::<f64>()
                .sqrt()
        } else {
            (norm(grad) - self.lambda).max(0.0)
        }
    }
}

impl BlockPenalty for Ridge {
    fn value(&self, b: &[f64], _group_size: usize) -> f64 {
        self.alpha * b.iter().map(|x| x * x).sum::<f64>()
    }

    fn prox(&self, v: &[f64], step: f64, _group_size: usize, out: &mut [f64]) {
        let s = 1.0 / (1.0 + 2.0 * step * self.alpha);
        for (o, &x) in out.iter_mut().zip(v) {
            *o = s * x;
        }
    }

    fn group_residual(&self, b: &[f64], grad: &[f64]) -> f64 {
        grad.iter()
            .zip(b)
            .map(|(g, x)| {
                let r = g + 2.0 * self.alpha * x;
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Inflation of the power-iteration eigenvalue, which approaches the top
/// eigenvalue from below.
const LIPSCHITZ_MARGIN: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest per-group KKT violation at `coef`.
    pub kkt_residual: f64,
}

/// Quadratic block problem in Gram form.
#[derive(Debug, Clone)]
pub struct BlockProblem {
    cols: usize,
    group_size: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    degenerate: Vec<bool>,
}

impl BlockProblem {
    pub fn new(design: &DesignMatrix, y_centered: &[f64]) -> Self {
        let n = design.rows() as f64;
        let gram = design.gram(1.0 / n);
        let rhs: Vec<f64> = design
            .tmatvec(y_centered)
            .into_iter()
            .map(|v| v / n)
            .collect();
        let cols = design.cols();
        let gs = design.group_size();
        let degenerate = (0..design.groups())
            .map(|g| (g * gs..(g + 1) * gs).all(|c| gram[c * cols + c] == 0.0))
            .collect();
        Self {
            cols,
            group_size: gs,
            gram,
            rhs,
            degenerate,
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_degenerate(&self, group: usize) -> bool {
        self.degenerate[group]
    }

    pub fn mean_diagonal(&self) -> f64 {
        (0..self.cols).map(|c| self.gram[c * self.cols + c]).sum::<f64>() / self.cols as f64
    }

    fn gram_times(&self, x: &[f64], out: &mut [f64]) {
        let c = self.cols;
        for (o, row) in out.iter_mut().zip(self.gram.chunks(c)) {
            *o = dot(row, x);
        }
    }

    /// `max_g ‖(2/n) F_gᵀ ỹ‖₂`, the smallest group-lasso level with a zero
    /// solution.
    pub fn lambda_max(&self) -> f64 {
        self.rhs
            .chunks(self.group_size)
            .map(|g| 2.0 * norm(g))
            .fold(0.0, f64::max)
    }

    /// Largest eigenvalue of `G` by power iteration.
    pub fn max_eigenvalue(&self) -> f64 {
        let c = self.cols;
        if c == 0 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..c).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut w = vec![0.0; c];
        let mut est = 0.0;
        for _ in 0..500 {
            self.gram_times(&v, &mut w);
            let nw = norm(&w);
            if nw == 0.0 {
                return 0.0;
            }
            let next = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            w.iter_mut().for_each(|x| *x /= nw);
            std::mem::swap(&mut v, &mut w);
            if (next - est).abs() <= 1e-7 * next.abs() {
                return next.max(nw);
            }
            est = next.max(nw);
        }
        est
    }

    /// Smooth part without the constant `ỹᵀỹ/n`: `bᵀGb − 2cᵀb`, given `Gb`.
    fn smooth_value(&self, b: &[f64], gb: &[f64]) -> f64 {
        b.iter()
            .zip(gb)
            .zip(&self.rhs)
            .map(|((x, g), c)| x * g - 2.0 * c * x)
            .sum()
    }

    fn gradient(&self, gb: &[f64], out: &mut [f64]) {
        for ((o, g), c) in out.iter_mut().zip(gb).zip(&self.rhs) {
            *o = 2.0 * (g - c);
        }
    }

    fn kkt<P: BlockPenalty + ?Sized>(&self, penalty: &P, b: &[f64], grad: &[f64]) -> f64 {
        let gs = self.group_size;
        b.chunks(gs)
            .zip(grad.chunks(gs))
            .enumerate()
            .filter(|(g, _)| !self.degenerate[*g])
            .map(|(_, (bg, gg))| penalty.group_residual(bg, gg))
            .fold(0.0, f64::max)
    }

    fn zero_degenerate(&self, b: &mut [f64]) {
        let gs = self.group_size;
        for (g, chunk) in b.chunks_mut(gs).enumerate() {
            if self.degenerate[g] {
                chunk.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn solve<P: BlockPenalty + ?Sized>(
        &self,
        penalty: &P,
        warm: &[f64],
        options: SolverOptions,
    ) -> BlockSolution {
        let c = self.cols;
        let gs = self.group_size;
        let mut x = warm.to_vec();
        self.zero_degenerate(&mut x);

        let lipschitz = 2.0 * self.max_eigenvalue() * LIPSCHITZ_MARGIN;
        if lipschitz == 0.0 {
            return BlockSolution {
                coef: vec![0.0; c],
                iterations: 0,
                converged: true,
                kkt_residual: 0.0,
            };
        }
        let step = 1.0 / lipschitz;

        let mut gx = vec![0.0; c];
        self.gram_times(&x, &mut gx);
        let mut grad = vec![0.0; c];
        self.gradient(&gx, &mut grad);
        let mut kkt = self.kkt(penalty, &x, &grad);
        let mut fx = self.smooth_value(&x, &gx) + penalty.value(&x, gs);
        if kkt <= options.tol {
            return BlockSolution {
                coef: x,
                iterations: 0,
                converged: true,
                kkt_residual: kkt,
            };
        }

        let mut best = (fx, x.clone(), kkt);
        let mut y = x.clone();
        let mut gy = gx.clone();
        let mut t = 1.0f64;
        let mut trial = vec![0.0; c];
        let mut x_new = vec![0.0; c];
        let mut gx_new = vec![0.0; c];

        for it in 1..=options.max_iter {
            self.gradient(&gy, &mut grad);
            for ((tv, yv), gv) in trial.iter_mut().zip(&y).zip(&grad) {
                *tv = yv - step * gv;
            }
            penalty.prox(&trial, step, gs, &mut x_new);
            self.zero_degenerate(&mut x_new);
            self.gram_times(&x_new, &mut gx_new);
            self.gradient(&gx_new, &mut grad);
            kkt = self.kkt(penalty, &x_new, &grad);
            let f_new = self.smooth_value(&x_new, &gx_new) + penalty.value(&x_new, gs);

            if f_new < best.0 || (f_new == best.0 && kkt < best.2) {
                best = (f_new, x_new.clone(), kkt);
            }
            if kkt <= options.tol {
                return BlockSolution {
                    coef: x_new,
                    iterations: it,
                    converged: true,
                    kkt_residual: kkt,
                };
            }

            if f_new > fx {
                // restart momentum
                t = 1.0;
                y.copy_from_slice(&x_new);
                gy.copy_from_slice(&gx_new);
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let beta = (t - 1.0) / t_next;
                for i in 0..c {
                    y[i] = x_new[i] + beta * (x_new[i] - x[i]);
                    gy[i] = gx_new[i] + beta * (gx_new[i] - gx[i]);
                }
                t = t_next;
            }
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut gx, &mut gx_new);
            fx = f_new;
        }

        BlockSolution {
            coef: best.1,
            iterations: options.max_iter,
            converged: false,
            kkt_residual: best.2,
        }
    }
}

/// Solves one block from an explicit design matrix.
pub fn solve_block<P: BlockPenalty + ?Sized>(
    design: &DesignMatrix,
    y_centered: &[f64],
    penalty: &P,
    warm: &[f64],
    options: SolverOptions,
) -> BlockSolution {
    BlockProblem::new(design, y_centered).solve(penalty, warm, options)
}
