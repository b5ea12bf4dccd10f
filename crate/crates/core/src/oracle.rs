//! Brute-force dense references for tests.
//!
//! Everything here materializes full `n × n` matrices and inverts them with a
//! private Gauss-Jordan routine, so none of it shares code paths with the fast
//! Kronecker-factored implementations it checks. Sizes are capped at
//! [`ORACLE_MAX_PARAMS`] parameters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dense_kron, Matrix};
use crate::network::{self, Architecture, BnMode, Gradients, Params};
use crate::precond::BlockMode;
use crate::stats::{CovMode, CovState};

pub const ORACLE_MAX_PARAMS: usize = 2000;

fn check_cap(n: usize) -> Result<()> {
    if n > ORACLE_MAX_PARAMS {
        return Err(Error::Size(format!(
            "oracle needs a dense {n}x{n} matrix, cap is {ORACLE_MAX_PARAMS}"
        )));
    }
    Ok(())
}

/// Layer sizes recovered from the diagonal factors: `(rows of W_l, cols of W_l)`.
fn layer_shapes(cov: &CovState) -> Vec<(usize, usize)> {
    (0..cov.num_layers())
        .map(|l| (cov.g_diag(l).rows(), cov.a_diag(l).rows()))
        .collect()
}

fn offsets(shapes: &[(usize, usize)]) -> (Vec<usize>, usize) {
    let mut off = Vec::with_capacity(shapes.len());
    let mut n = 0;
    for &(r, c) in shapes {
        off.push(n);
        n += r * c;
    }
    (off, n)
}

fn paste(dst: &mut Matrix, r0: usize, c0: usize, src: &Matrix) {
    for i in 0..src.rows() {
        for j in 0..src.cols() {
            dst[(r0 + i, c0 + j)] = src[(i, j)];
        }
    }
}

/// The full approximate Fisher with block `(l, m)` equal to `Ā_{l,m} ⊗ G_{l,m}`.
///
/// Untracked cross pairs (diagonal mode) are zero; upper blocks are transposes
/// of the stored lower ones.
pub fn dense_ftilde(cov: &CovState) -> Result<Matrix> {
    let shapes = layer_shapes(cov);
    let (off, n) = offsets(&shapes);
    check_cap(n)?;
    let mut f = Matrix::zeros(n, n);
    for l in 0..shapes.len() {
        for m in 0..=l {
            if let (Some(a), Some(g)) = (cov.a_pair(l, m), cov.g_pair(l, m)) {
                let block = dense_kron(a, g)?;
                paste(&mut f, off[l], off[m], &block);
                if l != m {
                    paste(&mut f, off[m], off[l], &block.transpose());
                }
            }
        }
    }
    Ok(f)
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn dense_inverse(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::dim("dense_inverse", format!("{}x{} is not square", a.rows(), a.cols())));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut inv = Matrix::identity(n);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .expect("non-empty range");
        if m[(pivot, col)].abs() <= 1e-14 * scale {
            return Err(Error::Numerical(format!("dense_inverse: singular at column {col} of {n}")));
        }
        for j in 0..n {
            let (p, c) = (m[(pivot, j)], m[(col, j)]);
            m[(pivot, j)] = c;
            m[(col, j)] = p;
            let (p, c) = (inv[(pivot, j)], inv[(col, j)]);
            inv[(pivot, j)] = c;
            inv[(col, j)] = p;
        }
        let d = m[(col, col)];
        for j in 0..n {
            m[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = m[(i, col)];
            if f != 0.0 {
                for j in 0..n {
                    m[(i, j)] -= f * m[(col, j)];
                    inv[(i, j)] -= f * inv[(col, j)];
                }
            }
        }
    }
    Ok(inv)
}

/// The 0/1 matrix selecting layer `l`'s parameters out of the flat vector.
pub fn restriction_v(cov: &CovState, l: usize) -> Matrix {
    let shapes = layer_shapes(cov);
    let (off, n) = offsets(&shapes);
    let nl = shapes[l].0 * shapes[l].1;
    Matrix::from_fn(nl, n, |i, j| if j == off[l] + i { 1.0 } else { 0.0 })
}

/// The `L × n` 0/1 matrix whose row `l` marks layer `l`'s parameters.
pub fn restriction_z(cov: &CovState) -> Matrix {
    let shapes = layer_shapes(cov);
    let (off, n) = offsets(&shapes);
    Matrix::from_fn(shapes.len(), n, |l, j| {
        let (r, c) = shapes[l];
        if j >= off[l] && j < off[l] + r * c {
            1.0
        } else {
            0.0
        }
    })
}

/// Dense damped inverse of one diagonal block, in the form the given mode approximates.
fn dense_block_inverse(a: &Matrix, g: &Matrix, lambda: f64, mode: BlockMode) -> Result<Matrix> {
    let damped = match mode {
        BlockMode::Eigendecomposition => dense_kron(a, g)?.add_diag(lambda),
        BlockMode::FactoredTikhonov => {
            let ta = a.trace() / a.rows() as f64;
            let tg = g.trace() / g.rows() as f64;
            let pi = (ta / tg).sqrt();
            let s = lambda.sqrt();
            dense_kron(&a.add_diag(pi * s), &g.add_diag(s / pi))?
        }
    };
    dense_inverse(&damped)
}

/// `Σ_l V_lᵀ (F̃_{l,l} + λI)⁻¹ V_l + Zᵀ (Z F̃ Zᵀ + λI)⁻¹ Z` with explicit 0/1 restrictions.
///
/// With `coarse = false` only the block-diagonal sum is returned. The coarse
/// part needs cross factors, i.e. a covariance state in full mode.
pub fn dense_two_level_operator(cov: &CovState, lambda: f64, mode: BlockMode, coarse: bool) -> Result<Matrix> {
    let shapes = layer_shapes(cov);
    let (_, n) = offsets(&shapes);
    check_cap(n)?;
    let mut op = Matrix::zeros(n, n);
    for l in 0..shapes.len() {
        let v = restriction_v(cov, l);
        let inv = dense_block_inverse(cov.a_diag(l), cov.g_diag(l), lambda, mode)?;
        op = op.add(&v.transpose_matmul(&inv.matmul(&v)?)?)?;
    }
    if coarse {
        if cov.mode() != CovMode::Full {
            return Err(Error::State("coarse operator needs covariance state in full mode".into()));
        }
        let z = restriction_z(cov);
        let f = dense_ftilde(cov)?;
        let fc = z.matmul(&f)?.matmul_transpose(&z)?.add_diag(lambda);
        let term = z.transpose_matmul(&dense_inverse(&fc)?.matmul(&z)?)?;
        op = op.add(&term)?;
    }
    Ok(op)
}

/// Coarse entry as the explicit sum of every entry of the materialized block.
pub fn coarse_entry_block_sum(a: &Matrix, g: &Matrix) -> Result<f64> {
    Ok(dense_kron(a, g)?.sum())
}

/// Coarse entry as `Σ (G · 𝟙 · Ā)`, with the ones matrix sized so the chain conforms.
pub fn coarse_entry_chain(a: &Matrix, g: &Matrix) -> Result<f64> {
    let ones = Matrix::from_fn(g.cols(), a.rows(), |_, _| 1.0);
    Ok(g.matmul(&ones)?.matmul(a)?.sum())
}

/// Coarse entry as `Σ (G · 𝟙 · Āᵀ)`; the same value, since transposing Ā keeps its entry sum.
pub fn coarse_entry_chain_transposed(a: &Matrix, g: &Matrix) -> Result<f64> {
    let at = a.transpose();
    let ones = Matrix::from_fn(g.cols(), at.rows(), |_, _| 1.0);
    Ok(g.matmul(&ones)?.matmul(&at)?.sum())
}

/// Coarse Fisher built entry by entry from `entry`, mirrored into the upper triangle.
pub fn coarse_by(cov: &CovState, entry: impl Fn(&Matrix, &Matrix) -> Result<f64>) -> Result<Matrix> {
    let l_count = cov.num_layers();
    let mut f = Matrix::zeros(l_count, l_count);
    for l in 0..l_count {
        for m in 0..=l {
            let (a, g) = cov
                .a_pair(l, m)
                .zip(cov.g_pair(l, m))
                .ok_or_else(|| Error::State(format!("missing covariance pair ({l}, {m})")))?;
            let v = entry(a, g)?;
            f[(l, m)] = v;
            f[(m, l)] = v;
        }
    }
    Ok(f)
}

/// Central differences (fourth-order stencil) of the training-mode mean loss over every weight and BN parameter.
pub fn fd_gradient(arch: &Architecture, params: &Params, x: &Matrix, y: &Matrix, step: f64) -> Result<Gradients> {
    if !(1e-6..=1e-3).contains(&step) {
        return Err(Error::config("step", format!("must lie in [1e-6, 1e-3], got {step}")));
    }
    let loss_at = |p: &Params| -> Result<f64> {
        let (out, _) = network::forward(arch, p, x, BnMode::Train)?;
        network::loss(arch, &out, y)
    };
    // Fourth-order stencil: BN on narrow layers has large third derivatives,
    // which the plain two-point rule turns into ~1e-5 relative error.
    let central = |perturb: &dyn Fn(&mut Params, f64)| -> Result<f64> {
        let at = |h: f64| -> Result<f64> {
            let mut p = params.clone();
            perturb(&mut p, h);
            loss_at(&p)
        };
        Ok((8.0 * (at(step)? - at(-step)?) - (at(2.0 * step)? - at(-2.0 * step)?)) / (12.0 * step))
    };

    let mut weights = network::GradVec::zeros_like(arch);
    for l in 0..arch.num_layers() {
        let (r, c) = arch.weight_shape(l);
        for i in 0..r {
            for j in 0..c {
                weights.layers[l][(i, j)] = central(&|p, h| p.weights[l][(i, j)] += h)?;
            }
        }
    }
    let mut bn = Vec::with_capacity(arch.num_layers());
    for (l, slot) in params.bn.iter().enumerate() {
        bn.push(match slot {
            None => None,
            Some(p) => {
                let w = p.gamma.len();
                let mut gamma = vec![0.0; w];
                let mut beta = vec![0.0; w];
                for k in 0..w {
                    gamma[k] = central(&|q, h| q.bn[l].as_mut().expect("bn layer").gamma[k] += h)?;
                    beta[k] = central(&|q, h| q.bn[l].as_mut().expect("bn layer").beta[k] += h)?;
                }
                Some(network::BnGrad { gamma, beta })
            }
        });
    }
    Ok(Gradients { weights, bn })
}

/// Jacobian `∂f(x)/∂θ` (`d_out × n`) of an eval-mode network at a single input, by central differences.
///
/// Exact up to rounding when the output is affine in each individual weight,
/// as it is for linear networks.
pub fn output_jacobian(arch: &Architecture, params: &Params, x: &[f64], step: f64) -> Result<Matrix> {
    let n = arch.num_params();
    check_cap(n)?;
    let xm = Matrix::from_col_vec(x.len(), 1, x)?;
    let theta = params.theta();
    let mut jac = Matrix::zeros(arch.output_dim(), n);
    let mut p = params.clone();
    for k in 0..n {
        let mut t = theta.clone();
        t[k] += step;
        p.set_theta(&t)?;
        let (plus, _) = network::forward(arch, &p, &xm, BnMode::Eval)?;
        t[k] -= 2.0 * step;
        p.set_theta(&t)?;
        let (minus, _) = network::forward(arch, &p, &xm, BnMode::Eval)?;
        for o in 0..arch.output_dim() {
            jac[(o, k)] = (plus[(o, 0)] - minus[(o, 0)]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Exact Gauss-Newton `E_x[JᵀJ]` over the columns of `x`; for MSE this is the true Fisher.
pub fn exact_gauss_newton(arch: &Architecture, params: &Params, x: &Matrix, step: f64) -> Result<Matrix> {
    let n = arch.num_params();
    let mut acc = Matrix::zeros(n, n);
    for b in 0..x.cols() {
        let j = output_jacobian(arch, params, &x.column(b), step)?;
        acc = acc.add(&j.transpose_matmul(&j)?)?;
    }
    Ok(acc.scale(1.0 / x.cols() as f64))
}

/// Monte-Carlo estimate of the Fisher over weights, with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct McFisher {
    pub mean: Matrix,
    pub std_err: Matrix,
    pub samples: usize,
}

/// Averages outer products of single-sample gradients with model-sampled labels.
///
/// Each sample picks an input column of `x` uniformly at random.
pub fn mc_fisher<R: Rng + ?Sized>(
    arch: &Architecture,
    params: &Params,
    x: &Matrix,
    samples: usize,
    rng: &mut R,
) -> Result<McFisher> {
    let n = arch.num_params();
    check_cap(n)?;
    if samples < 2 {
        return Err(Error::config("samples", "need at least 2 samples for a standard error"));
    }
    let mut sum = vec![0.0; n * n];
    let mut sum_sq = vec![0.0; n * n];
    for _ in 0..samples {
        let b = rng.random_range(0..x.cols());
        let xb = Matrix::from_col_vec(x.rows(), 1, &x.column(b))?;
        let (out, mut cache) = network::forward(arch, params, &xb, BnMode::Eval)?;
        let label = network::sample_labels(arch, &out, rng);
        let g = network::backward(arch, params, &mut cache, &label)?.weights.flatten();
        for i in 0..n {
            for j in 0..n {
                let v = g[i] * g[j];
                sum[i * n + j] += v;
                sum_sq[i * n + j] += v * v;
            }
        }
    }
    let s = samples as f64;
    let mean = Matrix::new(n, n, sum.iter().map(|v| v / s).collect())?;
    let std_err = Matrix::new(
        n,
        n,
        sum.iter()
            .zip(&sum_sq)
            .map(|(m, q)| {
                let mu = m / s;
                ((q / s - mu * mu).max(0.0) * s / (s - 1.0) / s).sqrt()
            })
            .collect(),
    )?;
    Ok(McFisher { mean, std_err, samples })
}
