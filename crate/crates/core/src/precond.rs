//! One-level and two-level K-FAC preconditioners.
//!
//! The one-level preconditioner inverts each damped diagonal block
//! `Ā_{l,l} ⊗ G_{l,l} + λI` independently, either exactly through the
//! eigendecompositions of both factors or approximately through factored
//! Tikhonov damping `(Ā + πλ^½ I) ⊗ (G + π⁻¹λ^½ I)`.
//!
//! The two-level preconditioner adds a coarse correction `Zᵀ (F_c + λI)⁻¹ Z g`
//! where `Z` sums the gradient entries of each layer and `F_c = Z F̃ Zᵀ` is the
//! `L × L` coarse Fisher. Entry `(l, m)` of `F_c` is the sum of all entries of
//! `Ā_{l,m} ⊗ G_{l,m}`, computed as `(Σ Ā_{l,m})(Σ G_{l,m})` without forming the
//! Kronecker product. Neither `Z` nor the per-layer restrictions are
//! materialized: they are segment sums and broadcasts over the layer layout.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron_elem_sum, sym_eig, Cholesky, Matrix, SymEig};
use crate::network::GradVec;
use crate::stats::{CovMode, CovState};

/// Eigenvalues below this are treated as evidence of a broken factor.
pub const NEGATIVE_EIG_TOL: f64 = -1e-8;

/// Multiple of λ added to the coarse system when its first factorization fails.
pub const COARSE_RETRY_SHIFT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMode {
    /// Exact damped inverse through factor eigendecompositions.
    #[serde(alias = "eig")]
    Eigendecomposition,
    /// Factored Tikhonov approximation with trace-balanced π.
    #[serde(alias = "tikhonov")]
    FactoredTikhonov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingConfig {
    pub lambda: f64,
    pub mode: BlockMode,
}

impl DampingConfig {
    pub fn new(lambda: f64, mode: BlockMode) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::config("damping", format!("must be a finite value > 0, got {lambda}")));
        }
        Ok(Self { lambda, mode })
    }
}

/// Damped Kronecker factors of one layer in factored Tikhonov form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TikhonovFactors {
    pub pi: f64,
    /// Cholesky of `Ā + π λ^½ I`.
    pub a: Cholesky,
    /// Cholesky of `G + π⁻¹ λ^½ I`.
    pub g: Cholesky,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerInverse {
    Eig { a: SymEig, g: SymEig, lambda: f64 },
    Tikhonov(TikhonovFactors),
}

impl LayerInverse {
    pub fn apply(&self, grad: &Matrix) -> Result<Matrix> {
        match self {
            LayerInverse::Eig { a, g, lambda } => apply_block_eig(grad, a, g, *lambda),
            LayerInverse::Tikhonov(f) => apply_block_tikhonov(grad, f),
        }
    }
}

/// Per-layer inverses of the damped diagonal blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInverse {
    pub layers: Vec<LayerInverse>,
}

impl BlockInverse {
    /// One-level K-FAC direction: each layer's gradient through its own block inverse.
    pub fn apply(&self, grad: &GradVec) -> Result<GradVec> {
        if grad.num_layers() != self.layers.len() {
            return Err(Error::dim(
                "BlockInverse::apply",
                format!("{} block inverses, gradient has {} layers", self.layers.len(), grad.num_layers()),
            ));
        }
        let layers = self
            .layers
            .iter()
            .zip(&grad.layers)
            .map(|(inv, g)| inv.apply(g))
            .collect::<Result<_>>()?;
        Ok(GradVec { layers })
    }
}

/// `π = sqrt( (tr Ā / dim Ā) / (tr G / dim G) )`.
pub fn tikhonov_pi(a: &Matrix, g: &Matrix) -> Result<f64> {
    let tr_a = a.trace() / a.rows() as f64;
    let tr_g = g.trace() / g.rows() as f64;
    if !(tr_g > 0.0) {
        return Err(Error::Numerical(format!(
            "factored Tikhonov damping: tr G = {:.3e} (dead layer); use a larger batch or damping",
            g.trace()
        )));
    }
    if !(tr_a > 0.0) {
        return Err(Error::Numerical(format!(
            "factored Tikhonov damping: tr Ā = {:.3e} is not positive",
            a.trace()
        )));
    }
    Ok((tr_a / tr_g).sqrt())
}

fn checked_eig(m: &Matrix, what: &str, layer: usize) -> Result<SymEig> {
    let e = sym_eig(m)?;
    if let Some(&min) = e.eigenvalues.first() {
        if min < NEGATIVE_EIG_TOL {
            return Err(Error::Numerical(format!(
                "layer {layer}: {what} has eigenvalue {min:.3e}; factor is not positive semidefinite"
            )));
        }
    }
    Ok(e)
}

/// Decomposes (eig mode) or damps and factorizes (Tikhonov mode) each diagonal block.
pub fn build_block_inverses(cov: &CovState, cfg: &DampingConfig) -> Result<BlockInverse> {
    let layers = (0..cov.num_layers())
        .into_par_iter()
        .map(|l| {
            let a = cov.a_diag(l).symmetrized();
            let g = cov.g_diag(l).symmetrized();
            match cfg.mode {
                BlockMode::Eigendecomposition => Ok(LayerInverse::Eig {
                    a: checked_eig(&a, "Ā", l)?,
                    g: checked_eig(&g, "G", l)?,
                    lambda: cfg.lambda,
                }),
                BlockMode::FactoredTikhonov => Ok(LayerInverse::Tikhonov(tikhonov_factors(&a, &g, cfg.lambda)?)),
            }
        })
        .collect::<Result<_>>()?;
    Ok(BlockInverse { layers })
}

pub fn tikhonov_factors(a: &Matrix, g: &Matrix, lambda: f64) -> Result<TikhonovFactors> {
    let pi = tikhonov_pi(a, g)?;
    let root = lambda.sqrt();
    Ok(TikhonovFactors {
        pi,
        a: Cholesky::factor(&a.add_diag(pi * root))?,
        g: Cholesky::factor(&g.add_diag(root / pi))?,
    })
}

/// `vec⁻¹((Ā ⊗ G + λI)⁻¹ vec(grad))` through the factor eigenbases.
///
/// `grad` is `dim G × dim Ā`. In the eigenbases the operator is diagonal with
/// entry `λ^A_b λ^G_a + λ` at `(a, b)`.
pub fn apply_block_eig(grad: &Matrix, a: &SymEig, g: &SymEig, lambda: f64) -> Result<Matrix> {
    let (qa, qg) = (&a.eigenvectors, &g.eigenvectors);
    if grad.rows() != qg.rows() || grad.cols() != qa.rows() {
        return Err(Error::dim(
            "apply_block_eig",
            format!(
                "gradient is {}x{}, factors are {} (G) and {} (Ā)",
                grad.rows(),
                grad.cols(),
                qg.rows(),
                qa.rows()
            ),
        ));
    }
    let mut v = qg.transpose_matmul(grad)?.matmul(qa)?;
    for (r, &eg) in g.eigenvalues.iter().enumerate() {
        let row = v.row_mut(r);
        for (c, &ea) in a.eigenvalues.iter().enumerate() {
            let denom = ea * eg + lambda;
            if !(denom > 0.0) {
                return Err(Error::Numerical(format!(
                    "damped block eigenvalue {denom:.3e} at ({r}, {c}) is not positive (λ = {lambda:e})"
                )));
            }
            row[c] /= denom;
        }
    }
    qg.matmul(&v)?.matmul_transpose(qa)
}

/// `(G + π⁻¹λ^½ I)⁻¹ · grad · (Ā + πλ^½ I)⁻¹`.
pub fn apply_block_tikhonov(grad: &Matrix, f: &TikhonovFactors) -> Result<Matrix> {
    if grad.rows() != f.g.dim() || grad.cols() != f.a.dim() {
        return Err(Error::dim(
            "apply_block_tikhonov",
            format!(
                "gradient is {}x{}, factors are {} (G) and {} (Ā)",
                grad.rows(),
                grad.cols(),
                f.g.dim(),
                f.a.dim()
            ),
        ));
    }
    let left = f.g.solve_matrix(grad)?;
    // Ā is symmetric, so X Ā⁻¹ = (Ā⁻¹ Xᵀ)ᵀ.
    Ok(f.a.solve_matrix(&left.transpose())?.transpose())
}

/// The `L × L` coarse Fisher `Z F̃ Zᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseState {
    pub f_coarse: Matrix,
}

/// Coarse Fisher from the full lower triangle of Kronecker factors.
pub fn assemble_coarse(cov: &CovState) -> Result<CoarseState> {
    if cov.mode() != CovMode::Full {
        return Err(Error::State("coarse Fisher needs covariance state in full mode".into()));
    }
    let l_count = cov.num_layers();
    let mut f = Matrix::zeros(l_count, l_count);
    for l in 0..l_count {
        for m in 0..=l {
            let (a, g) = match (cov.a_pair(l, m), cov.g_pair(l, m)) {
                (Some(a), Some(g)) => (a, g),
                _ => return Err(Error::State(format!("missing covariance pair ({l}, {m})"))),
            };
            f[(l, m)] = kron_elem_sum(a, g);
        }
    }
    // Mirror the lower triangle: F + Fᵀ − diag(F).
    let ft = f.transpose();
    let diag = Matrix::from_diag(&(0..l_count).map(|i| f[(i, i)]).collect::<Vec<_>>());
    let f = f.add(&ft)?.sub(&diag)?;
    for i in 0..l_count {
        if f[(i, i)] < -1e-8 {
            return Err(Error::Numerical(format!(
                "coarse Fisher diagonal entry {i} is {:.3e}; factors are not positive semidefinite",
                f[(i, i)]
            )));
        }
    }
    Ok(CoarseState { f_coarse: f })
}

impl CoarseState {
    pub fn num_layers(&self) -> usize {
        self.f_coarse.rows()
    }

    /// Cholesky of `F_c + damping·I`.
    pub fn factorize(&self, damping: f64) -> Result<CoarseSolver> {
        Ok(CoarseSolver {
            chol: Cholesky::factor(&self.f_coarse.add_diag(damping))?,
            damping,
        })
    }

    /// Factorizes with `λ`, retrying once with an extra `10λ` shift.
    ///
    /// Returns `None` (and logs) when both attempts fail, in which case the
    /// caller drops the coarse term until the next refresh.
    pub fn factorize_with_fallback(&self, lambda: f64) -> Option<CoarseSolver> {
        match self.factorize(lambda) {
            Ok(s) => Some(s),
            Err(first) => {
                let shifted = lambda * (1.0 + COARSE_RETRY_SHIFT);
                match self.factorize(shifted) {
                    Ok(s) => {
                        warn!("coarse Fisher not SPD with damping {lambda:e} ({first}); using {shifted:e}");
                        Some(s)
                    }
                    Err(second) => {
                        warn!("coarse Fisher not SPD even with damping {shifted:e} ({second}); skipping coarse term");
                        None
                    }
                }
            }
        }
    }
}

/// Factorized `(F_c + λI)` ready to apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseSolver {
    chol: Cholesky,
    damping: f64,
}

impl CoarseSolver {
    pub fn damping(&self) -> f64 {
        self.damping
    }

    /// `Zᵀ (F_c + λI)⁻¹ Z g` on a layered gradient.
    pub fn correction(&self, grad: &GradVec) -> Result<GradVec> {
        if grad.num_layers() != self.chol.dim() {
            return Err(Error::dim(
                "coarse correction",
                format!("coarse space has {} layers, gradient has {}", self.chol.dim(), grad.num_layers()),
            ));
        }
        let sums: Vec<f64> = grad.layers.iter().map(Matrix::sum).collect();
        let w = self.chol.solve(&sums)?;
        Ok(GradVec {
            layers: grad
                .layers
                .iter()
                .zip(w)
                .map(|(g, wi)| Matrix::from_fn(g.rows(), g.cols(), |_, _| wi))
                .collect(),
        })
    }
}

/// `Zᵀ (F_c + λI)⁻¹ Z g` on a flat gradient whose layers occupy `extents` (offset, length).
pub fn coarse_correction(coarse: &CoarseState, grad: &[f64], extents: &[(usize, usize)], lambda: f64) -> Result<Vec<f64>> {
    if extents.len() != coarse.num_layers() {
        return Err(Error::dim(
            "coarse_correction",
            format!("coarse space has {} layers, {} extents given", coarse.num_layers(), extents.len()),
        ));
    }
    let total: usize = extents.iter().map(|e| e.1).sum();
    if grad.len() != total {
        return Err(Error::dim(
            "coarse_correction",
            format!("gradient has {} entries, layers cover {total}", grad.len()),
        ));
    }
    let sums: Vec<f64> = extents.iter().map(|&(o, n)| grad[o..o + n].iter().sum()).collect();
    let w = coarse.factorize(lambda)?.chol.solve(&sums)?;
    let mut out = vec![0.0; grad.len()];
    for (&(o, n), wi) in extents.iter().zip(w) {
        out[o..o + n].iter_mut().for_each(|v| *v = wi);
    }
    Ok(out)
}

/// Block-diagonal inverse plus an optional coarse correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preconditioner {
    pub blocks: BlockInverse,
    /// `None` gives one-level K-FAC.
    pub coarse: Option<CoarseSolver>,
}

impl Preconditioner {
    pub fn apply(&self, grad: &GradVec) -> Result<GradVec> {
        apply_two_level(&self.blocks, self.coarse.as_ref(), grad)
    }
}

/// `Σ_l V_lᵀ F̃_{l,l}⁻¹ V_l g + Zᵀ (F_c + λI)⁻¹ Z g`; the coarse term is skipped when `coarse` is `None`.
pub fn apply_two_level(blocks: &BlockInverse, coarse: Option<&CoarseSolver>, grad: &GradVec) -> Result<GradVec> {
    let mut out = blocks.apply(grad)?;
    if let Some(c) = coarse {
        let corr = c.correction(grad)?;
        for (o, c) in out.layers.iter_mut().zip(&corr.layers) {
            o.blend_in_place(1.0, c, 1.0)?;
        }
    }
    Ok(out)
}

/// KL-clipping factor `ν = min(1, sqrt(κ / (η² Σ_l |⟨p_l, g_l⟩|)))`.
///
/// The sum runs over layers, pairing each layer's preconditioned gradient with
/// its raw gradient. A zero sum gives `ν = 1`.
pub fn kl_clip(precond: &GradVec, raw: &GradVec, lr: f64, kappa: f64) -> f64 {
    debug_assert!(lr > 0.0 && kappa > 0.0);
    let total: f64 = precond
        .layers
        .iter()
        .zip(&raw.layers)
        .map(|(p, g)| crate::linalg::dot(p.as_slice(), g.as_slice()).abs())
        .sum();
    if !(total > 0.0) {
        return 1.0;
    }
    (kappa / (lr * lr * total)).sqrt().min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dense_kron, spd_solve};
    use crate::network::{Activation, Architecture, LossKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let r = random(rng, n, n + 2);
        r.matmul_transpose(&r).unwrap().scale(1.0 / n as f64)
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    fn eigs(m: &Matrix) -> SymEig {
        sym_eig(m).unwrap()
    }

    #[test]
    fn pi_examples() {
        assert_eq!(tikhonov_pi(&Matrix::identity(4), &Matrix::identity(3)).unwrap(), 1.0);
        assert_eq!(tikhonov_pi(&Matrix::identity(3).scale(4.0), &Matrix::identity(2)).unwrap(), 2.0);
        assert!(matches!(
            tikhonov_pi(&Matrix::identity(3), &Matrix::zeros(2, 2)),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn pi_matches_formula_on_random_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_spd(&mut rng, 5);
        let g = random_spd(&mut rng, 3);
        let mut tr_a = 0.0;
        for i in 0..5 {
            tr_a += a[(i, i)];
        }
        let mut tr_g = 0.0;
        for i in 0..3 {
            tr_g += g[(i, i)];
        }
        let expect = ((tr_a / 5.0) / (tr_g / 3.0)).sqrt();
        assert!((tikhonov_pi(&a, &g).unwrap() - expect).abs() < 1e-15 * expect);
    }

    #[test]
    fn eig_block_identity_cases() {
        let grad = Matrix::from_rows(&[&[1.0, -2.0, 3.0], &[0.5, 4.0, -1.0]]);
        let (ea, eg) = (eigs(&Matrix::identity(3)), eigs(&Matrix::identity(2)));
        assert_eq!(apply_block_eig(&grad, &ea, &eg, 0.0).unwrap(), grad);
        assert_eq!(apply_block_eig(&grad, &ea, &eg, 1.0).unwrap(), grad.scale(0.5));
    }

    #[test]
    fn eig_block_rejects_singular_undamped() {
        let grad = Matrix::zeros(2, 3);
        let err = apply_block_eig(&grad, &eigs(&Matrix::zeros(3, 3)), &eigs(&Matrix::identity(2)), 0.0);
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn eig_block_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_spd(&mut rng, 4);
        let g = random_spd(&mut rng, 3);
        let grad = random(&mut rng, 3, 4);
        let lambda = 0.03;
        let got = apply_block_eig(&grad, &eigs(&a), &eigs(&g), lambda).unwrap();
        let dense = dense_kron(&a, &g).unwrap().add_diag(lambda);
        let x = spd_solve(&dense, &grad.to_col_vec()).unwrap();
        let expect = Matrix::from_col_vec(3, 4, &x).unwrap();
        assert!(rel(&got, &expect) < 1e-8);
    }

    #[test]
    fn tikhonov_identity_case() {
        let grad = Matrix::from_rows(&[&[1.0, -2.0, 3.0], &[0.5, 4.0, -1.0]]);
        let f = tikhonov_factors(&Matrix::identity(3), &Matrix::identity(2), 1.0).unwrap();
        assert_eq!(f.pi, 1.0);
        assert!(rel(&apply_block_tikhonov(&grad, &f).unwrap(), &grad.scale(0.25)) < 1e-15);
    }

    #[test]
    fn tikhonov_tiny_damping_inverts_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_spd(&mut rng, 4).add_diag(0.5);
        let g = random_spd(&mut rng, 2).add_diag(0.5);
        let grad = random(&mut rng, 2, 4);
        let f = tikhonov_factors(&a, &g, 1e-12).unwrap();
        let got = apply_block_tikhonov(&grad, &f).unwrap();
        let dense = dense_kron(&a, &g).unwrap();
        let x = spd_solve(&dense, &grad.to_col_vec()).unwrap();
        assert!(rel(&got, &Matrix::from_col_vec(2, 4, &x).unwrap()) < 1e-5);
    }

    fn tiny_cov(seed: u64, dims: &[usize]) -> (Architecture, CovState) {
        let arch = Architecture::mlp(dims, Activation::Identity, false, LossKind::Mse).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l_count = arch.num_layers();
        // Factors are Gram matrices of a shared random sample so that cross pairs are consistent.
        let batch = 9;
        let a_samples: Vec<Matrix> = (0..l_count)
            .map(|l| {
                let mut m = random(&mut rng, dims[l] + 1, batch);
                for b in 0..batch {
                    m[(dims[l], b)] = 1.0;
                }
                m
            })
            .collect();
        let g_samples: Vec<Matrix> = (0..l_count).map(|l| random(&mut rng, dims[l + 1], batch)).collect();
        let gram = |x: &Matrix, y: &Matrix| x.matmul_transpose(y).unwrap().scale(1.0 / batch as f64);
        let a = (0..l_count)
            .map(|l| (0..=l).map(|m| Some(gram(&a_samples[l], &a_samples[m]))).collect())
            .collect();
        let g = (0..l_count)
            .map(|l| (0..=l).map(|m| Some(gram(&g_samples[l], &g_samples[m]))).collect())
            .collect();
        let cov = CovState::from_factors(&arch, CovMode::Full, a, g).unwrap();
        (arch, cov)
    }

    #[test]
    fn coarse_single_layer_is_product_of_sums() {
        let (_, cov) = tiny_cov(1, &[3, 2]);
        let c = assemble_coarse(&cov).unwrap();
        assert_eq!(c.f_coarse.shape(), (1, 1));
        assert_eq!(c.f_coarse[(0, 0)], cov.a_diag(0).sum() * cov.g_diag(0).sum());
    }

    #[test]
    fn coarse_is_exactly_symmetric() {
        let (_, cov) = tiny_cov(2, &[3, 4, 2, 2]);
        let c = assemble_coarse(&cov).unwrap();
        assert_eq!(c.f_coarse, c.f_coarse.transpose());
    }

    #[test]
    fn coarse_needs_full_mode() {
        let arch = Architecture::mlp(&[2, 2], Activation::Identity, false, LossKind::Mse).unwrap();
        let cov = CovState::new(&arch, CovMode::Diagonal);
        assert!(matches!(assemble_coarse(&cov), Err(Error::State(_))));
    }

    #[test]
    fn coarse_correction_identity_and_zero() {
        let c = CoarseState {
            f_coarse: Matrix::identity(2),
        };
        let extents = [(0, 3), (3, 2)];
        let grad = [1.0, 2.0, 3.0, -1.0, 0.5];
        let out = coarse_correction(&c, &grad, &extents, 0.0).unwrap();
        assert_eq!(out, vec![6.0, 6.0, 6.0, -0.5, -0.5]);
        assert_eq!(coarse_correction(&c, &[0.0; 5], &extents, 0.0).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn coarse_fallback_skips_indefinite() {
        let c = CoarseState {
            f_coarse: Matrix::from_rows(&[&[1.0, 5.0], &[5.0, 1.0]]),
        };
        assert!(c.factorize_with_fallback(0.01).is_none());
        let c = CoarseState {
            f_coarse: Matrix::from_rows(&[&[1.0, 1.05], &[1.05, 1.0]]),
        };
        // fails at λ = 0.01, passes at 0.11
        let s = c.factorize_with_fallback(0.01).unwrap();
        assert!((s.damping() - 0.11).abs() < 1e-15);
    }

    #[test]
    fn one_level_ignores_cross_factors() {
        let (arch, full) = tiny_cov(3, &[3, 4, 2]);
        let a = (0..2).map(|l| (0..=l).map(|m| (l == m).then(|| full.a_diag(l).clone())).collect()).collect();
        let g = (0..2).map(|l| (0..=l).map(|m| (l == m).then(|| full.g_diag(l).clone())).collect()).collect();
        let diag = CovState::from_factors(&arch, CovMode::Diagonal, a, g).unwrap();
        let cfg = DampingConfig::new(0.1, BlockMode::Eigendecomposition).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grad = GradVec::unflatten(&arch, &(0..arch.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let p1 = build_block_inverses(&full, &cfg).unwrap().apply(&grad).unwrap();
        let p2 = build_block_inverses(&diag, &cfg).unwrap().apply(&grad).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn kl_clip_examples() {
        let g = GradVec {
            layers: vec![Matrix::from_rows(&[&[0.6, 0.8]])],
        };
        assert_eq!(kl_clip(&g, &g, 1.0, 1e9), 1.0);
        assert!((kl_clip(&g, &g, 1.0, 0.25) - 0.5).abs() < 1e-15);
        let zero = GradVec {
            layers: vec![Matrix::zeros(1, 2)],
        };
        assert_eq!(kl_clip(&zero, &g, 1.0, 0.25), 1.0);
    }

    #[test]
    fn kl_clip_scales_with_sqrt_kappa() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = GradVec {
            layers: vec![random(&mut rng, 2, 3), random(&mut rng, 1, 3)],
        };
        let g = GradVec {
            layers: vec![random(&mut rng, 2, 3), random(&mut rng, 1, 3)],
        };
        let nu1 = kl_clip(&p, &g, 0.5, 1e-4);
        let nu4 = kl_clip(&p, &g, 0.5, 4e-4);
        assert!(nu4 < 1.0);
        assert!((nu4 / nu1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn damping_config_validates() {
        assert!(DampingConfig::new(0.0, BlockMode::Eigendecomposition).is_err());
        assert!(DampingConfig::new(-1.0, BlockMode::FactoredTikhonov).is_err());
        assert!(DampingConfig::new(1e-2, BlockMode::FactoredTikhonov).is_ok());
    }
}
