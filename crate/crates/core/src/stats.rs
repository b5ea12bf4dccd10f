//! Running estimates of the Kronecker factors.
//!
//! For layers `l ≥ m` (0-based) the state tracks
//! `Ā[l][m] = E[ā_l ā_mᵀ]` over layer inputs and `G[l][m] = E[g_l g_mᵀ]` over
//! pre-activation derivatives. Diagonal mode keeps only `l = m`, which is all
//! block-diagonal K-FAC needs; full mode keeps the whole lower triangle for the
//! coarse Fisher. Every sweep blends a fresh minibatch estimate into an
//! exponential moving average with decay `ε = min(1 − 1/t, 0.95)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{Architecture, BatchCache};

/// Upper bound on the EMA decay.
pub const MAX_DECAY: f64 = 0.95;

/// EMA decay for the `t`-th update (1-based). `t = 1` gives 0, so the first
/// estimate is taken as is.
pub fn decay(t: u64) -> f64 {
    assert!(t >= 1, "update counter starts at 1");
    (1.0 - 1.0 / t as f64).min(MAX_DECAY)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMode {
    /// Only within-layer factors.
    Diagonal,
    /// Every lower-triangular layer pair.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovState {
    mode: CovMode,
    /// Completed sweeps; the next sweep is update number `updates + 1`.
    updates: u64,
    /// `a[l][m]` for `m ≤ l`; `None` where the mode does not track the pair.
    a: Vec<Vec<Option<Matrix>>>,
    g: Vec<Vec<Option<Matrix>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovMemory {
    pub a_matrices: usize,
    pub g_matrices: usize,
    pub scalars: usize,
}

impl CovState {
    pub fn new(arch: &Architecture, mode: CovMode) -> Self {
        let dims = arch.layer_dims();
        let l_count = arch.num_layers();
        let tracked = |l: usize, m: usize| mode == CovMode::Full || l == m;
        let a = (0..l_count)
            .map(|l| {
                (0..=l)
                    .map(|m| tracked(l, m).then(|| Matrix::zeros(dims[l] + 1, dims[m] + 1)))
                    .collect()
            })
            .collect();
        let g = (0..l_count)
            .map(|l| {
                (0..=l)
                    .map(|m| tracked(l, m).then(|| Matrix::zeros(dims[l + 1], dims[m + 1])))
                    .collect()
            })
            .collect();
        Self {
            mode,
            updates: 0,
            a,
            g,
        }
    }

    /// Builds a state directly from factor matrices, `a[l][m]`/`g[l][m]` for `m ≤ l`.
    ///
    /// Used to inject known covariances; `updates` is set to 1.
    pub fn from_factors(
        arch: &Architecture,
        mode: CovMode,
        a: Vec<Vec<Option<Matrix>>>,
        g: Vec<Vec<Option<Matrix>>>,
    ) -> Result<Self> {
        let template = Self::new(arch, mode);
        for (name, given, want) in [("a", &a, &template.a), ("g", &g, &template.g)] {
            if given.len() != want.len() {
                return Err(Error::State(format!("{name}: expected {} layers", want.len())));
            }
            for (l, (row_given, row_want)) in given.iter().zip(want).enumerate() {
                if row_given.len() != row_want.len() {
                    return Err(Error::State(format!("{name}[{l}]: expected {} pairs", row_want.len())));
                }
                for (m, (x, y)) in row_given.iter().zip(row_want).enumerate() {
                    match (x, y) {
                        (Some(x), Some(y)) if x.shape() == y.shape() => {}
                        (None, None) => {}
                        _ => {
                            return Err(Error::State(format!(
                                "{name}[{l}][{m}] is missing or has the wrong shape"
                            )))
                        }
                    }
                }
            }
        }
        Ok(Self {
            mode,
            updates: 1,
            a,
            g,
        })
    }

    pub fn mode(&self) -> CovMode {
        self.mode
    }

    pub fn num_layers(&self) -> usize {
        self.a.len()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// `E[ā_l ā_mᵀ]` for `m ≤ l`.
    pub fn a_pair(&self, l: usize, m: usize) -> Option<&Matrix> {
        self.a.get(l)?.get(m)?.as_ref()
    }

    /// `E[g_l g_mᵀ]` for `m ≤ l`.
    pub fn g_pair(&self, l: usize, m: usize) -> Option<&Matrix> {
        self.g.get(l)?.get(m)?.as_ref()
    }

    pub fn a_diag(&self, l: usize) -> &Matrix {
        self.a_pair(l, l).expect("diagonal factors are always tracked")
    }

    pub fn g_diag(&self, l: usize) -> &Matrix {
        self.g_pair(l, l).expect("diagonal factors are always tracked")
    }

    fn tracked_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for l in 0..self.a.len() {
            for m in 0..=l {
                if self.a[l][m].is_some() {
                    pairs.push((l, m));
                }
            }
        }
        pairs
    }

    /// Blends the minibatch estimates from `cache` into every tracked pair.
    ///
    /// `cache.g` must hold per-sample derivatives from a backward pass.
    pub fn update(&mut self, cache: &BatchCache) -> Result<()> {
        let l_count = self.a.len();
        if cache.a_bar.len() != l_count || cache.g.len() != l_count {
            return Err(Error::State(format!(
                "covariance state has {l_count} layers, cache has {} activations and {} derivatives \
                 (was backward run?)",
                cache.a_bar.len(),
                cache.g.len()
            )));
        }
        for l in 0..l_count {
            let want_a = self.a[l][l].as_ref().map(Matrix::rows);
            let want_g = self.g[l][l].as_ref().map(Matrix::rows);
            if want_a != Some(cache.a_bar[l].rows()) || want_g != Some(cache.g[l].rows()) {
                return Err(Error::State(format!("cache layer {l} does not match covariance shapes")));
            }
        }
        let batch = cache.batch_size();
        if batch == 0 || cache.g.iter().any(|g| g.cols() != batch) {
            return Err(Error::State("cache derivatives do not match batch size".into()));
        }
        let eps = decay(self.updates + 1);
        let inv_b = 1.0 / batch as f64;

        let pairs = self.tracked_pairs();
        let estimates: Vec<(Matrix, Matrix)> = pairs
            .par_iter()
            .map(|&(l, m)| {
                let a = cache.a_bar[l]
                    .matmul_transpose(&cache.a_bar[m])
                    .expect("shapes checked")
                    .scale(inv_b);
                let g = cache.g[l]
                    .matmul_transpose(&cache.g[m])
                    .expect("shapes checked")
                    .scale(inv_b);
                (a, g)
            })
            .collect();
        for (&(l, m), (a_est, g_est)) in pairs.iter().zip(estimates) {
            let a = self.a[l][m].as_mut().expect("tracked");
            let g = self.g[l][m].as_mut().expect("tracked");
            if eps == 0.0 {
                *a = a_est;
                *g = g_est;
            } else {
                a.blend_in_place(eps, &a_est, 1.0 - eps)?;
                g.blend_in_place(eps, &g_est, 1.0 - eps)?;
            }
            if l == m {
                // Homogeneous coordinate: mean of 1·1 is exactly one.
                let k = a.rows() - 1;
                a[(k, k)] = 1.0;
            }
        }
        self.updates += 1;
        Ok(())
    }

    pub fn memory_report(&self) -> CovMemory {
        let count = |v: &Vec<Vec<Option<Matrix>>>| -> (usize, usize) {
            v.iter()
                .flatten()
                .flatten()
                .fold((0, 0), |(n, s), m| (n + 1, s + m.rows() * m.cols()))
        };
        let (an, asz) = count(&self.a);
        let (gn, gsz) = count(&self.g);
        CovMemory {
            a_matrices: an,
            g_matrices: gn,
            scalars: asz + gsz,
        }
    }
}
