//! Optimizers: heavy-ball SGD, Adam, and the one-/two-level K-FAC driver.
//!
//! A K-FAC iteration `t` (1-based) runs:
//! 1. forward pass in training mode;
//! 2. backward with the data labels, giving the raw gradient;
//! 3. every `t_stats` iterations, a second backward on the same forward cache
//!    with model-sampled labels, folded into the covariance EMAs;
//! 4. every `t_inv` iterations, a rebuild of the block inverses (and the
//!    coarse Fisher for two-level);
//! 5. weight decay added to the gradient, then preconditioning;
//! 6. KL clipping `ν`, momentum on `ν · direction`, parameter update.
//!
//! The first iteration always updates statistics and builds the preconditioner.
//! BN scale/shift parameters sit outside θ and follow plain SGD with momentum.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::network::{self, Architecture, BnMode, GradVec, Gradients, LabelSource, Params};
use crate::precond::{assemble_coarse, build_block_inverses, kl_clip, BlockMode, DampingConfig, Preconditioner};
use crate::stats::{CovMode, CovState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    /// Block-diagonal K-FAC.
    Kfac1,
    /// K-FAC with coarse-space correction.
    Kfac2,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [Self::Sgd, Self::Adam, Self::Kfac1, Self::Kfac2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
            Self::Kfac1 => "kfac1",
            Self::Kfac2 => "kfac2",
        }
    }

    pub fn is_kfac(self) -> bool {
        matches!(self, Self::Kfac1 | Self::Kfac2)
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("optimizer.kind", format!("unknown optimizer `{s}`; valid kinds: sgd, adam, kfac1, kfac2")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// λ, shared by the diagonal blocks and the coarse system.
    pub damping: f64,
    /// κ for KL clipping.
    pub kl_clip: f64,
    pub damping_mode: BlockMode,
    pub t_stats: u64,
    pub t_inv: u64,
    /// `(epoch, multiplier)` milestones, sorted by epoch.
    pub lr_schedule: Vec<(usize, f64)>,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Labels used for the curvature statistics.
    pub fisher: LabelSource,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Kfac2,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-3,
            damping: 1e-2,
            kl_clip: 1e-3,
            damping_mode: BlockMode::Eigendecomposition,
            t_stats: 10,
            t_inv: 100,
            lr_schedule: Vec::new(),
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            fisher: LabelSource::Sampled,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("optimizer.{f}");
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(field("lr"), format!("must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(field("momentum"), format!("must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(field("weight_decay"), "must be ≥ 0"));
        }
        if self.kind.is_kfac() {
            DampingConfig::new(self.damping, self.damping_mode)
                .map_err(|_| Error::config(field("damping"), format!("must be > 0, got {}", self.damping)))?;
            if !(self.kl_clip > 0.0 && self.kl_clip.is_finite()) {
                return Err(Error::config(field("kl_clip"), format!("must be > 0, got {}", self.kl_clip)));
            }
            if self.t_stats == 0 {
                return Err(Error::config(field("t_stats"), "must be ≥ 1"));
            }
            if self.t_inv == 0 || !self.t_inv.is_multiple_of(self.t_stats) {
                return Err(Error::config(
                    field("t_inv"),
                    format!("must be a positive multiple of t_stats ({}), got {}", self.t_stats, self.t_inv),
                ));
            }
        }
        if self.kind == OptimizerKind::Adam {
            let (b1, b2) = self.adam_betas;
            if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
                return Err(Error::config(field("adam_betas"), "both betas must lie in [0, 1)"));
            }
            if !(self.adam_eps > 0.0) {
                return Err(Error::config(field("adam_eps"), "must be > 0"));
            }
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::config(field("lr_schedule"), "milestones must be sorted by epoch"));
        }
        if self.lr_schedule.iter().any(|&(_, m)| !(m > 0.0)) {
            return Err(Error::config(field("lr_schedule"), "multipliers must be > 0"));
        }
        Ok(())
    }

    pub fn damping_config(&self) -> Result<DampingConfig> {
        DampingConfig::new(self.damping, self.damping_mode)
    }
}

/// Base rate times every multiplier whose milestone epoch is ≤ `epoch` (0-based).
pub fn lr_at(epoch: usize, cfg: &OptimizerConfig) -> f64 {
    cfg.lr_schedule
        .iter()
        .filter(|&&(e, _)| e <= epoch)
        .fold(cfg.lr, |lr, &(_, m)| lr * m)
}

/// Heavy-ball step: `v ← μv + (g + βθ)`, `θ ← θ − ηv`.
pub fn sgd_update(theta: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64, weight_decay: f64) {
    debug_assert!(theta.len() == velocity.len() && theta.len() == grad.len());
    for ((t, v), &g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g + weight_decay * *t;
        *t -= lr * *v;
    }
}

/// Adam moments on `g + βθ`, bias-corrected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, theta: &mut [f64], grad: &[f64], lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) {
        debug_assert!(theta.len() == self.m.len() && theta.len() == grad.len());
        self.step += 1;
        let (b1, b2) = betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..theta.len() {
            let g = grad[i] + weight_decay * theta[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Concatenated BN `γ` then `b` for every BN layer.
pub fn bn_flat(params: &Params) -> Vec<f64> {
    params
        .bn
        .iter()
        .flatten()
        .flat_map(|p| p.gamma.iter().chain(&p.beta).copied())
        .collect()
}

fn set_bn_flat(params: &mut Params, flat: &[f64]) {
    let mut off = 0;
    for p in params.bn.iter_mut().flatten() {
        let w = p.gamma.len();
        p.gamma.copy_from_slice(&flat[off..off + w]);
        p.beta.copy_from_slice(&flat[off + w..off + 2 * w]);
        off += 2 * w;
    }
}

fn bn_grad_flat(grads: &Gradients) -> Vec<f64> {
    grads
        .bn
        .iter()
        .flatten()
        .flat_map(|g| g.gamma.iter().chain(&g.beta).copied())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Iterations completed.
    pub iteration: u64,
    /// Momentum buffer over θ.
    pub velocity: Vec<f64>,
    pub bn_velocity: Vec<f64>,
    pub adam: Option<AdamState>,
    pub bn_adam: Option<AdamState>,
    pub cov: Option<CovState>,
    pub precond: Option<Preconditioner>,
    /// Preconditioner refreshes that had to drop the coarse term.
    pub coarse_skips: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Training-mode minibatch loss before the update.
    pub loss: f64,
    pub accuracy: Option<f64>,
    /// KL-clipping factor; 1 for first-order optimizers.
    pub nu: f64,
    pub stats_updated: bool,
    pub precond_rebuilt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub cfg: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, arch: &Architecture, params: &Params) -> Result<Self> {
        cfg.validate()?;
        let n = arch.num_params();
        let n_bn = bn_flat(params).len();
        let adam = cfg.kind == OptimizerKind::Adam;
        let cov = match cfg.kind {
            OptimizerKind::Kfac1 => Some(CovState::new(arch, CovMode::Diagonal)),
            OptimizerKind::Kfac2 => Some(CovState::new(arch, CovMode::Full)),
            _ => None,
        };
        Ok(Self {
            state: OptimizerState {
                iteration: 0,
                velocity: vec![0.0; n],
                bn_velocity: vec![0.0; n_bn],
                adam: adam.then(|| AdamState::new(n)),
                bn_adam: adam.then(|| AdamState::new(n_bn)),
                cov,
                precond: None,
                coarse_skips: 0,
            },
            cfg,
        })
    }

    /// One training iteration on the batch `(x, y)` at learning rate `lr`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        arch: &Architecture,
        params: &mut Params,
        x: &Matrix,
        y: &Matrix,
        lr: f64,
        rng: &mut R,
    ) -> Result<StepMetrics> {
        let t = self.state.iteration + 1;
        let (output, mut cache) = network::forward(arch, params, x, BnMode::Train)?;
        let loss = network::loss(arch, &output, y)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss became {loss} at iteration {t}")));
        }
        let accuracy = network::accuracy(arch, &output, y);
        let grads = network::backward(arch, params, &mut cache, y)?;
        params.update_bn_running(&cache);

        let mut metrics = StepMetrics {
            loss,
            accuracy,
            nu: 1.0,
            stats_updated: false,
            precond_rebuilt: false,
        };

        let mut theta = params.theta();
        let flat_grad = grads.weights.flatten();
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                sgd_update(&mut theta, &mut self.state.velocity, &flat_grad, lr, self.cfg.momentum, self.cfg.weight_decay);
            }
            OptimizerKind::Adam => {
                let adam = self.state.adam.as_mut().ok_or_else(|| Error::State("missing Adam state".into()))?;
                adam.update(&mut theta, &flat_grad, lr, self.cfg.adam_betas, self.cfg.adam_eps, self.cfg.weight_decay);
            }
            OptimizerKind::Kfac1 | OptimizerKind::Kfac2 => {
                let cov = self.state.cov.as_mut().ok_or_else(|| Error::State("missing covariance state".into()))?;
                if cov.updates() == 0 || t.is_multiple_of(self.cfg.t_stats) {
                    let labels = match self.cfg.fisher {
                        LabelSource::Sampled => network::sample_labels(arch, &output, rng),
                        LabelSource::Data => y.clone(),
                    };
                    network::backward(arch, params, &mut cache, &labels)?;
                    cov.update(&cache)?;
                    metrics.stats_updated = true;
                }
                if self.state.precond.is_none() || t.is_multiple_of(self.cfg.t_inv) {
                    let (p, skipped) = build_preconditioner(cov, &self.cfg)?;
                    self.state.precond = Some(p);
                    self.state.coarse_skips += u64::from(skipped);
                    metrics.precond_rebuilt = true;
                }
                let precond = self.state.precond.as_ref().expect("built above");

                let mut reg = grads.weights.clone();
                for (g, w) in reg.layers.iter_mut().zip(&params.weights) {
                    g.blend_in_place(1.0, w, self.cfg.weight_decay)?;
                }
                let direction = precond.apply(&reg)?;
                let nu = kl_clip(&direction, &reg, lr, self.cfg.kl_clip);
                metrics.nu = nu;
                let dir = direction.flatten();
                for ((th, v), d) in theta.iter_mut().zip(self.state.velocity.iter_mut()).zip(dir) {
                    *v = self.cfg.momentum * *v + nu * d;
                    *th -= lr * *v;
                }
            }
        }
        params.set_theta(&theta)?;

        let bn_grad = bn_grad_flat(&grads);
        if !bn_grad.is_empty() {
            let mut bn = bn_flat(params);
            match self.state.bn_adam.as_mut() {
                Some(adam) => adam.update(&mut bn, &bn_grad, lr, self.cfg.adam_betas, self.cfg.adam_eps, self.cfg.weight_decay),
                None => sgd_update(&mut bn, &mut self.state.bn_velocity, &bn_grad, lr, self.cfg.momentum, self.cfg.weight_decay),
            }
            set_bn_flat(params, &bn);
        }
        if params.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical(format!("parameters became non-finite at iteration {t}")));
        }
        self.state.iteration = t;
        Ok(metrics)
    }
}

/// Block inverses from the current statistics, plus the coarse solver for two-level K-FAC.
///
/// The flag reports whether the coarse term had to be dropped.
pub fn build_preconditioner(cov: &CovState, cfg: &OptimizerConfig) -> Result<(Preconditioner, bool)> {
    let damping = cfg.damping_config()?;
    let blocks = build_block_inverses(cov, &damping)?;
    if cfg.kind != OptimizerKind::Kfac2 {
        return Ok((Preconditioner { blocks, coarse: None }, false));
    }
    let coarse = assemble_coarse(cov)?.factorize_with_fallback(damping.lambda);
    let skipped = coarse.is_none();
    Ok((Preconditioner { blocks, coarse }, skipped))
}

/// Cosine distance `1 − ⟨a, b⟩ / (‖a‖‖b‖)` between two gradients.
pub fn cosine_distance(a: &GradVec, b: &GradVec) -> f64 {
    let (fa, fb) = (a.flatten(), b.flatten());
    1.0 - dot(&fa, &fb) / (dot(&fa, &fa).sqrt() * dot(&fb, &fb).sqrt())
}
