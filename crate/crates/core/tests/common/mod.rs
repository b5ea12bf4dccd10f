#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twolevel_kfac::linalg::Matrix;
use twolevel_kfac::network::{self, Activation, Architecture, BnMode, LossKind, Params};
use twolevel_kfac::stats::{CovMode, CovState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `‖a − b‖ / ‖b‖` (absolute when `b` is zero).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Largest entrywise `|a − b| / max(|a|, |b|, floor)`.
pub fn max_entry_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Well-conditioned SPD matrix `M Mᵀ / n + shift·I`.
pub fn random_spd<R: Rng>(n: usize, shift: f64, rng: &mut R) -> Matrix {
    let m = random_matrix(n, n, rng);
    m.matmul_transpose(&m).unwrap().scale(1.0 / n as f64).add_diag(shift)
}

/// Targets suited to the architecture's loss.
pub fn random_targets<R: Rng>(arch: &Architecture, batch: usize, rng: &mut R) -> Matrix {
    match arch.loss() {
        LossKind::BernoulliLogit => Matrix::from_fn(1, batch, |_, _| f64::from(rng.random_bool(0.5))),
        LossKind::SoftmaxCe => Matrix::from_fn(1, batch, |_, _| rng.random_range(0..arch.output_dim()) as f64),
        LossKind::Mse => random_matrix(arch.output_dim(), batch, rng),
    }
}

/// Random-width MLP with up to `max_layers` layers and widths up to `max_width`.
pub fn random_arch<R: Rng>(
    max_layers: usize,
    max_width: usize,
    act: Activation,
    bn: bool,
    loss: LossKind,
    rng: &mut R,
) -> Architecture {
    let layers = rng.random_range(1..=max_layers);
    let mut dims: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=max_width)).collect();
    dims.push(match loss {
        LossKind::BernoulliLogit => 1,
        LossKind::SoftmaxCe => rng.random_range(2..=max_width.max(2)),
        LossKind::Mse => rng.random_range(1..=max_width),
    });
    Architecture::mlp(&dims, act, bn, loss).unwrap()
}

/// Parameters with randomized BN scale and shift so that BN gradients are non-trivial.
pub fn random_params<R: Rng>(arch: &Architecture, rng: &mut R) -> Params {
    let mut p = Params::init(arch, rng);
    for w in &mut p.weights {
        let c = w.cols();
        for i in 0..w.rows() {
            w[(i, c - 1)] = rng.random_range(-0.5..0.5);
        }
    }
    for bn in p.bn.iter_mut().flatten() {
        bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
        bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    p
}

/// Covariance state filled from one sampled-label batch through a random network.
pub fn populated_cov<R: Rng>(arch: &Architecture, mode: CovMode, batch: usize, rng: &mut R) -> CovState {
    let params = random_params(arch, rng);
    let x = random_matrix(arch.input_dim(), batch, rng);
    let (out, mut cache) = network::forward(arch, &params, &x, BnMode::Train).unwrap();
    let labels = network::sample_labels(arch, &out, rng);
    network::backward(arch, &params, &mut cache, &labels).unwrap();
    let mut cov = CovState::new(arch, mode);
    cov.update(&cache).unwrap();
    cov
}

/// Prints a one-line verdict and returns whether it passed.
pub fn report(id: &str, name: &str, pass: bool, detail: &str) -> bool {
    println!("[{}] criterion {id}: {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
