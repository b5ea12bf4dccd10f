//! End-to-end acceptance checks, one test per criterion.
//!
//! Each test prints a single `[PASS]`/`[FAIL]` line with its measured value and
//! tolerance, then asserts. Run with `--nocapture` to see the lines.

mod common;

use std::path::Path;

use common::{populated_cov, random_arch, random_matrix, random_params, random_spd, random_targets, rel_err, report, rng};
use rand::Rng;
use twolevel_kfac::cli::{cmd_compare, cmd_train, read_run_csv, ArchitectureSpec, CompareConfig, DatasetSpec, Grid, RunConfig};
use twolevel_kfac::linalg::{dense_kron, kron_apply, kron_elem_sum, spd_solve, sym_eig};
use twolevel_kfac::network::{self, Activation, Architecture, BnMode, GradVec, LossKind, Params};
use twolevel_kfac::optim::{OptimizerConfig, OptimizerKind};
use twolevel_kfac::oracle::{
    coarse_by, coarse_entry_block_sum, coarse_entry_chain, coarse_entry_chain_transposed, dense_two_level_operator,
    exact_gauss_newton, fd_gradient, mc_fisher,
};
use twolevel_kfac::precond::{
    apply_block_eig, apply_block_tikhonov, apply_two_level, assemble_coarse, build_block_inverses, kl_clip,
    tikhonov_factors, BlockMode, DampingConfig,
};
use twolevel_kfac::stats::{decay, CovMode};

/// Appendix hyperparameters of the deep linear MLP study.
fn paper_optimizer(kind: OptimizerKind) -> OptimizerConfig {
    OptimizerConfig {
        kind,
        lr: 1e-3,
        momentum: 0.9,
        weight_decay: 1e-3,
        damping: 1e-2,
        kl_clip: 1e-3,
        damping_mode: BlockMode::Eigendecomposition,
        t_stats: 10,
        t_inv: 100,
        ..Default::default()
    }
}

#[test]
fn c01_kronecker_identities() {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let dims: Vec<usize> = (0..4).map(|_| r.random_range(1..=8)).collect();
        let a = random_matrix(dims[0], dims[1], &mut r);
        let b = random_matrix(dims[2], dims[3], &mut r);
        let x: Vec<f64> = (0..dims[1] * dims[3]).map(|_| r.random_range(-1.0..1.0)).collect();
        let dense = dense_kron(&a, &b).unwrap();
        worst = worst.max(rel_err(&kron_apply(&a, &b, &x).unwrap(), &dense.matvec(&x).unwrap()));
        let s = dense.sum();
        worst = worst.max((kron_elem_sum(&a, &b) - s).abs() / s.abs().max(1e-300));
    }
    let pass = worst <= 1e-10;
    report("1", "Kronecker identities", pass, &format!("200 instances, max rel err {worst:.2e} (tol 1e-10)"));
    assert!(pass);
}

#[test]
fn c02_gradients_match_finite_differences() {
    let mut r = rng(202);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for loss in [LossKind::BernoulliLogit, LossKind::SoftmaxCe, LossKind::Mse] {
        for bn in [false, true] {
            for act in [Activation::Tanh, Activation::Identity] {
                for _ in 0..4 {
                    let arch = random_arch(4, 5, act, bn, loss, &mut r);
                    let params = random_params(&arch, &mut r);
                    let x = random_matrix(arch.input_dim(), 6, &mut r);
                    let y = random_targets(&arch, 6, &mut r);
                    let (_, mut cache) = network::forward(&arch, &params, &x, BnMode::Train).unwrap();
                    let exact = network::backward(&arch, &params, &mut cache, &y).unwrap();
                    let fd = fd_gradient(&arch, &params, &x, &y, 1e-4).unwrap();
                    let flat = |g: &network::Gradients| {
                        let mut v = g.weights.flatten();
                        for b in g.bn.iter().flatten() {
                            v.extend(&b.gamma);
                            v.extend(&b.beta);
                        }
                        v
                    };
                    worst = worst.max(common::max_entry_rel_err(&flat(&exact), &flat(&fd), 1e-4));
                    cases += 1;
                }
            }
        }
    }
    let pass = worst <= 1e-5;
    report(
        "2",
        "gradients vs finite differences",
        pass,
        &format!("{cases} nets (3 losses, with/without BN), max rel err {worst:.2e} (tol 1e-5)"),
    );
    assert!(pass);
}

#[test]
fn c03_damping_modes_match_dense_solves() {
    let mut r = rng(303);
    let (mut eig_err, mut tik_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let (da, dg) = (r.random_range(1..=6), r.random_range(1..=6));
        let a = random_spd(da, 0.1, &mut r);
        let g = random_spd(dg, 0.1, &mut r);
        let grad = random_matrix(dg, da, &mut r);
        let v = grad.to_col_vec();
        let lambda = 10f64.powf(r.random_range(-3.0..0.0));
        let fast = apply_block_eig(&grad, &sym_eig(&a).unwrap(), &sym_eig(&g).unwrap(), lambda).unwrap();
        let dense = spd_solve(&dense_kron(&a, &g).unwrap().add_diag(lambda), &v).unwrap();
        eig_err = eig_err.max(rel_err(&fast.to_col_vec(), &dense));

        let f = tikhonov_factors(&a, &g, lambda).unwrap();
        let fast = apply_block_tikhonov(&grad, &f).unwrap();
        let pi = ((a.trace() / da as f64) / (g.trace() / dg as f64)).sqrt();
        let s = lambda.sqrt();
        let dense = spd_solve(&dense_kron(&a.add_diag(pi * s), &g.add_diag(s / pi)).unwrap(), &v).unwrap();
        tik_err = tik_err.max(rel_err(&fast.to_col_vec(), &dense));
    }
    // Vanishing damping: both modes tend to the exact Kronecker inverse.
    let mut agree: f64 = 0.0;
    for _ in 0..20 {
        let (da, dg) = (r.random_range(1..=6), r.random_range(1..=6));
        let a = random_spd(da, 1.0, &mut r);
        let g = random_spd(dg, 1.0, &mut r);
        let grad = random_matrix(dg, da, &mut r);
        let e = apply_block_eig(&grad, &sym_eig(&a).unwrap(), &sym_eig(&g).unwrap(), 1e-12).unwrap();
        let t = apply_block_tikhonov(&grad, &tikhonov_factors(&a, &g, 1e-12).unwrap()).unwrap();
        agree = agree.max(rel_err(&t.to_col_vec(), &e.to_col_vec()));
    }
    let pass = eig_err <= 1e-8 && tik_err <= 1e-8 && agree <= 1e-4;
    report(
        "3",
        "damping modes vs dense solves",
        pass,
        &format!("eig {eig_err:.2e}, tikhonov {tik_err:.2e} (tol 1e-8); modes at λ=1e-12 differ {agree:.2e} (tol 1e-4)"),
    );
    assert!(pass);
}

#[test]
fn c04_coarse_fisher_routes_agree() {
    let mut r = rng(404);
    let mut worst: f64 = 0.0;
    let mut symmetric = true;
    for layers in 2..=4 {
        for _ in 0..5 {
            let mut dims: Vec<usize> = (0..layers).map(|_| r.random_range(1..=5)).collect();
            dims.push(1);
            let arch = Architecture::mlp(&dims, Activation::Tanh, true, LossKind::BernoulliLogit).unwrap();
            let cov = populated_cov(&arch, CovMode::Full, 32, &mut r);
            let fast = assemble_coarse(&cov).unwrap().f_coarse;
            symmetric &= fast.asymmetry() == 0.0;
            for entry in [coarse_entry_block_sum, coarse_entry_chain, coarse_entry_chain_transposed] {
                worst = worst.max(rel_err(fast.as_slice(), coarse_by(&cov, entry).unwrap().as_slice()));
            }
        }
    }
    let pass = worst <= 1e-10 && symmetric;
    report(
        "4",
        "coarse Fisher vs block sums and G·1·A chain",
        pass,
        &format!("2-4 layer toys, max rel err {worst:.2e} (tol 1e-10), exactly symmetric: {symmetric}"),
    );
    assert!(pass);
}

#[test]
fn c05_two_level_matches_dense_operator() {
    let mut r = rng(505);
    let mut worst: f64 = 0.0;
    let mut one_level_exact = true;
    let mut nets = 0;
    for dims in [vec![3, 3, 2, 1], vec![2, 4, 3], vec![4, 2, 2, 2, 1]] {
        let arch = Architecture::mlp(&dims, Activation::Tanh, true, if *dims.last().unwrap() == 1 {
            LossKind::BernoulliLogit
        } else {
            LossKind::SoftmaxCe
        })
        .unwrap();
        assert!(arch.num_params() <= 50, "{}", arch.num_params());
        let cov = populated_cov(&arch, CovMode::Full, 40, &mut r);
        for mode in [BlockMode::Eigendecomposition, BlockMode::FactoredTikhonov] {
            let lambda = 1e-2;
            let blocks = build_block_inverses(&cov, &DampingConfig::new(lambda, mode).unwrap()).unwrap();
            let solver = assemble_coarse(&cov).unwrap().factorize(lambda).unwrap();
            let op = dense_two_level_operator(&cov, lambda, mode, true).unwrap();
            for _ in 0..50 {
                let g: Vec<f64> = (0..arch.num_params()).map(|_| r.random_range(-1.0..1.0)).collect();
                let gv = GradVec::unflatten(&arch, &g).unwrap();
                let fast = apply_two_level(&blocks, Some(&solver), &gv).unwrap();
                worst = worst.max(rel_err(&fast.flatten(), &op.matvec(&g).unwrap()));
                one_level_exact &= apply_two_level(&blocks, None, &gv).unwrap() == blocks.apply(&gv).unwrap();
            }
            nets += 1;
        }
    }
    let pass = worst <= 1e-8 && one_level_exact;
    report(
        "5",
        "two-level operator vs dense V/Z construction",
        pass,
        &format!("{nets} net/mode pairs x 50 gradients, max rel err {worst:.2e} (tol 1e-8); coarse off equals one-level exactly: {one_level_exact}"),
    );
    assert!(pass);
}

#[test]
fn c06_monte_carlo_fisher_matches_gauss_newton() {
    let arch = Architecture::mlp(&[2, 2, 2], Activation::Identity, false, LossKind::Mse).unwrap();
    let mut r = rng(606);
    let params = Params::init(&arch, &mut r);
    let x = random_matrix(2, 8, &mut r);
    let exact = exact_gauss_newton(&arch, &params, &x, 1e-3).unwrap();
    let mc = mc_fisher(&arch, &params, &x, 20_000, &mut r).unwrap();
    let mut worst_z: f64 = 0.0;
    let n = arch.num_params();
    for i in 0..n {
        for j in 0..n {
            let diff = (mc.mean[(i, j)] - exact[(i, j)]).abs();
            let se = mc.std_err[(i, j)];
            worst_z = worst_z.max(if se > 0.0 { diff / se } else if diff <= 1e-12 { 0.0 } else { f64::INFINITY });
        }
    }
    let pass = worst_z <= 5.0;
    report(
        "6",
        "Monte-Carlo Fisher vs exact JᵀJ",
        pass,
        &format!("{n}x{n} entries at 2e4 samples, max |diff|/SE {worst_z:.2} (tol 5)"),
    );
    assert!(pass);
}

#[test]
fn c07_clipping_and_decay_formulas() {
    let arch = Architecture::mlp(&[1, 1], Activation::Identity, false, LossKind::Mse).unwrap();
    // One layer, gradient (0.6, 0.8): unit norm, 𝒢 = ∇L.
    let g = GradVec::unflatten(&arch, &[0.6, 0.8]).unwrap();
    let half = kl_clip(&g, &g, 1.0, 0.25);
    let capped = kl_clip(&g, &g, 1.0, 1e9);
    let zero = kl_clip(&GradVec::zeros_like(&arch), &g, 1.0, 1e-3);
    let (e1, e20, e100) = (decay(1), decay(20), decay(100));
    let pass = half == 0.5 && capped == 1.0 && zero == 1.0 && e1 == 0.0 && e20 == 0.95 && e100 == 0.95 && decay(2) == 0.5;
    report(
        "7",
        "KL clipping and decay schedule",
        pass,
        &format!("ν(κ=0.25)={half}, ν(κ=1e9)={capped}, ν(zero)={zero}; ε(1)={e1}, ε(2)={}, ε(20)={e20}, ε(100)={e100} (exact)", decay(2)),
    );
    assert!(pass);
}

fn desk_config(kind: OptimizerKind, out: &Path) -> RunConfig {
    RunConfig {
        architecture: ArchitectureSpec::deep_linear(8, 10),
        dataset: DatasetSpec::Planted {
            d_in: 10,
            n_train: 1000,
            n_test: 200,
            seed: None,
        },
        optimizer: paper_optimizer(kind),
        epochs: 3,
        batch_size: 128,
        seed: 42,
        output_dir: out.to_path_buf(),
    }
}

#[test]
fn c08_training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    for kind in OptimizerKind::ALL {
        let a = dir.path().join(format!("{}-a", kind.name()));
        let b = dir.path().join(format!("{}-b", kind.name()));
        cmd_train(&desk_config(kind, &a), None).unwrap();
        cmd_train(&desk_config(kind, &b), None).unwrap();
        let cols = |p: &Path| {
            read_run_csv(&p.join("run.csv"))
                .unwrap()
                .iter()
                .map(|r| (r.train_loss.to_bits(), r.test_loss.to_bits()))
                .collect::<Vec<_>>()
        };
        identical &= cols(&a) == cols(&b);
    }
    report("8", "deterministic run.csv loss columns", identical, "two runs per optimizer, bitwise equal loss columns");
    assert!(identical);
}

fn paper_compare(layers: usize, n_train: usize, n_test: usize, batch: usize, epochs: usize, seeds: Vec<u64>, out: &Path) -> CompareConfig {
    CompareConfig {
        base: RunConfig {
            architecture: ArchitectureSpec::deep_linear(layers, 10),
            dataset: DatasetSpec::Planted {
                d_in: 10,
                n_train,
                n_test,
                seed: None,
            },
            optimizer: paper_optimizer(OptimizerKind::Kfac2),
            epochs,
            batch_size: batch,
            seed: 0,
            output_dir: out.to_path_buf(),
        },
        optimizers: OptimizerKind::ALL.to_vec(),
        grid: Grid {
            lr: vec![1e-3],
            momentum: vec![0.9],
            damping: vec![1e-2],
            kl_clip: vec![1e-3],
        },
        seeds,
    }
}

#[test]
fn c09_desk_scale_deep_linear_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = paper_compare(32, 5_000, 500, 256, 30, vec![1, 2, 3, 4, 5], dir.path());
    let out = cmd_compare(&cfg).unwrap();
    let mean = |k: OptimizerKind| {
        out.summaries
            .iter()
            .find(|s| s.point.optimizer == k)
            .map(|s| (s.final_train_loss.mean, s.final_train_loss.n))
            .unwrap()
    };
    let (sgd, adam, k1, k2) = (
        mean(OptimizerKind::Sgd),
        mean(OptimizerKind::Adam),
        mean(OptimizerKind::Kfac1),
        mean(OptimizerKind::Kfac2),
    );
    let all_ran = out.failures.is_empty() && [sgd, adam, k1, k2].iter().all(|m| m.1 == 5);
    let first_order_best = sgd.0.min(adam.0);
    let a = k1.0 < first_order_best && k2.0 < first_order_best;
    let b = k2.0 <= k1.0;
    let pass = all_ran && a && b;
    report(
        "9",
        "32-layer linear MLP ordering over 5 seeds",
        pass,
        &format!(
            "mean final train loss sgd {:.5}, adam {:.5}, kfac1 {:.5}, kfac2 {:.5}; (a) K-FAC below SGD/Adam: {a}; (b) kfac2 <= kfac1: {b}",
            sgd.0, adam.0, k1.0, k2.0
        ),
    );
    assert!(pass);
}

#[test]
fn c10_full_size_configuration_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = paper_compare(64, 25_000, 2_500, 512, 2, vec![1], dir.path());
    let out = cmd_compare(&cfg).unwrap();
    let finals: Vec<String> = out
        .summaries
        .iter()
        .map(|s| format!("{} {:.4}", s.point.optimizer.name(), s.final_train_loss.mean))
        .collect();
    let finite = out.summaries.iter().all(|s| s.final_train_loss.mean.is_finite() && s.final_train_loss.n == 1);
    let two_epochs = out
        .summaries
        .iter()
        .all(|s| s.runs.iter().all(|(_, rows)| rows.len() == 2));
    let pass = out.failures.is_empty() && finite && two_epochs;
    report(
        "10",
        "64-layer, 25k/2.5k, B=512 for 2 epochs",
        pass,
        &format!("failures {}, final train loss: {}", out.failures.len(), finals.join(", ")),
    );
    assert!(pass);
}
