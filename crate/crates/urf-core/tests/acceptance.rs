//! End-to-end acceptance checks, one test per criterion. Every test prints a
//! single pass/fail line (visible with `--nocapture`) before propagating any
//! failure, so a full run reads as a checklist.

use std::fs;
use std::panic::AssertUnwindSafe;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tempfile::TempDir;

use urf_core::cli::{
    cmd_fit, cmd_generate, cmd_sweep, cmd_worstcase, fit_model, ExperimentConfig, PcaConfig,
    SolverSection, SweepAxis,
};
use urf_core::dynamics::{NominalModel, TubeMode, UrfModel};
use urf_core::features::{build_feature_map, fit_pca_projection, FeatureKind, FeatureSpec};
use urf_core::regression::{
    chi2_quantile, credible_set, fit_blr, fit_blr_multi, update_blr, UncertaintySet,
};
use urf_core::systems::{
    generate_dataset, CostKind, IntegratorMethod, IntegratorSpec, ReferenceSystem, RolloutConfig,
    SystemSpec,
};
use urf_core::worstcase::{
    backward_pass, solve, solve_exact_pmp, total_cost, CostFunction, Direction, Schedule,
    SolverConfig, WeightSchedule,
};

fn criterion(id: usize, label: &str, body: impl FnOnce()) {
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(body));
    match &outcome {
        Ok(()) => println!("criterion {id:2} ({label}): PASS"),
        Err(_) => println!("criterion {id:2} ({label}): FAIL"),
    }
    if let Err(e) = outcome {
        std::panic::resume_unwind(e);
    }
}

// ---------------------------------------------------------------------------
// shared builders

/// Small nonlinear regression problem whose fitted model is well conditioned.
fn random_model(seed: u64, state_dim: usize, count: usize, reduced: Option<usize>, alpha: f64) -> UrfModel {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let spec = FeatureSpec {
        kind: FeatureKind::Fourier,
        count,
        input_dim: state_dim,
        lengthscale: 1.0,
        seed: seed.wrapping_add(101),
    };
    let mut map = build_feature_map(&spec).unwrap();
    let inputs: Vec<DVector<f64>> = (0..150)
        .map(|_| DVector::from_fn(state_dim, |_, _| rng.gen_range(-1.2..1.2)))
        .collect();
    if let Some(lhat) = reduced {
        map = fit_pca_projection(&map, &inputs, lhat).unwrap();
    }
    // residual targets of a mildly nonlinear contracting map plus noise
    let mut targets = DMatrix::zeros(inputs.len(), state_dim);
    for (t, x) in inputs.iter().enumerate() {
        for d in 0..state_dim {
            let nl = 0.3 * x[d].sin() + 0.1 * x.iter().sum::<f64>().cos();
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.01;
            targets[(t, d)] = nl + noise;
        }
    }
    let phi = map.projected_design_matrix(&inputs).unwrap();
    let posteriors = fit_blr_multi(&phi, &targets, 1e-4).unwrap();
    let sets: Vec<UncertaintySet> = posteriors
        .iter()
        .map(|p| credible_set(p, alpha).unwrap())
        .collect();
    let nominal = NominalModel::Affine {
        matrix: DMatrix::identity(state_dim, state_dim) * 0.5,
        offset: DVector::zeros(state_dim),
    };
    UrfModel::new(nominal, map, posteriors, sets).unwrap()
}

/// Van der Pol experiment at desk scale (200 features reduced to 50).
fn vdp_config() -> ExperimentConfig {
    ExperimentConfig {
        system: SystemSpec::VanDerPol,
        integrator: IntegratorSpec {
            method: IntegratorMethod::Rk4,
            dt: 0.05,
        },
        rollouts: RolloutConfig {
            num_rollouts: 5,
            length: 30,
            noise_std: 0.01,
            seed: 3,
        },
        features: FeatureSpec {
            kind: FeatureKind::Fourier,
            count: 200,
            input_dim: 2,
            lengthscale: 1.0,
            seed: 4,
        },
        pca: PcaConfig {
            enabled: true,
            reduced_dim: 50,
        },
        alpha: 0.95,
        cerf: false,
        cost: CostKind::Quadratic,
        solver: SolverSection {
            horizon: 20,
            max_iterations: 60,
            schedule: Schedule::FwStandard,
            tolerance: 1e-8,
            initial_state: vec![0.5, 0.5],
        },
        tube_samples: 3,
        tube_mode: TubeMode::FixedWeight,
        seed: 0,
    }
}

fn signed_rollout_cost(
    model: &UrfModel,
    cost: &CostFunction,
    sign: f64,
    x0: &DVector<f64>,
    weights: &WeightSchedule,
) -> f64 {
    let traj = model.rollout_per_step(x0, weights).unwrap();
    sign * total_cost(cost, &traj).unwrap()
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_kernel_approximation() {
    criterion(1, "kernel approximation", || {
        let mut total_mae = 0.0;
        for seed in 0..5u64 {
            let spec = FeatureSpec {
                kind: FeatureKind::Fourier,
                count: 1000,
                input_dim: 2,
                lengthscale: 1.0,
                seed,
            };
            let map = build_feature_map(&spec).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(1000 + seed);
            let mut mae = 0.0;
            for _ in 0..100 {
                let x = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
                let xp = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
                let approx = map.evaluate(&x).unwrap().dot(&map.evaluate(&xp).unwrap());
                let exact = (-(&x - &xp).norm_squared() / 2.0).exp();
                mae += (approx - exact).abs();
            }
            total_mae += mae / 100.0;
        }
        let avg = total_mae / 5.0;
        assert!(avg <= 0.05, "mean absolute error {avg} exceeds 0.05");
    });
}

#[test]
fn criterion_02_blr_oracle_equivalence() {
    criterion(2, "regression oracle equivalence", || {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..20 {
            let t = rng.gen_range(20..=100);
            let l = rng.gen_range(5..=50);
            let noise_var: f64 = rng.gen_range(0.05..0.5);
            let phi = DMatrix::from_fn(t, l, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w_true = DVector::from_fn(l, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &phi * &w_true
                + DVector::from_fn(t, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.1);

            let post = fit_blr(&phi, &y, noise_var).unwrap();
            // dense-inverse oracle
            let precision = phi.transpose() * &phi + DMatrix::identity(l, l) * noise_var;
            let inv = precision.try_inverse().unwrap();
            let mean_oracle = &inv * (phi.transpose() * &y);
            let cov_oracle = inv * noise_var;
            assert!((post.mean() - mean_oracle).amax() <= 1e-8);
            assert!((post.covariance() - cov_oracle).amax() <= 1e-8);

            // incremental update equals batch refit
            let split = t / 2;
            let first = phi.rows(0, split).into_owned();
            let rest = phi.rows(split, t - split).into_owned();
            let y_first = y.rows(0, split).into_owned();
            let y_rest = y.rows(split, t - split).into_owned();
            let partial = fit_blr(&first, &y_first, noise_var).unwrap();
            let updated = update_blr(&partial, &rest, &y_rest).unwrap();
            assert!((updated.mean() - post.mean()).amax() <= 1e-8);
            assert!((updated.covariance() - post.covariance()).amax() <= 1e-8);
        }
    });
}

fn chi2_quantile_oracle(dof: usize, alpha: f64) -> f64 {
    // independent root of the chi-squared CDF via plain bisection
    let dist = ChiSquared::new(dof as f64).unwrap();
    let (mut lo, mut hi) = (0.0f64, 1e4f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist.cdf(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_03_credible_set_calibration() {
    criterion(3, "credible set calibration", || {
        for dof in [1usize, 2, 10, 100] {
            for alpha in [0.5, 0.9, 0.95, 0.99] {
                let ours = chi2_quantile(dof, alpha).unwrap();
                let oracle = chi2_quantile_oracle(dof, alpha);
                assert!(
                    (ours - oracle).abs() <= 1e-6,
                    "chi2({dof}, {alpha}): {ours} vs oracle {oracle}"
                );
            }
        }

        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let l = 10;
        let t = 60;
        let phi = DMatrix::from_fn(t, l, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(t, |_, _| rng.sample::<f64, _>(StandardNormal));
        let post = fit_blr(&phi, &y, 0.1).unwrap();
        let set = credible_set(&post, 0.9).unwrap();
        let samples = 100_000;
        let mut inside = 0usize;
        for _ in 0..samples {
            if set.contains(&post.sample(&mut rng)).unwrap() {
                inside += 1;
            }
        }
        let frac = inside as f64 / samples as f64;
        assert!(
            (0.89..=0.91).contains(&frac),
            "membership fraction {frac} outside [0.89, 0.91]"
        );
    });
}

#[test]
fn criterion_04_closed_form_minimizer_optimality() {
    criterion(4, "closed-form minimizer optimality", || {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(1..=20);
            let center = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let shape = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
            let set = UncertaintySet::from_parts(center.clone(), shape, 0.9).unwrap();
            let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));

            let w_star = set.support_minimizer(&g).unwrap();
            let value = g.dot(&w_star);
            assert!((set.quadratic_form(&w_star).unwrap() - 1.0).abs() <= 1e-8);

            // boundary sampling oracle: min of g'w over w = center + F u, |u| = 1
            let fg = set.shape_factor().transpose() * &g;
            let base = g.dot(&center);
            let mut best = f64::INFINITY;
            for _ in 0..100_000 {
                let mut u = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = u.norm();
                if norm == 0.0 {
                    continue;
                }
                u /= norm;
                best = best.min(base + fg.dot(&u));
            }
            assert!(
                value <= best + 1e-9,
                "closed form {value} above sampled minimum {best}"
            );
        }
    });
}

#[test]
fn criterion_05_adjoint_matches_finite_differences() {
    criterion(5, "adjoint gradient correctness", || {
        let cost = CostFunction::Quadratic;
        let direction = Direction::Worst;
        let sign = -1.0;
        for (seed, p, count, reduced, horizon) in [
            (51u64, 1usize, 25usize, None, 6usize),
            (52, 2, 40, Some(20), 10),
            (53, 3, 30, None, 8),
        ] {
            let model = random_model(seed, p, count, reduced, 0.9);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let x0 = DVector::from_fn(p, |_, _| rng.gen_range(-0.5..0.5));
            let weights: WeightSchedule = (0..horizon)
                .map(|_| model.sets().iter().map(|s| s.sample_uniform(&mut rng)).collect())
                .collect();
            let traj = model.rollout_per_step(&x0, &weights).unwrap();
            let costates = backward_pass(&model, &cost, direction, &traj, &weights).unwrap();

            let h = 1e-6;
            for n in 0..horizon {
                let phi = model.features().evaluate(&traj.states[n]).unwrap();
                for d in 0..p {
                    let analytic = &phi * costates[n + 1][d];
                    let mut fd = DVector::zeros(phi.len());
                    for e in 0..phi.len() {
                        let mut plus = weights.clone();
                        let mut minus = weights.clone();
                        plus[n][d][e] += h;
                        minus[n][d][e] -= h;
                        let jp = signed_rollout_cost(&model, &cost, sign, &x0, &plus);
                        let jm = signed_rollout_cost(&model, &cost, sign, &x0, &minus);
                        fd[e] = (jp - jm) / (2.0 * h);
                    }
                    let rel = (&analytic - &fd).norm() / fd.norm().max(1.0);
                    assert!(rel <= 1e-5, "step {n} dim {d}: relative error {rel}");
                }
            }
        }
    });
}

#[test]
fn criterion_06_full_step_equals_exact() {
    criterion(6, "full-step schedule equals exact updates", || {
        for seed in 0..10u64 {
            let p = 1 + (seed % 3) as usize;
            let model = random_model(600 + seed, p, 20, None, 0.9);
            let mut rng = ChaCha20Rng::seed_from_u64(60 + seed);
            let x0 = DVector::from_fn(p, |_, _| rng.gen_range(-0.5..0.5));
            let mut cfg = SolverConfig::new(Direction::Worst, 6, x0);
            cfg.max_iterations = 5;
            cfg.tolerance = 0.0;
            cfg.schedule = Schedule::FullStep;
            cfg.record_history = true;
            let inexact = solve(&model, &CostFunction::Quadratic, &cfg).unwrap();
            let exact = solve_exact_pmp(&model, &CostFunction::Quadratic, &cfg).unwrap();
            assert_eq!(inexact.weight_history.len(), exact.weight_history.len());
            for (a, b) in inexact.weight_history.iter().zip(&exact.weight_history) {
                for (sa, sb) in a.iter().zip(b) {
                    for (wa, wb) in sa.iter().zip(sb) {
                        assert!((wa - wb).amax() <= 1e-10);
                    }
                }
            }
        }
    });
}

#[test]
fn criterion_07_sweep_brackets_truth_and_tightens() {
    criterion(7, "sweep brackets truth with tightening intervals", || {
        let dir = TempDir::new().unwrap();
        let config = vdp_config();
        let values: Vec<String> = ["5", "25", "100", "200"].iter().map(|s| s.to_string()).collect();
        let cells = cmd_sweep(&config, SweepAxis::NumRollouts, &values, &[0, 1, 2], 4, dir.path())
            .unwrap();
        assert_eq!(cells.len(), 12);
        let mut widths = Vec::new();
        for value in &values {
            let group: Vec<_> = cells.iter().filter(|c| &c.axis_value == value).collect();
            assert_eq!(group.len(), 3);
            for c in &group {
                assert!(
                    c.best <= c.true_cost && c.true_cost <= c.worst,
                    "cell {value}/{}: best {} true {} worst {}",
                    c.seed,
                    c.best,
                    c.true_cost,
                    c.worst
                );
            }
            widths.push(group.iter().map(|c| c.interval_width).sum::<f64>() / 3.0);
        }
        for pair in widths.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "mean interval width increased: {widths:?}"
            );
        }
    });
}

fn mean_rollout_rmse(config: &ExperimentConfig, steps: usize) -> f64 {
    let system = ReferenceSystem::new(config.system.clone(), config.integrator).unwrap();
    let (dataset, _) = generate_dataset(&system, &config.rollouts).unwrap();
    let (model, _) = fit_model(config, &dataset).unwrap();
    let x0_raw = DVector::from_column_slice(&config.solver.initial_state);
    let x0 = system.embed(&x0_raw);
    let predicted = model.rollout_mean(&x0, steps).unwrap();
    let truth = system.simulate(&x0_raw, steps).unwrap();
    let mut sum = 0.0;
    for (a, b) in predicted.states.iter().zip(&truth.states).skip(1) {
        sum += (a - b).norm_squared();
    }
    (sum / steps as f64).sqrt()
}

#[test]
fn criterion_08_rmse_improves_with_data() {
    criterion(8, "prediction error shrinks with more data", || {
        let mut small = Vec::new();
        let mut large = Vec::new();
        for seed in 0..3u64 {
            let mut config = vdp_config();
            config.rollouts.seed = 100 + seed;
            config.rollouts.num_rollouts = 5;
            small.push(mean_rollout_rmse(&config, 50));
            config.rollouts.num_rollouts = 200;
            large.push(mean_rollout_rmse(&config, 50));
        }
        small.sort_by(|a, b| a.partial_cmp(b).unwrap());
        large.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (med_small, med_large) = (small[1], large[1]);
        assert!(
            med_large <= 0.25 * med_small,
            "median RMSE with 200 rollouts {med_large} not <= 25% of {med_small}"
        );
    });
}

#[test]
fn criterion_09_feasibility_invariant() {
    criterion(9, "ellipsoid feasibility of every iterate", || {
        let mut worst_violation: f64 = 0.0;
        for seed in 0..6u64 {
            let p = 1 + (seed % 3) as usize;
            let model = random_model(900 + seed, p, 25, None, 0.95);
            let mut rng = ChaCha20Rng::seed_from_u64(90 + seed);
            let x0 = DVector::from_fn(p, |_, _| rng.gen_range(-0.5..0.5));
            for schedule in [Schedule::FwStandard, Schedule::FullStep, Schedule::Constant] {
                for direction in [Direction::Worst, Direction::Best] {
                    let mut cfg = SolverConfig::new(direction, 8, x0.clone());
                    cfg.max_iterations = 30;
                    cfg.schedule = schedule;
                    let result = solve(&model, &CostFunction::Quadratic, &cfg).unwrap();
                    worst_violation = worst_violation.max(result.max_membership_violation);
                }
            }
        }
        assert!(
            worst_violation <= 1e-10,
            "membership violation {worst_violation} exceeds 1e-10"
        );
    });
}

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, out);
        } else {
            out.push(path);
        }
    }
}

#[test]
fn criterion_10_determinism() {
    criterion(10, "bit-identical reruns", || {
        let mut config = vdp_config();
        // smaller scale keeps the double run quick without changing the claim
        config.features.count = 60;
        config.pca.reduced_dim = 20;
        config.solver.horizon = 15;
        config.tube_samples = 2;
        let run = |dir: &Path| {
            cmd_generate(&config, dir).unwrap();
            cmd_fit(&config, &dir.join("dataset.csv"), dir).unwrap();
            cmd_worstcase(&config, &dir.join("model.json"), dir).unwrap();
        };
        let dir_a = TempDir::new().unwrap();
        let dir_b = TempDir::new().unwrap();
        run(dir_a.path());
        run(dir_b.path());
        let mut files_a = Vec::new();
        collect_files(dir_a.path(), &mut files_a);
        assert!(!files_a.is_empty());
        files_a.sort();
        for a in &files_a {
            let rel = a.strip_prefix(dir_a.path()).unwrap();
            let b = dir_b.path().join(rel);
            let bytes_a = fs::read(a).unwrap();
            let bytes_b = fs::read(&b).unwrap_or_else(|_| panic!("missing {rel:?} in rerun"));
            assert_eq!(bytes_a, bytes_b, "{rel:?} differs between reruns");
        }
    });
}
