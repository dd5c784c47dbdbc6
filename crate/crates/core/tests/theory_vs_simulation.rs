use fgd_core::experiment::verify::{self, Suite, Thm2Case, Thm2Config};
use fgd_core::linalg::SymMatrix;
use fgd_core::model::{ModelSpec, Sampler};
use fgd_core::optimizers::OptimizerState;
use fgd_core::theory::{self, RecursionVariant, RiskRecursion, Schedule, StepSize, Welford};
use fgd_core::{DataPoint, RngStream};

#[test]
fn default_suites_pass() {
    for suite in Suite::ALL {
        let r = verify::run_suite(suite, 20240101, false).unwrap();
        println!("{r}");
        assert!(r.passed(), "{r}");
    }
}

#[test]
fn tampered_suites_fail() {
    for suite in Suite::ALL {
        let r = verify::run_suite(suite, 20240101, true).unwrap();
        println!("{r}");
        assert!(!r.passed(), "{suite} did not detect tampering");
    }
}

#[test]
fn suites_pass_on_other_seeds() {
    for seed in [1, 2] {
        for suite in [Suite::Thm1, Suite::Thm2] {
            let r = verify::run_suite(suite, seed, false).unwrap();
            assert!(r.passed(), "seed {seed}: {r}");
        }
    }
}

#[test]
fn sandwich_ablation_fails_at_late_checkpoints() {
    let r = verify::run_suite(Suite::Thm2, 20240101, true).unwrap();
    let late = r.failures().any(|c| {
        let k: u64 = c
            .label
            .split("k=")
            .nth(1)
            .unwrap()
            .split(' ')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        k >= 50
    });
    assert!(late, "{r}");
}

#[test]
fn start_at_truth_first_step_is_three_alpha_squared() {
    let cfg = Thm2Config {
        cases: vec![Thm2Case {
            sigma: SymMatrix::identity(1),
            theta_star: vec![0.7],
            theta0: vec![0.7],
            a: 3.0,
        }],
        checkpoints: vec![1],
        n_reps: 20_000,
        seed: 5,
        tamper: false,
    };
    let r = verify::verify_theorem2(&cfg).unwrap();
    let alpha = 3.0 / (1.0 + 27.0);
    assert!((r.checks[0].expected - 3.0 * alpha * alpha).abs() < 1e-15);
    assert!(r.passed(), "{r}");
}

#[test]
fn risk_at_k100_matches_replications() {
    let spec = ModelSpec::identity(vec![0.5, -1.0, 2.0]).unwrap();
    let schedule = Schedule::for_model(&spec, 3.0).unwrap();
    let step = StepSize::Schedule(schedule);
    let theta0 = [0.0; 3];
    let mut sampler = Sampler::new(&spec).unwrap();
    let mut stats = Welford::default();
    for r in 0..2000 {
        let mut state = OptimizerState::new(theta0.to_vec(), RngStream::new(77, r + 1)).unwrap();
        let mut p = DataPoint::zeros(3);
        for k in 1..=100 {
            sampler.sample_into(state.rng_mut(), &mut p);
            state.forward_gradient_step(&p, step.alpha(k)).unwrap();
        }
        stats.push(fgd_core::linalg::dist_sq(state.theta(), spec.theta_star()));
    }
    let e0: Vec<f64> = spec.theta_star().iter().map(|t| -t).collect();
    let curve = theory::exact_risk_curve(spec.sigma(), &step, &SymMatrix::outer(&e0), 100, &[100]).unwrap();
    let z = (stats.mean() - curve[0].1) / stats.std_err();
    assert!(z.abs() <= 5.0, "z = {z}");
}

#[test]
fn dense_sigma_recursion_matches_replications() {
    let sigma = SymMatrix::from_rows(&[vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap();
    let cfg = Thm2Config {
        cases: vec![Thm2Case {
            sigma,
            theta_star: vec![1.0, -1.0],
            theta0: vec![-1.0, 2.0],
            a: 2.5,
        }],
        checkpoints: vec![1, 10, 50, 200],
        n_reps: 4000,
        seed: 9,
        tamper: false,
    };
    let r = verify::verify_theorem2(&cfg).unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn fast_path_risk_matches_dense_with_correlated_start() {
    let sigma = SymMatrix::from_diagonal(&[1.0, 3.0, 0.5]);
    let a0 = SymMatrix::from_rows(&[vec![2.0, 0.5, -0.3], vec![0.5, 1.0, 0.2], vec![-0.3, 0.2, 0.7]]).unwrap();
    let mut fast = RiskRecursion::new(&sigma, &a0).unwrap();
    assert!(matches!(fast, RiskRecursion::Diagonal(_)));
    let mut dense = theory::CovRecursionState::new(a0);
    let schedule = Schedule::new(3.0, 0.5, 3.0, 3).unwrap();
    for k in 1..=500 {
        let alpha = schedule.alpha(k);
        fast.step(alpha, RecursionVariant::Full).unwrap();
        dense = theory::cov_recursion_step(&dense, &sigma, alpha).unwrap();
        let rel = (fast.risk() - dense.risk()).abs() / dense.risk();
        assert!(rel < 1e-12, "k = {k}: {rel}");
    }
}
