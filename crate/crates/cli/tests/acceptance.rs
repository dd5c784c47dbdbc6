//! Acceptance criteria, one line each. Runs with `harness = false` so the
//! lines show up in plain `cargo test` output.

use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use fgd_core::experiment::verify::{self, Lemma1Config, Thm1Config, Thm2Config, Thm3Config, LEMMA1_ABS_TOL};
use fgd_core::experiment::{self, RunSummary};
use fgd_core::linalg::SymMatrix;
use fgd_core::model::{self, Sampler};
use fgd_core::optimizers::dual_pass_eval;
use fgd_core::theory::{self, CovRecursionState};
use fgd_core::{Method, ModelSpec, RngStream, Trajectory};

const SEED: u64 = 20240101;

const LEMMA1_LIMIT: Duration = Duration::from_secs(10);
const THM1_LIMIT: Duration = Duration::from_secs(30);
const THM2_LIMIT: Duration = Duration::from_secs(60);
const THM3_LIMIT: Duration = Duration::from_secs(20);
const FIG2_D10_LIMIT: Duration = Duration::from_secs(60);
const FIG2_D100_LIMIT: Duration = Duration::from_secs(15 * 60);

const THM2_REPS: usize = 2000;
const THM2_A: f64 = 3.0;
const THM2_SPREAD: f64 = 1.0;
const THM2_CHECKPOINTS: [u64; 8] = [1, 2, 5, 10, 20, 50, 100, 200];
const SINGLE_STEP_TOL: f64 = 1e-12;

const FIG2_BAND: (f64, f64) = (0.2, 5.0);
// plateau: geometric-mean mse within this factor of its value at k = 10
const PLATEAU_FACTOR: f64 = 3.0;
const PLATEAU_KS: [u64; 2] = [1_000, 10_000];
const SLOPE_TARGET: f64 = -1.0;
const SLOPE_TOL: f64 = 0.2;

const K_STAR_10: (f64, f64) = (1.65e3, 1.75e3);
const K_STAR_100: (f64, f64) = (3.35e5, 3.45e5);

const DUAL_INSTANCES: usize = 1000;
const DUAL_TOL: f64 = 1e-12;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

fn timed(limit: Duration, started: Instant) -> (bool, String) {
    let t = started.elapsed();
    (t < limit, format!("{:.1} s of {} s", t.as_secs_f64(), limit.as_secs()))
}

fn fourth_moment() -> Outcome {
    let started = Instant::now();
    let r = verify::verify_lemma1(&Lemma1Config::standard(SEED)).unwrap();
    let (fast, time) = timed(LEMMA1_LIMIT, started);
    let exact_case = r.checks.iter().filter(|c| c.label.starts_with("case 0")).count();
    let worst = r
        .checks
        .iter()
        .filter(|c| c.label.starts_with("case 0"))
        .map(|c| (c.observed - c.expected).abs())
        .fold(0.0, f64::max);
    Outcome::new(
        r.passed() && exact_case == 3 && worst <= LEMMA1_ABS_TOL && fast,
        format!(
            "{} checks, diag(3,1) max err {worst:.4}, max |z| {:.2}, {time}",
            r.checks.len(),
            r.max_abs_z().unwrap_or(f64::NAN)
        ),
    )
}

fn mean_closed_form() -> Outcome {
    let started = Instant::now();
    let r = verify::verify_theorem1(&Thm1Config::standard(SEED)).unwrap();
    let (fast, time) = timed(THM1_LIMIT, started);
    Outcome::new(
        r.passed() && fast,
        format!("max |z| {:.2}, {time}", r.max_abs_z().unwrap_or(f64::NAN)),
    )
}

fn single_step_errors() -> f64 {
    let mut rng = RngStream::new(SEED, 77);
    let sigma = SymMatrix::identity(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s = rng.uniform(0.0, 10.0);
        let alpha = rng.uniform(0.0, 0.2);
        let state = CovRecursionState::new(SymMatrix::from_diagonal(&[s]));
        let next = theory::cov_recursion_step(&state, &sigma, alpha).unwrap();
        let expected = (1.0 - alpha).powi(2) * s + 8.0 * alpha * alpha * s + 3.0 * alpha * alpha;
        worst = worst.max((next.a_matrix.get(0, 0) - expected).abs());
    }
    worst
}

fn second_moments() -> Outcome {
    let started = Instant::now();
    let mut cases = Thm2Config::cases(SEED, THM2_A, THM2_SPREAD);
    cases.truncate(2);
    let cfg = Thm2Config {
        cases,
        checkpoints: THM2_CHECKPOINTS.to_vec(),
        n_reps: THM2_REPS,
        seed: SEED,
        tamper: false,
    };
    let r = verify::verify_theorem2(&cfg).unwrap();
    let step_err = single_step_errors();
    let (fast, time) = timed(THM2_LIMIT, started);
    Outcome::new(
        r.passed() && step_err <= SINGLE_STEP_TOL && fast,
        format!(
            "{} checks, max |z| {:.2}, single step err {step_err:.1e}, {time}",
            r.checks.len(),
            r.max_abs_z().unwrap_or(f64::NAN)
        ),
    )
}

fn bound_domination() -> Outcome {
    let started = Instant::now();
    let r = verify::verify_bound(&Thm3Config::default()).unwrap();
    let (fast, time) = timed(THM3_LIMIT, started);
    let worst = r.checks.iter().map(|c| c.observed / c.expected).fold(0.0, f64::max);
    Outcome::new(
        r.passed() && r.checks.len() == 9 && fast,
        format!("{} cases, max risk/bound {worst:.4}, {time}", r.checks.len()),
    )
}

fn in_band(x: Option<f64>) -> bool {
    x.is_some_and(|r| r >= FIG2_BAND.0 && r <= FIG2_BAND.1)
}

fn summary_for(s: &[RunSummary], m: Method) -> &RunSummary {
    s.iter().find(|r| r.method == m).unwrap()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.3}"))
}

fn figure2_d10() -> Outcome {
    let started = Instant::now();
    let cfg = experiment::figure2_config(10, SEED).unwrap();
    let trajs = experiment::run_experiment(&cfg).unwrap();
    let (fast, time) = timed(FIG2_D10_LIMIT, started);
    let s = experiment::summarize(&trajs, 10, cfg.n_steps);
    let fg = summary_for(&s, Method::ForwardGradient);
    let sgd = summary_for(&s, Method::Sgd);
    Outcome::new(
        in_band(fg.ratio_to_reference) && in_band(sgd.ratio_to_reference) && fast,
        format!(
            "fg k*mse/d^2 {}, sgd k*mse/d {}, {time}",
            fmt_opt(fg.ratio_to_reference),
            fmt_opt(sgd.ratio_to_reference)
        ),
    )
}

// geometric mean over runs of the mse at the checkpoint closest to k in log scale
fn geo_mse_near(trajs: &[&Trajectory], k: u64) -> f64 {
    let lk = (k as f64).ln();
    let logs: f64 = trajs
        .iter()
        .map(|t| {
            let r = t
                .records
                .iter()
                .filter(|r| r.k > 0)
                .min_by(|a, b| {
                    let da = ((a.k as f64).ln() - lk).abs();
                    let db = ((b.k as f64).ln() - lk).abs();
                    da.total_cmp(&db)
                })
                .unwrap();
            r.mse.ln()
        })
        .sum();
    (logs / trajs.len() as f64).exp()
}

fn figure2_d100() -> Outcome {
    let started = Instant::now();
    let cfg = experiment::figure2_config(100, SEED).unwrap();
    let trajs = experiment::run_experiment(&cfg).unwrap();
    let (fast, time) = timed(FIG2_D100_LIMIT, started);
    let fg: Vec<&Trajectory> = trajs.iter().filter(|t| t.method == Method::ForwardGradient).collect();
    let base = geo_mse_near(&fg, 10);
    let ratios: Vec<f64> = PLATEAU_KS.iter().map(|&k| geo_mse_near(&fg, k) / base).collect();
    let plateau = ratios
        .iter()
        .all(|r| *r >= 1.0 / PLATEAU_FACTOR && *r <= PLATEAU_FACTOR);
    let s = experiment::summarize(&trajs, 100, cfg.n_steps);
    let slope = summary_for(&s, Method::ForwardGradient).slope;
    let slope_ok = slope.is_some_and(|v| (v - SLOPE_TARGET).abs() <= SLOPE_TOL);
    Outcome::new(
        plateau && slope_ok && fast,
        format!(
            "mse(1e3)/mse(10) {:.3}, mse(1e4)/mse(10) {:.3}, fg slope {}, {time}",
            ratios[0],
            ratios[1],
            fmt_opt(slope)
        ),
    )
}

fn k_star() -> Outcome {
    let k10 = theory::k_star(10).unwrap();
    let k100 = theory::k_star(100).unwrap();
    let ok = k10 >= K_STAR_10.0 && k10 <= K_STAR_10.1 && k100 >= K_STAR_100.0 && k100 <= K_STAR_100.1;
    Outcome::new(ok, format!("k*(10) {k10:.1}, k*(100) {k100:.1}"))
}

fn dual_pass() -> Outcome {
    let mut worst: f64 = 0.0;
    for d in [2, 10] {
        let mut rng = RngStream::new(SEED, 1000 + d as u64);
        let mut theta_star = rng.standard_normal_vec(d);
        theta_star.iter_mut().for_each(|t| *t *= 2.0);
        let spec = ModelSpec::identity(theta_star).unwrap();
        let mut sampler = Sampler::new(&spec).unwrap();
        for _ in 0..DUAL_INSTANCES {
            let theta = rng.standard_normal_vec(d);
            let v = rng.standard_normal_vec(d);
            let p = sampler.sample(&mut rng);
            let (l, dl) = dual_pass_eval(&theta, &v, &p).unwrap();
            let g = model::gradient(&theta, &p).unwrap();
            let gv: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            let lo = model::loss(&theta, &p).unwrap();
            worst = worst.max((l - lo).abs() / lo.abs().max(1.0));
            worst = worst.max((dl - gv).abs() / gv.abs().max(1.0));
        }
    }
    Outcome::new(
        worst <= DUAL_TOL,
        format!("{} instances, max scaled err {worst:.2e}", 2 * DUAL_INSTANCES),
    )
}

fn reproduce(out: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_fgd-lab"))
        .args(["reproduce-fig2", "--d", "10", "--seed", "11", "--out"])
        .arg(out)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    std::fs::read(out.join("trajectories.csv")).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let first = reproduce(&dir.path().join("a"));
    let second = reproduce(&dir.path().join("b"));
    Outcome::new(
        !first.is_empty() && first == second,
        format!("{} bytes, identical: {}", first.len(), first == second),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("fourth-moment identity", fourth_moment),
        ("mean closed form", mean_closed_form),
        ("second-moment recursion", second_moments),
        ("risk bound domination", bound_domination),
        ("rate study d=10 and d=100", || {
            let a = figure2_d10();
            let b = figure2_d100();
            Outcome::new(a.passed && b.passed, format!("d=10: {}; d=100: {}", a.detail, b.detail))
        }),
        ("burn-in constants", k_star),
        ("dual pass exactness", dual_pass),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!(
            "criterion {} ({name}): {}  {}",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
