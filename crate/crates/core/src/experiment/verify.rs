//! Monte Carlo and deterministic checks of simulation against theory.
//!
//! Every suite returns a [`Report`] of individual checks. Monte Carlo checks
//! pass when `|observed − expected| ≤ 5` standard errors; deterministic
//! checks compare directly. Each suite has a tampered variant that must fail.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::{ExperimentError, INIT_STREAM, TRUTH_STREAM};
use crate::linalg::{self, SymMatrix};
use crate::model::{DataPoint, ModelSpec, Sampler};
use crate::optimizers::{Method, OptimizerState};
use crate::rng::RngStream;
use crate::theory::{self, CovRecursionState, DiagonalCovRecursion, RecursionVariant, Schedule, StepSize, Welford};

pub const Z_THRESHOLD: f64 = 5.0;
pub const LEMMA1_ABS_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Thm1,
    Thm2,
    Thm3,
    Lemma1,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Thm1, Suite::Thm2, Suite::Thm3, Suite::Lemma1];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Thm1 => "thm1",
            Suite::Thm2 => "thm2",
            Suite::Thm3 => "thm3",
            Suite::Lemma1 => "lemma1",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown suite {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    /// `|observed − expected| / std_err ≤ t`
    ZScore(f64),
    /// `|observed − expected| ≤ t`
    Absolute(f64),
    /// `observed ≤ expected`
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub observed: f64,
    pub expected: f64,
    pub std_err: Option<f64>,
    pub tolerance: Tolerance,
}

impl Check {
    pub fn z(&self) -> Option<f64> {
        self.std_err
            .filter(|&s| s > 0.0)
            .map(|s| (self.observed - self.expected) / s)
    }

    pub fn passed(&self) -> bool {
        let diff = (self.observed - self.expected).abs();
        match self.tolerance {
            Tolerance::ZScore(t) => match self.z() {
                Some(z) => z.abs() <= t,
                None => diff <= 1e-12 * (1.0 + self.expected.abs()),
            },
            Tolerance::Absolute(t) => diff <= t,
            Tolerance::AtMost => self.observed <= self.expected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub suite: Suite,
    pub tampered: bool,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(Check::passed)
    }

    pub fn max_abs_z(&self) -> Option<f64> {
        self.checks
            .iter()
            .filter_map(Check::z)
            .map(f64::abs)
            .fold(None, |m, z| Some(m.map_or(z, |m: f64| m.max(z))))
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{}: {verdict} ({} checks", self.suite, self.checks.len())?;
        if let Some(z) = self.max_abs_z() {
            write!(f, ", max |z| = {z:.2}")?;
        }
        if self.tampered {
            write!(f, ", tampered")?;
        }
        writeln!(f, ")")?;
        writeln!(
            f,
            "  {:<34} {:>14} {:>14} {:>11} {:>8}  ok",
            "check", "observed", "expected", "std err", "z"
        )?;
        for c in &self.checks {
            let se = c.std_err.map_or("-".to_string(), |s| format!("{s:.4e}"));
            let z = c.z().map_or("-".to_string(), |z| format!("{z:.2}"));
            writeln!(
                f,
                "  {:<34} {:>14.6e} {:>14.6e} {:>11} {:>8}  {}",
                c.label,
                c.observed,
                c.expected,
                se,
                z,
                if c.passed() { "yes" } else { "NO" }
            )?;
        }
        Ok(())
    }
}

fn welford_all(samples: impl IntoIterator<Item = Vec<f64>>, width: usize) -> Vec<Welford> {
    let mut stats = vec![Welford::default(); width];
    for s in samples {
        for (w, v) in stats.iter_mut().zip(s) {
            w.push(v);
        }
    }
    stats
}

/// Forward-gradient iterate after each of `checkpoints`, fresh data per step.
fn fgd_iterates(
    spec: &ModelSpec,
    step: &StepSize,
    theta0: &[f64],
    checkpoints: &[u64],
    rng: RngStream,
) -> Result<Vec<Vec<f64>>, ExperimentError> {
    let mut sampler = Sampler::new(spec)?;
    let mut point = DataPoint::zeros(spec.d());
    let mut state = OptimizerState::new(theta0.to_vec(), rng).map_err(|source| ExperimentError::Run {
        method: Method::ForwardGradient,
        run_id: 0,
        source,
    })?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let last = checkpoints.last().copied().unwrap_or(0);
    let mut next = checkpoints.iter().copied().peekable();
    for k in 0..=last {
        if k > 0 {
            sampler.sample_into(state.rng_mut(), &mut point);
            state
                .forward_gradient_step(&point, step.alpha(k))
                .map_err(|source| ExperimentError::Run {
                    method: Method::ForwardGradient,
                    run_id: 0,
                    source,
                })?;
        }
        while next.peek() == Some(&k) {
            out.push(state.theta().to_vec());
            next.next();
        }
    }
    Ok(out)
}

fn error(theta: &[f64], theta_star: &[f64]) -> Vec<f64> {
    theta.iter().zip(theta_star).map(|(a, b)| a - b).collect()
}

/// Mean of forward-gradient iterates against the closed-form mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Thm1Config {
    pub sigma: SymMatrix,
    pub theta_star: Vec<f64>,
    pub theta0: Vec<f64>,
    pub alpha: f64,
    pub k: u64,
    pub n_reps: usize,
    pub seed: u64,
    /// Evaluate the closed form with the step size doubled.
    pub tamper: bool,
}

impl Thm1Config {
    /// `d = 3`, `Σ = I`, constant `α = 0.01`, `k = 50`, `10⁴` replications.
    pub fn standard(seed: u64) -> Self {
        let d = 3;
        Self {
            sigma: SymMatrix::identity(d),
            theta_star: RngStream::new(seed, TRUTH_STREAM).standard_normal_vec(d),
            theta0: RngStream::new(seed, INIT_STREAM).standard_normal_vec(d),
            alpha: 0.01,
            k: 50,
            n_reps: 10_000,
            seed,
            tamper: false,
        }
    }
}

pub fn verify_theorem1(cfg: &Thm1Config) -> Result<Report, ExperimentError> {
    if cfg.n_reps < 1000 {
        return Err(ExperimentError::Config(
            "mean check needs at least 1000 replications".into(),
        ));
    }
    let spec = ModelSpec::new(cfg.sigma.clone(), cfg.theta_star.clone())?;
    let d = spec.d();
    if cfg.theta0.len() != d {
        return Err(ExperimentError::Config("theta0 length differs from d".into()));
    }
    let step = StepSize::Constant(cfg.alpha);
    let finals = (0..cfg.n_reps)
        .into_par_iter()
        .map(|r| {
            let rng = RngStream::new(cfg.seed, r as u64 + 1);
            fgd_iterates(&spec, &step, &cfg.theta0, &[cfg.k], rng).map(|mut v| v.pop().unwrap_or_default())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stats = welford_all(finals, d);
    let theory_step = StepSize::Constant(if cfg.tamper { 2.0 * cfg.alpha } else { cfg.alpha });
    let expected = theory::closed_form_mean(&cfg.theta_star, &cfg.theta0, &cfg.sigma, &theory_step, cfg.k)?;
    let checks = stats
        .iter()
        .zip(expected)
        .enumerate()
        .map(|(i, (w, e))| Check {
            label: format!("k={} mean[{i}]", cfg.k),
            observed: w.mean(),
            expected: e,
            std_err: Some(w.std_err()),
            tolerance: Tolerance::ZScore(Z_THRESHOLD),
        })
        .collect();
    Ok(Report {
        suite: Suite::Thm1,
        tampered: cfg.tamper,
        checks,
    })
}

/// One model for the second-moment comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Thm2Case {
    pub sigma: SymMatrix,
    pub theta_star: Vec<f64>,
    pub theta0: Vec<f64>,
    /// Schedule parameter `a`.
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thm2Config {
    pub cases: Vec<Thm2Case>,
    pub checkpoints: Vec<u64>,
    pub n_reps: usize,
    pub seed: u64,
    /// Compare against the recursion without its `3α²ΣAΣ` term.
    pub tamper: bool,
}

impl Thm2Config {
    /// [`Thm2Config::cases`] with `a = 20`, start spread 5, `10⁴` replications
    /// and checkpoints up to `k = 200`.
    pub fn standard(seed: u64) -> Self {
        Self {
            cases: Self::cases(seed, 20.0, 5.0),
            checkpoints: vec![1, 2, 5, 10, 20, 50, 100, 200],
            n_reps: 10_000,
            seed,
            tamper: false,
        }
    }

    /// `d = 1` started at the truth, `d = 2` with `Σ = I` and `d = 3` with
    /// `Σ = diag(1, 2, 3)` started at `θ⋆ + spread·z`, `z ~ N(0, I)`.
    pub fn cases(seed: u64, a: f64, spread: f64) -> Vec<Thm2Case> {
        let mut truth = RngStream::new(seed, TRUTH_STREAM);
        let mut init = RngStream::new(seed, INIT_STREAM);
        let mut case = |sigma: SymMatrix, from_truth: bool| {
            let d = sigma.dim();
            let theta_star = truth.standard_normal_vec(d);
            let theta0 = if from_truth {
                theta_star.clone()
            } else {
                init.standard_normal_vec(d)
                    .iter()
                    .zip(&theta_star)
                    .map(|(z, t)| t + spread * z)
                    .collect()
            };
            Thm2Case {
                sigma,
                theta_star,
                theta0,
                a,
            }
        };
        vec![
            case(SymMatrix::identity(1), true),
            case(SymMatrix::identity(2), false),
            case(SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]), false),
        ]
    }
}

pub fn verify_theorem2(cfg: &Thm2Config) -> Result<Report, ExperimentError> {
    if cfg.n_reps < 2000 {
        return Err(ExperimentError::Config(
            "second-moment check needs at least 2000 replications".into(),
        ));
    }
    if cfg.checkpoints.is_empty() || cfg.checkpoints.windows(2).any(|w| w[0] >= w[1]) || cfg.checkpoints[0] == 0 {
        return Err(ExperimentError::Config(
            "checkpoints must be positive and strictly increasing".into(),
        ));
    }
    let variant = if cfg.tamper {
        RecursionVariant::WithoutSandwichTerm
    } else {
        RecursionVariant::Full
    };
    let mut checks = Vec::new();
    for (c, case) in cfg.cases.iter().enumerate() {
        let spec = ModelSpec::new(case.sigma.clone(), case.theta_star.clone())?;
        let d = spec.d();
        let step = StepSize::Schedule(Schedule::for_model(&spec, case.a)?);
        let entries: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
        let width = cfg.checkpoints.len() * entries.len();
        let samples = (0..cfg.n_reps)
            .into_par_iter()
            .map(|r| {
                let rng = RngStream::new(cfg.seed, (c as u64 + 1) * 1_000_000 + r as u64);
                let iterates = fgd_iterates(&spec, &step, &case.theta0, &cfg.checkpoints, rng)?;
                let mut row = Vec::with_capacity(width);
                for theta in &iterates {
                    let e = error(theta, &case.theta_star);
                    row.extend(entries.iter().map(|&(i, j)| e[i] * e[j]));
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        let stats = welford_all(samples, width);

        let e0 = error(&case.theta0, &case.theta_star);
        let mut state = CovRecursionState::new(SymMatrix::outer(&e0));
        let mut col = 0;
        for &k in &cfg.checkpoints {
            while state.k < k {
                let alpha = step.alpha(state.k + 1);
                state = theory::cov_recursion_step_variant(&state, &case.sigma, alpha, variant)?;
            }
            for &(i, j) in &entries {
                let w = &stats[col];
                checks.push(Check {
                    label: format!("d={d} k={k} A[{i},{j}]"),
                    observed: w.mean(),
                    expected: state.a_matrix.get(i, j),
                    std_err: Some(w.std_err()),
                    tolerance: Tolerance::ZScore(Z_THRESHOLD),
                });
                col += 1;
            }
        }
    }
    Ok(Report {
        suite: Suite::Thm2,
        tampered: cfg.tamper,
        checks,
    })
}

/// Deterministic domination of the exact risk by the bound, `Σ = I`,
/// `a = ln d`, `A₀ = r·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Thm3Config {
    pub dims: Vec<usize>,
    pub a0_scales: Vec<f64>,
    pub n_steps: u64,
    /// Drop the noise-floor term of the bound.
    pub tamper: bool,
}

impl Default for Thm3Config {
    fn default() -> Self {
        Self {
            dims: vec![8, 10, 16],
            a0_scales: vec![0.0, 1.0, 10.0],
            n_steps: 100_000,
            tamper: false,
        }
    }
}

/// Largest `trace(A_k) / bound(k)` over `k = 1..=n_steps` and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Domination {
    pub worst_k: u64,
    pub risk: f64,
    pub bound: f64,
    pub ratio: f64,
}

pub fn bound_domination(
    schedule: &Schedule,
    sigma_diag: &[f64],
    a0_diag: &[f64],
    n_steps: u64,
    drop_noise_term: bool,
) -> Result<Domination, ExperimentError> {
    let r0: f64 = a0_diag.iter().sum();
    theory::risk_bound(schedule, 1, r0)?;
    let mut rec = DiagonalCovRecursion::new(sigma_diag.to_vec(), a0_diag.to_vec())?;
    let mut worst = Domination {
        worst_k: 0,
        risk: 0.0,
        bound: 0.0,
        ratio: f64::NEG_INFINITY,
    };
    for k in 1..=n_steps {
        rec.step(schedule.alpha(k), RecursionVariant::Full);
        let risk = rec.risk();
        let (transient, noise) = theory::risk_bound_terms(schedule, k, r0);
        let bound = if drop_noise_term { transient } else { transient + noise };
        let ratio = if bound > 0.0 {
            risk / bound
        } else if risk > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > worst.ratio || !risk.is_finite() {
            worst = Domination {
                worst_k: k,
                risk,
                bound,
                ratio,
            };
            if !risk.is_finite() {
                break;
            }
        }
    }
    Ok(worst)
}

pub fn verify_bound(cfg: &Thm3Config) -> Result<Report, ExperimentError> {
    let mut checks = Vec::new();
    for &d in &cfg.dims {
        if d < 8 {
            return Err(ExperimentError::Config(format!("bound check needs d >= 8, got {d}")));
        }
        let schedule = Schedule::new((d as f64).ln(), 1.0, 1.0, d)?;
        for &r in &cfg.a0_scales {
            let w = bound_domination(&schedule, &vec![1.0; d], &vec![r; d], cfg.n_steps, cfg.tamper)?;
            checks.push(Check {
                label: format!("d={d} A0={r}I worst k={}", w.worst_k),
                observed: w.risk,
                expected: w.bound,
                std_err: None,
                tolerance: Tolerance::AtMost,
            });
        }
    }
    Ok(Report {
        suite: Suite::Thm3,
        tampered: cfg.tamper,
        checks,
    })
}

/// Fourth-moment identity: one fixed case and random `(Γ, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Config {
    pub n: usize,
    pub random_cases: usize,
    pub dim: usize,
    pub seed: u64,
    /// Use coefficient 1 instead of 2 on `Γ U Γ`.
    pub tamper: bool,
}

impl Lemma1Config {
    pub fn standard(seed: u64) -> Self {
        Self {
            n: 1_000_000,
            random_cases: 5,
            dim: 3,
            seed,
            tamper: false,
        }
    }
}

fn lemma1_rhs(gamma: &SymMatrix, u: &[f64], tamper: bool) -> Result<SymMatrix, ExperimentError> {
    let outer = SymMatrix::outer(u);
    let q = linalg::quad_form(u, gamma)?;
    if tamper {
        let (gug, _) = linalg::sandwich(gamma, &outer)?;
        Ok(linalg::linear_combination(&[(1.0, &gug), (q, gamma)])?)
    } else {
        Ok(theory::fourth_moment_rhs(gamma, &outer, q)?)
    }
}

pub fn verify_lemma1(cfg: &Lemma1Config) -> Result<Report, ExperimentError> {
    let mut cases = vec![(
        SymMatrix::identity(2),
        vec![1.0, 0.0],
        Tolerance::Absolute(LEMMA1_ABS_TOL),
    )];
    let mut draw = RngStream::new(cfg.seed, TRUTH_STREAM);
    let d = cfg.dim;
    for _ in 0..cfg.random_cases {
        let g = draw.standard_normal_vec(d * d);
        let gtg: Vec<f64> = (0..d * d)
            .map(|ij| {
                let (i, j) = (ij / d, ij % d);
                (0..d).map(|l| g[l * d + i] * g[l * d + j]).sum::<f64>()
            })
            .collect();
        let (gamma, _) = SymMatrix::symmetrize(d, gtg)?;
        cases.push((
            gamma.shifted(-(d as f64)),
            draw.standard_normal_vec(d),
            Tolerance::ZScore(Z_THRESHOLD),
        ));
    }
    let estimates = cases
        .par_iter()
        .enumerate()
        .map(|(c, (gamma, u, _))| {
            let mut rng = RngStream::new(cfg.seed, c as u64 + 1);
            theory::fourth_moment_lhs_mc(gamma, u, cfg.n, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut checks = Vec::new();
    for (c, ((gamma, u, tol), mc)) in cases.iter().zip(estimates).enumerate() {
        let rhs = lemma1_rhs(gamma, u, cfg.tamper)?;
        let d = gamma.dim();
        for i in 0..d {
            for j in i..d {
                checks.push(Check {
                    label: format!("case {c} (d={d}) [{i},{j}]"),
                    observed: mc.mean.get(i, j),
                    expected: rhs.get(i, j),
                    std_err: Some(mc.std_err.get(i, j)),
                    tolerance: *tol,
                });
            }
        }
    }
    Ok(Report {
        suite: Suite::Lemma1,
        tampered: cfg.tamper,
        checks,
    })
}

/// Runs a suite at its default scale.
pub fn run_suite(suite: Suite, seed: u64, tamper: bool) -> Result<Report, ExperimentError> {
    match suite {
        Suite::Thm1 => verify_theorem1(&Thm1Config {
            tamper,
            ..Thm1Config::standard(seed)
        }),
        Suite::Thm2 => verify_theorem2(&Thm2Config {
            tamper,
            ..Thm2Config::standard(seed)
        }),
        Suite::Thm3 => verify_bound(&Thm3Config {
            tamper,
            ..Thm3Config::default()
        }),
        Suite::Lemma1 => verify_lemma1(&Lemma1Config {
            tamper,
            ..Lemma1Config::standard(seed)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_semantics() {
        let mut c = Check {
            label: "x".into(),
            observed: 1.1,
            expected: 1.0,
            std_err: Some(0.02),
            tolerance: Tolerance::ZScore(5.0),
        };
        assert!((c.z().unwrap() - 5.0).abs() < 1e-9);
        c.observed = 1.2;
        assert!(!c.passed());
        c.tolerance = Tolerance::Absolute(0.25);
        assert!(c.passed());
        c.tolerance = Tolerance::AtMost;
        assert!(!c.passed());
        c.std_err = Some(0.0);
        c.tolerance = Tolerance::ZScore(5.0);
        assert!(!c.passed());
    }

    #[test]
    fn empty_report_fails() {
        let r = Report {
            suite: Suite::Thm3,
            tampered: false,
            checks: vec![],
        };
        assert!(!r.passed());
    }

    #[test]
    fn suite_names() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("all".parse::<Suite>().is_err());
    }

    #[test]
    fn mean_check_from_truth() {
        let mut cfg = Thm1Config::standard(3);
        cfg.theta0 = cfg.theta_star.clone();
        cfg.n_reps = 2000;
        let r = verify_theorem1(&cfg).unwrap();
        assert!(r.passed(), "{r}");
        for (c, t) in r.checks.iter().zip(&cfg.theta_star) {
            assert!((c.expected - t).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_check_requires_replications() {
        let mut cfg = Thm1Config::standard(0);
        cfg.n_reps = 999;
        assert!(verify_theorem1(&cfg).is_err());
    }

    #[test]
    fn bound_small_scale() {
        let cfg = Thm3Config {
            dims: vec![8],
            a0_scales: vec![0.0, 5.0],
            n_steps: 2000,
            tamper: false,
        };
        assert!(verify_bound(&cfg).unwrap().passed());
        let tampered = Thm3Config { tamper: true, ..cfg };
        let r = verify_bound(&tampered).unwrap();
        assert!(!r.passed());
        assert!(r.checks[0].label.ends_with("k=1"));
    }

    #[test]
    fn bound_rejects_small_dimension() {
        let cfg = Thm3Config {
            dims: vec![5],
            ..Thm3Config::default()
        };
        assert!(verify_bound(&cfg).is_err());
    }

    #[test]
    fn report_table_lists_every_check() {
        let cfg = Thm3Config {
            dims: vec![8, 9],
            a0_scales: vec![1.0],
            n_steps: 100,
            tamper: false,
        };
        let r = verify_bound(&cfg).unwrap();
        let text = r.to_string();
        assert!(text.starts_with("thm3: PASS (2 checks)"));
        assert_eq!(text.lines().count(), 4);
    }
}
