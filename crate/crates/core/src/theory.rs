//! Deterministic evaluators for forward gradient descent on Gaussian
//! random-design regression.
//!
//! The mean error contracts as `E[θ_k] − θ⋆ = (I − α_kΣ)(E[θ_{k−1}] − θ⋆)`.
//! The second-moment matrix `A_k = E[(θ_k − θ⋆)(θ_k − θ⋆)ᵀ]` obeys the
//! closed one-step map implemented by [`cov_recursion_step`], and the risk
//! `E‖θ_k − θ⋆‖²` is its trace. With the step sizes of [`Schedule`] and
//! `a > 2`, that risk is dominated by [`risk_bound`].

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, LinalgError, SymMatrix};
use crate::model::ModelSpec;
use crate::rng::RngStream;

/// Dense recursions cost O(d³) per step; larger problems must be diagonal.
pub const DENSE_RECURSION_MAX_DIM: usize = 64;

/// Relative asymmetry above which a recursion step logs a warning before symmetrizing.
pub const SYMMETRY_WARN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the risk bound requires a > 2, got a = {0}")]
    InvalidA(f64),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("k_star requires d >= 8 so that a = ln d exceeds 2, got d = {0}")]
    InvalidDimension(usize),
    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),
    #[error("dense covariance recursion is capped at d = {cap}, got d = {d}; use a diagonal covariance")]
    TooLarge { d: usize, cap: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The decaying learning rate
/// `α_k = a λ_min / (k λ_min² + a ‖Σ‖² (d+2)²)`, `k ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Schedule {
    pub a: f64,
    pub lambda_min: f64,
    pub spectral_norm: f64,
    pub d: usize,
}

impl Schedule {
    /// Any `a > 0` is accepted here; only [`risk_bound`] insists on `a > 2`.
    pub fn new(a: f64, lambda_min: f64, spectral_norm: f64, d: usize) -> Result<Self, TheoryError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(TheoryError::InvalidSchedule(format!("a must be positive, got {a}")));
        }
        if !(lambda_min > 0.0 && spectral_norm >= lambda_min && spectral_norm.is_finite()) {
            return Err(TheoryError::InvalidSchedule(format!(
                "need 0 < lambda_min <= spectral_norm, got {lambda_min} and {spectral_norm}"
            )));
        }
        if d == 0 {
            return Err(TheoryError::InvalidSchedule("d must be at least 1".into()));
        }
        Ok(Self {
            a,
            lambda_min,
            spectral_norm,
            d,
        })
    }

    pub fn for_model(spec: &ModelSpec, a: f64) -> Result<Self, TheoryError> {
        let s = spec.spectrum();
        Self::new(a, s.lambda_min, s.spectral_norm(), spec.d())
    }

    pub fn alpha(&self, k: u64) -> f64 {
        debug_assert!(k >= 1, "the schedule starts at k = 1");
        let dd = (self.d as f64 + 2.0).powi(2);
        self.a * self.lambda_min
            / (k as f64 * self.lambda_min * self.lambda_min + self.a * self.spectral_norm.powi(2) * dd)
    }

    /// `κ = ‖Σ‖ / λ_min`
    pub fn kappa(&self) -> f64 {
        self.spectral_norm / self.lambda_min
    }

    /// `c_d = a κ² (d+2)²`, so that `α_k = a / (λ_min (k + c_d))`.
    pub fn c_d(&self) -> f64 {
        self.a * self.kappa().powi(2) * (self.d as f64 + 2.0).powi(2)
    }

    /// `λ_min / (‖Σ‖² (d+2)²)`, an upper bound for every `α_k`.
    pub fn cap(&self) -> f64 {
        self.lambda_min / (self.spectral_norm.powi(2) * (self.d as f64 + 2.0).powi(2))
    }
}

/// Step-size rule used by simulations and recursions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Schedule(Schedule),
    Constant(f64),
    /// The schedule multiplied by a constant factor (deliberate mis-tuning).
    Scaled {
        schedule: Schedule,
        factor: f64,
    },
}

impl StepSize {
    pub fn alpha(&self, k: u64) -> f64 {
        match self {
            Self::Schedule(s) => s.alpha(k),
            Self::Constant(a) => *a,
            Self::Scaled { schedule, factor } => factor * schedule.alpha(k),
        }
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let probe = match self {
            Self::Constant(a) => *a,
            Self::Scaled { factor, .. } => *factor,
            Self::Schedule(_) => 1.0,
        };
        if probe > 0.0 && probe.is_finite() {
            Ok(())
        } else {
            Err(TheoryError::InvalidStepSize(probe))
        }
    }
}

/// `E[θ_k] − θ⋆` after `k` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanState {
    pub mean_error: Vec<f64>,
    pub k: u64,
}

impl MeanState {
    pub fn new(mean_error: Vec<f64>) -> Self {
        Self { mean_error, k: 0 }
    }
}

pub fn mean_recursion_step(state: &MeanState, sigma: &SymMatrix, alpha: f64) -> Result<MeanState, TheoryError> {
    let se = sigma.mul_vec(&state.mean_error)?;
    Ok(MeanState {
        mean_error: state.mean_error.iter().zip(se).map(|(e, s)| e - alpha * s).collect(),
        k: state.k + 1,
    })
}

/// Closed form `θ⋆ + (∏_{ℓ=1..k} (I − α_ℓΣ)) (E[θ₀] − θ⋆)`, computed by
/// forming the matrix product explicitly.
pub fn closed_form_mean(
    theta_star: &[f64],
    initial_mean: &[f64],
    sigma: &SymMatrix,
    step: &StepSize,
    k: u64,
) -> Result<Vec<f64>, TheoryError> {
    let d = sigma.dim();
    check_dim(d, theta_star.len())?;
    check_dim(d, initial_mean.len())?;
    let mut product = SymMatrix::identity(d).as_slice().to_vec();
    for l in 1..=k {
        let factor = linalg::linear_combination(&[(1.0, &SymMatrix::identity(d)), (-step.alpha(l), sigma)])?;
        product = linalg::matmul(factor.as_slice(), &product, d);
    }
    let err: Vec<f64> = initial_mean.iter().zip(theta_star).map(|(m, t)| m - t).collect();
    Ok((0..d)
        .map(|i| theta_star[i] + linalg::dot(&product[i * d..(i + 1) * d], &err))
        .collect())
}

/// `A_k = E[(θ_k − θ⋆)(θ_k − θ⋆)ᵀ]`
#[derive(Debug, Clone, PartialEq)]
pub struct CovRecursionState {
    pub a_matrix: SymMatrix,
    pub k: u64,
}

impl CovRecursionState {
    pub fn new(a0: SymMatrix) -> Self {
        Self { a_matrix: a0, k: 0 }
    }

    pub fn risk(&self) -> f64 {
        self.a_matrix.trace()
    }
}

/// Which terms of the covariance recursion to keep. Anything other than
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecursionVariant {
    #[default]
    Full,
    /// Omits `3α² Σ A Σ`; a negative control for the verification suites.
    WithoutSandwichTerm,
}

/// One step of the second-moment recursion:
///
/// ```text
/// A' = (I − αΣ) A (I − αΣ) + 3α² ΣAΣ + 2α² tr(ΣA) Σ + 2α² Σ
///      + (2α² tr(ΣAΣ) + α² tr(ΣA) tr(Σ) + α² tr(Σ)) I
/// ```
///
/// `E[(θ − θ⋆)ᵀ Σ (θ − θ⋆)]` enters as `tr(ΣA)`. The output is symmetrized.
pub fn cov_recursion_step(
    state: &CovRecursionState,
    sigma: &SymMatrix,
    alpha: f64,
) -> Result<CovRecursionState, TheoryError> {
    cov_recursion_step_variant(state, sigma, alpha, RecursionVariant::Full)
}

pub fn cov_recursion_step_variant(
    state: &CovRecursionState,
    sigma: &SymMatrix,
    alpha: f64,
    variant: RecursionVariant,
) -> Result<CovRecursionState, TheoryError> {
    let d = sigma.dim();
    check_dim(d, state.a_matrix.dim())?;
    let a = &state.a_matrix;
    let contraction = linalg::linear_combination(&[(1.0, &SymMatrix::identity(d)), (-alpha, sigma)])?;
    let (damped, asym1) = linalg::sandwich(&contraction, a)?;
    let (sas, asym2) = linalg::sandwich(sigma, a)?;
    let tr_sa = linalg::trace_product(sigma, a)?;
    let tr_sas = sas.trace();
    let tr_s = sigma.trace();
    let a2 = alpha * alpha;
    let sandwich_coef = match variant {
        RecursionVariant::Full => 3.0 * a2,
        RecursionVariant::WithoutSandwichTerm => 0.0,
    };
    let isotropic = 2.0 * a2 * tr_sas + a2 * tr_sa * tr_s + a2 * tr_s;
    let next = linalg::linear_combination(&[
        (1.0, &damped),
        (sandwich_coef, &sas),
        (2.0 * a2 * tr_sa + 2.0 * a2, sigma),
        (isotropic, &SymMatrix::identity(d)),
    ])?;
    let scale = next.max_abs().max(f64::MIN_POSITIVE);
    let asym = asym1.max(asym2);
    if asym > SYMMETRY_WARN_TOL * scale {
        log::warn!(
            "covariance recursion step {}: relative asymmetry {:.3e} before symmetrization",
            state.k + 1,
            asym / scale
        );
    }
    Ok(CovRecursionState {
        a_matrix: next,
        k: state.k + 1,
    })
}

/// O(d) recursion for diagonal Σ.
///
/// With Σ diagonal, the diagonal of `A_k` evolves independently of the
/// off-diagonal entries (both traces in the recursion only read the
/// diagonal), so the risk is tracked exactly from `diag(A₀)` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalCovRecursion {
    sigma: Vec<f64>,
    a_diag: Vec<f64>,
    k: u64,
}

impl DiagonalCovRecursion {
    pub fn new(sigma_diag: Vec<f64>, a0_diag: Vec<f64>) -> Result<Self, TheoryError> {
        check_dim(sigma_diag.len(), a0_diag.len())?;
        Ok(Self {
            sigma: sigma_diag,
            a_diag: a0_diag,
            k: 0,
        })
    }

    pub fn step(&mut self, alpha: f64, variant: RecursionVariant) {
        let a2 = alpha * alpha;
        let tr_sa: f64 = self.sigma.iter().zip(&self.a_diag).map(|(s, a)| s * a).sum();
        let tr_sas: f64 = self.sigma.iter().zip(&self.a_diag).map(|(s, a)| s * s * a).sum();
        let tr_s: f64 = self.sigma.iter().sum();
        let sandwich_coef = match variant {
            RecursionVariant::Full => 3.0 * a2,
            RecursionVariant::WithoutSandwichTerm => 0.0,
        };
        let isotropic = 2.0 * a2 * tr_sas + a2 * tr_sa * tr_s + a2 * tr_s;
        for (a, &s) in self.a_diag.iter_mut().zip(&self.sigma) {
            let damp = 1.0 - alpha * s;
            *a = damp * damp * *a + sandwich_coef * s * s * *a + (2.0 * a2 * tr_sa + 2.0 * a2) * s + isotropic;
        }
        self.k += 1;
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.a_diag
    }

    pub fn risk(&self) -> f64 {
        self.a_diag.iter().sum()
    }

    pub fn k(&self) -> u64 {
        self.k
    }
}

/// Risk recursion that picks the diagonal fast path when Σ allows it.
#[derive(Debug, Clone)]
pub enum RiskRecursion {
    Diagonal(DiagonalCovRecursion),
    Dense { sigma: SymMatrix, state: CovRecursionState },
}

impl RiskRecursion {
    pub fn new(sigma: &SymMatrix, a0: &SymMatrix) -> Result<Self, TheoryError> {
        check_dim(sigma.dim(), a0.dim())?;
        if sigma.is_diagonal() {
            return Ok(Self::Diagonal(DiagonalCovRecursion::new(
                sigma.diagonal(),
                a0.diagonal(),
            )?));
        }
        if sigma.dim() > DENSE_RECURSION_MAX_DIM {
            return Err(TheoryError::TooLarge {
                d: sigma.dim(),
                cap: DENSE_RECURSION_MAX_DIM,
            });
        }
        Ok(Self::Dense {
            sigma: sigma.clone(),
            state: CovRecursionState::new(a0.clone()),
        })
    }

    pub fn step(&mut self, alpha: f64, variant: RecursionVariant) -> Result<(), TheoryError> {
        match self {
            Self::Diagonal(r) => r.step(alpha, variant),
            Self::Dense { sigma, state } => *state = cov_recursion_step_variant(state, sigma, alpha, variant)?,
        }
        Ok(())
    }

    pub fn risk(&self) -> f64 {
        match self {
            Self::Diagonal(r) => r.risk(),
            Self::Dense { state, .. } => state.risk(),
        }
    }

    pub fn k(&self) -> u64 {
        match self {
            Self::Diagonal(r) => r.k(),
            Self::Dense { state, .. } => state.k,
        }
    }
}

/// `(k, trace(A_k))` at each checkpoint, with `α_k` taken from `step`.
pub fn exact_risk_curve(
    sigma: &SymMatrix,
    step: &StepSize,
    a0: &SymMatrix,
    n_steps: u64,
    checkpoints: &[u64],
) -> Result<Vec<(u64, f64)>, TheoryError> {
    step.validate()?;
    let mut rec = RiskRecursion::new(sigma, a0)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().copied().filter(|&k| k <= n_steps).peekable();
    while next.peek() == Some(&0) {
        out.push((0, rec.risk()));
        next.next();
    }
    for k in 1..=n_steps {
        if next.peek().is_none() {
            break;
        }
        rec.step(step.alpha(k), RecursionVariant::Full)?;
        while next.peek() == Some(&k) {
            out.push((k, rec.risk()));
            next.next();
        }
    }
    Ok(out)
}

/// The mean-squared-error bound
///
/// ```text
/// ((1 + c_d) / (k + c_d))^a · E‖θ₀ − θ⋆‖² + 2e a κ (d+2)² / (λ_min (k + c_d))
/// ```
///
/// with `c_d = a κ² (d+2)²`. Requires `a > 2`.
pub fn risk_bound(schedule: &Schedule, k: u64, initial_risk: f64) -> Result<f64, TheoryError> {
    if schedule.a.is_nan() || schedule.a <= 2.0 {
        return Err(TheoryError::InvalidA(schedule.a));
    }
    let (transient, noise) = risk_bound_terms(schedule, k, initial_risk);
    Ok(transient + noise)
}

/// Transient and noise-floor terms of [`risk_bound`] without the `a > 2` check.
pub fn risk_bound_terms(schedule: &Schedule, k: u64, initial_risk: f64) -> (f64, f64) {
    let c = schedule.c_d();
    let kf = k as f64;
    let transient = ((1.0 + c) / (kf + c)).powf(schedule.a) * initial_risk;
    let noise = 2.0 * std::f64::consts::E * schedule.a * schedule.kappa() * (schedule.d as f64 + 2.0).powi(2)
        / (schedule.lambda_min * (kf + c));
    (transient, noise)
}

/// The same bound written through the step size:
/// `(1 − a⁻¹ λ_min (k−1) α_k)^a · E‖θ₀ − θ⋆‖² + 2e κ (d+2)² α_k`, for `k ≥ 1`.
pub fn risk_bound_via_step(schedule: &Schedule, k: u64, initial_risk: f64) -> Result<f64, TheoryError> {
    if schedule.a.is_nan() || schedule.a <= 2.0 {
        return Err(TheoryError::InvalidA(schedule.a));
    }
    let alpha = schedule.alpha(k.max(1));
    let base = 1.0 - schedule.lambda_min * (k.max(1) - 1) as f64 * alpha / schedule.a;
    Ok(base.powf(schedule.a) * initial_risk
        + 2.0 * std::f64::consts::E * schedule.kappa() * (schedule.d as f64 + 2.0).powi(2) * alpha)
}

/// Burn-in threshold `e² d² ln d` after which the `d² ln(d) / k` rate dominates.
pub fn k_star(d: usize) -> Result<f64, TheoryError> {
    if d < 8 {
        return Err(TheoryError::InvalidDimension(d));
    }
    let df = d as f64;
    Ok(std::f64::consts::E.powi(2) * df * df * df.ln())
}

/// `2 Γ U Γ + q Γ`, the Gaussian fourth-moment identity for
/// `E[(UᵀZ)² Z Zᵀ]` with `Z ~ N(0, Γ)` independent of `U`,
/// `U = E[UUᵀ]` and `q = E[UᵀΓU]`.
pub fn fourth_moment_rhs(gamma: &SymMatrix, u_outer: &SymMatrix, u_quad: f64) -> Result<SymMatrix, TheoryError> {
    let (gug, _) = linalg::sandwich(gamma, u_outer)?;
    Ok(linalg::linear_combination(&[(2.0, &gug), (u_quad, gamma)])?)
}

/// Entrywise Monte Carlo mean with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloMatrix {
    pub mean: SymMatrix,
    pub std_err: SymMatrix,
    pub samples: usize,
}

/// Monte Carlo estimate of `E[(uᵀZ)² Z Zᵀ]` for `Z ~ N(0, Γ)` and fixed `u`.
pub fn fourth_moment_lhs_mc(
    gamma: &SymMatrix,
    u: &[f64],
    n: usize,
    rng: &mut RngStream,
) -> Result<MonteCarloMatrix, TheoryError> {
    let d = gamma.dim();
    check_dim(d, u.len())?;
    if n < 2 {
        return Err(TheoryError::InvalidSchedule(
            "need at least two Monte Carlo samples".into(),
        ));
    }
    let chol = linalg::cholesky(gamma)?;
    let mut w = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut stats = vec![Welford::default(); d * d];
    for _ in 0..n {
        rng.fill_standard_normal(&mut w);
        chol.mul_vec_into(&w, &mut z);
        let s = linalg::dot(u, &z).powi(2);
        for i in 0..d {
            for j in i..d {
                stats[i * d + j].push(s * z[i] * z[j]);
            }
        }
    }
    let mut mean = vec![0.0; d * d];
    let mut se = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let w = &stats[i * d + j];
            for (a, b) in [(i, j), (j, i)] {
                mean[a * d + b] = w.mean;
                se[a * d + b] = w.std_err();
            }
        }
    }
    Ok(MonteCarloMatrix {
        mean: SymMatrix::new(d, mean)?,
        std_err: SymMatrix::new(d, se)?,
        samples: n,
    })
}

/// Streaming mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), TheoryError> {
    if expected == got {
        Ok(())
    } else {
        Err(TheoryError::DimensionMismatch { expected, got })
    }
}
