//! Iterative schemes for the squared loss.
//!
//! * SGD: `θ ← θ − α ∇L(θ)`
//! * forward gradient: `θ ← θ − α (∇L(θ)ᵀξ) ξ`, `ξ ~ N(0, I)`
//! * zeroth order: `θ ← θ − α (L(θ + ξ) − L(θ)) ξ`, `ξ ~ N(0, I)`
//!
//! Every step consumes one fresh data point. The forward-gradient scheme
//! obtains `∇L(θ)ᵀξ` from a single forward pass over (value, tangent) pairs,
//! see [`dual_pass_eval`]; the gradient vector itself is never formed.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::model::{self, DataPoint, ModelError, ModelSpec, Sampler};
use crate::rng::RngStream;
use crate::theory::StepSize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("non-finite iterate at step {step}")]
    NonFiniteIterate { step: u64 },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),
    #[error("invalid trajectory request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sgd,
    ForwardGradient,
    ZerothOrder,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sgd, Method::ForwardGradient, Method::ZerothOrder];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::ForwardGradient => "forward-gradient",
            Self::ZerothOrder => "zeroth-order",
        }
    }

    /// Stable index used to derive per-run stream ids.
    pub fn index(self) -> u64 {
        match self {
            Self::Sgd => 0,
            Self::ForwardGradient => 1,
            Self::ZerothOrder => 2,
        }
    }

    /// Whether a step draws a perturbation direction.
    pub fn is_perturbed(self) -> bool {
        !matches!(self, Self::Sgd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Value and tangent carried through a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub val: f64,
    pub dot: f64,
}

impl Dual {
    pub fn new(val: f64, dot: f64) -> Self {
        Self { val, dot }
    }

    pub fn constant(val: f64) -> Self {
        Self { val, dot: 0.0 }
    }

    /// Product with a constant that carries no tangent.
    pub fn scale(self, c: f64) -> Self {
        Self {
            val: self.val * c,
            dot: self.dot * c,
        }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.val + rhs.val, self.dot + rhs.dot)
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.val - rhs.val, self.dot - rhs.dot)
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(self.val * rhs.val, self.val * rhs.dot + self.dot * rhs.val)
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.val, -self.dot)
    }
}

/// Evaluates `(L(θ), ∇L(θ)ᵀv)` in one forward pass.
///
/// Each weight enters as the pair `(θ_i, v_i)`: `u_i = X_i θ_i`,
/// `u = Y − Σ u_i`, `L = ½ u²`. The tangent of `L` is `u · u'`, which is the
/// directional derivative.
pub fn dual_pass_eval(theta: &[f64], v: &[f64], p: &DataPoint) -> Result<(f64, f64), ModelError> {
    let d = p.dim();
    for len in [theta.len(), v.len()] {
        if len != d {
            return Err(ModelError::DimensionMismatch { expected: d, got: len });
        }
    }
    let fitted =
        p.x.iter()
            .zip(theta.iter().zip(v))
            .fold(Dual::constant(0.0), |acc, (&x, (&t, &dv))| {
                acc + Dual::new(t, dv).scale(x)
            });
    let resid = Dual::constant(p.y) - fitted;
    let half_sq = (resid * resid).scale(0.5);
    Ok((half_sq.val, half_sq.dot))
}

/// Current iterate, step counter and the stream that supplies perturbations.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    theta: Vec<f64>,
    k: u64,
    rng: RngStream,
    xi: Vec<f64>,
    shifted: Vec<f64>,
}

impl OptimizerState {
    pub fn new(theta0: Vec<f64>, rng: RngStream) -> Result<Self, OptimError> {
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(OptimError::NonFiniteIterate { step: 0 });
        }
        let d = theta0.len();
        Ok(Self {
            theta: theta0,
            k: 0,
            rng,
            xi: vec![0.0; d],
            shifted: vec![0.0; d],
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn rng_mut(&mut self) -> &mut RngStream {
        &mut self.rng
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    pub fn step(&mut self, method: Method, p: &DataPoint, alpha: f64) -> Result<(), OptimError> {
        match method {
            Method::Sgd => self.sgd_step(p, alpha),
            Method::ForwardGradient => self.forward_gradient_step(p, alpha),
            Method::ZerothOrder => self.zeroth_order_step(p, alpha),
        }
    }

    /// `θ ← θ − α ∇L(θ)`; the stream is not touched.
    pub fn sgd_step(&mut self, p: &DataPoint, alpha: f64) -> Result<(), OptimError> {
        check_alpha(alpha)?;
        let r = model::residual(&self.theta, p)?;
        // ∇L = −r X
        for (t, x) in self.theta.iter_mut().zip(&p.x) {
            *t += alpha * r * x;
        }
        self.finish()
    }

    /// `θ ← θ − α (∇L(θ)ᵀξ) ξ` with a fresh `ξ ~ N(0, I)`.
    pub fn forward_gradient_step(&mut self, p: &DataPoint, alpha: f64) -> Result<(), OptimError> {
        check_alpha(alpha)?;
        self.rng.fill_standard_normal(&mut self.xi);
        let (_, directional) = dual_pass_eval(&self.theta, &self.xi, p)?;
        let c = alpha * directional;
        for (t, xi) in self.theta.iter_mut().zip(&self.xi) {
            *t -= c * xi;
        }
        self.finish()
    }

    /// `θ ← θ − α (L(θ + ξ) − L(θ)) ξ` with a fresh `ξ ~ N(0, I)`.
    pub fn zeroth_order_step(&mut self, p: &DataPoint, alpha: f64) -> Result<(), OptimError> {
        check_alpha(alpha)?;
        self.rng.fill_standard_normal(&mut self.xi);
        let xi = std::mem::take(&mut self.xi);
        let res = self.zeroth_order_with_direction(p, alpha, &xi);
        self.xi = xi;
        res
    }

    /// Zeroth-order update along a caller-supplied direction.
    pub(crate) fn zeroth_order_with_direction(
        &mut self,
        p: &DataPoint,
        alpha: f64,
        xi: &[f64],
    ) -> Result<(), OptimError> {
        for ((s, t), x) in self.shifted.iter_mut().zip(&self.theta).zip(xi) {
            *s = t + x;
        }
        let diff = model::loss(&self.shifted, p)? - model::loss(&self.theta, p)?;
        let c = alpha * diff;
        for (t, x) in self.theta.iter_mut().zip(xi) {
            *t -= c * x;
        }
        self.finish()
    }

    fn finish(&mut self) -> Result<(), OptimError> {
        self.k += 1;
        if self.theta.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(OptimError::NonFiniteIterate { step: self.k })
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), OptimError> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(OptimError::InvalidStepSize(alpha))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub k: u64,
    pub mse: f64,
}

/// Checkpointed squared errors `‖θ_k − θ⋆‖²` of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub method: Method,
    pub run_id: u64,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn final_record(&self) -> Option<Record> {
        self.records.last().copied()
    }
}

/// `0` followed by `count` log-spaced integers in `[1, n_steps]`, deduplicated.
pub fn log_checkpoints(n_steps: u64, count: usize) -> Vec<u64> {
    let mut out = vec![0];
    if n_steps == 0 {
        return out;
    }
    if count < 2 {
        out.push(n_steps);
        return out;
    }
    let top = (n_steps as f64).ln();
    for i in 0..count {
        let k = (top * i as f64 / (count - 1) as f64).exp().round() as u64;
        out.push(k.clamp(1, n_steps));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Where the training data of a run comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Drawn from the run's own stream, interleaved with its perturbations.
    Own,
    /// Replayed from a dedicated stream, so several runs see identical data.
    Shared(RngStream),
}

/// Everything that is fixed across the runs of one experiment arm.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryPlan<'a> {
    pub model: &'a ModelSpec,
    pub method: Method,
    pub step_size: &'a StepSize,
    pub n_steps: u64,
    pub checkpoints: &'a [u64],
}

/// Runs one trajectory. In [`DataSource::Own`] mode each step draws the data
/// point first and then the perturbation, both from `rng`.
pub fn run_trajectory(
    plan: &TrajectoryPlan<'_>,
    run_id: u64,
    theta0: &[f64],
    rng: RngStream,
    data: DataSource,
) -> Result<Trajectory, OptimError> {
    let d = plan.model.d();
    if theta0.len() != d {
        return Err(ModelError::DimensionMismatch {
            expected: d,
            got: theta0.len(),
        }
        .into());
    }
    if plan.n_steps == 0 {
        return Err(OptimError::InvalidRequest("n_steps must be at least 1".into()));
    }
    if plan.checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(OptimError::InvalidRequest("checkpoints must be sorted".into()));
    }
    if plan.checkpoints.last().is_some_and(|&k| k > plan.n_steps) {
        return Err(OptimError::InvalidRequest("checkpoint beyond n_steps".into()));
    }
    plan.step_size
        .validate()
        .map_err(|e| OptimError::InvalidRequest(e.to_string()))?;

    let theta_star = plan.model.theta_star();
    let mut sampler = Sampler::new(plan.model)?;
    let mut point = DataPoint::zeros(d);
    let mut shared = match data {
        DataSource::Own => None,
        DataSource::Shared(s) => Some(s),
    };
    let mut state = OptimizerState::new(theta0.to_vec(), rng)?;
    let mut records = Vec::with_capacity(plan.checkpoints.len());
    let mut next = plan.checkpoints.iter().copied().peekable();
    while next.peek() == Some(&0) {
        records.push(Record {
            k: 0,
            mse: linalg::dist_sq(state.theta(), theta_star),
        });
        next.next();
    }
    for k in 1..=plan.n_steps {
        match shared.as_mut() {
            Some(s) => sampler.sample_into(s, &mut point),
            None => sampler.sample_into(state.rng_mut(), &mut point),
        }
        state.step(plan.method, &point, plan.step_size.alpha(k))?;
        while next.peek() == Some(&k) {
            records.push(Record {
                k,
                mse: linalg::dist_sq(state.theta(), theta_star),
            });
            next.next();
        }
    }
    Ok(Trajectory {
        method: plan.method,
        run_id,
        records,
    })
}
