//! Replicated simulation runs, theory curves and their summaries.
//!
//! Stream layout for a base seed `s`:
//!
//! | stream id                  | use                                   |
//! |----------------------------|---------------------------------------|
//! | `0`                        | shared initial iterate                |
//! | `index(m)·10⁶ + j + 1`     | run `j` of method `m`                 |
//! | `u64::MAX`                 | replayable data sequence              |
//! | `u64::MAX − 1`             | `θ⋆` of the built-in presets          |

pub mod output;
pub mod verify;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, SymMatrix};
use crate::model::{ModelError, ModelSpec};
use crate::optimizers::{self, DataSource, Method, OptimError, Record, Trajectory, TrajectoryPlan};
use crate::rng::RngStream;
use crate::theory::{self, Schedule, StepSize, TheoryError};

pub const INIT_STREAM: u64 = 0;
pub const DATA_STREAM: u64 = u64::MAX;
pub const TRUTH_STREAM: u64 = u64::MAX - 1;
pub const MAX_RUNS_PER_METHOD: u64 = 999_999;

pub const THEORY_EXACT: &str = "theory-exact";
pub const THEORY_BOUND: &str = "theory-bound";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{method} run {run_id} diverged: non-finite iterate at step {step}")]
    Divergence { method: Method, run_id: u64, step: u64 },
    #[error("{method} run {run_id}: {source}")]
    Run {
        method: Method,
        run_id: u64,
        source: OptimError,
    },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// `a` of the step-size schedule, either a number or `"log_d"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AParamRepr", into = "AParamRepr")]
pub enum AParam {
    Value(f64),
    LogD,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AParamRepr {
    Value(f64),
    Token(String),
}

impl TryFrom<AParamRepr> for AParam {
    type Error = String;

    fn try_from(r: AParamRepr) -> Result<Self, String> {
        match r {
            AParamRepr::Value(v) => Ok(AParam::Value(v)),
            AParamRepr::Token(t) if t == "log_d" => Ok(AParam::LogD),
            AParamRepr::Token(t) => Err(format!("a_param must be a number or \"log_d\", got {t:?}")),
        }
    }
}

impl From<AParam> for AParamRepr {
    fn from(a: AParam) -> Self {
        match a {
            AParam::Value(v) => AParamRepr::Value(v),
            AParam::LogD => AParamRepr::Token("log_d".into()),
        }
    }
}

impl AParam {
    pub fn resolve(self, d: usize) -> Result<f64, ExperimentError> {
        let a = match self {
            AParam::Value(v) => v,
            AParam::LogD => {
                if d < 8 {
                    return Err(ExperimentError::Config(format!(
                        "a_param \"log_d\" requires d >= 8 so that a > 2, got d = {d}"
                    )));
                }
                (d as f64).ln()
            }
        };
        if a > 0.0 && a.is_finite() {
            Ok(a)
        } else {
            Err(ExperimentError::Config(format!(
                "a must be positive and finite, got {a}"
            )))
        }
    }
}

/// Distribution of the initial iterate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "InitRepr", into = "InitRepr")]
pub enum InitDistribution {
    #[default]
    StandardNormal,
    Fixed(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InitRepr {
    Fixed(Vec<f64>),
    Token(String),
}

impl TryFrom<InitRepr> for InitDistribution {
    type Error = String;

    fn try_from(r: InitRepr) -> Result<Self, String> {
        match r {
            InitRepr::Fixed(v) => Ok(InitDistribution::Fixed(v)),
            InitRepr::Token(t) if t == "standard_normal" => Ok(InitDistribution::StandardNormal),
            InitRepr::Token(t) => Err(format!(
                "init_distribution must be \"standard_normal\" or a vector, got {t:?}"
            )),
        }
    }
}

impl From<InitDistribution> for InitRepr {
    fn from(i: InitDistribution) -> Self {
        match i {
            InitDistribution::StandardNormal => InitRepr::Token("standard_normal".into()),
            InitDistribution::Fixed(v) => InitRepr::Fixed(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodRuns {
    pub method: Method,
    pub runs: u64,
}

fn default_checkpoint_count() -> usize {
    200
}

fn default_true() -> bool {
    true
}

fn default_step_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: ModelSpec,
    pub methods: Vec<MethodRuns>,
    pub n_steps: u64,
    pub a_param: AParam,
    pub base_seed: u64,
    #[serde(default = "default_checkpoint_count")]
    pub checkpoint_count: usize,
    #[serde(default = "default_true")]
    pub shared_init: bool,
    #[serde(default)]
    pub init_distribution: InitDistribution,
    /// Replay one data sequence across all runs instead of fresh data per run.
    #[serde(default)]
    pub shared_data: bool,
    /// Multiplier on the schedule; `1` is the schedule itself.
    #[serde(default = "default_step_scale")]
    pub step_scale: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        for (i, mr) in self.methods.iter().enumerate() {
            if mr.runs == 0 || mr.runs > MAX_RUNS_PER_METHOD {
                return bad(format!("{}: runs must be in 1..={MAX_RUNS_PER_METHOD}", mr.method));
            }
            if self.methods[..i].iter().any(|o| o.method == mr.method) {
                return bad(format!("method {} listed twice", mr.method));
            }
        }
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1".into());
        }
        if self.checkpoint_count == 0 {
            return bad("checkpoint_count must be at least 1".into());
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return bad(format!(
                "step_scale must be positive and finite, got {}",
                self.step_scale
            ));
        }
        if let InitDistribution::Fixed(v) = &self.init_distribution {
            if v.len() != self.spec.d() {
                return bad(format!(
                    "init vector has length {}, expected d = {}",
                    v.len(),
                    self.spec.d()
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad("init vector must be finite".into());
            }
        }
        self.schedule()?;
        Ok(())
    }

    pub fn a(&self) -> Result<f64, ExperimentError> {
        self.a_param.resolve(self.spec.d())
    }

    pub fn schedule(&self) -> Result<Schedule, ExperimentError> {
        Ok(Schedule::for_model(&self.spec, self.a()?)?)
    }

    pub fn step_size(&self) -> Result<StepSize, ExperimentError> {
        let schedule = self.schedule()?;
        Ok(if self.step_scale == 1.0 {
            StepSize::Schedule(schedule)
        } else {
            StepSize::Scaled {
                schedule,
                factor: self.step_scale,
            }
        })
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        optimizers::log_checkpoints(self.n_steps, self.checkpoint_count)
    }

    /// The shared initial iterate, if runs share one.
    pub fn shared_theta0(&self) -> Option<Vec<f64>> {
        match &self.init_distribution {
            InitDistribution::Fixed(v) => Some(v.clone()),
            InitDistribution::StandardNormal if self.shared_init => {
                Some(RngStream::new(self.base_seed, INIT_STREAM).standard_normal_vec(self.spec.d()))
            }
            InitDistribution::StandardNormal => None,
        }
    }

    /// `(method, run_id)` pairs in output order.
    pub fn run_ids(&self) -> Vec<(Method, u64)> {
        let mut ids: Vec<(Method, u64)> = self
            .methods
            .iter()
            .flat_map(|mr| (0..mr.runs).map(move |j| (mr.method, j)))
            .collect();
        ids.sort_by_key(|&(m, j)| (m.index(), j));
        ids
    }

    /// `E[(θ₀ − θ⋆)(θ₀ − θ⋆)ᵀ]`: an outer product for a fixed start and
    /// `I + θ⋆θ⋆ᵀ` for a standard normal draw.
    pub fn initial_second_moment(&self) -> SymMatrix {
        let ts = self.spec.theta_star();
        match &self.init_distribution {
            InitDistribution::Fixed(v) => {
                let e: Vec<f64> = v.iter().zip(ts).map(|(a, b)| a - b).collect();
                SymMatrix::outer(&e)
            }
            InitDistribution::StandardNormal => SymMatrix::outer(ts).shifted(-1.0),
        }
    }
}

pub fn run_stream_id(method: Method, run_id: u64) -> u64 {
    method.index() * 1_000_000 + run_id + 1
}

/// Runs every configured replication in parallel; output is sorted by
/// `(method, run_id)`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>, ExperimentError> {
    cfg.validate()?;
    let step = cfg.step_size()?;
    let checkpoints = cfg.checkpoints();
    let theta0 = cfg.shared_theta0();
    let ids = cfg.run_ids();
    log::info!(
        "running {} trajectories of {} steps at d = {}",
        ids.len(),
        cfg.n_steps,
        cfg.spec.d()
    );
    let results: Vec<Result<Trajectory, ExperimentError>> = ids
        .par_iter()
        .map(|&(method, j)| run_one(cfg, &step, &checkpoints, theta0.as_deref(), method, j))
        .collect();
    results.into_iter().collect()
}

/// Reruns a single replication without touching the others.
pub fn replay_run(cfg: &ExperimentConfig, method: Method, run_id: u64) -> Result<Trajectory, ExperimentError> {
    cfg.validate()?;
    let runs = cfg
        .methods
        .iter()
        .find(|mr| mr.method == method)
        .map(|mr| mr.runs)
        .unwrap_or(0);
    if run_id >= runs {
        return Err(ExperimentError::Config(format!("{method} has no run {run_id}")));
    }
    let step = cfg.step_size()?;
    run_one(
        cfg,
        &step,
        &cfg.checkpoints(),
        cfg.shared_theta0().as_deref(),
        method,
        run_id,
    )
}

fn run_one(
    cfg: &ExperimentConfig,
    step: &StepSize,
    checkpoints: &[u64],
    theta0: Option<&[f64]>,
    method: Method,
    run_id: u64,
) -> Result<Trajectory, ExperimentError> {
    let mut rng = RngStream::new(cfg.base_seed, run_stream_id(method, run_id));
    let own;
    let theta0 = match theta0 {
        Some(t) => t,
        None => {
            own = rng.standard_normal_vec(cfg.spec.d());
            &own
        }
    };
    let data = if cfg.shared_data {
        DataSource::Shared(RngStream::new(cfg.base_seed, DATA_STREAM))
    } else {
        DataSource::Own
    };
    let plan = TrajectoryPlan {
        model: &cfg.spec,
        method,
        step_size: step,
        n_steps: cfg.n_steps,
        checkpoints,
    };
    optimizers::run_trajectory(&plan, run_id, theta0, rng, data).map_err(|e| match e {
        OptimError::NonFiniteIterate { step } => ExperimentError::Divergence { method, run_id, step },
        source => ExperimentError::Run { method, run_id, source },
    })
}

/// `k ↦ d² ln(d)/k`, `k ↦ d²/k` and `k ↦ d/k` at one `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferencePoint {
    pub k: u64,
    pub upper: f64,
    pub middle: f64,
    pub lower: f64,
}

pub fn reference_curves(d: usize, ks: &[u64]) -> Vec<ReferencePoint> {
    let df = d as f64;
    ks.iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let kf = k as f64;
            ReferencePoint {
                k,
                upper: df * df * df.ln() / kf,
                middle: df * df / kf,
                lower: df / kf,
            }
        })
        .collect()
}

/// The line a method's risk is compared with: `d²/k` for forward gradient,
/// `d/k` for SGD.
pub fn reference_scale(method: Method, d: usize) -> Option<f64> {
    let df = d as f64;
    match method {
        Method::ForwardGradient => Some(df * df),
        Method::Sgd => Some(df),
        Method::ZerothOrder => None,
    }
}

/// Final-decade statistics of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub runs: usize,
    /// Checkpoints with `k_from ≤ k ≤ k_to` form the window.
    pub k_from: u64,
    pub k_to: u64,
    pub window_points: usize,
    pub final_mse_geo_mean: f64,
    pub window_mse_geo_mean: f64,
    /// Geometric mean of `k · mse` over the window.
    pub window_k_mse_geo_mean: f64,
    /// `window_k_mse_geo_mean` divided by the method's reference scale.
    pub ratio_to_reference: Option<f64>,
    pub per_run_ratio: Vec<f64>,
    /// Least-squares slope of `ln mse` against `ln k` over the window.
    pub slope: Option<f64>,
    pub k_star_marker: Option<f64>,
}

/// Summarizes trajectories per method over the checkpoints in
/// `[n_steps / 10, n_steps]`.
pub fn summarize(trajectories: &[Trajectory], d: usize, n_steps: u64) -> Vec<RunSummary> {
    let k_from = (n_steps / 10).max(1);
    let k_star = theory::k_star(d).ok();
    let mut out = Vec::new();
    for method in Method::ALL {
        let runs: Vec<&Trajectory> = trajectories.iter().filter(|t| t.method == method).collect();
        if runs.is_empty() {
            continue;
        }
        let scale = reference_scale(method, d);
        let mut logs_mse = Vec::new();
        let mut logs_kmse = Vec::new();
        let mut xs = Vec::new();
        let mut final_logs = Vec::new();
        let mut per_run_ratio = Vec::new();
        for t in &runs {
            let window: Vec<&Record> = t.records.iter().filter(|r| r.k >= k_from && r.k <= n_steps).collect();
            let mut run_log = Vec::new();
            for r in &window {
                let lm = r.mse.ln();
                let lk = (r.k as f64).ln();
                logs_mse.push(lm);
                logs_kmse.push(lm + lk);
                xs.push(lk);
                run_log.push(lm + lk);
            }
            if let Some(r) = t.final_record() {
                final_logs.push(r.mse.ln());
            }
            if let Some(s) = scale {
                per_run_ratio.push(mean(&run_log).exp() / s);
            }
        }
        let window_k_mse_geo_mean = mean(&logs_kmse).exp();
        out.push(RunSummary {
            method,
            runs: runs.len(),
            k_from,
            k_to: n_steps,
            window_points: logs_mse.len(),
            final_mse_geo_mean: mean(&final_logs).exp(),
            window_mse_geo_mean: mean(&logs_mse).exp(),
            window_k_mse_geo_mean,
            ratio_to_reference: scale.map(|s| window_k_mse_geo_mean / s),
            per_run_ratio,
            slope: ols_slope(&xs, &logs_mse),
            k_star_marker: k_star,
        });
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Least-squares slope, `None` without two distinct abscissae.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let mx = mean(xs);
    let my = mean(ys);
    let (sxy, sxx) = xs.iter().zip(ys).fold((0.0, 0.0), |(sxy, sxx), (x, y)| {
        (sxy + (x - mx) * (y - my), sxx + (x - mx).powi(2))
    });
    let slope = sxy / sxx;
    (sxx > 0.0 && slope.is_finite()).then_some(slope)
}

/// Derived quantities logged next to every run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Derived {
    pub d: usize,
    pub a: f64,
    pub lambda_min: f64,
    pub spectral_norm: f64,
    pub kappa: f64,
    pub c_d: f64,
    pub alpha_1: f64,
    pub alpha_cap: f64,
    pub k_star: Option<f64>,
    pub checkpoints: usize,
    pub init_stream: u64,
    pub data_stream: u64,
}

impl Derived {
    pub fn of(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let s = cfg.schedule()?;
        Ok(Self {
            d: s.d,
            a: s.a,
            lambda_min: s.lambda_min,
            spectral_norm: s.spectral_norm,
            kappa: s.kappa(),
            c_d: s.c_d(),
            alpha_1: cfg.step_size()?.alpha(1),
            alpha_cap: s.cap(),
            k_star: theory::k_star(s.d).ok(),
            checkpoints: cfg.checkpoints().len(),
            init_stream: INIT_STREAM,
            data_stream: DATA_STREAM,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub derived: Derived,
    pub theta0: Option<Vec<f64>>,
    pub summaries: Vec<RunSummary>,
}

impl ExperimentSummary {
    pub fn new(cfg: &ExperimentConfig, trajectories: &[Trajectory]) -> Result<Self, ExperimentError> {
        Ok(Self {
            config: cfg.clone(),
            derived: Derived::of(cfg)?,
            theta0: cfg.shared_theta0(),
            summaries: summarize(trajectories, cfg.spec.d(), cfg.n_steps),
        })
    }
}

/// A named `(k, value)` curve such as the exact risk or its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: &'static str,
    pub points: Vec<Record>,
}

/// Exact risk from the covariance recursion and, when it applies, the risk
/// bound, on the configuration's checkpoint grid.
pub fn theory_curves(cfg: &ExperimentConfig) -> Result<Vec<Curve>, ExperimentError> {
    cfg.validate()?;
    let step = cfg.step_size()?;
    let schedule = cfg.schedule()?;
    let a0 = cfg.initial_second_moment();
    let ks = cfg.checkpoints();
    let exact = theory::exact_risk_curve(cfg.spec.sigma(), &step, &a0, cfg.n_steps, &ks)?;
    let mut curves = vec![Curve {
        name: THEORY_EXACT,
        points: exact.into_iter().map(|(k, mse)| Record { k, mse }).collect(),
    }];
    if cfg.step_scale != 1.0 {
        log::warn!("step_scale != 1: the risk bound does not apply and is omitted");
    } else if schedule.a <= 2.0 {
        log::warn!("a = {} <= 2: the risk bound does not apply and is omitted", schedule.a);
    } else {
        let r0 = a0.trace();
        let points = ks
            .iter()
            .map(|&k| {
                Ok(Record {
                    k,
                    mse: theory::risk_bound(&schedule, k, r0)?,
                })
            })
            .collect::<Result<Vec<_>, TheoryError>>()?;
        curves.push(Curve {
            name: THEORY_BOUND,
            points,
        });
    }
    Ok(curves)
}

pub const FIGURE2_RUNS: u64 = 10;
pub const FIGURE2_STEPS: u64 = 1_000_000;

/// Identity covariance, `θ⋆ ~ N(0, I)` from the truth stream, ten
/// forward-gradient runs and one SGD run from a shared standard normal
/// start, `a = ln d`, one shared data sequence.
pub fn figure2_config(d: usize, seed: u64) -> Result<ExperimentConfig, ExperimentError> {
    let theta_star = RngStream::new(seed, TRUTH_STREAM).standard_normal_vec(d);
    let cfg = ExperimentConfig {
        spec: ModelSpec::identity(theta_star)?,
        methods: vec![
            MethodRuns {
                method: Method::ForwardGradient,
                runs: FIGURE2_RUNS,
            },
            MethodRuns {
                method: Method::Sgd,
                runs: 1,
            },
        ],
        n_steps: FIGURE2_STEPS,
        a_param: AParam::LogD,
        base_seed: seed,
        checkpoint_count: default_checkpoint_count(),
        shared_init: true,
        init_distribution: InitDistribution::StandardNormal,
        shared_data: true,
        step_scale: 1.0,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Replaces the model by `Σ = I_d` with a fresh `θ⋆` from the truth stream.
pub fn with_identity_dimension(cfg: &mut ExperimentConfig, d: usize) -> Result<(), ExperimentError> {
    if d == 0 {
        return Err(ExperimentError::Config("d must be at least 1".into()));
    }
    let theta_star = RngStream::new(cfg.base_seed, TRUTH_STREAM).standard_normal_vec(d);
    cfg.spec = ModelSpec::identity(theta_star)?;
    if let InitDistribution::Fixed(v) = &cfg.init_distribution {
        if v.len() != d {
            cfg.init_distribution = InitDistribution::StandardNormal;
        }
    }
    Ok(())
}
