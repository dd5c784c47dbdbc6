//! Gaussian random-design linear regression.
//!
//! Pairs `(X, Y)` are drawn i.i.d. with `X ~ N(0, Σ)` and
//! `Y = Xᵀθ⋆ + ε`, `ε ~ N(0, 1)`. Losses are squared error, `½(Y − Xᵀθ)²`.
//!
//! Draw order inside one sample is fixed: the `d` standard normals for the
//! design come first, then the single noise normal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, LowerTriangular, SpectralSummary, SymMatrix};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance: {0}")]
    Covariance(#[from] LinalgError),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// How the covariance is stored in JSON and which sampling path is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaKind {
    Identity,
    Diagonal,
    Dense,
}

/// The data-generating distribution: dimension, design covariance and true parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpecRepr", into = "ModelSpecRepr")]
pub struct ModelSpec {
    sigma: SymMatrix,
    kind: SigmaKind,
    theta_star: Vec<f64>,
    spectrum: SpectralSummary,
}

impl ModelSpec {
    /// The storage kind is inferred from the structure of `sigma`.
    pub fn new(sigma: SymMatrix, theta_star: Vec<f64>) -> Result<Self, ModelError> {
        let kind = if sigma.is_identity() {
            SigmaKind::Identity
        } else if sigma.is_diagonal() {
            SigmaKind::Diagonal
        } else {
            SigmaKind::Dense
        };
        Self::with_kind(sigma, kind, theta_star)
    }

    pub fn identity(theta_star: Vec<f64>) -> Result<Self, ModelError> {
        let d = theta_star.len();
        if d == 0 {
            return Err(ModelError::Invalid("dimension must be at least 1".into()));
        }
        Self::new(SymMatrix::identity(d), theta_star)
    }

    pub fn diagonal(diag: &[f64], theta_star: Vec<f64>) -> Result<Self, ModelError> {
        if diag.is_empty() {
            return Err(ModelError::Invalid("dimension must be at least 1".into()));
        }
        Self::new(SymMatrix::from_diagonal(diag), theta_star)
    }

    fn with_kind(sigma: SymMatrix, kind: SigmaKind, theta_star: Vec<f64>) -> Result<Self, ModelError> {
        if theta_star.len() != sigma.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: sigma.dim(),
                got: theta_star.len(),
            });
        }
        if theta_star.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Invalid("theta_star must be finite".into()));
        }
        let spectrum = match kind {
            SigmaKind::Identity => SpectralSummary {
                lambda_min: 1.0,
                lambda_max: 1.0,
                condition_number: 1.0,
            },
            _ => linalg::spectral_summary(&sigma)?,
        };
        Ok(Self {
            sigma,
            kind,
            theta_star,
            spectrum,
        })
    }

    pub fn d(&self) -> usize {
        self.sigma.dim()
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    pub fn kind(&self) -> SigmaKind {
        self.kind
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn spectrum(&self) -> SpectralSummary {
        self.spectrum
    }

    pub fn design_factor(&self) -> Result<DesignFactor, ModelError> {
        Ok(match self.kind {
            SigmaKind::Identity => DesignFactor::Identity(self.d()),
            SigmaKind::Diagonal => DesignFactor::Diagonal(self.sigma.diagonal().iter().map(|v| v.sqrt()).collect()),
            SigmaKind::Dense => DesignFactor::Dense(linalg::cholesky(&self.sigma)?),
        })
    }
}

/// A square root of Σ used to map standard normals onto the design distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignFactor {
    Identity(usize),
    /// Square roots of the diagonal entries.
    Diagonal(Vec<f64>),
    Dense(LowerTriangular),
}

impl DesignFactor {
    pub fn dim(&self) -> usize {
        match self {
            Self::Identity(d) => *d,
            Self::Diagonal(s) => s.len(),
            Self::Dense(l) => l.dim(),
        }
    }

    /// Draws `x = L z` with `z` standard normal. `scratch` must have length `d`
    /// and is only touched for dense factors.
    fn draw_into(&self, rng: &mut RngStream, x: &mut [f64], scratch: &mut [f64]) {
        match self {
            Self::Identity(_) => rng.fill_standard_normal(x),
            Self::Diagonal(s) => {
                rng.fill_standard_normal(x);
                for (xi, si) in x.iter_mut().zip(s) {
                    *xi *= si;
                }
            }
            Self::Dense(l) => {
                rng.fill_standard_normal(scratch);
                l.mul_vec_into(scratch, x);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: f64,
}

impl DataPoint {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            x: vec![0.0; d],
            y: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Reusable sampler that writes into a caller-owned [`DataPoint`].
#[derive(Debug, Clone)]
pub struct Sampler {
    factor: DesignFactor,
    theta_star: Vec<f64>,
    scratch: Vec<f64>,
}

impl Sampler {
    pub fn new(spec: &ModelSpec) -> Result<Self, ModelError> {
        Self::with_factor(spec, spec.design_factor()?)
    }

    pub fn with_factor(spec: &ModelSpec, factor: DesignFactor) -> Result<Self, ModelError> {
        check_dim(spec.d(), factor.dim())?;
        Ok(Self {
            scratch: vec![0.0; spec.d()],
            theta_star: spec.theta_star.clone(),
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn sample_into(&mut self, rng: &mut RngStream, out: &mut DataPoint) {
        debug_assert_eq!(out.x.len(), self.theta_star.len());
        self.factor.draw_into(rng, &mut out.x, &mut self.scratch);
        out.y = linalg::dot(&out.x, &self.theta_star) + rng.standard_normal();
    }

    pub fn sample(&mut self, rng: &mut RngStream) -> DataPoint {
        let mut p = DataPoint::zeros(self.dim());
        self.sample_into(rng, &mut p);
        p
    }
}

/// One draw `(X, Y)` from the model.
pub fn sample_datapoint(spec: &ModelSpec, factor: &DesignFactor, rng: &mut RngStream) -> Result<DataPoint, ModelError> {
    let mut sampler = Sampler::with_factor(spec, factor.clone())?;
    Ok(sampler.sample(rng))
}

/// `Y − Xᵀθ`
pub fn residual(theta: &[f64], p: &DataPoint) -> Result<f64, ModelError> {
    check_dim(p.dim(), theta.len())?;
    Ok(p.y - linalg::dot(&p.x, theta))
}

/// `½(Y − Xᵀθ)²`
pub fn loss(theta: &[f64], p: &DataPoint) -> Result<f64, ModelError> {
    let r = residual(theta, p)?;
    Ok(0.5 * r * r)
}

/// `∇L(θ) = −(Y − Xᵀθ) X`
pub fn gradient(theta: &[f64], p: &DataPoint) -> Result<Vec<f64>, ModelError> {
    let r = residual(theta, p)?;
    Ok(p.x.iter().map(|x| -r * x).collect())
}

fn check_dim(expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { expected, got })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SigmaRepr {
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelSpecRepr {
    d: usize,
    sigma_kind: SigmaKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<SigmaRepr>,
    theta_star: Vec<f64>,
}

impl From<ModelSpec> for ModelSpecRepr {
    fn from(spec: ModelSpec) -> Self {
        let sigma = match spec.kind {
            SigmaKind::Identity => None,
            SigmaKind::Diagonal => Some(SigmaRepr::Diagonal(spec.sigma.diagonal())),
            SigmaKind::Dense => Some(SigmaRepr::Dense(spec.sigma.to_rows())),
        };
        Self {
            d: spec.d(),
            sigma_kind: spec.kind,
            sigma,
            theta_star: spec.theta_star,
        }
    }
}

impl TryFrom<ModelSpecRepr> for ModelSpec {
    type Error = ModelError;

    fn try_from(r: ModelSpecRepr) -> Result<Self, Self::Error> {
        if r.d == 0 {
            return Err(ModelError::Invalid("d must be at least 1".into()));
        }
        let sigma = match (r.sigma_kind, r.sigma) {
            (SigmaKind::Identity, None) => SymMatrix::identity(r.d),
            (SigmaKind::Identity, Some(_)) => {
                return Err(ModelError::Invalid(
                    "sigma_kind \"identity\" takes no sigma entries".into(),
                ))
            }
            (SigmaKind::Diagonal, Some(SigmaRepr::Diagonal(diag))) => {
                check_dim(r.d, diag.len())?;
                SymMatrix::from_diagonal(&diag)
            }
            (SigmaKind::Dense, Some(SigmaRepr::Dense(rows))) => {
                let m = SymMatrix::from_rows(&rows)?;
                check_dim(r.d, m.dim())?;
                m
            }
            (kind, _) => {
                return Err(ModelError::Invalid(format!(
                    "sigma does not match sigma_kind {kind:?}: diagonal takes a vector, dense a matrix"
                )))
            }
        };
        check_dim(r.d, r.theta_star.len())?;
        if r.sigma_kind == SigmaKind::Diagonal && sigma.diagonal().iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(ModelError::Covariance(LinalgError::NotPositiveDefinite));
        }
        ModelSpec::with_kind(sigma, r.sigma_kind, r.theta_star)
    }
}
