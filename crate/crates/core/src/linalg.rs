//! Dense symmetric linear algebra.
//!
//! Only what the rest of the crate needs: Cholesky factors for correlated
//! Gaussian sampling, extreme eigenvalues via cyclic Jacobi rotations,
//! traces, quadratic forms and symmetric sandwich products. Storage is
//! row-major `f64` throughout.

use thiserror::Error;

/// Largest dimension accepted by [`spectral_summary`].
pub const MAX_SPECTRAL_DIM: usize = 512;

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not symmetric: entry ({row}, {col}) differs from its transpose")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix dimension must be at least 1")]
    Empty,
    #[error("matrix dimension {0} exceeds the supported maximum of {MAX_SPECTRAL_DIM}")]
    TooLarge(usize),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// A real symmetric matrix, stored densely in row-major order.
///
/// Symmetry is exact: `get(i, j) == get(j, i)` bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds a matrix from row-major entries, rejecting anything that is not exactly symmetric.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::Empty);
        }
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(LinalgError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(LinalgError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    /// Symmetrizes an arbitrary square buffer as `(M + Mᵀ) / 2`.
    ///
    /// Also returns the largest absolute asymmetry `|M_ij − M_ji|` seen before averaging.
    pub fn symmetrize(dim: usize, mut data: Vec<f64>) -> Result<(Self, f64), LinalgError> {
        if dim == 0 {
            return Err(LinalgError::Empty);
        }
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        let mut asym: f64 = 0.0;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let upper = data[i * dim + j];
                let lower = data[j * dim + i];
                asym = asym.max((upper - lower).abs());
                let avg = 0.5 * (upper + lower);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        Ok((Self { dim, data }, asym))
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut data = vec![0.0; dim * dim];
        for (i, &v) in diag.iter().enumerate() {
            data[i * dim + i] = v;
        }
        Self { dim, data }
    }

    /// The rank-one matrix `v vᵀ`.
    pub fn outer(v: &[f64]) -> Self {
        let dim = v.len();
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                data[i * dim + j] = v[i] * v[j];
            }
        }
        Self { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn is_identity(&self) -> bool {
        self.is_diagonal() && (0..self.dim).all(|i| self.get(i, i) == 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        check_len(self.dim, v.len())?;
        Ok((0..self.dim).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self − s·I`
    pub fn shifted(&self, s: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.data[i * self.dim + i] -= s;
        }
        out
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Writes `L z` into `out`.
    pub fn mul_vec_into(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        for i in 0..self.dim {
            let row = &self.data[i * self.dim..i * self.dim + i + 1];
            out[i] = dot(row, &z[..=i]);
        }
    }

    /// Reassembles `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|p| self.get(i, p) * self.get(j, p)).sum();
                data[i * n + j] = s;
                data[j * n + i] = s;
            }
        }
        SymMatrix { dim: n, data }
    }
}

/// Cholesky–Banachiewicz factorization.
///
/// A pivot at or below `1e-14 × max diagonal entry` is treated as a loss of
/// positive definiteness.
pub fn cholesky(m: &SymMatrix) -> Result<LowerTriangular, LinalgError> {
    let n = m.dim();
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let max_diag = m.diagonal().into_iter().fold(0.0_f64, f64::max);
    let floor = 1e-14 * max_diag;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let partial: f64 = (0..j).map(|p| l[i * n + p] * l[j * n + p]).sum();
            let s = m.get(i, j) - partial;
            if i == j {
                if s <= floor || s <= 0.0 {
                    return Err(LinalgError::NotPositiveDefinite);
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(LowerTriangular { dim: n, data: l })
}

/// Extreme eigenvalues of a symmetric positive definite matrix.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpectralSummary {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub condition_number: f64,
}

impl SpectralSummary {
    /// For symmetric PSD matrices the spectral norm is the largest eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.lambda_max
    }
}

pub fn spectral_summary(m: &SymMatrix) -> Result<SpectralSummary, LinalgError> {
    if m.dim() > MAX_SPECTRAL_DIM {
        return Err(LinalgError::TooLarge(m.dim()));
    }
    let eig = symmetric_eigenvalues(m)?;
    let lambda_min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda_max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lambda_min.is_nan() || lambda_min <= 0.0 {
        return Err(LinalgError::NotPositiveDefinite);
    }
    Ok(SpectralSummary {
        lambda_min,
        lambda_max,
        condition_number: lambda_max / lambda_min,
    })
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, unsorted.
///
/// Diagonal input is returned untouched.
pub fn symmetric_eigenvalues(m: &SymMatrix) -> Result<Vec<f64>, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = m.dim();
    let mut a = m.as_slice().to_vec();
    let frob: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * frob || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let g = a[r * n + p];
                    let h = a[r * n + q];
                    let new_rp = g - s * (h + g * tau);
                    let new_rq = h + s * (g - h * tau);
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }
            }
        }
    }
    Ok((0..n).map(|i| a[i * n + i]).collect())
}

/// `vᵀ m v`
pub fn quad_form(v: &[f64], m: &SymMatrix) -> Result<f64, LinalgError> {
    check_len(m.dim(), v.len())?;
    Ok((0..m.dim()).map(|i| v[i] * dot(m.row(i), v)).sum())
}

/// `tr(a b) = Σ_ij a_ij b_ji`
pub fn trace_product(a: &SymMatrix, b: &SymMatrix) -> Result<f64, LinalgError> {
    check_len(a.dim(), b.dim())?;
    let n = a.dim();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a.get(i, j) * b.get(j, i);
        }
    }
    Ok(s)
}

/// `outer · inner · outer`, symmetrized. Both arguments must be symmetric, so
/// the exact product is symmetric; the returned asymmetry measures rounding.
pub fn sandwich(outer: &SymMatrix, inner: &SymMatrix) -> Result<(SymMatrix, f64), LinalgError> {
    check_len(outer.dim(), inner.dim())?;
    let n = outer.dim();
    let left = matmul(outer.as_slice(), inner.as_slice(), n);
    let full = matmul(&left, outer.as_slice(), n);
    SymMatrix::symmetrize(n, full)
}

/// Entrywise linear combination `Σ cᵢ Mᵢ`.
pub fn linear_combination(terms: &[(f64, &SymMatrix)]) -> Result<SymMatrix, LinalgError> {
    let first = terms.first().ok_or(LinalgError::Empty)?.1;
    let n = first.dim();
    let mut data = vec![0.0; n * n];
    for (c, m) in terms {
        check_len(n, m.dim())?;
        for (acc, v) in data.iter_mut().zip(m.as_slice()) {
            *acc += c * v;
        }
    }
    Ok(SymMatrix { dim: n, data })
}

/// Plain square product of row-major buffers.
pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for p in 0..n {
            let aip = a[i * n + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

/// `‖a − b‖₂²`
#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_len(expected: usize, got: usize) -> Result<(), LinalgError> {
    if expected == got {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch { expected, got })
    }
}
