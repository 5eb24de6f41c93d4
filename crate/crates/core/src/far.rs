//! Autoregression of surface time series: sample mean, lag-h covariance
//! operators, eigen-analysis and regularized inversion in the mass-matrix
//! metric, first-order operator estimation, and one-step-ahead forecasting.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surface::{Surface, SurfaceBasis, SurfaceBasisDescriptor};

/// An ordered sequence of surfaces sharing one basis; row t of the
/// coefficient matrix is the surface at time t.
#[derive(Debug, Clone)]
pub struct SurfaceTimeSeries {
    basis: Arc<SurfaceBasis>,
    coeffs: DMatrix<f64>,
}

impl SurfaceTimeSeries {
    pub fn new(basis: Arc<SurfaceBasis>, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() == 0 {
            return Err(Error::InvalidInput("empty surface series".into()));
        }
        if coeffs.ncols() != basis.len() {
            return Err(Error::InvalidInput(format!(
                "coefficient columns {} != basis size {}",
                coeffs.ncols(),
                basis.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Ok(SurfaceTimeSeries { basis, coeffs })
    }

    pub fn from_surfaces(surfaces: &[Surface]) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(Error::InvalidInput("empty surface series".into()));
        }
        let basis = surfaces[0].basis().clone();
        for s in surfaces {
            if s.basis().as_ref() != basis.as_ref() {
                return Err(Error::BasisMismatch(
                    "surfaces do not share a basis".into(),
                ));
            }
        }
        let coeffs = DMatrix::from_fn(surfaces.len(), basis.len(), |t, m| {
            surfaces[t].coeffs()[m]
        });
        SurfaceTimeSeries::new(basis, coeffs)
    }

    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.nrows() == 0
    }

    pub fn basis(&self) -> &Arc<SurfaceBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn surface(&self, t: usize) -> Surface {
        Surface::new(self.basis.clone(), self.coeffs.row(t).transpose())
            .expect("rows are valid coefficient vectors")
    }

    /// Series with the sample mean subtracted, plus the mean surface.
    pub fn centered(&self) -> (Self, Surface) {
        let mean = sts_mean(self);
        let mut coeffs = self.coeffs.clone();
        for mut row in coeffs.row_iter_mut() {
            row -= mean.coeffs().transpose();
        }
        (
            SurfaceTimeSeries {
                basis: self.basis.clone(),
                coeffs,
            },
            mean,
        )
    }
}

/// Sample mean surface of the series.
pub fn sts_mean(sts: &SurfaceTimeSeries) -> Surface {
    let t = sts.len() as f64;
    let mean = sts.coeffs().row_sum().transpose() / t;
    Surface::new(sts.basis().clone(), mean).expect("mean of finite rows")
}

/// Empirical lag-h covariance of a centered series as a coefficient-space
/// operator matrix: `M_h = (T-h)^-1 sum_t beta_{t+h} beta_t' G`, which maps
/// the coefficients of f to those of `C_h(f)`.
pub fn lag_cov(sts: &SurfaceTimeSeries, h: usize) -> Result<DMatrix<f64>> {
    let t = sts.len();
    if h >= t {
        return Err(Error::InvalidInput(format!(
            "lag {h} needs a series longer than {h}"
        )));
    }
    let b = sts.coeffs();
    let leading = b.rows(h, t - h); // beta_{h+1} .. beta_T
    let trailing = b.rows(0, t - h); // beta_1 .. beta_{T-h}
    let sum = leading.transpose() * trailing;
    Ok(sum * sts.basis().gram() / (t - h) as f64)
}

/// Eigen-decomposition of a self-adjoint operator matrix `M = S G` in the
/// G-metric: eigenvalues descending, eigenvector coefficient columns
/// G-orthonormal.
pub fn g_metric_eigen(
    operator: &DMatrix<f64>,
    gram: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = operator.nrows();
    let chol = Cholesky::new(gram.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("surface mass matrix".into()))?;
    // S = M G^-1, symmetrized against roundoff
    let s_t = chol.solve(&operator.transpose());
    let mut s = s_t.transpose();
    s = (&s + s.transpose()) * 0.5;
    let l = chol.l();
    let mut b = l.transpose() * s * &l;
    b = (&b + b.transpose()) * 0.5;
    let eigen = SymmetricEigen::new(b);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &c| eigen.eigenvalues[c].total_cmp(&eigen.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eigen.eigenvalues[i]).collect();

    let lt = l.transpose();
    let mut vectors = DMatrix::zeros(m, m);
    for (col, &idx) in order.iter().enumerate() {
        let y = eigen.eigenvectors.column(idx).into_owned();
        let w = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Singular("mass matrix factor".into()))?;
        vectors.set_column(col, &w);
    }
    Ok((values, vectors))
}

/// Regularization of the covariance inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// Spectral pseudo-inverse on the top-k eigenspace.
    Truncation { k: usize },
    /// Exact inverse of `C0 + alpha I`.
    Ridge { alpha: f64 },
}

/// Regularized inverse of a lag-0 covariance operator matrix, returned in
/// coefficient space.
pub fn regularized_inverse(
    c0: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    regularization: Regularization,
) -> Result<DMatrix<f64>> {
    let m = c0.nrows();
    match regularization {
        Regularization::Truncation { k } => {
            if k < 1 || k > m {
                return Err(Error::InvalidInput(format!(
                    "truncation level {k} outside 1..={m}"
                )));
            }
            let (values, vectors) = g_metric_eigen(c0, gram)?;
            let lambda_max = values[0].max(0.0);
            let usable = values
                .iter()
                .take_while(|&&v| v > 1e-12 * lambda_max.max(f64::MIN_POSITIVE))
                .count();
            if k > usable {
                return Err(Error::RankExceeded {
                    requested: k,
                    usable,
                });
            }
            let mut inverse = DMatrix::zeros(m, m);
            for j in 0..k {
                let w = vectors.column(j);
                inverse.syger(1.0 / values[j], &w, &w, 1.0);
            }
            inverse.fill_upper_triangle_with_lower_triangle();
            Ok(inverse * gram)
        }
        Regularization::Ridge { alpha } => {
            if !(alpha > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "ridge parameter must be positive, got {alpha}"
                )));
            }
            let shifted = c0 + DMatrix::<f64>::identity(m, m) * alpha;
            LU::new(shifted)
                .try_inverse()
                .ok_or_else(|| Error::Singular("ridge-shifted covariance".into()))
        }
    }
}

/// Estimated first-order autoregression operator with its regularization
/// record and the eigen summary of the lag-0 covariance.
#[derive(Debug, Clone)]
pub struct FarOperator {
    basis: Arc<SurfaceBasis>,
    pub psi: DMatrix<f64>,
    pub regularization: Regularization,
    /// Eigenvalues of the lag-0 covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// G-orthonormal eigenvector coefficients, one column per eigenvalue.
    pub eigenvectors: DMatrix<f64>,
}

impl FarOperator {
    pub fn basis(&self) -> &Arc<SurfaceBasis> {
        &self.basis
    }

    /// Zero operator on the given basis (no temporal dependence).
    pub fn zero(basis: Arc<SurfaceBasis>) -> Self {
        let m = basis.len();
        FarOperator {
            basis,
            psi: DMatrix::zeros(m, m),
            regularization: Regularization::Truncation { k: 0 },
            eigenvalues: vec![0.0; m],
            eigenvectors: DMatrix::identity(m, m),
        }
    }

    /// G-orthogonal projector onto the retained eigenspace (the whole space
    /// under ridge regularization).
    pub fn retained_projector(&self) -> DMatrix<f64> {
        let m = self.psi.nrows();
        match self.regularization {
            Regularization::Truncation { k } => {
                let mut proj = DMatrix::zeros(m, m);
                for j in 0..k {
                    let w = self.eigenvectors.column(j);
                    proj.syger(1.0, &w, &w, 1.0);
                }
                proj.fill_upper_triangle_with_lower_triangle();
                proj * self.basis.gram()
            }
            Regularization::Ridge { .. } => DMatrix::identity(m, m),
        }
    }
}

/// Smallest k whose leading eigenvalues cover `fraction` of the total trace.
pub fn choose_truncation_k(eigenvalues: &[f64], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().map(|&v| v.max(0.0)).sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (j, &v) in eigenvalues.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= fraction * total {
            return j + 1;
        }
    }
    eigenvalues.len().max(1)
}

/// Estimate the FAR(1) coefficient operator `Psi = C1 C0^-1` from a surface
/// series, centering by the sample mean internally.
pub fn estimate_psi(
    sts: &SurfaceTimeSeries,
    regularization: Regularization,
) -> Result<FarOperator> {
    if sts.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "FAR(1) estimation needs at least 3 surfaces, got {}",
            sts.len()
        )));
    }
    let (centered, mean) = sts.centered();
    let scale = mean.coeffs().amax().max(1.0);
    if centered.coeffs().amax() <= 1e-14 * scale {
        return Err(Error::DegenerateOperator(
            "the series has no variation around its mean".into(),
        ));
    }
    let m0 = lag_cov(&centered, 0)?;
    let m1 = lag_cov(&centered, 1)?;
    let (eigenvalues, eigenvectors) = g_metric_eigen(&m0, sts.basis().gram())?;
    if eigenvalues[0] <= 0.0 {
        return Err(Error::DegenerateOperator(
            "lag-0 covariance operator is zero".into(),
        ));
    }
    let inverse = regularized_inverse(&m0, sts.basis().gram(), regularization)?;
    Ok(FarOperator {
        basis: sts.basis().clone(),
        psi: m1 * inverse,
        regularization,
        eigenvalues,
        eigenvectors,
    })
}

/// Model-implied lag-h covariance `Psi^h C0`; h = 0 returns `C0` unchanged.
pub fn model_lag_cov(far: &FarOperator, c0: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let mut result = c0.clone();
    for _ in 0..h {
        result = &far.psi * result;
    }
    result
}

/// One-step-ahead forecast: mean plus the operator applied to the last
/// centered surface.
pub fn forecast_one(sts: &SurfaceTimeSeries, far: &FarOperator) -> Result<Surface> {
    if far.basis().as_ref() != sts.basis().as_ref() {
        return Err(Error::BasisMismatch(
            "operator and series bases differ".into(),
        ));
    }
    let mean = sts_mean(sts);
    let last = sts.coeffs().row(sts.len() - 1).transpose();
    let forecast = mean.coeffs() + &far.psi * (last - mean.coeffs());
    Surface::new(sts.basis().clone(), forecast)
}

/// Operator norm in the G-metric: the largest singular value of
/// `L' A L^-T` where `G = L L'`.
pub fn operator_norm(a: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(gram.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("surface mass matrix".into()))?;
    let l = chol.l();
    let lt = l.transpose();
    let m = a.nrows();
    let mut l_inv_t = DMatrix::identity(m, m);
    let solved = lt
        .solve_upper_triangular(&l_inv_t)
        .ok_or_else(|| Error::Singular("mass matrix factor".into()))?;
    l_inv_t = solved;
    let transformed = lt * a * l_inv_t;
    Ok(transformed.singular_values().max())
}

/// Serializable record of a fitted operator: basis descriptor, eigenvalues,
/// regularization, and the operator matrix row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarOperatorDocument {
    pub basis: SurfaceBasisDescriptor,
    pub regularization: Regularization,
    pub eigenvalues: Vec<f64>,
    pub psi_row_major: Vec<f64>,
}

impl FarOperatorDocument {
    pub fn of(far: &FarOperator) -> Self {
        let m = far.psi.nrows();
        let mut psi_row_major = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                psi_row_major.push(far.psi[(i, j)]);
            }
        }
        FarOperatorDocument {
            basis: SurfaceBasisDescriptor::of(far.basis()),
            regularization: far.regularization,
            eigenvalues: far.eigenvalues.clone(),
            psi_row_major,
        }
    }

    pub fn build(&self) -> Result<FarOperator> {
        let basis = Arc::new(self.basis.build()?);
        let m = basis.len();
        if self.psi_row_major.len() != m * m {
            return Err(Error::InvalidInput(format!(
                "operator matrix needs {} entries, got {}",
                m * m,
                self.psi_row_major.len()
            )));
        }
        let psi = DMatrix::from_row_slice(m, m, &self.psi_row_major);
        Ok(FarOperator {
            basis,
            psi,
            regularization: self.regularization,
            eigenvalues: self.eigenvalues.clone(),
            eigenvectors: DMatrix::identity(m, m),
        })
    }
}
