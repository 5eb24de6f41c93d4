//! First and second moments of functional random fields: pointwise and
//! Lagrange-weighted means, drift estimation by OLS/GLS and the iterative
//! GLS loop, empirical covariance and variogram operators in coefficient
//! space, the Gaussian log-likelihood of a coefficient field, and
//! eigen-decomposition in the Gram metric.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, LU};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSystem, FunctionalCurve};
use crate::error::{Error, Result};
use crate::spatial::{bin_pairs, pairwise_distances, DistanceBins, LocationSet};
use crate::tracevar::{
    empirical_trace_variogram, fit_variogram, FitWeighting, VariogramFamily, VariogramModel,
};

/// Curves observed at planar locations, held as an n x K coefficient matrix
/// in a shared basis. Row i is the coefficient vector of the curve at
/// location i.
#[derive(Debug, Clone)]
pub struct SpatialFunctionalDataset {
    locs: LocationSet,
    basis: Arc<BasisSystem>,
    coeffs: DMatrix<f64>,
}

impl SpatialFunctionalDataset {
    pub fn new(locs: LocationSet, basis: Arc<BasisSystem>, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() != locs.len() {
            return Err(Error::InvalidInput(format!(
                "coefficient rows {} != number of locations {}",
                coeffs.nrows(),
                locs.len()
            )));
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
        Ok(SpatialFunctionalDataset { locs, basis, coeffs })
    }

    pub fn from_curves(locs: LocationSet, curves: &[FunctionalCurve]) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::InvalidInput("no curves".into()));
        }
        let basis = curves[0].basis().clone();
        for c in curves {
            if c.basis().as_ref() != basis.as_ref() {
                return Err(Error::BasisMismatch(
                    "curves do not share a basis system".into(),
                ));
            }
        }
        let k = basis.len();
        let coeffs = DMatrix::from_fn(curves.len(), k, |i, j| curves[i].coeffs()[j]);
        SpatialFunctionalDataset::new(locs, basis, coeffs)
    }

    pub fn n(&self) -> usize {
        self.locs.len()
    }

    pub fn locs(&self) -> &LocationSet {
        &self.locs
    }

    pub fn basis(&self) -> &Arc<BasisSystem> {
        &self.basis
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn curve(&self, i: usize) -> FunctionalCurve {
        FunctionalCurve::new(self.basis.clone(), self.coeffs.row(i).transpose())
            .expect("rows are valid coefficient vectors")
    }

    /// Same locations and basis, new coefficients.
    pub fn with_coeffs(&self, coeffs: DMatrix<f64>) -> Result<Self> {
        SpatialFunctionalDataset::new(self.locs.clone(), self.basis.clone(), coeffs)
    }

    /// Dataset with the pointwise mean removed, plus the mean itself.
    pub fn centered(&self) -> (Self, FunctionalCurve) {
        let mean = pointwise_mean(self);
        let mut coeffs = self.coeffs.clone();
        for mut row in coeffs.row_iter_mut() {
            row -= mean.coeffs().transpose();
        }
        let ds = SpatialFunctionalDataset {
            locs: self.locs.clone(),
            basis: self.basis.clone(),
            coeffs,
        };
        (ds, mean)
    }

    /// Dataset whose rows are this dataset's minus `other`'s.
    pub fn minus(&self, other: &DMatrix<f64>) -> Result<Self> {
        if other.shape() != self.coeffs.shape() {
            return Err(Error::InvalidInput("shape mismatch".into()));
        }
        self.with_coeffs(&self.coeffs - other)
    }
}

/// Plain average of the observed curves.
pub fn pointwise_mean(ds: &SpatialFunctionalDataset) -> FunctionalCurve {
    let n = ds.n() as f64;
    let mean = ds.coeffs().row_sum().transpose() / n;
    FunctionalCurve::new(ds.basis().clone(), mean).expect("mean of finite rows")
}

/// Solution of the constrained weighting problem for the mean.
#[derive(Debug, Clone)]
pub struct LagrangeMean {
    pub weights: DVector<f64>,
    pub multiplier: f64,
    pub mean: FunctionalCurve,
}

/// Weighted mean with weights solving the saddle system: the weights sum to
/// one, and each stationarity equation `sum_i w_i sigma(s_i, s_j) = lambda`
/// holds exactly at the solver level.
pub fn lagrange_weighted_mean(
    ds: &SpatialFunctionalDataset,
    trace_cov: &DMatrix<f64>,
) -> Result<LagrangeMean> {
    let n = ds.n();
    if trace_cov.nrows() != n || trace_cov.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "trace covariance must be {n} x {n}"
        )));
    }
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(trace_cov);
    for i in 0..n {
        aug[(i, n)] = -1.0;
        aug[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let solution = LU::new(aug)
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("augmented mean system".into()))?;
    let weights = solution.rows(0, n).into_owned();
    let multiplier = solution[n];
    let mean_coeffs = ds.coeffs().transpose() * &weights;
    let mean = FunctionalCurve::new(ds.basis().clone(), mean_coeffs)?;
    Ok(LagrangeMean {
        weights,
        multiplier,
        mean,
    })
}

/// One scalar regressor `s1^p1 * s2^p2` of the drift model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftTerm {
    pub p1: u32,
    pub p2: u32,
}

impl DriftTerm {
    pub const INTERCEPT: DriftTerm = DriftTerm { p1: 0, p2: 0 };

    pub fn eval(&self, s: [f64; 2]) -> f64 {
        s[0].powi(self.p1 as i32) * s[1].powi(self.p2 as i32)
    }
}

/// Drift model: known scalar regressors of the location times unknown
/// functional coefficients. The first term is always the intercept; after
/// fitting, `coeffs` holds the (L+1) x K coefficient matrix of the drift
/// curves.
#[derive(Debug, Clone)]
pub struct DriftSpec {
    terms: Vec<DriftTerm>,
    coeffs: Option<DMatrix<f64>>,
}

impl DriftSpec {
    pub fn new(terms: Vec<DriftTerm>) -> Result<Self> {
        if terms.first() != Some(&DriftTerm::INTERCEPT) {
            return Err(Error::InvalidInput(
                "the first drift term must be the intercept".into(),
            ));
        }
        Ok(DriftSpec {
            terms,
            coeffs: None,
        })
    }

    pub fn intercept() -> Self {
        DriftSpec {
            terms: vec![DriftTerm::INTERCEPT],
            coeffs: None,
        }
    }

    /// Intercept plus the plane coordinates.
    pub fn linear() -> Self {
        DriftSpec {
            terms: vec![
                DriftTerm::INTERCEPT,
                DriftTerm { p1: 1, p2: 0 },
                DriftTerm { p1: 0, p2: 1 },
            ],
            coeffs: None,
        }
    }

    /// Full quadratic surface: 1, s1, s2, s1 s2, s1^2, s2^2.
    pub fn quadratic() -> Self {
        DriftSpec {
            terms: vec![
                DriftTerm::INTERCEPT,
                DriftTerm { p1: 1, p2: 0 },
                DriftTerm { p1: 0, p2: 1 },
                DriftTerm { p1: 1, p2: 1 },
                DriftTerm { p1: 2, p2: 0 },
                DriftTerm { p1: 0, p2: 2 },
            ],
            coeffs: None,
        }
    }

    pub fn terms(&self) -> &[DriftTerm] {
        &self.terms
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeffs(&self) -> Option<&DMatrix<f64>> {
        self.coeffs.as_ref()
    }

    pub fn with_coeffs(&self, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() != self.terms.len() {
            return Err(Error::InvalidInput(
                "coefficient rows must match drift terms".into(),
            ));
        }
        Ok(DriftSpec {
            terms: self.terms.clone(),
            coeffs: Some(coeffs),
        })
    }

    /// Design matrix of the regressors at the given locations.
    pub fn design_matrix(&self, locs: &LocationSet) -> DMatrix<f64> {
        DMatrix::from_fn(locs.len(), self.terms.len(), |i, l| {
            self.terms[l].eval(locs.point(i))
        })
    }

    /// Coefficient vector of the fitted drift curve at a location.
    pub fn drift_coeffs_at(&self, s: [f64; 2]) -> Result<DVector<f64>> {
        let b = self
            .coeffs
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("drift has not been fitted".into()))?;
        let a = DVector::from_fn(self.terms.len(), |l, _| self.terms[l].eval(s));
        Ok(b.transpose() * a)
    }

    /// Fitted drift coefficients at every location: the n x K matrix `A B`.
    pub fn fitted_matrix(&self, locs: &LocationSet) -> Result<DMatrix<f64>> {
        let b = self
            .coeffs
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("drift has not been fitted".into()))?;
        Ok(self.design_matrix(locs) * b)
    }
}

/// Ordinary least squares drift: `B = (A'A)^-1 A'Z`.
pub fn ols_drift(ds: &SpatialFunctionalDataset, spec: &DriftSpec) -> Result<DriftSpec> {
    let a = spec.design_matrix(ds.locs());
    let normal = a.transpose() * &a;
    let chol = Cholesky::new(normal)
        .ok_or_else(|| Error::RankDeficient("drift design matrix".into()))?;
    let b = chol.solve(&(a.transpose() * ds.coeffs()));
    spec.with_coeffs(b)
}

/// The same OLS drift through the vectorized normal equations: solves
/// `(J' kron A'A) vec(B) = vec(A'Z J)` directly. Algebraically identical to
/// `ols_drift`; kept as an independent route for verification.
pub fn ols_drift_via_kronecker(
    ds: &SpatialFunctionalDataset,
    spec: &DriftSpec,
) -> Result<DriftSpec> {
    let a = spec.design_matrix(ds.locs());
    let j = &ds.basis().gram().j;
    let ata = a.transpose() * &a;
    let big = j.transpose().kronecker(&ata);
    let rhs_mat = a.transpose() * ds.coeffs() * j;
    let rhs = DVector::from_column_slice(rhs_mat.as_slice());
    let solution = LU::new(big)
        .solve(&rhs)
        .ok_or_else(|| Error::RankDeficient("vectorized drift system".into()))?;
    let l1 = spec.n_terms();
    let k = ds.basis().len();
    let b = DMatrix::from_column_slice(l1, k, solution.as_slice());
    spec.with_coeffs(b)
}

/// Generalized least squares drift: `B = (A' S^-1 A)^-1 A' S^-1 Z`.
pub fn gls_drift(
    ds: &SpatialFunctionalDataset,
    spec: &DriftSpec,
    sigma: &DMatrix<f64>,
) -> Result<DriftSpec> {
    let n = ds.n();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::InvalidInput(format!("sigma must be {n} x {n}")));
    }
    let sigma_chol = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("GLS covariance".into()))?;
    let a = spec.design_matrix(ds.locs());
    let si_a = sigma_chol.solve(&a);
    let si_z = sigma_chol.solve(ds.coeffs());
    let normal = a.transpose() * si_a;
    let chol = Cholesky::new(normal)
        .ok_or_else(|| Error::RankDeficient("GLS drift design matrix".into()))?;
    let b = chol.solve(&(a.transpose() * si_z));
    spec.with_coeffs(b)
}

/// Outcome of the iterative GLS drift loop.
#[derive(Debug, Clone)]
pub struct IterativeGlsFit {
    pub drift: DriftSpec,
    pub model: VariogramModel,
    pub iterations: usize,
    pub converged: bool,
    /// A variogram fit failed after the first stable iterate; the last
    /// stable drift and model are returned.
    pub fit_failed: bool,
}

pub const DEFAULT_GLS_BINS: usize = 15;
pub const DEFAULT_GLS_MAX_FRACTION: f64 = 0.5;

/// Iterative GLS drift estimation: OLS start, then repeatedly fit a
/// variogram with nugget to the drift residuals, build the implied
/// covariance at the pairwise distances, and refit the drift by GLS until
/// the relative Frobenius change of the coefficients drops below `tol`.
///
/// Non-convergence within `max_iter` is flagged, not an error. A variogram
/// fit failure on the first pass propagates; later failures return the last
/// stable iterate with `fit_failed` set.
pub fn iterative_gls_drift(
    ds: &SpatialFunctionalDataset,
    spec: &DriftSpec,
    family: VariogramFamily,
    max_iter: usize,
    tol: f64,
) -> Result<IterativeGlsFit> {
    if max_iter < 1 {
        return Err(Error::InvalidInput("max_iter must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }

    let distances = pairwise_distances(ds.locs());
    let bins = bin_pairs(&distances, DEFAULT_GLS_BINS, DEFAULT_GLS_MAX_FRACTION)?;
    let j = &ds.basis().gram().j;
    let data_scale = mean_squared_norm(ds.coeffs(), j);

    let mut drift = ols_drift(ds, spec)?;
    let mut iterations = 1usize;
    let mut model: Option<VariogramModel> = None;
    let mut converged = false;
    let mut fit_failed = false;

    while iterations < max_iter && !converged {
        let residuals = ds.minus(&drift.fitted_matrix(ds.locs())?)?;
        let fitted = fit_residual_model(&residuals, &bins, family, data_scale);
        let current = match fitted {
            Ok(m) => m,
            Err(err) => {
                if model.is_none() {
                    return Err(err);
                }
                fit_failed = true;
                break;
            }
        };

        let sigma = covariance_from_model(&current, &distances);
        let refit = match gls_drift(ds, &drift, &sigma) {
            Ok(d) => d,
            Err(err) => {
                if model.is_none() {
                    return Err(err);
                }
                fit_failed = true;
                break;
            }
        };
        model = Some(current);
        iterations += 1;

        let prev = drift.coeffs().expect("fitted");
        let next = refit.coeffs().expect("fitted");
        let denom = prev.norm().max(f64::MIN_POSITIVE);
        let change = (next - prev).norm() / denom;
        drift = refit;
        if change < tol {
            converged = true;
        }
    }

    let model = match model {
        Some(m) => m,
        None => {
            // max_iter = 1: no GLS pass ran; still report the residual fit
            let residuals = ds.minus(&drift.fitted_matrix(ds.locs())?)?;
            fit_residual_model(&residuals, &bins, family, data_scale)?
        }
    };
    Ok(IterativeGlsFit {
        drift,
        model,
        iterations,
        converged,
        fit_failed,
    })
}

fn mean_squared_norm(z: &DMatrix<f64>, j: &DMatrix<f64>) -> f64 {
    let n = z.nrows();
    (0..n)
        .map(|i| {
            let zi = z.row(i).transpose();
            (j * &zi).dot(&zi)
        })
        .sum::<f64>()
        / n as f64
}

/// Fit the residual trace-variogram, falling back to a machine-epsilon pure
/// nugget when the residual field is numerically zero.
fn fit_residual_model(
    residuals: &SpatialFunctionalDataset,
    bins: &DistanceBins,
    family: VariogramFamily,
    data_scale: f64,
) -> Result<VariogramModel> {
    let j = &residuals.basis().gram().j;
    let res_scale = mean_squared_norm(residuals.coeffs(), j);
    if res_scale <= 1e-20 * data_scale.max(f64::MIN_POSITIVE) {
        return VariogramModel::new(family, f64::EPSILON, 0.0, 1.0);
    }
    let emp = empirical_trace_variogram(residuals, bins);
    let (model, _) = fit_variogram(&emp, family, FitWeighting::Counts)?;
    Ok(model)
}

/// Covariance matrix implied by a variogram model at pairwise distances:
/// the sill on the diagonal, `sill - gamma(h_ij)` elsewhere. Between distinct
/// coincident locations the nugget counts as uncorrelated measurement error,
/// so their covariance is the partial sill, not the full sill.
pub fn covariance_from_model(model: &VariogramModel, distances: &DMatrix<f64>) -> DMatrix<f64> {
    let n = distances.nrows();
    let mut sigma = DMatrix::zeros(n, n);
    let sill = model.sill().max(f64::EPSILON);
    for i in 0..n {
        sigma[(i, i)] = sill;
        for l in (i + 1)..n {
            let value = if distances[(i, l)] == 0.0 {
                sill - model.nugget
            } else {
                sill - model.gamma(distances[(i, l)])
            };
            sigma[(i, l)] = value;
            sigma[(l, i)] = value;
        }
    }
    sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Covariance,
    Variogram,
}

/// Per-bin coefficient matrices of the empirical covariance or variogram
/// operator. An empty distance class keeps its slot with `None` rather than
/// a zero matrix.
#[derive(Debug, Clone)]
pub struct CoefficientCovariance {
    pub kind: OperatorKind,
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
    pub per_bin: Vec<Option<DMatrix<f64>>>,
    /// `Sigma(0) = n^-1 sum z_i z_i'` (covariance kind only).
    pub at_zero: Option<DMatrix<f64>>,
}

impl CoefficientCovariance {
    /// Kernel value `eta(u)' Sigma(h_bin) eta(v)` for one distance class,
    /// or `None` when the class is empty.
    pub fn kernel_value(
        &self,
        basis: &BasisSystem,
        bin: usize,
        u: f64,
        v: f64,
    ) -> Result<Option<f64>> {
        let Some(sigma) = self.per_bin.get(bin).and_then(|m| m.as_ref()) else {
            return Ok(None);
        };
        let eu = basis.eval(u)?;
        let ev = basis.eval(v)?;
        Ok(Some((sigma * ev).dot(&eu)))
    }
}

/// Empirical covariance operator of a centered dataset, reduced to per-bin
/// K x K matrices. Unordered pairs are symmetrized.
pub fn empirical_cov_operator(
    ds: &SpatialFunctionalDataset,
    bins: &DistanceBins,
) -> CoefficientCovariance {
    let z = ds.coeffs();
    let k = z.ncols();
    let mut per_bin = Vec::with_capacity(bins.len());
    for pairs in &bins.pairs {
        if pairs.is_empty() {
            per_bin.push(None);
            continue;
        }
        let mut acc = DMatrix::zeros(k, k);
        for &(i, l) in pairs {
            let zi = z.row(i).transpose();
            let zl = z.row(l).transpose();
            acc.syger(0.5, &zi, &zl, 1.0);
            acc.syger(0.5, &zl, &zi, 1.0);
        }
        acc.fill_upper_triangle_with_lower_triangle();
        per_bin.push(Some(acc / pairs.len() as f64));
    }
    let n = z.nrows();
    let mut at_zero = DMatrix::zeros(k, k);
    for i in 0..n {
        let zi = z.row(i).transpose();
        at_zero.syger(1.0, &zi, &zi, 1.0);
    }
    at_zero.fill_upper_triangle_with_lower_triangle();
    CoefficientCovariance {
        kind: OperatorKind::Covariance,
        centers: bins.centers.clone(),
        counts: bins.counts(),
        per_bin,
        at_zero: Some(at_zero / n as f64),
    }
}

/// Empirical variogram operator: per-bin averages of the increment outer
/// products, halved. Mean removal is not required.
pub fn empirical_vario_operator(
    ds: &SpatialFunctionalDataset,
    bins: &DistanceBins,
) -> CoefficientCovariance {
    let z = ds.coeffs();
    let k = z.ncols();
    let mut per_bin = Vec::with_capacity(bins.len());
    for pairs in &bins.pairs {
        if pairs.is_empty() {
            per_bin.push(None);
            continue;
        }
        let mut acc = DMatrix::zeros(k, k);
        for &(i, l) in pairs {
            let diff = (z.row(i) - z.row(l)).transpose();
            acc.syger(1.0, &diff, &diff, 1.0);
        }
        acc.fill_upper_triangle_with_lower_triangle();
        per_bin.push(Some(acc / (2.0 * pairs.len() as f64)));
    }
    CoefficientCovariance {
        kind: OperatorKind::Variogram,
        centers: bins.centers.clone(),
        counts: bins.counts(),
        per_bin,
        at_zero: None,
    }
}

/// Gaussian log-likelihood of one coefficient field with constant mean `mu`
/// and covariance `sigma`, via a triangular factorization for the
/// log-determinant.
pub fn gaussian_loglik(zk: &DVector<f64>, mu: f64, sigma: &DMatrix<f64>) -> Result<f64> {
    let n = zk.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::InvalidInput(format!("sigma must be {n} x {n}")));
    }
    let chol = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("likelihood covariance".into()))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let centered = zk - DVector::repeat(n, mu);
    let quad = chol.solve(&centered).dot(&centered);
    Ok(-0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det - 0.5 * quad)
}

/// Eigen-decomposition of a covariance kernel matrix in the Gram metric.
///
/// `c0` is the K x K kernel coefficient matrix (the operator maps
/// coefficients `c` to `c0 J c`). The generalized problem is symmetrized via
/// `J = L L'`; returned eigenfunctions are orthonormal in the `J`-inner
/// product, eigenvalues are nonincreasing with small negatives clamped to
/// zero.
pub fn eigenpairs(
    c0: &DMatrix<f64>,
    basis: &Arc<BasisSystem>,
    k: usize,
) -> Result<(Vec<f64>, Vec<FunctionalCurve>)> {
    let dim = basis.len();
    if c0.nrows() != dim || c0.ncols() != dim {
        return Err(Error::InvalidInput(format!(
            "operator matrix must be {dim} x {dim}"
        )));
    }
    if k > dim {
        return Err(Error::InvalidInput(format!(
            "cannot extract {k} eigenpairs from a {dim}-dimensional basis"
        )));
    }
    let j = &basis.gram().j;
    let chol = Cholesky::new(j.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("Gram matrix".into()))?;
    let l = chol.l();
    let mut b = l.transpose() * c0 * &l;
    // symmetrize roundoff
    b = (&b + b.transpose()) * 0.5;
    let eigen = SymmetricEigen::new(b);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &c| eigen.eigenvalues[c].total_cmp(&eigen.eigenvalues[a]));

    let lambda_max = order
        .first()
        .map(|&i| eigen.eigenvalues[i])
        .unwrap_or(0.0)
        .abs();
    let clamp_floor = -1e-10 * lambda_max.max(1.0);

    let lt = l.transpose();
    let mut values = Vec::with_capacity(k);
    let mut functions = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let lambda = eigen.eigenvalues[idx];
        if lambda < clamp_floor {
            return Err(Error::NotPositiveDefinite(format!(
                "operator eigenvalue {lambda} is negative beyond tolerance"
            )));
        }
        values.push(lambda.max(0.0));
        let y = eigen.eigenvectors.column(idx).into_owned();
        let w = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Singular("Gram factor".into()))?;
        functions.push(FunctionalCurve::new(basis.clone(), w)?);
    }
    Ok((values, functions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{inner_product, smooth_curve, BasisSystem};
    use crate::testutil;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng;

    fn small_dataset(n: usize, k: usize, seed: u64) -> SpatialFunctionalDataset {
        let mut rng = testutil::rng(seed);
        let points: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                [
                    testutil::std_normal(&mut rng) * 5.0,
                    testutil::std_normal(&mut rng) * 5.0,
                ]
            })
            .collect();
        let locs = LocationSet::new(points).unwrap();
        let basis = Arc::new(BasisSystem::bspline(k, 4).unwrap());
        let coeffs = testutil::random_matrix(&mut rng, n, k);
        SpatialFunctionalDataset::new(locs, basis, coeffs).unwrap()
    }

    #[test]
    fn mean_of_identical_curves_is_that_curve() {
        let ds = small_dataset(1, 6, 1);
        let row = ds.coeffs().row(0).into_owned();
        let stacked = DMatrix::from_fn(4, 6, |_, j| row[j]);
        let locs = LocationSet::grid(2, 2, 1.0).unwrap();
        let ds4 = SpatialFunctionalDataset::new(locs, ds.basis().clone(), stacked).unwrap();
        let mean = pointwise_mean(&ds4);
        for j in 0..6 {
            assert_abs_diff_eq!(mean.coeffs()[j], row[j]);
        }
    }

    #[test]
    fn mean_of_opposite_curves_is_zero() {
        let mut rng = testutil::rng(2);
        let z = testutil::random_vector(&mut rng, 5);
        let basis = Arc::new(BasisSystem::bspline(5, 3).unwrap());
        let coeffs = DMatrix::from_fn(2, 5, |i, j| if i == 0 { z[j] } else { -z[j] });
        let locs = LocationSet::new(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let ds = SpatialFunctionalDataset::new(locs, basis, coeffs).unwrap();
        let mean = pointwise_mean(&ds);
        assert!(mean.coeffs().amax() < 1e-15);
    }

    #[test]
    fn mean_matches_grid_average_after_expansion() {
        let ds = small_dataset(5, 7, 3);
        let mean = pointwise_mean(&ds);
        for g in 0..=100 {
            let v = g as f64 / 100.0;
            let avg: f64 =
                (0..5).map(|i| ds.curve(i).eval(v).unwrap()).sum::<f64>() / 5.0;
            assert_abs_diff_eq!(mean.eval(v).unwrap(), avg, epsilon = 1e-10);
        }
    }

    #[test]
    fn exchangeable_lagrange_weights_are_uniform() {
        let ds = small_dataset(6, 5, 4);
        let trace_cov = DMatrix::identity(6, 6) * 2.5;
        let sol = lagrange_weighted_mean(&ds, &trace_cov).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(sol.weights[i], 1.0 / 6.0, epsilon = 1e-12);
        }
        let pw = pointwise_mean(&ds);
        assert!((sol.mean.coeffs() - pw.coeffs()).amax() < 1e-12);
    }

    #[test]
    fn single_observation_mean() {
        let ds = small_dataset(1, 5, 5);
        let sol = lagrange_weighted_mean(&ds, &DMatrix::identity(1, 1)).unwrap();
        assert_abs_diff_eq!(sol.weights[0], 1.0);
        assert!((sol.mean.coeffs() - ds.curve(0).coeffs()).amax() < 1e-15);
    }

    #[test]
    fn lagrange_weights_match_dense_oracle() {
        let ds = small_dataset(3, 4, 6);
        let d = pairwise_distances(ds.locs());
        let model = VariogramModel::new(VariogramFamily::Exponential, 0.1, 1.0, 3.0).unwrap();
        let trace_cov = covariance_from_model(&model, &d);
        let sol = lagrange_weighted_mean(&ds, &trace_cov).unwrap();

        let mut aug = DMatrix::zeros(4, 4);
        aug.view_mut((0, 0), (3, 3)).copy_from(&trace_cov);
        for i in 0..3 {
            aug[(i, 3)] = -1.0;
            aug[(3, i)] = 1.0;
        }
        let oracle = testutil::solve_dense(&aug, &[0.0, 0.0, 0.0, 1.0]);
        for i in 0..3 {
            assert_abs_diff_eq!(sol.weights[i], oracle[i], epsilon = 1e-10);
        }
        assert_abs_diff_eq!(sol.multiplier, oracle[3], epsilon = 1e-10);
    }

    #[test]
    fn lagrange_constraints_hold() {
        let ds = small_dataset(12, 5, 7);
        let d = pairwise_distances(ds.locs());
        let model = VariogramModel::new(VariogramFamily::Gaussian, 0.2, 1.5, 4.0).unwrap();
        let trace_cov = covariance_from_model(&model, &d);
        let sol = lagrange_weighted_mean(&ds, &trace_cov).unwrap();
        assert!((sol.weights.sum() - 1.0).abs() < 1e-10);
        // stationarity residual of the saddle system
        let resid = &trace_cov * &sol.weights
            - DVector::repeat(12, sol.multiplier);
        assert!(resid.amax() < 1e-8);
    }

    #[test]
    fn intercept_only_drift_equals_pointwise_mean() {
        let ds = small_dataset(9, 6, 8);
        let fit = ols_drift(&ds, &DriftSpec::intercept()).unwrap();
        let mean = pointwise_mean(&ds);
        let b = fit.coeffs().unwrap();
        for j in 0..6 {
            assert_abs_diff_eq!(b[(0, j)], mean.coeffs()[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn noiseless_drift_recovered_exactly() {
        let mut rng = testutil::rng(9);
        let spec = DriftSpec::quadratic();
        let ds = small_dataset(40, 6, 10);
        let a = spec.design_matrix(ds.locs());
        let b0 = testutil::random_matrix(&mut rng, 6, 6);
        let ds = ds.with_coeffs(&a * &b0).unwrap();

        for fit in [
            ols_drift(&ds, &spec).unwrap(),
            ols_drift_via_kronecker(&ds, &spec).unwrap(),
            gls_drift(&ds, &spec, &testutil::random_spd(&mut rng, 40)).unwrap(),
        ] {
            assert!((fit.coeffs().unwrap() - &b0).amax() < 1e-10);
        }
    }

    #[test]
    fn kronecker_and_direct_paths_agree() {
        let ds = small_dataset(25, 5, 11);
        let spec = DriftSpec::linear();
        let direct = ols_drift(&ds, &spec).unwrap();
        let kron = ols_drift_via_kronecker(&ds, &spec).unwrap();
        assert!((direct.coeffs().unwrap() - kron.coeffs().unwrap()).amax() < 1e-10);
    }

    #[test]
    fn quadratic_drift_beats_pointwise_mean() {
        let mut rng = testutil::rng(12);
        let spec = DriftSpec::quadratic();
        let ds = small_dataset(60, 5, 13);
        let a = spec.design_matrix(ds.locs());
        let b0 = testutil::random_matrix(&mut rng, 6, 5) * 0.3;
        let noise = testutil::random_matrix(&mut rng, 60, 5) * 0.2;
        let ds = ds.with_coeffs(&a * &b0 + noise).unwrap();

        let fit = ols_drift(&ds, &spec).unwrap();
        let j = &ds.basis().gram().j;
        let truth = &a * &b0;
        let fitted = fit.fitted_matrix(ds.locs()).unwrap();
        let mean = pointwise_mean(&ds);

        let mut err_fit = 0.0;
        let mut err_mean = 0.0;
        for i in 0..60 {
            let d_fit = (fitted.row(i) - truth.row(i)).transpose();
            let d_mean = (mean.coeffs().transpose() - truth.row(i)).transpose();
            err_fit += (j * &d_fit).dot(&d_fit);
            err_mean += (j * &d_mean).dot(&d_mean);
        }
        assert!(err_fit < err_mean);
    }

    #[test]
    fn gls_with_scalar_covariance_equals_ols() {
        let ds = small_dataset(20, 5, 14);
        let spec = DriftSpec::linear();
        let ols = ols_drift(&ds, &spec).unwrap();
        for scale in [1.0, 3.7] {
            let gls = gls_drift(&ds, &spec, &(DMatrix::identity(20, 20) * scale)).unwrap();
            assert!((ols.coeffs().unwrap() - gls.coeffs().unwrap()).amax() < 1e-12);
        }
    }

    #[test]
    fn gls_matches_weighted_least_squares_oracle() {
        let mut rng = testutil::rng(15);
        let ds = small_dataset(15, 4, 16);
        let spec = DriftSpec::linear();
        let mut weights = DVector::from_fn(15, |_, _| 1.0 + rng.gen_range(0.0..3.0));
        weights[4] = 1e6; // one huge variance shrinks that row's influence
        let sigma = DMatrix::from_diagonal(&weights);
        let fit = gls_drift(&ds, &spec, &sigma).unwrap();

        // WLS oracle: scale rows by 1/sqrt(w) and solve OLS densely per column
        let a = spec.design_matrix(ds.locs());
        let mut aw = a.clone();
        let mut zw = ds.coeffs().clone();
        for i in 0..15 {
            let s = 1.0 / weights[i].sqrt();
            aw.row_mut(i).scale_mut(s);
            zw.row_mut(i).scale_mut(s);
        }
        let normal = aw.transpose() * &aw;
        for col in 0..4 {
            let rhs_vec = aw.transpose() * zw.column(col);
            let oracle = testutil::solve_dense(&normal, rhs_vec.as_slice());
            for l in 0..3 {
                assert_abs_diff_eq!(
                    fit.coeffs().unwrap()[(l, col)],
                    oracle[l],
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn zero_noise_iterative_gls_converges_in_two_iterations() {
        let mut rng = testutil::rng(17);
        let spec = DriftSpec::linear();
        let ds = small_dataset(30, 4, 18);
        let a = spec.design_matrix(ds.locs());
        let b0 = testutil::random_matrix(&mut rng, 3, 4);
        let ds = ds.with_coeffs(&a * &b0).unwrap();

        let fit =
            iterative_gls_drift(&ds, &spec, VariogramFamily::Exponential, 10, 1e-4).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 2);
        assert!((fit.drift.coeffs().unwrap() - &b0).amax() < 1e-8);
    }

    #[test]
    fn white_noise_residuals_give_drift_close_to_ols() {
        let mut rng = testutil::rng(19);
        let spec = DriftSpec::linear();
        let ds = small_dataset(50, 4, 20);
        let a = spec.design_matrix(ds.locs());
        let b0 = testutil::random_matrix(&mut rng, 3, 4);
        let noise = testutil::random_matrix(&mut rng, 50, 4) * 1e-5;
        let ds = ds.with_coeffs(&a * &b0 + noise).unwrap();

        let fit =
            iterative_gls_drift(&ds, &spec, VariogramFamily::Exponential, 10, 1e-4).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations <= 3);
        let ols = ols_drift(&ds, &spec).unwrap();
        let rel = (fit.drift.coeffs().unwrap() - ols.coeffs().unwrap()).norm()
            / ols.coeffs().unwrap().norm();
        assert!(rel < 1e-6, "relative difference {rel}");
    }

    #[test]
    fn empirical_operators_on_degenerate_inputs() {
        let basis = Arc::new(BasisSystem::bspline(4, 4).unwrap());
        let locs = LocationSet::new(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let zeros = SpatialFunctionalDataset::new(
            locs.clone(),
            basis.clone(),
            DMatrix::zeros(2, 4),
        )
        .unwrap();
        let bins = bin_pairs(&pairwise_distances(&locs), 1, 1.0).unwrap();
        let cov = empirical_cov_operator(&zeros, &bins);
        assert!(cov.per_bin[0].as_ref().unwrap().amax() == 0.0);
        assert!(cov.at_zero.as_ref().unwrap().amax() == 0.0);

        // two identical curves: the bin matrix is the outer product
        let mut rng = testutil::rng(21);
        let z = testutil::random_vector(&mut rng, 4);
        let coeffs = DMatrix::from_fn(2, 4, |_, j| z[j]);
        let ds = SpatialFunctionalDataset::new(locs.clone(), basis.clone(), coeffs).unwrap();
        let cov = empirical_cov_operator(&ds, &bins);
        let outer = &z * z.transpose();
        assert!((cov.per_bin[0].as_ref().unwrap() - &outer).amax() < 1e-12);

        // variogram operator of z and -z: 2 z z'
        let coeffs = DMatrix::from_fn(2, 4, |i, j| if i == 0 { z[j] } else { -z[j] });
        let ds = SpatialFunctionalDataset::new(locs, basis, coeffs).unwrap();
        let vario = empirical_vario_operator(&ds, &bins);
        assert!((vario.per_bin[0].as_ref().unwrap() - outer * 2.0).amax() < 1e-12);
    }

    #[test]
    fn identical_curves_have_zero_variogram_operator() {
        let ds = small_dataset(1, 5, 22);
        let row = ds.coeffs().row(0).into_owned();
        let locs = LocationSet::grid(3, 1, 1.0).unwrap();
        let stacked = DMatrix::from_fn(3, 5, |_, j| row[j]);
        let ds = SpatialFunctionalDataset::new(locs, ds.basis().clone(), stacked).unwrap();
        let bins = bin_pairs(&pairwise_distances(ds.locs()), 2, 1.0).unwrap();
        let vario = empirical_vario_operator(&ds, &bins);
        for m in vario.per_bin.iter().flatten() {
            assert!(m.amax() < 1e-15);
        }
    }

    #[test]
    fn operators_are_permutation_invariant() {
        let ds = small_dataset(12, 4, 23);
        let bins = bin_pairs(&pairwise_distances(ds.locs()), 4, 0.8).unwrap();
        let cov = empirical_cov_operator(&ds, &bins);

        let perm: Vec<usize> = (0..12).rev().collect();
        let locs = LocationSet::new(perm.iter().map(|&i| ds.locs().point(i)).collect()).unwrap();
        let coeffs = DMatrix::from_fn(12, 4, |i, j| ds.coeffs()[(perm[i], j)]);
        let permuted = SpatialFunctionalDataset::new(locs, ds.basis().clone(), coeffs).unwrap();
        let bins2 = bin_pairs(&pairwise_distances(permuted.locs()), 4, 0.8).unwrap();
        let cov2 = empirical_cov_operator(&permuted, &bins2);

        for (a, b) in cov.per_bin.iter().zip(&cov2.per_bin) {
            match (a, b) {
                (Some(ma), Some(mb)) => assert!((ma - mb).amax() < 1e-10),
                (None, None) => {}
                _ => panic!("bin occupancy changed under permutation"),
            }
        }
    }

    #[test]
    fn kernel_trace_matches_trace_covariogram() {
        use crate::tracevar::empirical_trace_covariogram;
        let ds = small_dataset(30, 5, 24);
        let (centered, _) = ds.centered();
        let bins = bin_pairs(&pairwise_distances(ds.locs()), 5, 0.7).unwrap();
        let cov = empirical_cov_operator(&centered, &bins);
        let trace = empirical_trace_covariogram(&centered, &bins);
        let j = &ds.basis().gram().j;
        let mut k = 0usize;
        for (b, m) in cov.per_bin.iter().enumerate() {
            let Some(m) = m else { continue };
            let tr = (m * j).trace();
            assert_abs_diff_eq!(tr, trace.values[k], epsilon = 1e-8);
            assert_eq!(cov.counts[b], trace.counts[k]);
            k += 1;
        }
        // and at zero distance
        let tr0 = (cov.at_zero.as_ref().unwrap() * j).trace();
        assert_abs_diff_eq!(tr0, trace.at_zero.unwrap(), epsilon = 1e-8);
    }

    #[test]
    fn kernel_diagonal_integral_matches_trace_value() {
        use crate::quad;
        use crate::tracevar::empirical_trace_covariogram;
        let ds = small_dataset(20, 5, 25);
        let (centered, _) = ds.centered();
        let bins = bin_pairs(&pairwise_distances(ds.locs()), 3, 0.8).unwrap();
        let cov = empirical_cov_operator(&centered, &bins);
        let trace = empirical_trace_covariogram(&centered, &bins);
        let rule = quad::simpson(0.0, 1.0, 2000);
        let mut k = 0usize;
        for (b, m) in cov.per_bin.iter().enumerate() {
            if m.is_none() {
                continue;
            }
            let integral = rule.integrate(|v| {
                cov.kernel_value(ds.basis(), b, v, v).unwrap().unwrap()
            });
            assert_abs_diff_eq!(integral, trace.values[k], epsilon = 1e-8);
            k += 1;
        }
    }

    #[test]
    fn loglik_standard_normal_at_mean() {
        let z = DVector::from_vec(vec![0.7]);
        let sigma = DMatrix::identity(1, 1);
        let ll = gaussian_loglik(&z, 0.7, &sigma).unwrap();
        assert_abs_diff_eq!(ll, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
    }

    #[test]
    fn loglik_iid_case() {
        let mut rng = testutil::rng(26);
        let z = testutil::random_vector(&mut rng, 6);
        let ll = gaussian_loglik(&z, 0.0, &DMatrix::identity(6, 6)).unwrap();
        let expect = -3.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z.norm_squared();
        assert_abs_diff_eq!(ll, expect, epsilon = 1e-12);
    }

    #[test]
    fn loglik_matches_dense_inverse_oracle() {
        let mut rng = testutil::rng(27);
        let z = testutil::random_vector(&mut rng, 4);
        let sigma = testutil::random_spd(&mut rng, 4);
        let ll = gaussian_loglik(&z, 0.3, &sigma).unwrap();

        let centered: Vec<f64> = z.iter().map(|v| v - 0.3).collect();
        let solved = testutil::solve_dense(&sigma, &centered);
        let quad: f64 = centered.iter().zip(&solved).map(|(a, b)| a * b).sum();
        let det = testutil::det_dense(&sigma);
        let expect =
            -2.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;
        assert_abs_diff_eq!(ll, expect, epsilon = 1e-9);
    }

    #[test]
    fn loglik_rejects_indefinite_sigma() {
        let z = DVector::from_vec(vec![0.0, 0.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(gaussian_loglik(&z, 0.0, &sigma).is_err());
    }

    #[test]
    fn rank_one_operator_eigenvalue_is_squared_norm() {
        let basis = Arc::new(BasisSystem::bspline(6, 4).unwrap());
        let mut rng = testutil::rng(28);
        let z = testutil::random_vector(&mut rng, 6);
        let c0 = &z * z.transpose();
        let (values, functions) = eigenpairs(&c0, &basis, 6).unwrap();
        let x = FunctionalCurve::new(basis.clone(), z).unwrap();
        let norm_sq = inner_product(&x, &x).unwrap();
        assert_relative_eq!(values[0], norm_sq, max_relative = 1e-10);
        for v in &values[1..] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10 * norm_sq.max(1.0));
        }
        // eigenfunctions orthonormal in the J-metric
        for a in 0..6 {
            for b in a..6 {
                let ip = inner_product(&functions[a], &functions[b]).unwrap();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ip, expect, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn identity_operator_has_unit_eigenvalues() {
        let basis = Arc::new(BasisSystem::bspline(5, 4).unwrap());
        let j = &basis.gram().j;
        let c0 = j
            .clone()
            .try_inverse()
            .expect("Gram matrix is invertible");
        let (values, _) = eigenpairs(&c0, &basis, 5).unwrap();
        for v in values {
            assert_relative_eq!(v, 1.0, max_relative = 1e-8);
        }
    }

    #[test]
    fn spectral_reconstruction_recovers_operator() {
        let basis = Arc::new(BasisSystem::bspline(6, 4).unwrap());
        let mut rng = testutil::rng(29);
        let c0 = testutil::random_spd(&mut rng, 6);
        let (values, functions) = eigenpairs(&c0, &basis, 6).unwrap();
        let mut recon = DMatrix::zeros(6, 6);
        for (lambda, f) in values.iter().zip(&functions) {
            recon += f.coeffs() * f.coeffs().transpose() * *lambda;
        }
        assert!((recon - c0).amax() < 1e-8);
    }

    #[test]
    fn eigenvalue_sum_matches_mean_squared_norm() {
        let ds = small_dataset(15, 5, 30);
        let (centered, _) = ds.centered();
        let bins = bin_pairs(&pairwise_distances(ds.locs()), 3, 0.9).unwrap();
        let cov = empirical_cov_operator(&centered, &bins);
        let c0 = cov.at_zero.unwrap();
        let (values, _) = eigenpairs(&c0, ds.basis(), 5).unwrap();
        let sum: f64 = values.iter().sum();
        let j = &ds.basis().gram().j;
        let expect = mean_squared_norm(centered.coeffs(), j);
        assert_abs_diff_eq!(sum, expect, epsilon = 1e-8);
    }

    #[test]
    fn drift_perturbation_never_improves_objective() {
        let mut rng = testutil::rng(31);
        let ds = small_dataset(30, 4, 32);
        let spec = DriftSpec::linear();
        let fit = ols_drift(&ds, &spec).unwrap();
        let j = &ds.basis().gram().j;
        let a = spec.design_matrix(ds.locs());
        let objective = |b: &DMatrix<f64>| -> f64 {
            let resid = ds.coeffs() - &a * b;
            (0..30)
                .map(|i| {
                    let r = resid.row(i).transpose();
                    (j * &r).dot(&r)
                })
                .sum()
        };
        let b_hat = fit.coeffs().unwrap();
        let base = objective(b_hat);
        for _ in 0..20 {
            let mut perturbed = b_hat.clone();
            let row = rng.gen_range(0..3usize);
            let dir = testutil::random_vector(&mut rng, 4).normalize() * 1e-3;
            for c in 0..4 {
                perturbed[(row, c)] += dir[c];
            }
            assert!(objective(&perturbed) >= base - 1e-12);
        }
    }

    #[test]
    fn smoothed_hourly_sites_form_dataset() {
        // end-to-end: raw samples -> smoothing -> dataset
        let basis = Arc::new(BasisSystem::bspline(23, 4).unwrap());
        let mut rng = testutil::rng(33);
        let mut curves = Vec::new();
        for _ in 0..4 {
            let samples: Vec<(f64, f64)> = (0..24)
                .map(|j| {
                    let v = j as f64 / 23.0;
                    (v, (6.28 * v).cos() + 0.1 * testutil::std_normal(&mut rng))
                })
                .collect();
            curves.push(smooth_curve(&samples, &basis, 1e-6).unwrap());
        }
        let locs = LocationSet::grid(2, 2, 5.0).unwrap();
        let ds = SpatialFunctionalDataset::from_curves(locs, &curves).unwrap();
        assert_eq!(ds.coeffs().shape(), (4, 23));
    }
}
