//! One-dimensional basis systems on [0, 1]: B-splines and Fourier bases,
//! Gram and roughness matrices, penalized smoothing with GCV selection, and
//! inner products between curves expanded in a shared basis.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, QuadRule};

/// Kind of 1-D basis system.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    /// B-spline basis of the given order (order = degree + 1, 4 = cubic)
    /// with equally spaced interior knots.
    BSpline { order: usize },
    /// Fourier basis: constant plus sine/cosine pairs, unit-normalized so
    /// the basis is orthonormal on [0, 1]. The count must be odd.
    Fourier,
}

/// Pairwise inner products of the basis functions (`j`) and of their second
/// derivatives (`r`), computed by composite Simpson quadrature.
#[derive(Debug, Clone)]
pub struct GramMatrices {
    pub j: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// A basis system on the canonical domain [0, 1].
///
/// Construction precomputes the Gram and roughness matrices at the default
/// quadrature resolution; `gram_matrices` recomputes them at any resolution.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    kind: BasisKind,
    k: usize,
    /// Full clamped knot vector (B-spline only; `[0, 1]` for Fourier).
    knots: Vec<f64>,
    gram: GramMatrices,
}

pub const DEFAULT_QUAD_POINTS: usize = 201;

impl PartialEq for BasisSystem {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.k == other.k && self.knots == other.knots
    }
}

impl BasisSystem {
    /// B-spline system with `k` basis functions of the given order on [0, 1].
    /// `k` must be at least `order`; the system has `k - order` equally
    /// spaced interior knots.
    pub fn bspline(k: usize, order: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidInput("spline order must be >= 1".into()));
        }
        if k < order {
            return Err(Error::InvalidInput(format!(
                "bspline basis needs k >= order, got k = {k}, order = {order}"
            )));
        }
        let interior = k - order;
        let mut knots = Vec::with_capacity(k + order);
        knots.extend(std::iter::repeat_n(0.0, order));
        for i in 1..=interior {
            knots.push(i as f64 / (interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, order));
        Self::finish(BasisKind::BSpline { order }, k, knots)
    }

    /// Fourier system with `k` basis functions (odd `k`): the constant plus
    /// `(k - 1) / 2` sine/cosine pairs, orthonormal on [0, 1].
    pub fn fourier(k: usize) -> Result<Self> {
        if k < 1 || k % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "fourier basis needs odd k >= 1, got {k}"
            )));
        }
        Self::finish(BasisKind::Fourier, k, vec![0.0, 1.0])
    }

    fn finish(kind: BasisKind, k: usize, knots: Vec<f64>) -> Result<Self> {
        let mut system = BasisSystem {
            kind,
            k,
            knots,
            gram: GramMatrices {
                j: DMatrix::zeros(0, 0),
                r: DMatrix::zeros(0, 0),
            },
        };
        system.gram = gram_matrices(&system, DEFAULT_QUAD_POINTS.max(2 * k + 1))?;
        Ok(system)
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn domain(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    /// Gram matrices at the default quadrature resolution.
    pub fn gram(&self) -> &GramMatrices {
        &self.gram
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn check_domain(&self, v: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfDomain {
                value: v,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(())
    }

    /// Values of all basis functions at `v`.
    pub fn eval(&self, v: f64) -> Result<DVector<f64>> {
        self.check_domain(v)?;
        Ok(match &self.kind {
            BasisKind::BSpline { order } => self.bspline_values(*order, v).0,
            BasisKind::Fourier => self.fourier_values(v).0,
        })
    }

    /// Second derivatives of all basis functions at `v`.
    pub fn eval_deriv2(&self, v: f64) -> Result<DVector<f64>> {
        self.check_domain(v)?;
        Ok(match &self.kind {
            BasisKind::BSpline { order } => self.bspline_values(*order, v).1,
            BasisKind::Fourier => self.fourier_values(v).1,
        })
    }

    /// Evaluation matrix: row i holds the basis values at `points[i]`.
    pub fn eval_matrix(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let mut e = DMatrix::zeros(points.len(), self.k);
        for (i, &v) in points.iter().enumerate() {
            e.row_mut(i).copy_from(&self.eval(v)?.transpose());
        }
        Ok(e)
    }

    fn fourier_values(&self, v: f64) -> (DVector<f64>, DVector<f64>) {
        let mut values = DVector::zeros(self.k);
        let mut deriv2 = DVector::zeros(self.k);
        values[0] = 1.0;
        let sqrt2 = std::f64::consts::SQRT_2;
        for j in 1..=(self.k - 1) / 2 {
            let omega = 2.0 * std::f64::consts::PI * j as f64;
            let (sin, cos) = (omega * v).sin_cos();
            values[2 * j - 1] = sqrt2 * sin;
            values[2 * j] = sqrt2 * cos;
            deriv2[2 * j - 1] = -omega * omega * sqrt2 * sin;
            deriv2[2 * j] = -omega * omega * sqrt2 * cos;
        }
        (values, deriv2)
    }

    /// Cox-de Boor evaluation of all order-`p` B-splines and their second
    /// derivatives at `v`.
    fn bspline_values(&self, p: usize, v: f64) -> (DVector<f64>, DVector<f64>) {
        let t = &self.knots;
        let nk = t.len();

        // Order-1 indicators; the last nonempty span is closed on the right.
        let mut orders: Vec<Vec<f64>> = Vec::with_capacity(p);
        let mut n1 = vec![0.0; nk - 1];
        let last_span = (0..nk - 1).rev().find(|&i| t[i] < t[i + 1]);
        let mut placed = false;
        for i in 0..nk - 1 {
            if t[i] <= v && v < t[i + 1] {
                n1[i] = 1.0;
                placed = true;
                break;
            }
        }
        if !placed {
            if let Some(i) = last_span {
                if v >= t[i] {
                    n1[i] = 1.0;
                }
            }
        }
        orders.push(n1);

        for q in 2..=p {
            let prev = &orders[q - 2];
            let mut cur = vec![0.0; nk - q];
            for (i, slot) in cur.iter_mut().enumerate() {
                let d1 = t[i + q - 1] - t[i];
                if d1 > 0.0 {
                    *slot += (v - t[i]) / d1 * prev[i];
                }
                let d2 = t[i + q] - t[i + 1];
                if d2 > 0.0 {
                    *slot += (t[i + q] - v) / d2 * prev[i + 1];
                }
            }
            orders.push(cur);
        }

        let values = DVector::from_vec(orders[p - 1].clone());

        // Second derivative via the B-spline derivative recursion applied twice.
        let mut deriv2 = DVector::zeros(self.k);
        if p >= 3 {
            let low = &orders[p - 3]; // order p-2 values, length k + 2
            let dlow = |j: usize| -> f64 {
                // first derivative of the order-(p-1) spline j
                let mut d = 0.0;
                let den1 = t[j + p - 2] - t[j];
                if den1 > 0.0 {
                    d += low[j] / den1;
                }
                let den2 = t[j + p - 1] - t[j + 1];
                if den2 > 0.0 {
                    d -= low[j + 1] / den2;
                }
                (p - 2) as f64 * d
            };
            for i in 0..self.k {
                let mut d = 0.0;
                let den1 = t[i + p - 1] - t[i];
                if den1 > 0.0 {
                    d += dlow(i) / den1;
                }
                let den2 = t[i + p] - t[i + 1];
                if den2 > 0.0 {
                    d -= dlow(i + 1) / den2;
                }
                deriv2[i] = (p - 1) as f64 * d;
            }
        }
        (values, deriv2)
    }

    /// Quadrature rule for integrals of basis-function products. B-splines
    /// get per-span Gauss-Legendre with enough nodes to be exact for products
    /// of splines and their second derivatives; the smooth Fourier basis gets
    /// composite Simpson at the requested resolution.
    pub(crate) fn quad_rule(&self, total_points: usize) -> QuadRule {
        match self.kind {
            BasisKind::BSpline { order } => {
                let spans = self
                    .knots
                    .windows(2)
                    .filter(|w| w[1] > w[0])
                    .count()
                    .max(1);
                let nodes = order.max(total_points.div_ceil(spans));
                quad::gauss_legendre_on_spans(&self.knots, nodes)
            }
            BasisKind::Fourier => quad::simpson(0.0, 1.0, total_points.saturating_sub(1)),
        }
    }
}

/// Serializable description of a basis system, used in file sidecars.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BasisDescriptor {
    pub kind: String,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
}

impl BasisDescriptor {
    pub fn of(basis: &BasisSystem) -> Self {
        match basis.kind {
            BasisKind::BSpline { order } => BasisDescriptor {
                kind: "bspline".into(),
                k: basis.k,
                order: Some(order),
            },
            BasisKind::Fourier => BasisDescriptor {
                kind: "fourier".into(),
                k: basis.k,
                order: None,
            },
        }
    }

    pub fn build(&self) -> Result<BasisSystem> {
        match self.kind.as_str() {
            "bspline" => BasisSystem::bspline(self.k, self.order.unwrap_or(4)),
            "fourier" => BasisSystem::fourier(self.k),
            other => Err(Error::InvalidInput(format!("unknown basis kind `{other}`"))),
        }
    }
}

/// Gram matrix `J` of pairwise basis inner products and roughness matrix `R`
/// of second-derivative inner products, by composite Simpson quadrature with
/// at least `quadrature_points` abscissae.
pub fn gram_matrices(basis: &BasisSystem, quadrature_points: usize) -> Result<GramMatrices> {
    let k = basis.len();
    if quadrature_points < 2 * k {
        return Err(Error::InvalidInput(format!(
            "need at least {} quadrature points for k = {k}",
            2 * k
        )));
    }
    let rule = basis.quad_rule(quadrature_points);
    let mut j = DMatrix::zeros(k, k);
    let mut r = DMatrix::zeros(k, k);
    for (&v, &w) in rule.points.iter().zip(&rule.weights) {
        let e = basis.eval(v)?;
        let d = basis.eval_deriv2(v)?;
        j.syger(w, &e, &e, 1.0);
        r.syger(w, &d, &d, 1.0);
    }
    j.fill_upper_triangle_with_lower_triangle();
    r.fill_upper_triangle_with_lower_triangle();
    Ok(GramMatrices { j, r })
}

/// A curve expressed by its coefficient vector in a shared basis.
#[derive(Debug, Clone)]
pub struct FunctionalCurve {
    basis: Arc<BasisSystem>,
    coeffs: DVector<f64>,
}

impl FunctionalCurve {
    pub fn new(basis: Arc<BasisSystem>, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::InvalidInput(format!(
                "coefficient length {} does not match basis size {}",
                coeffs.len(),
                basis.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite curve coefficient".into()));
        }
        Ok(FunctionalCurve { basis, coeffs })
    }

    pub fn zero(basis: Arc<BasisSystem>) -> Self {
        let coeffs = DVector::zeros(basis.len());
        FunctionalCurve { basis, coeffs }
    }

    pub fn basis(&self) -> &Arc<BasisSystem> {
        &self.basis
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    /// Evaluate the curve at `v`.
    pub fn eval(&self, v: f64) -> Result<f64> {
        Ok(self.basis.eval(v)?.dot(&self.coeffs))
    }

    pub fn minus(&self, other: &FunctionalCurve) -> Result<FunctionalCurve> {
        check_shared_basis(self, other)?;
        FunctionalCurve::new(self.basis.clone(), &self.coeffs - &other.coeffs)
    }

    /// Norm induced by the basis inner product.
    pub fn norm(&self) -> f64 {
        inner_product(self, self).expect("same basis").max(0.0).sqrt()
    }
}

fn check_shared_basis(a: &FunctionalCurve, b: &FunctionalCurve) -> Result<()> {
    if !Arc::ptr_eq(&a.basis, &b.basis) && a.basis.as_ref() != b.basis.as_ref() {
        return Err(Error::BasisMismatch(
            "curves do not share a basis system".into(),
        ));
    }
    Ok(())
}

/// Inner product of two curves in the same basis: `z_a' J z_b`.
pub fn inner_product(a: &FunctionalCurve, b: &FunctionalCurve) -> Result<f64> {
    check_shared_basis(a, b)?;
    Ok((a.basis.gram().j.clone() * &b.coeffs).dot(&a.coeffs))
}

/// Penalized least-squares fit of scattered samples `(v, y)`:
/// coefficients solve `(E'E + lambda R) z = E'y`.
pub fn smooth_curve(
    samples: &[(f64, f64)],
    basis: &Arc<BasisSystem>,
    lambda: f64,
) -> Result<FunctionalCurve> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to smooth".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "smoothing parameter must be nonnegative, got {lambda}"
        )));
    }
    let points: Vec<f64> = samples.iter().map(|&(v, _)| v).collect();
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|&(_, y)| y));
    let e = basis.eval_matrix(&points)?;
    let normal = normal_matrix(&e, &basis.gram().r, lambda);
    let chol = Cholesky::new(normal).ok_or_else(|| {
        Error::RankDeficient(format!(
            "normal matrix singular (lambda = {lambda}, {} samples, k = {})",
            samples.len(),
            basis.len()
        ))
    })?;
    let coeffs = chol.solve(&(e.transpose() * y));
    FunctionalCurve::new(basis.clone(), coeffs)
}

fn normal_matrix(e: &DMatrix<f64>, r: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut m = e.transpose() * e;
    if lambda > 0.0 {
        m += r * lambda;
    }
    m
}

/// The GCV functional `n SSE / (n - tr H)^2` for one smoothing parameter,
/// or `None` when the normal matrix is singular.
fn gcv_value(e: &DMatrix<f64>, r: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Option<f64> {
    let n = y.len() as f64;
    let chol = Cholesky::new(normal_matrix(e, r, lambda))?;
    let solved = chol.solve(&e.transpose()); // k x n
    let trace_h: f64 = e
        .row_iter()
        .enumerate()
        .map(|(i, row)| row.transpose().dot(&solved.column(i)))
        .sum();
    let coeffs = &solved * y;
    let sse = (y - e * coeffs).norm_squared();
    let denom = n - trace_h;
    let gcv = n * sse / (denom * denom);
    gcv.is_finite().then_some(gcv)
}

/// GCV over a grid for any evaluation matrix and penalty; shared by curve
/// and surface smoothing. Ties break toward the larger value.
pub(crate) fn gcv_grid_select(
    e: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda_grid: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidInput("empty smoothing grid".into()));
    }
    if lambda_grid.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidInput(
            "smoothing grid values must be nonnegative".into(),
        ));
    }
    // Residuals of pure floating-point dust count as exact fits, so that
    // data reproduced at every grid value ties and resolves to the larger
    // smoothing parameter.
    let floor = 1e-18 * y.norm_squared();
    let values: Vec<f64> = lambda_grid
        .iter()
        .map(|&l| match gcv_value(e, penalty, y, l) {
            Some(v) if v < floor => 0.0,
            Some(v) => v,
            None => f64::INFINITY,
        })
        .collect();
    select_min_prefer_larger(lambda_grid, &values)
        .map(|best| (best, values))
        .ok_or_else(|| Error::Numerical("GCV is nonfinite on the whole grid".into()))
}

/// Select the smoothing parameter minimizing GCV over a grid.
/// Ties break toward the larger value.
pub fn gcv_select(
    samples: &[(f64, f64)],
    basis: &Arc<BasisSystem>,
    lambda_grid: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let points: Vec<f64> = samples.iter().map(|&(v, _)| v).collect();
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|&(_, y)| y));
    let e = basis.eval_matrix(&points)?;
    gcv_grid_select(&e, &basis.gram().r, &y, lambda_grid)
}

pub(crate) fn select_min_prefer_larger(grid: &[f64], values: &[f64]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&lambda, &value) in grid.iter().zip(values) {
        if !value.is_finite() {
            continue;
        }
        best = Some(match best {
            None => (lambda, value),
            Some((bl, bv)) => {
                if value < bv || (value == bv && lambda > bl) {
                    (lambda, value)
                } else {
                    (bl, bv)
                }
            }
        });
    }
    best.map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn arc_bspline(k: usize, order: usize) -> Arc<BasisSystem> {
        Arc::new(BasisSystem::bspline(k, order).unwrap())
    }

    #[test]
    fn cubic_bspline_23_has_19_interior_knots() {
        let b = BasisSystem::bspline(23, 4).unwrap();
        let interior = b
            .knots()
            .iter()
            .filter(|&&t| t > 0.0 && t < 1.0)
            .count();
        assert_eq!(interior, 19);
        assert_eq!(b.len(), 23);
    }

    #[test]
    fn degenerate_fourier_is_constant() {
        let b = BasisSystem::fourier(1).unwrap();
        assert_eq!(b.len(), 1);
        for v in [0.0, 0.3, 1.0] {
            assert_abs_diff_eq!(b.eval(v).unwrap()[0], 1.0);
        }
    }

    #[test]
    fn bspline_k_below_order_rejected() {
        assert!(BasisSystem::bspline(3, 4).is_err());
    }

    #[test]
    fn even_fourier_rejected() {
        assert!(BasisSystem::fourier(4).is_err());
    }

    #[test]
    fn fourier_gram_is_identity() {
        let b = BasisSystem::fourier(3).unwrap();
        let g = gram_matrices(&b, 201).unwrap();
        assert_relative_eq!(g.j, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn fourier_roughness_diagonal_with_zero_constant_entry() {
        let b = BasisSystem::fourier(3).unwrap();
        let g = gram_matrices(&b, 401).unwrap();
        assert_abs_diff_eq!(g.r[(0, 0)], 0.0, epsilon = 1e-10);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_abs_diff_eq!(g.r[(i, j)], 0.0, epsilon = 1e-6);
                }
            }
        }
        // sine/cosine roughness: (2 pi)^4 / ... with unit normalization = (2 pi)^4
        let expect = (2.0 * std::f64::consts::PI).powi(4);
        assert_relative_eq!(g.r[(1, 1)], expect, max_relative = 1e-6);
    }

    #[test]
    fn bspline_gram_matches_fine_uniform_simpson() {
        // Oracle: plain uniform-grid Simpson at 10x the default resolution,
        // independent of the knot-aligned quadrature in the implementation.
        let b = BasisSystem::bspline(6, 4).unwrap();
        let g = gram_matrices(&b, 201).unwrap();
        let rule = quad::simpson(0.0, 1.0, 2000);
        let mut oracle = DMatrix::zeros(6, 6);
        for (&v, &w) in rule.points.iter().zip(&rule.weights) {
            let e = b.eval(v).unwrap();
            oracle += w * &e * e.transpose();
        }
        for i in 0..6 {
            for j in 0..6 {
                assert_abs_diff_eq!(g.j[(i, j)], oracle[(i, j)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn partition_of_unity_on_grid() {
        for (k, order) in [(23, 4), (6, 4), (5, 3), (8, 2)] {
            let b = BasisSystem::bspline(k, order).unwrap();
            for i in 0..=100 {
                let v = i as f64 / 100.0;
                let total: f64 = b.eval(v).unwrap().sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn eval_outside_domain_errors() {
        let b = BasisSystem::bspline(6, 4).unwrap();
        assert!(b.eval(1.0 + 1e-9).is_err());
        assert!(b.eval(-0.1).is_err());
    }

    #[test]
    fn smooth_hourly_samples_with_gcv() {
        let basis = arc_bspline(23, 4);
        let mut rng = testutil::rng(7);
        let samples: Vec<(f64, f64)> = (0..24)
            .map(|j| {
                let v = j as f64 / 23.0;
                (
                    v,
                    (2.0 * std::f64::consts::PI * v).sin() + 0.05 * testutil::std_normal(&mut rng),
                )
            })
            .collect();
        let grid = [0.0, 1e-6, 1e-4, 1e-2, 1.0];
        let (lambda, _) = gcv_select(&samples, &basis, &grid).unwrap();
        let curve = smooth_curve(&samples, &basis, lambda).unwrap();
        assert_eq!(curve.coeffs().len(), 23);
    }

    #[test]
    fn constant_data_reproduced_for_any_lambda() {
        let basis = arc_bspline(10, 4);
        let samples: Vec<(f64, f64)> = (0..30).map(|j| (j as f64 / 29.0, 3.25)).collect();
        for lambda in [0.0, 1e-3, 1.0, 1e4] {
            let curve = smooth_curve(&samples, &basis, lambda).unwrap();
            for i in 0..=20 {
                let v = i as f64 / 20.0;
                assert_abs_diff_eq!(curve.eval(v).unwrap(), 3.25, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn unpenalized_full_rank_fit_interpolates() {
        let basis = arc_bspline(10, 4);
        let mut rng = testutil::rng(11);
        let samples: Vec<(f64, f64)> = (0..10)
            .map(|j| ((j as f64 + 0.5) / 10.0, testutil::std_normal(&mut rng)))
            .collect();
        let curve = smooth_curve(&samples, &basis, 0.0).unwrap();
        for &(v, y) in &samples {
            assert_abs_diff_eq!(curve.eval(v).unwrap(), y, epsilon = 1e-8);
        }
        // dense-solver oracle for the square system E z = y
        let e = basis.eval_matrix(&samples.iter().map(|s| s.0).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = samples.iter().map(|s| s.1).collect();
        let oracle = testutil::solve_dense(&e, &y);
        for i in 0..10 {
            assert_abs_diff_eq!(curve.coeffs()[i], oracle[i], epsilon = 1e-7);
        }
    }

    #[test]
    fn deficient_unpenalized_design_is_rank_error() {
        let basis = arc_bspline(10, 4);
        let samples = vec![(0.1, 1.0), (0.5, 2.0), (0.9, 0.5)];
        assert!(matches!(
            smooth_curve(&samples, &basis, 0.0),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn gcv_prefers_zero_for_data_in_span() {
        let basis = arc_bspline(8, 4);
        let mut rng = testutil::rng(3);
        let z = testutil::random_vector(&mut rng, 8);
        let truth = FunctionalCurve::new(basis.clone(), z).unwrap();
        let samples: Vec<(f64, f64)> = (0..30)
            .map(|j| {
                let v = j as f64 / 29.0;
                (v, truth.eval(v).unwrap())
            })
            .collect();
        let (lambda, values) = gcv_select(&samples, &basis, &[0.0, 1e6]).unwrap();
        assert_eq!(lambda, 0.0);
        assert!(values[0] < values[1]);
    }

    #[test]
    fn gcv_tie_breaks_toward_larger_lambda() {
        let basis = arc_bspline(8, 4);
        let samples: Vec<(f64, f64)> = (0..30).map(|j| (j as f64 / 29.0, 1.0)).collect();
        let grid = [0.0, 1e-2, 1.0, 100.0];
        let (lambda, values) = gcv_select(&samples, &basis, &grid).unwrap();
        assert_eq!(lambda, 100.0);
        for &v in &values {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gcv_singleton_grid() {
        let basis = arc_bspline(8, 4);
        let samples: Vec<(f64, f64)> = (0..30).map(|j| (j as f64 / 29.0, j as f64)).collect();
        let (lambda, _) = gcv_select(&samples, &basis, &[0.37]).unwrap();
        assert_eq!(lambda, 0.37);
    }

    #[test]
    fn inner_product_basics() {
        let basis = Arc::new(BasisSystem::fourier(3).unwrap());
        let zero = FunctionalCurve::zero(basis.clone());
        assert_abs_diff_eq!(inner_product(&zero, &zero).unwrap(), 0.0);

        let e1 = FunctionalCurve::new(basis.clone(), DVector::from_vec(vec![1.0, 0.0, 0.0]))
            .unwrap();
        let e2 = FunctionalCurve::new(basis.clone(), DVector::from_vec(vec![0.0, 1.0, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(inner_product(&e1, &e2).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn inner_product_matches_quadrature() {
        let basis = arc_bspline(8, 4);
        let mut rng = testutil::rng(5);
        for _ in 0..20 {
            let a = FunctionalCurve::new(basis.clone(), testutil::random_vector(&mut rng, 8))
                .unwrap();
            let b = FunctionalCurve::new(basis.clone(), testutil::random_vector(&mut rng, 8))
                .unwrap();
            let rule = quad::simpson(0.0, 1.0, 2000);
            let oracle = rule.integrate(|v| a.eval(v).unwrap() * b.eval(v).unwrap());
            assert_relative_eq!(inner_product(&a, &b).unwrap(), oracle, epsilon = 1e-7);
        }
    }

    #[test]
    fn inner_product_rejects_mismatched_bases() {
        let a = FunctionalCurve::zero(arc_bspline(8, 4));
        let b = FunctionalCurve::zero(arc_bspline(9, 4));
        assert!(matches!(
            inner_product(&a, &b),
            Err(Error::BasisMismatch(_))
        ));
    }

    #[test]
    fn eval_curve_basics() {
        let basis = arc_bspline(9, 4);
        let zero = FunctionalCurve::zero(basis.clone());
        assert_abs_diff_eq!(zero.eval(0.4).unwrap(), 0.0);

        let constant = FunctionalCurve::new(
            Arc::new(BasisSystem::fourier(1).unwrap()),
            DVector::from_vec(vec![2.5]),
        )
        .unwrap();
        assert_abs_diff_eq!(constant.eval(0.7).unwrap(), 2.5);

        let ones = FunctionalCurve::new(basis, DVector::repeat(9, 1.0)).unwrap();
        for i in 1..10 {
            let v = i as f64 / 10.0;
            assert_abs_diff_eq!(ones.eval(v).unwrap(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn smoothing_is_linear_in_data() {
        let basis = arc_bspline(9, 4);
        let mut rng = testutil::rng(13);
        let points: Vec<f64> = (0..25).map(|j| j as f64 / 24.0).collect();
        let y1: Vec<f64> = (0..25).map(|_| testutil::std_normal(&mut rng)).collect();
        let y2: Vec<f64> = (0..25).map(|_| testutil::std_normal(&mut rng)).collect();
        let zip = |ys: &[f64]| -> Vec<(f64, f64)> {
            points.iter().copied().zip(ys.iter().copied()).collect()
        };
        let sum: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a + b).collect();
        let f1 = smooth_curve(&zip(&y1), &basis, 0.03).unwrap();
        let f2 = smooth_curve(&zip(&y2), &basis, 0.03).unwrap();
        let fs = smooth_curve(&zip(&sum), &basis, 0.03).unwrap();
        for i in 0..9 {
            assert_abs_diff_eq!(
                fs.coeffs()[i],
                f1.coeffs()[i] + f2.coeffs()[i],
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn penalty_shrinks_monotonically() {
        let basis = arc_bspline(12, 4);
        let mut rng = testutil::rng(17);
        let samples: Vec<(f64, f64)> = (0..40)
            .map(|j| (j as f64 / 39.0, testutil::std_normal(&mut rng)))
            .collect();
        let r = &basis.gram().r;
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1e-6, 1e-4, 1e-2, 1.0, 100.0] {
            let z = smooth_curve(&samples, &basis, lambda).unwrap();
            let penalty = (r * z.coeffs()).dot(z.coeffs());
            assert!(penalty <= last + 1e-10, "penalty grew at lambda={lambda}");
            last = penalty;
        }
    }

    #[test]
    fn inner_product_is_positive_definite_form() {
        let basis = arc_bspline(7, 4);
        let mut rng = testutil::rng(23);
        for _ in 0..10 {
            let a = FunctionalCurve::new(basis.clone(), testutil::random_vector(&mut rng, 7))
                .unwrap();
            let b = FunctionalCurve::new(basis.clone(), testutil::random_vector(&mut rng, 7))
                .unwrap();
            let ab = inner_product(&a, &b).unwrap();
            let ba = inner_product(&b, &a).unwrap();
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-12);
            assert!(inner_product(&a, &a).unwrap() > 0.0);
        }
        let zero = FunctionalCurve::zero(basis);
        assert_abs_diff_eq!(inner_product(&zero, &zero).unwrap(), 0.0);
    }
}
