//! Penalized smoothing of scattered observations into continuous surfaces on
//! the unit square: tensor-product cubic B-splines with second-derivative
//! penalties, and P1 finite elements on a structured triangulation with a
//! discrete-Laplacian penalty.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{self, BasisSystem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceBasisKind {
    TensorSpline {
        b1: BasisSystem,
        b2: BasisSystem,
        weight1: f64,
        weight2: f64,
    },
    FemP1 {
        nx: usize,
        ny: usize,
        nodes: Vec<[f64; 2]>,
        /// Counterclockwise vertex index triples.
        triangles: Vec<[usize; 3]>,
    },
}

/// A 2-D basis on the unit square with its mass (Gram) matrix and penalty
/// matrix. Constants lie in the penalty null space for both kinds.
#[derive(Debug, Clone)]
pub struct SurfaceBasis {
    kind: SurfaceBasisKind,
    gram: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

impl PartialEq for SurfaceBasis {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl SurfaceBasis {
    /// Tensor product of cubic B-splines with `k1 * k2` basis functions and
    /// the isotropic additive second-derivative penalty.
    pub fn tensor(k1: usize, k2: usize) -> Result<Self> {
        Self::tensor_weighted(k1, k2, 1.0, 1.0)
    }

    /// Tensor-product basis with coordinate-wise penalty weights
    /// (anisotropic smoothing).
    pub fn tensor_weighted(k1: usize, k2: usize, weight1: f64, weight2: f64) -> Result<Self> {
        if k1 < 4 || k2 < 4 {
            return Err(Error::InvalidInput(
                "tensor basis needs at least 4 cubic B-splines per coordinate".into(),
            ));
        }
        if !(weight1 >= 0.0) || !(weight2 >= 0.0) {
            return Err(Error::InvalidInput("penalty weights must be nonnegative".into()));
        }
        let b1 = BasisSystem::bspline(k1, 4)?;
        let b2 = BasisSystem::bspline(k2, 4)?;
        let g1 = b1.gram();
        let g2 = b2.gram();
        let gram = g1.j.kronecker(&g2.j);
        let penalty = g1.r.kronecker(&g2.j) * weight1 + g1.j.kronecker(&g2.r) * weight2;
        Ok(SurfaceBasis {
            kind: SurfaceBasisKind::TensorSpline {
                b1,
                b2,
                weight1,
                weight2,
            },
            gram,
            penalty,
        })
    }

    /// P1 finite elements on a structured triangulation of the unit square
    /// with `nx * ny` nodes. The penalty is the discrete Laplacian squared
    /// `A' M_lumped^-1 A`; the Gram matrix is the consistent mass matrix.
    pub fn fem(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidInput(
                "FEM mesh needs at least 2 nodes per coordinate".into(),
            ));
        }
        let mut nodes = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                nodes.push([i as f64 / (nx - 1) as f64, j as f64 / (ny - 1) as f64]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let n00 = j * nx + i;
                let n10 = n00 + 1;
                let n01 = n00 + nx;
                let n11 = n01 + 1;
                triangles.push([n00, n10, n11]);
                triangles.push([n00, n11, n01]);
            }
        }

        let m = nodes.len();
        let mut stiffness = DMatrix::<f64>::zeros(m, m);
        let mut mass = DMatrix::<f64>::zeros(m, m);
        for tri in &triangles {
            let v = [nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]];
            let elem_a = p1_element_stiffness(v[0], v[1], v[2]);
            let elem_m = p1_element_mass(v[0], v[1], v[2]);
            for a in 0..3 {
                for b in 0..3 {
                    stiffness[(tri[a], tri[b])] += elem_a[a][b];
                    mass[(tri[a], tri[b])] += elem_m[a][b];
                }
            }
        }
        let lumped: Vec<f64> = (0..m).map(|i| mass.row(i).sum()).collect();
        let mut scaled = stiffness.clone();
        for (i, &l) in lumped.iter().enumerate() {
            scaled.row_mut(i).scale_mut(1.0 / l);
        }
        let mut penalty: DMatrix<f64> = stiffness.transpose() * scaled;
        penalty = (&penalty + penalty.transpose()) * 0.5;
        Ok(SurfaceBasis {
            kind: SurfaceBasisKind::FemP1 {
                nx,
                ny,
                nodes,
                triangles,
            },
            gram: mass,
            penalty,
        })
    }

    pub fn kind(&self) -> &SurfaceBasisKind {
        &self.kind
    }

    /// Number of basis functions (tensor) or nodes (FEM).
    pub fn len(&self) -> usize {
        self.gram.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    fn check_domain(s: [f64; 2]) -> Result<()> {
        for c in s {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::OutOfDomain {
                    value: c,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        Ok(())
    }

    /// Values of all basis functions at a point of the unit square.
    pub fn eval(&self, s: [f64; 2]) -> Result<DVector<f64>> {
        Self::check_domain(s)?;
        match &self.kind {
            SurfaceBasisKind::TensorSpline { b1, b2, .. } => {
                let e1 = b1.eval(s[0])?;
                let e2 = b2.eval(s[1])?;
                let k2 = b2.len();
                let mut values = DVector::zeros(e1.len() * k2);
                for i in 0..e1.len() {
                    for k in 0..k2 {
                        values[i * k2 + k] = e1[i] * e2[k];
                    }
                }
                Ok(values)
            }
            SurfaceBasisKind::FemP1 { nx, ny, .. } => {
                let mut values = DVector::zeros(self.len());
                let (indices, coords) = self.locate(s, *nx, *ny);
                for (idx, lambda) in indices.iter().zip(coords) {
                    values[*idx] = lambda;
                }
                Ok(values)
            }
        }
    }

    /// Containing triangle of a point in the structured mesh and its
    /// barycentric coordinates there.
    fn locate(&self, s: [f64; 2], nx: usize, ny: usize) -> ([usize; 3], [f64; 3]) {
        let cx = ((s[0] * (nx - 1) as f64).floor() as usize).min(nx - 2);
        let cy = ((s[1] * (ny - 1) as f64).floor() as usize).min(ny - 2);
        let x = s[0] * (nx - 1) as f64 - cx as f64;
        let y = s[1] * (ny - 1) as f64 - cy as f64;
        let n00 = cy * nx + cx;
        let n10 = n00 + 1;
        let n01 = n00 + nx;
        let n11 = n01 + 1;
        if y <= x {
            ([n00, n10, n11], [1.0 - x, x - y, y])
        } else {
            ([n00, n11, n01], [1.0 - y, x, y - x])
        }
    }

    /// Evaluation matrix at a set of points.
    pub fn eval_matrix(&self, points: &[[f64; 2]]) -> Result<DMatrix<f64>> {
        let mut phi = DMatrix::zeros(points.len(), self.len());
        for (i, &s) in points.iter().enumerate() {
            phi.row_mut(i).copy_from(&self.eval(s)?.transpose());
        }
        Ok(phi)
    }
}

/// Element stiffness matrix of a P1 triangle: `area * grad_i . grad_j`.
pub(crate) fn p1_element_stiffness(v0: [f64; 2], v1: [f64; 2], v2: [f64; 2]) -> [[f64; 3]; 3] {
    let b = [v1[1] - v2[1], v2[1] - v0[1], v0[1] - v1[1]];
    let c = [v2[0] - v1[0], v0[0] - v2[0], v1[0] - v0[0]];
    let double_area = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1]);
    assert!(double_area > 0.0, "triangle must be counterclockwise");
    let factor = 1.0 / (2.0 * double_area);
    std::array::from_fn(|i| std::array::from_fn(|j| factor * (b[i] * b[j] + c[i] * c[j])))
}

/// Consistent element mass matrix of a P1 triangle: `area / 12 * (1 + delta_ij)`.
pub(crate) fn p1_element_mass(v0: [f64; 2], v1: [f64; 2], v2: [f64; 2]) -> [[f64; 3]; 3] {
    let double_area = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1]);
    let area = 0.5 * double_area;
    std::array::from_fn(|i| {
        std::array::from_fn(|j| area / 12.0 * if i == j { 2.0 } else { 1.0 })
    })
}

/// Serializable description of a surface basis for file sidecars.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SurfaceBasisDescriptor {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k2: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
}

impl SurfaceBasisDescriptor {
    pub fn of(basis: &SurfaceBasis) -> Self {
        match &basis.kind {
            SurfaceBasisKind::TensorSpline { b1, b2, .. } => SurfaceBasisDescriptor {
                kind: "tensor_spline".into(),
                k1: Some(b1.len()),
                k2: Some(b2.len()),
                nx: None,
                ny: None,
            },
            SurfaceBasisKind::FemP1 { nx, ny, .. } => SurfaceBasisDescriptor {
                kind: "fem_p1".into(),
                k1: None,
                k2: None,
                nx: Some(*nx),
                ny: Some(*ny),
            },
        }
    }

    pub fn build(&self) -> Result<SurfaceBasis> {
        match self.kind.as_str() {
            "tensor_spline" => {
                let (Some(k1), Some(k2)) = (self.k1, self.k2) else {
                    return Err(Error::InvalidInput("tensor_spline needs k1 and k2".into()));
                };
                SurfaceBasis::tensor(k1, k2)
            }
            "fem_p1" => {
                let (Some(nx), Some(ny)) = (self.nx, self.ny) else {
                    return Err(Error::InvalidInput("fem_p1 needs nx and ny".into()));
                };
                SurfaceBasis::fem(nx, ny)
            }
            other => Err(Error::InvalidInput(format!(
                "unknown surface basis kind `{other}`"
            ))),
        }
    }
}

/// A surface expressed by its coefficient vector in a shared 2-D basis.
#[derive(Debug, Clone)]
pub struct Surface {
    basis: Arc<SurfaceBasis>,
    coeffs: DVector<f64>,
}

impl Surface {
    pub fn new(basis: Arc<SurfaceBasis>, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::InvalidInput(format!(
                "coefficient length {} does not match basis size {}",
                coeffs.len(),
                basis.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite surface coefficient".into()));
        }
        Ok(Surface { basis, coeffs })
    }

    pub fn zero(basis: Arc<SurfaceBasis>) -> Self {
        let coeffs = DVector::zeros(basis.len());
        Surface { basis, coeffs }
    }

    pub fn basis(&self) -> &Arc<SurfaceBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn eval(&self, s: [f64; 2]) -> Result<f64> {
        Ok(self.basis.eval(s)?.dot(&self.coeffs))
    }

    pub fn norm(&self) -> f64 {
        surface_inner_product(self, self)
            .expect("same basis")
            .max(0.0)
            .sqrt()
    }
}

fn check_shared_surface_basis(a: &Surface, b: &Surface) -> Result<()> {
    if !Arc::ptr_eq(&a.basis, &b.basis) && a.basis.as_ref() != b.basis.as_ref() {
        return Err(Error::BasisMismatch(
            "surfaces do not share a basis".into(),
        ));
    }
    Ok(())
}

/// Inner product of two surfaces over the unit square: `beta_a' M beta_b`
/// with `M` the mass matrix.
pub fn surface_inner_product(a: &Surface, b: &Surface) -> Result<f64> {
    check_shared_surface_basis(a, b)?;
    Ok((a.basis.gram() * &b.coeffs).dot(&a.coeffs))
}

/// Penalized least-squares surface fit: coefficients solve
/// `(Phi'Phi + lambda P) beta = Phi'y`.
pub fn smooth_surface(
    points: &[([f64; 2], f64)],
    basis: &Arc<SurfaceBasis>,
    lambda: f64,
) -> Result<Surface> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no points to smooth".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "smoothing parameter must be nonnegative, got {lambda}"
        )));
    }
    let locations: Vec<[f64; 2]> = points.iter().map(|&(s, _)| s).collect();
    let y = DVector::from_iterator(points.len(), points.iter().map(|&(_, y)| y));
    let phi = basis.eval_matrix(&locations)?;
    let mut normal = phi.transpose() * &phi;
    if lambda > 0.0 {
        normal += basis.penalty() * lambda;
    }
    let chol = Cholesky::new(normal).ok_or_else(|| {
        Error::RankDeficient(format!(
            "surface normal matrix singular (lambda = {lambda}, {} points, {} basis functions)",
            points.len(),
            basis.len()
        ))
    })?;
    let coeffs = chol.solve(&(phi.transpose() * y));
    Surface::new(basis.clone(), coeffs)
}

/// GCV selection of the surface smoothing parameter over a grid; same
/// functional as curve smoothing with the surface penalty.
pub fn gcv_surface(
    points: &[([f64; 2], f64)],
    basis: &Arc<SurfaceBasis>,
    lambda_grid: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let locations: Vec<[f64; 2]> = points.iter().map(|&(s, _)| s).collect();
    let y = DVector::from_iterator(points.len(), points.iter().map(|&(_, y)| y));
    let phi = basis.eval_matrix(&locations)?;
    basis::gcv_grid_select(&phi, basis.penalty(), &y, lambda_grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn tensor_basis_count() {
        let basis = SurfaceBasis::tensor(4, 4).unwrap();
        assert_eq!(basis.len(), 16);
        assert!(SurfaceBasis::tensor(3, 4).is_err());
    }

    #[test]
    fn tensor_constant_coefficients_give_constant_surface() {
        let basis = Arc::new(SurfaceBasis::tensor(5, 6).unwrap());
        let surface = Surface::new(basis, DVector::repeat(30, 2.5)).unwrap();
        for i in 0..=10 {
            for j in 0..=10 {
                let s = [i as f64 / 10.0, j as f64 / 10.0];
                assert_abs_diff_eq!(surface.eval(s).unwrap(), 2.5, epsilon = 1e-10);
            }
        }
    }

    /// Coefficients of a separable product `f(s1) g(s2)` from interpolating
    /// 1-D fits.
    fn separable_coeffs(
        basis: &SurfaceBasis,
        f: impl Fn(f64) -> f64,
        g: impl Fn(f64) -> f64,
    ) -> DVector<f64> {
        let SurfaceBasisKind::TensorSpline { b1, b2, .. } = basis.kind() else {
            panic!("tensor basis expected");
        };
        let fit = |b: &BasisSystem, func: &dyn Fn(f64) -> f64| -> DVector<f64> {
            let samples: Vec<(f64, f64)> = (0..2 * b.len())
                .map(|i| {
                    let v = i as f64 / (2 * b.len() - 1) as f64;
                    (v, func(v))
                })
                .collect();
            let arc = Arc::new(b.clone());
            crate::basis::smooth_curve(&samples, &arc, 0.0)
                .unwrap()
                .coeffs()
                .clone_owned()
        };
        let c1 = fit(b1, &f);
        let c2 = fit(b2, &g);
        let mut beta = DVector::zeros(basis.len());
        for i in 0..c1.len() {
            for k in 0..c2.len() {
                beta[i * c2.len() + k] = c1[i] * c2[k];
            }
        }
        beta
    }

    #[test]
    fn bilinear_surface_has_zero_penalty() {
        let basis = SurfaceBasis::tensor(6, 5).unwrap();
        // 1 + 2 s1 - s2 + 0.5 s1 s2 assembled from separable pieces
        let mut beta = separable_coeffs(&basis, |_| 1.0, |_| 1.0);
        beta += separable_coeffs(&basis, |v| 2.0 * v, |_| 1.0);
        beta += separable_coeffs(&basis, |_| 1.0, |v| -v);
        beta += separable_coeffs(&basis, |v| 0.5 * v, |v| v);
        let value = (basis.penalty() * &beta).dot(&beta);
        assert_abs_diff_eq!(value, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn fem_mesh_counts() {
        let basis = SurfaceBasis::fem(2, 2).unwrap();
        assert_eq!(basis.len(), 4);
        let SurfaceBasisKind::FemP1 { triangles, .. } = basis.kind() else {
            panic!()
        };
        assert_eq!(triangles.len(), 2);
        let big = SurfaceBasis::fem(5, 7).unwrap();
        let SurfaceBasisKind::FemP1 { triangles, .. } = big.kind() else {
            panic!()
        };
        assert_eq!(big.len(), 35);
        assert_eq!(triangles.len(), 2 * 4 * 6);
    }

    #[test]
    fn reference_triangle_element_matrices() {
        // right triangle (0,0), (1,0), (0,1): gradients (-1,-1), (1,0), (0,1)
        let elem = p1_element_stiffness([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(elem[i][j], expect[i][j], epsilon = 1e-14);
            }
        }
        let mass = p1_element_mass([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 / 12.0 } else { 1.0 / 24.0 };
                assert_abs_diff_eq!(mass[i][j], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn fem_penalty_annihilates_constants() {
        let basis = SurfaceBasis::fem(5, 4).unwrap();
        let ones = DVector::repeat(basis.len(), 1.0);
        assert!((basis.penalty() * &ones).amax() < 1e-10);
        // penalty symmetric positive semidefinite
        let sym = (basis.penalty() - basis.penalty().transpose()).amax();
        assert!(sym < 1e-12);
        let eig = nalgebra::SymmetricEigen::new(basis.penalty().clone());
        assert!(eig.eigenvalues.min() > -1e-10);
    }

    #[test]
    fn mass_matrix_is_positive_definite() {
        for basis in [
            SurfaceBasis::fem(4, 5).unwrap(),
            SurfaceBasis::tensor(5, 4).unwrap(),
        ] {
            assert!(Cholesky::new(basis.gram().clone()).is_some());
        }
    }

    #[test]
    fn constant_data_reproduced_at_every_lambda() {
        let mut rng = testutil::rng(61);
        let points: Vec<([f64; 2], f64)> = (0..60)
            .map(|_| {
                let s = [
                    rand::Rng::gen_range(&mut rng, 0.0..1.0),
                    rand::Rng::gen_range(&mut rng, 0.0..1.0),
                ];
                (s, -1.75)
            })
            .collect();
        for basis in [
            Arc::new(SurfaceBasis::tensor(5, 5).unwrap()),
            Arc::new(SurfaceBasis::fem(4, 4).unwrap()),
        ] {
            for lambda in [0.0, 1e-4, 1e-2, 1.0, 100.0] {
                let surface = smooth_surface(&points, &basis, lambda).unwrap();
                for i in 0..=6 {
                    for j in 0..=6 {
                        let s = [i as f64 / 6.0, j as f64 / 6.0];
                        assert_abs_diff_eq!(surface.eval(s).unwrap(), -1.75, epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn fem_interpolates_nodal_data_without_penalty() {
        let basis = Arc::new(SurfaceBasis::fem(4, 4).unwrap());
        let SurfaceBasisKind::FemP1 { nodes, .. } = basis.kind() else {
            panic!()
        };
        let mut rng = testutil::rng(62);
        let points: Vec<([f64; 2], f64)> = nodes
            .iter()
            .map(|&s| (s, testutil::std_normal(&mut rng)))
            .collect();
        let surface = smooth_surface(&points, &basis, 0.0).unwrap();
        for &(s, y) in &points {
            assert_abs_diff_eq!(surface.eval(s).unwrap(), y, epsilon = 1e-8);
        }
    }

    #[test]
    fn fem_fit_matches_dense_oracle() {
        let basis = Arc::new(SurfaceBasis::fem(3, 3).unwrap());
        let mut rng = testutil::rng(63);
        let mut points = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                points.push((
                    [i as f64 / 2.0, j as f64 / 2.0],
                    testutil::std_normal(&mut rng),
                ));
            }
        }
        let fit = smooth_surface(&points, &basis, 1.0).unwrap();

        let locations: Vec<[f64; 2]> = points.iter().map(|&(s, _)| s).collect();
        let phi = basis.eval_matrix(&locations).unwrap();
        let y: Vec<f64> = points.iter().map(|&(_, y)| y).collect();
        let normal = phi.transpose() * &phi + basis.penalty();
        let rhs = phi.transpose() * DVector::from_vec(y);
        let oracle = testutil::solve_dense(&normal, rhs.as_slice());
        for i in 0..basis.len() {
            assert_abs_diff_eq!(fit.coeffs()[i], oracle[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn surface_gcv_prefers_zero_for_representable_data() {
        let basis = Arc::new(SurfaceBasis::fem(3, 3).unwrap());
        let mut rng = testutil::rng(64);
        let truth = Surface::new(basis.clone(), testutil::random_vector(&mut rng, 9)).unwrap();
        let mut points = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                let s = [i as f64 / 5.0, j as f64 / 5.0];
                points.push((s, truth.eval(s).unwrap()));
            }
        }
        let (lambda, values) = gcv_surface(&points, &basis, &[0.0, 1e8]).unwrap();
        assert_eq!(lambda, 0.0);
        assert!(values[0] < values[1]);

        // constant data ties; the larger lambda wins
        let constant: Vec<([f64; 2], f64)> = points.iter().map(|&(s, _)| (s, 4.0)).collect();
        let (lambda, _) = gcv_surface(&constant, &basis, &[0.0, 1e-2, 1.0]).unwrap();
        assert_eq!(lambda, 1.0);

        let (lambda, _) = gcv_surface(&points, &basis, &[0.123]).unwrap();
        assert_eq!(lambda, 0.123);
    }

    #[test]
    fn eval_surface_basics() {
        let basis = Arc::new(SurfaceBasis::fem(4, 3).unwrap());
        let zero = Surface::zero(basis.clone());
        assert_abs_diff_eq!(zero.eval([0.3, 0.7]).unwrap(), 0.0);

        // Lagrange property at the nodes
        let mut rng = testutil::rng(65);
        let beta = testutil::random_vector(&mut rng, basis.len());
        let surface = Surface::new(basis.clone(), beta.clone()).unwrap();
        let SurfaceBasisKind::FemP1 { nodes, .. } = basis.kind() else {
            panic!()
        };
        for (i, &node) in nodes.iter().enumerate() {
            assert_abs_diff_eq!(surface.eval(node).unwrap(), beta[i], epsilon = 1e-12);
        }
        assert!(surface.eval([1.2, 0.0]).is_err());
    }

    #[test]
    fn tensor_eval_matches_direct_summation() {
        let basis = Arc::new(SurfaceBasis::tensor(5, 4).unwrap());
        let mut rng = testutil::rng(66);
        let beta = testutil::random_vector(&mut rng, 20);
        let surface = Surface::new(basis.clone(), beta.clone()).unwrap();
        let SurfaceBasisKind::TensorSpline { b1, b2, .. } = basis.kind() else {
            panic!()
        };
        for _ in 0..20 {
            let s = [
                rand::Rng::gen_range(&mut rng, 0.0..=1.0),
                rand::Rng::gen_range(&mut rng, 0.0..=1.0),
            ];
            let e1 = b1.eval(s[0]).unwrap();
            let e2 = b2.eval(s[1]).unwrap();
            let mut direct = 0.0;
            for i in 0..5 {
                for k in 0..4 {
                    direct += beta[i * 4 + k] * e1[i] * e2[k];
                }
            }
            assert_abs_diff_eq!(surface.eval(s).unwrap(), direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn inner_product_of_constants_is_their_product() {
        let basis = Arc::new(SurfaceBasis::fem(3, 3).unwrap());
        let zero = Surface::zero(basis.clone());
        assert_abs_diff_eq!(surface_inner_product(&zero, &zero).unwrap(), 0.0);
        let c = Surface::new(basis.clone(), DVector::repeat(9, 3.0)).unwrap();
        let d = Surface::new(basis.clone(), DVector::repeat(9, -2.0)).unwrap();
        assert_relative_eq!(surface_inner_product(&c, &d).unwrap(), -6.0, epsilon = 1e-12);
    }

    #[test]
    fn fem_inner_product_matches_triangle_quadrature() {
        let basis = Arc::new(SurfaceBasis::fem(4, 4).unwrap());
        let mut rng = testutil::rng(67);
        let a = Surface::new(basis.clone(), testutil::random_vector(&mut rng, 16)).unwrap();
        let b = Surface::new(basis.clone(), testutil::random_vector(&mut rng, 16)).unwrap();
        // edge-midpoint rule per triangle is exact for quadratics
        let SurfaceBasisKind::FemP1 { nodes, triangles, .. } = basis.kind() else {
            panic!()
        };
        let mut oracle = 0.0;
        for tri in triangles {
            let v = [nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]];
            let area = 0.5
                * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1])
                    - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]));
            for (p, q) in [(0, 1), (1, 2), (2, 0)] {
                let mid = [
                    0.5 * (v[p][0] + v[q][0]),
                    0.5 * (v[p][1] + v[q][1]),
                ];
                oracle += area / 3.0 * a.eval(mid).unwrap() * b.eval(mid).unwrap();
            }
        }
        assert_relative_eq!(
            surface_inner_product(&a, &b).unwrap(),
            oracle,
            max_relative = 1e-7
        );
    }

    #[test]
    fn penalty_shrinks_monotonically_for_surfaces() {
        let mut rng = testutil::rng(68);
        let basis = Arc::new(SurfaceBasis::tensor(5, 5).unwrap());
        let points: Vec<([f64; 2], f64)> = (0..80)
            .map(|_| {
                (
                    [
                        rand::Rng::gen_range(&mut rng, 0.0..1.0),
                        rand::Rng::gen_range(&mut rng, 0.0..1.0),
                    ],
                    testutil::std_normal(&mut rng),
                )
            })
            .collect();
        let mut last = f64::INFINITY;
        for lambda in [1e-6, 1e-4, 1e-2, 1.0, 100.0] {
            let fit = smooth_surface(&points, &basis, lambda).unwrap();
            let value = (basis.penalty() * fit.coeffs()).dot(fit.coeffs());
            assert!(value <= last + 1e-10);
            last = value;
        }
    }

    #[test]
    fn surface_smoothing_linear_in_data() {
        let mut rng = testutil::rng(69);
        let basis = Arc::new(SurfaceBasis::fem(4, 4).unwrap());
        let locations: Vec<[f64; 2]> = (0..40)
            .map(|_| {
                [
                    rand::Rng::gen_range(&mut rng, 0.0..1.0),
                    rand::Rng::gen_range(&mut rng, 0.0..1.0),
                ]
            })
            .collect();
        let y1: Vec<f64> = (0..40).map(|_| testutil::std_normal(&mut rng)).collect();
        let y2: Vec<f64> = (0..40).map(|_| testutil::std_normal(&mut rng)).collect();
        let with = |ys: &[f64]| -> Vec<([f64; 2], f64)> {
            locations.iter().copied().zip(ys.iter().copied()).collect()
        };
        let sum: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a + b).collect();
        let f1 = smooth_surface(&with(&y1), &basis, 0.05).unwrap();
        let f2 = smooth_surface(&with(&y2), &basis, 0.05).unwrap();
        let fs = smooth_surface(&with(&sum), &basis, 0.05).unwrap();
        assert!((fs.coeffs() - (f1.coeffs() + f2.coeffs())).amax() < 1e-10);
    }

    #[test]
    fn stiffness_row_sums_vanish() {
        let basis = SurfaceBasis::fem(6, 5).unwrap();
        // reassemble the raw stiffness to check its row sums
        let SurfaceBasisKind::FemP1 { nodes, triangles, .. } = basis.kind() else {
            panic!()
        };
        let m = nodes.len();
        let mut stiffness = DMatrix::<f64>::zeros(m, m);
        for tri in triangles {
            let elem = p1_element_stiffness(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            for a in 0..3 {
                for b in 0..3 {
                    stiffness[(tri[a], tri[b])] += elem[a][b];
                }
            }
        }
        for i in 0..m {
            assert_abs_diff_eq!(stiffness.row(i).sum(), 0.0, epsilon = 1e-10);
        }
    }
}
