//! Synthetic Gaussian data with known ground truth: spatial functional
//! datasets with specified drift and per-coefficient covariance models, and
//! FAR(1) surface series with a known coefficient operator. Everything is
//! deterministic given the seed; the generator is ChaCha8, a named
//! counter-based stream.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::moments::{DriftSpec, DriftTerm, SpatialFunctionalDataset};
use crate::spatial::{pairwise_distances, LocationSet};
use crate::surface::SurfaceBasis;
use crate::far::SurfaceTimeSeries;
use crate::tracevar::VariogramModel;

/// How simulation locations are laid out.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "layout", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocationGen {
    Grid { nx: usize, ny: usize, spacing: f64 },
    Uniform { n: usize, width: f64, height: f64 },
}

impl LocationGen {
    fn generate(&self, rng: &mut ChaCha8Rng) -> Result<LocationSet> {
        match *self {
            LocationGen::Grid { nx, ny, spacing } => LocationSet::grid(nx, ny, spacing),
            LocationGen::Uniform { n, width, height } => {
                if n == 0 || !(width > 0.0) || !(height > 0.0) {
                    return Err(Error::InvalidInput("invalid uniform location spec".into()));
                }
                let points = (0..n)
                    .map(|_| [rng.gen_range(0.0..width), rng.gen_range(0.0..height)])
                    .collect();
                LocationSet::new(points)
            }
        }
    }
}

/// Specification of a spatial functional dataset draw: independent Gaussian
/// coefficient fields (one variogram model per basis coefficient) plus an
/// optional known drift.
#[derive(Debug, Clone)]
pub struct SfdSimulationSpec {
    pub seed: u64,
    pub locations: LocationGen,
    pub basis: Arc<BasisSystem>,
    /// Drift with known coefficients; `None` for a centered field.
    pub drift: Option<DriftSpec>,
    /// One model per basis coefficient, or exactly one shared by all.
    pub coeff_models: Vec<VariogramModel>,
}

impl SfdSimulationSpec {
    fn model_for(&self, k: usize) -> &VariogramModel {
        if self.coeff_models.len() == 1 {
            &self.coeff_models[0]
        } else {
            &self.coeff_models[k]
        }
    }

    fn validate(&self) -> Result<()> {
        if self.coeff_models.is_empty() {
            return Err(Error::InvalidInput("no coefficient models".into()));
        }
        if self.coeff_models.len() != 1 && self.coeff_models.len() != self.basis.len() {
            return Err(Error::InvalidInput(format!(
                "need 1 or {} coefficient models, got {}",
                self.basis.len(),
                self.coeff_models.len()
            )));
        }
        for m in &self.coeff_models {
            m.validate()?;
        }
        if let Some(drift) = &self.drift {
            if drift.coeffs().is_none() {
                return Err(Error::InvalidInput(
                    "simulation drift needs known coefficients".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Record of everything the generator knew, for downstream verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SfdGroundTruth {
    pub seed: u64,
    pub models: Vec<VariogramModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_terms: Option<Vec<DriftTerm>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_coeffs: Option<Vec<Vec<f64>>>,
}

/// Coefficient-field covariance implied by a model:
/// `c1 rho(h)` off the diagonal, `c1 + c0` on it.
fn field_covariance(model: &VariogramModel, distances: &DMatrix<f64>) -> DMatrix<f64> {
    let n = distances.nrows();
    let sill = model.sill();
    let mut sigma = DMatrix::zeros(n, n);
    for i in 0..n {
        sigma[(i, i)] = sill;
        for j in (i + 1)..n {
            let value = sill - model.gamma(distances[(i, j)]);
            sigma[(i, j)] = value;
            sigma[(j, i)] = value;
        }
    }
    sigma
}

fn cholesky_with_jitter(mut sigma: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    match Cholesky::new(sigma.clone()) {
        Some(c) => Ok(c),
        None => {
            for i in 0..sigma.nrows() {
                sigma[(i, i)] += 1e-10;
            }
            Cholesky::new(sigma).ok_or_else(|| {
                Error::NotPositiveDefinite(
                    "simulation covariance not positive definite after 1e-10 jitter".into(),
                )
            })
        }
    }
}

/// Draw a spatial functional dataset. Coefficient fields are independent
/// across basis indices; each is sampled by Cholesky factorization of its
/// model covariance.
pub fn simulate_sfd(
    spec: &SfdSimulationSpec,
) -> Result<(SpatialFunctionalDataset, SfdGroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let locs = spec.locations.generate(&mut rng)?;
    let n = locs.len();
    let k = spec.basis.len();
    let distances = pairwise_distances(&locs);

    // distinct models share one factorization; the draw order stays by k
    let mut factors: Vec<(VariogramModel, Cholesky<f64, nalgebra::Dyn>)> = Vec::new();
    let mut z = DMatrix::zeros(n, k);
    for col in 0..k {
        let model = spec.model_for(col);
        if model.sill() == 0.0 {
            // degenerate field: exactly zero, no draw
            continue;
        }
        let factor = match factors.iter().find(|(m, _)| m == model) {
            Some((_, f)) => f,
            None => {
                let f = cholesky_with_jitter(field_covariance(model, &distances))?;
                factors.push((model.clone(), f));
                &factors.last().unwrap().1
            }
        };
        let eps = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let field = factor.l() * eps;
        z.set_column(col, &field);
    }

    if let Some(drift) = &spec.drift {
        z += drift.fitted_matrix(&locs)?;
    }

    let truth = SfdGroundTruth {
        seed: spec.seed,
        models: (0..k).map(|c| spec.model_for(c).clone()).collect(),
        drift_terms: spec.drift.as_ref().map(|d| d.terms().to_vec()),
        drift_coeffs: spec.drift.as_ref().and_then(|d| {
            d.coeffs().map(|b| {
                (0..b.nrows())
                    .map(|i| b.row(i).iter().copied().collect())
                    .collect()
            })
        }),
    };
    let ds = SpatialFunctionalDataset::new(locs, spec.basis.clone(), z)?;
    Ok((ds, truth))
}

/// Closed-form trace-variogram of a simulated field with independent
/// coefficient fields: the Gram-diagonal-weighted sum of the per-coefficient
/// variograms.
pub fn theoretical_trace_variogram(
    models: &[VariogramModel],
    basis: &BasisSystem,
    h: f64,
) -> f64 {
    let j = &basis.gram().j;
    (0..basis.len())
        .map(|k| {
            let model = if models.len() == 1 { &models[0] } else { &models[k] };
            j[(k, k)] * model.gamma(h)
        })
        .sum()
}

/// The autoregression operator of a FAR(1) simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum PsiSpec {
    /// Diagonal in coefficient space.
    Diagonal(Vec<f64>),
    /// Explicit coefficient-space matrix.
    Matrix(DMatrix<f64>),
}

impl PsiSpec {
    pub fn matrix(&self, m: usize) -> Result<DMatrix<f64>> {
        match self {
            PsiSpec::Diagonal(d) => {
                if d.len() != m {
                    return Err(Error::InvalidInput(format!(
                        "diagonal length {} != basis size {m}",
                        d.len()
                    )));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_vec(d.clone())))
            }
            PsiSpec::Matrix(psi) => {
                if psi.nrows() != m || psi.ncols() != m {
                    return Err(Error::InvalidInput(format!("operator must be {m} x {m}")));
                }
                Ok(psi.clone())
            }
        }
    }

    pub fn spectral_radius(&self, m: usize) -> Result<f64> {
        Ok(match self {
            PsiSpec::Diagonal(d) => d.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())),
            PsiSpec::Matrix(_) => {
                let psi = self.matrix(m)?;
                psi.complex_eigenvalues()
                    .iter()
                    .fold(0.0_f64, |acc, v| acc.max(v.norm()))
            }
        })
    }
}

/// Innovation law of the FAR(1) recursion.
#[derive(Debug, Clone, PartialEq)]
pub enum InnovationSpec {
    /// Coefficients iid normal with this standard deviation.
    Isotropic { sd: f64 },
    /// Explicit coefficient covariance.
    Covariance(DMatrix<f64>),
}

/// Specification of a FAR(1) surface-series draw.
#[derive(Debug, Clone)]
pub struct FarSimulationSpec {
    pub seed: u64,
    pub basis: Arc<SurfaceBasis>,
    pub psi: PsiSpec,
    pub innovation: InnovationSpec,
    /// Number of surfaces kept after burn-in.
    pub len: usize,
    pub burn_in: usize,
}

/// Ground-truth record of a FAR(1) draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FarGroundTruth {
    pub seed: u64,
    pub psi_row_major: Vec<f64>,
    pub burn_in: usize,
}

/// Iterate the FAR(1) recursion from a zero start, discarding `burn_in`
/// initial steps. The operator must have spectral radius below one.
pub fn simulate_far1(spec: &FarSimulationSpec) -> Result<(SurfaceTimeSeries, FarGroundTruth)> {
    if spec.len == 0 {
        return Err(Error::InvalidInput("requested an empty series".into()));
    }
    let m = spec.basis.len();
    let radius = spec.psi.spectral_radius(m)?;
    if !(radius < 1.0) {
        return Err(Error::UnstableOperator(radius));
    }
    let psi = spec.psi.matrix(m)?;
    let innovation_factor = match &spec.innovation {
        InnovationSpec::Isotropic { sd } => {
            if !(*sd >= 0.0) {
                return Err(Error::InvalidInput("negative innovation scale".into()));
            }
            None
        }
        InnovationSpec::Covariance(sigma) => {
            if sigma.nrows() != m || sigma.ncols() != m {
                return Err(Error::InvalidInput(format!(
                    "innovation covariance must be {m} x {m}"
                )));
            }
            Some(cholesky_with_jitter(sigma.clone())?)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut state = DVector::zeros(m);
    let mut coeffs = DMatrix::zeros(spec.len, m);
    for t in 0..spec.burn_in + spec.len {
        let eps = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = match (&spec.innovation, &innovation_factor) {
            (InnovationSpec::Isotropic { sd }, _) => eps * *sd,
            (_, Some(factor)) => factor.l() * eps,
            _ => unreachable!(),
        };
        state = &psi * state + noise;
        if t >= spec.burn_in {
            coeffs
                .row_mut(t - spec.burn_in)
                .copy_from(&state.transpose());
        }
    }
    let truth = FarGroundTruth {
        seed: spec.seed,
        psi_row_major: (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| psi[(i, j)])
            .collect(),
        burn_in: spec.burn_in,
    };
    Ok((SurfaceTimeSeries::new(spec.basis.clone(), coeffs)?, truth))
}
