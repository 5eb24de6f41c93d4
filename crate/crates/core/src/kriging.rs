//! Ordinary and universal kriging of functional data with scalar weights,
//! prediction trace-variance, and leave-one-out validation.

use nalgebra::{DMatrix, DVector, LU};

use crate::basis::FunctionalCurve;
use crate::error::{Error, Result};
use crate::moments::{iterative_gls_drift, DriftSpec, IterativeGlsFit, SpatialFunctionalDataset};
use crate::spatial::{distance, pairwise_distances};
use crate::tracevar::{VariogramFamily, VariogramModel};

/// Prediction at one target location: the kriging weights, Lagrange
/// multiplier, predicted curve, and trace-variance.
#[derive(Debug, Clone)]
pub struct KrigingSolution {
    pub target: [f64; 2],
    pub weights: DVector<f64>,
    pub multiplier: f64,
    pub prediction: FunctionalCurve,
    pub trace_variance: f64,
}

/// Shared factorization of the ordinary-kriging matrix for a dataset and
/// model; solves any number of targets against one decomposition.
pub struct KrigingSystem<'a> {
    ds: &'a SpatialFunctionalDataset,
    model: &'a VariogramModel,
    aug: DMatrix<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> KrigingSystem<'a> {
    pub fn new(ds: &'a SpatialFunctionalDataset, model: &'a VariogramModel) -> Result<Self> {
        model.validate()?;
        let n = ds.n();
        let distances = pairwise_distances(ds.locs());
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                // between distinct coincident sites the nugget acts as
                // measurement error: use the right limit, not gamma(0) = 0
                aug[(i, j)] = if i != j && distances[(i, j)] == 0.0 {
                    model.nugget
                } else {
                    model.gamma(distances[(i, j)])
                };
            }
            aug[(i, n)] = 1.0;
            aug[(n, i)] = 1.0;
        }
        let lu = LU::new(aug.clone());
        Ok(KrigingSystem { ds, model, aug, lu })
    }

    fn singular_error(&self) -> Error {
        // coincident locations with zero nugget are the usual cause; name the
        // pair when that is the case
        let n = self.ds.n();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.ds.locs().point(i) == self.ds.locs().point(j) && self.model.nugget == 0.0
                {
                    return Error::SingularKriging { i, j };
                }
            }
        }
        Error::Singular("ordinary kriging matrix".into())
    }

    /// Solve the kriging system for one target location.
    pub fn predict(&self, s0: [f64; 2]) -> Result<KrigingSolution> {
        let n = self.ds.n();
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = self.model.gamma(distance(self.ds.locs().point(i), s0));
        }
        rhs[n] = 1.0;
        let solution = self.lu.solve(&rhs).ok_or_else(|| self.singular_error())?;
        // a factorization of a singular matrix can still "solve"; accept only
        // solutions that reproduce the right-hand side
        let residual = (&self.aug * &solution - &rhs).amax();
        let scale = self.aug.amax() * solution.amax() + rhs.amax();
        if !residual.is_finite() || residual > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(self.singular_error());
        }
        let weights = solution.rows(0, n).into_owned();
        let multiplier = solution[n];

        let coeffs = self.ds.coeffs().transpose() * &weights;
        let prediction = FunctionalCurve::new(self.ds.basis().clone(), coeffs)?;

        let mut trace_variance = weights.dot(&rhs.rows(0, n)) + multiplier;
        if trace_variance < 0.0 {
            if trace_variance < -1e-10 {
                return Err(Error::Numerical(format!(
                    "negative kriging trace-variance {trace_variance}; the variogram model is invalid"
                )));
            }
            trace_variance = 0.0;
        }
        Ok(KrigingSolution {
            target: s0,
            weights,
            multiplier,
            prediction,
            trace_variance,
        })
    }
}

/// Ordinary kriging of the observed curves at `s0` under an isotropic
/// trace-variogram model.
pub fn ordinary_kriging(
    ds: &SpatialFunctionalDataset,
    model: &VariogramModel,
    s0: [f64; 2],
) -> Result<KrigingSolution> {
    KrigingSystem::new(ds, model)?.predict(s0)
}

/// Universal kriging result: the prediction plus the fitted drift and
/// residual variogram behind it.
#[derive(Debug, Clone)]
pub struct UniversalKriging {
    pub solution: KrigingSolution,
    pub drift: DriftSpec,
    pub model: VariogramModel,
    pub gls: IterativeGlsFit,
}

/// Universal kriging: iterative GLS drift, then ordinary kriging of the
/// drift residuals; the prediction is the drift at the target plus the
/// kriged residual.
pub fn universal_kriging(
    ds: &SpatialFunctionalDataset,
    spec: &DriftSpec,
    family: VariogramFamily,
    s0: [f64; 2],
) -> Result<UniversalKriging> {
    let gls = iterative_gls_drift(ds, spec, family, 10, 1e-4)?;
    let residuals = ds.minus(&gls.drift.fitted_matrix(ds.locs())?)?;
    let mut solution = KrigingSystem::new(&residuals, &gls.model)?.predict(s0)?;
    let drift_coeffs = gls.drift.drift_coeffs_at(s0)?;
    let coeffs = solution.prediction.coeffs() + drift_coeffs;
    solution.prediction = FunctionalCurve::new(ds.basis().clone(), coeffs)?;
    Ok(UniversalKriging {
        solution,
        drift: gls.drift.clone(),
        model: gls.model.clone(),
        gls,
    })
}

/// Leave-one-out validation: kriging error norm `||xhat(s_i) - x(s_i)||` for
/// every location, each predicted from the other n - 1 curves.
pub fn loo_validate(ds: &SpatialFunctionalDataset, model: &VariogramModel) -> Result<Vec<f64>> {
    let n = ds.n();
    if n < 2 {
        return Err(Error::InvalidInput(
            "leave-one-out needs at least two locations".into(),
        ));
    }
    let mut errors = Vec::with_capacity(n);
    for holdout in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&i| i != holdout).collect();
        let locs = crate::spatial::LocationSet::new(
            keep.iter().map(|&i| ds.locs().point(i)).collect(),
        )?;
        let coeffs = DMatrix::from_fn(n - 1, ds.basis().len(), |r, c| {
            ds.coeffs()[(keep[r], c)]
        });
        let subset = SpatialFunctionalDataset::new(locs, ds.basis().clone(), coeffs)?;
        let predicted = ordinary_kriging(&subset, model, ds.locs().point(holdout))?;
        errors.push(predicted.prediction.minus(&ds.curve(holdout))?.norm());
    }
    Ok(errors)
}
