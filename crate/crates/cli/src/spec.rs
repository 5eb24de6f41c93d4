//! The simulation specification document: one JSON file describing either a
//! spatial-curves draw or a surface-series draw. Unknown keys are rejected.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use fdfield::basis::BasisDescriptor;
use fdfield::moments::{DriftSpec, DriftTerm};
use fdfield::sim::{
    FarSimulationSpec, InnovationSpec, LocationGen, PsiSpec, SfdSimulationSpec,
};
use fdfield::surface::SurfaceBasisDescriptor;
use fdfield::tracevar::VariogramModel;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimulationDocument {
    SpatialCurves(SpatialCurvesDocument),
    SurfaceSeries(SurfaceSeriesDocument),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialCurvesDocument {
    pub seed: u64,
    pub locations: LocationGen,
    pub basis: BasisDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftDocument>,
    /// One model shared by every coefficient, or one per coefficient.
    pub models: Vec<VariogramModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftDocument {
    pub terms: Vec<DriftTerm>,
    /// Row l holds the basis coefficients of drift curve l.
    pub coeffs: Vec<Vec<f64>>,
}

impl DriftDocument {
    pub fn build(&self) -> CliResult<DriftSpec> {
        let spec = DriftSpec::new(self.terms.clone())?;
        let rows = self.coeffs.len();
        if rows != self.terms.len() {
            return Err(CliError::input(format!(
                "drift has {} terms but {rows} coefficient rows",
                self.terms.len()
            )));
        }
        let cols = self.coeffs.first().map_or(0, Vec::len);
        if self.coeffs.iter().any(|r| r.len() != cols) {
            return Err(CliError::input("ragged drift coefficient rows"));
        }
        let b = DMatrix::from_fn(rows, cols, |i, j| self.coeffs[i][j]);
        Ok(spec.with_coeffs(b)?)
    }
}

impl SpatialCurvesDocument {
    pub fn build(&self) -> CliResult<SfdSimulationSpec> {
        let basis = Arc::new(self.basis.build()?);
        let drift = match &self.drift {
            Some(doc) => {
                let spec = doc.build()?;
                let b = spec.coeffs().expect("built with coefficients");
                if b.ncols() != basis.len() {
                    return Err(CliError::input(format!(
                        "drift coefficient rows have {} entries but the basis has {}",
                        b.ncols(),
                        basis.len()
                    )));
                }
                Some(spec)
            }
            None => None,
        };
        Ok(SfdSimulationSpec {
            seed: self.seed,
            locations: self.locations.clone(),
            basis,
            drift,
            coeff_models: self.models.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSeriesDocument {
    pub seed: u64,
    pub basis: SurfaceBasisDescriptor,
    pub psi: PsiDocument,
    pub innovation: InnovationDocument,
    pub len: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiDocument {
    Diagonal(Vec<f64>),
    MatrixRowMajor(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InnovationDocument {
    IsotropicSd(f64),
    CovarianceRowMajor(Vec<f64>),
}

impl SurfaceSeriesDocument {
    pub fn build(&self) -> CliResult<FarSimulationSpec> {
        let basis = Arc::new(self.basis.build()?);
        let m = basis.len();
        let psi = match &self.psi {
            PsiDocument::Diagonal(d) => PsiSpec::Diagonal(d.clone()),
            PsiDocument::MatrixRowMajor(entries) => {
                if entries.len() != m * m {
                    return Err(CliError::input(format!(
                        "operator needs {} entries, got {}",
                        m * m,
                        entries.len()
                    )));
                }
                PsiSpec::Matrix(DMatrix::from_row_slice(m, m, entries))
            }
        };
        let innovation = match &self.innovation {
            InnovationDocument::IsotropicSd(sd) => InnovationSpec::Isotropic { sd: *sd },
            InnovationDocument::CovarianceRowMajor(entries) => {
                if entries.len() != m * m {
                    return Err(CliError::input(format!(
                        "innovation covariance needs {} entries, got {}",
                        m * m,
                        entries.len()
                    )));
                }
                InnovationSpec::Covariance(DMatrix::from_row_slice(m, m, entries))
            }
        };
        Ok(FarSimulationSpec {
            seed: self.seed,
            basis,
            psi,
            innovation,
            len: self.len,
            burn_in: self.burn_in,
        })
    }
}

pub fn read_spec(path: &std::path::Path) -> CliResult<SimulationDocument> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("{}: invalid spec: {e}", path.display())))
}
