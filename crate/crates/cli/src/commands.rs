//! The pipeline commands: simulate, smooth, variogram, krige, surface, far.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use fdfield::basis::{gcv_select, smooth_curve, BasisDescriptor, BasisSystem};
use fdfield::far::{
    choose_truncation_k, estimate_psi, forecast_one, g_metric_eigen, lag_cov, sts_mean,
    FarOperator, FarOperatorDocument, Regularization, SurfaceTimeSeries,
};
use fdfield::kriging::KrigingSystem;
use fdfield::moments::{iterative_gls_drift, DriftSpec, SpatialFunctionalDataset};
use fdfield::sim::{simulate_far1, simulate_sfd};
use fdfield::spatial::{bin_pairs, pairwise_distances, LocationSet};
use fdfield::surface::{gcv_surface, smooth_surface, Surface, SurfaceBasis, SurfaceBasisDescriptor};
use fdfield::tracevar::{
    empirical_trace_variogram, fit_variogram, FitWeighting, VariogramFamily, VariogramModel,
};

use crate::error::{CliError, CliResult};
use crate::io::{self, DatasetSidecar, SurfaceSidecar};
use crate::spec::{read_spec, SimulationDocument};

/// Print a status line, tolerating a closed output pipe.
fn say(message: String) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{message}");
}

pub fn parse_weighting(name: &str) -> CliResult<FitWeighting> {
    match name {
        "ols" => Ok(FitWeighting::Ols),
        "counts" => Ok(FitWeighting::Counts),
        "cressie" => Ok(FitWeighting::Cressie),
        other => Err(CliError::input(format!("unknown weighting `{other}`"))),
    }
}

pub fn parse_drift(name: &str) -> CliResult<Option<DriftSpec>> {
    match name {
        "none" => Ok(None),
        "intercept" => Ok(Some(DriftSpec::intercept())),
        "linear" => Ok(Some(DriftSpec::linear())),
        "quadratic" => Ok(Some(DriftSpec::quadratic())),
        other => Err(CliError::input(format!(
            "unknown drift `{other}` (expected none, intercept, linear, or quadratic)"
        ))),
    }
}

pub fn parse_grid(raw: &str) -> CliResult<Vec<f64>> {
    let mut grid = Vec::new();
    for piece in raw.split(',') {
        let value = piece
            .trim()
            .parse::<f64>()
            .map_err(|_| CliError::input(format!("bad grid value `{piece}`")))?;
        if !(value >= 0.0) {
            return Err(CliError::input(format!("negative grid value {value}")));
        }
        grid.push(value);
    }
    if grid.is_empty() {
        return Err(CliError::input("empty smoothing grid"));
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// simulate

pub fn cmd_simulate(
    spec_path: &Path,
    out_dir: &Path,
    emit_samples: Option<usize>,
    emit_grid: Option<usize>,
) -> CliResult<()> {
    let document = read_spec(spec_path)?;
    fs::create_dir_all(out_dir)?;
    match document {
        SimulationDocument::SpatialCurves(doc) => {
            let spec = doc.build()?;
            let (ds, truth) = simulate_sfd(&spec)?;
            let ids: Vec<String> = (0..ds.n()).map(|i| i.to_string()).collect();
            let sidecar = DatasetSidecar {
                basis: BasisDescriptor::of(ds.basis()),
                v_min: 0.0,
                v_max: 1.0,
            };
            io::write_dataset(&out_dir.join("dataset.csv"), &ids, &ds, &sidecar)?;
            fs::write(
                out_dir.join("truth.json"),
                serde_json::to_string_pretty(&truth).expect("serializable") + "\n",
            )?;
            if let Some(per_curve) = emit_samples {
                if per_curve < 2 {
                    return Err(CliError::input("--emit-samples needs at least 2"));
                }
                let mut out = String::from("site_id,s1,s2,v,value\n");
                for i in 0..ds.n() {
                    let p = ds.locs().point(i);
                    let curve = ds.curve(i);
                    for j in 0..per_curve {
                        let v = j as f64 / (per_curve - 1) as f64;
                        out.push_str(&format!(
                            "{i},{},{},{},{}\n",
                            io::fmt_float(p[0]),
                            io::fmt_float(p[1]),
                            io::fmt_float(v),
                            io::fmt_float(curve.eval(v)?)
                        ));
                    }
                }
                fs::write(out_dir.join("curves.csv"), out)?;
            }
            say(format!(
                "simulated {} curves with {} basis functions into {}",
                ds.n(),
                ds.basis().len(),
                out_dir.display()
            ));
        }
        SimulationDocument::SurfaceSeries(doc) => {
            let spec = doc.build()?;
            let (sts, truth) = simulate_far1(&spec)?;
            let times: Vec<u64> = (1..=sts.len() as u64).collect();
            let sidecar = SurfaceSidecar {
                basis: SurfaceBasisDescriptor::of(sts.basis()),
                s1_min: 0.0,
                s1_max: 1.0,
                s2_min: 0.0,
                s2_max: 1.0,
            };
            io::write_surfaces(&out_dir.join("surfaces.csv"), &times, &sts, &sidecar)?;
            fs::write(
                out_dir.join("truth.json"),
                serde_json::to_string_pretty(&truth).expect("serializable") + "\n",
            )?;
            if let Some(side) = emit_grid {
                if side < 2 {
                    return Err(CliError::input("--emit-grid needs at least 2"));
                }
                let mut out = String::from("t,s1,s2,value\n");
                for (row, &t) in times.iter().enumerate() {
                    let surface = sts.surface(row);
                    for i in 0..side {
                        for j in 0..side {
                            let s = [
                                i as f64 / (side - 1) as f64,
                                j as f64 / (side - 1) as f64,
                            ];
                            out.push_str(&format!(
                                "{t},{},{},{}\n",
                                io::fmt_float(s[0]),
                                io::fmt_float(s[1]),
                                io::fmt_float(surface.eval(s)?)
                            ));
                        }
                    }
                }
                fs::write(out_dir.join("slices.csv"), out)?;
            }
            say(format!(
                "simulated {} surfaces of dimension {} into {}",
                sts.len(),
                sts.basis().len(),
                out_dir.display()
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// smooth

struct SiteBlock {
    id: String,
    location: [f64; 2],
    samples: Vec<(f64, f64)>,
}

pub fn cmd_smooth(
    input: &Path,
    output: &Path,
    basis_size: usize,
    order: usize,
    lambda_grid: &[f64],
    fixed_lambda: Option<f64>,
) -> CliResult<()> {
    let rows = io::read_curve_samples(input)?;

    // group rows by site, first appearance order; a site must keep one location
    let mut order_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut sites: Vec<SiteBlock> = Vec::new();
    for row in &rows {
        match order_of.get(&row.site_id) {
            Some(&idx) => {
                let site = &mut sites[idx];
                if site.location != row.location {
                    return Err(CliError::input(format!(
                        "site `{}` appears at two locations",
                        row.site_id
                    )));
                }
                site.samples.push((row.v, row.value));
            }
            None => {
                order_of.insert(row.site_id.clone(), sites.len());
                sites.push(SiteBlock {
                    id: row.site_id.clone(),
                    location: row.location,
                    samples: vec![(row.v, row.value)],
                });
            }
        }
    }

    let v_min = rows.iter().map(|r| r.v).fold(f64::INFINITY, f64::min);
    let v_max = rows.iter().map(|r| r.v).fold(f64::NEG_INFINITY, f64::max);
    if !(v_max > v_min) {
        return Err(CliError::input(
            "curve abscissae are constant; nothing to rescale",
        ));
    }
    for site in &mut sites {
        for (v, _) in &mut site.samples {
            *v = (*v - v_min) / (v_max - v_min);
        }
    }

    let basis = Arc::new(BasisSystem::bspline(basis_size, order)?);

    let lambda = match fixed_lambda {
        Some(l) => l,
        None => {
            // pooled GCV: sum per-site values over the common grid
            let mut totals = vec![0.0; lambda_grid.len()];
            for site in &sites {
                let (_, values) = gcv_select(&site.samples, &basis, lambda_grid)?;
                for (t, v) in totals.iter_mut().zip(values) {
                    *t += v;
                }
            }
            let mut best: Option<(f64, f64)> = None;
            for (&l, &v) in lambda_grid.iter().zip(&totals) {
                if !v.is_finite() {
                    continue;
                }
                best = Some(match best {
                    None => (l, v),
                    Some((bl, bv)) if v < bv || (v == bv && l > bl) => (l, v),
                    Some(b) => b,
                });
            }
            best.map(|(l, _)| l).ok_or_else(|| {
                CliError::Numerical("GCV is nonfinite on the whole grid".into())
            })?
        }
    };

    let mut ids = Vec::with_capacity(sites.len());
    let mut points = Vec::with_capacity(sites.len());
    let mut curves = Vec::with_capacity(sites.len());
    say(format!("chosen lambda: {lambda}"));
    for site in &sites {
        let curve = smooth_curve(&site.samples, &basis, lambda)?;
        let sse: f64 = site
            .samples
            .iter()
            .map(|&(v, y)| {
                let fitted = curve.eval(v).expect("in-domain");
                (y - fitted) * (y - fitted)
            })
            .sum();
        say(format!("site {}: sse = {sse}", site.id));
        ids.push(site.id.clone());
        points.push(site.location);
        curves.push(curve);
    }
    let ds = SpatialFunctionalDataset::from_curves(LocationSet::new(points)?, &curves)?;
    let sidecar = DatasetSidecar {
        basis: BasisDescriptor::of(&basis),
        v_min,
        v_max,
    };
    io::write_dataset(output, &ids, &ds, &sidecar)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// variogram

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitEntry {
    #[serde(flatten)]
    pub model: VariogramModel,
    pub sse: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsDocument {
    pub weighting: String,
    /// Fits ranked by SSE, best first; ties keep the requested family order.
    pub fits: Vec<FitEntry>,
}

pub fn cmd_variogram(
    dataset: &Path,
    bins: usize,
    max_fraction: f64,
    families: &[VariogramFamily],
    weighting: FitWeighting,
    out_empirical: &Path,
    out_models: &Path,
) -> CliResult<()> {
    let (_, ds, _) = io::read_dataset(dataset)?;
    let distance_bins = bin_pairs(&pairwise_distances(ds.locs()), bins, max_fraction)?;
    let emp = empirical_trace_variogram(&ds, &distance_bins);
    if emp.len() < 4 {
        return Err(CliError::input(format!(
            "only {} usable distance classes; need at least 4",
            emp.len()
        )));
    }

    let mut fits = Vec::new();
    for &family in families {
        let (model, sse) = fit_variogram(&emp, family, weighting)?;
        fits.push(FitEntry { model, sse });
    }
    // stable sort keeps the requested order on ties
    fits.sort_by(|a, b| a.sse.total_cmp(&b.sse));

    let mut buffer = Vec::new();
    emp.write_csv(&mut buffer)?;
    fs::write(out_empirical, buffer)?;

    let weighting_name = match weighting {
        FitWeighting::Ols => "ols",
        FitWeighting::Counts => "counts",
        FitWeighting::Cressie => "cressie",
    };
    let document = ModelsDocument {
        weighting: weighting_name.into(),
        fits,
    };
    fs::write(
        out_models,
        serde_json::to_string_pretty(&document).expect("serializable") + "\n",
    )?;
    for fit in &document.fits {
        say(format!(
            "{}: sse = {}, nugget = {}, partial sill = {}, range = {}",
            fit.model.family.name(),
            fit.sse,
            fit.model.nugget,
            fit.model.partial_sill,
            fit.model.range
        ));
    }
    Ok(())
}

pub fn read_best_model(path: &Path) -> CliResult<VariogramModel> {
    let document: ModelsDocument = serde_json::from_str(
        &fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?,
    )
    .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    document
        .fits
        .first()
        .map(|f| f.model.clone())
        .ok_or_else(|| CliError::input(format!("{}: no fitted models", path.display())))
}

// ---------------------------------------------------------------------------
// krige

#[allow(clippy::too_many_arguments)]
pub fn cmd_krige(
    dataset: &Path,
    targets_path: &Path,
    output: &Path,
    model_path: Option<&Path>,
    drift: Option<DriftSpec>,
    family: VariogramFamily,
    curves_out: Option<&Path>,
    curve_grid: usize,
) -> CliResult<()> {
    let (_, ds, sidecar) = io::read_dataset(dataset)?;
    let targets = io::read_targets(targets_path)?;

    // decompose into a (possibly zero) drift and a residual kriging system
    let (residuals, drift_fit, model) = match drift {
        None => {
            let path = model_path.ok_or_else(|| {
                CliError::input("ordinary kriging needs --model with fitted variogram models")
            })?;
            let model = read_best_model(path)?;
            (ds.clone(), None, model)
        }
        Some(spec) => {
            let fit = iterative_gls_drift(&ds, &spec, family, 10, 1e-4)?;
            let residuals = ds.minus(&fit.drift.fitted_matrix(ds.locs())?)?;
            (residuals, Some(fit.drift), fit.model)
        }
    };

    let system = KrigingSystem::new(&residuals, &model)?;
    let k = ds.basis().len();
    let mut out = String::from("s1,s2");
    for j in 1..=k {
        out.push_str(&format!(",z{j}"));
    }
    out.push_str(",trace_variance,weight_sum\n");
    let mut curve_rows = String::from("target,v,value\n");
    for (t_index, &s0) in targets.iter().enumerate() {
        let solution = system.predict(s0)?;
        let mut coeffs = solution.prediction.coeffs().clone_owned();
        if let Some(fit) = &drift_fit {
            coeffs += fit.drift_coeffs_at(s0)?;
        }
        out.push_str(&format!("{},{}", io::fmt_float(s0[0]), io::fmt_float(s0[1])));
        for j in 0..k {
            out.push_str(&format!(",{}", io::fmt_float(coeffs[j])));
        }
        out.push_str(&format!(
            ",{},{}\n",
            io::fmt_float(solution.trace_variance),
            io::fmt_float(solution.weights.sum())
        ));
        if curves_out.is_some() {
            let curve =
                fdfield::basis::FunctionalCurve::new(ds.basis().clone(), coeffs.clone())?;
            for g in 0..curve_grid {
                let u = g as f64 / (curve_grid - 1).max(1) as f64;
                let v = sidecar.v_min + u * (sidecar.v_max - sidecar.v_min);
                curve_rows.push_str(&format!(
                    "{t_index},{},{}\n",
                    io::fmt_float(v),
                    io::fmt_float(curve.eval(u)?)
                ));
            }
        }
    }
    fs::write(output, out)?;
    if let Some(path) = curves_out {
        fs::write(path, curve_rows)?;
    }
    say(format!("kriged {} targets", targets.len()));
    Ok(())
}

// ---------------------------------------------------------------------------
// surface

pub enum SurfaceBasisChoice {
    Tensor { k1: usize, k2: usize },
    Fem { nx: usize, ny: usize },
}

pub fn cmd_surface(
    input: &Path,
    output: &Path,
    choice: SurfaceBasisChoice,
    lambda_grid: &[f64],
    fixed_lambda: Option<f64>,
    raster: Option<&Path>,
    raster_grid: usize,
) -> CliResult<()> {
    let rows = io::read_slice_samples(input)?;

    let mut slices: BTreeMap<u64, Vec<([f64; 2], f64)>> = BTreeMap::new();
    for row in &rows {
        slices.entry(row.t).or_default().push((row.location, row.value));
    }

    // every slice must observe the same spatial support
    let mut supports: Vec<Vec<[f64; 2]>> = Vec::new();
    for points in slices.values() {
        let mut support: Vec<[f64; 2]> = points.iter().map(|&(s, _)| s).collect();
        support.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        supports.push(support);
    }
    if supports.windows(2).any(|w| w[0] != w[1]) {
        return Err(CliError::input(
            "time slices observe different spatial supports",
        ));
    }

    let s1_min = rows.iter().map(|r| r.location[0]).fold(f64::INFINITY, f64::min);
    let s1_max = rows.iter().map(|r| r.location[0]).fold(f64::NEG_INFINITY, f64::max);
    let s2_min = rows.iter().map(|r| r.location[1]).fold(f64::INFINITY, f64::min);
    let s2_max = rows.iter().map(|r| r.location[1]).fold(f64::NEG_INFINITY, f64::max);
    if !(s1_max > s1_min) || !(s2_max > s2_min) {
        return Err(CliError::input("degenerate spatial extent"));
    }

    let basis = Arc::new(match choice {
        SurfaceBasisChoice::Tensor { k1, k2 } => SurfaceBasis::tensor(k1, k2)?,
        SurfaceBasisChoice::Fem { nx, ny } => SurfaceBasis::fem(nx, ny)?,
    });
    let sidecar = SurfaceSidecar {
        basis: SurfaceBasisDescriptor::of(&basis),
        s1_min,
        s1_max,
        s2_min,
        s2_max,
    };

    let times: Vec<u64> = slices.keys().copied().collect();
    let mut coeffs = DMatrix::zeros(times.len(), basis.len());
    for (row, points) in slices.values().enumerate() {
        let unit_points: Vec<([f64; 2], f64)> = points
            .iter()
            .map(|&(s, y)| (sidecar.to_unit(s), y))
            .collect();
        let lambda = match fixed_lambda {
            Some(l) => l,
            None => gcv_surface(&unit_points, &basis, lambda_grid)?.0,
        };
        let surface = smooth_surface(&unit_points, &basis, lambda)?;
        coeffs.row_mut(row).copy_from(&surface.coeffs().transpose());
    }
    let sts = SurfaceTimeSeries::new(basis, coeffs)?;
    io::write_surfaces(output, &times, &sts, &sidecar)?;

    if let Some(path) = raster {
        let mut cells = Vec::new();
        for (row, &t) in times.iter().enumerate() {
            let surface = sts.surface(row);
            raster_surface(&surface, &sidecar, raster_grid, t, &mut cells)?;
        }
        io::write_raster(path, &cells)?;
    }
    say(format!("smoothed {} time slices", times.len()));
    Ok(())
}

fn raster_surface(
    surface: &Surface,
    sidecar: &SurfaceSidecar,
    side: usize,
    t: u64,
    out: &mut Vec<(u64, [f64; 2], f64)>,
) -> CliResult<()> {
    for i in 0..side {
        for j in 0..side {
            let u = [
                i as f64 / (side - 1).max(1) as f64,
                j as f64 / (side - 1).max(1) as f64,
            ];
            out.push((t, sidecar.to_original(u), surface.eval(u)?));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// far

#[allow(clippy::too_many_arguments)]
pub fn cmd_far(
    surfaces: &Path,
    out_operator: &Path,
    out_forecast: &Path,
    truncation_k: Option<usize>,
    ridge: Option<f64>,
    trace_fraction: f64,
    raster: Option<&Path>,
    raster_grid: usize,
) -> CliResult<()> {
    let (times, sts, sidecar) = io::read_surfaces(surfaces)?;
    if sts.len() < 3 {
        return Err(CliError::input(format!(
            "FAR(1) estimation needs at least 3 surfaces, got {}",
            sts.len()
        )));
    }
    if truncation_k.is_some() && ridge.is_some() {
        return Err(CliError::input("choose either --truncation-k or --ridge"));
    }

    // a constant series has no temporal structure: the operator is zero and
    // the forecast is the constant itself
    let (centered, mean) = sts.centered();
    let scale = mean.coeffs().amax().max(1.0);
    let constant = centered.coeffs().amax() <= 1e-12 * scale;
    let far = if constant {
        say("series is constant in time; using the zero operator".into());
        FarOperator::zero(sts.basis().clone())
    } else {
        let regularization = match (truncation_k, ridge) {
            (Some(k), _) => Regularization::Truncation { k },
            (None, Some(alpha)) => Regularization::Ridge { alpha },
            (None, None) => {
                let m0 = lag_cov(&centered, 0)?;
                let (eigenvalues, _) = g_metric_eigen(&m0, sts.basis().gram())?;
                let k = choose_truncation_k(&eigenvalues, trace_fraction);
                Regularization::Truncation { k }
            }
        };
        estimate_psi(&sts, regularization)?
    };

    fs::write(
        out_operator,
        serde_json::to_string_pretty(&FarOperatorDocument::of(&far)).expect("serializable")
            + "\n",
    )?;

    let forecast = if constant {
        sts_mean(&sts)
    } else {
        forecast_one(&sts, &far)?
    };
    let next_t = times.last().copied().unwrap_or(0) + 1;
    let forecast_row = DMatrix::from_fn(1, sts.basis().len(), |_, j| forecast.coeffs()[j]);
    let forecast_series = SurfaceTimeSeries::new(sts.basis().clone(), forecast_row)?;
    io::write_surfaces(out_forecast, &[next_t], &forecast_series, &sidecar)?;

    if let Some(path) = raster {
        let mut cells = Vec::new();
        raster_surface(&forecast, &sidecar, raster_grid, next_t, &mut cells)?;
        io::write_raster(path, &cells)?;
    }
    say(format!(
        "fitted FAR(1) on {} surfaces; forecast written for t = {next_t}",
        sts.len()
    ));
    Ok(())
}
