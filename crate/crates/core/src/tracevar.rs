//! Empirical trace-covariogram / trace-variogram of a spatial functional
//! dataset, parametric variogram families, and weighted least-squares fitting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::SpatialFunctionalDataset;
use crate::spatial::DistanceBins;

/// Parametric variogram family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramFamily {
    Exponential,
    Spherical,
    Gaussian,
    Matern,
}

impl VariogramFamily {
    pub const ALL: [VariogramFamily; 4] = [
        VariogramFamily::Exponential,
        VariogramFamily::Spherical,
        VariogramFamily::Gaussian,
        VariogramFamily::Matern,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            VariogramFamily::Exponential => "exponential",
            VariogramFamily::Spherical => "spherical",
            VariogramFamily::Gaussian => "gaussian",
            VariogramFamily::Matern => "matern",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "exponential" => Ok(VariogramFamily::Exponential),
            "spherical" => Ok(VariogramFamily::Spherical),
            "gaussian" => Ok(VariogramFamily::Gaussian),
            "matern" => Ok(VariogramFamily::Matern),
            other => Err(Error::InvalidInput(format!(
                "unknown variogram family `{other}`"
            ))),
        }
    }
}

/// Matern smoothness values with closed-form correlations.
pub const MATERN_SMOOTHNESS: [f64; 3] = [0.5, 1.5, 2.5];

/// A fitted or specified variogram model: `gamma(0) = 0` and
/// `gamma(h) = nugget + partial_sill * (1 - rho(h / range))` for `h > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariogramModel {
    pub family: VariogramFamily,
    pub nugget: f64,
    pub partial_sill: f64,
    pub range: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
}

impl VariogramModel {
    pub fn new(
        family: VariogramFamily,
        nugget: f64,
        partial_sill: f64,
        range: f64,
    ) -> Result<Self> {
        let smoothness = match family {
            VariogramFamily::Matern => Some(1.5),
            _ => None,
        };
        let model = VariogramModel {
            family,
            nugget,
            partial_sill,
            range,
            smoothness,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn matern(nugget: f64, partial_sill: f64, range: f64, smoothness: f64) -> Result<Self> {
        let model = VariogramModel {
            family: VariogramFamily::Matern,
            nugget,
            partial_sill,
            range,
            smoothness: Some(smoothness),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nugget >= 0.0) || !(self.partial_sill >= 0.0) || !(self.range > 0.0) {
            return Err(Error::InvalidInput(format!(
                "invalid variogram parameters: nugget {}, partial sill {}, range {}",
                self.nugget, self.partial_sill, self.range
            )));
        }
        if self.family == VariogramFamily::Matern {
            let nu = self
                .smoothness
                .ok_or_else(|| Error::InvalidInput("matern model needs a smoothness".into()))?;
            if !MATERN_SMOOTHNESS.contains(&nu) {
                return Err(Error::InvalidInput(format!(
                    "matern smoothness {nu} unsupported; closed forms exist for 0.5, 1.5, 2.5"
                )));
            }
        }
        Ok(())
    }

    fn correlation(&self, d: f64) -> f64 {
        match self.family {
            VariogramFamily::Exponential => (-d).exp(),
            VariogramFamily::Gaussian => (-(d * d)).exp(),
            VariogramFamily::Spherical => {
                if d >= 1.0 {
                    0.0
                } else {
                    1.0 - 1.5 * d + 0.5 * d * d * d
                }
            }
            VariogramFamily::Matern => match self.smoothness.unwrap_or(1.5) {
                nu if nu == 0.5 => (-d).exp(),
                nu if nu == 1.5 => {
                    let s = 3.0_f64.sqrt() * d;
                    (1.0 + s) * (-s).exp()
                }
                _ => {
                    let s = 5.0_f64.sqrt() * d;
                    (1.0 + s + s * s / 3.0) * (-s).exp()
                }
            },
        }
    }

    /// Variogram value at distance `h`; zero at `h = 0` by definition, with
    /// the nugget as the limit from the right.
    pub fn gamma(&self, h: f64) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        self.nugget + self.partial_sill * (1.0 - self.correlation(h / self.range))
    }

    /// Total sill `nugget + partial_sill`.
    pub fn sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }

    /// Trace-covariogram implied by the model: `sill - gamma(h)`, so the
    /// value at zero distance is the sill.
    pub fn trace_covariogram(&self, h: f64) -> f64 {
        self.sill() - self.gamma(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Variogram,
    Covariogram,
}

/// Binned empirical trace-variogram or trace-covariogram.
#[derive(Debug, Clone)]
pub struct EmpiricalTraceVariogram {
    pub kind: TraceKind,
    pub centers: Vec<f64>,
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
    /// Zero-distance value `n^-1 sum <x_i, x_i>` (covariogram only).
    pub at_zero: Option<f64>,
}

impl EmpiricalTraceVariogram {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// CSV with columns h, gamma, count.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "h,gamma,count")?;
        for i in 0..self.len() {
            writeln!(out, "{},{},{}", self.centers[i], self.values[i], self.counts[i])?;
        }
        Ok(())
    }
}

/// Empirical trace-variogram: per bin, the average of
/// `<x_i - x_j, x_i - x_j> / 2` over the pairs of the bin. Empty bins are
/// dropped.
pub fn empirical_trace_variogram(
    ds: &SpatialFunctionalDataset,
    bins: &DistanceBins,
) -> EmpiricalTraceVariogram {
    let j = &ds.basis().gram().j;
    let z = ds.coeffs();
    let mut centers = Vec::new();
    let mut values = Vec::new();
    let mut counts = Vec::new();
    for (b, pairs) in bins.pairs.iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let mut acc = 0.0;
        for &(i, l) in pairs {
            let diff = (z.row(i) - z.row(l)).transpose();
            acc += (j * &diff).dot(&diff);
        }
        centers.push(bins.mean_distances[b]);
        values.push(acc / (2.0 * pairs.len() as f64));
        counts.push(pairs.len());
    }
    EmpiricalTraceVariogram {
        kind: TraceKind::Variogram,
        centers,
        values,
        counts,
        at_zero: None,
    }
}

/// Empirical trace-covariogram of a centered dataset: per bin, the average of
/// `<x_i, x_j>` over the pairs; the zero-distance value averages `<x_i, x_i>`
/// over all observations.
pub fn empirical_trace_covariogram(
    ds: &SpatialFunctionalDataset,
    bins: &DistanceBins,
) -> EmpiricalTraceVariogram {
    let j = &ds.basis().gram().j;
    let z = ds.coeffs();
    let mut centers = Vec::new();
    let mut values = Vec::new();
    let mut counts = Vec::new();
    for (b, pairs) in bins.pairs.iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let mut acc = 0.0;
        for &(i, l) in pairs {
            acc += (j * z.row(l).transpose()).dot(&z.row(i).transpose());
        }
        centers.push(bins.mean_distances[b]);
        values.push(acc / pairs.len() as f64);
        counts.push(pairs.len());
    }
    let n = z.nrows();
    let at_zero = (0..n)
        .map(|i| {
            let zi = z.row(i).transpose();
            (j * &zi).dot(&zi)
        })
        .sum::<f64>()
        / n as f64;
    EmpiricalTraceVariogram {
        kind: TraceKind::Covariogram,
        centers,
        values,
        counts,
        at_zero: Some(at_zero),
    }
}

/// Weighting of the squared fitting error per bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitWeighting {
    /// Unit weights.
    Ols,
    /// Pair counts `|N(h_j)|`.
    Counts,
    /// Cressie weights `|N(h_j)| / gamma(h_j; theta)^2`.
    Cressie,
}

/// Weighted least-squares variogram fit over a bounded parameter box by
/// multi-start Nelder-Mead descent. Returns the fitted model and the attained
/// weighted sum of squared errors.
///
/// The three free parameters are nugget, partial sill, and range. Matern
/// smoothness is not fitted: it stays at 0.5, matching the fixed-kappa
/// convention of classical variogram fitting; use
/// `fit_variogram_with_smoothness` for the other closed forms.
pub fn fit_variogram(
    emp: &EmpiricalTraceVariogram,
    family: VariogramFamily,
    weighting: FitWeighting,
) -> Result<(VariogramModel, f64)> {
    let smoothness = match family {
        VariogramFamily::Matern => Some(0.5),
        _ => None,
    };
    fit_with_fixed_smoothness(emp, family, smoothness, weighting)
}

/// Variogram fit with an explicit Matern smoothness (0.5, 1.5, or 2.5).
pub fn fit_variogram_with_smoothness(
    emp: &EmpiricalTraceVariogram,
    smoothness: f64,
    weighting: FitWeighting,
) -> Result<(VariogramModel, f64)> {
    if !MATERN_SMOOTHNESS.contains(&smoothness) {
        return Err(Error::InvalidInput(format!(
            "matern smoothness {smoothness} unsupported; closed forms exist for 0.5, 1.5, 2.5"
        )));
    }
    fit_with_fixed_smoothness(emp, VariogramFamily::Matern, Some(smoothness), weighting)
}

fn fit_with_fixed_smoothness(
    emp: &EmpiricalTraceVariogram,
    family: VariogramFamily,
    smoothness: Option<f64>,
    weighting: FitWeighting,
) -> Result<(VariogramModel, f64)> {
    if emp.len() < 4 {
        return Err(Error::FitFailure(format!(
            "need at least 4 nonempty bins to fit 3 parameters, got {}",
            emp.len()
        )));
    }
    if emp.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitFailure("nonfinite empirical value".into()));
    }

    let g_max = emp.values.iter().cloned().fold(0.0_f64, f64::max);
    let h_max = emp.centers.iter().cloned().fold(0.0_f64, f64::max);
    let h_min = emp
        .centers
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);

    if g_max <= 0.0 {
        // flat zero variogram: nothing to fit
        let model = VariogramModel {
            family,
            nugget: 0.0,
            partial_sill: 0.0,
            range: h_max.max(1.0),
            smoothness,
        };
        return Ok((model, 0.0));
    }

    let lo = [0.0, 0.0, h_min / 10.0];
    let hi = [4.0 * g_max, 4.0 * g_max, 4.0 * h_max];
    let starts: [[f64; 3]; 8] = [
        [0.0, g_max, h_max / 3.0],
        [0.0, g_max, h_max],
        [g_max / 2.0, g_max / 2.0, h_max / 3.0],
        [g_max / 10.0, g_max, h_max / 6.0],
        [0.0, 1.5 * g_max, h_max / 2.0],
        [g_max / 5.0, 0.8 * g_max, h_max],
        [g_max, 0.0, h_max / 3.0],
        [g_max / 2.0, g_max, (h_max / 10.0).max(h_min)],
    ];

    let objective = |p: &[f64; 3]| -> f64 {
        let model = VariogramModel {
            family,
            nugget: p[0],
            partial_sill: p[1],
            range: p[2],
            smoothness,
        };
        weighted_sse(emp, &model, weighting)
    };
    let mut local: Option<([f64; 3], f64)> = None;
    for start in &starts {
        let (p, v) = nelder_mead_box(&objective, *start, lo, hi, 400);
        if v.is_finite() && local.as_ref().is_none_or(|&(_, bv)| v < bv) {
            local = Some((p, v));
        }
    }
    // polish from the best point found
    if let Some((p0, _)) = local {
        let (p, v) = nelder_mead_box(&objective, p0, lo, hi, 400);
        if v.is_finite() && local.as_ref().is_none_or(|&(_, bv)| v < bv) {
            local = Some((p, v));
        }
    }
    local
        .map(|(p, v)| {
            (
                VariogramModel {
                    family,
                    nugget: p[0],
                    partial_sill: p[1],
                    range: p[2],
                    smoothness,
                },
                v,
            )
        })
        .ok_or_else(|| Error::FitFailure("no start produced a finite objective".into()))
}

fn weighted_sse(
    emp: &EmpiricalTraceVariogram,
    model: &VariogramModel,
    weighting: FitWeighting,
) -> f64 {
    let mut sse = 0.0;
    for i in 0..emp.len() {
        let fitted = model.gamma(emp.centers[i]);
        let resid = emp.values[i] - fitted;
        let w = match weighting {
            FitWeighting::Ols => 1.0,
            FitWeighting::Counts => emp.counts[i] as f64,
            FitWeighting::Cressie => {
                let denom = fitted.max(1e-12 * emp.values[i].abs().max(1e-300));
                emp.counts[i] as f64 / (denom * denom)
            }
        };
        sse += w * resid * resid;
    }
    sse
}

/// Nelder-Mead descent with the simplex clamped to the box `[lo, hi]`.
/// Returns the best point ever evaluated, which guarantees the result is
/// never worse than the start.
fn nelder_mead_box<F: Fn(&[f64; 3]) -> f64>(
    f: &F,
    start: [f64; 3],
    lo: [f64; 3],
    hi: [f64; 3],
    max_iter: usize,
) -> ([f64; 3], f64) {
    let clamp = |p: [f64; 3]| -> [f64; 3] {
        std::array::from_fn(|i| p[i].clamp(lo[i], hi[i]))
    };
    let mut simplex: Vec<[f64; 3]> = Vec::with_capacity(4);
    simplex.push(clamp(start));
    for i in 0..3 {
        let mut p = start;
        let step = 0.1 * (hi[i] - lo[i]).max(1e-12);
        p[i] = if p[i] + step <= hi[i] { p[i] + step } else { p[i] - step };
        simplex.push(clamp(p));
    }
    let mut values: Vec<f64> = simplex.iter().map(f).collect();
    let mut best = simplex[0];
    let mut best_value = values[0];
    let track = |p: [f64; 3], v: f64, best: &mut [f64; 3], best_value: &mut f64| {
        if v < *best_value {
            *best = p;
            *best_value = v;
        }
    };
    for i in 1..4 {
        track(simplex[i], values[i], &mut best, &mut best_value);
    }

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (b, w2, w) = (order[0], order[2], order[3]);
        if (values[w] - values[b]).abs()
            <= 1e-14 * (values[b].abs() + values[w].abs() + 1e-300)
        {
            break;
        }
        let mut centroid = [0.0; 3];
        for &i in &order[..3] {
            for d in 0..3 {
                centroid[d] += simplex[i][d] / 3.0;
            }
        }
        let shifted = |t: f64| -> [f64; 3] {
            clamp(std::array::from_fn(|d| {
                centroid[d] + t * (centroid[d] - simplex[w][d])
            }))
        };

        let reflect = shifted(1.0);
        let fr = f(&reflect);
        track(reflect, fr, &mut best, &mut best_value);
        if fr < values[b] {
            let expand = shifted(2.0);
            let fe = f(&expand);
            track(expand, fe, &mut best, &mut best_value);
            if fe < fr {
                simplex[w] = expand;
                values[w] = fe;
            } else {
                simplex[w] = reflect;
                values[w] = fr;
            }
        } else if fr < values[w2] {
            simplex[w] = reflect;
            values[w] = fr;
        } else {
            let contract = shifted(if fr < values[w] { 0.5 } else { -0.5 });
            let fc = f(&contract);
            track(contract, fc, &mut best, &mut best_value);
            if fc < values[w].min(fr) {
                simplex[w] = contract;
                values[w] = fc;
            } else {
                // shrink toward the best vertex
                for &i in &order[1..] {
                    simplex[i] = clamp(std::array::from_fn(|d| {
                        simplex[b][d] + 0.5 * (simplex[i][d] - simplex[b][d])
                    }));
                    values[i] = f(&simplex[i]);
                    track(simplex[i], values[i], &mut best, &mut best_value);
                }
            }
        }
    }
    (best, best_value)
}
