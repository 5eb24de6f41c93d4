//! File formats: UTF-8 CSV with a header row and '.' decimals, plus JSON
//! sidecars for basis and model metadata. Floats are written with Rust's
//! shortest round-trip formatting, so read-write cycles are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use fdfield::basis::BasisDescriptor;
use fdfield::moments::SpatialFunctionalDataset;
use fdfield::spatial::LocationSet;
use fdfield::surface::SurfaceBasisDescriptor;
use fdfield::far::SurfaceTimeSeries;

use crate::error::{CliError, CliResult};

/// Sidecar path: `dir/name.csv` -> `dir/name.basis.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("basis.json")
}

pub fn fmt_float(v: f64) -> String {
    format!("{v}")
}

fn parse_float(path: &Path, line: usize, field: &str, raw: &str) -> CliResult<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| CliError::at_line(path, line, format!("bad {field} value `{raw}`")))
}

/// Split a CSV line; the formats here never need quoting.
fn split(line: &str) -> Vec<&str> {
    line.split(',').collect()
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// One observed sample of one site's curve.
pub struct CurveSample {
    pub site_id: String,
    pub location: [f64; 2],
    pub v: f64,
    pub value: f64,
}

/// Raw curve samples: columns site_id, s1, s2, v, value.
pub fn read_curve_samples(path: &Path) -> CliResult<Vec<CurveSample>> {
    let lines = read_lines(path)?;
    let mut rows = Vec::new();
    let mut iter = lines.iter().enumerate();
    let Some((_, header)) = iter.next() else {
        return Err(CliError::input(format!("{}: empty file", path.display())));
    };
    if split(header) != ["site_id", "s1", "s2", "v", "value"] {
        return Err(CliError::at_line(
            path,
            1,
            "expected header `site_id,s1,s2,v,value`",
        ));
    }
    for (idx, line) in iter {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split(line);
        if fields.len() != 5 {
            return Err(CliError::at_line(
                path,
                lineno,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        rows.push(CurveSample {
            site_id: fields[0].trim().to_owned(),
            location: [
                parse_float(path, lineno, "s1", fields[1])?,
                parse_float(path, lineno, "s2", fields[2])?,
            ],
            v: parse_float(path, lineno, "v", fields[3])?,
            value: parse_float(path, lineno, "value", fields[4])?,
        });
    }
    if rows.is_empty() {
        return Err(CliError::input(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Dataset sidecar: the basis plus the affine map from the original curve
/// abscissae onto [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub basis: BasisDescriptor,
    pub v_min: f64,
    pub v_max: f64,
}

/// Coefficient dataset: columns site_id, s1, s2, z1..zK, with the basis in
/// the sidecar.
pub fn write_dataset(
    path: &Path,
    ids: &[String],
    ds: &SpatialFunctionalDataset,
    sidecar: &DatasetSidecar,
) -> CliResult<()> {
    let k = ds.basis().len();
    let mut out = String::from("site_id,s1,s2");
    for j in 1..=k {
        out.push_str(&format!(",z{j}"));
    }
    out.push('\n');
    for i in 0..ds.n() {
        let p = ds.locs().point(i);
        out.push_str(&ids[i]);
        out.push_str(&format!(",{},{}", fmt_float(p[0]), fmt_float(p[1])));
        for j in 0..k {
            out.push_str(&format!(",{}", fmt_float(ds.coeffs()[(i, j)])));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(sidecar).expect("serializable") + "\n",
    )?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> CliResult<(Vec<String>, SpatialFunctionalDataset, DatasetSidecar)> {
    let sidecar_file = sidecar_path(path);
    let sidecar: DatasetSidecar = serde_json::from_str(
        &fs::read_to_string(&sidecar_file)
            .map_err(|e| CliError::input(format!("{}: {e}", sidecar_file.display())))?,
    )
    .map_err(|e| CliError::input(format!("{}: {e}", sidecar_file.display())))?;
    let basis = Arc::new(sidecar.basis.build()?);
    let k = basis.len();

    let lines = read_lines(path)?;
    let mut iter = lines.iter().enumerate();
    let Some((_, header)) = iter.next() else {
        return Err(CliError::input(format!("{}: empty file", path.display())));
    };
    let expected_fields = 3 + k;
    if split(header).len() != expected_fields {
        return Err(CliError::at_line(
            path,
            1,
            format!("expected {expected_fields} columns for a size-{k} basis"),
        ));
    }
    let mut ids = Vec::new();
    let mut points = Vec::new();
    let mut coeff_rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in iter {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split(line);
        if fields.len() != expected_fields {
            return Err(CliError::at_line(
                path,
                lineno,
                format!("expected {expected_fields} fields, found {}", fields.len()),
            ));
        }
        ids.push(fields[0].trim().to_owned());
        points.push([
            parse_float(path, lineno, "s1", fields[1])?,
            parse_float(path, lineno, "s2", fields[2])?,
        ]);
        let mut row = Vec::with_capacity(k);
        for (j, raw) in fields[3..].iter().enumerate() {
            row.push(parse_float(path, lineno, &format!("z{}", j + 1), raw)?);
        }
        coeff_rows.push(row);
    }
    if ids.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    let n = ids.len();
    let coeffs = DMatrix::from_fn(n, k, |i, j| coeff_rows[i][j]);
    let ds = SpatialFunctionalDataset::new(LocationSet::new(points)?, basis, coeffs)?;
    Ok((ids, ds, sidecar))
}

/// Prediction targets: columns s1, s2.
pub fn read_targets(path: &Path) -> CliResult<Vec<[f64; 2]>> {
    let lines = read_lines(path)?;
    let mut iter = lines.iter().enumerate();
    let Some((_, header)) = iter.next() else {
        return Err(CliError::input(format!("{}: empty file", path.display())));
    };
    if split(header) != ["s1", "s2"] {
        return Err(CliError::at_line(path, 1, "expected header `s1,s2`"));
    }
    let mut targets = Vec::new();
    for (idx, line) in iter {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split(line);
        if fields.len() != 2 {
            return Err(CliError::at_line(
                path,
                lineno,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        targets.push([
            parse_float(path, lineno, "s1", fields[0])?,
            parse_float(path, lineno, "s2", fields[1])?,
        ]);
    }
    if targets.is_empty() {
        return Err(CliError::input(format!("{}: no targets", path.display())));
    }
    Ok(targets)
}

/// One observed point of one time slice.
pub struct SliceSample {
    pub t: u64,
    pub location: [f64; 2],
    pub value: f64,
}

/// Scattered surface observations: columns t, s1, s2, value.
pub fn read_slice_samples(path: &Path) -> CliResult<Vec<SliceSample>> {
    let lines = read_lines(path)?;
    let mut iter = lines.iter().enumerate();
    let Some((_, header)) = iter.next() else {
        return Err(CliError::input(format!("{}: empty file", path.display())));
    };
    if split(header) != ["t", "s1", "s2", "value"] {
        return Err(CliError::at_line(path, 1, "expected header `t,s1,s2,value`"));
    }
    let mut rows = Vec::new();
    for (idx, line) in iter {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split(line);
        if fields.len() != 4 {
            return Err(CliError::at_line(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        rows.push(SliceSample {
            t: fields[0]
                .trim()
                .parse::<u64>()
                .map_err(|_| CliError::at_line(path, lineno, format!("bad t value `{}`", fields[0])))?,
            location: [
                parse_float(path, lineno, "s1", fields[1])?,
                parse_float(path, lineno, "s2", fields[2])?,
            ],
            value: parse_float(path, lineno, "value", fields[3])?,
        });
    }
    if rows.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

/// Surface-series sidecar: the basis and the affine map from the original
/// spatial rectangle onto the unit square.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSidecar {
    pub basis: SurfaceBasisDescriptor,
    pub s1_min: f64,
    pub s1_max: f64,
    pub s2_min: f64,
    pub s2_max: f64,
}

impl SurfaceSidecar {
    pub fn to_unit(&self, s: [f64; 2]) -> [f64; 2] {
        [
            (s[0] - self.s1_min) / (self.s1_max - self.s1_min),
            (s[1] - self.s2_min) / (self.s2_max - self.s2_min),
        ]
    }

    pub fn to_original(&self, u: [f64; 2]) -> [f64; 2] {
        [
            self.s1_min + u[0] * (self.s1_max - self.s1_min),
            self.s2_min + u[1] * (self.s2_max - self.s2_min),
        ]
    }
}

/// Surface coefficient series: columns t, b1..bM, basis in the sidecar.
pub fn write_surfaces(
    path: &Path,
    times: &[u64],
    sts: &SurfaceTimeSeries,
    sidecar: &SurfaceSidecar,
) -> CliResult<()> {
    let m = sts.basis().len();
    let mut out = String::from("t");
    for j in 1..=m {
        out.push_str(&format!(",b{j}"));
    }
    out.push('\n');
    for (row, &t) in times.iter().enumerate() {
        out.push_str(&t.to_string());
        for j in 0..m {
            out.push_str(&format!(",{}", fmt_float(sts.coeffs()[(row, j)])));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(sidecar).expect("serializable") + "\n",
    )?;
    Ok(())
}

pub fn read_surfaces(path: &Path) -> CliResult<(Vec<u64>, SurfaceTimeSeries, SurfaceSidecar)> {
    let sidecar_file = sidecar_path(path);
    let sidecar: SurfaceSidecar = serde_json::from_str(
        &fs::read_to_string(&sidecar_file)
            .map_err(|e| CliError::input(format!("{}: {e}", sidecar_file.display())))?,
    )
    .map_err(|e| CliError::input(format!("{}: {e}", sidecar_file.display())))?;
    let basis = Arc::new(sidecar.basis.build()?);
    let m = basis.len();

    let lines = read_lines(path)?;
    let mut iter = lines.iter().enumerate();
    let Some((_, header)) = iter.next() else {
        return Err(CliError::input(format!("{}: empty file", path.display())));
    };
    if split(header).len() != m + 1 {
        return Err(CliError::at_line(
            path,
            1,
            format!("expected {} columns for a size-{m} basis", m + 1),
        ));
    }
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in iter {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split(line);
        if fields.len() != m + 1 {
            return Err(CliError::at_line(
                path,
                lineno,
                format!("expected {} fields, found {}", m + 1, fields.len()),
            ));
        }
        times.push(fields[0].trim().parse::<u64>().map_err(|_| {
            CliError::at_line(path, lineno, format!("bad t value `{}`", fields[0]))
        })?);
        let mut row = Vec::with_capacity(m);
        for (j, raw) in fields[1..].iter().enumerate() {
            row.push(parse_float(path, lineno, &format!("b{}", j + 1), raw)?);
        }
        rows.push(row);
    }
    if times.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    let coeffs = DMatrix::from_fn(times.len(), m, |i, j| rows[i][j]);
    let sts = SurfaceTimeSeries::new(basis, coeffs)?;
    Ok((times, sts, sidecar))
}

/// Write a raster of surface evaluations in original coordinates:
/// columns t, s1, s2, value.
pub fn write_raster(
    path: &Path,
    rows: &[(u64, [f64; 2], f64)],
) -> CliResult<()> {
    let mut out = String::from("t,s1,s2,value\n");
    for &(t, s, value) in rows {
        out.push_str(&format!(
            "{t},{},{},{}\n",
            fmt_float(s[0]),
            fmt_float(s[1]),
            fmt_float(value)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
