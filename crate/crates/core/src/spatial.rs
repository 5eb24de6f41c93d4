//! Planar locations: pairwise Euclidean distances and distance-class binning.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Observation sites in the plane, coordinates in kilometres.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationSet {
    points: Vec<[f64; 2]>,
}

impl LocationSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("location set is empty".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        Ok(LocationSet { points })
    }

    /// Regular grid with the given spacing, row by row from the origin.
    pub fn grid(nx: usize, ny: usize, spacing: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidInput("empty grid".into()));
        }
        let mut points = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                points.push([i as f64 * spacing, j as f64 * spacing]);
            }
        }
        LocationSet::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    /// Duplicate locations are permitted but worth flagging: kriging with a
    /// zero nugget cannot handle them.
    pub fn has_duplicates(&self) -> bool {
        let n = self.points.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.points[i] == self.points[j] {
                    return true;
                }
            }
        }
        false
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Symmetric matrix of pairwise Euclidean distances.
pub fn pairwise_distances(locs: &LocationSet) -> DMatrix<f64> {
    let n = locs.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = distance(locs.point(i), locs.point(j));
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// Distance classes: half-open bins `(low, high]` over the pair distances,
/// with zero-distance pairs excluded.
#[derive(Debug, Clone)]
pub struct DistanceBins {
    pub edges: Vec<f64>,
    /// Bin midpoints.
    pub centers: Vec<f64>,
    /// Mean pair distance per bin (zero for empty bins); the representative
    /// distance for fitting, which matters on gridded data where the pair
    /// distances sit far from the midpoint.
    pub mean_distances: Vec<f64>,
    /// Index pairs `(i, j)`, `i < j`, per bin.
    pub pairs: Vec<Vec<(usize, usize)>>,
    /// Pairs at exactly zero distance (coincident locations).
    pub zero_pairs: Vec<(usize, usize)>,
}

impl DistanceBins {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.pairs.iter().map(Vec::len).collect()
    }
}

/// Bin all location pairs into `m` equal-width distance classes covering
/// `(0, max_fraction * max_distance]`. Pairs beyond the cutoff and pairs at
/// zero distance are excluded from the bins.
pub fn bin_pairs(distances: &DMatrix<f64>, m: usize, max_fraction: f64) -> Result<DistanceBins> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one distance bin".into()));
    }
    if !(max_fraction > 0.0 && max_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "max_fraction must lie in (0, 1], got {max_fraction}"
        )));
    }
    let n = distances.nrows();
    let mut max_dist: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            max_dist = max_dist.max(distances[(i, j)]);
        }
    }
    if max_dist <= 0.0 {
        return Err(Error::InvalidInput(
            "all pairwise distances are zero; nothing to bin".into(),
        ));
    }
    let cutoff = max_fraction * max_dist;
    let width = cutoff / m as f64;
    let edges: Vec<f64> = (0..=m).map(|j| width * j as f64).collect();
    let centers: Vec<f64> = (0..m).map(|j| width * (j as f64 + 0.5)).collect();
    let mut pairs = vec![Vec::new(); m];
    let mut sums = vec![0.0; m];
    let mut zero_pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distances[(i, j)];
            if d == 0.0 {
                zero_pairs.push((i, j));
                continue;
            }
            if d > cutoff {
                continue;
            }
            // half-open (low, high]: index by ceil(d / width) - 1
            let idx = ((d / width).ceil() as usize).clamp(1, m) - 1;
            debug_assert!(d > edges[idx] && d <= edges[idx + 1] + 1e-12);
            pairs[idx].push((i, j));
            sums[idx] += d;
        }
    }
    let mean_distances = sums
        .iter()
        .zip(&pairs)
        .map(|(&s, p)| if p.is_empty() { 0.0 } else { s / p.len() as f64 })
        .collect();
    Ok(DistanceBins {
        edges,
        centers,
        mean_distances,
        pairs,
        zero_pairs,
    })
}
