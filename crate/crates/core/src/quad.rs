//! Composite Simpson quadrature on [0, 1] and on arbitrary breakpoint grids.

/// A quadrature rule: abscissae and matching weights.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    /// Integrate a function with this rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| w * f(v))
            .sum()
    }
}

/// Composite Simpson rule with `panels` subintervals (rounded up to even)
/// on [a, b].
pub fn simpson(a: f64, b: f64, panels: usize) -> QuadRule {
    let m = panels.max(2).next_multiple_of(2);
    let h = (b - a) / m as f64;
    let mut points = Vec::with_capacity(m + 1);
    let mut weights = Vec::with_capacity(m + 1);
    for i in 0..=m {
        points.push(a + h * i as f64);
        let w = if i == 0 || i == m {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        weights.push(w * h / 3.0);
    }
    QuadRule { points, weights }
}

/// Composite Simpson rule aligned to a breakpoint grid: each span between
/// consecutive distinct breakpoints receives a share of roughly `total_points`
/// proportional to its length. Piecewise-polynomial integrands are then never
/// integrated across a breakpoint.
pub fn simpson_on_spans(breaks: &[f64], total_points: usize) -> QuadRule {
    let mut spans = Vec::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            spans.push((w[0], w[1]));
        }
    }
    if spans.is_empty() {
        return simpson(breaks[0], *breaks.last().unwrap(), total_points);
    }
    let length: f64 = spans.iter().map(|(a, b)| b - a).sum();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (a, b) in spans {
        let share = ((total_points as f64 - 1.0) * (b - a) / length).ceil() as usize;
        let rule = simpson(a, b, share.max(2));
        points.extend(rule.points);
        weights.extend(rule.weights);
    }
    QuadRule { points, weights }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule with `nodes_per_span` nodes on every span between
/// consecutive distinct breakpoints. Exact for piecewise polynomials of
/// degree up to `2 * nodes_per_span - 1` on the spans.
pub fn gauss_legendre_on_spans(breaks: &[f64], nodes_per_span: usize) -> QuadRule {
    let (xs, ws) = gauss_legendre_unit(nodes_per_span.max(1));
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let half = 0.5 * (w[1] - w[0]);
        for (&x, &wt) in xs.iter().zip(&ws) {
            points.push(mid + half * x);
            weights.push(half * wt);
        }
    }
    QuadRule { points, weights }
}
