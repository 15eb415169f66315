//! Gauss–Legendre quadrature: fixed composite rules and a bisecting adaptive
//! integrator with caller-supplied breakpoints.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the rule by Newton iteration on P_n.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over [a, b] with a single panel.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Maps the rule onto [a, b] and returns (abscissae, weights).
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, w * half))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared 16-point rule.
pub fn gl16() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(16))
}

/// Composite Gauss–Legendre rule: `panels` equal panels of `nodes` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub nodes: usize,
    pub panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            nodes: 16,
            panels: 4,
        }
    }
}

impl QuadratureSpec {
    /// Panel count such that the panel width stays below `tau_ac / 4`;
    /// the default rule when `tau_ac` is zero (impulsive forcing).
    pub fn for_correlation_time(tau: f64, tau_ac: f64) -> Self {
        if !(tau_ac > 0.0) {
            return Self::default();
        }
        let panels = ((4.0 * tau / tau_ac).floor() as usize + 1).clamp(1, 1 << 16);
        Self { nodes: 16, panels }
    }

    pub fn refined(self, factor: usize) -> Self {
        Self {
            nodes: self.nodes,
            panels: self.panels * factor,
        }
    }

    /// Abscissae and weights of the composite rule on [a, b].
    pub fn points(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let rule = if self.nodes == 16 {
            gl16().clone()
        } else {
            GaussLegendre::new(self.nodes)
        };
        let width = (b - a) / self.panels as f64;
        let mut out = Vec::with_capacity(self.nodes * self.panels);
        for p in 0..self.panels {
            let lo = a + p as f64 * width;
            out.extend(rule.mapped(lo, lo + width));
        }
        out
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.points(a, b).into_iter().map(|(x, w)| w * f(x)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("adaptive quadrature did not reach tolerance {tol:e} (estimate {estimate:e}, error {error:e})")]
pub struct QuadratureError {
    pub tol: f64,
    pub estimate: f64,
    pub error: f64,
}

/// Adaptive Gauss–Legendre integration on [a, b].
///
/// The interval is first cut at every breakpoint inside (a, b); each piece is
/// bisected until the 16-point panel and its two halves agree to `rel_tol`
/// (relative to the running magnitude) or `abs_tol`.
pub fn adaptive<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    breakpoints: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    mut f: F,
) -> Result<f64, QuadratureError> {
    if b <= a {
        return Ok(0.0);
    }
    let mut cuts: Vec<f64> = vec![a];
    let mut inner: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x > a && x < b)
        .collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.extend(inner);
    cuts.push(b);
    let rule = gl16();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let whole = rule.integrate(lo, hi, &mut f);
        let (v, e) = refine(rule, lo, hi, whole, rel_tol, abs_tol, 0, &mut f);
        total += v;
        total_err += e;
    }
    let tol = abs_tol.max(rel_tol * total.abs());
    if total_err > 10.0 * tol || !total.is_finite() {
        return Err(QuadratureError {
            tol,
            estimate: total,
            error: total_err,
        });
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    rel_tol: f64,
    abs_tol: f64,
    depth: usize,
    f: &mut F,
) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, &mut *f);
    let right = rule.integrate(m, b, &mut *f);
    let sum = left + right;
    let err = (sum - whole).abs();
    if err <= abs_tol.max(rel_tol * sum.abs()) || depth >= 48 || m <= a || m >= b {
        return (sum, err);
    }
    let (l, el) = refine(rule, a, m, left, rel_tol, 0.5 * abs_tol, depth + 1, f);
    let (r, er) = refine(rule, m, b, right, rel_tol, 0.5 * abs_tol, depth + 1, f);
    (l + r, el + er)
}

/// Geometric breakpoints between `lo > 0` and `hi`, `per_decade` per factor of ten.
pub fn geometric_breaks(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    if lo <= 0.0 || hi <= lo {
        return Vec::new();
    }
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).ceil().max(1.0) as usize;
    let ratio = (hi / lo).powf(1.0 / n as f64);
    (0..=n).map(|k| lo * ratio.powi(k as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_point_rule_is_exact_for_degree_31() {
        let rule = GaussLegendre::new(16);
        let v = rule.integrate(0.0, 1.0, |x| x.powi(31));
        assert!((v - 1.0 / 32.0).abs() < 1e-15);
        let wsum: f64 = rule.weights.iter().sum();
        assert!((wsum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn composite_rule_integrates_cosine() {
        let spec = QuadratureSpec {
            nodes: 16,
            panels: 8,
        };
        let v = spec.integrate(0.0, PI, f64::sin);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_kinks_and_peaks() {
        let v = adaptive(-1.0, 1.0, &[0.0], 1e-12, 1e-15, |x: f64| x.abs()).unwrap();
        assert!((v - 1.0).abs() < 1e-13);
        // 1/(x^2 + eps^2) peaked at 0
        let eps = 1e-4;
        let v = adaptive(-1.0, 1.0, &[0.0], 1e-11, 1e-14, |x| 1.0 / (x * x + eps * eps)).unwrap();
        let exact = 2.0 * (1.0 / eps).atan() / eps;
        assert!(((v - exact) / exact).abs() < 1e-9);
    }

    #[test]
    fn panel_count_resolves_correlation_time() {
        let spec = QuadratureSpec::for_correlation_time(2.0, 0.5);
        assert!(2.0 / (spec.panels as f64) < 0.5 / 4.0);
    }
}
