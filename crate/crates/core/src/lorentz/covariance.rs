//! Covariance of the ionic potential and of its field, in Debye units.
//!
//! `C̄(d) = ∫ ḡ(|y|) ḡ(|y − d|) d³y` and `𝔠 = −∇∇C̄` are evaluated in bipolar
//! coordinates `p = r₁ + r₂`, `s = (r₁ − r₂)/d`, where the volume element is
//! `(π/d)·r₁r₂ dp ds` and the azimuth has been integrated out.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use std::f64::consts::PI;

use super::potential::Potential;
use super::spline::CubicSpline;
use super::LorentzError;
use crate::quad::{adaptive, GaussLegendre};

/// `C̄(d)`, `−C̄′(d)/d` and `−C̄″(d)` at one separation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CovarianceValues {
    pub c: f64,
    pub perp: f64,
    pub par: f64,
}

/// Number of tabulation points.
pub const TABLE_POINTS: usize = 2048;

/// Radii at which the integrand changes smoothness or scale.
fn radial_breaks(pot: &Potential) -> Vec<f64> {
    let a = 1.0 / pot.lambda;
    let mut out = vec![a];
    let mut r = 2.0 * a;
    while r < 1.0 {
        out.push(r);
        r *= 2.0;
    }
    out.push(1.0);
    let rs = pot.support();
    let mut r = 1.5;
    while r < rs {
        out.push(r);
        r += 0.5;
    }
    out.push(rs);
    out
}

fn sorted_cuts(lo: f64, hi: f64, pts: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut cuts: Vec<f64> = pts.filter(|&x| x > lo && x < hi).collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * y.abs().max(1e-300));
    cuts
}

/// Values at `d = 0` by radial quadrature.
fn origin_values(pot: &Potential) -> Result<CovarianceValues, LorentzError> {
    let breaks = radial_breaks(pot);
    let rs = pot.support();
    let c = adaptive(0.0, rs, &breaks, 1e-12, 0.0, |r| {
        let g = pot.value(r);
        4.0 * PI * r * r * g * g
    })?;
    let f = adaptive(0.0, rs, &breaks, 1e-12, 0.0, |r| {
        let g1 = pot.deriv(r);
        4.0 * PI / 3.0 * r * r * g1 * g1
    })?;
    Ok(CovarianceValues { c, perp: f, par: f })
}

/// Composite Gauss–Legendre evaluation of all three components at `d > 0`
/// with `nodes` points per panel.
pub fn bipolar_components(pot: &Potential, d: f64, nodes: usize) -> CovarianceValues {
    let rs = pot.support();
    if d >= 2.0 * rs {
        return CovarianceValues::default();
    }
    let rule = GaussLegendre::new(nodes);
    let rho = radial_breaks(pot);
    let s_cuts = sorted_cuts(
        0.0,
        1.0,
        rho.iter().flat_map(|&r| {
            [(2.0 * r - d) / d, (d - 2.0 * r) / d, (rs - r) / d]
        }),
    );
    let mut acc = CovarianceValues::default();
    for sw in s_cuts.windows(2) {
        for (s, ws) in rule.mapped(sw[0], sw[1]) {
            let ds = d * s;
            let p_hi = 2.0 * rs - ds;
            if p_hi <= d {
                continue;
            }
            let p_cuts = sorted_cuts(d, p_hi, rho.iter().flat_map(|&r| [2.0 * r - ds, 2.0 * r + ds]));
            let mut inner = CovarianceValues::default();
            for pw in p_cuts.windows(2) {
                for (p, wp) in rule.mapped(pw[0], pw[1]) {
                    let r1 = 0.5 * (p + ds);
                    let r2 = 0.5 * (p - ds);
                    let (g1, g1p, _) = pot.eval(r1);
                    let (g2, g2p, _) = pot.eval(r2);
                    let gg = g1p * g2p;
                    inner.c += wp * r1 * g1 * r2 * g2;
                    inner.perp += wp * gg * (p * p - d * d) * (1.0 - s * s);
                    inner.par += wp * gg * (p * p * s * s - d * d);
                }
            }
            acc.c += ws * inner.c;
            acc.perp += ws * inner.perp;
            acc.par += ws * inner.par;
        }
    }
    // Symmetric in s: the [0, 1] half counts twice.
    CovarianceValues {
        c: 2.0 * PI * acc.c,
        perp: 2.0 * PI / 8.0 * acc.perp,
        par: 2.0 * PI / 4.0 * acc.par,
    }
}

/// `C̄_Λ(d̄)`, checked by self-convergence between 8- and 16-point panels.
pub fn potential_covariance(dbar: f64, pot: &Potential) -> Result<f64, LorentzError> {
    if !(dbar >= 0.0) {
        return Err(LorentzError::InvalidParams(format!("dbar must be non-negative, got {dbar}")));
    }
    if dbar == 0.0 {
        return Ok(origin_values(pot)?.c);
    }
    let coarse = bipolar_components(pot, dbar, 8).c;
    let fine = bipolar_components(pot, dbar, 16).c;
    let scale = fine.abs().max(1e-12);
    if (coarse - fine).abs() > 1e-6 * scale {
        return Err(LorentzError::Quadrature(format!(
            "C at d={dbar}: {coarse:e} vs {fine:e}"
        )));
    }
    Ok(fine)
}

/// Tabulated `C̄`, `𝔠_⊥ = −C̄′/d` and `𝔠_∥ = −C̄″`, splined in `ln d`.
#[derive(Debug, Clone)]
pub struct IsotropicCovariance {
    potential: Potential,
    origin: CovarianceValues,
    d_min: f64,
    support: f64,
    c: CubicSpline,
    perp: CubicSpline,
    par: CubicSpline,
}

impl IsotropicCovariance {
    /// Tabulates on [`TABLE_POINTS`] separations, log-spaced above `10⁻³/Λ`
    /// and including every separation where two branch radii touch.
    pub fn tabulate(pot: &Potential) -> Result<Self, LorentzError> {
        Self::tabulate_with(pot, TABLE_POINTS)
    }

    pub fn tabulate_with(pot: &Potential, points: usize) -> Result<Self, LorentzError> {
        if points < 16 {
            return Err(LorentzError::InvalidParams(format!("table needs at least 16 points, got {points}")));
        }
        let origin = origin_values(pot)?;
        let support = 2.0 * pot.support();
        let d_min = 1e-3 / pot.lambda;
        let joins = pot.joins();
        let mut kinks = Vec::new();
        for &b1 in &joins {
            for &b2 in &joins {
                kinks.push(b1 + b2);
                kinks.push((b1 - b2).abs());
            }
        }
        kinks.retain(|&k| k > d_min && k < support);
        let n_log = points.saturating_sub(kinks.len() + 1).max(8);
        let ratio = (support / d_min).powf(1.0 / (n_log - 1) as f64);
        let mut ds: Vec<f64> = (0..n_log).map(|k| d_min * ratio.powi(k as i32)).collect();
        *ds.last_mut().unwrap() = support;
        ds.extend(kinks);
        ds.sort_by(f64::total_cmp);
        ds.dedup_by(|x, y| (*x / *y - 1.0).abs() < 1e-9);
        let vals: Vec<CovarianceValues> = ds
            .par_iter()
            .map(|&d| {
                if d >= support {
                    CovarianceValues::default()
                } else {
                    bipolar_components(pot, d, 8)
                }
            })
            .collect();
        if vals.iter().any(|v| !(v.c.is_finite() && v.perp.is_finite() && v.par.is_finite())) {
            return Err(LorentzError::Quadrature("non-finite covariance table entry".into()));
        }
        let u: Vec<f64> = ds.iter().map(|d| d.ln()).collect();
        let col = |f: fn(&CovarianceValues) -> f64| CubicSpline::new(u.clone(), vals.iter().map(f).collect());
        Ok(Self {
            potential: *pot,
            origin,
            d_min,
            support,
            c: col(|v| v.c),
            perp: col(|v| v.perp),
            par: col(|v| v.par),
        })
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    /// `2λ_{D+}`: everything vanishes beyond it.
    pub fn support(&self) -> f64 {
        self.support
    }

    /// Below this separation the small-`d` expansion replaces the table.
    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    /// Tabulation separations, ascending, excluding zero.
    pub fn knots(&self) -> Vec<f64> {
        self.c.knots().iter().map(|u| u.exp()).collect()
    }

    /// All three components at `|d|`.
    pub fn components(&self, d: f64) -> CovarianceValues {
        let d = d.abs();
        if d >= self.support {
            return CovarianceValues::default();
        }
        if d < self.d_min {
            let o = self.origin;
            return CovarianceValues {
                c: o.c - 0.5 * o.perp * d * d,
                ..o
            };
        }
        let u = d.ln();
        CovarianceValues {
            c: self.c.eval(u),
            perp: self.perp.eval(u),
            par: self.par.eval(u),
        }
    }

    pub fn value(&self, d: f64) -> f64 {
        self.components(d).c
    }

    /// `C̄′(d)`, odd in d.
    pub fn deriv(&self, d: f64) -> f64 {
        -d * self.components(d).perp
    }

    /// `C̄″(d)`.
    pub fn second(&self, d: f64) -> f64 {
        -self.components(d).par
    }

    /// Integral of `λⁿ·f(λ)` over `[0, support]` for a tabulated component,
    /// with an 8-point rule on every knot interval.
    pub fn moment(&self, n: i32, f: impl Fn(&CovarianceValues) -> f64) -> f64 {
        let rule = GaussLegendre::new(8);
        let mut edges = vec![0.0];
        edges.extend(self.knots());
        edges
            .windows(2)
            .map(|w| {
                rule.mapped(w[0], w[1])
                    .map(|(x, wx)| wx * x.powi(n) * f(&self.components(x)))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// `𝔠(Δ) = 𝔠_⊥(I − Δ̂Δ̂) + 𝔠_∥ Δ̂Δ̂`, with the isotropic limit at `Δ = 0`.
pub fn field_covariance(delta: &Vector3<f64>, cov: &IsotropicCovariance) -> Matrix3<f64> {
    let d = delta.norm();
    let v = cov.components(d);
    if d == 0.0 {
        return Matrix3::identity() * v.perp;
    }
    let e = delta / d;
    let ee = e * e.transpose();
    (Matrix3::identity() - ee) * v.perp + ee * v.par
}

/// `I_n(e) = ∫ |λ|ⁿ 𝔠(λe) dλ` over the real line in closed form,
/// `−2(∫₀^∞ λ^{n−1} C̄′ dλ)(I − (n+1)ee)`, with the radial moment reduced to
/// `C̄` itself whenever `n ≥ 1`.
pub fn closed_form_in(n: u32, e: &Vector3<f64>, cov: &IsotropicCovariance) -> Matrix3<f64> {
    let e = e.normalize();
    let moment = match n {
        0 => -cov.moment(0, |v| v.perp),
        1 => -cov.value(0.0),
        _ => -((n - 1) as f64) * cov.moment(n as i32 - 2, |v| v.c),
    };
    (Matrix3::identity() - e * e.transpose() * (n + 1) as f64) * (-2.0 * moment)
}

/// `∫_{−L}^{L} |λ|ⁿ 𝔠(λe) dλ` by direct quadrature of [`field_covariance`].
pub fn direct_in(n: u32, e: &Vector3<f64>, cov: &IsotropicCovariance, half_width: f64) -> Matrix3<f64> {
    let e = e.normalize();
    let rule = GaussLegendre::new(8);
    let mut edges = vec![0.0];
    edges.extend(cov.knots().into_iter().filter(|&k| k < half_width));
    edges.push(half_width);
    let mut acc = Matrix3::zeros();
    for w in edges.windows(2) {
        for (x, wx) in rule.mapped(w[0], w[1]) {
            let m_plus = field_covariance(&(e * x), cov);
            let m_minus = field_covariance(&(e * -x), cov);
            acc += (m_plus + m_minus) * (wx * x.powi(n as i32));
        }
    }
    acc
}
