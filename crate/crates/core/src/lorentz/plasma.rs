//! Drift and diffusion of the Lorentz plasma model, with its energy production.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

use super::covariance::{CovarianceValues, IsotropicCovariance};
use super::potential::{Potential, Profile};
use super::spline::CubicSpline;
use super::LorentzError;
use crate::phase::{lie_derivative_tensor, PhasePoint, SymmetricTensorField};
use crate::quad::{adaptive, geometric_breaks, gl16};

/// Physical parameters in units `λ_D = ω_p = v_th = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzParams {
    /// Plasma parameter Λ; also the ion density `n_i`.
    pub lambda: f64,
    /// Coarse-graining step.
    pub tau: f64,
    /// Electron charge-to-mass ratio.
    pub qm: f64,
    /// Support of the ion potential is `1 + delta_reg`.
    pub delta_reg: f64,
    pub profile: Profile,
    /// Length scale `L` of the distribution function.
    pub length_scale: f64,
}

impl Default for LorentzParams {
    fn default() -> Self {
        Self {
            lambda: 20.0,
            tau: 10.0,
            qm: -1.0,
            delta_reg: 0.1,
            profile: Profile::Yukawa,
            length_scale: 100.0,
        }
    }
}

impl LorentzParams {
    pub fn validate(&self) -> Result<(), LorentzError> {
        let bad = |m: String| Err(LorentzError::InvalidParams(m));
        if !(self.lambda > 1.0 && self.lambda.is_finite()) {
            return bad(format!("Lambda must exceed 1, got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.eps0() >= 1.0 {
            return bad(format!("eps0 = 1/tau must be below 1, got {}", self.eps0()));
        }
        if !self.qm.is_finite() {
            return bad("qm must be finite".into());
        }
        if !(self.length_scale > 0.0) {
            return bad(format!("length scale must be positive, got {}", self.length_scale));
        }
        Ok(())
    }

    /// `ε₀ = 1/(τ ω_p)`.
    pub fn eps0(&self) -> f64 {
        1.0 / self.tau
    }

    /// `ε₁ = v_th τ / L`.
    pub fn eps1(&self) -> f64 {
        self.tau / self.length_scale
    }

    pub fn ion_density(&self) -> f64 {
        self.lambda
    }

    /// Potential energy of one ion is `qm·ḡ/(4πΛ)`.
    pub fn ion_amplitude(&self) -> f64 {
        1.0 / (4.0 * PI * self.lambda)
    }

    /// `qm² n_i A²`: multiplies the normalised covariances.
    pub fn kappa(&self) -> f64 {
        let a = self.ion_amplitude();
        self.qm * self.qm * self.ion_density() * a * a
    }

    /// `T = Λ/ω_p`, the time unit of the normalised equations.
    pub fn slow_time(&self) -> f64 {
        self.lambda
    }

    /// Parameters with `ε₀ = ε₁ = 1/√Λ`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            lambda,
            tau: lambda.sqrt(),
            length_scale: lambda,
            ..*self
        }
    }

    pub fn potential(&self) -> Result<Potential, LorentzError> {
        Potential::new(self.lambda, self.delta_reg, self.profile, true)
    }
}

/// Time weights of the three blocks of `D_HL`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Weight {
    Vv,
    Xv,
    Xx,
    /// `t(τ − t)`, for the mean second-order kick.
    S2,
    /// `(t/τ)(1 − t/τ)`.
    Chi,
}

impl Weight {
    fn at(self, t: f64, tau: f64) -> f64 {
        match self {
            Weight::Vv => (tau - t) / tau,
            Weight::Xv => 0.5 * (tau - t),
            Weight::Xx => (tau * tau * tau / 3.0 - 0.5 * tau * tau * t + t * t * t / 6.0) / tau,
            Weight::S2 => t * (tau - t),
            Weight::Chi => (t / tau) * (1.0 - t / tau),
        }
    }
}

/// Perpendicular and parallel parts of a tensor `a(I − v̂v̂) + b v̂v̂`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Split {
    pub perp: f64,
    pub par: f64,
}

impl Split {
    fn matrix(&self, vhat: &Vector3<f64>) -> Matrix3<f64> {
        let pp = vhat * vhat.transpose();
        (Matrix3::identity() - pp) * self.perp + pp * self.par
    }
}

/// The Lorentz-plasma calculus for one parameter set.
#[derive(Debug, Clone)]
pub struct Lorentz {
    params: LorentzParams,
    cov: Arc<IsotropicCovariance>,
    rel_tol: f64,
}

impl Lorentz {
    pub fn new(params: LorentzParams) -> Result<Self, LorentzError> {
        params.validate()?;
        let cov = IsotropicCovariance::tabulate(&params.potential()?)?;
        Ok(Self {
            params,
            cov: Arc::new(cov),
            rel_tol: 1e-10,
        })
    }

    /// Reuses a table; its potential must match `params`.
    pub fn with_covariance(params: LorentzParams, cov: Arc<IsotropicCovariance>) -> Result<Self, LorentzError> {
        params.validate()?;
        if *cov.potential() != params.potential()? {
            return Err(LorentzError::InvalidParams("covariance table built for another potential".into()));
        }
        Ok(Self {
            params,
            cov,
            rel_tol: 1e-10,
        })
    }

    /// Relative tolerance of the time quadratures.
    pub fn with_tolerance(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn params(&self) -> &LorentzParams {
        &self.params
    }

    pub fn covariance(&self) -> &IsotropicCovariance {
        &self.cov
    }

    fn speed(v: &Vector3<f64>) -> Result<f64, LorentzError> {
        let s = v.norm();
        if !(s > 0.0 && s.is_finite()) {
            return Err(LorentzError::InvalidParams(format!("|v| must be positive and finite, got {s}")));
        }
        Ok(s)
    }

    /// `∫₀^τ w(t) f(𝔠̄(s t)) dt`, truncated where the covariance vanishes.
    fn time_integral(&self, speed: f64, w: Weight, f: impl Fn(&CovarianceValues) -> f64) -> Result<f64, LorentzError> {
        let tau = self.params.tau;
        let end = tau.min(self.cov.support() / speed);
        let pot = self.cov.potential();
        let mut breaks = geometric_breaks(self.cov.d_min() / speed, end, 4);
        for &b1 in &pot.joins() {
            for &b2 in &pot.joins() {
                breaks.push((b1 + b2) / speed);
                breaks.push((b1 - b2).abs() / speed);
            }
        }
        let g = |t: f64| w.at(t, tau) * f(&self.cov.components(speed * t));
        // Tolerance relative to ∫|g|: the parallel component cancels.
        let mut cuts = vec![0.0];
        cuts.extend(breaks.iter().copied().filter(|&b| b > 0.0 && b < end));
        cuts.push(end);
        cuts.sort_by(f64::total_cmp);
        let scale: f64 = cuts.windows(2).map(|c| gl16().integrate(c[0], c[1], |t| g(t).abs())).sum();
        Ok(adaptive(0.0, end, &breaks, 0.0, self.rel_tol * scale, g)?)
    }

    fn split(&self, speed: f64, w: Weight) -> Result<Split, LorentzError> {
        Ok(Split {
            perp: self.time_integral(speed, w, |c| c.perp)?,
            par: self.time_integral(speed, w, |c| c.par)?,
        })
    }

    /// `⟨s₂⟩ = −½ qm² ∫₀^τ t(τ − t) tr 𝔠(v t) dt`.
    pub fn mean_s2(&self, v: &Vector3<f64>) -> Result<f64, LorentzError> {
        let s = Self::speed(v)?;
        let tr = self.time_integral(s, Weight::S2, |c| 2.0 * c.perp + c.par)?;
        Ok(-0.5 * self.params.kappa() * tr)
    }

    /// `χ(v) = ∫₀^{1/ε₀} ε₀λ(1 − ε₀λ) tr 𝔠̄(vλ) dλ`.
    pub fn chi(&self, v: &Vector3<f64>) -> Result<f64, LorentzError> {
        let s = Self::speed(v)?;
        self.time_integral(s, Weight::Chi, |c| 2.0 * c.perp + c.par)
    }

    /// `u_HL − u₀ = X_{⟨s₂⟩}/τ`: only the x-components are non-zero.
    pub fn drift_correction(&self, v: &Vector3<f64>) -> Result<[f64; 6], LorentzError> {
        let s = Self::speed(v)?;
        let h = 1e-4 * s;
        let vhat = v / s;
        let up = self.mean_s2(&(vhat * (s + h)))?;
        let dn = self.mean_s2(&(vhat * (s - h)))?;
        let g = vhat * ((up - dn) / (2.0 * h) / self.params.tau);
        Ok([g.x, g.y, g.z, 0.0, 0.0, 0.0])
    }

    /// The three block splits `(vv, xv, xx)` of `D_HL`, scaled by `qm² n_i A²`.
    pub fn blocks(&self, v: &Vector3<f64>) -> Result<[Split; 3], LorentzError> {
        let s = Self::speed(v)?;
        let k = self.params.kappa();
        let sc = |x: Split| Split {
            perp: k * x.perp,
            par: k * x.par,
        };
        Ok([
            sc(self.split(s, Weight::Vv)?),
            sc(self.split(s, Weight::Xv)?),
            sc(self.split(s, Weight::Xx)?),
        ])
    }

    /// `D_HL(v)` in `(x, v)` ordering.
    pub fn diffusion_tensor_hl(&self, v: &Vector3<f64>) -> Result<DMatrix<f64>, LorentzError> {
        let vhat = v / Self::speed(v)?;
        let [vv, xv, xx] = self.blocks(v)?;
        let mut d = DMatrix::zeros(6, 6);
        d.view_mut((0, 0), (3, 3)).copy_from(&xx.matrix(&vhat));
        d.view_mut((0, 3), (3, 3)).copy_from(&xv.matrix(&vhat));
        d.view_mut((3, 0), (3, 3)).copy_from(&xv.matrix(&vhat));
        d.view_mut((3, 3), (3, 3)).copy_from(&vv.matrix(&vhat));
        let trace = d.trace();
        let min = d.clone().symmetric_eigen().eigenvalues.min();
        if min < -1e-8 * trace.abs() {
            return Err(LorentzError::NotPsd {
                min_eigenvalue: min,
                trace,
            });
        }
        Ok(d)
    }

    fn vv_block(&self, v: &Vector3<f64>) -> Result<Matrix3<f64>, LorentzError> {
        let vhat = v / Self::speed(v)?;
        let s = Self::speed(v)?;
        let k = self.params.kappa();
        let x = self.split(s, Weight::Vv)?;
        Ok(Split {
            perp: k * x.perp,
            par: k * x.par,
        }
        .matrix(&vhat))
    }

    /// `∂_j D^{ij}` by central differences in v.
    pub fn diffusion_divergence(&self, v: &Vector3<f64>) -> Result<[f64; 6], LorentzError> {
        let h = 1e-4 * Self::speed(v)?;
        let mut out = [0.0; 6];
        for j in 0..3 {
            let mut e = Vector3::zeros();
            e[j] = h;
            let dp = self.diffusion_tensor_hl(&(v + e))?;
            let dm = self.diffusion_tensor_hl(&(v - e))?;
            for (i, o) in out.iter_mut().enumerate() {
                *o += (dp[(i, 3 + j)] - dm[(i, 3 + j)]) / (2.0 * h);
            }
        }
        Ok(out)
    }

    /// Mean displacement per unit time beyond free streaming,
    /// `(u_HL − u₀) + ∂_j D^{ij}`: what per-interval jump statistics measure.
    pub fn jump_drift(&self, v: &Vector3<f64>) -> Result<[f64; 6], LorentzError> {
        let a = self.drift_correction(v)?;
        let b = self.diffusion_divergence(v)?;
        Ok(std::array::from_fn(|i| a[i] + b[i]))
    }

    /// `div(D_HL·dH₀)` by central differences of `D_vv(v)·v`.
    pub fn energy_rate_numeric(&self, v: &Vector3<f64>) -> Result<f64, LorentzError> {
        let h = 1e-4 * Self::speed(v)?;
        let mut div = 0.0;
        for j in 0..3 {
            let mut e = Vector3::zeros();
            e[j] = h;
            let fp = self.vv_block(&(v + e))? * (v + e);
            let fm = self.vv_block(&(v - e))? * (v - e);
            div += (fp[j] - fm[j]) / (2.0 * h);
        }
        Ok(div)
    }

    /// Exact `div(D_HL·dH₀) = κ(C̄(0) − C̄(sτ) − sτ C̄′(sτ))/(s²τ)`.
    pub fn energy_rate_exact(&self, v: &Vector3<f64>) -> Result<f64, LorentzError> {
        let s = Self::speed(v)?;
        let tau = self.params.tau;
        let st = s * tau;
        let c = &self.cov;
        Ok(self.params.kappa() * (c.value(0.0) - c.value(st) - st * c.deriv(st)) / (s * s * tau))
    }

    /// `qm² C(0)/(|v|²τ)`, exact once `|v|τ` exceeds the covariance support.
    pub fn energy_rate_asymptotic(&self, v: &Vector3<f64>) -> Result<f64, LorentzError> {
        let s = Self::speed(v)?;
        Ok(self.params.kappa() * self.cov.value(0.0) / (s * s * self.params.tau))
    }
}

/// `ν(v) = lnΛ/(8πΛ|v|³)`.
pub fn lorentz_frequency(speed: f64, lambda: f64) -> f64 {
    lambda.ln() / (8.0 * PI * lambda * speed.powi(3))
}

/// `𝖴 = |v|² I − v vᵀ`.
pub fn projector_u(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() * v.dot(v) - v * v.transpose()
}

/// `D_L = ν(v) 𝖴` in the vv block.
pub fn lorentz_tensor(v: &Vector3<f64>, params: &LorentzParams) -> Result<DMatrix<f64>, LorentzError> {
    let s = v.norm();
    if !(s > 0.0 && s.is_finite()) {
        return Err(LorentzError::InvalidParams(format!("|v| must be positive and finite, got {s}")));
    }
    let mut d = DMatrix::zeros(6, 6);
    d.view_mut((3, 3), (3, 3))
        .copy_from(&(projector_u(v) * lorentz_frequency(s, params.lambda)));
    Ok(d)
}

/// `α_L`, the covariant form of `D_L`: `ν𝖴` in the xx block.
pub fn lorentz_form(lambda: f64) -> SymmetricTensorField {
    SymmetricTensorField::new("alpha_L", 3, move |z| {
        let v = Vector3::from_column_slice(z.v());
        let mut m = DMatrix::zeros(6, 6);
        m.view_mut((0, 0), (3, 3))
            .copy_from(&(projector_u(&v) * lorentz_frequency(v.norm(), lambda)));
        m
    })
}

/// `(L_{X_{H₀}} α_L)(Y, Y)/ν` with `Y = (w, w)`, numerically and as `2 w·𝖴·w`.
pub fn non_hamiltonian_witness(
    v: &Vector3<f64>,
    w: &Vector3<f64>,
    params: &LorentzParams,
) -> Result<(f64, f64), LorentzError> {
    let s = v.norm();
    if !(s > 0.0) || w.norm() == 0.0 {
        return Err(LorentzError::InvalidParams("v and w must be non-zero".into()));
    }
    let z = PhasePoint::new(&[0.0; 3], v.as_slice()).map_err(|e| LorentzError::InvalidParams(e.to_string()))?;
    let h0 = crate::models::kinetic_energy(3);
    let lie = lie_derivative_tensor(&h0, &lorentz_form(params.lambda), &z, 1e-3)
        .map_err(|e| LorentzError::InvalidParams(e.to_string()))?;
    let y = nalgebra::DVector::from_iterator(6, w.iter().chain(w.iter()).copied());
    let numeric = (y.transpose() * lie * &y)[(0, 0)] / lorentz_frequency(s, params.lambda);
    let analytic = 2.0 * w.dot(&(projector_u(v) * w));
    Ok((numeric, analytic))
}

/// One row of the asymptotic-equivalence scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub lambda: f64,
    /// `‖D̄_vv − D̄_L‖/‖D̄_L‖` in normalised units.
    pub rel_dev_vv: f64,
    /// Parallel over perpendicular eigenvalue of `D̄_vv`.
    pub par_perp_ratio: f64,
    /// `(ε₁/32π²)|∇χ|`.
    pub chi_drift: f64,
    pub energy_rate_numeric: f64,
    pub energy_rate_analytic: f64,
}

/// Column names for CSV output of [`ScanRow`].
pub const SCAN_COLUMNS: [&str; 6] = [
    "Lambda",
    "rel_dev_vv",
    "par_perp_ratio",
    "chi_drift",
    "energy_rate_numeric",
    "energy_rate_analytic",
];

impl ScanRow {
    pub fn values(&self) -> [f64; 6] {
        [
            self.lambda,
            self.rel_dev_vv,
            self.par_perp_ratio,
            self.chi_drift,
            self.energy_rate_numeric,
            self.energy_rate_analytic,
        ]
    }
}

/// Evaluates each Λ at `ε₀ = ε₁ = 1/√Λ`.
pub fn asymptotic_scan(lambdas: &[f64], speed: f64, base: &LorentzParams) -> Result<Vec<ScanRow>, LorentzError> {
    if lambdas.windows(2).any(|w| w[1] <= w[0]) || lambdas.iter().any(|&l| !(l > 10.0)) {
        return Err(LorentzError::InvalidParams("Lambda list must be increasing and above 10".into()));
    }
    if !(speed > 0.0) {
        return Err(LorentzError::InvalidParams(format!("speed must be positive, got {speed}")));
    }
    lambdas
        .par_iter()
        .map(|&lambda| {
            let p = base.scaled(lambda);
            let model = Lorentz::new(p)?;
            let v = Vector3::new(speed, 0.0, 0.0);
            let t = p.slow_time();
            let d_bar = model.vv_block(&v)? * t;
            let d_l = projector_u(&v) * (lorentz_frequency(speed, lambda) * t);
            let [vv, _, _] = model.blocks(&v)?;
            let h = 1e-4 * speed;
            let grad_chi = (model.chi(&Vector3::new(speed + h, 0.0, 0.0))?
                - model.chi(&Vector3::new(speed - h, 0.0, 0.0))?)
                / (2.0 * h);
            Ok(ScanRow {
                lambda,
                rel_dev_vv: (d_bar - d_l).norm() / d_l.norm(),
                par_perp_ratio: vv.par / vv.perp,
                chi_drift: p.eps1() / (32.0 * PI * PI) * grad_chi.abs(),
                energy_rate_numeric: model.energy_rate_numeric(&v)?,
                energy_rate_analytic: model.energy_rate_asymptotic(&v)?,
            })
        })
        .collect()
}

/// Kinetic-energy growth of an ensemble evolved under the `D_HL` model.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrowth {
    pub times: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Least-squares slope of the mean energy.
    pub rate: f64,
    pub rate_stderr: f64,
    /// `E(0)/rate`.
    pub tau_e: f64,
}

/// Itô–Euler evolution of an ensemble under the `D_HL` model, started at
/// speed `speed`; `substeps` steps per `τ`, energy recorded every `τ`.
///
/// `D_vv = a(s)(I − v̂v̂) + b(s)v̂v̂` depends on `s = |v|` only, so the speed
/// obeys the closed equation `ds = (b′ + 2b/s)dt + √(2b) dW` and the
/// direction never enters the energy.
pub fn energy_growth(
    model: &Lorentz,
    speed: f64,
    particles: usize,
    steps: usize,
    substeps: usize,
    seed: u64,
) -> Result<EnergyGrowth, LorentzError> {
    if particles < 2 || steps < 2 || substeps < 1 || !(speed > 0.0) {
        return Err(LorentzError::InvalidParams(
            "need speed > 0, >= 2 particles, >= 2 steps and >= 1 substep".into(),
        ));
    }
    let tau = model.params.tau;
    let dt = tau / substeps as f64;
    let k = model.params.kappa();
    let (lo, hi) = (0.25 * speed, 2.0 * speed);
    let grid: Vec<f64> = (0..=96).map(|i| lo + (hi - lo) * i as f64 / 96.0).collect();
    let b_vals: Vec<f64> = grid
        .par_iter()
        .map(|&s| Ok(k * model.time_integral(s, Weight::Vv, |c| c.par)?))
        .collect::<Result<_, LorentzError>>()?;
    let b = CubicSpline::new(grid, b_vals);
    let hs = 1e-3 * speed;
    let energies: Vec<Vec<f64>> = (0..particles)
        .into_par_iter()
        .map(|p| {
            let mut s = speed;
            let mut e = Vec::with_capacity(steps + 1);
            e.push(0.5 * s * s);
            for n in 0..steps * substeps {
                let sc = s.clamp(lo, hi);
                let bv = b.eval(sc).max(0.0);
                let db = (b.eval(sc + hs) - b.eval(sc - hs)) / (2.0 * hs);
                let xi = crate::rng::normal(seed, p as u64, n as u64, 0);
                s = (s + (db + 2.0 * bv / sc) * dt + (2.0 * bv * dt).sqrt() * xi).abs();
                if (n + 1) % substeps == 0 {
                    e.push(0.5 * s * s);
                }
            }
            e
        })
        .collect();
    let pf = particles as f64;
    let times: Vec<f64> = (0..=steps).map(|n| n as f64 * tau).collect();
    let mut mean_energy = Vec::with_capacity(steps + 1);
    let mut stderr = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let m = energies.iter().map(|e| e[n]).sum::<f64>() / pf;
        let var = energies.iter().map(|e| (e[n] - m).powi(2)).sum::<f64>() / (pf - 1.0);
        mean_energy.push(m);
        stderr.push((var / pf).sqrt());
    }
    // Per-particle slopes make the error bar honest about time correlation.
    let tm = times.iter().sum::<f64>() / times.len() as f64;
    let sxx: f64 = times.iter().map(|t| (t - tm).powi(2)).sum();
    let slopes: Vec<f64> = energies
        .iter()
        .map(|e| {
            let em = e.iter().sum::<f64>() / e.len() as f64;
            times.iter().zip(e).map(|(t, x)| (t - tm) * (x - em)).sum::<f64>() / sxx
        })
        .collect();
    let rate = slopes.iter().sum::<f64>() / pf;
    let rate_var = slopes.iter().map(|s| (s - rate).powi(2)).sum::<f64>() / (pf - 1.0);
    Ok(EnergyGrowth {
        tau_e: mean_energy[0] / rate.abs(),
        times,
        mean_energy,
        stderr,
        rate,
        rate_stderr: (rate_var / pf).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(lambda: f64, tau: f64) -> Lorentz {
        Lorentz::new(LorentzParams {
            lambda,
            tau,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn lorentz_tensor_annihilates_kinetic_gradient() {
        let p = LorentzParams::default();
        for v in [Vector3::new(0.3, -1.2, 0.7), Vector3::new(1.0, 0.0, 0.0), Vector3::new(-2.1, 0.4, 3.3)] {
            let d = lorentz_tensor(&v, &p).unwrap();
            let dh = nalgebra::DVector::from_iterator(6, [0.0; 3].into_iter().chain(v.iter().copied()));
            assert!((d * dh).amax() < 1e-14);
        }
        let nu = lorentz_frequency(1.0, 100.0);
        assert!((nu - 100f64.ln() / (8.0 * PI * 100.0)).abs() < 1e-18);
        assert!(lorentz_tensor(&Vector3::zeros(), &p).is_err());
    }

    #[test]
    fn lorentz_tensor_spectrum() {
        let v = Vector3::new(0.6, 0.8, 0.0) * 1.5;
        let d = lorentz_tensor(&v, &LorentzParams::default()).unwrap();
        let mut e: Vec<f64> = d.view((3, 3), (3, 3)).into_owned().symmetric_eigen().eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        let perp = lorentz_frequency(1.5, 20.0) * 2.25;
        assert!(e[0].abs() < 1e-15);
        assert!((e[1] - perp).abs() < 1e-14 && (e[2] - perp).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_tensor_is_symmetric_psd_with_cross_block_ratio() {
        let m = model(50.0, 10.0);
        let v = Vector3::new(0.4, 0.9, -0.3);
        let d = m.diffusion_tensor_hl(&v).unwrap();
        assert!((&d - d.transpose()).amax() < 1e-18);
        assert!(d.clone().symmetric_eigen().eigenvalues.min() > -1e-12 * d.trace());
        // Cross blocks carry the weight (τ − t)/2 against (τ − t)/τ.
        for i in 0..3 {
            for j in 0..3 {
                assert!((d[(i, 3 + j)] - 5.0 * d[(3 + i, 3 + j)]).abs() < 1e-12 * d[(3, 3)].abs());
            }
        }
    }

    #[test]
    fn zero_coupling_gives_zero_tensor() {
        let m = Lorentz::new(LorentzParams {
            qm: 0.0,
            ..Default::default()
        })
        .unwrap();
        let v = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(m.diffusion_tensor_hl(&v).unwrap(), DMatrix::zeros(6, 6));
        assert_eq!(m.mean_s2(&v).unwrap(), 0.0);
    }

    /// Monte Carlo of `X_{s₁} ⊗ X_{s₁}/(2τ)` over sampled field pairs is
    /// replaced here by its exact double-integral form, evaluated by a
    /// tensor-product rule on `[0, τ]²`.
    #[test]
    fn blocks_match_double_time_integral() {
        let m = model(30.0, 3.0);
        let s = 0.8;
        let v = Vector3::new(s, 0.0, 0.0);
        let [vv, xv, xx] = m.blocks(&v).unwrap();
        let tau = 3.0;
        let k = m.params().kappa();
        let n = 1200;
        let h = tau / n as f64;
        let mut acc = [[0.0; 2]; 3];
        for i in 0..n {
            for j in 0..n {
                let t1 = (i as f64 + 0.5) * h;
                let t2 = (j as f64 + 0.5) * h;
                let c = m.covariance().components(s * (t1 - t2));
                for (w, a) in [1.0, t1, t1 * t2].iter().zip(acc.iter_mut()) {
                    a[0] += w * c.perp * h * h;
                    a[1] += w * c.par * h * h;
                }
            }
        }
        let want = |a: [f64; 2]| Split {
            perp: k * a[0] / (2.0 * tau),
            par: k * a[1] / (2.0 * tau),
        };
        for (got, a) in [vv, xv, xx].iter().zip(acc) {
            let w = want(a);
            assert!((got.perp - w.perp).abs() < 2e-3 * w.perp.abs(), "{got:?} vs {w:?}");
            assert!((got.par - w.par).abs() < 2e-3 * w.perp.abs(), "{got:?} vs {w:?}");
        }
    }

    #[test]
    fn mean_s2_self_converges_and_truncates() {
        let m = model(100.0, 10.0);
        let v = Vector3::new(0.0, 0.7, 0.0);
        let a = m.clone().with_tolerance(1e-8).mean_s2(&v).unwrap();
        let b = m.clone().with_tolerance(1e-12).mean_s2(&v).unwrap();
        assert!((a - b).abs() < 1e-8 * b.abs());
        assert!(m.mean_s2(&Vector3::zeros()).is_err());
        // With |v|τ beyond the support, ⟨s₂⟩ matches an integral cut at 2λ_{D+}/|v|.
        let s = 0.7;
        let end = m.covariance().support() / s;
        let direct = crate::quad::adaptive(0.0, end, &geometric_breaks(1e-6, end, 6), 1e-12, 0.0, |t| {
            let c = m.covariance().components(s * t);
            t * (10.0 - t) * (2.0 * c.perp + c.par)
        })
        .unwrap();
        assert!((b - (-0.5 * m.params().kappa() * direct)).abs() < 1e-8 * b.abs());
    }

    #[test]
    fn drift_correction_is_positional_only() {
        let m = model(100.0, 10.0);
        let u = m.drift_correction(&Vector3::new(0.5, 0.5, 0.2)).unwrap();
        assert_eq!(&u[3..], &[0.0; 3]);
        assert!(u[0] != 0.0);
    }

    #[test]
    fn energy_rate_matches_closed_form() {
        let m = model(100.0, 4.4);
        let v = Vector3::new(0.0, 0.0, 1.0);
        let num = m.energy_rate_numeric(&v).unwrap();
        let exact = m.energy_rate_exact(&v).unwrap();
        let asym = m.energy_rate_asymptotic(&v).unwrap();
        assert!((num - exact).abs() < 1e-5 * exact, "{num} vs {exact}");
        assert!((exact - asym).abs() < 1e-9 * asym);
        assert!(num > 0.0);
    }

    #[test]
    fn witness_matches_projector_algebra() {
        let p = LorentzParams::default();
        let v = Vector3::new(0.0, 1.3, 0.0);
        let (num, ana) = non_hamiltonian_witness(&v, &Vector3::new(1.0, 0.0, 0.0), &p).unwrap();
        assert!((ana - 2.0 * 1.69).abs() < 1e-14);
        assert!((num - ana).abs() < 1e-6 * ana);
        let (num, ana) = non_hamiltonian_witness(&v, &Vector3::new(0.0, 2.0, 0.0), &p).unwrap();
        assert_eq!(ana, 0.0);
        assert!(num.abs() < 1e-8);
    }

    #[test]
    fn ensemble_energy_rate_matches_divergence() {
        let m = model(100.0, 10.0);
        let g = energy_growth(&m, 1.0, 20_000, 10, 5, 11).unwrap();
        let want = m.energy_rate_exact(&Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((g.rate - want).abs() < 3.0 * g.rate_stderr, "{} ± {} vs {want}", g.rate, g.rate_stderr);
        assert!((g.tau_e - 0.5 / g.rate).abs() < 1e-9 * g.tau_e);
    }

    #[test]
    fn scan_rejects_bad_lists() {
        let p = LorentzParams::default();
        assert!(asymptotic_scan(&[1e3, 1e2], 1.0, &p).is_err());
        assert!(asymptotic_scan(&[5.0], 1.0, &p).is_err());
    }

    #[test]
    fn regime_check() {
        let p = LorentzParams {
            tau: 0.5,
            ..Default::default()
        };
        assert!(Lorentz::new(p).is_err());
    }
}
