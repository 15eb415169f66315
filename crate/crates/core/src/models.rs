//! Worked examples: random electrostatic pulses (with the microscopic kicked
//! map and a non-physical six-mode counterexample) and lower-hybrid wave
//! heating under phase randomisation.

use std::f64::consts::{PI, TAU};

use thiserror::Error;

use crate::bessel::{bessel_j_orders, bessel_j_prime, bessel_j_signed};
use crate::coarse::{
    assemble_langevin, BackgroundFlow, CoarseError, CovarianceKernel, NoiseBasis,
    PerturbationEnsemble, TimeField,
};
use crate::langevin::LangevinModel;
use crate::phase::{free_streaming_flow, Generator, PhasePoint, ScalarField, VectorField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Coarse(#[from] CoarseError),
}

/// Time profile `u(t)` of a pulse on `[0, τ]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Window {
    /// `δ(t - τ/2)`.
    Impulse,
    /// `1/τ`.
    Uniform,
    /// Piecewise-linear through equally spaced samples spanning `[0, τ]`.
    Sampled(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseParams {
    pub phi0: f64,
    pub qm: f64,
    pub tau: f64,
    pub window: Window,
}

impl Default for PulseParams {
    fn default() -> Self {
        Self {
            phi0: 1.0,
            qm: 1.0,
            tau: 1.0,
            window: Window::Impulse,
        }
    }
}

impl PulseParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.tau > 0.0) {
            return Err(ModelError::InvalidParams(format!("tau must be positive, got {}", self.tau)));
        }
        if !self.phi0.is_finite() || !self.qm.is_finite() {
            return Err(ModelError::InvalidParams("phi0 and qm must be finite".into()));
        }
        if let Window::Sampled(u) = &self.window {
            if u.len() < 2 || u.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::InvalidParams(
                    "sampled window needs at least 2 finite samples".into(),
                ));
            }
        }
        Ok(())
    }

    /// `(∫u, ∫(τ-s)u, ∫s²u)` over `[0, τ]`.
    fn window_moments(&self) -> (f64, f64, f64) {
        let tau = self.tau;
        match &self.window {
            Window::Impulse => (1.0, 0.5 * tau, 0.25 * tau * tau),
            Window::Uniform => (1.0, 0.5 * tau, tau * tau / 3.0),
            Window::Sampled(u) => {
                // Simpson per segment is exact for (linear) × (polynomial ≤ 2).
                let h = tau / (u.len() - 1) as f64;
                let mut m = (0.0, 0.0, 0.0);
                for k in 0..u.len() - 1 {
                    let (s0, s1) = (k as f64 * h, (k + 1) as f64 * h);
                    let sm = 0.5 * (s0 + s1);
                    let um = 0.5 * (u[k] + u[k + 1]);
                    let simpson = |f: &dyn Fn(f64, f64) -> f64| {
                        h / 6.0 * (f(s0, u[k]) + 4.0 * f(sm, um) + f(s1, u[k + 1]))
                    };
                    m.0 += simpson(&|_, w| w);
                    m.1 += simpson(&|s, w| (tau - s) * w);
                    m.2 += simpson(&|s, w| s * s * w);
                }
                m
            }
        }
    }

    /// `m0 = (q/m) φ0 ∫ u`.
    pub fn m0(&self) -> f64 {
        self.qm * self.phi0 * self.window_moments().0
    }

    /// `m1 = (q/m) φ0 ∫ (τ - s) u`.
    pub fn m1(&self) -> f64 {
        self.qm * self.phi0 * self.window_moments().1
    }

    /// RMS duration of the window.
    pub fn tau_ac(&self) -> f64 {
        let (w0, w1, w2) = self.window_moments();
        if w0 == 0.0 {
            return 0.0;
        }
        let mean = self.tau - w1 / w0;
        (w2 / w0 - mean * mean).max(0.0).sqrt()
    }

    /// `u(t)` for non-impulsive windows.
    pub fn profile(&self, t: f64) -> f64 {
        match &self.window {
            Window::Impulse => 0.0,
            Window::Uniform => 1.0 / self.tau,
            Window::Sampled(u) => {
                let x = (t / self.tau).clamp(0.0, 1.0) * (u.len() - 1) as f64;
                let k = (x.floor() as usize).min(u.len() - 2);
                let f = x - k as f64;
                (1.0 - f) * u[k] + f * u[k + 1]
            }
        }
    }
}

/// `|v|²/2` with analytic gradient.
pub fn kinetic_energy(n: usize) -> ScalarField {
    ScalarField::new("|v|^2/2", n, |z| 0.5 * z.v().iter().map(|c| c * c).sum::<f64>()).with_gradient(
        |z| {
            let n = z.dim();
            let mut g = vec![0.0; 2 * n];
            g[n..].copy_from_slice(z.v());
            g
        },
    )
}

/// Orthonormal basis `H_i = e_i·(m1 v - m0 x)/√3`.
pub fn pulse_basis(p: &PulseParams) -> Vec<ScalarField> {
    let (m0, m1) = (p.m0(), p.m1());
    let c = 1.0 / 3f64.sqrt();
    (0..3)
        .map(|i| {
            ScalarField::new(format!("H{}", i + 1), 3, move |z| c * (m1 * z.v()[i] - m0 * z.x()[i]))
                .with_gradient(move |_| {
                    let mut g = vec![0.0; 6];
                    g[i] = -c * m0;
                    g[3 + i] = c * m1;
                    g
                })
        })
        .collect()
}

/// Exact kernel of the pulse ensemble (isotropic average over directions).
pub fn pulse_kernel(p: &PulseParams) -> CovarianceKernel {
    CovarianceKernel::from_hamiltonians(pulse_basis(p))
}

/// Physical Langevin model of the pulse ensemble.
pub fn pulse_model(p: &PulseParams) -> Result<LangevinModel, ModelError> {
    p.validate()?;
    let zero = ScalarField::new("E[s2]", 3, |_| 0.0).with_gradient(|_| vec![0.0; 6]);
    let basis = NoiseBasis::from_fields(pulse_basis(p));
    Ok(assemble_langevin(&kinetic_energy(3), &zero, &basis, 1.0, p.tau)?.renamed("pulse"))
}

/// Six-mode model whose noise is rotated by the angle `φ(z)`.
///
/// Not Hamiltonian for non-constant φ: modes are bare vector fields.
pub fn counterexample_model(p: &PulseParams, phi: ScalarField) -> Result<LangevinModel, ModelError> {
    p.validate()?;
    let c = 1.0 / (3.0 * p.tau).sqrt();
    let (m0, m1) = (p.m0(), p.m1());
    let mut noise = Vec::with_capacity(6);
    for (family, trig) in [(1, 0usize), (2, 1usize)] {
        for i in 0..3 {
            let phi = phi.clone();
            noise.push(Generator::Field(VectorField::new(
                format!("X{family},{}", i + 1),
                3,
                move |z| {
                    let a = phi.value(z);
                    let w = if trig == 0 { a.cos() } else { -a.sin() };
                    let mut x = vec![0.0; 6];
                    x[i] = w * c * m1;
                    x[3 + i] = w * c * m0;
                    x
                },
            )));
        }
    }
    Ok(LangevinModel::new(
        "counterexample",
        Generator::Hamiltonian(kinetic_energy(3)),
        noise,
    )
    .map_err(CoarseError::from)?)
}

/// Random pulse directions uniform on the sphere.
#[derive(Debug, Clone)]
pub struct PulseEnsemble {
    pub params: PulseParams,
}

impl PerturbationEnsemble for PulseEnsemble {
    fn dim(&self) -> usize {
        3
    }

    fn tau(&self) -> f64 {
        self.params.tau
    }

    fn eps(&self) -> f64 {
        1.0
    }

    fn tau_ac(&self) -> f64 {
        self.params.tau_ac()
    }

    fn sample(&self, seed: u64) -> TimeField {
        let dir = crate::rng::unit_vector(seed, 0, 0);
        let amp = self.params.qm * self.params.phi0;
        let lin = move |z: &PhasePoint| amp * (0..3).map(|i| dir[i] * z.x()[i]).sum::<f64>();
        match self.params.window {
            Window::Impulse => TimeField::Impulse {
                t0: 0.5 * self.params.tau,
                profile: ScalarField::new("pulse", 3, lin),
            },
            _ => {
                let p = self.params.clone();
                TimeField::smooth("pulse", 3, move |t, z| lin(z) * p.profile(t))
            }
        }
    }
}

/// Microscopic pulse trajectory at the interval boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseMicroTrajectory {
    pub tau: f64,
    pub states: Vec<PhasePoint>,
    pub directions: Vec<[f64; 3]>,
}

impl PulseMicroTrajectory {
    /// `z_{k+1} - F_τ(z_k)` per interval.
    pub fn increments(&self) -> Vec<Vec<f64>> {
        self.states
            .windows(2)
            .map(|w| {
                let free = free_streaming_flow(&w[0], self.tau);
                w[1].coords().iter().zip(free.coords()).map(|(a, b)| a - b).collect()
            })
            .collect()
    }
}

/// Exact kicked map: each interval streams freely and receives
/// `Δv = -m0 ẑ_k`, `Δx = -m1 ẑ_k` for a uniformly random direction `ẑ_k`.
pub fn pulse_micro_simulate(
    p: &PulseParams,
    z0: &PhasePoint,
    steps: usize,
    seed: u64,
) -> Result<PulseMicroTrajectory, ModelError> {
    p.validate()?;
    if z0.dim() != 3 {
        return Err(ModelError::InvalidParams("pulse map needs n = 3".into()));
    }
    let (m0, m1) = (p.m0(), p.m1());
    let mut states = Vec::with_capacity(steps + 1);
    let mut directions = Vec::with_capacity(steps);
    let mut z = z0.clone();
    states.push(z.clone());
    for k in 0..steps {
        let d = crate::rng::unit_vector(seed, 1, k as u64);
        let mut c = free_streaming_flow(&z, p.tau).into_coords();
        for i in 0..3 {
            c[i] -= m1 * d[i];
            c[3 + i] -= m0 * d[i];
        }
        z = PhasePoint::from_coords(c).map_err(CoarseError::from)?;
        states.push(z.clone());
        directions.push(d);
    }
    Ok(PulseMicroTrajectory {
        tau: p.tau,
        states,
        directions,
    })
}

/// `sin(x)/x` with the removable point handled exactly.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0 + x.powi(4) / 120.0
    } else {
        x.sin() / x
    }
}

/// `(sinc(x) - 1)/x`, odd and smooth through 0.
fn sinc_minus_one_over_x(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let x2 = x * x;
        x * (-1.0 / 6.0 + x2 * (1.0 / 120.0 - x2 / 5040.0))
    } else {
        (sinc(x) - 1.0) / x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KarneyParams {
    pub eps: f64,
    /// Harmonic number ν.
    pub nu: f64,
    pub i_min: f64,
    pub i_max: f64,
    /// Series cutoff M in E[s2].
    pub cutoff: usize,
}

impl Default for KarneyParams {
    fn default() -> Self {
        Self {
            eps: 0.1,
            nu: 3.0,
            i_min: 0.1,
            i_max: 50.0,
            cutoff: 60,
        }
    }
}

impl KarneyParams {
    pub fn n0(&self) -> i64 {
        self.nu.round() as i64
    }

    pub fn delta(&self) -> f64 {
        self.nu - self.nu.round()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParams(m));
        if !self.nu.is_finite() || self.nu < 0.0 {
            return bad(format!("nu must be a non-negative finite number, got {}", self.nu));
        }
        if self.delta().abs() >= 0.5 {
            return bad(format!("|delta| must be below 1/2 (nu = {})", self.nu));
        }
        if !(self.i_min > 0.0 && self.i_max > self.i_min) {
            return bad(format!("need 0 < I_min < I_max, got [{}, {}]", self.i_min, self.i_max));
        }
        if !(self.eps >= 0.0) {
            return bad(format!("eps must be non-negative, got {}", self.eps));
        }
        if (self.cutoff as i64) < self.n0() + 1 {
            return bad(format!("cutoff {} must exceed n0 = {}", self.cutoff, self.n0()));
        }
        Ok(())
    }

    /// Amplitude `√2 π sinc(πδ) J_{n0}(√(2I))` of the basis Hamiltonians.
    pub fn amplitude(&self, i: f64) -> f64 {
        2f64.sqrt() * PI * sinc(PI * self.delta()) * bessel_j_signed(self.n0(), (2.0 * i).sqrt())
    }

    fn amplitude_di(&self, i: f64) -> f64 {
        let r = (2.0 * i).sqrt();
        2f64.sqrt() * PI * sinc(PI * self.delta()) * bessel_j_prime(self.n0(), r) / r
    }
}

/// `E[s2](I)` and `∂_I E[s2](I)`.
///
/// The `m = n0` series term and the resonant correction share the factor
/// `J²_{n0+1} - J²_{n0-1}`; they are combined as `(sinc(2πδ) - 1)/δ`, which is
/// regular at δ = 0.
pub fn karney_mean_s2(p: &KarneyParams, i: f64) -> (f64, f64) {
    mean_s2_from_weights(&mean_s2_weights(p), i)
}

/// Weights `w_m` with `E[s2] = (π/2) Σ_m w_m J_m²(√(2I))`, `m ≥ 0`.
fn mean_s2_weights(p: &KarneyParams) -> Vec<f64> {
    let m = p.cutoff as i64;
    let mut w = vec![0.0; m as usize + 2];
    let (n0, nu) = (p.n0(), p.nu);
    let mut add = |k: i64, c: f64| {
        w[(k + 1).unsigned_abs() as usize] += c;
        w[(k - 1).unsigned_abs() as usize] -= c;
    };
    for k in -m..=m {
        if k != n0 {
            add(k, 1.0 / (k as f64 - nu));
        }
    }
    add(n0, 2.0 * PI * sinc_minus_one_over_x(2.0 * PI * p.delta()));
    w
}

fn mean_s2_from_weights(w: &[f64], i: f64) -> (f64, f64) {
    let r = (2.0 * i).sqrt();
    let j = bessel_j_orders(w.len() as u32, r);
    let (mut value, mut deriv) = (0.0, 0.0);
    for (k, wk) in w.iter().enumerate() {
        // d(J_k²)/dI = 2 J_k J_k'(r) / r with J_{-1} = -J_1.
        let jp = 0.5 * (if k == 0 { -j[1] } else { j[k - 1] } - j[k + 1]);
        value += wk * j[k] * j[k];
        deriv += wk * 2.0 * j[k] * jp / r;
    }
    (0.5 * PI * value, 0.5 * PI * deriv)
}

/// Unscaled basis `H1 = A(I) cos(n0 θ)`, `H2 = A(I) sin(n0 θ)` on `(θ, I)`.
pub fn karney_basis(p: &KarneyParams) -> Vec<ScalarField> {
    let n0 = p.n0() as f64;
    (0..2)
        .map(|k| {
            let (pv, pg, pd) = (p.clone(), p.clone(), p.clone());
            let trig = move |a: f64| if k == 0 { a.cos() } else { a.sin() };
            let dtrig = move |a: f64| if k == 0 { -a.sin() } else { a.cos() };
            ScalarField::new(format!("H{}", k + 1), 1, move |z| {
                pv.amplitude(z.v()[0]) * trig(n0 * z.x()[0])
            })
            .with_gradient(move |z| {
                let (th, i) = (z.x()[0], z.v()[0]);
                vec![
                    pg.amplitude(i) * n0 * dtrig(n0 * th),
                    pg.amplitude_di(i) * trig(n0 * th),
                ]
            })
            .with_domain(move |z| (pd.i_min..=pd.i_max).contains(&z.v()[0]))
        })
        .collect()
}

/// Exact kernel of the phase-randomised wave ensemble.
pub fn karney_kernel(p: &KarneyParams) -> CovarianceKernel {
    CovarianceKernel::from_hamiltonians(karney_basis(p))
}

/// Langevin model on `(θ, I)` with τ = 2π.
pub fn karney_model(p: &KarneyParams) -> Result<LangevinModel, ModelError> {
    p.validate()?;
    let pd = p.clone();
    let wv = std::sync::Arc::new(mean_s2_weights(p));
    let wg = wv.clone();
    let h0 = ScalarField::new("I", 1, |z| z.v()[0]).with_gradient(|_| vec![0.0, 1.0]);
    let mean_s2 = ScalarField::new("E[s2]", 1, move |z| mean_s2_from_weights(&wv, z.v()[0]).0)
        .with_gradient(move |z| vec![0.0, mean_s2_from_weights(&wg, z.v()[0]).1])
        .with_domain(move |z| (pd.i_min..=pd.i_max).contains(&z.v()[0]));
    let basis = NoiseBasis::from_fields(karney_basis(p));
    Ok(assemble_langevin(&h0, &mean_s2, &basis, p.eps, TAU)?.renamed("karney"))
}

/// `⟨ΔI²⟩/(2Δt) = (ε²π/2) sinc²(πδ) n0² J²_{n0}(√(2I))`.
pub fn karney_expected_diffusion(p: &KarneyParams, i: f64) -> f64 {
    let n0 = p.n0();
    0.5 * p.eps * p.eps
        * PI
        * sinc(PI * p.delta()).powi(2)
        * (n0 * n0) as f64
        * bessel_j_signed(n0, (2.0 * i).sqrt()).powi(2)
}

/// Resonant wave term with a random phase η, renewed every gyroperiod:
/// `h_t(θ, I) = -J_{n0}(√(2I)) sin(n0 θ - ν t + η)`.
#[derive(Debug, Clone)]
pub struct KarneyEnsemble {
    pub params: KarneyParams,
}

impl PerturbationEnsemble for KarneyEnsemble {
    fn dim(&self) -> usize {
        1
    }

    fn tau(&self) -> f64 {
        TAU
    }

    fn eps(&self) -> f64 {
        self.params.eps
    }

    fn tau_ac(&self) -> f64 {
        1.0 / self.params.nu.max(1.0)
    }

    fn sample(&self, seed: u64) -> TimeField {
        let eta = TAU * crate::rng::uniform(seed, 0, 0, 0);
        let (n0, nu) = (self.params.n0(), self.params.nu);
        TimeField::smooth("wave", 1, move |t, z| {
            let (th, i) = (z.x()[0], z.v()[0]);
            -bessel_j_signed(n0, (2.0 * i).sqrt()) * (n0 as f64 * th - nu * t + eta).sin()
        })
    }

    fn background(&self) -> BackgroundFlow {
        BackgroundFlow::map(|z, t| {
            PhasePoint::new(&[z.x()[0] + t], z.v()).unwrap_or_else(|_| z.clone())
        })
    }
}
