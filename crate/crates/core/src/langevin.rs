//! Stratonovich integration of stochastic Hamiltonian systems as stochastic
//! flows, ensemble statistics, and closed moment equations for affine models.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::phase::{Generator, PhaseError, PhasePoint};
use crate::rng::WienerStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LangevinError {
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("implicit midpoint did not converge in {iterations} iterations (residual {residual:e})")]
    MidpointDiverged { iterations: usize, residual: f64 },
    #[error("state left the model domain")]
    Domain,
    #[error("particle {particle}, step {step}: {source}")]
    Step {
        particle: usize,
        step: u64,
        source: Box<LangevinError>,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no trajectories")]
    Empty,
    #[error("model is not affine in z; compare against Monte-Carlo statistics instead")]
    NonAffine,
}

/// `dz = X_0 dt + Σ_k X_k ∘ dW_k`.
#[derive(Clone)]
pub struct LangevinModel {
    name: String,
    dim: usize,
    drift: Generator,
    noise: Vec<Generator>,
}

impl fmt::Debug for LangevinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LangevinModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("modes", &self.noise.len())
            .field("hamiltonian", &self.is_hamiltonian())
            .finish()
    }
}

impl LangevinModel {
    pub fn new(
        name: impl Into<String>,
        drift: Generator,
        noise: Vec<Generator>,
    ) -> Result<Self, PhaseError> {
        let dim = drift.dim();
        for g in &noise {
            if g.dim() != dim {
                return Err(PhaseError::DimensionMismatch {
                    expected: dim,
                    found: g.dim(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            drift,
            noise,
        })
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.noise.len()
    }

    pub fn drift(&self) -> &Generator {
        &self.drift
    }

    pub fn noise(&self) -> &[Generator] {
        &self.noise
    }

    /// Every coefficient is a Hamiltonian vector field.
    pub fn is_hamiltonian(&self) -> bool {
        self.drift.is_hamiltonian() && self.noise.iter().all(Generator::is_hamiltonian)
    }

    pub fn in_domain(&self, z: &PhasePoint) -> bool {
        self.drift.in_domain(z) && self.noise.iter().all(|g| g.in_domain(z))
    }

    /// `dt X_0(z) + Σ_k dW_k X_k(z)`.
    fn increment(&self, z: &PhasePoint, dt: f64, dw: &[f64]) -> Result<Vec<f64>, LangevinError> {
        if !self.in_domain(z) {
            return Err(LangevinError::Domain);
        }
        let mut out = self.drift.eval(z)?;
        out.iter_mut().for_each(|c| *c *= dt);
        for (g, w) in self.noise.iter().zip(dw) {
            if *w == 0.0 {
                continue;
            }
            for (o, c) in out.iter_mut().zip(g.eval(z)?) {
                *o += w * c;
            }
        }
        Ok(out)
    }

    /// Diffusion tensor `½ Σ_k X_k ⊗ X_k` at z.
    pub fn diffusion_tensor(&self, z: &PhasePoint) -> Result<DMatrix<f64>, LangevinError> {
        let m = 2 * self.dim;
        let mut d = DMatrix::zeros(m, m);
        for g in &self.noise {
            let x = DVector::from_vec(g.eval(z)?);
            d += 0.5 * &x * x.transpose();
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Heun,
    ImplicitMidpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// One Wiener realisation drives every particle.
    #[default]
    Shared,
    /// Particle `i` uses stream `i`.
    Independent,
    /// Consecutive groups of this many particles share a stream.
    Grouped(usize),
}

const MIDPOINT_MAX_ITERS: usize = 50;
const MIDPOINT_TOL: f64 = 1e-12;

/// One Stratonovich step.
pub fn stratonovich_step(
    model: &LangevinModel,
    z: &PhasePoint,
    dt: f64,
    dw: &[f64],
    scheme: Scheme,
) -> Result<PhasePoint, LangevinError> {
    if !(dt > 0.0) {
        return Err(LangevinError::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if dw.len() != model.modes() {
        return Err(LangevinError::InvalidInput(format!(
            "expected {} Wiener increments, got {}",
            model.modes(),
            dw.len()
        )));
    }
    if z.dim() != model.dim() {
        return Err(PhaseError::DimensionMismatch {
            expected: model.dim(),
            found: z.dim(),
        }
        .into());
    }
    let f0 = model.increment(z, dt, dw)?;
    let out = match scheme {
        Scheme::Heun => {
            let pred = z.offset(&f0, 1.0);
            let f1 = model.increment(&pred, dt, dw)?;
            let avg: Vec<f64> = f0.iter().zip(&f1).map(|(a, b)| 0.5 * (a + b)).collect();
            z.offset(&avg, 1.0)
        }
        Scheme::ImplicitMidpoint => {
            let mut next = z.offset(&f0, 1.0);
            let scale = 1.0 + z.coords().iter().fold(0.0_f64, |m, c| m.max(c.abs()));
            let mut converged_once = false;
            let mut residual = f64::INFINITY;
            let mut iters = 0;
            while iters < MIDPOINT_MAX_ITERS {
                iters += 1;
                let mid: Vec<f64> = z
                    .coords()
                    .iter()
                    .zip(next.coords())
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                let f = model.increment(&PhasePoint::from_coords_unchecked(mid), dt, dw)?;
                let cand = z.offset(&f, 1.0);
                residual = cand
                    .coords()
                    .iter()
                    .zip(next.coords())
                    .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                next = cand;
                if residual <= MIDPOINT_TOL * scale {
                    if converged_once {
                        break;
                    }
                    converged_once = true;
                }
            }
            if residual > MIDPOINT_TOL * scale {
                return Err(LangevinError::MidpointDiverged {
                    iterations: iters,
                    residual,
                });
            }
            next
        }
    };
    if !out.is_finite() {
        return Err(PhaseError::NonFinite("state".into()).into());
    }
    Ok(out)
}

/// States of an ensemble at the recorded times.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTrajectories {
    pub dim: usize,
    pub particles: usize,
    pub dt: f64,
    pub mode: NoiseMode,
    pub times: Vec<f64>,
    /// Time-major: record `r`, particle `p`, coordinate `c` at `(r * particles + p) * 2n + c`.
    pub data: Vec<f64>,
}

impl EnsembleTrajectories {
    pub fn records(&self) -> usize {
        self.times.len()
    }

    pub fn coords(&self, record: usize, particle: usize) -> &[f64] {
        let m = 2 * self.dim;
        let start = (record * self.particles + particle) * m;
        &self.data[start..start + m]
    }

    pub fn state(&self, record: usize, particle: usize) -> PhasePoint {
        PhasePoint::from_coords_unchecked(self.coords(record, particle).to_vec())
    }
}

/// Options for [`simulate_flow`].
#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub mode: NoiseMode,
    pub scheme: Scheme,
    /// Record every this many steps (the initial state is always recorded).
    pub record_every: usize,
}

/// Integrates every particle from its initial state over `[0, T]`.
pub fn simulate_flow(
    model: &LangevinModel,
    initial: &[PhasePoint],
    opts: &FlowOptions,
) -> Result<EnsembleTrajectories, LangevinError> {
    if initial.is_empty() {
        return Err(LangevinError::Empty);
    }
    if !(opts.t_end > 0.0 && opts.dt > 0.0) {
        return Err(LangevinError::InvalidInput("T and dt must be positive".into()));
    }
    let steps_f = opts.t_end / opts.dt;
    let steps = steps_f.round() as u64;
    if steps == 0 || (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(LangevinError::InvalidInput(format!(
            "T/dt = {steps_f} is not an integer"
        )));
    }
    let every = opts.record_every.max(1) as u64;
    let m = 2 * model.dim();
    let per_particle: Vec<Vec<f64>> = initial
        .par_iter()
        .enumerate()
        .map(|(p, z0)| -> Result<Vec<f64>, LangevinError> {
            if z0.dim() != model.dim() {
                return Err(PhaseError::DimensionMismatch {
                    expected: model.dim(),
                    found: z0.dim(),
                }
                .into());
            }
            let stream = match opts.mode {
                NoiseMode::Shared => WienerStream::new(opts.seed, u64::MAX),
                NoiseMode::Independent => WienerStream::new(opts.seed, p as u64),
                NoiseMode::Grouped(k) => WienerStream::new(opts.seed, (p / k.max(1)) as u64),
            };
            let mut rec = Vec::with_capacity(((steps / every) as usize + 1) * m);
            rec.extend_from_slice(z0.coords());
            let mut z = z0.clone();
            let mut dw = vec![0.0; model.modes()];
            for s in 0..steps {
                stream.fill(s, opts.dt, &mut dw);
                z = stratonovich_step(model, &z, opts.dt, &dw, opts.scheme).map_err(|e| {
                    LangevinError::Step {
                        particle: p,
                        step: s,
                        source: Box::new(e),
                    }
                })?;
                if (s + 1) % every == 0 {
                    rec.extend_from_slice(z.coords());
                }
            }
            Ok(rec)
        })
        .collect::<Result<_, _>>()?;
    let records = per_particle[0].len() / m;
    let particles = initial.len();
    let mut data = vec![0.0; records * particles * m];
    for (p, rec) in per_particle.iter().enumerate() {
        for r in 0..records {
            let dst = (r * particles + p) * m;
            data[dst..dst + m].copy_from_slice(&rec[r * m..(r + 1) * m]);
        }
    }
    let times = (0..records)
        .map(|r| (r as u64 * every) as f64 * opts.dt)
        .collect();
    Ok(EnsembleTrajectories {
        dim: model.dim(),
        particles,
        dt: opts.dt,
        mode: opts.mode,
        times,
        data,
    })
}

type ObsFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type PairFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// A real function of one particle's coordinates.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    f: Arc<ObsFn>,
}

impl Observable {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn coord(name: impl Into<String>, index: usize) -> Self {
        Self::new(name, move |c| c[index])
    }
}

/// A real function of two particles' coordinates.
#[derive(Clone)]
pub struct PairObservable {
    pub name: String,
    f: Arc<PairFn>,
}

impl PairObservable {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// `a[index] - b[index]`.
    pub fn separation(name: impl Into<String>, index: usize) -> Self {
        Self::new(name, move |a, b| a[index] - b[index])
    }
}

/// Per-time mean and covariance of a set of observables.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub samples: usize,
    /// `mean[t][o]`.
    pub mean: Vec<Vec<f64>>,
    pub mean_stderr: Vec<Vec<f64>>,
    /// `cov[t]` over observables (unbiased).
    pub cov: Vec<DMatrix<f64>>,
    /// Standard error of each diagonal variance, `var_stderr[t][o]`.
    pub var_stderr: Vec<Vec<f64>>,
}

impl MomentSeries {
    pub fn variance(&self, record: usize, obs: usize) -> f64 {
        self.cov[record][(obs, obs)]
    }

    /// Slope of `Var[obs](t)` from the last record, assuming zero initial variance.
    pub fn variance_slope(&self, obs: usize) -> (f64, f64) {
        let r = self.times.len() - 1;
        let t = self.times[r];
        (self.variance(r, obs) / t, self.var_stderr[r][obs] / t)
    }
}

fn moments(rows: &[Vec<f64>], names: Vec<String>, times: Vec<f64>) -> MomentSeries {
    // rows[t] holds samples × observables, sample-major.
    let k = names.len();
    let n = rows[0].len() / k.max(1);
    let nf = n as f64;
    let mut out = MomentSeries {
        times,
        names,
        samples: n,
        mean: Vec::new(),
        mean_stderr: Vec::new(),
        cov: Vec::new(),
        var_stderr: Vec::new(),
    };
    for row in rows {
        let mut mean = vec![0.0; k];
        for s in 0..n {
            for o in 0..k {
                mean[o] += row[s * k + o];
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut cov = DMatrix::<f64>::zeros(k, k);
        let mut m4 = vec![0.0; k];
        for s in 0..n {
            for a in 0..k {
                let da = row[s * k + a] - mean[a];
                m4[a] += da.powi(4);
                for b in a..k {
                    cov[(a, b)] += da * (row[s * k + b] - mean[b]);
                }
            }
        }
        let denom = (nf - 1.0).max(1.0);
        for a in 0..k {
            for b in a..k {
                cov[(a, b)] /= denom;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        let mean_se: Vec<f64> = (0..k).map(|o| (cov[(o, o)] / nf).sqrt()).collect();
        let var_se: Vec<f64> = (0..k)
            .map(|o| {
                let v = cov[(o, o)];
                ((m4[o] / nf - v * v).max(0.0) / nf).sqrt()
            })
            .collect();
        out.mean.push(mean);
        out.mean_stderr.push(mean_se);
        out.cov.push(cov);
        out.var_stderr.push(var_se);
    }
    out
}

/// One-particle statistics of each observable at every recorded time.
pub fn estimate_statistics(
    traj: &EnsembleTrajectories,
    obs: &[Observable],
) -> Result<MomentSeries, LangevinError> {
    if traj.particles == 0 || traj.records() == 0 {
        return Err(LangevinError::Empty);
    }
    if traj.particles < 2 {
        return Err(LangevinError::InvalidInput("variances need at least 2 particles".into()));
    }
    let rows: Vec<Vec<f64>> = (0..traj.records())
        .map(|r| {
            let mut row = Vec::with_capacity(traj.particles * obs.len());
            for p in 0..traj.particles {
                let c = traj.coords(r, p);
                row.extend(obs.iter().map(|o| (o.f)(c)));
            }
            row
        })
        .collect();
    Ok(moments(
        &rows,
        obs.iter().map(|o| o.name.clone()).collect(),
        traj.times.clone(),
    ))
}

/// Two-particle statistics over consecutive pairs `(0,1), (2,3), ...`.
pub fn estimate_pair_statistics(
    traj: &EnsembleTrajectories,
    obs: &[PairObservable],
) -> Result<MomentSeries, LangevinError> {
    if traj.particles < 4 || traj.records() == 0 {
        return Err(LangevinError::InvalidInput("pair statistics need at least 2 pairs".into()));
    }
    let pairs = traj.particles / 2;
    let rows: Vec<Vec<f64>> = (0..traj.records())
        .map(|r| {
            let mut row = Vec::with_capacity(pairs * obs.len());
            for q in 0..pairs {
                let (a, b) = (traj.coords(r, 2 * q), traj.coords(r, 2 * q + 1));
                row.extend(obs.iter().map(|o| (o.f)(a, b)));
            }
            row
        })
        .collect();
    Ok(moments(
        &rows,
        obs.iter().map(|o| o.name.clone()).collect(),
        traj.times.clone(),
    ))
}

/// `X(z) = A z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineField {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Recovers `(A, b)` from samples and verifies affinity at off-axis probes.
pub fn affine_part(g: &Generator, dim: usize) -> Result<AffineField, LangevinError> {
    let m = 2 * dim;
    let origin = PhasePoint::origin(dim);
    let b = DVector::from_vec(g.eval(&origin)?);
    let mut a = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        let x = DVector::from_vec(g.eval(&PhasePoint::from_coords_unchecked(e))?);
        a.set_column(j, &(x - &b));
    }
    let scale = a.amax().max(b.amax()).max(1e-300);
    for probe in 0..4u64 {
        let c: Vec<f64> = (0..m)
            .map(|i| 2.0 * crate::rng::uniform(0xA5, probe, i as u64, 0) - 1.0)
            .map(|u| 1.7 * u)
            .collect();
        let z = DVector::from_column_slice(&c);
        let got = DVector::from_vec(g.eval(&PhasePoint::from_coords_unchecked(c))?);
        let want = &a * z + &b;
        if (got - want).amax() > 1e-6 * scale {
            return Err(LangevinError::NonAffine);
        }
    }
    Ok(AffineField { a, b })
}

/// Predicted mean and covariance of `z` at each output time.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPrediction {
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

/// Closed first/second-moment ODEs implied by the one-particle Fokker–Planck
/// equation of an affine model, integrated with RK4.
///
/// With `X_k = A_k z + b_k`, the Itô drift is `Ã z + b̃` where
/// `Ã = A_0 + ½ Σ A_k²` and `b̃ = b_0 + ½ Σ A_k b_k`.
pub fn fp_moment_prediction(
    model: &LangevinModel,
    mean0: &DVector<f64>,
    cov0: &DMatrix<f64>,
    times: &[f64],
    steps_per_unit: usize,
) -> Result<MomentPrediction, LangevinError> {
    let n = model.dim();
    let drift = affine_part(model.drift(), n)?;
    let noise: Vec<AffineField> = model
        .noise()
        .iter()
        .map(|g| affine_part(g, n))
        .collect::<Result<_, _>>()?;
    let mut at = drift.a.clone();
    let mut bt = drift.b.clone();
    for k in &noise {
        at += 0.5 * &k.a * &k.a;
        bt += 0.5 * &k.a * &k.b;
    }
    let rhs = |m: &DVector<f64>, s: &DMatrix<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let dm = &at * m + &bt;
        let mut ds = &at * s + s * at.transpose() + &bt * m.transpose() + m * bt.transpose();
        for k in &noise {
            ds += &k.a * s * k.a.transpose()
                + &k.a * m * k.b.transpose()
                + &k.b * m.transpose() * k.a.transpose()
                + &k.b * k.b.transpose();
        }
        (dm, ds)
    };
    let mut m = mean0.clone();
    let mut s = cov0 + mean0 * mean0.transpose();
    let mut t = 0.0;
    let mut out = MomentPrediction {
        times: Vec::new(),
        mean: Vec::new(),
        cov: Vec::new(),
    };
    for &target in times {
        let span = target - t;
        if span < 0.0 {
            return Err(LangevinError::InvalidInput("output times must be increasing".into()));
        }
        let steps = ((span * steps_per_unit as f64).ceil() as usize).max(1);
        let h = span / steps as f64;
        for _ in 0..steps {
            if h == 0.0 {
                break;
            }
            let (k1m, k1s) = rhs(&m, &s);
            let (k2m, k2s) = rhs(&(&m + 0.5 * h * &k1m), &(&s + 0.5 * h * &k1s));
            let (k3m, k3s) = rhs(&(&m + 0.5 * h * &k2m), &(&s + 0.5 * h * &k2s));
            let (k4m, k4s) = rhs(&(&m + h * &k3m), &(&s + h * &k3s));
            m += h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
            s += h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
        }
        t = target;
        out.times.push(t);
        out.cov.push(&s - &m * m.transpose());
        out.mean.push(m.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{map_jacobian, symplectic_matrix, ScalarField, VectorField};

    fn kinetic(n: usize) -> ScalarField {
        ScalarField::new("|v|^2/2", n, |z| 0.5 * z.v().iter().map(|c| c * c).sum::<f64>())
            .with_gradient(|z| {
                let n = z.dim();
                let mut g = vec![0.0; 2 * n];
                g[n..].copy_from_slice(z.v());
                g
            })
    }

    fn additive_1d() -> LangevinModel {
        let h1 = ScalarField::new("x", 1, |z| z.x()[0]);
        LangevinModel::new(
            "additive",
            Generator::Hamiltonian(kinetic(1)),
            vec![Generator::Hamiltonian(h1)],
        )
        .unwrap()
    }

    #[test]
    fn midpoint_free_streaming_is_exact() {
        let model = LangevinModel::new("free", Generator::Hamiltonian(kinetic(3)), vec![]).unwrap();
        let z = PhasePoint::new(&[0.1, 0.2, 0.3], &[1.0, -2.0, 0.5]).unwrap();
        let out = stratonovich_step(&model, &z, 0.25, &[], Scheme::ImplicitMidpoint).unwrap();
        let expect = crate::phase::free_streaming_flow(&z, 0.25);
        for (a, b) in out.coords().iter().zip(expect.coords()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_increment_count_is_rejected() {
        let model = additive_1d();
        let z = PhasePoint::origin(1);
        assert!(matches!(
            stratonovich_step(&model, &z, 0.1, &[], Scheme::Heun),
            Err(LangevinError::InvalidInput(_))
        ));
    }

    #[test]
    fn midpoint_map_is_symplectic_for_linear_fields() {
        // Drift and one noise Hamiltonian, both quadratic, so the step is linear.
        let h0 = ScalarField::new("osc", 1, |z| 0.5 * (z.x()[0].powi(2) + 0.3 * z.v()[0].powi(2)));
        let h1 = ScalarField::new("xv", 1, |z| z.x()[0] * z.v()[0] + 0.2 * z.x()[0].powi(2));
        let model = LangevinModel::new(
            "lin",
            Generator::Hamiltonian(h0),
            vec![Generator::Hamiltonian(h1)],
        )
        .unwrap();
        let z = PhasePoint::new(&[0.4], &[-0.3]).unwrap();
        let step = |p: &PhasePoint| {
            stratonovich_step(&model, p, 0.05, &[0.17], Scheme::ImplicitMidpoint)
                .map_err(|_| PhaseError::NonFinite("step".into()))
        };
        let j = map_jacobian(step, &z, 1e-2).unwrap();
        let omega = symplectic_matrix(1);
        let d = j.transpose() * &omega * &j - &omega;
        assert!(d.amax() < 1e-10, "{d}");
    }

    #[test]
    fn heun_and_midpoint_agree_for_additive_noise() {
        let model = additive_1d();
        let z = PhasePoint::new(&[0.3], &[0.2]).unwrap();
        let a = stratonovich_step(&model, &z, 0.1, &[0.05], Scheme::Heun).unwrap();
        let b = stratonovich_step(&model, &z, 0.1, &[0.05], Scheme::ImplicitMidpoint).unwrap();
        for (p, q) in a.coords().iter().zip(b.coords()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn additive_model_matches_exact_gaussian() {
        // dv = -dW, dx = v dt: v(T) ~ N(v0, T), Var x(T) = T^3 / 3.
        let model = additive_1d();
        let init = vec![PhasePoint::new(&[0.0], &[0.5]).unwrap(); 20_000];
        let traj = simulate_flow(
            &model,
            &init,
            &FlowOptions {
                t_end: 1.0,
                dt: 0.01,
                seed: 9,
                mode: NoiseMode::Independent,
                scheme: Scheme::Heun,
                record_every: 100,
            },
        )
        .unwrap();
        let stats = estimate_statistics(
            &traj,
            &[Observable::coord("x", 0), Observable::coord("v", 1)],
        )
        .unwrap();
        let r = stats.times.len() - 1;
        assert!((stats.mean[r][1] - 0.5).abs() < 3.0 * stats.mean_stderr[r][1]);
        assert!((stats.variance(r, 1) - 1.0).abs() < 3.0 * stats.var_stderr[r][1]);
        let pred = fp_moment_prediction(
            &model,
            &DVector::from_vec(vec![0.0, 0.5]),
            &DMatrix::zeros(2, 2),
            &[1.0],
            200,
        )
        .unwrap();
        assert!((pred.cov[0][(0, 0)] - 1.0 / 3.0).abs() < 1e-10);
        assert!((stats.variance(r, 0) - pred.cov[0][(0, 0)]).abs() < 3.0 * stats.var_stderr[r][0]);
    }

    #[test]
    fn non_affine_model_is_reported() {
        let h = ScalarField::new("x^3", 1, |z| z.x()[0].powi(3));
        let model =
            LangevinModel::new("cubic", Generator::Hamiltonian(kinetic(1)), vec![Generator::Hamiltonian(h)])
                .unwrap();
        let r = fp_moment_prediction(&model, &DVector::zeros(2), &DMatrix::zeros(2, 2), &[1.0], 10);
        assert_eq!(r, Err(LangevinError::NonAffine));
    }

    #[test]
    fn constant_trajectories_have_zero_variance() {
        let model = LangevinModel::new(
            "still",
            Generator::Field(VectorField::new("0", 1, |_| vec![0.0, 0.0])),
            vec![],
        )
        .unwrap();
        let init = vec![PhasePoint::new(&[1.0], &[2.0]).unwrap(); 10];
        let traj = simulate_flow(
            &model,
            &init,
            &FlowOptions {
                t_end: 1.0,
                dt: 0.1,
                seed: 1,
                mode: NoiseMode::Shared,
                scheme: Scheme::Heun,
                record_every: 1,
            },
        )
        .unwrap();
        let s = estimate_statistics(&traj, &[Observable::coord("v", 1)]).unwrap();
        assert!(s.cov.iter().all(|c| c[(0, 0)] == 0.0));
        assert_eq!(s.times.len(), 11);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let model = additive_1d();
        let init = vec![PhasePoint::new(&[0.0], &[0.0]).unwrap(); 8];
        let opts = FlowOptions {
            t_end: 0.5,
            dt: 0.05,
            seed: 77,
            mode: NoiseMode::Independent,
            scheme: Scheme::Heun,
            record_every: 2,
        };
        let a = simulate_flow(&model, &init, &opts).unwrap();
        let b = simulate_flow(&model, &init, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grouped_noise_is_shared_within_groups_only() {
        let model = additive_1d();
        let init = vec![PhasePoint::origin(1); 6];
        let opts = FlowOptions {
            t_end: 0.5,
            dt: 0.05,
            seed: 3,
            mode: NoiseMode::Grouped(2),
            scheme: Scheme::Heun,
            record_every: 10,
        };
        let t = simulate_flow(&model, &init, &opts).unwrap();
        let v = |p| t.coords(1, p)[1];
        assert_eq!(v(0), v(1));
        assert_eq!(v(4), v(5));
        assert_ne!(v(1), v(2));
    }

    #[test]
    fn non_integer_step_count_rejected() {
        let model = additive_1d();
        let init = vec![PhasePoint::origin(1)];
        let opts = FlowOptions {
            t_end: 1.0,
            dt: 0.3,
            seed: 0,
            mode: NoiseMode::Shared,
            scheme: Scheme::Heun,
            record_every: 1,
        };
        assert!(matches!(
            simulate_flow(&model, &init, &opts),
            Err(LangevinError::InvalidInput(_))
        ));
    }
}
