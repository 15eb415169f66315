//! Coarse-graining: kick functionals `s1`, `s2`, the two-point covariance
//! kernel of `X_{s1}`, its decomposition into Hamiltonian noise modes, and
//! assembly of the physical Langevin model.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::langevin::LangevinModel;
use crate::phase::{
    bracket_of_gradients, fd_step, free_streaming_flow, symplectic_matrix, Generator, PhaseError,
    PhasePoint, ScalarField,
};
use crate::quad::{GaussLegendre, QuadratureSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoarseError {
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("quadrature needs at least 2 nodes and 1 panel")]
    BadQuadrature,
    #[error("non-finite integrand sample in {0}")]
    NonFinite(String),
    #[error("tau must be positive, got {0}")]
    InvalidTau(f64),
    #[error("trace fraction must lie in (0, 1], got {0}")]
    InvalidTraceFraction(f64),
    #[error("at least 2 samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("kernel is not positive semi-definite: eigenvalue {min_eigenvalue:e} with trace {trace:e}")]
    KernelNotPsd { min_eigenvalue: f64, trace: f64 },
    #[error("mode {mode} fails integrability: closed-loop residue {residue:e} exceeds {tol:e}")]
    NotIntegrable { mode: usize, residue: f64, tol: f64 },
    #[error("regime violated: {0}")]
    Regime(String),
}

type TimeFn = dyn Fn(f64, &PhasePoint) -> f64 + Send + Sync;
type FlowFn = dyn Fn(&PhasePoint, f64) -> PhasePoint + Send + Sync;

/// A time-dependent perturbation `h_t(z)` on `[0, τ]`.
#[derive(Clone)]
pub enum TimeField {
    Zero { dim: usize },
    /// Smooth in `t`.
    Smooth {
        name: String,
        dim: usize,
        f: Arc<TimeFn>,
    },
    /// `profile(z) δ(t - t0)`.
    Impulse { t0: f64, profile: ScalarField },
}

impl fmt::Debug for TimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeField::Zero { dim } => write!(f, "TimeField::Zero(n={dim})"),
            TimeField::Smooth { name, dim, .. } => write!(f, "TimeField::Smooth({name}, n={dim})"),
            TimeField::Impulse { t0, profile } => {
                write!(f, "TimeField::Impulse({}, t0={t0})", profile.name())
            }
        }
    }
}

impl TimeField {
    pub fn smooth<F>(name: impl Into<String>, dim: usize, f: F) -> Self
    where
        F: Fn(f64, &PhasePoint) -> f64 + Send + Sync + 'static,
    {
        TimeField::Smooth {
            name: name.into(),
            dim,
            f: Arc::new(f),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TimeField::Zero { dim } | TimeField::Smooth { dim, .. } => *dim,
            TimeField::Impulse { profile, .. } => profile.dim(),
        }
    }

    /// Pointwise value; impulses contribute only through integrals and read 0 here.
    pub fn at(&self, t: f64, z: &PhasePoint) -> f64 {
        match self {
            TimeField::Smooth { f, .. } => f(t, z),
            _ => 0.0,
        }
    }
}

/// Unperturbed flow `F_t` generated by `H0`.
#[derive(Clone, Default)]
pub enum BackgroundFlow {
    #[default]
    FreeStreaming,
    Map(Arc<FlowFn>),
}

impl fmt::Debug for BackgroundFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackgroundFlow::FreeStreaming => write!(f, "FreeStreaming"),
            BackgroundFlow::Map(_) => write!(f, "Map"),
        }
    }
}

impl BackgroundFlow {
    pub fn map<F>(f: F) -> Self
    where
        F: Fn(&PhasePoint, f64) -> PhasePoint + Send + Sync + 'static,
    {
        BackgroundFlow::Map(Arc::new(f))
    }

    pub fn apply(&self, z: &PhasePoint, t: f64) -> PhasePoint {
        match self {
            BackgroundFlow::FreeStreaming => free_streaming_flow(z, t),
            BackgroundFlow::Map(f) => f(z, t),
        }
    }
}

/// A random family of perturbations `h_t` with amplitude ε.
pub trait PerturbationEnsemble: Send + Sync {
    fn dim(&self) -> usize;
    fn tau(&self) -> f64;
    fn eps(&self) -> f64;
    /// Declared autocorrelation time of `h_t`.
    fn tau_ac(&self) -> f64;
    fn sample(&self, seed: u64) -> TimeField;
    fn background(&self) -> BackgroundFlow {
        BackgroundFlow::FreeStreaming
    }
}

/// Checks `τ_ac < τ`, and `τ < τ_b` when a bounce time is declared.
pub fn check_regime(ens: &dyn PerturbationEnsemble, tau_b: Option<f64>) -> Result<(), CoarseError> {
    if ens.tau_ac() >= ens.tau() {
        return Err(CoarseError::Regime(format!(
            "tau_ac = {} is not below tau = {}",
            ens.tau_ac(),
            ens.tau()
        )));
    }
    if let Some(tb) = tau_b {
        if ens.tau() >= tb {
            return Err(CoarseError::Regime(format!(
                "tau = {} is not below tau_b = {tb}",
                ens.tau()
            )));
        }
    }
    Ok(())
}

/// Empirical mean of `h_t(z)` over ensemble draws at random `(z, t)`; returns (mean, stderr).
pub fn ensemble_mean(
    ens: &dyn PerturbationEnsemble,
    pts: &[PhasePoint],
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let tau = ens.tau();
    let vals: Vec<f64> = (0..samples)
        .map(|s| {
            let h = ens.sample(crate::rng::hash4(seed, s as u64, 0, 0));
            let z = &pts[s % pts.len()];
            match &h {
                TimeField::Impulse { profile, .. } => profile.value(z),
                other => other.at(tau * crate::rng::uniform(seed, s as u64, 1, 0), z),
            }
        })
        .collect();
    mean_and_stderr(&vals)
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_quad(quad: &QuadratureSpec) -> Result<(), CoarseError> {
    if quad.nodes < 2 || quad.panels < 1 {
        return Err(CoarseError::BadQuadrature);
    }
    Ok(())
}

/// `A_λ(z) = h_{τ-λ}(F_{-λ} z)`.
fn pulled_value(h: &TimeField, flow: &BackgroundFlow, tau: f64, lam: f64, z: &PhasePoint) -> f64 {
    h.at(tau - lam, &flow.apply(z, -lam))
}

fn pulled_gradient(
    h: &TimeField,
    flow: &BackgroundFlow,
    tau: f64,
    lam: f64,
    z: &PhasePoint,
) -> Vec<f64> {
    let mut coords = z.coords().to_vec();
    let mut out = vec![0.0; coords.len()];
    for i in 0..coords.len() {
        let c = coords[i];
        let step = fd_step(c);
        coords[i] = c + step;
        let fp = pulled_value(h, flow, tau, lam, &PhasePoint::from_coords_unchecked(coords.clone()));
        coords[i] = c - step;
        let fm = pulled_value(h, flow, tau, lam, &PhasePoint::from_coords_unchecked(coords.clone()));
        coords[i] = c;
        out[i] = (fp - fm) / (2.0 * step);
    }
    out
}

/// `s1(z) = ∫_0^τ h_{τ-λ}(F_{-λ} z) dλ`.
pub fn compute_s1(
    h: &TimeField,
    tau: f64,
    z: &PhasePoint,
    quad: &QuadratureSpec,
    flow: &BackgroundFlow,
) -> Result<f64, CoarseError> {
    check_quad(quad)?;
    if !(tau > 0.0) {
        return Err(CoarseError::InvalidTau(tau));
    }
    if h.dim() != z.dim() {
        return Err(PhaseError::DimensionMismatch {
            expected: h.dim(),
            found: z.dim(),
        }
        .into());
    }
    let value = match h {
        TimeField::Zero { .. } => 0.0,
        TimeField::Impulse { t0, profile } => {
            if *t0 < 0.0 || *t0 > tau {
                0.0
            } else {
                profile.value(&flow.apply(z, -(tau - t0)))
            }
        }
        TimeField::Smooth { name, .. } => {
            let mut acc = 0.0;
            for (lam, w) in quad.points(0.0, tau) {
                let s = pulled_value(h, flow, tau, lam, z);
                if !s.is_finite() {
                    return Err(CoarseError::NonFinite(name.clone()));
                }
                acc += w * s;
            }
            acc
        }
    };
    if !value.is_finite() {
        return Err(CoarseError::NonFinite("s1".into()));
    }
    Ok(value)
}

/// `s2(z) = ½ ∫_0^τ ∫_0^a {A_b, A_a}(z) db da` with `A_λ = h_{τ-λ} ∘ F_{-λ}`.
///
/// A single impulse commutes with itself, so its `s2` vanishes.
pub fn compute_s2(
    h: &TimeField,
    tau: f64,
    z: &PhasePoint,
    quad: &QuadratureSpec,
    flow: &BackgroundFlow,
) -> Result<f64, CoarseError> {
    check_quad(quad)?;
    if !(tau > 0.0) {
        return Err(CoarseError::InvalidTau(tau));
    }
    if h.dim() != z.dim() {
        return Err(PhaseError::DimensionMismatch {
            expected: h.dim(),
            found: z.dim(),
        }
        .into());
    }
    let TimeField::Smooth { name, .. } = h else {
        return Ok(0.0);
    };
    let rule = GaussLegendre::new(quad.nodes);
    let mut acc = 0.0;
    for (a, wa) in quad.points(0.0, tau) {
        let ga = pulled_gradient(h, flow, tau, a, z);
        // Inner panels scale with a so that resolution tracks the outer rule.
        let inner_panels = ((quad.panels as f64 * a / tau).ceil() as usize).max(1);
        let width = a / inner_panels as f64;
        let mut inner = 0.0;
        for p in 0..inner_panels {
            let lo = p as f64 * width;
            for (b, wb) in rule.mapped(lo, lo + width) {
                let gb = pulled_gradient(h, flow, tau, b, z);
                inner += wb * bracket_of_gradients(&gb, &ga);
            }
        }
        acc += wa * inner;
    }
    let value = 0.5 * acc;
    if !value.is_finite() {
        return Err(CoarseError::NonFinite(name.clone()));
    }
    Ok(value)
}

/// `s1` of one draw as a scalar field.
pub fn s1_field(h: TimeField, tau: f64, quad: QuadratureSpec, flow: BackgroundFlow) -> ScalarField {
    let dim = h.dim();
    ScalarField::new("s1", dim, move |z| {
        compute_s1(&h, tau, z, &quad, &flow).unwrap_or(f64::NAN)
    })
}

type KernelFn = dyn Fn(&PhasePoint, &PhasePoint) -> DMatrix<f64> + Send + Sync;

/// How a kernel was obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelMode {
    Analytic,
    MonteCarlo {
        samples: usize,
        /// Per-entry standard errors of the block Gram matrix on the estimation points.
        stderr: DMatrix<f64>,
        /// All draws produced the same field.
        degenerate: bool,
    },
}

/// Kernel given as `weight · Σ_f X_f(z1) ⊗ X_f(z2)` over a list of Hamiltonians,
/// with the vector fields cached at a fixed point set.
struct Features {
    fields: Vec<ScalarField>,
    weight: f64,
    pts: Vec<PhasePoint>,
    /// Per cached point: one row `X_f(z)ᵀ` per field.
    rows: Vec<DMatrix<f64>>,
}

impl Features {
    fn new(fields: Vec<ScalarField>, weight: f64, pts: &[PhasePoint]) -> Result<Self, PhaseError> {
        let mut out = Self {
            fields,
            weight,
            pts: Vec::new(),
            rows: Vec::new(),
        };
        let rows = pts
            .iter()
            .map(|z| out.compute_rows(z))
            .collect::<Result<Vec<_>, _>>()?;
        out.pts = pts.to_vec();
        out.rows = rows;
        Ok(out)
    }

    fn compute_rows(&self, z: &PhasePoint) -> Result<DMatrix<f64>, PhaseError> {
        let m = 2 * z.dim();
        let xs: Vec<Vec<f64>> = self
            .fields
            .par_iter()
            .map(|f| crate::phase::hamiltonian_vector_field(f, z))
            .collect::<Result<_, _>>()?;
        Ok(DMatrix::from_fn(xs.len(), m, |s, c| xs[s][c]))
    }

    fn rows(&self, z: &PhasePoint) -> DMatrix<f64> {
        if let Some(i) = self.pts.iter().position(|p| p == z) {
            return self.rows[i].clone();
        }
        self.compute_rows(z)
            .unwrap_or_else(|_| DMatrix::from_element(self.fields.len(), 2 * z.dim(), f64::NAN))
    }
}

/// Two-point covariance `α(z1, z2) = E[X_{s1}(z1) ⊗ X_{s1}(z2)]`.
#[derive(Clone)]
pub struct CovarianceKernel {
    dim: usize,
    eval: Arc<KernelFn>,
    features: Option<Arc<Features>>,
    mode: KernelMode,
}

impl fmt::Debug for CovarianceKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CovarianceKernel")
            .field("dim", &self.dim)
            .field("mode", &self.mode)
            .finish()
    }
}

impl CovarianceKernel {
    pub fn analytic<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&PhasePoint, &PhasePoint) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            eval: Arc::new(eval),
            features: None,
            mode: KernelMode::Analytic,
        }
    }

    fn from_features(dim: usize, features: Features, mode: KernelMode) -> Self {
        let features = Arc::new(features);
        let f = Arc::clone(&features);
        Self {
            dim,
            eval: Arc::new(move |a, b| f.weight * f.rows(a).transpose() * f.rows(b)),
            features: Some(features),
            mode,
        }
    }

    /// Kernel of a finite set of Hamiltonians: `Σ_f X_f(z1) ⊗ X_f(z2)`.
    pub fn from_hamiltonians(fields: Vec<ScalarField>) -> Self {
        let dim = fields.first().map_or(1, |f| f.dim());
        let features = Features {
            fields,
            weight: 1.0,
            pts: Vec::new(),
            rows: Vec::new(),
        };
        Self::from_features(dim, features, KernelMode::Analytic)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> &KernelMode {
        &self.mode
    }

    pub fn eval(&self, z1: &PhasePoint, z2: &PhasePoint) -> DMatrix<f64> {
        (self.eval)(z1, z2)
    }

    /// Lowered kernel `β = Ωᵀ α Ω = E[ds1 ⊗ ds1]`.
    pub fn lowered(&self, z1: &PhasePoint, z2: &PhasePoint) -> DMatrix<f64> {
        let omega = symplectic_matrix(z1.dim());
        omega.transpose() * self.eval(z1, z2) * omega
    }

    /// `β(g, z)` for every `g` in `grid`, sharing work across the grid.
    pub fn lowered_column(&self, grid: &[PhasePoint], z: &PhasePoint) -> Vec<DMatrix<f64>> {
        match &self.features {
            Some(f) => {
                let omega = symplectic_matrix(z.dim());
                let rz = f.rows(z) * &omega;
                grid.iter()
                    .map(|g| f.weight * (f.rows(g) * &omega).transpose() * &rz)
                    .collect()
            }
            None => grid.iter().map(|g| self.lowered(g, z)).collect(),
        }
    }

    /// Block Gram matrix `[α(z_i, z_j)]` over a point set.
    pub fn gram(&self, pts: &[PhasePoint]) -> DMatrix<f64> {
        block_gram(pts, |a, b| self.eval(a, b))
    }

    fn lowered_gram(&self, pts: &[PhasePoint]) -> DMatrix<f64> {
        block_gram(pts, |a, b| self.lowered(a, b))
    }
}

fn block_gram<F: Fn(&PhasePoint, &PhasePoint) -> DMatrix<f64>>(
    pts: &[PhasePoint],
    f: F,
) -> DMatrix<f64> {
    let m = 2 * pts[0].dim();
    let n = pts.len();
    let mut g = DMatrix::zeros(m * n, m * n);
    for i in 0..n {
        for j in i..n {
            let blk = f(&pts[i], &pts[j]);
            g.view_mut((i * m, j * m), (m, m)).copy_from(&blk);
            if i != j {
                g.view_mut((j * m, i * m), (m, m)).copy_from(&blk.transpose());
            }
        }
    }
    g
}

/// Monte-Carlo estimate of the covariance kernel.
///
/// The returned kernel evaluates the sample mean at any pair of points; the
/// standard errors refer to the block Gram matrix on `pts`.
pub fn estimate_covariance_kernel(
    ens: &dyn PerturbationEnsemble,
    pts: &[PhasePoint],
    samples: usize,
    seed: u64,
    quad: QuadratureSpec,
) -> Result<CovarianceKernel, CoarseError> {
    if samples < 2 {
        return Err(CoarseError::TooFewSamples(samples));
    }
    if pts.is_empty() {
        return Err(CoarseError::EmptyGrid);
    }
    let dim = ens.dim();
    let tau = ens.tau();
    let flow = ens.background();
    let fields: Vec<ScalarField> = (0..samples)
        .map(|s| {
            let h = ens.sample(crate::rng::hash4(seed, s as u64, 0, 0));
            s1_field(h, tau, quad, flow.clone())
        })
        .collect();
    let features = Features::new(fields, 1.0 / samples as f64, pts)?;
    // Stack X_{s1} over the estimation points: one row per draw.
    let m = 2 * dim * pts.len();
    let draws = DMatrix::from_fn(samples, m, |s, c| {
        let (p, k) = (c / (2 * dim), c % (2 * dim));
        features.rows[p][(s, k)]
    });
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(CoarseError::NonFinite("X_s1 sample".into()));
    }
    let n = samples as f64;
    let mean = draws.transpose() * &draws / n;
    let sq = draws.map(|v| v * v);
    let second = sq.transpose() * &sq / n;
    let stderr = (second - mean.component_mul(&mean)).map(|v| (v.max(0.0) / (n - 1.0)).sqrt());
    let degenerate = (1..samples).all(|s| draws.row(s) == draws.row(0));
    Ok(CovarianceKernel::from_features(
        dim,
        features,
        KernelMode::MonteCarlo {
            samples,
            stderr,
            degenerate,
        },
    ))
}

/// Latin-hypercube sample of the box `[lo, hi]` (coordinates ordered `(x, v)`).
pub fn latin_hypercube(lo: &[f64], hi: &[f64], count: usize, seed: u64) -> Vec<PhasePoint> {
    let dims = lo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: Vec<Vec<usize>> = (0..dims)
        .map(|_| {
            let mut p: Vec<usize> = (0..count).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    (0..count)
        .map(|i| {
            let coords = (0..dims)
                .map(|d| {
                    let cell = columns[d][i] as f64;
                    let u = crate::rng::uniform(seed, d as u64, i as u64, 7);
                    lo[d] + (hi[d] - lo[d]) * (cell + u) / count as f64
                })
                .collect();
            PhasePoint::from_coords_unchecked(coords)
        })
        .collect()
}

/// Options for [`kl_decompose`].
#[derive(Debug, Clone)]
pub struct KlOptions {
    pub trace_fraction: f64,
    /// Rule for the straight-line integrals that rebuild `H_k` from `dH_k`.
    pub line_quad: QuadratureSpec,
    /// Relative tolerance on closed-loop residues.
    pub loop_tol: f64,
}

impl Default for KlOptions {
    fn default() -> Self {
        Self {
            trace_fraction: 0.99,
            line_quad: QuadratureSpec {
                nodes: 16,
                panels: 4,
            },
            loop_tol: 1e-6,
        }
    }
}

struct ModeData {
    kernel: CovarianceKernel,
    grid: Vec<PhasePoint>,
    /// `c_k = u_k / sqrt(λ_k)` per retained mode.
    coeffs: Vec<DVector<f64>>,
    anchor: PhasePoint,
    line_quad: QuadratureSpec,
}

impl ModeData {
    /// `dH_k(z)` for every retained mode (Nyström extension).
    fn gradients(&self, z: &PhasePoint) -> Vec<Vec<f64>> {
        let m = 2 * z.dim();
        let betas = self.kernel.lowered_column(&self.grid, z);
        self.coeffs
            .iter()
            .map(|c| {
                let mut out = vec![0.0; m];
                for (i, beta) in betas.iter().enumerate() {
                    for a in 0..m {
                        let ca = c[i * m + a];
                        if ca == 0.0 {
                            continue;
                        }
                        for (b, o) in out.iter_mut().enumerate() {
                            *o += ca * beta[(a, b)];
                        }
                    }
                }
                out
            })
            .collect()
    }

    /// `∫ dH_k` along the segment p → q, all modes.
    fn line_integrals(&self, p: &PhasePoint, q: &PhasePoint) -> Vec<f64> {
        let dir: Vec<f64> = q.coords().iter().zip(p.coords()).map(|(a, b)| a - b).collect();
        let mut acc = vec![0.0; self.coeffs.len()];
        for (s, w) in self.line_quad.points(0.0, 1.0) {
            let pt = p.offset(&dir, s);
            for (k, g) in self.gradients(&pt).iter().enumerate() {
                acc[k] += w * g.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        acc
    }
}

/// Retained Hamiltonian noise modes.
#[derive(Clone)]
pub struct NoiseBasis {
    pub modes: Vec<ScalarField>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Trace of the lowered Gram matrix.
    pub trace: f64,
    pub captured_fraction: f64,
    data: Option<Arc<ModeData>>,
}

impl fmt::Debug for NoiseBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseBasis")
            .field("rank", &self.modes.len())
            .field("eigenvalues", &self.eigenvalues)
            .field("captured_fraction", &self.captured_fraction)
            .finish()
    }
}

impl NoiseBasis {
    pub fn from_fields(modes: Vec<ScalarField>) -> Self {
        Self {
            modes,
            eigenvalues: Vec::new(),
            trace: f64::NAN,
            captured_fraction: 1.0,
            data: None,
        }
    }

    pub fn rank(&self) -> usize {
        self.modes.len()
    }

    /// `dH_k(z)` for all modes.
    pub fn gradients(&self, z: &PhasePoint) -> Result<Vec<Vec<f64>>, PhaseError> {
        match &self.data {
            Some(d) => Ok(d.gradients(z)),
            None => self.modes.iter().map(|h| h.gradient(z)).collect(),
        }
    }

    /// `Σ_k dH_k ⊗ dH_k` at z.
    pub fn lowered_diagonal(&self, z: &PhasePoint) -> Result<DMatrix<f64>, PhaseError> {
        let m = 2 * z.dim();
        let mut acc = DMatrix::zeros(m, m);
        for g in self.gradients(z)? {
            let g = DVector::from_vec(g);
            acc += &g * g.transpose();
        }
        Ok(acc)
    }

    /// Gram matrix of the retained modes in the kernel inner product, estimated on the grid.
    pub fn rkhs_gram(&self) -> Option<DMatrix<f64>> {
        let d = self.data.as_ref()?;
        let b = d.kernel.lowered_gram(&d.grid);
        let k = d.coeffs.len();
        Some(DMatrix::from_fn(k, k, |i, j| {
            (d.coeffs[i].transpose() * &b * &d.coeffs[j])[(0, 0)]
        }))
    }

    pub fn anchor(&self) -> Option<&PhasePoint> {
        self.data.as_ref().map(|d| &d.anchor)
    }
}

/// Mercer decomposition of a covariance kernel into Hamiltonian modes.
///
/// The kernel is lowered to `β = E[ds1 ⊗ ds1]`, its block Gram matrix on the
/// grid is diagonalised, the leading modes carrying `trace_fraction` of the
/// trace are kept, and each `H_k` is rebuilt by straight-line integration of
/// its Nyström-extended differential from `grid[0]` (where `H_k = 0`).
pub fn kl_decompose(
    kernel: &CovarianceKernel,
    grid: &[PhasePoint],
    opts: &KlOptions,
) -> Result<NoiseBasis, CoarseError> {
    if !(opts.trace_fraction > 0.0 && opts.trace_fraction <= 1.0) {
        return Err(CoarseError::InvalidTraceFraction(opts.trace_fraction));
    }
    if grid.is_empty() {
        return Err(CoarseError::EmptyGrid);
    }
    for z in grid {
        if z.dim() != kernel.dim() {
            return Err(PhaseError::DimensionMismatch {
                expected: kernel.dim(),
                found: z.dim(),
            }
            .into());
        }
    }
    let b = kernel.lowered_gram(grid);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(CoarseError::NonFinite("kernel Gram matrix".into()));
    }
    let trace = b.trace();
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let min_eig = eig.eigenvalues.min();
    if trace > 0.0 && min_eig < -1e-8 * trace {
        return Err(CoarseError::KernelNotPsd {
            min_eigenvalue: min_eig,
            trace,
        });
    }
    let anchor = grid[0].clone();
    let mut coeffs = Vec::new();
    let mut eigenvalues = Vec::new();
    let mut captured = 0.0;
    if trace > 0.0 {
        for &i in &order {
            let lam = eig.eigenvalues[i];
            if captured >= opts.trace_fraction * trace || lam <= 1e-10 * trace {
                break;
            }
            captured += lam;
            eigenvalues.push(lam);
            coeffs.push(eig.eigenvectors.column(i) / lam.sqrt());
        }
    }
    let mut data = ModeData {
        kernel: kernel.clone(),
        grid: grid.to_vec(),
        coeffs,
        anchor: anchor.clone(),
        line_quad: opts.line_quad,
    };
    // Sign gauge: the largest-magnitude component of dH_k at the anchor is positive.
    let g0 = data.gradients(&anchor);
    for (k, g) in g0.iter().enumerate() {
        let big = g.iter().copied().fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if big < 0.0 {
            data.coeffs[k] *= -1.0;
        }
    }
    let data = Arc::new(data);
    check_integrability(&data, grid, opts.loop_tol)?;
    let modes = (0..data.coeffs.len())
        .map(|k| {
            let dv = Arc::clone(&data);
            let dg = Arc::clone(&data);
            ScalarField::new(format!("H{}", k + 1), kernel.dim(), move |z| {
                dv.line_integrals(&dv.anchor, z)[k]
            })
            .with_gradient(move |z| dg.gradients(z).swap_remove(k))
        })
        .collect();
    Ok(NoiseBasis {
        modes,
        eigenvalues,
        trace,
        captured_fraction: if trace > 0.0 { captured / trace } else { 1.0 },
        data: Some(data),
    })
}

fn check_integrability(data: &ModeData, grid: &[PhasePoint], tol: f64) -> Result<(), CoarseError> {
    if grid.len() < 3 || data.coeffs.is_empty() {
        return Ok(());
    }
    let (a, b, c) = (&grid[0], &grid[grid.len() / 2], &grid[grid.len() - 1]);
    let ab = data.line_integrals(a, b);
    let bc = data.line_integrals(b, c);
    let ca = data.line_integrals(c, a);
    for k in 0..data.coeffs.len() {
        let residue = (ab[k] + bc[k] + ca[k]).abs();
        let scale = ab[k].abs() + bc[k].abs() + ca[k].abs();
        let bound = tol * scale.max(1e-300);
        if residue > bound && residue > 1e-12 {
            return Err(CoarseError::NotIntegrable {
                mode: k,
                residue,
                tol: bound,
            });
        }
    }
    Ok(())
}

/// Largest deviation of `Σ_k dH_k ⊗ dH_k` from the lowered kernel diagonal on
/// the grid, relative to the mean diagonal trace.
pub fn diagonal_reconstruction_error(
    kernel: &CovarianceKernel,
    basis: &NoiseBasis,
    grid: &[PhasePoint],
) -> Result<f64, CoarseError> {
    let mut worst: f64 = 0.0;
    let mut tr = 0.0;
    for z in grid {
        let target = kernel.lowered(z, z);
        tr += target.trace();
        let got = basis.lowered_diagonal(z)?;
        worst = worst.max((got - target).amax());
    }
    tr /= grid.len() as f64;
    Ok(if tr > 0.0 { worst / tr } else { worst })
}

/// Physical Langevin model: `H̃0 = H0 + (ε²/τ) E[s2]`, `H̃_k = (ε/√τ) H_k`.
pub fn assemble_langevin(
    h0: &ScalarField,
    mean_s2: &ScalarField,
    basis: &NoiseBasis,
    eps: f64,
    tau: f64,
) -> Result<LangevinModel, CoarseError> {
    if !(tau > 0.0) {
        return Err(CoarseError::InvalidTau(tau));
    }
    if h0.dim() != mean_s2.dim() {
        return Err(PhaseError::DimensionMismatch {
            expected: h0.dim(),
            found: mean_s2.dim(),
        }
        .into());
    }
    let drift = h0.plus(&mean_s2.scaled(eps * eps / tau));
    let noise = basis
        .modes
        .iter()
        .map(|h| Generator::Hamiltonian(h.scaled(eps / tau.sqrt())))
        .collect();
    Ok(LangevinModel::new(
        "assembled",
        Generator::Hamiltonian(drift),
        noise,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3(x: [f64; 3], v: [f64; 3]) -> PhasePoint {
        PhasePoint::new(&x, &v).unwrap()
    }

    #[test]
    fn s1_of_static_position_field() {
        let h = TimeField::smooth("x1", 3, |_, z| z.x()[0]);
        let z = p3([0.0; 3], [1.0, 0.0, 0.0]);
        let v = compute_s1(&h, 1.0, &z, &QuadratureSpec::default(), &BackgroundFlow::FreeStreaming)
            .unwrap();
        assert!((v + 0.5).abs() < 1e-14);
    }

    #[test]
    fn s1_of_zero_field_is_zero() {
        let h = TimeField::Zero { dim: 3 };
        let z = p3([1.0; 3], [1.0; 3]);
        let v = compute_s1(&h, 2.0, &z, &QuadratureSpec::default(), &BackgroundFlow::FreeStreaming)
            .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn s1_rejects_one_node_rule() {
        let h = TimeField::Zero { dim: 1 };
        let z = PhasePoint::origin(1);
        let q = QuadratureSpec { nodes: 1, panels: 4 };
        assert_eq!(
            compute_s1(&h, 1.0, &z, &q, &BackgroundFlow::FreeStreaming),
            Err(CoarseError::BadQuadrature)
        );
    }

    #[test]
    fn s2_of_velocity_only_field_vanishes() {
        let h = TimeField::smooth("v", 3, |t, z| (1.0 + t) * z.v()[1].powi(2));
        let z = p3([0.3, 0.2, 0.1], [1.0, 2.0, 3.0]);
        let v = compute_s2(&h, 1.0, &z, &QuadratureSpec::default(), &BackgroundFlow::FreeStreaming)
            .unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn s2_of_linear_in_time_field() {
        // {A_b, A_a} = (τ-a)(τ-b)(b-a) for h_t = x¹ t; the triangle integral at τ = 1 is -1/30.
        let h = TimeField::smooth("x1 t", 3, |t, z| z.x()[0] * t);
        let z = p3([0.5, 0.0, 0.0], [0.7, 0.0, 0.0]);
        let v = compute_s2(&h, 1.0, &z, &QuadratureSpec::default(), &BackgroundFlow::FreeStreaming)
            .unwrap();
        let exact = 0.5 * -(1.0 / 30.0);
        assert!((v - exact).abs() < 1e-9, "{v} vs {exact}");
    }

    #[test]
    fn rank_one_kernel_recovers_the_hamiltonian() {
        let f = ScalarField::new("f", 1, |z| z.x()[0] * z.v()[0] + 0.3 * z.x()[0].powi(2));
        let kernel = CovarianceKernel::from_hamiltonians(vec![f.clone()]);
        let grid = latin_hypercube(&[-1.0, -1.0], &[1.0, 1.0], 12, 4);
        let basis = kl_decompose(&kernel, &grid, &KlOptions::default()).unwrap();
        assert_eq!(basis.rank(), 1);
        let anchor = basis.anchor().unwrap().clone();
        let h = &basis.modes[0];
        let z = PhasePoint::new(&[0.4], &[-0.2]).unwrap();
        let diff = h.value(&z) - h.value(&anchor);
        let target = f.value(&z) - f.value(&anchor);
        assert!((diff.abs() - target.abs()).abs() < 1e-8, "{diff} vs {target}");
    }

    #[test]
    fn non_psd_kernel_is_rejected() {
        let kernel = CovarianceKernel::analytic(1, |_, _| {
            DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0])
        });
        let grid = vec![PhasePoint::origin(1)];
        assert!(matches!(
            kl_decompose(&kernel, &grid, &KlOptions::default()),
            Err(CoarseError::KernelNotPsd { .. })
        ));
    }

    #[test]
    fn invalid_trace_fraction_rejected() {
        let kernel = CovarianceKernel::analytic(1, |_, _| DMatrix::identity(2, 2));
        let opts = KlOptions {
            trace_fraction: 0.0,
            ..KlOptions::default()
        };
        assert!(matches!(
            kl_decompose(&kernel, &[PhasePoint::origin(1)], &opts),
            Err(CoarseError::InvalidTraceFraction(_))
        ));
    }

    #[test]
    fn latin_hypercube_stratifies_each_axis() {
        let pts = latin_hypercube(&[0.0, 0.0], &[1.0, 1.0], 10, 3);
        for d in 0..2 {
            let mut cells: Vec<usize> = pts.iter().map(|p| (p.coords()[d] * 10.0) as usize).collect();
            cells.sort();
            assert_eq!(cells, (0..10).collect::<Vec<_>>());
        }
    }
}
