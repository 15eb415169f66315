//! Canonical phase-space numerics on points and fields. Covers Poisson
//! brackets and Hamiltonian flows, plus Lie derivatives of symmetric
//! covariant 2-tensors.
//!
//! Coordinates are ordered `(x_1..x_n, v_1..v_n)` and the symplectic form is
//! `dx^i ∧ dv_i`, so `X_h = (∂h/∂v, -∂h/∂x)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseError {
    #[error("dimension mismatch: expected n = {expected}, found n = {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("flow left the domain of {0}")]
    FlowEscaped(String),
    #[error("tensor field {name} is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { name: String, asymmetry: f64 },
}

/// A point `(x, v)` of a 2n-dimensional canonical phase space.
#[derive(Clone, PartialEq)]
pub struct PhasePoint {
    n: usize,
    coords: Vec<f64>,
}

impl fmt::Debug for PhasePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhasePoint(x={:?}, v={:?})", self.x(), self.v())
    }
}

impl PhasePoint {
    pub fn new(x: &[f64], v: &[f64]) -> Result<Self, PhaseError> {
        if x.len() != v.len() {
            return Err(PhaseError::DimensionMismatch {
                expected: x.len(),
                found: v.len(),
            });
        }
        let mut coords = Vec::with_capacity(2 * x.len());
        coords.extend_from_slice(x);
        coords.extend_from_slice(v);
        Self::from_coords(coords)
    }

    /// Builds a point from the stacked coordinate vector `(x, v)`.
    pub fn from_coords(coords: Vec<f64>) -> Result<Self, PhaseError> {
        if coords.len() % 2 != 0 || coords.is_empty() {
            return Err(PhaseError::DimensionMismatch {
                expected: coords.len() / 2 + 1,
                found: coords.len() / 2,
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(PhaseError::NonFinite("phase point".into()));
        }
        Ok(Self {
            n: coords.len() / 2,
            coords,
        })
    }

    /// Unchecked constructor for hot loops that already guarantee finiteness.
    pub(crate) fn from_coords_unchecked(coords: Vec<f64>) -> Self {
        debug_assert!(coords.len() % 2 == 0);
        Self {
            n: coords.len() / 2,
            coords,
        }
    }

    pub fn origin(n: usize) -> Self {
        Self {
            n,
            coords: vec![0.0; 2 * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn x(&self) -> &[f64] {
        &self.coords[..self.n]
    }

    pub fn v(&self) -> &[f64] {
        &self.coords[self.n..]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    /// `self + s * dir` for a 2n-vector `dir`.
    pub fn offset(&self, dir: &[f64], s: f64) -> Self {
        let coords = self
            .coords
            .iter()
            .zip(dir)
            .map(|(c, d)| c + s * d)
            .collect();
        Self::from_coords_unchecked(coords)
    }

    fn check_dim(&self, n: usize) -> Result<(), PhaseError> {
        if self.n != n {
            return Err(PhaseError::DimensionMismatch {
                expected: n,
                found: self.n,
            });
        }
        Ok(())
    }
}

type ValueFn = dyn Fn(&PhasePoint) -> f64 + Send + Sync;
type VecFn = dyn Fn(&PhasePoint) -> Vec<f64> + Send + Sync;
type DomainFn = dyn Fn(&PhasePoint) -> bool + Send + Sync;
type MatFn = dyn Fn(&PhasePoint) -> DMatrix<f64> + Send + Sync;

/// A smooth function on phase space with an optional analytic gradient.
#[derive(Clone)]
pub struct ScalarField {
    name: String,
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Option<Arc<VecFn>>,
    domain: Option<Arc<DomainFn>>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

/// Central-difference step `cbrt(eps) * max(1, |c|)`.
pub fn fd_step(c: f64) -> f64 {
    f64::EPSILON.cbrt() * c.abs().max(1.0)
}

impl ScalarField {
    pub fn new<F>(name: impl Into<String>, dim: usize, value: F) -> Self
    where
        F: Fn(&PhasePoint) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(value),
            gradient: None,
            domain: None,
        }
    }

    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(&PhasePoint) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_domain<D>(mut self, domain: D) -> Self
    where
        D: Fn(&PhasePoint) -> bool + Send + Sync + 'static,
    {
        self.domain = Some(Arc::new(domain));
        self
    }

    pub fn zero(dim: usize) -> Self {
        Self::new("0", dim, |_| 0.0).with_gradient(move |z| vec![0.0; 2 * z.dim()])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn in_domain(&self, z: &PhasePoint) -> bool {
        self.domain.as_ref().map_or(true, |d| d(z))
    }

    pub fn value(&self, z: &PhasePoint) -> f64 {
        (self.value)(z)
    }

    pub fn try_value(&self, z: &PhasePoint) -> Result<f64, PhaseError> {
        z.check_dim(self.dim)?;
        let v = self.value(z);
        if !v.is_finite() {
            return Err(PhaseError::NonFinite(self.name.clone()));
        }
        Ok(v)
    }

    /// Gradient `(∂/∂x, ∂/∂v)`: analytic when available, else central differences.
    pub fn gradient(&self, z: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
        z.check_dim(self.dim)?;
        let g = match &self.gradient {
            Some(g) => g(z),
            None => self.fd_gradient(z),
        };
        if g.iter().any(|c| !c.is_finite()) {
            return Err(PhaseError::NonFinite(format!("gradient of {}", self.name)));
        }
        Ok(g)
    }

    pub fn fd_gradient(&self, z: &PhasePoint) -> Vec<f64> {
        let mut coords = z.coords().to_vec();
        let mut out = vec![0.0; coords.len()];
        for i in 0..coords.len() {
            let c = coords[i];
            let h = fd_step(c);
            coords[i] = c + h;
            let fp = self.value(&PhasePoint::from_coords_unchecked(coords.clone()));
            coords[i] = c - h;
            let fm = self.value(&PhasePoint::from_coords_unchecked(coords.clone()));
            coords[i] = c;
            out[i] = (fp - fm) / (2.0 * h);
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let inner = self.clone();
        let inner_g = self.clone();
        let mut out = Self::new(
            format!("{factor}*{}", self.name),
            self.dim,
            move |z| factor * inner.value(z),
        );
        if self.gradient.is_some() {
            out = out.with_gradient(move |z| {
                let mut g = inner_g.gradient(z).unwrap_or_else(|_| vec![f64::NAN; 2 * z.dim()]);
                g.iter_mut().for_each(|c| *c *= factor);
                g
            });
        }
        out.domain = self.domain.clone();
        out
    }

    pub fn plus(&self, other: &ScalarField) -> Self {
        assert_eq!(self.dim, other.dim, "adding fields of different dimension");
        let (a, b) = (self.clone(), other.clone());
        let mut out = Self::new(
            format!("{}+{}", self.name, other.name),
            self.dim,
            move |z| a.value(z) + b.value(z),
        );
        if self.gradient.is_some() && other.gradient.is_some() {
            let (a, b) = (self.clone(), other.clone());
            out = out.with_gradient(move |z| {
                let ga = a.gradient(z).unwrap_or_else(|_| vec![f64::NAN; 2 * z.dim()]);
                let gb = b.gradient(z).unwrap_or_else(|_| vec![f64::NAN; 2 * z.dim()]);
                ga.iter().zip(&gb).map(|(p, q)| p + q).collect()
            });
        }
        out.domain = match (&self.domain, &other.domain) {
            (None, None) => None,
            _ => {
                let (a, b) = (self.clone(), other.clone());
                Some(Arc::new(move |z: &PhasePoint| a.in_domain(z) && b.in_domain(z)))
            }
        };
        out
    }

    pub fn product(&self, other: &ScalarField) -> Self {
        assert_eq!(self.dim, other.dim, "multiplying fields of different dimension");
        let (a, b) = (self.clone(), other.clone());
        Self::new(
            format!("({})*({})", self.name, other.name),
            self.dim,
            move |z| a.value(z) * b.value(z),
        )
    }
}

/// A vector field on phase space (components ordered `(x, v)`).
#[derive(Clone)]
pub struct VectorField {
    name: String,
    dim: usize,
    eval: Arc<VecFn>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorField({}, n={})", self.name, self.dim)
    }
}

impl VectorField {
    pub fn new<F>(name: impl Into<String>, dim: usize, eval: F) -> Self
    where
        F: Fn(&PhasePoint) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, z: &PhasePoint) -> Vec<f64> {
        (self.eval)(z)
    }
}

/// Drift or noise generator of an SDE: either Hamiltonian or a bare vector field.
#[derive(Clone, Debug)]
pub enum Generator {
    Hamiltonian(ScalarField),
    Field(VectorField),
}

impl Generator {
    pub fn dim(&self) -> usize {
        match self {
            Generator::Hamiltonian(h) => h.dim(),
            Generator::Field(f) => f.dim(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Generator::Hamiltonian(h) => h.name(),
            Generator::Field(f) => f.name(),
        }
    }

    pub fn is_hamiltonian(&self) -> bool {
        matches!(self, Generator::Hamiltonian(_))
    }

    pub fn in_domain(&self, z: &PhasePoint) -> bool {
        match self {
            Generator::Hamiltonian(h) => h.in_domain(z),
            Generator::Field(_) => true,
        }
    }

    pub fn eval(&self, z: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
        match self {
            Generator::Hamiltonian(h) => hamiltonian_vector_field(h, z),
            Generator::Field(f) => {
                z.check_dim(f.dim())?;
                let out = f.eval(z);
                if out.iter().any(|c| !c.is_finite()) {
                    return Err(PhaseError::NonFinite(f.name().to_string()));
                }
                Ok(out)
            }
        }
    }
}

/// A field of symmetric 2n×2n matrices (a symmetric covariant 2-tensor in
/// canonical coordinates).
#[derive(Clone)]
pub struct SymmetricTensorField {
    name: String,
    dim: usize,
    eval: Arc<MatFn>,
}

impl fmt::Debug for SymmetricTensorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricTensorField({}, n={})", self.name, self.dim)
    }
}

impl SymmetricTensorField {
    pub fn new<F>(name: impl Into<String>, dim: usize, eval: F) -> Self
    where
        F: Fn(&PhasePoint) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
        }
    }

    /// `dh ⊗ dh`.
    pub fn squared_differential(h: &ScalarField) -> Self {
        let h = h.clone();
        let dim = h.dim();
        Self::new(format!("d({})^2", h.name()), dim, move |z| {
            let g = h.gradient(z).unwrap_or_else(|_| vec![f64::NAN; 2 * z.dim()]);
            let g = nalgebra::DVector::from_vec(g);
            &g * g.transpose()
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, z: &PhasePoint) -> Result<DMatrix<f64>, PhaseError> {
        z.check_dim(self.dim)?;
        let m = (self.eval)(z);
        if m.iter().any(|c| !c.is_finite()) {
            return Err(PhaseError::NonFinite(self.name.clone()));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(PhaseError::NotSymmetric {
                name: self.name.clone(),
                asymmetry: asym,
            });
        }
        Ok(m)
    }
}

fn check_same_dim(n: usize, z: &PhasePoint) -> Result<(), PhaseError> {
    z.check_dim(n)
}

/// `{f, g}(z) = Σ_i (∂f/∂x^i ∂g/∂v_i - ∂f/∂v_i ∂g/∂x^i)`.
pub fn poisson_bracket(f: &ScalarField, g: &ScalarField, z: &PhasePoint) -> Result<f64, PhaseError> {
    if f.dim() != g.dim() {
        return Err(PhaseError::DimensionMismatch {
            expected: f.dim(),
            found: g.dim(),
        });
    }
    check_same_dim(f.dim(), z)?;
    let df = f.gradient(z)?;
    let dg = g.gradient(z)?;
    Ok(bracket_of_gradients(&df, &dg))
}

/// Poisson bracket from two gradients `(∂x, ∂v)`.
pub fn bracket_of_gradients(df: &[f64], dg: &[f64]) -> f64 {
    let n = df.len() / 2;
    (0..n).map(|i| df[i] * dg[n + i] - df[n + i] * dg[i]).sum()
}

/// `X_h(z) = (∂h/∂v, -∂h/∂x)`.
pub fn hamiltonian_vector_field(h: &ScalarField, z: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
    let g = h.gradient(z)?;
    Ok(raise_covector(&g))
}

/// Symplectic raising `dh ↦ X_h`.
pub fn raise_covector(g: &[f64]) -> Vec<f64> {
    let n = g.len() / 2;
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        out[i] = g[n + i];
        out[n + i] = -g[i];
    }
    out
}

/// Symplectic lowering `X_h ↦ dh` (inverse of [`raise_covector`]).
pub fn lower_vector(x: &[f64]) -> Vec<f64> {
    let n = x.len() / 2;
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        out[i] = -x[n + i];
        out[n + i] = x[i];
    }
    out
}

/// Canonical symplectic matrix Ω with `X_h = Ω ∇h`.
pub fn symplectic_matrix(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        m[(i, n + i)] = 1.0;
        m[(n + i, i)] = -1.0;
    }
    m
}

/// Exact free-streaming flow `(x + v t, v)`.
pub fn free_streaming_flow(z: &PhasePoint, t: f64) -> PhasePoint {
    let n = z.dim();
    let mut coords = z.coords().to_vec();
    for i in 0..n {
        coords[i] += coords[n + i] * t;
    }
    PhasePoint::from_coords_unchecked(coords)
}

/// Jacobian of the free-streaming flow.
pub fn free_streaming_jacobian(n: usize, t: f64) -> DMatrix<f64> {
    let mut j = DMatrix::identity(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = t;
    }
    j
}

/// Central-difference Jacobian of a phase-space map.
pub fn map_jacobian<F>(map: F, z: &PhasePoint, step: f64) -> Result<DMatrix<f64>, PhaseError>
where
    F: Fn(&PhasePoint) -> Result<PhasePoint, PhaseError>,
{
    let m = z.coords().len();
    let mut j = DMatrix::zeros(m, m);
    let mut coords = z.coords().to_vec();
    for k in 0..m {
        let c = coords[k];
        let h = step * c.abs().max(1.0);
        coords[k] = c + h;
        let fp = map(&PhasePoint::from_coords_unchecked(coords.clone()))?;
        coords[k] = c - h;
        let fm = map(&PhasePoint::from_coords_unchecked(coords.clone()))?;
        coords[k] = c;
        for r in 0..m {
            j[(r, k)] = (fp.coords()[r] - fm.coords()[r]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// One classical 4th-order Runge–Kutta step of `ż = X_h(z)`.
pub fn rk4_step(h: &ScalarField, z: &PhasePoint, dt: f64) -> Result<PhasePoint, PhaseError> {
    let k1 = hamiltonian_vector_field(h, z)?;
    let z2 = z.offset(&k1, 0.5 * dt);
    let k2 = hamiltonian_vector_field(h, &z2)?;
    let z3 = z.offset(&k2, 0.5 * dt);
    let k3 = hamiltonian_vector_field(h, &z3)?;
    let z4 = z.offset(&k3, dt);
    let k4 = hamiltonian_vector_field(h, &z4)?;
    let coords = z
        .coords()
        .iter()
        .enumerate()
        .map(|(i, c)| c + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    PhasePoint::from_coords(coords)
}

/// Central-difference Lie derivative `(L_{X_h} α)(z)`.
///
/// α is pulled back along the time-±`step` flow of `X_h` (one RK4 step each
/// way): `(φ_s^* α)(z) = J_sᵀ α(φ_s z) J_s`, and the two pullbacks are
/// differenced. The result is symmetrised.
pub fn lie_derivative_tensor(
    h: &ScalarField,
    alpha: &SymmetricTensorField,
    z: &PhasePoint,
    step: f64,
) -> Result<DMatrix<f64>, PhaseError> {
    if !(step > 0.0) {
        return Err(PhaseError::InvalidStep(step));
    }
    if h.dim() != alpha.dim() {
        return Err(PhaseError::DimensionMismatch {
            expected: h.dim(),
            found: alpha.dim(),
        });
    }
    check_same_dim(h.dim(), z)?;
    let pullback = |s: f64| -> Result<DMatrix<f64>, PhaseError> {
        let flow = |p: &PhasePoint| rk4_step(h, p, s);
        let image = flow(z)?;
        if !h.in_domain(&image) {
            return Err(PhaseError::FlowEscaped(h.name().to_string()));
        }
        let jac = map_jacobian(flow, z, 1e-5)?;
        let a = alpha.eval(&image)?;
        Ok(jac.transpose() * a * jac)
    };
    let plus = pullback(step)?;
    let minus = pullback(-step)?;
    let d = (plus - minus) / (2.0 * step);
    Ok((&d + d.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3(x: [f64; 3], v: [f64; 3]) -> PhasePoint {
        PhasePoint::new(&x, &v).unwrap()
    }

    fn coord(i: usize, n: usize) -> ScalarField {
        ScalarField::new(format!("z{i}"), n, move |z| z.coords()[i])
    }

    fn kinetic(n: usize) -> ScalarField {
        ScalarField::new("|v|^2/2", n, |z| 0.5 * z.v().iter().map(|c| c * c).sum::<f64>())
    }

    #[test]
    fn canonical_pair_bracket_is_one() {
        let z = p3([0.3, -1.0, 2.0], [0.1, 0.2, 0.3]);
        let v = poisson_bracket(&coord(0, 3), &coord(3, 3), &z).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kinetic_bracket_with_position() {
        let z = p3([0.0; 3], [2.0, 0.0, 0.0]);
        let v = poisson_bracket(&kinetic(3), &coord(0, 3), &z).unwrap();
        assert!((v + 2.0).abs() < 1e-8);
    }

    #[test]
    fn bracket_rejects_dimension_mismatch() {
        let z = p3([0.0; 3], [0.0; 3]);
        assert!(matches!(
            poisson_bracket(&coord(0, 2), &coord(0, 3), &z),
            Err(PhaseError::DimensionMismatch { .. })
        ));
        assert!(poisson_bracket(&coord(0, 2), &coord(1, 2), &z).is_err());
    }

    #[test]
    fn hamiltonian_vector_field_examples() {
        let z = p3([0.0; 3], [1.0, 0.0, 0.0]);
        let x = hamiltonian_vector_field(&kinetic(3), &z).unwrap();
        let expect = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }
        let x = hamiltonian_vector_field(&coord(0, 3), &z).unwrap();
        assert!((x[3] + 1.0).abs() < 1e-9 && x[..3].iter().all(|c| c.abs() < 1e-12));
        // h = m1 v_1 - m0 x^1 with m0 = 1, m1 = 2
        let h = ScalarField::new("basis", 3, |z| 2.0 * z.v()[0] - z.x()[0]);
        let x = hamiltonian_vector_field(&h, &p3([0.4, 1.0, -3.0], [5.0, 0.1, 0.0])).unwrap();
        let expect = [2.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        for (a, b) in x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8, "{x:?}");
        }
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let h = ScalarField::new("bad", 1, |z| z.x()[0].ln());
        let z = PhasePoint::new(&[-1.0], &[0.0]).unwrap();
        assert!(matches!(
            hamiltonian_vector_field(&h, &z),
            Err(PhaseError::NonFinite(_))
        ));
    }

    #[test]
    fn free_streaming_examples() {
        let z = p3([0.0; 3], [1.0, 0.0, 0.0]);
        let w = free_streaming_flow(&z, 2.0);
        assert_eq!(w.x(), &[2.0, 0.0, 0.0]);
        assert_eq!(w.v(), z.v());
        assert_eq!(free_streaming_flow(&z, 0.0), z);
    }

    #[test]
    fn free_streaming_jacobian_is_symplectic() {
        let omega = symplectic_matrix(3);
        let j = free_streaming_jacobian(3, 1.7);
        let d = j.transpose() * &omega * &j - &omega;
        assert_eq!(d.amax(), 0.0);
    }

    #[test]
    fn lie_derivative_vanishes_for_commuting_square() {
        let h0 = kinetic(3);
        let h = coord(3, 3);
        let alpha = SymmetricTensorField::squared_differential(&h);
        let z = p3([0.2, 0.1, -0.4], [0.7, -0.3, 0.5]);
        let l = lie_derivative_tensor(&h0, &alpha, &z, 1e-3).unwrap();
        assert!(l.amax() < 1e-8, "{l}");
    }

    #[test]
    fn lie_derivative_of_constant_tensor_along_rotation() {
        // Harmonic oscillator flow is a rotation; the identity metric is invariant.
        let h = ScalarField::new("osc", 1, |z| 0.5 * (z.x()[0].powi(2) + z.v()[0].powi(2)));
        let alpha = SymmetricTensorField::new("id", 1, |_| DMatrix::identity(2, 2));
        let z = PhasePoint::new(&[0.3], &[-0.8]).unwrap();
        let l = lie_derivative_tensor(&h, &alpha, &z, 1e-3).unwrap();
        assert!(l.amax() < 1e-6, "{l}");
    }

    #[test]
    fn lie_derivative_rejects_bad_step() {
        let h = kinetic(1);
        let alpha = SymmetricTensorField::new("id", 1, |_| DMatrix::identity(2, 2));
        let z = PhasePoint::new(&[0.0], &[1.0]).unwrap();
        assert!(matches!(
            lie_derivative_tensor(&h, &alpha, &z, 0.0),
            Err(PhaseError::InvalidStep(_))
        ));
    }

    #[test]
    fn lowering_inverts_raising() {
        let g = vec![1.0, -2.0, 3.0, 4.0];
        assert_eq!(lower_vector(&raise_covector(&g)), g);
    }
}
