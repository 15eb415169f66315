//! An electron moving through static, randomly placed screened ions.
//!
//! Ions sit in a periodic rectangular box at density `n_i = Λ`; the
//! potential energy of the electron is `qm·A·Σ ḡ(|x − x_j|)` with
//! `A = 1/(4πΛ)`, evaluated with the minimum-image convention.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::lorentz::{LorentzError, LorentzParams, Potential};
use crate::stats::{jump_moments, JumpMoments};

#[derive(Debug, thiserror::Error)]
pub enum MicroError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("box side {side} is below the minimum {min}")]
    BoxTooSmall { side: f64, min: f64 },
    #[error("relative energy drift {drift:e} exceeds {limit:e} in interval {interval}")]
    EnergyDrift { interval: usize, drift: f64, limit: f64 },
    #[error(transparent)]
    Lorentz(#[from] LorentzError),
}

/// Largest relative energy drift tolerated within one integration.
pub const ENERGY_DRIFT_LIMIT: f64 = 1e-4;

/// Ion positions with a cell list for short-range queries.
#[derive(Debug, Clone)]
pub struct IonField {
    sides: [f64; 3],
    potential: Potential,
    coupling: f64,
    cells: [usize; 3],
    cell_start: Vec<usize>,
    sorted: Vec<[f64; 3]>,
}

impl IonField {
    /// `coupling` multiplies `ḡ` in the potential energy (`qm·A`).
    pub fn from_positions(
        positions: Vec<[f64; 3]>,
        sides: [f64; 3],
        potential: Potential,
        coupling: f64,
    ) -> Result<Self, MicroError> {
        let min = 4.0 * potential.support();
        for &side in &sides {
            if !(side >= min) {
                return Err(MicroError::BoxTooSmall { side, min });
            }
        }
        let rs = potential.support();
        let cells: [usize; 3] = std::array::from_fn(|i| (sides[i] / rs).floor() as usize);
        let index = |p: &[f64; 3]| -> usize {
            let c: [usize; 3] = std::array::from_fn(|i| {
                let u = p[i].rem_euclid(sides[i]) / sides[i];
                ((u * cells[i] as f64) as usize).min(cells[i] - 1)
            });
            (c[0] * cells[1] + c[1]) * cells[2] + c[2]
        };
        let ncell = cells.iter().product::<usize>();
        let mut counts = vec![0usize; ncell + 1];
        for p in &positions {
            counts[index(p) + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut sorted = vec![[0.0; 3]; positions.len()];
        for p in positions {
            let c = index(&p);
            sorted[fill[c]] = std::array::from_fn(|i| p[i].rem_euclid(sides[i]));
            fill[c] += 1;
        }
        Ok(Self {
            sides,
            potential,
            coupling,
            cells,
            cell_start: counts,
            sorted,
        })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sides(&self) -> [f64; 3] {
        self.sides
    }

    /// Positions wrapped into the box, grouped by cell.
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.sorted
    }

    /// Visits `(r, Δ)` for every ion within the support, `Δ = x − x_j`.
    fn for_each_neighbour(&self, x: &[f64; 3], mut f: impl FnMut(f64, [f64; 3])) {
        let rs = self.potential.support();
        let rs2 = rs * rs;
        let home: [i64; 3] = std::array::from_fn(|i| {
            let u = x[i].rem_euclid(self.sides[i]) / self.sides[i];
            ((u * self.cells[i] as f64) as i64).min(self.cells[i] as i64 - 1)
        });
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                for dz in -1..=1i64 {
                    let c = [home[0] + dx, home[1] + dy, home[2] + dz];
                    let w: [usize; 3] = std::array::from_fn(|i| c[i].rem_euclid(self.cells[i] as i64) as usize);
                    let id = (w[0] * self.cells[1] + w[1]) * self.cells[2] + w[2];
                    for p in &self.sorted[self.cell_start[id]..self.cell_start[id + 1]] {
                        let mut d = [0.0; 3];
                        let mut r2 = 0.0;
                        for i in 0..3 {
                            let mut di = x[i] - p[i];
                            di -= self.sides[i] * (di / self.sides[i]).round();
                            d[i] = di;
                            r2 += di * di;
                        }
                        if r2 < rs2 {
                            f(r2.sqrt(), d);
                        }
                    }
                }
            }
        }
    }

    /// Offsets `x_j − x` of the nearest images of all ions within `radius`
    /// (at most the support plus one cell) of `x`.
    fn offsets_within(&self, x: &[f64; 3], radius: f64) -> Vec<[f64; 3]> {
        let r2max = radius * radius;
        let mut out = Vec::new();
        // Distinct cells per axis; the whole axis when the reach wraps.
        let span: [(i64, i64); 3] = std::array::from_fn(|i| {
            let n = self.cells[i] as i64;
            let reach = (radius / (self.sides[i] / n as f64)).ceil() as i64;
            if 2 * reach + 1 >= n {
                (0, n - 1)
            } else {
                let u = x[i].rem_euclid(self.sides[i]) / self.sides[i];
                let home = ((u * n as f64) as i64).min(n - 1);
                (home - reach, home + reach)
            }
        });
        for dx in span[0].0..=span[0].1 {
            for dy in span[1].0..=span[1].1 {
                for dz in span[2].0..=span[2].1 {
                    let c = [dx, dy, dz];
                    let w: [usize; 3] = std::array::from_fn(|i| c[i].rem_euclid(self.cells[i] as i64) as usize);
                    let id = (w[0] * self.cells[1] + w[1]) * self.cells[2] + w[2];
                    for p in &self.sorted[self.cell_start[id]..self.cell_start[id + 1]] {
                        let mut d = [0.0; 3];
                        let mut r2 = 0.0;
                        for i in 0..3 {
                            let mut di = p[i] - x[i];
                            di -= self.sides[i] * (di / self.sides[i]).round();
                            d[i] = di;
                            r2 += di * di;
                        }
                        if r2 < r2max {
                            out.push(d);
                        }
                    }
                }
            }
        }
        out
    }

    /// `qm·A·Σ ḡ`.
    pub fn potential_energy(&self, x: &[f64; 3]) -> f64 {
        let mut acc = 0.0;
        self.for_each_neighbour(x, |r, _| acc += self.potential.value(r));
        self.coupling * acc
    }

    /// `−∇(qm·A·Σ ḡ)`.
    pub fn force(&self, x: &[f64; 3]) -> [f64; 3] {
        let mut f = [0.0; 3];
        self.for_each_neighbour(x, |r, d| {
            if r > 0.0 {
                let g1 = self.potential.deriv(r) / r;
                for i in 0..3 {
                    f[i] -= g1 * d[i];
                }
            }
        });
        f.map(|c| self.coupling * c)
    }
}

/// Box side the ion density needs at least: four support radii.
pub fn minimum_box(params: &LorentzParams) -> f64 {
    4.0 * (1.0 + params.delta_reg)
}

/// `round(Λ·V)` ions uniform in the box.
pub fn sample_ion_field_box(params: &LorentzParams, sides: [f64; 3], seed: u64) -> Result<IonField, MicroError> {
    params.validate()?;
    let pot = params.potential()?;
    let volume: f64 = sides.iter().product();
    let n = (params.ion_density() * volume).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = (0..n)
        .map(|_| std::array::from_fn(|i| rng.gen::<f64>() * sides[i]))
        .collect();
    IonField::from_positions(positions, sides, pot, params.qm * params.ion_amplitude())
}

/// Cubic box of side `box_len`.
pub fn sample_ion_field(params: &LorentzParams, box_len: f64, seed: u64) -> Result<IonField, MicroError> {
    sample_ion_field_box(params, [box_len; 3], seed)
}

/// States and total energies along a velocity-Verlet run.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroTrajectory {
    pub dt: f64,
    pub x: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub energy: Vec<f64>,
}

impl MicroTrajectory {
    /// `½|v₀|² + |φ₀|`: the energy scale drifts are measured against, robust
    /// to a total energy near zero.
    pub fn energy_scale(&self) -> f64 {
        let k0 = 0.5 * self.v[0].iter().map(|c| c * c).sum::<f64>();
        (k0 + (self.energy[0] - k0).abs()).max(f64::MIN_POSITIVE)
    }

    /// Net drift over the run, `|E_end − E₀|` relative to [`Self::energy_scale`].
    pub fn energy_drift(&self) -> f64 {
        let e = &self.energy;
        (e[e.len() - 1] - e[0]).abs() / self.energy_scale()
    }

    /// Largest transient excursion `max |E − E₀|`, relative as above.
    pub fn energy_excursion(&self) -> f64 {
        let e0 = self.energy[0];
        self.energy.iter().map(|x| (x - e0).abs()).fold(0.0, f64::max) / self.energy_scale()
    }
}

/// Steps of at most `dt` covering `[0, T]`.
fn step_count(t_end: f64, dt: f64) -> Result<usize, MicroError> {
    if !(dt > 0.0 && t_end >= 0.0 && dt.is_finite() && t_end.is_finite()) {
        return Err(MicroError::InvalidParams(format!("need dt > 0 and T >= 0, got dt={dt}, T={t_end}")));
    }
    Ok(((t_end / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
}

/// Ions near a moving point: offsets from a build point, rebuilt once the
/// point has moved half the skin.
struct NeighbourList<'a> {
    field: &'a IonField,
    skin: f64,
    base: [f64; 3],
    offsets: Vec<[f64; 3]>,
}

impl<'a> NeighbourList<'a> {
    fn new(field: &'a IonField, x: &[f64; 3]) -> Self {
        let skin = 0.3 * field.potential.support();
        Self {
            field,
            skin,
            base: *x,
            offsets: field.offsets_within(x, field.potential.support() + skin),
        }
    }

    fn refresh(&mut self, x: &[f64; 3]) {
        let moved: f64 = (0..3).map(|i| (x[i] - self.base[i]).powi(2)).sum();
        if moved > 0.25 * self.skin * self.skin {
            *self = Self::new(self.field, x);
        }
    }

    fn each(&self, x: &[f64; 3], mut f: impl FnMut(f64, [f64; 3])) {
        let rs2 = self.field.potential.support().powi(2);
        let rel = [x[0] - self.base[0], x[1] - self.base[1], x[2] - self.base[2]];
        for o in &self.offsets {
            let d = [rel[0] - o[0], rel[1] - o[1], rel[2] - o[2]];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            if r2 < rs2 {
                f(r2.sqrt(), d);
            }
        }
    }

    fn force(&mut self, x: &[f64; 3]) -> [f64; 3] {
        self.force_and_nearest(x).0
    }

    /// Force and the distance to the nearest ion within the support.
    fn force_and_nearest(&mut self, x: &[f64; 3]) -> ([f64; 3], f64) {
        self.refresh(x);
        let pot = &self.field.potential;
        let mut f = [0.0; 3];
        let mut nearest = f64::INFINITY;
        self.each(x, |r, d| {
            nearest = nearest.min(r);
            if r > 0.0 {
                let g1 = pot.deriv(r) / r;
                for i in 0..3 {
                    f[i] -= g1 * d[i];
                }
            }
        });
        (f.map(|c| self.field.coupling * c), nearest)
    }

    fn energy(&mut self, x: &[f64; 3], v: &[f64; 3]) -> f64 {
        self.refresh(x);
        let mut acc = 0.0;
        self.each(x, |r, _| acc += self.field.potential.value(r));
        0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) + self.field.coupling * acc
    }
}

/// Ion distance, in core radii `1/Λ`, below which a step is subdivided.
const REFINE_RADIUS: f64 = 2.0;
/// Substeps per step inside the refinement radius.
const REFINE_SUBSTEPS: usize = 8;

/// Velocity-Verlet advance by `steps`, subdividing steps that start near an
/// ion core; returns the net relative energy drift and the initial potential
/// energy.
fn verlet_advance(field: &IonField, x: &mut [f64; 3], v: &mut [f64; 3], dt: f64, steps: usize) -> (f64, f64) {
    let mut list = NeighbourList::new(field, x);
    let e0 = list.energy(x, v);
    let k0 = 0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    let pe0 = e0 - k0;
    let scale = (k0 + pe0.abs()).max(f64::MIN_POSITIVE);
    let near = REFINE_RADIUS / field.potential.lambda;
    let (mut a, mut nearest) = list.force_and_nearest(x);
    for _ in 0..steps {
        let (n, h) = if nearest < near {
            (REFINE_SUBSTEPS, dt / REFINE_SUBSTEPS as f64)
        } else {
            (1, dt)
        };
        for _ in 0..n {
            for i in 0..3 {
                v[i] += 0.5 * h * a[i];
                x[i] += h * v[i];
            }
            (a, nearest) = list.force_and_nearest(x);
            for i in 0..3 {
                v[i] += 0.5 * h * a[i];
            }
        }
    }
    ((list.energy(x, v) - e0).abs() / scale, pe0)
}

/// Velocity Verlet over `[0, T]` with fixed steps of at most `dt`, recording
/// every step.
pub fn verlet_trajectory(field: &IonField, x0: [f64; 3], v0: [f64; 3], t_end: f64, dt: f64) -> Result<MicroTrajectory, MicroError> {
    let steps = step_count(t_end, dt)?;
    let dt = if t_end > 0.0 { t_end / steps as f64 } else { dt };
    let (mut x, mut v) = (x0, v0);
    let mut list = NeighbourList::new(field, &x);
    let mut traj = MicroTrajectory {
        dt,
        x: vec![x],
        v: vec![v],
        energy: vec![list.energy(&x, &v)],
    };
    let mut a = list.force(&x);
    for _ in 0..steps {
        for i in 0..3 {
            v[i] += 0.5 * dt * a[i];
            x[i] += dt * v[i];
        }
        a = list.force(&x);
        for i in 0..3 {
            v[i] += 0.5 * dt * a[i];
        }
        traj.x.push(x);
        traj.v.push(v);
        traj.energy.push(list.energy(&x, &v));
    }
    let drift = traj.energy_drift();
    if drift > ENERGY_DRIFT_LIMIT {
        return Err(MicroError::EnergyDrift {
            interval: 0,
            drift,
            limit: ENERGY_DRIFT_LIMIT,
        });
    }
    Ok(traj)
}

/// Settings for [`empirical_jump_moments`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpOptions {
    pub intervals: usize,
    pub seed: u64,
    /// Verlet step; `None` picks `0.025/(Λ|v|)`.
    pub dt: Option<f64>,
    /// Multiplies every box side.
    pub box_scale: f64,
    /// Fresh ions every interval; otherwise one field for the whole run.
    pub resample: bool,
    pub blocks: usize,
}

impl Default for JumpOptions {
    fn default() -> Self {
        Self {
            intervals: 10_000,
            seed: 0,
            dt: None,
            box_scale: 1.0,
            resample: true,
            blocks: 50,
        }
    }
}

/// Jump statistics of the microscopic dynamics over `τ`-intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroMoments {
    /// Moments of `z_τ − F_τ(z₀)` in `(x, v)` ordering.
    pub moments: JumpMoments,
    /// Mean kinetic-energy change per interval and its standard error. With
    /// resampling, the start-point potential energy serves as a control
    /// variate.
    pub kinetic_gain: f64,
    pub kinetic_gain_stderr: f64,
    /// Largest net relative energy drift over all intervals.
    pub max_energy_drift: f64,
    pub dt: f64,
    pub sides: [f64; 3],
}

/// Box for one interval: the straight path plus two support radii of slack
/// on every side, and never below the minimum box.
fn interval_box(params: &LorentzParams, v0: &Vector3<f64>, scale: f64) -> [f64; 3] {
    let rs = 1.0 + params.delta_reg;
    std::array::from_fn(|i| scale * (v0[i].abs() * params.tau + 4.0 * rs).max(minimum_box(params)))
}

/// Per-interval displacements `(x_τ − x₀ − v₀τ, v_τ − v₀)` from electrons
/// started at `v0`, with jackknife errors.
pub fn empirical_jump_moments(
    params: &LorentzParams,
    v0: &Vector3<f64>,
    opts: &JumpOptions,
) -> Result<MicroMoments, MicroError> {
    params.validate()?;
    let s = v0.norm();
    if !(s > 0.0) {
        return Err(MicroError::InvalidParams("|v0| must be positive".into()));
    }
    if opts.intervals < 100 {
        return Err(MicroError::InvalidParams(format!("need at least 100 intervals, got {}", opts.intervals)));
    }
    if !(opts.box_scale >= 1.0) {
        return Err(MicroError::InvalidParams(format!("box_scale must be >= 1, got {}", opts.box_scale)));
    }
    let dt = opts.dt.unwrap_or(0.025 / (params.lambda * s));
    let steps = step_count(params.tau, dt)?;
    let dt = params.tau / steps as f64;
    let sides = interval_box(params, v0, opts.box_scale);
    let rs = 1.0 + params.delta_reg;
    // Start two support radii inside the low faces so the straight path stays clear of its images.
    let start: [f64; 3] = std::array::from_fn(|i| if v0[i] >= 0.0 { 2.0 * rs } else { sides[i] - 2.0 * rs });
    let shared = if opts.resample {
        None
    } else {
        Some(sample_ion_field_box(params, sides, opts.seed)?)
    };
    // Mean potential energy at a point independent of the ions.
    let mean_pe = if opts.resample {
        Some(params.qm * params.ion_amplitude() * params.ion_density() * params.potential()?.volume_integral()?)
    } else {
        None
    };
    let run = |k: usize, field: &IonField, x: &mut [f64; 3], v: &mut [f64; 3]| -> Result<(Vec<f64>, f64), MicroError> {
        let (x0, w0) = (*x, *v);
        let (drift, pe0) = verlet_advance(field, x, v, dt, steps);
        if drift > ENERGY_DRIFT_LIMIT {
            return Err(MicroError::EnergyDrift {
                interval: k,
                drift,
                limit: ENERGY_DRIFT_LIMIT,
            });
        }
        let mut dz = vec![0.0; 6];
        for i in 0..3 {
            dz[i] = x[i] - x0[i] - w0[i] * params.tau;
            dz[3 + i] = v[i] - w0[i];
        }
        let mut gain = 0.5 * (v.iter().map(|c| c * c).sum::<f64>() - w0.iter().map(|c| c * c).sum::<f64>());
        if let Some(m) = mean_pe {
            // Control variate: the start-point potential has a known mean.
            gain -= pe0 - m;
        }
        dz.push(gain);
        Ok((dz, drift))
    };
    let results: Vec<(Vec<f64>, f64)> = match &shared {
        None => (0..opts.intervals)
            .into_par_iter()
            .map(|k| {
                let seed = opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64);
                let field = sample_ion_field_box(params, sides, seed)?;
                let (mut x, mut v) = (start, [v0.x, v0.y, v0.z]);
                run(k, &field, &mut x, &mut v)
            })
            .collect::<Result<_, _>>()?,
        Some(field) => {
            // One electron carried across intervals, restarted at v0 each time
            // so that the moments describe the same initial condition.
            let mut x = start;
            let mut out = Vec::with_capacity(opts.intervals);
            for k in 0..opts.intervals {
                let mut v = [v0.x, v0.y, v0.z];
                out.push(run(k, field, &mut x, &mut v)?);
            }
            out
        }
    };
    let increments: Vec<Vec<f64>> = results.iter().map(|(d, _)| d[..6].to_vec()).collect();
    let gains: Vec<f64> = results.iter().map(|(d, _)| d[6]).collect();
    let n = gains.len() as f64;
    let mean_gain = gains.iter().sum::<f64>() / n;
    let var_gain = gains.iter().map(|g| (g - mean_gain).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MicroMoments {
        moments: jump_moments(&increments, params.tau, opts.blocks),
        kinetic_gain: mean_gain,
        kinetic_gain_stderr: (var_gain / n).sqrt(),
        max_energy_drift: results.iter().map(|(_, d)| *d).fold(0.0, f64::max),
        dt,
        sides,
    })
}

/// Standardised differences `(a − b)/σ` entry by entry.
pub fn z_scores(estimate: &DMatrix<f64>, stderr: &DMatrix<f64>, model: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(estimate.nrows(), estimate.ncols(), |i, j| {
        let se = stderr[(i, j)];
        if se > 0.0 {
            (estimate[(i, j)] - model[(i, j)]) / se
        } else {
            0.0
        }
    })
}

/// Vector form of [`z_scores`].
pub fn z_scores_vec(estimate: &DVector<f64>, stderr: &DVector<f64>, model: &[f64]) -> Vec<f64> {
    (0..estimate.len())
        .map(|i| if stderr[i] > 0.0 { (estimate[i] - model[i]) / stderr[i] } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::Profile;

    fn coulomb_params() -> LorentzParams {
        LorentzParams {
            lambda: 10.0,
            profile: Profile::Coulomb,
            ..Default::default()
        }
    }

    fn single_ion(at: [f64; 3]) -> IonField {
        let p = coulomb_params();
        IonField::from_positions(vec![at], [10.0; 3], p.potential().unwrap(), p.qm * p.ion_amplitude()).unwrap()
    }

    #[test]
    fn ion_count_follows_density() {
        let f = sample_ion_field(&coulomb_params(), 10.0, 1).unwrap();
        assert_eq!(f.len(), 10_000);
        let g = sample_ion_field(&coulomb_params(), 10.0, 1).unwrap();
        assert_eq!(f.positions(), g.positions());
        assert!(matches!(
            sample_ion_field(&coulomb_params(), 4.0, 1),
            Err(MicroError::BoxTooSmall { .. })
        ));
    }

    #[test]
    fn pair_counts_are_poissonian() {
        let p = LorentzParams {
            lambda: 12.0,
            ..Default::default()
        };
        let side = 5.0;
        let shells = [0.0, 0.4, 0.8, 1.2, 1.6, 2.0];
        let mut counts = vec![0.0; shells.len() - 1];
        let mut expected = vec![0.0; shells.len() - 1];
        for seed in 0..10 {
            let f = sample_ion_field(&p, side, 100 + seed).unwrap();
            let pos = f.positions();
            let n = pos.len() as f64;
            for (a, pa) in pos.iter().enumerate() {
                for pb in &pos[a + 1..] {
                    let r = (0..3)
                        .map(|i| {
                            let d = pa[i] - pb[i];
                            let d = d - side * (d / side).round();
                            d * d
                        })
                        .sum::<f64>()
                        .sqrt();
                    if let Some(k) = shells.windows(2).position(|w| r >= w[0] && r < w[1]) {
                        counts[k] += 1.0;
                    }
                }
            }
            for k in 0..counts.len() {
                let vol = 4.0 / 3.0 * std::f64::consts::PI * (shells[k + 1].powi(3) - shells[k].powi(3));
                expected[k] += 0.5 * n * (n - 1.0) * vol / side.powi(3);
            }
        }
        for (c, e) in counts.iter().zip(&expected) {
            assert!((c - e).abs() < 3.0 * e.sqrt(), "{c} vs {e}");
        }
    }

    #[test]
    fn force_of_one_ion_on_the_middle_branch() {
        let f = single_ion([5.0, 5.0, 5.0]);
        let p = coulomb_params();
        let force = f.force(&[5.5, 5.0, 5.0]);
        let want = p.qm * p.ion_amplitude() / 0.25;
        // Attraction for qm < 0: the force points back at the ion.
        assert!((force[0] - want).abs() < 1e-15 * want.abs());
        assert_eq!(force[1], 0.0);
        assert_eq!(f.force(&[8.0, 5.0, 5.0]), [0.0; 3]);
    }

    #[test]
    fn force_is_minus_potential_gradient() {
        let f = sample_ion_field(&LorentzParams::default(), 4.5, 3).unwrap();
        for x in [[1.0, 2.0, 3.0], [0.01, 4.4, 2.2], [3.3, 0.7, 1.9]] {
            let g = f.force(&x);
            for i in 0..3 {
                let h = 1e-6;
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = -(f.potential_energy(&xp) - f.potential_energy(&xm)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1e-3), "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn neighbour_list_matches_cell_list() {
        let f = sample_ion_field(&LorentzParams::default(), 4.5, 5).unwrap();
        let mut x = [0.3, 4.4, 2.0];
        let mut list = NeighbourList::new(&f, &x);
        for k in 0..50 {
            x[0] += 0.037;
            x[1] += 0.011 * k as f64;
            let a = list.force(&x);
            let b = f.force(&x);
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-12 * b[i].abs().max(1e-6));
            }
            let e = list.energy(&x, &[0.0; 3]);
            assert!((e - f.potential_energy(&x)).abs() < 1e-12 * e.abs().max(1e-6));
        }
    }

    #[test]
    fn empty_field_streams_freely() {
        let p = coulomb_params();
        let f = IonField::from_positions(vec![], [10.0; 3], p.potential().unwrap(), -0.1).unwrap();
        let t = verlet_trajectory(&f, [1.0, 2.0, 3.0], [0.5, -0.25, 0.125], 4.0, 0.25).unwrap();
        assert_eq!(t.x.last().unwrap(), &[3.0, 1.0, 3.5]);
        assert_eq!(t.v.last().unwrap(), &[0.5, -0.25, 0.125]);
    }

    #[test]
    fn single_pass_is_elastic_and_reversible() {
        let f = single_ion([5.0, 5.0, 5.0]);
        let v0 = [1.0, 0.0, 0.0];
        let x0 = [2.0, 5.02, 5.0];
        let dt = 0.05 / (10.0 * 1.0) / 10.0;
        let t = verlet_trajectory(&f, x0, v0, 6.0, dt).unwrap();
        let v = t.v.last().unwrap();
        let ke = 0.5 * v.iter().map(|c| c * c).sum::<f64>();
        assert!((ke - 0.5).abs() < 1e-8, "{ke}");
        assert!(v[1].abs() > 1e-3, "no deflection");
        let back = verlet_trajectory(&f, *t.x.last().unwrap(), v.map(|c| -c), 6.0, dt).unwrap();
        let xb = back.x.last().unwrap();
        for i in 0..3 {
            assert!((xb[i] - x0[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn energy_is_conserved_within_an_interval() {
        let p = LorentzParams::default();
        let f = sample_ion_field_box(&p, [14.4, 4.4, 4.4], 9).unwrap();
        let t = verlet_trajectory(&f, [2.2, 2.2, 2.2], [1.0, 0.0, 0.0], 10.0, 0.05 / 20.0 / 8.0).unwrap();
        assert!(t.energy_drift() < 1e-6, "{}", t.energy_drift());
        assert!(t.energy_excursion() < 1e-5, "{}", t.energy_excursion());
    }

    #[test]
    fn zero_coupling_gives_zero_moments() {
        let p = LorentzParams {
            qm: 0.0,
            ..Default::default()
        };
        let m = empirical_jump_moments(
            &p,
            &Vector3::new(1.0, 0.0, 0.0),
            &JumpOptions {
                intervals: 100,
                dt: Some(0.1),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.moments.drift.amax() < 1e-14);
        assert!(m.moments.diffusion.amax() < 1e-28);
    }

    #[test]
    fn rejects_too_few_intervals() {
        let r = empirical_jump_moments(
            &LorentzParams::default(),
            &Vector3::new(1.0, 0.0, 0.0),
            &JumpOptions {
                intervals: 10,
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(MicroError::InvalidParams(_))));
    }
}
