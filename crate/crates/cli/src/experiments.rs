//! Experiment pipelines and the file writer.
//!
//! CSV columns per kind:
//!
//! * `pulse`: `pulse_variance.csv` with `t, var_v1, var_v2, var_v3,
//!   stderr_var_v1, stderr_var_v2, stderr_var_v3, model_var_v`; with
//!   `micro_intervals > 0` also `pulse_micro.csv` with `axis, d_vv_micro,
//!   stderr_d_vv_micro, d_vv_model`.
//! * `karney`: `karney_diffusion.csv` with `t, mean_dI, msd_I, stderr_msd_I,
//!   d_measured, stderr_d_measured, d_model`.
//! * `lorentz-scan`: `lorentz_scan.csv` with `Lambda, rel_dev_vv,
//!   par_perp_ratio, chi_drift, energy_rate_numeric, energy_rate_analytic`.
//! * `lorentz-micro`: `lorentz_micro.csv`, one row per τ, with micro value,
//!   standard error and model value for the parallel and perpendicular
//!   velocity diffusion, the parallel drift and the kinetic gain, then
//!   `max_energy_drift`.
//! * `two-particle`: `two_particle.csv` with `t, var_sep_v_physical,
//!   var_sep_v_counter, stderr_var_sep_v_physical, stderr_var_sep_v_counter`.
//!   `var_sep_v` is the trace of the covariance of `v_a − v_b` over pairs.
//! * `witness`: `witness.csv` with `sample, speed, numeric, analytic,
//!   rel_err, invariant_contraction`.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DVector, Vector3};

use shk_core::langevin::{
    estimate_pair_statistics, estimate_statistics, simulate_flow, EnsembleTrajectories, FlowOptions, NoiseMode,
    Observable, PairObservable, Scheme,
};
use shk_core::lorentz::{asymptotic_scan, non_hamiltonian_witness, Lorentz, SCAN_COLUMNS};
use shk_core::micro::{empirical_jump_moments, JumpOptions};
use shk_core::models::{counterexample_model, karney_expected_diffusion, karney_model, kinetic_energy, pulse_micro_simulate, pulse_model};
use shk_core::phase::{lie_derivative_tensor, PhasePoint, ScalarField, SymmetricTensorField};
use shk_core::rng::{hash4, uniform, unit_vector};
use shk_core::stats::jump_moments;

use crate::config::{
    ExperimentConfig, KarneyConfig, Kind, LorentzMicroConfig, LorentzScanConfig, PulseConfig, TwoParticleConfig,
    WitnessConfig,
};
use crate::emit::{csv_string, svg_string, write_file, Series};
use crate::report::{Check, Relation, RunReport, SeriesInfo, Stage, Timings, SCHEMA_VERSION};
use crate::CliError;

/// Blocks for jackknife error bars on jump moments.
const JACKKNIFE_BLOCKS: usize = 50;
/// Relative-velocity changes below this count as exact.
const MACHINE_TOL: f64 = 1e-12;
const MICRO_ENERGY_LIMIT: f64 = shk_core::micro::ENERGY_DRIFT_LIMIT;

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub series: Vec<Series>,
    pub stages: Vec<Stage>,
}

impl Outcome {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.stages.push(Stage {
            name: name.into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs the pipeline for `config.kind` on the current rayon pool.
pub fn run(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    config.validate()?;
    let (seed, sigmas) = (config.seed, config.sigmas);
    let missing = || CliError::Config(format!("missing [{}] section", config.kind.name()));
    match config.kind {
        Kind::Pulse => pulse(config.pulse.as_ref().ok_or_else(missing)?, seed, sigmas),
        Kind::Karney => karney(config.karney.as_ref().ok_or_else(missing)?, seed, sigmas),
        Kind::LorentzScan => lorentz_scan(config.lorentz_scan.as_ref().ok_or_else(missing)?),
        Kind::LorentzMicro => lorentz_micro(config.lorentz_micro.as_ref().ok_or_else(missing)?, seed, sigmas),
        Kind::TwoParticle => two_particle(config.two_particle.as_ref().ok_or_else(missing)?, seed, sigmas),
        Kind::Witness => witness(config.witness.as_ref().ok_or_else(missing)?, seed),
    }
}

/// Runs on a pool of `workers` threads (0 = all cores) and writes the CSV,
/// SVG, `report.json` and `timings.json` files into `out`.
pub fn execute(config: &ExperimentConfig, out: &Path, workers: usize) -> Result<RunReport, CliError> {
    let t0 = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| run(config))?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut series = Vec::with_capacity(outcome.series.len());
    for s in &outcome.series {
        let (csv, svg) = (format!("{}.csv", s.name), format!("{}.svg", s.name));
        write_file(&out.join(&csv), &csv_string(s))?;
        write_file(&out.join(&svg), &svg_string(s))?;
        series.push(SeriesInfo {
            name: s.name.clone(),
            csv,
            svg,
            columns: s.columns.clone(),
            rows: s.rows.len(),
        });
    }
    let mut echo = config.clone();
    echo.out = None;
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        kind: config.kind,
        passed: outcome.passed(),
        config: echo,
        checks: outcome.checks.clone(),
        series,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serialises") + "\n";
    write_file(&out.join("report.json"), &json)?;
    let timings = Timings {
        schema_version: SCHEMA_VERSION,
        workers: pool.current_num_threads(),
        total_seconds: t0.elapsed().as_secs_f64(),
        stages: outcome.stages,
    };
    let json = serde_json::to_string_pretty(&timings).expect("timings serialise") + "\n";
    write_file(&out.join("timings.json"), &json)?;
    Ok(report)
}

fn point(x: &[f64; 3], v: &[f64; 3]) -> Result<PhasePoint, CliError> {
    Ok(PhasePoint::new(x, v)?)
}

/// Sample mean and variance; the third entry is the variance's standard error.
fn sample_moments(xs: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let xs: Vec<f64> = xs.collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (mean, var, ((m4 - var * var).max(0.0) / n).sqrt())
}

fn pulse(c: &PulseConfig, seed: u64, sigmas: f64) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let p = c.params()?;
    let model = pulse_model(&p)?;
    let z0 = point(&c.x0, &c.v0)?;
    let init = vec![z0.clone(); c.particles];
    let opts = FlowOptions {
        t_end: c.t_end,
        dt: c.dt,
        seed,
        mode: NoiseMode::Independent,
        scheme: c.scheme.into(),
        record_every: c.record_every,
    };
    let traj = out.stage("simulate", || simulate_flow(&model, &init, &opts))?;
    let obs: Vec<Observable> = (0..3).map(|i| Observable::coord(format!("v{}", i + 1), 3 + i)).collect();
    let stats = estimate_statistics(&traj, &obs)?;
    let slope = p.m0().powi(2) / (3.0 * p.tau);
    let mut s = Series::new(
        "pulse_variance",
        &["t", "var_v1", "var_v2", "var_v3", "stderr_var_v1", "stderr_var_v2", "stderr_var_v3", "model_var_v"],
    )
    .plotting(&["var_v1", "var_v2", "var_v3", "model_var_v"]);
    for (r, &t) in stats.times.iter().enumerate() {
        let mut row = vec![t];
        row.extend((0..3).map(|i| stats.variance(r, i)));
        row.extend((0..3).map(|i| stats.var_stderr[r][i]));
        row.push(slope * t);
        s.push(row);
    }
    out.series.push(s);
    for i in 0..3 {
        let (m, se) = stats.variance_slope(i);
        out.checks.push(Check::within_sigma(format!("var_v{}_slope", i + 1), m, slope, se, sigmas));
    }
    if c.micro_intervals > 0 {
        let tr = out.stage("micro", || pulse_micro_simulate(&p, &z0, c.micro_intervals, hash4(seed, 1, 0, 0)))?;
        let jm = jump_moments(&tr.increments(), p.tau, JACKKNIFE_BLOCKS);
        let d = model.diffusion_tensor(&z0)?;
        let mut s = Series::new("pulse_micro", &["axis", "d_vv_micro", "stderr_d_vv_micro", "d_vv_model"])
            .plotting(&["d_vv_micro", "d_vv_model"]);
        for i in 0..3 {
            let k = 3 + i;
            let (m, se, want) = (jm.diffusion[(k, k)], jm.diffusion_stderr[(k, k)], d[(k, k)]);
            s.push(vec![(i + 1) as f64, m, se, want]);
            out.checks.push(Check::within_sigma(format!("micro_d_v{}v{}", i + 1, i + 1), m, want, se, sigmas));
        }
        out.series.push(s);
    }
    Ok(out)
}

fn karney(c: &KarneyConfig, seed: u64, sigmas: f64) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let p = c.params();
    let model = karney_model(&p)?;
    let n = c.particles;
    let init: Vec<PhasePoint> = (0..n)
        .map(|k| point_1d(std::f64::consts::TAU * k as f64 / n as f64, c.i0))
        .collect::<Result<_, _>>()?;
    let opts = FlowOptions {
        t_end: c.t_end,
        dt: c.dt,
        seed,
        mode: NoiseMode::Independent,
        scheme: Scheme::Heun,
        record_every: c.record_every,
    };
    let traj = out.stage("simulate", || simulate_flow(&model, &init, &opts))?;
    let want = karney_expected_diffusion(&p, c.i0);
    let mut s = Series::new(
        "karney_diffusion",
        &["t", "mean_dI", "msd_I", "stderr_msd_I", "d_measured", "stderr_d_measured", "d_model"],
    )
    .plotting(&["d_measured", "d_model"]);
    let mut last = (0.0, 0.0);
    for (r, &t) in traj.times.iter().enumerate().skip(1) {
        let di = |k: usize| traj.coords(r, k)[1] - c.i0;
        let (mean, _, _) = sample_moments((0..n).map(di));
        let (msd, var_sq, _) = sample_moments((0..n).map(|k| di(k).powi(2)));
        let se = (var_sq / n as f64).sqrt();
        last = (msd / (2.0 * t), se / (2.0 * t));
        s.push(vec![t, mean, msd, se, last.0, last.1, want]);
    }
    out.series.push(s);
    out.checks.push(Check::within_sigma("diffusion_at_i0", last.0, want, last.1, sigmas));
    Ok(out)
}

fn point_1d(theta: f64, action: f64) -> Result<PhasePoint, CliError> {
    Ok(PhasePoint::new(&[theta], &[action])?)
}

fn lorentz_scan(c: &LorentzScanConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let base = c.params(c.lambdas[0], c.tau);
    let rows = out.stage("scan", || asymptotic_scan(&c.lambdas, c.speed, &base))?;
    let mut s = Series::new("lorentz_scan", &SCAN_COLUMNS)
        .plotting(&["rel_dev_vv", "par_perp_ratio"])
        .log_x();
    for r in &rows {
        s.push(r.values().to_vec());
    }
    out.series.push(s);
    for w in rows.windows(2) {
        out.checks.push(Check::new(
            format!("rel_dev_vv_decreases_{}_to_{}", w[0].lambda, w[1].lambda),
            Relation::Below,
            w[1].rel_dev_vv,
            w[0].rel_dev_vv,
            0.0,
            0.0,
        ));
    }
    if let (Some(limit), Some(last)) = (c.ratio_limit, rows.last()) {
        out.checks.push(Check::new(
            format!("par_perp_ratio_at_{}", last.lambda),
            Relation::Below,
            last.par_perp_ratio,
            limit,
            0.0,
            0.0,
        ));
    }
    Ok(out)
}

fn lorentz_micro(c: &LorentzMicroConfig, seed: u64, sigmas: f64) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let v = Vector3::new(c.speed, 0.0, 0.0);
    let mut s = Series::new(
        "lorentz_micro",
        &[
            "tau",
            "d_par_micro",
            "stderr_d_par_micro",
            "d_par_model",
            "d_perp_micro",
            "stderr_d_perp_micro",
            "d_perp_model",
            "drift_par_micro",
            "stderr_drift_par_micro",
            "drift_par_model",
            "gain_micro",
            "stderr_gain_micro",
            "gain_model",
            "max_energy_drift",
        ],
    )
    .plotting(&["d_par_micro", "d_par_model", "d_perp_micro", "d_perp_model"]);
    for (k, &tau) in c.taus.iter().enumerate() {
        let params = c.params(c.lambda, tau);
        let opts = JumpOptions {
            intervals: c.intervals,
            seed: hash4(seed, k as u64, 0, 0),
            dt: c.dt,
            box_scale: c.box_scale,
            resample: c.resample,
            blocks: c.blocks,
        };
        let mm = out.stage(&format!("micro tau={tau}"), || empirical_jump_moments(&params, &v, &opts))?;
        let model = Lorentz::new(params)?;
        let d = model.diffusion_tensor_hl(&v)?;
        let drift = model.jump_drift(&v)?;
        let gain_model = tau * (v.dot(&Vector3::new(drift[3], drift[4], drift[5])) + d[(3, 3)] + d[(4, 4)] + d[(5, 5)]);
        let (dm, se) = (&mm.moments.diffusion, &mm.moments.diffusion_stderr);
        let label = |what: &str| format!("tau={tau}: {what}");
        for (i, name) in [(3, "d_vv_par"), (4, "d_vv_perp_y"), (5, "d_vv_perp_z")] {
            out.checks.push(Check::within_sigma(label(name), dm[(i, i)], d[(i, i)], se[(i, i)], sigmas));
        }
        let (dr, dr_se) = (mm.moments.drift[3], mm.moments.drift_stderr[3]);
        out.checks.push(Check::within_sigma(label("drift_v_par"), dr, drift[3], dr_se, sigmas));
        out.checks.push(Check::within_sigma(label("kinetic_gain"), mm.kinetic_gain, gain_model, mm.kinetic_gain_stderr, sigmas));
        out.checks.push(Check::new(label("energy_drift"), Relation::Below, mm.max_energy_drift, MICRO_ENERGY_LIMIT, 0.0, 0.0));
        let perp = 0.5 * (dm[(4, 4)] + dm[(5, 5)]);
        let perp_se = 0.5 * se[(4, 4)].hypot(se[(5, 5)]);
        s.push(vec![
            tau,
            dm[(3, 3)],
            se[(3, 3)],
            d[(3, 3)],
            perp,
            perp_se,
            0.5 * (d[(4, 4)] + d[(5, 5)]),
            dr,
            dr_se,
            drift[3],
            mm.kinetic_gain,
            mm.kinetic_gain_stderr,
            gain_model,
            mm.max_energy_drift,
        ]);
    }
    out.series.push(s);
    Ok(out)
}

fn velocity_separations() -> Vec<PairObservable> {
    (0..3)
        .map(|i| PairObservable::separation(format!("dv{}", i + 1), 3 + i))
        .collect()
}

/// `Σ_i Var[v_i^a − v_i^b]` and its standard error per record.
fn separation_trace(traj: &EnsembleTrajectories) -> Result<Vec<(f64, f64)>, CliError> {
    let stats = estimate_pair_statistics(traj, &velocity_separations())?;
    Ok((0..stats.times.len())
        .map(|r| {
            let v = (0..3).map(|i| stats.variance(r, i)).sum();
            let se = (0..3).map(|i| stats.var_stderr[r][i].powi(2)).sum::<f64>().sqrt();
            (v, se)
        })
        .collect())
}

fn two_particle(c: &TwoParticleConfig, seed: u64, sigmas: f64) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let p = c.params()?;
    let physical = pulse_model(&p)?;
    let scale = c.phi_scale;
    let phi = ScalarField::new("phi", 3, move |z| scale * z.x()[0]);
    let counter = counterexample_model(&p, phi)?;
    let a = point(&[0.0; 3], &c.v0)?;
    let b = point(&[c.separation, 0.0, 0.0], &c.v0)?;
    let init: Vec<PhasePoint> = (0..c.pairs).flat_map(|_| [a.clone(), b.clone()]).collect();
    let opts = |seed| FlowOptions {
        t_end: c.t_end,
        dt: c.dt,
        seed,
        mode: NoiseMode::Grouped(2),
        scheme: Scheme::Heun,
        record_every: c.record_every,
    };
    let tp = out.stage("physical", || simulate_flow(&physical, &init, &opts(seed)))?;
    let tc = out.stage("counter", || simulate_flow(&counter, &init, &opts(hash4(seed, 1, 0, 0))))?;
    let sp = separation_trace(&tp)?;
    let sc = separation_trace(&tc)?;
    let mut s = Series::new(
        "two_particle",
        &["t", "var_sep_v_physical", "var_sep_v_counter", "stderr_var_sep_v_physical", "stderr_var_sep_v_counter"],
    )
    .plotting(&["var_sep_v_physical", "var_sep_v_counter"]);
    for (r, &t) in tp.times.iter().enumerate() {
        s.push(vec![t, sp[r].0, sc[r].0, sp[r].1, sc[r].1]);
    }
    out.series.push(s);

    // Relative velocity of each physical pair never changes.
    let mut worst: f64 = 0.0;
    for r in 0..tp.records() {
        for q in 0..c.pairs {
            let (za, zb) = (tp.coords(r, 2 * q), tp.coords(r, 2 * q + 1));
            let (a0, b0) = (tp.coords(0, 2 * q), tp.coords(0, 2 * q + 1));
            for i in 3..6 {
                worst = worst.max(((za[i] - zb[i]) - (a0[i] - b0[i])).abs());
            }
        }
    }
    out.checks.push(Check::within("physical_relative_velocity_change", worst, 0.0, MACHINE_TOL));

    let last = tc.records() - 1;
    let t = tc.times[last];
    let growth = (sc[last].0 - sc[0].0) / t;
    let growth_se = sc[last].1 / t;
    out.checks.push(Check::new(
        "counter_var_sep_v_slope",
        Relation::Above,
        growth,
        0.0,
        growth_se,
        sigmas * growth_se,
    ));

    // One member per pair keeps the samples independent.
    for i in 0..3 {
        let col = |traj: &EnsembleTrajectories| sample_moments((0..c.pairs).map(|q| traj.coords(last, 2 * q)[3 + i]));
        let (_, vp, sep) = col(&tp);
        let (_, vc, sec) = col(&tc);
        out.checks.push(Check::within_sigma(
            format!("one_particle_var_v{}", i + 1),
            vc,
            vp,
            sep.hypot(sec),
            sigmas,
        ));
    }
    Ok(out)
}

fn witness(c: &WitnessConfig, seed: u64) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let params = shk_core::lorentz::LorentzParams {
        lambda: c.lambda,
        ..Default::default()
    };
    let h0 = kinetic_energy(3);
    let mut s = Series::new(
        "witness",
        &["sample", "speed", "numeric", "analytic", "rel_err", "invariant_contraction"],
    )
    .plotting(&["rel_err"]);
    let (mut worst_rel, mut worst_inv): (f64, f64) = (0.0, 0.0);
    let t0 = Instant::now();
    for k in 0..c.samples as u64 {
        let speed = c.speed_min + (c.speed_max - c.speed_min) * uniform(seed, 0, k, 0);
        let v = Vector3::from(unit_vector(seed, 1, k)) * speed;
        let w = Vector3::from(unit_vector(seed, 2, k)) * (0.5 + uniform(seed, 0, k, 1));
        let (numeric, analytic) = non_hamiltonian_witness(&v, &w, &params)?;
        let rel = (numeric - analytic).abs() / analytic.abs();
        // h = a·v Poisson-commutes with H₀.
        let a = unit_vector(seed, 3, k);
        let h = ScalarField::new("a.v", 3, move |z| (0..3).map(|i| a[i] * z.v()[i]).sum())
            .with_gradient(move |_| [[0.0; 3], a].concat());
        let alpha = SymmetricTensorField::squared_differential(&h);
        let z = point(&[0.0; 3], &[v.x, v.y, v.z])?;
        let lie = lie_derivative_tensor(&h0, &alpha, &z, 1e-3)?;
        let y = DVector::from_iterator(6, w.iter().chain(w.iter()).copied());
        let inv = (y.transpose() * lie * &y)[(0, 0)];
        worst_rel = worst_rel.max(rel);
        worst_inv = worst_inv.max(inv.abs());
        s.push(vec![k as f64, speed, numeric, analytic, rel, inv]);
    }
    out.stages.push(Stage {
        name: "witness".into(),
        seconds: t0.elapsed().as_secs_f64(),
    });
    out.series.push(s);
    out.checks.push(Check::new("max_rel_err", Relation::Below, worst_rel, c.rel_tol, 0.0, 0.0));
    out.checks.push(Check::new(
        "max_invariant_contraction",
        Relation::Below,
        worst_inv,
        c.invariant_tol,
        0.0,
        0.0,
    ));
    Ok(out)
}
