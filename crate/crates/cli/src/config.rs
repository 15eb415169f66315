//! Experiment configuration.
//!
//! A config is a TOML document with top-level run settings and one optional
//! section named after the experiment kind:
//!
//! ```toml
//! kind = "pulse"
//! seed = 7
//!
//! [pulse]
//! particles = 10000
//! t_end = 10.0
//! dt = 0.1
//! ```
//!
//! Every section field has a default. Unknown keys, and sections that belong
//! to a different kind, are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use shk_core::langevin::Scheme;
use shk_core::lorentz::{LorentzParams, Profile};
use shk_core::models::{KarneyParams, PulseParams, Window};

use crate::CliError;

/// Ensemble and interval counts are capped here.
pub const MAX_COUNT: usize = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Pulse,
    Karney,
    LorentzScan,
    LorentzMicro,
    TwoParticle,
    Witness,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Pulse => "pulse",
            Kind::Karney => "karney",
            Kind::LorentzScan => "lorentz-scan",
            Kind::LorentzMicro => "lorentz-micro",
            Kind::TwoParticle => "two-particle",
            Kind::Witness => "witness",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    /// Checks pass within this many standard errors.
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PulseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub karney: Option<KarneyConfig>,
    #[serde(default, rename = "lorentz-scan", skip_serializing_if = "Option::is_none")]
    pub lorentz_scan: Option<LorentzScanConfig>,
    #[serde(default, rename = "lorentz-micro", skip_serializing_if = "Option::is_none")]
    pub lorentz_micro: Option<LorentzMicroConfig>,
    #[serde(default, rename = "two-particle", skip_serializing_if = "Option::is_none")]
    pub two_particle: Option<TwoParticleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessConfig>,
}

fn default_sigmas() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    #[default]
    Impulse,
    Uniform,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    #[default]
    Heun,
    Midpoint,
}

impl From<SchemeKind> for Scheme {
    fn from(s: SchemeKind) -> Self {
        match s {
            SchemeKind::Heun => Scheme::Heun,
            SchemeKind::Midpoint => Scheme::ImplicitMidpoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Coulomb,
    #[default]
    Yukawa,
}

impl From<ProfileKind> for Profile {
    fn from(p: ProfileKind) -> Self {
        match p {
            ProfileKind::Coulomb => Profile::Coulomb,
            ProfileKind::Yukawa => Profile::Yukawa,
        }
    }
}

fn pulse_params(phi0: f64, qm: f64, tau: f64, window: WindowKind, samples: &[f64]) -> Result<PulseParams, CliError> {
    if window != WindowKind::Sampled && !samples.is_empty() {
        return Err(CliError::Config("samples are only allowed with window = \"sampled\"".into()));
    }
    let p = PulseParams {
        phi0,
        qm,
        tau,
        window: match window {
            WindowKind::Impulse => Window::Impulse,
            WindowKind::Uniform => Window::Uniform,
            WindowKind::Sampled => Window::Sampled(samples.to_vec()),
        },
    };
    p.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    pub phi0: f64,
    pub qm: f64,
    pub tau: f64,
    pub window: WindowKind,
    /// Samples of `u(t)` for `window = "sampled"`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<f64>,
    pub particles: usize,
    pub t_end: f64,
    pub dt: f64,
    pub scheme: SchemeKind,
    pub record_every: usize,
    pub x0: [f64; 3],
    pub v0: [f64; 3],
    /// Kicked-map intervals for the microscopic diffusion check; 0 skips it.
    pub micro_intervals: usize,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            phi0: 1.0,
            qm: 1.0,
            tau: 1.0,
            window: WindowKind::Impulse,
            samples: Vec::new(),
            particles: 10_000,
            t_end: 10.0,
            dt: 0.1,
            scheme: SchemeKind::Heun,
            record_every: 1,
            x0: [0.0; 3],
            v0: [0.0; 3],
            micro_intervals: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KarneyConfig {
    pub eps: f64,
    pub nu: f64,
    pub i_min: f64,
    pub i_max: f64,
    pub cutoff: usize,
    pub particles: usize,
    /// Starting action; gyrophases are spread uniformly.
    pub i0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub record_every: usize,
}

impl Default for KarneyConfig {
    fn default() -> Self {
        let k = KarneyParams::default();
        Self {
            eps: k.eps,
            nu: k.nu,
            i_min: k.i_min,
            i_max: k.i_max,
            cutoff: k.cutoff,
            particles: 10_000,
            i0: 2.0,
            t_end: std::f64::consts::TAU,
            dt: std::f64::consts::TAU / 50.0,
            record_every: 5,
        }
    }
}

impl PulseConfig {
    pub fn params(&self) -> Result<PulseParams, CliError> {
        pulse_params(self.phi0, self.qm, self.tau, self.window, &self.samples)
    }
}

impl TwoParticleConfig {
    pub fn params(&self) -> Result<PulseParams, CliError> {
        pulse_params(self.phi0, self.qm, self.tau, self.window, &self.samples)
    }
}

impl KarneyConfig {
    pub fn params(&self) -> KarneyParams {
        KarneyParams {
            eps: self.eps,
            nu: self.nu,
            i_min: self.i_min,
            i_max: self.i_max,
            cutoff: self.cutoff,
        }
    }
}

macro_rules! plasma_params {
    ($t:ty) => {
        impl $t {
            pub fn params(&self, lambda: f64, tau: f64) -> LorentzParams {
                LorentzParams {
                    lambda,
                    tau,
                    qm: self.qm,
                    delta_reg: self.delta_reg,
                    profile: self.profile.into(),
                    length_scale: self.length_scale,
                }
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LorentzScanConfig {
    pub tau: f64,
    pub qm: f64,
    pub delta_reg: f64,
    pub profile: ProfileKind,
    pub length_scale: f64,
    /// Strictly increasing, each above 10.
    pub lambdas: Vec<f64>,
    pub speed: f64,
    /// Upper bound on the parallel/perpendicular ratio at the last Λ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_limit: Option<f64>,
}

impl Default for LorentzScanConfig {
    fn default() -> Self {
        let p = LorentzParams::default();
        Self {
            tau: p.tau,
            qm: p.qm,
            delta_reg: p.delta_reg,
            profile: ProfileKind::Yukawa,
            length_scale: p.length_scale,
            lambdas: vec![1e2, 1e3, 1e4],
            speed: 1.0,
            ratio_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LorentzMicroConfig {
    pub qm: f64,
    pub delta_reg: f64,
    pub profile: ProfileKind,
    pub length_scale: f64,
    pub lambda: f64,
    /// Coarse-graining steps; each is a separate comparison.
    pub taus: Vec<f64>,
    pub speed: f64,
    pub intervals: usize,
    pub box_scale: f64,
    pub resample: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub blocks: usize,
}

impl Default for LorentzMicroConfig {
    fn default() -> Self {
        let p = LorentzParams::default();
        Self {
            qm: p.qm,
            delta_reg: p.delta_reg,
            profile: ProfileKind::Yukawa,
            length_scale: p.length_scale,
            lambda: 20.0,
            taus: vec![10.0],
            speed: 1.0,
            intervals: 1000,
            box_scale: 1.0,
            resample: true,
            dt: None,
            blocks: 50,
        }
    }
}

plasma_params!(LorentzScanConfig);
plasma_params!(LorentzMicroConfig);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoParticleConfig {
    pub phi0: f64,
    pub qm: f64,
    pub tau: f64,
    pub window: WindowKind,
    /// Samples of `u(t)` for `window = "sampled"`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<f64>,
    pub pairs: usize,
    pub t_end: f64,
    pub dt: f64,
    /// Initial distance between pair members along x¹.
    pub separation: f64,
    pub v0: [f64; 3],
    /// The counterexample rotates its noise by `phi_scale · x¹`.
    pub phi_scale: f64,
    pub record_every: usize,
}

impl Default for TwoParticleConfig {
    fn default() -> Self {
        Self {
            phi0: 1.0,
            qm: 1.0,
            tau: 1.0,
            window: WindowKind::Impulse,
            samples: Vec::new(),
            pairs: 10_000,
            t_end: 10.0,
            dt: 0.1,
            separation: 1.0,
            v0: [0.0; 3],
            phi_scale: 1.0,
            record_every: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WitnessConfig {
    pub lambda: f64,
    pub samples: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub rel_tol: f64,
    /// Bound on the contraction for the invariant form.
    pub invariant_tol: f64,
}

impl Default for WitnessConfig {
    fn default() -> Self {
        Self {
            lambda: 20.0,
            samples: 20,
            speed_min: 0.5,
            speed_max: 2.0,
            rel_tol: 1e-4,
            invariant_tol: 1e-6,
        }
    }
}

/// Text formats accepted by [`ExperimentConfig::parse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl ExperimentConfig {
    /// A config of the given kind with every section default.
    pub fn new(kind: Kind) -> Self {
        let mut c = Self {
            kind,
            seed: 0,
            sigmas: default_sigmas(),
            workers: None,
            out: None,
            pulse: None,
            karney: None,
            lorentz_scan: None,
            lorentz_micro: None,
            two_particle: None,
            witness: None,
        };
        c.fill_section();
        c
    }

    pub fn parse(text: &str, format: Format) -> Result<Self, CliError> {
        let mut c: Self = match format {
            Format::Toml => toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?,
            Format::Json => serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?,
        };
        c.fill_section();
        c.validate()?;
        Ok(c)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Toml,
        };
        Self::parse(&text, format)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    fn fill_section(&mut self) {
        match self.kind {
            Kind::Pulse => {
                self.pulse.get_or_insert_with(Default::default);
            }
            Kind::Karney => {
                self.karney.get_or_insert_with(Default::default);
            }
            Kind::LorentzScan => {
                self.lorentz_scan.get_or_insert_with(Default::default);
            }
            Kind::LorentzMicro => {
                self.lorentz_micro.get_or_insert_with(Default::default);
            }
            Kind::TwoParticle => {
                self.two_particle.get_or_insert_with(Default::default);
            }
            Kind::Witness => {
                self.witness.get_or_insert_with(Default::default);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let present = [
            (Kind::Pulse, self.pulse.is_some()),
            (Kind::Karney, self.karney.is_some()),
            (Kind::LorentzScan, self.lorentz_scan.is_some()),
            (Kind::LorentzMicro, self.lorentz_micro.is_some()),
            (Kind::TwoParticle, self.two_particle.is_some()),
            (Kind::Witness, self.witness.is_some()),
        ];
        for (k, p) in present {
            if p && k != self.kind {
                return Err(CliError::Config(format!(
                    "section [{}] does not apply to kind \"{}\"",
                    k.name(),
                    self.kind.name()
                )));
            }
        }
        check(self.sigmas > 0.0 && self.sigmas.is_finite(), "sigmas must be positive")?;
        if let Some(w) = self.workers {
            check((1..=1024).contains(&w), "workers must be in 1..=1024")?;
        }
        if let Some(c) = &self.pulse {
            c.params()?;
            count(c.particles, 2, "particles")?;
            steps(c.t_end, c.dt)?;
            check(c.record_every >= 1, "record_every must be at least 1")?;
            finite(&c.x0, "x0")?;
            finite(&c.v0, "v0")?;
            check(c.micro_intervals <= MAX_COUNT, "micro_intervals too large")?;
            check(c.micro_intervals == 0 || c.micro_intervals >= 2, "micro_intervals must be 0 or at least 2")?;
        }
        if let Some(c) = &self.karney {
            c.params().validate().map_err(|e| CliError::Config(e.to_string()))?;
            count(c.particles, 2, "particles")?;
            check(c.i0 > c.i_min && c.i0 < c.i_max, "i0 must lie inside (i_min, i_max)")?;
            steps(c.t_end, c.dt)?;
            check(c.record_every >= 1, "record_every must be at least 1")?;
        }
        if let Some(c) = &self.lorentz_scan {
            check(!c.lambdas.is_empty(), "lambdas must not be empty")?;
            check(
                c.lambdas.iter().all(|l| *l > 10.0 && l.is_finite()) && c.lambdas.windows(2).all(|w| w[1] > w[0]),
                "lambdas must be increasing and above 10",
            )?;
            check(c.speed > 0.0 && c.speed.is_finite(), "speed must be positive")?;
            if let Some(r) = c.ratio_limit {
                check(r > 0.0, "ratio_limit must be positive")?;
            }
            plasma(c.params(c.lambdas[0], c.tau))?;
        }
        if let Some(c) = &self.lorentz_micro {
            check(c.lambda > 1.0 && c.lambda.is_finite(), "lambda must exceed 1")?;
            check(!c.taus.is_empty(), "taus must not be empty")?;
            for &tau in &c.taus {
                plasma(c.params(c.lambda, tau))?;
            }
            check(c.speed > 0.0 && c.speed.is_finite(), "speed must be positive")?;
            count(c.intervals, 2, "intervals")?;
            check(c.box_scale >= 1.0 && c.box_scale.is_finite(), "box_scale must be at least 1")?;
            if let Some(dt) = c.dt {
                check(dt > 0.0 && dt.is_finite(), "dt must be positive")?;
            }
            check((2..=10_000).contains(&c.blocks), "blocks must be in 2..=10000")?;
        }
        if let Some(c) = &self.two_particle {
            c.params()?;
            count(c.pairs, 2, "pairs")?;
            steps(c.t_end, c.dt)?;
            check(c.separation.is_finite(), "separation must be finite")?;
            finite(&c.v0, "v0")?;
            check(c.phi_scale.is_finite(), "phi_scale must be finite")?;
            check(c.record_every >= 1, "record_every must be at least 1")?;
        }
        if let Some(c) = &self.witness {
            check(c.lambda > 1.0 && c.lambda.is_finite(), "lambda must exceed 1")?;
            check((1..=100_000).contains(&c.samples), "samples must be in 1..=100000")?;
            check(
                c.speed_min > 0.0 && c.speed_max >= c.speed_min && c.speed_max.is_finite(),
                "need 0 < speed_min <= speed_max",
            )?;
            check(c.rel_tol > 0.0 && c.invariant_tol > 0.0, "tolerances must be positive")?;
        }
        Ok(())
    }
}

fn check(ok: bool, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg.into()))
    }
}

fn count(n: usize, min: usize, name: &str) -> Result<(), CliError> {
    check((min..=MAX_COUNT).contains(&n), &format!("{name} must be in {min}..={MAX_COUNT}"))
}

fn finite(v: &[f64], name: &str) -> Result<(), CliError> {
    check(v.iter().all(|c| c.is_finite()), &format!("{name} must be finite"))
}

/// `t_end/dt` must be a whole number of steps.
fn steps(t_end: f64, dt: f64) -> Result<(), CliError> {
    check(t_end > 0.0 && dt > 0.0 && t_end.is_finite(), "t_end and dt must be positive")?;
    let n = t_end / dt;
    check(
        n <= MAX_COUNT as f64 && (n - n.round()).abs() <= 1e-9 * n.max(1.0),
        &format!("t_end/dt = {n} must be a whole number of steps"),
    )
}

fn plasma(p: LorentzParams) -> Result<(), CliError> {
    p.validate().map_err(|e| CliError::Config(e.to_string()))
}
