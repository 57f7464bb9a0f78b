//! Flat, unit-annotated project configuration.
//!
//! One `key = value unit` entry per line; `#` starts a comment. Every
//! number carries a unit, dimensionless numbers use `1`. Values are
//! converted to the unit the toolkit uses internally and written back in
//! that unit, so parsing and serializing round-trips exactly.
//!
//! ```text
//! # sub-microsecond timestep
//! sim.timestep = 1 ns
//! trajectory.duration = 80 us
//! filter.cutoff = 50 kHz
//! sim.omega_ref = 1.4 MHz        # angular keys accept Hz and multiply by 2 pi
//! mesh.anchor.0.alpha = 1.6328e7 V/m^2
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::calibrate::HeatingModel;
use crate::drift::{ChargingParams, ServoConfig};
use crate::dynamics::{DesignInputs, Integrator, SimConfig};
use crate::error::{Error, Result};
use crate::estimate::{McmcConfig, PriorSpec};
use crate::hardware::{AwgSpec, FilterSpec};
use crate::phonons::RabiModel;
use crate::rampgen::{MeshAnchor, RampConfig, RampMesh, TrajectorySpec};
use crate::trapmodel::{
    BasisCoefficients, PhysicalConstants, SegmentBasis, ATOMIC_MASS_UNIT as ATOMIC_MASS,
    ELEMENTARY_CHARGE,
};

/// Accepted spellings per canonical unit, with the factor to the canonical
/// unit.
fn unit_factor(canonical: &str, unit: &str) -> Option<f64> {
    let table: &[(&str, f64)] = match canonical {
        "1" => &[("1", 1.0)],
        "m" => &[
            ("m", 1.0),
            ("mm", 1e-3),
            ("um", 1e-6),
            ("µm", 1e-6),
            ("nm", 1e-9),
        ],
        "s" => &[
            ("s", 1.0),
            ("ms", 1e-3),
            ("us", 1e-6),
            ("µs", 1e-6),
            ("ns", 1e-9),
            ("min", 60.0),
        ],
        "min" => &[("min", 1.0), ("s", 1.0 / 60.0), ("h", 60.0)],
        "V" => &[("V", 1.0), ("mV", 1e-3)],
        "mV" => &[("mV", 1.0), ("V", 1e3)],
        "Hz" => &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6)],
        "S/s" => &[("S/s", 1.0), ("kS/s", 1e3), ("MS/s", 1e6)],
        "rad/s" => &[
            ("rad/s", 1.0),
            ("Hz", 2.0 * PI),
            ("kHz", 2.0 * PI * 1e3),
            ("MHz", 2.0 * PI * 1e6),
        ],
        "kg" => &[("kg", 1.0), ("u", ATOMIC_MASS)],
        "C" => &[("C", 1.0), ("e", ELEMENTARY_CHARGE)],
        "J*s" => &[("J*s", 1.0)],
        "F/m" => &[("F/m", 1.0)],
        "m^-1" => &[("m^-1", 1.0), ("1/m", 1.0)],
        "m^-2" => &[("m^-2", 1.0), ("1/m^2", 1.0)],
        "m^-4" => &[("m^-4", 1.0), ("1/m^4", 1.0)],
        "V/m" => &[("V/m", 1.0)],
        "V/m^2" => &[("V/m^2", 1.0)],
        "V/m^4" => &[("V/m^4", 1.0)],
        "1/ms" => &[("1/ms", 1.0), ("1/s", 1e-3)],
        "mV/min" => &[("mV/min", 1.0), ("V/s", 6e4), ("mV/s", 60.0)],
        "1/min" => &[("1/min", 1.0), ("1/s", 60.0)],
        _ => return None,
    };
    table.iter().find(|(u, _)| *u == unit).map(|&(_, f)| f)
}

enum Slot<'a> {
    Number(&'a mut f64, &'static str),
    Optional(&'a mut Option<f64>, &'static str),
    Count(&'a mut usize),
    Switch(&'a mut bool),
    Integrator(&'a mut Integrator),
}

/// Trajectory defaults; the initial distance follows the mesh when absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryDefaults {
    pub d_initial: Option<f64>,
    pub d_final: f64,
    pub duration: f64,
    pub truncate_head: f64,
    pub truncate_tail: f64,
}

impl Default for TrajectoryDefaults {
    fn default() -> Self {
        Self {
            d_initial: None,
            d_final: 400e-6,
            duration: 80e-6,
            truncate_head: 0.1,
            truncate_tail: 0.3,
        }
    }
}

/// Estimator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorDefaults {
    pub eta: f64,
    pub chain_length: usize,
    pub burn_in_fraction: f64,
    pub max_stored: usize,
    /// Upper bound of the occupation priors.
    pub prior_cap: f64,
    /// Expected Rabi frequency around which the frequency prior is centred.
    pub omega: f64,
}

impl Default for EstimatorDefaults {
    fn default() -> Self {
        let mcmc = McmcConfig::new(0);
        Self {
            eta: RabiModel::DEFAULT_ETA,
            chain_length: mcmc.length,
            burn_in_fraction: mcmc.burn_in_fraction,
            max_stored: mcmc.max_stored,
            prior_cap: PriorSpec::DEFAULT_CAP,
            omega: 2.0 * PI * 50e3,
        }
    }
}

/// Drift-compensation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftDefaults {
    pub charging: ChargingParams,
    pub kp: f64,
    pub ki: f64,
    pub period: f64,
    pub noise: f64,
    pub plant_gain: f64,
    /// Servo settling tolerance, mV.
    pub tolerance: f64,
}

impl Default for DriftDefaults {
    fn default() -> Self {
        let servo = ServoConfig::default();
        Self {
            charging: ChargingParams::reference(),
            kp: servo.kp,
            ki: servo.ki,
            period: servo.period,
            noise: servo.noise,
            plant_gain: servo.plant_gain,
            tolerance: 0.6,
        }
    }
}

/// Everything a command needs besides its own arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectConfig {
    pub constants: PhysicalConstants,
    pub basis: SegmentBasis,
    pub awg: AwgSpec,
    /// Apply generator quantization before filtering.
    pub quantize: bool,
    pub filter: FilterSpec,
    pub filtered: bool,
    pub oversample: usize,
    pub trajectory: TrajectoryDefaults,
    pub mesh: Option<Vec<MeshAnchor>>,
    pub ramp: RampConfig,
    pub heating: HeatingModel,
    pub sim: SimConfig,
    /// Static hold after the ramp.
    pub hold: f64,
    pub estimator: EstimatorDefaults,
    pub drift: DriftDefaults,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            constants: PhysicalConstants::calcium40(),
            basis: SegmentBasis::reference(),
            awg: AwgSpec::default(),
            quantize: true,
            filter: FilterSpec::default(),
            filtered: true,
            oversample: 40,
            trajectory: TrajectoryDefaults::default(),
            mesh: None,
            ramp: RampConfig::default(),
            heating: HeatingModel::reference(),
            sim: SimConfig::default(),
            hold: 20e-6,
            estimator: EstimatorDefaults::default(),
            drift: DriftDefaults::default(),
        }
    }
}

fn basis_slots<'a>(prefix: &str, b: &'a mut BasisCoefficients) -> Vec<(String, Slot<'a>)> {
    use Slot::Number;
    let key = |name: &str| format!("{prefix}{name}");
    vec![
        (key("alpha_c"), Number(&mut b.alpha_c, "m^-2")),
        (key("alpha_s"), Number(&mut b.alpha_s, "m^-2")),
        (key("alpha_o"), Number(&mut b.alpha_o, "m^-2")),
        (key("beta_c"), Number(&mut b.beta_c, "m^-4")),
        (key("beta_s"), Number(&mut b.beta_s, "m^-4")),
        (key("beta_o"), Number(&mut b.beta_o, "m^-4")),
        (key("gamma_s"), Number(&mut b.gamma_s, "m^-1")),
        (key("gamma_o"), Number(&mut b.gamma_o, "m^-1")),
        (key("alpha_prime"), Number(&mut b.alpha_prime, "V/m^2")),
        (key("beta_prime"), Number(&mut b.beta_prime, "V/m^4")),
        (key("gamma_prime"), Number(&mut b.gamma_prime, "V/m")),
    ]
}

fn anchor_slots(index: usize, a: &mut MeshAnchor) -> Vec<(String, Slot<'_>)> {
    vec![
        (
            format!("mesh.anchor.{index}.alpha"),
            Slot::Number(&mut a.alpha, "V/m^2"),
        ),
        (
            format!("mesh.anchor.{index}.u_s"),
            Slot::Number(&mut a.u_s, "V"),
        ),
        (
            format!("mesh.anchor.{index}.u_o"),
            Slot::Number(&mut a.u_o, "V"),
        ),
    ]
}

impl ProjectConfig {
    fn slots(&mut self) -> Vec<(String, Slot<'_>)> {
        let Self {
            constants,
            basis,
            awg,
            quantize,
            filter,
            filtered,
            oversample,
            trajectory,
            mesh: _,
            ramp,
            heating,
            sim,
            hold,
            estimator,
            drift,
        } = self;
        use Slot::*;
        let mut slots: Vec<(String, Slot<'_>)> = vec![
            ("ion.charge", Number(&mut constants.elementary_charge, "C")),
            ("ion.mass", Number(&mut constants.ion_mass, "kg")),
            (
                "ion.reduced_planck",
                Number(&mut constants.reduced_planck, "J*s"),
            ),
            (
                "ion.vacuum_permittivity",
                Number(&mut constants.vacuum_permittivity, "F/m"),
            ),
            ("awg.enabled", Switch(quantize)),
            ("awg.range", Number(&mut awg.range, "V")),
            ("awg.resolution", Number(&mut awg.resolution, "V")),
            ("awg.max_rate", Number(&mut awg.max_rate, "S/s")),
            ("filter.enabled", Switch(filtered)),
            ("filter.cutoff", Number(&mut filter.cutoff, "Hz")),
            ("filter.quality", Number(&mut filter.quality, "1")),
            ("filter.oversample", Count(oversample)),
            (
                "trajectory.d_initial",
                Optional(&mut trajectory.d_initial, "m"),
            ),
            ("trajectory.d_final", Number(&mut trajectory.d_final, "m")),
            ("trajectory.duration", Number(&mut trajectory.duration, "s")),
            (
                "trajectory.truncate_head",
                Number(&mut trajectory.truncate_head, "1"),
            ),
            (
                "trajectory.truncate_tail",
                Number(&mut trajectory.truncate_tail, "1"),
            ),
            ("ramp.du_c_cp", Number(&mut ramp.du_c_cp, "V")),
            ("ramp.du_o", Number(&mut ramp.du_o, "V")),
            ("ramp.sample_rate", Number(&mut ramp.sample_rate, "S/s")),
            ("ramp.voltage_limit", Number(&mut ramp.voltage_limit, "V")),
            ("heating.prefactor", Number(&mut heating.prefactor, "1/ms")),
            ("heating.exponent", Number(&mut heating.exponent, "1")),
            (
                "heating.prefactor_sigma",
                Number(&mut heating.prefactor_sigma, "1/ms"),
            ),
            (
                "heating.exponent_sigma",
                Number(&mut heating.exponent_sigma, "1"),
            ),
            ("sim.timestep", Number(&mut sim.timestep, "s")),
            ("sim.integrator", Integrator(&mut sim.integrator)),
            ("sim.omega_ref", Number(&mut sim.omega_ref, "rad/s")),
            ("sim.validity_radius", Number(&mut sim.validity_radius, "m")),
            ("sim.tail_periods", Number(&mut sim.tail_periods, "1")),
            ("sim.record_every", Count(&mut sim.record_every)),
            ("sim.hold", Number(hold, "s")),
            ("estimate.eta", Number(&mut estimator.eta, "1")),
            ("estimate.chain_length", Count(&mut estimator.chain_length)),
            (
                "estimate.burn_in_fraction",
                Number(&mut estimator.burn_in_fraction, "1"),
            ),
            ("estimate.max_stored", Count(&mut estimator.max_stored)),
            ("estimate.prior_cap", Number(&mut estimator.prior_cap, "1")),
            ("estimate.omega", Number(&mut estimator.omega, "rad/s")),
            (
                "charging.k_prime",
                Number(&mut drift.charging.k_prime, "mV/min"),
            ),
            ("charging.delta", Number(&mut drift.charging.delta, "1/min")),
            (
                "charging.kappa_dis",
                Number(&mut drift.charging.kappa_dis, "1/min"),
            ),
            ("servo.kp", Number(&mut drift.kp, "1")),
            ("servo.ki", Number(&mut drift.ki, "1")),
            ("servo.period", Number(&mut drift.period, "s")),
            ("servo.noise", Number(&mut drift.noise, "mV")),
            ("servo.plant_gain", Number(&mut drift.plant_gain, "1")),
            ("servo.tolerance", Number(&mut drift.tolerance, "mV")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let coefficients = &mut basis.coefficients;
        let sigma = &mut basis.sigma;
        let mut all = basis_slots("basis.", coefficients);
        if let Some(sigma) = sigma {
            all.extend(basis_slots("basis.sigma.", sigma));
        }
        all.append(&mut slots);
        all
    }

    fn mesh_slots(mesh: &mut [MeshAnchor]) -> Vec<(String, Slot<'_>)> {
        mesh.iter_mut()
            .enumerate()
            .flat_map(|(i, a)| anchor_slots(i, a))
            .collect()
    }

    /// Parses configuration text. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected `key = value unit`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }

        let mut cfg = Self::default();
        if entries.keys().any(|k| k.starts_with("basis.sigma.")) {
            cfg.basis.sigma = Some(BasisCoefficients::ZERO);
        }
        let anchors = entries
            .keys()
            .filter_map(|k| k.strip_prefix("mesh.anchor."))
            .filter_map(|rest| rest.split('.').next()?.parse::<usize>().ok())
            .max()
            .map(|top| top + 1);
        let mut mesh = vec![
            MeshAnchor {
                alpha: f64::NAN,
                u_s: f64::NAN,
                u_o: f64::NAN,
            };
            anchors.unwrap_or(0)
        ];

        let mut seen = 0usize;
        for (key, slot) in cfg.slots().into_iter().chain(Self::mesh_slots(&mut mesh)) {
            if let Some((line, value)) = entries.get(&key) {
                assign(slot, value, *line, &key)?;
                seen += 1;
            }
        }
        if seen != entries.len() {
            let known: Vec<String> = {
                let mut probe = cfg.clone();
                let mut names: Vec<String> = probe.slots().into_iter().map(|(k, _)| k).collect();
                names.extend(Self::mesh_slots(&mut mesh).into_iter().map(|(k, _)| k));
                names
            };
            let (key, (line, _)) = entries
                .iter()
                .find(|(k, _)| !known.contains(k))
                .expect("an entry was not consumed");
            return Err(Error::Parse {
                line: *line,
                message: format!("unknown key `{key}`"),
            });
        }
        if anchors.is_some() {
            if let Some(i) = mesh
                .iter()
                .position(|a| a.alpha.is_nan() || a.u_s.is_nan() || a.u_o.is_nan())
            {
                return Err(Error::Config(format!(
                    "mesh anchor {i} needs alpha, u_s and u_o"
                )));
            }
            cfg.mesh = Some(mesh);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides one entry, given as in the file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut next = self.clone();
        let mut mesh = next.mesh.take();
        if key.starts_with("basis.sigma.") && next.basis.sigma.is_none() {
            next.basis.sigma = Some(BasisCoefficients::ZERO);
        }
        let slot = next
            .slots()
            .into_iter()
            .chain(
                mesh.as_deref_mut()
                    .map(Self::mesh_slots)
                    .unwrap_or_default(),
            )
            .find(|(k, _)| k == key)
            .map(|(_, s)| s);
        match slot {
            Some(slot) => assign(slot, &separate_unit(value.trim()), 0, key)?,
            None => {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        next.mesh = mesh;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text: every key in a fixed order, values in the internal
    /// unit with shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut copy = self.clone();
        let mut mesh = copy.mesh.clone().unwrap_or_default();
        let mut out = String::new();
        let mut section = String::new();
        for (key, slot) in copy.slots().into_iter().chain(Self::mesh_slots(&mut mesh)) {
            let head = key.split('.').next().unwrap_or("").to_string();
            if head != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = head;
            }
            let value = match slot {
                Slot::Number(v, unit) => format!("{:e} {unit}", *v),
                Slot::Optional(v, unit) => match v {
                    Some(x) => format!("{:e} {unit}", *x),
                    None => continue,
                },
                Slot::Count(n) => n.to_string(),
                Slot::Switch(b) => if *b { "on" } else { "off" }.to_string(),
                Slot::Integrator(i) => i.label().to_string(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.constants.elementary_charge > 0.0 && self.constants.ion_mass > 0.0) {
            return fail("ion charge and mass must be positive");
        }
        self.basis
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.awg
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.filter
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.sim
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.oversample == 0 {
            return fail("filter.oversample must be at least 1");
        }
        if !(self.hold >= 0.0) {
            return fail("sim.hold must be non-negative");
        }
        if !(self.estimator.eta > 0.0 && self.estimator.eta < 1.0) {
            return fail("estimate.eta must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.estimator.burn_in_fraction) {
            return fail("estimate.burn_in_fraction must lie in [0, 1)");
        }
        if let Some(anchors) = &self.mesh {
            RampMesh::new(anchors.clone()).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<RampMesh> {
        match &self.mesh {
            Some(anchors) => RampMesh::new(anchors.clone()),
            None => Ok(RampMesh::reference(&self.basis)),
        }
    }

    pub fn trajectory_spec(&self) -> Result<TrajectorySpec> {
        let t = &self.trajectory;
        let d_initial = match t.d_initial {
            Some(d) => d,
            None => {
                TrajectorySpec::for_mesh(&self.mesh()?, &self.basis, &self.constants)?.d_initial
            }
        };
        let mut spec = TrajectorySpec::new(d_initial, t.d_final, t.duration)?;
        spec.truncate_head = t.truncate_head;
        spec.truncate_tail = t.truncate_tail;
        spec.validate()?;
        Ok(spec)
    }

    pub fn design_inputs(&self) -> Result<DesignInputs> {
        Ok(DesignInputs {
            basis: self.basis.clone(),
            mesh: self.mesh()?,
            trajectory: self.trajectory_spec()?,
            ramp: self.ramp,
            awg: self.quantize.then_some(self.awg),
            filter: self.filtered.then_some(self.filter),
            oversample: self.oversample,
            hold: self.hold,
            heating: self.heating,
            constants: self.constants,
        })
    }

    pub fn mcmc(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            length: self.estimator.chain_length,
            burn_in_fraction: self.estimator.burn_in_fraction,
            max_stored: self.estimator.max_stored,
            ..McmcConfig::new(seed)
        }
    }

    pub fn priors(&self) -> Result<PriorSpec> {
        PriorSpec::around(self.estimator.omega, self.estimator.prior_cap)
    }

    pub fn servo(&self, seed: u64) -> ServoConfig {
        let d = &self.drift;
        ServoConfig {
            kp: d.kp,
            ki: d.ki,
            period: d.period,
            noise: d.noise,
            plant_gain: d.plant_gain,
            seed,
            ..ServoConfig::default()
        }
    }
}

/// Parses `number unit` (the space is optional) into `canonical` units.
pub fn parse_quantity(text: &str, canonical: &str) -> Result<f64> {
    let text = text.trim();
    let split = text
        .char_indices()
        .find(|&(i, ch)| {
            ch.is_alphabetic()
                && !(matches!(ch, 'e' | 'E')
                    && text[i + 1..]
                        .starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+'))
        })
        .map(|(i, _)| i);
    let spaced = match split {
        Some(_) => separate_unit(text),
        None => format!("{text} {canonical}"),
    };
    parse_number(&spaced, canonical, 0, text)
}

/// Inserts the space between a number and a directly attached unit.
fn separate_unit(text: &str) -> String {
    let split = text.char_indices().find(|&(i, ch)| {
        ch.is_alphabetic()
            && !(matches!(ch, 'e' | 'E')
                && text[i + 1..].starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+'))
    });
    match split {
        Some((i, _)) if i > 0 && !text[..i].ends_with(' ') => {
            format!("{} {}", &text[..i], &text[i..])
        }
        _ => text.to_string(),
    }
}

fn parse_number(value: &str, canonical: &str, line: usize, key: &str) -> Result<f64> {
    let mut parts = value.split_whitespace();
    let (Some(number), Some(unit), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::Parse {
            line,
            message: format!("`{key}` needs a number and a unit, got `{value}`"),
        });
    };
    let x: f64 = number.parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{number}` is not a number"),
    })?;
    if !x.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("`{key}` must be finite"),
        });
    }
    let factor = unit_factor(canonical, unit).ok_or_else(|| Error::Parse {
        line,
        message: format!("unit `{unit}` is not accepted for `{key}` (expects {canonical})"),
    })?;
    Ok(if factor == 1.0 { x } else { x * factor })
}

fn assign(slot: Slot<'_>, value: &str, line: usize, key: &str) -> Result<()> {
    match slot {
        Slot::Number(v, unit) => *v = parse_number(value, unit, line, key)?,
        Slot::Optional(v, unit) => *v = Some(parse_number(value, unit, line, key)?),
        Slot::Count(n) => {
            let x = match value.parse::<f64>() {
                Ok(x) if x.is_finite() => x,
                _ => parse_number(value, "1", line, key)?,
            };
            if x < 0.0 || x.fract() != 0.0 || x > usize::MAX as f64 {
                return Err(Error::Parse {
                    line,
                    message: format!("`{key}` must be a non-negative integer"),
                });
            }
            *n = x as usize;
        }
        Slot::Switch(b) => {
            *b = match value {
                "on" | "true" | "yes" => true,
                "off" | "false" | "no" => false,
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("`{key}` takes on or off, got `{value}`"),
                    })
                }
            }
        }
        Slot::Integrator(i) => {
            *i = Integrator::parse(value).ok_or_else(|| Error::Parse {
                line,
                message: format!("unknown integrator `{value}`"),
            })?
        }
    }
    Ok(())
}
