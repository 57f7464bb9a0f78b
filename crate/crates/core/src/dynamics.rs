//! Classical two-ion motion through a separation waveform.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::calibrate::HeatingModel;
use crate::drift::{find_tilt_window, TiltWindow};
use crate::error::{Error, Result};
use crate::hardware::{apply_filter_with_hold, quantize, AwgSpec, ContinuousVoltage, FilterSpec};
use crate::numeric::{fit_line, trapezoid};
use crate::rampgen::{build_waveform, distance_at, RampConfig, RampMesh, TrajectorySpec, Waveform};
use crate::trapmodel::{
    coefficients_from_voltages, local_frequency, normal_modes, AxialPotential, EquilibriumConfig,
    EquilibriumSolver, PhysicalConstants, SegmentBasis, DEFAULT_VALIDITY_RADIUS,
};

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Fourth-order Yoshida composition of leapfrog steps.
    #[default]
    Symplectic,
    /// Second-order drift-kick-drift leapfrog.
    Leapfrog,
    Rk4,
}

impl Integrator {
    pub fn label(self) -> &'static str {
        match self {
            Integrator::Symplectic => "symplectic",
            Integrator::Leapfrog => "leapfrog",
            Integrator::Rk4 => "rk4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "symplectic" | "yoshida" => Some(Integrator::Symplectic),
            "leapfrog" | "verlet" => Some(Integrator::Leapfrog),
            "rk4" => Some(Integrator::Rk4),
            _ => None,
        }
    }
}

/// Integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub timestep: f64,
    pub integrator: Integrator,
    /// Frequency defining one phonon, rad/s.
    pub omega_ref: f64,
    pub validity_radius: f64,
    /// Local oscillation periods averaged for the energy estimate.
    pub tail_periods: f64,
    /// Keep every n-th state of the trajectory.
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            timestep: 1e-9,
            integrator: Integrator::Symplectic,
            omega_ref: 2.0 * PI * 1.4e6,
            validity_radius: DEFAULT_VALIDITY_RADIUS,
            tail_periods: 5.0,
            record_every: 4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timestep > 0.0 && self.timestep.is_finite()) {
            return Err(Error::Timestep(format!("timestep {:e} s", self.timestep)));
        }
        if !(self.omega_ref > 0.0) || !(self.validity_radius > 0.0) || !(self.tail_periods > 0.0) {
            return Err(Error::Invalid(format!(
                "invalid simulation settings {self:?}"
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Invalid("record_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Largest angular frequency resolved by the timestep.
    pub fn max_resolved_omega(&self) -> f64 {
        2.0 * PI / (50.0 * self.timestep)
    }

    fn escape_radius(&self) -> f64 {
        3.0 * self.validity_radius
    }
}

/// Positions and velocities of both ions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonState {
    pub x1: f64,
    pub x2: f64,
    pub v1: f64,
    pub v2: f64,
    pub time: f64,
}

impl IonState {
    pub fn at_rest(eq: &EquilibriumConfig) -> Self {
        Self {
            x1: eq.x1,
            x2: eq.x2,
            v1: 0.0,
            v2: 0.0,
            time: 0.0,
        }
    }

    /// Same positions with velocities negated.
    pub fn reversed(&self) -> Self {
        Self {
            v1: -self.v1,
            v2: -self.v2,
            ..*self
        }
    }

    /// Kinetic plus potential energy in `p`, J.
    pub fn energy(&self, p: &AxialPotential, c: &PhysicalConstants) -> f64 {
        0.5 * c.ion_mass * (self.v1 * self.v1 + self.v2 * self.v2)
            + p.two_ion_energy(self.x1, self.x2, c)
    }
}

/// Recorded motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Every `record_every`-th state, always including the first and last.
    pub states: Vec<IonState>,
    pub steps: usize,
    pub timestep: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> IonState {
        *self
            .states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn initial_state(&self) -> IonState {
        self.states[0]
    }

    /// States within the last `duration` seconds.
    pub fn tail(&self, duration: f64) -> &[IonState] {
        let end = self.final_state().time;
        let start = self.states.partition_point(|s| s.time < end - duration);
        &self.states[start.saturating_sub(1)..]
    }
}

struct ForceField<'a> {
    cv: &'a ContinuousVoltage,
    basis: &'a SegmentBasis,
    qm: f64,
    kappa: f64,
}

impl ForceField<'_> {
    fn potential(&self, t: f64) -> AxialPotential {
        coefficients_from_voltages(self.basis, &self.cv.eval(t))
    }

    #[inline]
    fn accel(&self, x1: f64, x2: f64, t: f64) -> (f64, f64) {
        let p = self.potential(t);
        let d = x1 - x2;
        let coulomb = self.kappa * d / (d * d * d.abs());
        (
            self.qm * (-p.slope(x1) + coulomb),
            self.qm * (-p.slope(x2) - coulomb),
        )
    }

    /// Upper bound on the squared mode frequency at the current positions.
    fn omega_sq_bound(&self, s: &IonState) -> f64 {
        let p = self.potential(s.time);
        let d = (s.x2 - s.x1).abs();
        let k = 2.0 * self.kappa / (d * d * d);
        let diag = p
            .evaluate(s.x1)
            .curvature
            .abs()
            .max(p.evaluate(s.x2).curvature.abs());
        self.qm * (diag + 2.0 * k)
    }
}

const YOSHIDA_W1: f64 = 1.351_207_191_959_657_8;
const YOSHIDA_W0: f64 = -1.702_414_383_919_315_3;

fn leapfrog(f: &ForceField, s: &mut IonState, h: f64) {
    s.x1 += 0.5 * h * s.v1;
    s.x2 += 0.5 * h * s.v2;
    let (a1, a2) = f.accel(s.x1, s.x2, s.time + 0.5 * h);
    s.v1 += h * a1;
    s.v2 += h * a2;
    s.x1 += 0.5 * h * s.v1;
    s.x2 += 0.5 * h * s.v2;
    s.time += h;
}

fn rk4(f: &ForceField, s: &mut IonState, h: f64) {
    let deriv = |x1: f64, x2: f64, v1: f64, v2: f64, t: f64| {
        let (a1, a2) = f.accel(x1, x2, t);
        [v1, v2, a1, a2]
    };
    let y = [s.x1, s.x2, s.v1, s.v2];
    let t = s.time;
    let k1 = deriv(y[0], y[1], y[2], y[3], t);
    let at = |k: &[f64; 4], c: f64| {
        [
            y[0] + c * k[0],
            y[1] + c * k[1],
            y[2] + c * k[2],
            y[3] + c * k[3],
        ]
    };
    let y2 = at(&k1, 0.5 * h);
    let k2 = deriv(y2[0], y2[1], y2[2], y2[3], t + 0.5 * h);
    let y3 = at(&k2, 0.5 * h);
    let k3 = deriv(y3[0], y3[1], y3[2], y3[3], t + 0.5 * h);
    let y4 = at(&k3, h);
    let k4 = deriv(y4[0], y4[1], y4[2], y4[3], t + h);
    let next: [f64; 4] =
        std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    s.x1 = next[0];
    s.x2 = next[1];
    s.v1 = next[2];
    s.v2 = next[3];
    s.time = t + h;
}

/// Integrates both ions from `init` to the end of `cv`.
pub fn integrate(
    cv: &ContinuousVoltage,
    basis: &SegmentBasis,
    init: &IonState,
    cfg: &SimConfig,
    c: &PhysicalConstants,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(init.x1 < init.x2) {
        return Err(Error::Invalid(format!(
            "ions must start ordered, got x1 = {:e}, x2 = {:e}",
            init.x1, init.x2
        )));
    }
    let span = cv.duration() - init.time;
    let steps = (span / cfg.timestep).ceil().max(0.0) as usize;
    let h = if steps > 0 { span / steps as f64 } else { 0.0 };
    let field = ForceField {
        cv,
        basis,
        qm: c.charge_to_mass(),
        kappa: c.coulomb_factor(),
    };
    let omega_limit_sq = cfg.max_resolved_omega().powi(2);
    let escape = cfg.escape_radius();

    let mut s = *init;
    let mut states = Vec::with_capacity(steps / cfg.record_every + 2);
    states.push(s);
    for k in 1..=steps {
        match cfg.integrator {
            Integrator::Leapfrog => leapfrog(&field, &mut s, h),
            Integrator::Symplectic => {
                leapfrog(&field, &mut s, YOSHIDA_W1 * h);
                leapfrog(&field, &mut s, YOSHIDA_W0 * h);
                leapfrog(&field, &mut s, YOSHIDA_W1 * h);
            }
            Integrator::Rk4 => rk4(&field, &mut s, h),
        }
        if k == steps {
            s.time = cv.duration();
        }
        if ![s.x1, s.x2, s.v1, s.v2].iter().all(|v| v.is_finite()) {
            return Err(Error::Timestep(format!(
                "state became non-finite at t = {:e} s",
                s.time
            )));
        }
        for x in [s.x1, s.x2] {
            if x.abs() > escape {
                return Err(Error::Escape {
                    position: x,
                    time: s.time,
                });
            }
        }
        if !(s.x1 < s.x2) {
            return Err(Error::Timestep(format!(
                "ions crossed at t = {:e} s",
                s.time
            )));
        }
        if k % cfg.record_every == 0 || k == steps {
            let w2 = field.omega_sq_bound(&s);
            if w2 > omega_limit_sq {
                return Err(Error::Timestep(format!(
                    "timestep {:e} s resolves at most {:e} rad/s, motion reaches {:e} rad/s",
                    cfg.timestep,
                    cfg.max_resolved_omega(),
                    w2.sqrt()
                )));
            }
            states.push(s);
        }
    }
    Ok(Trajectory {
        states,
        steps,
        timestep: h,
    })
}

/// Final well membership of the two ions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Separated,
    BothInLeftWell,
    BothInRightWell,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Classification::Separated => "separated",
            Classification::BothInLeftWell => "both-left",
            Classification::BothInRightWell => "both-right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "separated" => Some(Classification::Separated),
            "both-left" => Some(Classification::BothInLeftWell),
            "both-right" => Some(Classification::BothInRightWell),
            _ => None,
        }
    }

    /// Left and right swapped.
    pub fn mirrored(self) -> Self {
        match self {
            Classification::Separated => Classification::Separated,
            Classification::BothInLeftWell => Classification::BothInRightWell,
            Classification::BothInRightWell => Classification::BothInLeftWell,
        }
    }
}

/// Result of one separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationOutcome {
    pub classification: Classification,
    /// Oscillation energy of each ion in phonons of the reference frequency.
    pub n_coh: [f64; 2],
    /// Equilibrium position of each ion in the final potential, m.
    pub well_position: [f64; 2],
    /// Local oscillation frequency of each ion, rad/s.
    pub omega_local: [f64; 2],
}

impl SeparationOutcome {
    pub fn mean_n_coh(&self) -> f64 {
        0.5 * (self.n_coh[0] + self.n_coh[1])
    }
}

fn side_of(positions: impl Iterator<Item = f64>, barrier: f64, ion: usize) -> Result<bool> {
    let (mut left, mut right) = (false, false);
    for x in positions {
        if x < barrier {
            left = true;
        } else {
            right = true;
        }
    }
    match (left, right) {
        (true, false) => Ok(false),
        (false, true) => Ok(true),
        _ => Err(Error::Classification(format!(
            "ion {ion} moves across the barrier at {barrier:e} m"
        ))),
    }
}

/// Tail duration needed for the energy average in `p`.
pub fn required_tail(p: &AxialPotential, cfg: &SimConfig, c: &PhysicalConstants) -> Result<f64> {
    let roots = p.stationary_points();
    if roots.len() != 3 {
        return Err(Error::Classification(
            "final potential is not a double well".into(),
        ));
    }
    let slowest = [roots[0], roots[2]]
        .iter()
        .map(|&x| (c.charge_to_mass() * p.evaluate(x).curvature).sqrt())
        .fold(f64::INFINITY, f64::min);
    if !(slowest > 0.0) {
        return Err(Error::NonConfining { curvature: slowest });
    }
    Ok(cfg.tail_periods * 2.0 * PI / slowest)
}

/// Residual oscillation energy and well membership from the end of a
/// trajectory in the static final potential.
pub fn extract_excitation(
    tail: &[IonState],
    p: &AxialPotential,
    cfg: &SimConfig,
    c: &PhysicalConstants,
) -> Result<SeparationOutcome> {
    if tail.is_empty() {
        return Err(Error::Invalid("empty trajectory tail".into()));
    }
    let roots = p.stationary_points();
    if roots.len() != 3 {
        return Err(Error::Classification(
            "final potential is not a double well".into(),
        ));
    }
    let barrier = roots[1];
    let right1 = side_of(tail.iter().map(|s| s.x1), barrier, 1)?;
    let right2 = side_of(tail.iter().map(|s| s.x2), barrier, 2)?;
    let classification = match (right1, right2) {
        (false, true) => Classification::Separated,
        (false, false) => Classification::BothInLeftWell,
        (true, true) => Classification::BothInRightWell,
        (true, false) => {
            return Err(Error::Classification("ions in swapped order".into()));
        }
    };

    let n = tail.len() as f64;
    let mean1 = tail.iter().map(|s| s.x1).sum::<f64>() / n;
    let mean2 = tail.iter().map(|s| s.x2).sum::<f64>() / n;
    let solver = EquilibriumSolver {
        validity_radius: cfg.escape_radius(),
        ..EquilibriumSolver::default()
    };
    let eq = solver.solve_from(p, c, mean1, mean2)?;
    if (eq.x1 >= barrier) != right1 || (eq.x2 >= barrier) != right2 {
        return Err(Error::Classification(
            "equilibrium reached from the tail lies in other wells".into(),
        ));
    }
    let kappa = c.coulomb_factor();
    let qm = c.charge_to_mass();
    let d = eq.x2 - eq.x1;
    let coupling = 2.0 * kappa / (d * d * d);
    let w2 = [
        qm * (p.evaluate(eq.x1).curvature + coupling),
        qm * (p.evaluate(eq.x2).curvature + coupling),
    ];
    if w2.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::NonConfining {
            curvature: w2[0].min(w2[1]) / qm,
        });
    }
    let m = c.ion_mass;
    let unit = c.reduced_planck * cfg.omega_ref;
    let energy = |x: f64, v: f64, x0: f64, w2: f64| 0.5 * m * (v * v + w2 * (x - x0) * (x - x0));
    let e1 = tail
        .iter()
        .map(|s| energy(s.x1, s.v1, eq.x1, w2[0]))
        .sum::<f64>()
        / n;
    let e2 = tail
        .iter()
        .map(|s| energy(s.x2, s.v2, eq.x2, w2[1]))
        .sum::<f64>()
        / n;
    Ok(SeparationOutcome {
        classification,
        n_coh: [e1 / unit, e2 / unit],
        well_position: [eq.x1, eq.x2],
        omega_local: [w2[0].sqrt(), w2[1].sqrt()],
    })
}

/// Initial state drawn from a thermal distribution of both normal modes.
pub fn sample_thermal_state<R: Rng + ?Sized>(
    p: &AxialPotential,
    eq: &EquilibriumConfig,
    n_bar: f64,
    c: &PhysicalConstants,
    rng: &mut R,
) -> Result<IonState> {
    if !(n_bar >= 0.0) {
        return Err(Error::Range(format!(
            "mean occupation {n_bar} must be non-negative"
        )));
    }
    let kappa = c.coulomb_factor();
    let d = eq.x2 - eq.x1;
    let k = 2.0 * kappa / (d * d * d);
    let h11 = p.evaluate(eq.x1).curvature + k;
    let h22 = p.evaluate(eq.x2).curvature + k;
    let mean = 0.5 * (h11 + h22);
    let split = (0.25 * (h11 - h22) * (h11 - h22) + k * k).sqrt();
    let qm = c.charge_to_mass();
    let modes = [mean - split, mean + split].map(|lambda| {
        let (a, b) = (k, h11 - lambda);
        let norm = (a * a + b * b).sqrt();
        let vector = if norm > 0.0 {
            [a / norm, b / norm]
        } else {
            [1.0, 0.0]
        };
        (vector, (qm * lambda).sqrt())
    });
    if !(modes[0].1 > 0.0) {
        return Err(Error::Unstable {
            eigenvalue: (mean - split) * c.elementary_charge,
        });
    }
    let mut s = IonState::at_rest(eq);
    let m = c.ion_mass;
    let hbar = c.reduced_planck;
    for (vec, omega) in modes {
        let occupation = n_bar + 0.5;
        let sx = (hbar * occupation / (m * omega)).sqrt();
        let sv = (hbar * omega * occupation / m).sqrt();
        let q = Normal::new(0.0, sx)
            .map_err(|e| Error::Invalid(e.to_string()))?
            .sample(rng);
        let v = Normal::new(0.0, sv)
            .map_err(|e| Error::Invalid(e.to_string()))?
            .sample(rng);
        s.x1 += vec[0] * q;
        s.x2 += vec[1] * q;
        s.v1 += vec[0] * v;
        s.v2 += vec[1] * v;
    }
    Ok(s)
}

/// Frequency of the designed crystal along a waveform, sampled per step.
///
/// Uses the designed distance when the waveform carries its trajectory and
/// the static two-ion equilibrium otherwise.
pub fn frequency_trace(
    w: &Waveform,
    basis: &SegmentBasis,
    c: &PhysicalConstants,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let times: Vec<f64> = (0..w.len()).map(|i| i as f64 * w.sample_period).collect();
    let potentials = w.potentials(basis);
    let omegas = match (&w.annotations.trajectory, w.annotations.reversed) {
        (Some(spec), false) => {
            let last = times.last().copied().unwrap_or(0.0);
            times
                .iter()
                .zip(&potentials)
                .map(|(&t, p)| {
                    let t = t * spec.duration / last.max(f64::MIN_POSITIVE);
                    local_frequency(p, distance_at(spec, t)?, c)
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => {
            let solver = EquilibriumSolver::default();
            let mut seed: Option<EquilibriumConfig> = None;
            let mut out = Vec::with_capacity(potentials.len());
            for p in &potentials {
                let eq = match seed {
                    Some(prev) => solver.solve_from(p, c, prev.x1, prev.x2)?,
                    None => solver.solve(p, c)?,
                };
                out.push(normal_modes(p, &eq, c)?.omega_com);
                seed = Some(eq);
            }
            out
        }
    };
    Ok((times, omegas))
}

/// Coherent and thermal excitation of each ion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationBudget {
    pub n_coh: [f64; 2],
    pub n_thermal: f64,
    pub n_total: [f64; 2],
}

/// Adds the heating accumulated along `omegas` (rad/s at `times`).
pub fn total_excitation(
    outcome: &SeparationOutcome,
    heat: &HeatingModel,
    times: &[f64],
    omegas: &[f64],
) -> Result<ExcitationBudget> {
    let n_thermal = thermal_excitation(heat, times, omegas)?;
    Ok(ExcitationBudget {
        n_coh: outcome.n_coh,
        n_thermal,
        n_total: outcome.n_coh.map(|n| n + n_thermal),
    })
}

/// Phonons gained from anomalous heating along a frequency trace.
pub fn thermal_excitation(heat: &HeatingModel, times: &[f64], omegas: &[f64]) -> Result<f64> {
    if times.len() != omegas.len() {
        return Err(Error::Invalid(
            "frequency trace columns differ in length".into(),
        ));
    }
    if let Some(bad) = omegas.iter().find(|&&w| !(w > 0.0)) {
        return Err(Error::Domain(format!(
            "frequency {bad:e} rad/s in heating trace"
        )));
    }
    if heat.prefactor == 0.0 {
        return Ok(0.0);
    }
    let rates: Vec<f64> = omegas.iter().map(|&w| heat.rate(w)).collect();
    Ok(trapezoid(times, &rates))
}

/// Everything needed to turn a design into a simulated separation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignInputs {
    pub basis: SegmentBasis,
    pub mesh: RampMesh,
    pub trajectory: TrajectorySpec,
    pub ramp: RampConfig,
    pub awg: Option<AwgSpec>,
    pub filter: Option<FilterSpec>,
    /// Filter grid points per generator sample.
    pub oversample: usize,
    /// Static hold after the ramp before the energy is read out, s.
    pub hold: f64,
    pub heating: HeatingModel,
    pub constants: PhysicalConstants,
}

impl DesignInputs {
    /// Reference trap with the default ramp and hardware.
    pub fn reference() -> Result<Self> {
        let basis = SegmentBasis::reference();
        let constants = PhysicalConstants::calcium40();
        let mesh = RampMesh::reference(&basis);
        let trajectory = TrajectorySpec::for_mesh(&mesh, &basis, &constants)?;
        Ok(Self {
            basis,
            mesh,
            trajectory,
            ramp: RampConfig::default(),
            awg: Some(AwgSpec::default()),
            filter: Some(FilterSpec::default()),
            oversample: 40,
            hold: 20e-6,
            heating: HeatingModel::reference(),
            constants,
        })
    }

    pub fn waveform(&self) -> Result<Waveform> {
        let w = build_waveform(
            &self.trajectory,
            &self.mesh,
            &self.ramp,
            &self.basis,
            &self.constants,
        )?;
        match &self.awg {
            Some(awg) => quantize(&w, awg),
            None => Ok(w),
        }
    }

    /// Voltages seen by the ions, including the final hold.
    pub fn electrode_voltages(&self, w: &Waveform) -> Result<ContinuousVoltage> {
        match &self.filter {
            Some(f) => apply_filter_with_hold(w, f, self.oversample, self.hold),
            None => Ok(ContinuousVoltage::linear(w).extended(self.hold)),
        }
    }
}

/// One simulated separation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationRun {
    pub waveform: Waveform,
    pub trajectory: Trajectory,
    pub outcome: SeparationOutcome,
    pub budget: ExcitationBudget,
}

/// Builds, filters and integrates a design from the initial equilibrium.
pub fn simulate_design(inputs: &DesignInputs, cfg: &SimConfig) -> Result<SeparationRun> {
    let c = &inputs.constants;
    let waveform = inputs.waveform()?;
    let cv = inputs.electrode_voltages(&waveform)?;
    let start = coefficients_from_voltages(&inputs.basis, &cv.eval(0.0));
    let eq = EquilibriumSolver {
        validity_radius: cfg.validity_radius,
        ..EquilibriumSolver::default()
    }
    .solve(&start, c)?;
    let trajectory = integrate(&cv, &inputs.basis, &IonState::at_rest(&eq), cfg, c)?;
    let end = coefficients_from_voltages(&inputs.basis, &cv.eval(cv.duration()));
    let tail = required_tail(&end, cfg, c)?;
    if tail > inputs.hold {
        return Err(Error::Invalid(format!(
            "hold of {:e} s is shorter than the {:e} s averaging tail",
            inputs.hold, tail
        )));
    }
    let outcome = extract_excitation(trajectory.tail(tail), &end, cfg, c)?;
    let (times, omegas) = frequency_trace(&waveform, &inputs.basis, c)?;
    let budget = total_excitation(&outcome, &inputs.heating, &times, &omegas)?;
    Ok(SeparationRun {
        waveform,
        trajectory,
        outcome,
        budget,
    })
}

/// Scanned design parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanAxis {
    /// Ramp duration, s.
    Duration,
    /// Tilt compensation voltage, V.
    TiltVoltage,
    /// Center voltage offset at the critical point, V.
    CpOffset,
}

impl ScanAxis {
    pub fn label(self) -> &'static str {
        match self {
            ScanAxis::Duration => "T",
            ScanAxis::TiltVoltage => "dU_O",
            ScanAxis::CpOffset => "dU_C_cp",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            ScanAxis::Duration => "s",
            _ => "V",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "T" | "duration" => Some(ScanAxis::Duration),
            "dU_O" | "tilt" => Some(ScanAxis::TiltVoltage),
            "dU_C_cp" | "cp-offset" => Some(ScanAxis::CpOffset),
            _ => None,
        }
    }

    /// `inputs` with this parameter set to `value`.
    pub fn apply(self, inputs: &DesignInputs, value: f64) -> DesignInputs {
        let mut out = inputs.clone();
        match self {
            ScanAxis::Duration => out.trajectory.duration = value,
            ScanAxis::TiltVoltage => out.ramp.du_o = value,
            ScanAxis::CpOffset => out.ramp.du_c_cp = value,
        }
        out
    }
}

/// One grid point of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub value: f64,
    pub outcome: Option<SeparationOutcome>,
    pub n_thermal: Option<f64>,
    pub error: Option<String>,
}

impl ScanPoint {
    pub fn classification(&self) -> Option<Classification> {
        self.outcome.map(|o| o.classification)
    }

    pub fn is_separated(&self) -> bool {
        self.classification() == Some(Classification::Separated)
    }
}

/// `n = amplitude * exp(-T / tau)` over a sub-range of a duration scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub amplitude: f64,
    pub tau: f64,
    pub r_squared: f64,
    pub range: (f64, f64),
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub axis: ScanAxis,
    pub grid: Vec<f64>,
    pub points: Vec<ScanPoint>,
    pub fit: Option<ExponentialFit>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateScan("grid holds non-finite values".into()));
    }
    let up = grid.windows(2).all(|p| p[1] > p[0]);
    let down = grid.windows(2).all(|p| p[1] < p[0]);
    if !(up || down) {
        return Err(Error::DegenerateScan(
            "grid is not strictly monotone".into(),
        ));
    }
    Ok(())
}

/// Simulates the design at every grid value. Failed points carry their
/// error message. For duration scans `fit_range` selects the points used
/// for the exponential fit.
pub fn scan(
    axis: ScanAxis,
    grid: &[f64],
    inputs: &DesignInputs,
    cfg: &SimConfig,
    fit_range: Option<(f64, f64)>,
) -> Result<ScanResult> {
    check_grid(grid)?;
    cfg.validate()?;
    let points: Vec<ScanPoint> = grid
        .par_iter()
        .map(
            |&value| match simulate_design(&axis.apply(inputs, value), cfg) {
                Ok(run) => ScanPoint {
                    value,
                    outcome: Some(run.outcome),
                    n_thermal: Some(run.budget.n_thermal),
                    error: None,
                },
                Err(e) => ScanPoint {
                    value,
                    outcome: None,
                    n_thermal: None,
                    error: Some(e.to_string()),
                },
            },
        )
        .collect();
    let mut result = ScanResult {
        axis,
        grid: grid.to_vec(),
        points,
        fit: None,
    };
    if let (ScanAxis::Duration, Some(range)) = (axis, fit_range) {
        result.fit = fit_exponential(&result, range).ok();
    }
    Ok(result)
}

/// Success window of the tilt compensation voltage for a design.
///
/// Grid points whose simulation fails count as unsuccessful.
pub fn separation_window(
    inputs: &DesignInputs,
    cfg: &SimConfig,
    grid: &[f64],
    tolerance: f64,
) -> Result<TiltWindow> {
    let tilt_per_volt = inputs.basis.coefficients.gamma_o;
    find_tilt_window(
        |du_o| {
            Ok(
                simulate_design(&ScanAxis::TiltVoltage.apply(inputs, du_o), cfg)
                    .map(|run| run.outcome.classification == Classification::Separated)
                    .unwrap_or(false),
            )
        },
        grid,
        tolerance,
        tilt_per_volt,
    )
}

/// Log-linear fit of the mean coherent excitation against duration.
pub fn fit_exponential(result: &ScanResult, range: (f64, f64)) -> Result<ExponentialFit> {
    if result.axis != ScanAxis::Duration {
        return Err(Error::Invalid(
            "exponential fits need a duration scan".into(),
        ));
    }
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let (xs, ys): (Vec<f64>, Vec<f64>) = result
        .points
        .iter()
        .filter(|p| (lo..=hi).contains(&p.value))
        .filter_map(|p| p.outcome.map(|o| (p.value, o.mean_n_coh())))
        .filter(|&(_, n)| n > 0.0)
        .map(|(t, n)| (t, n.ln()))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::Underdetermined {
            points: xs.len(),
            parameters: 2,
        });
    }
    let (intercept, slope, r_squared) = fit_line(&xs, &ys);
    if !(slope < 0.0) {
        return Err(Error::Domain(format!(
            "excitation does not decay with duration (slope {slope:e} per s)"
        )));
    }
    Ok(ExponentialFit {
        amplitude: intercept.exp(),
        tau: -1.0 / slope,
        r_squared,
        range: (lo, hi),
        points: xs.len(),
    })
}
