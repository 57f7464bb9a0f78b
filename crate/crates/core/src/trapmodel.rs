//! Axial potential model of the separation region.
//!
//! Near the center segment the axial potential is a quartic polynomial
//! `V(x) = beta x^4 + alpha x^2 + gamma x` whose coefficients are linear in
//! the applied segment voltages. This module converts voltages to
//! coefficients and solves for one- and two-ion equilibria and mode
//! frequencies. Everything is strict SI.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numeric::brent;

pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_8128e-12;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const REDUCED_PLANCK: f64 = 1.054_571_817e-34;

/// Half-width of the region where the quartic expansion is trusted: one
/// segment width.
pub const DEFAULT_VALIDITY_RADIUS: f64 = 200e-6;

/// Largest acceptable residual force on either ion at an equilibrium.
pub const DEFAULT_FORCE_TOLERANCE: f64 = 1e-25;

/// Charge, mass and the derived Coulomb factor of the trapped species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub elementary_charge: f64,
    pub ion_mass: f64,
    pub reduced_planck: f64,
    pub vacuum_permittivity: f64,
}

impl PhysicalConstants {
    pub fn new(charge: f64, mass: f64) -> Result<Self> {
        if !(charge > 0.0 && mass > 0.0 && charge.is_finite() && mass.is_finite()) {
            return Err(Error::Invalid(format!(
                "charge and mass must be positive, got q = {charge:e}, m = {mass:e}"
            )));
        }
        Ok(Self {
            elementary_charge: charge,
            ion_mass: mass,
            reduced_planck: REDUCED_PLANCK,
            vacuum_permittivity: VACUUM_PERMITTIVITY,
        })
    }

    /// Singly charged ion of the given mass in atomic mass units.
    pub fn singly_charged(mass_u: f64) -> Result<Self> {
        Self::new(ELEMENTARY_CHARGE, mass_u * ATOMIC_MASS_UNIT)
    }

    /// 40Ca+.
    pub fn calcium40() -> Self {
        Self::singly_charged(39.9626).expect("positive constants")
    }

    /// 9Be+.
    pub fn beryllium9() -> Self {
        Self::singly_charged(9.012_18).expect("positive constants")
    }

    /// `kappa = q / (4 pi eps0)` in V m.
    pub fn coulomb_factor(&self) -> f64 {
        self.elementary_charge / (4.0 * PI * self.vacuum_permittivity)
    }

    pub fn charge_to_mass(&self) -> f64 {
        self.elementary_charge / self.ion_mass
    }

    pub fn mass_u(&self) -> f64 {
        self.ion_mass / ATOMIC_MASS_UNIT
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::calcium40()
    }
}

/// The three electrode groups shaping the axial potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    #[serde(rename = "C")]
    Center,
    #[serde(rename = "S")]
    Split,
    #[serde(rename = "O")]
    Outer,
}

impl Segment {
    pub fn label(self) -> &'static str {
        match self {
            Segment::Center => "C",
            Segment::Split => "S",
            Segment::Outer => "O",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "C" | "c" => Some(Segment::Center),
            "S" | "s" => Some(Segment::Split),
            "O" | "o" => Some(Segment::Outer),
            _ => None,
        }
    }
}

/// Per-segment expansion coefficients plus stray offsets.
///
/// alpha entries are in m^-2 per applied volt, beta in m^-4 per volt, gamma
/// in m^-1 per volt of differential voltage. The primed offsets carry their
/// potential units directly (V m^-2, V m^-4, V m^-1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisCoefficients {
    pub alpha_c: f64,
    pub alpha_s: f64,
    pub alpha_o: f64,
    pub beta_c: f64,
    pub beta_s: f64,
    pub beta_o: f64,
    pub gamma_s: f64,
    pub gamma_o: f64,
    pub alpha_prime: f64,
    pub beta_prime: f64,
    pub gamma_prime: f64,
}

impl BasisCoefficients {
    pub const ZERO: Self = Self {
        alpha_c: 0.0,
        alpha_s: 0.0,
        alpha_o: 0.0,
        beta_c: 0.0,
        beta_s: 0.0,
        beta_o: 0.0,
        gamma_s: 0.0,
        gamma_o: 0.0,
        alpha_prime: 0.0,
        beta_prime: 0.0,
        gamma_prime: 0.0,
    };

    fn entries(&self) -> [f64; 11] {
        [
            self.alpha_c,
            self.alpha_s,
            self.alpha_o,
            self.beta_c,
            self.beta_s,
            self.beta_o,
            self.gamma_s,
            self.gamma_o,
            self.alpha_prime,
            self.beta_prime,
            self.gamma_prime,
        ]
    }
}

/// Calibrated trap model: coefficients with optional 1-sigma uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentBasis {
    #[serde(flatten)]
    pub coefficients: BasisCoefficients,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<BasisCoefficients>,
}

impl std::ops::Deref for SegmentBasis {
    type Target = BasisCoefficients;
    fn deref(&self) -> &BasisCoefficients {
        &self.coefficients
    }
}

impl std::ops::DerefMut for SegmentBasis {
    fn deref_mut(&mut self) -> &mut BasisCoefficients {
        &mut self.coefficients
    }
}

impl SegmentBasis {
    pub fn new(coefficients: BasisCoefficients) -> Result<Self> {
        let basis = Self {
            coefficients,
            sigma: None,
        };
        basis.validate()?;
        Ok(basis)
    }

    /// Spectroscopically calibrated values of the reference trap.
    ///
    /// `beta_o` cannot be measured with the distance method and is left at
    /// zero; `gamma_o = 333 m^-1` follows from the tilt resolution (0.3 mV of
    /// differential voltage moving the field by 0.1 V/m). `gamma_s` is not
    /// calibrated.
    pub fn reference() -> Self {
        Self {
            coefficients: BasisCoefficients {
                alpha_c: -2.612e6,
                alpha_s: -1.279e6,
                alpha_o: 0.993e6,
                beta_c: 3.1e13,
                beta_s: -6.2e12,
                beta_o: 0.0,
                gamma_s: 0.0,
                gamma_o: 333.0,
                alpha_prime: -1.956e6,
                beta_prime: 1.5e14,
                gamma_prime: 0.0,
            },
            sigma: Some(BasisCoefficients {
                alpha_c: 0.007e6,
                alpha_s: 0.012e6,
                alpha_o: 0.005e6,
                beta_c: 0.1e13,
                beta_s: 0.3e12,
                beta_o: 0.0,
                gamma_s: 0.0,
                gamma_o: 0.0,
                alpha_prime: 0.035e6,
                beta_prime: 0.1e14,
                gamma_prime: 0.0,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.entries().iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("basis coefficients must be finite".into()));
        }
        if let Some(sigma) = &self.sigma {
            if sigma
                .entries()
                .iter()
                .any(|v| !(v.is_finite() && *v >= 0.0))
            {
                return Err(Error::Invalid(
                    "basis uncertainties must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    /// Taylor coefficients produced by a voltage configuration.
    pub fn potential(&self, v: &VoltageSet) -> AxialPotential {
        coefficients_from_voltages(self, v)
    }

    pub fn alpha_of(&self, segment: Segment) -> f64 {
        match segment {
            Segment::Center => self.alpha_c,
            Segment::Split => self.alpha_s,
            Segment::Outer => self.alpha_o,
        }
    }
}

impl Default for SegmentBasis {
    fn default() -> Self {
        Self::reference()
    }
}

/// Electrode voltages: common-mode per pair and differential within the S
/// and O pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VoltageSet {
    pub u_c: f64,
    pub u_s: f64,
    pub u_o: f64,
    #[serde(default)]
    pub du_s: f64,
    #[serde(default)]
    pub du_o: f64,
}

impl VoltageSet {
    pub fn new(u_c: f64, u_s: f64, u_o: f64) -> Self {
        Self {
            u_c,
            u_s,
            u_o,
            du_s: 0.0,
            du_o: 0.0,
        }
    }

    pub fn with_tilt(mut self, du_o: f64) -> Self {
        self.du_o = du_o;
        self
    }

    pub fn get(&self, segment: Segment) -> f64 {
        match segment {
            Segment::Center => self.u_c,
            Segment::Split => self.u_s,
            Segment::Outer => self.u_o,
        }
    }

    pub fn set(&mut self, segment: Segment, value: f64) {
        match segment {
            Segment::Center => self.u_c = value,
            Segment::Split => self.u_s = value,
            Segment::Outer => self.u_o = value,
        }
    }

    /// Largest absolute voltage on any channel.
    pub fn max_abs(&self) -> f64 {
        [self.u_c, self.u_s, self.u_o, self.du_s, self.du_o]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn check_range(&self, limit: f64) -> Result<()> {
        if self.max_abs() > limit {
            return Err(Error::Saturation {
                limit,
                count: 1,
                indices: vec![0],
            });
        }
        Ok(())
    }
}

/// Instantaneous Taylor coefficients of the axial potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxialPotential {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Potential with its first two derivatives at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialValue {
    pub value: f64,
    pub slope: f64,
    pub curvature: f64,
}

impl AxialPotential {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    /// Potential and derivatives without any range check.
    #[inline]
    pub fn evaluate(&self, x: f64) -> PotentialValue {
        let x2 = x * x;
        PotentialValue {
            value: (self.beta * x2 + self.alpha) * x2 + self.gamma * x,
            slope: (4.0 * self.beta * x2 + 2.0 * self.alpha) * x + self.gamma,
            curvature: 12.0 * self.beta * x2 + 2.0 * self.alpha,
        }
    }

    #[inline]
    pub fn slope(&self, x: f64) -> f64 {
        (4.0 * self.beta * x * x + 2.0 * self.alpha) * x + self.gamma
    }

    /// Potential and derivatives, rejecting positions outside `radius`.
    pub fn evaluate_within(&self, x: f64, radius: f64) -> Result<PotentialValue> {
        if !(x.abs() < radius) {
            return Err(Error::OutsideValidity {
                position: x,
                radius,
            });
        }
        Ok(self.evaluate(x))
    }

    /// Total energy of two ions (external potential plus Coulomb), in J.
    pub fn two_ion_energy(&self, x1: f64, x2: f64, c: &PhysicalConstants) -> f64 {
        let q = c.elementary_charge;
        q * (self.evaluate(x1).value
            + self.evaluate(x2).value
            + c.coulomb_factor() / (x2 - x1).abs())
    }

    /// True when `V'(x) = 0` has three real roots (two wells and a barrier).
    pub fn is_double_well(&self) -> bool {
        self.stationary_points().len() == 3
    }

    /// Real roots of `4 beta x^3 + 2 alpha x + gamma = 0`, ascending.
    pub fn stationary_points(&self) -> Vec<f64> {
        let (a, b, g) = (4.0 * self.beta, 2.0 * self.alpha, self.gamma);
        if a == 0.0 {
            return if b != 0.0 { vec![-g / b] } else { Vec::new() };
        }
        // Depressed cubic x^3 + p x + r = 0.
        let p = b / a;
        let r = g / a;
        let disc = -(4.0 * p * p * p + 27.0 * r * r);
        if disc > 0.0 {
            let m = 2.0 * (-p / 3.0).sqrt();
            let theta = ((3.0 * r) / (p * m)).clamp(-1.0, 1.0).acos() / 3.0;
            let mut roots: Vec<f64> = (0..3)
                .map(|k| m * (theta - 2.0 * PI * k as f64 / 3.0).cos())
                .collect();
            roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
            roots
        } else {
            let s = (r * r / 4.0 + p * p * p / 27.0).max(0.0).sqrt();
            vec![(-r / 2.0 + s).cbrt() + (-r / 2.0 - s).cbrt()]
        }
    }
}

/// Linear map from electrode voltages to Taylor coefficients.
pub fn coefficients_from_voltages(basis: &SegmentBasis, v: &VoltageSet) -> AxialPotential {
    let b = &basis.coefficients;
    AxialPotential {
        alpha: v.u_c * b.alpha_c + v.u_s * b.alpha_s + v.u_o * b.alpha_o + b.alpha_prime,
        beta: v.u_c * b.beta_c + v.u_s * b.beta_s + v.u_o * b.beta_o + b.beta_prime,
        gamma: v.du_s * b.gamma_s + v.du_o * b.gamma_o + b.gamma_prime,
    }
}

/// `V(x)` and derivatives with the default validity radius.
pub fn evaluate_potential(p: &AxialPotential, x: f64) -> Result<PotentialValue> {
    p.evaluate_within(x, DEFAULT_VALIDITY_RADIUS)
}

/// Harmonic trap frequency `sqrt(2 q alpha / m)`.
pub fn single_well_frequency(alpha: f64, c: &PhysicalConstants) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::NonConfining { curvature: alpha });
    }
    Ok((2.0 * c.charge_to_mass() * alpha).sqrt())
}

/// Two-ion distance in a harmonic well of angular frequency `omega`.
pub fn harmonic_distance(omega: f64, c: &PhysicalConstants) -> f64 {
    let q = c.elementary_charge;
    (q * q / (2.0 * PI * c.vacuum_permittivity * c.ion_mass * omega * omega)).cbrt()
}

/// Ion distance in a purely quartic well, `(2 kappa / beta)^(1/5)`.
pub fn critical_point_distance(beta: f64, c: &PhysicalConstants) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::NonConfining { curvature: beta });
    }
    Ok((2.0 * c.coulomb_factor() / beta).powf(0.2))
}

/// Local COM frequency `sqrt((q/m)(3 beta d^2 + 2 alpha))` for ions at `+-d/2`.
pub fn local_frequency(p: &AxialPotential, d: f64, c: &PhysicalConstants) -> Result<f64> {
    let curvature = 3.0 * p.beta * d * d + 2.0 * p.alpha;
    if !(curvature > 0.0) {
        return Err(Error::NonConfining { curvature });
    }
    Ok((c.charge_to_mass() * curvature).sqrt())
}

/// Positive root of `(beta/2) d^5 + alpha d^3 - kappa = 0`.
///
/// For `beta > 0` the root is unique. For `beta < 0` (possible at the start
/// of a ramp) the root nearest the harmonic solution is returned, if the
/// local maximum of the quintic is above zero.
pub fn symmetric_distance(alpha: f64, beta: f64, kappa: f64) -> Result<f64> {
    let f = |d: f64| (0.5 * beta * d * d + alpha) * d * d * d - kappa;
    let df = |d: f64| (2.5 * beta * d * d + 3.0 * alpha) * d * d;

    let (lo, hi) = if beta > 0.0 {
        let mut hi = (2.0 * kappa / beta).powf(0.2);
        if alpha > 0.0 {
            hi = hi.max((kappa / alpha).cbrt());
        } else if alpha < 0.0 {
            hi = hi.max((-2.0 * alpha / beta).sqrt());
        }
        hi *= 2.0;
        let mut guard = 0;
        while f(hi) <= 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::NoEquilibrium("quintic root not bracketed".into()));
            }
        }
        (0.0, hi)
    } else if beta == 0.0 {
        if alpha > 0.0 {
            return Ok((kappa / alpha).cbrt());
        }
        return Err(Error::NoEquilibrium(format!(
            "alpha = {alpha:e} with beta = 0 has no bound two-ion state"
        )));
    } else {
        if !(alpha > 0.0) {
            return Err(Error::NoEquilibrium(format!(
                "alpha = {alpha:e}, beta = {beta:e}: both terms deconfining"
            )));
        }
        let seed = (kappa / alpha).cbrt();
        let d_peak = (-6.0 * alpha / (5.0 * beta)).sqrt();
        if d_peak <= seed || f(d_peak) < 0.0 {
            return Err(Error::NoEquilibrium(format!(
                "negative quartic term beta = {beta:e} overwhelms alpha = {alpha:e}"
            )));
        }
        (seed, d_peak)
    };

    let scale = hi.max(1e-300);
    let mut d = brent(f, lo, hi, scale * 1e-17, 300)?;
    // Newton polish to reach the rounding floor of the residual.
    for _ in 0..3 {
        let slope = df(d);
        if slope == 0.0 {
            break;
        }
        let next = d - f(d) / slope;
        if next > 0.0 && f(next).abs() < f(d).abs() {
            d = next;
        } else {
            break;
        }
    }
    Ok(d)
}

/// Positions of two ions in static equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumConfig {
    pub x1: f64,
    pub x2: f64,
    /// Largest absolute net force on either ion, N.
    pub residual_force: f64,
}

impl EquilibriumConfig {
    pub fn distance(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.x1 + self.x2)
    }
}

/// Equilibrium solver settings.
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumSolver {
    pub validity_radius: f64,
    pub force_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for EquilibriumSolver {
    fn default() -> Self {
        Self {
            validity_radius: DEFAULT_VALIDITY_RADIUS,
            force_tolerance: DEFAULT_FORCE_TOLERANCE,
            max_iterations: 200,
        }
    }
}

/// Net force on each ion divided by the charge, V/m.
fn scaled_forces(p: &AxialPotential, x1: f64, x2: f64, kappa: f64) -> [f64; 2] {
    let d = x2 - x1;
    let coulomb = kappa / (d * d);
    [-p.slope(x1) - coulomb, -p.slope(x2) + coulomb]
}

/// Hessian of the energy divided by the charge, V/m^2.
fn scaled_hessian(p: &AxialPotential, x1: f64, x2: f64, kappa: f64) -> [[f64; 2]; 2] {
    let d = (x2 - x1).abs();
    let k = 2.0 * kappa / (d * d * d);
    [
        [p.evaluate(x1).curvature + k, -k],
        [-k, p.evaluate(x2).curvature + k],
    ]
}

fn scaled_energy(p: &AxialPotential, x1: f64, x2: f64, kappa: f64) -> f64 {
    p.evaluate(x1).value + p.evaluate(x2).value + kappa / (x2 - x1)
}

impl EquilibriumSolver {
    /// Two-ion equilibrium on the branch connected to the symmetric
    /// (untilted) solution.
    pub fn solve(&self, p: &AxialPotential, c: &PhysicalConstants) -> Result<EquilibriumConfig> {
        let kappa = c.coulomb_factor();
        let d0 = symmetric_distance(p.alpha, p.beta, kappa)?;
        if p.gamma == 0.0 {
            return self.finish(p, c, -0.5 * d0, 0.5 * d0);
        }
        let seed = (-0.5 * d0, 0.5 * d0);
        match self.newton(p, kappa, seed) {
            Ok((x1, x2)) => self.finish(p, c, x1, x2),
            Err(_) => {
                // Continuation in the tilt from the symmetric solution.
                let steps = 32;
                let mut x = seed;
                for k in 1..=steps {
                    let frac = k as f64 / steps as f64;
                    let partial = AxialPotential {
                        gamma: p.gamma * frac,
                        ..*p
                    };
                    x = self.newton(&partial, kappa, x)?;
                }
                self.finish(p, c, x.0, x.1)
            }
        }
    }

    /// Local minimum of the two-ion energy reached from a seed.
    pub fn solve_from(
        &self,
        p: &AxialPotential,
        c: &PhysicalConstants,
        x1: f64,
        x2: f64,
    ) -> Result<EquilibriumConfig> {
        let (a, b) = self.newton(p, c.coulomb_factor(), (x1.min(x2), x1.max(x2)))?;
        self.finish(p, c, a, b)
    }

    fn finish(
        &self,
        p: &AxialPotential,
        c: &PhysicalConstants,
        x1: f64,
        x2: f64,
    ) -> Result<EquilibriumConfig> {
        let kappa = c.coulomb_factor();
        let g = scaled_forces(p, x1, x2, kappa);
        let residual_force = c.elementary_charge * g[0].abs().max(g[1].abs());
        if x1.abs() >= self.validity_radius || x2.abs() >= self.validity_radius {
            return Err(Error::NoEquilibrium(format!(
                "equilibrium at ({x1:e}, {x2:e}) m lies outside the validity radius {:e} m",
                self.validity_radius
            )));
        }
        if !(residual_force < self.force_tolerance) {
            return Err(Error::Convergence {
                what: "two-ion equilibrium",
                iterations: self.max_iterations,
                trace: vec![residual_force],
            });
        }
        Ok(EquilibriumConfig {
            x1,
            x2,
            residual_force,
        })
    }

    /// Damped Newton on the force system with an energy line search.
    fn newton(&self, p: &AxialPotential, kappa: f64, seed: (f64, f64)) -> Result<(f64, f64)> {
        let (mut x1, mut x2) = seed;
        let tol = self.force_tolerance / ELEMENTARY_CHARGE * 1e-3;
        let mut trace = Vec::new();
        for _ in 0..self.max_iterations {
            let g = scaled_forces(p, x1, x2, kappa);
            let gnorm = g[0].abs().max(g[1].abs());
            trace.push(gnorm);
            if trace.len() > 8 {
                trace.remove(0);
            }
            if gnorm < tol {
                return Ok((x1, x2));
            }
            let h = scaled_hessian(p, x1, x2, kappa);
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            let positive = h[0][0] > 0.0 && det > 0.0;
            let (mut s1, mut s2) = if positive {
                // Solve H s = g (g is minus the gradient).
                (
                    (h[1][1] * g[0] - h[0][1] * g[1]) / det,
                    (h[0][0] * g[1] - h[1][0] * g[0]) / det,
                )
            } else {
                // Gradient step scaled by the largest curvature magnitude.
                let scale = h[0][0].abs().max(h[1][1].abs()).max(1e-30);
                (g[0] / scale, g[1] / scale)
            };
            let d = x2 - x1;
            // Keep the ordering x1 < x2 and limit steps to a fraction of d.
            let max_step = 0.25 * d;
            let big = s1.abs().max(s2.abs());
            if big > max_step {
                s1 *= max_step / big;
                s2 *= max_step / big;
            }
            let e0 = scaled_energy(p, x1, x2, kappa);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let (n1, n2) = (x1 + t * s1, x2 + t * s2);
                if n2 > n1 {
                    let e1 = scaled_energy(p, n1, n2, kappa);
                    let gn = scaled_forces(p, n1, n2, kappa);
                    let gn = gn[0].abs().max(gn[1].abs());
                    if e1 <= e0 + 1e-12 * e0.abs() || gn < gnorm {
                        x1 = n1;
                        x2 = n2;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(Error::Convergence {
            what: "two-ion equilibrium Newton iteration",
            iterations: self.max_iterations,
            trace,
        })
    }
}

/// Equilibrium with default tolerances and validity radius.
pub fn equilibrium_two_ion(p: &AxialPotential, c: &PhysicalConstants) -> Result<EquilibriumConfig> {
    EquilibriumSolver::default().solve(p, c)
}

/// Axial normal-mode frequencies of a two-ion crystal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeFrequencies {
    pub omega_com: f64,
    pub omega_str: f64,
}

/// Eigenfrequencies of the 2x2 Hessian of the total energy.
pub fn normal_modes(
    p: &AxialPotential,
    eq: &EquilibriumConfig,
    c: &PhysicalConstants,
) -> Result<ModeFrequencies> {
    let h = scaled_hessian(p, eq.x1, eq.x2, c.coulomb_factor());
    let tr = h[0][0] + h[1][1];
    let diff = h[0][0] - h[1][1];
    let root = (diff * diff + 4.0 * h[0][1] * h[1][0]).sqrt();
    let low = 0.5 * (tr - root);
    let high = 0.5 * (tr + root);
    if !(low > 0.0) {
        return Err(Error::Unstable {
            eigenvalue: low * c.elementary_charge,
        });
    }
    let qm = c.charge_to_mass();
    Ok(ModeFrequencies {
        omega_com: (qm * low).sqrt(),
        omega_str: (qm * high).sqrt(),
    })
}
