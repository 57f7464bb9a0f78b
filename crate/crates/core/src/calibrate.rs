//! Calibration regressions: segment coefficients from frequency and
//! distance scans, the heating-rate power law and the imaging scale.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fitting::{weighted_least_squares, FitResult};
use crate::trapmodel::{
    coefficients_from_voltages, harmonic_distance, PhysicalConstants, Segment, SegmentBasis,
    VoltageSet,
};

/// One trap-frequency measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPoint {
    pub voltage: f64,
    pub omega: f64,
    pub sigma: f64,
}

/// Secular frequency versus the voltage on one segment, others held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyScan {
    pub segment: Segment,
    pub points: Vec<FrequencyPoint>,
    /// Voltages of the held segments. The scanned segment's entry is ignored.
    pub background: VoltageSet,
}

impl FrequencyScan {
    pub fn voltages_at(&self, point: &FrequencyPoint) -> VoltageSet {
        let mut v = self.background;
        v.set(self.segment, point.voltage);
        v
    }

    /// Noiseless scan generated from a basis, with the given reported sigma.
    pub fn synthetic(
        basis: &SegmentBasis,
        segment: Segment,
        voltages: &[f64],
        background: VoltageSet,
        sigma: f64,
        c: &PhysicalConstants,
    ) -> Result<Self> {
        let mut scan = FrequencyScan {
            segment,
            points: Vec::with_capacity(voltages.len()),
            background,
        };
        for &u in voltages {
            let mut v = background;
            v.set(segment, u);
            let alpha = coefficients_from_voltages(basis, &v).alpha;
            let omega = crate::trapmodel::single_well_frequency(alpha, c)?;
            scan.points.push(FrequencyPoint {
                voltage: u,
                omega,
                sigma,
            });
        }
        Ok(scan)
    }
}

/// One ion-distance measurement at a critical-point voltage set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub voltages: VoltageSet,
    pub distance: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistanceScan {
    pub points: Vec<DistancePoint>,
}

/// Fitted harmonic coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub alpha_c: f64,
    pub alpha_s: f64,
    pub alpha_o: f64,
    pub alpha_prime: f64,
    pub fit: FitResult,
}

impl AlphaFit {
    /// Copies the fitted values and sigmas into a basis.
    pub fn apply(&self, basis: &mut SegmentBasis) {
        let mut sigma = basis
            .sigma
            .unwrap_or(crate::trapmodel::BasisCoefficients::ZERO);
        for (name, value, s) in self
            .fit
            .names
            .iter()
            .zip(&self.fit.values)
            .zip(&self.fit.sigmas)
            .map(|((n, v), s)| (n.as_str(), *v, *s))
        {
            match name {
                "alpha_c" => (basis.alpha_c, sigma.alpha_c) = (value, s),
                "alpha_s" => (basis.alpha_s, sigma.alpha_s) = (value, s),
                "alpha_o" => (basis.alpha_o, sigma.alpha_o) = (value, s),
                "alpha_prime" => (basis.alpha_prime, sigma.alpha_prime) = (value, s),
                _ => {}
            }
        }
        basis.sigma = Some(sigma);
    }
}

/// Fitted quartic coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta_c: f64,
    pub beta_s: f64,
    pub beta_prime: f64,
    pub fit: FitResult,
}

impl BetaFit {
    pub fn apply(&self, basis: &mut SegmentBasis) {
        let mut sigma = basis
            .sigma
            .unwrap_or(crate::trapmodel::BasisCoefficients::ZERO);
        for (i, name) in self.fit.names.iter().enumerate() {
            let (value, s) = (self.fit.values[i], self.fit.sigmas[i]);
            match name.as_str() {
                "beta_c" => (basis.beta_c, sigma.beta_c) = (value, s),
                "beta_s" => (basis.beta_s, sigma.beta_s) = (value, s),
                "beta_prime" => (basis.beta_prime, sigma.beta_prime) = (value, s),
                _ => {}
            }
        }
        basis.sigma = Some(sigma);
    }
}

/// Joint weighted regression of `m omega^2 / 2q` against the applied
/// voltages of all scans.
///
/// Every scan shares one stray offset. Segments whose voltage is zero in
/// every point drop out of the design and are reported as zero.
pub fn fit_alpha(scans: &[FrequencyScan], c: &PhysicalConstants) -> Result<AlphaFit> {
    let scale = c.ion_mass / (2.0 * c.elementary_charge);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut sigma = Vec::new();
    for scan in scans {
        let distinct = scan
            .points
            .iter()
            .any(|p| p.voltage != scan.points[0].voltage);
        if scan.points.len() < 2 || !distinct {
            return Err(Error::DegenerateScan(format!(
                "scan of segment {} needs at least two distinct voltages",
                scan.segment.label()
            )));
        }
        for p in &scan.points {
            if !(p.omega > 0.0 && p.sigma > 0.0) {
                return Err(Error::Domain(format!(
                    "frequency {:e} and sigma {:e} must be positive",
                    p.omega, p.sigma
                )));
            }
            let v = scan.voltages_at(p);
            rows.push(vec![v.u_c, v.u_s, v.u_o, 1.0]);
            y.push(scale * p.omega * p.omega);
            sigma.push(scale * 2.0 * p.omega * p.sigma);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let names = ["alpha_c", "alpha_s", "alpha_o", "alpha_prime"];
    let keep: Vec<usize> = (0..4)
        .filter(|&j| j == 3 || rows.iter().any(|r| r[j] != 0.0))
        .collect();
    let reduced: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| keep.iter().map(|&j| r[j]).collect())
        .collect();
    let kept_names: Vec<&str> = keep.iter().map(|&j| names[j]).collect();
    let fit = weighted_least_squares(&kept_names, &reduced, &y, &sigma)?;
    let get = |n: &str| fit.value(n).unwrap_or(0.0);
    Ok(AlphaFit {
        alpha_c: get("alpha_c"),
        alpha_s: get("alpha_s"),
        alpha_o: get("alpha_o"),
        alpha_prime: get("alpha_prime"),
        fit,
    })
}

/// `2 kappa / d^5`, the quartic coefficient that produces distance `d` in a
/// purely quartic well.
pub fn beta_from_distance(d: f64, c: &PhysicalConstants) -> f64 {
    2.0 * c.coulomb_factor() / d.powi(5)
}

/// Regression of per-point quartic coefficients against `(U_C, U_S, 1)`.
///
/// The outer-segment contribution is not separable with this method and is
/// excluded. Each point must be close to a critical point under `basis`:
/// the harmonic term may contribute at most 1% of the Coulomb balance.
pub fn fit_beta(
    scan: &DistanceScan,
    basis: &SegmentBasis,
    c: &PhysicalConstants,
) -> Result<BetaFit> {
    if scan.points.is_empty() {
        return Err(Error::Underdetermined {
            points: 0,
            parameters: 1,
        });
    }
    let kappa = c.coulomb_factor();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut sigma = Vec::new();
    for (i, p) in scan.points.iter().enumerate() {
        if !(p.distance > 0.0 && p.sigma > 0.0) {
            return Err(Error::Domain(format!(
                "point {i}: distance and sigma must be positive"
            )));
        }
        let alpha = coefficients_from_voltages(basis, &p.voltages).alpha;
        if (alpha * p.distance.powi(3)).abs() > 0.01 * kappa {
            return Err(Error::Invalid(format!(
                "point {i} is not at a critical point (alpha = {alpha:e} V/m^2)"
            )));
        }
        let b = beta_from_distance(p.distance, c);
        rows.push(vec![p.voltages.u_c, p.voltages.u_s, 1.0]);
        y.push(b);
        sigma.push(5.0 * b * p.sigma / p.distance);
    }
    let names = ["beta_c", "beta_s", "beta_prime"];
    let keep: Vec<usize> = (0..3)
        .filter(|&j| j == 2 || rows.iter().any(|r| r[j] != 0.0))
        .collect();
    let reduced: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| keep.iter().map(|&j| r[j]).collect())
        .collect();
    let kept_names: Vec<&str> = keep.iter().map(|&j| names[j]).collect();
    let fit = weighted_least_squares(&kept_names, &reduced, &y, &sigma)?;
    let get = |n: &str| fit.value(n).unwrap_or(0.0);
    Ok(BetaFit {
        beta_c: get("beta_c"),
        beta_s: get("beta_s"),
        beta_prime: get("beta_prime"),
        fit,
    })
}

/// Anomalous heating law `rate = a (omega / 2 pi MHz)^(-p)` in phonons/ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingModel {
    pub prefactor: f64,
    pub exponent: f64,
    #[serde(default)]
    pub prefactor_sigma: f64,
    #[serde(default)]
    pub exponent_sigma: f64,
}

impl HeatingModel {
    pub fn new(prefactor: f64, exponent: f64) -> Result<Self> {
        if !(prefactor > 0.0) || !exponent.is_finite() {
            return Err(Error::Invalid(format!(
                "heating prefactor must be positive, got {prefactor:e}"
            )));
        }
        Ok(Self {
            prefactor,
            exponent,
            prefactor_sigma: 0.0,
            exponent_sigma: 0.0,
        })
    }

    /// Measured law of the reference trap.
    pub fn reference() -> Self {
        Self {
            prefactor: 6.3,
            exponent: 1.8,
            prefactor_sigma: 0.2,
            exponent_sigma: 0.1,
        }
    }

    /// Same law with zero rate everywhere.
    pub fn none() -> Self {
        Self {
            prefactor: 0.0,
            exponent: 0.0,
            prefactor_sigma: 0.0,
            exponent_sigma: 0.0,
        }
    }

    /// Phonons per millisecond at angular frequency `omega` (rad/s).
    pub fn rate_per_ms(&self, omega: f64) -> f64 {
        self.prefactor * (omega / (2.0 * PI * 1e6)).powf(-self.exponent)
    }

    /// Phonons per second.
    pub fn rate(&self, omega: f64) -> f64 {
        1e3 * self.rate_per_ms(omega)
    }
}

impl Default for HeatingModel {
    fn default() -> Self {
        Self::reference()
    }
}

/// One heating-rate measurement. `sigma` is the rate uncertainty, or zero
/// for an unweighted fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingPoint {
    pub omega: f64,
    pub rate: f64,
    #[serde(default)]
    pub sigma: f64,
}

/// Log-log regression of heating rates.
pub fn fit_heating_power_law(points: &[HeatingPoint]) -> Result<HeatingModel> {
    if points.len() < 3 {
        return Err(Error::Underdetermined {
            points: points.len(),
            parameters: 3,
        });
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut sigma = Vec::new();
    for p in points {
        if !(p.rate > 0.0) || !(p.omega > 0.0) {
            return Err(Error::Domain(format!(
                "heating rate {} at omega {:e} must be positive",
                p.rate, p.omega
            )));
        }
        rows.push(vec![1.0, (p.omega / (2.0 * PI * 1e6)).ln()]);
        y.push(p.rate.ln());
        sigma.push(if p.sigma > 0.0 { p.sigma / p.rate } else { 1.0 });
    }
    let fit = weighted_least_squares(&["ln_a", "minus_p"], &rows, &y, &sigma)?;
    let a = fit.values[0].exp();
    Ok(HeatingModel {
        prefactor: a,
        exponent: -fit.values[1],
        prefactor_sigma: a * fit.sigmas[0],
        exponent_sigma: fit.sigmas[1],
    })
}

/// Imaging scale in m/px from the known harmonic two-ion distance.
pub fn magnification_from_frequency(
    omega: f64,
    pixel_distance: f64,
    c: &PhysicalConstants,
) -> Result<f64> {
    if !(omega > 0.0 && pixel_distance > 0.0) {
        return Err(Error::Domain(
            "frequency and pixel distance must be positive".into(),
        ));
    }
    Ok(harmonic_distance(omega, c) / pixel_distance)
}
