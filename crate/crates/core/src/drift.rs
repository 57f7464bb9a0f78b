//! Laser-induced charging of the trap, its tilt-compensation servo and the
//! search for the tilt window inside which separation succeeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{levenberg_marquardt, FitResult, LmOptions};
use crate::trapmodel::ELEMENTARY_CHARGE;

/// Tilt per volt of differential outer-segment voltage, in 1/m.
pub const DEFAULT_TILT_PER_VOLT: f64 = 333.0;

/// Charging rates, all expressed in compensation-voltage units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargingParams {
    /// Charging rate in mV/min while the lasers are on.
    pub k_prime: f64,
    /// Screening rate in 1/min while the lasers are on.
    pub delta: f64,
    /// Discharge rate in 1/min.
    pub kappa_dis: f64,
}

impl ChargingParams {
    pub fn new(k_prime: f64, delta: f64, kappa_dis: f64) -> Result<Self> {
        let p = Self {
            k_prime,
            delta,
            kappa_dis,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn reference() -> Self {
        Self {
            k_prime: 3.02,
            delta: 0.074,
            kappa_dis: 0.017,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.k_prime, self.delta, self.kappa_dis]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Invalid(format!(
                "charging rates must be non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    /// Steady state with the lasers on, in mV.
    pub fn asymptote(&self) -> f64 {
        self.k_prime / (self.delta + self.kappa_dis)
    }

    /// Discharge half-life in minutes.
    pub fn half_life(&self) -> f64 {
        std::f64::consts::LN_2 / self.kappa_dis
    }

    /// `dU/dt` in mV/min.
    pub fn rate(&self, u: f64, laser_on: bool) -> f64 {
        if laser_on {
            self.k_prime - (self.delta + self.kappa_dis) * u
        } else {
            -self.kappa_dis * u
        }
    }

    /// Closed-form evolution over `dt` minutes at a fixed laser state.
    pub fn evolve(&self, u: f64, dt: f64, laser_on: bool) -> f64 {
        if laser_on {
            let s = self.delta + self.kappa_dis;
            if s == 0.0 {
                return u + self.k_prime * dt;
            }
            let inf = self.k_prime / s;
            inf + (u - inf) * (-s * dt).exp()
        } else {
            u * (-self.kappa_dis * dt).exp()
        }
    }
}

/// Laser-on intervals in minutes; the lasers are off elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserSchedule {
    on: Vec<(f64, f64)>,
}

impl LaserSchedule {
    pub fn new(on: Vec<(f64, f64)>) -> Result<Self> {
        let mut last = f64::NEG_INFINITY;
        for &(a, b) in &on {
            if !(a.is_finite() && b.is_finite() && a < b && a >= last) {
                return Err(Error::Invalid(format!(
                    "laser intervals must be increasing and non-overlapping, got ({a}, {b})"
                )));
            }
            last = b;
        }
        Ok(Self { on })
    }

    /// Lasers on over `[0, on)` and off afterwards.
    pub fn on_then_off(on: f64) -> Result<Self> {
        Self::new(vec![(0.0, on)])
    }

    pub fn always_on(total: f64) -> Result<Self> {
        Self::new(vec![(0.0, total)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.on
    }

    pub fn is_on(&self, t: f64) -> bool {
        self.on.iter().any(|&(a, b)| t >= a && t < b)
    }

    /// Interval boundaries inside `(t0, t1)`.
    fn switches_between(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.on
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .filter(|&s| s > t0 && s < t1)
            .collect()
    }
}

/// Compensation voltage samples in mV against time in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Measurement accuracy in mV.
    pub sigma: f64,
}

impl ChargingTrace {
    pub fn new(times: Vec<f64>, values: Vec<f64>, sigma: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Invalid(
                "trace times and values differ in length".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid(
                "trace times must be strictly increasing".into(),
            ));
        }
        if !(sigma > 0.0) {
            return Err(Error::Invalid(format!(
                "trace sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self {
            times,
            values,
            sigma,
        })
    }
}

/// Compensation voltage at each of `times` (minutes, increasing, >= 0),
/// starting from `u0` at t = 0.
pub fn simulate_charging(
    params: &ChargingParams,
    sched: &LaserSchedule,
    u0: f64,
    times: &[f64],
) -> Result<Vec<f64>> {
    params.validate()?;
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::Invalid(
            "times must be non-negative and increasing".into(),
        ));
    }
    Ok(propagate(params, sched, u0, times))
}

fn propagate(params: &ChargingParams, sched: &LaserSchedule, u0: f64, times: &[f64]) -> Vec<f64> {
    let mut t = 0.0;
    let mut u = u0;
    times
        .iter()
        .map(|&target| {
            u = advance(params, sched, u, t, target);
            t = target;
            u
        })
        .collect()
}

/// Evolves `u` from `t0` to `t1` minutes across any laser switches.
pub fn advance(
    params: &ChargingParams,
    sched: &LaserSchedule,
    mut u: f64,
    t0: f64,
    t1: f64,
) -> f64 {
    let mut t = t0;
    for s in sched.switches_between(t0, t1) {
        u = params.evolve(u, s - t, sched.is_on(t));
        t = s;
    }
    params.evolve(u, t1 - t, sched.is_on(t))
}

/// Fitted charging rates and initial voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingFit {
    pub params: ChargingParams,
    pub u0: f64,
    pub fit: FitResult,
}

/// Exponential fit `a + b exp(-s t)` by scanning `s` and solving the linear
/// part; returns `(s, a, b, rss)`.
fn scan_exponential(ts: &[f64], us: &[f64]) -> Option<(f64, f64, f64, f64)> {
    if ts.len() < 3 {
        return None;
    }
    let t0 = ts[0];
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for i in 0..=200 {
        let s = 10f64.powf(-4.0 + 5.0 * i as f64 / 200.0);
        let xs: Vec<f64> = ts.iter().map(|t| (-s * (t - t0)).exp()).collect();
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), us.iter().sum::<f64>());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(us).map(|(x, y)| x * y).sum();
        let det = n * sxx - sx * sx;
        if det.abs() < 1e-300 {
            continue;
        }
        let b = (n * sxy - sx * sy) / det;
        let a = (sy - b * sx) / n;
        let rss: f64 = xs
            .iter()
            .zip(us)
            .map(|(x, y)| (a + b * x - y).powi(2))
            .sum();
        if best.is_none_or(|(_, _, _, r)| rss < r) {
            best = Some((s, a, b, rss));
        }
    }
    best
}

/// Least-squares fit of the piecewise charging model to `trace`.
pub fn fit_charging(trace: &ChargingTrace, sched: &LaserSchedule) -> Result<ChargingFit> {
    let on_idx: Vec<usize> = (0..trace.times.len())
        .filter(|&i| sched.is_on(trace.times[i]))
        .collect();
    let off_idx: Vec<usize> = (0..trace.times.len())
        .filter(|&i| !sched.is_on(trace.times[i]))
        .collect();
    if on_idx.len() < 2 || off_idx.len() < 2 {
        return Err(Error::Identifiability(
            "screening and discharge rates need samples with the lasers both on and off".into(),
        ));
    }
    let pick = |idx: &[usize]| -> (Vec<f64>, Vec<f64>) {
        (
            idx.iter().map(|&i| trace.times[i]).collect(),
            idx.iter().map(|&i| trace.values[i]).collect(),
        )
    };
    let (t_on, u_on) = pick(&on_idx);
    let (t_off, u_off) = pick(&off_idx);
    let (s_guess, inf_guess) = scan_exponential(&t_on, &u_on)
        .map(|(s, a, _, _)| (s, a))
        .unwrap_or((0.1, u_on[u_on.len() - 1]));
    let kappa_guess = scan_exponential(&t_off, &u_off)
        .map(|(s, _, _, _)| s)
        .unwrap_or(0.02)
        .min(0.9 * s_guess);
    let initial = [
        inf_guess * s_guess,
        (s_guess - kappa_guess).max(1e-4),
        kappa_guess,
        trace.values[0],
    ];

    let sigma = trace.sigma;
    let residuals = |p: &[f64]| -> Vec<f64> {
        let params = ChargingParams {
            k_prime: p[0],
            delta: p[1],
            kappa_dis: p[2],
        };
        if !(params.delta + params.kappa_dis > 0.0) {
            return vec![f64::INFINITY; trace.times.len()];
        }
        propagate(&params, sched, p[3], &trace.times)
            .iter()
            .zip(&trace.values)
            .map(|(m, v)| (m - v) / sigma)
            .collect()
    };
    let scales = [
        initial[0].abs().max(1e-3),
        initial[1].max(1e-3),
        initial[2].max(1e-3),
        1.0,
    ];
    let fit = levenberg_marquardt(
        &["k_prime", "delta", "kappa_dis", "u0"],
        residuals,
        &initial,
        &scales,
        LmOptions::default(),
    )?;
    let v = &fit.values;
    Ok(ChargingFit {
        params: ChargingParams {
            k_prime: v[0],
            delta: v[1],
            kappa_dis: v[2],
        },
        u0: v[3],
        fit,
    })
}

/// Compensation voltage together with the tilt field it cancels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltState {
    /// Compensation voltage in mV.
    pub voltage: f64,
    /// Tilt field in V/m.
    pub field: f64,
}

impl TiltState {
    pub fn from_voltage(voltage_mv: f64, tilt_per_volt: f64) -> Self {
        Self {
            voltage: voltage_mv,
            field: tilt_per_volt * voltage_mv * 1e-3,
        }
    }

    pub fn from_field(field: f64, tilt_per_volt: f64) -> Self {
        Self {
            voltage: field / tilt_per_volt * 1e3,
            field,
        }
    }

    /// Axial force on a singly charged ion, in N.
    pub fn force(&self) -> f64 {
        ELEMENTARY_CHARGE * self.field
    }
}

/// Incremental PI servo on the compensation voltage.
///
/// At each update the measured error `e` adjusts the correction by
/// `kp * e + ki * sum(e)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    pub kp: f64,
    pub ki: f64,
    /// Update period in seconds.
    pub period: f64,
    /// Measurement noise in mV.
    pub noise: f64,
    /// Measured displacement per mV of uncompensated tilt, normalized.
    pub plant_gain: f64,
    /// Servo-off intervals in seconds.
    pub pauses: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            kp: 0.8,
            ki: 0.4,
            period: 0.5,
            noise: 0.0,
            plant_gain: 1.0,
            pauses: Vec::new(),
            seed: 0,
        }
    }
}

impl ServoConfig {
    /// Largest closed-loop pole magnitude for the linear plant.
    pub fn pole_magnitude(&self) -> f64 {
        let g = self.plant_gain;
        if self.ki == 0.0 {
            return (1.0 - g * self.kp).abs();
        }
        let b = -(2.0 - g * (self.kp + self.ki));
        let c = 1.0 - g * self.kp;
        let disc = b * b - 4.0 * c;
        if disc >= 0.0 {
            let r = disc.sqrt();
            ((-b + r) / 2.0).abs().max(((-b - r) / 2.0).abs())
        } else {
            c.abs().sqrt()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::Invalid(format!(
                "servo period must be positive, got {}",
                self.period
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Invalid("servo noise must be non-negative".into()));
        }
        let m = self.pole_magnitude();
        if !(m < 1.0) {
            return Err(Error::Divergence {
                pole_magnitude: m,
                kp: self.kp,
                ki: self.ki,
            });
        }
        Ok(())
    }

    fn paused(&self, t: f64) -> bool {
        self.pauses.iter().any(|&(a, b)| t >= a && t < b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoStep {
    pub step: usize,
    /// Seconds since the start.
    pub time: f64,
    /// Tilt to be compensated, in mV.
    pub drift: f64,
    pub correction: f64,
    /// `drift - correction`, in mV.
    pub error: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoTrace {
    pub steps: Vec<ServoStep>,
    /// First step from which the error stays within the tolerance.
    pub settling_step: Option<usize>,
    pub steady_state_error: f64,
}

impl ServoTrace {
    pub fn settling_time(&self, period: f64) -> Option<f64> {
        self.settling_step.map(|s| s as f64 * period)
    }
}

/// Runs the servo against the charging drift for `steps` updates.
///
/// The drift starts at `u0` mV and follows `plant` under `sched` (minutes);
/// the correction starts at zero.
pub fn simulate_servo(
    plant: &ChargingParams,
    sched: &LaserSchedule,
    u0: f64,
    cfg: &ServoConfig,
    steps: usize,
    tolerance: f64,
) -> Result<ServoTrace> {
    cfg.validate()?;
    plant.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut drift = u0;
    let mut correction = 0.0;
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let time = k as f64 * cfg.period;
        if k > 0 {
            drift = advance(plant, sched, drift, (time - cfg.period) / 60.0, time / 60.0);
        }
        let error = drift - correction;
        let active = !cfg.paused(time);
        out.push(ServoStep {
            step: k,
            time,
            drift,
            correction,
            error,
            active,
        });
        if active && k < steps {
            let measured = cfg.plant_gain * error
                + if cfg.noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
            integral += measured;
            correction += cfg.kp * measured + cfg.ki * integral;
        }
    }
    let settling_step = (0..out.len())
        .rev()
        .take_while(|&i| out[i].error.abs() <= tolerance)
        .last();
    let tail = &out[out.len() - out.len().min(10)..];
    let steady_state_error = tail.iter().map(|s| s.error.abs()).fold(0.0, f64::max);
    Ok(ServoTrace {
        steps: out,
        settling_step,
        steady_state_error,
    })
}

/// Success window of the differential tilt voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltWindow {
    /// Window bounds in V.
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    pub half_width: f64,
    /// Critical tilt field in V/m.
    pub gamma_crit: f64,
    /// Corresponding force on one ion, in N.
    pub critical_force: f64,
}

/// Bisects the edges of the success region of `succeeds` over `grid`
/// (increasing, at least 8 points).
///
/// The largest contiguous run of successful grid points is refined to
/// `tolerance` volts.
pub fn find_tilt_window<F>(
    mut succeeds: F,
    grid: &[f64],
    tolerance: f64,
    tilt_per_volt: f64,
) -> Result<TiltWindow>
where
    F: FnMut(f64) -> Result<bool>,
{
    if grid.len() < 8 {
        return Err(Error::Invalid(format!(
            "tilt scan needs at least 8 grid points, got {}",
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid(
            "tilt grid must be strictly increasing".into(),
        ));
    }
    let flags = grid
        .iter()
        .map(|&u| succeeds(u))
        .collect::<Result<Vec<bool>>>()?;
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < flags.len() {
        if flags[i] {
            let start = i;
            while i + 1 < flags.len() && flags[i + 1] {
                i += 1;
            }
            if best.is_none_or(|(a, b)| i - start > b - a) {
                best = Some((start, i));
            }
        }
        i += 1;
    }
    let (a, b) = best.ok_or(Error::WindowNotFound)?;
    let mut bisect = |mut good: f64, mut bad: f64| -> Result<f64> {
        while (good - bad).abs() > tolerance {
            let mid = 0.5 * (good + bad);
            if succeeds(mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(0.5 * (good + bad))
    };
    let lower = if a > 0 {
        bisect(grid[a], grid[a - 1])?
    } else {
        grid[0]
    };
    let upper = if b + 1 < grid.len() {
        bisect(grid[b], grid[b + 1])?
    } else {
        grid[grid.len() - 1]
    };
    let half_width = 0.5 * (upper - lower);
    let gamma_crit = tilt_per_volt * half_width;
    Ok(TiltWindow {
        lower,
        upper,
        center: 0.5 * (upper + lower),
        half_width,
        gamma_crit,
        critical_force: ELEMENTARY_CHARGE * gamma_crit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asymptote_from_reference_rates() {
        let p = ChargingParams::reference();
        assert!((p.asymptote() - 33.187).abs() < 1e-3);
        let sched = LaserSchedule::always_on(1000.0).unwrap();
        let u = simulate_charging(&p, &sched, 0.0, &[1000.0]).unwrap();
        assert!((u[0] - p.asymptote()).abs() < 1e-9);
    }

    #[test]
    fn discharge_half_life() {
        let p = ChargingParams::reference();
        assert!((p.half_life() - 40.77).abs() < 0.01);
        let sched = LaserSchedule::new(vec![]).unwrap();
        let u = simulate_charging(&p, &sched, 10.0, &[p.half_life()]).unwrap();
        assert!((u[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn no_charging_decays_monotonically() {
        let p = ChargingParams::new(0.0, 0.074, 0.017).unwrap();
        let sched = LaserSchedule::new(vec![(10.0, 50.0)]).unwrap();
        let times: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let u = simulate_charging(&p, &sched, 20.0, &times).unwrap();
        assert!(u.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn on_only_trace_is_not_identifiable() {
        let p = ChargingParams::reference();
        let sched = LaserSchedule::always_on(100.0).unwrap();
        let times: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let u = simulate_charging(&p, &sched, 0.0, &times).unwrap();
        let trace = ChargingTrace::new(times, u, 0.6).unwrap();
        assert!(matches!(
            fit_charging(&trace, &sched),
            Err(Error::Identifiability(_))
        ));
    }

    #[test]
    fn default_gains_are_stable() {
        let cfg = ServoConfig::default();
        assert!((cfg.pole_magnitude() - 0.2f64.sqrt()).abs() < 1e-12);
        let bad = ServoConfig {
            kp: 2.5,
            ..ServoConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Divergence { .. })));
    }

    #[test]
    fn zero_error_stays_zero() {
        let p = ChargingParams::new(0.0, 0.0, 0.0).unwrap();
        let sched = LaserSchedule::new(vec![]).unwrap();
        let tr = simulate_servo(&p, &sched, 0.0, &ServoConfig::default(), 20, 0.6).unwrap();
        assert!(tr.steps.iter().all(|s| s.error == 0.0));
    }

    #[test]
    fn conversion_chain() {
        let w = TiltState::from_voltage(16.0, DEFAULT_TILT_PER_VOLT);
        assert!((w.field - 5.328).abs() < 1e-9);
        assert!((w.force() - 8.536e-19).abs() < 1e-21);
        let step = TiltState::from_voltage(0.3, DEFAULT_TILT_PER_VOLT);
        assert!((step.field - 0.0999).abs() < 1e-9);
        assert!((step.force() * 1e21 - 16.0).abs() < 0.1);
    }
}
