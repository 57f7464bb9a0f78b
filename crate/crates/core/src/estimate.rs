//! Bayesian inference of motional occupations from multi-transition Rabi
//! flopping data.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phonons::{
    check_transition, choose_truncation, displaced_thermal, rabi_matrix_elements, rabi_signal_with,
    MotionalState, PhononDistribution,
};

pub const DEFAULT_SHOTS: u64 = 200;
const PROBABILITY_FLOOR: f64 = 1e-9;

/// One measured point: `successes` bright outcomes out of `shots` after
/// driving transition `dn` for `t` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiRecord {
    pub dn: i32,
    pub t: f64,
    pub successes: u64,
    pub shots: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RabiDataset {
    pub records: Vec<RabiRecord>,
}

impl RabiDataset {
    pub fn new(records: Vec<RabiRecord>) -> Result<Self> {
        let d = Self { records };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.shots == 0 {
                return Err(Error::Invalid(format!(
                    "record {i}: shots must be positive"
                )));
            }
            if r.successes > r.shots {
                return Err(Error::Invalid(format!(
                    "record {i}: {} successes exceed {} shots",
                    r.successes, r.shots
                )));
            }
            if !(r.t >= 0.0 && r.t.is_finite()) {
                return Err(Error::Invalid(format!(
                    "record {i}: pulse time must be non-negative"
                )));
            }
            check_transition(r.dn)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct transitions present, sorted.
    pub fn transitions(&self) -> Vec<i32> {
        let mut t: Vec<i32> = self.records.iter().map(|r| r.dn).collect();
        t.sort_unstable();
        t.dedup();
        t
    }
}

/// Occupations and Rabi frequency being inferred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiParams {
    pub n_th: f64,
    pub n_coh: f64,
    /// Bare Rabi frequency in rad/s.
    pub omega: f64,
}

impl RabiParams {
    pub fn new(n_th: f64, n_coh: f64, omega: f64) -> Self {
        Self { n_th, n_coh, omega }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.n_th, self.n_coh, self.omega]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn state(&self) -> Result<MotionalState> {
        MotionalState::new(self.n_th, self.n_coh)
    }
}

pub const PARAMETER_NAMES: [&str; 3] = ["n_th", "n_coh", "omega"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorRange {
    pub lower: f64,
    pub upper: f64,
}

impl PriorRange {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::Invalid(format!(
                "prior range needs lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Independent uniform priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub n_th: PriorRange,
    pub n_coh: PriorRange,
    pub omega: PriorRange,
}

impl PriorSpec {
    pub const DEFAULT_CAP: f64 = 1000.0;
    pub const OMEGA_SPREAD: f64 = 0.2;

    /// Occupations on `[0, cap]`, Rabi frequency within 20 % of `omega`.
    pub fn around(omega: f64, cap: f64) -> Result<Self> {
        Ok(Self {
            n_th: PriorRange::new(0.0, cap)?,
            n_coh: PriorRange::new(0.0, cap)?,
            omega: PriorRange::new(
                omega * (1.0 - Self::OMEGA_SPREAD),
                omega * (1.0 + Self::OMEGA_SPREAD),
            )?,
        })
    }

    pub fn ranges(&self) -> [PriorRange; 3] {
        [self.n_th, self.n_coh, self.omega]
    }

    pub fn validate(&self) -> Result<()> {
        for r in self.ranges() {
            PriorRange::new(r.lower, r.upper)?;
        }
        if self.n_th.lower < 0.0 || self.n_coh.lower < 0.0 || self.omega.lower <= 0.0 {
            return Err(Error::Invalid(
                "occupation priors must be non-negative and Rabi prior positive".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, p: &RabiParams) -> bool {
        self.n_th.contains(p.n_th) && self.n_coh.contains(p.n_coh) && self.omega.contains(p.omega)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub length: usize,
    pub burn_in_fraction: f64,
    /// Initial proposal standard deviations; derived from the priors when
    /// absent.
    pub step_scales: Option<[f64; 3]>,
    pub seed: u64,
    /// Largest number of retained samples stored in the posterior.
    pub max_stored: usize,
}

impl McmcConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            length: 50_000,
            burn_in_fraction: 0.2,
            step_scales: None,
            seed,
            max_stored: 5_000,
        }
    }

    pub fn burn_in(&self) -> usize {
        (self.length as f64 * self.burn_in_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.burn_in_fraction) || self.length <= self.burn_in() + 1 {
            return Err(Error::Invalid(format!(
                "chain length {} must exceed the {} burn-in samples",
                self.length,
                self.burn_in()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub mean: f64,
    pub sd: f64,
    /// 68 % central credible interval.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub n_th: ParameterSummary,
    pub n_coh: ParameterSummary,
    pub omega: ParameterSummary,
    /// Summary of `n_th + n_coh`.
    pub total: ParameterSummary,
    pub acceptance_rate: f64,
    pub retained: usize,
    pub warnings: Vec<String>,
    /// Parameters with more than 20 % of their mass within 1 % of a bound.
    pub boundary_pileup: Vec<String>,
    pub samples: Vec<[f64; 3]>,
}

impl Posterior {
    pub fn summary(&self, name: &str) -> Option<&ParameterSummary> {
        match name {
            "n_th" => Some(&self.n_th),
            "n_coh" => Some(&self.n_coh),
            "omega" => Some(&self.omega),
            "total" => Some(&self.total),
            _ => None,
        }
    }

    pub fn acceptance_in_band(&self) -> bool {
        self.acceptance_rate > 0.05 && self.acceptance_rate < 0.8
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    crate::phonons::ln_factorial(n as usize)
        - crate::phonons::ln_factorial(k as usize)
        - crate::phonons::ln_factorial((n - k) as usize)
}

/// Binomial log-pmf with the success probability clamped away from 0 and 1.
pub fn binomial_log_pmf(k: u64, n: u64, p: f64) -> f64 {
    let p = p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
    ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()
}

/// Forward model with cached matrix elements for a fixed Lamb-Dicke factor.
#[derive(Debug, Clone)]
pub struct Likelihood<'a> {
    data: &'a RabiDataset,
    eta: f64,
    transitions: Vec<i32>,
    elements: Vec<Vec<f64>>,
    binomial_consts: Vec<f64>,
}

impl<'a> Likelihood<'a> {
    pub fn new(data: &'a RabiDataset, eta: f64) -> Result<Self> {
        data.validate()?;
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::Invalid(format!(
                "Lamb-Dicke factor must lie in (0, 1), got {eta}"
            )));
        }
        let transitions = data.transitions();
        let binomial_consts = data
            .records
            .iter()
            .map(|r| ln_choose(r.shots, r.successes))
            .collect();
        Ok(Self {
            data,
            eta,
            elements: vec![Vec::new(); transitions.len()],
            transitions,
            binomial_consts,
        })
    }

    fn ensure_elements(&mut self, levels: usize) {
        for (i, dn) in self.transitions.iter().enumerate() {
            if self.elements[i].len() < levels {
                self.elements[i] = rabi_matrix_elements(levels.next_power_of_two(), *dn, self.eta);
            }
        }
    }

    /// Predicted excitations for every record.
    pub fn predictions(&mut self, params: &RabiParams) -> Result<Vec<f64>> {
        let dist = distribution(params)?;
        Ok(self.predictions_with(&dist, params.omega))
    }

    /// Predictions for a precomputed phonon distribution.
    pub fn predictions_with(&mut self, dist: &PhononDistribution, omega: f64) -> Vec<f64> {
        self.ensure_elements(dist.len());
        let p = dist.probabilities();
        self.data
            .records
            .iter()
            .map(|r| {
                let i = self
                    .transitions
                    .binary_search(&r.dn)
                    .expect("transition indexed");
                rabi_signal_with(p, &self.elements[i], omega, r.t)
            })
            .collect()
    }

    pub fn log_likelihood(&mut self, params: &RabiParams) -> Result<f64> {
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let dist = distribution(params)?;
        Ok(self.log_likelihood_with(&dist, params.omega))
    }

    /// Log-likelihood for a precomputed phonon distribution.
    pub fn log_likelihood_with(&mut self, dist: &PhononDistribution, omega: f64) -> f64 {
        let pred = self.predictions_with(dist, omega);
        self.data
            .records
            .iter()
            .zip(&pred)
            .zip(&self.binomial_consts)
            .map(|((r, p), c)| {
                let p = p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
                c + r.successes as f64 * p.ln() + (r.shots - r.successes) as f64 * (1.0 - p).ln()
            })
            .sum()
    }
}

fn distribution(params: &RabiParams) -> Result<PhononDistribution> {
    let state = params.state()?;
    displaced_thermal(&state, choose_truncation(&state))
}

/// Binomial log-likelihood of `data` under `params`.
pub fn log_likelihood(params: &RabiParams, data: &RabiDataset, eta: f64) -> Result<f64> {
    Likelihood::new(data, eta)?.log_likelihood(params)
}

/// Expected excitation for each `(dn, t)` pair.
pub fn forward_model(params: &RabiParams, eta: f64, records: &[(i32, f64)]) -> Result<Vec<f64>> {
    let dist = distribution(params)?;
    let mut out = Vec::with_capacity(records.len());
    let mut cache: Vec<(i32, Vec<f64>)> = Vec::new();
    for &(dn, t) in records {
        check_transition(dn)?;
        let m = match cache.iter().position(|(d, _)| *d == dn) {
            Some(i) => &cache[i].1,
            None => {
                cache.push((dn, rabi_matrix_elements(dist.len(), dn, eta)));
                &cache.last().expect("pushed").1
            }
        };
        out.push(rabi_signal_with(dist.probabilities(), m, params.omega, t));
    }
    Ok(out)
}

/// Binomial draws from the forward model on a transition by time grid.
pub fn synthesize_dataset(
    truth: &RabiParams,
    eta: f64,
    transitions: &[i32],
    times: &[f64],
    shots: u64,
    seed: u64,
) -> Result<RabiDataset> {
    if shots == 0 {
        return Err(Error::Invalid("shots must be positive".into()));
    }
    let grid: Vec<(i32, f64)> = transitions
        .iter()
        .flat_map(|&dn| times.iter().map(move |&t| (dn, t)))
        .collect();
    let pred = forward_model(truth, eta, &grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = grid
        .iter()
        .zip(&pred)
        .map(|(&(dn, t), &p)| {
            let successes = Binomial::new(shots, p.clamp(0.0, 1.0))
                .map_err(|e| Error::Invalid(format!("binomial draw: {e}")))?
                .sample(&mut rng);
            Ok(RabiRecord {
                dn,
                t,
                successes,
                shots,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RabiDataset::new(records)
}

/// Dataset with counts set to their rounded expectation.
pub fn expected_dataset(
    truth: &RabiParams,
    eta: f64,
    transitions: &[i32],
    times: &[f64],
    shots: u64,
) -> Result<RabiDataset> {
    if shots == 0 {
        return Err(Error::Invalid("shots must be positive".into()));
    }
    let grid: Vec<(i32, f64)> = transitions
        .iter()
        .flat_map(|&dn| times.iter().map(move |&t| (dn, t)))
        .collect();
    let pred = forward_model(truth, eta, &grid)?;
    let records = grid
        .iter()
        .zip(&pred)
        .map(|(&(dn, t), &p)| RabiRecord {
            dn,
            t,
            successes: (p * shots as f64).round() as u64,
            shots,
        })
        .collect();
    RabiDataset::new(records)
}

/// Occupation values probed when picking a chain start.
const START_GRID: [f64; 10] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
const START_GRID_MAX_LEVELS: usize = 600;

/// Best point of a coarse grid inside the priors.
pub fn starting_point(lik: &mut Likelihood<'_>, priors: &PriorSpec) -> Result<RabiParams> {
    let clamp = |r: &PriorRange, v: f64| v.clamp(r.lower, r.upper);
    let mut occupations: Vec<(f64, f64)> = Vec::new();
    for &a in &START_GRID {
        for &b in &START_GRID {
            let pair = (clamp(&priors.n_th, a), clamp(&priors.n_coh, b));
            if !occupations.contains(&pair) {
                occupations.push(pair);
            }
        }
    }
    let omegas: Vec<f64> = (0..41)
        .map(|i| priors.omega.lower + priors.omega.width() * i as f64 / 40.0)
        .collect();
    let mut best: Option<(f64, RabiParams)> = None;
    for (n_th, n_coh) in occupations {
        let state = MotionalState::new(n_th, n_coh)?;
        if choose_truncation(&state) > START_GRID_MAX_LEVELS {
            continue;
        }
        let dist = displaced_thermal(&state, choose_truncation(&state))?;
        for &omega in &omegas {
            let p = RabiParams::new(n_th, n_coh, omega);
            let ll = lik.log_likelihood_with(&dist, omega);
            if best.as_ref().is_none_or(|(b, _)| ll > *b) {
                best = Some((ll, p));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::Invalid("no admissible starting point inside the priors".into()))
}

fn summarize(values: &mut [f64]) -> ParameterSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    values.sort_by(|a, b| a.total_cmp(b));
    let q = |f: f64| {
        let pos = f * (values.len() - 1) as f64;
        let i = pos.floor() as usize;
        let j = (i + 1).min(values.len() - 1);
        values[i] + (pos - i as f64) * (values[j] - values[i])
    };
    ParameterSummary {
        mean,
        sd: var.sqrt(),
        lower: q(0.16),
        upper: q(0.84),
    }
}

/// Random-walk Metropolis sampling of the posterior under uniform priors.
///
/// The proposal covariance is adapted during burn-in and frozen afterwards.
pub fn run_mcmc(
    data: &RabiDataset,
    priors: &PriorSpec,
    cfg: &McmcConfig,
    eta: f64,
) -> Result<Posterior> {
    priors.validate()?;
    cfg.validate()?;
    let transitions = data.transitions();
    if transitions.len() < 2 {
        return Err(Error::Identifiability(
            "thermal and coherent occupations need at least two transitions".into(),
        ));
    }
    let mut lik = Likelihood::new(data, eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = starting_point(&mut lik, priors)?;
    let ranges = priors.ranges();

    let initial_scales = cfg.step_scales.unwrap_or_else(|| {
        let occ = (start.n_th + start.n_coh).max(1.0);
        [0.05 * occ, 0.05 * occ, 1e-3 * start.omega]
    });
    let mut chol = Matrix3::from_diagonal(&Vector3::from(initial_scales));
    let mut global_scale = 1.0f64;

    let mut current = Vector3::from(start.to_array());
    let mut current_ll = lik.log_likelihood(&start)?;
    let burn_in = cfg.burn_in();
    let mut history: Vec<Vector3<f64>> = Vec::with_capacity(burn_in);
    let mut retained: Vec<[f64; 3]> = Vec::with_capacity(cfg.length - burn_in);
    let mut accepted_retained = 0usize;
    let mut window_accepts = 0usize;
    let adapt_every = 200usize;

    for step in 0..cfg.length {
        let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let proposal = current + chol * z * global_scale;
        let inside = (0..3).all(|i| ranges[i].contains(proposal[i]));
        let mut accept = false;
        if inside {
            let p = RabiParams::from_array([proposal[0], proposal[1], proposal[2]]);
            let ll = match lik.log_likelihood(&p) {
                Ok(v) => v,
                Err(Error::Truncation { .. }) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
            let u: f64 = rng.random();
            if ll.is_finite() && u.ln() < ll - current_ll {
                current = proposal;
                current_ll = ll;
                accept = true;
            }
        }
        if step < burn_in {
            history.push(current);
            if accept {
                window_accepts += 1;
            }
            if (step + 1) % adapt_every == 0 {
                let rate = window_accepts as f64 / adapt_every as f64;
                window_accepts = 0;
                global_scale *= ((rate - 0.25) * 2.0).exp();
                global_scale = global_scale.clamp(1e-3, 1e3);
                let half = &history[history.len() / 2..];
                if half.len() >= 100 {
                    if let Some(l) = empirical_cholesky(half, &initial_scales) {
                        chol = l;
                        global_scale = global_scale.min(1.0).max(1e-3);
                    }
                }
            }
        } else {
            if accept {
                accepted_retained += 1;
            }
            retained.push([current[0], current[1], current[2]]);
        }
    }

    let n = retained.len();
    let mut columns: Vec<Vec<f64>> = (0..3)
        .map(|i| retained.iter().map(|s| s[i]).collect())
        .collect();
    let mut totals: Vec<f64> = retained.iter().map(|s| s[0] + s[1]).collect();
    let mut boundary_pileup = Vec::new();
    for (i, col) in columns.iter().enumerate() {
        let r = ranges[i];
        let band = 0.01 * r.width();
        let near = col
            .iter()
            .filter(|v| **v - r.lower < band || r.upper - **v < band)
            .count();
        if near as f64 > 0.2 * n as f64 {
            boundary_pileup.push(PARAMETER_NAMES[i].to_string());
        }
    }
    let acceptance_rate = accepted_retained as f64 / n as f64;
    let mut warnings = Vec::new();
    if !(acceptance_rate > 0.05 && acceptance_rate < 0.8) {
        warnings.push(format!(
            "acceptance rate {acceptance_rate:.3} outside (0.05, 0.8)"
        ));
    }
    for name in &boundary_pileup {
        warnings.push(format!("posterior of {name} piles up at a prior bound"));
    }
    let stride = n.div_ceil(cfg.max_stored.max(1)).max(1);
    let samples = retained.iter().step_by(stride).copied().collect();
    Ok(Posterior {
        n_th: summarize(&mut columns[0]),
        n_coh: summarize(&mut columns[1]),
        omega: summarize(&mut columns[2]),
        total: summarize(&mut totals),
        acceptance_rate,
        retained: n,
        warnings,
        boundary_pileup,
        samples,
    })
}

/// Cholesky factor of the scaled sample covariance, regularized by the
/// initial scales.
fn empirical_cholesky(samples: &[Vector3<f64>], floor: &[f64; 3]) -> Option<Matrix3<f64>> {
    let n = samples.len() as f64;
    let mean = samples.iter().fold(Vector3::zeros(), |a, s| a + s) / n;
    let mut cov = samples.iter().fold(Matrix3::zeros(), |a, s| {
        a + (s - mean) * (s - mean).transpose()
    }) / (n - 1.0);
    cov *= 2.38f64.powi(2) / 3.0;
    for i in 0..3 {
        cov[(i, i)] += (1e-3 * floor[i]).powi(2);
    }
    cov.cholesky().map(|c| c.l())
}
