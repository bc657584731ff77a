//! Initial positions drawn from `|psi(y1, y2, 0)|^2`, optionally conditioned
//! on the center of mass, and their transport to the screen.

use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{ExclusionCounts, ScreenRecord};
use crate::error::{Error, Result};
use crate::guidance::{integrate_pair, IntegratorOptions, TrajectoryPair};
use crate::packets::WaveFunction;

/// Proposal widths are this multiple of the packet width.
const PROPOSAL_INFLATION: f64 = 1.2;
const MIN_ACCEPTANCE: f64 = 1e-4;
const ACCEPTANCE_WINDOW: u64 = 10_000;

/// How the initial center of mass `y0 = (y1 + y2) / 2` is prepared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitialConstraint {
    /// Plain quantum-equilibrium sampling.
    Unconstrained,
    FixedCom { y0: f64 },
    /// `y0` from a Gaussian of mean `mean_y0` and spread `delta_y0`,
    /// truncated to `[0, inf)` when `nonnegative`.
    SpreadCom {
        mean_y0: f64,
        delta_y0: f64,
        nonnegative: bool,
    },
}

impl InitialConstraint {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialConstraint::Unconstrained => Ok(()),
            InitialConstraint::FixedCom { y0 } if y0.is_finite() => Ok(()),
            InitialConstraint::FixedCom { y0 } => Err(Error::InvalidConfig(format!("y0 must be finite, got {y0}"))),
            InitialConstraint::SpreadCom {
                mean_y0,
                delta_y0,
                nonnegative,
            } => {
                if !mean_y0.is_finite() || !delta_y0.is_finite() {
                    return Err(Error::InvalidConfig("mean_y0 and delta_y0 must be finite".into()));
                }
                if delta_y0 < 0.0 {
                    return Err(Error::InvalidConfig(format!("delta_y0 must be >= 0, got {delta_y0}")));
                }
                if nonnegative && delta_y0 == 0.0 && mean_y0 < 0.0 {
                    return Err(Error::InvalidConfig("a fixed negative y0 cannot satisfy y0 >= 0".into()));
                }
                Ok(())
            }
        }
    }

    /// `(mean, spread, nonnegative)` of the center-of-mass law, or `None` when unconstrained.
    pub fn com_law(&self) -> Option<(f64, f64, bool)> {
        match *self {
            InitialConstraint::Unconstrained => None,
            InitialConstraint::FixedCom { y0 } => Some((y0, 0.0, false)),
            InitialConstraint::SpreadCom {
                mean_y0,
                delta_y0,
                nonnegative,
            } => Some((mean_y0, delta_y0, nonnegative)),
        }
    }
}

fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + values.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

struct AcceptanceMonitor {
    attempts: u64,
    accepted: u64,
    what: &'static str,
}

impl AcceptanceMonitor {
    fn new(what: &'static str) -> Self {
        Self {
            attempts: 0,
            accepted: 0,
            what,
        }
    }

    fn record(&mut self, accepted: bool) -> Result<()> {
        self.attempts += 1;
        if accepted {
            self.accepted += 1;
        }
        if self.attempts >= ACCEPTANCE_WINDOW {
            let rate = self.accepted as f64 / self.attempts as f64;
            if rate < MIN_ACCEPTANCE {
                return Err(Error::ProposalMisfit {
                    acceptance: rate,
                    attempts: self.attempts,
                    detail: self.what.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// One Gaussian component per wavefunction term, centered on the pair of
/// slit positions the term describes.
#[derive(Debug, Clone, Copy)]
struct Component {
    weight: f64,
    center1: f64,
    center2: f64,
}

/// Rejection sampler for `|psi(y1, y2, 0)|^2`.
///
/// With `psi = N sum_j c_j T_j`, Cauchy-Schwarz gives
/// `|psi|^2 <= N^2 (sum |c|) sum_j |c_j| |T_j|^2`, and each `|T_j|^2` is a
/// product of unit-normalized Gaussians of width `sigma0`. A Gaussian of
/// width `1.2 sigma0` dominates it by at most `1.2` per dimension.
pub struct EquilibriumSampler<'a> {
    wf: &'a WaveFunction,
    components: Vec<Component>,
    coeff_sum: f64,
    log_bound: f64,
    width: f64,
}

impl<'a> EquilibriumSampler<'a> {
    pub fn new(wf: &'a WaveFunction) -> Result<Self> {
        let c = wf.config();
        let coeff_sum: f64 = wf.terms().iter().map(|t| t.coeff.abs()).sum();
        let components = wf
            .terms()
            .iter()
            .map(|t| Component {
                weight: t.coeff.abs() / coeff_sum,
                center1: c.packet_center(t.first, 0.0),
                center2: c.packet_center(t.second, 0.0),
            })
            .collect();
        let log_bound = 2.0 * PROPOSAL_INFLATION.ln() + 2.0 * wf.normalization().ln() + 2.0 * coeff_sum.ln();
        let sampler = Self {
            wf,
            components,
            coeff_sum,
            log_bound,
            width: PROPOSAL_INFLATION * c.sigma0,
        };
        sampler.verify_envelope()?;
        Ok(sampler)
    }

    fn log_proposal(&self, y1: f64, y2: f64) -> f64 {
        let parts: Vec<f64> = self
            .components
            .iter()
            .map(|k| {
                k.weight.ln() + log_normal_pdf(y1, k.center1, self.width) + log_normal_pdf(y2, k.center2, self.width)
            })
            .collect();
        log_sum_exp(&parts)
    }

    /// Checks the envelope on a grid over the truncation box.
    fn verify_envelope(&self) -> Result<()> {
        let h = self.wf.config().truncation_half_width(0.0);
        let n = 161;
        let mut worst = f64::NEG_INFINITY;
        for i in 0..n {
            let y1 = -h + 2.0 * h * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let y2 = -h + 2.0 * h * j as f64 / (n - 1) as f64;
                let excess = self.wf.log_density(y1, y2, 0.0)? - self.log_bound - self.log_proposal(y1, y2);
                worst = worst.max(excess);
            }
        }
        if worst > 1e-9 {
            return Err(Error::ProposalMisfit {
                acceptance: 0.0,
                attempts: 0,
                detail: format!("envelope violated on build grid by log-ratio {worst:e}"),
            });
        }
        Ok(())
    }

    pub fn sample_joint<R: Rng>(&self, rng: &mut R, monitor: &mut AcceptanceMonitorHandle) -> Result<(f64, f64)> {
        let pick = WeightedIndex::new(self.components.iter().map(|k| k.weight))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        loop {
            let k = self.components[pick.sample(rng)];
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let (y1, y2) = (k.center1 + self.width * z1, k.center2 + self.width * z2);
            let u: f64 = rng.gen();
            let ratio = self.wf.log_density(y1, y2, 0.0)? - self.log_bound - self.log_proposal(y1, y2);
            let accept = u.ln() < ratio;
            monitor.0.record(accept)?;
            if accept {
                return Ok((y1, y2));
            }
        }
    }

    /// Draws the half-separation `r` on the line `y1 + y2 = 2 s`, so that
    /// `(y1, y2) = (s + r, s - r)`.
    ///
    /// Restricted to the line, `|T_j|^2` is a Gaussian in `r` of variance
    /// `sigma0^2 / 2` centered at `(c1 - c2) / 2` with mass
    /// `exp(-(c1 + c2 - 2 s)^2 / 4 sigma0^2) / (2 sigma0 sqrt(pi))`.
    pub fn sample_on_line<R: Rng>(&self, s: f64, rng: &mut R, monitor: &mut AcceptanceMonitorHandle) -> Result<(f64, f64)> {
        let sigma0 = self.wf.config().sigma0;
        let log_mass: Vec<f64> = self
            .components
            .iter()
            .map(|k| {
                let d = k.center1 + k.center2 - 2.0 * s;
                (k.weight * self.coeff_sum).ln() - d * d / (4.0 * sigma0 * sigma0) - (2.0 * sigma0 * PI.sqrt()).ln()
            })
            .collect();
        let total = log_sum_exp(&log_mass);
        let weights: Vec<f64> = log_mass.iter().map(|m| (m - total).exp()).collect();
        let centers: Vec<f64> = self.components.iter().map(|k| 0.5 * (k.center1 - k.center2)).collect();
        let width = PROPOSAL_INFLATION * sigma0 / 2f64.sqrt();
        let log_bound = PROPOSAL_INFLATION.ln() + 2.0 * self.wf.normalization().ln() + self.coeff_sum.ln() + total;
        let pick = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let log_q = |r: f64| {
            let parts: Vec<f64> = weights
                .iter()
                .zip(&centers)
                .map(|(w, c)| w.ln() + log_normal_pdf(r, *c, width))
                .collect();
            log_sum_exp(&parts)
        };
        loop {
            let j = pick.sample(rng);
            let z: f64 = rng.sample(StandardNormal);
            let r = centers[j] + width * z;
            let (y1, y2) = (s + r, s - r);
            let u: f64 = rng.gen();
            let ratio = self.wf.log_density(y1, y2, 0.0)? - log_bound - log_q(r);
            let accept = u.ln() < ratio;
            monitor.0.record(accept)?;
            if accept {
                return Ok((y1, y2));
            }
        }
    }
}

/// Acceptance bookkeeping shared across draws of one sampling stream.
pub struct AcceptanceMonitorHandle(AcceptanceMonitor);

impl AcceptanceMonitorHandle {
    pub fn new(what: &'static str) -> Self {
        Self(AcceptanceMonitor::new(what))
    }

    pub fn acceptance(&self) -> f64 {
        if self.0.attempts == 0 {
            return 1.0;
        }
        self.0.accepted as f64 / self.0.attempts as f64
    }
}

fn draw_com<R: Rng>(rng: &mut R, mean: f64, spread: f64, nonnegative: bool, monitor: &mut AcceptanceMonitorHandle) -> Result<f64> {
    if spread == 0.0 {
        return Ok(mean);
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let s = mean + spread * z;
        let ok = !nonnegative || s >= 0.0;
        monitor.0.record(ok)?;
        if ok {
            return Ok(s);
        }
    }
}

/// `n` initial configurations, reproducible for a given `seed`.
pub fn sample_initial_positions(wf: &WaveFunction, constraint: &InitialConstraint, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    constraint.validate()?;
    let sampler = EquilibriumSampler::new(wf)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    match constraint.com_law() {
        None => {
            let mut monitor = AcceptanceMonitorHandle::new("joint |psi|^2 rejection sampler");
            for _ in 0..n {
                out.push(sampler.sample_joint(&mut rng, &mut monitor)?);
            }
        }
        Some((mean, spread, nonnegative)) => {
            let mut com_monitor = AcceptanceMonitorHandle::new("truncated center-of-mass law");
            let mut line_monitor = AcceptanceMonitorHandle::new("conditional |psi|^2 on the center-of-mass line");
            for _ in 0..n {
                let s = draw_com(&mut rng, mean, spread, nonnegative, &mut com_monitor)?;
                out.push(sampler.sample_on_line(s, &mut rng, &mut line_monitor)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationOptions {
    pub integrator: IntegratorOptions,
    /// Full paths are retained for the first `keep_paths` pairs.
    pub keep_paths: usize,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            integrator: IntegratorOptions::default(),
            keep_paths: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    /// One record per usable trajectory, in input order.
    pub records: Vec<ScreenRecord>,
    pub excluded: ExclusionCounts,
    pub kept_paths: Vec<(usize, TrajectoryPair)>,
    /// Largest `|COM(t) - y0 sqrt(1 + tau^2)|` over usable trajectories.
    pub max_com_residual: f64,
    /// Mean initial center of mass over all samples.
    pub mean_initial_com: f64,
}

/// Transports every sample to `flight_time`. Failed trajectories are
/// counted in `excluded`, never dropped silently.
pub fn propagate_ensemble(wf: &WaveFunction, samples: &[(f64, f64)], flight_time: f64, opts: &PropagationOptions) -> Result<EnsembleRun> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to propagate".into()));
    }
    let config = *wf.config();
    let outcomes: Vec<(Option<TrajectoryPair>, bool)> = samples
        .par_iter()
        .map(|&initial| match integrate_pair(wf, initial, flight_time, &opts.integrator) {
            Ok(tr) => {
                let node = tr.flags.node_proximity;
                (Some(tr), node)
            }
            Err(_) => (None, false),
        })
        .collect();

    let mut records = Vec::with_capacity(samples.len());
    let mut excluded = ExclusionCounts::default();
    let mut kept_paths = Vec::new();
    let mut max_com_residual: f64 = 0.0;
    for (index, (outcome, node)) in outcomes.into_iter().enumerate() {
        match outcome {
            Some(tr) if tr.is_usable() => {
                records.push(ScreenRecord::new(index, tr.final_positions));
                max_com_residual = max_com_residual.max(tr.max_com_residual(&config));
                if index < opts.keep_paths {
                    kept_paths.push((index, tr));
                }
            }
            Some(_) if node => excluded.node_proximity += 1,
            _ => excluded.not_converged += 1,
        }
    }
    let mean_initial_com = samples.iter().map(|s| 0.5 * (s.0 + s.1)).sum::<f64>() / samples.len() as f64;
    Ok(EnsembleRun {
        records,
        excluded,
        kept_paths,
        max_com_residual,
        mean_initial_com,
    })
}
