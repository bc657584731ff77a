//! Bohmian guidance: the velocity field, trajectory integration and the
//! closed-form center-of-mass comparators.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packets::{evaluate_packet, sigma_t, PhysicalConfig, SlitSign, Variant, WaveFunction};

/// A configuration counts as a node when `|psi|^2` is below this fraction of
/// the squared sum of its term moduli (the value it would take without
/// destructive interference).
pub const NODE_THRESHOLD: f64 = 1e-12;

/// `(v1, v2) = (hbar/m) Im(grad_i psi / psi)`.
pub fn velocity_field(wf: &WaveFunction, y1: f64, y2: f64, t: f64) -> Result<(f64, f64)> {
    let lg = wf.log_gradient(y1, y2, t)?;
    if !(lg.coherence >= NODE_THRESHOLD) {
        return Err(Error::NodeProximity { y1, y2, t });
    }
    let c = wf.config();
    let scale = c.hbar / c.mass;
    Ok((scale * lg.d1.im, scale * lg.d2.im))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    /// Step-doubling tolerance in units of `sigma0`.
    pub tol: f64,
    /// Number of equal intervals at which the path is recorded.
    pub record_intervals: usize,
    /// Largest displacement per step in units of `sigma0`.
    pub max_displacement: f64,
    pub max_halvings: u32,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            record_intervals: 64,
            max_displacement: 0.05,
            max_halvings: 20,
        }
    }
}

impl IntegratorOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    pub y1: f64,
    pub y2: f64,
}

impl PathPoint {
    pub fn center_of_mass(&self) -> f64 {
        0.5 * (self.y1 + self.y2)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryFlags {
    pub node_proximity: bool,
    pub step_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub initial: (f64, f64),
    pub path: Vec<PathPoint>,
    pub flags: TrajectoryFlags,
    /// Last recorded positions; equal to the screen arrival for usable trajectories.
    pub final_positions: (f64, f64),
}

impl TrajectoryPair {
    /// Usable in statistics: converged and never near a node.
    pub fn is_usable(&self) -> bool {
        self.flags.step_converged && !self.flags.node_proximity
    }

    pub fn com_path(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.path.iter().map(|p| (p.t, p.center_of_mass()))
    }

    /// Largest deviation of the recorded center of mass from `y0 sqrt(1 + tau^2)`.
    pub fn max_com_residual(&self, config: &PhysicalConfig) -> f64 {
        let y0 = 0.5 * (self.initial.0 + self.initial.1);
        self.path
            .iter()
            .map(|p| (p.center_of_mass() - com_trajectory_closed_form(y0, config.tau(p.t))).abs())
            .fold(0.0, f64::max)
    }
}

type State = [f64; 2];

fn velocity(wf: &WaveFunction, y: State, t: f64) -> Result<State> {
    let (a, b) = velocity_field(wf, y[0], y[1], t)?;
    Ok([a, b])
}

fn axpy(y: State, h: f64, k: State) -> State {
    [y[0] + h * k[0], y[1] + h * k[1]]
}

/// Classical RK4 step with a precomputed first stage.
fn rk4_step(wf: &WaveFunction, y: State, t: f64, h: f64, k1: State) -> Result<State> {
    let k2 = velocity(wf, axpy(y, 0.5 * h, k1), t + 0.5 * h)?;
    let k3 = velocity(wf, axpy(y, 0.5 * h, k2), t + 0.5 * h)?;
    let k4 = velocity(wf, axpy(y, h, k3), t + h)?;
    Ok([
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ])
}

enum StepOutcome {
    Accepted { y: State, h_used: f64, err: f64 },
    Node,
    Stalled,
}

/// Tries `h, h/2, h/4, ...` until both the displacement bound and the
/// step-doubling error bound hold.
fn controlled_step(wf: &WaveFunction, y: State, t: f64, h0: f64, opts: &IntegratorOptions, sigma0: f64) -> StepOutcome {
    let k1 = match velocity(wf, y, t) {
        Ok(k) => k,
        Err(Error::NodeProximity { .. }) => return StepOutcome::Node,
        Err(_) => return StepOutcome::Stalled,
    };
    let speed = k1[0].abs().max(k1[1].abs());
    let mut h = h0;
    for _ in 0..=opts.max_halvings {
        if speed * h <= opts.max_displacement * sigma0 {
            let attempt = (|| -> Result<(State, f64)> {
                let full = rk4_step(wf, y, t, h, k1)?;
                let mid = rk4_step(wf, y, t, 0.5 * h, k1)?;
                let k_mid = velocity(wf, mid, t + 0.5 * h)?;
                let half = rk4_step(wf, mid, t + 0.5 * h, 0.5 * h, k_mid)?;
                let err = (full[0] - half[0]).abs().max((full[1] - half[1]).abs());
                Ok((half, err))
            })();
            match attempt {
                Ok((half, err)) if err <= opts.tol * sigma0 => {
                    return StepOutcome::Accepted { y: half, h_used: h, err }
                }
                Ok(_) => {}
                Err(Error::NodeProximity { .. }) => return StepOutcome::Node,
                Err(_) => return StepOutcome::Stalled,
            }
        }
        h *= 0.5;
    }
    StepOutcome::Stalled
}

/// Integrates the guidance equation from `initial` at `t = 0` to `flight_time`.
///
/// The path is sampled at `opts.record_intervals` equal intervals. A step
/// that cannot be made acceptable within `max_halvings` halvings ends the
/// trajectory with `step_converged = false`; any velocity evaluation that
/// hits a node ends it with `node_proximity = true`.
pub fn integrate_pair(wf: &WaveFunction, initial: (f64, f64), flight_time: f64, opts: &IntegratorOptions) -> Result<TrajectoryPair> {
    if !(flight_time >= 0.0 && flight_time.is_finite()) {
        return Err(Error::InvalidArgument(format!("flight time must be finite and >= 0, got {flight_time}")));
    }
    if !(initial.0.is_finite() && initial.1.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite initial positions {initial:?}")));
    }
    if !(opts.tol > 0.0) || opts.record_intervals == 0 {
        return Err(Error::InvalidArgument("integrator tolerance and record count must be positive".into()));
    }
    let sigma0 = wf.config().sigma0;
    let mut flags = TrajectoryFlags {
        node_proximity: false,
        step_converged: true,
    };
    let mut path = vec![PathPoint {
        t: 0.0,
        y1: initial.0,
        y2: initial.1,
    }];
    if flight_time == 0.0 {
        if velocity(wf, [initial.0, initial.1], 0.0).is_err() {
            flags.node_proximity = true;
        }
        return Ok(TrajectoryPair {
            initial,
            path,
            flags,
            final_positions: initial,
        });
    }

    let mut y: State = [initial.0, initial.1];
    let mut t = 0.0;
    let interval = flight_time / opts.record_intervals as f64;
    let mut h = interval;
    'records: for k in 1..=opts.record_intervals {
        let t_rec = if k == opts.record_intervals {
            flight_time
        } else {
            interval * k as f64
        };
        while t < t_rec {
            let remaining = t_rec - t;
            let trial = h.min(remaining);
            match controlled_step(wf, y, t, trial, opts, sigma0) {
                StepOutcome::Accepted { y: next, h_used, err } => {
                    y = next;
                    if h_used == remaining {
                        t = t_rec;
                    } else {
                        t += h_used;
                    }
                    let growth = if err > 0.0 {
                        (0.9 * (opts.tol * sigma0 / err).powf(0.2)).clamp(0.2, 2.0)
                    } else {
                        2.0
                    };
                    h = (h_used * growth).min(interval);
                }
                StepOutcome::Node => {
                    flags.node_proximity = true;
                    break 'records;
                }
                StepOutcome::Stalled => {
                    flags.step_converged = false;
                    break 'records;
                }
            }
        }
        path.push(PathPoint { t, y1: y[0], y2: y[1] });
    }
    let last = path[path.len() - 1];
    Ok(TrajectoryPair {
        initial,
        path,
        flags,
        final_positions: (last.y1, last.y2),
    })
}

/// Center of mass `y0 sqrt(1 + tau^2)` of the entangled pair.
pub fn com_trajectory_closed_form(y0: f64, tau: f64) -> f64 {
    y0 * (1.0 + tau * tau).sqrt()
}

/// Center-of-mass velocity of the unentangled product state written as a
/// spreading term plus the `A(1)A(2) - B(1)B(2)` correction.
pub fn com_velocity_unentangled(wf: &WaveFunction, y1: f64, y2: f64, t: f64) -> Result<f64> {
    if wf.variant() != Variant::UnentangledProduct {
        return Err(Error::InvalidArgument(format!(
            "closed-form COM velocity needs the unentangled product state, got {:?}",
            wf.variant()
        )));
    }
    let c = wf.config();
    let psi = wf.evaluate(y1, y2, t)?;
    let peak = wf.log_gradient(y1, y2, t)?;
    if !(peak.coherence >= NODE_THRESHOLD) {
        return Err(Error::NodeProximity { y1, y2, t });
    }
    let rate = c.hbar / (2.0 * c.mass * c.sigma0 * c.sigma0);
    let y = 0.5 * (y1 + y2);
    let spreading = rate * rate * y * t / (1.0 + rate * rate * t * t);

    let a1 = evaluate_packet(c, SlitSign::Upper, y1, t)?;
    let a2 = evaluate_packet(c, SlitSign::Upper, y2, t)?;
    let b1 = evaluate_packet(c, SlitSign::Lower, y1, t)?;
    let b2 = evaluate_packet(c, SlitSign::Lower, y2, t)?;
    let st = sigma_t(c, t);
    let factor = Complex64::new(c.slit_offset + c.transverse_velocity() * t, 0.0) / (c.sigma0 * st)
        + Complex64::new(0.0, 2.0 * c.ky);
    let correction = wf.normalization() * c.hbar / (2.0 * c.mass) * (factor * (a1 * a2 - b1 * b2) / psi).im;
    Ok(spreading + correction)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Above,
    Below,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Above => 1.0,
            Side::Below => -1.0,
        }
    }
}

/// Far-field fringe maximum `± n pi hbar t / (Y m)`.
pub fn fringe_maxima(n: u32, side: Side, t: f64, config: &PhysicalConfig) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("fringe index must be >= 1".into()));
    }
    if config.slit_offset == 0.0 {
        return Err(Error::UndefinedFringe);
    }
    Ok(side.sign() * f64::from(n) * fringe_spacing(t, config)?)
}

pub fn fringe_spacing(t: f64, config: &PhysicalConfig) -> Result<f64> {
    if config.slit_offset == 0.0 {
        return Err(Error::UndefinedFringe);
    }
    Ok(PI * config.hbar * t / (config.slit_offset * config.mass))
}

/// Width `(hbar t / m sigma0^2) <y0> = 2 tau <y0>` of the low-intensity
/// interval left by selective detection.
pub fn empty_interval_length(mean_y0: f64, tau: f64) -> f64 {
    2.0 * tau * mean_y0
}
