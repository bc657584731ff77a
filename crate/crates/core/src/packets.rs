//! Single-slit Gaussian packets and the composite two-particle wavefunctions
//! built from them.
//!
//! Only the transverse (y) factor of each packet is evaluated. The plane wave
//! along x contributes a global phase and the x motion is ballistic, so the
//! flight time `t` is the only evolution parameter.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_2d, QuadratureOptions, Rect};

pub type ComplexAmplitude = Complex64;

/// Half-width of the quadrature box, in packet standard deviations.
pub const TRUNCATION_SIGMAS: f64 = 12.0;

/// Experiment parameters. Lengths are in units of `sigma0` when the natural
/// defaults (`hbar = mass = sigma0 = 1`) are used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConfig {
    /// Packet half-width at the slits.
    pub sigma0: f64,
    /// Distance `Y` of each slit center from the x-axis.
    pub slit_offset: f64,
    /// Transverse wavenumber `k_y`.
    pub ky: f64,
    pub mass: f64,
    pub hbar: f64,
    /// Detector window width used by joint detection probabilities.
    pub detector_width: f64,
    /// Evolution time from the slits to the screen.
    pub flight_time: f64,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            slit_offset: 1.0,
            ky: 0.0,
            mass: 1.0,
            hbar: 1.0,
            detector_width: 0.5,
            flight_time: 2.0,
        }
    }
}

impl PhysicalConfig {
    /// Natural units with the given slit offset and `k_y = 0`, screen at `tau = 1`.
    pub fn natural(slit_offset: f64) -> Self {
        Self {
            slit_offset,
            ..Self::default()
        }
    }

    /// Moves the screen so that the flight ends at spreading parameter `tau`.
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.flight_time = self.time_for_tau(tau);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma0", self.sigma0),
            ("slit_offset", self.slit_offset),
            ("ky", self.ky),
            ("mass", self.mass),
            ("hbar", self.hbar),
            ("detector_width", self.detector_width),
            ("flight_time", self.flight_time),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in [
            ("sigma0", self.sigma0),
            ("mass", self.mass),
            ("hbar", self.hbar),
            ("detector_width", self.detector_width),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.flight_time < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "flight_time must be >= 0, got {}",
                self.flight_time
            )));
        }
        if self.slit_offset < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "slit_offset must be >= 0, got {}",
                self.slit_offset
            )));
        }
        Ok(())
    }

    /// Spreading parameter `hbar t / (2 m sigma0^2)`.
    pub fn tau(&self, t: f64) -> f64 {
        self.hbar * t / (2.0 * self.mass * self.sigma0 * self.sigma0)
    }

    pub fn time_for_tau(&self, tau: f64) -> f64 {
        tau * 2.0 * self.mass * self.sigma0 * self.sigma0 / self.hbar
    }

    pub fn flight_tau(&self) -> f64 {
        self.tau(self.flight_time)
    }

    /// `u_y = hbar k_y / m`.
    pub fn transverse_velocity(&self) -> f64 {
        self.hbar * self.ky / self.mass
    }

    /// Center of the |packet|^2 profile of the given slit at time `t`.
    pub fn packet_center(&self, slit: SlitSign, t: f64) -> f64 {
        slit.value() * (self.slit_offset + self.transverse_velocity() * t)
    }

    /// Half-width of the symmetric quadrature box at time `t`.
    pub fn truncation_half_width(&self, t: f64) -> f64 {
        (self.slit_offset + self.transverse_velocity() * t).abs() + TRUNCATION_SIGMAS * sigma_t(self, t).norm()
    }

    pub fn truncation_box(&self, t: f64) -> Rect {
        let h = self.truncation_half_width(t);
        Rect::square(-h, h)
    }
}

/// Which slit of a double slit a packet leaves from: `Upper` is centered at
/// `+Y` (slit A), `Lower` at `-Y` (slit B).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlitSign {
    Upper,
    Lower,
}

impl SlitSign {
    pub fn value(self) -> f64 {
        match self {
            SlitSign::Upper => 1.0,
            SlitSign::Lower => -1.0,
        }
    }

    fn index(self) -> usize {
        match self {
            SlitSign::Upper => 0,
            SlitSign::Lower => 1,
        }
    }
}

/// Complex width `sigma0 (1 + i tau)`.
pub fn sigma_t(config: &PhysicalConfig, t: f64) -> Complex64 {
    Complex64::new(config.sigma0, config.sigma0 * config.tau(t))
}

/// Log-amplitude of a packet together with its logarithmic y-derivative.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PacketLog {
    pub exponent: Complex64,
    pub log_derivative: Complex64,
}

pub(crate) fn packet_log(config: &PhysicalConfig, slit: SlitSign, y: f64, t: f64) -> Result<PacketLog> {
    let s = slit.value();
    let u = config.transverse_velocity();
    let st = sigma_t(config, t);
    let shift = s * y - config.slit_offset - u * t;
    let denom = 4.0 * config.sigma0 * st;
    // (2 pi sigma_t^2)^(-1/4), principal branch; arg(sigma_t) stays in [0, pi/2).
    let log_prefactor = -0.25 * (2.0 * PI).ln() - 0.5 * st.ln();
    let exponent = -Complex64::new(shift * shift, 0.0) / denom
        + Complex64::new(0.0, config.ky * (s * y - config.slit_offset - 0.5 * u * t))
        + log_prefactor;
    if !(exponent.re.is_finite() && exponent.im.is_finite()) {
        return Err(Error::AmplitudeUnderflow { coordinate: y });
    }
    let log_derivative = s * (-Complex64::new(2.0 * shift, 0.0) / denom + Complex64::new(0.0, config.ky));
    Ok(PacketLog {
        exponent,
        log_derivative,
    })
}

/// Transverse factor of a slit packet at `(y, t)`.
pub fn evaluate_packet(config: &PhysicalConfig, slit: SlitSign, y: f64, t: f64) -> Result<ComplexAmplitude> {
    Ok(packet_log(config, slit, y, t)?.exponent.exp())
}

/// Closed-form `d/dy` of [`evaluate_packet`].
pub fn packet_gradient_y(config: &PhysicalConfig, slit: SlitSign, y: f64, t: f64) -> Result<ComplexAmplitude> {
    let p = packet_log(config, slit, y, t)?;
    Ok(p.log_derivative * p.exponent.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `N [A(1) B(2) ± A(2) B(1)]`.
    EntangledTwoSlit,
    /// `N [A(1) + B(1)] [A(2) + B(2)]`.
    UnentangledProduct,
    /// Two double slits fed by an EPR-type source.
    EntangledFourSlit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeSign {
    Symmetric,
    Antisymmetric,
}

impl ExchangeSign {
    pub fn value(self) -> f64 {
        match self {
            ExchangeSign::Symmetric => 1.0,
            ExchangeSign::Antisymmetric => -1.0,
        }
    }
}

/// One product `coeff * P_first(y1) * P_second(y2)` of the composite wavefunction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Term {
    pub coeff: f64,
    pub first: SlitSign,
    pub second: SlitSign,
}

impl Term {
    const fn new(coeff: f64, first: SlitSign, second: SlitSign) -> Self {
        Self { coeff, first, second }
    }
}

fn terms_for(variant: Variant, exchange: ExchangeSign) -> Vec<Term> {
    use SlitSign::{Lower, Upper};
    match variant {
        Variant::EntangledTwoSlit => vec![
            Term::new(1.0, Upper, Lower),
            Term::new(exchange.value(), Lower, Upper),
        ],
        Variant::UnentangledProduct => vec![
            Term::new(1.0, Upper, Upper),
            Term::new(1.0, Upper, Lower),
            Term::new(1.0, Lower, Upper),
            Term::new(1.0, Lower, Lower),
        ],
        // Slits A, B sit on the right screen and A', B' on the left one; A/A'
        // share the upper y-position, B/B' the lower. Particle 1 is taken to
        // reach the right screen, which leaves the A(1)B'(2) + B(1)A'(2)
        // branch. The exchanged branch has disjoint x-support and only
        // contributes a global factor (the exchange sign).
        Variant::EntangledFourSlit => vec![
            Term::new(1.0, Upper, Lower),
            Term::new(1.0, Lower, Upper),
        ],
    }
}

/// Log-derivatives of the wavefunction plus a coherence measure.
#[derive(Debug, Clone, Copy)]
pub struct LogGradient {
    /// `(d psi / d y1) / psi`
    pub d1: Complex64,
    /// `(d psi / d y2) / psi`
    pub d2: Complex64,
    /// `|psi|^2 / (sum_j |term_j|)^2`, in `[0, 1]`. Zero at a node.
    pub coherence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    variant: Variant,
    exchange: ExchangeSign,
    config: PhysicalConfig,
    normalization: f64,
    terms: Vec<Term>,
}

/// Builds a wavefunction and fixes its normalization constant by quadrature at `t = 0`.
pub fn build_wavefunction(variant: Variant, exchange: ExchangeSign, config: PhysicalConfig) -> Result<WaveFunction> {
    config.validate()?;
    let exchange = match variant {
        Variant::UnentangledProduct => ExchangeSign::Symmetric,
        _ => exchange,
    };
    let mut wf = WaveFunction {
        variant,
        exchange,
        config,
        normalization: 1.0,
        terms: terms_for(variant, exchange),
    };
    let opts = QuadratureOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-13,
        max_regions: 60_000,
        initial_cells: 6,
    };
    let raw = integrate_2d(|a, b| wf.density_or_nan(a, b, 0.0), config.truncation_box(0.0), &opts)?;
    if !(raw.value.is_finite() && raw.value > 1e-200) {
        return Err(Error::Degenerate { norm: raw.value });
    }
    wf.normalization = raw.value.sqrt().recip();
    Ok(wf)
}

impl WaveFunction {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn exchange(&self) -> ExchangeSign {
        self.exchange
    }

    pub fn config(&self) -> &PhysicalConfig {
        &self.config
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub(crate) fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Packet log-amplitudes indexed `[particle][slit]`.
    fn packet_table(&self, y1: f64, y2: f64, t: f64) -> Result<[[PacketLog; 2]; 2]> {
        let c = &self.config;
        Ok([
            [
                packet_log(c, SlitSign::Upper, y1, t)?,
                packet_log(c, SlitSign::Lower, y1, t)?,
            ],
            [
                packet_log(c, SlitSign::Upper, y2, t)?,
                packet_log(c, SlitSign::Lower, y2, t)?,
            ],
        ])
    }

    pub fn evaluate(&self, y1: f64, y2: f64, t: f64) -> Result<ComplexAmplitude> {
        let table = self.packet_table(y1, y2, t)?;
        let p1 = [table[0][0].exponent.exp(), table[0][1].exponent.exp()];
        let p2 = [table[1][0].exponent.exp(), table[1][1].exponent.exp()];
        let sum: Complex64 = self
            .terms
            .iter()
            .map(|term| term.coeff * p1[term.first.index()] * p2[term.second.index()])
            .sum();
        Ok(sum * self.normalization)
    }

    /// Analytic `(d psi/d y1, d psi/d y2)`.
    pub fn gradient(&self, y1: f64, y2: f64, t: f64) -> Result<(ComplexAmplitude, ComplexAmplitude)> {
        let table = self.packet_table(y1, y2, t)?;
        let mut g1 = Complex64::new(0.0, 0.0);
        let mut g2 = Complex64::new(0.0, 0.0);
        for term in &self.terms {
            let a = &table[0][term.first.index()];
            let b = &table[1][term.second.index()];
            let value = term.coeff * (a.exponent + b.exponent).exp();
            g1 += a.log_derivative * value;
            g2 += b.log_derivative * value;
        }
        Ok((g1 * self.normalization, g2 * self.normalization))
    }

    pub fn density(&self, y1: f64, y2: f64, t: f64) -> Result<f64> {
        Ok(self.evaluate(y1, y2, t)?.norm_sqr())
    }

    pub(crate) fn density_or_nan(&self, y1: f64, y2: f64, t: f64) -> f64 {
        self.density(y1, y2, t).unwrap_or(f64::NAN)
    }

    /// Term weights rescaled by the largest term modulus; returns the weights
    /// and the log of the scale.
    fn scaled_terms(&self, table: &[[PacketLog; 2]; 2]) -> (Vec<Complex64>, f64) {
        let exps: Vec<Complex64> = self
            .terms
            .iter()
            .map(|term| table[0][term.first.index()].exponent + table[1][term.second.index()].exponent)
            .collect();
        let top = exps.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
        let weights = self
            .terms
            .iter()
            .zip(&exps)
            .map(|(term, e)| term.coeff * (e - top).exp())
            .collect();
        (weights, top)
    }

    /// `ln |psi|^2`, finite even where the amplitude itself underflows.
    pub fn log_density(&self, y1: f64, y2: f64, t: f64) -> Result<f64> {
        let table = self.packet_table(y1, y2, t)?;
        let (weights, top) = self.scaled_terms(&table);
        let sum: Complex64 = weights.iter().sum();
        Ok(sum.norm_sqr().ln() + 2.0 * top + 2.0 * self.normalization.ln())
    }

    /// Log-derivatives evaluated in rescaled form, so they stay finite in
    /// the far tails of the packets.
    pub fn log_gradient(&self, y1: f64, y2: f64, t: f64) -> Result<LogGradient> {
        let table = self.packet_table(y1, y2, t)?;
        let (weights, _) = self.scaled_terms(&table);
        let mut psi = Complex64::new(0.0, 0.0);
        let mut n1 = Complex64::new(0.0, 0.0);
        let mut n2 = Complex64::new(0.0, 0.0);
        let mut incoherent = 0.0;
        for (term, w) in self.terms.iter().zip(&weights) {
            psi += w;
            n1 += table[0][term.first.index()].log_derivative * w;
            n2 += table[1][term.second.index()].log_derivative * w;
            incoherent += w.norm();
        }
        let coherence = if incoherent > 0.0 {
            psi.norm_sqr() / (incoherent * incoherent)
        } else {
            0.0
        };
        Ok(LogGradient {
            d1: n1 / psi,
            d2: n2 / psi,
            coherence,
        })
    }

    /// `∫∫ |psi(y1, y2, t)|^2` over the truncation box.
    pub fn norm(&self, t: f64) -> Result<f64> {
        let opts = QuadratureOptions {
            abs_tol: 1e-11,
            rel_tol: 0.0,
            max_regions: 60_000,
            initial_cells: 6,
        };
        Ok(integrate_2d(|a, b| self.density_or_nan(a, b, t), self.config.truncation_box(t), &opts)?.value)
    }
}

/// Free function form of [`WaveFunction::evaluate`].
pub fn evaluate_wavefunction(wf: &WaveFunction, y1: f64, y2: f64, t: f64) -> Result<ComplexAmplitude> {
    wf.evaluate(y1, y2, t)
}

/// Free function form of [`WaveFunction::gradient`].
pub fn wavefunction_gradient(wf: &WaveFunction, y1: f64, y2: f64, t: f64) -> Result<(ComplexAmplitude, ComplexAmplitude)> {
    wf.gradient(y1, y2, t)
}

/// Relative discrepancy between `A(1)A(2) - B(1)B(2)` evaluated from the
/// packets and from its factored sinh-type form (valid for `k_y = 0`).
pub fn verify_expansion_identity(config: &PhysicalConfig, y1: f64, y2: f64, t: f64) -> Result<f64> {
    let a1 = evaluate_packet(config, SlitSign::Upper, y1, t)?;
    let a2 = evaluate_packet(config, SlitSign::Upper, y2, t)?;
    let b1 = evaluate_packet(config, SlitSign::Lower, y1, t)?;
    let b2 = evaluate_packet(config, SlitSign::Lower, y2, t)?;
    let direct = a1 * a2 - b1 * b2;

    let st = sigma_t(config, t);
    let ss = config.sigma0 * st;
    let shift = config.slit_offset + config.transverse_velocity() * t;
    let prefactor = Complex64::new(1.0, 0.0) / (2.0 * PI * st * st).sqrt();
    let envelope = (-Complex64::new(y1 * y1 + y2 * y2, 0.0) / (4.0 * ss)).exp()
        * (-Complex64::new(shift * shift, 0.0) / (2.0 * ss)).exp();
    let z = Complex64::new((y1 + y2) * shift, 0.0) / (2.0 * ss);
    let factored = prefactor * envelope * (z.exp() - (-z).exp());

    let scale = direct.norm().max(factored.norm());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((direct - factored).norm() / scale)
}
