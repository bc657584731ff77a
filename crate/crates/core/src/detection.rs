//! Born-rule detection probabilities and the screen statistics extracted from
//! trajectory ensembles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::Side;
use crate::packets::WaveFunction;
use crate::quadrature::{integrate_2d, QuadratureOptions, Rect};

/// Arrival of one pair at the screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenRecord {
    pub pair_index: usize,
    pub arrival: (f64, f64),
    pub accepted_by_selective_detection: bool,
}

impl ScreenRecord {
    pub fn new(pair_index: usize, arrival: (f64, f64)) -> Self {
        Self {
            pair_index,
            arrival,
            accepted_by_selective_detection: true,
        }
    }

    /// Strictly on opposite sides of the axis; arrivals on the axis belong to neither side.
    pub fn opposite_sides(&self) -> bool {
        self.arrival.0 * self.arrival.1 < 0.0
    }

    pub fn same_side(&self) -> bool {
        self.arrival.0 * self.arrival.1 > 0.0
    }
}

/// Equal-width histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, bin_width: f64, bins: usize) -> Self {
        Self {
            lo,
            bin_width,
            counts: vec![0; bins],
        }
    }

    /// Bins aligned so that zero is an edge, covering `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, bin_width: f64) -> Self {
        let half = ((half_width / bin_width).ceil() as usize).max(1);
        Self::new(-(half as f64) * bin_width, bin_width, 2 * half)
    }

    /// Symmetric, zero-aligned histogram wide enough for every value.
    pub fn from_values<I: IntoIterator<Item = f64> + Clone>(values: I, bin_width: f64) -> Self {
        let reach = values.clone().into_iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut h = Self::symmetric(reach.max(bin_width), bin_width);
        for v in values {
            h.add(v);
        }
        h
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.bin_width * self.counts.len() as f64
    }

    pub fn bin_of(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v <= self.hi()) {
            return None;
        }
        let i = ((v - self.lo) / self.bin_width).floor() as usize;
        Some(i.min(self.counts.len() - 1))
    }

    /// Adds a value; returns false when it falls outside the range.
    pub fn add(&mut self, v: f64) -> bool {
        match self.bin_of(v) {
            Some(i) => {
                self.counts[i] += 1;
                true
            }
            None => false,
        }
    }

    pub fn bin_lo(&self, i: usize) -> f64 {
        self.lo + self.bin_width * i as f64
    }

    pub fn bin_hi(&self, i: usize) -> f64 {
        self.lo + self.bin_width * (i + 1) as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + self.bin_width * (i as f64 + 0.5)
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.counts.len()).map(|i| self.bin_lo(i)).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.counts.iter().map(|&c| if n > 0.0 { c as f64 / n } else { 0.0 }).collect()
    }
}

/// Square 2D histogram over `(Y1, Y2)`, row-major in `Y1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub lo: f64,
    pub bin_width: f64,
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl JointHistogram {
    pub fn from_records(records: &[ScreenRecord], bin_width: f64) -> Self {
        let axis = Histogram::from_values(records.iter().flat_map(|r| [r.arrival.0, r.arrival.1]), bin_width);
        let bins = axis.counts.len();
        let mut counts = vec![0; bins * bins];
        for r in records {
            if let (Some(i), Some(j)) = (axis.bin_of(r.arrival.0), axis.bin_of(r.arrival.1)) {
                counts[i * bins + j] += 1;
            }
        }
        Self {
            lo: axis.lo,
            bin_width,
            bins,
            counts,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.bins + j]
    }
}

/// Born-rule probability of `|psi|^2` over `rect` at time `t`.
pub fn window_probability(wf: &WaveFunction, rect: Rect, t: f64, opts: &QuadratureOptions) -> Result<f64> {
    Ok(integrate_2d(|a, b| wf.density_or_nan(a, b, t), rect, opts)?.value)
}

/// Probability of a simultaneous click in `[Q1, Q1 + Δ] x [Q2, Q2 + Δ]`,
/// with `Δ` the configured detector width.
pub fn joint_detection_probability(wf: &WaveFunction, q1: f64, q2: f64, t: f64) -> Result<f64> {
    let d = wf.config().detector_width;
    if !(d > 0.0) {
        return Err(Error::InvalidArgument(format!("detector width must be > 0, got {d}")));
    }
    window_probability(wf, Rect::new(q1, q1 + d, q2, q2 + d), t, &QuadratureOptions::with_abs_tol(1e-9))
}

/// Probability that both particles are found on the same side of the axis.
pub fn probability_same_side(wf: &WaveFunction, t: f64) -> Result<f64> {
    probability_same_side_with(wf, t, &QuadratureOptions::with_abs_tol(1e-10))
}

pub fn probability_same_side_with(wf: &WaveFunction, t: f64, opts: &QuadratureOptions) -> Result<f64> {
    let (upper, lower) = same_side_quadrants(wf, t, opts)?;
    Ok(upper + lower)
}

/// `(P(y1 > 0, y2 > 0), P(y1 < 0, y2 < 0))`.
pub fn same_side_quadrants(wf: &WaveFunction, t: f64, opts: &QuadratureOptions) -> Result<(f64, f64)> {
    let h = wf.config().truncation_half_width(t);
    let upper = window_probability(wf, Rect::square(0.0, h), t, opts)?;
    let lower = window_probability(wf, Rect::square(-h, 0.0), t, opts)?;
    Ok((upper, lower))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Particle {
    First,
    Second,
}

/// Single-particle Born marginal integrated over each bin of `layout`.
pub fn marginal_bin_probabilities(wf: &WaveFunction, particle: Particle, t: f64, layout: &Histogram) -> Result<Vec<f64>> {
    let h = wf.config().truncation_half_width(t);
    let opts = QuadratureOptions {
        abs_tol: 1e-11,
        initial_cells: 2,
        ..QuadratureOptions::default()
    };
    (0..layout.counts.len())
        .into_par_iter()
        .map(|i| {
            let (a, b) = (layout.bin_lo(i), layout.bin_hi(i));
            let rect = match particle {
                Particle::First => Rect::new(a, b, -h, h),
                Particle::Second => Rect::new(-h, h, a, b),
            };
            window_probability(wf, rect, t, &opts)
        })
        .collect()
}

/// `sum_i |p_i - q_i|`.
pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// Fraction of accepted records with `|Y1 + Y2| < epsilon`.
pub fn symmetry_statistic(records: &[ScreenRecord], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let accepted: Vec<_> = records.iter().filter(|r| r.accepted_by_selective_detection).collect();
    if accepted.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let symmetric = accepted
        .iter()
        .filter(|r| (r.arrival.0 + r.arrival.1).abs() < epsilon)
        .count();
    Ok(symmetric as f64 / accepted.len() as f64)
}

/// Sets each record's acceptance flag to the opposite-sides rule.
pub fn mark_selective_detection(records: &mut [ScreenRecord]) {
    for r in records {
        r.accepted_by_selective_detection = r.opposite_sides();
    }
}

/// Keeps only pairs detected on opposite sides of the axis.
pub fn selective_detection_filter(records: &[ScreenRecord]) -> Vec<ScreenRecord> {
    records
        .iter()
        .filter(|r| r.opposite_sides())
        .map(|r| ScreenRecord {
            accepted_by_selective_detection: true,
            ..*r
        })
        .collect()
}

/// Length of the longest interior run of bins whose counts fall below
/// `threshold_fraction` times the median count of the occupied bins. Runs
/// touching either end of the histogram are not between two lobes and are ignored.
pub fn detect_empty_interval(hist: &Histogram, threshold_fraction: f64) -> f64 {
    let mut occupied: Vec<u64> = hist.counts.iter().copied().filter(|&c| c > 0).collect();
    if occupied.is_empty() {
        return 0.0;
    }
    occupied.sort_unstable();
    let mid = occupied.len() / 2;
    let median = if occupied.len() % 2 == 0 {
        0.5 * (occupied[mid - 1] + occupied[mid]) as f64
    } else {
        occupied[mid] as f64
    };
    let threshold = threshold_fraction * median;
    let low: Vec<bool> = hist.counts.iter().map(|&c| (c as f64) < threshold).collect();

    let mut best = 0usize;
    let mut i = 0;
    while i < low.len() {
        if !low[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < low.len() && low[i] {
            i += 1;
        }
        let interior = start > 0 && i < low.len();
        if interior {
            best = best.max(i - start);
        }
    }
    best as f64 * hist.bin_width
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub position: f64,
    pub side: Side,
    /// Nearest fringe index `round(|position| / spacing)`; 0 is the central peak.
    pub index: u32,
    pub prominence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakAnalysis {
    pub peaks: Vec<Peak>,
    pub indices_above: Vec<u32>,
    pub indices_below: Vec<u32>,
    /// The side-fringe index sets above and below the axis coincide.
    pub pairing_satisfied: bool,
}

fn smooth(counts: &[u64]) -> Vec<f64> {
    let n = counts.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            let s: u64 = counts[lo..=hi].iter().sum();
            s as f64 / (hi - lo + 1) as f64
        })
        .collect()
}

/// Local maxima of the 3-bin smoothed histogram whose prominence exceeds
/// three Poisson standard deviations of the surrounding floor, labelled with
/// the nearest fringe index for the given spacing.
pub fn peak_detection(hist: &Histogram, spacing: f64) -> PeakAnalysis {
    let mut peaks = Vec::new();
    let n = hist.counts.len();
    if n >= 3 && spacing > 0.0 {
        let s = smooth(&hist.counts);
        for i in 1..n - 1 {
            if !(s[i] > s[i - 1] && s[i] >= s[i + 1]) {
                continue;
            }
            let mut left_min = s[i];
            for j in (0..i).rev() {
                if s[j] > s[i] {
                    break;
                }
                left_min = left_min.min(s[j]);
            }
            let mut right_min = s[i];
            for &v in &s[i + 1..] {
                if v > s[i] {
                    break;
                }
                right_min = right_min.min(v);
            }
            let floor = left_min.max(right_min);
            let prominence = s[i] - floor;
            if prominence > 3.0 * floor.max(1.0).sqrt() {
                let position = hist.center(i);
                peaks.push(Peak {
                    position,
                    side: if position > 0.0 { Side::Above } else { Side::Below },
                    index: (position.abs() / spacing).round() as u32,
                    prominence,
                });
            }
        }
    }
    let collect = |side: Side| {
        let mut v: Vec<u32> = peaks
            .iter()
            .filter(|p| p.side == side && p.index >= 1)
            .map(|p| p.index)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let indices_above = collect(Side::Above);
    let indices_below = collect(Side::Below);
    let pairing_satisfied = indices_above == indices_below;
    PeakAnalysis {
        peaks,
        indices_above,
        indices_below,
        pairing_satisfied,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExclusionCounts {
    pub node_proximity: usize,
    pub not_converged: usize,
}

impl ExclusionCounts {
    pub fn total(&self) -> usize {
        self.node_proximity + self.not_converged
    }
}

/// Aggregated screen statistics of one ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionStats {
    /// Pooled arrivals of both particles over accepted records.
    pub histogram: Histogram,
    pub joint_histogram: JointHistogram,
    /// Empirical fraction of accepted pairs on the same side of the axis.
    pub p_same_side: Option<f64>,
    pub epsilon: f64,
    pub symmetric_fraction: Option<f64>,
    pub peaks: PeakAnalysis,
    pub empty_interval_measured: f64,
    pub accepted_count: usize,
    pub excluded: ExclusionCounts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsSettings {
    pub epsilon: f64,
    pub bin_width: f64,
    pub empty_threshold: f64,
    /// Fringe spacing used to label peaks; `None` disables labelling.
    pub fringe_spacing: Option<f64>,
}

pub fn detection_stats(records: &[ScreenRecord], excluded: ExclusionCounts, settings: &StatsSettings) -> DetectionStats {
    let accepted: Vec<ScreenRecord> = records
        .iter()
        .filter(|r| r.accepted_by_selective_detection)
        .copied()
        .collect();
    let histogram = Histogram::from_values(accepted.iter().flat_map(|r| [r.arrival.0, r.arrival.1]), settings.bin_width);
    let joint_histogram = JointHistogram::from_records(&accepted, settings.bin_width);
    let p_same_side = if accepted.is_empty() {
        None
    } else {
        Some(accepted.iter().filter(|r| r.same_side()).count() as f64 / accepted.len() as f64)
    };
    let symmetric_fraction = symmetry_statistic(&accepted, settings.epsilon).ok();
    let peaks = match settings.fringe_spacing {
        Some(s) => peak_detection(&histogram, s),
        None => peak_detection(&histogram, 0.0),
    };
    let empty_interval_measured = if accepted.is_empty() {
        0.0
    } else {
        detect_empty_interval(&histogram, settings.empty_threshold)
    };
    DetectionStats {
        histogram,
        joint_histogram,
        p_same_side,
        epsilon: settings.epsilon,
        symmetric_fraction,
        peaks,
        empty_interval_measured,
        accepted_count: accepted.len(),
        excluded,
    }
}
