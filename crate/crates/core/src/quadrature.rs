//! Globally adaptive 2D cubature on rectangles.
//!
//! Each region is integrated with the tensor product of the 15-point
//! Gauss-Kronrod rule; the embedded 7-point Gauss tensor rule provides the
//! error estimate. The region with the largest estimate is bisected along its
//! longer side until the summed estimate meets the tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the odd-indexed Kronrod abscissae (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Abscissae on [-1, 1] with Kronrod and Gauss weights (Gauss weight 0 where absent).
fn rule() -> [(f64, f64, f64); 15] {
    let mut out = [(0.0, 0.0, 0.0); 15];
    for i in 0..7 {
        let wg = if i % 2 == 1 { WG[i / 2] } else { 0.0 };
        out[i] = (-XGK[i], WGK[i], wg);
        out[14 - i] = (XGK[i], WGK[i], wg);
    }
    out[7] = (0.0, WGK[7], WG[3]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, lo, hi)
    }

    fn split(&self) -> (Rect, Rect) {
        if self.x1 - self.x0 >= self.y1 - self.y0 {
            let xm = 0.5 * (self.x0 + self.x1);
            (
                Rect::new(self.x0, xm, self.y0, self.y1),
                Rect::new(xm, self.x1, self.y0, self.y1),
            )
        } else {
            let ym = 0.5 * (self.y0 + self.y1);
            (
                Rect::new(self.x0, self.x1, self.y0, ym),
                Rect::new(self.x0, self.x1, ym, self.y1),
            )
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_regions: usize,
    /// The starting rectangle is cut into `initial_cells` x `initial_cells` pieces.
    pub initial_cells: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 0.0,
            max_regions: 40_000,
            initial_cells: 4,
        }
    }
}

impl QuadratureOptions {
    pub fn with_abs_tol(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
    pub regions: usize,
    pub evaluations: usize,
}

struct Region {
    rect: Rect,
    value: f64,
    error: f64,
    id: usize,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Region {}

impl PartialOrd for Region {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Region {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn apply_rule<F: Fn(f64, f64) -> f64>(f: &F, rect: &Rect, nodes: &[(f64, f64, f64); 15]) -> (f64, f64) {
    let hx = 0.5 * (rect.x1 - rect.x0);
    let cx = 0.5 * (rect.x1 + rect.x0);
    let hy = 0.5 * (rect.y1 - rect.y0);
    let cy = 0.5 * (rect.y1 + rect.y0);
    let mut kron = 0.0;
    let mut gauss = 0.0;
    for &(xi, wki, wgi) in nodes {
        let x = cx + hx * xi;
        let mut row_k = 0.0;
        let mut row_g = 0.0;
        for &(yj, wkj, wgj) in nodes {
            let v = f(x, cy + hy * yj);
            row_k += wkj * v;
            row_g += wgj * v;
        }
        kron += wki * row_k;
        gauss += wgi * row_g;
    }
    let area = hx * hy;
    (kron * area, ((kron - gauss) * area).abs())
}

/// Integrates `f` over `rect` to within `max(abs_tol, rel_tol * |I|)`.
pub fn integrate_2d<F>(f: F, rect: Rect, opts: &QuadratureOptions) -> Result<QuadratureResult>
where
    F: Fn(f64, f64) -> f64,
{
    if !(rect.x1 >= rect.x0 && rect.y1 >= rect.y0) || ![rect.x0, rect.x1, rect.y0, rect.y1].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad integration rectangle {rect:?}")));
    }
    if rect.x1 == rect.x0 || rect.y1 == rect.y0 {
        return Ok(QuadratureResult {
            value: 0.0,
            error_estimate: 0.0,
            regions: 0,
            evaluations: 0,
        });
    }

    let nodes = rule();
    let cells = opts.initial_cells.max(1);
    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut evaluations = 0usize;
    let dx = (rect.x1 - rect.x0) / cells as f64;
    let dy = (rect.y1 - rect.y0) / cells as f64;
    for i in 0..cells {
        for j in 0..cells {
            let x0 = rect.x0 + dx * i as f64;
            let x1 = if i + 1 == cells { rect.x1 } else { x0 + dx };
            let y0 = rect.y0 + dy * j as f64;
            let y1 = if j + 1 == cells { rect.y1 } else { y0 + dy };
            let r = Rect::new(x0, x1, y0, y1);
            let (value, error) = apply_rule(&f, &r, &nodes);
            evaluations += 225;
            heap.push(Region { rect: r, value, error, id: next_id });
            next_id += 1;
        }
    }

    loop {
        // Summing in id order keeps the result independent of heap layout.
        let (value, error) = totals(&heap);
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::QuadratureNonConvergence {
                regions: heap.len(),
                value,
                error_estimate: error,
                target: opts.abs_tol,
            });
        }
        let target = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= target {
            return Ok(QuadratureResult {
                value,
                error_estimate: error,
                regions: heap.len(),
                evaluations,
            });
        }
        if heap.len() >= opts.max_regions {
            return Err(Error::QuadratureNonConvergence {
                regions: heap.len(),
                value,
                error_estimate: error,
                target,
            });
        }
        // Refine a batch of the worst regions per pass; totals are only
        // recomputed between passes.
        let batch = (heap.len() / 8).max(1);
        for _ in 0..batch {
            let worst = match heap.pop() {
                Some(w) => w,
                None => break,
            };
            let (a, b) = worst.rect.split();
            for r in [a, b] {
                let (value, error) = apply_rule(&f, &r, &nodes);
                evaluations += 225;
                heap.push(Region { rect: r, value, error, id: next_id });
                next_id += 1;
            }
        }
    }
}

fn totals(heap: &BinaryHeap<Region>) -> (f64, f64) {
    let mut parts: Vec<(usize, f64, f64)> = heap.iter().map(|r| (r.id, r.value, r.error)).collect();
    parts.sort_unstable_by_key(|p| p.0);
    parts
        .iter()
        .fold((0.0, 0.0), |(v, e), &(_, pv, pe)| (v + pv, e + pe))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate_2d(|x, y| x * x * y + 3.0 * y.powi(4), Rect::new(0.0, 2.0, -1.0, 1.0), &QuadratureOptions::default())
            .unwrap();
        // x^2 y integrates to 0 over symmetric y; 3 y^4 -> 3 * 2/5 * 2
        assert!((r.value - 2.4).abs() < 1e-13, "{}", r.value);
    }

    #[test]
    fn gaussian_normalizes() {
        let g = |x: f64, y: f64| (-(x * x + y * y) / 2.0).exp() / (2.0 * std::f64::consts::PI);
        let r = integrate_2d(g, Rect::square(-12.0, 12.0), &QuadratureOptions::with_abs_tol(1e-12)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-11, "{}", r.value);
    }

    #[test]
    fn degenerate_rect_is_zero() {
        let r = integrate_2d(|_, _| 1.0, Rect::new(1.0, 1.0, 0.0, 1.0), &QuadratureOptions::default()).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn reports_non_convergence() {
        let opts = QuadratureOptions {
            abs_tol: 1e-14,
            max_regions: 20,
            ..QuadratureOptions::default()
        };
        let err = integrate_2d(|x, _| if x > 0.3 { 1.0 } else { 0.0 }, Rect::square(0.0, 1.0), &opts).unwrap_err();
        assert!(matches!(err, Error::QuadratureNonConvergence { .. }));
    }
}
