//! Numerical building blocks: adaptive Gauss–Kronrod quadrature that keeps its
//! final panel partition (so callers can invert the accumulated integral),
//! monotone root finding, and log-domain arithmetic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Kronrod 15-point abscissae on [-1, 1] (non-negative half).
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
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

/// Gauss 7-point weights, matching XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Smallest magnitude we treat as a meaningful integral value.
pub const ABS_FLOOR: f64 = 1e-300;

/// One panel of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Panel {
    pub a: f64,
    pub b: f64,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    /// Final partition of the interval, sorted by left endpoint.
    pub panels: Vec<Panel>,
}

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadTol {
    pub rel: f64,
    pub abs: f64,
    pub max_panels: usize,
}

impl Default for QuadTol {
    fn default() -> Self {
        Self {
            rel: 1e-10,
            abs: ABS_FLOOR,
            max_panels: 2000,
        }
    }
}

impl QuadTol {
    pub fn rel(rel: f64) -> Self {
        Self {
            rel,
            ..Self::default()
        }
    }
}

/// G7-K15 rule on [a, b]; returns (kronrod, error estimate).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_asc *= half.abs();
    res_abs *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err)
}

#[derive(Debug, Clone, Copy)]
struct HeapPanel(Panel);

impl PartialEq for HeapPanel {
    fn eq(&self, other: &Self) -> bool {
        self.0.error == other.0.error
    }
}
impl Eq for HeapPanel {}
impl PartialOrd for HeapPanel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapPanel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.error.total_cmp(&other.0.error)
    }
}

/// Adaptive G7-K15 integration of `f` over `[a, b]`, starting from the given
/// breakpoints (which must lie inside `[a, b]`; discontinuities belong there).
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: QuadTol,
) -> Result<Integral> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid(format!("integration bounds must be finite, got [{a}, {b}]")));
    }
    if b <= a {
        return Ok(Integral {
            value: 0.0,
            error: 0.0,
            panels: Vec::new(),
        });
    }
    let mut points: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
    points.push(a);
    points.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    points.push(b);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for w in points.windows(2) {
        let (value, error) = gk15(&mut f, w[0], w[1]);
        total += value;
        total_err += error;
        heap.push(HeapPanel(Panel {
            a: w[0],
            b: w[1],
            value,
            error,
        }));
    }
    loop {
        let target = tol.abs.max(tol.rel * total.abs());
        if total_err <= target {
            break;
        }
        if heap.len() >= tol.max_panels {
            return Err(Error::Quadrature {
                estimate: total,
                error: total_err,
            });
        }
        let Some(HeapPanel(worst)) = heap.pop() else {
            break;
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel cannot be split further in floating point.
            heap.push(HeapPanel(Panel { error: 0.0, ..worst }));
            total_err -= worst.error;
            continue;
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(HeapPanel(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        }));
        heap.push(HeapPanel(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        }));
    }
    let mut panels: Vec<Panel> = heap.into_iter().map(|p| p.0).collect();
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    // Re-sum in order so the value is independent of heap layout.
    let value = neumaier_sum(panels.iter().map(|p| p.value));
    let error = panels.iter().map(|p| p.error).sum();
    Ok(Integral {
        value,
        error,
        panels,
    })
}

pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: QuadTol) -> Result<Integral> {
    integrate_with_breaks(f, a, b, &[], tol)
}

/// Integral over `[a, ∞)` through the map `s = a + r / (1 - r)`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(mut f: F, a: f64, tol: QuadTol) -> Result<f64> {
    let g = |r: f64| {
        if r >= 1.0 {
            return 0.0;
        }
        let one_minus = 1.0 - r;
        let s = a + r / one_minus;
        let v = f(s) / (one_minus * one_minus);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, tol).map(|i| i.value)
}

/// Compensated summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// log(e^a + e^b), exact at -inf.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Finds `t >= lo` with `g(t) = 0` for a nonincreasing `g` with `g(lo) >= 0`.
///
/// The upper bracket is found by doubling the step from `lo`; at most
/// `max_expansions` doublings are tried. The bracket is then closed by
/// bisection with secant polishing to `xtol` (relative to `max(1, |t|)`).
pub fn invert_nonincreasing<G: FnMut(f64) -> f64>(
    mut g: G,
    lo: f64,
    initial_step: f64,
    max_expansions: usize,
    xtol: f64,
) -> Result<f64> {
    let mut a = lo;
    let mut ga = g(a);
    if ga <= 0.0 {
        return Ok(a);
    }
    let mut step = initial_step.max(1e-12);
    let mut b = a + step;
    let mut gb = g(b);
    let mut expansions = 0;
    while gb > 0.0 {
        if expansions >= max_expansions || !b.is_finite() {
            return Err(Error::Bracketing {
                lo,
                last: b,
                expansions,
            });
        }
        a = b;
        ga = gb;
        step *= 2.0;
        b = a + step;
        gb = g(b);
        expansions += 1;
    }
    // ga > 0 >= gb
    for _ in 0..200 {
        let width = b - a;
        if width <= xtol * b.abs().max(1.0) {
            break;
        }
        // secant candidate, falling back to bisection when it lands badly
        let mut m = if ga.is_finite() && gb.is_finite() && ga != gb {
            a + ga * width / (ga - gb)
        } else {
            0.5 * (a + b)
        };
        if !(m > a + 0.01 * width && m < b - 0.01 * width) {
            m = 0.5 * (a + b);
        }
        let gm = g(m);
        if gm > 0.0 {
            a = m;
            ga = gm;
        } else {
            b = m;
            gb = gm;
        }
    }
    Ok(if gb == 0.0 { b } else { 0.5 * (a + b) })
}

/// Solves `F(t) = target` on `[a, b]` where `F(t) = ∫_a^t f` is increasing,
/// `F(b) = total`, and `f` is the (nonnegative) integrand. Newton steps with a
/// bisection safeguard; partial integrals use the K15 rule on `[a, t]`.
pub fn invert_panel<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    total: f64,
    target: f64,
    xtol: f64,
) -> f64 {
    if target <= 0.0 {
        return a;
    }
    if target >= total {
        return b;
    }
    let (mut lo, mut hi) = (a, b);
    let mut t = a + (b - a) * (target / total);
    for _ in 0..100 {
        let (partial, _) = gk15(&mut f, a, t);
        let resid = partial - target;
        if resid > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        if hi - lo <= xtol * t.abs().max(1.0) {
            break;
        }
        let dens = f(t);
        let mut next = if dens > 0.0 && dens.is_finite() {
            t - resid / dens
        } else {
            0.5 * (lo + hi)
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= xtol * t.abs().max(1.0) {
            t = next;
            break;
        }
        t = next;
    }
    t.clamp(a, b)
}
