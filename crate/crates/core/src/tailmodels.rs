//! Heavy-tailed increment laws and the ladder variable `W`.
//!
//! Every law here has a finite lower support bound, which lets the kernel
//! treat "increment below the bound" as impossible without truncation error.

use crate::error::{Error, Result};
use crate::numeric::{integrate_to_infinity, integrate_with_breaks, invert_nonincreasing, QuadTol};

const QUANTILE_XTOL: f64 = 1e-13;
const ATOM_SNAP: f64 = 1e-9;

#[derive(Debug, Clone)]
enum Family {
    /// `P(X > t) = exp(-scale (t + shift)^shape)` for `t >= -shift`.
    ShiftedWeibull { shape: f64, scale: f64, shift: f64 },
    /// Lomax: `P(X > t) = (1 + (t - loc)/scale)^(-index)` for `t >= loc`.
    Pareto { index: f64, scale: f64, loc: f64 },
    /// Finitely many atoms; `after[i] = P(X > points[i])`.
    Discrete {
        points: Vec<f64>,
        probs: Vec<f64>,
        after: Vec<f64>,
    },
    Shifted { base: Box<TailModel>, by: f64 },
    /// Maximum of two independent variables.
    MaxOf(Box<TailModel>, Box<TailModel>),
}

/// A real-valued law with finite lower support bound and integrable positive part.
#[derive(Debug, Clone)]
pub struct TailModel {
    family: Family,
    lo: f64,
    mean: f64,
    atoms: Vec<f64>,
}

impl TailModel {
    pub fn shifted_weibull(shape: f64, scale: f64, shift: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shift.is_finite()) {
            return Err(Error::invalid(format!(
                "shifted Weibull needs shape, scale > 0 and finite shift (got {shape}, {scale}, {shift})"
            )));
        }
        Self::finish(Family::ShiftedWeibull { shape, scale, shift }, -shift, Vec::new())
    }

    /// The reproduction default: `P(X > t) = exp(-2 sqrt(t + m))`.
    pub fn weibull_half(shift: f64) -> Result<Self> {
        Self::shifted_weibull(0.5, 2.0, shift)
    }

    pub fn pareto(index: f64, scale: f64, loc: f64) -> Result<Self> {
        if !(index > 0.0 && scale > 0.0 && loc.is_finite()) {
            return Err(Error::invalid(format!(
                "Pareto needs index, scale > 0 and finite location (got {index}, {scale}, {loc})"
            )));
        }
        if index <= 1.0 {
            return Err(Error::Divergent(format!(
                "Pareto index {index} <= 1 has infinite mean"
            )));
        }
        Self::finish(Family::Pareto { index, scale, loc }, loc, Vec::new())
    }

    /// Weighted atoms; weights are normalized. Equal weights give an empirical law.
    pub fn discrete(points: &[f64], weights: &[f64]) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::invalid("discrete law needs matching nonempty points and weights"));
        }
        if points.iter().any(|p| !p.is_finite()) || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("discrete law needs finite points and nonnegative weights"));
        }
        let mut pairs: Vec<(f64, f64)> = points.iter().copied().zip(weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += w,
                _ => merged.push((x, w)),
            }
        }
        merged.retain(|p| p.1 > 0.0);
        let total: f64 = merged.iter().map(|p| p.1).sum();
        if !(total > 0.0) {
            return Err(Error::invalid("discrete law has zero total weight"));
        }
        let points: Vec<f64> = merged.iter().map(|p| p.0).collect();
        let probs: Vec<f64> = merged.iter().map(|p| p.1 / total).collect();
        let mut after = vec![0.0; probs.len()];
        let mut acc = 0.0;
        for i in (0..probs.len()).rev() {
            after[i] = acc;
            acc += probs[i];
        }
        let lo = points[0];
        let atoms = points.clone();
        Self::finish(Family::Discrete { points, probs, after }, lo, atoms)
    }

    pub fn empirical(samples: &[f64]) -> Result<Self> {
        Self::discrete(samples, &vec![1.0; samples.len()])
    }

    pub fn point(x: f64) -> Result<Self> {
        Self::discrete(&[x], &[1.0])
    }

    /// Law of `X + by`.
    pub fn shifted(self, by: f64) -> Result<Self> {
        if !by.is_finite() {
            return Err(Error::invalid("shift must be finite"));
        }
        if by == 0.0 {
            return Ok(self);
        }
        let lo = self.lo + by;
        let atoms = self.atoms.iter().map(|a| a + by).collect();
        Self::finish(Family::Shifted { base: Box::new(self), by }, lo, atoms)
    }

    /// Law of `max(X, Y)` for independent `X ~ self`, `Y ~ other`.
    pub fn max_of(self, other: TailModel) -> Result<Self> {
        let lo = self.lo.max(other.lo);
        let mut atoms: Vec<f64> = self
            .atoms
            .iter()
            .chain(other.atoms.iter())
            .copied()
            .filter(|&a| a >= lo)
            .collect();
        atoms.sort_by(f64::total_cmp);
        atoms.dedup();
        Self::finish(Family::MaxOf(Box::new(self), Box::new(other)), lo, atoms)
    }

    fn finish(family: Family, lo: f64, atoms: Vec<f64>) -> Result<Self> {
        let mut model = TailModel {
            family,
            lo,
            mean: f64::NAN,
            atoms,
        };
        model.mean = lo + model.integrated_tail_at_or_above(lo)?;
        Ok(model)
    }

    /// Lower support bound: `tail(t) = 1` for `t < lo`.
    pub fn lower_bound(&self) -> f64 {
        self.lo
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Locations of point masses, sorted.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn is_discrete(&self) -> bool {
        match &self.family {
            Family::Discrete { .. } => true,
            Family::Shifted { base, .. } => base.is_discrete(),
            _ => false,
        }
    }

    /// Atoms and probabilities of a purely discrete law.
    pub fn discrete_support(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.family {
            Family::Discrete { points, probs, .. } => Some((points.clone(), probs.clone())),
            Family::Shifted { base, by } => base
                .discrete_support()
                .map(|(p, w)| (p.into_iter().map(|x| x + by).collect(), w)),
            _ => None,
        }
    }

    /// `P(X > t)`.
    pub fn tail(&self, t: f64) -> f64 {
        if t < self.lo {
            return 1.0;
        }
        match &self.family {
            Family::ShiftedWeibull { shape, scale, shift } => (-scale * weibull_pow(t + shift, *shape)).exp(),
            Family::Pareto { index, scale, loc } => (1.0 + (t - loc) / scale).powf(-index),
            Family::Discrete { points, after, .. } => {
                // first index with points[i] > t
                let i = points.partition_point(|&p| p <= t);
                if i == 0 {
                    1.0
                } else {
                    after[i - 1]
                }
            }
            Family::Shifted { base, by } => base.tail(t - by),
            Family::MaxOf(a, b) => {
                let (ta, tb) = (a.tail(t), b.tail(t));
                ta + tb - ta * tb
            }
        }
    }

    /// `P(X <= t)`, computed without cancellation where the family allows.
    pub fn cdf(&self, t: f64) -> f64 {
        if t < self.lo {
            return 0.0;
        }
        match &self.family {
            Family::ShiftedWeibull { shape, scale, shift } => -(-scale * weibull_pow(t + shift, *shape)).exp_m1(),
            Family::Pareto { index, scale, loc } => -(-index * ((t - loc) / scale).ln_1p()).exp_m1(),
            Family::Shifted { base, by } => base.cdf(t - by),
            Family::MaxOf(a, b) => a.cdf(t) * b.cdf(t),
            Family::Discrete { .. } => 1.0 - self.tail(t),
        }
    }

    /// Density of the absolutely continuous part (zero for discrete laws).
    pub fn density(&self, t: f64) -> f64 {
        if t < self.lo {
            return 0.0;
        }
        match &self.family {
            Family::ShiftedWeibull { shape, scale, shift } => {
                let u = t + shift;
                if u <= 0.0 {
                    return if *shape < 1.0 {
                        f64::INFINITY
                    } else if *shape == 1.0 {
                        *scale
                    } else {
                        0.0
                    };
                }
                scale * shape * u.powf(shape - 1.0) * (-scale * u.powf(*shape)).exp()
            }
            Family::Pareto { index, scale, loc } => {
                index / scale * (1.0 + (t - loc) / scale).powf(-index - 1.0)
            }
            Family::Discrete { .. } => 0.0,
            Family::Shifted { base, by } => base.density(t - by),
            Family::MaxOf(a, b) => a.density(t) * b.cdf(t) + a.cdf(t) * b.density(t),
        }
    }

    /// Generalized tail inverse `inf { x : P(X > x) <= q }`; maps a uniform to
    /// a draw from the law, and `q` in `[tail(b), tail(a))` to a draw in `(a, b]`.
    pub fn tail_quantile(&self, q: f64) -> f64 {
        if q >= 1.0 {
            return self.lo;
        }
        if q <= 0.0 {
            return match &self.family {
                Family::Discrete { points, .. } => *points.last().unwrap(),
                Family::Shifted { base, by } => base.tail_quantile(q) + by,
                _ => f64::INFINITY,
            };
        }
        match &self.family {
            Family::ShiftedWeibull { shape, scale, shift } => {
                let r = -q.ln() / scale;
                (if *shape == 0.5 { r * r } else { r.powf(1.0 / shape) }) - shift
            }
            Family::Pareto { index, scale, loc } => loc + scale * (q.powf(-1.0 / index) - 1.0),
            Family::Discrete { points, after, .. } => {
                // `after` is nonincreasing; first index with after[i] <= q
                let i = after.partition_point(|&a| a > q);
                points[i.min(points.len() - 1)]
            }
            Family::Shifted { base, by } => base.tail_quantile(q) + by,
            Family::MaxOf(..) => self.numeric_tail_quantile(q),
        }
    }

    /// `inf { x : P(X <= x) >= p }`.
    pub fn quantile(&self, p: f64) -> f64 {
        self.tail_quantile(1.0 - p)
    }

    /// Draw by inversion from a uniform variate.
    pub fn sample(&self, u: f64) -> f64 {
        self.tail_quantile(u)
    }

    fn numeric_tail_quantile(&self, q: f64) -> f64 {
        for &a in &self.atoms {
            // atom a is the answer iff tail(a) <= q < tail(a-)
            if self.tail(a) <= q && q < self.tail_left_limit(a) {
                return a;
            }
        }
        let x = invert_nonincreasing(|x| self.tail(x) - q, self.lo, 1.0, 2000, QUANTILE_XTOL)
            .unwrap_or(f64::INFINITY);
        self.snap_to_atom(x)
    }

    /// `P(X >= t)`, the left limit of the tail (resolved to within the atom tolerance).
    pub fn tail_left_limit(&self, t: f64) -> f64 {
        if t <= self.lo {
            return 1.0;
        }
        let eps = ATOM_SNAP * t.abs().max(1.0);
        self.tail(t - eps)
    }

    fn snap_to_atom(&self, x: f64) -> f64 {
        for &a in &self.atoms {
            if (x - a).abs() <= ATOM_SNAP * a.abs().max(1.0) {
                return a;
            }
        }
        x
    }

    /// `∫_t^∞ P(X > s) ds`.
    pub fn integrated_tail(&self, t: f64) -> f64 {
        if t < self.lo {
            return self.mean - t;
        }
        self.integrated_tail_at_or_above(t).unwrap_or(f64::NAN)
    }

    fn integrated_tail_at_or_above(&self, t: f64) -> Result<f64> {
        Ok(match &self.family {
            Family::ShiftedWeibull { shape, scale, shift } => weibull_integrated_tail(*shape, *scale, *shift, t)
                .map(Ok)
                .unwrap_or_else(|| self.numeric_integrated_tail(t))?,
            Family::Pareto { index, scale, loc } => {
                scale / (index - 1.0) * (1.0 + (t - loc) / scale).powf(1.0 - index)
            }
            Family::Discrete { points, probs, .. } => {
                let i = points.partition_point(|&p| p <= t);
                let mut acc = 0.0;
                for j in i..points.len() {
                    acc += probs[j] * (points[j] - t);
                }
                acc
            }
            Family::Shifted { base, by } => base.integrated_tail(t - by),
            Family::MaxOf(..) => self.numeric_integrated_tail(t)?,
        })
    }

    fn numeric_integrated_tail(&self, t: f64) -> Result<f64> {
        let tol = QuadTol::rel(1e-12);
        let upper_atoms: Vec<f64> = self.atoms.iter().copied().filter(|&a| a > t).collect();
        let mut total = 0.0;
        let mut start = t;
        if let Some(&last) = upper_atoms.last() {
            total += integrate_with_breaks(|s| self.tail(s), t, last, &upper_atoms, tol)?.value;
            start = last;
        }
        total += integrate_to_infinity(|s| self.tail(s), start, tol)?;
        Ok(total)
    }
}

#[inline]
fn weibull_pow(u: f64, shape: f64) -> f64 {
    if shape == 0.5 {
        u.sqrt()
    } else {
        u.powf(shape)
    }
}

/// Closed form when `1/shape` is a positive integer `n`:
/// `scale^{-n} n Γ(n, x)` with `x = scale (t+shift)^shape` and
/// `Γ(n, x) = (n-1)! e^{-x} Σ_{j<n} x^j / j!`.
fn weibull_integrated_tail(shape: f64, scale: f64, shift: f64, t: f64) -> Option<f64> {
    let inv = 1.0 / shape;
    let n = inv.round();
    if (inv - n).abs() > 1e-12 || !(1.0..=32.0).contains(&n) {
        return None;
    }
    let n = n as usize;
    let x = scale * (t + shift).max(0.0).powf(shape);
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..n {
        term *= x / j as f64;
        sum += term;
    }
    let mut factorial = 1.0;
    for j in 1..n {
        factorial *= j as f64;
    }
    Some(scale.powf(-(n as f64)) * n as f64 * factorial * (-x).exp() * sum)
}

/// Ladder variable `W` for a negative-mean increment law: `P(W > t) = min(1, F̄_I(t)/mu)`
/// for `t >= 0`, with an explicit atom at zero when `F̄_I(0) < mu`.
#[derive(Debug, Clone)]
pub struct LadderVariable {
    source: TailModel,
    mu: f64,
    atom0: f64,
    /// `W >= t0` almost surely; positive only when there is no atom.
    t0: f64,
}

impl LadderVariable {
    pub fn new(source: TailModel) -> Result<Self> {
        let mu = -source.mean();
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid(format!(
                "ladder variable needs a negative-mean increment (mean {})",
                source.mean()
            )));
        }
        let fi0 = source.integrated_tail(0.0);
        let atom0 = (1.0 - fi0 / mu).max(0.0);
        let t0 = if fi0 > mu {
            invert_nonincreasing(|t| source.integrated_tail(t) - mu, 0.0, 1.0, 200, 1e-14)?
        } else {
            0.0
        };
        Ok(Self { source, mu, atom0, t0 })
    }

    pub fn source(&self) -> &TailModel {
        &self.source
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn atom0(&self) -> f64 {
        self.atom0
    }

    /// Left end of the continuous part: `P(W >= t0) = 1`.
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tail(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 1.0;
        }
        (self.source.integrated_tail(t) / self.mu).min(1.0)
    }

    /// Density of the continuous part on `(t0, ∞)`.
    pub fn density(&self, t: f64) -> f64 {
        if t <= self.t0 {
            return 0.0;
        }
        self.source.tail(t) / self.mu
    }

    /// Generalized inverse of the tail at `u`: zero on the atom, otherwise the
    /// root of `P(W > t) = u`.
    pub fn sample(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::invalid(format!("uniform variate {u} outside (0, 1)")));
        }
        if u >= 1.0 - self.atom0 {
            return Ok(0.0);
        }
        self.tail_inverse(u, self.t0)
    }

    /// Root of `P(W > t) = u` searched from `from` (which must have tail >= u).
    pub fn tail_inverse(&self, u: f64, from: f64) -> Result<f64> {
        let target = u * self.mu;
        let start = from.max(self.t0);
        // Newton on F̄_I(t) = target, safeguarded by the monotone bracketing solver.
        let mut t = start;
        let mut fi = self.source.integrated_tail(t);
        if fi <= target {
            return Ok(start);
        }
        for _ in 0..60 {
            let slope = self.source.tail(t);
            if !(slope > 0.0) {
                break;
            }
            let next = t + (fi - target) / slope;
            if !next.is_finite() {
                break;
            }
            // convexity makes Newton from the left monotone and never overshoot
            let fnext = self.source.integrated_tail(next);
            if fnext < target {
                break;
            }
            let done = (next - t).abs() <= 1e-13 * next.abs().max(1.0);
            t = next;
            fi = fnext;
            if done || fi == target {
                return Ok(t);
            }
        }
        invert_nonincreasing(|s| self.source.integrated_tail(s) - target, t, 1.0, 200, 1e-14)
    }
}
