//! Perpetuities and iterated random functions, coupled to a mean-shifted
//! bounding walk `S_n(γ)` whose first passage over `s(x)` precedes `Z^(n) > x`.
//!
//! `Z^(n) = Ψ_1 ∘ … ∘ Ψ_n(0)` is the backward iteration. For affine maps it is
//! updated in O(1) per step as `Z^(n+1) = Z^(n) + B_{n+1} e^{S'_n}`; general maps
//! keep the step history and re-evaluate the composition on demand.

use rand::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::iskernel::ISKernel;
use crate::numeric::log_add_exp;
use crate::rng::{open01, stream};
use crate::tailmodels::TailModel;

/// Randomness of one step, all in log scale. `log_c` is used by the Goldie map only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDraw {
    pub log_a: f64,
    pub log_b: f64,
    pub log_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    /// `z -> A z + B`.
    Affine,
    /// `z -> sqrt(A z^2 + B z + C)`.
    Goldie,
}

#[derive(Debug, Clone)]
pub enum RecursionModel {
    /// `Z' = A Z + 1`.
    M1 { log_a: TailModel },
    /// `Z' = A Z + B` with independent `A`, `B`.
    M2 { log_a: TailModel, log_b: TailModel },
    /// Any law represented by a finite pool of equally likely step draws.
    /// The bounding walk then has a discrete increment law, so the tilted
    /// redraw is an exact lookup.
    M3 { map: MapKind, pool: Vec<StepDraw> },
}

const LN2: f64 = std::f64::consts::LN_2;

impl RecursionModel {
    pub fn m1(log_a: TailModel) -> Result<Self> {
        if !(log_a.mean() < 0.0) {
            return Err(Error::invalid(format!("E log A = {} must be negative", log_a.mean())));
        }
        Ok(Self::M1 { log_a })
    }

    /// The reproduction model: `log A = V - 3/2` with `P(V > t) = exp(-2 sqrt t)`, `B = 1`.
    pub fn reference() -> Self {
        Self::m1(TailModel::weibull_half(1.5).expect("valid parameters")).expect("negative drift")
    }

    pub fn m2(log_a: TailModel, log_b: TailModel) -> Result<Self> {
        if !(log_a.mean() < 0.0) {
            return Err(Error::invalid(format!("E log A = {} must be negative", log_a.mean())));
        }
        if !log_a.atoms().is_empty() || !log_b.atoms().is_empty() {
            return Err(Error::invalid(
                "independent-marginal perpetuities need continuous log A and log B; use a pooled model",
            ));
        }
        Ok(Self::M2 { log_a, log_b })
    }

    /// Pool of draws from a user sampler; `draw` returns `(log A, log B, log C)`.
    pub fn pooled<F>(map: MapKind, size: usize, seed: u64, mut draw: F) -> Result<Self>
    where
        F: FnMut(&mut dyn RngCore) -> (f64, f64, f64),
    {
        if size < 2 {
            return Err(Error::invalid("pool needs at least 2 draws"));
        }
        let mut rng = stream(seed, 0x9001, 0);
        let pool: Vec<StepDraw> = (0..size)
            .map(|_| {
                let (log_a, log_b, log_c) = draw(&mut rng);
                StepDraw { log_a, log_b, log_c }
            })
            .collect();
        if pool
            .iter()
            .any(|d| !d.log_a.is_finite() || d.log_b.is_nan() || d.log_c.is_nan() || d.log_b == f64::INFINITY)
        {
            return Err(Error::invalid("pooled draws must have finite log A and non-NaN log B, log C"));
        }
        let model = Self::M3 { map, pool };
        let lip = model.mean_log_lipschitz();
        if !(lip < 0.0) {
            return Err(Error::invalid(format!("E log Lip(Ψ) = {lip} must be negative")));
        }
        Ok(model)
    }

    /// Goldie's quadratic recursion with independent `log A`, `log B`, `log C`,
    /// discretized to `size` pooled draws.
    pub fn goldie(log_a: &TailModel, log_b: &TailModel, log_c: &TailModel, size: usize, seed: u64) -> Result<Self> {
        Self::pooled(MapKind::Goldie, size, seed, |rng| {
            (log_a.sample(open01(rng)), log_b.sample(open01(rng)), log_c.sample(open01(rng)))
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::M1 { .. } => "M1",
            Self::M2 { .. } => "M2",
            Self::M3 { .. } => "M3",
        }
    }

    pub fn map_kind(&self) -> MapKind {
        match self {
            Self::M3 { map, .. } => *map,
            _ => MapKind::Affine,
        }
    }

    /// `E log A` (`E log Lip(Ψ)` for pooled maps).
    pub fn mean_log_lipschitz(&self) -> f64 {
        match self {
            Self::M1 { log_a } | Self::M2 { log_a, .. } => log_a.mean(),
            Self::M3 { map, pool } => {
                pool.iter().map(|d| log_lipschitz(*map, d)).sum::<f64>() / pool.len() as f64
            }
        }
    }

    /// Draw one step from the original law.
    pub fn draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> StepDraw {
        match self {
            Self::M1 { log_a } => StepDraw {
                log_a: log_a.sample(open01(rng)),
                log_b: 0.0,
                log_c: f64::NEG_INFINITY,
            },
            Self::M2 { log_a, log_b } => StepDraw {
                log_a: log_a.sample(open01(rng)),
                log_b: log_b.sample(open01(rng)),
                log_c: f64::NEG_INFINITY,
            },
            Self::M3 { pool, .. } => pool[((open01(rng) * pool.len() as f64) as usize).min(pool.len() - 1)],
        }
    }

    /// `(log Ā, log⁺ B̄)` of the upper affine bound `Ψ(z) <= Ā z + B̄` on `z >= 0`.
    pub fn bounding_pair(&self, d: &StepDraw) -> (f64, f64) {
        match self.map_kind() {
            MapKind::Affine => (d.log_a, d.log_b.max(0.0)),
            MapKind::Goldie => {
                // sqrt(A z^2 + B z + C) <= sqrt(A) z + B / (2 sqrt A) + sqrt C
                let half_a = 0.5 * d.log_a;
                let lb = log_add_exp(d.log_b - LN2 - half_a, 0.5 * d.log_c);
                (half_a, lb.max(0.0))
            }
        }
    }

    /// Bounding-walk increment without the `γ1` shift.
    pub fn g(&self, d: &StepDraw, gamma2: f64) -> f64 {
        match self {
            Self::M1 { .. } => d.log_a,
            _ => {
                let (la, lb) = self.bounding_pair(d);
                (lb - gamma2).max(la)
            }
        }
    }

    /// `log Ψ(e^{logz})`.
    pub fn apply(&self, d: &StepDraw, logz: f64) -> f64 {
        match self.map_kind() {
            MapKind::Affine => log_add_exp(d.log_a + logz, d.log_b),
            MapKind::Goldie => {
                let inner = log_add_exp(log_add_exp(d.log_a + 2.0 * logz, d.log_b + logz), d.log_c);
                0.5 * inner
            }
        }
    }

    /// Law of the unshifted bounding increment `g` for this `γ2`.
    pub fn g_law(&self, gamma2: f64) -> Result<TailModel> {
        match self {
            Self::M1 { log_a } => Ok(log_a.clone()),
            Self::M2 { log_a, log_b } => {
                // max(max(log B, 0) - γ2, log A)
                let u = log_b
                    .clone()
                    .shifted(-gamma2)?
                    .max_of(TailModel::point(-gamma2)?)?;
                u.max_of(log_a.clone())
            }
            Self::M3 { pool, .. } => {
                let gs: Vec<f64> = pool.iter().map(|d| self.g(d, gamma2)).collect();
                TailModel::empirical(&gs)
            }
        }
    }

    /// Draw the step randomness from its original law conditioned on `g = value`.
    fn redraw_given<R: RngCore + ?Sized>(&self, params: &CouplingParams, g: f64, rng: &mut R) -> StepDraw {
        let gamma2 = params.gamma2;
        match self {
            Self::M1 { .. } => StepDraw {
                log_a: g,
                log_b: 0.0,
                log_c: f64::NEG_INFINITY,
            },
            Self::M2 { log_a, log_b } => {
                let bpos = g + gamma2;
                if bpos <= ATOM_TIE * gamma2.abs().max(1.0) {
                    // discrete component: B <= 1 and log A <= -γ2
                    return StepDraw {
                        log_a: truncated_below(log_a, -gamma2, open01(rng)),
                        log_b: truncated_below(log_b, 0.0, open01(rng)),
                        log_c: f64::NEG_INFINITY,
                    };
                }
                let via_a = log_a.density(g) * log_b.cdf(bpos);
                let via_b = log_b.density(bpos) * log_a.cdf(g);
                let total = via_a + via_b;
                if !(total > 0.0) || open01(rng) * total < via_a {
                    StepDraw {
                        log_a: g,
                        log_b: truncated_below(log_b, bpos, open01(rng)),
                        log_c: f64::NEG_INFINITY,
                    }
                } else {
                    StepDraw {
                        log_a: truncated_below(log_a, g, open01(rng)),
                        log_b: bpos,
                        log_c: f64::NEG_INFINITY,
                    }
                }
            }
            Self::M3 { pool, .. } => {
                let xi = g + params.gamma1;
                let idx = params.pool_lookup(xi, open01(rng));
                pool[idx]
            }
        }
    }
}

const ATOM_TIE: f64 = 1e-9;

fn log_lipschitz(map: MapKind, d: &StepDraw) -> f64 {
    match map {
        MapKind::Affine => d.log_a,
        // slope of sqrt(A z^2 + B z + C) on z >= 0 peaks at sqrt(A) or B / (2 sqrt C)
        MapKind::Goldie => (0.5 * d.log_a).max(d.log_b - LN2 - 0.5 * d.log_c),
    }
}

/// Draw from `law` conditioned on `X <= bound`.
fn truncated_below(law: &TailModel, bound: f64, u: f64) -> f64 {
    let p = law.cdf(bound);
    if !(p > 0.0) {
        return bound;
    }
    law.quantile(u * p).min(bound)
}

/// `γ1`, `γ2` and the law of the bounding-walk increment `S_1(γ)`.
#[derive(Debug, Clone)]
pub struct CouplingParams {
    pub gamma1: f64,
    pub gamma2: f64,
    increment: TailModel,
    /// Pooled models: (increment value, pool index) sorted by value.
    pool_index: Vec<(f64, usize)>,
}

impl CouplingParams {
    pub fn new(model: &RecursionModel, gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(gamma2 >= 0.0 && gamma2.is_finite()) {
            return Err(Error::invalid(format!("γ2 must be finite and >= 0, got {gamma2}")));
        }
        if matches!(model, RecursionModel::M1 { .. }) && gamma2 != 0.0 {
            return Err(Error::invalid("M1 has B = 1 and uses γ2 = 0"));
        }
        let g = model.g_law(gamma2)?;
        let drift = -g.mean();
        if !(drift > 0.0) {
            return Err(Error::invalid(format!(
                "E max(log⁺B̄ - γ2, log A) = {} must be negative at γ2 = {gamma2}",
                g.mean()
            )));
        }
        if !(gamma1 > 0.0 && gamma1 < drift) {
            return Err(Error::invalid(format!("γ1 = {gamma1} must lie in (0, {drift})")));
        }
        let increment = g.shifted(gamma1)?;
        let pool_index = match model {
            RecursionModel::M3 { pool, .. } => {
                let mut idx: Vec<(f64, usize)> = pool
                    .iter()
                    .enumerate()
                    .map(|(i, d)| (model.g(d, gamma2) + gamma1, i))
                    .collect();
                idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                idx
            }
            _ => Vec::new(),
        };
        Ok(Self {
            gamma1,
            gamma2,
            increment,
            pool_index,
        })
    }

    /// `γ2` from [`find_gamma2`] when not given; `γ1` defaults to half the drift.
    pub fn auto(
        model: &RecursionModel,
        gamma1: Option<f64>,
        gamma2: Option<f64>,
        margin: f64,
        budget: usize,
        seed: u64,
    ) -> Result<Self> {
        let gamma2 = match gamma2 {
            Some(g) => g,
            None => find_gamma2(model, margin, budget, seed)?,
        };
        let drift = -model.g_law(gamma2)?.mean();
        Self::new(model, gamma1.unwrap_or(0.5 * drift), gamma2)
    }

    /// Law of `S_1(γ)`.
    pub fn increment(&self) -> &TailModel {
        &self.increment
    }

    /// `μ_γ = -E S_1(γ)`.
    pub fn drift(&self) -> f64 {
        -self.increment.mean()
    }

    /// `s(x) = log x - γ2 + log(1 - e^{-γ1})`.
    pub fn crossing_level(&self, logx: f64) -> f64 {
        crossing_level(self.gamma1, self.gamma2, logx)
    }

    /// Log of the envelope `e^{γ2} (1 - e^{-γ1})^{-1} exp(max_k S_k(γ))`.
    pub fn log_envelope(&self, max_walk: f64) -> f64 {
        self.gamma2 - (-(-self.gamma1).exp()).ln_1p() + max_walk
    }

    pub fn kernel(&self, logx: f64, astar: f64, delta: f64) -> Result<ISKernel> {
        ISKernel::new(self.increment.clone(), self.crossing_level(logx), astar, delta)
    }

    fn pool_lookup(&self, xi: f64, u: f64) -> usize {
        let lo = self.pool_index.partition_point(|p| p.0 < xi);
        let hi = self.pool_index.partition_point(|p| p.0 <= xi);
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            // not an exact pool value: take the nearest one
            let j = if lo == 0 {
                0
            } else if lo >= self.pool_index.len() {
                self.pool_index.len() - 1
            } else if (self.pool_index[lo].0 - xi).abs() < (xi - self.pool_index[lo - 1].0).abs() {
                lo
            } else {
                lo - 1
            };
            let v = self.pool_index[j].0;
            (
                self.pool_index.partition_point(|p| p.0 < v),
                self.pool_index.partition_point(|p| p.0 <= v),
            )
        };
        let k = lo + ((u * (hi - lo) as f64) as usize).min(hi - lo - 1);
        self.pool_index[k].1
    }
}

pub fn crossing_level(gamma1: f64, gamma2: f64, logx: f64) -> f64 {
    logx - gamma2 + (-(-gamma1).exp()).ln_1p()
}

/// z-quantile for a 99% one-sided test.
const Z99: f64 = 2.326_347_874_040_841;

/// Smallest `γ2` (doubling, then bisection) for which the Monte Carlo mean of
/// `max(log⁺B̄ - γ2, log A)` is below `-margin` at 99% one-sided confidence.
/// The same draws are reused for every candidate, so the search is monotone
/// and reproducible.
pub fn find_gamma2(model: &RecursionModel, margin: f64, budget: usize, seed: u64) -> Result<f64> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::invalid(format!("margin must be positive, got {margin}")));
    }
    if budget < 2 {
        return Err(Error::invalid("Monte Carlo budget must be at least 2"));
    }
    let mut rng = stream(seed, 0x6a22, 0);
    let pairs: Vec<(f64, f64)> = (0..budget)
        .map(|_| {
            let d = model.draw(&mut rng);
            match model {
                RecursionModel::M1 { .. } => (f64::NEG_INFINITY, d.log_a),
                _ => {
                    let (la, lb) = model.bounding_pair(&d);
                    (lb, la)
                }
            }
        })
        .collect();
    let test = |gamma2: f64| -> (bool, f64) {
        let mut acc = crate::stats::Accumulator::new();
        for &(lb, la) in &pairs {
            acc.push((lb - gamma2).max(la));
        }
        let s = acc.summary().expect("budget >= 2");
        let se = (s.variance / s.n as f64).sqrt();
        (s.mean + Z99 * se < -margin, s.mean)
    };
    let (ok, est) = test(0.0);
    if ok {
        return Ok(0.0);
    }
    if matches!(model, RecursionModel::M1 { .. }) {
        return Err(Error::Gamma(format!(
            "E log A estimated at {est:.6} is not below -{margin} with 99% confidence"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut last = est;
    let mut doublings = 0;
    loop {
        let (ok, est) = test(hi);
        last = if ok { last } else { est };
        if ok {
            break;
        }
        doublings += 1;
        if doublings > 60 {
            return Err(Error::Gamma(format!(
                "no γ2 up to {hi:e} makes E max(log⁺B̄ - γ2, log A) < -{margin}; last estimate {last:.6}"
            )));
        }
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-9 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if test(mid).0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PreCrossing,
    PostCrossing,
}

/// Coupled state of the recursion and its bounding walk.
#[derive(Debug, Clone)]
pub struct PathState {
    pub n: u64,
    /// `S_n(γ)`.
    pub walk: f64,
    /// `max_{k<=n} S_k(γ)`, including `S_0 = 0`.
    pub max_walk: f64,
    /// `log Z^(n)`; `-∞` at the start.
    logz: f64,
    /// `S'_n = Σ log A_k` (affine maps).
    log_prod: f64,
    pub log_lr: f64,
    pub phase: Phase,
    /// Step draws, kept only for non-affine maps.
    history: Vec<StepDraw>,
    stale: bool,
}

impl Default for PathState {
    fn default() -> Self {
        Self::new()
    }
}

impl PathState {
    pub fn new() -> Self {
        Self {
            n: 0,
            walk: 0.0,
            max_walk: 0.0,
            logz: f64::NEG_INFINITY,
            log_prod: 0.0,
            log_lr: 0.0,
            phase: Phase::PreCrossing,
            history: Vec::new(),
            stale: false,
        }
    }

    /// `S'_n = Σ_{k<=n} log A_k` for affine maps.
    pub fn log_prod(&self) -> f64 {
        self.log_prod
    }

    /// `log Z^(n)`, evaluating the backward composition if needed.
    pub fn logz(&mut self, model: &RecursionModel) -> f64 {
        if self.stale {
            let mut z = f64::NEG_INFINITY;
            for d in self.history.iter().rev() {
                z = model.apply(d, z);
            }
            self.logz = z;
            self.stale = false;
        }
        self.logz
    }

    fn advance(&mut self, model: &RecursionModel, params: &CouplingParams, d: StepDraw) {
        match model.map_kind() {
            MapKind::Affine => {
                self.logz = log_add_exp(self.logz, d.log_b + self.log_prod);
                self.log_prod += d.log_a;
            }
            MapKind::Goldie => {
                self.history.push(d);
                self.stale = true;
            }
        }
        self.walk += model.g(&d, params.gamma2) + params.gamma1;
        self.max_walk = self.max_walk.max(self.walk);
        self.n += 1;
    }
}

/// One step under the original law; the likelihood ratio is untouched.
pub fn coupled_step_original<R: RngCore + ?Sized>(
    model: &RecursionModel,
    params: &CouplingParams,
    state: &mut PathState,
    rng: &mut R,
) {
    let d = model.draw(rng);
    state.advance(model, params, d);
}

/// One step under the importance kernel: the walk increment comes from the
/// kernel, and the model randomness is redrawn from its original law given
/// that increment (the change of measure only depends on it).
pub fn coupled_step_tilted<R: RngCore + ?Sized>(
    model: &RecursionModel,
    params: &CouplingParams,
    kernel: &ISKernel,
    state: &mut PathState,
    rng: &mut R,
) -> Result<()> {
    if state.phase != Phase::PreCrossing {
        return Err(Error::invalid("tilted steps are only defined before the crossing"));
    }
    let step = kernel.sample_conditional_increment(state.walk, rng)?;
    let d = model.redraw_given(params, step.xi - params.gamma1, rng);
    let before = state.walk;
    state.advance(model, params, d);
    // keep the walk bit-identical to the kernel's increment
    state.walk = before + step.xi;
    state.max_walk = state.max_walk.max(state.walk);
    state.log_lr += step.log_ratio();
    Ok(())
}

/// Run tilted steps from a fresh state until `S_n(γ) > s(x)`.
pub fn run_to_tau<R: RngCore + ?Sized>(
    model: &RecursionModel,
    params: &CouplingParams,
    kernel: &ISKernel,
    rng: &mut R,
    max_steps: u64,
) -> Result<PathState> {
    let mut state = PathState::new();
    let level = kernel.level();
    while state.walk <= level {
        if state.n >= max_steps {
            return Err(Error::MaxSteps(max_steps));
        }
        coupled_step_tilted(model, params, kernel, &mut state, rng)?;
    }
    state.phase = Phase::PostCrossing;
    Ok(state)
}

/// Result of auditing one path for the envelope `log Z^(n) <= log env(max S(γ))`,
/// monotonicity of the backward iteration, and `τ_γ(x) <= T(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathAudit {
    pub envelope_ok: bool,
    pub monotone_ok: bool,
    pub order_ok: bool,
    pub steps: u64,
}

impl PathAudit {
    pub fn ok(&self) -> bool {
        self.envelope_ok && self.monotone_ok && self.order_ok
    }
}

/// Audit one path. With a kernel the path is tilted up to `τ` and then
/// continued for `extra` original steps; without one it runs `extra` original steps.
#[allow(clippy::too_many_arguments)]
pub fn audit_path<R: RngCore + ?Sized>(
    model: &RecursionModel,
    params: &CouplingParams,
    kernel: Option<&ISKernel>,
    logx: f64,
    extra: u64,
    rng: &mut R,
    max_steps: u64,
) -> Result<PathAudit> {
    let s = params.crossing_level(logx);
    let mut state = PathState::new();
    let mut audit = PathAudit {
        envelope_ok: true,
        monotone_ok: true,
        order_ok: true,
        steps: 0,
    };
    let mut prev = f64::NEG_INFINITY;
    let mut tau: Option<u64> = None;
    let mut big_t: Option<u64> = None;
    let check = |state: &mut PathState, audit: &mut PathAudit, prev: &mut f64| {
        let lz = state.logz(model);
        let tol = 1e-9 * lz.abs().max(1.0);
        if lz > params.log_envelope(state.max_walk) + tol {
            audit.envelope_ok = false;
        }
        if lz < *prev - tol {
            audit.monotone_ok = false;
        }
        *prev = lz;
        lz
    };
    let lz0 = check(&mut state, &mut audit, &mut prev);
    if lz0 > logx {
        big_t = Some(0);
    }
    if state.walk > s {
        tau = Some(0);
    }
    if let Some(k) = kernel {
        while state.walk <= s {
            if state.n >= max_steps {
                return Err(Error::MaxSteps(max_steps));
            }
            coupled_step_tilted(model, params, k, &mut state, rng)?;
            let lz = check(&mut state, &mut audit, &mut prev);
            if big_t.is_none() && lz > logx {
                big_t = Some(state.n);
            }
        }
        tau = Some(state.n);
    }
    for _ in 0..extra {
        coupled_step_original(model, params, &mut state, rng);
        let lz = check(&mut state, &mut audit, &mut prev);
        if tau.is_none() && state.walk > s {
            tau = Some(state.n);
        }
        if big_t.is_none() && lz > logx {
            big_t = Some(state.n);
        }
    }
    if let Some(t) = big_t {
        audit.order_ok = matches!(tau, Some(ta) if ta <= t);
    }
    audit.steps = state.n;
    Ok(audit)
}
