//! Estimators of `P(Z > x)`: the truncated importance-sampling estimator
//! `L^Δ(x, M)`, its randomized-truncation debiasing, a crude Monte Carlo
//! oracle, the integrated-tail asymptote, and the limit law of the overshoot
//! statistic `ξ_x` for regularly varying `log A`.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iskernel::ISKernel;
use crate::numeric::log_add_exp;
use crate::recursion::{coupled_step_original, run_to_tau, CouplingParams, MapKind, PathState, RecursionModel};
use crate::rng::{open01, stream, Stream};
use crate::stats::{Accumulator, SummaryStats};
use crate::tailmodels::TailModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub l_value: f64,
    pub tau: u64,
    /// Steps simulated in total (tilted plus original).
    pub horizon_used: u64,
    pub indicator: bool,
}

fn check_level(params: &CouplingParams, kernel: &ISKernel, logx: f64) -> Result<()> {
    let s = params.crossing_level(logx);
    if (kernel.level() - s).abs() > 1e-12 * s.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "kernel level {} does not match s(x) = {s}",
            kernel.level()
        )));
    }
    Ok(())
}

/// Continue a crossed path under the original law until `n` steps past `τ`
/// have been taken or `Z` exceeds `x` (after which the indicator cannot
/// change, since `Z^(n)` is nondecreasing in `n`).
struct Continuation<'a> {
    model: &'a RecursionModel,
    params: &'a CouplingParams,
    logx: f64,
    state: PathState,
    after: u64,
    hit: bool,
}

impl<'a> Continuation<'a> {
    fn new(model: &'a RecursionModel, params: &'a CouplingParams, logx: f64, mut state: PathState) -> Self {
        let hit = state.logz(model) > logx;
        Self {
            model,
            params,
            logx,
            state,
            after: 0,
            hit,
        }
    }

    fn extend_to<R: RngCore + ?Sized>(&mut self, target: u64, rng: &mut R) -> bool {
        // affine maps update Z in O(1), so checking every step is free; other
        // maps re-evaluate the composition, so check only at the target
        let every_step = self.model.map_kind() == MapKind::Affine;
        while !self.hit && self.after < target {
            coupled_step_original(self.model, self.params, &mut self.state, rng);
            self.after += 1;
            if every_step && self.state.logz(self.model) > self.logx {
                self.hit = true;
            }
        }
        if !self.hit && self.state.logz(self.model) > self.logx {
            self.hit = true;
        }
        self.hit
    }
}

/// `L^Δ(x, M)` for each `M` in `ms` (ascending), all from one path: the runs
/// share `τ` and the likelihood ratio and differ only in how many original
/// steps follow, so the values are pathwise nondecreasing in `M`.
pub fn estimate_truncated_nested<R: RngCore + ?Sized>(
    model: &RecursionModel,
    params: &CouplingParams,
    kernel: &ISKernel,
    logx: f64,
    ms: &[u64],
    rng: &mut R,
    max_steps: u64,
) -> Result<Vec<ReplicationResult>> {
    if ms.is_empty() || ms.iter().any(|&m| m < 1) || ms.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("M values must be >= 1 and ascending"));
    }
    check_level(params, kernel, logx)?;
    let state = run_to_tau(model, params, kernel, rng, max_steps)?;
    let tau = state.n;
    let weight = state.log_lr.exp();
    let mut cont = Continuation::new(model, params, logx, state);
    let mut out = Vec::with_capacity(ms.len());
    for &m in ms {
        let hit = cont.extend_to(m, rng);
        out.push(ReplicationResult {
            l_value: if hit { weight } else { 0.0 },
            tau,
            horizon_used: tau + cont.after,
            indicator: hit,
        });
    }
    Ok(out)
}

pub fn estimate_truncated<R: RngCore + ?Sized>(
    model: &RecursionModel,
    params: &CouplingParams,
    kernel: &ISKernel,
    logx: f64,
    m: u64,
    rng: &mut R,
    max_steps: u64,
) -> Result<ReplicationResult> {
    Ok(estimate_truncated_nested(model, params, kernel, logx, &[m], rng, max_steps)?[0])
}

/// Law of the truncation index `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum RGConfig {
    /// `P(N >= i) = (1 - p)^i`.
    Geometric { p: f64 },
    /// `P(N >= i) = 2^{-i (1 + ε)}`.
    Power { eps: f64 },
}

impl Default for RGConfig {
    fn default() -> Self {
        RGConfig::Geometric { p: 0.5 }
    }
}

impl RGConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RGConfig::Geometric { p } if p > 0.0 && p < 1.0 => Ok(()),
            RGConfig::Power { eps } if eps >= 0.0 && eps.is_finite() => Ok(()),
            other => Err(Error::invalid(format!("invalid truncation law {other:?}"))),
        }
    }

    /// `log P(N >= i)`.
    pub fn log_survival(&self, i: u32) -> f64 {
        match *self {
            RGConfig::Geometric { p } => i as f64 * (-p).ln_1p(),
            RGConfig::Power { eps } => -(i as f64) * (1.0 + eps) * std::f64::consts::LN_2,
        }
    }

    /// Inverse-transform draw from a uniform in (0, 1).
    pub fn draw(&self, u: f64) -> u32 {
        let n = match *self {
            RGConfig::Geometric { p } => u.ln() / (-p).ln_1p(),
            RGConfig::Power { eps } => -u.log2() / (1.0 + eps),
        };
        n.floor().clamp(0.0, 62.0) as u32
    }
}

/// Randomized-truncation estimator
/// `Σ_{i<=N} (L^Δ(x, 2^i) - L^Δ(x, 2^{i-1})) / P(N >= i)` with `L^Δ(x, 2^{-1}) = 0`.
/// The truncations are prefixes of one path, so at most one difference is
/// nonzero: the first `i` whose horizon sees `Z > x`.
pub fn estimate_rg<R: RngCore + ?Sized>(
    model: &RecursionModel,
    params: &CouplingParams,
    kernel: &ISKernel,
    logx: f64,
    rg: &RGConfig,
    rng: &mut R,
    max_steps: u64,
) -> Result<ReplicationResult> {
    rg.validate()?;
    check_level(params, kernel, logx)?;
    let n = rg.draw(open01(rng));
    estimate_rg_with_n(model, params, kernel, logx, rg, n, rng, max_steps)
}

/// [`estimate_rg`] with the truncation index fixed.
#[allow(clippy::too_many_arguments)]
pub fn estimate_rg_with_n<R: RngCore + ?Sized>(
    model: &RecursionModel,
    params: &CouplingParams,
    kernel: &ISKernel,
    logx: f64,
    rg: &RGConfig,
    n: u32,
    rng: &mut R,
    max_steps: u64,
) -> Result<ReplicationResult> {
    let state = run_to_tau(model, params, kernel, rng, max_steps)?;
    let tau = state.n;
    let log_lr = state.log_lr;
    let mut cont = Continuation::new(model, params, logx, state);
    for i in 0..=n {
        if !cont.hit && tau.saturating_add(1u64 << i) > max_steps {
            return Err(Error::MaxSteps(max_steps));
        }
        if cont.extend_to(1u64 << i, rng) {
            return Ok(ReplicationResult {
                l_value: (log_lr - rg.log_survival(i)).exp(),
                tau,
                horizon_used: tau + cont.after,
                indicator: true,
            });
        }
    }
    Ok(ReplicationResult {
        l_value: 0.0,
        tau,
        horizon_used: tau + cont.after,
        indicator: false,
    })
}

/// One crude draw of `1{Z^(horizon) > x}`, stopping at the first exceedance.
pub fn cmc_indicator<R: RngCore + ?Sized>(model: &RecursionModel, logx: f64, horizon: u64, rng: &mut R) -> bool {
    // Z^(0) = 0
    if logx.is_nan() {
        return false;
    }
    if logx < 0.0 && logx.is_infinite() {
        return horizon > 0;
    }
    match model.map_kind() {
        MapKind::Affine => {
            let mut logz = f64::NEG_INFINITY;
            let mut log_prod = 0.0;
            for _ in 0..horizon {
                let d = model.draw(rng);
                let term = d.log_b + log_prod;
                // below this gap the update is an exact no-op in double precision
                if term > logz - 746.0 {
                    logz = log_add_exp(logz, term);
                    if logz > logx {
                        return true;
                    }
                }
                log_prod += d.log_a;
            }
            false
        }
        MapKind::Goldie => {
            let draws: Vec<_> = (0..horizon).map(|_| model.draw(rng)).collect();
            let mut z = f64::NEG_INFINITY;
            for d in draws.iter().rev() {
                z = model.apply(d, z);
            }
            z > logx
        }
    }
}

/// Crude Monte Carlo estimate of `P(Z^(horizon) > x)`. Replication `i` uses
/// stream `(seed, tag, i)`, so the result does not depend on the thread count.
pub fn estimate_cmc(
    model: &RecursionModel,
    logx: f64,
    horizon: u64,
    reps: u64,
    seed: u64,
    tag: u64,
) -> Result<SummaryStats> {
    if reps < 2 {
        return Err(Error::invalid("crude Monte Carlo needs at least 2 replications"));
    }
    let hits: u64 = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, tag, i);
            cmc_indicator(model, logx, horizon, &mut rng) as u64
        })
        .sum();
    bernoulli_summary(hits, reps)
}

/// Direct simulation of `P(max_{n <= horizon} S_n > level)` for the walk
/// with the given increment law.
pub fn walk_crossing_cmc(
    increment: &TailModel,
    level: f64,
    horizon: u64,
    reps: u64,
    seed: u64,
    tag: u64,
) -> Result<SummaryStats> {
    if reps < 2 {
        return Err(Error::invalid("crude Monte Carlo needs at least 2 replications"));
    }
    let hits: u64 = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, tag, i);
            let mut walk = 0.0;
            if walk > level {
                return 1;
            }
            for _ in 0..horizon {
                walk += increment.sample(open01(&mut rng));
                if walk > level {
                    return 1;
                }
            }
            0
        })
        .sum();
    bernoulli_summary(hits, reps)
}

fn bernoulli_summary(hits: u64, n: u64) -> Result<SummaryStats> {
    let mut acc = Accumulator::constant(1.0, hits);
    acc.merge(&Accumulator::constant(0.0, n - hits));
    acc.summary()
}

/// Integrated-tail approximation `F̄_I(log x) / |E log A|`, where `F̄_I` is the
/// integrated tail of `log max(A, B)` (of the bounding pair for pooled maps).
pub fn asymptote(model: &RecursionModel, logx: f64) -> Result<f64> {
    let (law, mean_log_a) = match model {
        RecursionModel::M1 { log_a } => (log_a.clone(), log_a.mean()),
        RecursionModel::M2 { log_a, log_b } => (log_a.clone().max_of(log_b.clone())?, log_a.mean()),
        RecursionModel::M3 { pool, .. } => {
            let pairs: Vec<(f64, f64)> = pool.iter().map(|d| model.bounding_pair(d)).collect();
            let maxes: Vec<f64> = pairs.iter().map(|p| p.0.max(p.1)).collect();
            let mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
            (TailModel::empirical(&maxes)?, mean)
        }
    };
    if !(mean_log_a < 0.0) {
        return Err(Error::invalid("asymptote needs E log A < 0"));
    }
    Ok(law.integrated_tail(logx) / -mean_log_a)
}

fn xi_params_ok(alpha: f64, mu: f64, gamma: f64) -> Result<()> {
    if !(alpha > 0.0 && gamma > 0.0 && gamma < mu && mu.is_finite()) {
        return Err(Error::invalid(format!(
            "need alpha > 0 and 0 < gamma < mu (got {alpha}, {mu}, {gamma})"
        )));
    }
    Ok(())
}

/// Limit density of `ξ_x` given `τ < ∞`.
pub fn xi_density(alpha: f64, mu: f64, gamma: f64, y: f64) -> Result<f64> {
    xi_params_ok(alpha, mu, gamma)?;
    let c = (mu - gamma) / mu;
    Ok(if y < 0.0 {
        c * (1.0 - y / alpha).powf(-alpha - 1.0)
    } else {
        c * (1.0 + (mu - gamma) * y / (alpha * gamma)).powf(-alpha - 1.0)
    })
}

pub fn xi_cdf(alpha: f64, mu: f64, gamma: f64, y: f64) -> Result<f64> {
    xi_params_ok(alpha, mu, gamma)?;
    let c = (mu - gamma) / mu;
    Ok(if y < 0.0 {
        c * (1.0 - y / alpha).powf(-alpha)
    } else {
        c + gamma / mu * (1.0 - (1.0 + (mu - gamma) * y / (alpha * gamma)).powf(-alpha))
    })
}

/// One draw of `ξ_x = [log(x - B'_x) - S'_τ] / (log x / α)` with its
/// likelihood-ratio weight (the law given `τ < ∞` is the weighted law).
/// Only defined for `Z' = A Z + 1`.
pub fn xi_empirical<R: RngCore + ?Sized>(
    model: &RecursionModel,
    params: &CouplingParams,
    kernel: &ISKernel,
    logx: f64,
    alpha: f64,
    rng: &mut R,
    max_steps: u64,
) -> Result<(f64, f64)> {
    if !matches!(model, RecursionModel::M1 { .. }) {
        return Err(Error::invalid("the overshoot statistic is defined for B = 1"));
    }
    if !(logx > 0.0) {
        return Err(Error::invalid("the overshoot statistic needs x > 1"));
    }
    check_level(params, kernel, logx)?;
    let mut state = run_to_tau(model, params, kernel, rng, max_steps)?;
    // B'_x = Z^(τ) <= x because the walk stayed below s(x) before τ
    let log_bprime = state.logz(model);
    let log_gap = logx + (-(log_bprime - logx).exp()).ln_1p();
    let s_prime = state.walk - state.n as f64 * params.gamma1;
    Ok(((log_gap - s_prime) / (logx / alpha), state.log_lr.exp()))
}

/// Run `reps` replications of `f` on streams `(seed, tag, i)` in parallel and
/// return the results in replication order.
pub fn replicate<T, F>(reps: u64, seed: u64, tag: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Stream) -> Result<T> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, tag, i);
            f(&mut rng)
        })
        .collect()
}
