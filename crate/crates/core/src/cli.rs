//! Run configuration and the subcommands behind the binary. Every
//! replication draws from its own stream `(seed, cell, rep)` and results are
//! reduced in replication order, so output depends on the config and seed only.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    asymptote, estimate_cmc, estimate_rg, estimate_truncated_nested, replicate, walk_crossing_cmc, RGConfig,
    ReplicationResult,
};
use crate::iskernel::{ISKernel, LyapunovForm, DEFAULT_ASTAR, DEFAULT_DELTA, DEFAULT_EXPONENT, DEFAULT_MAX_STEPS};
use crate::recursion::{audit_path, CouplingParams, RecursionModel};
use crate::rng::{cell_tag, stream};
use crate::stats::{efficiency_report, summarize, SummaryStats};
use crate::tailmodels::TailModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    /// `P(X > t) = exp(-scale (t + shift)^shape)` for `t >= -shift`.
    ShiftedWeibull { shape: f64, scale: f64, shift: f64 },
    /// `P(X > t) = (1 + (t - loc)/scale)^(-index)` for `t >= loc`.
    Pareto { index: f64, scale: f64, loc: f64 },
    Discrete { points: Vec<f64>, weights: Vec<f64> },
    Point { value: f64 },
}

impl DistSpec {
    pub fn build(&self) -> Result<TailModel> {
        match self {
            DistSpec::ShiftedWeibull { shape, scale, shift } => TailModel::shifted_weibull(*shape, *scale, *shift),
            DistSpec::Pareto { index, scale, loc } => TailModel::pareto(*index, *scale, *loc),
            DistSpec::Discrete { points, weights } => TailModel::discrete(points, weights),
            DistSpec::Point { value } => TailModel::point(*value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `Z = A Z' + 1`.
    Perpetuity { log_a: DistSpec },
    /// `Z = A Z' + B` with `A`, `B` independent and `B > 0`.
    Affine { log_a: DistSpec, log_b: DistSpec },
    /// `Z = sqrt(A Z'^2 + B Z' + C)`, stepping through a fixed pool of draws.
    Goldie {
        log_a: DistSpec,
        log_b: DistSpec,
        log_c: DistSpec,
        #[serde(default = "default_pool_size")]
        pool_size: usize,
        #[serde(default)]
        pool_seed: u64,
    },
}

fn default_pool_size() -> usize {
    4096
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Perpetuity {
            log_a: DistSpec::ShiftedWeibull {
                shape: 0.5,
                scale: 2.0,
                shift: 1.5,
            },
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<RecursionModel> {
        match self {
            ModelSpec::Perpetuity { log_a } => RecursionModel::m1(log_a.build()?),
            ModelSpec::Affine { log_a, log_b } => RecursionModel::m2(log_a.build()?, log_b.build()?),
            ModelSpec::Goldie {
                log_a,
                log_b,
                log_c,
                pool_size,
                pool_seed,
            } => RecursionModel::goldie(&log_a.build()?, &log_b.build()?, &log_c.build()?, *pool_size, *pool_seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

/// `γ2` either fixed or searched for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma2 {
    Fixed(f64),
    Auto(AutoTag),
}

impl Default for Gamma2 {
    fn default() -> Self {
        Gamma2::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub x_log10: Vec<f64>,
    /// Truncation used by the importance-sampling side.
    pub is_m: u64,
    pub is_reps: u64,
    pub cmc_reps: u64,
    pub horizon: u64,
    /// Expected crude hits below which the oracle refuses to run.
    pub min_hits: f64,
    /// Fixed `a*` for the oracle; when absent the run's `a*` is doubled until
    /// the gate passes at each oracle level.
    pub astar: Option<f64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            x_log10: vec![50f64.log10()],
            is_m: 1024,
            is_reps: 100_000,
            cmc_reps: 1_000_000,
            horizon: 10_000,
            min_hits: 1000.0,
            astar: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub x_log10: Vec<f64>,
    pub m_values: Vec<u64>,
    /// Add the randomized-truncation column.
    pub rg: bool,
    pub truncation: RGConfig,
    pub reps: u64,
    pub seed: u64,
    pub astar: f64,
    pub delta: f64,
    /// Defaults to half the drift of the coupled walk.
    pub gamma1: Option<f64>,
    pub gamma2: Gamma2,
    pub gamma2_margin: f64,
    pub gamma2_budget: usize,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub max_steps: u64,
    pub verify_points: usize,
    pub verify_exponent: f64,
    pub lyapunov_form: LyapunovForm,
    /// Diagnostic escape hatch: run without the `a*` gate.
    pub skip_verify: bool,
    /// Fill the `seconds` column (makes output timing-dependent).
    pub timing: bool,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            x_log10: vec![8.0, 16.0, 32.0, 64.0],
            m_values: vec![4, 16, 64, 256],
            rg: true,
            truncation: RGConfig::default(),
            reps: 200_000,
            seed: 1,
            astar: DEFAULT_ASTAR,
            delta: DEFAULT_DELTA,
            gamma1: None,
            gamma2: Gamma2::default(),
            gamma2_margin: 0.1,
            gamma2_budget: 100_000,
            threads: None,
            out: None,
            trace: None,
            max_steps: DEFAULT_MAX_STEPS,
            verify_points: 101,
            verify_exponent: DEFAULT_EXPONENT,
            lyapunov_form: LyapunovForm::default(),
            skip_verify: false,
            timing: false,
            oracle: OracleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn table1() -> Self {
        Self::default()
    }

    pub fn figure1() -> Self {
        Self {
            rg: false,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.x_log10.iter().any(|x| !x.is_finite()) {
            return bad("x_log10 values must be finite".into());
        }
        if self.m_values.iter().any(|&m| m < 1) {
            return bad("M values must be >= 1".into());
        }
        if self.reps < 2 {
            return bad("reps must be >= 2".into());
        }
        if !(self.astar <= 0.0) {
            return bad(format!("a* must be <= 0, got {}", self.astar));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if let Gamma2::Fixed(g) = self.gamma2 {
            if !(g >= 0.0 && g.is_finite()) {
                return bad(format!("gamma2 must be >= 0, got {g}"));
            }
        }
        if self.verify_points == 0 {
            return bad("verify_points must be positive (empty verification grid)".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        self.truncation.validate().map_err(|e| Error::Config(e.to_string()))?;
        let o = &self.oracle;
        if o.is_reps < 2 || o.cmc_reps < 2 || o.is_m < 1 || o.x_log10.iter().any(|x| !x.is_finite()) {
            return bad("oracle needs reps >= 2, M >= 1 and finite x values".into());
        }
        if let Some(a) = o.astar {
            if !(a <= 0.0) {
                return bad(format!("oracle a* must be <= 0, got {a}"));
            }
        }
        Ok(())
    }

    fn params(&self, model: &RecursionModel) -> Result<CouplingParams> {
        let g2 = match self.gamma2 {
            Gamma2::Fixed(g) => Some(g),
            Gamma2::Auto(_) => None,
        };
        CouplingParams::auto(model, self.gamma1, g2, self.gamma2_margin, self.gamma2_budget, self.seed)
    }

    fn kernel(&self, params: &CouplingParams, logx: f64) -> Result<ISKernel> {
        params.kernel(logx, self.astar, self.delta)
    }

    /// The `a*` gate.
    fn gate(&self, kernel: &ISKernel, x_log10: f64) -> Result<()> {
        if self.skip_verify {
            eprintln!("warning: a* verification skipped at x = 1e{x_log10}");
            return Ok(());
        }
        let grid = kernel.default_verify_grid(self.verify_points);
        let rep = kernel.verify_astar_with(self.verify_exponent, &grid, self.lyapunov_form)?;
        if !rep.pass {
            return Err(Error::Gate(format!(
                "a* = {} fails at x = 1e{x_log10}: worst margin {:.6} at y = {:.6}",
                kernel.astar(),
                rep.worst_margin,
                rep.worst_point
            )));
        }
        Ok(())
    }

    /// Oracle kernel: the fixed oracle `a*` if given, otherwise the run's `a*`
    /// doubled until the gate passes. Shallow levels need a much deeper shift
    /// than the table levels.
    fn oracle_kernel(&self, params: &CouplingParams, logx: f64, x_log10: f64) -> Result<ISKernel> {
        if let Some(a) = self.oracle.astar {
            let k = params.kernel(logx, a, self.delta)?;
            self.gate(&k, x_log10)?;
            return Ok(k);
        }
        let mut k = self.kernel(params, logx)?;
        let mut last = None;
        for _ in 0..=ORACLE_ASTAR_DOUBLINGS {
            match self.gate(&k, x_log10) {
                Ok(()) => return Ok(k),
                Err(e @ Error::Gate(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
            let next = if k.astar() < 0.0 { 2.0 * k.astar() } else { -1.0 };
            k = k.with_astar(next)?;
        }
        Err(last.expect("at least one gate attempt"))
    }
}

const ORACLE_ASTAR_DOUBLINGS: usize = 10;

/// Exit status for an error: 2 config, 3 gate failure, 4 oracle infeasible, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Gate(_) => 3,
        Error::OracleInfeasible(_) => 4,
        _ => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub x_log10: f64,
    #[serde(rename = "M_or_RG")]
    pub m_or_rg: String,
    pub n: u64,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub cv: f64,
    /// `NA` unless timing is requested.
    pub seconds: String,
}

impl CsvRow {
    fn new(x_log10: f64, label: String, s: &SummaryStats) -> Self {
        let (ci_lo, ci_hi) = s.ci();
        Self {
            x_log10,
            m_or_rg: label,
            n: s.n,
            mean: s.mean,
            ci_lo,
            ci_hi,
            cv: s.cv,
            seconds: s.seconds.map_or_else(|| "NA".to_string(), |t| format!("{t:.3}")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct TraceRow {
    x_log10: f64,
    #[serde(rename = "M_or_RG")]
    m_or_rg: String,
    rep: u64,
    tau: u64,
    horizon: u64,
    l_value: f64,
}

/// One `(x, M or RG)` cell with its raw replications.
#[derive(Debug, Clone)]
pub struct Cell {
    pub row: CsvRow,
    pub stats: SummaryStats,
    pub draws: Vec<ReplicationResult>,
}

/// Run the estimator grid. Cells come out ordered by `x`, then `M`, then RG.
pub fn run_grid(cfg: &RunConfig) -> Result<Vec<Cell>> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let params = cfg.params(&model)?;
    let mut ms = cfg.m_values.clone();
    ms.sort_unstable();
    ms.dedup();
    let mut cells = Vec::new();
    for &lx in &cfg.x_log10 {
        let logx = lx * std::f64::consts::LN_10;
        let kernel = cfg.kernel(&params, logx)?;
        cfg.gate(&kernel, lx)?;
        if !ms.is_empty() {
            let t = Instant::now();
            let runs = replicate(cfg.reps, cfg.seed, cell_tag(&format!("nested:{lx}")), |r| {
                estimate_truncated_nested(&model, &params, &kernel, logx, &ms, r, cfg.max_steps)
            })?;
            let secs = t.elapsed().as_secs_f64();
            for (j, &m) in ms.iter().enumerate() {
                let draws: Vec<ReplicationResult> = runs.iter().map(|v| v[j]).collect();
                cells.push(make_cell(cfg, lx, m.to_string(), draws, secs)?);
            }
        }
        if cfg.rg {
            let t = Instant::now();
            let draws = replicate(cfg.reps, cfg.seed, cell_tag(&format!("rg:{lx}")), |r| {
                estimate_rg(&model, &params, &kernel, logx, &cfg.truncation, r, cfg.max_steps)
            })?;
            let secs = t.elapsed().as_secs_f64();
            cells.push(make_cell(cfg, lx, "RG".to_string(), draws, secs)?);
        }
    }
    Ok(cells)
}

fn make_cell(cfg: &RunConfig, lx: f64, label: String, draws: Vec<ReplicationResult>, secs: f64) -> Result<Cell> {
    let values: Vec<f64> = draws.iter().map(|d| d.l_value).collect();
    let mut stats = summarize(&values)?;
    if cfg.timing {
        stats = stats.with_seconds(secs);
    }
    Ok(Cell {
        row: CsvRow::new(lx, label, &stats),
        stats,
        draws,
    })
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn write_rows<T: Serialize>(rows: &[T], out: Option<&Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(open_out(out)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace(cells: &[Cell], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        for (i, d) in c.draws.iter().enumerate() {
            w.serialize(TraceRow {
                x_log10: c.row.x_log10,
                m_or_rg: c.row.m_or_rg.clone(),
                rep: i as u64,
                tau: d.tau,
                horizon: d.horizon_used,
                l_value: d.l_value,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `estimate`, `table1` and `figure1`: run the grid and write the CSV.
pub fn cmd_estimate(cfg: &RunConfig) -> Result<Vec<CsvRow>> {
    let cells = run_grid(cfg)?;
    if let Some(p) = &cfg.trace {
        write_trace(&cells, p)?;
    }
    let rows: Vec<CsvRow> = cells.iter().map(|c| c.row.clone()).collect();
    write_rows(&rows, cfg.out.as_deref())?;
    report_efficiency(cfg, &cells)?;
    Ok(rows)
}

fn report_efficiency(cfg: &RunConfig, cells: &[Cell]) -> Result<()> {
    let Some(&m) = cfg.m_values.iter().max() else {
        return Ok(());
    };
    let label = m.to_string();
    let model = cfg.model.build()?;
    let mut per_x = Vec::new();
    let mut asy = Vec::new();
    for c in cells.iter().filter(|c| c.row.m_or_rg == label) {
        per_x.push((c.row.x_log10, c.stats));
        asy.push(asymptote(&model, c.row.x_log10 * std::f64::consts::LN_10)?);
    }
    if per_x.len() < 2 {
        return Ok(());
    }
    let rep = efficiency_report(&per_x, &asy);
    for r in &rep.rows {
        eprintln!(
            "efficiency x=1e{} M={m}: E[L^2]/mean^2 = {:.4}, mean/asymptote = {:.4}",
            r.x_log10, r.second_moment_ratio, r.mean_over_asymptote
        );
    }
    if rep.flagged {
        eprintln!("efficiency flag: second-moment ratio spread {:.3} exceeds the limit", rep.spread);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyLine {
    pub x_log10: f64,
    pub check: String,
    pub pass: bool,
    pub detail: String,
}

/// `verify`: the `a*` condition, the sampler self-test and the path audit at
/// every `x`. Fails with a gate error if anything fails.
pub fn cmd_verify(cfg: &RunConfig) -> Result<Vec<VerifyLine>> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let params = cfg.params(&model)?;
    let mut lines = Vec::new();
    for &lx in &cfg.x_log10 {
        let logx = lx * std::f64::consts::LN_10;
        let kernel = cfg.kernel(&params, logx)?;
        let grid = kernel.default_verify_grid(cfg.verify_points);
        let rep = kernel.verify_astar_with(cfg.verify_exponent, &grid, cfg.lyapunov_form)?;
        lines.push(VerifyLine {
            x_log10: lx,
            check: "astar".into(),
            pass: rep.pass,
            detail: format!(
                "a*={} worst margin {:.6} at y={:.6}; {} underflow points",
                cfg.astar,
                rep.worst_margin,
                rep.worst_point,
                rep.underflow.len()
            ),
        });
        for c in [0.0, 1.0, 2.0] {
            let detail = match kernel.sampler_self_test(c, 20_000, cfg.seed) {
                Ok(t) => (t.pass(), format!("c={c} ks={:.5} critical={:.5}", t.ks, t.critical)),
                Err(e) => (false, format!("c={c}: {e}")),
            };
            lines.push(VerifyLine {
                x_log10: lx,
                check: "sampler".into(),
                pass: detail.0,
                detail: detail.1,
            });
        }
        let paths = 200;
        let tag = cell_tag(&format!("audit:{lx}"));
        let mut bad = [0u64; 2];
        for i in 0..paths {
            let mut r = stream(cfg.seed, tag, i);
            if !audit_path(&model, &params, Some(&kernel), logx, 64, &mut r, cfg.max_steps)?.ok() {
                bad[0] += 1;
            }
            if !audit_path(&model, &params, None, logx, 256, &mut r, cfg.max_steps)?.ok() {
                bad[1] += 1;
            }
        }
        lines.push(VerifyLine {
            x_log10: lx,
            check: "envelope".into(),
            pass: bad == [0, 0],
            detail: format!("{paths} paths per measure; failures tilted={} original={}", bad[0], bad[1]),
        });
    }
    write_rows(&lines, cfg.out.as_deref())?;
    if let Some(l) = lines.iter().find(|l| !l.pass) {
        return Err(Error::Gate(format!("{} check failed at x = 1e{}: {}", l.check, l.x_log10, l.detail)));
    }
    Ok(lines)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleLine {
    pub x_log10: f64,
    pub astar: f64,
    pub is_mean: f64,
    pub is_ci_lo: f64,
    pub is_ci_hi: f64,
    pub cmc_mean: f64,
    pub cmc_ci_lo: f64,
    pub cmc_ci_hi: f64,
    pub verdict: String,
}

fn oracle_line(lx: f64, astar: f64, is: &SummaryStats, cmc: &SummaryStats) -> OracleLine {
    let (a, b) = is.ci();
    let (c, d) = cmc.ci();
    OracleLine {
        x_log10: lx,
        astar,
        is_mean: is.mean,
        is_ci_lo: a,
        is_ci_hi: b,
        cmc_mean: cmc.mean,
        cmc_ci_lo: c,
        cmc_ci_hi: d,
        verdict: if is.overlaps(cmc) { "pass" } else { "fail" }.into(),
    }
}

/// `oracle`: importance sampling against crude Monte Carlo. Refuses levels
/// where the crude run would see fewer than `min_hits` exceedances.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<Vec<OracleLine>> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let params = cfg.params(&model)?;
    let o = &cfg.oracle;
    let mut lines = Vec::new();
    for &lx in &o.x_log10 {
        let logx = lx * std::f64::consts::LN_10;
        let guess = asymptote(&model, logx)?.min(1.0);
        if guess * (o.cmc_reps as f64) < o.min_hits {
            return Err(Error::OracleInfeasible(format!(
                "x = 1e{lx}: probability near {guess:.3e} gives about {:.0} hits in {} crude paths",
                guess * o.cmc_reps as f64,
                o.cmc_reps
            )));
        }
        let kernel = cfg.oracle_kernel(&params, logx, lx)?;
        let draws = replicate(o.is_reps, cfg.seed, cell_tag(&format!("oracle-is:{lx}")), |r| {
            estimate_truncated_nested(&model, &params, &kernel, logx, &[o.is_m], r, cfg.max_steps).map(|v| v[0].l_value)
        })?;
        let is = summarize(&draws)?;
        let cmc = estimate_cmc(&model, logx, o.horizon, o.cmc_reps, cfg.seed, cell_tag(&format!("oracle-cmc:{lx}")))?;
        lines.push(oracle_line(lx, kernel.astar(), &is, &cmc));
    }
    write_rows(&lines, cfg.out.as_deref())?;
    Ok(lines)
}

/// Walk-crossing check: `P(max_n S_n(γ) > s)` by the kernel alone against
/// direct simulation of the walk.
pub fn walk_crossing_oracle(
    kernel: &ISKernel,
    is_reps: u64,
    cmc_reps: u64,
    horizon: u64,
    seed: u64,
    max_steps: u64,
) -> Result<(SummaryStats, SummaryStats)> {
    let draws = replicate(is_reps, seed, cell_tag("walk-is"), |r| {
        Ok(kernel.run_walk_to_cross(r, max_steps, |_| Ok(()))?.log_lr.exp())
    })?;
    let is = summarize(&draws)?;
    let cmc = walk_crossing_cmc(kernel.increment(), kernel.level(), horizon, cmc_reps, seed, cell_tag("walk-cmc"))?;
    Ok((is, cmc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn gamma2_accepts_number_or_auto() {
        let c = RunConfig::from_json(r#"{"gamma2": 1.5}"#).unwrap();
        assert_eq!(c.gamma2, Gamma2::Fixed(1.5));
        let c = RunConfig::from_json(r#"{"gamma2": "auto"}"#).unwrap();
        assert_eq!(c.gamma2, Gamma2::Auto(AutoTag::Auto));
        assert!(RunConfig::from_json(r#"{"gamma2": "sometimes"}"#).is_err());
    }

    #[test]
    fn invalid_configs_map_to_exit_code_two() {
        for text in [
            r#"{"reps": 1}"#,
            r#"{"astar": 1.0}"#,
            r#"{"m_values": [0]}"#,
            r#"{"verify_points": 0}"#,
            r#"{"delta": 1.0}"#,
            r#"{"unknown": 3}"#,
            r#"{"truncation": {"law": "geometric", "p": 1.5}}"#,
            "not json",
        ] {
            let e = RunConfig::from_json(text).unwrap_err();
            assert_eq!(exit_code(&e), 2, "{text}");
        }
    }

    #[test]
    fn model_specs_build() {
        let text = r#"{"model": {"kind": "affine",
            "log_a": {"family": "shifted_weibull", "shape": 0.5, "scale": 2.0, "shift": 1.5},
            "log_b": {"family": "pareto", "index": 3.0, "scale": 1.0, "loc": -2.0}}}"#;
        let c = RunConfig::from_json(text).unwrap();
        assert_eq!(c.model.build().unwrap().name(), "M2");
        assert_eq!(RunConfig::default().model.build().unwrap().name(), "M1");
    }

    #[test]
    fn oracle_deepens_astar_until_the_gate_passes() {
        let cfg = RunConfig::default();
        let model = cfg.model.build().unwrap();
        let params = cfg.params(&model).unwrap();
        let lx = 50f64.log10();
        let logx = 50f64.ln();
        assert_eq!(exit_code(&cfg.gate(&cfg.kernel(&params, logx).unwrap(), lx).unwrap_err()), 3);
        let k = cfg.oracle_kernel(&params, logx, lx).unwrap();
        assert_eq!(k.astar(), -160.0);
        let fixed = RunConfig {
            oracle: OracleConfig {
                astar: Some(-10.0),
                ..OracleConfig::default()
            },
            ..RunConfig::default()
        };
        assert_eq!(exit_code(&fixed.oracle_kernel(&params, logx, lx).unwrap_err()), 3);
    }

    #[test]
    fn gate_rejects_unshifted_kernel_at_level_zero() {
        let cfg = RunConfig {
            astar: 0.0,
            x_log10: vec![(1.0 / (1.0 - (-0.5f64).exp())).log10()],
            reps: 10,
            ..RunConfig::default()
        };
        let e = run_grid(&cfg).unwrap_err();
        assert_eq!(exit_code(&e), 3);
    }

    #[test]
    fn oracle_refuses_rare_levels() {
        let cfg = RunConfig {
            oracle: OracleConfig {
                x_log10: vec![8.0],
                ..OracleConfig::default()
            },
            out: Some(std::env::temp_dir().join("unused-oracle.csv")),
            ..RunConfig::default()
        };
        assert_eq!(exit_code(&cmd_oracle(&cfg).unwrap_err()), 4);
    }

    #[test]
    fn small_grid_is_deterministic() {
        let cfg = RunConfig {
            x_log10: vec![4.0],
            m_values: vec![4, 16],
            reps: 200,
            ..RunConfig::default()
        };
        let a: Vec<CsvRow> = run_grid(&cfg).unwrap().into_iter().map(|c| c.row).collect();
        let b: Vec<CsvRow> = run_grid(&cfg).unwrap().into_iter().map(|c| c.row).collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].m_or_rg, "RG");
        assert_eq!(a[0].seconds, "NA");
        assert!(a[0].mean <= a[1].mean);
    }
}
