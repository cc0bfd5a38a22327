//! Feedback control by backward Monte-Carlo dynamic programming on a
//! truncated state space, discounted value iteration, and exact oracles.

pub mod oracle;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostAccumulator, CostSpec};
use crate::error::{Error, Result};
use crate::model::{JumpModel, StagedHorizon};
use crate::openloop::StageStatistics;
use crate::policy::{Controller, Decision, OpenLoopPolicy, Provenance};
use crate::rng::{tag, StreamFamily};
use crate::simulate::{advance, Method, PathObserver, Workspace};
use crate::stats::Estimate;

/// Default cap on `|X_cut| · (K + 1)`.
pub const DEFAULT_TABLE_CAP: usize = 10_000_000;

/// Integer hypercube `low ≤ x ≤ high`, enumerated row-major (the last
/// species varies fastest).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedSpace {
    low: Vec<i64>,
    high: Vec<i64>,
    strides: Vec<usize>,
    len: usize,
}

impl TruncatedSpace {
    pub fn new(low: Vec<i64>, high: Vec<i64>) -> Result<Self> {
        if low.is_empty() || low.len() != high.len() {
            return Err(Error::InvalidArgument("box bounds must have equal, positive length".into()));
        }
        if low.iter().zip(&high).any(|(l, h)| l > h || *l < 0) {
            return Err(Error::InvalidArgument(format!(
                "empty or negative box {low:?}..{high:?}"
            )));
        }
        let n = low.len();
        let mut strides = vec![1usize; n];
        let mut len = 1usize;
        for i in (0..n).rev() {
            strides[i] = len;
            let w = (high[i] - low[i] + 1) as usize;
            len = len
                .checked_mul(w)
                .ok_or_else(|| Error::ResourceCap("truncated space too large".into()))?;
        }
        Ok(Self {
            low,
            high,
            strides,
            len,
        })
    }

    /// `[floor(c_i N), ceil(c'_i N)]` per species.
    pub fn from_density(scaling: u64, low: &[f64], high: &[f64]) -> Result<Self> {
        let n = scaling as f64;
        Self::new(
            low.iter().map(|c| (c * n).floor().max(0.0) as i64).collect(),
            high.iter().map(|c| (c * n).ceil() as i64).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn low(&self) -> &[i64] {
        &self.low
    }

    pub fn high(&self) -> &[i64] {
        &self.high
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(v, (l, h))| l <= v && v <= h)
    }

    #[inline]
    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for i in 0..self.low.len() {
            let v = x[i];
            if v < self.low[i] || v > self.high[i] {
                return None;
            }
            idx += (v - self.low[i]) as usize * self.strides[i];
        }
        Some(idx)
    }

    pub fn state(&self, mut idx: usize) -> Vec<i64> {
        let mut x = vec![0; self.dim()];
        for i in 0..self.dim() {
            x[i] = self.low[i] + (idx / self.strides[i]) as i64;
            idx %= self.strides[i];
        }
        x
    }

    /// Nearest member in the Euclidean metric (componentwise clamp).
    pub fn clamp(&self, x: &[i64]) -> Vec<i64> {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(v, (l, h))| *v.max(l).min(h))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len).map(|i| self.state(i))
    }
}

/// Box covering `mean ± width·σ` of every good policy at every stage.
pub fn suggest_space(scaling: u64, stats: &StageStatistics, width: f64) -> Result<TruncatedSpace> {
    let dim = stats
        .mean
        .first()
        .and_then(|m| m.first())
        .map(|v| v.len())
        .ok_or_else(|| Error::InvalidArgument("empty stage statistics".into()))?;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for (mk, sk) in stats.mean.iter().zip(&stats.std) {
        for (mu, sd) in mk.iter().zip(sk) {
            for i in 0..dim {
                lo[i] = lo[i].min(mu[i] - width * sd[i]);
                hi[i] = hi[i].max(mu[i] + width * sd[i]);
            }
        }
    }
    TruncatedSpace::from_density(scaling, &lo, &hi)
}

/// Values and minimizing controls per stage; stage `K` holds `ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub space: TruncatedSpace,
    /// `values[k][i]` for stage `k` and state index `i`.
    pub values: Vec<Vec<f64>>,
    /// Standard error of the minimizing backup (zero at stage `K`).
    pub stderr: Vec<Vec<f64>>,
    pub argmin: Vec<Vec<usize>>,
}

impl ValueTable {
    pub fn stages(&self) -> usize {
        self.argmin.len()
    }

    pub fn value(&self, stage: usize, x: &[i64]) -> Option<f64> {
        self.space.index_of(x).map(|i| self.values[stage][i])
    }

    pub fn control(&self, stage: usize, x: &[i64]) -> Option<usize> {
        self.space.index_of(x).map(|i| self.argmin[stage][i])
    }

    /// `stage,<species…>,value,argmin_control`; the control is empty at `K`.
    pub fn to_csv(&self, species: &[String]) -> String {
        let mut s = String::from("stage");
        for name in species {
            s.push(',');
            s.push_str(name);
        }
        s.push_str(",value,argmin_control\n");
        for (k, vals) in self.values.iter().enumerate() {
            for (i, v) in vals.iter().enumerate() {
                let _ = write!(s, "{k}");
                for c in self.space.state(i) {
                    let _ = write!(s, ",{c}");
                }
                match self.argmin.get(k) {
                    Some(a) => {
                        let _ = writeln!(s, ",{v},{}", a[i]);
                    }
                    None => {
                        let _ = writeln!(s, ",{v},");
                    }
                }
            }
        }
        s
    }
}

/// What a feedback policy does outside its table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fallback {
    /// Report a lookup error.
    None,
    /// Apply the given open-loop control for that stage.
    OpenLoop(OpenLoopPolicy),
    /// Use the control of the nearest table state.
    ClampToBox,
}

/// Per-stage control tables over a truncated space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPolicy {
    pub space: TruncatedSpace,
    pub controls: Vec<Vec<usize>>,
    pub fallback: Fallback,
}

impl FeedbackPolicy {
    pub fn from_table(table: &ValueTable, fallback: Fallback) -> Self {
        Self {
            space: table.space.clone(),
            controls: table.argmin.clone(),
            fallback,
        }
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Self {
        self.fallback = fallback;
        self
    }
}

impl Controller for FeedbackPolicy {
    fn decide(&self, stage: usize, state: &[i64]) -> Result<Decision> {
        let row = self.controls.get(stage).ok_or_else(|| Error::PolicyLookup {
            stage,
            state: state.to_vec(),
        })?;
        if let Some(i) = self.space.index_of(state) {
            return Ok(Decision {
                control: row[i],
                provenance: Provenance::Table,
            });
        }
        match &self.fallback {
            Fallback::None => Err(Error::PolicyLookup {
                stage,
                state: state.to_vec(),
            }),
            Fallback::OpenLoop(p) => Ok(Decision {
                control: p.controls()[stage],
                provenance: Provenance::OpenLoop,
            }),
            Fallback::ClampToBox => {
                let i = self.space.index_of(&self.space.clamp(state)).expect("clamped state in box");
                Ok(Decision {
                    control: row[i],
                    provenance: Provenance::Clamped,
                })
            }
        }
    }
}

/// One control for all stages, as produced by value iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    pub space: TruncatedSpace,
    pub controls: Vec<usize>,
}

impl Controller for StationaryPolicy {
    /// Outside the space the nearest box state decides.
    fn decide(&self, _stage: usize, state: &[i64]) -> Result<Decision> {
        match self.space.index_of(state) {
            Some(i) => Ok(Decision {
                control: self.controls[i],
                provenance: Provenance::Table,
            }),
            None => {
                let i = self.space.index_of(&self.space.clamp(state)).expect("clamped state in box");
                Ok(Decision {
                    control: self.controls[i],
                    provenance: Provenance::Clamped,
                })
            }
        }
    }
}

/// Settings shared by the DP and VI solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpOptions {
    /// Accepted paths per `(state, control)` backup.
    pub paths: usize,
    pub method: Method,
    pub seed: u64,
    /// Regenerations allowed per backup, as a multiple of `paths`.
    pub regen_factor: usize,
    /// Largest tolerated fraction of backups hitting the regeneration cap.
    pub max_capped_fraction: f64,
    /// Cap on `|X_cut| · (K + 1)`.
    pub table_cap: usize,
}

impl DpOptions {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self {
            paths,
            method: Method::Ssa,
            seed,
            regen_factor: 100,
            max_capped_fraction: 0.1,
            table_cap: DEFAULT_TABLE_CAP,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }
}

/// Rejection statistics of a solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DpDiagnostics {
    /// `(state, control)` backups computed.
    pub backups: usize,
    /// Paths discarded because their endpoint left the space.
    pub regenerations: u64,
    /// Backups that exhausted the regeneration budget.
    pub capped_backups: usize,
    /// Out-of-space endpoints valued at the nearest box state.
    pub clamped_paths: u64,
}

impl DpDiagnostics {
    fn merge(&mut self, o: &DpDiagnostics) {
        self.backups += o.backups;
        self.regenerations += o.regenerations;
        self.capped_backups += o.capped_backups;
        self.clamped_paths += o.clamped_paths;
    }

    fn check(&self, max_fraction: f64) -> Result<()> {
        if self.capped_backups as f64 > max_fraction * self.backups as f64 {
            return Err(Error::RegenerationCap {
                capped: self.capped_backups,
                total: self.backups,
            });
        }
        Ok(())
    }
}

/// Result of one state's backup.
#[derive(Debug, Clone, PartialEq)]
pub struct Backup {
    pub value: f64,
    pub stderr: f64,
    pub control: usize,
    /// `Q(ν)` estimate for every control.
    pub q: Vec<Estimate>,
    pub diagnostics: DpDiagnostics,
}

/// Samples of one stage from `x` under `control`: `(stage cost, endpoint
/// index)` per accepted path, rejecting endpoints outside `space`.
#[allow(clippy::too_many_arguments)]
fn stage_samples(
    model: &JumpModel,
    spec: &CostSpec,
    space: &TruncatedSpace,
    stage: usize,
    t0: f64,
    t1: f64,
    x: &[i64],
    control: usize,
    opts: &DpOptions,
    streams: &StreamFamily,
    ws: &mut Workspace,
    diag: &mut DpDiagnostics,
) -> Vec<(f64, usize)> {
    let mut rng = streams.rng(control as u64);
    let mut acc = CostAccumulator::new(spec, model.scaling(), model.species_count()).without_terminal();
    let budget = (opts.regen_factor * opts.paths) as u64;
    let mut regen = 0u64;
    let mut capped = false;
    let mut out = Vec::with_capacity(opts.paths);
    let mut y = x.to_vec();
    while out.len() < opts.paths {
        acc.reset();
        y.copy_from_slice(x);
        acc.stage_start(stage, t0, &y, Decision::fixed(control));
        advance(model, control, &mut y, t0, t1, &opts.method, &mut rng, ws, &mut acc);
        match space.index_of(&y) {
            Some(i) => out.push((acc.total, i)),
            None if regen < budget => regen += 1,
            None => {
                capped = true;
                diag.clamped_paths += 1;
                let i = space.index_of(&space.clamp(&y)).expect("clamped state in box");
                out.push((acc.total, i));
            }
        }
    }
    diag.backups += 1;
    diag.regenerations += regen;
    diag.capped_backups += capped as usize;
    out
}

/// Lowest-index minimum.
fn argmin(q: &[Estimate]) -> usize {
    let mut best = 0;
    for (c, e) in q.iter().enumerate() {
        if e.mean < q[best].mean {
            best = c;
        }
    }
    best
}

fn stage_family(seed: u64, tag_id: u64, stage: usize, state: usize) -> StreamFamily {
    StreamFamily::new(seed, tag_id)
        .child(stage as u64)
        .child(state as u64)
}

/// Bellman backup at stage `k` for state `x`, given the complete stage
/// `k + 1` value slice over `space`.
#[allow(clippy::too_many_arguments)]
pub fn bellman_backup(
    model: &JumpModel,
    horizon: &StagedHorizon,
    spec: &CostSpec,
    space: &TruncatedSpace,
    next: &[f64],
    stage: usize,
    x: &[i64],
    opts: &DpOptions,
    ws: &mut Workspace,
) -> Backup {
    let idx = space.index_of(x).unwrap_or(usize::MAX);
    let streams = stage_family(opts.seed, tag::FEEDBACK, stage, idx);
    backup_with(model, horizon, spec, space, next, stage, x, opts, &streams, ws)
}

#[allow(clippy::too_many_arguments)]
fn backup_with(
    model: &JumpModel,
    horizon: &StagedHorizon,
    spec: &CostSpec,
    space: &TruncatedSpace,
    next: &[f64],
    stage: usize,
    x: &[i64],
    opts: &DpOptions,
    streams: &StreamFamily,
    ws: &mut Workspace,
) -> Backup {
    let (t0, t1) = (horizon.start_of(stage), horizon.start_of(stage + 1));
    let mut diagnostics = DpDiagnostics::default();
    let mut samples = Vec::with_capacity(opts.paths);
    let q: Vec<Estimate> = (0..model.control_count())
        .map(|c| {
            samples.clear();
            samples.extend(
                stage_samples(model, spec, space, stage, t0, t1, x, c, opts, streams, ws, &mut diagnostics)
                    .into_iter()
                    .map(|(cost, i)| cost + next[i]),
            );
            Estimate::from_samples(&samples)
        })
        .collect();
    let control = argmin(&q);
    Backup {
        value: q[control].mean,
        stderr: q[control].stderr,
        control,
        q,
        diagnostics,
    }
}

/// Terminal slice `e^{-βT} ψ(x/N)` over the space.
pub fn terminal_values(model: &JumpModel, horizon: &StagedHorizon, spec: &CostSpec, space: &TruncatedSpace) -> Vec<f64> {
    let w = (-spec.beta * horizon.end()).exp();
    space
        .iter()
        .map(|x| w * spec.psi().eval(&model.density(&x)))
        .collect()
}

/// Output of [`solve_feedback_dp`].
#[derive(Debug, Clone)]
pub struct FeedbackSolution {
    pub table: ValueTable,
    pub policy: FeedbackPolicy,
    pub diagnostics: DpDiagnostics,
}

/// Backward Monte-Carlo DP over `space`.
///
/// Each `(stage, state, control)` backup draws its paths from its own
/// stream, so results do not depend on the number of workers. Endpoints
/// outside the space are redrawn up to `regen_factor · M` times per backup;
/// after that they are valued at the nearest box state.
pub fn solve_feedback_dp(
    model: &JumpModel,
    horizon: &StagedHorizon,
    spec: &CostSpec,
    space: &TruncatedSpace,
    opts: &DpOptions,
) -> Result<FeedbackSolution> {
    let k_end = horizon.stages();
    if space.len().saturating_mul(k_end + 1) > opts.table_cap {
        return Err(Error::ResourceCap(format!(
            "{} states over {} stages exceed the table cap {}",
            space.len(),
            k_end + 1,
            opts.table_cap
        )));
    }
    if opts.paths == 0 {
        return Err(Error::InvalidArgument("M must be positive".into()));
    }
    let mut values = vec![Vec::new(); k_end + 1];
    let mut stderr = vec![Vec::new(); k_end + 1];
    let mut controls = vec![Vec::new(); k_end];
    values[k_end] = terminal_values(model, horizon, spec, space);
    stderr[k_end] = vec![0.0; space.len()];
    let mut diagnostics = DpDiagnostics::default();
    for k in (0..k_end).rev() {
        let next = &values[k + 1];
        let backups: Vec<Backup> = (0..space.len())
            .into_par_iter()
            .map_init(
                || Workspace::new(model),
                |ws, i| {
                    let x = space.state(i);
                    let streams = stage_family(opts.seed, tag::FEEDBACK, k, i);
                    backup_with(model, horizon, spec, space, next, k, &x, opts, &streams, ws)
                },
            )
            .collect();
        for b in &backups {
            diagnostics.merge(&b.diagnostics);
        }
        values[k] = backups.iter().map(|b| b.value).collect();
        stderr[k] = backups.iter().map(|b| b.stderr).collect();
        controls[k] = backups.iter().map(|b| b.control).collect();
    }
    diagnostics.check(opts.max_capped_fraction)?;
    let table = ValueTable {
        space: space.clone(),
        values,
        stderr,
        argmin: controls,
    };
    let policy = FeedbackPolicy::from_table(&table, Fallback::ClampToBox);
    Ok(FeedbackSolution {
        table,
        policy,
        diagnostics,
    })
}

/// Value-iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViOptions {
    pub dp: DpOptions,
    /// Sup-norm change at which iteration stops.
    pub tol: f64,
    /// Overrides the default sweep budget.
    pub max_sweeps: Option<usize>,
}

/// Output of [`solve_discounted_vi`].
#[derive(Debug, Clone)]
pub struct DiscountedSolution {
    pub values: Vec<f64>,
    /// Standard error of the minimizing one-step estimate at the fixed point.
    pub stderr: Vec<f64>,
    pub policy: StationaryPolicy,
    /// Sup-norm change of each sweep.
    pub changes: Vec<f64>,
    pub lambda: f64,
    pub diagnostics: DpDiagnostics,
}

impl DiscountedSolution {
    pub fn sweeps(&self) -> usize {
        self.changes.len()
    }
}

/// Default sweep budget `⌈log(tol(1-λ)/(2 M_J)) / log λ⌉ + 50`.
pub fn default_sweeps(tol: f64, lambda: f64, m_j: f64) -> usize {
    if m_j <= 0.0 {
        return 51;
    }
    let s = ((tol * (1.0 - lambda) / (2.0 * m_j)).ln() / lambda.ln()).ceil();
    s.max(0.0) as usize + 50
}

/// Discounted infinite-horizon problem with stages of width `h`, solved by
/// value iteration on the empirical one-stage kernel.
///
/// The sample paths of every `(state, control)` pair are drawn once and
/// reused by every sweep, which makes the sweep operator a deterministic
/// `λ`-contraction. `M_J` in the sweep budget is the largest one-stage
/// sample cost.
pub fn solve_discounted_vi(
    model: &JumpModel,
    spec: &CostSpec,
    h: f64,
    space: &TruncatedSpace,
    opts: &ViOptions,
) -> Result<DiscountedSolution> {
    if spec.beta <= 0.0 {
        return Err(Error::InvalidArgument("value iteration needs β > 0".into()));
    }
    if h <= 0.0 {
        return Err(Error::InvalidArgument("stage width must be positive".into()));
    }
    let dp = &opts.dp;
    if space.len() > dp.table_cap {
        return Err(Error::ResourceCap(format!(
            "{} states exceed the table cap {}",
            space.len(),
            dp.table_cap
        )));
    }
    let lambda = (-spec.beta * h).exp();
    let a = model.control_count();
    // the undiscounted first stage of the stationary problem
    let stage_spec = CostSpec {
        beta: 0.0,
        ..spec.clone()
    };
    let per_state: Vec<(Vec<Vec<(f64, usize)>>, DpDiagnostics)> = (0..space.len())
        .into_par_iter()
        .map_init(
            || Workspace::new(model),
            |ws, i| {
                let x = space.state(i);
                let streams = stage_family(dp.seed, tag::DISCOUNTED, 0, i);
                let mut diag = DpDiagnostics::default();
                let s = (0..a)
                    .map(|c| {
                        stage_samples(model, &stage_spec, space, 0, 0.0, h, &x, c, dp, &streams, ws, &mut diag)
                    })
                    .collect();
                (s, diag)
            },
        )
        .collect();
    let mut diagnostics = DpDiagnostics::default();
    for (_, d) in &per_state {
        diagnostics.merge(d);
    }
    diagnostics.check(dp.max_capped_fraction)?;
    // mean stage cost and endpoints per (state, control)
    let mut mean_cost = vec![0.0; space.len() * a];
    let mut m_j: f64 = 0.0;
    for (i, (s, _)) in per_state.iter().enumerate() {
        for c in 0..a {
            let v = &s[c];
            mean_cost[i * a + c] = v.iter().map(|p| p.0).sum::<f64>() / v.len() as f64;
            m_j = v.iter().fold(m_j, |m, p| m.max(p.0.abs()));
        }
    }
    let budget = opts.max_sweeps.unwrap_or_else(|| default_sweeps(opts.tol, lambda, m_j));
    let inv_m = 1.0 / dp.paths as f64;
    let q = |u: &[f64], i: usize, c: usize| -> f64 {
        let ends = &per_state[i].0[c];
        mean_cost[i * a + c] + lambda * inv_m * ends.iter().map(|p| u[p.1]).sum::<f64>()
    };
    let mut u = vec![0.0; space.len()];
    let mut changes = Vec::new();
    loop {
        let next: Vec<f64> = (0..space.len())
            .into_par_iter()
            .map(|i| (0..a).map(|c| q(&u, i, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let change = next
            .iter()
            .zip(&u)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        u = next;
        changes.push(change);
        if change < opts.tol {
            break;
        }
        if changes.len() >= budget {
            return Err(Error::NonConvergence {
                sweeps: changes.len(),
                last_change: change,
            });
        }
    }
    let mut controls = Vec::with_capacity(space.len());
    let mut stderr = Vec::with_capacity(space.len());
    let mut buf = Vec::with_capacity(dp.paths);
    for i in 0..space.len() {
        let mut best = 0;
        let mut best_q = f64::INFINITY;
        for c in 0..a {
            let v = q(&u, i, c);
            if v < best_q {
                best_q = v;
                best = c;
            }
        }
        buf.clear();
        buf.extend(per_state[i].0[best].iter().map(|p| p.0 + lambda * u[p.1]));
        stderr.push(Estimate::from_samples(&buf).stderr);
        controls.push(best);
    }
    Ok(DiscountedSolution {
        values: u,
        stderr,
        policy: StationaryPolicy {
            space: space.clone(),
            controls,
        },
        changes,
        lambda,
        diagnostics,
    })
}
