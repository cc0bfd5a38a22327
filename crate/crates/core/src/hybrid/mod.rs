//! Hybrid control: feedback tables on adaptively sampled stage sets,
//! nearest-neighbor substitution within `ε_near`, and an open-loop
//! fallback everywhere else.

pub mod kdtree;

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostAccumulator, CostSpec};
use crate::error::{Error, Result};
use crate::model::{JumpModel, StagedHorizon};
use crate::openloop::StageStatistics;
use crate::policy::{Controller, Decision, OpenLoopPolicy, Provenance};
use crate::rng::{tag, SimRng, StreamFamily};
use crate::simulate::{advance, initial_state, run_path, Method, PathObserver, Workspace};
use crate::stats::Estimate;

pub use kdtree::KdTree;

/// Deduplicated states of one stage with a search index.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSet {
    dim: usize,
    /// Lexicographically sorted, row-major.
    states: Vec<i64>,
    tree: KdTree,
}

impl StageSet {
    /// Sorts and deduplicates `states` (row-major, `dim` columns).
    pub fn new(dim: usize, states: &[i64]) -> Self {
        let mut rows: Vec<&[i64]> = states.chunks_exact(dim).collect();
        rows.sort_unstable();
        rows.dedup();
        let flat: Vec<i64> = rows.concat();
        let tree = KdTree::build(dim, &flat);
        Self {
            dim,
            states: flat,
            tree,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[i64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i64]> {
        self.states.chunks_exact(self.dim)
    }

    /// Index of `x` in the set.
    pub fn position(&self, x: &[i64]) -> Option<usize> {
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.state(mid).cmp(x) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Nearest member and its Euclidean distance in raw coordinates;
    /// ties go to the lexicographically smallest state.
    pub fn nearest(&self, x: &[i64]) -> Option<(usize, f64)> {
        self.tree.nearest(x).map(|(i, d2)| (i, (d2 as f64).sqrt()))
    }
}

/// The sets `S_0, …, S_{K-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStateSets {
    pub dim: usize,
    pub sets: Vec<StageSet>,
}

impl StageStateSets {
    pub fn stages(&self) -> usize {
        self.sets.len()
    }

    pub fn set(&self, stage: usize) -> &StageSet {
        &self.sets[stage]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(|s| s.len()).collect()
    }

    /// `stage,<species…>` per member.
    pub fn to_csv(&self, species: &[String]) -> String {
        let mut s = String::from("stage");
        for n in species {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for (j, set) in self.sets.iter().enumerate() {
            for x in set.iter() {
                let _ = write!(s, "{j}");
                for v in x {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
        }
        s
    }

    /// `(state, number of sets containing it)` in lexicographic order.
    pub fn occupancy(&self) -> Vec<(Vec<i64>, usize)> {
        let mut all: Vec<&[i64]> = self.sets.iter().flat_map(|s| s.iter()).collect();
        all.sort_unstable();
        let mut out: Vec<(Vec<i64>, usize)> = Vec::new();
        for x in all {
            match out.last_mut() {
                Some((y, c)) if y.as_slice() == x => *c += 1,
                _ => out.push((x.to_vec(), 1)),
            }
        }
        out
    }
}

/// Records the state at every stage start.
struct StageStates {
    rows: Vec<Vec<i64>>,
}

impl PathObserver for StageStates {
    fn stage_start(&mut self, _stage: usize, _t: f64, state: &[i64], _d: Decision) {
        self.rows.push(state.to_vec());
    }
}

/// Builds the stage sets from `m_ol` fresh paths per good policy.
///
/// A stage-`j` state of a path of policy `k` is kept when every component
/// satisfies `|x_i/N − z_{k,j,i}| ≤ ζ σ_{k,j,i}`. `S_0` always contains the
/// deterministic start `N z0`.
#[allow(clippy::too_many_arguments)]
pub fn build_stage_sets(
    model: &JumpModel,
    stats: &StageStatistics,
    horizon: &StagedHorizon,
    z0: &[f64],
    m_ol: usize,
    zeta: f64,
    seed: u64,
    method: &Method,
) -> Result<StageStateSets> {
    let x0 = initial_state(model, z0)?;
    let dim = x0.len();
    let k_end = horizon.stages();
    let inv_n = 1.0 / model.scaling() as f64;
    let fam = StreamFamily::new(seed, tag::STAGE_SETS);
    let mut members: Vec<Vec<i64>> = vec![Vec::new(); k_end];
    members[0].extend_from_slice(&x0);
    for (k, policy) in stats.policies.iter().enumerate() {
        let streams = fam.child(k as u64);
        let paths: Vec<Vec<Vec<i64>>> = (0..m_ol as u64)
            .into_par_iter()
            .map_init(
                || Workspace::new(model),
                |ws, i| {
                    let mut obs = StageStates {
                        rows: Vec::with_capacity(k_end),
                    };
                    run_path(model, horizon, method, &x0, policy, &mut streams.rng(i), ws, &mut obs)?;
                    Ok(obs.rows)
                },
            )
            .collect::<Result<_>>()?;
        for rows in &paths {
            for (j, x) in rows.iter().enumerate() {
                let (mu, sd) = (&stats.mean[k][j], &stats.std[k][j]);
                // the slack absorbs rounding in means of identical values
                let close = (0..dim).all(|i| (x[i] as f64 * inv_n - mu[i]).abs() <= zeta * sd[i] + 1e-9);
                if close {
                    members[j].extend_from_slice(x);
                }
            }
        }
    }
    Ok(StageStateSets {
        dim,
        sets: members.iter().map(|m| StageSet::new(dim, m)).collect(),
    })
}

/// Hybrid feedback map `ν̄_j`.
#[derive(Debug, Clone)]
pub struct HybridPolicy {
    pub sets: Arc<StageStateSets>,
    /// `tables[j][i]` is the control of member `i` of `S_j`.
    pub tables: Vec<Vec<usize>>,
    pub fallback: OpenLoopPolicy,
    pub epsilon_near: f64,
    pub scaling: u64,
}

impl HybridPolicy {
    /// Table control for members, the nearest member's control within
    /// `ε_near` (density units), and the fallback otherwise.
    pub fn lookup(&self, stage: usize, x: &[i64]) -> Decision {
        let set = self.sets.set(stage);
        let table = &self.tables[stage];
        if let Some(i) = set.position(x) {
            return Decision {
                control: table[i],
                provenance: Provenance::InSet,
            };
        }
        if self.epsilon_near > 0.0 {
            if let Some((i, d)) = set.nearest(x) {
                if d / (self.scaling as f64) < self.epsilon_near {
                    return Decision {
                        control: table[i],
                        provenance: Provenance::Near,
                    };
                }
            }
        }
        Decision {
            control: self.fallback.controls()[stage],
            provenance: Provenance::OpenLoop,
        }
    }

    /// `stage,<species…>,control_index`, preceded by `#` lines with the
    /// fallback policy and `ε_near`.
    pub fn to_csv(&self, species: &[String]) -> String {
        let mut s = format!(
            "# fallback={}\n# epsilon_near={}\nstage",
            self.fallback.label(),
            self.epsilon_near
        );
        for n in species {
            let _ = write!(s, ",{n}");
        }
        s.push_str(",control_index\n");
        for (j, set) in self.sets.sets.iter().enumerate() {
            for (i, x) in set.iter().enumerate() {
                let _ = write!(s, "{j}");
                for v in x {
                    let _ = write!(s, ",{v}");
                }
                let _ = writeln!(s, ",{}", self.tables[j][i]);
            }
        }
        s
    }
}

impl Controller for HybridPolicy {
    fn decide(&self, stage: usize, state: &[i64]) -> Result<Decision> {
        if stage >= self.tables.len() {
            return Err(Error::PolicyLookup {
                stage,
                state: state.to_vec(),
            });
        }
        Ok(self.lookup(stage, state))
    }
}

/// Settings of the hybrid backward solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridOptions {
    /// Paths per `(state, control)` backup.
    pub paths: usize,
    pub method: Method,
    pub seed: u64,
}

/// Solved hybrid policy and its values on the stage sets.
#[derive(Debug, Clone)]
pub struct HybridSolution {
    pub policy: HybridPolicy,
    /// `values[j][i]` for member `i` of `S_j`.
    pub values: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// Mean number of stages a backup path ran before stopping.
    pub mean_stopping_stages: f64,
}

struct Partial<'a> {
    sets: &'a StageStateSets,
    fallback: &'a OpenLoopPolicy,
    scaling: f64,
    /// Per `ε`: tables and values of the stages solved so far.
    eps: &'a [f64],
    tables: &'a [Vec<Vec<usize>>],
    values: &'a [Vec<Vec<f64>>],
}

impl Partial<'_> {
    fn decide(&self, e: usize, stage: usize, x: &[i64]) -> Decision {
        let set = self.sets.set(stage);
        if self.eps[e] > 0.0 {
            if let Some((i, d)) = set.nearest(x) {
                if d / self.scaling < self.eps[e] {
                    return Decision {
                        control: self.tables[e][stage][i],
                        provenance: Provenance::Near,
                    };
                }
            }
        }
        Decision::fixed(self.fallback.controls()[stage])
    }
}

struct Ctx<'a> {
    model: &'a JumpModel,
    horizon: &'a StagedHorizon,
    spec: &'a CostSpec,
    method: &'a Method,
    terminal_weight: f64,
}

impl Ctx<'_> {
    fn terminal(&self, x: &[i64]) -> f64 {
        let z = self.model.density(x);
        self.terminal_weight * self.spec.psi().eval(&z)
    }
}

/// Continues a path from stage `j` under the partial policy of `ε` index
/// `e` until it enters a stage set or reaches the horizon. Returns the
/// cost-to-go and the number of further stages simulated.
#[allow(clippy::too_many_arguments)]
fn continue_path(
    ctx: &Ctx,
    part: &Partial,
    e: usize,
    mut j: usize,
    x: &mut [i64],
    acc: &mut CostAccumulator,
    rng: &mut SimRng,
    ws: &mut Workspace,
) -> (f64, usize) {
    let k_end = ctx.horizon.stages();
    let mut ran = 0;
    while j < k_end {
        if let Some(i) = part.sets.set(j).position(x) {
            return (acc.total + part.values[e][j][i], ran);
        }
        let d = part.decide(e, j, x);
        let (t0, t1) = (ctx.horizon.start_of(j), ctx.horizon.start_of(j + 1));
        acc.stage_start(j, t0, x, d);
        advance(ctx.model, d.control, x, t0, t1, ctx.method, rng, ws, acc);
        j += 1;
        ran += 1;
    }
    (acc.total + ctx.terminal(x), ran)
}

/// Backward solve over the stage sets for several `ε_near` values at once.
///
/// For every member of `S_k` and control `ν`, paths run stage `k` under
/// `ν` and then follow the already solved later stages, stopping at the
/// first stage whose set contains the state (or at the horizon), where the
/// stored value closes the estimate. Later-stage lookups outside the sets
/// use the same `ε_near` rule as evaluation. Because the first stage does
/// not depend on `ε_near`, it is simulated once and only paths leaving the
/// sets branch, each branch continuing from a copy of the path's generator.
/// Every path has its own stream, so each result is identical to a
/// separate solve with that `ε_near`.
pub fn solve_hybrid_dp(
    model: &JumpModel,
    horizon: &StagedHorizon,
    spec: &CostSpec,
    sets: Arc<StageStateSets>,
    fallback: &OpenLoopPolicy,
    epsilons: &[f64],
    opts: &HybridOptions,
) -> Result<Vec<HybridSolution>> {
    let k_end = horizon.stages();
    if sets.stages() != k_end || fallback.controls().len() != k_end {
        return Err(Error::InvalidArgument("stage sets and fallback must cover every stage".into()));
    }
    if opts.paths == 0 || epsilons.is_empty() || epsilons.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::InvalidArgument("need M > 0 and ε_near ≥ 0".into()));
    }
    let ne = epsilons.len();
    let a = model.control_count();
    let mut tables: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); k_end]; ne];
    let mut values: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); k_end]; ne];
    let mut stderr: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); k_end]; ne];
    let ctx = Ctx {
        model,
        horizon,
        spec,
        method: &opts.method,
        terminal_weight: (-spec.beta * horizon.end()).exp(),
    };
    let fam = StreamFamily::new(opts.seed, tag::HYBRID);
    let mut stage_runs = 0u64;
    let mut path_count = 0u64;
    for k in (0..k_end).rev() {
        let part = Partial {
            sets: &sets,
            fallback,
            scaling: model.scaling() as f64,
            eps: epsilons,
            tables: &tables,
            values: &values,
        };
        let set = sets.set(k);
        let (t0, t1) = (horizon.start_of(k), horizon.start_of(k + 1));
        // per member: per ε (value, stderr, control), stage count
        let results: Vec<(Vec<(f64, f64, usize)>, u64)> = (0..set.len())
            .into_par_iter()
            .map_init(
                || Workspace::new(model),
                |ws, s| {
                    let x = set.state(s);
                    let streams = fam.child(k as u64).child(s as u64);
                    let mut acc = CostAccumulator::new(spec, model.scaling(), x.len()).without_terminal();
                    let mut samples = vec![Vec::with_capacity(opts.paths); ne];
                    let mut q = vec![vec![Estimate::exact(0.0); a]; ne];
                    let mut runs = 0u64;
                    let mut y = x.to_vec();
                    for c in 0..a {
                        let path_streams = streams.child(c as u64);
                        samples.iter_mut().for_each(|v| v.clear());
                        for p in 0..opts.paths {
                            let mut rng = path_streams.rng(p as u64);
                            acc.reset();
                            y.copy_from_slice(x);
                            acc.stage_start(k, t0, &y, Decision::fixed(c));
                            advance(model, c, &mut y, t0, t1, &opts.method, &mut rng, ws, &mut acc);
                            runs += 1;
                            let j = k + 1;
                            let shared = if j == k_end {
                                Some(None)
                            } else {
                                sets.set(j).position(&y).map(Some)
                            };
                            match shared {
                                Some(hit) => {
                                    for e in 0..ne {
                                        let u = match hit {
                                            None => ctx.terminal(&y),
                                            Some(i) => values[e][j][i],
                                        };
                                        samples[e].push(acc.total + u);
                                    }
                                }
                                None => {
                                    let (base_acc, base_y) = (acc.total, y.clone());
                                    for e in 0..ne {
                                        let mut r = rng.clone();
                                        acc.total = base_acc;
                                        y.copy_from_slice(&base_y);
                                        let (v, ran) =
                                            continue_path(&ctx, &part, e, j, &mut y, &mut acc, &mut r, ws);
                                        samples[e].push(v);
                                        runs += ran as u64;
                                    }
                                }
                            }
                        }
                        for e in 0..ne {
                            q[e][c] = Estimate::from_samples(&samples[e]);
                        }
                    }
                    let out = q
                        .iter()
                        .map(|qe| {
                            let mut best = 0;
                            for c in 1..a {
                                if qe[c].mean < qe[best].mean {
                                    best = c;
                                }
                            }
                            (qe[best].mean, qe[best].stderr, best)
                        })
                        .collect();
                    (out, runs)
                },
            )
            .collect();
        for e in 0..ne {
            tables[e][k] = results.iter().map(|r| r.0[e].2).collect();
            values[e][k] = results.iter().map(|r| r.0[e].0).collect();
            stderr[e][k] = results.iter().map(|r| r.0[e].1).collect();
        }
        stage_runs += results.iter().map(|r| r.1).sum::<u64>();
        path_count += (set.len() * a * opts.paths) as u64;
    }
    let mean_stopping_stages = if path_count > 0 {
        stage_runs as f64 / path_count as f64
    } else {
        0.0
    };
    Ok(epsilons
        .iter()
        .enumerate()
        .map(|(e, &eps)| HybridSolution {
            policy: HybridPolicy {
                sets: sets.clone(),
                tables: tables[e].clone(),
                fallback: fallback.clone(),
                epsilon_near: eps,
                scaling: model.scaling(),
            },
            values: values[e].clone(),
            stderr: stderr[e].clone(),
            mean_stopping_stages,
        })
        .collect())
}

/// Evaluated cost and decision frequencies of a hybrid policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridEvaluation {
    pub cost: Estimate,
    /// Fraction of stage decisions taken from the open-loop fallback.
    pub r_ol: f64,
    /// Fraction of stage decisions taken from a nearest neighbor.
    pub r_near: f64,
    /// Fraction of stage decisions on set members.
    pub r_in_set: f64,
}

#[derive(Default)]
struct ProvenanceCount {
    open_loop: u64,
    near: u64,
    in_set: u64,
    total: u64,
}

impl PathObserver for ProvenanceCount {
    fn stage_start(&mut self, _stage: usize, _t: f64, _state: &[i64], d: Decision) {
        self.total += 1;
        match d.provenance {
            Provenance::OpenLoop => self.open_loop += 1,
            Provenance::Near => self.near += 1,
            Provenance::InSet => self.in_set += 1,
            _ => {}
        }
    }
}

/// Simulates `m` paths under `policy` and reports cost and `r_ol`, `r_near`
/// over all `K·m` stage decisions.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_hybrid(
    model: &JumpModel,
    policy: &HybridPolicy,
    horizon: &StagedHorizon,
    spec: &CostSpec,
    z0: &[f64],
    m: usize,
    seed: u64,
    method: &Method,
) -> Result<HybridEvaluation> {
    if m < 2 {
        return Err(Error::InvalidArgument("at least two paths are required".into()));
    }
    let x0 = initial_state(model, z0)?;
    let streams = StreamFamily::new(seed, tag::EVALUATION);
    let per_path: Vec<(f64, [u64; 4])> = (0..m as u64)
        .into_par_iter()
        .map_init(
            || Workspace::new(model),
            |ws, i| {
                let mut obs = (
                    CostAccumulator::new(spec, model.scaling(), x0.len()),
                    ProvenanceCount::default(),
                );
                run_path(model, horizon, method, &x0, policy, &mut streams.rng(i), ws, &mut obs)?;
                let c = &obs.1;
                Ok((obs.0.total, [c.open_loop, c.near, c.in_set, c.total]))
            },
        )
        .collect::<Result<_>>()?;
    let costs: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let mut n = [0u64; 4];
    for (_, c) in &per_path {
        for i in 0..4 {
            n[i] += c[i];
        }
    }
    let total = n[3].max(1) as f64;
    Ok(HybridEvaluation {
        cost: Estimate::from_samples(&costs),
        r_ol: n[0] as f64 / total,
        r_near: n[1] as f64 / total,
        r_in_set: n[2] as f64 / total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::feedback::{solve_feedback_dp, DpOptions, TruncatedSpace};
    use crate::openloop::stage_statistics;

    fn full_sets(k: usize, lo: i64, hi: i64) -> Arc<StageStateSets> {
        let states: Vec<i64> = (lo..=hi).collect();
        Arc::new(StageStateSets {
            dim: 1,
            sets: (0..k).map(|_| StageSet::new(1, &states)).collect(),
        })
    }

    fn policy_on(sets: Arc<StageStateSets>, eps: f64) -> HybridPolicy {
        let tables = sets.sets.iter().map(|s| (0..s.len()).map(|i| i % 2).collect()).collect();
        HybridPolicy {
            sets,
            tables,
            fallback: OpenLoopPolicy::new(vec![1, 1, 1]),
            epsilon_near: eps,
            scaling: 10,
        }
    }

    #[test]
    fn set_dedups_and_finds() {
        let s = StageSet::new(2, &[3, 1, 0, 0, 3, 1, 2, 9]);
        assert_eq!(s.len(), 3);
        assert_eq!(s.state(0), &[0, 0]);
        assert_eq!(s.position(&[3, 1]), Some(2));
        assert_eq!(s.position(&[3, 2]), None);
        let (i, d) = s.nearest(&[3, 3]).unwrap();
        assert_eq!((s.state(i), d), (&[3, 1][..], 2.0));
    }

    #[test]
    fn lookup_provenance() {
        let sets = Arc::new(StageStateSets {
            dim: 1,
            sets: (0..3).map(|_| StageSet::new(1, &[10, 20])).collect(),
        });
        let zero = policy_on(sets.clone(), 0.0);
        assert_eq!(zero.lookup(0, &[20]), Decision { control: 1, provenance: Provenance::InSet });
        assert_eq!(zero.lookup(0, &[21]).provenance, Provenance::OpenLoop);
        // nearest at distance N ε/2 = 1 with N = 10, ε = 0.2
        let near = policy_on(sets, 0.2);
        assert_eq!(near.lookup(0, &[11]), Decision { control: 0, provenance: Provenance::Near });
        assert_eq!(near.lookup(0, &[15]).provenance, Provenance::OpenLoop);
    }

    #[test]
    fn zero_rate_sets_are_the_start() {
        let doc = builtin::document("birth_death_A1", 20).unwrap();
        let zero = doc
            .model
            .with_controls(
                crate::model::ControlSet::new(
                    vec![crate::model::Control {
                        name: "off".into(),
                        rates: vec![0.0, 0.0],
                    }],
                    2,
                )
                .unwrap(),
            )
            .unwrap();
        let good = vec![OpenLoopPolicy::new(vec![0, 0, 0])];
        let stats = stage_statistics(&zero, &good, &doc.horizon, &[1.2], 10, 1, &Method::Ssa).unwrap();
        let sets = build_stage_sets(&zero, &stats, &doc.horizon, &[1.2], 20, 3.0, 2, &Method::Ssa).unwrap();
        assert_eq!(sets.sizes(), vec![1, 1, 1]);
        assert!(sets.sets.iter().all(|s| s.state(0) == [24]));
    }

    #[test]
    fn full_sets_reduce_to_feedback_dp() {
        let doc = builtin::document("birth_death_A1", 10).unwrap();
        let (m, h, spec) = (&doc.model, &doc.horizon, &doc.cost);
        let sets = full_sets(3, 0, 60);
        let fb = OpenLoopPolicy::new(vec![1, 1, 0]);
        let opts = HybridOptions {
            paths: 200,
            method: Method::Ssa,
            seed: 4,
        };
        let hy = solve_hybrid_dp(m, h, spec, sets.clone(), &fb, &[0.0], &opts).unwrap();
        let space = TruncatedSpace::new(vec![0], vec![60]).unwrap();
        let dp = solve_feedback_dp(m, h, spec, &space, &DpOptions::new(200, 9)).unwrap();
        let mut bad = 0;
        let mut n = 0;
        for k in 0..3 {
            for x in 6..=24i64 {
                let i = sets.set(k).position(&[x]).unwrap();
                let a = hy[0].values[k][i];
                let b = dp.table.values[k][dp.table.space.index_of(&[x]).unwrap()];
                let se = hy[0].stderr[k][i].hypot(dp.table.stderr[k][dp.table.space.index_of(&[x]).unwrap()]);
                n += 1;
                if (a - b).abs() > 3.0 * se {
                    bad += 1;
                }
            }
        }
        assert!(bad * 10 <= n, "{bad} of {n} disagree");
        // only paths leaving the top of the box run past one stage
        assert!(hy[0].mean_stopping_stages >= 1.0 && hy[0].mean_stopping_stages < 1.5);
    }

    #[test]
    fn multi_epsilon_matches_separate_solves() {
        let doc = builtin::document("birth_death_A2", 20).unwrap();
        let (m, h, spec) = (&doc.model, &doc.horizon, &doc.cost);
        let good = vec![OpenLoopPolicy::new(vec![1, 0, 1]), OpenLoopPolicy::new(vec![1, 1, 0])];
        let stats = stage_statistics(m, &good, h, &[1.2], 200, 1, &Method::Ssa).unwrap();
        let sets = Arc::new(build_stage_sets(m, &stats, h, &[1.2], 100, 1.0, 2, &Method::Ssa).unwrap());
        let opts = HybridOptions {
            paths: 20,
            method: Method::Ssa,
            seed: 8,
        };
        let both = solve_hybrid_dp(m, h, spec, sets.clone(), &good[0], &[0.0, 0.1], &opts).unwrap();
        for (e, eps) in [0.0, 0.1].into_iter().enumerate() {
            let one = solve_hybrid_dp(m, h, spec, sets.clone(), &good[0], &[eps], &opts).unwrap();
            assert_eq!(one[0].values, both[e].values);
            assert_eq!(one[0].policy.tables, both[e].policy.tables);
        }
    }

    #[test]
    fn evaluation_frequencies() {
        let doc = builtin::document("birth_death_A1", 10).unwrap();
        let (m, h, spec) = (&doc.model, &doc.horizon, &doc.cost);
        let cover = policy_on(full_sets(3, 0, 1000), 0.0);
        let ev = evaluate_hybrid(m, &cover, h, spec, &[1.2], 200, 1, &Method::Ssa).unwrap();
        assert_eq!((ev.r_ol, ev.r_near, ev.r_in_set), (0.0, 0.0, 1.0));
        let sparse = policy_on(full_sets(3, 12, 12), 0.0);
        let ev = evaluate_hybrid(m, &sparse, h, spec, &[1.2], 200, 1, &Method::Ssa).unwrap();
        assert_eq!(ev.r_near, 0.0);
        assert!(ev.r_ol > 0.5);
    }

    #[test]
    fn csv_dumps() {
        let sets = full_sets(2, 3, 4);
        let p = HybridPolicy {
            sets: sets.clone(),
            tables: vec![vec![0, 1], vec![1, 1]],
            fallback: OpenLoopPolicy::new(vec![0, 1]),
            epsilon_near: 0.02,
            scaling: 10,
        };
        let csv = p.to_csv(&["A".into()]);
        assert!(csv.starts_with("# fallback=(0,1)\n# epsilon_near=0.02\nstage,A,control_index\n0,3,0\n"));
        assert_eq!(sets.to_csv(&["A".into()]).lines().count(), 5);
        assert_eq!(sets.occupancy(), vec![(vec![3], 2), (vec![4], 2)]);
    }
}
