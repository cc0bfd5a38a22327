//! Open-loop policies: enumeration, ranking and per-stage statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{ode_cost, path_costs, CostSpec};
use crate::error::{Error, Result};
use crate::model::{JumpModel, StagedHorizon};
use crate::odelimit::integrate_piecewise;
use crate::policy::{Decision, OpenLoopPolicy};
use crate::rng::{tag, StreamFamily};
use crate::simulate::{initial_state, run_path, Method, PathObserver, Workspace};
use crate::stats::{mean_std, Estimate};

/// Default cap on `|A|^K`.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Lexicographic iterator over all control tuples.
#[derive(Debug, Clone)]
pub struct PolicyEnumerator {
    controls: usize,
    next: Option<Vec<usize>>,
}

impl Iterator for PolicyEnumerator {
    type Item = OpenLoopPolicy;

    fn next(&mut self) -> Option<OpenLoopPolicy> {
        let cur = self.next.take()?;
        let mut succ = cur.clone();
        let mut i = succ.len();
        while i > 0 {
            i -= 1;
            succ[i] += 1;
            if succ[i] < self.controls {
                self.next = Some(succ);
                break;
            }
            succ[i] = 0;
        }
        Some(OpenLoopPolicy::new(cur))
    }
}

/// All `|A|^K` open-loop policies in lexicographic order.
pub fn enumerate_policies(controls: usize, stages: usize, cap: u64) -> Result<PolicyEnumerator> {
    if controls == 0 || stages == 0 {
        return Err(Error::InvalidArgument(
            "enumeration needs at least one control and one stage".into(),
        ));
    }
    let total = (controls as u64).checked_pow(stages as u32);
    match total {
        Some(t) if t <= cap => Ok(PolicyEnumerator {
            controls,
            next: Some(vec![0; stages]),
        }),
        _ => Err(Error::ResourceCap(format!(
            "{controls}^{stages} open-loop policies exceed the enumeration cap {cap}; sample policies instead"
        ))),
    }
}

/// How policy costs are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RankMethod {
    /// Monte-Carlo with the given simulator.
    MonteCarlo(Method),
    /// Deterministic cost of the limit ODE with RK4 step `dt`.
    Ode { dt: f64 },
}

impl RankMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            RankMethod::MonteCarlo(Method::Ssa) => "MC-SSA",
            RankMethod::MonteCarlo(Method::TauLeap(_)) => "MC-TauLeap",
            RankMethod::Ode { .. } => "ODE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPolicy {
    pub policy: OpenLoopPolicy,
    pub cost: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRanking {
    pub entries: Vec<RankedPolicy>,
    pub method: String,
    /// Paths per policy (0 for the ODE).
    pub paths: usize,
}

impl PolicyRanking {
    pub fn best(&self) -> &RankedPolicy {
        &self.entries[0]
    }

    pub fn find(&self, policy: &OpenLoopPolicy) -> Option<&RankedPolicy> {
        self.entries.iter().find(|e| &e.policy == policy)
    }

    /// `rank,policy,cost,stderr,method,M`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,policy,cost,stderr,method,M\n");
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{},\"{}\",{:?},{:?},{},{}\n",
                i + 1,
                e.policy.label(),
                e.cost,
                e.stderr,
                self.method,
                self.paths
            ));
        }
        out
    }
}

/// Ranking options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankOptions {
    pub method: RankMethod,
    /// Paths per policy.
    pub paths: usize,
    pub seed: u64,
    /// Share path streams across policies (common random numbers).
    pub common_random_numbers: bool,
    pub cap: u64,
}

impl RankOptions {
    pub fn monte_carlo(method: Method, paths: usize, seed: u64) -> Self {
        Self {
            method: RankMethod::MonteCarlo(method),
            paths,
            seed,
            common_random_numbers: false,
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn ode(dt: f64) -> Self {
        Self {
            method: RankMethod::Ode { dt },
            paths: 0,
            seed: 0,
            common_random_numbers: false,
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn with_crn(mut self, on: bool) -> Self {
        self.common_random_numbers = on;
        self
    }
}

/// Streams used for the paths of policy number `index`.
pub fn policy_streams(seed: u64, index: u64, crn: bool) -> StreamFamily {
    let f = StreamFamily::new(seed, tag::RANKING);
    if crn {
        f
    } else {
        f.child(index)
    }
}

/// Evaluates one open-loop policy.
pub fn evaluate_policy(
    model: &JumpModel,
    horizon: &StagedHorizon,
    spec: &CostSpec,
    z0: &[f64],
    policy: &OpenLoopPolicy,
    method: &RankMethod,
    paths: usize,
    streams: StreamFamily,
) -> Result<Estimate> {
    match method {
        RankMethod::Ode { dt } => {
            let p = integrate_piecewise(model, policy.controls(), z0, horizon, *dt)?;
            Ok(Estimate::exact(ode_cost(&p, spec, horizon)))
        }
        RankMethod::MonteCarlo(m) => {
            let costs = path_costs(model, policy, spec, horizon, z0, paths, streams, m)?;
            Ok(Estimate::from_samples(&costs))
        }
    }
}

/// Costs of every open-loop policy, sorted by cost with lexicographic ties.
pub fn rank_policies(
    model: &JumpModel,
    horizon: &StagedHorizon,
    spec: &CostSpec,
    z0: &[f64],
    opts: &RankOptions,
) -> Result<PolicyRanking> {
    let policies: Vec<OpenLoopPolicy> =
        enumerate_policies(model.control_count(), horizon.stages(), opts.cap)?.collect();
    rank_subset(model, horizon, spec, z0, &policies, opts)
}

/// Ranks a given list of policies; stream offsets follow list positions.
pub fn rank_subset(
    model: &JumpModel,
    horizon: &StagedHorizon,
    spec: &CostSpec,
    z0: &[f64],
    policies: &[OpenLoopPolicy],
    opts: &RankOptions,
) -> Result<PolicyRanking> {
    let mut entries = Vec::with_capacity(policies.len());
    for (i, p) in policies.iter().enumerate() {
        let streams = policy_streams(opts.seed, i as u64, opts.common_random_numbers);
        let e = evaluate_policy(model, horizon, spec, z0, p, &opts.method, opts.paths, streams)?;
        entries.push(RankedPolicy {
            policy: p.clone(),
            cost: e.mean,
            stderr: e.stderr,
        });
    }
    entries.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.policy.cmp(&b.policy)));
    Ok(PolicyRanking {
        entries,
        method: opts.method.tag().to_string(),
        paths: opts.paths,
    })
}

/// The first `n_ol` policies whose cost is within `(1 + ε_ol)` of the best.
pub fn good_policies(ranking: &PolicyRanking, n_ol: usize, epsilon_ol: f64) -> Vec<RankedPolicy> {
    let Some(best) = ranking.entries.first() else {
        return Vec::new();
    };
    let limit = (1.0 + epsilon_ol) * best.cost;
    ranking
        .entries
        .iter()
        .take(n_ol.max(1))
        .take_while(|e| e.cost <= limit)
        .cloned()
        .collect()
}

/// Mean and componentwise deviation of the density at each stage start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatistics {
    pub policies: Vec<OpenLoopPolicy>,
    /// `mean[k][j]` for good policy `k` and stage `j`.
    pub mean: Vec<Vec<Vec<f64>>>,
    pub std: Vec<Vec<Vec<f64>>>,
}

/// Records the state at each stage start.
struct StageSnapshots {
    inv_n: f64,
    rows: Vec<Vec<f64>>,
}

impl PathObserver for StageSnapshots {
    fn stage_start(&mut self, _stage: usize, _t: f64, state: &[i64], _d: Decision) {
        self.rows
            .push(state.iter().map(|&x| x as f64 * self.inv_n).collect());
    }
}

/// Densities at `t_0, …, t_{K-1}` of `m` paths, indexed `[path][stage]`.
pub fn stage_densities(
    model: &JumpModel,
    horizon: &StagedHorizon,
    z0: &[f64],
    policy: &OpenLoopPolicy,
    m: usize,
    streams: StreamFamily,
    method: &Method,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let x0 = initial_state(model, z0)?;
    let inv_n = 1.0 / model.scaling() as f64;
    (0..m as u64)
        .into_par_iter()
        .map_init(
            || Workspace::new(model),
            |ws, i| {
                let mut obs = StageSnapshots {
                    inv_n,
                    rows: Vec::with_capacity(horizon.stages()),
                };
                run_path(model, horizon, method, &x0, policy, &mut streams.rng(i), ws, &mut obs)?;
                Ok(obs.rows)
            },
        )
        .collect()
}

/// Per-stage statistics over `m_stat` fresh paths of each good policy.
pub fn stage_statistics(
    model: &JumpModel,
    good: &[OpenLoopPolicy],
    horizon: &StagedHorizon,
    z0: &[f64],
    m_stat: usize,
    seed: u64,
    method: &Method,
) -> Result<StageStatistics> {
    if m_stat < 2 {
        return Err(Error::InvalidArgument("M_stat must be at least 2".into()));
    }
    let fam = StreamFamily::new(seed, tag::STATISTICS);
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for (k, p) in good.iter().enumerate() {
        let d = stage_densities(model, horizon, z0, p, m_stat, fam.child(k as u64), method)?;
        let (mut mk, mut sk) = (Vec::new(), Vec::new());
        for j in 0..horizon.stages() {
            let rows: Vec<Vec<f64>> = d.iter().map(|r| r[j].clone()).collect();
            let (mu, sd) = mean_std(&rows);
            mk.push(mu);
            sk.push(sd);
        }
        mean.push(mk);
        std.push(sk);
    }
    Ok(StageStatistics {
        policies: good.to_vec(),
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_policies(2, 3, DEFAULT_ENUMERATION_CAP).unwrap().count(), 8);
        assert_eq!(enumerate_policies(3, 5, DEFAULT_ENUMERATION_CAP).unwrap().count(), 243);
        let one: Vec<_> = enumerate_policies(1, 4, DEFAULT_ENUMERATION_CAP).unwrap().collect();
        assert_eq!(one, vec![OpenLoopPolicy::new(vec![0; 4])]);
        let all: Vec<_> = enumerate_policies(2, 3, 8).unwrap().collect();
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(enumerate_policies(10, 7, DEFAULT_ENUMERATION_CAP), Err(Error::ResourceCap(_))));
    }

    fn ranking(costs: &[f64]) -> PolicyRanking {
        PolicyRanking {
            entries: costs
                .iter()
                .enumerate()
                .map(|(i, &c)| RankedPolicy {
                    policy: OpenLoopPolicy::new(vec![i]),
                    cost: c,
                    stderr: 0.0,
                })
                .collect(),
            method: "ODE".into(),
            paths: 0,
        }
    }

    #[test]
    fn good_policy_selection() {
        let r = ranking(&[1.0, 1.02, 1.04, 1.2]);
        assert_eq!(good_policies(&r, 1, 0.5).len(), 1);
        assert_eq!(good_policies(&r, 3, 0.05).len(), 3);
        assert_eq!(good_policies(&r, 5, 0.03).len(), 2);
        assert_eq!(good_policies(&r, 5, 0.0).len(), 1);
    }

    #[test]
    fn ode_ranking_birth_death() {
        let doc = builtin::document("birth_death_A1", 100).unwrap();
        let r = rank_policies(&doc.model, &doc.horizon, &doc.cost, &[1.2], &RankOptions::ode(1e-3)).unwrap();
        assert_eq!(r.entries.len(), 8);
        assert_eq!(r.best().policy.controls(), &[1, 1, 0]);
        assert!((r.best().cost - 0.298057062411).abs() < 1e-6);
        let doc = builtin::document("birth_death_A2", 100).unwrap();
        let r = rank_policies(&doc.model, &doc.horizon, &doc.cost, &[1.2], &RankOptions::ode(1e-3)).unwrap();
        assert_eq!(r.best().policy.controls(), &[1, 0, 1]);
        assert!(r.entries.windows(2).all(|w| w[0].cost <= w[1].cost));
    }
}
