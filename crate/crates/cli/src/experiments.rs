//! End-to-end experiment runs writing CSV results and a JSON summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use jumpctl_core::bounds::{derive_constants, tube_gamma, verify_kurtz};
use jumpctl_core::cost::{mc_cost_estimate, ode_cost};
use jumpctl_core::feedback::{
    solve_discounted_vi, solve_feedback_dp, suggest_space, TruncatedSpace, ViOptions,
};
use jumpctl_core::hybrid::{build_stage_sets, evaluate_hybrid, solve_hybrid_dp, HybridOptions};
use jumpctl_core::model::{DensityBox, ModelDocument};
use jumpctl_core::odelimit::{integrate_piecewise, DEFAULT_DT};
use jumpctl_core::openloop::{
    enumerate_policies, good_policies, rank_policies, stage_densities, stage_statistics, RankOptions,
    StageStatistics,
};
use jumpctl_core::policy::OpenLoopPolicy;
use jumpctl_core::rng::{tag, StreamFamily};
use jumpctl_core::simulate::{initial_state, run_path, simulate, trajectory_csv, NoObserver, Workspace};
use jumpctl_core::stats::{mean_std, Estimate};

use crate::config::{ExperimentKind, Resolved};
use crate::error::{CliError, CliResult};

/// One cost figure of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    #[serde(rename = "N")]
    pub n: u64,
    /// `openloop`, `ode`, `feedback`, `hybrid` or `hybrid_eps=<ε>`.
    pub policy_kind: String,
    pub policy: String,
    pub cost: f64,
    pub stderr: f64,
}

/// Density mean and deviation at one stage start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatRecord {
    #[serde(rename = "N")]
    pub n: u64,
    pub policy: String,
    pub stage: usize,
    pub time: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Machine-readable result of a run. Runtimes are the only field that
/// changes between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: String,
    pub model: String,
    pub seed: u64,
    pub method: String,
    pub workers: usize,
    pub species: Vec<String>,
    pub costs: Vec<CostRecord>,
    pub stage_stats: Vec<StageStatRecord>,
    /// Per-size details specific to the experiment kind.
    pub results: Vec<Value>,
    pub runtimes: BTreeMap<String, f64>,
}

struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn run<T>(&mut self, key: String, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.0.entry(key).or_insert(0.0) += t.elapsed().as_secs_f64();
        out
    }
}

fn write(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn initial(doc: &ModelDocument) -> CliResult<Vec<f64>> {
    doc.initial
        .clone()
        .ok_or_else(|| CliError::Config("the model declares no initial density".into()))
}

fn eps_label(e: f64) -> String {
    format!("{e}")
}

fn stat_records(n: u64, doc: &ModelDocument, stats: &StageStatistics) -> Vec<StageStatRecord> {
    let mut out = Vec::new();
    for (k, p) in stats.policies.iter().enumerate() {
        for j in 0..doc.horizon.stages() {
            out.push(StageStatRecord {
                n,
                policy: p.label(),
                stage: j,
                time: doc.horizon.start_of(j),
                mean: stats.mean[k][j].clone(),
                std: stats.std[k][j].clone(),
            });
        }
    }
    out
}

/// Runs the configured experiment, writing results into `cfg.output`.
pub fn run_experiment(cfg: &Resolved) -> CliResult<Summary> {
    fs::create_dir_all(&cfg.output)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    pool.install(|| run_inner(cfg))
}

fn run_inner(cfg: &Resolved) -> CliResult<Summary> {
    let first = cfg.document(cfg.n[0])?;
    let mut summary = Summary {
        kind: cfg.kind.name().to_string(),
        model: cfg.model.clone(),
        seed: cfg.seed,
        method: cfg.method().name().to_string(),
        workers: cfg.workers,
        species: first.model.species().iter().map(|s| s.name.clone()).collect(),
        costs: Vec::new(),
        stage_stats: Vec::new(),
        results: Vec::new(),
        runtimes: BTreeMap::new(),
    };
    let mut timer = Timer(BTreeMap::new());
    let total = Instant::now();
    for &n in &cfg.n {
        let doc = cfg.document(n)?;
        let result = match cfg.kind {
            ExperimentKind::Simulate => run_simulate(cfg, n, &doc, &mut summary, &mut timer)?,
            ExperimentKind::RankOpenloop => run_rank(cfg, n, &doc, &mut summary, &mut timer)?,
            ExperimentKind::SolveFeedback => run_feedback(cfg, n, &doc, &mut summary, &mut timer)?,
            ExperimentKind::SolveHybrid => run_hybrid(cfg, n, &doc, &mut summary, &mut timer)?,
            ExperimentKind::SolveDiscounted => run_discounted(cfg, n, &doc, &mut timer)?,
            ExperimentKind::Evaluate => run_evaluate(cfg, n, &doc, &mut summary, &mut timer)?,
            ExperimentKind::VerifyBounds => break,
        };
        summary.results.push(result);
    }
    if cfg.kind == ExperimentKind::VerifyBounds {
        let r = run_bounds(cfg, &first, &mut timer)?;
        summary.results.push(r);
    }
    summary.runtimes = timer.0;
    summary.runtimes.insert("total".into(), total.elapsed().as_secs_f64());
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&cfg.output, "summary.json", &text)?;
    Ok(summary)
}

fn run_simulate(cfg: &Resolved, n: u64, doc: &ModelDocument, s: &mut Summary, timer: &mut Timer) -> CliResult<Value> {
    let z0 = initial(doc)?;
    let policy = cfg
        .policy()
        .unwrap_or_else(|| OpenLoopPolicy::new(vec![0; doc.horizon.stages()]));
    let method = cfg.method();
    let fam = StreamFamily::new(cfg.seed, tag::SIMULATE).child(n);
    timer.run(format!("N{n}/trajectories"), || -> CliResult<()> {
        for i in 0..cfg.trajectories.min(cfg.m) {
            let traj = simulate(&doc.model, &policy, &doc.horizon, &z0, &method, &mut fam.child(0).rng(i as u64))?;
            write(&cfg.output, &format!("trajectory_N{n}_{i}.csv"), &trajectory_csv(&doc.model, &doc.horizon, &traj))?;
        }
        Ok(())
    })?;
    let m = cfg.m.max(2);
    let rows = timer.run(format!("N{n}/statistics"), || {
        stage_densities(&doc.model, &doc.horizon, &z0, &policy, m, fam.child(1), &method)
    })?;
    let mut stats = StageStatistics {
        policies: vec![policy.clone()],
        mean: vec![Vec::new()],
        std: vec![Vec::new()],
    };
    for j in 0..doc.horizon.stages() {
        let col: Vec<Vec<f64>> = rows.iter().map(|r| r[j].clone()).collect();
        let (mu, sd) = mean_std(&col);
        stats.mean[0].push(mu);
        stats.std[0].push(sd);
    }
    s.stage_stats.extend(stat_records(n, doc, &stats));
    let x0 = initial_state(&doc.model, &z0)?;
    let steps = timer.run(format!("N{n}/steps"), || -> CliResult<_> {
        let per: Vec<_> = (0..m as u64)
            .into_par_iter()
            .map_init(
                || Workspace::new(&doc.model),
                |ws, i| {
                    ws.steps = Default::default();
                    run_path(&doc.model, &doc.horizon, &method, &x0, &policy, &mut fam.child(2).rng(i), ws, &mut NoObserver)?;
                    Ok(ws.steps)
                },
            )
            .collect::<jumpctl_core::Result<Vec<_>>>()?;
        let mut total = jumpctl_core::simulate::StepCounter::default();
        per.iter().for_each(|c| total.merge(c));
        Ok(total)
    })?;
    let cost = timer.run(format!("N{n}/cost"), || {
        mc_cost_estimate(&doc.model, &policy, &doc.cost, &doc.horizon, &z0, m, StreamFamily::new(cfg.seed, tag::EVALUATION), &method)
    })?;
    s.costs.push(cost_record(n, "openloop", &policy.label(), &cost));
    Ok(json!({
        "N": n,
        "policy": policy.label(),
        "paths": m,
        "cost": cost,
        "mean_step": steps.mean_step(),
        "ssa_steps": steps.ssa_steps,
        "leaps": steps.leaps,
        "rejections": steps.rejections,
    }))
}

fn cost_record(n: u64, kind: &str, policy: &str, e: &Estimate) -> CostRecord {
    CostRecord {
        n,
        policy_kind: kind.to_string(),
        policy: policy.to_string(),
        cost: e.mean,
        stderr: e.stderr,
    }
}

fn run_rank(cfg: &Resolved, n: u64, doc: &ModelDocument, s: &mut Summary, timer: &mut Timer) -> CliResult<Value> {
    let z0 = initial(doc)?;
    let ranking = timer.run(format!("N{n}/rank"), || {
        rank_policies(&doc.model, &doc.horizon, &doc.cost, &z0, &RankOptions::monte_carlo(cfg.method(), cfg.m, cfg.seed))
    })?;
    let ode = timer.run(format!("N{n}/rank_ode"), || {
        rank_policies(&doc.model, &doc.horizon, &doc.cost, &z0, &RankOptions::ode(DEFAULT_DT))
    })?;
    write(&cfg.output, &format!("ranking_N{n}.csv"), &ranking.to_csv())?;
    write(&cfg.output, "ranking_ode.csv", &ode.to_csv())?;
    let best = ranking.best();
    s.costs.push(CostRecord {
        n,
        policy_kind: "openloop".into(),
        policy: best.policy.label(),
        cost: best.cost,
        stderr: best.stderr,
    });
    s.costs.push(CostRecord {
        n,
        policy_kind: "ode".into(),
        policy: ode.best().policy.label(),
        cost: ode.best().cost,
        stderr: 0.0,
    });
    Ok(json!({
        "N": n,
        "paths": cfg.m,
        "best": best.policy.label(),
        "best_ode": ode.best().policy.label(),
        "ranking": ranking.entries,
    }))
}

/// Ranks the open-loop policies and re-evaluates the best one on the
/// evaluation streams shared with every other policy kind.
fn best_open_loop(
    cfg: &Resolved,
    n: u64,
    doc: &ModelDocument,
    z0: &[f64],
    timer: &mut Timer,
) -> CliResult<(jumpctl_core::openloop::PolicyRanking, Estimate)> {
    let ranking = timer.run(format!("N{n}/rank"), || {
        rank_policies(&doc.model, &doc.horizon, &doc.cost, z0, &RankOptions::monte_carlo(cfg.method(), cfg.m_rank, cfg.seed))
    })?;
    write(&cfg.output, &format!("ranking_N{n}.csv"), &ranking.to_csv())?;
    let best = ranking.best().policy.clone();
    let eval = timer.run(format!("N{n}/evaluate_openloop"), || {
        mc_cost_estimate(&doc.model, &best, &doc.cost, &doc.horizon, z0, cfg.m_eval, StreamFamily::new(cfg.seed, tag::EVALUATION), &cfg.method())
    })?;
    Ok((ranking, eval))
}

/// The configured box, or one suggested from the good policies' statistics.
fn truncation(cfg: &Resolved, n: u64, doc: &ModelDocument, good: &[OpenLoopPolicy], z0: &[f64], timer: &mut Timer) -> CliResult<TruncatedSpace> {
    if let Some(b) = &cfg.feedback_box {
        return Ok(TruncatedSpace::from_density(n, &b.low, &b.high)?);
    }
    let stats = timer.run(format!("N{n}/statistics"), || {
        stage_statistics(&doc.model, good, &doc.horizon, z0, cfg.m_stat, cfg.seed, &cfg.method())
    })?;
    Ok(suggest_space(n, &stats, cfg.box_width)?)
}

fn run_feedback(cfg: &Resolved, n: u64, doc: &ModelDocument, s: &mut Summary, timer: &mut Timer) -> CliResult<Value> {
    let z0 = initial(doc)?;
    let (ranking, ol) = best_open_loop(cfg, n, doc, &z0, timer)?;
    let good: Vec<OpenLoopPolicy> = good_policies(&ranking, cfg.n_ol, cfg.epsilon_ol).into_iter().map(|e| e.policy).collect();
    let space = truncation(cfg, n, doc, &good, &z0, timer)?;
    let opts = cfg.dp_options();
    let sol = timer.run(format!("N{n}/solve"), || solve_feedback_dp(&doc.model, &doc.horizon, &doc.cost, &space, &opts))?;
    write(&cfg.output, &format!("value_table_N{n}.csv"), &sol.table.to_csv(&s.species))?;
    let fb = timer.run(format!("N{n}/evaluate"), || {
        mc_cost_estimate(&doc.model, &sol.policy, &doc.cost, &doc.horizon, &z0, cfg.m_eval, StreamFamily::new(cfg.seed, tag::EVALUATION), &cfg.method())
    })?;
    let best = ranking.best().policy.label();
    s.costs.push(cost_record(n, "openloop", &best, &ol));
    s.costs.push(cost_record(n, "feedback", "", &fb));
    Ok(json!({
        "N": n,
        "box_low": space.low(),
        "box_high": space.high(),
        "states": space.len(),
        "openloop_best": best,
        "openloop": ol,
        "feedback": fb,
        "diagnostics": sol.diagnostics,
    }))
}

fn run_hybrid(cfg: &Resolved, n: u64, doc: &ModelDocument, s: &mut Summary, timer: &mut Timer) -> CliResult<Value> {
    let z0 = initial(doc)?;
    let method = cfg.method();
    let (ranking, ol) = best_open_loop(cfg, n, doc, &z0, timer)?;
    let good: Vec<OpenLoopPolicy> = good_policies(&ranking, cfg.n_ol, cfg.epsilon_ol).into_iter().map(|e| e.policy).collect();
    let stats = timer.run(format!("N{n}/statistics"), || {
        stage_statistics(&doc.model, &good, &doc.horizon, &z0, cfg.m_stat, cfg.seed, &method)
    })?;
    s.stage_stats.extend(stat_records(n, doc, &stats));
    let sets = timer.run(format!("N{n}/stage_sets"), || {
        build_stage_sets(&doc.model, &stats, &doc.horizon, &z0, cfg.m_ol, cfg.zeta, cfg.seed, &method)
    })?;
    write(&cfg.output, &format!("stage_sets_N{n}.csv"), &sets.to_csv(&s.species))?;
    let sets = Arc::new(sets);
    let opts = HybridOptions {
        paths: cfg.m,
        method,
        seed: cfg.seed,
    };
    let sols = timer.run(format!("N{n}/solve"), || {
        solve_hybrid_dp(&doc.model, &doc.horizon, &doc.cost, sets.clone(), &good[0], &cfg.epsilon_near, &opts)
    })?;
    let best = good[0].label();
    s.costs.push(cost_record(n, "openloop", &best, &ol));
    let mut per_eps = Vec::new();
    for sol in &sols {
        let e = sol.policy.epsilon_near;
        write(&cfg.output, &format!("hybrid_policy_N{n}_eps{}.csv", eps_label(e)), &sol.policy.to_csv(&s.species))?;
        let ev = timer.run(format!("N{n}/evaluate"), || {
            evaluate_hybrid(&doc.model, &sol.policy, &doc.horizon, &doc.cost, &z0, cfg.m_eval, cfg.seed, &method)
        })?;
        s.costs.push(cost_record(n, &format!("hybrid_eps={}", eps_label(e)), "", &ev.cost));
        per_eps.push(json!({
            "epsilon_near": e,
            "cost": ev.cost,
            "r_ol": ev.r_ol,
            "r_near": ev.r_near,
            "r_in_set": ev.r_in_set,
            "mean_stopping_stages": sol.mean_stopping_stages,
        }));
    }
    let sizes = sets.sizes();
    Ok(json!({
        "N": n,
        "good_policies": good.iter().map(|p| p.label()).collect::<Vec<_>>(),
        "N_g": good.len(),
        "set_sizes": sizes,
        "set_size_min": sizes.iter().skip(1).min(),
        "set_size_max": sizes.iter().max(),
        "openloop_best": best,
        "openloop": ol,
        "hybrid": per_eps,
    }))
}

fn run_discounted(cfg: &Resolved, n: u64, doc: &ModelDocument, timer: &mut Timer) -> CliResult<Value> {
    let spec = match cfg.beta {
        Some(b) => doc.cost.clone().with_beta(b),
        None => doc.cost.clone(),
    };
    if !(spec.beta > 0.0) {
        return Err(CliError::Config("the discounted problem needs `beta` > 0".into()));
    }
    let b = cfg
        .feedback_box
        .as_ref()
        .ok_or_else(|| CliError::Config("the discounted problem needs a `box`".into()))?;
    let space = TruncatedSpace::from_density(n, &b.low, &b.high)?;
    let opts = ViOptions {
        dp: cfg.dp_options(),
        tol: cfg.tol,
        max_sweeps: None,
    };
    let sol = timer.run(format!("N{n}/solve"), || solve_discounted_vi(&doc.model, &spec, cfg.h, &space, &opts))?;
    let mut csv = String::new();
    csv.push_str(&doc.model.species().iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(","));
    csv.push_str(",value,stderr,argmin_control\n");
    for (i, x) in space.iter().enumerate() {
        for v in &x {
            csv.push_str(&format!("{v},"));
        }
        csv.push_str(&format!("{:?},{:?},{}\n", sol.values[i], sol.stderr[i], sol.policy.controls[i]));
    }
    write(&cfg.output, &format!("discounted_N{n}.csv"), &csv)?;
    Ok(json!({
        "N": n,
        "states": space.len(),
        "lambda": sol.lambda,
        "sweeps": sol.sweeps(),
        "last_change": sol.changes.last(),
        "diagnostics": sol.diagnostics,
    }))
}

fn run_evaluate(cfg: &Resolved, n: u64, doc: &ModelDocument, s: &mut Summary, timer: &mut Timer) -> CliResult<Value> {
    let z0 = initial(doc)?;
    let policy = cfg
        .policy()
        .ok_or_else(|| CliError::Config("`evaluate` needs a `policy`".into()))?;
    if policy.controls().len() != doc.horizon.stages() || policy.controls().iter().any(|&c| c >= doc.model.control_count()) {
        return Err(CliError::Config(format!("policy {} does not fit the model", policy.label())));
    }
    let est = timer.run(format!("N{n}/evaluate"), || {
        mc_cost_estimate(&doc.model, &policy, &doc.cost, &doc.horizon, &z0, cfg.m_eval, StreamFamily::new(cfg.seed, tag::EVALUATION), &cfg.method())
    })?;
    let path = integrate_piecewise(&doc.model, policy.controls(), &z0, &doc.horizon, DEFAULT_DT)?;
    let limit = ode_cost(&path, &doc.cost, &doc.horizon);
    s.costs.push(cost_record(n, "openloop", &policy.label(), &est));
    s.costs.push(cost_record(n, "ode", &policy.label(), &Estimate::exact(limit)));
    Ok(json!({ "N": n, "policy": policy.label(), "cost": est, "ode_cost": limit }))
}

fn run_bounds(cfg: &Resolved, doc: &ModelDocument, timer: &mut Timer) -> CliResult<Value> {
    let z0 = initial(doc)?;
    let domain = match &cfg.bounds_box {
        Some(b) => DensityBox::new(b.low.clone(), b.high.clone())?,
        None => doc.model.domain(),
    };
    let policies: Vec<OpenLoopPolicy> = match cfg.policy() {
        Some(p) => vec![p],
        None => enumerate_policies(doc.model.control_count(), doc.horizon.stages(), 1000)?.collect(),
    };
    let mut consts = derive_constants(&doc.model, &doc.cost, &domain, cfg.alpha)?;
    // the tube radius only feeds the exit-probability column
    if let Ok(g) = tube_gamma(&doc.model, &doc.horizon, &z0, &domain, &policies, DEFAULT_DT) {
        consts = consts.with_gamma(g);
    }
    let mut out = Vec::new();
    for (i, p) in policies.iter().enumerate() {
        let rep = timer.run(format!("kurtz/{}", p.label()), || {
            verify_kurtz(&doc.model, &doc.horizon, p, &z0, &consts, &cfg.n, cfg.m.max(2), cfg.seed.wrapping_add(i as u64))
        })?;
        let name = p.label().replace(['(', ')'], "").replace(',', "");
        write(&cfg.output, &format!("bounds_{name}.csv"), &rep.to_csv())?;
        out.push(json!({
            "policy": p.label(),
            "holds": rep.holds(),
            "slope": rep.slope,
            "rows": rep.rows,
        }));
    }
    Ok(json!({ "constants": consts, "policies": out }))
}
