//! Exact (direct-method SSA) and tau-leaping sample paths.
//!
//! Paths are produced stage by stage. Observers receive the path as a
//! sequence of constant pieces (`hold`), linear leap pieces (`chord`) and
//! jumps, so that costs and other functionals can be accumulated in a single
//! streaming pass without storing the trajectory.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JumpModel, StagedHorizon};
use crate::policy::{Controller, Decision};
use crate::rng::SimRng;

/// Tau-leaping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauConfig {
    /// Relative change bound `ε` of the step selection.
    pub epsilon: f64,
    /// Halvings of a leap that produced a negative state before falling back to SSA.
    pub max_halvings: u32,
    /// Leaps shorter than `ssa_threshold / a0` are replaced by single SSA steps.
    pub ssa_threshold: f64,
    /// SSA steps taken per fallback burst.
    pub ssa_burst: u32,
}

impl Default for TauConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.03,
            max_halvings: 10,
            ssa_threshold: 10.0,
            ssa_burst: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Ssa,
    TauLeap(TauConfig),
}

impl Method {
    pub fn tau(epsilon: f64) -> Self {
        Method::TauLeap(TauConfig {
            epsilon,
            ..TauConfig::default()
        })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Method::Ssa)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ssa => "ssa",
            Method::TauLeap(_) => "tau",
        }
    }
}

/// Receives a sample path piece by piece.
///
/// The path is right-continuous: `hold(t0, t1, x)` covers `[t0, t1)` with a
/// constant state, `chord(t0, t1, a, b)` a tau leap approximated linearly,
/// and `jump(t, x)` reports the state from `t` on.
#[allow(unused_variables)]
pub trait PathObserver {
    fn stage_start(&mut self, stage: usize, t: f64, state: &[i64], decision: Decision) {}
    fn hold(&mut self, t0: f64, t1: f64, state: &[i64]) {}
    fn chord(&mut self, t0: f64, t1: f64, from: &[i64], to: &[i64]) {}
    fn jump(&mut self, t: f64, state: &[i64]) {}
    /// End of the path; `stage` is `K` when the horizon was reached and the
    /// stopping stage otherwise.
    fn finish(&mut self, stage: usize, t: f64, state: &[i64]) {}
}

/// Observer that ignores everything.
pub struct NoObserver;
impl PathObserver for NoObserver {}

impl<A: PathObserver, B: PathObserver> PathObserver for (A, B) {
    fn stage_start(&mut self, stage: usize, t: f64, state: &[i64], d: Decision) {
        self.0.stage_start(stage, t, state, d);
        self.1.stage_start(stage, t, state, d);
    }
    fn hold(&mut self, t0: f64, t1: f64, state: &[i64]) {
        self.0.hold(t0, t1, state);
        self.1.hold(t0, t1, state);
    }
    fn chord(&mut self, t0: f64, t1: f64, from: &[i64], to: &[i64]) {
        self.0.chord(t0, t1, from, to);
        self.1.chord(t0, t1, from, to);
    }
    fn jump(&mut self, t: f64, state: &[i64]) {
        self.0.jump(t, state);
        self.1.jump(t, state);
    }
    fn finish(&mut self, stage: usize, t: f64, state: &[i64]) {
        self.0.finish(stage, t, state);
        self.1.finish(stage, t, state);
    }
}

impl<O: PathObserver + ?Sized> PathObserver for &mut O {
    fn stage_start(&mut self, stage: usize, t: f64, state: &[i64], d: Decision) {
        (**self).stage_start(stage, t, state, d);
    }
    fn hold(&mut self, t0: f64, t1: f64, state: &[i64]) {
        (**self).hold(t0, t1, state);
    }
    fn chord(&mut self, t0: f64, t1: f64, from: &[i64], to: &[i64]) {
        (**self).chord(t0, t1, from, to);
    }
    fn jump(&mut self, t: f64, state: &[i64]) {
        (**self).jump(t, state);
    }
    fn finish(&mut self, stage: usize, t: f64, state: &[i64]) {
        (**self).finish(stage, t, state);
    }
}

/// Counts of simulation steps, for step-size diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepCounter {
    /// SSA events (including fallback steps inside tau-leaping).
    pub ssa_steps: u64,
    /// Accepted tau leaps.
    pub leaps: u64,
    /// Leap attempts rejected for producing a negative state.
    pub rejections: u64,
    /// Simulated time covered while the process was not absorbed.
    pub active_time: f64,
}

impl StepCounter {
    pub fn steps(&self) -> u64 {
        self.ssa_steps + self.leaps
    }

    /// Mean time advanced per step.
    pub fn mean_step(&self) -> f64 {
        self.active_time / self.steps() as f64
    }

    pub fn merge(&mut self, o: &StepCounter) {
        self.ssa_steps += o.ssa_steps;
        self.leaps += o.leaps;
        self.rejections += o.rejections;
        self.active_time += o.active_time;
    }
}

/// Reusable buffers for one simulation thread.
pub struct Workspace {
    props: Vec<f64>,
    counts: Vec<i64>,
    next: Vec<i64>,
    pub steps: StepCounter,
}

impl Workspace {
    pub fn new(model: &JumpModel) -> Self {
        Self {
            props: vec![0.0; model.reaction_count()],
            counts: vec![0; model.reaction_count()],
            next: vec![0; model.species_count()],
            steps: StepCounter::default(),
        }
    }
}

/// One direct-method step: waiting time and index of the firing reaction.
/// Returns `(∞, None)` in an absorbing state.
pub fn ssa_step(
    model: &JumpModel,
    control: usize,
    state: &[i64],
    rng: &mut SimRng,
    props: &mut [f64],
) -> (f64, Option<usize>) {
    let a0 = model.propensities(control, state, props);
    if a0 <= 0.0 {
        return (f64::INFINITY, None);
    }
    let e: f64 = Exp1.sample(rng);
    (e / a0, Some(pick(props, a0, rng)))
}

#[inline]
fn pick(props: &[f64], a0: f64, rng: &mut SimRng) -> usize {
    let u = rng.random::<f64>() * a0;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &a) in props.iter().enumerate() {
        if a > 0.0 {
            acc += a;
            last = k;
            if u < acc {
                return k;
            }
        }
    }
    last
}

#[inline]
fn apply(state: &mut [i64], jump: &[i64]) {
    for (x, d) in state.iter_mut().zip(jump) {
        *x += d;
    }
}

/// SSA from `t` until `t_end` or until `max_steps` events fired; returns the
/// time reached.
#[allow(clippy::too_many_arguments)]
fn ssa_until<O: PathObserver>(
    model: &JumpModel,
    control: usize,
    state: &mut [i64],
    mut t: f64,
    t_end: f64,
    max_steps: u64,
    rng: &mut SimRng,
    ws: &mut Workspace,
    obs: &mut O,
) -> f64 {
    let reactions = model.reactions();
    let mut fired = 0;
    while fired < max_steps {
        let a0 = model.propensities(control, state, &mut ws.props);
        if a0 <= 0.0 {
            obs.hold(t, t_end, state);
            return t_end;
        }
        let e: f64 = Exp1.sample(rng);
        let tn = t + e / a0;
        if tn >= t_end {
            obs.hold(t, t_end, state);
            ws.steps.active_time += t_end - t;
            return t_end;
        }
        obs.hold(t, tn, state);
        ws.steps.active_time += tn - t;
        t = tn;
        let k = pick(&ws.props, a0, rng);
        apply(state, &reactions[k].jump);
        ws.steps.ssa_steps += 1;
        obs.jump(t, state);
        fired += 1;
    }
    t
}

/// Candidate leap size from the mean/variance change bound.
pub fn select_tau(model: &JumpModel, control: usize, state: &[i64], epsilon: f64) -> f64 {
    let mut props = vec![0.0; model.reaction_count()];
    model.propensities(control, state, &mut props);
    select_tau_with(model, state, epsilon, &props)
}

fn select_tau_with(model: &JumpModel, state: &[i64], epsilon: f64, props: &[f64]) -> f64 {
    let mut tau = f64::INFINITY;
    for i in 0..model.species_count() {
        let Some(g) = model.highest_reactant_order(i) else {
            continue;
        };
        let mut mu = 0.0;
        let mut var = 0.0;
        for (r, &a) in model.reactions().iter().zip(props) {
            let l = r.jump[i] as f64;
            mu += l * a;
            var += l * l * a;
        }
        let bound = (epsilon * state[i] as f64 / g.max(1) as f64).max(1.0);
        if mu != 0.0 {
            tau = tau.min(bound / mu.abs());
        }
        if var > 0.0 {
            tau = tau.min(bound * bound / var);
        }
    }
    tau
}

/// One Poisson leap of length `tau` (no rejection handling).
pub fn tau_leap_step(
    model: &JumpModel,
    control: usize,
    state: &[i64],
    tau: f64,
    rng: &mut SimRng,
) -> Vec<i64> {
    let mut props = vec![0.0; model.reaction_count()];
    model.propensities(control, state, &mut props);
    let mut next = state.to_vec();
    for (r, &a) in model.reactions().iter().zip(&props) {
        let c = poisson(a * tau, rng);
        for (x, d) in next.iter_mut().zip(&r.jump) {
            *x += c * d;
        }
    }
    next
}

#[inline]
fn poisson(mean: f64, rng: &mut SimRng) -> i64 {
    if mean <= 0.0 {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(p) => {
            let v: f64 = p.sample(rng);
            v as i64
        }
        Err(_) => 0,
    }
}

/// Tau-leaping with a fixed control over `[t0, t1)`.
#[allow(clippy::too_many_arguments)]
fn tau_until<O: PathObserver>(
    model: &JumpModel,
    control: usize,
    state: &mut [i64],
    t0: f64,
    t1: f64,
    cfg: &TauConfig,
    rng: &mut SimRng,
    ws: &mut Workspace,
    obs: &mut O,
) {
    let mut t = t0;
    let reactions = model.reactions();
    while t < t1 {
        let a0 = model.propensities(control, state, &mut ws.props);
        if a0 <= 0.0 {
            obs.hold(t, t1, state);
            return;
        }
        let cand = select_tau_with(model, state, cfg.epsilon, &ws.props);
        if cand < cfg.ssa_threshold / a0 {
            t = ssa_until(model, control, state, t, t1, cfg.ssa_burst as u64, rng, ws, obs);
            continue;
        }
        let window = cand.min(t1 - t);
        let mut tau = window;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            ws.next.copy_from_slice(state);
            for (k, r) in reactions.iter().enumerate() {
                let c = poisson(ws.props[k] * tau, rng);
                ws.counts[k] = c;
                if c != 0 {
                    for (x, d) in ws.next.iter_mut().zip(&r.jump) {
                        *x += c * d;
                    }
                }
            }
            if ws.next.iter().all(|&x| x >= 0) {
                accepted = true;
                break;
            }
            ws.steps.rejections += 1;
            tau *= 0.5;
        }
        if accepted {
            // land exactly on the stage boundary when the leap was clipped
            let tn = if tau == t1 - t { t1 } else { t + tau };
            obs.chord(t, tn, state, &ws.next);
            state.copy_from_slice(&ws.next);
            ws.steps.leaps += 1;
            ws.steps.active_time += tn - t;
            t = tn;
            obs.jump(t, state);
        } else {
            let end = t + window;
            let end = if end >= t1 { t1 } else { end };
            while t < end {
                t = ssa_until(model, control, state, t, end, u64::MAX, rng, ws, obs);
            }
        }
    }
}

/// Runs one stage `[t0, t1)` with a fixed control, updating `state`.
#[allow(clippy::too_many_arguments)]
pub fn advance<O: PathObserver>(
    model: &JumpModel,
    control: usize,
    state: &mut [i64],
    t0: f64,
    t1: f64,
    method: &Method,
    rng: &mut SimRng,
    ws: &mut Workspace,
    obs: &mut O,
) {
    match method {
        Method::Ssa => {
            ssa_until(model, control, state, t0, t1, u64::MAX, rng, ws, obs);
        }
        Method::TauLeap(cfg) => tau_until(model, control, state, t0, t1, cfg, rng, ws, obs),
    }
}

/// Final stage and state of a controlled run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEnd {
    /// `K` when the horizon was reached, else the stage at which `stop` fired.
    pub stage: usize,
    pub state: Vec<i64>,
}

/// Simulates from stage `start` with state `x0` under `controller`.
///
/// At every later stage start `stop(j, x)` is consulted first, and the run
/// ends there when it returns true. `first` overrides the control of the
/// first stage.
#[allow(clippy::too_many_arguments)]
pub fn run_controlled<C, O, S>(
    model: &JumpModel,
    horizon: &StagedHorizon,
    method: &Method,
    start: usize,
    x0: &[i64],
    first: Option<usize>,
    controller: &C,
    mut stop: S,
    rng: &mut SimRng,
    ws: &mut Workspace,
    obs: &mut O,
) -> Result<RunEnd>
where
    C: Controller + ?Sized,
    O: PathObserver,
    S: FnMut(usize, &[i64]) -> bool,
{
    let k_end = horizon.stages();
    let mut x = x0.to_vec();
    for j in start..k_end {
        let t0 = horizon.start_of(j);
        if j > start && stop(j, &x) {
            obs.finish(j, t0, &x);
            return Ok(RunEnd { stage: j, state: x });
        }
        let decision = match (j == start, first) {
            (true, Some(c)) => Decision::fixed(c),
            _ => controller.decide(j, &x)?,
        };
        if decision.control >= model.control_count() {
            return Err(Error::InvalidArgument(format!(
                "control index {} out of range",
                decision.control
            )));
        }
        obs.stage_start(j, t0, &x, decision);
        advance(
            model,
            decision.control,
            &mut x,
            t0,
            horizon.start_of(j + 1),
            method,
            rng,
            ws,
            obs,
        );
    }
    obs.finish(k_end, horizon.end(), &x);
    Ok(RunEnd { stage: k_end, state: x })
}

/// Simulates the whole horizon from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn run_path<C, O>(
    model: &JumpModel,
    horizon: &StagedHorizon,
    method: &Method,
    x0: &[i64],
    controller: &C,
    rng: &mut SimRng,
    ws: &mut Workspace,
    obs: &mut O,
) -> Result<Vec<i64>>
where
    C: Controller + ?Sized,
    O: PathObserver,
{
    run_controlled(
        model,
        horizon,
        method,
        0,
        x0,
        None,
        controller,
        |_, _| false,
        rng,
        ws,
        obs,
    )
    .map(|e| e.state)
}

/// Piecewise path stored as sparse events.
///
/// The state is constant between events, except that for approximate paths
/// an event flagged as a leap is reached along a straight chord from the
/// previous event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: Vec<i64>,
    pub times: Vec<f64>,
    /// Row-major states after each event.
    pub states: Vec<i64>,
    pub leap: Vec<bool>,
    pub end_time: f64,
    pub exact: bool,
    /// Control applied in each stage.
    pub controls: Vec<usize>,
    pub decisions: Vec<Decision>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[i64] {
        let n = self.dim();
        &self.states[i * n..(i + 1) * n]
    }

    /// State at time `t` (right-continuous, chords not interpolated).
    pub fn state_at(&self, t: f64) -> &[i64] {
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            &self.initial
        } else {
            self.state(i - 1)
        }
    }

    pub fn final_state(&self) -> &[i64] {
        if self.times.is_empty() {
            &self.initial
        } else {
            self.state(self.times.len() - 1)
        }
    }

    /// Replays the path through an observer, splitting holds at stage times.
    pub fn replay<O: PathObserver>(&self, horizon: &StagedHorizon, obs: &mut O) {
        let k_end = horizon.stages();
        let mut cur = self.initial.clone();
        let mut t = 0.0;
        let mut ev = 0;
        for j in 0..k_end {
            let t1 = horizon.start_of(j + 1);
            obs.stage_start(j, horizon.start_of(j), &cur, self.decisions[j]);
            while ev < self.times.len() && self.times[ev] < t1 {
                let te = self.times[ev];
                let next = self.state(ev);
                if self.leap[ev] {
                    obs.chord(t, te, &cur, next);
                } else {
                    obs.hold(t, te, &cur);
                }
                cur.copy_from_slice(next);
                t = te;
                obs.jump(t, &cur);
                ev += 1;
            }
            // leaps ending exactly on the boundary belong to this stage
            while ev < self.times.len() && self.times[ev] == t1 && self.leap[ev] {
                let next = self.state(ev);
                obs.chord(t, t1, &cur, next);
                cur.copy_from_slice(next);
                t = t1;
                obs.jump(t, &cur);
                ev += 1;
            }
            if t < t1 {
                obs.hold(t, t1, &cur);
                t = t1;
            }
        }
        obs.finish(k_end, horizon.end(), &cur);
    }
}

/// Observer that records a [`Trajectory`].
pub struct Recorder {
    traj: Trajectory,
    pending_leap: bool,
}

impl Recorder {
    pub fn new(initial: &[i64], exact: bool) -> Self {
        Self {
            traj: Trajectory {
                initial: initial.to_vec(),
                times: Vec::new(),
                states: Vec::new(),
                leap: Vec::new(),
                end_time: 0.0,
                exact,
                controls: Vec::new(),
                decisions: Vec::new(),
            },
            pending_leap: false,
        }
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }
}

impl PathObserver for Recorder {
    fn stage_start(&mut self, _stage: usize, _t: f64, _state: &[i64], d: Decision) {
        self.traj.controls.push(d.control);
        self.traj.decisions.push(d);
    }
    fn chord(&mut self, _t0: f64, _t1: f64, _from: &[i64], _to: &[i64]) {
        self.pending_leap = true;
    }
    fn jump(&mut self, t: f64, state: &[i64]) {
        self.traj.times.push(t);
        self.traj.states.extend_from_slice(state);
        self.traj.leap.push(self.pending_leap);
        self.pending_leap = false;
    }
    fn finish(&mut self, _stage: usize, t: f64, _state: &[i64]) {
        self.traj.end_time = t;
    }
}

/// Initial integer state `N z0`.
pub fn initial_state(model: &JumpModel, z0: &[f64]) -> Result<Vec<i64>> {
    if z0.len() != model.species_count() {
        return Err(Error::InvalidArgument(format!(
            "initial density has {} components, expected {}",
            z0.len(),
            model.species_count()
        )));
    }
    model.lattice_point(z0)
}

/// Records one full path.
pub fn simulate<C: Controller + ?Sized>(
    model: &JumpModel,
    controller: &C,
    horizon: &StagedHorizon,
    z0: &[f64],
    method: &Method,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    let x0 = initial_state(model, z0)?;
    let mut ws = Workspace::new(model);
    let mut rec = Recorder::new(&x0, method.is_exact());
    run_path(model, horizon, method, &x0, controller, rng, &mut ws, &mut rec)?;
    Ok(rec.into_trajectory())
}

pub fn simulate_ssa<C: Controller + ?Sized>(
    model: &JumpModel,
    controller: &C,
    horizon: &StagedHorizon,
    z0: &[f64],
    rng: &mut SimRng,
) -> Result<Trajectory> {
    simulate(model, controller, horizon, z0, &Method::Ssa, rng)
}

pub fn simulate_tau_leap<C: Controller + ?Sized>(
    model: &JumpModel,
    controller: &C,
    horizon: &StagedHorizon,
    z0: &[f64],
    rng: &mut SimRng,
    epsilon_tau: f64,
) -> Result<Trajectory> {
    simulate(model, controller, horizon, z0, &Method::tau(epsilon_tau), rng)
}

/// Trajectory CSV: `time,species…,control_index`, initial row plus one row
/// per event.
pub fn trajectory_csv(model: &JumpModel, horizon: &StagedHorizon, traj: &Trajectory) -> String {
    let mut out = String::from("time");
    for s in model.species() {
        out.push(',');
        out.push_str(&s.name);
    }
    out.push_str(",control_index\n");
    let row = |out: &mut String, t: f64, x: &[i64]| {
        let stage = horizon.stage_at(t).unwrap_or(horizon.stages() - 1);
        out.push_str(&format!("{t:?}"));
        for v in x {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", traj.controls.get(stage).copied().unwrap_or(0)));
    };
    row(&mut out, 0.0, &traj.initial);
    for i in 0..traj.len() {
        row(&mut out, traj.times[i], traj.state(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::policy::OpenLoopPolicy;
    use crate::rng::{tag, StreamFamily};

    fn fam() -> StreamFamily {
        StreamFamily::new(42, tag::SIMULATE)
    }

    #[test]
    fn absorbing_state_returns_infinity() {
        let m = builtin::birth_death_a1(10).unwrap();
        let mut props = vec![0.0; 2];
        let (t, k) = ssa_step(&m, 0, &[0], &mut fam().rng(0), &mut props);
        assert!(t.is_infinite());
        assert!(k.is_none());
    }

    #[test]
    fn ssa_step_statistics() {
        let m = builtin::birth_death_a1(10).unwrap();
        let mut rng = fam().rng(1);
        let mut props = vec![0.0; 2];
        let n = 100_000;
        let (mut births, mut wait) = (0usize, 0.0);
        for _ in 0..n {
            let (t, k) = ssa_step(&m, 0, &[12], &mut rng, &mut props);
            wait += t;
            if k == Some(0) {
                births += 1;
            }
        }
        let p = births as f64 / n as f64;
        let sd = (0.625f64 * 0.375 / n as f64).sqrt();
        assert!((p - 0.625).abs() < 3.0 * sd, "p = {p}");
        let mean = wait / n as f64;
        assert!((mean - 1.0 / 19.2).abs() < 3.0 * (1.0 / 19.2) / (n as f64).sqrt());
    }

    #[test]
    fn select_tau_examples() {
        let m = builtin::document("pure_birth", 100).unwrap().model;
        assert!((select_tau(&m, 0, &[100], 0.03) - 0.03).abs() < 1e-15);
        assert!(select_tau(&m, 0, &[0], 0.03).is_infinite());
    }

    #[test]
    fn poisson_leap_mean() {
        let m = builtin::document("pure_birth", 100).unwrap().model;
        let mut rng = fam().rng(2);
        let n = 100_000;
        let s: i64 = (0..n).map(|_| tau_leap_step(&m, 0, &[100], 0.03, &mut rng)[0] - 100).sum();
        let mean = s as f64 / n as f64;
        assert!((mean - 3.0).abs() < 3.0 * (3.0f64 / n as f64).sqrt());
    }

    #[test]
    fn tau_leap_never_negative() {
        let text = "model d\nscaling N = 1\nspecies A\nreaction death: A -> 0 unary(A)\ncontrols:\n  c: death = 50\nstages: t = [0, 10]\n";
        let doc = crate::model::parse_model(text).unwrap();
        let pol = OpenLoopPolicy::new(vec![0]);
        for s in 0..200 {
            let tr = simulate(&doc.model, &pol, &doc.horizon, &[1.0], &Method::tau(0.5), &mut fam().rng(s))
                .unwrap();
            assert!(tr.states.iter().all(|&x| x >= 0));
            assert_eq!(tr.final_state(), &[0]);
        }
    }

    #[test]
    fn zero_rate_model_has_no_events() {
        let m = builtin::birth_death_a1(10).unwrap();
        let controls = crate::model::ControlSet::new(
            vec![crate::model::Control {
                name: "off".into(),
                rates: vec![0.0, 0.0],
            }],
            2,
        )
        .unwrap();
        let m = m.with_controls(controls).unwrap();
        let h = StagedHorizon::uniform(3, 1.0).unwrap();
        let pol = OpenLoopPolicy::new(vec![0, 0, 0]);
        for method in [Method::Ssa, Method::tau(0.03)] {
            let tr = simulate(&m, &pol, &h, &[1.2], &method, &mut fam().rng(3)).unwrap();
            assert!(tr.is_empty());
            assert_eq!(tr.final_state(), &[12]);
        }
    }

    #[test]
    fn reproducible_and_controls_switch_at_stages() {
        let m = builtin::predator_prey(50).unwrap();
        let h = StagedHorizon::uniform(5, 1.0).unwrap();
        let pol = OpenLoopPolicy::new(vec![0, 2, 1, 0, 2]);
        for method in [Method::Ssa, Method::tau(0.03)] {
            let a = simulate(&m, &pol, &h, &[1.0, 0.4], &method, &mut fam().rng(9)).unwrap();
            let b = simulate(&m, &pol, &h, &[1.0, 0.4], &method, &mut fam().rng(9)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.controls, vec![0, 2, 1, 0, 2]);
            assert!(a.times.windows(2).all(|w| w[0] < w[1]));
            assert!(a.times.iter().all(|&t| (0.0..=5.0).contains(&t)));
        }
    }

    #[test]
    fn leaps_do_not_cross_stage_boundaries() {
        let m = builtin::birth_death_a1(4000).unwrap();
        let h = StagedHorizon::uniform(3, 1.0).unwrap();
        let pol = OpenLoopPolicy::new(vec![1, 1, 0]);
        struct Check(Vec<(f64, f64)>);
        impl PathObserver for Check {
            fn chord(&mut self, t0: f64, t1: f64, _: &[i64], _: &[i64]) {
                self.0.push((t0, t1));
            }
        }
        let mut ws = Workspace::new(&m);
        let mut c = Check(Vec::new());
        run_path(&m, &h, &Method::tau(0.03), &[4800], &pol, &mut fam().rng(4), &mut ws, &mut c)
            .unwrap();
        assert!(!c.0.is_empty());
        for (a, b) in c.0 {
            assert!(a.floor() == b.floor() || b == b.floor(), "{a} {b}");
        }
    }

    #[test]
    fn tau_steps_much_longer_than_ssa_at_large_n() {
        let m = builtin::birth_death_a1(4000).unwrap();
        let h = StagedHorizon::uniform(3, 1.0).unwrap();
        let pol = OpenLoopPolicy::new(vec![1, 1, 0]);
        let mut ws_s = Workspace::new(&m);
        let mut ws_t = Workspace::new(&m);
        for s in 0..20 {
            run_path(&m, &h, &Method::Ssa, &[4800], &pol, &mut fam().rng(s), &mut ws_s, &mut NoObserver)
                .unwrap();
            run_path(&m, &h, &Method::tau(0.03), &[4800], &pol, &mut fam().rng(s), &mut ws_t, &mut NoObserver)
                .unwrap();
        }
        assert!(ws_t.steps.mean_step() >= 10.0 * ws_s.steps.mean_step());
    }
}
