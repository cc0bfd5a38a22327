//! Staged cost functionals and their evaluation along paths.
//!
//! A cost expression is a constant plus weighted `|a·z + c|` and
//! `(a·z + c)²` terms. This small catalogue covers both experiments and has
//! closed-form bounds and Lipschitz constants on boxes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DensityBox, JumpModel, StagedHorizon};
use crate::odelimit::OdePath;
use crate::policy::{Controller, Decision};
use crate::rng::StreamFamily;
use crate::simulate::{initial_state, run_path, Method, PathObserver, Trajectory, Workspace};
use crate::stats::Estimate;

/// `a·z + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub coef: Vec<f64>,
    pub offset: f64,
}

impl Affine {
    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.coef.iter().zip(z).map(|(a, v)| a * v).sum::<f64>() + self.offset
    }

    fn norm(&self) -> f64 {
        self.coef.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// `max |a·z + c|` over the closed box (attained at a vertex).
    fn sup_abs(&self, b: &DensityBox) -> f64 {
        let mut lo = self.offset;
        let mut hi = self.offset;
        for (i, a) in self.coef.iter().enumerate() {
            let (p, q) = (a * b.low[i], a * b.high[i]);
            lo += p.min(q);
            hi += p.max(q);
        }
        lo.abs().max(hi.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Abs(Affine),
    Sq(Affine),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostExpr {
    pub constant: f64,
    pub terms: Vec<(f64, Term)>,
}

impl CostExpr {
    pub fn zero() -> Self {
        Self {
            constant: 0.0,
            terms: Vec::new(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    /// `w |a·z + c|`.
    pub fn abs(w: f64, coef: Vec<f64>, offset: f64) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(w, Term::Abs(Affine { coef, offset }))],
        }
    }

    pub fn plus(mut self, other: CostExpr) -> Self {
        self.constant += other.constant;
        self.terms.extend(other.terms);
        self
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        let mut v = self.constant;
        for (w, t) in &self.terms {
            v += w * match t {
                Term::Abs(a) => a.eval(z).abs(),
                Term::Sq(a) => {
                    let u = a.eval(z);
                    u * u
                }
            };
        }
        v
    }

    /// Exact `∫ expr(z(s)) ds` along the straight segment from `za` to `zb`
    /// traversed in time `dt`.
    pub fn chord_integral(&self, za: &[f64], zb: &[f64], dt: f64) -> f64 {
        let mut v = self.constant;
        for (w, t) in &self.terms {
            v += w * match t {
                Term::Abs(a) => {
                    let (u0, u1) = (a.eval(za), a.eval(zb));
                    if u0 * u1 >= 0.0 {
                        0.5 * (u0.abs() + u1.abs())
                    } else {
                        0.5 * (u0 * u0 + u1 * u1) / (u0.abs() + u1.abs())
                    }
                }
                Term::Sq(a) => {
                    let (u0, u1) = (a.eval(za), a.eval(zb));
                    (u0 * u0 + u0 * u1 + u1 * u1) / 3.0
                }
            };
        }
        v * dt
    }

    /// Upper bound of `|expr|` on the box (exact for non-negative weights
    /// and a zero constant).
    pub fn sup_abs(&self, b: &DensityBox) -> f64 {
        let nonneg = self.constant >= 0.0 && self.terms.iter().all(|(w, _)| *w >= 0.0);
        if nonneg {
            // convex, so the maximum sits at a vertex
            return b
                .vertices()
                .iter()
                .map(|v| self.eval(v))
                .fold(0.0, f64::max);
        }
        self.constant.abs()
            + self
                .terms
                .iter()
                .map(|(w, t)| {
                    w.abs()
                        * match t {
                            Term::Abs(a) => a.sup_abs(b),
                            Term::Sq(a) => a.sup_abs(b).powi(2),
                        }
                })
                .sum::<f64>()
    }

    /// Lipschitz constant on the box for the Euclidean norm.
    pub fn lipschitz(&self, b: &DensityBox) -> f64 {
        self.terms
            .iter()
            .map(|(w, t)| {
                w.abs()
                    * match t {
                        Term::Abs(a) => a.norm(),
                        Term::Sq(a) => 2.0 * a.norm() * a.sup_abs(b),
                    }
            })
            .sum()
    }

    /// Zeros of the affine parts of `abs` terms.
    fn kink_affines(&self) -> impl Iterator<Item = &Affine> {
        self.terms.iter().filter_map(|(_, t)| match t {
            Term::Abs(a) => Some(a),
            _ => None,
        })
    }
}

/// Stage cost `r`, running cost `φ` (one expression per control), terminal
/// cost `ψ` and discount rate `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub stage: Vec<CostExpr>,
    pub running: Vec<CostExpr>,
    pub terminal: CostExpr,
    pub beta: f64,
}

impl CostSpec {
    pub fn zero(_species: usize, controls: usize) -> Self {
        Self {
            stage: vec![CostExpr::zero(); controls],
            running: vec![CostExpr::zero(); controls],
            terminal: CostExpr::zero(),
            beta: 0.0,
        }
    }

    /// Same `r` and `φ` for every control.
    pub fn uniform(controls: usize, r: CostExpr, phi: CostExpr, psi: CostExpr) -> Self {
        Self {
            stage: vec![r; controls],
            running: vec![phi; controls],
            terminal: psi,
            beta: 0.0,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn r(&self, control: usize) -> &CostExpr {
        &self.stage[control]
    }

    pub fn phi(&self, control: usize) -> &CostExpr {
        &self.running[control]
    }

    pub fn psi(&self) -> &CostExpr {
        &self.terminal
    }

    /// `(M_r, M_φ, M_ψ)` on a box.
    pub fn bounds(&self, b: &DensityBox) -> (f64, f64, f64) {
        let m_r = self.stage.iter().map(|e| e.sup_abs(b)).fold(0.0, f64::max);
        let m_phi = self.running.iter().map(|e| e.sup_abs(b)).fold(0.0, f64::max);
        (m_r, m_phi, self.terminal.sup_abs(b))
    }

    /// `(L_r, L_φ, L_ψ)` on a box.
    pub fn lipschitz(&self, b: &DensityBox) -> (f64, f64, f64) {
        let l_r = self.stage.iter().map(|e| e.lipschitz(b)).fold(0.0, f64::max);
        let l_phi = self.running.iter().map(|e| e.lipschitz(b)).fold(0.0, f64::max);
        (l_r, l_phi, self.terminal.lipschitz(b))
    }
}

/// Cost expression with coefficients pre-scaled by `1/N`, evaluated
/// directly on integer states.
#[derive(Debug, Clone)]
struct Compiled {
    constant: f64,
    dim: usize,
    /// `(weight, squared, offset)` per term.
    terms: Vec<(f64, bool, f64)>,
    coef: Vec<f64>,
}

impl Compiled {
    fn new(e: &CostExpr, inv_n: f64, dim: usize) -> Self {
        let mut terms = Vec::with_capacity(e.terms.len());
        let mut coef = Vec::with_capacity(e.terms.len() * dim);
        for (w, t) in &e.terms {
            let (a, sq) = match t {
                Term::Abs(a) => (a, false),
                Term::Sq(a) => (a, true),
            };
            terms.push((*w, sq, a.offset));
            coef.extend(a.coef.iter().map(|c| c * inv_n));
        }
        Self {
            constant: e.constant,
            dim,
            terms,
            coef,
        }
    }

    fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }

    #[inline]
    fn eval(&self, x: &[i64]) -> f64 {
        let mut v = self.constant;
        for (t, &(w, sq, off)) in self.terms.iter().enumerate() {
            let c = &self.coef[t * self.dim..(t + 1) * self.dim];
            let mut u = off;
            for (a, &xi) in c.iter().zip(x) {
                u += a * xi as f64;
            }
            v += w * if sq { u * u } else { u.abs() };
        }
        v
    }
}

/// Streaming cost accumulator.
///
/// Stage costs are added at stage starts, running costs along holds and
/// chords, and `ψ` when the path reaches the horizon (if enabled). With
/// `β > 0` each stage is weighted by `e^{-β t_j}`.
pub struct CostAccumulator<'a> {
    spec: &'a CostSpec,
    inv_n: f64,
    running: Vec<Compiled>,
    control: usize,
    weight: f64,
    include_terminal: bool,
    pub total: f64,
    za: Vec<f64>,
    zb: Vec<f64>,
}

impl<'a> CostAccumulator<'a> {
    pub fn new(spec: &'a CostSpec, scaling: u64, dim: usize) -> Self {
        let inv_n = 1.0 / scaling as f64;
        Self {
            spec,
            inv_n,
            running: spec.running.iter().map(|e| Compiled::new(e, inv_n, dim)).collect(),
            control: 0,
            weight: 1.0,
            include_terminal: true,
            total: 0.0,
            za: vec![0.0; dim],
            zb: vec![0.0; dim],
        }
    }

    /// Leaves `ψ` out, for callers that close the path with a value function.
    pub fn without_terminal(mut self) -> Self {
        self.include_terminal = false;
        self
    }

    /// Starts a new path with the same spec.
    pub fn reset(&mut self) {
        self.total = 0.0;
        self.weight = 1.0;
        self.control = 0;
    }

    #[inline]
    fn density(inv_n: f64, x: &[i64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = v as f64 * inv_n;
        }
    }
}

impl PathObserver for CostAccumulator<'_> {
    fn stage_start(&mut self, _stage: usize, t: f64, state: &[i64], d: Decision) {
        self.control = d.control;
        self.weight = if self.spec.beta > 0.0 {
            (-self.spec.beta * t).exp()
        } else {
            1.0
        };
        let r = self.spec.r(d.control);
        if !r.is_zero() {
            Self::density(self.inv_n, state, &mut self.za);
            self.total += self.weight * r.eval(&self.za);
        }
    }

    #[inline]
    fn hold(&mut self, t0: f64, t1: f64, state: &[i64]) {
        let phi = &self.running[self.control];
        if t1 > t0 && !phi.is_zero() {
            self.total += self.weight * phi.eval(state) * (t1 - t0);
        }
    }

    fn chord(&mut self, t0: f64, t1: f64, from: &[i64], to: &[i64]) {
        Self::density(self.inv_n, from, &mut self.za);
        Self::density(self.inv_n, to, &mut self.zb);
        self.total += self.weight
            * self
                .spec
                .phi(self.control)
                .chord_integral(&self.za, &self.zb, t1 - t0);
    }

    fn finish(&mut self, _stage: usize, t: f64, state: &[i64]) {
        if self.include_terminal && !self.spec.terminal.is_zero() {
            Self::density(self.inv_n, state, &mut self.za);
            let w = if self.spec.beta > 0.0 {
                (-self.spec.beta * t).exp()
            } else {
                1.0
            };
            self.total += w * self.spec.terminal.eval(&self.za);
        }
    }
}

/// Cost of a recorded path: stage costs at each `t_j`, the running cost
/// integrated exactly over the constant pieces (and along leap chords for
/// tau-leaping paths), and `ψ` at `T`.
pub fn path_cost(traj: &Trajectory, spec: &CostSpec, horizon: &StagedHorizon, scaling: u64) -> f64 {
    let mut acc = CostAccumulator::new(spec, scaling, traj.dim());
    traj.replay(horizon, &mut acc);
    acc.total
}

/// Deterministic cost `J̃(z0, u)` of an ODE path.
///
/// The running cost is integrated with Simpson's rule on the Hermite
/// interpolant of each grid interval, splitting intervals at the zeros of
/// every `abs` term so that each piece is smooth.
pub fn ode_cost(path: &OdePath, spec: &CostSpec, horizon: &StagedHorizon) -> f64 {
    let n = path.dim;
    let mut total = 0.0;
    let mut z = vec![0.0; n];
    for (j, st) in path.stages.iter().enumerate() {
        debug_assert_eq!(st.times[0], horizon.start_of(j));
        let c = st.control;
        total += spec.r(c).eval(path.stage_start(j));
        let phi = spec.phi(c);
        if phi.is_zero() {
            continue;
        }
        let kinks: Vec<&Affine> = phi.kink_affines().collect();
        for i in 0..st.len() - 1 {
            let h = st.times[i + 1] - st.times[i];
            let mut cuts = vec![0.0, 1.0];
            for a in &kinks {
                let u = |theta: f64, z: &mut [f64]| {
                    path.hermite(j, i, theta, z);
                    a.eval(z)
                };
                // sample the cubic on a few points and bisect each sign change
                let mut prev = (0.0, u(0.0, &mut z));
                for s in 1..=4 {
                    let th = s as f64 / 4.0;
                    let cur = (th, u(th, &mut z));
                    if prev.1 * cur.1 < 0.0 {
                        let (mut lo, mut hi) = (prev.0, cur.0);
                        let flo = prev.1;
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            if u(mid, &mut z) * flo > 0.0 {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        cuts.push(0.5 * (lo + hi));
                    }
                    prev = cur;
                }
            }
            cuts.sort_by(|a, b| a.total_cmp(b));
            for w in cuts.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b <= a {
                    continue;
                }
                path.hermite(j, i, a, &mut z);
                let fa = phi.eval(&z);
                path.hermite(j, i, 0.5 * (a + b), &mut z);
                let fm = phi.eval(&z);
                path.hermite(j, i, b, &mut z);
                let fb = phi.eval(&z);
                total += (b - a) * h / 6.0 * (fa + 4.0 * fm + fb);
            }
        }
    }
    total + spec.psi().eval(path.end())
}

/// Monte-Carlo estimate of `J_N(z0, policy)` over `m` paths; path `i` uses
/// stream `i` of `streams`.
#[allow(clippy::too_many_arguments)]
pub fn mc_cost_estimate<C: Controller + ?Sized>(
    model: &JumpModel,
    controller: &C,
    spec: &CostSpec,
    horizon: &StagedHorizon,
    z0: &[f64],
    m: usize,
    streams: StreamFamily,
    method: &Method,
) -> Result<Estimate> {
    let costs = path_costs(model, controller, spec, horizon, z0, m, streams, method)?;
    Ok(Estimate::from_samples(&costs))
}

/// Per-path costs in path order.
#[allow(clippy::too_many_arguments)]
pub fn path_costs<C: Controller + ?Sized>(
    model: &JumpModel,
    controller: &C,
    spec: &CostSpec,
    horizon: &StagedHorizon,
    z0: &[f64],
    m: usize,
    streams: StreamFamily,
    method: &Method,
) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::InvalidArgument("at least two paths are required".into()));
    }
    let x0 = initial_state(model, z0)?;
    (0..m as u64)
        .into_par_iter()
        .map_init(
            || Workspace::new(model),
            |ws, i| {
                let mut acc = CostAccumulator::new(spec, model.scaling(), x0.len());
                let mut rng = streams.rng(i);
                run_path(model, horizon, method, &x0, controller, &mut rng, ws, &mut acc)?;
                Ok(acc.total)
            },
        )
        .collect()
}

/// `M_J = (M_r + M_φ h) / (1 − e^{−βh})`.
pub fn discounted_tail_constant(m_r: f64, m_phi: f64, h: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument("discounting requires beta > 0".into()));
    }
    Ok((m_r + m_phi * h) / (1.0 - (-beta * h).exp()))
}

/// Truncated discounted cost of a path over `k` uniform stages of width
/// `h`, plus the tail bound `λ^k M_J` with `λ = e^{−βh}`.
pub fn discounted_path_cost(
    traj: &Trajectory,
    spec: &CostSpec,
    h: f64,
    k: usize,
    scaling: u64,
    bounds_box: &DensityBox,
) -> Result<(f64, f64)> {
    if !(spec.beta > 0.0) {
        return Err(Error::InvalidArgument("discounting requires beta > 0".into()));
    }
    let horizon = StagedHorizon::uniform(k, h)?;
    let mut acc = CostAccumulator::new(spec, scaling, traj.dim()).without_terminal();
    traj.replay(&horizon, &mut acc);
    let (m_r, m_phi, _) = spec.bounds(bounds_box);
    let tail = (-spec.beta * h * k as f64).exp() * discounted_tail_constant(m_r, m_phi, h, spec.beta)?;
    Ok((acc.total, tail))
}

/// Smallest `k` with `λ^k M_J < tol`.
pub fn truncation_stages(m_j: f64, lambda: f64, tol: f64) -> usize {
    if m_j < tol {
        return 0;
    }
    ((tol / m_j).ln() / lambda.ln()).floor() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::model::ControlSet;
    use crate::odelimit::integrate_piecewise;
    use crate::policy::OpenLoopPolicy;

    fn bd_spec() -> CostSpec {
        builtin::document("birth_death_A1", 10).unwrap().cost
    }

    fn traj(events: &[(f64, i64)], x0: i64, controls: usize) -> Trajectory {
        Trajectory {
            initial: vec![x0],
            times: events.iter().map(|e| e.0).collect(),
            states: events.iter().map(|e| e.1).collect(),
            leap: vec![false; events.len()],
            end_time: 3.0,
            exact: true,
            controls: vec![0; controls],
            decisions: vec![Decision::fixed(0); controls],
        }
    }

    #[test]
    fn constant_path() {
        let h = StagedHorizon::uniform(3, 1.0).unwrap();
        let c = path_cost(&traj(&[], 12, 3), &bd_spec(), &h, 10);
        assert!((c - 0.6).abs() < 1e-12);
    }

    #[test]
    fn one_event_path() {
        let h = StagedHorizon::uniform(3, 1.0).unwrap();
        let c = path_cost(&traj(&[(2.0, 11)], 12, 3), &bd_spec(), &h, 10);
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chord_integrals() {
        let e = CostExpr::abs(1.0, vec![1.0], -1.0);
        // |z - 1| along 0.5 -> 1.5 over 2 time units: two triangles of area 0.25
        assert!((e.chord_integral(&[0.5], &[1.5], 2.0) - 0.5).abs() < 1e-15);
        assert!((e.chord_integral(&[1.5], &[2.5], 1.0) - 1.0).abs() < 1e-15);
        let q = CostExpr {
            constant: 0.0,
            terms: vec![(1.0, Term::Sq(Affine { coef: vec![1.0], offset: 0.0 }))],
        };
        assert!((q.chord_integral(&[0.0], &[1.0], 3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ode_cost_degenerate() {
        let m = builtin::birth_death_a1(10).unwrap();
        let zero = ControlSet::new(
            vec![crate::model::Control {
                name: "off".into(),
                rates: vec![0.0, 0.0],
            }],
            2,
        )
        .unwrap();
        let m = m.with_controls(zero).unwrap();
        let h = StagedHorizon::uniform(3, 1.0).unwrap();
        let p = integrate_piecewise(&m, &[0, 0, 0], &[1.2], &h, 1e-3).unwrap();
        let mut spec = bd_spec();
        spec.stage.truncate(1);
        spec.running.truncate(1);
        assert!((ode_cost(&p, &spec, &h) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ode_cost_matches_closed_form() {
        // exponential segments with kinks at z = 1, integrated analytically
        let m = builtin::birth_death_a2(100).unwrap();
        let spec = bd_spec();
        let h = StagedHorizon::uniform(3, 1.0).unwrap();
        let p = integrate_piecewise(&m, &[1, 0, 1], &[1.2], &h, 1e-3).unwrap();
        assert!((ode_cost(&p, &spec, &h) - 0.267506851585).abs() < 1e-6);
        let p2 = integrate_piecewise(&m, &[1, 0, 1], &[1.2], &h, 5e-4).unwrap();
        assert!((ode_cost(&p, &spec, &h) - ode_cost(&p2, &spec, &h)).abs() < 1e-8);
    }

    #[test]
    fn zero_rate_mc_has_zero_stderr() {
        let m = builtin::birth_death_a1(10).unwrap();
        let zero = ControlSet::new(
            vec![crate::model::Control {
                name: "off".into(),
                rates: vec![0.0, 0.0],
            }],
            2,
        )
        .unwrap();
        let m = m.with_controls(zero).unwrap();
        let mut spec = bd_spec();
        spec.stage.truncate(1);
        spec.running.truncate(1);
        let h = StagedHorizon::uniform(3, 1.0).unwrap();
        let e = mc_cost_estimate(
            &m,
            &OpenLoopPolicy::new(vec![0, 0, 0]),
            &spec,
            &h,
            &[1.2],
            10,
            StreamFamily::new(1, 1),
            &Method::Ssa,
        )
        .unwrap();
        assert_eq!(e.stderr, 0.0);
        assert!((e.mean - 0.6).abs() < 1e-12);
    }

    #[test]
    fn tail_bound_example() {
        let mj = discounted_tail_constant(1.0, 0.0, 1.0, 0.5).unwrap();
        let tail = (-0.5f64 * 10.0).exp() * mj;
        assert!((tail - 0.01712).abs() < 5e-6);
        assert!(discounted_tail_constant(1.0, 0.0, 1.0, 0.0).is_err());
        let k = truncation_stages(mj, (-0.5f64).exp(), 1e-6);
        assert!((-0.5 * k as f64).exp() * mj < 1e-6);
    }

    #[test]
    fn geometric_discounted_sum() {
        let spec = CostSpec::uniform(1, CostExpr::constant(1.0), CostExpr::zero(), CostExpr::zero())
            .with_beta(0.5);
        let t = traj(&[], 5, 10);
        let b = DensityBox::new(vec![0.0], vec![3.0]).unwrap();
        let (v, _) = discounted_path_cost(&t, &spec, 1.0, 10, 10, &b).unwrap();
        let lam = (-0.5f64).exp();
        assert!((v - (1.0 - lam.powi(10)) / (1.0 - lam)).abs() < 1e-12);
    }

    #[test]
    fn box_constants() {
        let spec = builtin::document("predator_prey", 10).unwrap().cost;
        let b = DensityBox::new(vec![0.0, 0.0], vec![3.0, 3.0]).unwrap();
        let (_, m_phi, _) = spec.bounds(&b);
        // vertex (0, 3): 6 + 1.5
        assert!((m_phi - 7.5).abs() < 1e-12);
        let (_, l_phi, _) = spec.lipschitz(&b);
        assert!((l_phi - (5f64.sqrt() + 1.0)).abs() < 1e-12);
    }
}
