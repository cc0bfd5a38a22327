//! Exact transient analysis of small truncated chains by uniformization.
//!
//! The generator is restricted to a box, with every transition leaving the
//! box redirected to an absorbing sink. Expected accumulated running costs
//! come from the augmented generator `[[Q, diag φ], [0, Q]]`, uniformized
//! with the same rate, so one pass yields both `P(X_t = y)` and
//! `E[∫₀ᵗ φ(X_s) ds · 1{X_t = y}]`.

use crate::cost::{CostExpr, CostSpec};
use crate::error::{Error, Result};
use crate::model::{JumpModel, StagedHorizon};
use crate::policy::OpenLoopPolicy;

use super::{TruncatedSpace, ValueTable};

/// Largest space handled by the oracle.
pub const ORACLE_STATE_CAP: usize = 50_000;

/// Sparse generator of one control on a box; index `len()` is the sink.
#[derive(Debug, Clone)]
pub struct Generator {
    pub space: TruncatedSpace,
    /// Outgoing `(target, rate)` per state.
    rows: Vec<Vec<(usize, f64)>>,
    /// Total outflow per state.
    out: Vec<f64>,
}

impl Generator {
    pub fn new(model: &JumpModel, control: usize, space: &TruncatedSpace) -> Result<Self> {
        if space.len() > ORACLE_STATE_CAP {
            return Err(Error::ResourceCap(format!(
                "{} states exceed the oracle cap {ORACLE_STATE_CAP}",
                space.len()
            )));
        }
        let sink = space.len();
        let mut rows = Vec::with_capacity(space.len());
        let mut out = Vec::with_capacity(space.len());
        let mut y = vec![0; space.dim()];
        for x in space.iter() {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (l, rate) in model.jump_rate_table(control, &x) {
                for i in 0..y.len() {
                    y[i] = x[i] + l[i];
                }
                let target = space.index_of(&y).unwrap_or(sink);
                match row.iter_mut().find(|(t, _)| *t == target) {
                    Some(e) => e.1 += rate,
                    None => row.push((target, rate)),
                }
            }
            out.push(row.iter().map(|e| e.1).sum());
            rows.push(row);
        }
        Ok(Self {
            space: space.clone(),
            rows,
            out,
        })
    }

    pub fn max_rate(&self) -> f64 {
        self.out.iter().copied().fold(0.0, f64::max)
    }
}

/// Transient law after time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transient {
    /// `P(X_t = y)` per box state.
    pub dist: Vec<f64>,
    /// Mass absorbed in the sink.
    pub sink: f64,
    /// `E[∫₀ᵗ φ(X_s) ds · 1{X_t = y}]` per box state (`φ = 0` in the sink).
    pub running: Vec<f64>,
    /// Running cost of paths that end in the sink.
    pub running_sink: f64,
}

impl Transient {
    pub fn running_total(&self) -> f64 {
        self.running.iter().sum::<f64>() + self.running_sink
    }

    pub fn mass(&self) -> f64 {
        self.dist.iter().sum::<f64>() + self.sink
    }
}

/// Exact transient distribution and running-cost expectation at `t`.
///
/// The Poisson series of the uniformized chain is summed until its tail is
/// below `1e-13`.
pub fn transient(gen: &Generator, scaling: u64, t: f64, initial: &[f64], phi: Option<&CostExpr>) -> Result<Transient> {
    let n = gen.space.len();
    if initial.len() != n {
        return Err(Error::InvalidArgument(format!(
            "initial distribution has {} entries, space has {n}",
            initial.len()
        )));
    }
    let inv_n = 1.0 / scaling as f64;
    let cost: Vec<f64> = match phi {
        Some(e) => gen
            .space
            .iter()
            .map(|x| e.eval(&x.iter().map(|&v| v as f64 * inv_n).collect::<Vec<_>>()))
            .collect(),
        None => vec![0.0; n],
    };
    let lam = gen.max_rate();
    if lam == 0.0 || t == 0.0 {
        return Ok(Transient {
            dist: initial.to_vec(),
            sink: 0.0,
            running: initial.iter().zip(&cost).map(|(p, c)| p * c * t).collect(),
            running_sink: 0.0,
        });
    }
    let lt = lam * t;
    let mut a = initial.to_vec();
    a.push(0.0);
    let mut b = vec![0.0; n + 1];
    let mut na = vec![0.0; n + 1];
    let mut nb = vec![0.0; n + 1];
    let mut pa = vec![0.0; n + 1];
    let mut pb = vec![0.0; n + 1];
    let mut log_w = -lt;
    let mut cum = 0.0;
    let max_terms = (lt + 40.0 * lt.sqrt() + 100.0).ceil() as usize;
    let mut k = 0usize;
    loop {
        let w = log_w.exp();
        cum += w;
        for i in 0..=n {
            pa[i] += w * a[i];
            pb[i] += w * b[i];
        }
        if (k as f64 > lt && 1.0 - cum < 1e-13) || k >= max_terms {
            break;
        }
        // one step of the uniformized augmented chain
        na.iter_mut().for_each(|v| *v = 0.0);
        nb.iter_mut().for_each(|v| *v = 0.0);
        na[n] = a[n];
        nb[n] = b[n];
        for x in 0..n {
            let stay = 1.0 - gen.out[x] / lam;
            na[x] += a[x] * stay;
            nb[x] += b[x] * stay + a[x] * cost[x] / lam;
            for &(y, r) in &gen.rows[x] {
                let p = r / lam;
                na[y] += a[x] * p;
                nb[y] += b[x] * p;
            }
        }
        std::mem::swap(&mut a, &mut na);
        std::mem::swap(&mut b, &mut nb);
        k += 1;
        log_w += lt.ln() - (k as f64).ln();
    }
    let sink = pa.pop().unwrap_or(0.0);
    let running_sink = pb.pop().unwrap_or(0.0);
    Ok(Transient {
        dist: pa,
        sink,
        running: pb,
        running_sink,
    })
}

/// [`transient`] for a freshly built generator.
pub fn uniformization_oracle(
    model: &JumpModel,
    control: usize,
    space: &TruncatedSpace,
    t: f64,
    initial: &[f64],
    phi: Option<&CostExpr>,
) -> Result<Transient> {
    let gen = Generator::new(model, control, space)?;
    transient(&gen, model.scaling(), t, initial, phi)
}

fn point_mass(space: &TruncatedSpace, x: &[i64]) -> Result<Vec<f64>> {
    let i = space
        .index_of(x)
        .ok_or_else(|| Error::InvalidArgument(format!("state {x:?} outside the oracle box")))?;
    let mut p = vec![0.0; space.len()];
    p[i] = 1.0;
    Ok(p)
}

/// Exact open-loop cost from `x0`, propagating the law stage by stage on
/// the box `wide` (chosen large enough that the sink mass is negligible).
/// Returns the cost and the total sink mass.
pub fn exact_open_loop_cost(
    model: &JumpModel,
    horizon: &StagedHorizon,
    spec: &CostSpec,
    policy: &OpenLoopPolicy,
    x0: &[i64],
    wide: &TruncatedSpace,
) -> Result<(f64, f64)> {
    let mut p = point_mass(wide, x0)?;
    let dens: Vec<Vec<f64>> = wide.iter().map(|x| model.density(&x)).collect();
    let mut total = 0.0;
    for (j, &c) in policy.controls().iter().enumerate() {
        let w = (-spec.beta * horizon.start_of(j)).exp();
        let r = spec.r(c);
        total += w * p.iter().zip(&dens).map(|(q, z)| q * r.eval(z)).sum::<f64>();
        let tr = uniformization_oracle(model, c, wide, horizon.width(j), &p, Some(spec.phi(c)))?;
        total += w * tr.running_total();
        p = tr.dist;
    }
    let w = (-spec.beta * horizon.end()).exp();
    total += w * p.iter().zip(&dens).map(|(q, z)| q * spec.psi().eval(z)).sum::<f64>();
    Ok((total, 1.0 - p.iter().sum::<f64>()))
}

/// One-stage kernel from every state of `cut`, computed on `wide`:
/// `prob[x][y] = P(X_h = y)` and `cost[x][y] = E[∫φ · 1{X_h = y}]` for
/// `y ∈ cut`.
struct CutKernel {
    prob: Vec<Vec<f64>>,
    cost: Vec<Vec<f64>>,
}

fn cut_kernel(
    model: &JumpModel,
    control: usize,
    phi: &CostExpr,
    h: f64,
    cut: &TruncatedSpace,
    wide: &TruncatedSpace,
) -> Result<CutKernel> {
    let gen = Generator::new(model, control, wide)?;
    let map: Vec<usize> = cut
        .iter()
        .map(|y| {
            wide.index_of(&y)
                .ok_or_else(|| Error::InvalidArgument("oracle box must contain the truncated space".into()))
        })
        .collect::<Result<_>>()?;
    let mut prob = Vec::with_capacity(cut.len());
    let mut cost = Vec::with_capacity(cut.len());
    for x in cut.iter() {
        let tr = transient(&gen, model.scaling(), h, &point_mass(wide, &x)?, Some(phi))?;
        prob.push(map.iter().map(|&i| tr.dist[i]).collect());
        cost.push(map.iter().map(|&i| tr.running[i]).collect());
    }
    Ok(CutKernel { prob, cost })
}

/// Exact counterpart of the Monte-Carlo DP: paths are conditioned on
/// ending in `cut`, as with rejection sampling, and the unconditioned
/// process is represented on the larger box `wide`.
pub fn exact_feedback_dp(
    model: &JumpModel,
    horizon: &StagedHorizon,
    spec: &CostSpec,
    cut: &TruncatedSpace,
    wide: &TruncatedSpace,
) -> Result<ValueTable> {
    let k_end = horizon.stages();
    let a = model.control_count();
    let mut values = vec![Vec::new(); k_end + 1];
    let mut argmin = vec![Vec::new(); k_end];
    values[k_end] = super::terminal_values(model, horizon, spec, cut);
    let mut cache: Vec<(u64, usize, CutKernel)> = Vec::new();
    for k in (0..k_end).rev() {
        let h = horizon.width(k);
        for c in 0..a {
            if !cache.iter().any(|(b, cc, _)| *b == h.to_bits() && *cc == c) {
                let ker = cut_kernel(model, c, spec.phi(c), h, cut, wide)?;
                cache.push((h.to_bits(), c, ker));
            }
        }
        let w = (-spec.beta * horizon.start_of(k)).exp();
        let next = &values[k + 1];
        let mut vk = Vec::with_capacity(cut.len());
        let mut ak = Vec::with_capacity(cut.len());
        for (i, x) in cut.iter().enumerate() {
            let z = model.density(&x);
            let mut best = (f64::INFINITY, 0);
            for c in 0..a {
                let ker = &cache
                    .iter()
                    .find(|(b, cc, _)| *b == h.to_bits() && *cc == c)
                    .expect("kernel cached")
                    .2;
                let mass: f64 = ker.prob[i].iter().sum();
                if mass <= 0.0 {
                    continue;
                }
                let run: f64 = ker.cost[i].iter().sum();
                let cont: f64 = ker.prob[i].iter().zip(next).map(|(p, u)| p * u).sum();
                let q = w * spec.r(c).eval(&z) + w * run / mass + cont / mass;
                if q < best.0 {
                    best = (q, c);
                }
            }
            vk.push(best.0);
            ak.push(best.1);
        }
        values[k] = vk;
        argmin[k] = ak;
    }
    Ok(ValueTable {
        space: cut.clone(),
        stderr: vec![vec![0.0; cut.len()]; k_end + 1],
        values,
        argmin,
    })
}

/// Exact discounted value iteration on `cut` with the conditioned
/// one-stage kernel. Returns values and minimizing controls.
pub fn exact_discounted_vi(
    model: &JumpModel,
    spec: &CostSpec,
    h: f64,
    cut: &TruncatedSpace,
    wide: &TruncatedSpace,
    tol: f64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let lambda = (-spec.beta * h).exp();
    if lambda >= 1.0 {
        return Err(Error::InvalidArgument("value iteration needs β > 0".into()));
    }
    let a = model.control_count();
    let kernels: Vec<CutKernel> = (0..a)
        .map(|c| cut_kernel(model, c, spec.phi(c), h, cut, wide))
        .collect::<Result<_>>()?;
    // (stage cost, normalized transition row) per (state, control)
    let mut base = vec![f64::INFINITY; cut.len() * a];
    let mut rows = vec![Vec::new(); cut.len() * a];
    for (i, x) in cut.iter().enumerate() {
        let z = model.density(&x);
        for (c, ker) in kernels.iter().enumerate() {
            let mass: f64 = ker.prob[i].iter().sum();
            if mass > 0.0 {
                base[i * a + c] = spec.r(c).eval(&z) + ker.cost[i].iter().sum::<f64>() / mass;
                rows[i * a + c] = ker.prob[i].iter().map(|p| p / mass).collect();
            }
        }
    }
    let q = |u: &[f64], i: usize, c: usize| -> f64 {
        let row: &Vec<f64> = &rows[i * a + c];
        if row.is_empty() {
            return f64::INFINITY;
        }
        base[i * a + c] + lambda * row.iter().zip(u).map(|(p, v)| p * v).sum::<f64>()
    };
    let mut u = vec![0.0; cut.len()];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..cut.len())
            .map(|i| (0..a).map(|c| q(&u, i, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let change = next.iter().zip(&u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        u = next;
        if change < tol {
            let ctl = (0..cut.len())
                .map(|i| {
                    let mut best = 0;
                    for c in 1..a {
                        if q(&u, i, c) < q(&u, i, best) {
                            best = c;
                        }
                    }
                    best
                })
                .collect();
            return Ok((u, ctl));
        }
    }
    Err(Error::NonConvergence {
        sweeps: 100_000,
        last_change: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    #[test]
    fn zero_time_is_identity() {
        let m = builtin::birth_death_a1(10).unwrap();
        let s = TruncatedSpace::new(vec![0], vec![40]).unwrap();
        let mut p = vec![0.0; s.len()];
        p[12] = 1.0;
        let tr = uniformization_oracle(&m, 0, &s, 0.0, &p, None).unwrap();
        assert_eq!(tr.dist, p);
    }

    #[test]
    fn pure_birth_matches_poisson() {
        // 0 -> A at rate N over t = 1 is Poisson(N)
        let m = builtin::document("poisson", 50).unwrap().model;
        let s = TruncatedSpace::new(vec![0], vec![50 + 8 * 8]).unwrap();
        let mut p = vec![0.0; s.len()];
        p[0] = 1.0;
        let tr = uniformization_oracle(&m, 0, &s, 1.0, &p, None).unwrap();
        let mut tv = 0.0;
        let mut log_pmf = -50.0f64;
        for k in 0..s.len() {
            if k > 0 {
                log_pmf += 50f64.ln() - (k as f64).ln();
            }
            tv += (tr.dist[k] - log_pmf.exp()).abs();
        }
        assert!(0.5 * tv < 1e-6, "tv = {tv}");
    }

    #[test]
    fn mass_is_conserved_with_sink() {
        let m = builtin::birth_death_a1(10).unwrap();
        let s = TruncatedSpace::new(vec![2], vec![25]).unwrap();
        let mut p = vec![0.0; s.len()];
        p[10] = 1.0;
        let tr = uniformization_oracle(&m, 1, &s, 2.0, &p, None).unwrap();
        assert!(tr.sink > 0.0);
        assert!((tr.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn running_cost_of_a_frozen_chain() {
        // with no births or deaths, ∫φ = t·φ(x0)
        let m = builtin::birth_death_a1(10).unwrap();
        let s = TruncatedSpace::new(vec![0], vec![0]).unwrap();
        let phi = CostExpr::abs(1.0, vec![1.0], -1.0);
        let tr = uniformization_oracle(&m, 0, &s, 2.0, &[1.0], Some(&phi)).unwrap();
        assert!((tr.running_total() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn open_loop_cost_matches_closed_form_for_linear_cost() {
        // E[z(t)] = z0 e^{(b-d)t}, so ∫E[z] is explicit when φ = z
        let mut doc = builtin::document("birth_death_A1", 10).unwrap();
        doc.cost.running = vec![CostExpr::abs(1.0, vec![1.0], 0.0); 2];
        let wide = TruncatedSpace::new(vec![0], vec![600]).unwrap();
        let p = OpenLoopPolicy::new(vec![0, 0, 0]);
        let (c, sink) = exact_open_loop_cost(&doc.model, &doc.horizon, &doc.cost, &p, &[12], &wide).unwrap();
        let g: f64 = 0.4;
        let exact = 1.2 * ((g * 3.0).exp() - 1.0) / g;
        assert!(sink < 1e-10, "sink {sink}");
        assert!((c - exact).abs() < 1e-8, "{c} vs {exact}");
    }
}
