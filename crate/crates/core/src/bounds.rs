//! Constants of the pathwise and cost approximation bounds, and empirical
//! checks of those bounds.
//!
//! All suprema are taken over a density box `Ω`. The catalogue rates are
//! polynomials with non-negative coefficients, so rate sums are largest at
//! the upper vertex, and the limit Jacobians are affine in `z`, so their
//! spectral norm (a convex function) is largest at a vertex.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostSpec;
use crate::error::{Error, Result};
use crate::model::{DensityBox, JumpModel, PropensityForm, StagedHorizon};
use crate::odelimit::{integrate_piecewise, jacobian, OdePath};
use crate::policy::{Decision, OpenLoopPolicy};
use crate::rng::{tag, StreamFamily};
use crate::simulate::{initial_state, run_path, Method, PathObserver, Workspace};
use crate::stats::{slope, Estimate};

/// Constants of the standing assumptions on a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub alpha: f64,
    /// `M_α = sup Σ |l|^α η(z, l)`, so that `M_{N,α} ≤ N^{1-α} M_α`.
    pub m_alpha: f64,
    /// `ω_N = omega_coeff / N`.
    pub omega_coeff: f64,
    pub l_f: f64,
    pub l_r: f64,
    pub l_phi: f64,
    pub l_psi: f64,
    pub m_r: f64,
    pub m_phi: f64,
    pub m_psi: f64,
    /// Tube radius, when a tube has been measured.
    pub gamma: Option<f64>,
    pub domain: DensityBox,
}

impl AssumptionConstants {
    /// `M_{N,α}`; exact for density-dependent rates and an upper bound
    /// when `binary_self` reactions are present.
    pub fn m_n_alpha(&self, n: u64) -> f64 {
        (n as f64).powf(1.0 - self.alpha) * self.m_alpha
    }

    pub fn omega_n(&self, n: u64) -> f64 {
        self.omega_coeff / n as f64
    }

    /// `M̄ = 6 γ⁻¹ (K M_r + T M_φ + M_ψ)`.
    pub fn m_bar(&self, horizon: &StagedHorizon) -> Result<f64> {
        let g = self
            .gamma
            .ok_or_else(|| Error::InvalidArgument("tube radius γ has not been set".into()))?;
        Ok(6.0 / g * (horizon.stages() as f64 * self.m_r + horizon.end() * self.m_phi + self.m_psi))
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }
}

/// Rate per unit `N` in the limit, at density `z`.
fn limit_rate(form: &PropensityForm, kappa: f64, z: &[f64]) -> f64 {
    form.limit_rate(kappa, z)
}

/// Assumption constants of `model` and `spec` on `domain`.
pub fn derive_constants(
    model: &JumpModel,
    spec: &CostSpec,
    domain: &DensityBox,
    alpha: f64,
) -> Result<AssumptionConstants> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::InvalidArgument(format!("α = {alpha} is outside (1, 2]")));
    }
    if domain.dim() != model.species_count() {
        return Err(Error::InvalidArgument("box dimension differs from the species count".into()));
    }
    if domain.low.iter().chain(&domain.high).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("the box must be bounded".into()));
    }
    if domain.low.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument("the box must lie in the non-negative orthant".into()));
    }
    let vertices = domain.vertices();
    let mut m_alpha: f64 = 0.0;
    let mut omega: f64 = 0.0;
    let mut l_f: f64 = 0.0;
    for c in 0..model.control_count() {
        for v in &vertices {
            let mut moment = 0.0;
            let mut drift_gap = 0.0;
            for (k, r) in model.reactions().iter().enumerate() {
                let kappa = model.rate_constant(c, k);
                let norm2: f64 = r.jump.iter().map(|&d| (d * d) as f64).sum();
                moment += norm2.powf(alpha / 2.0) * limit_rate(&r.form, kappa, v);
                if let PropensityForm::BinarySelf(i) = r.form {
                    // N λ/N² · x(x-1) differs from κ z² by κ z / N
                    drift_gap += norm2.sqrt() * kappa * v[i];
                }
            }
            m_alpha = m_alpha.max(moment);
            omega = omega.max(drift_gap);
            let j = jacobian(model, c, v);
            l_f = l_f.max(j.svd(false, false).singular_values.max());
        }
    }
    let (m_r, m_phi, m_psi) = spec.bounds(domain);
    let (l_r, l_phi, l_psi) = spec.lipschitz(domain);
    Ok(AssumptionConstants {
        alpha,
        m_alpha,
        omega_coeff: omega,
        l_f,
        l_r,
        l_phi,
        l_psi,
        m_r,
        m_phi,
        m_psi,
        gamma: None,
        domain: domain.clone(),
    })
}

/// Half the smallest distance between the limit paths of `policies` and
/// the boundary of the box.
pub fn tube_gamma(
    model: &JumpModel,
    horizon: &StagedHorizon,
    z0: &[f64],
    domain: &DensityBox,
    policies: &[OpenLoopPolicy],
    dt: f64,
) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for p in policies {
        let path = integrate_piecewise(model, p.controls(), z0, horizon, dt)?;
        for (k, st) in path.stages.iter().enumerate() {
            for i in 0..st.len() {
                let z = path.state(k, i);
                for d in 0..z.len() {
                    margin = margin.min(z[d] - domain.low[d]).min(domain.high[d] - z[d]);
                }
            }
        }
    }
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "limit paths leave the box (margin {margin})"
        )));
    }
    Ok(0.5 * margin)
}

/// `C_{T,N} = T ω_N + α/(2(α-1)) (4 T M_{N,α} / (α-1))^{1/α}`.
pub fn c_tn(consts: &AssumptionConstants, t: f64, n: u64) -> f64 {
    let a = consts.alpha;
    t * consts.omega_n(n) + a / (2.0 * (a - 1.0)) * (4.0 * t * consts.m_n_alpha(n) / (a - 1.0)).powf(1.0 / a)
}

/// The `α`-term of `C_{T,N}` alone, used by the exit-probability bound.
fn c_tn_moment(consts: &AssumptionConstants, t: f64, n: u64) -> f64 {
    c_tn(consts, t, n) - t * consts.omega_n(n)
}

/// Value-function error coefficients `a_k`, `b_k` for `k = 0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Inputs of the `a_k`, `b_k` recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionInputs {
    pub l_f: f64,
    pub l_r: f64,
    pub l_phi: f64,
    pub l_psi: f64,
    pub m_bar: f64,
    pub c_hn: f64,
}

impl RecursionInputs {
    pub fn from_constants(consts: &AssumptionConstants, horizon: &StagedHorizon, n: u64) -> Result<Self> {
        Ok(Self {
            l_f: consts.l_f,
            l_r: consts.l_r,
            l_phi: consts.l_phi,
            l_psi: consts.l_psi,
            m_bar: consts.m_bar(horizon)?,
            c_hn: c_tn(consts, horizon.max_width(), n),
        })
    }
}

/// Backward recursion from `a_K = L_ψ`, `b_K = 0`, with `h` the largest
/// stage width.
pub fn ak_bk(p: &RecursionInputs, horizon: &StagedHorizon) -> ErrorCoefficients {
    let k_end = horizon.stages();
    let h = horizon.max_width();
    let q = (p.l_f * h).exp();
    let mut a = vec![0.0; k_end + 1];
    let mut b = vec![0.0; k_end + 1];
    a[k_end] = p.l_psi;
    for k in (0..k_end).rev() {
        a[k] = p.l_r + p.l_phi * q * h + p.m_bar * q + a[k + 1] * q;
        b[k] = p.l_phi * p.c_hn * q * horizon.width(k) + 2.0 * p.m_bar * p.c_hn * q + a[k + 1] * p.c_hn * q + b[k + 1];
    }
    ErrorCoefficients { a, b }
}

/// Explicit form of the recursion for uniform stages, with the `L_F → 0`
/// limits of the geometric factors.
pub fn ak_bk_closed(p: &RecursionInputs, horizon: &StagedHorizon) -> ErrorCoefficients {
    let k_end = horizon.stages();
    let h = horizon.max_width();
    let x = p.l_f * h;
    let q = x.exp();
    let big_a = p.l_r + p.l_phi * q * h + p.m_bar * q;
    let mut a = vec![0.0; k_end + 1];
    let mut b = vec![0.0; k_end + 1];
    for k in 0..=k_end {
        let m = (k_end - k) as f64;
        // g1 = (q^m - 1)/(q - 1), g2 = (g1 - m)/(q - 1)
        let (g1, g2) = if x == 0.0 {
            (m, m * (m - 1.0) / 2.0)
        } else {
            let d = x.exp_m1();
            let g1 = (m * x).exp_m1() / d;
            (g1, (g1 - m) / d)
        };
        a[k] = big_a * g1 + p.l_psi * (m * x).exp();
        let t_left = horizon.end() - horizon.start_of(k);
        b[k] = p.c_hn * q * (p.l_phi * t_left + big_a * g2 + p.l_psi * g1 + 2.0 * p.m_bar * m);
    }
    ErrorCoefficients { a, b }
}

/// Cost approximation bound
/// `(|z_N − z0| + C_{T,N}) [L_φ (e^{L_F T} − 1)/L_F + (K L_r + L_ψ + M̄) e^{L_F T}]`.
pub fn cost_bound(consts: &AssumptionConstants, horizon: &StagedHorizon, n: u64, initial_error: f64) -> Result<f64> {
    let t = horizon.end();
    let growth = if consts.l_f == 0.0 {
        t
    } else {
        (consts.l_f * t).exp_m1() / consts.l_f
    };
    let k = horizon.stages() as f64;
    let bracket = consts.l_phi * growth + (k * consts.l_r + consts.l_psi + consts.m_bar(horizon)?) * (consts.l_f * t).exp();
    Ok((initial_error + c_tn(consts, t, n)) * bracket)
}

/// Pathwise sup error against the limit, evaluated at every jump time
/// (both sides), every stage boundary and `T`, up to the first exit from
/// the box.
struct SupError<'a> {
    ode: &'a OdePath,
    domain: &'a DensityBox,
    inv_n: f64,
    sup: f64,
    exited: bool,
    cursor: (usize, usize),
    z: Vec<f64>,
    zt: Vec<f64>,
}

impl SupError<'_> {
    /// `z̃(t)` for non-decreasing `t`.
    fn limit_at(&mut self, t: f64) {
        let stages = &self.ode.stages;
        let (mut k, mut i) = self.cursor;
        while k + 1 < stages.len() && stages[k + 1].times[0] <= t {
            k += 1;
            i = 0;
        }
        let st = &stages[k];
        let last = st.len() - 1;
        while i + 1 < last && st.times[i + 1] <= t {
            i += 1;
        }
        self.cursor = (k, i);
        if t >= st.times[last] {
            self.zt.copy_from_slice(self.ode.state(k, last));
        } else {
            let theta = (t - st.times[i]) / (st.times[i + 1] - st.times[i]);
            self.ode.hermite(k, i, theta.clamp(0.0, 1.0), &mut self.zt);
        }
    }

    fn check(&mut self, t: f64, x: &[i64]) {
        if self.exited {
            return;
        }
        for (z, &v) in self.z.iter_mut().zip(x) {
            *z = v as f64 * self.inv_n;
        }
        self.limit_at(t);
        let d: f64 = self
            .z
            .iter()
            .zip(&self.zt)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        self.sup = self.sup.max(d);
        if !self.domain.contains(&self.z) {
            self.exited = true;
        }
    }
}

impl PathObserver for SupError<'_> {
    fn stage_start(&mut self, _stage: usize, t: f64, state: &[i64], _d: Decision) {
        self.check(t, state);
    }
    fn hold(&mut self, _t0: f64, t1: f64, state: &[i64]) {
        self.check(t1, state);
    }
    fn jump(&mut self, t: f64, state: &[i64]) {
        self.check(t, state);
    }
    fn finish(&mut self, _stage: usize, t: f64, state: &[i64]) {
        self.check(t, state);
    }
}

/// One system size of a pathwise-bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtzRow {
    pub n: u64,
    pub c_tn: f64,
    /// `E[sup_{s ≤ T ∧ τ} |z^N(s) − z̃(s)|]`.
    pub empirical: Estimate,
    /// `(|z_N(0) − z0| + C_{T,N}) e^{L_F T}`.
    pub bound: f64,
    /// Fraction of paths leaving the box before `T`.
    pub exit_fraction: f64,
    /// Exit-probability bound with `ρ = γ e^{-L_F T}/3`, when `γ` is known.
    pub exit_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtzReport {
    pub rows: Vec<KurtzRow>,
    /// Least-squares slope of `log E[sup]` against `log N`.
    pub slope: f64,
}

impl KurtzReport {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.empirical.mean <= r.bound)
    }

    /// `N,C_TN,empirical_sup_err,bound,slope_window`, where the window
    /// slope joins each row to the previous one.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,C_TN,empirical_sup_err,bound,slope_window\n");
        for (i, r) in self.rows.iter().enumerate() {
            let w = if i == 0 {
                String::new()
            } else {
                let p = &self.rows[i - 1];
                let sl = (r.empirical.mean.ln() - p.empirical.mean.ln()) / ((r.n as f64).ln() - (p.n as f64).ln());
                format!("{sl}")
            };
            s.push_str(&format!("{},{},{},{},{}\n", r.n, r.c_tn, r.empirical.mean, r.bound, w));
        }
        s
    }
}

/// Compares exact paths with the limit for each `N` in `sizes`.
///
/// `model` is rescaled to every size; the constants must have been derived
/// on the box used to stop the paths.
#[allow(clippy::too_many_arguments)]
pub fn verify_kurtz(
    model: &JumpModel,
    horizon: &StagedHorizon,
    policy: &OpenLoopPolicy,
    z0: &[f64],
    consts: &AssumptionConstants,
    sizes: &[u64],
    paths: usize,
    seed: u64,
) -> Result<KurtzReport> {
    if paths < 2 {
        return Err(Error::InvalidArgument("at least two paths are required".into()));
    }
    let t_end = horizon.end();
    let dt = (horizon.max_width() / 2000.0).min(1e-3);
    let ode = integrate_piecewise(model, policy.controls(), z0, horizon, dt)?;
    let fam = StreamFamily::new(seed, tag::BOUNDS);
    let mut rows = Vec::with_capacity(sizes.len());
    for (si, &n) in sizes.iter().enumerate() {
        let m = model.with_scaling(n)?;
        let x0 = initial_state(&m, z0)?;
        let init_err: f64 = x0
            .iter()
            .zip(z0)
            .map(|(&x, z)| (x as f64 / n as f64 - z).powi(2))
            .sum::<f64>()
            .sqrt();
        let streams = fam.child(si as u64);
        let out: Vec<(f64, bool)> = (0..paths as u64)
            .into_par_iter()
            .map_init(
                || Workspace::new(&m),
                |ws, i| {
                    let mut obs = SupError {
                        ode: &ode,
                        domain: &consts.domain,
                        inv_n: 1.0 / n as f64,
                        sup: 0.0,
                        exited: false,
                        cursor: (0, 0),
                        z: vec![0.0; x0.len()],
                        zt: vec![0.0; x0.len()],
                    };
                    run_path(&m, horizon, &Method::Ssa, &x0, policy, &mut streams.rng(i), ws, &mut obs)?;
                    Ok((obs.sup, obs.exited))
                },
            )
            .collect::<Result<_>>()?;
        let sups: Vec<f64> = out.iter().map(|o| o.0).collect();
        let exit_fraction = out.iter().filter(|o| o.1).count() as f64 / paths as f64;
        let c = c_tn(consts, t_end, n);
        let exit_bound = consts.gamma.map(|g| {
            let rho = g * (-consts.l_f * t_end).exp() / 3.0;
            (init_err + c_tn_moment(consts, t_end, n)) / rho
        });
        rows.push(KurtzRow {
            n,
            c_tn: c,
            empirical: Estimate::from_samples(&sups),
            bound: (init_err + c) * (consts.l_f * t_end).exp(),
            exit_fraction,
            exit_bound,
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.empirical.mean.ln()).collect();
    let slope = if rows.len() >= 2 { slope(&lx, &ly) } else { f64::NAN };
    Ok(KurtzReport { rows, slope })
}

/// Accumulates `∫ F^{ν,N}(z(s)) ds` along an exact path.
struct DriftIntegral<'a> {
    model: &'a JumpModel,
    control: usize,
    integral: Vec<f64>,
    buf: Vec<f64>,
}

impl PathObserver for DriftIntegral<'_> {
    fn stage_start(&mut self, _stage: usize, _t: f64, _state: &[i64], d: Decision) {
        self.control = d.control;
    }
    fn hold(&mut self, t0: f64, t1: f64, state: &[i64]) {
        if t1 > t0 {
            self.model.finite_drift(self.control, state, &mut self.buf);
            for (a, f) in self.integral.iter_mut().zip(&self.buf) {
                *a += f * (t1 - t0);
            }
        }
    }
}

/// Mean and standard error of each component of the martingale
/// `w(T) = z(T) − z(0) − ∫₀ᵀ F^{ν,N}(z(s)) ds` over exact paths.
pub fn verify_martingale(
    model: &JumpModel,
    horizon: &StagedHorizon,
    policy: &OpenLoopPolicy,
    z0: &[f64],
    paths: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    if paths < 2 {
        return Err(Error::InvalidArgument("at least two paths are required".into()));
    }
    let x0 = initial_state(model, z0)?;
    let n = model.species_count();
    let inv_n = 1.0 / model.scaling() as f64;
    let streams = StreamFamily::new(seed, tag::BOUNDS).child(u64::MAX);
    let ws: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map_init(
            || Workspace::new(model),
            |wsp, i| {
                let mut obs = DriftIntegral {
                    model,
                    control: 0,
                    integral: vec![0.0; n],
                    buf: vec![0.0; n],
                };
                let end = run_path(model, horizon, &Method::Ssa, &x0, policy, &mut streams.rng(i), wsp, &mut obs)?;
                Ok((0..n)
                    .map(|d| (end[d] - x0[d]) as f64 * inv_n - obs.integral[d])
                    .collect())
            },
        )
        .collect::<Result<_>>()?;
    Ok((0..n)
        .map(|d| Estimate::from_samples(&ws.iter().map(|w| w[d]).collect::<Vec<_>>()))
        .collect())
}

/// Both sides of `0 ≤ φ(z+w) − φ(w) − z·∇φ(w) ≤ 4/(α−1) φ(z/2)` for
/// `φ(z) = |z|^α`, with `∇φ(0) = 0`. Returns `(middle, upper bound)`.
pub fn bregman_power_check(z: &[f64], w: &[f64], alpha: f64) -> (f64, f64) {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let phi = |v: &[f64]| norm(v).powf(alpha);
    let zw: Vec<f64> = z.iter().zip(w).map(|(a, b)| a + b).collect();
    let nw = norm(w);
    let grad_dot = if nw == 0.0 {
        0.0
    } else {
        alpha * nw.powf(alpha - 2.0) * z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    };
    let middle = phi(&zw) - phi(w) - grad_dot;
    let half: Vec<f64> = z.iter().map(|v| v / 2.0).collect();
    (middle, 4.0 / (alpha - 1.0) * phi(&half))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    fn a1_constants() -> (JumpModel, AssumptionConstants) {
        let doc = builtin::document("birth_death_A1", 100).unwrap();
        let omega = DensityBox::new(vec![0.0], vec![3.0]).unwrap();
        let c = derive_constants(&doc.model, &doc.cost, &omega, 2.0).unwrap();
        (doc.model, c)
    }

    #[test]
    fn birth_death_constants() {
        let (_, c) = a1_constants();
        assert!((c.m_alpha - 5.4).abs() < 1e-12);
        assert!((c.l_f - 0.4).abs() < 1e-12);
        assert_eq!(c.omega_coeff, 0.0);
        assert!((c.m_n_alpha(100) - 0.054).abs() < 1e-15);
        // φ = |z - 1| on (0, 3)
        assert_eq!((c.l_phi, c.m_phi), (1.0, 2.0));
    }

    #[test]
    fn moment_supremum_matches_grid() {
        let doc = builtin::document("predator_prey", 100).unwrap();
        let omega = DensityBox::new(vec![0.0, 0.0], vec![5.0, 5.0]).unwrap();
        let c = derive_constants(&doc.model, &doc.cost, &omega, 1.5).unwrap();
        let mut best: f64 = 0.0;
        for ctl in 0..3 {
            for i in 0..=50 {
                for j in 0..=50 {
                    let z = [i as f64 * 0.1, j as f64 * 0.1];
                    let mut s = 0.0;
                    for (k, r) in doc.model.reactions().iter().enumerate() {
                        let n2: f64 = r.jump.iter().map(|&d| (d * d) as f64).sum();
                        s += n2.powf(0.75) * r.form.limit_rate(doc.model.rate_constant(ctl, k), &z);
                    }
                    best = best.max(s);
                }
            }
        }
        assert!((c.m_alpha - best).abs() < 1e-9 * best);
    }

    #[test]
    fn binary_self_has_a_drift_gap() {
        let text = "model dimer\nscaling N = 10\nspecies A\nreaction d: 2 A -> 0   binary_self(A)\ncontrols:\n  c: d = 2.0\nstages: t = [0, 1]\n";
        let doc = crate::model::parse_model(text).unwrap();
        let omega = DensityBox::new(vec![0.0], vec![3.0]).unwrap();
        let c = derive_constants(&doc.model, &doc.cost, &omega, 2.0).unwrap();
        // |l| κ z at z = 3
        assert!((c.omega_coeff - 2.0 * 2.0 * 3.0).abs() < 1e-12);
        assert!((c.omega_n(10) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn c_tn_values() {
        let (_, c) = a1_constants();
        assert!((c_tn(&c, 3.0, 100) - 0.8050).abs() < 5e-5);
        assert!((c_tn(&c, 3.0, 400) - 0.5 * c_tn(&c, 3.0, 100)).abs() < 1e-12);
        let mut z = c.clone();
        z.m_alpha = 0.0;
        assert_eq!(c_tn(&z, 3.0, 100), 0.0);
        let mut prev = f64::INFINITY;
        for n in [10, 40, 100, 500, 4000] {
            let v = c_tn(&c, 3.0, n);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn recursion_terminal_and_zero_lipschitz_limit() {
        let h = StagedHorizon::uniform(4, 0.5).unwrap();
        let p = RecursionInputs {
            l_f: 0.0,
            l_r: 0.3,
            l_phi: 1.1,
            l_psi: 0.7,
            m_bar: 2.0,
            c_hn: 0.05,
        };
        let r = ak_bk(&p, &h);
        let c = ak_bk_closed(&p, &h);
        assert_eq!((r.a[4], r.b[4]), (0.7, 0.0));
        for k in 0..=4 {
            assert!((r.a[k] - c.a[k]).abs() <= 1e-12 * r.a[k].abs().max(1.0));
            assert!((r.b[k] - c.b[k]).abs() <= 1e-12 * r.b[k].abs().max(1.0));
        }
    }

    #[test]
    fn bregman_power_equality_at_two() {
        let (m, b) = bregman_power_check(&[0.3, -1.2, 2.0], &[1.0, 0.5, -0.25], 2.0);
        assert!((m - b).abs() < 1e-12);
        assert!((m - (0.09 + 1.44 + 4.0)).abs() < 1e-12);
        assert_eq!(bregman_power_check(&[0.0; 3], &[1.0, 2.0, 3.0], 1.5), (0.0, 0.0));
    }

    #[test]
    fn tube_radius() {
        let doc = builtin::document("birth_death_A1", 100).unwrap();
        let wide = DensityBox::new(vec![0.0], vec![6.0]).unwrap();
        let all: Vec<OpenLoopPolicy> = crate::openloop::enumerate_policies(2, 3, 100).unwrap().collect();
        let g = tube_gamma(&doc.model, &doc.horizon, &[1.2], &wide, &all, 1e-3).unwrap();
        // lowest path: (1,1,1) decays to 1.2 e^{-0.6}; highest: 1.2 e^{1.2}
        let expect = 0.5 * (1.2 * (-0.6f64).exp()).min(6.0 - 1.2 * 1.2f64.exp());
        assert!((g - expect).abs() < 1e-6);
        let narrow = DensityBox::new(vec![0.0], vec![3.0]).unwrap();
        assert!(tube_gamma(&doc.model, &doc.horizon, &[1.2], &narrow, &all, 1e-3).is_err());
    }

    #[test]
    fn zero_rate_martingale_vanishes() {
        let doc = builtin::document("birth_death_A1", 50).unwrap();
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
        let w = verify_martingale(&zero, &doc.horizon, &OpenLoopPolicy::new(vec![0, 0, 0]), &[1.2], 10, 1).unwrap();
        assert_eq!((w[0].mean, w[0].stderr), (0.0, 0.0));
    }

    #[test]
    fn poisson_bound_holds() {
        let doc = builtin::document("poisson", 100).unwrap();
        let omega = DensityBox::new(vec![0.0], vec![3.0]).unwrap();
        let c = derive_constants(&doc.model, &doc.cost, &omega, 2.0).unwrap();
        let rep = verify_kurtz(&doc.model, &doc.horizon, &OpenLoopPolicy::new(vec![0]), &[0.0], &c, &[100], 2000, 3).unwrap();
        let r = &rep.rows[0];
        assert!((r.bound - 0.2).abs() < 1e-12);
        assert!(r.empirical.mean < r.bound);
        // Brownian limit: E sup |B| on [0, 1] is (π/2)^{1/2}
        assert!((r.empirical.mean - 0.1 * (std::f64::consts::PI / 2.0).sqrt()).abs() < 0.015, "{:?}", r.empirical);
    }
}
