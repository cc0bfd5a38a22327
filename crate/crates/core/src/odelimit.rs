//! Limit vector fields and the piecewise-controlled limit ODE.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JumpModel, PropensityForm, StagedHorizon};

/// Default RK4 step.
pub const DEFAULT_DT: f64 = 1e-3;

/// `F^ν(z) = Σ_k l_k ρ_k(z)` with the large-`N` reaction rates `ρ_k`.
pub fn vector_field(model: &JumpModel, control: usize, z: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, r) in model.reactions().iter().enumerate() {
        let rate = r.form.limit_rate(model.rate_constant(control, k), z);
        if rate != 0.0 {
            for (o, &d) in out.iter_mut().zip(&r.jump) {
                *o += d as f64 * rate;
            }
        }
    }
}

/// Jacobian `∂F^ν/∂z` at `z`.
pub fn jacobian(model: &JumpModel, control: usize, z: &[f64]) -> DMatrix<f64> {
    let n = model.species_count();
    let mut j = DMatrix::zeros(n, n);
    for (k, r) in model.reactions().iter().enumerate() {
        let kappa = model.rate_constant(control, k);
        let mut grad = vec![0.0; n];
        match r.form {
            PropensityForm::ZeroOrder => {}
            PropensityForm::Unary(i) => grad[i] = kappa,
            PropensityForm::BinarySelf(i) => grad[i] = 2.0 * kappa * z[i],
            PropensityForm::BinaryPair(a, b) => {
                grad[a] += kappa * z[b];
                grad[b] += kappa * z[a];
            }
        }
        for (row, &d) in r.jump.iter().enumerate() {
            if d != 0 {
                for (col, g) in grad.iter().enumerate() {
                    j[(row, col)] += d as f64 * g;
                }
            }
        }
    }
    j
}

/// Dense output for one stage: grid times, states and field values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeStage {
    pub control: usize,
    pub times: Vec<f64>,
    /// Row-major `z` at each grid time.
    pub states: Vec<f64>,
    /// Row-major `F(z)` at each grid time.
    pub derivs: Vec<f64>,
}

impl OdeStage {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Piecewise-controlled solution `z̃^u` on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdePath {
    pub dim: usize,
    pub dt: f64,
    pub stages: Vec<OdeStage>,
}

impl OdePath {
    pub fn state(&self, stage: usize, i: usize) -> &[f64] {
        &self.stages[stage].states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn deriv(&self, stage: usize, i: usize) -> &[f64] {
        &self.stages[stage].derivs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn stage_start(&self, stage: usize) -> &[f64] {
        self.state(stage, 0)
    }

    pub fn end(&self) -> &[f64] {
        let s = self.stages.len() - 1;
        self.state(s, self.stages[s].len() - 1)
    }

    /// Cubic Hermite value inside grid interval `i` of `stage` at fraction `θ`.
    pub fn hermite(&self, stage: usize, i: usize, theta: f64, out: &mut [f64]) {
        let st = &self.stages[stage];
        let h = st.times[i + 1] - st.times[i];
        let (a, b) = (self.state(stage, i), self.state(stage, i + 1));
        let (da, db) = (self.deriv(stage, i), self.deriv(stage, i + 1));
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        for d in 0..self.dim {
            out[d] = h00 * a[d] + h10 * h * da[d] + h01 * b[d] + h11 * h * db[d];
        }
    }

    /// `z̃(t)` by Hermite interpolation; at a stage time the value that
    /// starts the next stage.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let k = self
            .stages
            .iter()
            .rposition(|s| s.times[0] <= t)
            .unwrap_or(0);
        let st = &self.stages[k];
        let last = st.len() - 1;
        if t >= st.times[last] {
            out.copy_from_slice(self.state(k, last));
            return out;
        }
        let i = st.times.partition_point(|&s| s <= t).saturating_sub(1).min(last - 1);
        let theta = (t - st.times[i]) / (st.times[i + 1] - st.times[i]);
        self.hermite(k, i, theta, &mut out);
        out
    }

    /// `time,z…,control_index` rows on the integration grid.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("time");
        for n in names {
            out.push_str(&format!(",{n}"));
        }
        out.push_str(",control_index\n");
        for (k, st) in self.stages.iter().enumerate() {
            for (i, t) in st.times.iter().enumerate() {
                out.push_str(&format!("{t:?}"));
                for v in self.state(k, i) {
                    out.push_str(&format!(",{v:?}"));
                }
                out.push_str(&format!(",{}\n", st.control));
            }
        }
        out
    }
}

/// Box outside which the integration is declared to have blown up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardBox {
    pub low: f64,
    pub high: f64,
}

impl Default for GuardBox {
    fn default() -> Self {
        Self {
            low: -1e12,
            high: 1e12,
        }
    }
}

fn rk4_step(model: &JumpModel, control: usize, z: &mut [f64], h: f64, k: &mut [Vec<f64>; 5]) {
    let n = z.len();
    let [k1, k2, k3, k4, tmp] = k;
    vector_field(model, control, z, k1);
    for i in 0..n {
        tmp[i] = z[i] + 0.5 * h * k1[i];
    }
    vector_field(model, control, tmp, k2);
    for i in 0..n {
        tmp[i] = z[i] + 0.5 * h * k2[i];
    }
    vector_field(model, control, tmp, k3);
    for i in 0..n {
        tmp[i] = z[i] + h * k3[i];
    }
    vector_field(model, control, tmp, k4);
    for i in 0..n {
        z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates one constant-control interval `[t0, t1]`, returning the stage
/// dense output. The last step is shortened to land on `t1`.
pub fn integrate_interval(
    model: &JumpModel,
    control: usize,
    z0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    guard: GuardBox,
) -> Result<OdeStage> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("ODE step must be positive".into()));
    }
    let n = z0.len();
    let steps = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let mut z = z0.to_vec();
    let mut k: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut st = OdeStage {
        control,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity((steps + 1) * n),
        derivs: Vec::with_capacity((steps + 1) * n),
    };
    let mut f = vec![0.0; n];
    let mut push = |st: &mut OdeStage, t: f64, z: &[f64]| -> Result<()> {
        if z.iter().any(|v| !v.is_finite() || *v < guard.low || *v > guard.high) {
            return Err(Error::BlowUp {
                time: t,
                state: z.to_vec(),
            });
        }
        vector_field(model, control, z, &mut f);
        st.times.push(t);
        st.states.extend_from_slice(z);
        st.derivs.extend_from_slice(&f);
        Ok(())
    };
    push(&mut st, t0, &z)?;
    for s in 0..steps {
        let ta = t0 + s as f64 * dt;
        let tb = if s + 1 == steps { t1 } else { t0 + (s + 1) as f64 * dt };
        rk4_step(model, control, &mut z, tb - ta, &mut k);
        push(&mut st, tb, &z)?;
    }
    Ok(st)
}

/// RK4 solution under an open-loop policy; control switches only at stage
/// times and every stage starts from the exact end value of the previous one.
pub fn integrate_piecewise(
    model: &JumpModel,
    policy: &[usize],
    z0: &[f64],
    horizon: &StagedHorizon,
    dt: f64,
) -> Result<OdePath> {
    integrate_piecewise_guarded(model, policy, z0, horizon, dt, GuardBox::default())
}

pub fn integrate_piecewise_guarded(
    model: &JumpModel,
    policy: &[usize],
    z0: &[f64],
    horizon: &StagedHorizon,
    dt: f64,
    guard: GuardBox,
) -> Result<OdePath> {
    if policy.len() != horizon.stages() {
        return Err(Error::InvalidArgument(format!(
            "policy has {} stages, horizon has {}",
            policy.len(),
            horizon.stages()
        )));
    }
    if z0.len() != model.species_count() {
        return Err(Error::InvalidArgument("initial density has wrong dimension".into()));
    }
    let mut stages = Vec::with_capacity(policy.len());
    let mut z = z0.to_vec();
    for (j, &c) in policy.iter().enumerate() {
        let st = integrate_interval(
            model,
            c,
            &z,
            horizon.start_of(j),
            horizon.start_of(j + 1),
            dt,
            guard,
        )?;
        let n = z.len();
        let last = st.len() - 1;
        z.copy_from_slice(&st.states[last * n..]);
        stages.push(st);
    }
    Ok(OdePath {
        dim: z0.len(),
        dt,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    #[test]
    fn birth_death_field() {
        let m = builtin::birth_death_a1(100).unwrap();
        let mut f = [0.0];
        vector_field(&m, 0, &[1.2], &mut f);
        assert!((f[0] - 0.48).abs() < 1e-12);
    }

    #[test]
    fn predator_prey_field() {
        let m = builtin::predator_prey(100).unwrap();
        let mut f = [0.0; 2];
        vector_field(&m, 0, &[1.0, 0.4], &mut f);
        assert!((f[0] - 1.5).abs() < 1e-12);
        assert!((f[1] - 0.08).abs() < 1e-12);
        vector_field(&m, 1, &[0.0, 0.0], &mut f);
        assert_eq!(f, [0.0, 0.0]);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let m = builtin::predator_prey(100).unwrap();
        let z = [1.3, 0.7];
        let j = jacobian(&m, 2, &z);
        let h = 1e-6;
        for c in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[c] += h;
            zm[c] -= h;
            let (mut fp, mut fm) = ([0.0; 2], [0.0; 2]);
            vector_field(&m, 2, &zp, &mut fp);
            vector_field(&m, 2, &zm, &mut fm);
            for r in 0..2 {
                assert!((j[(r, c)] - (fp[r] - fm[r]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn exponential_closed_form() {
        let m = builtin::birth_death_a2(100).unwrap();
        let h = StagedHorizon::new(vec![0.0, 1.0]).unwrap();
        let p = integrate_piecewise(&m, &[1], &[1.2], &h, 1e-3).unwrap();
        let exact = 1.2 * (-0.2f64).exp();
        assert!((p.end()[0] - exact).abs() < 1e-9);
        assert!((exact - 0.982477).abs() < 1e-6);
    }

    #[test]
    fn stage_continuity_is_bit_exact() {
        let m = builtin::predator_prey(100).unwrap();
        let h = StagedHorizon::uniform(5, 1.0).unwrap();
        let p = integrate_piecewise(&m, &[0, 2, 1, 0, 2], &[1.0, 0.4], &h, 1e-3).unwrap();
        for j in 0..4 {
            let st = &p.stages[j];
            assert_eq!(p.state(j, st.len() - 1), p.stage_start(j + 1));
            assert_eq!(*st.times.last().unwrap(), (j + 1) as f64);
        }
    }
}
