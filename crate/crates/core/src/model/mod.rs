//! Controlled reaction networks and the jump rates they induce.
//!
//! A [`JumpModel`] couples a set of species and reactions with a finite
//! control set. Every control supplies one rate constant per reaction, and
//! the propensity of reaction `k` in state `x` follows the classical scaling
//! with the system size `N`:
//!
//! | form              | propensity             |
//! |-------------------|------------------------|
//! | `zero`            | `κ N`                  |
//! | `unary(i)`        | `κ x_i`                |
//! | `binary_self(i)`  | `κ/N x_i (x_i - 1)`    |
//! | `binary_pair(i,j)`| `κ/N x_i x_j`          |
//!
//! Jump rates of the original process aggregate propensities over reactions
//! sharing the same jump vector; the density process `z = x/N` uses the same
//! rates evaluated at `Nz`.

pub mod format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{format_document, parse_model, ModelDocument};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropensityForm {
    ZeroOrder,
    Unary(usize),
    BinarySelf(usize),
    BinaryPair(usize, usize),
}

impl PropensityForm {
    /// Reaction order (number of consumed molecules).
    pub fn order(&self) -> u32 {
        match self {
            PropensityForm::ZeroOrder => 0,
            PropensityForm::Unary(_) => 1,
            PropensityForm::BinarySelf(_) | PropensityForm::BinaryPair(..) => 2,
        }
    }

    /// Whether the jump rates of this form are exactly density dependent,
    /// i.e. `f_o(x, l) = N η(x/N, l)` with `η` independent of `N`.
    pub fn is_density_dependent(&self) -> bool {
        !matches!(self, PropensityForm::BinarySelf(_))
    }

    /// Propensity in the `N → ∞` limit, per unit `N`, at density `z`.
    pub fn limit_rate(&self, kappa: f64, z: &[f64]) -> f64 {
        match *self {
            PropensityForm::ZeroOrder => kappa,
            PropensityForm::Unary(i) => kappa * z[i],
            PropensityForm::BinarySelf(i) => kappa * z[i] * z[i],
            PropensityForm::BinaryPair(i, j) => kappa * z[i] * z[j],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    pub name: String,
    pub reactants: Vec<u32>,
    pub products: Vec<u32>,
    pub form: PropensityForm,
    pub jump: Vec<i64>,
}

impl Reaction {
    pub fn new(
        name: impl Into<String>,
        reactants: Vec<u32>,
        products: Vec<u32>,
        form: PropensityForm,
    ) -> Result<Self> {
        let name = name.into();
        if reactants.len() != products.len() {
            return Err(Error::Semantic(format!(
                "reaction {name}: reactant and product vectors differ in length"
            )));
        }
        let n = reactants.len();
        let jump: Vec<i64> = reactants
            .iter()
            .zip(&products)
            .map(|(&r, &p)| p as i64 - r as i64)
            .collect();
        if jump.iter().all(|&d| d == 0) {
            return Err(Error::Semantic(format!(
                "reaction {name}: jump vector is zero"
            )));
        }
        let mut expected = vec![0u32; n];
        match form {
            PropensityForm::ZeroOrder => {}
            PropensityForm::Unary(i) => {
                check_index(&name, i, n)?;
                expected[i] = 1;
            }
            PropensityForm::BinarySelf(i) => {
                check_index(&name, i, n)?;
                expected[i] = 2;
            }
            PropensityForm::BinaryPair(i, j) => {
                check_index(&name, i, n)?;
                check_index(&name, j, n)?;
                if i == j {
                    return Err(Error::Semantic(format!(
                        "reaction {name}: binary_pair needs two distinct species"
                    )));
                }
                expected[i] = 1;
                expected[j] = 1;
            }
        }
        if expected != reactants {
            return Err(Error::Semantic(format!(
                "reaction {name}: propensity {form:?} does not match reactant stoichiometry {reactants:?}"
            )));
        }
        Ok(Self {
            name,
            reactants,
            products,
            form,
            jump,
        })
    }
}

fn check_index(name: &str, i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(Error::Semantic(format!(
            "reaction {name}: species index {i} out of range"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub name: String,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    controls: Vec<Control>,
}

impl ControlSet {
    pub fn new(controls: Vec<Control>, reaction_count: usize) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::Semantic("control set is empty".into()));
        }
        for c in &controls {
            if c.rates.len() != reaction_count {
                return Err(Error::Semantic(format!(
                    "control {} has {} rate constants, expected {reaction_count}",
                    c.name,
                    c.rates.len()
                )));
            }
            if c.rates.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
                return Err(Error::Semantic(format!(
                    "control {} has a negative or non-finite rate constant",
                    c.name
                )));
            }
        }
        for (i, a) in controls.iter().enumerate() {
            if controls[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Semantic(format!("duplicate control {}", a.name)));
            }
        }
        Ok(Self { controls })
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn get(&self, index: usize) -> &Control {
        &self.controls[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Control> {
        self.controls.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.controls.iter().position(|c| c.name == name)
    }
}

/// Axis-aligned box in density coordinates, `[low_i, high_i)` per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl DensityBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::Semantic("domain bounds differ in dimension".into()));
        }
        if low
            .iter()
            .zip(&high)
            .any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite())
        {
            return Err(Error::Semantic(
                "domain bounds must be finite with low < high".into(),
            ));
        }
        Ok(Self { low, high })
    }

    /// The default domain `[0, 10)^n`.
    pub fn default_for(n: usize) -> Self {
        Self {
            low: vec![0.0; n],
            high: vec![10.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(&v, (&l, &h))| v >= l && v < h)
    }

    /// All `2^n` corners of the closed box.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            self.high[i]
                        } else {
                            self.low[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Compiled propensity term `c · x[a] · (x[b] − off)`, where an index past
/// the state stands for the constant 1.
#[derive(Debug, Clone, Copy)]
struct Kernel {
    a: usize,
    b: usize,
    off: f64,
}

#[derive(Debug, Clone)]
pub struct JumpModel {
    name: String,
    species: Vec<Species>,
    reactions: Vec<Reaction>,
    controls: ControlSet,
    scaling: u64,
    domain: Option<DensityBox>,
    kernels: Vec<Kernel>,
    // coefficients[control * m + k]
    coefficients: Vec<f64>,
    // distinct jump vectors and reaction -> jump class
    jump_classes: Vec<Vec<i64>>,
    jump_class_of: Vec<usize>,
}

impl PartialEq for JumpModel {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.species == other.species
            && self.reactions == other.reactions
            && self.controls == other.controls
            && self.scaling == other.scaling
            && self.domain == other.domain
    }
}

impl JumpModel {
    pub fn new(
        name: impl Into<String>,
        species: Vec<Species>,
        reactions: Vec<Reaction>,
        controls: ControlSet,
        scaling: u64,
        domain: Option<DensityBox>,
    ) -> Result<Self> {
        if scaling == 0 {
            return Err(Error::Semantic("scaling N must be a positive integer".into()));
        }
        if species.is_empty() {
            return Err(Error::Semantic("model declares no species".into()));
        }
        for (i, s) in species.iter().enumerate() {
            if s.index != i {
                return Err(Error::Semantic(format!(
                    "species {} has index {} at position {i}",
                    s.name, s.index
                )));
            }
            if species[..i].iter().any(|t| t.name == s.name) {
                return Err(Error::Semantic(format!("duplicate species {}", s.name)));
            }
        }
        let n = species.len();
        if reactions.is_empty() {
            return Err(Error::Semantic("model declares no reactions".into()));
        }
        for r in &reactions {
            if r.jump.len() != n {
                return Err(Error::Semantic(format!(
                    "reaction {} has stoichiometry of dimension {}, expected {n}",
                    r.name,
                    r.jump.len()
                )));
            }
        }
        if controls
            .iter()
            .any(|c| c.rates.len() != reactions.len())
        {
            return Err(Error::Semantic(
                "control rate vectors do not match the reaction count".into(),
            ));
        }
        if let Some(d) = &domain {
            if d.dim() != n {
                return Err(Error::Semantic("domain dimension mismatch".into()));
            }
        }
        let mut model = Self {
            name: name.into(),
            species,
            reactions,
            controls,
            scaling,
            domain,
            kernels: Vec::new(),
            coefficients: Vec::new(),
            jump_classes: Vec::new(),
            jump_class_of: Vec::new(),
        };
        model.compile();
        Ok(model)
    }

    fn compile(&mut self) {
        let nf = self.scaling as f64;
        let one = usize::MAX;
        self.kernels = self
            .reactions
            .iter()
            .map(|r| match r.form {
                PropensityForm::ZeroOrder => Kernel { a: one, b: one, off: 0.0 },
                PropensityForm::Unary(i) => Kernel { a: i, b: one, off: 0.0 },
                PropensityForm::BinarySelf(i) => Kernel { a: i, b: i, off: 1.0 },
                PropensityForm::BinaryPair(i, j) => Kernel { a: i, b: j, off: 0.0 },
            })
            .collect();
        self.coefficients = self
            .controls
            .iter()
            .flat_map(|c| {
                self.reactions.iter().zip(&c.rates).map(move |(r, &k)| match r.form {
                    PropensityForm::ZeroOrder => k * nf,
                    PropensityForm::Unary(_) => k,
                    _ => k / nf,
                })
            })
            .collect();
        self.jump_classes.clear();
        self.jump_class_of.clear();
        for r in &self.reactions {
            let idx = match self.jump_classes.iter().position(|l| *l == r.jump) {
                Some(i) => i,
                None => {
                    self.jump_classes.push(r.jump.clone());
                    self.jump_classes.len() - 1
                }
            };
            self.jump_class_of.push(idx);
        }
    }

    /// Same network with a different scaling `N`.
    pub fn with_scaling(&self, scaling: u64) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.species.clone(),
            self.reactions.clone(),
            self.controls.clone(),
            scaling,
            self.domain.clone(),
        )
    }

    /// Same network with a different control set.
    pub fn with_controls(&self, controls: ControlSet) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.species.clone(),
            self.reactions.clone(),
            controls,
            self.scaling,
            self.domain.clone(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn reaction_count(&self) -> usize {
        self.reactions.len()
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    pub fn scaling(&self) -> u64 {
        self.scaling
    }

    /// Domain box `Ω`; `[0, 10)^n` when the model does not declare one.
    pub fn domain(&self) -> DensityBox {
        self.domain
            .clone()
            .unwrap_or_else(|| DensityBox::default_for(self.species.len()))
    }

    pub fn declared_domain(&self) -> Option<&DensityBox> {
        self.domain.as_ref()
    }

    /// Rate constant `κ_k(ν)`.
    pub fn rate_constant(&self, control: usize, reaction: usize) -> f64 {
        self.controls.get(control).rates[reaction]
    }

    /// Propensity `λ_k(x)` of one reaction under one control.
    #[inline]
    pub fn propensity(&self, control: usize, state: &[i64], reaction: usize) -> f64 {
        let c = self.coefficients[control * self.reactions.len() + reaction];
        kernel_value(self.kernels[reaction], c, state)
    }

    /// Fills `out` with every propensity and returns their sum.
    #[inline]
    pub fn propensities(&self, control: usize, state: &[i64], out: &mut [f64]) -> f64 {
        let m = self.reactions.len();
        let coef = &self.coefficients[control * m..(control + 1) * m];
        let mut total = 0.0;
        for ((o, &k), &c) in out.iter_mut().zip(&self.kernels).zip(coef) {
            let a = kernel_value(k, c, state);
            *o = a;
            total += a;
        }
        total
    }

    /// Aggregated jump rates `f_o(x, l)` with zero entries omitted.
    pub fn jump_rate_table(&self, control: usize, state: &[i64]) -> Vec<(Vec<i64>, f64)> {
        let mut rates = vec![0.0; self.jump_classes.len()];
        for k in 0..self.reactions.len() {
            rates[self.jump_class_of[k]] += self.propensity(control, state, k);
        }
        self.jump_classes
            .iter()
            .zip(rates)
            .filter(|(_, r)| *r > 0.0)
            .map(|(l, r)| (l.clone(), r))
            .collect()
    }

    /// Total jump intensity `λ(x)`.
    pub fn total_rate(&self, control: usize, state: &[i64]) -> f64 {
        (0..self.reactions.len())
            .map(|k| self.propensity(control, state, k))
            .sum()
    }

    /// Density-process rate `f_d(z, l) = f_o(Nz, Nl)`.
    pub fn density_rate(&self, control: usize, z: &[f64], l: &[f64]) -> Result<f64> {
        let x = self.lattice_point(z)?;
        let jump = self.lattice_point(l)?;
        Ok(self
            .jump_rate_table(control, &x)
            .into_iter()
            .find(|(v, _)| *v == jump)
            .map_or(0.0, |(_, r)| r))
    }

    /// `N z` as an integer vector, failing when it is not integral.
    pub fn lattice_point(&self, z: &[f64]) -> Result<Vec<i64>> {
        let nf = self.scaling as f64;
        z.iter()
            .map(|&v| {
                let x = v * nf;
                let r = x.round();
                if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
                    Ok(r as i64)
                } else {
                    Err(Error::NonLatticeDensity(z.to_vec()))
                }
            })
            .collect()
    }

    pub fn density(&self, state: &[i64]) -> Vec<f64> {
        let nf = self.scaling as f64;
        state.iter().map(|&x| x as f64 / nf).collect()
    }

    /// `F^{ν,N}(z) = Σ_l l f_d(z,l)` at the lattice point `x = Nz`.
    pub fn finite_drift(&self, control: usize, state: &[i64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let nf = self.scaling as f64;
        for (k, r) in self.reactions.iter().enumerate() {
            let a = self.propensity(control, state, k) / nf;
            if a != 0.0 {
                for (o, &d) in out.iter_mut().zip(&r.jump) {
                    *o += d as f64 * a;
                }
            }
        }
    }

    /// True when every reaction is density dependent (no `binary_self`).
    pub fn is_density_dependent(&self) -> bool {
        self.reactions.iter().all(|r| r.form.is_density_dependent())
    }

    /// Highest order of any reaction consuming species `i`; `None` when the
    /// species is never a reactant.
    pub fn highest_reactant_order(&self, i: usize) -> Option<u32> {
        self.reactions
            .iter()
            .filter(|r| r.reactants[i] > 0)
            .map(|r| r.form.order())
            .max()
    }
}

#[inline(always)]
fn kernel_value(k: Kernel, c: f64, x: &[i64]) -> f64 {
    let u = x.get(k.a).map_or(1.0, |&v| v as f64);
    let v = x.get(k.b).map_or(1.0, |&v| v as f64 - k.off);
    c * u * v
}

/// Stage times `0 = t_0 < t_1 < … < t_K = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedHorizon {
    times: Vec<f64>,
}

impl StagedHorizon {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Semantic("at least one control stage is required".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::Semantic("stage times must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Semantic("stage times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// `K` stages of equal width `h`.
    pub fn uniform(stages: usize, width: f64) -> Result<Self> {
        Self::new((0..=stages).map(|j| j as f64 * width).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn stages(&self) -> usize {
        self.times.len() - 1
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn start_of(&self, stage: usize) -> f64 {
        self.times[stage]
    }

    pub fn width(&self, stage: usize) -> f64 {
        self.times[stage + 1] - self.times[stage]
    }

    /// Largest stage width `h`.
    pub fn max_width(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Stage index `j(t)` with `t ∈ [t_j, t_{j+1})`.
    pub fn stage_at(&self, t: f64) -> Option<usize> {
        if t < 0.0 || t >= self.end() {
            return None;
        }
        Some(self.times.partition_point(|&s| s <= t) - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    fn bd() -> JumpModel {
        builtin::birth_death_a1(10).unwrap()
    }

    #[test]
    fn propensity_classes() {
        let species = vec![Species {
            name: "A".into(),
            index: 0,
        }];
        let reactions = vec![
            Reaction::new("in", vec![0], vec![1], PropensityForm::ZeroOrder).unwrap(),
            Reaction::new("dim", vec![2], vec![0], PropensityForm::BinarySelf(0)).unwrap(),
            Reaction::new("out", vec![1], vec![0], PropensityForm::Unary(0)).unwrap(),
        ];
        let controls = ControlSet::new(
            vec![Control {
                name: "c".into(),
                rates: vec![2.0, 1.0, 0.7],
            }],
            3,
        )
        .unwrap();
        let m5 = JumpModel::new("t", species.clone(), reactions.clone(), controls.clone(), 5, None)
            .unwrap();
        assert_eq!(m5.propensity(0, &[0], 0), 10.0);
        assert_eq!(m5.propensity(0, &[0], 2), 0.0);
        let m10 = m5.with_scaling(10).unwrap();
        assert!((m10.propensity(0, &[4], 1) - 1.2).abs() < 1e-12);
        // x = 1 gives zero for the dimerisation
        assert_eq!(m10.propensity(0, &[1], 1), 0.0);
    }

    #[test]
    fn birth_death_rate_table() {
        let m = bd();
        let table = m.jump_rate_table(0, &[12]);
        assert_eq!(table.len(), 2);
        assert_eq!(table[0], (vec![1], 12.0));
        assert!((table[1].1 - 7.2).abs() < 1e-12);
        assert_eq!(table[1].0, vec![-1]);
        assert!(m.jump_rate_table(0, &[0]).is_empty());
    }

    #[test]
    fn aggregation_of_shared_jumps() {
        let species = vec![Species {
            name: "A".into(),
            index: 0,
        }];
        let reactions = vec![
            Reaction::new("a", vec![1], vec![2], PropensityForm::Unary(0)).unwrap(),
            Reaction::new("b", vec![0], vec![1], PropensityForm::ZeroOrder).unwrap(),
        ];
        let controls = ControlSet::new(
            vec![Control {
                name: "c".into(),
                rates: vec![1.0, 4.5],
            }],
            2,
        )
        .unwrap();
        let m = JumpModel::new("t", species, reactions, controls, 1, None).unwrap();
        let table = m.jump_rate_table(0, &[3]);
        assert_eq!(table, vec![(vec![1], 7.5)]);
    }

    #[test]
    fn density_rates() {
        let m = bd();
        assert!((m.density_rate(0, &[1.2], &[0.1]).unwrap() - 12.0).abs() < 1e-12);
        assert_eq!(m.density_rate(0, &[0.0], &[0.1]).unwrap(), 0.0);
        assert!(matches!(
            m.density_rate(0, &[1.25], &[0.1]),
            Err(Error::NonLatticeDensity(_))
        ));
        // N η(z, l) for a unary birth with κ = 1 at z = 0.5, N = 100
        let m100 = m.with_scaling(100).unwrap();
        assert!((m100.density_rate(0, &[0.5], &[0.01]).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_reactions() {
        assert!(Reaction::new("x", vec![1], vec![1], PropensityForm::Unary(0)).is_err());
        assert!(Reaction::new("x", vec![1], vec![0], PropensityForm::BinarySelf(0)).is_err());
        assert!(
            Reaction::new("x", vec![1, 1], vec![0, 0], PropensityForm::BinaryPair(0, 0)).is_err()
        );
        assert!(Reaction::new("x", vec![1], vec![2], PropensityForm::ZeroOrder).is_err());
    }

    #[test]
    fn stage_lookup() {
        let h = StagedHorizon::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(h.stages(), 3);
        assert_eq!(h.stage_at(0.0), Some(0));
        assert_eq!(h.stage_at(0.999), Some(0));
        assert_eq!(h.stage_at(1.0), Some(1));
        assert_eq!(h.stage_at(2.5), Some(2));
        assert_eq!(h.stage_at(3.0), None);
        assert!(StagedHorizon::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(StagedHorizon::new(vec![0.0]).is_err());
    }

    #[test]
    fn sum_of_table_equals_total_rate() {
        let m = builtin::predator_prey(20).unwrap();
        for x in 0..15 {
            for y in 0..15 {
                for c in 0..3 {
                    let s: f64 = m.jump_rate_table(c, &[x, y]).iter().map(|e| e.1).sum();
                    let t = m.total_rate(c, &[x, y]);
                    assert!((s - t).abs() <= 1e-12 * t.max(1.0));
                    assert!(m.jump_rate_table(c, &[x, y]).iter().all(|e| e.1 > 0.0));
                }
            }
        }
    }

    #[test]
    fn density_rate_matches_table_on_lattice() {
        let m = builtin::predator_prey(10).unwrap();
        for x in 0..12 {
            for y in 0..12 {
                let z = [x as f64 / 10.0, y as f64 / 10.0];
                for (l, r) in m.jump_rate_table(1, &[x, y]) {
                    let ld: Vec<f64> = l.iter().map(|&v| v as f64 / 10.0).collect();
                    assert_eq!(m.density_rate(1, &z, &ld).unwrap(), r);
                }
            }
        }
    }

    #[test]
    fn density_rates_linear_in_scaling() {
        let m = builtin::predator_prey(20).unwrap();
        let m2 = m.with_scaling(40).unwrap();
        for &(z1, z2) in &[(0.5, 0.25), (1.0, 0.4), (1.5, 2.0)] {
            for (l, r) in m.jump_rate_table(0, &m.lattice_point(&[z1, z2]).unwrap()) {
                let ld: Vec<f64> = l.iter().map(|&v| v as f64 / 40.0).collect();
                let r2 = m2.density_rate(0, &[z1, z2], &ld).unwrap();
                assert!((r2 - 2.0 * r).abs() < 1e-9 * r.max(1.0));
            }
        }
    }
}
