//! Builtin example networks used by the experiments and tests.

use crate::error::Result;
use crate::model::{parse_model, JumpModel, ModelDocument};

/// Birth-death process with the first control set.
pub const BIRTH_DEATH_A1: &str = "\
model birth_death_A1
scaling N = 100
species A
reaction birth: A -> 2 A   unary(A)
reaction death: A -> 0     unary(A)
controls:
  nu0: birth = 1.0, death = 0.6
  nu1: birth = 0.8, death = 1.0
stages: t = [0.0, 1.0, 2.0, 3.0]
domain: A in [0, 3)
initial: A = 1.2
cost: r = 0; phi = abs(z_A - 1.0); psi = 0
";

/// Birth-death process with the second control set, where `nu0` has the
/// faster death rate.
pub const BIRTH_DEATH_A2: &str = "\
model birth_death_A2
scaling N = 100
species A
reaction birth: A -> 2 A   unary(A)
reaction death: A -> 0     unary(A)
controls:
  nu0: birth = 1.0, death = 0.8
  nu1: birth = 0.8, death = 1.0
stages: t = [0.0, 1.0, 2.0, 3.0]
domain: A in [0, 3)
initial: A = 1.2
cost: r = 0; phi = abs(z_A - 1.0); psi = 0
";

/// Lotka-Volterra type predator-prey network with three controls.
pub const PREDATOR_PREY: &str = "\
model predator_prey
scaling N = 100
species A B
# A is the prey, B the predator
reaction prey_birth:     A -> 2 A           unary(A)
reaction prey_death:     A -> 0             unary(A)
reaction pred_birth:     B -> 2 B           unary(B)
reaction pred_death:     B -> 0             unary(B)
reaction predation:      A + B -> B         binary_pair(A, B)
reaction pred_growth:    A + B -> A + 2 B   binary_pair(A, B)
controls:
  nu0: prey_birth = 2.5, prey_death = 0.2, pred_birth = 0.2, pred_death = 2.0, predation = 2.0, pred_growth = 2.0
  nu1: prey_birth = 2.7, prey_death = 0.2, pred_birth = 0.2, pred_death = 1.5, predation = 2.0, pred_growth = 2.0
  nu2: prey_birth = 2.5, prey_death = 0.2, pred_birth = 0.2, pred_death = 2.5, predation = 2.0, pred_growth = 2.0
stages: t = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
domain: A in [0, 5), B in [0, 5)
initial: A = 1.0, B = 0.4
cost: r = 0; phi = abs(z_A - 2 * z_B) + abs(z_A - 1.5); psi = 0
";

/// Unit-rate immigration, so that `x(t) = P(Nt)` for a unit Poisson process.
pub const POISSON: &str = "\
model poisson
scaling N = 100
species A
reaction arrival: 0 -> A   zero
controls:
  nu0: arrival = 1.0
stages: t = [0.0, 1.0]
domain: A in [0, 3)
initial: A = 0
cost: r = 0; phi = abs(z_A); psi = 0
";

/// Pure birth with unit rate constant.
pub const PURE_BIRTH: &str = "\
model pure_birth
scaling N = 100
species A
reaction birth: A -> 2 A   unary(A)
controls:
  nu0: birth = 1.0
stages: t = [0.0, 1.0]
initial: A = 1.0
cost: r = 0; phi = 0; psi = 0
";

/// All builtin model documents by name.
pub const ALL: &[(&str, &str)] = &[
    ("birth_death_A1", BIRTH_DEATH_A1),
    ("birth_death_A2", BIRTH_DEATH_A2),
    ("predator_prey", PREDATOR_PREY),
    ("poisson", POISSON),
    ("pure_birth", PURE_BIRTH),
];

/// Source text of a builtin model.
pub fn source(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a builtin document and rescales it to `n`.
pub fn document(name: &str, n: u64) -> Result<ModelDocument> {
    let text = source(name)
        .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown builtin model {name}")))?;
    let mut doc = parse_model(text)?;
    doc.model = doc.model.with_scaling(n)?;
    Ok(doc)
}

pub fn birth_death_a1(n: u64) -> Result<JumpModel> {
    Ok(document("birth_death_A1", n)?.model)
}

pub fn birth_death_a2(n: u64) -> Result<JumpModel> {
    Ok(document("birth_death_A2", n)?.model)
}

pub fn predator_prey(n: u64) -> Result<JumpModel> {
    Ok(document("predator_prey", n)?.model)
}
