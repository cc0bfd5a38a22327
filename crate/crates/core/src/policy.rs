//! Control policies and the controller interface used by the simulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::FeedbackPolicy;
use crate::hybrid::HybridPolicy;

/// Where a stage decision came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    /// Fixed by an open-loop policy or forced by the caller.
    Fixed,
    /// Looked up in a feedback table.
    Table,
    /// Clamped to the nearest state of a feedback table.
    Clamped,
    /// Hybrid policy, state is a member of the stage set.
    InSet,
    /// Hybrid policy, control of the nearest stage-set member.
    Near,
    /// Hybrid policy, fallback open-loop control.
    OpenLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub control: usize,
    pub provenance: Provenance,
}

impl Decision {
    pub fn fixed(control: usize) -> Self {
        Self {
            control,
            provenance: Provenance::Fixed,
        }
    }
}

/// Chooses the control for a stage from the state observed at its start.
pub trait Controller: Sync {
    fn decide(&self, stage: usize, state: &[i64]) -> Result<Decision>;
}

/// One control index per stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpenLoopPolicy(pub Vec<usize>);

impl OpenLoopPolicy {
    pub fn new(controls: Vec<usize>) -> Self {
        Self(controls)
    }

    pub fn controls(&self) -> &[usize] {
        &self.0
    }

    /// `(1,0,1)` style label.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        format!("({})", parts.join(","))
    }

    /// Parses labels such as `(1,0,1)` or `1,0,1`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim().trim_start_matches('(').trim_end_matches(')');
        t.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad policy `{text}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl Controller for OpenLoopPolicy {
    fn decide(&self, stage: usize, _state: &[i64]) -> Result<Decision> {
        Ok(Decision::fixed(self.0[stage]))
    }
}

/// Any of the three policy kinds.
#[derive(Debug, Clone)]
pub enum Policy {
    OpenLoop(OpenLoopPolicy),
    Feedback(FeedbackPolicy),
    Hybrid(HybridPolicy),
}

impl Controller for Policy {
    fn decide(&self, stage: usize, state: &[i64]) -> Result<Decision> {
        match self {
            Policy::OpenLoop(p) => p.decide(stage, state),
            Policy::Feedback(p) => p.decide(stage, state),
            Policy::Hybrid(p) => p.decide(stage, state),
        }
    }
}

impl<C: Controller + ?Sized> Controller for &C {
    fn decide(&self, stage: usize, state: &[i64]) -> Result<Decision> {
        (**self).decide(stage, state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let p = OpenLoopPolicy::new(vec![0, 2, 1, 0, 2]);
        assert_eq!(p.label(), "(0,2,1,0,2)");
        assert_eq!(OpenLoopPolicy::parse(&p.label()).unwrap(), p);
        assert!(OpenLoopPolicy::parse("(1,x)").is_err());
    }
}
