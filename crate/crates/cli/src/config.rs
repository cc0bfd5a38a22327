//! Experiment configuration files.
//!
//! ```toml
//! model = "builtin:predator_prey"   # or a path to a model file
//! kind = "solve-hybrid"
//! seed = 7
//! n = [50, 100]
//! m = 100
//! epsilon_near = [0.0, 0.02]
//! output = "out/hybrid"
//! ```
//!
//! Unset keys take the defaults of [`Defaults`]. Relative paths resolve
//! against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jumpctl_core::builtin;
use jumpctl_core::feedback::DpOptions;
use jumpctl_core::model::{parse_model, ModelDocument};
use jumpctl_core::policy::OpenLoopPolicy;
use jumpctl_core::simulate::Method;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    RankOpenloop,
    SolveFeedback,
    SolveHybrid,
    SolveDiscounted,
    VerifyBounds,
    Evaluate,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::RankOpenloop => "rank-openloop",
            ExperimentKind::SolveFeedback => "solve-feedback",
            ExperimentKind::SolveHybrid => "solve-hybrid",
            ExperimentKind::SolveDiscounted => "solve-discounted",
            ExperimentKind::VerifyBounds => "verify-bounds",
            ExperimentKind::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Ssa,
    Tau,
}

/// Density box given per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// Raw config as read from TOML; every key but `model`, `kind` and `seed`
/// is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<String>,
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    /// System sizes.
    pub n: Option<Vec<u64>>,
    /// Paths per estimate: per policy when ranking, per backup in DP solves,
    /// per system size when simulating or verifying bounds.
    pub m: Option<usize>,
    /// Paths per policy for the ranking inside DP pipelines.
    pub m_rank: Option<usize>,
    pub m_ol: Option<usize>,
    pub m_stat: Option<usize>,
    /// Paths for the final policy evaluation.
    pub m_eval: Option<usize>,
    pub n_ol: Option<usize>,
    pub epsilon_ol: Option<f64>,
    pub zeta: Option<f64>,
    pub epsilon_near: Option<Vec<f64>>,
    pub epsilon_tau: Option<f64>,
    pub workers: Option<usize>,
    pub method: Option<MethodName>,
    pub output: Option<PathBuf>,
    /// Open-loop policy for `simulate` and `evaluate`, e.g. `"(1,1,0)"`.
    pub policy: Option<String>,
    /// Feedback truncation box in densities.
    #[serde(rename = "box")]
    pub feedback_box: Option<BoxConfig>,
    /// Half-width in deviations of the suggested box when `box` is unset.
    pub box_width: Option<f64>,
    /// Moment exponent of the bound constants.
    pub alpha: Option<f64>,
    /// Box of the bound constants; defaults to the model domain.
    pub bounds_box: Option<BoxConfig>,
    /// Stage width and discount rate of the discounted problem.
    pub h: Option<f64>,
    pub beta: Option<f64>,
    pub tol: Option<f64>,
    /// Largest tolerated fraction of feedback backups that exhaust the
    /// regeneration budget.
    pub max_capped_fraction: Option<f64>,
    /// Trajectory CSVs written per system size by `simulate`.
    pub trajectories: Option<usize>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub model: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub n: Vec<u64>,
    pub m: usize,
    pub m_rank: usize,
    pub m_ol: usize,
    pub m_stat: usize,
    pub m_eval: usize,
    pub n_ol: usize,
    pub epsilon_ol: f64,
    pub zeta: f64,
    pub epsilon_near: Vec<f64>,
    pub epsilon_tau: f64,
    pub workers: usize,
    pub method: MethodName,
    pub output: PathBuf,
    pub policy: Option<String>,
    pub feedback_box: Option<BoxConfig>,
    pub box_width: f64,
    pub alpha: f64,
    pub bounds_box: Option<BoxConfig>,
    pub h: f64,
    pub beta: Option<f64>,
    pub tol: f64,
    pub max_capped_fraction: f64,
    pub trajectories: usize,
}

/// Values used for unset keys.
pub struct Defaults;

impl Defaults {
    pub const M: usize = 100;
    pub const M_RANK: usize = 2000;
    pub const M_OL: usize = 5000;
    pub const M_STAT: usize = 5000;
    pub const M_EVAL: usize = 10_000;
    pub const N_OL: usize = 3;
    pub const EPSILON_OL: f64 = 0.05;
    pub const ZETA: f64 = 3.0;
    pub const EPSILON_TAU: f64 = 0.03;
    pub const BOX_WIDTH: f64 = 4.0;
    pub const ALPHA: f64 = 2.0;
    pub const TOL: f64 = 1e-6;
    pub const MAX_CAPPED_FRACTION: f64 = 0.1;
    pub const TRAJECTORIES: usize = 5;
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.model {
            if !m.starts_with("builtin:") && Path::new(m).is_relative() {
                cfg.model = Some(base.join(m).to_string_lossy().into_owned());
            }
        }
        if let Some(o) = &cfg.output {
            if o.is_relative() {
                cfg.output = Some(base.join(o));
            }
        }
        Ok(cfg)
    }

    /// Keys set in `other` replace those of `self`.
    pub fn overlay(mut self, other: ExperimentConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            model, kind, seed, n, m, m_rank, m_ol, m_stat, m_eval, n_ol, epsilon_ol, zeta, epsilon_near,
            epsilon_tau, workers, method, output, policy, feedback_box, box_width, alpha, bounds_box, h, beta,
            tol, max_capped_fraction, trajectories
        );
        self
    }

    pub fn resolve(self) -> CliResult<Resolved> {
        let missing = |k: &str| CliError::Config(format!("missing required key `{k}`"));
        let r = Resolved {
            model: self.model.ok_or_else(|| missing("model"))?,
            kind: self.kind.ok_or_else(|| missing("kind"))?,
            seed: self.seed.ok_or_else(|| missing("seed"))?,
            n: self.n.ok_or_else(|| missing("n"))?,
            m: self.m.unwrap_or(Defaults::M),
            m_rank: self.m_rank.unwrap_or(Defaults::M_RANK),
            m_ol: self.m_ol.unwrap_or(Defaults::M_OL),
            m_stat: self.m_stat.unwrap_or(Defaults::M_STAT),
            m_eval: self.m_eval.unwrap_or(Defaults::M_EVAL),
            n_ol: self.n_ol.unwrap_or(Defaults::N_OL),
            epsilon_ol: self.epsilon_ol.unwrap_or(Defaults::EPSILON_OL),
            zeta: self.zeta.unwrap_or(Defaults::ZETA),
            epsilon_near: self.epsilon_near.unwrap_or_else(|| vec![0.0]),
            epsilon_tau: self.epsilon_tau.unwrap_or(Defaults::EPSILON_TAU),
            workers: self.workers.unwrap_or(1),
            method: self.method.unwrap_or(MethodName::Ssa),
            output: self.output.ok_or_else(|| missing("output"))?,
            policy: self.policy,
            feedback_box: self.feedback_box,
            box_width: self.box_width.unwrap_or(Defaults::BOX_WIDTH),
            alpha: self.alpha.unwrap_or(Defaults::ALPHA),
            bounds_box: self.bounds_box,
            h: self.h.unwrap_or(1.0),
            beta: self.beta,
            tol: self.tol.unwrap_or(Defaults::TOL),
            max_capped_fraction: self.max_capped_fraction.unwrap_or(Defaults::MAX_CAPPED_FRACTION),
            trajectories: self.trajectories.unwrap_or(Defaults::TRAJECTORIES),
        };
        r.validate()?;
        Ok(r)
    }
}

impl Resolved {
    fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n.is_empty() || self.n.contains(&0) {
            return bad("`n` must be a non-empty list of positive sizes".into());
        }
        for (k, v) in [
            ("m", self.m),
            ("m_rank", self.m_rank),
            ("m_ol", self.m_ol),
            ("m_stat", self.m_stat),
            ("m_eval", self.m_eval),
            ("n_ol", self.n_ol),
            ("workers", self.workers),
        ] {
            if v == 0 {
                return bad(format!("`{k}` must be positive"));
            }
        }
        for (k, v) in [("zeta", self.zeta), ("epsilon_tau", self.epsilon_tau), ("box_width", self.box_width), ("h", self.h), ("tol", self.tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("`{k}` must be positive"));
            }
        }
        if !(self.epsilon_ol >= 0.0) || self.epsilon_near.iter().any(|e| !(*e >= 0.0)) {
            return bad("`epsilon_ol` and `epsilon_near` must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.max_capped_fraction) {
            return bad("`max_capped_fraction` must lie in [0, 1]".into());
        }
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return bad("`alpha` must lie in (1, 2]".into());
        }
        if let Some(p) = &self.policy {
            OpenLoopPolicy::parse(p).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn method(&self) -> Method {
        match self.method {
            MethodName::Ssa => Method::Ssa,
            MethodName::Tau => Method::tau(self.epsilon_tau),
        }
    }

    pub fn dp_options(&self) -> DpOptions {
        let mut o = DpOptions::new(self.m, self.seed).with_method(self.method());
        o.max_capped_fraction = self.max_capped_fraction;
        o
    }

    /// The model document rescaled to `n`.
    pub fn document(&self, n: u64) -> CliResult<ModelDocument> {
        let mut doc = load_model(&self.model)?;
        doc.model = doc.model.with_scaling(n)?;
        Ok(doc)
    }

    pub fn policy(&self) -> Option<OpenLoopPolicy> {
        self.policy.as_deref().map(|p| OpenLoopPolicy::parse(p).expect("validated"))
    }
}

/// Parses `builtin:<name>` or a model file.
pub fn load_model(spec: &str) -> CliResult<ModelDocument> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        let text = builtin::source(name).ok_or_else(|| CliError::Config(format!("unknown builtin model `{name}`")))?;
        return Ok(parse_model(text)?);
    }
    let text = std::fs::read_to_string(spec).map_err(|e| CliError::Config(format!("cannot read model {spec}: {e}")))?;
    Ok(parse_model(&text)?)
}

/// Shipped configurations: the two experiments at `full` and `desk` scale.
pub fn builtin_config(name: &str, scale: &str) -> CliResult<ExperimentConfig> {
    let full = match scale {
        "full" => true,
        "desk" => false,
        _ => return Err(CliError::Config(format!("unknown scale `{scale}` (full or desk)"))),
    };
    let mut c = ExperimentConfig {
        seed: Some(1),
        output: Some(PathBuf::from(format!("out/{name}-{scale}"))),
        ..Default::default()
    };
    match name {
        "birth_death_A1" | "birth_death_A2" => {
            c.model = Some(format!("builtin:{name}"));
            c.kind = Some(ExperimentKind::SolveFeedback);
            c.n = Some(if full { vec![40, 100, 500, 4000] } else { vec![40, 100, 500] });
            c.m = Some(100);
            c.m_rank = Some(if full { 5000 } else { 2000 });
            c.m_eval = Some(if full { 10_000 } else { 4000 });
            c.feedback_box = Some(BoxConfig {
                low: vec![0.5],
                high: vec![2.0],
            });
            // Under the growth control the limit flow carries about half of
            // the box out within one stage, so up to a quarter of backups cap.
            c.max_capped_fraction = Some(0.3);
        }
        "predator_prey" => {
            c.model = Some("builtin:predator_prey".into());
            c.kind = Some(ExperimentKind::SolveHybrid);
            if full {
                c.n = Some(vec![50, 100, 200, 500, 1000, 2000, 4000]);
                c.m_rank = Some(50_000);
                c.m_ol = Some(10_000);
            } else {
                c.n = Some(vec![50, 100, 200]);
                c.m_rank = Some(2000);
                c.m_ol = Some(5000);
            }
            c.m = Some(100);
            c.m_stat = Some(5000);
            c.m_eval = Some(10_000);
            c.n_ol = Some(5);
            c.epsilon_ol = Some(0.05);
            c.zeta = Some(3.0);
            c.epsilon_near = Some(vec![0.0, 0.02]);
        }
        _ => return Err(CliError::Config(format!("unknown builtin config `{name}`"))),
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_seed_is_rejected() {
        let c = ExperimentConfig::from_toml("model = \"builtin:poisson\"\nkind = \"simulate\"\nn = [10]\noutput = \"o\"\n").unwrap();
        let e = c.resolve().unwrap_err();
        assert!(matches!(e, CliError::Config(ref m) if m.contains("seed")));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_and_bad_counts_are_rejected() {
        assert!(ExperimentConfig::from_toml("sead = 3\n").is_err());
        let c = ExperimentConfig::from_toml(
            "model = \"builtin:poisson\"\nkind = \"simulate\"\nseed = 1\nn = [10]\nm = 0\noutput = \"o\"\n",
        )
        .unwrap();
        assert!(c.resolve().is_err());
    }

    #[test]
    fn overlay_prefers_flags() {
        let base = builtin_config("predator_prey", "desk").unwrap();
        let flags = ExperimentConfig {
            n: Some(vec![30]),
            ..Default::default()
        };
        let r = base.overlay(flags).resolve().unwrap();
        assert_eq!(r.n, vec![30]);
        assert_eq!(r.epsilon_near, vec![0.0, 0.02]);
        assert_eq!(r.kind, ExperimentKind::SolveHybrid);
    }

    #[test]
    fn builtin_configs_resolve() {
        for name in ["birth_death_A1", "birth_death_A2", "predator_prey"] {
            for scale in ["full", "desk"] {
                let r = builtin_config(name, scale).unwrap().resolve().unwrap();
                r.document(r.n[0]).unwrap();
            }
        }
    }
}
