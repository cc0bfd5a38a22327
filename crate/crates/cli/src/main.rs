use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jumpctl::config::MethodName;
use jumpctl::{builtin_config, emit_figure_data, run_experiment, CliError, CliResult, ExperimentConfig, ExperimentKind, ResultSet};

#[derive(Parser)]
#[command(name = "jumpctl", version, about = "Optimal control of stage-switched Markov jump processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample trajectories and path statistics of one open-loop policy.
    Simulate(RunArgs),
    /// Rank every open-loop policy by Monte-Carlo and by the limit ODE.
    RankOpenloop(RunArgs),
    /// Solve the feedback problem on a truncated box.
    SolveFeedback(RunArgs),
    /// Build stage sets and solve the hybrid problem.
    SolveHybrid(RunArgs),
    /// Value iteration for the discounted problem.
    SolveDiscounted(RunArgs),
    /// Compare pathwise errors with the convergence bounds.
    VerifyBounds(RunArgs),
    /// Evaluate one open-loop policy.
    Evaluate(RunArgs),
    /// Turn finished runs into plot-ready CSVs.
    EmitFigures {
        /// Run directories holding `summary.json`.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Config sources and key overrides shared by all run subcommands.
#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped config: birth_death_A1, birth_death_A2 or predator_prey.
    #[arg(long)]
    builtin: Option<String>,
    /// Scale of the shipped config.
    #[arg(long, default_value = "desk")]
    scale: String,
    /// Model file or `builtin:<name>`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// System sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u64>>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    m_rank: Option<usize>,
    #[arg(long)]
    m_ol: Option<usize>,
    #[arg(long)]
    m_stat: Option<usize>,
    #[arg(long)]
    m_eval: Option<usize>,
    #[arg(long)]
    n_ol: Option<usize>,
    #[arg(long)]
    epsilon_ol: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    epsilon_near: Option<Vec<f64>>,
    #[arg(long)]
    epsilon_tau: Option<f64>,
    #[arg(long)]
    max_capped_fraction: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<MethodName>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Open-loop policy such as `(1,1,0)`.
    #[arg(long)]
    policy: Option<String>,
}

impl RunArgs {
    fn config(self, kind: ExperimentKind) -> CliResult<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.builtin) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either --config or --builtin".into())),
            (Some(p), None) => ExperimentConfig::load(p)?,
            (None, Some(b)) => builtin_config(b, &self.scale)?,
            (None, None) => ExperimentConfig::default(),
        };
        cfg.kind = Some(kind);
        Ok(cfg.overlay(ExperimentConfig {
            model: self.model,
            seed: self.seed,
            n: self.n,
            m: self.m,
            m_rank: self.m_rank,
            m_ol: self.m_ol,
            m_stat: self.m_stat,
            m_eval: self.m_eval,
            n_ol: self.n_ol,
            epsilon_ol: self.epsilon_ol,
            zeta: self.zeta,
            epsilon_near: self.epsilon_near,
            epsilon_tau: self.epsilon_tau,
            max_capped_fraction: self.max_capped_fraction,
            workers: self.workers,
            method: self.method,
            output: self.output,
            policy: self.policy,
            ..Default::default()
        }))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let (kind, args) = match cli.command {
        Command::Simulate(a) => (ExperimentKind::Simulate, a),
        Command::RankOpenloop(a) => (ExperimentKind::RankOpenloop, a),
        Command::SolveFeedback(a) => (ExperimentKind::SolveFeedback, a),
        Command::SolveHybrid(a) => (ExperimentKind::SolveHybrid, a),
        Command::SolveDiscounted(a) => (ExperimentKind::SolveDiscounted, a),
        Command::VerifyBounds(a) => (ExperimentKind::VerifyBounds, a),
        Command::Evaluate(a) => (ExperimentKind::Evaluate, a),
        Command::EmitFigures { inputs, output } => {
            let set = ResultSet::load(&inputs)?;
            for p in emit_figure_data(&set, &output)? {
                println!("{}", p.display());
            }
            return Ok(());
        }
    };
    let cfg = args.config(kind)?.resolve()?;
    let summary = run_experiment(&cfg)?;
    for c in &summary.costs {
        println!("N={} {} {} cost {:.4} ± {:.4}", c.n, c.policy_kind, c.policy, c.cost, c.stderr);
    }
    println!("results in {}", cfg.output.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
