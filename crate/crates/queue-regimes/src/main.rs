//! Command-line front end: regime optimality checks, the socially optimal
//! threshold, equilibrium verification, simulation, and graph export.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use queue_regimes::analysis::{
    build_state_graph, check_universal_optimality, to_dot, AnalysisError, OptimalityVerdict,
    DEFAULT_NODE_CAP, DEFAULT_N_MAX,
};
use queue_regimes::equilibrium::{verify_mpe, EqVerdict, EquilibriumError, ThresholdProfile};
use queue_regimes::model::{ParamError, Params, Regime};
use queue_regimes::optimum::{
    individual_threshold, naor_threshold, surplus_curve, OptimumError,
};
use queue_regimes::regimes::{builtin, load_table, TableError, BUILTIN_NAMES};
use queue_regimes::sim::{
    coupled_dn_estimate, replication_csv, run_sim, DurationMode, SimConfig, SimError,
};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "queue-regimes", version, about = "Strategic queueing regime analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural condition for universal optimality of a regime.
    Check {
        #[command(flatten)]
        regime: RegimeArg,
        #[command(flatten)]
        bounds: Bounds,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Compute the socially optimal admission threshold and surplus curve.
    Threshold {
        #[command(flatten)]
        params: ParamArgs,
        /// Largest threshold scanned before giving up.
        #[arg(long, default_value_t = 64)]
        cap: u32,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Verify that the threshold reneging profile is a Markov perfect
    /// equilibrium under the given regime.
    VerifyMpe {
        #[command(flatten)]
        regime: RegimeArg,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        bounds: Bounds,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Monte Carlo simulation under a threshold reneging profile.
    Simulate {
        #[command(flatten)]
        regime: RegimeArg,
        #[command(flatten)]
        params: ParamArgs,
        /// Reneging threshold; defaults to the socially optimal one.
        #[arg(long)]
        threshold: Option<u32>,
        #[arg(long, default_value_t = 100_000)]
        rounds: u64,
        #[arg(long, default_value_t = 8)]
        reps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use sampled exponential round durations instead of expectations.
        #[arg(long)]
        sampled: bool,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Pathwise coupled estimate of the marginal surplus D_n.
    EstimateDn {
        #[command(flatten)]
        params: ParamArgs,
        /// Threshold whose marginal surplus is estimated.
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 100_000)]
        rounds: u64,
        #[arg(long, default_value_t = 8)]
        reps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Export the reachable state graph in DOT format.
    Graph {
        #[command(flatten)]
        regime: RegimeArg,
        #[command(flatten)]
        bounds: Bounds,
        /// Output path; stdout when omitted.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RegimeArg {
    /// One of fcfs, lcfs-pr, lcfs-np, priority-slots, score, or table:<path>.
    #[arg(long)]
    regime: String,
}

impl RegimeArg {
    fn build(&self) -> Result<Box<dyn Regime>, CliError> {
        if let Some(path) = self.regime.strip_prefix("table:") {
            return Ok(Box::new(load_table(path.as_ref())?));
        }
        builtin(&self.regime).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown regime '{}'; expected one of {} or table:<path>",
                self.regime,
                BUILTIN_NAMES.join(", ")
            ))
        })
    }
}

#[derive(Args)]
struct ParamArgs {
    /// Arrival rate.
    #[arg(long)]
    lambda: f64,
    /// Service rate.
    #[arg(long)]
    mu: f64,
    /// Waiting cost per customer per unit time.
    #[arg(long)]
    cost: f64,
    /// Service reward.
    #[arg(long)]
    reward: f64,
}

impl ParamArgs {
    fn build(&self) -> Result<Params, CliError> {
        Ok(Params::new(self.lambda, self.mu, self.cost, self.reward)?)
    }
}

#[derive(Args)]
struct Bounds {
    /// Arrivals are suppressed above this count.
    #[arg(long, default_value_t = DEFAULT_N_MAX)]
    max_n: u32,
    /// Hard cap on explored states.
    #[arg(long, default_value_t = DEFAULT_NODE_CAP)]
    node_cap: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

enum CliError {
    Usage(String),
    Cap(String),
    Io(String),
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::NodeCapExceeded { .. } => CliError::Cap(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<OptimumError> for CliError {
    fn from(e: OptimumError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::ChainCapExceeded { .. } => CliError::Cap(e.to_string()),
            EquilibriumError::Analysis(inner) => inner.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn print_json<T: Serialize>(command: &str, payload: &T) {
    let doc = serde_json::json!({
        "schema": SCHEMA_VERSION,
        "command": command,
        "result": payload,
    });
    println!("{}", serde_json::to_string_pretty(&doc).unwrap());
}

fn cmd_check(regime: &dyn Regime, bounds: &Bounds, format: Format) -> Result<(), CliError> {
    let report = check_universal_optimality(regime, bounds.max_n, bounds.node_cap)?;
    match format {
        Format::Json => print_json("check", &report),
        Format::Csv => {
            println!("regime,verdict,violations,preemption_occurs,bound,node_count");
            println!(
                "{},{:?},{},{},{},{}",
                report.regime,
                report.verdict,
                report.violations.len(),
                report.preemption_occurs,
                report.bound,
                report.node_count
            );
        }
        Format::Table => {
            println!("regime:     {}", report.regime);
            println!("verdict:    {:?}", report.verdict);
            println!("states:     {} (counts up to {})", report.node_count, report.bound);
            println!("preemption: {}", report.preemption_occurs);
            if report.verdict == OptimalityVerdict::ViolationFound {
                println!("back-placement violations at non-maximal states:");
                for v in &report.violations {
                    let path: Vec<String> = v
                        .witness
                        .states
                        .iter()
                        .map(|s| s.label().to_string())
                        .collect();
                    println!("  {}  reached from: {}", v.state.label(), path.join(" -> "));
                }
            }
        }
    }
    Ok(())
}

fn cmd_threshold(params: &Params, cap: u32, format: Format) -> Result<(), CliError> {
    let t = naor_threshold(params, cap)?;
    let curve = surplus_curve(params, (t.n_star + 2).min(cap));
    match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Payload<'a> {
                n_star: u32,
                tie: bool,
                individual_threshold: u32,
                curve: &'a [queue_regimes::optimum::CurveRow],
            }
            print_json(
                "threshold",
                &Payload {
                    n_star: t.n_star,
                    tie: t.tie,
                    individual_threshold: individual_threshold(params),
                    curve: &curve,
                },
            );
        }
        Format::Csv => print!("{}", queue_regimes::optimum::curve_csv(&curve)),
        Format::Table => {
            println!("socially optimal threshold n* = {}", t.n_star);
            println!("individually optimal threshold = {}", individual_threshold(params));
            if t.tie {
                println!("warning: knife-edge parameters, D_n* is within tolerance of zero");
            }
            println!("{:>3} {:>14} {:>14} {:>14} {:>14}", "n", "theta", "rounds", "surplus", "welfare");
            for row in &curve {
                println!(
                    "{:>3} {:>14.8} {:>14.8} {:>14.8} {:>14.8}",
                    row.n, row.theta, row.t_rounds, row.surplus, row.welfare
                );
            }
        }
    }
    Ok(())
}

fn cmd_verify_mpe(
    regime: &dyn Regime,
    params: &Params,
    bounds: &Bounds,
    format: Format,
) -> Result<(), CliError> {
    let report = verify_mpe(regime, params, bounds.max_n, bounds.node_cap)?;
    match format {
        Format::Json => print_json("verify-mpe", &report),
        Format::Csv => {
            println!("regime,verdict,n_star,tie,deviations,bound,chain_len");
            println!(
                "{},{:?},{},{},{},{},{}",
                report.regime,
                report.verdict,
                report.n_star,
                report.tie,
                report.deviations.len(),
                report.bound,
                report.chain_len
            );
        }
        Format::Table => {
            println!("regime:  {}", report.regime);
            println!("n*:      {}{}", report.n_star, if report.tie { " (knife-edge)" } else { "" });
            println!("verdict: {:?}", report.verdict);
            if report.verdict == EqVerdict::DeviationFound {
                println!("profitable deviations:");
                for d in &report.deviations {
                    println!(
                        "  state {} position {}: {:?} instead of {:?} gains {:.6}",
                        d.state.label(),
                        d.position,
                        d.alternative,
                        d.prescribed,
                        d.value_gap
                    );
                }
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    regime: &dyn Regime,
    params: &Params,
    threshold: Option<u32>,
    rounds: u64,
    reps: u32,
    seed: u64,
    sampled: bool,
    format: Format,
) -> Result<(), CliError> {
    let threshold = match threshold {
        Some(t) => t,
        None => naor_threshold(params, 64)?.n_star,
    };
    let cfg = SimConfig {
        params: *params,
        rounds,
        replications: reps,
        seed,
        duration: if sampled {
            DurationMode::Sampled
        } else {
            DurationMode::Expected
        },
    };
    let profile = ThresholdProfile { threshold };
    let stats = run_sim(&cfg, regime, &profile)?;
    match format {
        Format::Json => print_json("simulate", &stats),
        Format::Csv => print!("{}", replication_csv(&stats)),
        Format::Table => {
            println!("regime:       {}", regime.name());
            println!("threshold:    {threshold}");
            println!("seed:         {}", stats.seed);
            println!("welfare rate: {:.8} (se {:.8})", stats.welfare_rate, stats.welfare_se);
            println!("served:       {}", stats.served);
            println!("reneged:      {}", stats.reneged);
            println!("queue-length distribution:");
            for (n, mass) in stats.histogram.iter().enumerate() {
                println!("  {n}: {mass:.6}");
            }
        }
    }
    Ok(())
}

fn cmd_estimate_dn(
    params: &Params,
    n: u32,
    rounds: u64,
    reps: u32,
    seed: u64,
    format: Format,
) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let est = coupled_dn_estimate(params, n, rounds, reps, seed);
    match format {
        Format::Json => print_json("estimate-dn", &est),
        Format::Csv => {
            println!("n,d_hat,se,blocks,seed");
            println!("{},{:.12},{:.12},{},{}", est.n, est.d_hat, est.se, est.blocks, est.seed);
        }
        Format::Table => {
            println!("D_{} estimate: {:.8} (se {:.8})", est.n, est.d_hat, est.se);
            println!("blocks:       {}", est.blocks);
            println!("seed:         {}", est.seed);
        }
    }
    Ok(())
}

fn cmd_graph(regime: &dyn Regime, bounds: &Bounds, dot: Option<&PathBuf>) -> Result<(), CliError> {
    let graph = build_state_graph(regime, bounds.max_n, bounds.node_cap)?;
    let rendered = to_dot(&graph, regime);
    match dot {
        Some(path) => fs::write(path, rendered)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Check { regime, bounds, format } => {
            cmd_check(regime.build()?.as_ref(), bounds, *format)
        }
        Command::Threshold { params, cap, format } => {
            cmd_threshold(&params.build()?, *cap, *format)
        }
        Command::VerifyMpe { regime, params, bounds, format } => {
            cmd_verify_mpe(regime.build()?.as_ref(), &params.build()?, bounds, *format)
        }
        Command::Simulate { regime, params, threshold, rounds, reps, seed, sampled, format } => {
            cmd_simulate(
                regime.build()?.as_ref(),
                &params.build()?,
                *threshold,
                *rounds,
                *reps,
                *seed,
                *sampled,
                *format,
            )
        }
        Command::EstimateDn { params, n, rounds, reps, seed, format } => {
            cmd_estimate_dn(&params.build()?, *n, *rounds, *reps, *seed, *format)
        }
        Command::Graph { regime, bounds, dot } => {
            cmd_graph(regime.build()?.as_ref(), bounds, dot.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) | Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Cap(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
