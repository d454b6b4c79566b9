//! `aware`: run simulation scenarios and query the predictor and optimizer.
//!
//! Exit codes: 0 success, 2 invalid input, 3 invariant violation during a
//! run, 4 exhaustive search over budget.

mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aware_core::optimizer::{search, SaParams, SearchRequest, Strategy, DEFAULT_EXHAUSTIVE_BUDGET};
use aware_core::predictor::{Predictor, DEFAULT_ROUNDS};
use aware_core::simnet::{self, Fixture, RunError, Scenario};
use aware_core::{LatencyMatrix, SystemShape, WeightConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "aware", version, about = "Weighted BFT consensus simulator and configuration optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write CSV metrics and a summary.
    Run {
        scenario: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict the consensus latency of one configuration, or rank all of them.
    Predict {
        #[command(flatten)]
        input: MatrixArgs,
        /// Configuration as `leader:vmax,vmax,...`.
        #[arg(long, conflicts_with = "all", required_unless_present = "all")]
        config: Option<String>,
        /// Rank every configuration.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = DEFAULT_ROUNDS)]
        rounds: usize,
    },
    /// Search for the configuration with the lowest predicted latency.
    Search {
        #[command(flatten)]
        input: MatrixArgs,
        #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Starting configuration for annealing; defaults to leader 0 and the next ids.
        #[arg(long)]
        current: Option<String>,
        #[arg(long, default_value_t = DEFAULT_ROUNDS)]
        rounds: usize,
    },
    /// Count the weight configurations of a system size.
    Count {
        #[arg(long)]
        f: usize,
        #[arg(long)]
        delta: usize,
    },
}

#[derive(Args)]
struct MatrixArgs {
    /// Latency matrix: JSON array of rows, fixture JSON, or CSV with a label header.
    matrix: PathBuf,
    #[arg(long)]
    f: usize,
    #[arg(long)]
    delta: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Auto,
    Exhaustive,
    Annealing,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Auto => Strategy::Auto,
            StrategyArg::Exhaustive => Strategy::Exhaustive,
            StrategyArg::Annealing => Strategy::Annealing,
        }
    }
}

enum Failure {
    Invalid(String),
    Invariant(String),
    Budget(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Invariant(_) => 3,
            Failure::Budget(_) => 4,
        }
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure::Invalid(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("AWARE_SIM_THREADS") {
        match threads.parse::<usize>() {
            Ok(t) if t > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            }
            _ => {
                eprintln!("error: AWARE_SIM_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let result = match cli.command {
        Command::Run { scenario, out, seed } => cmd_run(&scenario, &out, seed),
        Command::Predict {
            input,
            config,
            all,
            rounds,
        } => cmd_predict(&input, config.as_deref(), all, rounds),
        Command::Search {
            input,
            strategy,
            seed,
            current,
            rounds,
        } => cmd_search(&input, strategy.into(), seed, current.as_deref(), rounds),
        Command::Count { f, delta } => cmd_count(f, delta),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            match &failure {
                Failure::Invalid(m) | Failure::Budget(m) => eprintln!("error: {m}"),
                Failure::Invariant(m) => eprintln!("invariant violation: {m}"),
            }
            ExitCode::from(failure.code())
        }
    }
}

fn cmd_run(path: &Path, out: &Path, seed: Option<u64>) -> Result<String, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut scenario = Scenario::from_json(&text).map_err(invalid)?;
    if let Some(seed) = seed {
        scenario.run.seed = seed;
    }
    let log = match simnet::run(&scenario) {
        Ok(log) => log,
        Err(RunError::Scenario(e)) => return Err(invalid(e)),
        Err(e @ RunError::Invariant { .. }) => return Err(Failure::Invariant(e.to_string())),
    };
    let summary = report::summary(&path.display().to_string(), scenario.run.seed, &log);
    report::write_all(out, &log, &summary).map_err(|e| invalid(format!("{}: {e}", out.display())))?;
    Ok(summary)
}

fn load_matrix(input: &MatrixArgs) -> Result<(SystemShape, LatencyMatrix), Failure> {
    let shape = SystemShape::derive(input.f, input.delta).map_err(invalid)?;
    let path = &input.matrix;
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let matrix = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        LatencyMatrix::from_csv(&text).map_err(invalid)?.1
    } else {
        match serde_json::from_str::<LatencyMatrix>(&text) {
            Ok(m) => m,
            Err(_) => serde_json::from_str::<Fixture>(&text).map_err(invalid)?.matrix_ms,
        }
    };
    matrix.validate().map_err(invalid)?;
    if matrix.n() != shape.n() {
        return Err(invalid(format!(
            "matrix is {0}x{0} but f = {1}, delta = {2} needs n = {3}",
            matrix.n(),
            input.f,
            input.delta,
            shape.n()
        )));
    }
    Ok((shape, matrix))
}

fn cmd_predict(input: &MatrixArgs, config: Option<&str>, all: bool, rounds: usize) -> Result<String, Failure> {
    let (shape, m) = load_matrix(input)?;
    if rounds == 0 {
        return Err(invalid("--rounds must be at least 1"));
    }
    let mut out = String::new();
    if all {
        let configs = shape.enumerate_configurations(&shape.all_replicas()).map_err(invalid)?;
        let predicted: Vec<f64> = configs
            .par_iter()
            .map_init(Predictor::new, |p, c| p.predict(&shape, c, &m, &m, rounds))
            .collect();
        let mut ranked: Vec<usize> = (0..configs.len()).collect();
        ranked.sort_by(|&a, &b| predicted[a].total_cmp(&predicted[b]).then(a.cmp(&b)));
        writeln!(out, "{:>6}  {:<24} {:>14}", "rank", "config", "predicted_ms").unwrap();
        for (rank, &i) in ranked.iter().enumerate() {
            writeln!(out, "{:>6}  {:<24} {:>14.3}", rank + 1, configs[i].to_string(), predicted[i]).unwrap();
        }
        return Ok(out);
    }
    let config = WeightConfig::parse(&shape, config.expect("clap requires --config without --all")).map_err(invalid)?;
    let mut p = Predictor::new();
    let predicted = p.predict(&shape, &config, &m, &m, rounds);
    let trace = p.first_round(&shape, &config, &m, &m);
    writeln!(out, "config: {config}").unwrap();
    writeln!(out, "predicted_ms: {predicted:.3}").unwrap();
    writeln!(out, "round 1 stage times (ms):").unwrap();
    writeln!(out, "{:>8} {:>12} {:>12} {:>12}", "replica", "proposed", "written", "accepted").unwrap();
    for i in 0..shape.n() {
        writeln!(
            out,
            "{:>8} {:>12.3} {:>12.3} {:>12.3}",
            i, trace.proposed[i], trace.written[i], trace.accepted[i]
        )
        .unwrap();
    }
    Ok(out)
}

fn cmd_search(
    input: &MatrixArgs,
    strategy: Strategy,
    seed: u64,
    current: Option<&str>,
    rounds: usize,
) -> Result<String, Failure> {
    let (shape, m) = load_matrix(input)?;
    if rounds == 0 {
        return Err(invalid("--rounds must be at least 1"));
    }
    let current = match current {
        Some(text) => WeightConfig::parse(&shape, text).map_err(invalid)?,
        None => {
            let r_max: Vec<usize> = (0..shape.max_holders()).collect();
            WeightConfig::new(&shape, 0, &r_max).map_err(invalid)?
        }
    };
    let candidates = shape.all_replicas();
    let req = SearchRequest {
        shape: &shape,
        m_p: &m,
        m_w: &m,
        current: &current,
        leader_candidates: &candidates,
        rounds,
        seed,
        sa: SaParams::default(),
        budget: DEFAULT_EXHAUSTIVE_BUDGET,
    };
    let outcome = search(&req, strategy).map_err(|e| match e {
        aware_core::optimizer::OptimizerError::BudgetExceeded { .. } => {
            Failure::Budget(format!("{e} (pass --strategy annealing)"))
        }
        other => invalid(other),
    })?;
    Ok(format!(
        "best: {}\npredicted_ms: {:.3}\nprobed: {}\n",
        outcome.best.config, outcome.best.predicted, outcome.probes
    ))
}

fn cmd_count(f: usize, delta: usize) -> Result<String, Failure> {
    let shape = SystemShape::derive(f, delta).map_err(invalid)?;
    Ok(format!("{}\n", shape.count_configurations()))
}
