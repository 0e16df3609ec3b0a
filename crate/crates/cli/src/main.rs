use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmdf_cli::commands::{self, with_threads};
use cmdf_cli::verify::{self, VerifyOptions};
use cmdf_cli::{CliError, CliResult, Scenario};

/// Consensus-on-measurement distributed Kalman filtering: steady-state
/// analysis, Monte Carlo simulation and property checks.
#[derive(Debug, Parser)]
#[command(name = "cmdf", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "CMDF_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady-state gaps per node and depth (gaps.csv) and decay-rate fits (rates.csv).
    Analyze(ScenarioArgs),
    /// Monte Carlo MSE against the steady-state theory (mse.csv).
    Simulate(ScenarioArgs),
    /// Property suites on randomized systems and the built-in scenario.
    Verify(VerifyArgs),
    /// Edge list of the scenario graph (edges.txt) with diameter and SLEM.
    Graph(ScenarioArgs),
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "builtin")]
    scenario: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long, default_value = "reference")]
    builtin: String,
    /// Noise seed for the Monte Carlo trials.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of a generated geometric graph.
    #[arg(long)]
    graph_seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Fusion depth; repeat for several.
    #[arg(long = "L", value_name = "L")]
    depths: Vec<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = verify::DEFAULT_MASTER_SEED)]
    master_seed: u64,
    #[arg(long, default_value_t = verify::DEFAULT_SYSTEMS)]
    systems: usize,
    /// Scale applied to every bound before comparison (harness self-test).
    #[arg(long, default_value_t = 1.0, hide = true)]
    bound_scale: f64,
}

impl ScenarioArgs {
    fn resolve(&self) -> CliResult<Scenario> {
        let mut s = match &self.scenario {
            Some(path) => Scenario::load(path)?,
            None => Scenario::builtin(&self.builtin)?,
        };
        if let Some(seed) = self.seed {
            s.trials.seed = seed;
        }
        if let Some(seed) = self.graph_seed {
            match &mut s.graph {
                cmdf_cli::scenario::GraphSource::Geometric { seed: g, .. } => *g = seed,
                _ => return Err(CliError::Usage("--graph-seed needs a geometric graph".into())),
            }
        }
        if let Some(t) = self.trials {
            s.trials.trials = t;
        }
        if let Some(k) = self.steps {
            s.trials.steps = k;
        }
        if !self.depths.is_empty() {
            s.depths.clone_from(&self.depths);
        }
        if let Some(out) = &self.out {
            s.output.clone_from(out);
        }
        s.validate()?;
        Ok(s)
    }
}

fn run(cli: Cli) -> CliResult<bool> {
    let threads = cli.threads;
    match cli.command {
        Command::Analyze(args) => {
            let s = args.resolve()?;
            let out = with_threads(threads, || commands::analyze(&s))??;
            let gaps = commands::write_output(&s.output, "gaps.csv", &out.gaps_csv)?;
            let rates = commands::write_output(&s.output, "rates.csv", &out.rates_csv)?;
            for (metric, fit) in &out.fits {
                match fit {
                    Some(f) => println!("{:<16} M = {:.4e}  q = {:.6}  residual = {:.4}", metric.name(), f.m, f.q, f.residual),
                    None => println!("{:<16} no fit (gaps at numerical floor)", metric.name()),
                }
            }
            println!("wrote {} and {}", gaps.display(), rates.display());
            Ok(true)
        }
        Command::Simulate(args) => {
            let s = args.resolve()?;
            let csv = with_threads(threads, || commands::simulate(&s))??;
            let path = commands::write_output(&s.output, "mse.csv", &csv)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Verify(args) => {
            let opts = VerifyOptions {
                master_seed: args.master_seed,
                systems: args.systems,
                bound_scale: args.bound_scale,
                builtin: true,
            };
            let report = with_threads(threads, || verify::verify(&opts))??;
            print!("{}", report.render());
            Ok(report.passed())
        }
        Command::Graph(args) => {
            let s = args.resolve()?;
            let out = commands::graph(&s)?;
            let path = commands::write_output(&s.output, "edges.txt", &out.edge_list)?;
            print!("{}", out.summary);
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
