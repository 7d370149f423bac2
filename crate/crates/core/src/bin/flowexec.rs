//! Command-line entry point for the execution pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use flowexec::cli::{self, exit_code};
use flowexec::config::{apply_override, PipelineConfig};
use flowexec::experts::Strategy;
use flowexec::scenario::ScenarioLabel;
use flowexec::{Error, Result};

#[derive(Parser)]
#[command(name = "flowexec", version, about = "Optimal execution under Heston dynamics: simulate, collect, train, evaluate")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config file merged over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `market.beta=0.8`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (default: runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the command's random streams.
    #[arg(long, env = "FLOWEXEC_SEED", global = true)]
    seed: Option<u64>,
    /// Worker threads for path- and cell-level parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path and write its trajectory.
    Simulate {
        #[arg(long)]
        scenario: Option<ScenarioLabel>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Collect expert demonstrations over the parameter grid.
    Collect {
        /// Also export the rows as dataset.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Train PPO agents on the execution environment.
    TrainPpo {
        #[arg(long)]
        scenario: Option<ScenarioLabel>,
    },
    /// Train a shortcut flow policy on a collected dataset.
    TrainFlow {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Monte Carlo evaluation with common random numbers.
    Evaluate {
        /// Monte Carlo paths per cell (even under antithetic sampling).
        #[arg(long)]
        paths: Option<usize>,
        /// Impact exponent; repeatable.
        #[arg(long)]
        beta: Vec<f64>,
        /// Strategy to evaluate; repeatable.
        #[arg(long)]
        strategy: Vec<Strategy>,
    },
    /// Render tables from an evaluation directory.
    Report {
        /// Directory holding report.csv.
        #[arg(long)]
        input: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Collect { .. } => "collect",
            Command::TrainPpo { .. } => "train-ppo",
            Command::TrainFlow { .. } => "train-flow",
            Command::Evaluate { .. } => "evaluate",
            Command::Report { .. } => "report",
        }
    }

    /// Config keys set by this command's flags, applied before overrides.
    fn flag_patch(&self, tree: &Value, seed: Option<u64>) -> Vec<(&'static str, Value)> {
        let mut patch = Vec::new();
        match self {
            Command::Simulate { scenario, strategy, beta } => {
                if scenario.is_some() || beta.is_some() {
                    let sc = scenario.unwrap_or_else(|| serde_json::from_value(tree["scenario"].clone()).unwrap());
                    let b = beta.unwrap_or_else(|| tree["market"]["beta"].as_f64().unwrap_or(0.5));
                    patch.push(("scenario", json!(sc)));
                    patch.push(("market", serde_json::to_value(sc.params(b)).unwrap()));
                }
                if let Some(s) = strategy {
                    patch.push(("simulate.strategy", json!(s)));
                }
                if let Some(s) = seed {
                    patch.push(("simulate.seed", json!(s)));
                }
            }
            Command::Collect { .. } => {
                if let Some(s) = seed {
                    patch.push(("grid.base_seed", json!(s)));
                }
            }
            Command::TrainPpo { scenario } => {
                if let Some(sc) = scenario {
                    patch.push(("ppo_train.scenarios", json!([sc])));
                }
                if let Some(s) = seed {
                    patch.push(("ppo_train.seed", json!(s)));
                }
            }
            Command::TrainFlow { dataset } => {
                if let Some(d) = dataset {
                    patch.push(("flow_data.dataset", json!(d)));
                }
                if let Some(s) = seed {
                    patch.push(("flow.seed", json!(s)));
                }
            }
            Command::Evaluate { paths, beta, strategy } => {
                if let Some(n) = paths {
                    patch.push(("eval.n_paths", json!(n)));
                }
                if !beta.is_empty() {
                    patch.push(("eval.betas", json!(beta)));
                }
                if !strategy.is_empty() {
                    patch.push(("eval.strategies", json!(strategy)));
                }
                if let Some(s) = seed {
                    patch.push(("eval.base_seed", json!(s)));
                }
            }
            Command::Report { .. } => {}
        }
        patch
    }
}

fn set(tree: &mut Value, key: &str, value: Value) {
    let mut node = tree;
    for part in key.split('.') {
        node = &mut node[part];
    }
    *node = value;
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let mut tree = PipelineConfig::file_tree(cli.global.config.as_deref())?;
    for (key, value) in cli.command.flag_patch(&tree, cli.global.seed) {
        set(&mut tree, key, value);
    }
    if let Some(w) = cli.global.workers {
        set(&mut tree, "workers", json!(w));
    }
    for o in &cli.global.overrides {
        apply_override(&mut tree, o)?;
    }
    PipelineConfig::from_tree(tree)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    let out = cli
        .global
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    match &cli.command {
        Command::Simulate { .. } => {
            let s = cli::cmd_simulate(&cfg, &out)?;
            println!(
                "{} {} beta={} seed={}: IS = {:.2} (final inventory {})",
                s.scenario, s.strategy, s.beta, s.seed, s.shortfall, s.final_inventory
            );
        }
        Command::Collect { csv } => {
            let s = cli::cmd_collect(&cfg, &out, *csv)?;
            println!("{} cells, {} episodes, {} rows -> {}", s.cells, s.episodes, s.rows, out.display());
        }
        Command::TrainPpo { .. } => {
            for s in cli::cmd_train_ppo(&cfg, &out)? {
                println!(
                    "{}: best validation reward {:.6} at {} steps -> {}",
                    s.scenario,
                    s.best_validation_reward,
                    s.best_env_steps,
                    s.checkpoint.display()
                );
            }
        }
        Command::TrainFlow { .. } => {
            let s = cli::cmd_train_flow(&cfg, &out)?;
            println!("{} pairs, final loss {:.5} -> {}", s.pairs, s.final_loss, s.checkpoint.display());
        }
        Command::Evaluate { .. } => {
            let s = cli::cmd_evaluate(&cfg, &out)?;
            for t in &s.tables {
                println!("{t}");
            }
            println!("{} cells -> {}", s.rows.len(), out.join(cli::REPORT_CSV).display());
        }
        Command::Report { input } => {
            let s = cli::cmd_report(&cfg, input, &out)?;
            for t in &s.tables {
                println!("{t}");
            }
            println!("AC identity max error: {:e}", s.max_ac_identity_error);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::MissingArtifact(p) = e.root() {
                eprintln!("missing artifact: {}", p.display());
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
