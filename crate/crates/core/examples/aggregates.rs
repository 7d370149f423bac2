//! Cross-path mean trajectories (inventory, price, cash, volatility and
//! trading rate) for one strategy, written as CSV to stdout.
//!
//! `cargo run --release --example aggregates -- [strategy] [paths]`

use std::sync::Arc;

use flowexec::eval::{emit_aggregates, simulate_paths, Contender, EvalConfig};
use flowexec::experts::Strategy;
use flowexec::scenario::ScenarioLabel;

fn main() -> flowexec::Result<()> {
    let mut args = std::env::args().skip(1);
    let strategy: Strategy = args.next().as_deref().unwrap_or("vwap").parse()?;
    let n_paths = args.next().and_then(|s| s.parse().ok()).unwrap_or(2_000);
    let p = ScenarioLabel::HH.params(0.5);
    let c = Contender::new(strategy.name(), Arc::from(strategy.analytic_rule(&p)?));
    let trajs = simulate_paths(&p, &c, &EvalConfig { n_paths, ..Default::default() })?;
    emit_aggregates(&trajs)?.write_csv(std::io::stdout().lock())
}
