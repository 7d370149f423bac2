//! Imitates the Heston-optimal expert with a shortcut flow policy and
//! compares few-step inference against the expert on held-out paths.
//!
//! `cargo run --release --example train_flow -- [train_steps]`

use std::sync::Arc;

use flowexec::datagen::{collect, GridSpec};
use flowexec::eval::{run_monte_carlo, Contender, EvalConfig};
use flowexec::experts::Strategy;
use flowexec::flow::{train_flow, FlowConfig, FlowRule};

fn main() -> flowexec::Result<()> {
    env_logger::init();
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3_000);
    let grid = GridSpec {
        mu: vec![0.0],
        sqrt_v0: vec![0.2],
        xi: vec![0.2],
        beta: vec![0.5],
        sqrt_theta: 0.2,
        eta: 1e-5,
        epsilon: 2e-5,
        strategies: vec![Strategy::HestonOptimal],
        episodes_per_cell: 500,
        ..Default::default()
    };
    let ds = collect(&grid, None, 4)?;
    let cfg = FlowConfig {
        steps,
        ..Default::default()
    };
    let (policy, log) = train_flow(&ds.flow_data(|_| true), &cfg)?;
    if let Some((step, loss)) = log.losses.last() {
        println!("trained on {} pairs; loss {loss:.4} at step {step}", ds.rows.len() - ds.episodes.len());
    }

    let p = ds.cells[0].params.clone();
    let policy = Arc::new(policy);
    let mut contenders = vec![Contender::new("heston_optimal", Arc::from(Strategy::HestonOptimal.analytic_rule(&p)?))];
    for m in [1, 2, 4, 8] {
        contenders.push(Contender::new(format!("shortcut M={m}"), Arc::new(FlowRule::new(policy.clone(), m))));
    }
    let eval = EvalConfig {
        n_paths: 2_000,
        base_seed: 31_337,
        ..Default::default()
    };
    for cell in run_monte_carlo("LL", &p, &contenders, &eval)? {
        println!("{:>16}: mean IS {:>9.0}  std {:>9.0}  AC {:>9.0}", cell.row.strategy, cell.metrics.mean, cell.metrics.std, cell.metrics.ac);
    }
    Ok(())
}
