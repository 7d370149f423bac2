//! Monte Carlo comparison of the analytic strategies on common random
//! numbers, for every regime at one impact exponent.
//!
//! `cargo run --release --example compare_experts -- [paths] [beta]`

use std::sync::Arc;

use flowexec::eval::{run_monte_carlo, scenario_table, Contender, EvalConfig};
use flowexec::experts::Strategy;
use flowexec::scenario::ScenarioLabel;

fn main() -> flowexec::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_paths = args.next().and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let beta = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let cfg = EvalConfig {
        n_paths,
        ..Default::default()
    };

    let mut rows = Vec::new();
    for sc in ScenarioLabel::ALL {
        let p = sc.params(beta);
        let contenders = [Strategy::Twap, Strategy::Vwap, Strategy::AcApprox, Strategy::HestonOptimal]
            .into_iter()
            .map(|s| Ok(Contender::new(s.name(), Arc::from(s.analytic_rule(&p)?))))
            .collect::<flowexec::Result<Vec<_>>>()?;
        for cell in run_monte_carlo(sc.name(), &p, &contenders, &cfg)? {
            rows.push(cell.row);
        }
    }
    print!("{}", scenario_table(&rows, beta)?.to_text());
    Ok(())
}
