//! Simulates one liquidation path under the high-volatility, high-impact
//! regime and prints every tenth step.
//!
//! `cargo run --example simulate_path -- [seed]`

use flowexec::experts::Strategy;
use flowexec::market::simulate_path;
use flowexec::scenario::ScenarioLabel;

fn main() -> flowexec::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let p = ScenarioLabel::HH.params(0.5);
    let rule = Strategy::HestonOptimal.analytic_rule(&p)?;
    let traj = simulate_path(&p, rule.as_ref(), seed)?;

    println!("{:>4} {:>6} {:>9} {:>8} {:>9} {:>9}", "k", "t", "S", "sqrt V", "sold", "left");
    for s in traj.steps.iter().step_by(10).chain(traj.steps.last()) {
        println!("{:>4} {:>6.2} {:>9.3} {:>8.4} {:>9.1} {:>9.1}", s.k, s.t, s.s, s.v.sqrt(), s.x, s.q);
    }
    println!("implementation shortfall: {:.2}", traj.shortfall);
    Ok(())
}
