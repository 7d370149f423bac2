//! Steps the reinforcement-learning environment with a constant-fraction
//! policy and prints the rewards.
//!
//! `cargo run --example execution_env -- [fraction]`

use flowexec::env::{EnvConfig, ExecutionEnv};
use flowexec::scenario::ScenarioLabel;

fn main() -> flowexec::Result<()> {
    let frac: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.03);
    let mut env = ExecutionEnv::new(EnvConfig::new(ScenarioLabel::HL.params(0.5)))?;
    let mut obs = env.reset(11);
    let mut total = 0.0;
    while !env.is_done() {
        let k = env.step_index();
        let r = env.step(frac)?;
        total += r.reward;
        if k % 20 == 0 || r.done {
            println!(
                "step {k:>3}: obs [{:.3} {:.3} {:.3} {:.3}] sold {:>8.1} reward {:+.5}",
                obs.time_left_frac, obs.inv_frac, obs.log_price, obs.log_vol, r.info.shares, r.reward
            );
        }
        obs = r.obs;
    }
    println!("episode return {total:.4}, shortfall {:.2}", env.shortfall());
    Ok(())
}
