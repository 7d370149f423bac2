//! Trains a PPO liquidation agent in the execution environment and compares
//! its episode return with uniform selling on shared seeds.
//!
//! `cargo run --release --example train_ppo -- [env_steps]`

use flowexec::env::EnvConfig;
use flowexec::eval::{compute_metrics, pooled_se};
use flowexec::ppo::{evaluate_env, train_ppo, twap_env_rewards, PpoConfig};
use flowexec::rng::NoiseMode;
use flowexec::scenario::ScenarioLabel;

fn main() -> flowexec::Result<()> {
    env_logger::init();
    let total_steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let env = EnvConfig::price_level(ScenarioLabel::HH.params(0.5));
    let cfg = PpoConfig {
        total_steps,
        ..Default::default()
    };
    let (policy, log) = train_ppo(&cfg, &env, 42)?;
    for it in &log.iterations {
        if let Some(val) = it.validation_reward {
            println!("{:>7} steps: rollout return {:.5}, validation {val:.5}", it.env_steps, it.mean_episode_reward);
        }
    }
    println!("best validation return {:.5} after {} steps", log.best_validation_reward, log.best_env_steps);

    let seeds: Vec<u64> = (0..1_000u64).map(|i| 9_000_000 + i).collect();
    let ppo = compute_metrics(&evaluate_env(&policy, &env, &seeds)?, 0.0, NoiseMode::Independent);
    let twap = compute_metrics(&twap_env_rewards(&env, &seeds)?, 0.0, NoiseMode::Independent);
    println!(
        "held-out return: PPO {:.5} (se {:.1e}), TWAP {:.5} (se {:.1e}), gap {:.1} SE",
        ppo.mean,
        ppo.se_mean,
        twap.mean,
        twap.se_mean,
        (ppo.mean - twap.mean) / pooled_se(ppo.se_mean, twap.se_mean)
    );
    Ok(())
}
