//! Property tests for the simulator, environment, experts, codecs and
//! pipeline plumbing.

use std::sync::Arc;

use flowexec::config::{apply_override, PipelineConfig};
use flowexec::datagen::{collect, GridSpec};
use flowexec::env::{EnvConfig, ExecutionEnv};
use flowexec::eval::{compute_metrics, shortfall_samples, Contender, EvalConfig};
use flowexec::experts::schedules::vwap_weight;
use flowexec::experts::{heston_optimal_rate, Strategy};
use flowexec::flow::{sample_dt_pair, ActionTransform, AffineCodec};
use flowexec::market::{execution_price, simulate_path, MarketParams, PathState};
use flowexec::neural::checkpoint::Checkpoint;
use flowexec::neural::{Mlp, NetSpec};
use flowexec::ppo::clipped_surrogate;
use flowexec::rng::{episode_seed, path_rng, NoiseMode, PathNoise};
use flowexec::scenario::ScenarioLabel;
use proptest::prelude::*;
// The glob import's `Strategy` is shadowed by the trading-strategy enum.
use proptest::strategy::Strategy as PropStrategy;

const ANALYTIC: [Strategy; 5] =
    [Strategy::Twap, Strategy::Vwap, Strategy::AcApprox, Strategy::HestonOptimal, Strategy::StateDependent];

fn market() -> impl PropStrategy<Value = MarketParams> {
    (
        prop::sample::select(ScenarioLabel::ALL.to_vec()),
        0.1f64..=1.0,
        -0.05f64..0.05,
        0.0f64..1.0,
        10usize..120,
    )
        .prop_map(|(sc, beta, mu, xi, n)| MarketParams {
            mu,
            xi,
            n_steps: n,
            ..sc.params(beta)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trajectories_conserve_shares_and_cash(p in market(), seed in any::<u64>(), si in 0usize..5) {
        let rule = ANALYTIC[si].analytic_rule(&p).unwrap();
        let traj = simulate_path(&p, rule.as_ref(), seed).unwrap();
        prop_assert_eq!(traj.steps.len(), p.n_steps);
        let sold = traj.total_shares();
        prop_assert!((sold - p.x0).abs() <= 1e-9 * p.x0);
        prop_assert_eq!(traj.final_inventory(), 0.0);
        let proceeds: f64 = traj.steps.iter().map(|s| s.x * s.exec_price).sum();
        prop_assert!((traj.shortfall + proceeds - p.x0 * p.s0).abs() <= 1e-9 * p.x0 * p.s0);
        for s in &traj.steps {
            prop_assert!(s.v >= 0.0);
            prop_assert!((0.0..=p.x0).contains(&s.q));
            prop_assert!(s.cash.is_finite());
        }
        let again = simulate_path(&p, rule.as_ref(), seed).unwrap();
        prop_assert_eq!(traj, again);
    }

    #[test]
    fn linear_impact_at_beta_one(s in 1.0f64..500.0, nu in 0.0f64..1e6, eps in 0.0f64..1e-3) {
        let p = MarketParams { beta: 1.0, epsilon: eps, ..MarketParams::default() };
        prop_assert_eq!(execution_price(s, nu, &p), s - eps * nu);
    }

    #[test]
    fn env_episode_invariants(
        beta in 0.1f64..=1.0,
        sc in prop::sample::select(ScenarioLabel::ALL.to_vec()),
        actions in prop::collection::vec(prop_oneof![-0.5f64..1.5, Just(1.0 - 1e-5), Just(1.0 - 1e-9)], 100),
        seed in any::<u64>(),
    ) {
        let mut env = ExecutionEnv::new(EnvConfig::new(sc.params(beta))).unwrap();
        let mut obs = env.reset(seed);
        let mut cash = 0.0;
        let mut steps = 0;
        let mut done = false;
        for a in actions {
            prop_assert!((0.0..=1.0).contains(&obs.time_left_frac));
            prop_assert!((0.0..=1.0).contains(&obs.inv_frac));
            if done {
                break;
            }
            let r = env.step(a).unwrap();
            steps += 1;
            cash += r.info.exec_price * r.info.shares;
            // The reward's cost component is `-cost / (X0 S0) * 100`.
            prop_assert!(r.info.cost >= 0.0);
            prop_assert!(r.obs.to_array().iter().all(|x| x.is_finite()));
            done = r.done;
            prop_assert_eq!(done, env.is_done());
            obs = r.obs;
        }
        prop_assert!(done);
        prop_assert!(steps <= env.config().market.n_steps);
        let st = env.state();
        prop_assert_eq!(st.q, 0.0);
        prop_assert!((st.cash - cash).abs() <= 1e-9 * st.cash.abs().max(1.0));
    }

    #[test]
    fn heston_optimal_at_long_run_variance(q in 1.0f64..1e5, t in 0.0f64..0.94, beta in 0.1f64..=1.0) {
        let p = MarketParams { xi: 0.0, beta, ..ScenarioLabel::HH.params(beta) };
        let state = PathState { t, s: p.s0, v: p.theta, q, cash: 0.0 };
        prop_assert_eq!(heston_optimal_rate(&state, &p), (1.0 + beta) * q / (p.horizon - t));
    }

    #[test]
    fn action_codec_round_trip(a in 1e-4f64..(1.0 - 1e-4), mean in -5.0f64..5.0, scale in 1e-3f64..10.0) {
        let codec = AffineCodec { mean: vec![mean], scale: vec![scale] };
        for tr in [ActionTransform::Identity, ActionTransform::Logit] {
            let z = codec.encode_at(0, tr.forward(a));
            let back = tr.inverse(codec.decode_at(0, z));
            prop_assert!((back - a).abs() < 1e-9, "{:?}: {} -> {}", tr, a, back);
        }
    }

    #[test]
    fn clipped_objective_bound(ratio in 0.0f64..5.0, adv in -10.0f64..10.0, clip in 0.01f64..0.99) {
        let s = clipped_surrogate(ratio, adv, clip);
        prop_assert!(s <= (ratio * adv).max(ratio.clamp(1.0 - clip, 1.0 + clip) * adv));
        prop_assert!(s <= ratio * adv);
    }

    #[test]
    fn step_pairs_on_dyadic_grid(seed in any::<u64>()) {
        let mut rng = path_rng(seed, 0);
        for _ in 0..64 {
            let (d, t) = sample_dt_pair(&mut rng);
            let m = (1.0 / d).log2();
            prop_assert!(m.fract() == 0.0 && (1.0..=7.0).contains(&m));
            prop_assert!(t >= 0.0 && t + d <= 1.0);
            prop_assert_eq!((t / d).fract(), 0.0);
        }
    }

    #[test]
    fn episode_seeds_injective(base in any::<u64>(), a in (0u32..64, 0u32..u32::MAX), b in (0u32..64, 0u32..u32::MAX)) {
        prop_assume!(a != b);
        prop_assert_ne!(episode_seed(base, a.0, a.1), episode_seed(base, b.0, b.1));
    }

    #[test]
    fn antithetic_pairs_mirror(seed in any::<u64>(), j in 0u64..1_000, rho in -1.0f64..=1.0) {
        let even = PathNoise::generate(seed, 2 * j, 20, rho, NoiseMode::Antithetic);
        let odd = PathNoise::generate(seed, 2 * j + 1, 20, rho, NoiseMode::Antithetic);
        for (a, b) in even.shocks.iter().zip(&odd.shocks) {
            prop_assert_eq!((a.0, a.1), (-b.0, -b.1));
        }
        prop_assert_eq!(even, PathNoise::generate(seed, j, 20, rho, NoiseMode::Independent));
    }

    #[test]
    fn ac_identity(xs in prop::collection::vec(-1e6f64..1e6, 2..200), lambda in 0.0f64..1e-3) {
        let m = compute_metrics(&xs, lambda, NoiseMode::Independent);
        prop_assert_eq!(m.ac, m.mean + lambda * m.std * m.std);
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), hidden in 1usize..32, depth in 1usize..4) {
        let mut rng = path_rng(seed, 0);
        let net = Mlp::init(NetSpec::mlp(5, hidden, depth, 2), &mut rng, 1.0);
        let ck = Checkpoint::new("test", serde_json::json!({"seed": seed})).with_net("net", &net, None);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        let x = [0.1, -0.2, 0.3, 0.4, -0.5];
        prop_assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn override_round_trip(n in 2usize..100_000, lam in 0.0f64..1.0, seed in any::<u32>()) {
        let mut tree = PipelineConfig::default().to_tree();
        apply_override(&mut tree, &format!("eval.n_paths={}", 2 * n)).unwrap();
        apply_override(&mut tree, &format!("env.lambda_risk={lam:e}")).unwrap();
        apply_override(&mut tree, &format!("simulate.seed={seed}")).unwrap();
        let cfg = PipelineConfig::from_tree(tree).unwrap();
        prop_assert_eq!(cfg.eval.n_paths, 2 * n);
        prop_assert_eq!(cfg.env.lambda_risk, lam);
        prop_assert_eq!(cfg.simulate.seed, seed as u64);
        prop_assert_eq!(PipelineConfig::from_tree(cfg.to_tree()).unwrap().to_tree(), cfg.to_tree());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn episode_offsets_partition_rows(eps in 1usize..6, betas in prop::sample::subsequence(vec![0.3, 0.5, 0.8], 1..=3), seed in any::<u32>()) {
        let grid = GridSpec {
            mu: vec![0.0],
            sqrt_v0: vec![0.3],
            xi: vec![0.3],
            beta: betas,
            episodes_per_cell: eps,
            base_seed: seed as u64,
            ..Default::default()
        };
        let ds = collect(&grid, None, 1).unwrap();
        ds.validate().unwrap();
        let mut next = 0u64;
        for e in &ds.episodes {
            prop_assert_eq!(e.offset, next);
            next += e.len as u64;
        }
        prop_assert_eq!(next as usize, ds.rows.len());
        prop_assert_eq!(ds.episodes.len(), grid.n_episodes());
    }

    #[test]
    fn evaluation_independent_of_workers(seed in any::<u64>(), workers in 2usize..6, si in 0usize..5) {
        let p = ScenarioLabel::HL.params(0.5);
        let s = ANALYTIC[si];
        let c = Contender::new(s.name(), Arc::from(s.analytic_rule(&p).unwrap()));
        let cfg = EvalConfig { n_paths: 64, base_seed: seed, noise: NoiseMode::Antithetic, workers: 1 };
        let one = shortfall_samples(&p, &c, &cfg).unwrap();
        let many = shortfall_samples(&p, &c, &EvalConfig { workers, ..cfg }).unwrap();
        prop_assert_eq!(one, many);
    }
}

#[test]
fn vwap_weights_u_shaped() {
    for n in [2usize, 3, 10, 100, 101, 1000] {
        let w: Vec<f64> = (0..n).map(|k| vwap_weight(k, n)).collect();
        let total: f64 = w.iter().sum();
        let norm: Vec<f64> = w.iter().map(|x| x / total).collect();
        assert!((norm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(norm.iter().all(|x| *x > 0.0));
        if n > 2 {
            let argmin = (0..n).min_by(|&a, &b| norm[a].total_cmp(&norm[b])).unwrap();
            assert!(argmin > 0 && argmin < n - 1, "n = {n}");
        }
    }
}
