//! Pipeline commands behind the `flowexec` binary.
//!
//! Each command takes a resolved [`PipelineConfig`] and an output directory,
//! writes its artifacts plus a `config.json` echo there, and returns a short
//! summary. Outputs depend only on the configuration, never on the worker
//! count.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::datagen::{collect, read_dataset, write_dataset};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::{
    emit_aggregates, read_report_csv, run_monte_carlo, scenario_table, simulate_paths, twap_implied_shortfall,
    write_report_csv, Contender, ReportRow,
};
use crate::experts::Strategy;
use crate::flow::{train_flow, FlowPolicy, FlowRule};
use crate::market::{simulate_path, MarketParams, TradingRule};
use crate::ppo::{train_ppo, GaussianPolicy, PpoRegistry, PpoRule};
use crate::scenario::ScenarioLabel;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SIMULATION: i32 = 3;
pub const EXIT_MISSING_ARTIFACT: i32 = 4;

pub const REPORT_CSV: &str = "report.csv";
pub const PPO_REGISTRY: &str = "ppo_checkpoints.json";
pub const FLOW_CHECKPOINT: &str = "flow.ckpt";

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) | Error::InvalidParams(_) | Error::UnknownStrategy { .. } => EXIT_CONFIG,
        Error::MissingArtifact(_) | Error::MissingCheckpoint(_) => EXIT_MISSING_ARTIFACT,
        _ => EXIT_SIMULATION,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn beta_tag(beta: f64) -> String {
    format!("beta{beta}")
}

/// Loads learned policies on demand for rule construction.
pub struct RuleFactory<'a> {
    cfg: &'a PipelineConfig,
    flow: Option<Arc<FlowPolicy>>,
    ppo: Option<PpoRegistry>,
}

impl<'a> RuleFactory<'a> {
    pub fn new(cfg: &'a PipelineConfig) -> Self {
        RuleFactory {
            cfg,
            flow: None,
            ppo: None,
        }
    }

    fn flow_policy(&mut self) -> Result<Arc<FlowPolicy>> {
        if self.flow.is_none() {
            let path = self.cfg.artifacts.flow_checkpoint.as_ref().ok_or_else(|| {
                Error::MissingCheckpoint("shortcut strategy needs artifacts.flow_checkpoint".into())
            })?;
            self.flow = Some(Arc::new(FlowPolicy::load(path)?));
        }
        Ok(self.flow.clone().unwrap())
    }

    fn registry(&mut self) -> Result<&PpoRegistry> {
        if self.ppo.is_none() {
            let path = self.cfg.artifacts.ppo_registry.as_ref().ok_or_else(|| {
                Error::MissingCheckpoint("ppo strategy needs artifacts.ppo_registry".into())
            })?;
            self.ppo = Some(PpoRegistry::load(path)?);
        }
        Ok(self.ppo.as_ref().unwrap())
    }

    /// Rule for `strategy` on market `p`; `flow_steps` picks the shortcut's M.
    pub fn rule(&mut self, strategy: Strategy, p: &MarketParams, flow_steps: Option<usize>) -> Result<Arc<dyn TradingRule>> {
        match strategy {
            Strategy::Shortcut => {
                let policy = self.flow_policy()?;
                let m = flow_steps.unwrap_or(policy.config.inference_steps);
                Ok(Arc::new(FlowRule::new(policy, m)))
            }
            Strategy::Ppo => {
                let (label, path) = self.registry()?.resolve(ScenarioLabel::nearest(p))?;
                log::info!("ppo: using the {label} checkpoint {}", path.display());
                Ok(Arc::new(PpoRule::new(Arc::new(GaussianPolicy::load(path)?))))
            }
            s => Ok(Arc::from(s.analytic_rule(p)?)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub scenario: ScenarioLabel,
    pub strategy: Strategy,
    pub beta: f64,
    pub seed: u64,
    pub shortfall: f64,
    pub final_inventory: f64,
}

pub fn cmd_simulate(cfg: &PipelineConfig, out: &Path) -> Result<SimulateSummary> {
    cfg.echo(out)?;
    let s = &cfg.simulate;
    let rule = RuleFactory::new(cfg).rule(s.strategy, &cfg.market, s.flow_steps)?;
    let traj = simulate_path(&cfg.market, rule.as_ref(), s.seed)
        .map_err(|e| e.context(format!("simulating {} with seed {}", s.strategy, s.seed)))?;
    traj.write_csv(BufWriter::new(File::create(out.join("trajectory.csv"))?))?;
    let summary = SimulateSummary {
        scenario: cfg.scenario,
        strategy: s.strategy,
        beta: cfg.market.beta,
        seed: s.seed,
        shortfall: traj.shortfall,
        final_inventory: traj.final_inventory(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub cells: usize,
    pub episodes: usize,
    pub rows: usize,
}

/// Collects the grid into `out`, spot-checks 100 rows and optionally exports CSV.
pub fn cmd_collect(cfg: &PipelineConfig, out: &Path, export_csv: bool) -> Result<CollectSummary> {
    cfg.echo(out)?;
    let registry_path = cfg.grid.ppo_checkpoints.as_ref().or(cfg.artifacts.ppo_registry.as_ref());
    let registry = match (cfg.grid.strategies.contains(&Strategy::Ppo), registry_path) {
        (true, Some(p)) => Some(PpoRegistry::load(p)?),
        _ => None,
    };
    let ds = collect(&cfg.grid, registry.as_ref(), cfg.workers)?;
    ds.spot_check(100, cfg.grid.base_seed, registry.as_ref())?;
    write_dataset(&ds, out)?;
    if export_csv {
        ds.export_csv(BufWriter::new(File::create(out.join("dataset.csv"))?))?;
    }
    Ok(CollectSummary {
        cells: ds.cells.len(),
        episodes: ds.episodes.len(),
        rows: ds.rows.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainFlowSummary {
    pub pairs: usize,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

pub fn cmd_train_flow(cfg: &PipelineConfig, out: &Path) -> Result<TrainFlowSummary> {
    let ds = read_dataset(&cfg.flow_data.dataset)?;
    cfg.echo(out)?;
    let keep = cfg.flow_data.strategy;
    let data = ds.flow_data(|c| keep.is_none_or(|s| c.strategy == s));
    if data.is_empty() {
        return Err(Error::Config(format!(
            "dataset {} has no rows for strategy {:?}",
            cfg.flow_data.dataset.display(),
            keep
        )));
    }
    let (policy, log) = train_flow(&data, &cfg.flow)?;
    let checkpoint = out.join(FLOW_CHECKPOINT);
    policy.save(&checkpoint)?;
    write_json(&out.join("train_log.json"), &log)?;
    Ok(TrainFlowSummary {
        pairs: data.len(),
        final_loss: log.losses.last().map_or(f64::NAN, |l| l.1),
        checkpoint,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPpoSummary {
    pub scenario: ScenarioLabel,
    pub best_validation_reward: f64,
    pub best_env_steps: usize,
    pub checkpoint: PathBuf,
}

/// Trains one agent per configured scenario and records them in
/// `ppo_checkpoints.json`, keeping entries already present there.
pub fn cmd_train_ppo(cfg: &PipelineConfig, out: &Path) -> Result<Vec<TrainPpoSummary>> {
    cfg.echo(out)?;
    let reg_path = out.join(PPO_REGISTRY);
    let mut registry = if reg_path.exists() {
        let mut r: PpoRegistry = serde_json::from_str(&fs::read_to_string(&reg_path)?)?;
        r.checkpoints.retain(|l, _| !cfg.ppo_train.scenarios.contains(l));
        r
    } else {
        PpoRegistry::default()
    };
    let mut summaries = Vec::new();
    for &sc in &cfg.ppo_train.scenarios {
        let mut env = EnvConfig::price_level(sc.params(cfg.ppo_train.beta));
        env.lambda_risk = cfg.env.lambda_risk;
        env.phi = cfg.env.phi;
        let (policy, log) =
            train_ppo(&cfg.ppo, &env, cfg.ppo_train.seed).map_err(|e| e.context(format!("training PPO on {sc}")))?;
        let file = format!("ppo_{sc}.ckpt");
        policy.save(
            &out.join(&file),
            serde_json::json!({ "scenario": sc, "beta": cfg.ppo_train.beta, "seed": cfg.ppo_train.seed }),
        )?;
        write_json(&out.join(format!("ppo_{sc}_log.json")), &log)?;
        registry.insert(sc, PathBuf::from(&file));
        summaries.push(TrainPpoSummary {
            scenario: sc,
            best_validation_reward: log.best_validation_reward,
            best_env_steps: log.best_env_steps,
            checkpoint: out.join(file),
        });
    }
    registry.save(&reg_path)?;
    Ok(summaries)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluateSummary {
    pub rows: Vec<ReportRow>,
    /// Rendered tables, one per beta covering all four scenarios.
    pub tables: Vec<String>,
}

fn write_tables(rows: &[ReportRow], out: &Path) -> Result<Vec<String>> {
    let betas: BTreeSet<u64> = rows.iter().map(|r| r.beta.to_bits()).collect();
    let mut texts = Vec::new();
    for bits in betas {
        let beta = f64::from_bits(bits);
        let covered = ScenarioLabel::ALL
            .iter()
            .all(|sc| rows.iter().any(|r| r.beta == beta && r.scenario == sc.name()));
        if !covered {
            log::info!("beta = {beta}: not all four scenarios evaluated; no table written");
            continue;
        }
        let table = scenario_table(rows, beta)?;
        table.write_csv(File::create(out.join(format!("table_{}.csv", beta_tag(beta))))?)?;
        let text = table.to_text();
        fs::write(out.join(format!("table_{}.txt", beta_tag(beta))), &text)?;
        texts.push(text);
    }
    Ok(texts)
}

pub fn cmd_evaluate(cfg: &PipelineConfig, out: &Path) -> Result<EvaluateSummary> {
    cfg.echo(out)?;
    let e = &cfg.eval;
    let eval_cfg = e.eval_config(cfg.workers);
    let mut factory = RuleFactory::new(cfg);
    let mut rows = Vec::new();
    let mut implied = csv::Writer::from_path(out.join("implied_shortfall.csv"))?;
    implied.write_record(["scenario", "beta", "twap_implied_is"])?;
    for &beta in &e.betas {
        for &sc in &e.scenarios {
            let p = sc.params(beta);
            let contenders = e
                .strategies
                .iter()
                .map(|&s| Ok(Contender::new(s.name(), factory.rule(s, &p, e.flow_steps)?)))
                .collect::<Result<Vec<_>>>()?;
            let cells = run_monte_carlo(sc.name(), &p, &contenders, &eval_cfg)?;
            rows.extend(cells.into_iter().map(|c| c.row));
            implied.write_record([sc.to_string(), beta.to_string(), twap_implied_shortfall(&p).to_string()])?;
            if e.aggregates {
                let dir = out.join("aggregates");
                fs::create_dir_all(&dir)?;
                for c in &contenders {
                    let agg = emit_aggregates(&simulate_paths(&p, c, &eval_cfg)?)?;
                    agg.write_csv(File::create(dir.join(format!("{sc}_{}_{}.csv", beta_tag(beta), c.name)))?)?;
                }
            }
        }
    }
    implied.flush()?;
    write_report_csv(&rows, File::create(out.join(REPORT_CSV))?)?;
    let tables = write_tables(&rows, out)?;
    Ok(EvaluateSummary { rows, tables })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportSummary {
    pub tables: Vec<String>,
    /// Largest `|ac - (mean + lambda std^2)|` over all cells.
    pub max_ac_identity_error: f64,
}

/// Re-renders the tables of an evaluation directory and audits the AC identity.
pub fn cmd_report(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<ReportSummary> {
    let path = input.join(REPORT_CSV);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let rows = read_report_csv(File::open(&path)?)?;
    cfg.echo(out)?;
    let tables = write_tables(&rows, out)?;
    let mut max_err = 0.0f64;
    for r in &rows {
        let label: ScenarioLabel = r.scenario.parse()?;
        let lambda = label.params(r.beta).lambda;
        max_err = max_err.max((r.ac - (r.mean_is + lambda * r.std_is * r.std_is)).abs());
    }
    let mut text = tables.join("\n");
    text.push_str(&format!("\nAC identity: max |AC - (IS + lambda STD^2)| = {max_err:e} over {} cells\n", rows.len()));
    fs::write(out.join("report.txt"), &text)?;
    Ok(ReportSummary {
        tables,
        max_ac_identity_error: max_err,
    })
}
