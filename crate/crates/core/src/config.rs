//! Pipeline configuration: a JSON tree with dotted-path overrides.
//!
//! Resolution order is built-in defaults, then the config file (deep-merged),
//! then command-line flags, then `key=value` overrides. Override values are
//! parsed as JSON when possible and taken as strings otherwise, so
//! `market.beta=0.8` sets a number and `eval.noise=independent` a string.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::GridSpec;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::experts::Strategy;
use crate::flow::FlowConfig;
use crate::market::MarketParams;
use crate::ppo::PpoConfig;
use crate::rng::NoiseMode;
use crate::scenario::ScenarioLabel;

pub const CONFIG_ECHO: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub lambda_risk: f64,
    pub phi: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let e = crate::env::EnvConfig::default();
        EnvSection {
            lambda_risk: e.lambda_risk,
            phi: e.phi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub strategy: Strategy,
    pub seed: u64,
    /// Shortcut inference steps; the checkpoint's own setting when absent.
    pub flow_steps: Option<usize>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            strategy: Strategy::Twap,
            seed: 42,
            flow_steps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowDataSection {
    pub dataset: PathBuf,
    /// Keep only episodes of this strategy.
    pub strategy: Option<Strategy>,
}

impl Default for FlowDataSection {
    fn default() -> Self {
        FlowDataSection {
            dataset: PathBuf::from("runs/dataset"),
            strategy: Some(Strategy::HestonOptimal),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoTrainSection {
    pub scenarios: Vec<ScenarioLabel>,
    pub seed: u64,
    pub beta: f64,
}

impl Default for PpoTrainSection {
    fn default() -> Self {
        PpoTrainSection {
            scenarios: vec![ScenarioLabel::HH],
            seed: 42,
            beta: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_paths: usize,
    pub base_seed: u64,
    pub noise: NoiseMode,
    pub scenarios: Vec<ScenarioLabel>,
    pub betas: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub flow_steps: Option<usize>,
    /// Also write per-step mean/stderr series for every cell.
    pub aggregates: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection {
            n_paths: e.n_paths,
            base_seed: e.base_seed,
            noise: e.noise,
            scenarios: ScenarioLabel::ALL.to_vec(),
            betas: vec![0.5],
            strategies: vec![Strategy::Twap, Strategy::Vwap, Strategy::AcApprox, Strategy::HestonOptimal],
            flow_steps: None,
            aggregates: false,
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self, workers: usize) -> EvalConfig {
        EvalConfig {
            n_paths: self.n_paths,
            base_seed: self.base_seed,
            noise: self.noise,
            workers,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactsSection {
    pub flow_checkpoint: Option<PathBuf>,
    pub ppo_registry: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub workers: usize,
    /// Regime whose parameters seed `market` when given on the command line.
    pub scenario: ScenarioLabel,
    pub market: MarketParams,
    pub env: EnvSection,
    pub simulate: SimulateSection,
    pub grid: GridSpec,
    pub flow: FlowConfig,
    pub flow_data: FlowDataSection,
    pub ppo: PpoConfig,
    pub ppo_train: PpoTrainSection,
    pub eval: EvalSection,
    pub artifacts: ArtifactsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            workers: 1,
            scenario: ScenarioLabel::HH,
            market: ScenarioLabel::HH.params(0.5),
            env: EnvSection::default(),
            simulate: SimulateSection::default(),
            grid: GridSpec::default(),
            flow: FlowConfig::default(),
            flow_data: FlowDataSection::default(),
            ppo: PpoConfig::default(),
            ppo_train: PpoTrainSection::default(),
            eval: EvalSection::default(),
            artifacts: ArtifactsSection::default(),
        }
    }
}

/// Recursively merges `patch` into `base`; objects merge key by key, every
/// other value replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `a.b.c=value` override. Every path segment but the last must
/// name an existing object.
pub fn apply_override(tree: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override '{spec}' has an empty key segment")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap();
    let mut node = tree;
    for (depth, part) in parts.iter().enumerate() {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(*part))
            .filter(|v| v.is_object())
            .ok_or_else(|| Error::Config(format!("override '{key}': '{}' is not a config section", parts[..=depth].join("."))))?;
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override '{key}' does not address a section")))?;
    if !obj.contains_key(last) {
        return Err(Error::Config(format!("override '{key}': unknown key '{last}'")));
    }
    obj.insert(last.to_string(), value);
    Ok(())
}

impl PipelineConfig {
    pub fn to_tree(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_tree(tree: Value) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_value(tree).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults merged with the JSON file at `path`.
    pub fn file_tree(path: Option<&Path>) -> Result<Value> {
        let mut tree = PipelineConfig::default().to_tree();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config {} is not JSON: {e}", path.display())))?;
            merge(&mut tree, patch);
        }
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error, section: &str| Error::Config(format!("{section}: {e}"));
        self.market.validate().map_err(|e| wrap(e, "market"))?;
        self.grid.validate().map_err(|e| wrap(e, "grid"))?;
        self.flow.validate().map_err(|e| wrap(e, "flow"))?;
        self.ppo.validate().map_err(|e| wrap(e, "ppo"))?;
        self.eval.eval_config(self.workers).validate().map_err(|e| wrap(e, "eval"))?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.eval.scenarios.is_empty() || self.eval.betas.is_empty() || self.eval.strategies.is_empty() {
            return Err(Error::Config("eval needs scenarios, betas and strategies".into()));
        }
        Ok(())
    }

    /// Writes the resolved configuration to `dir/config.json`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_ECHO), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
