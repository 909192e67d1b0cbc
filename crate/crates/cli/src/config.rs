//! Experiment configuration: one TOML file describing the manifest, the
//! model/train/eval blocks and an optional sweep block.
//!
//! ```toml
//! manifest = "data/demo/manifest.toml"
//! output_dir = "runs/demo"
//! seed = 42
//!
//! [model]                     # optional, desk-scale defaults
//! embed_dim = 128
//! layers = 4
//! heads = 4
//! ff_dim = 256
//! f_max = 32
//! c_max = 10
//!
//! [train]                     # optional, desk-scale defaults
//! steps = 2000
//! batch_episodes = 8
//! ctx_size = 128
//! qry_size = 32
//! warmup_steps = 100
//! peak_lr = 3e-4
//! floor_frac = 0.1
//! checkpoint_every = 0
//!
//! [pretrain]
//! dataset = "campus"
//! task_budget = 5000
//!
//! [eval]
//! datasets = ["orchard", "turbines"]
//! folds = 3
//! context_fraction = 0.8
//! retrieval_k = 96
//! baselines = ["forest", "linear"]
//!
//! [sweep]                     # optional; kind selects the grid fields
//! kind = "task-budget"        # "task-budget" | "ablation" | "matrix"
//! budgets = [5, 50, 500, 5000]
//! seeds = [1, 2, 3]
//! axes = ["rows", "columns"]  # ablation only
//! fractions = [0.0, 0.7]      # ablation only
//! pretrain_datasets = ["meadow", "sensors"]   # matrix only
//! ```

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use unitab_core::evaluate::Method;
use unitab_core::manifest::Manifest;
use unitab_core::model::ModelConfig;
use unitab_core::trainer::TrainConfig;

/// Environment variable that overrides the output root directory.
pub const OUTPUT_ROOT_ENV: &str = "UNITAB_OUT_ROOT";

fn default_model() -> ModelConfig {
    ModelConfig::default()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainBlock {
    pub dataset: String,
    #[serde(default = "default_budget")]
    pub task_budget: usize,
}

fn default_budget() -> usize {
    5000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalBlock {
    pub datasets: Vec<String>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_context_fraction")]
    pub context_fraction: f64,
    #[serde(default = "default_retrieval_k")]
    pub retrieval_k: usize,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<String>,
}

fn default_folds() -> usize {
    3
}
fn default_context_fraction() -> f64 {
    0.8
}
fn default_retrieval_k() -> usize {
    unitab_core::evaluate::DEFAULT_RETRIEVAL_K
}
fn default_baselines() -> Vec<String> {
    vec!["forest".into(), "linear".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepBlock {
    pub kind: String,
    #[serde(default)]
    pub budgets: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub axes: Vec<String>,
    #[serde(default)]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub pretrain_datasets: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfigBlock,
    pub pretrain: Option<PretrainBlock>,
    pub eval: Option<EvalBlock>,
    pub sweep: Option<SweepBlock>,
}

/// TrainConfig minus the seed (the global seed feeds it).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfigBlock {
    pub steps: usize,
    pub batch_episodes: usize,
    pub ctx_size: usize,
    pub qry_size: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub floor_frac: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfigBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainConfigBlock {
            steps: t.steps,
            batch_episodes: t.batch_episodes,
            ctx_size: t.ctx_size,
            qry_size: t.qry_size,
            warmup_steps: t.warmup_steps,
            peak_lr: t.peak_lr,
            floor_frac: t.floor_frac,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

impl TrainConfigBlock {
    pub fn to_train_config(&self, budget: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_episodes: self.batch_episodes,
            ctx_size: self.ctx_size,
            qry_size: self.qry_size,
            task_budget: budget,
            warmup_steps: self.warmup_steps,
            peak_lr: self.peak_lr,
            floor_frac: self.floor_frac,
            seed,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

impl ExperimentConfig {
    /// Loads and validates a config. `seed_override` and `output_override`
    /// come from CLI flags; the environment variable [`OUTPUT_ROOT_ENV`]
    /// re-roots the output directory.
    pub fn load(
        path: &Path,
        seed_override: Option<u64>,
        output_override: Option<PathBuf>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;

        // paths in the config resolve relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.manifest.is_relative() {
            cfg.manifest = base.join(&cfg.manifest);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }

        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        if let Some(out) = output_override {
            cfg.output_dir = out;
        } else if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
            let leaf = cfg
                .output_dir
                .file_name()
                .map(|s| s.to_os_string())
                .unwrap_or_default();
            cfg.output_dir = PathBuf::from(root).join(leaf);
        }

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(anyhow::Error::from)?;
        let manifest = self.load_manifest()?;
        let mut referenced: Vec<&String> = Vec::new();
        if let Some(p) = &self.pretrain {
            referenced.push(&p.dataset);
            if p.task_budget == 0 {
                bail!("pretrain.task_budget must be >= 1");
            }
        }
        if let Some(e) = &self.eval {
            if e.datasets.is_empty() {
                bail!("eval.datasets must not be empty");
            }
            referenced.extend(e.datasets.iter());
            for b in &e.baselines {
                parse_baseline(b)?;
            }
        }
        if let Some(s) = &self.sweep {
            match s.kind.as_str() {
                "task-budget" => {
                    if s.budgets.is_empty() {
                        bail!("task-budget sweep needs a non-empty budgets grid");
                    }
                }
                "ablation" => {
                    if s.fractions.is_empty() || s.axes.is_empty() {
                        bail!("ablation sweep needs non-empty axes and fractions");
                    }
                    for a in &s.axes {
                        a.parse::<unitab_core::ablate::AblationAxis>()
                            .map_err(anyhow::Error::from)?;
                    }
                    for &f in &s.fractions {
                        if !(0.0..1.0).contains(&f) {
                            bail!("ablation fraction {f} outside [0, 1)");
                        }
                    }
                }
                "matrix" => {
                    if s.pretrain_datasets.is_empty() {
                        bail!("matrix sweep needs pretrain_datasets");
                    }
                    referenced.extend(s.pretrain_datasets.iter());
                }
                other => bail!("unknown sweep kind '{other}'"),
            }
        }
        for name in referenced {
            manifest
                .entry(name)
                .map_err(|_| anyhow::anyhow!("dataset '{name}' not found in manifest"))?;
        }
        Ok(())
    }

    pub fn load_manifest(&self) -> Result<Manifest> {
        Manifest::load(&self.manifest)
            .with_context(|| format!("loading manifest {}", self.manifest.display()))
    }

    pub fn baselines(&self) -> Vec<Method> {
        self.eval
            .as_ref()
            .map(|e| {
                e.baselines
                    .iter()
                    .filter_map(|b| parse_baseline(b).ok())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn eval_protocol(&self, seed: u64) -> unitab_core::evaluate::EvalProtocol {
        let e = self.eval.as_ref();
        unitab_core::evaluate::EvalProtocol {
            context_fraction: e.map_or(0.8, |e| e.context_fraction),
            folds: e.map_or(3, |e| e.folds),
            retrieval_k: e.map_or(default_retrieval_k(), |e| e.retrieval_k),
            seed,
        }
    }
}

pub fn parse_baseline(name: &str) -> Result<Method> {
    match name {
        "forest" => Ok(Method::Forest),
        "linear" => Ok(Method::Linear),
        other => bail!("unknown baseline '{other}' (expected 'forest' or 'linear')"),
    }
}
