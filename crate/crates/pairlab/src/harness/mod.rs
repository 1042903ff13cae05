//! Experiment orchestration: configuration, runners for the ablation and
//! verification studies, and report/manifest emission.
//!
//! Every runner is a pure function of its [`ExperimentConfig`]: reruns with
//! an identical config reproduce byte-identical CSV/JSON outputs, which the
//! run manifest certifies with content digests. Runners also return their
//! trend checks as data so callers (and `--check` mode) can gate on them.

pub mod manifest;
mod runners;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::GenConfig;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub use manifest::{verify_manifest, OutputWriter, RunManifest, MANIFEST_FILE};
pub use runners::{
    run_bounds, run_customize, run_dataset_size, run_lambda_grid, run_multi_pair,
    run_pair_vs_single, run_taylor,
};

/// Which study to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    PairVsSingle,
    LambdaGrid,
    DatasetSize,
    MultiPair,
    Bounds,
    Taylor,
    Customize,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::PairVsSingle => "pair_vs_single",
            Experiment::LambdaGrid => "lambda_grid",
            Experiment::DatasetSize => "dataset_size",
            Experiment::MultiPair => "multi_pair",
            Experiment::Bounds => "bounds",
            Experiment::Taylor => "taylor",
            Experiment::Customize => "customize",
        }
    }
}

/// Parameters of the risk-bound study.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundsParams {
    /// Greedy covering radius over the sampled manifold grid.
    pub epsilon: f64,
    /// Intrinsic grid resolution used to sample the manifold for the net.
    pub grid_per_dim: usize,
    /// Samples per anchor for each empirical risk.
    pub n: usize,
    pub delta: f64,
    pub repetitions: usize,
    /// Random manifold points probed for the supremum each repetition.
    pub num_test_points: usize,
    /// Probe pairs for the Lipschitz estimate.
    pub num_probes: usize,
}

impl Default for BoundsParams {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            grid_per_dim: 41,
            n: 200,
            delta: 0.1,
            repetitions: 100,
            num_test_points: 200,
            num_probes: 2000,
        }
    }
}

/// Parameters of the update-dynamics expansion study.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaylorParams {
    /// Strictly decreasing step sizes.
    pub etas: Vec<f64>,
    /// Required log-log slope of the residual.
    pub min_slope: f64,
}

impl Default for TaylorParams {
    fn default() -> Self {
        Self {
            etas: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
            min_slope: 2.9,
        }
    }
}

/// Parameters of the few-shot customization study.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CustomizeParams {
    /// History length per user.
    pub k: usize,
    pub num_users: usize,
    pub grid_per_dim: usize,
    /// Users are sampled with |z| in [min_abs_z, 1].
    pub min_abs_z: f64,
    pub test_scenarios_per_user: usize,
}

impl Default for CustomizeParams {
    fn default() -> Self {
        Self {
            k: 3,
            num_users: 500,
            grid_per_dim: 41,
            min_abs_z: 0.5,
            test_scenarios_per_user: 20,
        }
    }
}

/// Parameters of the multi-pair mixing study.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MultiPairParams {
    /// Per-pair training budget for the single-pair models and total budget
    /// for the small mixed model.
    pub budget: usize,
    /// Total budget for the large mixed model.
    pub large_budget: usize,
}

impl Default for MultiPairParams {
    fn default() -> Self {
        Self {
            budget: 1000,
            large_budget: 4000,
        }
    }
}

/// Full experiment configuration; a single JSON document on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub gen: GenConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Training-set sizes for the dataset-size ablation; strictly increasing.
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub bounds: BoundsParams,
    #[serde(default)]
    pub taylor: TaylorParams,
    #[serde(default)]
    pub customize: CustomizeParams,
    #[serde(default)]
    pub multi_pair: MultiPairParams,
}

fn default_sizes() -> Vec<usize> {
    vec![100, 200, 400, 650, 1000, 2000]
}

impl ExperimentConfig {
    /// Defaults for one experiment kind, writing under `output_dir`.
    pub fn for_experiment(experiment: Experiment, output_dir: PathBuf) -> Self {
        let mut cfg = Self {
            experiment,
            gen: GenConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            output_dir,
            sizes: default_sizes(),
            bounds: BoundsParams::default(),
            taylor: TaylorParams::default(),
            customize: CustomizeParams::default(),
            multi_pair: MultiPairParams::default(),
        };
        match experiment {
            Experiment::Bounds => {
                cfg.gen.num_pairs = 4;
                cfg.gen.d = 2;
                cfg.seeds = vec![1];
            }
            Experiment::MultiPair => {
                cfg.gen.num_pairs = 4;
                cfg.gen.d = 2;
                // Enough headroom for an exact per-pair budget after the split.
                cfg.gen.num_scenarios = 5200;
            }
            Experiment::Taylor => {
                cfg.seeds = (1..=10).collect();
            }
            Experiment::Customize => {
                cfg.seeds = vec![1];
            }
            Experiment::DatasetSize => {
                // Higher ambient dimension keeps the small-data regime off
                // the accuracy ceiling, so the size trend is visible.
                cfg.gen.num_scenarios = 2500;
                cfg.gen.m = 32;
            }
            _ => {}
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        self.gen.validate()?;
        self.train.validate()?;
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sizes must be strictly increasing".into()));
        }
        if self.sizes.is_empty() {
            return Err(Error::Config("sizes must be nonempty".into()));
        }
        if !(0.0..1.0).contains(&self.bounds.delta) || self.bounds.delta <= 0.0 {
            return Err(Error::Config("bounds.delta must be in (0, 1)".into()));
        }
        if self.taylor.etas.is_empty() || self.taylor.etas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "taylor.etas must be nonempty and strictly decreasing".into(),
            ));
        }
        if self.customize.k < 1 || self.customize.num_users < 1 {
            return Err(Error::Config(
                "customize needs k >= 1 and num_users >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.customize.min_abs_z) {
            return Err(Error::Config(
                "customize.min_abs_z must be in [0, 1)".into(),
            ));
        }
        if self.multi_pair.budget < 1 || self.multi_pair.large_budget < self.multi_pair.budget {
            return Err(Error::Config(
                "multi_pair budgets must satisfy 1 <= budget <= large_budget".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }
}

/// One named trend or property evaluated by a runner.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// What a runner produced: output files, the manifest, and its checks.
#[derive(Debug)]
pub struct RunOutcome {
    pub experiment: Experiment,
    pub outputs: Vec<manifest::OutputDigest>,
    pub manifest_path: PathBuf,
    pub checks: Vec<CheckResult>,
}

impl RunOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Dispatch on `cfg.experiment`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    match cfg.experiment {
        Experiment::PairVsSingle => run_pair_vs_single(cfg),
        Experiment::LambdaGrid => run_lambda_grid(cfg),
        Experiment::DatasetSize => run_dataset_size(cfg),
        Experiment::MultiPair => run_multi_pair(cfg),
        Experiment::Bounds => run_bounds(cfg),
        Experiment::Taylor => run_taylor(cfg),
        Experiment::Customize => run_customize(cfg),
    }
}
