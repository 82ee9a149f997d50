//! Experiment configuration: a TOML file describing the dataset, the
//! strategy, optional pipeline overrides and the ensemble/search blocks.
//! Command-line flags override the file; the resolved configuration is
//! copied into the run directory so a run can be reproduced from it alone.

use std::path::{Path, PathBuf};

use bdann::hybrid::TabularSchema;
use bdann::pipeline::{PipelineConfig, Strategy, TransferMode};

/// Failures split by exit code: bad configuration (2) vs runtime error (1).
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn config(e: impl std::fmt::Display) -> Self {
        Failure::Config(e.to_string())
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

pub type CResult<T> = Result<T, Failure>;

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// from_scratch | direct_transfer | staged_bdann | all (ensemble only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    /// Run-level seed; every stage and evaluation seed derives from it.
    pub seed: u64,
    /// Output directory, relative to BDANN_OUT when that is set. Not copied
    /// into run directories: location is environment, not identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "is_default")]
    pub ensemble: EnsembleBlock,
    #[serde(default, skip_serializing_if = "is_default")]
    pub pipeline: PipelineOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hpo: Option<HpoBlock>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub calibration: CalibrationBlock,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// The built-in conditional-shift benchmark.
    Synthetic {
        /// Generator seed; distinct from the run seed on purpose, so the
        /// same data can be trained under many run seeds.
        seed: u64,
        /// Target training rows exposed: 75, 150, 250 or 500.
        #[serde(default = "default_ablation")]
        ablation: usize,
        /// Use identical generating laws in both domains.
        #[serde(default, skip_serializing_if = "is_default")]
        degenerate_shift: bool,
    },
    /// A tabular CSV, optionally paired with a source-domain CSV and a
    /// base-model prediction column for residual correction.
    Csv {
        path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source_path: Option<String>,
        /// Unit manifest JSON; identity units assumed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        manifest: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source_manifest: Option<String>,
        /// Name of a precomputed base-prediction column.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_column: Option<String>,
        /// Shuffle seed for the 80/5/15 split.
        seed: u64,
        /// Custom column layout; the critical-heat-flux layout by default.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schema: Option<TabularSchema>,
    },
}

fn default_ablation() -> usize {
    500
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleBlock {
    /// Seeds per strategy; commands pick their own default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_runs: Option<usize>,
    /// First seed; the run seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    /// Worker threads for ensemble members (0 = automatic).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoBlock {
    pub budget: usize,
    pub warm: usize,
}

impl Default for HpoBlock {
    fn default() -> Self {
        HpoBlock {
            budget: 20,
            warm: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationBlock {
    /// Histogram bins for the relative-spread distribution.
    pub rstd_bins: usize,
}

impl Default for CalibrationBlock {
    fn default() -> Self {
        CalibrationBlock { rstd_bins: 20 }
    }
}

/// Partial overrides on top of the library defaults. Only the fields that
/// appear in the file change; everything else keeps its default.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOverrides {
    #[serde(skip_serializing_if = "is_default")]
    pub arch: ArchOverrides,
    #[serde(skip_serializing_if = "is_default")]
    pub stage1: StageOverrides,
    #[serde(skip_serializing_if = "is_default")]
    pub stage2: StageOverrides,
    #[serde(skip_serializing_if = "is_default")]
    pub stage3: StageOverrides,
    #[serde(skip_serializing_if = "is_default")]
    pub baseline: StageOverrides,
    #[serde(skip_serializing_if = "is_default")]
    pub lambda: LambdaOverrides,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    /// identity | log.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_transform: Option<String>,
    /// full | frozen | partial.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_mode: Option<String>,
    /// Required when transfer_mode = "partial".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unfrozen_top_layers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extractor_hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_hidden: Option<Vec<usize>>,
    /// relu | tanh for the feature extractor's hidden and latent units.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extractor_activation: Option<String>,
    /// relu | tanh for the regression head's hidden units.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_activation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extractor_dropout: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_dropout: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_penalty: Option<f64>,
}

impl StageOverrides {
    fn apply(&self, cfg: &mut bdann::pipeline::StageConfig) {
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.optimizer.learning_rate = v;
        }
        if let Some(v) = self.decay_factor {
            cfg.optimizer.decay_factor = v;
        }
        if let Some(v) = self.decay_every {
            cfg.optimizer.decay_every = v;
        }
        if let Some(v) = self.l2_penalty {
            cfg.optimizer.l2_penalty = v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_min_frac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
}

impl PipelineOverrides {
    /// Builds the effective pipeline configuration.
    pub fn build(&self) -> CResult<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        let a = &self.arch;
        if let Some(v) = &a.extractor_hidden {
            cfg.arch.extractor_hidden = v.clone();
        }
        if let Some(v) = a.latent_dim {
            cfg.arch.latent_dim = v;
        }
        if let Some(v) = &a.head_hidden {
            cfg.arch.head_hidden = v.clone();
        }
        if let Some(v) = &a.classifier_hidden {
            cfg.arch.classifier_hidden = v.clone();
        }
        if let Some(v) = &a.extractor_activation {
            cfg.arch.extractor_activation =
                bdann::net::Activation::parse(v).map_err(Failure::config)?;
        }
        if let Some(v) = &a.head_activation {
            cfg.arch.head_activation =
                bdann::net::Activation::parse(v).map_err(Failure::config)?;
        }
        if let Some(v) = a.extractor_dropout {
            cfg.arch.extractor_dropout = v;
        }
        if let Some(v) = a.classifier_dropout {
            cfg.arch.classifier_dropout = v;
        }
        self.stage1.apply(&mut cfg.stage1);
        self.stage2.apply(&mut cfg.stage2);
        self.stage3.apply(&mut cfg.stage3);
        self.baseline.apply(&mut cfg.baseline);
        let l = &self.lambda;
        if let Some(v) = l.lambda_max {
            cfg.lambda.lambda_max = v;
        }
        if let Some(v) = l.lambda_min_frac {
            cfg.lambda.lambda_min_frac = v;
        }
        if let Some(v) = l.ramp_k {
            cfg.lambda.ramp_k = v;
        }
        if let Some(v) = l.warmup_epochs {
            cfg.lambda.warmup_epochs = v;
        }
        if let Some(v) = self.beta_max {
            cfg.beta.beta_max = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.init_std {
            cfg.init_std = v;
        }
        if let Some(v) = self.mc_samples {
            cfg.mc_samples = v;
        }
        match self.transfer_mode.as_deref() {
            None | Some("full") => cfg.transfer_mode = TransferMode::Full,
            Some("frozen") => cfg.transfer_mode = TransferMode::Frozen,
            Some("partial") => {
                let k = self.unfrozen_top_layers.ok_or_else(|| {
                    Failure::Config(
                        "transfer_mode = \"partial\" needs unfrozen_top_layers".into(),
                    )
                })?;
                cfg.transfer_mode = TransferMode::Partial {
                    unfrozen_top_layers: k,
                };
            }
            Some(other) => {
                return Err(Failure::Config(format!(
                    "unknown transfer_mode {other:?}: expected full, frozen or partial"
                )))
            }
        }
        // The ramp always spans the alignment stage.
        cfg.lambda.total_epochs = cfg.stage2.max_epochs.max(1);
        cfg.validate().map_err(Failure::config)?;
        Ok(cfg)
    }
}

/// Which strategies a command should run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyChoice {
    One(Strategy),
    All,
}

impl ExperimentConfig {
    pub fn strategy_choice(&self) -> CResult<Option<StrategyChoice>> {
        match self.strategy.as_deref() {
            None => Ok(None),
            Some("all") => Ok(Some(StrategyChoice::All)),
            Some(s) => Strategy::parse(s)
                .map(|s| Some(StrategyChoice::One(s)))
                .map_err(Failure::config),
        }
    }

    /// The single strategy a command requires.
    pub fn required_strategy(&self) -> CResult<Strategy> {
        match self.strategy_choice()? {
            Some(StrategyChoice::One(s)) => Ok(s),
            Some(StrategyChoice::All) => Err(Failure::Config(
                "this command needs one concrete strategy, not \"all\"".into(),
            )),
            None => Err(Failure::Config(
                "missing field: strategy (from_scratch, direct_transfer or staged_bdann)".into(),
            )),
        }
    }
}

/// Flag overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub ablation: Option<usize>,
}

/// A fully resolved invocation.
#[derive(Debug)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub workers: usize,
}

/// Reads the config file, applies flag and environment overrides and
/// resolves the output directory. `default_name` names the run directory
/// when neither --out nor the file provides one.
pub fn resolve(path: &Path, flags: &Overrides, default_name: &str) -> CResult<Resolved> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;

    if let Some(seed) = flags.seed {
        config.seed = seed;
    }
    if let Some(ab) = flags.ablation {
        match &mut config.dataset {
            DatasetConfig::Synthetic { ablation, .. } => *ablation = ab,
            DatasetConfig::Csv { .. } => {
                return Err(Failure::Config(
                    "--ablation applies only to the synthetic dataset".into(),
                ))
            }
        }
    }
    validate_dataset(&config.dataset, path)?;

    let root = match std::env::var_os("BDANN_OUT") {
        Some(v) => PathBuf::from(v),
        None => PathBuf::new(),
    };
    let chosen: PathBuf = match (&flags.out, &config.out) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => PathBuf::from(default_name),
    };
    let out_dir = if chosen.is_absolute() {
        chosen
    } else {
        root.join(chosen)
    };

    let workers = match (flags.workers, config.ensemble.workers) {
        (Some(w), _) => w,
        (None, Some(w)) => w,
        (None, None) => match std::env::var("BDANN_WORKERS") {
            Ok(v) => v.parse().map_err(|_| {
                Failure::Config(format!("BDANN_WORKERS must be an integer, got {v:?}"))
            })?,
            Err(_) => 0,
        },
    };

    Ok(Resolved {
        config,
        out_dir,
        workers,
    })
}

/// Referenced files must exist before any work starts. Relative paths are
/// taken against the config file's directory, so a copied config keeps
/// working from anywhere.
fn validate_dataset(ds: &DatasetConfig, config_path: &Path) -> CResult<()> {
    match ds {
        DatasetConfig::Synthetic { ablation, .. } => {
            if !matches!(ablation, 75 | 150 | 250 | 500) {
                return Err(Failure::Config(format!(
                    "dataset.ablation must be one of 75/150/250/500, got {ablation}"
                )));
            }
            Ok(())
        }
        DatasetConfig::Csv {
            path,
            source_path,
            manifest,
            source_manifest,
            ..
        } => {
            for p in [Some(path), source_path.as_ref(), manifest.as_ref(), source_manifest.as_ref()]
                .into_iter()
                .flatten()
            {
                if !anchored(config_path, p).exists() {
                    return Err(Failure::Config(format!("referenced file not found: {p}")));
                }
            }
            Ok(())
        }
    }
}

/// Resolves a dataset-relative path against the config file location.
pub fn anchored(config_path: &Path, rel: &str) -> PathBuf {
    let p = PathBuf::from(rel);
    if p.is_absolute() {
        return p;
    }
    match config_path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(p),
        _ => p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_pipeline_overrides_keep_defaults_elsewhere() {
        let text = r#"
            seed = 5
            strategy = "staged_bdann"
            [dataset]
            kind = "synthetic"
            seed = 9
            [pipeline.stage2]
            max_epochs = 40
            [pipeline.lambda]
            lambda_max = 1.5
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let p = cfg.pipeline.build().unwrap();
        assert_eq!(p.stage2.max_epochs, 40);
        assert_eq!(p.lambda.total_epochs, 40);
        assert_eq!(p.lambda.lambda_max, 1.5);
        let d = PipelineConfig::default();
        assert_eq!(p.stage1, d.stage1);
        assert_eq!(p.arch, d.arch);
        assert_eq!(p.mc_samples, d.mc_samples);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let text = r#"
            seed = 5
            [dataset]
            kind = "synthetic"
            seed = 9
            [pipeline.stage1]
            max_epoch = 10
        "#;
        let err = toml::from_str::<ExperimentConfig>(text).unwrap_err();
        assert!(err.to_string().contains("max_epoch"));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let text = r#"
            seed = 5
            strategy = "all"
            [dataset]
            kind = "synthetic"
            seed = 9
            ablation = 250
            [ensemble]
            n_runs = 4
            [pipeline.stage3]
            learning_rate = 0.001
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let rendered = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&rendered).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_mode_requires_layer_count() {
        let text = r#"
            seed = 1
            [dataset]
            kind = "synthetic"
            seed = 2
            [pipeline]
            transfer_mode = "partial"
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert!(matches!(cfg.pipeline.build(), Err(Failure::Config(_))));
    }
}
