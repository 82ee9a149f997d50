//! Training strategies and ensemble orchestration.
//!
//! Three end-to-end strategies share the same dense architecture: training
//! from scratch on target data alone, direct transfer from a source-trained
//! base (frozen, partial or full fine-tuning), and the staged path that
//! aligns the feature extractor adversarially before variational target
//! fine-tuning. Training functions only ever receive train and validation
//! splits, so a test split can prove it was untouched via its read counter.

mod stages;

pub use stages::{
    compose_extractor_head, fit_deterministic_pair, stage1_pretrain, stage2_align,
    stage3_finetune, train_direct_transfer, train_from_scratch, AlignedBase, SourceBase,
};

use rayon::prelude::*;

use crate::bayes::{predict_mc_batch, BetaSchedule, PredictiveSummary, VariationalState};
use crate::data::{DataSplit, ZScore};
use crate::error::{Error, Result};
use crate::metrics::{error_metrics, MetricsReport};
use crate::net::{Activation, NetworkSpec, NetworkState, OptimizerConfig};
use crate::adversarial::LambdaSchedule;
use crate::rng::{derive_seed, stream};
use crate::synthetic::Benchmark;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Strategy {
    FromScratch,
    DirectTransfer,
    StagedBdann,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::FromScratch => write!(f, "from_scratch"),
            Strategy::DirectTransfer => write!(f, "direct_transfer"),
            Strategy::StagedBdann => write!(f, "staged_bdann"),
        }
    }
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "from_scratch" => Ok(Strategy::FromScratch),
            "direct_transfer" => Ok(Strategy::DirectTransfer),
            "staged_bdann" => Ok(Strategy::StagedBdann),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy {other:?}"
            ))),
        }
    }
}

/// How much of the source-trained network direct transfer may retrain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TransferMode {
    /// Extractor fixed; a fresh head is trained on target data.
    Frozen,
    /// Only the top k extractor layers unfreeze; head fine-tunes.
    Partial { unfrozen_top_layers: usize },
    /// Source weights are an initialization; everything retrains.
    Full,
}

impl std::fmt::Display for TransferMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransferMode::Frozen => write!(f, "frozen"),
            TransferMode::Partial {
                unfrozen_top_layers,
            } => write!(f, "partial({unfrozen_top_layers})"),
            TransferMode::Full => write!(f, "full"),
        }
    }
}

/// Loss trace of one training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trained parameters of one strategy.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ModelParams {
    Deterministic {
        extractor: NetworkState,
        head: NetworkState,
    },
    Variational {
        net: VariationalState,
        /// How many leading weight layers came from the extractor.
        extractor_layers: usize,
    },
}

/// Final artifact of one training strategy.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainedModel {
    pub strategy: Strategy,
    pub params: ModelParams,
    pub history: TrainingHistory,
    pub seed: u64,
    /// Present when the strategy standardizes inputs itself (from-scratch
    /// refits on its own training rows); applied before every prediction.
    pub input_scaler: Option<ZScore>,
    /// Space the networks were fitted in. `predict` maps point predictions
    /// back to the original scale; `predict_uncertain` stays in this space.
    pub target_transform: TargetTransform,
}

impl TrainedModel {
    pub fn validate(&self) -> Result<()> {
        let variational = matches!(self.params, ModelParams::Variational { .. });
        let expects = matches!(self.strategy, Strategy::StagedBdann);
        if variational != expects {
            return Err(Error::InvalidConfig(format!(
                "strategy {} paired with the wrong head kind",
                self.strategy
            )));
        }
        Ok(())
    }

    fn scaled<'a>(&self, xs: &'a [Vec<f64>]) -> std::borrow::Cow<'a, [Vec<f64>]> {
        match &self.input_scaler {
            Some(z) => std::borrow::Cow::Owned(z.transform(xs)),
            None => std::borrow::Cow::Borrowed(xs),
        }
    }

    /// Point predictions on the original target scale. Deterministic models
    /// run one forward pass; the variational model uses the Monte Carlo
    /// predictive mean, mapped back through the target transform.
    pub fn predict(&self, xs: &[Vec<f64>], mc_samples: usize, eval_seed: u64) -> Result<Vec<f64>> {
        let xs = self.scaled(xs);
        let inv = self.target_transform;
        match &self.params {
            ModelParams::Deterministic { extractor, head } => {
                let latent = extractor.infer_batch(&xs)?;
                Ok(head
                    .infer_batch(&latent)?
                    .iter()
                    .map(|r| inv.inverse(r[0]))
                    .collect())
            }
            ModelParams::Variational { net, .. } => {
                let sums = predict_mc_batch(
                    net,
                    &xs,
                    mc_samples,
                    &mut stream(derive_seed(eval_seed, "predict/mc")),
                )?;
                Ok(sums.iter().map(|s| inv.inverse(s.mean)).collect())
            }
        }
    }

    /// Predictive summaries in the model's training space (see
    /// `target_transform`); only the variational strategy has them.
    pub fn predict_uncertain(
        &self,
        xs: &[Vec<f64>],
        mc_samples: usize,
        eval_seed: u64,
    ) -> Result<Option<Vec<PredictiveSummary>>> {
        let xs = self.scaled(xs);
        match &self.params {
            ModelParams::Deterministic { .. } => Ok(None),
            ModelParams::Variational { net, .. } => Ok(Some(predict_mc_batch(
                net,
                &xs,
                mc_samples,
                &mut stream(derive_seed(eval_seed, "predict/mc")),
            )?)),
        }
    }
}

/// Epoch/patience/batch/optimizer bundle for one stage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl StageConfig {
    pub fn stage1_default() -> Self {
        StageConfig {
            max_epochs: 400,
            patience: 20,
            batch_size: 64,
            optimizer: OptimizerConfig::with_learning_rate(2e-3),
        }
    }

    pub fn stage2_default() -> Self {
        StageConfig {
            max_epochs: 100,
            patience: 10,
            batch_size: 128,
            optimizer: OptimizerConfig::with_learning_rate(5e-6),
        }
    }

    pub fn stage3_default() -> Self {
        StageConfig {
            max_epochs: 400,
            patience: 20,
            batch_size: 32,
            optimizer: OptimizerConfig::with_learning_rate(2e-3),
        }
    }

    pub fn baseline_default() -> Self {
        StageConfig {
            max_epochs: 400,
            patience: 20,
            batch_size: 32,
            optimizer: OptimizerConfig::with_learning_rate(2e-3),
        }
    }

    /// `max_epochs` of zero is legal and means "keep the initial weights":
    /// direct transfer uses it to reuse a source model verbatim.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Shared network shapes for every strategy.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchConfig {
    pub extractor_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub head_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub extractor_dropout: f64,
    pub classifier_dropout: f64,
    /// Hidden and latent activation of the feature extractor. The domain
    /// classifier keeps relu hidden units with a sigmoid output regardless.
    pub extractor_activation: Activation,
    /// Hidden activation of the regression head (output stays linear).
    pub head_activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            extractor_hidden: vec![48],
            latent_dim: 24,
            head_hidden: vec![16],
            classifier_hidden: vec![24],
            extractor_dropout: 0.0,
            classifier_dropout: 0.0,
            extractor_activation: Activation::Relu,
            head_activation: Activation::Relu,
        }
    }
}

impl ArchConfig {
    pub fn extractor_spec(&self, in_dim: usize) -> Result<NetworkSpec> {
        NetworkSpec::mlp(
            in_dim,
            &self.extractor_hidden,
            self.latent_dim,
            self.extractor_activation,
            self.extractor_activation,
            self.extractor_dropout,
        )
    }

    pub fn head_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::mlp(
            self.latent_dim,
            &self.head_hidden,
            1,
            self.head_activation,
            Activation::Identity,
            0.0,
        )
    }

    pub fn classifier_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::mlp(
            self.latent_dim,
            &self.classifier_hidden,
            1,
            Activation::Relu,
            Activation::Sigmoid,
            self.classifier_dropout,
        )
    }
}

/// How regression targets are represented during training. Networks fit
/// and emit values in this space; point predictions are mapped back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TargetTransform {
    /// Raw targets.
    Identity,
    /// Natural log of the targets; requires strictly positive values.
    /// Gaussian noise in this space models multiplicative noise in the
    /// original space, which matches relative-error evaluation.
    Log,
}

impl Default for TargetTransform {
    fn default() -> Self {
        TargetTransform::Identity
    }
}

impl TargetTransform {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(TargetTransform::Identity),
            "log" => Ok(TargetTransform::Log),
            other => Err(Error::InvalidArgument(format!(
                "unknown target transform {other:?}"
            ))),
        }
    }

    /// Maps raw targets into training space.
    pub fn forward(self, ys: &[f64]) -> Result<Vec<f64>> {
        match self {
            TargetTransform::Identity => Ok(ys.to_vec()),
            TargetTransform::Log => ys
                .iter()
                .map(|&y| {
                    if y > 0.0 {
                        Ok(y.ln())
                    } else {
                        Err(Error::InvalidArgument(format!(
                            "log target transform needs positive targets, got {y}"
                        )))
                    }
                })
                .collect(),
        }
    }

    /// Maps one training-space value back to the original scale.
    pub fn inverse(self, t: f64) -> f64 {
        match self {
            TargetTransform::Identity => t,
            TargetTransform::Log => t.exp(),
        }
    }
}

/// Everything needed to run all strategies on one dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    pub arch: ArchConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub baseline: StageConfig,
    pub lambda: LambdaSchedule,
    pub beta: BetaSchedule,
    /// Weight of the confidence hinge in the alignment early-stop score.
    pub gamma: f64,
    /// Posterior std at variational initialization.
    pub init_std: f64,
    pub mc_samples: usize,
    pub transfer_mode: TransferMode,
    pub target_transform: TargetTransform,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let stage2 = StageConfig::stage2_default();
        PipelineConfig {
            arch: ArchConfig::default(),
            lambda: LambdaSchedule {
                total_epochs: stage2.max_epochs,
                ..LambdaSchedule::default()
            },
            stage1: StageConfig::stage1_default(),
            stage2,
            stage3: StageConfig::stage3_default(),
            baseline: StageConfig::baseline_default(),
            beta: BetaSchedule { beta_max: 0.02 },
            gamma: 0.5,
            init_std: 0.1,
            mc_samples: 200,
            transfer_mode: TransferMode::Full,
            target_transform: TargetTransform::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.stage3.validate()?;
        self.baseline.validate()?;
        self.lambda.validate()?;
        if self.stage2.batch_size % 2 != 0 {
            return Err(Error::InvalidConfig(
                "alignment batch size must be even".into(),
            ));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidConfig("gamma must be nonnegative".into()));
        }
        if self.init_std <= 0.0 {
            return Err(Error::InvalidConfig("init_std must be positive".into()));
        }
        if self.mc_samples < 2 {
            return Err(Error::InvalidConfig("mc_samples must be at least 2".into()));
        }
        if let TransferMode::Partial {
            unfrozen_top_layers,
        } = self.transfer_mode
        {
            // Extractor layer count includes the latent layer.
            let n_layers = self.arch.extractor_hidden.len() + 1;
            if unfrozen_top_layers > n_layers {
                return Err(Error::InvalidConfig(format!(
                    "cannot unfreeze {unfrozen_top_layers} of {n_layers} extractor layers"
                )));
            }
        }
        Ok(())
    }
}

/// Test-split evaluation of one trained model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<f64>,
    pub summaries: Option<Vec<PredictiveSummary>>,
}

/// Evaluates a model on a held-out split.
pub fn evaluate_model(
    model: &TrainedModel,
    split: &DataSplit,
    mc_samples: usize,
    eval_seed: u64,
) -> Result<Evaluation> {
    let xs = split.features();
    let ys = split.targets();
    let summaries = model.predict_uncertain(xs, mc_samples, eval_seed)?;
    let predictions = match &summaries {
        Some(s) => s
            .iter()
            .map(|p| model.target_transform.inverse(p.mean))
            .collect(),
        None => model.predict(xs, mc_samples, eval_seed)?,
    };
    let report = error_metrics(ys, &predictions)?;
    Ok(Evaluation {
        report,
        predictions,
        summaries,
    })
}

/// Trains one strategy on the benchmark, touching only train and val
/// splits. A shared source base may be passed so strategies reuse it.
pub fn train_strategy(
    bench: &Benchmark,
    cfg: &PipelineConfig,
    strategy: Strategy,
    shared_base: Option<&SourceBase>,
    seed: u64,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let mut model = match strategy {
        Strategy::FromScratch => train_from_scratch(
            &bench.target_train,
            &bench.target_val,
            cfg,
            derive_seed(seed, "scratch"),
        ),
        Strategy::DirectTransfer => {
            let owned;
            let base = match shared_base {
                Some(b) => b,
                None => {
                    owned = stage1_pretrain(
                        &bench.source_train,
                        &bench.source_val,
                        cfg,
                        derive_seed(seed, "stage1"),
                    )?;
                    &owned
                }
            };
            train_direct_transfer(
                base,
                &bench.target_train,
                &bench.target_val,
                cfg,
                cfg.transfer_mode,
                derive_seed(seed, "direct"),
            )
        }
        Strategy::StagedBdann => {
            let owned;
            let base = match shared_base {
                Some(b) => b,
                None => {
                    owned = stage1_pretrain(
                        &bench.source_train,
                        &bench.source_val,
                        cfg,
                        derive_seed(seed, "stage1"),
                    )?;
                    &owned
                }
            };
            let aligned = stage2_align(
                base,
                &bench.source_train,
                &bench.source_val,
                &bench.target_train,
                cfg,
                derive_seed(seed, "stage2"),
            )?;
            stage3_finetune(
                &aligned,
                &bench.target_train,
                &bench.target_val,
                cfg,
                derive_seed(seed, "stage3"),
            )
        }
    }?;
    // The recorded seed is the run-level one, not a stage derivation.
    model.seed = seed;
    model.validate()?;
    Ok(model)
}

/// Mean, spread and confidence half-width of each metric over an ensemble.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnsembleReport {
    pub strategy: Strategy,
    pub n_runs: usize,
    /// (seed, per-run metrics), sorted by seed.
    pub per_run: Vec<(u64, MetricsReport)>,
    /// (seed, error message) for runs that failed.
    pub failures: Vec<(u64, String)>,
    pub mean: MetricsReport,
    /// Sample standard deviation across runs.
    pub std: MetricsReport,
    /// 95% half-width of the ensemble mean: 1.96 std / sqrt(n).
    pub ci95_half: MetricsReport,
}

/// Aggregates per-run reports. Runs are sorted by seed first, so the result
/// is invariant to input order.
pub fn aggregate_reports(
    strategy: Strategy,
    per_run: &[(u64, MetricsReport)],
    failures: Vec<(u64, String)>,
) -> Result<EnsembleReport> {
    if per_run.len() < 2 {
        return Err(Error::Degenerate(format!(
            "ensemble needs at least 2 surviving runs, got {}",
            per_run.len()
        )));
    }
    let mut sorted = per_run.to_vec();
    sorted.sort_by_key(|(s, _)| *s);
    let n = sorted.len() as f64;
    let pick =
        |f: fn(&MetricsReport) -> f64| -> (f64, f64, f64) {
            let mean = sorted.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
            let var = sorted
                .iter()
                .map(|(_, r)| (f(r) - mean) * (f(r) - mean))
                .sum::<f64>()
                / (n - 1.0);
            let std = var.sqrt();
            (mean, std, 1.96 * std / n.sqrt())
        };
    let fields: [fn(&MetricsReport) -> f64; 6] = [
        |r| r.mu_error_pct,
        |r| r.max_error_pct,
        |r| r.std_error_pct,
        |r| r.rrmse_pct,
        |r| r.p_over_10_pct,
        |r| r.r2,
    ];
    let mut out = [[0.0; 3]; 6];
    for (k, f) in fields.iter().enumerate() {
        let (m, s, c) = pick(*f);
        out[k] = [m, s, c];
    }
    let build = |col: usize| MetricsReport {
        mu_error_pct: out[0][col],
        max_error_pct: out[1][col],
        std_error_pct: out[2][col],
        rrmse_pct: out[3][col],
        p_over_10_pct: out[4][col],
        r2: out[5][col],
    };
    Ok(EnsembleReport {
        strategy,
        n_runs: sorted.len(),
        per_run: sorted,
        failures,
        mean: build(0),
        std: build(1),
        ci95_half: build(2),
    })
}

/// Trains and evaluates one strategy across consecutive seeds
/// (base_seed..base_seed + n_runs). Runs are independent and may execute in
/// parallel; aggregation is by seed order either way.
pub fn run_seed_ensemble(
    bench: &Benchmark,
    cfg: &PipelineConfig,
    strategy: Strategy,
    n_runs: usize,
    base_seed: u64,
    workers: usize,
) -> Result<EnsembleReport> {
    if n_runs < 2 {
        return Err(Error::InvalidArgument(
            "ensemble needs at least 2 runs".into(),
        ));
    }
    let seeds: Vec<u64> = (0..n_runs as u64).map(|i| base_seed + i).collect();
    let run_one = |&seed: &u64| -> (u64, Result<MetricsReport>) {
        let outcome = train_strategy(bench, cfg, strategy, None, seed).and_then(|model| {
            evaluate_model(
                &model,
                &bench.target_test,
                cfg.mc_samples,
                derive_seed(seed, "eval"),
            )
            .map(|e| e.report)
        });
        (seed, outcome)
    };
    let results: Vec<(u64, Result<MetricsReport>)> = in_pool(workers, || {
        seeds.par_iter().map(run_one).collect()
    })?;
    let mut per_run = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(r) => per_run.push((seed, r)),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    aggregate_reports(strategy, &per_run, failures)
}

/// Per-seed outcome of the full three-strategy comparison.
#[derive(Debug)]
pub struct SeedComparison {
    pub seed: u64,
    pub scratch: Result<MetricsReport>,
    pub direct: Result<MetricsReport>,
    pub staged: Result<MetricsReport>,
}

/// All three strategies over one seed, sharing a single source-trained
/// base between the transfer strategies.
pub fn run_benchmark_seed(
    bench: &Benchmark,
    cfg: &PipelineConfig,
    seed: u64,
) -> SeedComparison {
    let eval = |model: Result<TrainedModel>| -> Result<MetricsReport> {
        model.and_then(|m| {
            evaluate_model(
                &m,
                &bench.target_test,
                cfg.mc_samples,
                derive_seed(seed, "eval"),
            )
            .map(|e| e.report)
        })
    };
    let base = stage1_pretrain(
        &bench.source_train,
        &bench.source_val,
        cfg,
        derive_seed(seed, "stage1"),
    );
    let scratch = eval(train_strategy(bench, cfg, Strategy::FromScratch, None, seed));
    let (direct, staged) = match &base {
        Ok(b) => (
            eval(train_strategy(
                bench,
                cfg,
                Strategy::DirectTransfer,
                Some(b),
                seed,
            )),
            eval(train_strategy(
                bench,
                cfg,
                Strategy::StagedBdann,
                Some(b),
                seed,
            )),
        ),
        Err(e) => (
            Err(Error::InvalidArgument(format!("source base failed: {e}"))),
            Err(Error::InvalidArgument(format!("source base failed: {e}"))),
        ),
    };
    SeedComparison {
        seed,
        scratch,
        direct,
        staged,
    }
}

/// Three-strategy ensembles with a shared per-seed source base.
#[derive(Debug, Clone)]
pub struct BenchmarkEnsembles {
    pub scratch: EnsembleReport,
    pub direct: EnsembleReport,
    pub staged: EnsembleReport,
}

pub fn run_benchmark_ensembles(
    bench: &Benchmark,
    cfg: &PipelineConfig,
    n_runs: usize,
    base_seed: u64,
    workers: usize,
) -> Result<BenchmarkEnsembles> {
    if n_runs < 2 {
        return Err(Error::InvalidArgument(
            "ensemble needs at least 2 runs".into(),
        ));
    }
    let seeds: Vec<u64> = (0..n_runs as u64).map(|i| base_seed + i).collect();
    let comparisons: Vec<SeedComparison> = in_pool(workers, || {
        seeds
            .par_iter()
            .map(|&s| run_benchmark_seed(bench, cfg, s))
            .collect()
    })?;
    let collect = |f: fn(&SeedComparison) -> &Result<MetricsReport>,
                   strategy: Strategy|
     -> Result<EnsembleReport> {
        let mut per_run = Vec::new();
        let mut failures = Vec::new();
        for c in &comparisons {
            match f(c) {
                Ok(r) => per_run.push((c.seed, *r)),
                Err(e) => failures.push((c.seed, e.to_string())),
            }
        }
        aggregate_reports(strategy, &per_run, failures)
    };
    Ok(BenchmarkEnsembles {
        scratch: collect(|c| &c.scratch, Strategy::FromScratch)?,
        direct: collect(|c| &c.direct, Strategy::DirectTransfer)?,
        staged: collect(|c| &c.staged, Strategy::StagedBdann)?,
    })
}

/// Runs a closure inside a rayon pool with `workers` threads (0 = rayon's
/// default). A dedicated pool keeps ensemble runs from competing with any
/// caller-level parallelism.
fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(mu: f64) -> MetricsReport {
        MetricsReport {
            mu_error_pct: mu,
            max_error_pct: mu * 2.0,
            std_error_pct: mu / 2.0,
            rrmse_pct: mu * 1.1,
            p_over_10_pct: 0.0,
            r2: 1.0 - mu / 100.0,
        }
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let runs = vec![(3, report(2.0)), (1, report(4.0)), (2, report(3.0))];
        let mut shuffled = runs.clone();
        shuffled.rotate_left(1);
        let a = aggregate_reports(Strategy::FromScratch, &runs, vec![]).unwrap();
        let b = aggregate_reports(Strategy::FromScratch, &shuffled, vec![]).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.std, b.std);
        assert_eq!(a.ci95_half, b.ci95_half);
        assert_eq!(a.per_run, b.per_run);
    }

    #[test]
    fn identical_runs_give_zero_width_intervals() {
        let runs = vec![(1, report(3.0)), (2, report(3.0))];
        let agg = aggregate_reports(Strategy::StagedBdann, &runs, vec![]).unwrap();
        assert_eq!(agg.mean.mu_error_pct, 3.0);
        assert_eq!(agg.std.mu_error_pct, 0.0);
        assert_eq!(agg.ci95_half.mu_error_pct, 0.0);
    }

    #[test]
    fn aggregation_matches_hand_computation() {
        let runs = vec![(1, report(2.0)), (2, report(4.0))];
        let agg = aggregate_reports(Strategy::DirectTransfer, &runs, vec![]).unwrap();
        assert_eq!(agg.mean.mu_error_pct, 3.0);
        // Sample std of {2, 4} is sqrt(2); CI half-width 1.96 sqrt(2)/sqrt(2).
        let sd = 2.0_f64.sqrt();
        assert!((agg.std.mu_error_pct - sd).abs() < 1e-12);
        assert!((agg.ci95_half.mu_error_pct - 1.96 * sd / sd).abs() < 1e-12);
    }

    #[test]
    fn fewer_than_two_survivors_is_an_error() {
        let runs = vec![(1, report(2.0))];
        assert!(aggregate_reports(Strategy::FromScratch, &runs, vec![]).is_err());
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.stage2.batch_size = 31;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.transfer_mode = TransferMode::Partial {
            unfrozen_top_layers: 99,
        };
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.mc_samples = 1;
        assert!(cfg.validate().is_err());
    }
}
