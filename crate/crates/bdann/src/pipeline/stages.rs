//! The training loops behind every strategy.

use rand::seq::SliceRandom;

use crate::adversarial::{
    alignment_score, auc, balanced_batches, reverse_gradient, AlignmentLogRow,
};
use crate::bayes::{VarGradients, VariationalState};
use crate::data::{DataSplit, ZScore};
use crate::error::{Error, Result};
use crate::net::{
    adam_update_slice, loss_and_output_grad, mse, AdamState, Loss, Moments, NetworkSpec,
    NetworkState, OptimizerConfig,
};
use crate::pipeline::{
    EpochRecord, ModelParams, PipelineConfig, StageConfig, Strategy, TrainedModel,
    TrainingHistory, TransferMode,
};
use crate::rng::{derive_seed, stream};

/// Number of fixed posterior draws in the fine-tuning validation monitor.
const VAL_DRAWS: usize = 8;

/// Source-trained extractor and regression head, the shared starting point
/// for both transfer strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBase {
    pub extractor: NetworkState,
    pub head: NetworkState,
    pub history: TrainingHistory,
    pub seed: u64,
}

/// Stage-two result: the aligned extractor plus the untouched head.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedBase {
    pub extractor: NetworkState,
    pub head: NetworkState,
    pub classifier: NetworkState,
    pub log: Vec<AlignmentLogRow>,
    /// Validation AUC at the restored best epoch.
    pub final_val_auc: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub seed: u64,
}

/// Patience-based minimizer with best-value tracking.
struct EarlyStop {
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStop {
    fn new() -> Self {
        EarlyStop {
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Returns true when `value` improves on the best so far.
    fn observe(&mut self, epoch: usize, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    fn exhausted(&self, patience: usize) -> bool {
        self.since_best > patience
    }
}

fn diverged(epoch: usize, context: &str, losses: &[f64]) -> Error {
    Error::Diverged {
        epoch,
        context: context.to_string(),
        loss_history: losses.to_vec(),
    }
}

/// Trains an extractor/head pair on mean squared error with early stopping
/// on validation MSE. `frozen_extractor` flags skip layers wholesale;
/// `freeze_head` pins the head. Weights are restored to the best validation
/// epoch before returning.
#[allow(clippy::too_many_arguments)]
pub fn fit_deterministic_pair(
    extractor: &mut NetworkState,
    head: &mut NetworkState,
    train_x: &[Vec<f64>],
    train_y: &[f64],
    val_x: &[Vec<f64>],
    val_y: &[f64],
    cfg: &StageConfig,
    frozen_extractor: &[bool],
    freeze_head: bool,
    seed: u64,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::Shape("feature/target length mismatch".into()));
    }
    if cfg.max_epochs == 0 {
        return Ok(TrainingHistory::default());
    }
    if train_x.is_empty() || val_x.is_empty() {
        return Err(Error::Degenerate("empty training or validation set".into()));
    }
    let mut shuffle_rng = stream(derive_seed(seed, "fit/shuffle"));
    let mut dropout_rng = stream(derive_seed(seed, "fit/dropout"));
    let mut ext_adam = AdamState::new(extractor);
    let mut head_adam = AdamState::new(head);
    let head_mask = vec![false; head.spec().n_layers()];
    let mut stop = EarlyStop::new();
    let mut best = (extractor.clone(), head.clone());
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut losses: Vec<f64> = Vec::new();
    let mut idx: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 0..cfg.max_epochs {
        idx.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in idx.chunks(cfg.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let ext_cache = extractor.forward_cached(&bx, Some(&mut dropout_rng))?;
            let head_cache = head.forward_cached(ext_cache.output(), Some(&mut dropout_rng))?;
            let (loss, d_out) = loss_and_output_grad(Loss::Mse, &by, head_cache.output())?;
            if !loss.is_finite() {
                return Err(diverged(epoch, "batch MSE", &losses));
            }
            let (head_grads, d_latent) = head.backward_from(&head_cache, &d_out);
            if !freeze_head {
                head_adam
                    .step(head, &head_grads, &cfg.optimizer, epoch, &head_mask)
                    .map_err(|e| diverged(epoch, &e.to_string(), &losses))?;
            }
            if !frozen_extractor.iter().all(|&f| f) {
                let (ext_grads, _) = extractor.backward_from(&ext_cache, &d_latent);
                ext_adam
                    .step(extractor, &ext_grads, &cfg.optimizer, epoch, frozen_extractor)
                    .map_err(|e| diverged(epoch, &e.to_string(), &losses))?;
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_x.len() as f64;
        let latent = extractor.infer_batch(val_x)?;
        let preds: Vec<f64> = head.infer_batch(&latent)?.iter().map(|r| r[0]).collect();
        let val_loss = mse(val_y, &preds)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, "validation MSE", &losses));
        }
        losses.push(train_loss);
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if stop.observe(epoch, val_loss) {
            best = (extractor.clone(), head.clone());
        }
        if stop.exhausted(cfg.patience) {
            *extractor = best.0;
            *head = best.1;
            return Ok(TrainingHistory {
                records,
                best_epoch: stop.best_epoch,
                stopped_early: true,
            });
        }
    }
    *extractor = best.0;
    *head = best.1;
    Ok(TrainingHistory {
        records,
        best_epoch: stop.best_epoch,
        stopped_early: false,
    })
}

/// Trains the source regression base: fresh extractor and head fit to the
/// source domain with early stopping on source validation MSE.
pub fn stage1_pretrain(
    source_train: &DataSplit,
    source_val: &DataSplit,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<SourceBase> {
    let ext_spec = cfg.arch.extractor_spec(source_train.n_features())?;
    let mut extractor = NetworkState::init(ext_spec, derive_seed(seed, "init/extractor"));
    let mut head = NetworkState::init(cfg.arch.head_spec()?, derive_seed(seed, "init/head"));
    let frozen = vec![false; extractor.spec().n_layers()];
    let train_y = cfg.target_transform.forward(source_train.targets())?;
    let val_y = cfg.target_transform.forward(source_val.targets())?;
    let history = fit_deterministic_pair(
        &mut extractor,
        &mut head,
        source_train.features(),
        &train_y,
        source_val.features(),
        &val_y,
        &cfg.stage1,
        &frozen,
        false,
        seed,
    )?;
    Ok(SourceBase {
        extractor,
        head,
        history,
        seed,
    })
}

/// Carves a fraction of a split into a holdout; both parts keep at least
/// one row. Returns (pool, holdout).
fn carve_holdout(split: &DataSplit, frac: f64, seed: u64) -> Result<(DataSplit, DataSplit)> {
    let n = split.len();
    if n < 2 {
        return Err(Error::Degenerate(
            "need at least 2 rows to carve a holdout".into(),
        ));
    }
    let n_hold = ((n as f64 * frac).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed));
    let (hold_idx, pool_idx) = idx.split_at(n_hold);
    Ok((split.subset(pool_idx)?, split.subset(hold_idx)?))
}

/// Aligns the extractor's latent distribution across domains.
///
/// A domain classifier learns to tell source from target latents while the
/// extractor, trained through a sign-flipped gradient scaled by the epoch's
/// lambda, learns to defeat it. The regression head is never touched. Early
/// stopping minimizes |AUC - 1/2| + gamma * max(0, ln 2 - BCE) on a 20%
/// domain-stratified holdout, and the best epoch's weights are restored.
pub fn stage2_align(
    base: &SourceBase,
    source_train: &DataSplit,
    source_val: &DataSplit,
    target_train: &DataSplit,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<AlignedBase> {
    let stage = &cfg.stage2;
    stage.validate()?;
    if stage.max_epochs == 0 {
        return Err(Error::InvalidConfig(
            "alignment needs at least one epoch".into(),
        ));
    }
    let mut extractor = base.extractor.clone();
    let head = base.head.clone();
    let mut classifier = NetworkState::init(
        cfg.arch.classifier_spec()?,
        derive_seed(seed, "init/classifier"),
    );

    let (src_pool, src_hold) =
        carve_holdout(source_train, 0.2, derive_seed(seed, "holdout/source"))?;
    let (tgt_pool, tgt_hold) =
        carve_holdout(target_train, 0.2, derive_seed(seed, "holdout/target"))?;
    let mut hold_x: Vec<Vec<f64>> = src_hold.features().to_vec();
    hold_x.extend(tgt_hold.features().iter().cloned());
    let mut hold_labels = vec![0.0; src_hold.len()];
    hold_labels.extend(vec![1.0; tgt_hold.len()]);

    let src_val_y = cfg.target_transform.forward(source_val.targets())?;
    let mut batch_rng = stream(derive_seed(seed, "align/batches"));
    let mut dropout_rng = stream(derive_seed(seed, "align/dropout"));
    let mut ext_adam = AdamState::new(&extractor);
    let mut clf_adam = AdamState::new(&classifier);
    let ext_mask = vec![false; extractor.spec().n_layers()];
    let clf_mask = vec![false; classifier.spec().n_layers()];
    let mut stop = EarlyStop::new();
    // A fresh classifier sits at AUC 1/2 and BCE ln 2 by accident, which is
    // exactly what the score rewards. Tracking therefore starts after the
    // lambda warmup, once the game is actually being played.
    let mut best: Option<(NetworkState, NetworkState, f64)> = None;
    let mut log: Vec<AlignmentLogRow> = Vec::new();
    let mut losses: Vec<f64> = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..stage.max_epochs {
        let lambda = cfg.lambda.lambda_at(epoch);
        let batches = balanced_batches(&src_pool, &tgt_pool, stage.batch_size, &mut batch_rng)?;
        let mut bce_sum = 0.0;
        let mut rows = 0usize;
        for batch in &batches {
            let ext_cache = extractor.forward_cached(&batch.x, Some(&mut dropout_rng))?;
            let clf_cache =
                classifier.forward_cached(ext_cache.output(), Some(&mut dropout_rng))?;
            let (loss, d_out) =
                loss_and_output_grad(Loss::Bce, &batch.labels, clf_cache.output())?;
            if !loss.is_finite() {
                return Err(diverged(epoch, "batch domain BCE", &losses));
            }
            let (clf_grads, d_latent) = classifier.backward_from(&clf_cache, &d_out);
            clf_adam
                .step(&mut classifier, &clf_grads, &stage.optimizer, epoch, &clf_mask)
                .map_err(|e| diverged(epoch, &e.to_string(), &losses))?;
            let reversed = reverse_gradient(&d_latent, lambda);
            let (ext_grads, _) = extractor.backward_from(&ext_cache, &reversed);
            ext_adam
                .step(&mut extractor, &ext_grads, &stage.optimizer, epoch, &ext_mask)
                .map_err(|e| diverged(epoch, &e.to_string(), &losses))?;
            bce_sum += loss * batch.x.len() as f64;
            rows += batch.x.len();
        }
        let train_bce = bce_sum / rows.max(1) as f64;
        losses.push(train_bce);

        let latent = extractor.infer_batch(&hold_x)?;
        let probs: Vec<f64> = classifier
            .infer_batch(&latent)?
            .iter()
            .map(|r| r[0])
            .collect();
        let val_bce = crate::net::bce(&hold_labels, &probs)?;
        let val_auc = auc(&probs, &hold_labels)?;
        let score = alignment_score(val_auc, val_bce, cfg.gamma);
        let src_latent = extractor.infer_batch(source_val.features())?;
        let src_preds: Vec<f64> = head.infer_batch(&src_latent)?.iter().map(|r| r[0]).collect();
        let source_head_mse = mse(&src_val_y, &src_preds)?;
        log.push(AlignmentLogRow {
            epoch,
            lambda,
            train_bce,
            val_bce,
            val_auc,
            score,
            source_head_mse,
        });
        if epoch >= cfg.lambda.warmup_epochs {
            if stop.observe(epoch, score) {
                best = Some((extractor.clone(), classifier.clone(), val_auc));
            }
            if stop.exhausted(stage.patience) {
                stopped_early = true;
                break;
            }
        }
    }
    // All-warmup runs never observe a score; the end state is the answer.
    let (best_ext, best_clf, best_auc) = best.unwrap_or_else(|| {
        let auc = log.last().map(|r| r.val_auc).unwrap_or(0.5);
        (extractor, classifier, auc)
    });
    Ok(AlignedBase {
        extractor: best_ext,
        head,
        classifier: best_clf,
        log,
        final_val_auc: best_auc,
        best_epoch: stop.best_epoch,
        stopped_early,
        seed,
    })
}

/// Stacks extractor and head into one network; forward passes through the
/// composite reproduce head(extractor(x)) operation for operation.
pub fn compose_extractor_head(
    extractor: &NetworkState,
    head: &NetworkState,
) -> Result<NetworkState> {
    if extractor.spec().out_dim() != head.spec().in_dim() {
        return Err(Error::Shape(format!(
            "extractor emits {} features, head expects {}",
            extractor.spec().out_dim(),
            head.spec().in_dim()
        )));
    }
    let mut sizes = extractor.spec().layer_sizes().to_vec();
    sizes.extend_from_slice(&head.spec().layer_sizes()[1..]);
    let mut acts = extractor.spec().activations().to_vec();
    acts.extend_from_slice(head.spec().activations());
    let mut drops = extractor.spec().dropout().to_vec();
    drops.extend_from_slice(head.spec().dropout());
    let spec = NetworkSpec::new(sizes, acts, drops)?;
    let mut weights = extractor.weights().to_vec();
    weights.extend(head.weights().iter().cloned());
    let mut biases = extractor.biases().to_vec();
    biases.extend(head.biases().iter().cloned());
    NetworkState::from_parts(spec, weights, biases)
}

/// Adam over the four variational parameter groups of every layer.
struct VarAdam {
    w_mean: Vec<Moments>,
    w_rho: Vec<Moments>,
    b_mean: Vec<Moments>,
    b_rho: Vec<Moments>,
    t: u64,
}

impl VarAdam {
    fn new(state: &VariationalState) -> Self {
        let m = |n: usize| Moments::zeros(n);
        VarAdam {
            w_mean: state
                .layers()
                .iter()
                .map(|l| m(l.w_mean.rows() * l.w_mean.cols()))
                .collect(),
            w_rho: state
                .layers()
                .iter()
                .map(|l| m(l.w_rho.rows() * l.w_rho.cols()))
                .collect(),
            b_mean: state.layers().iter().map(|l| m(l.b_mean.len())).collect(),
            b_rho: state.layers().iter().map(|l| m(l.b_rho.len())).collect(),
            t: 0,
        }
    }

    /// L2 decay applies to posterior weight means only; spreads and biases
    /// are regularized by the KL term alone.
    fn step(
        &mut self,
        state: &mut VariationalState,
        grads: &VarGradients,
        cfg: &OptimizerConfig,
        epoch: usize,
    ) -> Result<()> {
        self.t += 1;
        let lr = cfg.lr_at(epoch);
        for l in 0..state.layers().len() {
            let layer = &mut state.layers_mut()[l];
            adam_update_slice(
                layer.w_mean.as_mut_slice(),
                grads.d_w_mean[l].as_slice(),
                &mut self.w_mean[l],
                self.t,
                lr,
                cfg,
                cfg.l2_penalty,
                &format!("layer {l} weight means"),
            )?;
            adam_update_slice(
                layer.w_rho.as_mut_slice(),
                grads.d_w_rho[l].as_slice(),
                &mut self.w_rho[l],
                self.t,
                lr,
                cfg,
                0.0,
                &format!("layer {l} weight spreads"),
            )?;
            adam_update_slice(
                &mut layer.b_mean,
                &grads.d_b_mean[l],
                &mut self.b_mean[l],
                self.t,
                lr,
                cfg,
                0.0,
                &format!("layer {l} bias means"),
            )?;
            adam_update_slice(
                &mut layer.b_rho,
                &grads.d_b_rho[l],
                &mut self.b_rho[l],
                self.t,
                lr,
                cfg,
                0.0,
                &format!("layer {l} bias spreads"),
            )?;
        }
        Ok(())
    }
}

/// Validation monitor for fine-tuning: mean Gaussian NLL over a fixed set
/// of posterior draws plus the fully-annealed KL weight. Reusing the same
/// draw seeds each epoch makes epochs comparable; scoring KL at beta_max
/// keeps the monitored quantity on one scale while beta ramps.
fn finetune_val_monitor(
    state: &VariationalState,
    val_x: &[Vec<f64>],
    val_y: &[f64],
    beta_max: f64,
    n_train: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = stream(seed);
    let mut nll_sum = 0.0;
    for _ in 0..VAL_DRAWS {
        let sampled = state.sample_weights(&mut rng);
        let outputs = sampled.infer_batch(val_x)?;
        nll_sum += crate::net::gaussian_nll(val_y, &outputs)?;
    }
    Ok(nll_sum / VAL_DRAWS as f64 + beta_max * state.kl_total() / n_train as f64)
}

/// Turns the aligned deterministic stack into a variational network and
/// fine-tunes it on target data by stochastic-gradient variational
/// inference with an annealed KL weight.
pub fn stage3_finetune(
    aligned: &AlignedBase,
    target_train: &DataSplit,
    target_val: &DataSplit,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let stage = &cfg.stage3;
    stage.validate()?;
    if stage.max_epochs == 0 {
        return Err(Error::InvalidConfig(
            "fine-tuning needs at least one epoch".into(),
        ));
    }
    let composed = compose_extractor_head(&aligned.extractor, &aligned.head)?;
    let mut state =
        VariationalState::from_deterministic(&composed, cfg.init_std, derive_seed(seed, "varhead"))?;
    let extractor_layers = aligned.extractor.spec().n_layers();

    let train_x = target_train.features().to_vec();
    let train_y = cfg.target_transform.forward(target_train.targets())?;
    let val_x = target_val.features().to_vec();
    let val_y = cfg.target_transform.forward(target_val.targets())?;
    if train_x.is_empty() || val_x.is_empty() {
        return Err(Error::Degenerate("empty training or validation set".into()));
    }
    let n_train = train_x.len();

    let mut shuffle_rng = stream(derive_seed(seed, "finetune/shuffle"));
    let mut draw_rng = stream(derive_seed(seed, "finetune/draws"));
    let val_seed = derive_seed(seed, "finetune/val");
    let mut adam = VarAdam::new(&state);
    let mut stop = EarlyStop::new();
    let mut best = state.clone();
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut losses: Vec<f64> = Vec::new();
    let mut idx: Vec<usize> = (0..n_train).collect();
    let mut stopped_early = false;

    for epoch in 0..stage.max_epochs {
        let progress = epoch as f64 / stage.max_epochs as f64;
        let beta = cfg.beta.beta_at(progress);
        idx.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in idx.chunks(stage.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, grads) = crate::bayes::elbo_grad(&bx, &by, &state, beta, n_train, &mut draw_rng)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, "batch ELBO", &losses));
            }
            adam.step(&mut state, &grads, &stage.optimizer, epoch)
                .map_err(|e| diverged(epoch, &e.to_string(), &losses))?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / n_train as f64;
        losses.push(train_loss);
        let val_loss =
            finetune_val_monitor(&state, &val_x, &val_y, cfg.beta.beta_max, n_train, val_seed)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, "validation monitor", &losses));
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if stop.observe(epoch, val_loss) {
            best = state.clone();
        }
        if stop.exhausted(stage.patience) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainedModel {
        strategy: Strategy::StagedBdann,
        params: ModelParams::Variational {
            net: best,
            extractor_layers,
        },
        history: TrainingHistory {
            records,
            best_epoch: stop.best_epoch,
            stopped_early,
        },
        seed,
        input_scaler: None,
        target_transform: cfg.target_transform,
    })
}

/// Target-only baseline: fresh networks, features re-standardized on the
/// baseline's own training rows. The fitted scaler travels with the model
/// and is applied before every prediction.
pub fn train_from_scratch(
    target_train: &DataSplit,
    target_val: &DataSplit,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let scaler = ZScore::fit(target_train.features())?;
    let train_x = scaler.transform(target_train.features());
    let val_x = scaler.transform(target_val.features());
    let train_y = cfg.target_transform.forward(target_train.targets())?;
    let val_y = cfg.target_transform.forward(target_val.targets())?;
    let ext_spec = cfg.arch.extractor_spec(target_train.n_features())?;
    let mut extractor = NetworkState::init(ext_spec, derive_seed(seed, "init/extractor"));
    let mut head = NetworkState::init(cfg.arch.head_spec()?, derive_seed(seed, "init/head"));
    let frozen = vec![false; extractor.spec().n_layers()];
    let history = fit_deterministic_pair(
        &mut extractor,
        &mut head,
        &train_x,
        &train_y,
        &val_x,
        &val_y,
        &cfg.baseline,
        &frozen,
        false,
        seed,
    )?;
    Ok(TrainedModel {
        strategy: Strategy::FromScratch,
        params: ModelParams::Deterministic { extractor, head },
        history,
        seed,
        input_scaler: Some(scaler),
        target_transform: cfg.target_transform,
    })
}

/// Deterministic transfer baseline in three flavors: frozen extractor with
/// a fresh head, partial unfreezing of the top extractor layers, or full
/// fine-tuning of the source weights.
pub fn train_direct_transfer(
    base: &SourceBase,
    target_train: &DataSplit,
    target_val: &DataSplit,
    cfg: &PipelineConfig,
    mode: TransferMode,
    seed: u64,
) -> Result<TrainedModel> {
    let n_ext = base.extractor.spec().n_layers();
    let mut extractor = base.extractor.clone();
    let (mut head, frozen) = match mode {
        TransferMode::Frozen => (
            NetworkState::init(cfg.arch.head_spec()?, derive_seed(seed, "init/head")),
            vec![true; n_ext],
        ),
        TransferMode::Partial {
            unfrozen_top_layers,
        } => {
            if unfrozen_top_layers > n_ext {
                return Err(Error::InvalidArgument(format!(
                    "cannot unfreeze top {unfrozen_top_layers} of {n_ext} extractor layers"
                )));
            }
            let mut frozen = vec![true; n_ext];
            for f in frozen.iter_mut().skip(n_ext - unfrozen_top_layers) {
                *f = false;
            }
            (base.head.clone(), frozen)
        }
        TransferMode::Full => (base.head.clone(), vec![false; n_ext]),
    };
    let train_y = cfg.target_transform.forward(target_train.targets())?;
    let val_y = cfg.target_transform.forward(target_val.targets())?;
    let history = fit_deterministic_pair(
        &mut extractor,
        &mut head,
        target_train.features(),
        &train_y,
        target_val.features(),
        &val_y,
        &cfg.baseline,
        &frozen,
        false,
        seed,
    )?;
    Ok(TrainedModel {
        strategy: Strategy::DirectTransfer,
        params: ModelParams::Deterministic { extractor, head },
        history,
        seed,
        input_scaler: None,
        target_transform: cfg.target_transform,
    })
}
