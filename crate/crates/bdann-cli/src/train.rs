//! Single-model commands: train one strategy under one seed and evaluate a
//! saved model. Training mirrors the library's seed derivations exactly, so
//! a model trained here equals one trained through the batch runners, while
//! also capturing the per-stage logs as CSV.

use bdann::adversarial::write_alignment_log;
use bdann::metrics::{error_metrics, MetricsReport};
use bdann::model_io::{load_any, save_hybrid, save_model, LoadedModel};
use bdann::pipeline::{
    evaluate_model, stage1_pretrain, stage2_align, stage3_finetune, train_direct_transfer,
    train_from_scratch, Evaluation, PipelineConfig, Strategy, TrainedModel,
};
use bdann::rng::derive_seed;
use bdann::synthetic::Benchmark;

use crate::artifacts::RunDir;
use crate::config::{CResult, Failure, Resolved};
use crate::dataset::{base_for_tag, build, fit_csv_corrector, BuiltDataset, CsvDataset};

#[derive(serde::Serialize)]
pub struct MetricsDoc {
    pub strategy: String,
    pub seed: u64,
    pub report: MetricsReport,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_test: usize,
}

/// Trains one strategy on the benchmark while writing stage logs, matching
/// the batch runners' seed derivations step for step.
pub fn train_logged(
    bench: &Benchmark,
    cfg: &PipelineConfig,
    strategy: Strategy,
    seed: u64,
    run: &RunDir,
) -> CResult<TrainedModel> {
    let mut model = match strategy {
        Strategy::FromScratch => train_from_scratch(
            &bench.target_train,
            &bench.target_val,
            cfg,
            derive_seed(seed, "scratch"),
        )
        .map_err(Failure::runtime)?,
        Strategy::DirectTransfer => {
            let base = stage1_pretrain(
                &bench.source_train,
                &bench.source_val,
                cfg,
                derive_seed(seed, "stage1"),
            )
            .map_err(Failure::runtime)?;
            run.write_history_csv("stage1_history.csv", &base.history)?;
            train_direct_transfer(
                &base,
                &bench.target_train,
                &bench.target_val,
                cfg,
                cfg.transfer_mode,
                derive_seed(seed, "direct"),
            )
            .map_err(Failure::runtime)?
        }
        Strategy::StagedBdann => {
            let base = stage1_pretrain(
                &bench.source_train,
                &bench.source_val,
                cfg,
                derive_seed(seed, "stage1"),
            )
            .map_err(Failure::runtime)?;
            run.write_history_csv("stage1_history.csv", &base.history)?;
            let aligned = stage2_align(
                &base,
                &bench.source_train,
                &bench.source_val,
                &bench.target_train,
                cfg,
                derive_seed(seed, "stage2"),
            )
            .map_err(Failure::runtime)?;
            write_alignment_log(&run.file("alignment_log.csv"), &aligned.log)
                .map_err(Failure::runtime)?;
            stage3_finetune(
                &aligned,
                &bench.target_train,
                &bench.target_val,
                cfg,
                derive_seed(seed, "stage3"),
            )
            .map_err(Failure::runtime)?
        }
    };
    model.seed = seed;
    model.validate().map_err(Failure::runtime)?;
    run.write_history_csv("history.csv", &model.history)?;
    Ok(model)
}

/// Predictions CSV for a plain model: row id, truth, prediction and, for
/// variational models, the three uncertainty columns.
fn write_plain_predictions(
    run: &RunDir,
    name: &str,
    split: &bdann::data::DataSplit,
    eval: &Evaluation,
) -> CResult<()> {
    let mut out = String::from("row_id,y_true,y_pred,epistemic_std,aleatoric_std,total_std\n");
    let ids = split.row_ids();
    let ys = split.targets();
    for i in 0..split.len() {
        let tail = match &eval.summaries {
            Some(s) => format!(
                "{},{},{}",
                s[i].epistemic_std, s[i].aleatoric_std, s[i].total_std
            ),
            None => ",,".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            ids[i], ys[i], eval.predictions[i], tail
        ));
    }
    run.write_bytes(name, out.as_bytes())
}

fn write_excluded(run: &RunDir, excluded: &[(String, u64, String)]) -> CResult<()> {
    if excluded.is_empty() {
        return Ok(());
    }
    let mut out = String::from("split,row_id,reason\n");
    for (split, id, why) in excluded {
        out.push_str(&format!("{split},{id},{}\n", why.replace(',', ";")));
    }
    run.write_bytes("excluded_rows.csv", out.as_bytes())
}

fn write_rejected(run: &RunDir, data: &CsvDataset) -> CResult<()> {
    if data.target.rejected.is_empty()
        && data.source.as_ref().map_or(true, |s| s.rejected.is_empty())
    {
        return Ok(());
    }
    let mut out = String::from("file,line,reason\n");
    for (line, why) in &data.target.rejected {
        out.push_str(&format!("target,{line},{}\n", why.replace(',', ";")));
    }
    if let Some(src) = &data.source {
        for (line, why) in &src.rejected {
            out.push_str(&format!("source,{line},{}\n", why.replace(',', ";")));
        }
    }
    run.write_bytes("rejected_rows.csv", out.as_bytes())
}

pub fn cmd_train(resolved: &Resolved, config_path: &std::path::Path) -> CResult<()> {
    let strategy = resolved.config.required_strategy()?;
    let cfg = resolved.config.pipeline.build()?;
    let seed = resolved.config.seed;
    let run = RunDir::create(&resolved.out_dir)?;
    let hash = run.write_config(&resolved.config)?;

    match build(&resolved.config.dataset, config_path)? {
        BuiltDataset::Synthetic(bench) => {
            let model = train_logged(&bench, &cfg, strategy, seed, &run)?;
            let eval = evaluate_model(
                &model,
                &bench.target_test,
                cfg.mc_samples,
                derive_seed(seed, "eval"),
            )
            .map_err(Failure::runtime)?;
            save_model(&run.file("model.txt"), &model).map_err(Failure::runtime)?;
            write_plain_predictions(&run, "predictions.csv", &bench.target_test, &eval)?;
            run.write_json(
                "metrics.json",
                &MetricsDoc {
                    strategy: strategy.to_string(),
                    seed,
                    report: eval.report,
                    best_epoch: model.history.best_epoch,
                    stopped_early: model.history.stopped_early,
                    n_test: bench.target_test.len(),
                },
            )?;
            run.write_manifest(
                "train",
                &hash,
                seed,
                &["model.txt", "history.csv", "metrics.json", "predictions.csv"],
            )?;
            println!(
                "{strategy}: mu_error {:.3}% r2 {:.4} ({})",
                eval.report.mu_error_pct,
                eval.report.r2,
                run.path.display()
            );
        }
        BuiltDataset::Csv(data) => {
            let fit = fit_csv_corrector(&data, strategy, &cfg, seed)?;
            let base = data.base()?;
            let pred = bdann::hybrid::hybrid_predict(
                &fit.model,
                base,
                &data.target.test,
                cfg.mc_samples,
                derive_seed(seed, "eval"),
            )
            .map_err(Failure::runtime)?;
            let report = error_metrics(data.target.test.targets(), &pred.mean)
                .map_err(Failure::runtime)?;
            save_hybrid(&run.file("model.txt"), &fit.model).map_err(Failure::runtime)?;
            run.write_history_csv("history.csv", &fit.model.corrector.history)?;
            bdann::hybrid::write_predictions_csv(
                &run.file("predictions.csv"),
                &data.target.test,
                &pred,
            )
            .map_err(Failure::runtime)?;
            write_excluded(&run, &fit.excluded)?;
            write_rejected(&run, &data)?;
            run.write_json(
                "metrics.json",
                &MetricsDoc {
                    strategy: strategy.to_string(),
                    seed,
                    report,
                    best_epoch: fit.model.corrector.history.best_epoch,
                    stopped_early: fit.model.corrector.history.stopped_early,
                    n_test: data.target.test.len(),
                },
            )?;
            run.write_manifest(
                "train",
                &hash,
                seed,
                &["model.txt", "history.csv", "metrics.json", "predictions.csv"],
            )?;
            println!(
                "{strategy}: mu_error {:.3}% r2 {:.4} ({})",
                report.mu_error_pct,
                report.r2,
                run.path.display()
            );
        }
    }
    Ok(())
}

pub fn cmd_evaluate(
    resolved: &Resolved,
    config_path: &std::path::Path,
    model_path: &std::path::Path,
) -> CResult<()> {
    let loaded = load_any(model_path).map_err(Failure::config)?;
    let run = RunDir::create(&resolved.out_dir)?;
    let hash = run.write_config(&resolved.config)?;

    match (build(&resolved.config.dataset, config_path)?, loaded) {
        (BuiltDataset::Synthetic(bench), LoadedModel::Plain(model)) => {
            let cfg = resolved.config.pipeline.build()?;
            let eval = evaluate_model(
                &model,
                &bench.target_test,
                cfg.mc_samples,
                derive_seed(model.seed, "eval"),
            )
            .map_err(Failure::runtime)?;
            write_plain_predictions(&run, "predictions.csv", &bench.target_test, &eval)?;
            run.write_json(
                "metrics.json",
                &MetricsDoc {
                    strategy: model.strategy.to_string(),
                    seed: model.seed,
                    report: eval.report,
                    best_epoch: model.history.best_epoch,
                    stopped_early: model.history.stopped_early,
                    n_test: bench.target_test.len(),
                },
            )?;
            run.write_manifest(
                "evaluate",
                &hash,
                model.seed,
                &["metrics.json", "predictions.csv"],
            )?;
            println!(
                "{}: mu_error {:.3}% r2 {:.4}",
                model.strategy, eval.report.mu_error_pct, eval.report.r2
            );
        }
        (BuiltDataset::Csv(data), LoadedModel::Hybrid(model)) => {
            let cfg = resolved.config.pipeline.build()?;
            let base = base_for_tag(&data, &model.base_tag)?;
            let pred = bdann::hybrid::hybrid_predict(
                &model,
                base,
                &data.target.test,
                cfg.mc_samples,
                derive_seed(model.corrector.seed, "eval"),
            )
            .map_err(Failure::runtime)?;
            let report = error_metrics(data.target.test.targets(), &pred.mean)
                .map_err(Failure::runtime)?;
            bdann::hybrid::write_predictions_csv(
                &run.file("predictions.csv"),
                &data.target.test,
                &pred,
            )
            .map_err(Failure::runtime)?;
            run.write_json(
                "metrics.json",
                &MetricsDoc {
                    strategy: model.corrector.strategy.to_string(),
                    seed: model.corrector.seed,
                    report,
                    best_epoch: model.corrector.history.best_epoch,
                    stopped_early: model.corrector.history.stopped_early,
                    n_test: data.target.test.len(),
                },
            )?;
            run.write_manifest(
                "evaluate",
                &hash,
                model.corrector.seed,
                &["metrics.json", "predictions.csv"],
            )?;
            println!(
                "{}: mu_error {:.3}% r2 {:.4}",
                model.corrector.strategy, report.mu_error_pct, report.r2
            );
        }
        (BuiltDataset::Synthetic(_), LoadedModel::Hybrid(_)) => {
            return Err(Failure::Config(
                "a corrector bundle needs its tabular dataset, not the synthetic one".into(),
            ))
        }
        (BuiltDataset::Csv(_), LoadedModel::Plain(_)) => {
            return Err(Failure::Config(
                "a plain model was trained on the synthetic dataset; the config names a CSV"
                    .into(),
            ))
        }
    }
    Ok(())
}
