//! Residual-correction command: trains a corrector on top of the dataset's
//! base-prediction column and reports hybrid accuracy next to the base
//! model's own. With an ensemble block it repeats over consecutive seeds
//! and writes the usual summary tables.

use bdann::hybrid::{hybrid_predict, write_predictions_csv};
use bdann::metrics::{error_metrics, MetricsReport};
use bdann::model_io::save_hybrid;
use bdann::pipeline::aggregate_reports;
use bdann::rng::derive_seed;

use crate::artifacts::RunDir;
use crate::config::{CResult, Failure, Resolved};
use crate::dataset::{build, fit_csv_corrector, BuiltDataset, CsvDataset};
use crate::ensemble::write_ensemble_outputs;
use crate::train::MetricsDoc;

#[derive(serde::Serialize)]
struct HybridMetricsDoc {
    hybrid: MetricsDoc,
    base: MetricsReport,
    base_tag: String,
}

/// Base-only accuracy on the test split.
fn base_report(data: &CsvDataset) -> CResult<MetricsReport> {
    let base = data.base()?;
    let split = &data.target.test;
    let mut preds = Vec::with_capacity(split.len());
    for i in 0..split.len() {
        preds.push(
            base.predict_row(&split.features()[i], split.row_ids()[i])
                .map_err(Failure::runtime)?,
        );
    }
    error_metrics(split.targets(), &preds).map_err(Failure::runtime)
}

pub fn cmd_hybrid(resolved: &Resolved, config_path: &std::path::Path) -> CResult<()> {
    let data = match build(&resolved.config.dataset, config_path)? {
        BuiltDataset::Csv(d) => d,
        BuiltDataset::Synthetic(_) => {
            return Err(Failure::Config(
                "hybrid correction needs a CSV dataset with a base column".into(),
            ))
        }
    };
    if data.base_column.is_none() {
        return Err(Failure::Config(
            "hybrid correction needs dataset.base_column".into(),
        ));
    }
    let strategy = resolved.config.required_strategy()?;
    let cfg = resolved.config.pipeline.build()?;
    let n_runs = resolved.config.ensemble.n_runs.unwrap_or(1);
    let base_seed = resolved
        .config
        .ensemble
        .base_seed
        .unwrap_or(resolved.config.seed);

    let run = RunDir::create(&resolved.out_dir)?;
    let hash = run.write_config(&resolved.config)?;
    let base_metrics = base_report(&data)?;

    let run_one = |seed: u64, log_into: Option<&RunDir>| -> CResult<(MetricsReport, MetricsDoc)> {
        let fit = fit_csv_corrector(&data, strategy, &cfg, seed)?;
        let base = data.base()?;
        let pred = hybrid_predict(
            &fit.model,
            base,
            &data.target.test,
            cfg.mc_samples,
            derive_seed(seed, "eval"),
        )
        .map_err(Failure::runtime)?;
        let report =
            error_metrics(data.target.test.targets(), &pred.mean).map_err(Failure::runtime)?;
        if let Some(dir) = log_into {
            save_hybrid(&dir.file("model.txt"), &fit.model).map_err(Failure::runtime)?;
            dir.write_history_csv("history.csv", &fit.model.corrector.history)?;
            write_predictions_csv(&dir.file("predictions.csv"), &data.target.test, &pred)
                .map_err(Failure::runtime)?;
        }
        let doc = MetricsDoc {
            strategy: strategy.to_string(),
            seed,
            report,
            best_epoch: fit.model.corrector.history.best_epoch,
            stopped_early: fit.model.corrector.history.stopped_early,
            n_test: data.target.test.len(),
        };
        Ok((report, doc))
    };

    if n_runs <= 1 {
        let (report, doc) = run_one(resolved.config.seed, Some(&run))?;
        run.write_json(
            "metrics.json",
            &HybridMetricsDoc {
                hybrid: doc,
                base: base_metrics,
                base_tag: data.base_column.clone().unwrap_or_default(),
            },
        )?;
        run.write_manifest(
            "hybrid",
            &hash,
            resolved.config.seed,
            &["model.txt", "history.csv", "metrics.json", "predictions.csv"],
        )?;
        println!(
            "{strategy} corrector: mu_error {:.3}% (base alone {:.3}%)",
            report.mu_error_pct, base_metrics.mu_error_pct
        );
    } else {
        let mut per_run = Vec::new();
        let mut failures = Vec::new();
        for i in 0..n_runs as u64 {
            let seed = base_seed + i;
            // The first seed doubles as the archived single model.
            let log_into = if i == 0 { Some(&run) } else { None };
            match run_one(seed, log_into) {
                Ok((report, _)) => per_run.push((seed, report)),
                Err(Failure::Config(e)) => return Err(Failure::Config(e)),
                Err(Failure::Runtime(e)) => failures.push((seed, e)),
            }
        }
        let rep =
            aggregate_reports(strategy, &per_run, failures).map_err(Failure::runtime)?;
        let mut outputs = write_ensemble_outputs(&run, &[&rep])?;
        run.write_json("base_metrics.json", &base_metrics)?;
        outputs.push("base_metrics.json");
        outputs.push("model.txt");
        run.write_manifest("hybrid", &hash, base_seed, &outputs)?;
        println!(
            "{strategy} corrector over {} seeds: mu_error {:.3} +/- {:.3}% (base alone {:.3}%)",
            rep.n_runs,
            rep.mean.mu_error_pct,
            rep.ci95_half.mu_error_pct,
            base_metrics.mu_error_pct
        );
    }
    println!("wrote {}", run.path.display());
    Ok(())
}
