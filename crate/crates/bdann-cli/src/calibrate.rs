//! Calibration command: reliability curves for the epistemic, aleatoric
//! and total uncertainty of a variational model, plus the relative-spread
//! histogram. Works on a freshly trained model or a saved one.

use bdann::metrics::{
    calibration, rstd_distribution, write_calibration_csv, write_rstd_csv, CalibrationResult,
    UncertaintySource,
};
use bdann::model_io::{load_any, LoadedModel};
use bdann::pipeline::{evaluate_model, Strategy};
use bdann::rng::derive_seed;

use crate::artifacts::RunDir;
use crate::config::{CResult, Failure, Resolved};
use crate::dataset::{base_for_tag, build, fit_csv_corrector, BuiltDataset};
use crate::train::train_logged;

#[derive(serde::Serialize)]
struct SourceDoc {
    miscalibration_area: f64,
    excluded_rows: usize,
}

#[derive(serde::Serialize)]
struct CalibrationDoc {
    n_test: usize,
    epistemic: SourceDoc,
    aleatoric: SourceDoc,
    total: SourceDoc,
    rstd_mean: f64,
    rstd_min: f64,
    rstd_max: f64,
    rstd_skewness: f64,
}

fn doc_entry(r: &CalibrationResult) -> SourceDoc {
    SourceDoc {
        miscalibration_area: r.miscalibration_area,
        excluded_rows: r.excluded_rows,
    }
}

fn write_curves(
    run: &RunDir,
    y_true: &[f64],
    summaries: &[bdann::bayes::PredictiveSummary],
    rstd_bins: usize,
) -> CResult<CalibrationDoc> {
    let epi = calibration(y_true, summaries, UncertaintySource::Epistemic)
        .map_err(Failure::runtime)?;
    let ale = calibration(y_true, summaries, UncertaintySource::Aleatoric)
        .map_err(Failure::runtime)?;
    let tot =
        calibration(y_true, summaries, UncertaintySource::Total).map_err(Failure::runtime)?;
    write_calibration_csv(&run.file("calibration_epistemic.csv"), &epi)
        .map_err(Failure::runtime)?;
    write_calibration_csv(&run.file("calibration_aleatoric.csv"), &ale)
        .map_err(Failure::runtime)?;
    write_calibration_csv(&run.file("calibration_total.csv"), &tot).map_err(Failure::runtime)?;
    let rstd = rstd_distribution(summaries, rstd_bins).map_err(Failure::runtime)?;
    write_rstd_csv(&run.file("rstd.csv"), &rstd).map_err(Failure::runtime)?;
    Ok(CalibrationDoc {
        n_test: y_true.len(),
        epistemic: doc_entry(&epi),
        aleatoric: doc_entry(&ale),
        total: doc_entry(&tot),
        rstd_mean: rstd.mean,
        rstd_min: rstd.min,
        rstd_max: rstd.max,
        rstd_skewness: rstd.skewness,
    })
}

pub fn cmd_calibrate(
    resolved: &Resolved,
    config_path: &std::path::Path,
    model_path: Option<&std::path::Path>,
) -> CResult<()> {
    let cfg = resolved.config.pipeline.build()?;
    let seed = resolved.config.seed;
    let bins = resolved.config.calibration.rstd_bins;
    if bins == 0 {
        return Err(Failure::Config("calibration.rstd_bins must be positive".into()));
    }
    let run = RunDir::create(&resolved.out_dir)?;
    let hash = run.write_config(&resolved.config)?;

    let doc = match build(&resolved.config.dataset, config_path)? {
        BuiltDataset::Synthetic(bench) => {
            let model = match model_path {
                Some(p) => match load_any(p).map_err(Failure::config)? {
                    LoadedModel::Plain(m) => m,
                    LoadedModel::Hybrid(_) => {
                        return Err(Failure::Config(
                            "calibration on the synthetic dataset needs a plain model".into(),
                        ))
                    }
                },
                None => {
                    // Default to the strategy that produces uncertainty.
                    let strategy = match resolved.config.strategy_choice()? {
                        None => Strategy::StagedBdann,
                        Some(crate::config::StrategyChoice::One(s)) => s,
                        Some(crate::config::StrategyChoice::All) => {
                            return Err(Failure::Config(
                                "calibration needs one strategy, not \"all\"".into(),
                            ))
                        }
                    };
                    train_logged(&bench, &cfg, strategy, seed, &run)?
                }
            };
            let eval = evaluate_model(
                &model,
                &bench.target_test,
                cfg.mc_samples,
                derive_seed(model.seed, "eval"),
            )
            .map_err(Failure::runtime)?;
            let summaries = eval.summaries.ok_or_else(|| {
                Failure::Config(
                    "calibration needs a variational model; train with staged_bdann".into(),
                )
            })?;
            write_curves(&run, bench.target_test.targets(), &summaries, bins)?
        }
        BuiltDataset::Csv(data) => {
            let (model, eval_seed) = match model_path {
                Some(p) => match load_any(p).map_err(Failure::config)? {
                    LoadedModel::Hybrid(m) => {
                        let s = m.corrector.seed;
                        (m, derive_seed(s, "eval"))
                    }
                    LoadedModel::Plain(_) => {
                        return Err(Failure::Config(
                            "calibration on a CSV dataset needs a corrector bundle".into(),
                        ))
                    }
                },
                None => {
                    let strategy = resolved
                        .config
                        .strategy_choice()?
                        .map_or(Ok(Strategy::StagedBdann), |c| match c {
                            crate::config::StrategyChoice::One(s) => Ok(s),
                            crate::config::StrategyChoice::All => Err(Failure::Config(
                                "calibration needs one strategy, not \"all\"".into(),
                            )),
                        })?;
                    let fit = fit_csv_corrector(&data, strategy, &cfg, seed)?;
                    (fit.model, derive_seed(seed, "eval"))
                }
            };
            let base = base_for_tag(&data, &model.base_tag)?;
            let pred = bdann::hybrid::hybrid_predict(
                &model,
                base,
                &data.target.test,
                cfg.mc_samples,
                eval_seed,
            )
            .map_err(Failure::runtime)?;
            let summaries = pred.summaries.ok_or_else(|| {
                Failure::Config(
                    "calibration needs a variational corrector; use staged_bdann".into(),
                )
            })?;
            write_curves(&run, data.target.test.targets(), &summaries, bins)?
        }
    };
    run.write_json("calibration.json", &doc)?;
    run.write_manifest(
        "calibrate",
        &hash,
        seed,
        &[
            "calibration.json",
            "calibration_epistemic.csv",
            "calibration_aleatoric.csv",
            "calibration_total.csv",
            "rstd.csv",
        ],
    )?;
    println!(
        "miscalibration area: epistemic {:.4} aleatoric {:.4} total {:.4}",
        doc.epistemic.miscalibration_area,
        doc.aleatoric.miscalibration_area,
        doc.total.miscalibration_area
    );
    Ok(())
}
