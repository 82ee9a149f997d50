//! Builds the working dataset from the config: either the synthetic
//! benchmark (regenerated from its seed, never read back from CSV) or an
//! ingested tabular file pair, plus the base model used for residual
//! correction on the tabular path.

use std::path::Path;

use bdann::data::{DataSplit, ZScore};
use bdann::hybrid::{
    fit_corrector, residual_targets, BaseModel, HybridModel, Ingested, ResidualSet,
    TabularSchema, UnitManifest,
};
use bdann::pipeline::{PipelineConfig, Strategy};
use bdann::synthetic::{make_benchmark_with, Benchmark, BenchmarkConfig};

use crate::config::{anchored, CResult, DatasetConfig, Failure};

/// Base used when a tabular file has no prediction column: training then
/// reduces to plain regression on standardized targets.
pub struct ZeroBase;

pub const ZERO_BASE_TAG: &str = "zero";

impl BaseModel for ZeroBase {
    fn tag(&self) -> &str {
        ZERO_BASE_TAG
    }

    fn predict_row(&self, _features: &[f64], _row_id: u64) -> bdann::Result<f64> {
        Ok(0.0)
    }
}

/// An ingested tabular dataset, optionally with a source-domain companion.
pub struct CsvDataset {
    pub target: Ingested,
    pub source: Option<Ingested>,
    /// Present when the file carries a base-prediction column.
    pub base_column: Option<String>,
}

impl CsvDataset {
    /// The base model correctors train against: the prediction column when
    /// one exists, the zero base otherwise.
    pub fn base(&self) -> CResult<&dyn BaseModel> {
        match (&self.base_column, &self.target.base) {
            (Some(_), Some(b)) => Ok(b),
            (Some(name), None) => Err(Failure::Config(format!(
                "base column {name:?} produced no usable predictions"
            ))),
            (None, _) => Ok(&ZeroBase),
        }
    }
}

pub enum BuiltDataset {
    Synthetic(Box<Benchmark>),
    Csv(Box<CsvDataset>),
}

pub fn benchmark_config(ds: &DatasetConfig) -> CResult<BenchmarkConfig> {
    match ds {
        DatasetConfig::Synthetic {
            seed,
            ablation,
            degenerate_shift,
        } => {
            let cfg = if *degenerate_shift {
                BenchmarkConfig::degenerate_shift(*seed, *ablation)
            } else {
                BenchmarkConfig::new(*seed, *ablation)
            };
            cfg.map_err(Failure::config)
        }
        DatasetConfig::Csv { .. } => Err(Failure::Config(
            "this command needs the synthetic dataset".into(),
        )),
    }
}

pub fn build(ds: &DatasetConfig, config_path: &Path) -> CResult<BuiltDataset> {
    match ds {
        DatasetConfig::Synthetic { .. } => {
            let cfg = benchmark_config(ds)?;
            let bench = make_benchmark_with(&cfg).map_err(Failure::runtime)?;
            Ok(BuiltDataset::Synthetic(Box::new(bench)))
        }
        DatasetConfig::Csv {
            path,
            source_path,
            manifest,
            source_manifest,
            base_column,
            seed,
            schema,
        } => {
            let mut schema = schema.clone().unwrap_or_else(TabularSchema::chf_default);
            if let Some(col) = base_column {
                schema = schema.with_base_column(col);
            }
            let load_manifest = |m: &Option<String>| -> CResult<UnitManifest> {
                match m {
                    Some(p) => {
                        UnitManifest::read(&anchored(config_path, p)).map_err(Failure::config)
                    }
                    None => Ok(UnitManifest::for_schema(&schema)),
                }
            };
            let target = bdann::hybrid::ingest_csv(
                &anchored(config_path, path),
                &schema,
                &load_manifest(manifest)?,
                *seed,
            )
            .map_err(Failure::config)?;
            let source = match source_path {
                Some(p) => Some(
                    bdann::hybrid::ingest_csv(
                        &anchored(config_path, p),
                        &schema,
                        &load_manifest(source_manifest)?,
                        // Distinct shuffle stream for the second file.
                        bdann::rng::derive_seed(*seed, "source-file"),
                    )
                    .map_err(Failure::config)?,
                ),
                None => None,
            };
            Ok(BuiltDataset::Csv(Box::new(CsvDataset {
                target,
                source,
                base_column: base_column.clone(),
            })))
        }
    }
}

fn rescale(set: &ResidualSet, scaler: &ZScore) -> CResult<ResidualSet> {
    let split = set
        .split
        .with_features(scaler.transform(set.split.features()))
        .map_err(Failure::runtime)?;
    Ok(ResidualSet {
        split,
        base_predictions: set.base_predictions.clone(),
        excluded: set.excluded.clone(),
    })
}

/// Everything one corrector fit produces, with excluded-row bookkeeping.
pub struct CorrectorFit {
    pub model: HybridModel,
    /// (row id, reason) for rows the base model failed on, per split.
    pub excluded: Vec<(String, u64, String)>,
}

/// Fits a residual corrector on a tabular dataset.
///
/// Transfer strategies need the source companion and standardize features
/// jointly over both training splits; the fitted scaler is attached to the
/// corrector so the saved bundle applies to raw rows. From-scratch
/// correctors standardize on their own inside training.
pub fn fit_csv_corrector(
    data: &CsvDataset,
    strategy: Strategy,
    cfg: &PipelineConfig,
    seed: u64,
) -> CResult<CorrectorFit> {
    let base = data.base()?;
    let mut excluded: Vec<(String, u64, String)> = Vec::new();
    let mut residuals = |split: &DataSplit, name: &str| -> CResult<ResidualSet> {
        let set = residual_targets(split, base).map_err(Failure::runtime)?;
        for (id, why) in &set.excluded {
            excluded.push((name.to_string(), *id, why.clone()));
        }
        Ok(set)
    };
    let t_train = residuals(&data.target.train, "target_train")?;
    let t_val = residuals(&data.target.val, "target_val")?;

    let mut model = if strategy == Strategy::FromScratch {
        fit_corrector(strategy, base, None, (&t_train, &t_val), cfg, seed)
            .map_err(Failure::runtime)?
    } else {
        let source = data.source.as_ref().ok_or_else(|| {
            Failure::Config(format!(
                "strategy {strategy} needs dataset.source_path for the source domain"
            ))
        })?;
        let s_train = residuals(&source.train, "source_train")?;
        let s_val = residuals(&source.val, "source_val")?;
        let mut rows = s_train.split.features().to_vec();
        rows.extend_from_slice(t_train.split.features());
        let scaler = ZScore::fit(&rows).map_err(Failure::config)?;
        let model = fit_corrector(
            strategy,
            base,
            Some((&rescale(&s_train, &scaler)?, &rescale(&s_val, &scaler)?)),
            (&rescale(&t_train, &scaler)?, &rescale(&t_val, &scaler)?),
            cfg,
            seed,
        )
        .map_err(Failure::runtime)?;
        attach_scaler(model, scaler)?
    };
    // Record the run-level seed, not the stage derivation, so evaluation
    // of a saved bundle re-derives the same evaluation stream.
    model.corrector.seed = seed;
    Ok(CorrectorFit { model, excluded })
}

/// Moves the feature scaler into the corrector so the saved bundle is
/// self-contained. The transfer paths train on pre-scaled features and
/// leave the slot empty; filling it afterward makes prediction on raw rows
/// equal prediction on scaled ones by construction.
fn attach_scaler(mut model: HybridModel, scaler: ZScore) -> CResult<HybridModel> {
    if model.corrector.input_scaler.is_some() {
        return Err(Failure::Runtime(
            "corrector unexpectedly carries its own feature scaler".into(),
        ));
    }
    model.corrector.input_scaler = Some(scaler);
    Ok(model)
}

/// Rebuilds the base model a saved bundle was trained against.
pub fn base_for_tag<'a>(data: &'a CsvDataset, tag: &str) -> CResult<&'a dyn BaseModel> {
    if tag == ZERO_BASE_TAG {
        return Ok(&ZeroBase);
    }
    match &data.target.base {
        Some(b) if b.tag() == tag => Ok(b),
        Some(b) => Err(Failure::Config(format!(
            "model was trained against base {tag:?}, dataset provides {:?}",
            b.tag()
        ))),
        None => Err(Failure::Config(format!(
            "model was trained against base {tag:?}, dataset provides none"
        ))),
    }
}
