//! Residual-correction hybrid workflow.
//!
//! A low-fidelity base model supplies a first-pass prediction; a learned
//! corrector models the base's residual r = y - y_base from the same input
//! features; the hybrid prediction is their sum. The base model stays a
//! black box behind an evaluation contract, so correlations that live in
//! other codebases can participate through a precomputed prediction column.

use std::collections::BTreeMap;
use std::path::Path;

use crate::bayes::PredictiveSummary;
use crate::data::{DataSplit, Domain, Partition, ZScore1d};
use crate::error::{Error, Result};
use crate::pipeline::{
    stage1_pretrain, stage2_align, stage3_finetune, train_from_scratch, PipelineConfig, Strategy,
    TrainedModel,
};
use crate::rng::{derive_seed, stream};
use rand::seq::SliceRandom;

/// One named, unit-carrying column.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub unit: String,
    /// Whether values at or below zero are legal (inlet subcooling can be
    /// negative; every other physical column must be positive).
    pub allow_nonpositive: bool,
}

impl ColumnSpec {
    fn new(name: &str, unit: &str, allow_nonpositive: bool) -> Self {
        ColumnSpec {
            name: name.into(),
            unit: unit.into(),
            allow_nonpositive,
        }
    }
}

/// Column layout of a tabular ingestion: input features, one target, and
/// optionally a precomputed base-model prediction column.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TabularSchema {
    pub inputs: Vec<ColumnSpec>,
    pub target: ColumnSpec,
    pub base: Option<ColumnSpec>,
}

impl TabularSchema {
    /// Critical-heat-flux layout: hydraulic diameter, heated length,
    /// pressure, mass flux and inlet subcooling predicting the critical
    /// heat flux.
    pub fn chf_default() -> Self {
        TabularSchema {
            inputs: vec![
                ColumnSpec::new("D", "mm", false),
                ColumnSpec::new("L", "m", false),
                ColumnSpec::new("P", "MPa", false),
                ColumnSpec::new("G", "kg/(m^2 s)", false),
                ColumnSpec::new("dh_sub_in", "kJ/kg", true),
            ],
            target: ColumnSpec::new("q_cr", "kW/m^2", false),
            base: None,
        }
    }

    /// The same layout with a trailing base-prediction column.
    pub fn with_base_column(mut self, name: &str) -> Self {
        self.base = Some(ColumnSpec::new(name, self.target.unit.clone().as_str(), false));
        self
    }

    fn header(&self) -> Vec<&str> {
        let mut h: Vec<&str> = self.inputs.iter().map(|c| c.name.as_str()).collect();
        h.push(&self.target.name);
        if let Some(b) = &self.base {
            h.push(&b.name);
        }
        h
    }
}

/// Sidecar manifest declaring the units the file was written in and where
/// any base-prediction column came from.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct UnitManifest {
    pub units: BTreeMap<String, String>,
    #[serde(default)]
    pub base_provenance: Option<String>,
}

impl UnitManifest {
    /// A manifest that matches a schema's canonical units exactly.
    pub fn for_schema(schema: &TabularSchema) -> Self {
        let mut units = BTreeMap::new();
        for c in &schema.inputs {
            units.insert(c.name.clone(), c.unit.clone());
        }
        units.insert(schema.target.name.clone(), schema.target.unit.clone());
        if let Some(b) = &schema.base {
            units.insert(b.name.clone(), b.unit.clone());
        }
        UnitManifest {
            units,
            base_provenance: None,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Errors when a declared unit disagrees with the schema's.
    pub fn check(&self, schema: &TabularSchema) -> Result<()> {
        let mut expect: Vec<(&str, &str)> = schema
            .inputs
            .iter()
            .map(|c| (c.name.as_str(), c.unit.as_str()))
            .collect();
        expect.push((&schema.target.name, &schema.target.unit));
        if let Some(b) = &schema.base {
            expect.push((&b.name, &b.unit));
        }
        for (name, unit) in expect {
            match self.units.get(name) {
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "manifest declares no unit for column {name:?}"
                    )))
                }
                Some(u) if u != unit => {
                    return Err(Error::InvalidConfig(format!(
                        "column {name:?} is declared in {u:?}, expected {unit:?}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Evaluation contract of a low-fidelity predictor.
pub trait BaseModel {
    /// Identity tag; correctors only compose with the base they trained on.
    fn tag(&self) -> &str;
    /// Prediction for one row; `row_id` identifies it for column-backed
    /// bases.
    fn predict_row(&self, features: &[f64], row_id: u64) -> Result<f64>;
}

/// Base model backed by a precomputed prediction column, keyed by row id.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnBase {
    tag: String,
    by_row: BTreeMap<u64, f64>,
}

impl ColumnBase {
    pub fn new(tag: &str, by_row: BTreeMap<u64, f64>) -> Self {
        ColumnBase {
            tag: tag.into(),
            by_row,
        }
    }

    pub fn len(&self) -> usize {
        self.by_row.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_row.is_empty()
    }
}

impl BaseModel for ColumnBase {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn predict_row(&self, _features: &[f64], row_id: u64) -> Result<f64> {
        self.by_row.get(&row_id).copied().ok_or_else(|| {
            Error::InvalidArgument(format!("no base prediction for row {row_id}"))
        })
    }
}

/// Base model computed from the feature vector by a closure.
pub struct FnBase<F: Fn(&[f64]) -> Result<f64>> {
    tag: String,
    f: F,
}

impl<F: Fn(&[f64]) -> Result<f64>> FnBase<F> {
    pub fn new(tag: &str, f: F) -> Self {
        FnBase { tag: tag.into(), f }
    }
}

impl<F: Fn(&[f64]) -> Result<f64>> BaseModel for FnBase<F> {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn predict_row(&self, features: &[f64], _row_id: u64) -> Result<f64> {
        (self.f)(features)
    }
}

/// A split whose targets are base-model residuals, plus bookkeeping.
#[derive(Debug)]
pub struct ResidualSet {
    /// Same features, targets replaced by y - y_base; rows the base failed
    /// on are dropped.
    pub split: DataSplit,
    /// Base predictions for the kept rows, in order.
    pub base_predictions: Vec<f64>,
    /// (row id, reason) for rows the base model failed on.
    pub excluded: Vec<(u64, String)>,
}

/// Computes per-row residuals r = y - y_base. Rows the base model cannot
/// evaluate are excluded and logged rather than failing the whole set.
pub fn residual_targets(split: &DataSplit, base: &dyn BaseModel) -> Result<ResidualSet> {
    let xs = split.features();
    let ys = split.targets();
    let ids = split.row_ids();
    let mut keep: Vec<usize> = Vec::with_capacity(split.len());
    let mut residuals: Vec<f64> = Vec::with_capacity(split.len());
    let mut base_predictions: Vec<f64> = Vec::with_capacity(split.len());
    let mut excluded: Vec<(u64, String)> = Vec::new();
    for i in 0..split.len() {
        match base.predict_row(&xs[i], ids[i]) {
            Ok(p) if p.is_finite() => {
                keep.push(i);
                residuals.push(ys[i] - p);
                base_predictions.push(p);
            }
            Ok(p) => excluded.push((ids[i], format!("non-finite base prediction {p}"))),
            Err(e) => excluded.push((ids[i], e.to_string())),
        }
    }
    if keep.is_empty() {
        return Err(Error::Degenerate(
            "base model failed on every row".into(),
        ));
    }
    let split = split.subset(&keep)?.with_targets(residuals)?;
    Ok(ResidualSet {
        split,
        base_predictions,
        excluded,
    })
}

/// Corrector plus everything needed to apply it on top of its base model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HybridModel {
    /// Tag of the base model the corrector was trained against.
    pub base_tag: String,
    pub corrector: TrainedModel,
    /// Residuals are standardized for training; predictions pass back
    /// through the inverse.
    pub residual_scaler: ZScore1d,
}

/// Trains a residual corrector with one of the standard strategies.
///
/// `source` supplies a second domain's residual train/val splits for the
/// transfer strategies and is ignored when training from scratch. Residuals
/// are standardized before training: jointly over source and target in the
/// transfer strategies, on target alone from scratch, mirroring the feature
/// policy of the corresponding strategy.
pub fn fit_corrector(
    strategy: Strategy,
    base: &dyn BaseModel,
    source: Option<(&ResidualSet, &ResidualSet)>,
    target: (&ResidualSet, &ResidualSet),
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<HybridModel> {
    cfg.validate()?;
    // Residuals are signed and standardized below, so the corrector always
    // trains on that scale directly, whatever the pipeline's transform.
    let cfg = &PipelineConfig {
        target_transform: crate::pipeline::TargetTransform::Identity,
        ..cfg.clone()
    };
    let (tgt_train, tgt_val) = target;
    let scaler = match (strategy, source) {
        (Strategy::FromScratch, _) => ZScore1d::fit(tgt_train.split.targets())?,
        (_, Some((src_train, _))) => {
            let mut all = src_train.split.targets().to_vec();
            all.extend_from_slice(tgt_train.split.targets());
            ZScore1d::fit(&all)?
        }
        (s, None) => {
            return Err(Error::InvalidArgument(format!(
                "strategy {s} needs source-domain residuals"
            )))
        }
    };
    let scale = |set: &ResidualSet| -> Result<DataSplit> {
        let y = set
            .split
            .targets()
            .iter()
            .map(|&v| scaler.transform(v))
            .collect();
        set.split.with_targets(y)
    };
    let t_train = scale(tgt_train)?;
    let t_val = scale(tgt_val)?;
    let corrector = match strategy {
        Strategy::FromScratch => {
            train_from_scratch(&t_train, &t_val, cfg, derive_seed(seed, "scratch"))?
        }
        Strategy::DirectTransfer => {
            let (src_train, src_val) = source.unwrap();
            let s_train = scale(src_train)?;
            let s_val = scale(src_val)?;
            let base_net =
                stage1_pretrain(&s_train, &s_val, cfg, derive_seed(seed, "stage1"))?;
            crate::pipeline::train_direct_transfer(
                &base_net,
                &t_train,
                &t_val,
                cfg,
                cfg.transfer_mode,
                derive_seed(seed, "direct"),
            )?
        }
        Strategy::StagedBdann => {
            let (src_train, src_val) = source.unwrap();
            let s_train = scale(src_train)?;
            let s_val = scale(src_val)?;
            let base_net =
                stage1_pretrain(&s_train, &s_val, cfg, derive_seed(seed, "stage1"))?;
            let aligned = stage2_align(
                &base_net,
                &s_train,
                &s_val,
                &t_train,
                cfg,
                derive_seed(seed, "stage2"),
            )?;
            stage3_finetune(&aligned, &t_train, &t_val, cfg, derive_seed(seed, "stage3"))?
        }
    };
    Ok(HybridModel {
        base_tag: base.tag().to_string(),
        corrector,
        residual_scaler: scaler,
    })
}

/// Hybrid output: base-plus-correction means, with predictive spreads when
/// the corrector is variational.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPrediction {
    pub mean: Vec<f64>,
    pub base: Vec<f64>,
    /// Present for variational correctors. Spreads describe the residual
    /// and, since the base model is deterministic, the sum as well; they
    /// are already mapped back to target units.
    pub summaries: Option<Vec<PredictiveSummary>>,
}

/// Applies base model and corrector to a split's features.
pub fn hybrid_predict(
    model: &HybridModel,
    base: &dyn BaseModel,
    split: &DataSplit,
    mc_samples: usize,
    eval_seed: u64,
) -> Result<HybridPrediction> {
    if model.base_tag != base.tag() {
        return Err(Error::BaseMismatch(format!(
            "corrector was trained against base {:?}, got {:?}",
            model.base_tag,
            base.tag()
        )));
    }
    let xs = split.features();
    let ids = split.row_ids();
    let mut base_preds = Vec::with_capacity(split.len());
    for i in 0..split.len() {
        let p = base.predict_row(&xs[i], ids[i])?;
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("base prediction for row {}", ids[i])));
        }
        base_preds.push(p);
    }
    let raw_summaries = model
        .corrector
        .predict_uncertain(xs, mc_samples, eval_seed)?;
    let (mean, summaries) = match raw_summaries {
        Some(sums) => {
            let s = &model.residual_scaler;
            let mapped: Vec<PredictiveSummary> = sums
                .iter()
                .zip(&base_preds)
                .map(|(p, &b)| PredictiveSummary {
                    mean: b + s.inverse(p.mean),
                    epistemic_std: p.epistemic_std * s.std,
                    aleatoric_std: p.aleatoric_std * s.std,
                    total_std: p.total_std * s.std,
                    n_samples: p.n_samples,
                })
                .collect();
            (mapped.iter().map(|p| p.mean).collect(), Some(mapped))
        }
        None => {
            let r = model.corrector.predict(xs, mc_samples, eval_seed)?;
            let mean: Vec<f64> = r
                .iter()
                .zip(&base_preds)
                .map(|(&ri, &b)| b + model.residual_scaler.inverse(ri))
                .collect();
            (mean, None)
        }
    };
    Ok(HybridPrediction {
        mean,
        base: base_preds,
        summaries,
    })
}

/// Writes hybrid predictions as CSV: row id, base, mean and, when present,
/// the three uncertainty columns.
pub fn write_predictions_csv(path: &Path, split: &DataSplit, pred: &HybridPrediction) -> Result<()> {
    if pred.mean.len() != split.len() {
        return Err(Error::Shape("prediction/split length mismatch".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "row_id",
        "y_true",
        "y_base",
        "y_hybrid",
        "epistemic_std",
        "aleatoric_std",
        "total_std",
    ])?;
    let ys = split.targets();
    for i in 0..split.len() {
        let (e, a, t) = match &pred.summaries {
            Some(s) => (
                format!("{}", s[i].epistemic_std),
                format!("{}", s[i].aleatoric_std),
                format!("{}", s[i].total_std),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            format!("{}", split.row_ids()[i]),
            format!("{}", ys[i]),
            format!("{}", pred.base[i]),
            format!("{}", pred.mean[i]),
            e,
            a,
            t,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Result of ingesting one tabular file.
#[derive(Debug)]
pub struct Ingested {
    pub train: DataSplit,
    pub val: DataSplit,
    pub test: DataSplit,
    /// Base predictions keyed by row id when the file carries a base
    /// column.
    pub base: Option<ColumnBase>,
    /// (1-based file line, reason) for rejected rows.
    pub rejected: Vec<(usize, String)>,
}

/// Reads a CSV against a schema and unit manifest, validates every cell,
/// and splits rows 80/5/15 into train/val/test with a seeded shuffle.
///
/// Structural problems (missing columns, unit mismatches) fail the file;
/// cell-level problems reject the row with its line number and continue.
pub fn ingest_csv(
    path: &Path,
    schema: &TabularSchema,
    manifest: &UnitManifest,
    seed: u64,
) -> Result<Ingested> {
    manifest.check(schema)?;
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let expect = schema.header();
    if header != expect {
        return Err(Error::InvalidConfig(format!(
            "header mismatch: expected {expect:?}, found {header:?}"
        )));
    }
    let n_inputs = schema.inputs.len();
    let mut x: Vec<Vec<f64>> = Vec::new();
    let mut y: Vec<f64> = Vec::new();
    let mut ids: Vec<u64> = Vec::new();
    let mut base_col: BTreeMap<u64, f64> = BTreeMap::new();
    let mut rejected: Vec<(usize, String)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Header is file line 1; data row i sits on line i + 2.
        let line = i + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejected.push((line, format!("unparseable row: {e}")));
                continue;
            }
        };
        if record.len() != expect.len() {
            rejected.push((
                line,
                format!("expected {} fields, found {}", expect.len(), record.len()),
            ));
            continue;
        }
        let parse_cell = |j: usize, spec: &ColumnSpec| -> std::result::Result<f64, String> {
            let raw = record.get(j).unwrap_or("").trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| format!("column {:?}: unparseable value {raw:?}", spec.name))?;
            if !v.is_finite() {
                return Err(format!("column {:?}: non-finite value", spec.name));
            }
            if !spec.allow_nonpositive && v <= 0.0 {
                return Err(format!("column {:?}: must be positive, got {v}", spec.name));
            }
            Ok(v)
        };
        let mut row = Vec::with_capacity(n_inputs);
        let mut failure: Option<String> = None;
        for (j, spec) in schema.inputs.iter().enumerate() {
            match parse_cell(j, spec) {
                Ok(v) => row.push(v),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        let target = if failure.is_none() {
            match parse_cell(n_inputs, &schema.target) {
                Ok(v) => Some(v),
                Err(e) => {
                    failure = Some(e);
                    None
                }
            }
        } else {
            None
        };
        let base_val = match (&failure, &schema.base) {
            (None, Some(spec)) => match parse_cell(n_inputs + 1, spec) {
                Ok(v) => Some(v),
                Err(e) => {
                    failure = Some(e);
                    None
                }
            },
            _ => None,
        };
        if let Some(reason) = failure {
            rejected.push((line, reason));
            continue;
        }
        let id = i as u64;
        x.push(row);
        y.push(target.unwrap());
        ids.push(id);
        if let Some(v) = base_val {
            base_col.insert(id, v);
        }
    }
    let n = x.len();
    if n < 20 {
        return Err(Error::Degenerate(format!(
            "need at least 20 valid rows to split, got {n}"
        )));
    }
    let n_train = (n as f64 * 0.80).floor() as usize;
    let n_val = (n as f64 * 0.05).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(derive_seed(seed, "ingest/split")));
    let take = |r: std::ops::Range<usize>, partition: Partition| -> Result<DataSplit> {
        let idx = &order[r];
        DataSplit::new(
            idx.iter().map(|&i| x[i].clone()).collect(),
            idx.iter().map(|&i| y[i]).collect(),
            Domain::Target,
            partition,
            seed,
            idx.iter().map(|&i| ids[i]).collect(),
        )
    };
    let train = take(0..n_train, Partition::Train)?;
    let val = take(n_train..n_train + n_val, Partition::Val)?;
    let test = take(n_train + n_val..n, Partition::Test)?;
    let base = schema
        .base
        .as_ref()
        .map(|spec| ColumnBase::new(&spec.name, base_col));
    Ok(Ingested {
        train,
        val,
        test,
        base,
        rejected,
    })
}
