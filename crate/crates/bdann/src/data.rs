//! Labeled data splits with provenance and read accounting.
//!
//! A `DataSplit` is immutable after construction. Feature and target
//! accessors bump an internal read counter so tests can prove a split
//! (the held-out test partition in particular) was never touched
//! during training.

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Source => write!(f, "source"),
            Domain::Target => write!(f, "target"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partition::Train => write!(f, "train"),
            Partition::Val => write!(f, "val"),
            Partition::Test => write!(f, "test"),
        }
    }
}

/// One (domain, partition) block of rows.
#[derive(Debug)]
pub struct DataSplit {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    domain: Domain,
    partition: Partition,
    seed: u64,
    /// Stable per-row ids tracing each row back to its generation index.
    row_ids: Vec<u64>,
    reads: AtomicU64,
}

impl Clone for DataSplit {
    fn clone(&self) -> Self {
        // A fresh clone has not been read yet.
        DataSplit {
            x: self.x.clone(),
            y: self.y.clone(),
            domain: self.domain,
            partition: self.partition,
            seed: self.seed,
            row_ids: self.row_ids.clone(),
            reads: AtomicU64::new(0),
        }
    }
}

impl DataSplit {
    pub fn new(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        domain: Domain,
        partition: Partition,
        seed: u64,
        row_ids: Vec<u64>,
    ) -> Result<Self> {
        if x.len() != y.len() || x.len() != row_ids.len() {
            return Err(Error::Shape(format!(
                "split rows disagree: {} features, {} targets, {} row ids",
                x.len(),
                y.len(),
                row_ids.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::Degenerate(format!(
                "{domain} {partition} split has no rows"
            )));
        }
        let width = x[0].len();
        if width == 0 {
            return Err(Error::Shape("rows have zero features".into()));
        }
        for (i, row) in x.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Shape(format!(
                    "row {i} has {} features, expected {width}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of row {i}")));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("target of row {i}")));
        }
        Ok(DataSplit {
            x,
            y,
            domain,
            partition,
            seed,
            row_ids,
            reads: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x[0].len()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    /// Feature rows. Counts as a read.
    pub fn features(&self) -> &[Vec<f64>] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.x
    }

    /// Target values. Counts as a read.
    pub fn targets(&self) -> &[f64] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.y
    }

    /// How many times features() or targets() were called on this instance.
    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    /// Copy with the same provenance but transformed features.
    pub fn with_features(&self, x: Vec<Vec<f64>>) -> Result<Self> {
        DataSplit::new(
            x,
            self.y.clone(),
            self.domain,
            self.partition,
            self.seed,
            self.row_ids.clone(),
        )
    }

    /// Copy with the same provenance but transformed targets.
    pub fn with_targets(&self, y: Vec<f64>) -> Result<Self> {
        DataSplit::new(
            self.x.clone(),
            y,
            self.domain,
            self.partition,
            self.seed,
            self.row_ids.clone(),
        )
    }

    /// Row subset by position, preserving provenance.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut x = Vec::with_capacity(idx.len());
        let mut y = Vec::with_capacity(idx.len());
        let mut ids = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.x.len() {
                return Err(Error::InvalidArgument(format!(
                    "subset index {i} out of range for {} rows",
                    self.x.len()
                )));
            }
            x.push(self.x[i].clone());
            y.push(self.y[i]);
            ids.push(self.row_ids[i]);
        }
        DataSplit::new(x, y, self.domain, self.partition, self.seed, ids)
    }
}

/// Column-wise z-score transform fitted on training data.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ZScore {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ZScore {
    /// Fits per-column mean and population standard deviation.
    /// A zero-variance column is rejected: it cannot be standardized.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Degenerate("z-score fit on zero rows".into()));
        }
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for row in rows {
            if row.len() != d {
                return Err(Error::Shape("ragged rows in z-score fit".into()));
            }
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut vars = vec![0.0; d];
        for row in rows {
            for j in 0..d {
                let c = row[j] - means[j];
                vars[j] += c * c;
            }
        }
        let mut stds = Vec::with_capacity(d);
        for (j, v) in vars.iter().enumerate() {
            let s = (v / n).sqrt();
            if s == 0.0 || !s.is_finite() {
                return Err(Error::Degenerate(format!(
                    "feature column {j} has zero variance; cannot standardize"
                )));
            }
            stds.push(s);
        }
        Ok(ZScore { means, stds })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Scalar z-score for one-dimensional targets or residuals.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ZScore1d {
    pub mean: f64,
    pub std: f64,
}

impl ZScore1d {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("z-score fit on zero values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std == 0.0 || !std.is_finite() {
            return Err(Error::Degenerate(
                "values have zero variance; cannot standardize".into(),
            ));
        }
        Ok(ZScore1d { mean, std })
    }

    pub fn transform(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Writes splits as one CSV: x1..xd, y, domain, partition, row_id.
/// Floats are printed in shortest round-trip form, so a reload is exact.
pub fn write_splits_csv(path: &Path, splits: &[&DataSplit]) -> Result<()> {
    if splits.is_empty() {
        return Err(Error::InvalidArgument("no splits to write".into()));
    }
    let d = splits[0].n_features();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.extend(["y", "domain", "partition", "row_id"].map(String::from));
    w.write_record(&header)?;
    for s in splits {
        if s.n_features() != d {
            return Err(Error::Shape("splits disagree on feature count".into()));
        }
        let (xs, ys) = (s.features(), s.targets());
        for i in 0..s.len() {
            let mut rec: Vec<String> = xs[i].iter().map(|v| format!("{v}")).collect();
            rec.push(format!("{}", ys[i]));
            rec.push(s.domain().to_string());
            rec.push(s.partition().to_string());
            rec.push(format!("{}", s.row_ids()[i]));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by `write_splits_csv`, grouping rows back into splits.
/// Split order follows first appearance in the file.
pub fn read_splits_csv(path: &Path, seed: u64) -> Result<Vec<DataSplit>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let d = header
        .iter()
        .take_while(|h| h.starts_with('x'))
        .count();
    if d == 0 {
        return Err(Error::CsvRow {
            line: 1,
            msg: "no feature columns (expected x1..xd)".into(),
        });
    }
    let mut groups: Vec<((Domain, Partition), (Vec<Vec<f64>>, Vec<f64>, Vec<u64>))> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::CsvRow {
                line,
                msg: format!("bad float {s:?}"),
            })
        };
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            row.push(parse(&rec[j])?);
        }
        let y = parse(&rec[d])?;
        let domain = match &rec[d + 1] {
            "source" => Domain::Source,
            "target" => Domain::Target,
            other => {
                return Err(Error::CsvRow {
                    line,
                    msg: format!("bad domain {other:?}"),
                })
            }
        };
        let partition = match &rec[d + 2] {
            "train" => Partition::Train,
            "val" => Partition::Val,
            "test" => Partition::Test,
            other => {
                return Err(Error::CsvRow {
                    line,
                    msg: format!("bad partition {other:?}"),
                })
            }
        };
        let row_id: u64 = rec[d + 3].parse().map_err(|_| Error::CsvRow {
            line,
            msg: format!("bad row id {:?}", &rec[d + 3]),
        })?;
        let key = (domain, partition);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => {
                g.0.push(row);
                g.1.push(y);
                g.2.push(row_id);
            }
            None => groups.push((key, (vec![row], vec![y], vec![row_id]))),
        }
    }
    groups
        .into_iter()
        .map(|((domain, partition), (x, y, ids))| {
            DataSplit::new(x, y, domain, partition, seed, ids)
        })
        .collect()
}
