//! Domain-adversarial alignment machinery.
//!
//! A domain classifier sits on top of the shared feature extractor through a
//! sign-flipping junction: on the forward pass features flow through
//! unchanged, on the backward pass the classifier's input gradient is
//! multiplied by -lambda before it reaches the extractor. The schedule for
//! lambda, the separability score used for early stopping, and the balanced
//! two-domain batching all live here.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::DataSplit;
use crate::error::{Error, Result};

/// Warm-up then smooth ramp for the reversal strength:
/// lambda(e) = 0 for e < warmup_epochs, otherwise
/// lambda_max * max(lambda_min_frac, 2 / (1 + exp(-k p)) - 1) with
/// p = (e - warmup) / max(1, total - warmup).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LambdaSchedule {
    pub lambda_max: f64,
    /// Floor on the ramp value (fraction of lambda_max) once warm-up ends.
    pub lambda_min_frac: f64,
    pub ramp_k: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_max < 0.0 || !self.lambda_max.is_finite() {
            return Err(Error::InvalidConfig("lambda_max must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_min_frac) {
            return Err(Error::InvalidConfig(
                "lambda_min_frac must lie in [0, 1]".into(),
            ));
        }
        if self.ramp_k <= 0.0 {
            return Err(Error::InvalidConfig("ramp_k must be positive".into()));
        }
        if self.total_epochs == 0 {
            return Err(Error::InvalidConfig("total_epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return 0.0;
        }
        let denom = 1.0_f64.max((self.total_epochs - self.warmup_epochs) as f64);
        let p = (epoch - self.warmup_epochs) as f64 / denom;
        let ramp = 2.0 / (1.0 + (-self.ramp_k * p).exp()) - 1.0;
        self.lambda_max * ramp.max(self.lambda_min_frac)
    }
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule {
            lambda_max: 0.3,
            lambda_min_frac: 0.05,
            ramp_k: 10.0,
            warmup_epochs: 10,
            total_epochs: 100,
        }
    }
}

/// Sign-flipping junction between extractor and domain classifier.
/// Forward: identity. Backward: multiply incoming gradient rows by -lambda.
pub fn reverse_gradient(d_rows: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    d_rows
        .iter()
        .map(|row| row.iter().map(|g| -lambda * g).collect())
        .collect()
}

/// Area under the ROC curve via the rank statistic, with average ranks over
/// exactly tied scores. Undefined when either class is absent.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&d| d == 1.0).count();
    let n_neg = labels.iter().filter(|&&d| d == 0.0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(
            "AUC needs at least one row of each class".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("classifier scores".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average rank within each group of exactly equal scores.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tied block [i, j] shares the mean rank.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Composite validation score for alignment early stopping:
/// S = |AUC - 1/2| + gamma * max(0, ln 2 - bce). Lower is better; zero means
/// an undecided classifier at chance-level confidence.
pub fn alignment_score(val_auc: f64, val_bce: f64, gamma: f64) -> f64 {
    (val_auc - 0.5).abs() + gamma * (std::f64::consts::LN_2 - val_bce).max(0.0)
}

/// One balanced two-domain batch: feature rows with 0/1 domain labels
/// (source = 0, target = 1), exactly half from each domain.
#[derive(Debug, Clone)]
pub struct DomainBatch {
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub n_source: usize,
    pub n_target: usize,
}

/// Builds one epoch of balanced batches.
///
/// Source rows are consumed without replacement from a fresh shuffle; the
/// final batch wraps to the start of the same shuffle when the source count
/// is not divisible by batch_size/2. Target rows cycle from an independent
/// shuffle, reshuffling on exhaustion, so a small target pool repeats as
/// often as needed (a singleton target appears batch_size/2 times per
/// batch). Epoch length is ceil(|source| / (batch_size / 2)).
pub fn balanced_batches(
    source: &DataSplit,
    target: &DataSplit,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DomainBatch>> {
    if batch_size == 0 || batch_size % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "batch size must be even and positive, got {batch_size}"
        )));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::Degenerate("balanced batching needs rows in both domains".into()));
    }
    if source.n_features() != target.n_features() {
        return Err(Error::Shape(format!(
            "source rows have {} features, target rows {}",
            source.n_features(),
            target.n_features()
        )));
    }
    let half = batch_size / 2;
    let sx = source.features();
    let tx = target.features();
    let mut s_order: Vec<usize> = (0..sx.len()).collect();
    s_order.shuffle(rng);
    let mut t_order: Vec<usize> = (0..tx.len()).collect();
    t_order.shuffle(rng);
    let mut t_cursor = 0usize;
    let n_batches = sx.len().div_ceil(half);
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut x = Vec::with_capacity(batch_size);
        let mut labels = Vec::with_capacity(batch_size);
        for k in 0..half {
            // Wraparound fill keeps the final batch exactly balanced.
            let pos = (b * half + k) % s_order.len();
            x.push(sx[s_order[pos]].clone());
            labels.push(0.0);
        }
        for _ in 0..half {
            if t_cursor == t_order.len() {
                t_order.shuffle(rng);
                t_cursor = 0;
            }
            x.push(tx[t_order[t_cursor]].clone());
            labels.push(1.0);
            t_cursor += 1;
        }
        batches.push(DomainBatch {
            x,
            labels,
            n_source: half,
            n_target: half,
        });
    }
    Ok(batches)
}

/// Per-epoch alignment diagnostics, written as one CSV row per epoch.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlignmentLogRow {
    pub epoch: usize,
    pub lambda: f64,
    pub train_bce: f64,
    pub val_bce: f64,
    pub val_auc: f64,
    pub score: f64,
    pub source_head_mse: f64,
}

pub fn write_alignment_log(path: &std::path::Path, rows: &[AlignmentLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "lambda",
        "train_bce",
        "val_bce",
        "val_auc",
        "score",
        "source_head_mse",
    ])?;
    for r in rows {
        w.write_record(&[
            r.epoch.to_string(),
            format!("{}", r.lambda),
            format!("{}", r.train_bce),
            format!("{}", r.val_bce),
            format!("{}", r.val_auc),
            format!("{}", r.score),
            format!("{}", r.source_head_mse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, Partition};
    use crate::rng::stream;
    use approx::assert_relative_eq;

    #[test]
    fn lambda_is_zero_through_warmup_then_ramps_to_max() {
        let s = LambdaSchedule {
            lambda_max: 1.5,
            lambda_min_frac: 0.05,
            ramp_k: 10.0,
            warmup_epochs: 5,
            total_epochs: 105,
        };
        for e in 0..5 {
            assert_eq!(s.lambda_at(e), 0.0);
        }
        // At e = warmup the ramp starts at max(floor, 0) = floor.
        assert_relative_eq!(s.lambda_at(5), 1.5 * 0.05, epsilon = 1e-15);
        // Monotone after warm-up, saturating near lambda_max.
        let mut prev = 0.0;
        for e in 5..=105 {
            let l = s.lambda_at(e);
            assert!(l >= prev);
            prev = l;
        }
        // p = 1 at e = total: 2 / (1 + e^-10) - 1.
        assert_relative_eq!(
            s.lambda_at(105),
            1.5 * 0.9999092042625952,
            epsilon = 1e-12
        );
    }

    #[test]
    fn lambda_floor_binds_early_in_the_ramp() {
        let s = LambdaSchedule {
            lambda_max: 1.0,
            lambda_min_frac: 0.2,
            ramp_k: 5.0,
            warmup_epochs: 0,
            total_epochs: 100,
        };
        // At p = 0 the raw ramp is 0; the floor takes over.
        assert_relative_eq!(s.lambda_at(0), 0.2, epsilon = 1e-15);
        // Late in the ramp the raw value exceeds the floor.
        assert!(s.lambda_at(90) > 0.2);
    }

    #[test]
    fn degenerate_single_epoch_schedule_is_finite() {
        let s = LambdaSchedule {
            lambda_max: 1.0,
            lambda_min_frac: 0.0,
            ramp_k: 10.0,
            warmup_epochs: 0,
            total_epochs: 1,
        };
        // Denominator clamps at 1, so the value is finite and in range.
        let l = s.lambda_at(0);
        assert!(l.is_finite() && (0.0..=1.0).contains(&l));
    }

    #[test]
    fn reverse_gradient_flips_and_scales() {
        let d = vec![vec![1.0, -2.0], vec![0.5, 0.0]];
        let r = reverse_gradient(&d, 0.7);
        assert_relative_eq!(r[0][0], -0.7, epsilon = 1e-15);
        assert_relative_eq!(r[0][1], 1.4, epsilon = 1e-15);
        assert_relative_eq!(r[1][0], -0.35, epsilon = 1e-15);
        assert_eq!(r[1][1], 0.0);
        // lambda = 0 blocks the flow entirely.
        let z = reverse_gradient(&d, 0.0);
        assert!(z.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn auc_matches_hand_example_and_brute_force() {
        // Scores (0.1, 0.4, 0.35, 0.8), labels (0, 0, 1, 1): one of four
        // positive-negative pairs is misordered, AUC = 0.75.
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0.0, 0.0, 1.0, 1.0];
        assert_relative_eq!(auc(&scores, &labels).unwrap(), 0.75, epsilon = 1e-15);
        // Perfect separation and perfect anti-separation.
        assert_relative_eq!(
            auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            auc(&[0.9, 0.8, 0.1, 0.2], &[0.0, 0.0, 1.0, 1.0]).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        // All scores identical: every pair is a tie, AUC = 1/2.
        assert_relative_eq!(
            auc(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        // Brute-force pair counting agrees on random instances.
        use rand::Rng;
        let mut rng = stream(77);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..8) as f64) / 8.0)
                .collect();
            let labels: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            let n_pos = labels.iter().filter(|&&d| d == 1.0).count();
            if n_pos == 0 || n_pos == labels.len() {
                continue;
            }
            let mut acc = 0.0;
            for i in 0..labels.len() {
                if labels[i] != 1.0 {
                    continue;
                }
                for j in 0..labels.len() {
                    if labels[j] != 0.0 {
                        continue;
                    }
                    acc += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            let brute = acc / (n_pos * (labels.len() - n_pos)) as f64;
            assert_relative_eq!(auc(&scores, &labels).unwrap(), brute, epsilon = 1e-12);
        }
    }

    #[test]
    fn auc_rejects_single_class_and_bad_labels() {
        assert!(auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
        assert!(auc(&[0.1, 0.2], &[0.5, 1.0]).is_err());
        assert!(auc(&[f64::NAN, 0.2], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn alignment_score_anchors() {
        // Perfectly confused classifier at chance confidence: score 0.
        assert_relative_eq!(
            alignment_score(0.5, std::f64::consts::LN_2, 0.5),
            0.0,
            epsilon = 1e-15
        );
        // Separable and confident: both terms contribute.
        // |1 - 0.5| + 0.5 * (ln 2 - 0.1) = 0.7965735902799727.
        assert_relative_eq!(
            alignment_score(1.0, 0.1, 0.5),
            0.7965735902799727,
            epsilon = 1e-15
        );
        // BCE above ln 2 contributes nothing.
        assert_relative_eq!(alignment_score(0.5, 2.0, 0.5), 0.0, epsilon = 1e-15);
        // AUC below 1/2 is as bad as above.
        assert_relative_eq!(
            alignment_score(0.3, std::f64::consts::LN_2, 0.5),
            alignment_score(0.7, std::f64::consts::LN_2, 0.5),
            epsilon = 1e-15
        );
    }

    fn mk_split(n: usize, domain: Domain) -> DataSplit {
        DataSplit::new(
            (0..n).map(|i| vec![i as f64, (i * i) as f64]).collect(),
            vec![0.0; n],
            domain,
            Partition::Train,
            1,
            (0..n as u64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn batches_are_exactly_balanced_with_wraparound_tail() {
        // |source| = 5, batch 4: ceil(5/2) = 3 batches; the last one wraps.
        let source = mk_split(5, Domain::Source);
        let target = mk_split(3, Domain::Target);
        let batches = balanced_batches(&source, &target, 4, &mut stream(2)).unwrap();
        assert_eq!(batches.len(), 3);
        for b in &batches {
            assert_eq!(b.n_source, 2);
            assert_eq!(b.n_target, 2);
            assert_eq!(b.labels[..2], [0.0, 0.0]);
            assert_eq!(b.labels[2..], [1.0, 1.0]);
        }
        // Each source row appears at least once across the epoch.
        let mut seen = vec![false; 5];
        for b in &batches {
            for row in &b.x[..2] {
                seen[row[0] as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn singleton_target_repeats_within_each_batch() {
        // |source| = 4, |target| = 1, batch 4: two batches, the single
        // target row twice in each.
        let source = mk_split(4, Domain::Source);
        let target = mk_split(1, Domain::Target);
        let batches = balanced_batches(&source, &target, 4, &mut stream(3)).unwrap();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            assert_eq!(b.x[2], b.x[3]);
            assert_eq!(b.labels[2..], [1.0, 1.0]);
        }
    }

    #[test]
    fn epoch_length_follows_source_size() {
        let source = mk_split(100, Domain::Source);
        let target = mk_split(10, Domain::Target);
        let batches = balanced_batches(&source, &target, 20, &mut stream(4)).unwrap();
        assert_eq!(batches.len(), 10);
        let batches = balanced_batches(&source, &target, 64, &mut stream(4)).unwrap();
        assert_eq!(batches.len(), 4); // ceil(100 / 32)
    }

    #[test]
    fn batching_rejects_odd_sizes_and_empty_domains() {
        let source = mk_split(4, Domain::Source);
        let target = mk_split(2, Domain::Target);
        assert!(balanced_batches(&source, &target, 3, &mut stream(0)).is_err());
        assert!(balanced_batches(&source, &target, 0, &mut stream(0)).is_err());
    }

    #[test]
    fn batching_is_seed_deterministic() {
        let source = mk_split(20, Domain::Source);
        let target = mk_split(7, Domain::Target);
        let a = balanced_batches(&source, &target, 8, &mut stream(5)).unwrap();
        let b = balanced_batches(&source, &target, 8, &mut stream(5)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.x, y.x);
        }
    }
}
