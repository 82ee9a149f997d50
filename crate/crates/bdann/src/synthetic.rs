//! Synthetic two-domain regression benchmark with a controlled conditional
//! shift: the same five uniform inputs feed both domains, but the target's
//! outputs pass through a deterministic input warp and slightly different
//! coefficients before noise is added. Output scaling and feature
//! standardization live here too.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{DataSplit, Domain, Partition, ZScore};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

/// Coefficients of one domain's generating function.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DomainParams {
    pub a: [f64; 10],
    pub omega: [f64; 6],
    pub kappa: f64,
    pub noise_std: f64,
}

/// Source-domain coefficients.
pub fn source_params() -> DomainParams {
    DomainParams {
        a: [2.0, 5.0, 0.8, 1.0, -0.5, 0.4, -0.2, 0.6, 0.5, 0.3],
        omega: [2.0, 1.2, 1.8, 1.5, 2.2, 1.7],
        kappa: 2.0,
        noise_std: 0.05,
    }
}

/// Target-domain coefficients; a small perturbation of the source's.
pub fn target_params() -> DomainParams {
    DomainParams {
        a: [2.0, 5.0, 0.8, 1.0, -0.4, 0.35, -0.3, 0.6, 0.5, 0.3],
        omega: [2.2, 1.0, 2.0, 1.8, 2.0, 1.9],
        kappa: 2.0,
        noise_std: 0.05,
    }
}

/// Five-dimensional nonlinear base function, noise-free.
pub fn base_function(x: &[f64], p: &DomainParams) -> f64 {
    debug_assert_eq!(x.len(), 5);
    let (x1, x2, x3, x4, x5) = (x[0], x[1], x[2], x[3], x[4]);
    let a = &p.a;
    let w = &p.omega;
    p.kappa
        * (a[0]
            + a[1] * (w[0] * x1 + w[1] * x2).sin()
            + a[2] * (w[2] * x1 * x2).cos()
            + a[3] * (1.0 + x2 * x2).ln()
            + a[4] * x3
            + a[5] * x4 * x4
            + a[6] * x5
            + a[7] * (w[3] * x1 * x3).sin()
            + a[8] * (w[4] * x3 * x4).cos()
            + a[9] * (w[5] * (x1 + x5) * x3).sin())
}

/// Deterministic input warp applied inside the target domain's generating
/// process. Components 4 and 5 pass through unchanged.
pub fn target_warp(x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), 5);
    vec![
        1.2 * (1.3 * x[0]).sin() + 1.5,
        x[1] + 0.4 * (1.5 * x[2]).cos(),
        x[2] + 0.3 * (0.8 * x[0] * x[1]).sin(),
        x[3],
        x[4],
    ]
}

/// Generating recipe for one domain: coefficients plus whether inputs pass
/// through the warp before evaluation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorSpec {
    pub params: DomainParams,
    pub warp: bool,
}

impl GeneratorSpec {
    pub fn for_domain(domain: Domain) -> Self {
        match domain {
            Domain::Source => GeneratorSpec {
                params: source_params(),
                warp: false,
            },
            Domain::Target => GeneratorSpec {
                params: target_params(),
                warp: true,
            },
        }
    }
}

/// Noise-free conditional mean for a domain recipe at input x.
pub fn noise_free_output(x: &[f64], spec: &GeneratorSpec) -> f64 {
    if spec.warp {
        base_function(&target_warp(x), &spec.params)
    } else {
        base_function(x, &spec.params)
    }
}

/// Draws n rows for one domain with that domain's default recipe: inputs
/// i.i.d. uniform on [1, 3]^5, Gaussian noise on the outputs.
pub fn generate_domain(n: usize, domain: Domain, seed: u64) -> Result<DataSplit> {
    generate_domain_with(n, domain, &GeneratorSpec::for_domain(domain), seed)
}

/// Same as `generate_domain` with an explicit recipe. Raw (unscaled)
/// features and outputs; partition tag starts as train.
pub fn generate_domain_with(
    n: usize,
    domain: Domain,
    spec: &GeneratorSpec,
    seed: u64,
) -> Result<DataSplit> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot generate zero rows".into()));
    }
    let mut rng = stream(seed);
    let noise = if spec.params.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.params.noise_std).map_err(|e| {
            Error::InvalidArgument(format!("bad noise std: {e}"))
        })?)
    } else {
        None
    };
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(1.0..3.0)).collect();
        let mut y = noise_free_output(&x, spec);
        if let Some(nd) = &noise {
            y += nd.sample(&mut rng);
        }
        xs.push(x);
        ys.push(y);
    }
    DataSplit::new(xs, ys, domain, Partition::Train, seed, (0..n as u64).collect())
}

/// Smooth quantile-anchored output scaler.
///
/// Inside [q05, q95] the map is 1 + 4 * sigmoid(alpha (y - c)) with c the
/// quantile midpoint and alpha chosen so the quantiles land at 1.1 and 4.9;
/// beyond the quantiles the map continues along the tangent line at the
/// respective boundary, so it is strictly increasing and C1 everywhere.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuantileSigmoid {
    pub q05: f64,
    pub q95: f64,
    pub center: f64,
    pub alpha: f64,
}

/// Margin keeping the quantile images off the range ends: s(q95) = 5 - 0.1.
const QS_DELTA: f64 = 0.1;

impl QuantileSigmoid {
    pub fn fit(y_all: &[f64]) -> Result<Self> {
        if y_all.len() < 20 {
            return Err(Error::Degenerate(format!(
                "quantile scaling needs at least 20 values, got {}",
                y_all.len()
            )));
        }
        if y_all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("output values for quantile fit".into()));
        }
        let mut sorted = y_all.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q05 = interp_quantile(&sorted, 0.05);
        let q95 = interp_quantile(&sorted, 0.95);
        if q05 >= q95 {
            return Err(Error::Degenerate(
                "output spread is degenerate: q05 >= q95".into(),
            ));
        }
        let center = 0.5 * (q05 + q95);
        // sigmoid(alpha (q95 - c)) = 1 - delta/4 + ... solve so that
        // 1 + 4 sigmoid = 5 - delta at q95: sigmoid = (4 - delta) / 4,
        // logit((4 - delta) / 4) = ln((4 - delta) / delta).
        let logit = ((4.0 - QS_DELTA) / QS_DELTA).ln();
        let alpha = logit / (q95 - center);
        Ok(QuantileSigmoid {
            q05,
            q95,
            center,
            alpha,
        })
    }

    pub fn apply(&self, y: f64) -> f64 {
        if y < self.q05 {
            let (v, d) = self.sigmoid_value_slope(self.q05);
            v + d * (y - self.q05)
        } else if y > self.q95 {
            let (v, d) = self.sigmoid_value_slope(self.q95);
            v + d * (y - self.q95)
        } else {
            self.sigmoid_value_slope(y).0
        }
    }

    pub fn invert(&self, s: f64) -> f64 {
        let (lo, dlo) = self.sigmoid_value_slope(self.q05);
        let (hi, dhi) = self.sigmoid_value_slope(self.q95);
        if s < lo {
            self.q05 + (s - lo) / dlo
        } else if s > hi {
            self.q95 + (s - hi) / dhi
        } else {
            // s = 1 + 4 sigmoid(alpha (y - c))  =>  y = c + logit((s-1)/4) / alpha.
            let u = (s - 1.0) / 4.0;
            self.center + (u / (1.0 - u)).ln() / self.alpha
        }
    }

    fn sigmoid_value_slope(&self, y: f64) -> (f64, f64) {
        let sig = crate::net::sigmoid(self.alpha * (y - self.center));
        (1.0 + 4.0 * sig, 4.0 * self.alpha * sig * (1.0 - sig))
    }
}

fn interp_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Which rows feed the feature standardizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ScalePolicy {
    /// Transfer strategies: source and target training rows jointly.
    Joint,
    /// From-scratch baselines: target training rows only.
    TargetOnly,
}

/// Fits a feature z-score under a policy.
pub fn fit_feature_scaler(
    source_x: &[Vec<f64>],
    target_x: &[Vec<f64>],
    policy: ScalePolicy,
) -> Result<ZScore> {
    match policy {
        ScalePolicy::TargetOnly => ZScore::fit(target_x),
        ScalePolicy::Joint => {
            let mut all = source_x.to_vec();
            all.extend_from_slice(target_x);
            ZScore::fit(&all)
        }
    }
}

/// Full benchmark recipe.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchmarkConfig {
    pub seed: u64,
    /// Target training rows actually exposed: 75, 150, 250 or 500.
    pub ablation_size: usize,
    pub source: GeneratorSpec,
    pub target: GeneratorSpec,
    pub n_source: usize,
    pub n_target: usize,
}

impl BenchmarkConfig {
    pub fn new(seed: u64, ablation_size: usize) -> Result<Self> {
        let cfg = BenchmarkConfig {
            seed,
            ablation_size,
            source: GeneratorSpec::for_domain(Domain::Source),
            target: GeneratorSpec::for_domain(Domain::Target),
            n_source: 7000,
            n_target: 1000,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Identical generating laws in both domains: no shift at all beyond
    /// independent noise draws.
    pub fn degenerate_shift(seed: u64, ablation_size: usize) -> Result<Self> {
        let mut cfg = BenchmarkConfig::new(seed, ablation_size)?;
        cfg.target = GeneratorSpec {
            params: source_params(),
            warp: false,
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.ablation_size, 75 | 150 | 250 | 500) {
            return Err(Error::InvalidConfig(format!(
                "ablation size must be one of 75/150/250/500, got {}",
                self.ablation_size
            )));
        }
        if self.n_source < SOURCE_TRAIN + SOURCE_VAL + SOURCE_TEST {
            return Err(Error::InvalidConfig("source pool too small".into()));
        }
        if self.n_target < TARGET_POOL + TARGET_VAL + TARGET_TEST {
            return Err(Error::InvalidConfig("target pool too small".into()));
        }
        Ok(())
    }
}

const SOURCE_TRAIN: usize = 5000;
const SOURCE_VAL: usize = 1000;
const SOURCE_TEST: usize = 1000;
/// Target training pool from which nested ablation subsets are taken.
const TARGET_POOL: usize = 500;
const TARGET_VAL: usize = 250;
const TARGET_TEST: usize = 250;

/// Generated benchmark: standardized features, outputs scaled to ~[1, 5].
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub source_train: DataSplit,
    pub source_val: DataSplit,
    pub source_test: DataSplit,
    pub target_train: DataSplit,
    pub target_val: DataSplit,
    pub target_test: DataSplit,
    pub y_scaler: QuantileSigmoid,
    pub x_scaler: ZScore,
    pub config: BenchmarkConfig,
}

/// Builds the benchmark at one ablation size with default domain recipes.
pub fn make_benchmark(seed: u64, ablation_size: usize) -> Result<Benchmark> {
    make_benchmark_with(&BenchmarkConfig::new(seed, ablation_size)?)
}

/// Builds the benchmark from an explicit config.
///
/// The output scaler is fitted on the combined raw source+target outputs;
/// the feature scaler is fitted jointly on the source training rows and the
/// full 500-row target training pool, so every ablation size shares
/// bitwise-identical validation and test rows. Partition membership and row
/// order come from seeded shuffles; ablation subsets are nested prefixes of
/// the shuffled pool.
pub fn make_benchmark_with(config: &BenchmarkConfig) -> Result<Benchmark> {
    config.validate()?;
    let seed = config.seed;
    let source = generate_domain_with(
        config.n_source,
        Domain::Source,
        &config.source,
        derive_seed(seed, "generate/source"),
    )?;
    let target = generate_domain_with(
        config.n_target,
        Domain::Target,
        &config.target,
        derive_seed(seed, "generate/target"),
    )?;

    // Output scaler on the combined raw distributions.
    let mut y_all = source.targets().to_vec();
    y_all.extend_from_slice(target.targets());
    let y_scaler = QuantileSigmoid::fit(&y_all)?;

    // Shuffled partition assignments.
    let mut s_order: Vec<usize> = (0..config.n_source).collect();
    s_order.shuffle(&mut stream(derive_seed(seed, "partition/source")));
    let mut t_order: Vec<usize> = (0..config.n_target).collect();
    t_order.shuffle(&mut stream(derive_seed(seed, "partition/target")));

    let sx = source.features();
    let sy = source.targets();
    let tx = target.features();
    let ty = target.targets();

    // Feature scaler: source train rows + full target pool.
    let mut scaler_rows: Vec<Vec<f64>> = s_order[..SOURCE_TRAIN]
        .iter()
        .map(|&i| sx[i].clone())
        .collect();
    scaler_rows.extend(t_order[..TARGET_POOL].iter().map(|&i| tx[i].clone()));
    let x_scaler = ZScore::fit(&scaler_rows)?;

    let build = |order: &[usize],
                 xs: &[Vec<f64>],
                 ys: &[f64],
                 domain: Domain,
                 partition: Partition|
     -> Result<DataSplit> {
        let x: Vec<Vec<f64>> = order.iter().map(|&i| x_scaler.transform_row(&xs[i])).collect();
        let y: Vec<f64> = order.iter().map(|&i| y_scaler.apply(ys[i])).collect();
        let ids: Vec<u64> = order.iter().map(|&i| i as u64).collect();
        DataSplit::new(x, y, domain, partition, seed, ids)
    };

    let benchmark = Benchmark {
        source_train: build(
            &s_order[..SOURCE_TRAIN],
            sx,
            sy,
            Domain::Source,
            Partition::Train,
        )?,
        source_val: build(
            &s_order[SOURCE_TRAIN..SOURCE_TRAIN + SOURCE_VAL],
            sx,
            sy,
            Domain::Source,
            Partition::Val,
        )?,
        source_test: build(
            &s_order[SOURCE_TRAIN + SOURCE_VAL..SOURCE_TRAIN + SOURCE_VAL + SOURCE_TEST],
            sx,
            sy,
            Domain::Source,
            Partition::Test,
        )?,
        target_train: build(
            &t_order[..config.ablation_size],
            tx,
            ty,
            Domain::Target,
            Partition::Train,
        )?,
        target_val: build(
            &t_order[TARGET_POOL..TARGET_POOL + TARGET_VAL],
            tx,
            ty,
            Domain::Target,
            Partition::Val,
        )?,
        target_test: build(
            &t_order[TARGET_POOL + TARGET_VAL..TARGET_POOL + TARGET_VAL + TARGET_TEST],
            tx,
            ty,
            Domain::Target,
            Partition::Test,
        )?,
        y_scaler,
        x_scaler,
        config: config.clone(),
    };
    Ok(benchmark)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn base_function_trivial_coefficients() {
        let zero = DomainParams {
            a: [0.0; 10],
            omega: [1.0; 6],
            kappa: 2.0,
            noise_std: 0.0,
        };
        assert_eq!(base_function(&[1.0, 2.0, 3.0, 4.0, 5.0], &zero), 0.0);
        let mut only_a1 = zero.clone();
        only_a1.a[0] = 1.0;
        for x in [[1.0, 1.0, 1.0, 1.0, 1.0], [2.5, 0.1, -3.0, 0.0, 9.0]] {
            assert_relative_eq!(base_function(&x, &only_a1), 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn base_function_matches_independent_golden_value() {
        // Evaluated by a separate straight-line script before this module
        // was written.
        let v = base_function(&[2.0, 2.0, 2.0, 2.0, 2.0], &source_params());
        assert_relative_eq!(v, 9.126835453638275, epsilon = 1e-12);
    }

    #[test]
    fn warp_identity_components_and_zero_crossing() {
        let x = [0.7, -1.2, 3.3, 4.4, -5.5];
        let g = target_warp(&x);
        assert_eq!(g[3], 4.4);
        assert_eq!(g[4], -5.5);
        // sin(1.3 * 0) = 0 pins the first component at 1.5.
        let g0 = target_warp(&[0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_relative_eq!(g0[0], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn warp_matches_independent_golden_vector() {
        let g = target_warp(&[1.0, 1.0, 1.0, 1.0, 1.0]);
        let expect = [
            2.6562698225006316,
            1.028294880667081,
            1.2152068272698568,
            1.0,
            1.0,
        ];
        for (a, b) in g.iter().zip(&expect) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        // Composition golden: target conditional mean at (2,2,2,2,2).
        let v = base_function(&target_warp(&[2.0; 5]), &target_params());
        assert_relative_eq!(v, 8.960493618707412, epsilon = 1e-12);
    }

    #[test]
    fn zero_noise_generation_is_exactly_the_composition() {
        let spec = GeneratorSpec {
            params: DomainParams {
                noise_std: 0.0,
                ..target_params()
            },
            warp: true,
        };
        let split = generate_domain_with(50, Domain::Target, &spec, 3).unwrap();
        for (x, y) in split.features().iter().zip(split.targets()) {
            assert_eq!(*y, base_function(&target_warp(x), &spec.params));
        }
    }

    #[test]
    fn input_coordinates_center_on_two() {
        let split = generate_domain(100_000, Domain::Source, 11).unwrap();
        for j in 0..5 {
            let mean: f64 =
                split.features().iter().map(|r| r[j]).sum::<f64>() / split.len() as f64;
            assert!((mean - 2.0).abs() < 0.01, "coordinate {j} mean {mean}");
            assert!(split.features().iter().all(|r| (1.0..3.0).contains(&r[j])));
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = generate_domain(100, Domain::Target, 5).unwrap();
        let b = generate_domain(100, Domain::Target, 5).unwrap();
        let c = generate_domain(100, Domain::Target, 6).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.targets(), b.targets());
        assert_ne!(a.targets(), c.targets());
    }

    #[test]
    fn raw_output_range_matches_the_documented_band() {
        let s = generate_domain(20_000, Domain::Source, 1).unwrap();
        let t = generate_domain(20_000, Domain::Target, 2).unwrap();
        let all: Vec<f64> = s.targets().iter().chain(t.targets()).copied().collect();
        let min = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min < -8.0 && min > -14.0, "min {min}");
        assert!(max > 22.0 && max < 29.0, "max {max}");
    }

    #[test]
    fn domains_disagree_on_the_same_inputs() {
        // Conditional shift: the two noise-free conditional means differ.
        let src = GeneratorSpec::for_domain(Domain::Source);
        let tgt = GeneratorSpec::for_domain(Domain::Target);
        let split = generate_domain(500, Domain::Source, 9).unwrap();
        let mean_gap: f64 = split
            .features()
            .iter()
            .map(|x| (noise_free_output(x, &src) - noise_free_output(x, &tgt)).abs())
            .sum::<f64>()
            / split.len() as f64;
        assert!(mean_gap > 0.5, "mean conditional gap {mean_gap}");
    }

    #[test]
    fn quantile_sigmoid_anchors_and_monotonicity() {
        let mut rng = stream(4);
        let ys: Vec<f64> = (0..5000).map(|_| rng.random_range(-11.0..26.0)).collect();
        let qs = QuantileSigmoid::fit(&ys).unwrap();
        // Midpoint maps to the range midpoint, quantiles to 1.1 and 4.9.
        assert_relative_eq!(qs.apply(qs.center), 3.0, epsilon = 1e-12);
        assert_relative_eq!(qs.apply(qs.q05), 1.0 + QS_DELTA, epsilon = 1e-12);
        assert_relative_eq!(qs.apply(qs.q95), 5.0 - QS_DELTA, epsilon = 1e-12);
        // Strictly increasing across the whole line, including the joins.
        let mut prev = f64::NEG_INFINITY;
        let mut y = qs.q05 - 5.0;
        while y < qs.q95 + 5.0 {
            let v = qs.apply(y);
            assert!(v > prev);
            prev = v;
            y += 0.01;
        }
    }

    #[test]
    fn quantile_sigmoid_is_c1_at_the_joins() {
        let ys: Vec<f64> = (0..1000).map(|i| -11.0 + 37.0 * i as f64 / 999.0).collect();
        let qs = QuantileSigmoid::fit(&ys).unwrap();
        let h = 1e-7;
        for q in [qs.q05, qs.q95] {
            let inner = (qs.apply(q) - qs.apply(q - h)) / h;
            let outer = (qs.apply(q + h) - qs.apply(q)) / h;
            assert_relative_eq!(inner, outer, max_relative = 1e-4);
        }
    }

    #[test]
    fn quantile_sigmoid_round_trip_under_1e10() {
        let mut rng = stream(6);
        let fit: Vec<f64> = (0..2000).map(|_| rng.random_range(-11.0..26.0)).collect();
        let qs = QuantileSigmoid::fit(&fit).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            // Includes points well outside the quantile band.
            let y = rng.random_range(-30.0..45.0);
            worst = worst.max((qs.invert(qs.apply(y)) - y).abs());
        }
        assert!(worst < 1e-10, "worst round-trip error {worst}");
    }

    #[test]
    fn quantile_sigmoid_rejects_degenerate_spread() {
        assert!(QuantileSigmoid::fit(&vec![1.0; 100]).is_err());
        assert!(QuantileSigmoid::fit(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn scaler_policies_differ_on_shifted_domains() {
        let source: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let target: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 + 1000.0]).collect();
        let joint = fit_feature_scaler(&source, &target, ScalePolicy::Joint).unwrap();
        let only = fit_feature_scaler(&source, &target, ScalePolicy::TargetOnly).unwrap();
        assert!((joint.means[0] - only.means[0]).abs() > 100.0);
    }

    #[test]
    fn benchmark_partition_sizes_are_exact() {
        let b = make_benchmark(7, 250).unwrap();
        assert_eq!(b.source_train.len(), 5000);
        assert_eq!(b.source_val.len(), 1000);
        assert_eq!(b.source_test.len(), 1000);
        assert_eq!(b.target_train.len(), 250);
        assert_eq!(b.target_val.len(), 250);
        assert_eq!(b.target_test.len(), 250);
        assert!(make_benchmark(7, 100).is_err());
    }

    #[test]
    fn benchmark_partitions_share_no_rows() {
        let b = make_benchmark(8, 75).unwrap();
        let mut source_ids: Vec<u64> = b
            .source_train
            .row_ids()
            .iter()
            .chain(b.source_val.row_ids())
            .chain(b.source_test.row_ids())
            .copied()
            .collect();
        source_ids.sort_unstable();
        source_ids.dedup();
        assert_eq!(source_ids.len(), 7000);
        let mut target_ids: Vec<u64> = b
            .target_train
            .row_ids()
            .iter()
            .chain(b.target_val.row_ids())
            .chain(b.target_test.row_ids())
            .copied()
            .collect();
        target_ids.sort_unstable();
        target_ids.dedup();
        assert_eq!(target_ids.len(), 75 + 250 + 250);
    }

    #[test]
    fn ablations_nest_and_share_val_test_rows_bitwise() {
        let sizes = [75usize, 150, 250, 500];
        let benches: Vec<Benchmark> = sizes
            .iter()
            .map(|&k| make_benchmark(21, k).unwrap())
            .collect();
        for w in benches.windows(2) {
            // Smaller train set is a prefix of the larger.
            let small = &w[0].target_train;
            let large = &w[1].target_train;
            assert_eq!(
                small.row_ids(),
                &large.row_ids()[..small.len()],
                "ablation subsets must nest"
            );
            assert_eq!(small.features(), &large.features()[..small.len()]);
            // Val and test rows identical bitwise across ablations.
            assert_eq!(w[0].target_val.features(), w[1].target_val.features());
            assert_eq!(w[0].target_val.targets(), w[1].target_val.targets());
            assert_eq!(w[0].target_test.features(), w[1].target_test.features());
            assert_eq!(w[0].target_test.targets(), w[1].target_test.targets());
        }
    }

    #[test]
    fn benchmark_is_seed_deterministic_and_standardized() {
        let a = make_benchmark(3, 500).unwrap();
        let b = make_benchmark(3, 500).unwrap();
        assert_eq!(a.source_train.features(), b.source_train.features());
        assert_eq!(a.target_test.targets(), b.target_test.targets());
        // The scaler's fitting rows (source train + target pool) land on
        // zero mean, unit variance per column.
        let rows: Vec<&Vec<f64>> = a
            .source_train
            .features()
            .iter()
            .chain(a.target_train.features())
            .collect();
        let n = rows.len() as f64;
        for j in 0..5 {
            let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var: f64 = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
            assert_relative_eq!(var, 1.0, max_relative = 1e-9);
        }
        // Outputs live in the scaled band.
        for y in a.target_train.targets() {
            assert!((0.0..=6.0).contains(y), "scaled output {y}");
        }
    }

    #[test]
    fn degenerate_shift_config_removes_the_conditional_gap() {
        let cfg = BenchmarkConfig::degenerate_shift(5, 250).unwrap();
        assert_eq!(cfg.target.params, source_params());
        assert!(!cfg.target.warp);
        let split = generate_domain(200, Domain::Source, 13).unwrap();
        for x in split.features() {
            let a = noise_free_output(x, &cfg.source);
            let b = noise_free_output(x, &cfg.target);
            assert_eq!(a, b);
        }
    }
}
