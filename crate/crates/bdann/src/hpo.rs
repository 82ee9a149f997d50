//! Hyperparameter search: random warm start followed by annealed local
//! perturbation around the running best. The sampler is deliberately
//! surrogate-free; it is deterministic for a given seed and treats the
//! objective as a black box that may fail.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, derive_seed_indexed, stream};

/// One sampled hyperparameter value.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl ParamValue {
    pub fn as_int(&self) -> Result<i64> {
        match self {
            ParamValue::Int(v) => Ok(*v),
            other => Err(Error::InvalidArgument(format!("expected integer, got {other:?}"))),
        }
    }

    pub fn as_real(&self) -> Result<f64> {
        match self {
            ParamValue::Real(v) => Ok(*v),
            ParamValue::Int(v) => Ok(*v as f64),
            other => Err(Error::InvalidArgument(format!("expected real, got {other:?}"))),
        }
    }

    pub fn as_str(&self) -> Result<&str> {
        match self {
            ParamValue::Cat(v) => Ok(v),
            other => Err(Error::InvalidArgument(format!("expected category, got {other:?}"))),
        }
    }
}

/// Named configurations use a sorted map so iteration order, serialization
/// and equality are all stable.
pub type TrialConfig = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DimKind {
    /// Inclusive integer range.
    Int { lo: i64, hi: i64 },
    Real { lo: f64, hi: f64 },
    /// Sampled uniformly in log space; bounds must be positive.
    LogReal { lo: f64, hi: f64 },
    Categorical { options: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Dim {
    pub name: String,
    pub kind: DimKind,
}

impl Dim {
    pub fn int(name: &str, lo: i64, hi: i64) -> Self {
        Dim {
            name: name.into(),
            kind: DimKind::Int { lo, hi },
        }
    }

    pub fn real(name: &str, lo: f64, hi: f64) -> Self {
        Dim {
            name: name.into(),
            kind: DimKind::Real { lo, hi },
        }
    }

    pub fn log_real(name: &str, lo: f64, hi: f64) -> Self {
        Dim {
            name: name.into(),
            kind: DimKind::LogReal { lo, hi },
        }
    }

    pub fn categorical(name: &str, options: &[&str]) -> Self {
        Dim {
            name: name.into(),
            kind: DimKind::Categorical {
                options: options.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            DimKind::Int { lo, hi } if lo > hi => Err(Error::InvalidConfig(format!(
                "dimension {:?}: bounds out of order",
                self.name
            ))),
            DimKind::Real { lo, hi } if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() => {
                Err(Error::InvalidConfig(format!(
                    "dimension {:?}: bad real bounds",
                    self.name
                )))
            }
            DimKind::LogReal { lo, hi } if !(*lo > 0.0 && hi >= lo && hi.is_finite()) => {
                Err(Error::InvalidConfig(format!(
                    "dimension {:?}: log bounds must be positive and ordered",
                    self.name
                )))
            }
            DimKind::Categorical { options } if options.is_empty() => Err(Error::InvalidConfig(
                format!("dimension {:?}: no categories", self.name),
            )),
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> ParamValue {
        match &self.kind {
            DimKind::Int { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
            DimKind::Real { lo, hi } => {
                if lo == hi {
                    ParamValue::Real(*lo)
                } else {
                    ParamValue::Real(rng.random_range(*lo..*hi))
                }
            }
            DimKind::LogReal { lo, hi } => {
                if lo == hi {
                    ParamValue::Real(*lo)
                } else {
                    ParamValue::Real(rng.random_range(lo.ln()..hi.ln()).exp())
                }
            }
            DimKind::Categorical { options } => {
                ParamValue::Cat(options[rng.random_range(0..options.len())].clone())
            }
        }
    }

    /// Local move around `center`, scaled by `scale` (a fraction of the
    /// dimension's span). Always lands in bounds.
    fn perturb(&self, center: &ParamValue, scale: f64, rng: &mut ChaCha8Rng) -> ParamValue {
        let n: f64 = StandardNormal.sample(rng);
        match (&self.kind, center) {
            (DimKind::Int { lo, hi }, ParamValue::Int(c)) => {
                let span = (*hi - *lo) as f64;
                let moved = (*c as f64 + scale * span * n).round() as i64;
                ParamValue::Int(moved.clamp(*lo, *hi))
            }
            (DimKind::Real { lo, hi }, ParamValue::Real(c)) => {
                ParamValue::Real((c + scale * (hi - lo) * n).clamp(*lo, *hi))
            }
            (DimKind::LogReal { lo, hi }, ParamValue::Real(c)) => {
                let moved = (c.ln() + scale * (hi.ln() - lo.ln()) * n).exp();
                ParamValue::Real(moved.clamp(*lo, *hi))
            }
            (DimKind::Categorical { options }, ParamValue::Cat(c)) => {
                // Hop to a fresh category with probability `scale`.
                let u: f64 = rng.random();
                if u < scale {
                    ParamValue::Cat(options[rng.random_range(0..options.len())].clone())
                } else {
                    ParamValue::Cat(c.clone())
                }
            }
            // A center of the wrong shape means the caller mixed configs
            // from different spaces; fall back to a fresh draw.
            _ => self.sample(rng),
        }
    }

    fn midpoint(&self) -> ParamValue {
        match &self.kind {
            DimKind::Int { lo, hi } => ParamValue::Int(lo + (hi - lo) / 2),
            DimKind::Real { lo, hi } => ParamValue::Real((lo + hi) / 2.0),
            DimKind::LogReal { lo, hi } => ParamValue::Real((0.5 * (lo.ln() + hi.ln())).exp()),
            DimKind::Categorical { options } => ParamValue::Cat(options[0].clone()),
        }
    }

    fn contains(&self, v: &ParamValue) -> bool {
        match (&self.kind, v) {
            (DimKind::Int { lo, hi }, ParamValue::Int(x)) => lo <= x && x <= hi,
            (DimKind::Real { lo, hi }, ParamValue::Real(x)) => lo <= x && x <= hi,
            (DimKind::LogReal { lo, hi }, ParamValue::Real(x)) => lo <= x && x <= hi,
            (DimKind::Categorical { options }, ParamValue::Cat(x)) => options.contains(x),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dim>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidConfig("empty search space".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for d in &dims {
            d.validate()?;
            if !names.insert(d.name.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate dimension {:?}",
                    d.name
                )));
            }
        }
        Ok(SearchSpace { dims })
    }

    /// The domain-classifier training space: layer count, width, dropout,
    /// learning rate, the four lambda-schedule knobs, and L2 strength.
    pub fn classifier_space() -> Self {
        SearchSpace::new(vec![
            Dim::int("classifier_layers", 1, 4),
            Dim::int("classifier_neurons", 32, 256),
            Dim::real("classifier_dropout", 0.0, 0.5),
            Dim::real("learning_rate", 1e-5, 1e-4),
            Dim::real("lambda_max", 0.1, 2.0),
            Dim::real("lambda_min_frac", 0.01, 0.2),
            Dim::real("ramp_k", 5.0, 20.0),
            Dim::log_real("l2_penalty", 1e-7, 1e-3),
            Dim::int("warmup_epochs", 0, 15),
        ])
        .expect("static space is valid")
    }

    /// Extractor/head architecture space over commonly used ranges.
    pub fn architecture_space() -> Self {
        SearchSpace::new(vec![
            Dim::int("extractor_layers", 2, 4),
            Dim::int("extractor_width", 16, 128),
            Dim::int("head_width", 16, 128),
            Dim::categorical("activation", &["relu", "tanh"]),
            Dim::real("beta_max", 0.1, 2.0),
        ])
        .expect("static space is valid")
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> TrialConfig {
        self.dims
            .iter()
            .map(|d| (d.name.clone(), d.sample(rng)))
            .collect()
    }

    pub fn perturb(&self, center: &TrialConfig, scale: f64, rng: &mut ChaCha8Rng) -> TrialConfig {
        self.dims
            .iter()
            .map(|d| {
                let v = match center.get(&d.name) {
                    Some(c) => d.perturb(c, scale, rng),
                    None => d.sample(rng),
                };
                (d.name.clone(), v)
            })
            .collect()
    }

    pub fn midpoint(&self) -> TrialConfig {
        self.dims
            .iter()
            .map(|d| (d.name.clone(), d.midpoint()))
            .collect()
    }

    pub fn contains(&self, config: &TrialConfig) -> bool {
        self.dims
            .iter()
            .all(|d| config.get(&d.name).is_some_and(|v| d.contains(v)))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum TrialStatus {
    Completed,
    Failed(String),
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: TrialConfig,
    /// Validation objective; present exactly for completed trials.
    pub objective: Option<f64>,
    pub status: TrialStatus,
    /// Seed handed to the objective for this trial.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SearchResult {
    pub best: Trial,
    pub history: Vec<Trial>,
}

/// Objective contract: configuration plus trial seed to a scalar to
/// minimize. Errors mark the trial failed without stopping the search.
pub type Objective<'a> = &'a mut dyn FnMut(&TrialConfig, u64) -> Result<f64>;

/// Runs `warm_random` uniform trials, then refines around the running best
/// with perturbations whose scale anneals from half the span down to a few
/// percent. Failed trials are recorded and skipped when ranking.
pub fn run_search(
    space: &SearchSpace,
    budget: usize,
    warm_random: usize,
    objective: Objective,
    seed: u64,
) -> Result<SearchResult> {
    if warm_random == 0 || budget < warm_random {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} must cover a positive warm start {warm_random}"
        )));
    }
    let mut history: Vec<Trial> = Vec::with_capacity(budget);
    let mut best: Option<(f64, usize)> = None;
    for index in 0..budget {
        let mut rng = stream(derive_seed_indexed(seed, "hpo/trial", index as u64));
        let config = if index < warm_random {
            space.sample(&mut rng)
        } else {
            let frac = (index - warm_random) as f64 / (budget - warm_random).max(1) as f64;
            let scale = 0.5 * (1.0 - frac) + 0.05 * frac;
            match best {
                Some((_, at)) => space.perturb(&history[at].config, scale, &mut rng),
                None => space.sample(&mut rng),
            }
        };
        let trial_seed = derive_seed_indexed(seed, "hpo/objective", index as u64);
        let trial = match objective(&config, trial_seed) {
            Ok(v) if v.is_finite() => {
                if best.is_none_or(|(b, _)| v < b) {
                    best = Some((v, index));
                }
                Trial {
                    index,
                    config,
                    objective: Some(v),
                    status: TrialStatus::Completed,
                    seed: trial_seed,
                }
            }
            Ok(v) => Trial {
                index,
                config,
                objective: None,
                status: TrialStatus::Failed(format!("non-finite objective {v}")),
                seed: trial_seed,
            },
            Err(e) => Trial {
                index,
                config,
                objective: None,
                status: TrialStatus::Failed(e.to_string()),
                seed: trial_seed,
            },
        };
        history.push(trial);
    }
    match best {
        Some((_, at)) => Ok(SearchResult {
            best: history[at].clone(),
            history,
        }),
        None => Err(Error::Degenerate(
            "every trial failed; no best configuration".into(),
        )),
    }
}

/// Merges two configurations; keys in `b` win.
fn merge(a: &TrialConfig, b: &TrialConfig) -> TrialConfig {
    let mut out = a.clone();
    for (k, v) in b {
        out.insert(k.clone(), v.clone());
    }
    out
}

/// Two-phase search: architecture first with training hyperparameters held
/// at their midpoints, then training hyperparameters with the winning
/// architecture fixed. Histories carry the full merged configurations, so
/// every phase-2 trial visibly shares the phase-1 architecture.
pub fn staged_search(
    arch_space: &SearchSpace,
    train_space: &SearchSpace,
    budgets: (usize, usize),
    warm: (usize, usize),
    objective: Objective,
    seed: u64,
) -> Result<(SearchResult, SearchResult)> {
    let train_mid = train_space.midpoint();
    let mut phase1_obj = |cfg: &TrialConfig, s: u64| objective(&merge(cfg, &train_mid), s);
    let mut phase1 = run_search(
        arch_space,
        budgets.0,
        warm.0,
        &mut phase1_obj,
        derive_seed(seed, "hpo/arch"),
    )?;
    let arch_names: Vec<&str> = arch_space.dims.iter().map(|d| d.name.as_str()).collect();
    let arch_best: TrialConfig = phase1
        .best
        .config
        .iter()
        .filter(|(k, _)| arch_names.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    // Report phase-1 trials with the midpoint training values they ran with.
    for t in &mut phase1.history {
        t.config = merge(&t.config, &train_mid);
    }
    phase1.best.config = merge(&phase1.best.config, &train_mid);

    let mut phase2_obj = |cfg: &TrialConfig, s: u64| objective(&merge(&arch_best, cfg), s);
    let mut phase2 = run_search(
        train_space,
        budgets.1,
        warm.1,
        &mut phase2_obj,
        derive_seed(seed, "hpo/train"),
    )?;
    for t in &mut phase2.history {
        t.config = merge(&arch_best, &t.config);
    }
    phase2.best.config = merge(&arch_best, &phase2.best.config);
    Ok((phase1, phase2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spaces_sample_inside_their_bounds() {
        let mut rng = stream(3);
        for space in [
            SearchSpace::classifier_space(),
            SearchSpace::architecture_space(),
        ] {
            for _ in 0..200 {
                let cfg = space.sample(&mut rng);
                assert!(space.contains(&cfg));
            }
            let mid = space.midpoint();
            assert!(space.contains(&mid));
            for _ in 0..200 {
                let cfg = space.perturb(&space.midpoint(), 0.5, &mut rng);
                assert!(space.contains(&cfg));
            }
        }
    }

    #[test]
    fn space_validation_rejects_bad_dimensions() {
        assert!(SearchSpace::new(vec![]).is_err());
        assert!(SearchSpace::new(vec![Dim::int("a", 3, 1)]).is_err());
        assert!(SearchSpace::new(vec![Dim::log_real("a", 0.0, 1.0)]).is_err());
        assert!(SearchSpace::new(vec![Dim::categorical("a", &[])]).is_err());
        assert!(SearchSpace::new(vec![Dim::int("a", 0, 1), Dim::real("a", 0.0, 1.0)]).is_err());
    }

    #[test]
    fn quadratic_objective_is_located_to_five_percent() {
        let space = SearchSpace::new(vec![Dim::real("x", 0.0, 5.0)]).unwrap();
        let mut obj = |cfg: &TrialConfig, _seed: u64| {
            let x = cfg["x"].as_real()?;
            Ok((x - 1.7) * (x - 1.7))
        };
        let result = run_search(&space, 80, 20, &mut obj, 42).unwrap();
        let x = result.best.config["x"].as_real().unwrap();
        assert!((x - 1.7).abs() <= 0.05 * 1.7, "best x = {x}");
        assert_eq!(result.history.len(), 80);

        // The running minimum never increases.
        let mut running = f64::INFINITY;
        for t in &result.history {
            if let Some(v) = t.objective {
                running = running.min(v);
            }
            assert!(result.best.objective.unwrap() <= running + 1e-15);
        }
    }

    #[test]
    fn search_is_seed_deterministic() {
        let space = SearchSpace::classifier_space();
        let mut obj = |cfg: &TrialConfig, _s: u64| {
            let lr = cfg["learning_rate"].as_real()?;
            let l2 = cfg["l2_penalty"].as_real()?;
            Ok((lr * 1e4 - 0.5).powi(2) + l2.ln().abs())
        };
        let a = run_search(&space, 30, 10, &mut obj, 7).unwrap();
        let b = run_search(&space, 30, 10, &mut obj, 7).unwrap();
        assert_eq!(a, b);
        let c = run_search(&space, 30, 10, &mut obj, 8).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn budget_equal_to_warm_start_is_pure_random_search() {
        let space = SearchSpace::new(vec![Dim::real("x", -1.0, 1.0)]).unwrap();
        let mut obj = |cfg: &TrialConfig, _s: u64| cfg["x"].as_real().map(|x| x * x);
        let result = run_search(&space, 15, 15, &mut obj, 9).unwrap();
        assert_eq!(result.history.len(), 15);
        assert!(result
            .history
            .iter()
            .all(|t| matches!(t.status, TrialStatus::Completed)));
    }

    #[test]
    fn failures_are_recorded_and_skipped() {
        let space = SearchSpace::new(vec![Dim::real("x", 0.0, 4.0)]).unwrap();
        let mut obj = |cfg: &TrialConfig, _s: u64| {
            let x = cfg["x"].as_real()?;
            if x < 2.0 {
                return Err(Error::InvalidArgument("left half unstable".into()));
            }
            Ok((x - 3.0) * (x - 3.0))
        };
        let result = run_search(&space, 60, 20, &mut obj, 11).unwrap();
        assert!(result.history.iter().any(|t| matches!(t.status, TrialStatus::Failed(_))));
        let x = result.best.config["x"].as_real().unwrap();
        assert!(x >= 2.0);
        assert!((x - 3.0).abs() < 0.3);

        let mut always_fail = |_: &TrialConfig, _s: u64| -> Result<f64> {
            Err(Error::InvalidArgument("no".into()))
        };
        assert!(run_search(&space, 5, 2, &mut always_fail, 12).is_err());
    }

    #[test]
    fn staged_search_fixes_the_architecture_for_phase_two() {
        let arch = SearchSpace::new(vec![Dim::real("w", 0.0, 4.0)]).unwrap();
        let train = SearchSpace::new(vec![Dim::real("lr", 0.0, 4.0)]).unwrap();
        let mut obj = |cfg: &TrialConfig, _s: u64| {
            let w = cfg["w"].as_real()?;
            let lr = cfg["lr"].as_real()?;
            Ok((w - 1.0) * (w - 1.0) + (lr - 3.0) * (lr - 3.0))
        };
        let (p1, p2) = staged_search(&arch, &train, (40, 40), (10, 10), &mut obj, 13).unwrap();
        let w = p2.best.config["w"].as_real().unwrap();
        let lr = p2.best.config["lr"].as_real().unwrap();
        // Separable objective: the staged optimum matches the joint one.
        assert!((w - 1.0).abs() < 0.2, "w = {w}");
        assert!((lr - 3.0).abs() < 0.2, "lr = {lr}");
        for t in &p2.history {
            assert_eq!(t.config["w"], p2.best.config["w"]);
        }
        // Phase 1 ran with the training midpoint merged in.
        for t in &p1.history {
            assert_eq!(t.config["lr"].as_real().unwrap(), 2.0);
        }
    }

    #[test]
    fn single_point_spaces_return_the_only_configuration() {
        let arch = SearchSpace::new(vec![
            Dim::int("layers", 3, 3),
            Dim::categorical("act", &["relu"]),
        ])
        .unwrap();
        let train = SearchSpace::new(vec![Dim::real("lr", 0.1, 0.1)]).unwrap();
        let mut obj = |_: &TrialConfig, _s: u64| Ok(1.0);
        let (p1, p2) = staged_search(&arch, &train, (3, 3), (1, 1), &mut obj, 17).unwrap();
        assert_eq!(p1.best.config["layers"], ParamValue::Int(3));
        assert_eq!(p1.best.config["act"], ParamValue::Cat("relu".into()));
        assert_eq!(p2.best.config["lr"], ParamValue::Real(0.1));
    }
}
