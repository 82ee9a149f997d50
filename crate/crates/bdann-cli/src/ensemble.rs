//! Seed-ensemble command: trains one strategy, or all three, across
//! consecutive seeds and writes the mean / spread / confidence summary in
//! both machine-readable JSON and tidy CSV.

use bdann::metrics::MetricsReport;
use bdann::pipeline::{run_benchmark_ensembles, run_seed_ensemble, EnsembleReport};

use crate::artifacts::RunDir;
use crate::config::{CResult, Failure, Resolved, StrategyChoice};
use crate::dataset::{build, BuiltDataset};

pub const METRIC_NAMES: [&str; 6] = [
    "mu_error_pct",
    "max_error_pct",
    "std_error_pct",
    "rrmse_pct",
    "p_over_10_pct",
    "r2",
];

pub fn metric_values(r: &MetricsReport) -> [f64; 6] {
    [
        r.mu_error_pct,
        r.max_error_pct,
        r.std_error_pct,
        r.rrmse_pct,
        r.p_over_10_pct,
        r.r2,
    ]
}

/// Tidy summary: one row per strategy and metric.
pub fn render_summary_csv(reports: &[&EnsembleReport]) -> String {
    let mut out = String::from("strategy,metric,mean,std,ci95_half\n");
    for rep in reports {
        let means = metric_values(&rep.mean);
        let stds = metric_values(&rep.std);
        let cis = metric_values(&rep.ci95_half);
        for (k, name) in METRIC_NAMES.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                rep.strategy, name, means[k], stds[k], cis[k]
            ));
        }
    }
    out
}

/// One row per surviving run.
pub fn render_per_run_csv(reports: &[&EnsembleReport]) -> String {
    let mut out = String::from("strategy,seed");
    for name in METRIC_NAMES {
        out.push_str(&format!(",{name}"));
    }
    out.push('\n');
    for rep in reports {
        for (seed, r) in &rep.per_run {
            out.push_str(&format!("{},{seed}", rep.strategy));
            for v in metric_values(r) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

pub fn render_failures_csv(reports: &[&EnsembleReport]) -> Option<String> {
    if reports.iter().all(|r| r.failures.is_empty()) {
        return None;
    }
    let mut out = String::from("strategy,seed,reason\n");
    for rep in reports {
        for (seed, why) in &rep.failures {
            out.push_str(&format!("{},{seed},{}\n", rep.strategy, why.replace(',', ";")));
        }
    }
    Some(out)
}

pub fn write_ensemble_outputs(run: &RunDir, reports: &[&EnsembleReport]) -> CResult<Vec<&'static str>> {
    let mut outputs = vec!["summary.json", "summary.csv", "per_run.csv"];
    run.write_json("summary.json", &reports)?;
    run.write_bytes("summary.csv", render_summary_csv(reports).as_bytes())?;
    run.write_bytes("per_run.csv", render_per_run_csv(reports).as_bytes())?;
    if let Some(text) = render_failures_csv(reports) {
        run.write_bytes("failures.csv", text.as_bytes())?;
        outputs.push("failures.csv");
    }
    Ok(outputs)
}

fn print_summary(rep: &EnsembleReport) {
    println!(
        "{}: n={} mu_error {:.3} +/- {:.3}% r2 {:.4} +/- {:.4}",
        rep.strategy,
        rep.n_runs,
        rep.mean.mu_error_pct,
        rep.ci95_half.mu_error_pct,
        rep.mean.r2,
        rep.ci95_half.r2
    );
}

pub fn cmd_ensemble(resolved: &Resolved, config_path: &std::path::Path) -> CResult<()> {
    let bench = match build(&resolved.config.dataset, config_path)? {
        BuiltDataset::Synthetic(b) => b,
        BuiltDataset::Csv(_) => {
            return Err(Failure::Config(
                "ensemble runs on the synthetic dataset; use the hybrid command for tabular data"
                    .into(),
            ))
        }
    };
    let cfg = resolved.config.pipeline.build()?;
    let n_runs = resolved.config.ensemble.n_runs.unwrap_or(20);
    let base_seed = resolved
        .config
        .ensemble
        .base_seed
        .unwrap_or(resolved.config.seed);
    let choice = resolved
        .config
        .strategy_choice()?
        .unwrap_or(StrategyChoice::All);

    let run = RunDir::create(&resolved.out_dir)?;
    let hash = run.write_config(&resolved.config)?;

    let outputs = match choice {
        StrategyChoice::All => {
            let all = run_benchmark_ensembles(&bench, &cfg, n_runs, base_seed, resolved.workers)
                .map_err(Failure::runtime)?;
            let reports = [&all.scratch, &all.direct, &all.staged];
            for r in reports {
                print_summary(r);
            }
            write_ensemble_outputs(&run, &reports)?
        }
        StrategyChoice::One(strategy) => {
            let rep = run_seed_ensemble(&bench, &cfg, strategy, n_runs, base_seed, resolved.workers)
                .map_err(Failure::runtime)?;
            print_summary(&rep);
            write_ensemble_outputs(&run, &[&rep])?
        }
    };
    let mut manifest_outputs = outputs;
    manifest_outputs.insert(0, "config.toml");
    run.write_manifest("ensemble", &hash, base_seed, &manifest_outputs)?;
    println!("wrote {}", run.path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use bdann::pipeline::{aggregate_reports, Strategy};

    fn report(mu: f64) -> MetricsReport {
        MetricsReport {
            mu_error_pct: mu,
            max_error_pct: 2.0 * mu,
            std_error_pct: 0.5,
            rrmse_pct: mu,
            p_over_10_pct: 0.0,
            r2: 0.9,
        }
    }

    #[test]
    fn summary_csv_has_one_row_per_strategy_and_metric() {
        let rep = aggregate_reports(
            Strategy::FromScratch,
            &[(1, report(4.0)), (2, report(6.0))],
            vec![],
        )
        .unwrap();
        let text = render_summary_csv(&[&rep]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[1].starts_with("from_scratch,mu_error_pct,5,"));
    }

    #[test]
    fn per_run_csv_lists_each_seed() {
        let rep = aggregate_reports(
            Strategy::StagedBdann,
            &[(7, report(4.0)), (5, report(6.0))],
            vec![(9, "exploded".into())],
        )
        .unwrap();
        let text = render_per_run_csv(&[&rep]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        // Sorted by seed regardless of input order.
        assert!(lines[1].starts_with("staged_bdann,5,6"));
        assert!(lines[2].starts_with("staged_bdann,7,4"));
        let failures = render_failures_csv(&[&rep]).unwrap();
        assert!(failures.contains("staged_bdann,9,exploded"));
    }
}
