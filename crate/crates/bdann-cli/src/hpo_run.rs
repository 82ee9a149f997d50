//! Hyperparameter search command: tunes the alignment stage (domain
//! classifier shape, its optimizer, and the reversal-strength schedule) on
//! the synthetic benchmark, scoring each trial by the staged pipeline's
//! mean relative error on the target validation split.

use bdann::hpo::{run_search, ParamValue, SearchSpace, Trial, TrialConfig, TrialStatus};
use bdann::pipeline::{evaluate_model, train_strategy, PipelineConfig, Strategy};
use bdann::rng::derive_seed;

use crate::artifacts::RunDir;
use crate::config::{CResult, Failure, PipelineOverrides, Resolved};
use crate::dataset::{build, BuiltDataset};

/// Applies one alignment-search trial onto a pipeline configuration.
pub fn apply_alignment_trial(cfg: &mut PipelineConfig, t: &TrialConfig) -> bdann::Result<()> {
    let layers = t["classifier_layers"].as_int()? as usize;
    let neurons = t["classifier_neurons"].as_int()? as usize;
    cfg.arch.classifier_hidden = vec![neurons; layers];
    cfg.arch.classifier_dropout = t["classifier_dropout"].as_real()?;
    cfg.stage2.optimizer.learning_rate = t["learning_rate"].as_real()?;
    cfg.stage2.optimizer.l2_penalty = t["l2_penalty"].as_real()?;
    cfg.lambda.lambda_max = t["lambda_max"].as_real()?;
    cfg.lambda.lambda_min_frac = t["lambda_min_frac"].as_real()?;
    cfg.lambda.ramp_k = t["ramp_k"].as_real()?;
    cfg.lambda.warmup_epochs = t["warmup_epochs"].as_int()? as usize;
    cfg.validate()
}

fn render_value(v: &ParamValue) -> String {
    match v {
        ParamValue::Int(i) => format!("{i}"),
        ParamValue::Real(r) => format!("{r}"),
        ParamValue::Cat(s) => s.clone(),
    }
}

fn render_trials_csv(space: &SearchSpace, history: &[Trial]) -> String {
    let mut out = String::from("index,seed,status,objective");
    for dim in &space.dims {
        out.push_str(&format!(",{}", dim.name));
    }
    out.push('\n');
    for t in history {
        let status = match &t.status {
            TrialStatus::Completed => "completed".to_string(),
            TrialStatus::Failed(why) => format!("failed: {}", why.replace(',', ";")),
        };
        let objective = t.objective.map(|v| format!("{v}")).unwrap_or_default();
        out.push_str(&format!("{},{},{status},{objective}", t.index, t.seed));
        for dim in &space.dims {
            out.push(',');
            if let Some(v) = t.config.get(&dim.name) {
                out.push_str(&render_value(v));
            }
        }
        out.push('\n');
    }
    out
}

/// The winning trial as a pipeline-overrides snippet, ready to paste into
/// an experiment config.
fn best_overrides(t: &TrialConfig) -> bdann::Result<PipelineOverrides> {
    let mut o = PipelineOverrides::default();
    let layers = t["classifier_layers"].as_int()? as usize;
    let neurons = t["classifier_neurons"].as_int()? as usize;
    o.arch.classifier_hidden = Some(vec![neurons; layers]);
    o.arch.classifier_dropout = Some(t["classifier_dropout"].as_real()?);
    o.stage2.learning_rate = Some(t["learning_rate"].as_real()?);
    o.stage2.l2_penalty = Some(t["l2_penalty"].as_real()?);
    o.lambda.lambda_max = Some(t["lambda_max"].as_real()?);
    o.lambda.lambda_min_frac = Some(t["lambda_min_frac"].as_real()?);
    o.lambda.ramp_k = Some(t["ramp_k"].as_real()?);
    o.lambda.warmup_epochs = Some(t["warmup_epochs"].as_int()? as usize);
    Ok(o)
}

pub fn cmd_hpo(resolved: &Resolved, config_path: &std::path::Path) -> CResult<()> {
    let bench = match build(&resolved.config.dataset, config_path)? {
        BuiltDataset::Synthetic(b) => b,
        BuiltDataset::Csv(_) => {
            return Err(Failure::Config(
                "hyperparameter search runs on the synthetic dataset".into(),
            ))
        }
    };
    let base_cfg = resolved.config.pipeline.build()?;
    let hpo = resolved.config.hpo.clone().unwrap_or_default();
    if hpo.warm == 0 || hpo.budget < hpo.warm {
        return Err(Failure::Config(format!(
            "hpo.budget ({}) must cover a positive hpo.warm ({})",
            hpo.budget, hpo.warm
        )));
    }
    let run = RunDir::create(&resolved.out_dir)?;
    let hash = run.write_config(&resolved.config)?;

    let space = SearchSpace::classifier_space();
    let mut objective = |trial: &TrialConfig, seed: u64| -> bdann::Result<f64> {
        let mut cfg = base_cfg.clone();
        apply_alignment_trial(&mut cfg, trial)?;
        let model = train_strategy(&bench, &cfg, Strategy::StagedBdann, None, seed)?;
        let eval = evaluate_model(
            &model,
            &bench.target_val,
            cfg.mc_samples,
            derive_seed(seed, "eval"),
        )?;
        Ok(eval.report.mu_error_pct)
    };
    let result = run_search(
        &space,
        hpo.budget,
        hpo.warm,
        &mut objective,
        resolved.config.seed,
    )
    .map_err(Failure::runtime)?;

    run.write_bytes(
        "trials.csv",
        render_trials_csv(&space, &result.history).as_bytes(),
    )?;
    run.write_json("best.json", &result.best)?;
    let overrides = best_overrides(&result.best.config).map_err(Failure::runtime)?;
    let snippet = toml::to_string_pretty(&SnippetDoc {
        pipeline: overrides,
    })
    .map_err(Failure::runtime)?;
    run.write_bytes("best_config.toml", snippet.as_bytes())?;
    run.write_manifest(
        "hpo",
        &hash,
        resolved.config.seed,
        &["trials.csv", "best.json", "best_config.toml"],
    )?;
    println!(
        "best trial {} of {}: objective {:.4} ({})",
        result.best.index,
        result.history.len(),
        result.best.objective.unwrap_or(f64::NAN),
        run.path.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct SnippetDoc {
    pipeline: PipelineOverrides,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn trial() -> TrialConfig {
        let mut t = BTreeMap::new();
        t.insert("classifier_layers".into(), ParamValue::Int(2));
        t.insert("classifier_neurons".into(), ParamValue::Int(64));
        t.insert("classifier_dropout".into(), ParamValue::Real(0.25));
        t.insert("learning_rate".into(), ParamValue::Real(5e-5));
        t.insert("l2_penalty".into(), ParamValue::Real(1e-6));
        t.insert("lambda_max".into(), ParamValue::Real(1.0));
        t.insert("lambda_min_frac".into(), ParamValue::Real(0.05));
        t.insert("ramp_k".into(), ParamValue::Real(10.0));
        t.insert("warmup_epochs".into(), ParamValue::Int(5));
        t
    }

    #[test]
    fn trials_map_onto_the_alignment_stage() {
        let mut cfg = PipelineConfig::default();
        apply_alignment_trial(&mut cfg, &trial()).unwrap();
        assert_eq!(cfg.arch.classifier_hidden, vec![64, 64]);
        assert_eq!(cfg.stage2.optimizer.learning_rate, 5e-5);
        assert_eq!(cfg.lambda.warmup_epochs, 5);
        // Everything outside the alignment stage is untouched.
        let d = PipelineConfig::default();
        assert_eq!(cfg.stage1, d.stage1);
        assert_eq!(cfg.stage3, d.stage3);
        assert_eq!(cfg.arch.extractor_hidden, d.arch.extractor_hidden);
    }

    #[test]
    fn best_trial_renders_as_a_config_snippet() {
        let o = best_overrides(&trial()).unwrap();
        let text = toml::to_string_pretty(&SnippetDoc { pipeline: o }).unwrap();
        // The snippet must parse back as experiment-config overrides.
        let parsed: SnippetParse = toml::from_str(&text).unwrap();
        assert_eq!(parsed.pipeline.lambda.ramp_k, Some(10.0));
        assert_eq!(parsed.pipeline.lambda.lambda_max, Some(1.0));
        assert_eq!(parsed.pipeline.arch.classifier_hidden, Some(vec![64, 64]));
        assert_eq!(parsed.pipeline.stage2.learning_rate, Some(5e-5));
    }

    #[derive(serde::Deserialize)]
    struct SnippetParse {
        pipeline: PipelineOverrides,
    }
}
