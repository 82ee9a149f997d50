//! Plain-text model files: a shape header per layer followed by row-major
//! parameter arrays. Floats are written in shortest round-trip form, so a
//! load reproduces the saved model bit for bit. Training history is run
//! metadata, not model state; it is not stored here and loads back empty.

use std::fmt::Write as _;
use std::path::Path;

use crate::bayes::{VarLayer, VariationalState};
use crate::data::{ZScore, ZScore1d};
use crate::error::{Error, Result};
use crate::hybrid::HybridModel;
use crate::net::{Activation, Mat, NetworkSpec, NetworkState};
use crate::pipeline::{ModelParams, Strategy, TrainedModel, TrainingHistory};

const MODEL_MAGIC: &str = "bdann-model 1";
const HYBRID_MAGIC: &str = "bdann-hybrid 1";

fn push_floats(out: &mut String, label: &str, vals: &[f64]) {
    let _ = write!(out, "{label} {}", vals.len());
    for v in vals {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

fn layer_line(out: &mut String, tag: &str, rows: usize, cols: usize, act: Activation, drop: f64) {
    let _ = writeln!(out, "{tag} {rows} {cols} {act} {drop}");
}

fn render_deterministic(out: &mut String, tag: &str, net: &NetworkState) {
    let spec = net.spec();
    for l in 0..spec.n_layers() {
        let w = &net.weights()[l];
        layer_line(out, tag, w.rows(), w.cols(), spec.activations()[l], spec.dropout()[l]);
        push_floats(out, "w", w.as_slice());
        push_floats(out, "b", &net.biases()[l]);
    }
}

fn render_model(model: &TrainedModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_MAGIC}");
    let _ = writeln!(out, "strategy {}", model.strategy);
    let _ = writeln!(out, "seed {}", model.seed);
    match &model.input_scaler {
        Some(z) => {
            let _ = writeln!(out, "scaler {}", z.means.len());
            push_floats(&mut out, "means", &z.means);
            push_floats(&mut out, "stds", &z.stds);
        }
        None => {
            let _ = writeln!(out, "scaler none");
        }
    }
    match &model.params {
        ModelParams::Deterministic { extractor, head } => {
            let _ = writeln!(
                out,
                "deterministic {} {}",
                extractor.spec().n_layers(),
                head.spec().n_layers()
            );
            render_deterministic(&mut out, "elayer", extractor);
            render_deterministic(&mut out, "hlayer", head);
        }
        ModelParams::Variational {
            net,
            extractor_layers,
        } => {
            let _ = writeln!(
                out,
                "variational {} {}",
                net.spec().n_layers(),
                extractor_layers
            );
            let spec = net.spec();
            for (l, layer) in net.layers().iter().enumerate() {
                layer_line(
                    &mut out,
                    "vlayer",
                    layer.w_mean.rows(),
                    layer.w_mean.cols(),
                    spec.activations()[l],
                    spec.dropout()[l],
                );
                push_floats(&mut out, "w_mean", layer.w_mean.as_slice());
                push_floats(&mut out, "w_rho", layer.w_rho.as_slice());
                push_floats(&mut out, "b_mean", &layer.b_mean);
                push_floats(&mut out, "b_rho", &layer.b_rho);
                push_floats(&mut out, "prior_w_mean", layer.prior_w_mean.as_slice());
                push_floats(&mut out, "prior_b_mean", &layer.prior_b_mean);
            }
        }
    }
    out
}

/// Writes a trained model to a text file.
pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    model.validate()?;
    std::fs::write(path, render_model(model))?;
    Ok(())
}

/// Line-oriented token reader with positional error messages.
struct Lines<'a> {
    lines: std::str::Lines<'a>,
    at: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            lines: text.lines(),
            at: 0,
        }
    }

    fn next(&mut self) -> Result<Vec<&'a str>> {
        loop {
            self.at += 1;
            match self.lines.next() {
                None => return Err(Error::InvalidArgument("model file ended early".into())),
                Some(l) if l.trim().is_empty() => continue,
                Some(l) => return Ok(l.split_whitespace().collect()),
            }
        }
    }

    fn context(&self, what: &str) -> Error {
        Error::InvalidArgument(format!("model file line {}: {what}", self.at))
    }
}

fn parse_f64(lines: &Lines, tok: &str) -> Result<f64> {
    tok.parse()
        .map_err(|_| lines.context(&format!("bad float {tok:?}")))
}

fn parse_usize(lines: &Lines, tok: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| lines.context(&format!("bad count {tok:?}")))
}

/// Parses a `label n v1 .. vn` line.
fn expect_floats(lines: &mut Lines, label: &str) -> Result<Vec<f64>> {
    let toks = lines.next()?;
    if toks.first() != Some(&label) {
        return Err(lines.context(&format!("expected {label:?}")));
    }
    let n = parse_usize(lines, toks.get(1).copied().unwrap_or(""))?;
    if toks.len() != n + 2 {
        return Err(lines.context(&format!("{label}: expected {n} values, found {}", toks.len().saturating_sub(2))));
    }
    toks[2..].iter().map(|t| parse_f64(lines, t)).collect()
}

struct LayerHeader {
    rows: usize,
    cols: usize,
    act: Activation,
    drop: f64,
}

fn expect_layer(lines: &mut Lines, tag: &str) -> Result<LayerHeader> {
    let toks = lines.next()?;
    if toks.len() != 5 || toks[0] != tag {
        return Err(lines.context(&format!("expected a {tag:?} header")));
    }
    Ok(LayerHeader {
        rows: parse_usize(lines, toks[1])?,
        cols: parse_usize(lines, toks[2])?,
        act: Activation::parse(toks[3])?,
        drop: parse_f64(lines, toks[4])?,
    })
}

fn mat_from(lines: &Lines, rows: usize, cols: usize, vals: Vec<f64>) -> Result<Mat> {
    if vals.len() != rows * cols {
        return Err(lines.context(&format!(
            "expected {} values for a {rows}x{cols} matrix, found {}",
            rows * cols,
            vals.len()
        )));
    }
    let mut chunks = vals.chunks(cols);
    let row_vecs: Vec<Vec<f64>> = (0..rows)
        .map(|_| chunks.next().map(|c| c.to_vec()).unwrap_or_default())
        .collect();
    Mat::from_rows(row_vecs)
}

fn parse_deterministic(lines: &mut Lines, tag: &str, n_layers: usize) -> Result<NetworkState> {
    if n_layers == 0 {
        return Err(lines.context("a network needs at least one layer"));
    }
    let mut sizes: Vec<usize> = Vec::new();
    let mut acts = Vec::new();
    let mut drops = Vec::new();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..n_layers {
        let h = expect_layer(lines, tag)?;
        if l == 0 {
            sizes.push(h.cols);
        } else if sizes[l] != h.cols {
            return Err(lines.context("layer input does not match previous output"));
        }
        sizes.push(h.rows);
        acts.push(h.act);
        drops.push(h.drop);
        let w = expect_floats(lines, "w")?;
        weights.push(mat_from(lines, h.rows, h.cols, w)?);
        let b = expect_floats(lines, "b")?;
        if b.len() != h.rows {
            return Err(lines.context("bias length does not match layer rows"));
        }
        biases.push(b);
    }
    let spec = NetworkSpec::new(sizes, acts, drops)?;
    NetworkState::from_parts(spec, weights, biases)
}

fn parse_variational(
    lines: &mut Lines,
    n_layers: usize,
) -> Result<VariationalState> {
    if n_layers == 0 {
        return Err(lines.context("a network needs at least one layer"));
    }
    let mut sizes: Vec<usize> = Vec::new();
    let mut acts = Vec::new();
    let mut drops = Vec::new();
    let mut layers = Vec::new();
    for l in 0..n_layers {
        let h = expect_layer(lines, "vlayer")?;
        if l == 0 {
            sizes.push(h.cols);
        } else if sizes[l] != h.cols {
            return Err(lines.context("layer input does not match previous output"));
        }
        sizes.push(h.rows);
        acts.push(h.act);
        drops.push(h.drop);
        let w_mean_vals = expect_floats(lines, "w_mean")?;
        let w_mean = mat_from(lines, h.rows, h.cols, w_mean_vals)?;
        let w_rho_vals = expect_floats(lines, "w_rho")?;
        let w_rho = mat_from(lines, h.rows, h.cols, w_rho_vals)?;
        let b_mean = expect_floats(lines, "b_mean")?;
        let b_rho = expect_floats(lines, "b_rho")?;
        let prior_w_vals = expect_floats(lines, "prior_w_mean")?;
        let prior_w_mean = mat_from(lines, h.rows, h.cols, prior_w_vals)?;
        let prior_b_mean = expect_floats(lines, "prior_b_mean")?;
        if b_mean.len() != h.rows || b_rho.len() != h.rows || prior_b_mean.len() != h.rows {
            return Err(lines.context("bias length does not match layer rows"));
        }
        layers.push(VarLayer {
            w_mean,
            w_rho,
            b_mean,
            b_rho,
            prior_w_mean,
            prior_b_mean,
        });
    }
    let spec = NetworkSpec::new(sizes, acts, drops)?;
    VariationalState::from_parts(spec, layers)
}

fn parse_model(lines: &mut Lines) -> Result<TrainedModel> {
    let magic = lines.next()?.join(" ");
    if magic != MODEL_MAGIC {
        return Err(lines.context(&format!("unrecognized header {magic:?}")));
    }
    let toks = lines.next()?;
    if toks.len() != 2 || toks[0] != "strategy" {
        return Err(lines.context("expected a strategy line"));
    }
    let strategy = Strategy::parse(toks[1])?;
    let toks = lines.next()?;
    if toks.len() != 2 || toks[0] != "seed" {
        return Err(lines.context("expected a seed line"));
    }
    let seed: u64 = toks[1]
        .parse()
        .map_err(|_| lines.context("bad seed value"))?;
    let toks = lines.next()?;
    if toks.len() != 2 || toks[0] != "scaler" {
        return Err(lines.context("expected a scaler line"));
    }
    let input_scaler = if toks[1] == "none" {
        None
    } else {
        let d = parse_usize(lines, toks[1])?;
        let means = expect_floats(lines, "means")?;
        let stds = expect_floats(lines, "stds")?;
        if means.len() != d || stds.len() != d {
            return Err(lines.context("scaler length mismatch"));
        }
        Some(ZScore { means, stds })
    };
    let toks = lines.next()?;
    let params = match toks.first().copied() {
        Some("deterministic") if toks.len() == 3 => {
            let n_ext = parse_usize(lines, toks[1])?;
            let n_head = parse_usize(lines, toks[2])?;
            let extractor = parse_deterministic(lines, "elayer", n_ext)?;
            let head = parse_deterministic(lines, "hlayer", n_head)?;
            ModelParams::Deterministic { extractor, head }
        }
        Some("variational") if toks.len() == 3 => {
            let n_layers = parse_usize(lines, toks[1])?;
            let extractor_layers = parse_usize(lines, toks[2])?;
            let net = parse_variational(lines, n_layers)?;
            if extractor_layers >= n_layers {
                return Err(lines.context("extractor layer count exceeds the network"));
            }
            ModelParams::Variational {
                net,
                extractor_layers,
            }
        }
        _ => return Err(lines.context("expected a deterministic or variational block")),
    };
    let model = TrainedModel {
        strategy,
        params,
        history: TrainingHistory::default(),
        seed,
        input_scaler,
    };
    model.validate()?;
    Ok(model)
}

/// Reads a model saved by `save_model`.
pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&mut Lines::new(&text))
}

/// Writes a hybrid corrector bundle: base tag, residual scaler, then the
/// embedded corrector in the ordinary model format.
pub fn save_hybrid(path: &Path, model: &HybridModel) -> Result<()> {
    model.corrector.validate()?;
    let mut out = String::new();
    let _ = writeln!(out, "{HYBRID_MAGIC}");
    let _ = writeln!(out, "base_tag {}", model.base_tag);
    let _ = writeln!(
        out,
        "residual_scaler {} {}",
        model.residual_scaler.mean, model.residual_scaler.std
    );
    out.push_str(&render_model(&model.corrector));
    std::fs::write(path, out)?;
    Ok(())
}

/// A model file of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Plain(TrainedModel),
    Hybrid(HybridModel),
}

/// Loads a model file, dispatching on its header line.
pub fn load_any(path: &Path) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    match first.trim() {
        MODEL_MAGIC => parse_model(&mut Lines::new(&text)).map(LoadedModel::Plain),
        HYBRID_MAGIC => load_hybrid(path).map(LoadedModel::Hybrid),
        other => Err(Error::InvalidArgument(format!(
            "unrecognized model header {other:?} in {}",
            path.display()
        ))),
    }
}

pub fn load_hybrid(path: &Path) -> Result<HybridModel> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = Lines::new(&text);
    let magic = lines.next()?.join(" ");
    if magic != HYBRID_MAGIC {
        return Err(lines.context(&format!("unrecognized header {magic:?}")));
    }
    let toks = lines.next()?;
    if toks.len() < 2 || toks[0] != "base_tag" {
        return Err(lines.context("expected a base_tag line"));
    }
    let base_tag = toks[1..].join(" ");
    let toks = lines.next()?;
    if toks.len() != 3 || toks[0] != "residual_scaler" {
        return Err(lines.context("expected a residual_scaler line"));
    }
    let residual_scaler = ZScore1d {
        mean: parse_f64(&lines, toks[1])?,
        std: parse_f64(&lines, toks[2])?,
    };
    let corrector = parse_model(&mut lines)?;
    Ok(HybridModel {
        base_tag,
        corrector,
        residual_scaler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ArchConfig;
    use crate::rng::stream;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("bdann_model_io");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn arch() -> ArchConfig {
        ArchConfig {
            extractor_hidden: vec![7],
            latent_dim: 5,
            head_hidden: vec![4],
            classifier_hidden: vec![4],
            extractor_dropout: 0.25,
            classifier_dropout: 0.0,
        }
    }

    fn deterministic_model() -> TrainedModel {
        let a = arch();
        let extractor = NetworkState::init(a.extractor_spec(3).unwrap(), 100);
        let head = NetworkState::init(a.head_spec().unwrap(), 101);
        TrainedModel {
            strategy: Strategy::DirectTransfer,
            params: ModelParams::Deterministic { extractor, head },
            history: TrainingHistory::default(),
            seed: 9001,
            input_scaler: None,
        }
    }

    fn variational_model() -> TrainedModel {
        let a = arch();
        let ext = NetworkState::init(a.extractor_spec(3).unwrap(), 102);
        let head = NetworkState::init(a.head_spec().unwrap(), 103);
        let composed = crate::pipeline::compose_extractor_head(&ext, &head).unwrap();
        let mut net = VariationalState::from_deterministic(&composed, 0.1, 104).unwrap();
        // Scatter the posteriors so the round trip covers non-initial state.
        let mut rng = stream(105);
        use rand::Rng;
        for layer in net.layers_mut() {
            for v in layer.w_rho.as_mut_slice() {
                *v += rng.random_range(-0.3..0.3);
            }
            for v in &mut layer.b_mean {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        TrainedModel {
            strategy: Strategy::StagedBdann,
            params: ModelParams::Variational {
                net,
                extractor_layers: 2,
            },
            history: TrainingHistory::default(),
            seed: 7,
            input_scaler: Some(ZScore {
                means: vec![0.5, -1.25, 3.0],
                stds: vec![1.5, 0.25, 2.0],
            }),
        }
    }

    #[test]
    fn deterministic_models_round_trip_bitwise() {
        let model = deterministic_model();
        let path = tmp("det.model");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn variational_models_round_trip_bitwise() {
        let model = variational_model();
        let path = tmp("var.model");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn hybrid_bundles_round_trip_bitwise() {
        let hybrid = HybridModel {
            base_tag: "lookup table 1995".into(),
            corrector: variational_model(),
            residual_scaler: ZScore1d {
                mean: 12.5,
                std: 3.25,
            },
        };
        let path = tmp("bundle.hybrid");
        save_hybrid(&path, &hybrid).unwrap();
        let loaded = load_hybrid(&path).unwrap();
        assert_eq!(loaded, hybrid);
    }

    #[test]
    fn corrupted_files_fail_with_line_context() {
        let model = deterministic_model();
        let path = tmp("corrupt.model");
        save_model(&path, &model).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen("elayer", "flayer", 1);
        std::fs::write(&path, text).unwrap();
        match load_model(&path) {
            Err(Error::InvalidArgument(msg)) => assert!(msg.contains("line")),
            other => panic!("expected a parse error, got {other:?}"),
        }

        // Declared strategy and parameter kind must agree.
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen("flayer", "elayer", 1);
        text = text.replacen("strategy direct_transfer", "strategy staged_bdann", 1);
        std::fs::write(&path, text).unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn load_any_dispatches_on_the_header() {
        let model = deterministic_model();
        let path = tmp("any_det.model");
        save_model(&path, &model).unwrap();
        assert_eq!(load_any(&path).unwrap(), LoadedModel::Plain(model));

        let hybrid = HybridModel {
            base_tag: "zero".into(),
            corrector: variational_model(),
            residual_scaler: ZScore1d { mean: 0.0, std: 1.0 },
        };
        let path = tmp("any_bundle.model");
        save_hybrid(&path, &hybrid).unwrap();
        assert_eq!(load_any(&path).unwrap(), LoadedModel::Hybrid(hybrid));

        let path = tmp("any_bogus.model");
        std::fs::write(&path, "not a model\n").unwrap();
        assert!(load_any(&path).is_err());
    }

    #[test]
    fn scaler_presence_round_trips() {
        let mut model = deterministic_model();
        model.strategy = Strategy::FromScratch;
        model.input_scaler = Some(ZScore {
            means: vec![1.0, 2.0, 3.0],
            stds: vec![0.5, 0.5, 4.0],
        });
        let path = tmp("scaler.model");
        save_model(&path, &model).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
    }
}
