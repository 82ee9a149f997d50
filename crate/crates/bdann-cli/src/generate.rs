//! Dataset export: writes the six benchmark splits as CSV plus a manifest
//! describing the generator, the scalers and every file's hash. Reruns
//! with the same config are byte-identical.

use bdann::data::DataSplit;
use bdann::synthetic::make_benchmark_with;
use sha2::Digest;

use crate::artifacts::RunDir;
use crate::config::{CResult, Failure, Resolved};
use crate::dataset::benchmark_config;

fn render_split(split: &DataSplit) -> String {
    let k = split.n_features();
    let mut out = String::from("row_id");
    for j in 1..=k {
        out.push_str(&format!(",x{j}"));
    }
    out.push_str(",y\n");
    let xs = split.features();
    let ys = split.targets();
    let ids = split.row_ids();
    for i in 0..split.len() {
        out.push_str(&format!("{}", ids[i]));
        for v in &xs[i] {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", ys[i]));
    }
    out
}

#[derive(serde::Serialize)]
struct FileEntry {
    name: String,
    rows: usize,
    sha256: String,
}

#[derive(serde::Serialize)]
struct GenerateReport {
    benchmark: bdann::synthetic::BenchmarkConfig,
    x_scaler: bdann::data::ZScore,
    y_scaler: bdann::synthetic::QuantileSigmoid,
    source_rows: usize,
    target_rows: usize,
    files: Vec<FileEntry>,
}

pub fn cmd_generate(resolved: &Resolved) -> CResult<()> {
    let cfg = benchmark_config(&resolved.config.dataset)?;
    let bench = make_benchmark_with(&cfg).map_err(Failure::runtime)?;
    let run = RunDir::create(&resolved.out_dir)?;
    let hash = run.write_config(&resolved.config)?;

    let splits: [(&str, &DataSplit); 6] = [
        ("source_train.csv", &bench.source_train),
        ("source_val.csv", &bench.source_val),
        ("source_test.csv", &bench.source_test),
        ("target_train.csv", &bench.target_train),
        ("target_val.csv", &bench.target_val),
        ("target_test.csv", &bench.target_test),
    ];
    let mut files = Vec::with_capacity(splits.len());
    for (name, split) in splits {
        let text = render_split(split);
        run.write_bytes(name, text.as_bytes())?;
        files.push(FileEntry {
            name: name.to_string(),
            rows: split.len(),
            sha256: hex::encode(sha2::Sha256::digest(text.as_bytes())),
        });
    }
    let source_rows = bench.source_train.len() + bench.source_val.len() + bench.source_test.len();
    let target_rows = bench.target_train.len() + bench.target_val.len() + bench.target_test.len();
    run.write_json(
        "dataset.json",
        &GenerateReport {
            benchmark: bench.config.clone(),
            x_scaler: bench.x_scaler.clone(),
            y_scaler: bench.y_scaler,
            source_rows,
            target_rows,
            files,
        },
    )?;
    run.write_manifest(
        "generate",
        &hash,
        cfg.seed,
        &[
            "dataset.json",
            "source_train.csv",
            "source_val.csv",
            "source_test.csv",
            "target_train.csv",
            "target_val.csv",
            "target_test.csv",
        ],
    )?;
    println!(
        "wrote {} source rows and {} target rows to {}",
        source_rows,
        target_rows,
        run.path.display()
    );
    Ok(())
}
