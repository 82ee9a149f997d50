//! Run-directory plumbing. Every command writes into its own directory:
//! a copy of the resolved config, a manifest with the config hash, the
//! run seed and crate versions, and the command's own artifacts. Nothing
//! here embeds timestamps, so reruns produce byte-identical files.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{CResult, ExperimentConfig, Failure};
use bdann::pipeline::TrainingHistory;

pub struct RunDir {
    pub path: PathBuf,
}

#[derive(serde::Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_file: &'a str,
    config_sha256: &'a str,
    seed: u64,
    versions: Versions,
    outputs: &'a [&'a str],
}

#[derive(serde::Serialize)]
struct Versions {
    bdann: &'static str,
    cli: &'static str,
}

impl RunDir {
    pub fn create(path: &Path) -> CResult<Self> {
        std::fs::create_dir_all(path)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))?;
        Ok(RunDir {
            path: path.to_path_buf(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> CResult<()> {
        std::fs::write(self.file(name), bytes)
            .map_err(|e| Failure::Runtime(format!("cannot write {name}: {e}")))
    }

    /// Copies the resolved config (location stripped) and returns its hash.
    pub fn write_config(&self, config: &ExperimentConfig) -> CResult<String> {
        let mut copy = config.clone();
        copy.out = None;
        let text = toml::to_string_pretty(&copy)
            .map_err(|e| Failure::Runtime(format!("cannot render config: {e}")))?;
        self.write_bytes("config.toml", text.as_bytes())?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn write_manifest(
        &self,
        command: &str,
        config_sha256: &str,
        seed: u64,
        outputs: &[&str],
    ) -> CResult<()> {
        let manifest = Manifest {
            command,
            config_file: "config.toml",
            config_sha256,
            seed,
            versions: Versions {
                bdann: bdann::VERSION,
                cli: env!("CARGO_PKG_VERSION"),
            },
            outputs,
        };
        self.write_json("manifest.json", &manifest)
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> CResult<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Failure::Runtime(format!("cannot render {name}: {e}")))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Per-epoch loss log: epoch, train_loss, val_loss.
    pub fn write_history_csv(&self, name: &str, history: &TrainingHistory) -> CResult<()> {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &history.records {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
        }
        self.write_bytes(name, out.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetConfig;

    fn sample_config() -> ExperimentConfig {
        toml::from_str(
            r#"
            seed = 3
            out = "somewhere/else"
            [dataset]
            kind = "synthetic"
            seed = 11
        "#,
        )
        .unwrap()
    }

    #[test]
    fn config_copy_hash_is_stable_and_location_free() {
        let dir = std::env::temp_dir().join(format!("bdann_artifacts_{}", std::process::id()));
        let run = RunDir::create(&dir).unwrap();
        let config = sample_config();
        let h1 = run.write_config(&config).unwrap();
        let h2 = run.write_config(&config).unwrap();
        assert_eq!(h1, h2);
        let copied = std::fs::read_to_string(run.file("config.toml")).unwrap();
        assert!(!copied.contains("somewhere/else"));
        let back: ExperimentConfig = toml::from_str(&copied).unwrap();
        assert_eq!(back.seed, 3);
        assert!(matches!(
            back.dataset,
            DatasetConfig::Synthetic { seed: 11, .. }
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
