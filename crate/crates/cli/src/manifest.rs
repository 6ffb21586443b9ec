//! Run manifest: resolved settings plus content hashes of every file a step
//! read or wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

/// Steps in the order their outputs feed each other.
pub const PIPELINE: [&str; 3] = ["simulate", "fit", "analyze"];

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Step {
    pub settings: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub steps: BTreeMap<String, Step>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            steps: BTreeMap::new(),
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("failed to read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Path of `file` relative to the run directory when it lies inside it.
pub fn key(run: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(run).unwrap_or(file);
    rel.to_string_lossy().replace('\\', "/")
}

impl Manifest {
    pub fn load_or_default(run: &Path) -> Result<Self> {
        let path = run.join(FILE_NAME);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("failed to read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("failed to parse {}", path.display()))
    }

    pub fn write(&self, run: &Path) -> Result<PathBuf> {
        let path = run.join(FILE_NAME);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).with_context(|| format!("failed to write {}", path.display()))?;
        Ok(path)
    }

    /// Stores `step` and drops the steps that consume its outputs, since
    /// those were produced from files that no longer exist in that form.
    pub fn record(&mut self, step: &str, entry: Step) {
        if let Some(pos) = PIPELINE.iter().position(|s| *s == step) {
            for later in &PIPELINE[pos + 1..] {
                self.steps.remove(*later);
            }
        }
        self.steps.insert(step.to_string(), entry);
    }

    /// Hashes `file` and checks it against every hash recorded for the same
    /// path by the steps upstream of `step`.
    pub fn verify_input(&self, run: &Path, step: &str, file: &Path) -> Result<(String, String)> {
        let k = key(run, file);
        let hash = sha256_file(file)?;
        let upstream = PIPELINE
            .iter()
            .position(|s| *s == step)
            .map_or(&PIPELINE[..0], |p| &PIPELINE[..p]);
        for (name, s) in self.steps.iter().filter(|(name, _)| upstream.contains(&name.as_str())) {
            for recorded in [s.outputs.get(&k), s.inputs.get(&k)].into_iter().flatten() {
                if *recorded != hash {
                    bail!(
                        "{} does not match the version recorded by `{name}` in {}; re-run `{name}` or pass matching inputs",
                        file.display(),
                        run.join(FILE_NAME).display()
                    );
                }
            }
        }
        Ok((k, hash))
    }
}

/// Records output hashes for `files`.
pub fn hash_outputs(run: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    files.iter().map(|f| Ok((key(run, f), sha256_file(f)?))).collect()
}
