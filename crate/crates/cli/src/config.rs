//! Run configuration: a JSON file merged with command-line overrides, and the
//! manifest written next to every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssg_core::model::ModelConfig;
use ssg_core::synth::SynthConfig;

use crate::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `model.seed` and `synth.seed` when set.
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    /// Appearance-feature sidecar JSON.
    pub sidecar: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub synth: SynthConfig,
}

/// Values given on the command line; each one beats the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub sidecar: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub lambda_action: Option<f64>,
    pub lambda_hand: Option<f64>,
    pub epochs: Option<usize>,
    pub tau: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("config {}: {e}", path.display())))
    }

    pub fn resolve(mut self, o: &Overrides) -> Self {
        let replace = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        replace(&mut self.dataset, &o.dataset);
        replace(&mut self.sidecar, &o.sidecar);
        replace(&mut self.out, &o.out);
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(s) = self.seed {
            self.model.seed = s;
            self.synth.seed = s;
        }
        if let Some(v) = o.lambda_action {
            self.model.lambda_action = v;
        }
        if let Some(v) = o.lambda_hand {
            self.model.lambda_hand = v;
        }
        if let Some(v) = o.epochs {
            self.model.epochs = v;
        }
        if let Some(v) = o.tau {
            self.model.tau = v;
        }
        self
    }

    /// Hash of the settings without file paths; input contents are hashed
    /// separately in the manifest. Reruns from other directories agree.
    pub fn hash(&self) -> String {
        let c = RunConfig { dataset: None, sidecar: None, out: None, ..self.clone() };
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    /// Input path → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output file name → sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

/// Collects output files, then writes them with a manifest.
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Self {
        OutputSet { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, content: impl Into<String>) {
        self.files.push((name.into(), content.into()));
    }

    pub fn write(self, manifest_name: &str, command: &str, seed: u64, cfg: &RunConfig, inputs: &[&Path]) -> Result<(), Failure> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Failure::input(format!("{}: {e}", self.dir.display())))?;
        let mut hashes = BTreeMap::new();
        for p in inputs {
            let bytes = std::fs::read(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
            hashes.insert(p.display().to_string(), sha256_hex(&bytes));
        }
        let mut outputs = BTreeMap::new();
        for (name, content) in &self.files {
            write_file(&self.dir.join(name), content)?;
            outputs.insert(name.clone(), sha256_hex(content.as_bytes()));
        }
        let m = Manifest {
            command: command.to_string(),
            seed,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            inputs: hashes,
            outputs,
        };
        write_file(&self.dir.join(manifest_name), &(serde_json::to_string_pretty(&m).expect("manifest") + "\n"))
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    std::fs::write(path, content).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}
