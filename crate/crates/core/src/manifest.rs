//! Run manifests: what was run, on which inputs, with which configuration.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::kvdoc::KvDoc;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    /// Effective configuration after file, environment and flag overrides.
    pub config: KvDoc,
    pub inputs: Vec<(PathBuf, String)>,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<(PathBuf, String)>,
    pub version: String,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: KvDoc) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            seeds: Vec::new(),
            artifacts: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.config.to_string().as_bytes())
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs.push((path.to_path_buf(), sha256_file(path)?));
        Ok(())
    }

    pub fn add_artifact(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.artifacts.push((path.to_path_buf(), sha256_file(path)?));
        Ok(())
    }

    /// `manifest.*` bookkeeping keys plus the configuration under `config.*`.
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("manifest.command", &self.command);
        doc.set("manifest.version", &self.version);
        doc.set("manifest.config_hash", self.config_hash());
        doc.set("manifest.seeds", self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
        doc.set("manifest.wall_clock_secs", self.wall_clock_secs);
        for (k, (p, h)) in self.inputs.iter().enumerate() {
            doc.set(&format!("manifest.input.{}.path", k + 1), p.display());
            doc.set(&format!("manifest.input.{}.sha256", k + 1), h);
        }
        for (k, (p, h)) in self.artifacts.iter().enumerate() {
            doc.set(&format!("manifest.artifact.{}.path", k + 1), p.display());
            doc.set(&format!("manifest.artifact.{}.sha256", k + 1), h);
        }
        for (k, v) in self.config.iter() {
            doc.set(&format!("config.{k}"), v);
        }
        doc
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_kv().save(path)
    }
}

/// The configuration to use from a document that may itself be a manifest.
pub fn config_of(doc: &KvDoc) -> KvDoc {
    if doc.contains("manifest.command") {
        doc.section("config")
    } else {
        doc.clone()
    }
}
