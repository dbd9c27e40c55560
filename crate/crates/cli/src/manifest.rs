//! The run manifest: one flat text file in the output directory recording
//! the code version, an echo of the last command's configuration, and for
//! every completed stage its wall-clock time and artifact checksums.
//!
//! Later stages verify the checksums of artifacts they consume, so a
//! half-regenerated output directory fails fast instead of silently mixing
//! runs. The manifest itself is metadata, not an artifact: timings differ
//! between runs even when every artifact byte matches.

use std::path::{Path, PathBuf};

use crate::bytes::{sha256_file, write_atomic};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct StageEntry {
    pub name: String,
    pub wall_ms: u128,
    /// `(path, sha256)` for every file the stage wrote.
    pub artifacts: Vec<(String, String)>,
    /// Free-form facts worth keeping (calibrated thresholds and the like).
    pub notes: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub code_version: String,
    /// Serialized configuration of the most recent command.
    pub config_text: String,
    pub stages: Vec<StageEntry>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_text: String::new(),
            stages: Vec::new(),
        }
    }

    pub fn path_in(out_dir: &Path) -> PathBuf {
        out_dir.join(MANIFEST_NAME)
    }

    /// Loads the manifest if present; a fresh one otherwise.
    pub fn load_or_new(out_dir: &Path) -> Result<Manifest> {
        let path = Self::path_in(out_dir);
        if !path.exists() {
            return Ok(Manifest::new());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Self::parse(&path, &text)
    }

    fn parse(path: &Path, text: &str) -> Result<Manifest> {
        let mut m = Manifest {
            code_version: String::new(),
            config_text: String::new(),
            stages: Vec::new(),
        };
        let complain = |lineno: usize, msg: String| {
            CliError::Config(format!("{}: line {lineno}: {msg}", path.display()))
        };
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(complain(lineno, format!("expected 'key = value', got '{line}'")));
            };
            let key = key.trim();
            let value = value.trim();
            if key == "code_version" {
                m.code_version = value.to_string();
            } else if let Some(cfg_key) = key.strip_prefix("config.") {
                m.config_text.push_str(cfg_key);
                m.config_text.push_str(" = ");
                m.config_text.push_str(value);
                m.config_text.push('\n');
            } else if let Some(rest) = key.strip_prefix("stage.") {
                let Some((stage, field)) = rest.split_once('.') else {
                    return Err(complain(lineno, format!("malformed stage key '{key}'")));
                };
                if m.stages.last().map(|s| s.name.as_str()) != Some(stage) {
                    m.stages.push(StageEntry {
                        name: stage.to_string(),
                        wall_ms: 0,
                        artifacts: Vec::new(),
                        notes: Vec::new(),
                    });
                }
                let entry = m.stages.last_mut().unwrap();
                if field == "wall_ms" {
                    entry.wall_ms = value
                        .parse()
                        .map_err(|_| complain(lineno, format!("invalid integer '{value}'")))?;
                } else if let Some(note_key) = field.strip_prefix("note.") {
                    entry.notes.push((note_key.to_string(), value.to_string()));
                } else if let Some(idx_field) = field.strip_prefix("artifact.") {
                    let Some((idx, what)) = idx_field.split_once('.') else {
                        return Err(complain(lineno, format!("malformed artifact key '{key}'")));
                    };
                    let idx: usize = idx
                        .parse()
                        .map_err(|_| complain(lineno, format!("invalid artifact index '{idx}'")))?;
                    if idx == entry.artifacts.len() && what == "path" {
                        entry.artifacts.push((value.to_string(), String::new()));
                    } else if idx + 1 == entry.artifacts.len() && what == "sha256" {
                        entry.artifacts[idx].1 = value.to_string();
                    } else {
                        return Err(complain(
                            lineno,
                            format!("artifact fields out of order at '{key}'"),
                        ));
                    }
                } else {
                    return Err(complain(lineno, format!("unknown stage field '{field}'")));
                }
            } else {
                return Err(complain(lineno, format!("unknown key '{key}'")));
            }
        }
        Ok(m)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::from("# resynth run manifest\n");
        out.push_str(&format!("code_version = {}\n", self.code_version));
        for line in self.config_text.lines() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            out.push_str("config.");
            out.push_str(line);
            out.push('\n');
        }
        for stage in &self.stages {
            out.push_str(&format!("stage.{}.wall_ms = {}\n", stage.name, stage.wall_ms));
            for (i, (path, sha)) in stage.artifacts.iter().enumerate() {
                out.push_str(&format!("stage.{}.artifact.{i}.path = {path}\n", stage.name));
                out.push_str(&format!("stage.{}.artifact.{i}.sha256 = {sha}\n", stage.name));
            }
            for (k, v) in &stage.notes {
                out.push_str(&format!("stage.{}.note.{k} = {v}\n", stage.name));
            }
        }
        out
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        write_atomic(&Self::path_in(out_dir), self.serialize().as_bytes())
    }

    /// Echoes the configuration as bare `key = value` lines (comments
    /// dropped), the exact form the parser reconstructs.
    pub fn record_config(&mut self, cfg: &RunConfig) {
        self.config_text = cfg
            .serialize()
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .flat_map(|l| [l, "\n"])
            .collect();
        self.code_version = env!("CARGO_PKG_VERSION").to_string();
    }

    /// Inserts or replaces the entry for `stage.name`, keeping stage order.
    pub fn upsert_stage(&mut self, stage: StageEntry) {
        match self.stages.iter_mut().find(|s| s.name == stage.name) {
            Some(slot) => *slot = stage,
            None => self.stages.push(stage),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Checks a consumed artifact against the checksum recorded by the
    /// stage that produced it. Files the manifest never saw pass silently;
    /// a recorded file that changed is a hard error.
    pub fn verify_artifact(&self, path: &Path) -> Result<()> {
        let wanted = path.to_string_lossy();
        for stage in &self.stages {
            for (p, sha) in &stage.artifacts {
                if p.as_str() == wanted {
                    let actual = sha256_file(path)?;
                    if &actual != sha {
                        return Err(CliError::Prerequisite(format!(
                            "checksum mismatch for '{}' (recorded by stage {}); \
                             rerun that stage or remove {}",
                            path.display(),
                            stage.name,
                            MANIFEST_NAME,
                        )));
                    }
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}

/// Builds a stage entry, hashing each artifact file.
pub fn stage_entry(
    name: &str,
    wall_ms: u128,
    artifacts: &[PathBuf],
    notes: Vec<(String, String)>,
) -> Result<StageEntry> {
    let mut hashed = Vec::with_capacity(artifacts.len());
    for path in artifacts {
        hashed.push((path.to_string_lossy().into_owned(), sha256_file(path)?));
    }
    Ok(StageEntry {
        name: name.to_string(),
        wall_ms,
        artifacts: hashed,
        notes,
    })
}
