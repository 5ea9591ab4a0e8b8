//! Run directory: config snapshot, library, per-round evidence, loop state
//! and the final report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::logic::write_library;

use super::inner::Evidence;
use super::outer::{OuterState, STATE_VERSION};
use super::{FinalReport, LoopError, Result};

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

fn io(path: &Path, e: impl std::fmt::Display) -> LoopError {
    LoopError::Io(format!("{}: {e}", path.display()))
}

/// Pretty JSON plus newline, written to a temp file then renamed.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io(path, e))?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io(path, e)),
    };
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| LoopError::Corrupt { path: path.display().to_string(), message: e.to_string() })
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("rounds")).map_err(|e| io(&root, e))?;
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn state_path(&self) -> PathBuf {
        self.root.join("state.json")
    }

    pub fn library_path(&self) -> PathBuf {
        self.root.join("library.jsonl")
    }

    pub fn final_path(&self) -> PathBuf {
        self.root.join("final_report.json")
    }

    pub fn round_path(&self, round: usize) -> PathBuf {
        self.root.join("rounds").join(format!("round_{round:03}.json"))
    }

    pub fn save_config<T: Serialize>(&self, config: &T) -> Result<()> {
        write_json(&self.config_path(), config)
    }

    pub fn save_round(&self, round: usize, evidence: &Evidence) -> Result<()> {
        write_json(&self.round_path(round), evidence)
    }

    pub fn save_state(&self, st: &OuterState) -> Result<()> {
        let lib = self.library_path();
        write_library(&lib, &st.library).map_err(|e| io(&lib, e))?;
        write_json(&self.state_path(), st)
    }

    /// `None` when no state was saved yet.
    pub fn load_state(&self) -> Result<Option<OuterState>> {
        let path = self.state_path();
        let Some(raw) = read_json::<serde_json::Value>(&path)? else { return Ok(None) };
        match raw.get("schema_version").and_then(|v| v.as_u64()) {
            Some(STATE_VERSION) => {}
            Some(found) => return Err(LoopError::Version { found, expected: STATE_VERSION }),
            None => {
                return Err(LoopError::Corrupt {
                    path: path.display().to_string(),
                    message: "missing schema_version".into(),
                })
            }
        }
        serde_json::from_value(raw)
            .map(Some)
            .map_err(|e| LoopError::Corrupt { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load_final(&self) -> Result<Option<FinalReport>> {
        read_json(&self.final_path())
    }

    pub fn save_final(&self, report: &FinalReport) -> Result<()> {
        write_json(&self.final_path(), report)
    }
}
