//! Canonical single-line JSON records and the logic-library file.
//!
//! Every record starts with `schema_version`, followed by the value's fields in
//! declaration order, so equal values always serialize to identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ConstraintSet, LogicError, MarketLogic, MarketLogicStruct, Result};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Serialize)]
struct Versioned<'a, T> {
    schema_version: u64,
    #[serde(flatten)]
    body: &'a T,
}

pub trait CanonicalRecord: Serialize + DeserializeOwned {
    fn to_record(&self) -> String {
        serde_json::to_string(&Versioned { schema_version: SCHEMA_VERSION, body: self })
            .expect("record types serialize infallibly")
    }

    fn from_record(text: &str) -> Result<Self> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| LogicError::Record(e.to_string()))?;
        let obj = value.as_object_mut().ok_or_else(|| LogicError::Record("record is not an object".into()))?;
        let found = obj
            .remove("schema_version")
            .ok_or_else(|| LogicError::Record("missing field `schema_version`".into()))?;
        match found.as_u64() {
            Some(SCHEMA_VERSION) => {}
            Some(v) => return Err(LogicError::SchemaVersion { found: v, expected: SCHEMA_VERSION }),
            None => return Err(LogicError::Record(format!("schema_version {found} is not an integer"))),
        }
        serde_json::from_value(value).map_err(|e| LogicError::Record(e.to_string()))
    }
}

impl CanonicalRecord for MarketLogic {}
impl CanonicalRecord for MarketLogicStruct {}
impl CanonicalRecord for ConstraintSet {}
impl CanonicalRecord for LibraryEntry {}

/// One line of the logic library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    #[serde(flatten)]
    pub logic: MarketLogic,
    #[serde(rename = "H_struct", default, skip_serializing_if = "Option::is_none")]
    pub h_struct: Option<MarketLogicStruct>,
    #[serde(rename = "Gamma", default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<ConstraintSet>,
}

impl LibraryEntry {
    pub fn bare(logic: MarketLogic) -> Self {
        LibraryEntry { logic, h_struct: None, gamma: None }
    }
}

pub fn write_library(path: impl AsRef<Path>, entries: &[LibraryEntry]) -> std::io::Result<()> {
    let mut out = Vec::new();
    for e in entries {
        writeln!(out, "{}", e.to_record())?;
    }
    let path = path.as_ref();
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, out)?;
    fs::rename(tmp, path)
}

/// Reads a library, skipping blank lines. Errors name the 1-based line.
pub fn read_library(path: impl AsRef<Path>) -> Result<Vec<LibraryEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LogicError::Record(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry = LibraryEntry::from_record(line).map_err(|e| LogicError::Record(format!("line {}: {e}", i + 1)))?;
        if out.iter().any(|x: &LibraryEntry| x.logic.id == entry.logic.id) {
            return Err(LogicError::Record(format!("line {}: duplicate id {}", i + 1, entry.logic.id)));
        }
        out.push(entry);
    }
    Ok(out)
}
