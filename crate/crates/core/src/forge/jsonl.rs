//! Line-delimited JSON, one record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::forge::{ContextResponsePair, Dialogue, ForgeError};
use crate::meta_eval::{EvaluationRecord, SelectionTask};

/// A record type with a known field set and its own validation.
pub trait JsonlRecord: Serialize + DeserializeOwned {
    const FIELDS: &'static [&'static str];

    fn check(&self) -> Result<(), String>;
}

impl JsonlRecord for Dialogue {
    const FIELDS: &'static [&'static str] = &["id", "domain", "utterances"];

    fn check(&self) -> Result<(), String> {
        self.validate()
    }
}

impl JsonlRecord for ContextResponsePair {
    const FIELDS: &'static [&'static str] = &[
        "domain",
        "context",
        "response",
        "label",
        "confidence",
        "provenance",
    ];

    fn check(&self) -> Result<(), String> {
        self.validate()
    }
}

impl JsonlRecord for EvaluationRecord {
    const FIELDS: &'static [&'static str] = EvaluationRecord::FIELDS;

    fn check(&self) -> Result<(), String> {
        self.validate()
    }
}

impl JsonlRecord for SelectionTask {
    const FIELDS: &'static [&'static str] = SelectionTask::FIELDS;

    fn check(&self) -> Result<(), String> {
        self.validate()
    }
}

/// Parses and validates every nonblank line. In strict mode a field not
/// in `T::FIELDS` is an error; otherwise it is ignored.
pub fn read_jsonl<T: JsonlRecord>(
    reader: impl BufRead,
    strict: bool,
) -> Result<Vec<T>, ForgeError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| ForgeError::Schema {
            line: i + 1,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| schema("expected a JSON object".into()))?;
        if strict {
            if let Some(k) = obj.keys().find(|k| !T::FIELDS.contains(&k.as_str())) {
                return Err(schema(format!("unknown field {k:?}")));
            }
        }
        let rec: T = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
        rec.check().map_err(schema)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl_file<T: JsonlRecord>(path: &Path, strict: bool) -> Result<Vec<T>, ForgeError> {
    read_jsonl(BufReader::new(File::open(path)?), strict)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, records: &[T]) -> Result<(), ForgeError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, records: &[T]) -> Result<(), ForgeError> {
    write_jsonl(BufWriter::new(File::create(path)?), records)
}
