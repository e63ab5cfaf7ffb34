//! JSON-lines measurement records.
//!
//! Every record is one JSON object on its own line with the fields
//! `op`, `rounds`, `bytes`, `wall_ms` and `agreement`, plus any number of
//! op-specific extras. [`SCHEMA`] describes the format as a JSON Schema
//! document and [`validate_line`] checks a line against it.

use std::io::Write;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::runtime::RoundLedger;

pub const SCHEMA: &str = r#"{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "ariann measurement record",
  "type": "object",
  "required": ["op", "rounds", "bytes", "wall_ms", "agreement"],
  "properties": {
    "op": { "type": "string", "minLength": 1 },
    "rounds": { "type": "integer", "minimum": 0 },
    "bytes": { "type": "integer", "minimum": 0 },
    "wall_ms": { "type": "number", "minimum": 0 },
    "agreement": { "type": ["number", "null"], "minimum": 0, "maximum": 1 }
  },
  "additionalProperties": true
}"#;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub op: String,
    /// Online rounds seen by party 0.
    pub rounds: u64,
    /// Bytes party 0 sent.
    pub bytes: u64,
    pub wall_ms: f64,
    /// Fraction of outputs matching the plaintext oracle, when there is one.
    pub agreement: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Record {
    pub fn new(op: &str) -> Self {
        Record {
            op: op.to_string(),
            rounds: 0,
            bytes: 0,
            wall_ms: 0.0,
            agreement: None,
            extra: Map::new(),
        }
    }

    pub fn ledger(mut self, ledger: &RoundLedger) -> Self {
        self.rounds = ledger.total.rounds;
        self.bytes = ledger.total.bytes_sent;
        self
    }

    pub fn wall(mut self, wall: std::time::Duration) -> Self {
        self.wall_ms = wall.as_secs_f64() * 1e3;
        self
    }

    pub fn agreement(mut self, a: f64) -> Self {
        self.agreement = Some(a);
        self
    }

    /// Adds an extra field. Serializable values only; the required field
    /// names are rejected.
    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        assert!(!REQUIRED.contains(&key), "{key} is a required field");
        let v = serde_json::to_value(value).expect("extras serialize to JSON");
        self.extra.insert(key.to_string(), v);
        self
    }

    /// Inserts every field of a serializable struct as an extra.
    pub fn with_all(mut self, value: impl Serialize) -> Self {
        if let Ok(Value::Object(m)) = serde_json::to_value(value) {
            for (k, v) in m {
                if !REQUIRED.contains(&k.as_str()) {
                    self.extra.insert(k, v);
                }
            }
        }
        self
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize to JSON")
    }

    pub fn write(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "{}", self.to_line())?;
        Ok(())
    }
}

const REQUIRED: [&str; 5] = ["op", "rounds", "bytes", "wall_ms", "agreement"];

fn invalid(msg: String) -> Error {
    Error::Format(msg)
}

/// Checks one line against [`SCHEMA`].
pub fn validate_line(line: &str) -> Result<Value> {
    let v: Value = serde_json::from_str(line).map_err(|e| invalid(format!("not JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| invalid("record is not an object".into()))?;
    for k in REQUIRED {
        if !obj.contains_key(k) {
            return Err(invalid(format!("missing field {k}")));
        }
    }
    match obj["op"].as_str() {
        Some(s) if !s.is_empty() => {}
        _ => return Err(invalid("op must be a non-empty string".into())),
    }
    for k in ["rounds", "bytes"] {
        if obj[k].as_u64().is_none() {
            return Err(invalid(format!("{k} must be a non-negative integer")));
        }
    }
    match obj["wall_ms"].as_f64() {
        Some(w) if w >= 0.0 => {}
        _ => return Err(invalid("wall_ms must be a non-negative number".into())),
    }
    match &obj["agreement"] {
        Value::Null => {}
        a => match a.as_f64() {
            Some(x) if (0.0..=1.0).contains(&x) => {}
            _ => return Err(invalid("agreement must be null or in [0, 1]".into())),
        },
    }
    Ok(v)
}

/// Validates every non-empty line; errors name the 1-based line number.
pub fn validate_report(text: &str) -> Result<usize> {
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        validate_line(line).map_err(|e| invalid(format!("line {}: {e}", i + 1)))?;
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_validate() {
        let r = Record::new("relu")
            .agreement(1.0)
            .with("batch", 10)
            .with_all(serde_json::json!({"rounds": 9, "k": 32}));
        let line = r.to_line();
        let v = validate_line(&line).unwrap();
        assert_eq!(v["batch"], 10);
        assert_eq!(v["k"], 32);
        assert_eq!(v["rounds"], 0);
        assert_eq!(validate_report(&format!("{line}\n\n{line}\n")).unwrap(), 2);
        serde_json::from_str::<Value>(SCHEMA).unwrap();
    }

    #[test]
    fn bad_records_rejected() {
        for bad in [
            "[]",
            r#"{"op":"x","rounds":1,"bytes":0,"wall_ms":0}"#,
            r#"{"op":"","rounds":1,"bytes":0,"wall_ms":0,"agreement":null}"#,
            r#"{"op":"x","rounds":-1,"bytes":0,"wall_ms":0,"agreement":null}"#,
            r#"{"op":"x","rounds":1,"bytes":0,"wall_ms":0,"agreement":1.5}"#,
        ] {
            assert!(validate_line(bad).is_err(), "{bad}");
        }
        assert!(validate_report("{}\n")
            .unwrap_err()
            .to_string()
            .contains("line 1"));
    }
}
