//! The JSON run report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const SCHEMA_TAG: &str = "attractor-forge/report/v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub stage: String,
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub version: String,
    pub config_hash: String,
    pub config: Value,
    pub stages: BTreeMap<String, Value>,
    pub warnings: Vec<Warning>,
    /// Wall-clock seconds per stage; excluded from `report_hash`.
    pub timing: BTreeMap<String, f64>,
    /// SHA-256 of the report without `timing` and this field.
    pub report_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl Report {
    pub fn new(config: Value, config_hash: String) -> Self {
        Report {
            schema: SCHEMA_TAG.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash,
            config,
            stages: BTreeMap::new(),
            warnings: Vec::new(),
            timing: BTreeMap::new(),
            report_hash: String::new(),
        }
    }

    /// A previous report for the same configuration, if one is readable.
    pub fn load_matching(path: &Path, config_hash: &str) -> Option<Self> {
        let text = std::fs::read_to_string(path).ok()?;
        let r: Report = serde_json::from_str(&text).ok()?;
        (r.schema == SCHEMA_TAG && r.version == env!("CARGO_PKG_VERSION") && r.config_hash == config_hash).then_some(r)
    }

    /// Replace everything a stage previously contributed.
    pub fn clear_stage(&mut self, stage: &str) {
        self.stages.remove(stage);
        self.timing.remove(stage);
        self.warnings.retain(|w| w.stage != stage);
    }

    pub fn deterministic_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Value::Object(m) = &mut v {
            m.remove("timing");
            m.remove("report_hash");
        }
        sha256_hex(serde_json::to_string(&v).expect("report serializes").as_bytes())
    }

    pub fn to_json(&mut self) -> String {
        self.report_hash = self.deterministic_hash();
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
