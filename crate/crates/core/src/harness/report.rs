use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::geometry::DomainMask;
use crate::io::encode_mask;

pub const SCHEMA_VERSION: u32 = 1;

/// SHA-256 of the binary mask encoding, as lowercase hex.
pub fn domain_hash(masks: &[&DomainMask]) -> String {
    let mut hasher = Sha256::new();
    for m in masks {
        hasher.update(encode_mask(m));
    }
    let mut out = String::with_capacity(64);
    for b in hasher.finalize().iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub schema_version: u32,
    pub experiment: String,
    pub config: ExperimentConfig,
}

impl ReportHeader {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        ReportHeader {
            schema_version: SCHEMA_VERSION,
            experiment: cfg.name.clone(),
            config: cfg.clone(),
        }
    }
}

/// CSV table whose first column is the schema version.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        CsvTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = format!("schema_version,{}\n", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|c| quote(c)).collect();
            let _ = writeln!(out, "{SCHEMA_VERSION},{}", cells.join(","));
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(dir, name, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;

    #[test]
    fn csv_quotes_and_versions() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        assert_eq!(t.render(), "schema_version,a,b\n1,1,\"x,y\"\n");
    }

    #[test]
    fn hash_depends_on_states_and_grid() {
        let g = GridSpec::new(vec![0.0], 1.0, vec![3]).unwrap();
        let a = DomainMask::from_states(g.clone(), vec![1, 2, 1]).unwrap();
        let b = DomainMask::from_states(g, vec![1, 1, 1]).unwrap();
        let c = DomainMask::from_states(
            GridSpec::new(vec![0.5], 1.0, vec![3]).unwrap(),
            vec![1, 2, 1],
        )
        .unwrap();
        let ha = domain_hash(&[&a]);
        assert_eq!(ha.len(), 64);
        assert_eq!(ha, domain_hash(&[&a]));
        assert_ne!(ha, domain_hash(&[&b]));
        assert_ne!(ha, domain_hash(&[&c]));
    }
}
