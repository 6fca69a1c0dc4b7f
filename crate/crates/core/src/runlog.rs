//! JSONL and CSV writers that stamp every record with the run identity.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::env::LAYOUT_VERSION;

/// Identity written into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
    pub layout_version: String,
}

impl Stamp {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            seed,
            layout_version: LAYOUT_VERSION.to_string(),
        }
    }

    /// Leading comment line for CSV files.
    pub fn csv_comment(&self) -> String {
        format!(
            "# config_hash={} seed={} layout_version={}",
            self.config_hash, self.seed, self.layout_version
        )
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("stamp serializes")
    }
}

pub struct JsonlWriter {
    w: BufWriter<File>,
    stamp: Stamp,
}

impl JsonlWriter {
    pub fn create(path: &Path, stamp: &Stamp) -> std::io::Result<Self> {
        Ok(Self {
            w: BufWriter::new(File::create(path)?),
            stamp: stamp.clone(),
        })
    }

    /// Write one record; object fields are prefixed by the stamp fields.
    pub fn write<T: Serialize>(&mut self, rec: &T) -> std::io::Result<()> {
        let mut obj = Map::new();
        obj.insert("config_hash".into(), Value::String(self.stamp.config_hash.clone()));
        obj.insert("seed".into(), Value::from(self.stamp.seed));
        obj.insert("layout_version".into(), Value::String(self.stamp.layout_version.clone()));
        match serde_json::to_value(rec)? {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("value".into(), other);
            }
        }
        serde_json::to_writer(&mut self.w, &Value::Object(obj))?;
        self.w.write_all(b"\n")?;
        self.w.flush()
    }
}

/// Write a CSV table with a stamp comment line and a header.
pub fn write_csv(path: &Path, stamp: &Stamp, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", stamp.csv_comment())?;
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()
}
