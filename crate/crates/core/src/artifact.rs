//! Line-delimited artifact files: one header record followed by one record
//! per line, all JSON.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Common header carried by every line-delimited artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

impl Header {
    pub fn new(kind: &str, manifest_hash: Option<&str>) -> Self {
        Header {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            manifest_hash: manifest_hash.map(str::to_string),
        }
    }

    pub fn expect(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Validation(format!("expected a `{kind}` file, found `{}`", self.kind)));
        }
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported {kind} format_version {}",
                self.format_version
            )));
        }
        Ok(())
    }
}

pub fn to_jsonl<H: Serialize, R: Serialize>(header: &H, records: &[R]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, header)?;
    out.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn from_jsonl<H: DeserializeOwned, R: DeserializeOwned>(text: &str) -> Result<(H, Vec<R>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::parse(1, 1, "empty file"))?;
    let header: H = serde_json::from_str(first).map_err(|e| Error::parse(1, e.column(), e.to_string()))?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let rec = serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.column(), e.to_string()))?;
        records.push(rec);
    }
    Ok((header, records))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}
