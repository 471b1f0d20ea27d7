//! Self-describing output files.
//!
//! CSV and JSONL files open with `#` comment lines carrying the tool
//! version, command, config digest and seed; JSON files carry the same
//! fields under `meta`. Nothing time- or host-dependent is written, so
//! identical inputs give identical bytes.

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use atlas_core::numeric::sha256_hex;
use serde::Serialize;
use serde_json::json;

use crate::config::Run;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Written {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

pub struct Outputs {
    dir: PathBuf,
    command: String,
    digest: String,
    seed: u64,
    written: Vec<Written>,
}

impl Outputs {
    pub fn new(run: &Run) -> Result<Outputs> {
        std::fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
        Ok(Outputs {
            dir: run.out.clone(),
            command: run.command.clone(),
            digest: run.digest.clone(),
            seed: run.seed,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[Written] {
        &self.written
    }

    fn header(&self) -> String {
        format!(
            "# tool: atlas {VERSION}\n# command: {}\n# config_digest: {}\n# seed: {}\n",
            self.command, self.digest, self.seed
        )
    }

    pub fn meta(&self) -> serde_json::Value {
        json!({
            "tool": format!("atlas {VERSION}"),
            "command": self.command,
            "config_digest": self.digest,
            "seed": self.seed,
        })
    }

    fn finish(&mut self, name: &str, bytes: Vec<u8>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(Written { file: name.to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() });
        Ok(path)
    }

    pub fn csv<H, R>(&mut self, name: &str, header: &[H], rows: R) -> Result<PathBuf>
    where
        H: AsRef<str>,
        R: IntoIterator<Item = Vec<String>>,
    {
        let mut buf = self.header().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header.iter().map(|h| h.as_ref()))?;
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        self.finish(name, buf)
    }

    /// Header lines followed by whatever `body` writes.
    pub fn text(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = self.header().into_bytes();
        body(&mut buf)?;
        self.finish(name, buf)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<PathBuf> {
        let doc = json!({ "meta": self.meta(), "result": result });
        let mut buf = serde_json::to_vec_pretty(&doc)?;
        buf.push(b'\n');
        self.finish(name, buf)
    }
}

/// Float formatting used in every table: shortest round-trip form, empty for missing.
pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
