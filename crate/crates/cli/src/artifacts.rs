//! In-memory artifact set stamped with provenance, written only once a command succeeds.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thermonet::csvio::Table;
use thermonet::{Error, Result};

/// Identifies the inputs and seed that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub tool: String,
}

impl Provenance {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Provenance { config_hash, seed, tool: format!("thermonet {}", env!("CARGO_PKG_VERSION")) }
    }

    fn comment(&self) -> String {
        format!("config_hash={} seed={} tool={}", self.config_hash, self.seed, self.tool.replace(' ', "-"))
    }
}

/// SHA-256 over every input that shapes a command's outputs. Each part is
/// framed by its label and length so different splits cannot collide.
pub struct ConfigHash(Sha256);

impl Default for ConfigHash {
    fn default() -> Self {
        ConfigHash(Sha256::new())
    }
}

impl ConfigHash {
    pub fn bytes(&mut self, label: &str, data: &[u8]) {
        self.0.update((label.len() as u64).to_le_bytes());
        self.0.update(label.as_bytes());
        self.0.update((data.len() as u64).to_le_bytes());
        self.0.update(data);
    }

    /// Reads `path`, hashes its contents and returns them.
    pub fn file(&mut self, label: &str, path: &Path) -> Result<Vec<u8>> {
        let data = std::fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        self.bytes(label, &data);
        Ok(data)
    }

    pub fn value<T: Serialize>(&mut self, label: &str, v: &T) -> Result<()> {
        let data = serde_json::to_vec(v)?;
        self.bytes(label, &data);
        Ok(())
    }

    pub fn finish(self) -> String {
        format!("{:x}", self.0.finalize())
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    format!("{:x}", Sha256::digest(data))
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    prov: Provenance,
    files: BTreeMap<PathBuf, Vec<u8>>,
}

impl Artifacts {
    pub fn new(prov: Provenance) -> Self {
        Artifacts { prov, files: BTreeMap::new() }
    }

    pub fn provenance(&self) -> &Provenance {
        &self.prov
    }

    fn insert(&mut self, rel: PathBuf, data: Vec<u8>) -> Result<()> {
        let inside = rel.components().all(|c| matches!(c, Component::Normal(_)));
        if !inside || rel.as_os_str().is_empty() {
            return Err(Error::Config(format!("artifact path {} leaves the output directory", rel.display())));
        }
        if self.files.insert(rel.clone(), data).is_some() {
            return Err(Error::Config(format!("artifact {} produced twice", rel.display())));
        }
        Ok(())
    }

    /// Pretty JSON with a top-level `provenance` field.
    pub fn json<T: Serialize>(&mut self, rel: impl Into<PathBuf>, v: &T) -> Result<()> {
        let value = match serde_json::to_value(v)? {
            Value::Object(mut map) => {
                map.insert("provenance".into(), serde_json::to_value(&self.prov)?);
                Value::Object(map)
            }
            other => serde_json::json!({ "provenance": self.prov, "data": other }),
        };
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        self.insert(rel.into(), text.into_bytes())
    }

    /// CSV with the provenance as its first comment row.
    pub fn csv(&mut self, rel: impl Into<PathBuf>, mut table: Table) -> Result<()> {
        table.comments.insert(0, self.prov.comment());
        let text = table.to_string_pretty()?;
        self.insert(rel.into(), text.into_bytes())
    }

    pub fn raw(&mut self, rel: impl Into<PathBuf>, data: Vec<u8>) -> Result<()> {
        self.insert(rel.into(), data)
    }

    pub fn files(&self) -> &BTreeMap<PathBuf, Vec<u8>> {
        &self.files
    }

    pub fn get(&self, rel: impl AsRef<Path>) -> Option<&[u8]> {
        self.files.get(rel.as_ref()).map(Vec::as_slice)
    }

    /// Moves every file of `other` under `prefix`.
    pub fn absorb(&mut self, prefix: &Path, other: Artifacts) -> Result<()> {
        for (rel, data) in other.files {
            self.insert(prefix.join(rel), data)?;
        }
        Ok(())
    }

    /// Writes every artifact below `out`. Each file goes to a temporary name
    /// first; on any failure the files already placed are removed again.
    pub fn write(&self, out: &Path) -> Result<Vec<PathBuf>> {
        let mut placed = Vec::new();
        let result = (|| -> std::io::Result<()> {
            for (rel, data) in &self.files {
                let path = out.join(rel);
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                let tmp = path.with_extension("partial");
                std::fs::write(&tmp, data)?;
                std::fs::rename(&tmp, &path)?;
                placed.push(path);
            }
            Ok(())
        })();
        match result {
            Ok(()) => Ok(placed),
            Err(e) => {
                for p in &placed {
                    let _ = std::fs::remove_file(p);
                }
                Err(Error::Config(format!("cannot write artifacts under {}: {e}", out.display())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arts() -> Artifacts {
        Artifacts::new(Provenance::new("abc".into(), 7))
    }

    #[test]
    fn json_carries_provenance() {
        let mut a = arts();
        a.json("x.json", &serde_json::json!({ "v": 1 })).unwrap();
        let v: Value = serde_json::from_slice(a.get("x.json").unwrap()).unwrap();
        assert_eq!(v["provenance"]["seed"], 7);
        assert_eq!(v["provenance"]["config_hash"], "abc");
        assert_eq!(v["v"], 1);
    }

    #[test]
    fn csv_carries_provenance_comment() {
        let mut a = arts();
        a.csv("t.csv", Table::new(&["a"])).unwrap();
        let t = Table::parse(std::str::from_utf8(a.get("t.csv").unwrap()).unwrap()).unwrap();
        assert_eq!(t.comment_value("config_hash"), Some("abc"));
        assert_eq!(t.comment_value("seed"), Some("7"));
    }

    #[test]
    fn paths_stay_inside_output() {
        let mut a = arts();
        assert!(a.raw("../x", vec![]).is_err());
        assert!(a.raw("/abs", vec![]).is_err());
        a.raw("d/ok", vec![]).unwrap();
        assert!(a.raw("d/ok", vec![]).is_err());
    }

    #[test]
    fn hash_frames_parts() {
        let mut a = ConfigHash::default();
        a.bytes("x", b"ab");
        a.bytes("y", b"c");
        let mut b = ConfigHash::default();
        b.bytes("x", b"a");
        b.bytes("y", b"bc");
        assert_ne!(a.finish(), b.finish());
    }
}
