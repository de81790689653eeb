//! Config loading and the run.json manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dasksvd::config::PipelineConfig;
use dasksvd::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::args::{ConfigArgs, Invocation};

pub const RUN_JSON: &str = "run.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    pub seed: u64,
    /// Fully resolved config the command ran with.
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file, or of the sorted `name:digest` lines of a directory's files.
pub fn digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut names: Vec<_> = fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file() && e.file_name() != RUN_JSON)
            .map(|e| e.file_name())
            .collect();
        names.sort();
        let mut h = Sha256::new();
        for n in names {
            let d = digest(&path.join(&n))?;
            h.update(format!("{}:{d}\n", n.to_string_lossy()).as_bytes());
        }
        Ok(hex(&h.finalize()))
    } else {
        let bytes = fs::read(path).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Ok(hex(&Sha256::digest(&bytes)))
    }
}

pub fn digests(paths: &[&Path]) -> Result<Vec<InputDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.to_path_buf(),
                sha256: digest(p)?,
            })
        })
        .collect()
}

/// Reads a TOML or JSON document into a JSON value, by file extension.
pub fn read_document(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let value = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        _ => {
            return Err(Error::Config(format!("{}: expected a .toml or .json file", path.display())).into());
        }
    };
    Ok(value)
}

/// Sets `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

pub fn from_value<T: DeserializeOwned>(value: Value) -> Result<T> {
    Ok(serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?)
}

/// File config, then `--set` overrides, then dedicated flags.
pub fn resolve_config(args: &ConfigArgs, tweak: impl FnOnce(&mut PipelineConfig)) -> Result<PipelineConfig> {
    let mut doc = match &args.config {
        Some(p) => read_document(p)?,
        None => Value::Object(Default::default()),
    };
    for o in &args.overrides {
        apply_override(&mut doc, o)?;
    }
    let mut cfg: PipelineConfig = from_value(doc)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    tweak(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(out.join(RUN_JSON), text).with_context(|| format!("writing {}", out.join(RUN_JSON).display()))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let path = if path.is_dir() { path.join(RUN_JSON) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        msg: e.to_string(),
    })?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        msg: e.to_string(),
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse() {
        let mut doc = serde_json::json!({"ksvd": {"sparsity": 4}});
        apply_override(&mut doc, "ksvd.sparsity=5").unwrap();
        apply_override(&mut doc, "das.keep_factor=0.25").unwrap();
        apply_override(&mut doc, "name=abc").unwrap();
        assert_eq!(doc["ksvd"]["sparsity"], 5);
        assert_eq!(doc["das"]["keep_factor"], 0.25);
        assert_eq!(doc["name"], "abc");
        assert!(apply_override(&mut doc, "novalue").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 3\nthreshold = 10.0\n[ksvd]\nsparsity = 6\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            seed: Some(9),
            overrides: vec!["ksvd.sparsity=2".into()],
        };
        let cfg = resolve_config(&args, |_| {}).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.ksvd.sparsity, 2);
        assert_eq!(cfg.threshold, 10.0);
    }

    #[test]
    fn directory_digest_ignores_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "1\n").unwrap();
        let before = digest(dir.path()).unwrap();
        fs::write(dir.path().join(RUN_JSON), "{}").unwrap();
        assert_eq!(digest(dir.path()).unwrap(), before);
        fs::write(dir.path().join("a.csv"), "2\n").unwrap();
        assert_ne!(digest(dir.path()).unwrap(), before);
    }
}
