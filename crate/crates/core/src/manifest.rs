//! Hashed inventory of an output directory.
//!
//! The manifest lists every file under the directory with its SHA-256 digest, echoes
//! the run configuration, and carries a digest of its own canonical serialization, so
//! a change to any byte of the package, manifest included, is detected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_NAME: &str = "actor-anchor";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Path relative to the package root, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Seconds since the Unix epoch, supplied by the caller.
    pub created_unix: u64,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub files: Vec<ManifestEntry>,
    /// SHA-256 of this manifest serialized with an empty `digest`.
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

fn relative_name(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .expect("walked paths live under the root")
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Every file under `dir` except the manifest, sorted by relative path.
pub fn package_files(dir: &Path) -> Result<Vec<String>> {
    let mut paths = Vec::new();
    collect_files(dir, dir, &mut paths)?;
    let mut names: Vec<String> = paths.iter().map(|p| relative_name(dir, p)).collect();
    names.sort();
    Ok(names)
}

fn canonical_bytes(manifest: &Manifest) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    bytes.push(b'\n');
    bytes
}

fn self_digest(manifest: &Manifest) -> String {
    let mut blank = manifest.clone();
    blank.digest.clear();
    sha256_hex(&canonical_bytes(&blank))
}

impl Manifest {
    pub fn build(dir: &Path, config: &RunConfig, created_unix: u64) -> Result<Self> {
        let mut files = Vec::new();
        for name in package_files(dir)? {
            let path = dir.join(&name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            files.push(ManifestEntry {
                path: name,
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        let mut manifest = Self {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_unix,
            seeds: config.seeds.clone(),
            config: serde_json::to_value(config)?,
            files,
            digest: String::new(),
        };
        manifest.digest = self_digest(&manifest);
        Ok(manifest)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, canonical_bytes(self)).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<(Self, Vec<u8>)> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok((serde_json::from_slice(&bytes)?, bytes))
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let config: RunConfig = serde_json::from_value(self.config.clone())?;
        config.validate()?;
        Ok(config)
    }
}

/// Checks the manifest against the directory. Returns one message per problem; an
/// empty list means the package is intact.
pub fn verify(dir: &Path) -> Result<Vec<String>> {
    let (manifest, raw) = match Manifest::read(dir) {
        Ok(m) => m,
        Err(Error::Json(e)) => return Ok(vec![format!("{MANIFEST_FILE}: unreadable ({e})")]),
        Err(e) => return Err(e),
    };
    let mut problems = Vec::new();
    if canonical_bytes(&manifest) != raw || self_digest(&manifest) != manifest.digest {
        problems.push(format!("{MANIFEST_FILE}: digest mismatch"));
    }
    let on_disk = package_files(dir)?;
    let mut listed: Vec<&str> = manifest.files.iter().map(|f| f.path.as_str()).collect();
    listed.sort_unstable();
    for w in listed.windows(2).filter(|w| w[0] == w[1]) {
        problems.push(format!("{}: listed more than once", w[0]));
    }
    for name in &on_disk {
        if !listed.contains(&name.as_str()) {
            problems.push(format!("{name}: not listed in manifest"));
        }
    }
    for entry in &manifest.files {
        let path = dir.join(&entry.path);
        match fs::read(&path) {
            Ok(bytes) => {
                if sha256_hex(&bytes) != entry.sha256 || bytes.len() as u64 != entry.bytes {
                    problems.push(format!("{}: hash mismatch", entry.path));
                }
            }
            Err(_) => problems.push(format!("{}: missing", entry.path)),
        }
    }
    Ok(problems)
}
