use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ServiceError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Regions,
    Inet,
    Compare,
    Upzones,
    Correlations,
    Features,
    Model,
    Report,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub kind: ArtifactKind,
    /// Path relative to the store root.
    pub path: String,
    pub checksum: String,
    pub config_hash: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

/// Content-addressed artifact directory with a JSON manifest. Objects are
/// written once and never modified.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
    manifest: Manifest,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io { path: path.to_path_buf(), source }
}

impl ArtifactStore {
    /// Open (or create) a store rooted at `root`.
    pub fn open(root: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Self::open_existing(root)
    }

    /// Open a store without creating anything on disk.
    pub fn open_existing(root: &Path) -> Result<Self, ServiceError> {
        let path = root.join(MANIFEST_FILE);
        let manifest = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| ServiceError::Corrupt(format!("{}: {e}", path.display())))?,
            Err(e) if e.kind() == ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(io_err(&path)(e)),
        };
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn entry(&self, name: &str) -> Option<&ArtifactEntry> {
        self.manifest.artifacts.get(name)
    }

    /// Store `bytes` under `name`. Identical content is a no-op; returns
    /// whether anything changed.
    pub fn put(
        &mut self,
        name: &str,
        kind: ArtifactKind,
        extension: &str,
        bytes: &[u8],
        config_hash: &str,
    ) -> Result<bool, ServiceError> {
        let checksum = sha256_hex(bytes);
        if let Some(e) = self.manifest.artifacts.get(name) {
            if e.checksum == checksum && e.config_hash == config_hash && e.kind == kind {
                return Ok(false);
            }
        }
        let rel = format!("objects/{}/{checksum}.{extension}", &checksum[..2]);
        let path = self.root.join(&rel);
        if !path.exists() {
            let dir = path.parent().expect("object path has a parent");
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        self.manifest.artifacts.insert(
            name.to_string(),
            ArtifactEntry { kind, path: rel, checksum, config_hash: config_hash.to_string(), bytes: bytes.len() as u64 },
        );
        Ok(true)
    }

    /// Drop a manifest entry. The object file stays on disk.
    pub fn remove(&mut self, name: &str) -> Option<ArtifactEntry> {
        self.manifest.artifacts.remove(name)
    }

    pub fn save_manifest(&self) -> Result<(), ServiceError> {
        let path = self.root.join(MANIFEST_FILE);
        let tmp = self.root.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Read an artifact and check it against its manifest checksum.
    pub fn get(&self, name: &str) -> Result<Vec<u8>, ServiceError> {
        let entry = self.entry(name).ok_or_else(|| ServiceError::MissingArtifact(name.to_string()))?;
        let path = self.root.join(&entry.path);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if sha256_hex(&bytes) != entry.checksum {
            return Err(ServiceError::Corrupt(format!("checksum mismatch for {name}")));
        }
        Ok(bytes)
    }

    pub fn get_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T, ServiceError> {
        let bytes = self.get(name)?;
        serde_json::from_slice(&bytes).map_err(|e| ServiceError::Corrupt(format!("{name}: {e}")))
    }

    /// Names of artifacts whose checksum no longer matches.
    pub fn verify(&self) -> Vec<String> {
        self.manifest.artifacts.keys().filter(|n| self.get(n).is_err()).cloned().collect()
    }

    /// Take the exclusive pipeline lock.
    pub fn lock(&self) -> Result<StoreLock, ServiceError> {
        let path = self.root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StoreLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(ServiceError::Locked(path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

/// Held while a pipeline writes to the store; released on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_and_noop() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ArtifactStore::open(dir.path()).unwrap();
        assert!(s.put("inet/GP/h8", ArtifactKind::Inet, "json", b"{}", "c1").unwrap());
        assert!(!s.put("inet/GP/h8", ArtifactKind::Inet, "json", b"{}", "c1").unwrap());
        s.save_manifest().unwrap();
        let s2 = ArtifactStore::open_existing(dir.path()).unwrap();
        assert_eq!(s2.get("inet/GP/h8").unwrap(), b"{}");
        assert_eq!(s2.manifest(), s.manifest());
        assert!(matches!(s2.get("nope"), Err(ServiceError::MissingArtifact(_))));
        assert!(s2.verify().is_empty());
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ArtifactStore::open(dir.path()).unwrap();
        s.put("a", ArtifactKind::Report, "json", b"[1]", "h").unwrap();
        let path = dir.path().join(&s.entry("a").unwrap().path);
        fs::write(path, b"[2]").unwrap();
        assert_eq!(s.verify(), vec!["a".to_string()]);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let s = ArtifactStore::open(dir.path()).unwrap();
        let held = s.lock().unwrap();
        assert!(matches!(s.lock(), Err(ServiceError::Locked(_))));
        drop(held);
        assert!(s.lock().is_ok());
    }
}
