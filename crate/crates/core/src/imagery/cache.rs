use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::ImageryError;
use crate::util::sha256_hex;

/// Sidecar metadata stored as `{key}.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub key: String,
    pub provider: String,
    /// Seconds since the Unix epoch.
    pub fetched_at: u64,
    /// Canonical request string the key was computed from.
    pub request: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: String,
    pub bytes: Vec<u8>,
    pub meta: CacheMeta,
}

impl CacheEntry {
    pub fn new(canonical_request: &str, provider: &str, bytes: Vec<u8>) -> Self {
        let key = sha256_hex(canonical_request.as_bytes());
        let fetched_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let meta =
            CacheMeta { key: key.clone(), provider: provider.to_string(), fetched_at, request: canonical_request.to_string() };
        Self { key, bytes, meta }
    }

    /// The key matches the hash of the stored request echo.
    pub fn is_consistent(&self) -> bool {
        self.key == self.meta.key && sha256_hex(self.meta.request.as_bytes()) == self.key
    }
}

/// Content-addressed payload store laid out as
/// `{root}/{first 2 hex}/{key}.bin` plus `{key}.json`.
///
/// Reads take no lock. Writes are serialized and land through a temporary
/// file renamed into place, metadata first, so a visible `.bin` always has
/// its sidecar.
#[derive(Debug)]
pub struct DiskCache {
    root: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), write_lock: Mutex::new(()), tmp_counter: AtomicU64::new(0) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn payload_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.bin"))
    }

    pub fn meta_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.payload_path(key).is_file()
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, ImageryError> {
        let payload = self.payload_path(key);
        if !payload.is_file() {
            return Ok(None);
        }
        let bytes = fs::read(&payload)?;
        let meta_text = fs::read_to_string(self.meta_path(key))?;
        let meta: CacheMeta = serde_json::from_str(&meta_text)
            .map_err(|e| ImageryError::CorruptCache { key: key.to_string(), message: e.to_string() })?;
        let entry = CacheEntry { key: key.to_string(), bytes, meta };
        if !entry.is_consistent() {
            return Err(ImageryError::CorruptCache {
                key: key.to_string(),
                message: "key does not match the stored request".into(),
            });
        }
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), ImageryError> {
        if !entry.is_consistent() {
            return Err(ImageryError::CorruptCache { key: entry.key.clone(), message: "inconsistent entry".into() });
        }
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let dir = self.root.join(&entry.key[..2]);
        fs::create_dir_all(&dir)?;
        let meta = serde_json::to_vec_pretty(&entry.meta).expect("metadata serializes");
        self.write_atomic(&self.meta_path(&entry.key), &meta)?;
        self.write_atomic(&self.payload_path(&entry.key), &entry.bytes)?;
        Ok(())
    }

    fn write_atomic(&self, dest: &Path, bytes: &[u8]) -> Result<(), ImageryError> {
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dest.with_extension(format!("tmp.{}.{n}", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, dest).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        let entry = CacheEntry::new("size=1x1&location=0.000000,0.000000&heading=0.0&fov=90", "test", vec![1, 2, 3]);
        assert!(cache.get(&entry.key).unwrap().is_none());
        cache.put(&entry).unwrap();
        assert!(cache.contains(&entry.key));
        assert_eq!(cache.get(&entry.key).unwrap().unwrap(), entry);
        let p = cache.payload_path(&entry.key);
        assert!(p.to_string_lossy().contains(&format!("/{}/", &entry.key[..2])));
        // no temporaries left behind
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);
    }

    #[test]
    fn tampered_request_echo_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        let entry = CacheEntry::new("abc", "test", vec![0]);
        cache.put(&entry).unwrap();
        let mut meta = entry.meta.clone();
        meta.request = "abd".into();
        fs::write(cache.meta_path(&entry.key), serde_json::to_vec(&meta).unwrap()).unwrap();
        assert!(matches!(cache.get(&entry.key), Err(ImageryError::CorruptCache { .. })));
    }
}
