//! Content-addressed response cache.
//!
//! With a directory, each record lives at `<dir>/<kind>/<key[..2]>/<key>.json`
//! and holds the full request and response. Writes go through a temp file and
//! a rename so a crash never leaves a half-written record.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    kind: String,
    key: String,
    request: Value,
    response: Value,
}

#[derive(Debug)]
enum Store {
    Disabled,
    Memory(Mutex<HashMap<(String, String), Value>>),
    Dir(PathBuf),
}

#[derive(Debug)]
pub struct ResponseCache {
    store: Store,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ResponseCache {
    pub fn disabled() -> Self {
        Self::with_store(Store::Disabled)
    }

    pub fn in_memory() -> Self {
        Self::with_store(Store::Memory(Mutex::new(HashMap::new())))
    }

    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self::with_store(Store::Dir(dir.into()))
    }

    fn with_store(store: Store) -> Self {
        ResponseCache {
            store,
            key_locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn is_enabled(&self) -> bool {
        !matches!(self.store, Store::Disabled)
    }

    /// Per-key lock: holders of the same key are serialized, so one miss
    /// produces one upstream call even under concurrency.
    pub fn lock_key(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.key_locks.lock().expect("cache lock map poisoned");
        locks.entry(key.to_string()).or_default().clone()
    }

    fn record_path(dir: &Path, kind: &str, key: &str) -> PathBuf {
        dir.join(kind)
            .join(&key[..2.min(key.len())])
            .join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, kind: &str, key: &str) -> std::io::Result<Option<T>> {
        let value = match &self.store {
            Store::Disabled => None,
            Store::Memory(m) => m
                .lock()
                .expect("cache poisoned")
                .get(&(kind.to_string(), key.to_string()))
                .cloned(),
            Store::Dir(dir) => {
                let path = Self::record_path(dir, kind, key);
                match fs::read(&path) {
                    Ok(bytes) => match serde_json::from_slice::<Record>(&bytes) {
                        Ok(r) => Some(r.response),
                        Err(e) => {
                            log::warn!("ignoring unreadable cache record {}: {e}", path.display());
                            None
                        }
                    },
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
                    Err(e) => return Err(e),
                }
            }
        };
        Ok(value.and_then(|v| serde_json::from_value(v).ok()))
    }

    pub fn put<Q: Serialize, R: Serialize>(
        &self,
        kind: &str,
        key: &str,
        request: &Q,
        response: &R,
    ) -> std::io::Result<()> {
        let response = serde_json::to_value(response).expect("response serializes");
        match &self.store {
            Store::Disabled => Ok(()),
            Store::Memory(m) => {
                m.lock()
                    .expect("cache poisoned")
                    .insert((kind.to_string(), key.to_string()), response);
                Ok(())
            }
            Store::Dir(dir) => {
                let path = Self::record_path(dir, kind, key);
                fs::create_dir_all(path.parent().expect("record has parent"))?;
                let record = Record {
                    kind: kind.to_string(),
                    key: key.to_string(),
                    request: serde_json::to_value(request).expect("request serializes"),
                    response,
                };
                let tmp = path.with_extension(format!("tmp{}", std::process::id()));
                fs::write(
                    &tmp,
                    serde_json::to_vec_pretty(&record).expect("record serializes"),
                )?;
                fs::rename(&tmp, &path)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::in_dir(dir.path());
        assert_eq!(c.get::<String>("chat", "abcd").unwrap(), None);
        c.put("chat", "abcd", &"req", &"resp".to_string()).unwrap();
        assert_eq!(
            c.get::<String>("chat", "abcd").unwrap().as_deref(),
            Some("resp")
        );
        assert!(dir.path().join("chat/ab/abcd.json").exists());

        let reopened = ResponseCache::in_dir(dir.path());
        assert_eq!(
            reopened.get::<String>("chat", "abcd").unwrap().as_deref(),
            Some("resp")
        );
    }

    #[test]
    fn disabled_never_hits() {
        let c = ResponseCache::disabled();
        c.put("chat", "k", &1, &2).unwrap();
        assert_eq!(c.get::<i32>("chat", "k").unwrap(), None);
    }
}
