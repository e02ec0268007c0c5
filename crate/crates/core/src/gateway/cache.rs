use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendKind, ChatRequest, ChatResponse, GatewayError};
use crate::digest::sha256_hex;

/// On-disk record, one file per request hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: ChatRequest,
    pub response: ChatResponse,
    pub timestamp: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

fn cache_err(e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Cache(e.to_string())
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        fs::create_dir_all(dir).map_err(cache_err)?;
        Ok(Self { dir: dir.to_path_buf(), write_lock: Mutex::new(()) })
    }

    /// SHA-256 over the canonical JSON of every field that can change the completion.
    pub fn key(backend: BackendKind, request: &ChatRequest) -> String {
        let canonical = json!({
            "backend": backend,
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": request.messages,
            "sample_index": request.sample_index,
            "attempt": request.attempt,
        });
        sha256_hex(canonical.to_string().as_bytes())
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<ChatResponse>, GatewayError> {
        let bytes = match fs::read(self.path_for(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err(e)),
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) => Ok(Some(entry.response)),
            // unreadable entries are treated as misses and overwritten
            Err(_) => Ok(None),
        }
    }

    pub fn put(
        &self,
        key: &str,
        request: &ChatRequest,
        response: &ChatResponse,
    ) -> Result<(), GatewayError> {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let entry = CacheEntry { request: request.clone(), response: response.clone(), timestamp };
        let body = serde_json::to_vec_pretty(&entry).map_err(cache_err)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let final_path = self.path_for(key);
        let tmp = final_path.with_extension("json.tmp");
        fs::write(&tmp, body).map_err(cache_err)?;
        fs::rename(&tmp, &final_path).map_err(cache_err)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response(content: &str) -> ChatResponse {
        ChatResponse {
            content: content.into(),
            finish_reason: "stop".into(),
            prompt_tokens: 3,
            completion_tokens: 4,
            backend: BackendKind::Mock,
            cached: false,
        }
    }

    #[test]
    fn key_covers_request_fields() {
        let base = ChatRequest::user("gpt-3.5-turbo", "hello", 1.0, 256);
        let k = ResponseCache::key(BackendKind::Mock, &base);
        assert_eq!(k, ResponseCache::key(BackendKind::Mock, &base.clone()));
        assert_ne!(k, ResponseCache::key(BackendKind::Remote, &base));
        let mut r = base.clone();
        r.temperature = 0.7;
        assert_ne!(k, ResponseCache::key(BackendKind::Mock, &r));
        let mut r = base.clone();
        r.max_tokens = 255;
        assert_ne!(k, ResponseCache::key(BackendKind::Mock, &r));
        let mut r = base.clone();
        r.model = "other".into();
        assert_ne!(k, ResponseCache::key(BackendKind::Mock, &r));
        assert_ne!(k, ResponseCache::key(BackendKind::Mock, &base.clone().with_sample(0, 1)));
        assert_eq!(k.len(), 64);
    }

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let req = ChatRequest::user("m", "hello", 1.0, 16);
        let key = ResponseCache::key(BackendKind::Mock, &req);
        assert_eq!(cache.get(&key).unwrap(), None);
        cache.put(&key, &req, &response("hi")).unwrap();
        assert_eq!(cache.get(&key).unwrap(), Some(response("hi")));

        let stored: serde_json::Value =
            serde_json::from_slice(&fs::read(cache.path_for(&key)).unwrap()).unwrap();
        assert_eq!(stored["request"]["messages"][0]["content"], "hello");
        assert_eq!(stored["response"]["content"], "hi");
        assert!(stored["timestamp"].is_u64());
    }

    #[test]
    fn corrupt_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        fs::write(cache.path_for("abc"), b"{not json").unwrap();
        assert_eq!(cache.get("abc").unwrap(), None);
    }
}
