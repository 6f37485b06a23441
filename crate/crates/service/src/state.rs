use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use hyperrestore::{Checkpoint, CheckpointHeader, HyperRestoreModel, Tensor};
use lru::LruCache;

/// Kernel sets and restored images are keyed by `c` rounded to this step.
pub const C_QUANTUM: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub max_upload_bytes: usize,
    pub session_ttl: Duration,
    pub cache_capacity: NonZeroUsize,
    /// Directory holding the UI bundle; a placeholder page is served when unset.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_upload_bytes: 8 << 20,
            session_ttl: Duration::from_secs(15 * 60),
            cache_capacity: NonZeroUsize::new(32).expect("nonzero"),
            static_dir: None,
        }
    }
}

pub struct LoadedModel {
    pub model: HyperRestoreModel,
    pub header: CheckpointHeader,
}

#[derive(Clone)]
pub struct Restored {
    pub png: Arc<Vec<u8>>,
    pub psnr: Option<f64>,
}

pub struct Session {
    pub image: Arc<Tensor<f32>>,
    /// Clean image for scoring responses; only set by test clients.
    pub reference: Option<Arc<Tensor<f32>>>,
    pub last_used: Instant,
    pub restored: LruCache<i64, Restored>,
}

pub struct AppState {
    pub config: ServiceConfig,
    model: RwLock<Option<Arc<LoadedModel>>>,
    sessions: Mutex<HashMap<String, Session>>,
    kernels: Mutex<LruCache<i64, Arc<Vec<Tensor<f32>>>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let cap = config.cache_capacity;
        Self {
            config,
            model: RwLock::new(None),
            sessions: Mutex::new(HashMap::new()),
            kernels: Mutex::new(LruCache::new(cap)),
        }
    }

    pub fn with_checkpoint(config: ServiceConfig, ckpt: Checkpoint) -> Self {
        let state = Self::new(config);
        state.set_checkpoint(ckpt);
        state
    }

    /// Installs a model and drops every cache built from the previous one.
    pub fn set_checkpoint(&self, ckpt: Checkpoint) {
        let header = ckpt.header();
        let loaded = Arc::new(LoadedModel { model: ckpt.model, header });
        *self.model.write().expect("model lock") = Some(loaded);
        self.kernels.lock().expect("kernel cache lock").clear();
        for s in self.sessions.lock().expect("session lock").values_mut() {
            s.restored.clear();
        }
    }

    pub fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.read().expect("model lock").clone()
    }

    pub fn insert_session(&self, image: Tensor<f32>, reference: Option<Tensor<f32>>) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session {
            image: Arc::new(image),
            reference: reference.map(Arc::new),
            last_used: Instant::now(),
            restored: LruCache::new(self.config.cache_capacity),
        };
        let mut sessions = self.sessions.lock().expect("session lock");
        self.expire(&mut sessions);
        sessions.insert(id.clone(), session);
        id
    }

    fn expire(&self, sessions: &mut HashMap<String, Session>) {
        let ttl = self.config.session_ttl;
        let now = Instant::now();
        sessions.retain(|_, s| now.duration_since(s.last_used) < ttl);
    }

    /// Touches the session and returns either a cached result or the inputs
    /// needed to compute one. `None` means the session does not exist.
    pub fn lookup(&self, id: &str, key: i64) -> Option<Result<Restored, SessionInputs>> {
        let mut sessions = self.sessions.lock().expect("session lock");
        self.expire(&mut sessions);
        let s = sessions.get_mut(id)?;
        s.last_used = Instant::now();
        Some(match s.restored.get(&key) {
            Some(hit) => Ok(hit.clone()),
            None => Err(SessionInputs { image: s.image.clone(), reference: s.reference.clone() }),
        })
    }

    /// First writer wins so every response for a key carries the same bytes.
    pub fn store(&self, id: &str, key: i64, restored: Restored) -> Restored {
        let mut sessions = self.sessions.lock().expect("session lock");
        match sessions.get_mut(id) {
            Some(s) => s.restored.get_or_insert(key, || restored).clone(),
            None => restored,
        }
    }

    pub fn session_count(&self) -> usize {
        let mut sessions = self.sessions.lock().expect("session lock");
        self.expire(&mut sessions);
        sessions.len()
    }

    pub fn kernels_for(&self, model: &HyperRestoreModel, key: i64) -> hyperrestore::Result<Arc<Vec<Tensor<f32>>>> {
        if let Some(k) = self.kernels.lock().expect("kernel cache lock").get(&key) {
            return Ok(k.clone());
        }
        let generated = Arc::new(model.hypernet.generate_network_weights(dequantize(key))?);
        let mut cache = self.kernels.lock().expect("kernel cache lock");
        Ok(cache.get_or_insert(key, || generated).clone())
    }

    pub fn cached_kernel_sets(&self) -> usize {
        self.kernels.lock().expect("kernel cache lock").len()
    }
}

pub struct SessionInputs {
    pub image: Arc<Tensor<f32>>,
    pub reference: Option<Arc<Tensor<f32>>>,
}

pub fn quantize(c: f64) -> i64 {
    (c / C_QUANTUM).round() as i64
}

pub fn dequantize(key: i64) -> f64 {
    key as f64 * C_QUANTUM
}
