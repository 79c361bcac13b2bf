use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use ecgrag_core::pipeline::{Analysis, Diagnosis};
use ecgrag_core::prompt::{Exchange, Preset};
use ecgrag_core::ptbxl::EcgRecord;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// One uploaded record with its derived artifacts. `diagnosis` and
/// `exchanges` belong to `preset` and are cleared together when it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub record: EcgRecord,
    pub analysis: Analysis,
    pub preset: Preset,
    pub diagnosis: Option<Diagnosis>,
    pub exchanges: Vec<Exchange>,
}

impl SessionRecord {
    pub fn new(record: EcgRecord, analysis: Analysis, preset: Preset) -> Self {
        Self {
            id: Uuid::new_v4().to_string(),
            record,
            analysis,
            preset,
            diagnosis: None,
            exchanges: Vec::new(),
        }
    }

    pub fn select_preset(&mut self, preset: Preset) {
        if self.preset != preset {
            self.preset = preset;
            self.diagnosis = None;
            self.exchanges.clear();
        }
    }
}

pub type SharedSession = Arc<Mutex<SessionRecord>>;

/// In-memory sessions, mirrored to `<dir>/<id>.json` when a directory is set.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, SharedSession>>,
    dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            sessions: RwLock::default(),
            dir,
        }
    }

    pub fn insert(&self, session: SessionRecord) -> String {
        let id = session.id.clone();
        self.save(&session);
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        id
    }

    pub fn get(&self, id: &str) -> Option<SharedSession> {
        if let Some(s) = self.sessions.read().expect("session map poisoned").get(id) {
            return Some(s.clone());
        }
        let loaded = self.load(id)?;
        let mut map = self.sessions.write().expect("session map poisoned");
        Some(map.entry(id.to_string()).or_insert_with(|| Arc::new(Mutex::new(loaded))).clone())
    }

    fn path(&self, id: &str) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        let id = Uuid::parse_str(id).ok()?;
        Some(dir.join(format!("{id}.json")))
    }

    fn load(&self, id: &str) -> Option<SessionRecord> {
        let path = self.path(id)?;
        let text = fs::read_to_string(&path).ok()?;
        match serde_json::from_str(&text) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("{}: unreadable session: {e}", path.display());
                None
            }
        }
    }

    /// Best effort; the in-memory copy stays authoritative.
    pub fn save(&self, session: &SessionRecord) {
        let Some(path) = self.path(&session.id) else { return };
        let result = path
            .parent()
            .map_or(Ok(()), fs::create_dir_all)
            .and_then(|_| fs::write(&path, serde_json::to_vec(session).expect("session serializes")));
        if let Err(e) = result {
            log::warn!("{}: session not persisted: {e}", path.display());
        }
    }
}
