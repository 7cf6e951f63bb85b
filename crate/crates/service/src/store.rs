use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use chatir_core::dialogue::{Author, Conversation, Turn};
use chatir_core::{Error, Result};
use tokio::sync::Mutex;

use crate::log::{LogRecord, TurnRecord};

#[derive(Debug)]
pub struct Session {
    pub created: u64,
    /// Held for the whole turn, so turns of one session apply in order.
    pub conversation: Mutex<Conversation>,
}

/// In-memory sessions with a lifetime measured from creation.
#[derive(Debug)]
pub struct SessionStore {
    ttl_ms: u64,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl SessionStore {
    pub fn new(ttl_ms: u64) -> Self {
        Self {
            ttl_ms,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn insert(&self, id: &str, created: u64) -> Arc<Session> {
        let session = Arc::new(Session {
            created,
            conversation: Mutex::new(Conversation::new(id)),
        });
        let mut map = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        map.retain(|_, s| live(self.ttl_ms, s, created));
        map.insert(id.to_string(), Arc::clone(&session));
        session
    }

    pub fn get(&self, id: &str, now: u64) -> Option<Arc<Session>> {
        let map = self.sessions.read().unwrap_or_else(|e| e.into_inner());
        map.get(id).filter(|s| live(self.ttl_ms, s, now)).cloned()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).contains_key(id)
    }

    /// Ids of unexpired sessions, sorted.
    pub fn ids(&self, now: u64) -> Vec<String> {
        let map = self.sessions.read().unwrap_or_else(|e| e.into_inner());
        let mut ids: Vec<String> = map.iter().filter(|(_, s)| live(self.ttl_ms, s, now)).map(|(k, _)| k.clone()).collect();
        ids.sort();
        ids
    }

    /// Rebuilds sessions from log records, dropping those expired at `now`.
    pub fn replay(records: &[LogRecord], ttl_ms: u64, now: u64) -> Result<Self> {
        let mut convs: HashMap<String, (u64, Conversation)> = HashMap::new();
        for (i, rec) in records.iter().enumerate() {
            match rec {
                LogRecord::Session(s) => {
                    convs.insert(s.session.clone(), (s.timestamp, Conversation::new(s.session.as_str())));
                }
                LogRecord::Turn(t) => {
                    let (_, conv) = convs.get_mut(&t.session).ok_or_else(|| Error::InvalidRecord {
                        line: i + 1,
                        reason: format!("turn for unknown session {}", t.session),
                    })?;
                    if t.turn_index * 2 != conv.turns.len() {
                        return Err(Error::InvalidRecord {
                            line: i + 1,
                            reason: format!("turn {} of session {} is out of order", t.turn_index, t.session),
                        });
                    }
                    conv.turns.extend(record_turns(t));
                }
            }
        }
        let store = Self::new(ttl_ms);
        {
            let mut map = store.sessions.write().unwrap_or_else(|e| e.into_inner());
            for (id, (created, conv)) in convs {
                let s = Session {
                    created,
                    conversation: Mutex::new(conv),
                };
                if live(ttl_ms, &s, now) {
                    map.insert(id, Arc::new(s));
                }
            }
        }
        Ok(store)
    }
}

fn live(ttl_ms: u64, s: &Session, now: u64) -> bool {
    now < s.created.saturating_add(ttl_ms)
}

/// The user and agent turns a logged exchange stands for.
pub fn record_turns(t: &TurnRecord) -> [Turn; 2] {
    [
        Turn {
            author: Author::User,
            text: t.user_text.clone(),
            timestamp: t.timestamp,
            emotion: t.emotion,
            safety: t.safety.clone(),
            source: None,
        },
        Turn {
            author: Author::Agent,
            text: t.response.clone(),
            timestamp: t.timestamp,
            emotion: None,
            safety: None,
            source: Some(t.source),
        },
    ]
}
