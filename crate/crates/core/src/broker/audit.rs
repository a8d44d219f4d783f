use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::security::{DeliveryDecision, EnforcementFlag, SecurityLevel};

/// One enforcement decision for a (message, subscriber) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub timestamp: String,
    pub publisher_id: String,
    pub subscriber_id: String,
    pub topic: String,
    #[serde(flatten)]
    pub decision: DeliveryDecision,
    pub publisher_level: SecurityLevel,
    pub publisher_flag: EnforcementFlag,
    pub subscriber_level: SecurityLevel,
    pub subscriber_flag: EnforcementFlag,
}

/// Append-only JSON lines sink. Every event is flushed before the call
/// returns; failures are counted and otherwise ignored.
#[derive(Debug)]
pub struct AuditLog {
    out: Mutex<BufWriter<File>>,
    written: AtomicU64,
    errors: AtomicU64,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
            written: AtomicU64::new(0),
            errors: AtomicU64::new(0),
        })
    }

    pub fn write(&self, event: &AuditEvent) {
        let mut line = match serde_json::to_vec(event) {
            Ok(l) => l,
            Err(_) => {
                self.errors.fetch_add(1, Ordering::Relaxed);
                return;
            }
        };
        line.push(b'\n');
        let mut out = self.out.lock();
        match out.write_all(&line).and_then(|_| out.flush()) {
            Ok(()) => {
                self.written.fetch_add(1, Ordering::Relaxed);
            }
            Err(e) => {
                self.errors.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(error = %e, "audit write failed");
            }
        }
    }

    pub fn written(&self) -> u64 {
        self.written.load(Ordering::Relaxed)
    }

    pub fn errors(&self) -> u64 {
        self.errors.load(Ordering::Relaxed)
    }
}
