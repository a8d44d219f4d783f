use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::QoS;
use crate::security::LegacyPolicy;
use crate::transport::{ListenerConfig, ListenerKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("at least one listener is required")]
    NoListeners,
    #[error("port {0} is used by more than one listener")]
    DuplicatePort(u16),
    #[error("max_qos must be 0 or 1, got {0}")]
    BadMaxQos(u8),
    #[error("session_limit must be positive")]
    ZeroSessionLimit,
    #[error("outbound_queue must be positive")]
    ZeroQueue,
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
}

fn default_max_qos() -> u8 {
    1
}
fn default_session_limit() -> usize {
    10_000
}
fn default_true() -> bool {
    true
}
fn default_queue() -> usize {
    1024
}
fn default_max_packet() -> usize {
    256 * 1024
}

/// Broker configuration, usually loaded from a TOML file:
///
/// ```toml
/// legacy_policy = "infer-from-transport"   # or "always-relaxed"
/// max_qos = 1
/// audit_log_path = "audit.jsonl"
/// session_limit = 10000
///
/// [[listeners]]
/// kind = "plain"
/// port = 1883
///
/// [[listeners]]
/// kind = "tls"
/// port = 8883
/// cert = "certs/cert.pem"
/// key = "certs/key.pem"
/// min_version = "1.2"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerConfig {
    #[serde(default)]
    pub listeners: Vec<ListenerConfig>,
    #[serde(default)]
    pub legacy_policy: LegacyPolicy,
    #[serde(default = "default_max_qos")]
    pub max_qos: u8,
    #[serde(default)]
    pub audit_log_path: Option<PathBuf>,
    /// Also log Deliver decisions, not only denials.
    #[serde(default)]
    pub audit_deliveries: bool,
    #[serde(default = "default_session_limit")]
    pub session_limit: usize,
    /// Turning this off forwards every match, as a plain broker would. Only
    /// meant for overhead measurements.
    #[serde(default = "default_true")]
    pub enforcement: bool,
    /// Record receipt-to-write latency of forwarded messages.
    #[serde(default)]
    pub measure_forwarding: bool,
    /// Per-subscriber queue capacity; overflowing it disconnects the
    /// subscriber.
    #[serde(default = "default_queue")]
    pub outbound_queue: usize,
    #[serde(default = "default_max_packet")]
    pub max_packet_size: usize,
    /// Accept the one-byte security level property (id 0x7E) besides the
    /// user property.
    #[serde(default)]
    pub experimental_security_property: bool,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            listeners: Vec::new(),
            legacy_policy: LegacyPolicy::default(),
            max_qos: default_max_qos(),
            audit_log_path: None,
            audit_deliveries: false,
            session_limit: default_session_limit(),
            enforcement: true,
            measure_forwarding: false,
            outbound_queue: default_queue(),
            max_packet_size: default_max_packet(),
            experimental_security_property: false,
        }
    }
}

impl BrokerConfig {
    pub fn from_toml_str(s: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(s).map_err(|source| ConfigError::Parse {
            path: origin.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn max_qos(&self) -> QoS {
        if self.max_qos == 0 {
            QoS::AtMostOnce
        } else {
            QoS::AtLeastOnce
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.listeners.is_empty() {
            return Err(ConfigError::NoListeners);
        }
        let mut seen = HashSet::new();
        for l in &self.listeners {
            let port = l.port();
            if port != 0 && !seen.insert(port) {
                return Err(ConfigError::DuplicatePort(port));
            }
        }
        if self.max_qos > 1 {
            return Err(ConfigError::BadMaxQos(self.max_qos));
        }
        if self.session_limit == 0 {
            return Err(ConfigError::ZeroSessionLimit);
        }
        if self.outbound_queue == 0 {
            return Err(ConfigError::ZeroQueue);
        }
        Ok(())
    }

    pub fn has_tls_listener(&self) -> bool {
        self.listeners
            .iter()
            .any(|l| matches!(l.kind, ListenerKind::Tls(_)))
    }
}
