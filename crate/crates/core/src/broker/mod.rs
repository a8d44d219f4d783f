//! Session lifecycle and the dispatch path that applies the delivery decision
//! to every PUBLISH.
//!
//! The `handle_*` methods are synchronous and socket free; [`connection`]
//! drives them from a byte stream.

mod audit;
mod config;
mod connection;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime};

use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::{mpsc, Notify};
use tokio::task::JoinHandle;

use crate::codec::properties::{
    ASSIGNED_CLIENT_IDENTIFIER, EXPERIMENTAL_SECURITY_LEVEL, MAXIMUM_QOS, RETAIN_AVAILABLE,
    SHARED_SUBSCRIPTION_AVAILABLE, SUBSCRIPTION_IDENTIFIER, SUBSCRIPTION_IDENTIFIER_AVAILABLE,
    TOPIC_ALIAS,
};
use crate::codec::{
    reason, Connack, Connect, Properties, Property, PropertyValue, ProtocolVersion, Puback,
    Publish, QoS, Suback, Subscribe, Unsuback, Unsubscribe,
};
use crate::security::{
    decide_delivery, derive_profile, parse_security_property, ClientSecurityProfile,
    DeliveryDecision, DenyReason, FlagSource,
};
use crate::topic::{validate_topic_filter, validate_topic_name, Subscription, SubscriptionTable};
use crate::transport::{start_listeners, ConnectionInfo, Listeners, TransportError, TransportKind};

pub use audit::{AuditEvent, AuditLog};
pub use config::{BrokerConfig, ConfigError};

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("cannot open audit log: {0}")]
    Audit(std::io::Error),
}

/// Observes every byte written to a client connection. Used by tests and
/// diagnostics; must not block.
pub trait OutboundTap: Send + Sync {
    fn on_write(&self, conn: &ConnectionInfo, bytes: &[u8]);
}

#[derive(Debug, Default)]
pub struct Metrics {
    pub publishes_received: AtomicU64,
    pub deliveries: AtomicU64,
    pub denials: AtomicU64,
    pub refused_publishes: AtomicU64,
    pub queue_overflows: AtomicU64,
    pub takeovers: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MetricsSnapshot {
    pub publishes_received: u64,
    pub deliveries: u64,
    pub denials: u64,
    pub refused_publishes: u64,
    pub queue_overflows: u64,
    pub takeovers: u64,
    pub audit_written: u64,
    pub audit_errors: u64,
}

/// Out-of-band request to close a session, carrying the v5 reason code.
#[derive(Debug, Default)]
pub(crate) struct Kick {
    notify: Notify,
    reason: Mutex<Option<u8>>,
}

impl Kick {
    fn trigger(&self, reason: u8) {
        let mut r = self.reason.lock();
        if r.is_none() {
            *r = Some(reason);
        }
        self.notify.notify_one();
    }

    fn reason(&self) -> Option<u8> {
        *self.reason.lock()
    }
}

/// A message queued for one subscriber.
#[derive(Debug, Clone)]
pub struct Forward {
    pub publish: Arc<Publish>,
    pub qos: QoS,
    /// Set when forwarding latency is being measured.
    pub received_at: Option<Instant>,
}

struct SessionEntry {
    session_id: u64,
    profile: ClientSecurityProfile,
    outbound: mpsc::Sender<Forward>,
    kick: Arc<Kick>,
}

/// State owned by one connection after a successful CONNECT.
#[derive(Debug)]
pub struct ClientSession {
    pub client_id: String,
    pub session_id: u64,
    pub protocol_version: ProtocolVersion,
    pub profile: ClientSecurityProfile,
    pub keep_alive_s: u16,
    pub connected_at: SystemTime,
    outbound: mpsc::Receiver<Forward>,
    kick: Arc<Kick>,
}

impl ClientSession {
    /// Next queued delivery, if any, without waiting.
    pub fn try_next_forward(&mut self) -> Option<Forward> {
        self.outbound.try_recv().ok()
    }

    pub async fn next_forward(&mut self) -> Option<Forward> {
        self.outbound.recv().await
    }

    /// Set once the broker asked this session to close.
    pub fn kicked(&self) -> Option<u8> {
        self.kick.reason()
    }

    /// Silence allowed before the session is dropped, or `None` when keep
    /// alive is disabled.
    pub fn keepalive_window(&self) -> Option<Duration> {
        keepalive_window(self.keep_alive_s)
    }
}

pub fn keepalive_window(keep_alive_s: u16) -> Option<Duration> {
    match keep_alive_s {
        0 => None,
        s => Some(Duration::from_millis(u64::from(s) * 1500)),
    }
}

#[derive(Debug)]
pub enum ConnectOutcome {
    Accepted {
        connack: Connack,
        session: ClientSession,
    },
    Rejected {
        connack: Connack,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PublishOutcome {
    pub puback: Option<Puback>,
    pub delivered: Vec<String>,
    pub denied: Vec<(String, DenyReason)>,
    /// The message carried an unusable security property and was dropped.
    pub refused: bool,
}

/// The client broke the protocol; the connection is closed with this reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("protocol violation, reason code {reason_code:#04x}")]
pub struct ProtocolViolation {
    pub reason_code: u8,
}

struct Shared {
    config: BrokerConfig,
    enforcement: AtomicBool,
    sessions: RwLock<HashMap<String, SessionEntry>>,
    subscriptions: RwLock<SubscriptionTable>,
    audit: Option<AuditLog>,
    metrics: Metrics,
    next_session_id: AtomicU64,
    forward_samples: Mutex<Vec<Duration>>,
    tap: RwLock<Option<Arc<dyn OutboundTap>>>,
}

#[derive(Clone)]
pub struct Broker {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker")
            .field("sessions", &self.session_count())
            .finish_non_exhaustive()
    }
}

impl Broker {
    /// Creates the broker state. Listeners are not started; see
    /// [`Broker::start`].
    pub fn new(config: BrokerConfig) -> Result<Self, BrokerError> {
        let audit = match &config.audit_log_path {
            Some(p) => Some(AuditLog::open(p).map_err(BrokerError::Audit)?),
            None => None,
        };
        Ok(Self {
            shared: Arc::new(Shared {
                enforcement: AtomicBool::new(config.enforcement),
                config,
                sessions: RwLock::new(HashMap::new()),
                subscriptions: RwLock::new(SubscriptionTable::new()),
                audit,
                metrics: Metrics::default(),
                next_session_id: AtomicU64::new(1),
                forward_samples: Mutex::new(Vec::new()),
                tap: RwLock::new(None),
            }),
        })
    }

    /// Validates the configuration, binds every listener and serves
    /// connections until the returned handle is dropped.
    pub async fn start(config: BrokerConfig) -> Result<RunningBroker, BrokerError> {
        config.validate()?;
        let broker = Broker::new(config)?;
        let mut listeners = start_listeners(&broker.config().listeners).await?;
        let mut incoming = std::mem::replace(&mut listeners.incoming, mpsc::channel(1).1);
        let b = broker.clone();
        let task = tokio::spawn(async move {
            while let Some(acc) = incoming.recv().await {
                let b = b.clone();
                tokio::spawn(async move { b.serve(acc.info, acc.stream).await });
            }
        });
        Ok(RunningBroker {
            broker,
            listeners,
            task,
        })
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.shared.config
    }

    pub fn set_enforcement(&self, on: bool) {
        self.shared.enforcement.store(on, Ordering::SeqCst);
    }

    pub fn enforcement_enabled(&self) -> bool {
        self.shared.enforcement.load(Ordering::SeqCst)
    }

    pub fn set_outbound_tap(&self, tap: Option<Arc<dyn OutboundTap>>) {
        *self.shared.tap.write() = tap;
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let m = &self.shared.metrics;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        MetricsSnapshot {
            publishes_received: get(&m.publishes_received),
            deliveries: get(&m.deliveries),
            denials: get(&m.denials),
            refused_publishes: get(&m.refused_publishes),
            queue_overflows: get(&m.queue_overflows),
            takeovers: get(&m.takeovers),
            audit_written: self.shared.audit.as_ref().map_or(0, |a| a.written()),
            audit_errors: self.shared.audit.as_ref().map_or(0, |a| a.errors()),
        }
    }

    pub fn session_count(&self) -> usize {
        self.shared.sessions.read().len()
    }

    pub fn is_connected(&self, client_id: &str) -> bool {
        self.shared.sessions.read().contains_key(client_id)
    }

    pub fn subscriptions(&self) -> SubscriptionTable {
        self.shared.subscriptions.read().clone()
    }

    /// Drains the recorded receipt-to-write latencies.
    pub fn take_forward_samples(&self) -> Vec<Duration> {
        std::mem::take(&mut *self.shared.forward_samples.lock())
    }

    pub(crate) fn record_forward_latency(&self, d: Duration) {
        self.shared.forward_samples.lock().push(d);
    }

    pub(crate) fn tap(&self) -> Option<Arc<dyn OutboundTap>> {
        self.shared.tap.read().clone()
    }

    pub fn handle_connect(&self, info: &ConnectionInfo, pkt: Connect) -> ConnectOutcome {
        let version = pkt.protocol_version;
        let v5 = version == ProtocolVersion::V5;
        let reject = |code: u8| ConnectOutcome::Rejected {
            connack: Connack {
                session_present: false,
                reason_code: code,
                properties: Properties::new(),
            },
        };

        let explicit = if v5 {
            match parse_security_property(&pkt.properties) {
                Ok(f) => f,
                Err(e) => {
                    tracing::info!(client = %pkt.client_id, error = %e, "CONNECT refused");
                    return reject(reason::IMPLEMENTATION_SPECIFIC_ERROR);
                }
            }
        } else {
            None
        };

        let session_id = self.shared.next_session_id.fetch_add(1, Ordering::Relaxed);
        let mut assigned = None;
        let client_id = if pkt.client_id.is_empty() {
            if !v5 && !pkt.clean_start {
                return reject(reason::v311::IDENTIFIER_REJECTED);
            }
            let id = format!("mixmq-{session_id}");
            if v5 {
                assigned = Some(id.clone());
            }
            id
        } else {
            pkt.client_id
        };

        let profile = derive_profile(
            info.security_level,
            explicit,
            self.shared.config.legacy_policy,
        );
        if profile.is_inert_enforce() {
            tracing::warn!(
                client = %client_id,
                "non-secured client asked to enforce; this has no effect"
            );
        }

        let (tx, rx) = mpsc::channel(self.shared.config.outbound_queue);
        let kick = Arc::new(Kick::default());
        let replaced = {
            let mut sessions = self.shared.sessions.write();
            if !sessions.contains_key(&client_id)
                && sessions.len() >= self.shared.config.session_limit
            {
                drop(sessions);
                return reject(if v5 {
                    reason::QUOTA_EXCEEDED
                } else {
                    reason::v311::SERVER_UNAVAILABLE
                });
            }
            sessions.insert(
                client_id.clone(),
                SessionEntry {
                    session_id,
                    profile,
                    outbound: tx,
                    kick: kick.clone(),
                },
            )
        };
        if let Some(old) = replaced {
            old.kick.trigger(reason::SESSION_TAKEN_OVER);
            self.shared.subscriptions.write().remove_client(&client_id);
            self.shared.metrics.takeovers.fetch_add(1, Ordering::Relaxed);
        }

        let mut properties = Properties::new();
        if v5 {
            let max_qos = self.shared.config.max_qos() as u8;
            if max_qos < 2 {
                properties.push(Property::new(MAXIMUM_QOS, PropertyValue::Byte(max_qos)));
            }
            properties.push(Property::new(RETAIN_AVAILABLE, PropertyValue::Byte(0)));
            properties.push(Property::new(
                SHARED_SUBSCRIPTION_AVAILABLE,
                PropertyValue::Byte(0),
            ));
            properties.push(Property::new(
                SUBSCRIPTION_IDENTIFIER_AVAILABLE,
                PropertyValue::Byte(0),
            ));
            if let Some(id) = assigned {
                properties.push(Property::new(
                    ASSIGNED_CLIENT_IDENTIFIER,
                    PropertyValue::Utf8(id),
                ));
            }
        }
        tracing::debug!(
            client = %client_id,
            level = %profile.transport_level(),
            flag = %profile.flag(),
            "session started"
        );
        ConnectOutcome::Accepted {
            connack: Connack {
                session_present: false,
                reason_code: reason::SUCCESS,
                properties,
            },
            session: ClientSession {
                client_id,
                session_id,
                protocol_version: version,
                profile,
                keep_alive_s: pkt.keep_alive_s,
                connected_at: SystemTime::now(),
                outbound: rx,
                kick,
            },
        }
    }

    fn is_current(&self, session: &ClientSession) -> bool {
        self.shared
            .sessions
            .read()
            .get(&session.client_id)
            .is_some_and(|e| e.session_id == session.session_id)
    }

    pub fn handle_subscribe(&self, session: &ClientSession, pkt: Subscribe) -> Suback {
        let v5 = session.protocol_version == ProtocolVersion::V5;
        let filter_invalid = if v5 {
            reason::TOPIC_FILTER_INVALID
        } else {
            reason::v311::SUBSCRIBE_FAILURE
        };
        let override_flag = if v5 {
            match parse_security_property(&pkt.properties) {
                Ok(f) => Ok(f),
                Err(e) => {
                    tracing::info!(client = %session.client_id, error = %e, "SUBSCRIBE refused");
                    Err(reason::IMPLEMENTATION_SPECIFIC_ERROR)
                }
            }
        } else {
            Ok(None)
        };
        let current = self.is_current(session);
        let max_qos = self.shared.config.max_qos();
        let mut codes = Vec::with_capacity(pkt.filters.len());
        for f in pkt.filters {
            let code = match (&override_flag, validate_topic_filter(&f.filter)) {
                (Err(code), _) => *code,
                (_, Err(_)) => filter_invalid,
                (Ok(_), Ok(_)) if f.filter.starts_with("$share/") => {
                    if v5 {
                        reason::SHARED_SUBSCRIPTIONS_NOT_SUPPORTED
                    } else {
                        reason::v311::SUBSCRIBE_FAILURE
                    }
                }
                (Ok(flag), Ok(filter)) => {
                    let granted = f.qos.min(max_qos);
                    if current {
                        self.shared.subscriptions.write().subscribe(Subscription {
                            client_id: session.client_id.clone(),
                            filter,
                            granted_qos: granted,
                            override_flag: *flag,
                        });
                    }
                    granted as u8
                }
            };
            codes.push(code);
        }
        Suback {
            packet_id: pkt.packet_id,
            properties: Properties::new(),
            reason_codes: codes,
        }
    }

    pub fn handle_unsubscribe(&self, session: &ClientSession, pkt: Unsubscribe) -> Unsuback {
        let v5 = session.protocol_version == ProtocolVersion::V5;
        let mut codes = Vec::new();
        for f in pkt.filters {
            let code = match validate_topic_filter(&f) {
                Err(_) => reason::TOPIC_FILTER_INVALID,
                Ok(filter) => {
                    match self
                        .shared
                        .subscriptions
                        .write()
                        .unsubscribe(&session.client_id, &filter)
                    {
                        Some(_) => reason::SUCCESS,
                        None => reason::NO_SUBSCRIPTION_EXISTED,
                    }
                }
            };
            codes.push(code);
        }
        Unsuback {
            packet_id: pkt.packet_id,
            properties: Properties::new(),
            reason_codes: if v5 { codes } else { Vec::new() },
        }
    }

    /// Applies the delivery decision to every matching subscriber and queues
    /// the allowed deliveries. `received_at` is the moment the packet came
    /// off the wire.
    pub fn handle_publish(
        &self,
        session: &ClientSession,
        pkt: Publish,
        received_at: Instant,
    ) -> Result<PublishOutcome, ProtocolViolation> {
        let v5 = session.protocol_version == ProtocolVersion::V5;
        let violation = |reason_code| Err(ProtocolViolation { reason_code });
        let topic = match validate_topic_name(&pkt.topic) {
            Ok(t) => t,
            Err(_) => return violation(reason::TOPIC_NAME_INVALID),
        };
        if pkt.qos > self.shared.config.max_qos() {
            return violation(reason::QOS_NOT_SUPPORTED);
        }
        if v5 && pkt.retain {
            return violation(reason::RETAIN_NOT_SUPPORTED);
        }
        if pkt.properties.get(TOPIC_ALIAS).is_some() {
            return violation(reason::TOPIC_ALIAS_INVALID);
        }
        self.shared
            .metrics
            .publishes_received
            .fetch_add(1, Ordering::Relaxed);

        let puback = |code: u8| {
            pkt.packet_id.map(|packet_id| Puback {
                packet_id,
                reason_code: code,
                properties: Properties::new(),
            })
        };

        // With enforcement off the broker behaves like a plain one and does
        // not look at the property at all.
        let enforce = self.enforcement_enabled();
        let parsed = if enforce {
            parse_security_property(&pkt.properties)
        } else {
            Ok(None)
        };
        let publisher = match parsed {
            Ok(Some(flag)) => session.profile.with_flag(flag, FlagSource::ExplicitMessage),
            Ok(None) => session.profile,
            Err(e) => {
                tracing::info!(client = %session.client_id, error = %e, "PUBLISH refused");
                self.shared
                    .metrics
                    .refused_publishes
                    .fetch_add(1, Ordering::Relaxed);
                return Ok(PublishOutcome {
                    puback: puback(reason::IMPLEMENTATION_SPECIFIC_ERROR),
                    refused: true,
                    ..Default::default()
                });
            }
        };

        let measure = self.shared.config.measure_forwarding;
        let audit_all = self.shared.config.audit_deliveries;
        let forwarded = Arc::new(Publish {
            dup: false,
            qos: pkt.qos,
            retain: false,
            topic: pkt.topic,
            packet_id: None,
            properties: pkt
                .properties
                .iter()
                .filter(|p| {
                    !matches!(p.id, SUBSCRIPTION_IDENTIFIER | EXPERIMENTAL_SECURITY_LEVEL)
                })
                .cloned()
                .collect(),
            payload: pkt.payload,
        });

        let mut outcome = PublishOutcome {
            puback: puback(reason::SUCCESS),
            ..Default::default()
        };
        let mut events = Vec::new();
        let mut overflowed = Vec::new();
        {
            // Both read locks are held together so the matched set and the
            // subscriber profiles come from the same instant.
            let table = self.shared.subscriptions.read();
            let sessions = self.shared.sessions.read();
            for sub in table.match_subscribers(&topic) {
                let Some(entry) = sessions.get(&sub.client_id) else {
                    continue;
                };
                let subscriber = match sub.override_flag {
                    Some(flag) => entry.profile.with_flag(flag, FlagSource::ExplicitMessage),
                    None => entry.profile,
                };
                let decision = if enforce {
                    decide_delivery(&publisher, &subscriber)
                } else {
                    DeliveryDecision::Deliver
                };
                if let DeliveryDecision::Deny(r) = decision {
                    outcome.denied.push((sub.client_id.clone(), r));
                } else {
                    let fwd = Forward {
                        publish: forwarded.clone(),
                        qos: forwarded.qos.min(sub.granted_qos),
                        received_at: measure.then_some(received_at),
                    };
                    match entry.outbound.try_send(fwd) {
                        Ok(()) => outcome.delivered.push(sub.client_id.clone()),
                        Err(mpsc::error::TrySendError::Full(_)) => {
                            overflowed.push(entry.kick.clone());
                        }
                        Err(mpsc::error::TrySendError::Closed(_)) => {}
                    }
                }
                if self.shared.audit.is_some() && (audit_all || !decision.is_deliver()) {
                    events.push(AuditEvent {
                        timestamp: chrono::Utc::now()
                            .to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
                        publisher_id: session.client_id.clone(),
                        subscriber_id: sub.client_id.clone(),
                        topic: topic.as_str().to_owned(),
                        decision,
                        publisher_level: publisher.transport_level(),
                        publisher_flag: publisher.flag(),
                        subscriber_level: subscriber.transport_level(),
                        subscriber_flag: subscriber.flag(),
                    });
                }
            }
        }
        let m = &self.shared.metrics;
        m.deliveries
            .fetch_add(outcome.delivered.len() as u64, Ordering::Relaxed);
        m.denials
            .fetch_add(outcome.denied.len() as u64, Ordering::Relaxed);
        m.queue_overflows
            .fetch_add(overflowed.len() as u64, Ordering::Relaxed);
        for k in overflowed {
            k.trigger(reason::QUOTA_EXCEEDED);
        }
        if let Some(audit) = &self.shared.audit {
            for e in &events {
                audit.write(e);
            }
        }
        Ok(outcome)
    }

    /// Ends a session: its subscriptions go away. A session that was already
    /// taken over leaves its successor untouched.
    pub fn handle_disconnect(&self, session: &ClientSession) {
        let removed = {
            let mut sessions = self.shared.sessions.write();
            match sessions.get(&session.client_id) {
                Some(e) if e.session_id == session.session_id => {
                    sessions.remove(&session.client_id);
                    true
                }
                _ => false,
            }
        };
        if removed {
            self.shared
                .subscriptions
                .write()
                .remove_client(&session.client_id);
            tracing::debug!(client = %session.client_id, "session ended");
        }
    }

    /// Same as a disconnect; kept separate for log clarity.
    pub fn expire_keepalive(&self, session: &ClientSession) {
        tracing::info!(client = %session.client_id, "keep alive expired");
        self.handle_disconnect(session);
    }
}

/// A broker serving its listeners. Dropping it stops accepting connections.
pub struct RunningBroker {
    broker: Broker,
    listeners: Listeners,
    task: JoinHandle<()>,
}

impl RunningBroker {
    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn addr(&self, kind: TransportKind) -> Option<SocketAddr> {
        self.listeners.addr(kind)
    }

    pub fn handshake_failures(&self) -> u64 {
        self.listeners.stats.handshake_failures()
    }

    pub fn shutdown(mut self) {
        self.listeners.stop();
        self.task.abort();
    }

    /// Waits until the accept loop ends, which only happens on shutdown.
    pub async fn wait(&mut self) {
        let _ = (&mut self.task).await;
    }
}

impl Drop for RunningBroker {
    fn drop(&mut self) {
        self.task.abort();
    }
}
