//! Plain TCP and TLS listeners. Every accepted connection is classified into
//! a [`SecurityLevel`] before a single MQTT byte is read.

mod cert;
mod tls;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_rustls::TlsAcceptor;

use crate::security::SecurityLevel;

pub use cert::{generate_self_signed, write_self_signed, SelfSigned, SelfSignedFiles};
pub use tls::{build_server_config, cipher_suite_names};

pub const DEFAULT_PLAIN_PORT: u16 = 1883;
pub const DEFAULT_TLS_PORT: u16 = 8883;

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("failed to bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("cannot read {path}: {reason}")]
    Pem { path: PathBuf, reason: String },
    #[error("unknown ciphersuite {0:?}")]
    UnknownCipherSuite(String),
    #[error("no configured ciphersuite is usable with the allowed protocol versions")]
    NoUsableCipherSuite,
    #[error("unsupported minimum TLS version {0:?} (expected \"1.2\" or \"1.3\")")]
    BadMinVersion(String),
    #[error("TLS configuration: {0}")]
    Tls(#[from] rustls::Error),
    #[error("client verifier: {0}")]
    ClientVerifier(String),
    #[error("certificate generation: {0}")]
    CertGen(#[from] rcgen::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TlsMinVersion {
    #[default]
    #[serde(rename = "1.2")]
    Tls12,
    #[serde(rename = "1.3")]
    Tls13,
}

impl std::str::FromStr for TlsMinVersion {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1.2" => Ok(TlsMinVersion::Tls12),
            "1.3" => Ok(TlsMinVersion::Tls13),
            other => Err(TransportError::BadMinVersion(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsSettings {
    /// PEM certificate chain, leaf first.
    pub cert: PathBuf,
    /// PEM private key (PKCS#8, PKCS#1 or SEC1).
    pub key: PathBuf,
    #[serde(default)]
    pub min_version: TlsMinVersion,
    /// IANA-style suite names such as `TLS13_AES_128_GCM_SHA256`. `None`
    /// keeps the provider defaults.
    #[serde(default)]
    pub ciphersuites: Option<Vec<String>>,
    /// When set, clients must present a certificate signed by this CA. The
    /// certificate identity is not mapped to anything.
    #[serde(default)]
    pub client_ca: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ListenerKind {
    Plain,
    Tls(TlsSettings),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Plain,
    Tls,
}

impl ListenerKind {
    pub fn transport(&self) -> TransportKind {
        match self {
            ListenerKind::Plain => TransportKind::Plain,
            ListenerKind::Tls(_) => TransportKind::Tls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListenerConfig {
    #[serde(flatten)]
    pub kind: ListenerKind,
    #[serde(default = "default_address")]
    pub address: IpAddr,
    /// Defaults to 1883 for plain and 8883 for TLS. Port 0 asks the OS for
    /// an ephemeral port.
    #[serde(default)]
    pub port: Option<u16>,
}

fn default_address() -> IpAddr {
    IpAddr::V4(Ipv4Addr::UNSPECIFIED)
}

impl ListenerConfig {
    pub fn plain(address: IpAddr, port: u16) -> Self {
        Self {
            kind: ListenerKind::Plain,
            address,
            port: Some(port),
        }
    }

    pub fn tls(address: IpAddr, port: u16, cert: PathBuf, key: PathBuf) -> Self {
        Self {
            kind: ListenerKind::Tls(TlsSettings {
                cert,
                key,
                min_version: TlsMinVersion::default(),
                ciphersuites: None,
                client_ca: None,
            }),
            address,
            port: Some(port),
        }
    }

    pub fn port(&self) -> u16 {
        self.port.unwrap_or(match self.kind {
            ListenerKind::Plain => DEFAULT_PLAIN_PORT,
            ListenerKind::Tls(_) => DEFAULT_TLS_PORT,
        })
    }

    pub fn bind_addr(&self) -> SocketAddr {
        SocketAddr::new(self.address, self.port())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TlsInfo {
    pub version: String,
    pub ciphersuite: String,
}

/// Facts about an accepted connection, fixed for its lifetime.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConnectionInfo {
    pub id: u64,
    pub security_level: SecurityLevel,
    pub peer: SocketAddr,
    pub local: SocketAddr,
    pub tls: Option<TlsInfo>,
    pub accepted_at: SystemTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeOutcome {
    /// Plain listener, nothing to negotiate.
    NotApplicable,
    Completed(TlsInfo),
    Failed,
}

/// Maps a listener kind and its handshake outcome to a security level.
/// `None` means the connection must not reach the broker.
pub fn classify(kind: TransportKind, handshake: &HandshakeOutcome) -> Option<SecurityLevel> {
    match (kind, handshake) {
        (TransportKind::Plain, HandshakeOutcome::NotApplicable) => Some(SecurityLevel::NonSecured),
        (TransportKind::Tls, HandshakeOutcome::Completed(_)) => Some(SecurityLevel::Secured),
        _ => None,
    }
}

pub trait ByteStream: AsyncRead + AsyncWrite + Unpin + Send {}
impl<T: AsyncRead + AsyncWrite + Unpin + Send> ByteStream for T {}

pub type BoxStream = Box<dyn ByteStream>;

pub struct Accepted {
    pub info: ConnectionInfo,
    pub stream: BoxStream,
}

impl std::fmt::Debug for Accepted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Accepted").field("info", &self.info).finish()
    }
}

#[derive(Debug, Default)]
pub struct TransportStats {
    pub accepted: AtomicU64,
    pub handshake_failures: AtomicU64,
}

impl TransportStats {
    pub fn handshake_failures(&self) -> u64 {
        self.handshake_failures.load(Ordering::Relaxed)
    }

    pub fn accepted(&self) -> u64 {
        self.accepted.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundListener {
    pub kind: TransportKind,
    pub addr: SocketAddr,
}

/// Running listeners. Dropping this stops accepting.
pub struct Listeners {
    pub bound: Vec<BoundListener>,
    pub incoming: mpsc::Receiver<Accepted>,
    pub stats: Arc<TransportStats>,
    tasks: Vec<JoinHandle<()>>,
}

impl Listeners {
    pub fn addr(&self, kind: TransportKind) -> Option<SocketAddr> {
        self.bound.iter().find(|b| b.kind == kind).map(|b| b.addr)
    }

    pub fn stop(&mut self) {
        for t in self.tasks.drain(..) {
            t.abort();
        }
    }
}

impl Drop for Listeners {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds every listener and starts accepting. Any bind or TLS configuration
/// error aborts the whole startup.
pub async fn start_listeners(configs: &[ListenerConfig]) -> Result<Listeners, TransportError> {
    let (tx, rx) = mpsc::channel(256);
    let stats = Arc::new(TransportStats::default());
    let next_id = Arc::new(AtomicU64::new(1));
    let mut prepared = Vec::new();
    for cfg in configs {
        let acceptor = match &cfg.kind {
            ListenerKind::Plain => None,
            ListenerKind::Tls(settings) => {
                Some(TlsAcceptor::from(build_server_config(settings)?))
            }
        };
        let addr = cfg.bind_addr();
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|source| TransportError::Bind { addr, source })?;
        prepared.push((cfg.kind.transport(), listener, acceptor));
    }

    let mut bound = Vec::new();
    let mut tasks = Vec::new();
    for (kind, listener, acceptor) in prepared {
        let addr = listener.local_addr()?;
        tracing::info!(?kind, %addr, "listening");
        bound.push(BoundListener { kind, addr });
        tasks.push(tokio::spawn(accept_loop(
            listener,
            acceptor,
            tx.clone(),
            stats.clone(),
            next_id.clone(),
        )));
    }
    Ok(Listeners {
        bound,
        incoming: rx,
        stats,
        tasks,
    })
}

async fn accept_loop(
    listener: TcpListener,
    acceptor: Option<TlsAcceptor>,
    tx: mpsc::Sender<Accepted>,
    stats: Arc<TransportStats>,
    next_id: Arc<AtomicU64>,
) {
    loop {
        let (tcp, peer) = match listener.accept().await {
            Ok(x) => x,
            Err(e) => {
                tracing::warn!(error = %e, "accept failed");
                tokio::time::sleep(Duration::from_millis(50)).await;
                continue;
            }
        };
        let _ = tcp.set_nodelay(true);
        let tx = tx.clone();
        let stats = stats.clone();
        let next_id = next_id.clone();
        let acceptor = acceptor.clone();
        tokio::spawn(async move {
            let local = match tcp.local_addr() {
                Ok(a) => a,
                Err(_) => return,
            };
            let accepted_at = SystemTime::now();
            let (kind, outcome, stream) = match acceptor {
                None => (
                    TransportKind::Plain,
                    HandshakeOutcome::NotApplicable,
                    Some(Box::new(tcp) as BoxStream),
                ),
                Some(acc) => {
                    let (outcome, stream) = tls_handshake(&acc, tcp).await;
                    (TransportKind::Tls, outcome, stream)
                }
            };
            let (Some(level), Some(stream)) = (classify(kind, &outcome), stream) else {
                stats.handshake_failures.fetch_add(1, Ordering::Relaxed);
                tracing::debug!(%peer, "handshake failed, connection dropped");
                return;
            };
            stats.accepted.fetch_add(1, Ordering::Relaxed);
            let info = ConnectionInfo {
                id: next_id.fetch_add(1, Ordering::Relaxed),
                security_level: level,
                peer,
                local,
                tls: match outcome {
                    HandshakeOutcome::Completed(t) => Some(t),
                    _ => None,
                },
                accepted_at,
            };
            let _ = tx.send(Accepted { info, stream }).await;
        });
    }
}

async fn tls_handshake(acc: &TlsAcceptor, tcp: TcpStream) -> (HandshakeOutcome, Option<BoxStream>) {
    match tokio::time::timeout(HANDSHAKE_TIMEOUT, acc.accept(tcp)).await {
        Ok(Ok(stream)) => {
            let (_, conn) = stream.get_ref();
            let info = TlsInfo {
                version: conn
                    .protocol_version()
                    .map(|v| format!("{v:?}"))
                    .unwrap_or_default(),
                ciphersuite: conn
                    .negotiated_cipher_suite()
                    .map(|s| format!("{:?}", s.suite()))
                    .unwrap_or_default(),
            };
            (HandshakeOutcome::Completed(info), Some(Box::new(stream)))
        }
        _ => (HandshakeOutcome::Failed, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_table() {
        let done = HandshakeOutcome::Completed(TlsInfo {
            version: "TLSv1_3".into(),
            ciphersuite: "x".into(),
        });
        assert_eq!(classify(TransportKind::Tls, &done), Some(SecurityLevel::Secured));
        assert_eq!(
            classify(TransportKind::Plain, &HandshakeOutcome::NotApplicable),
            Some(SecurityLevel::NonSecured)
        );
        assert_eq!(classify(TransportKind::Tls, &HandshakeOutcome::Failed), None);
        assert_eq!(classify(TransportKind::Tls, &HandshakeOutcome::NotApplicable), None);
    }

    #[test]
    fn default_ports() {
        let p: ListenerConfig = toml::from_str("kind = \"plain\"").unwrap();
        assert_eq!(p.port(), 1883);
        let t: ListenerConfig =
            toml::from_str("kind = \"tls\"\ncert = \"c.pem\"\nkey = \"k.pem\"").unwrap();
        assert_eq!(t.port(), 8883);
        match t.kind {
            ListenerKind::Tls(s) => assert_eq!(s.min_version, TlsMinVersion::Tls12),
            _ => unreachable!(),
        }
    }

    #[test]
    fn tls_listener_needs_cert_and_key() {
        assert!(toml::from_str::<ListenerConfig>("kind = \"tls\"\ncert = \"c.pem\"").is_err());
    }

    #[tokio::test]
    async fn plain_listener_tags_connections() {
        let mut l = start_listeners(&[ListenerConfig::plain(Ipv4Addr::LOCALHOST.into(), 0)])
            .await
            .unwrap();
        let addr = l.addr(TransportKind::Plain).unwrap();
        let _c = TcpStream::connect(addr).await.unwrap();
        let acc = l.incoming.recv().await.unwrap();
        assert_eq!(acc.info.security_level, SecurityLevel::NonSecured);
        assert!(acc.info.tls.is_none());
    }

    #[tokio::test]
    async fn bind_conflict_aborts_startup() {
        let first = start_listeners(&[ListenerConfig::plain(Ipv4Addr::LOCALHOST.into(), 0)])
            .await
            .unwrap();
        let port = first.addr(TransportKind::Plain).unwrap().port();
        let err = start_listeners(&[ListenerConfig::plain(Ipv4Addr::LOCALHOST.into(), port)])
            .await
            .err()
            .unwrap();
        assert!(matches!(err, TransportError::Bind { .. }));
    }
}
