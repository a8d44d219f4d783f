//! Minimal async MQTT client used by the CLI, the benchmarks and the tests.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::client::Resumption;
use rustls::crypto::{ring, verify_tls12_signature, verify_tls13_signature, CryptoProvider};
use rustls::{ClientConfig, DigitallySignedStruct, RootCertStore, SignatureScheme};
use rustls_pki_types::pem::PemObject;
use rustls_pki_types::{CertificateDer, ServerName, UnixTime};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_rustls::TlsConnector;

use crate::codec::{
    encode_packet_for, Connack, Connect, DecodeError, Decoder, Disconnect, EncodeError, Malformed,
    Packet, Properties, ProtocolVersion, Puback, Publish, QoS, Suback, Subscribe, SubscribeFilter,
};
use crate::security::EnforcementFlag;
use crate::transport::BoxStream;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("TLS: {0}")]
    Tls(#[from] rustls::Error),
    #[error("invalid server name {0:?}")]
    ServerName(String),
    #[error("cannot read CA file {path}: {reason}")]
    CaFile { path: PathBuf, reason: String },
    #[error("connection refused by broker, reason code {0:#04x}")]
    Refused(u8),
    #[error("broker disconnected us, reason code {0:#04x}")]
    Disconnected(u8),
    #[error("connection closed")]
    Closed,
    #[error("timed out")]
    Timeout,
    #[error("malformed packet from broker: {0}")]
    Malformed(#[from] Malformed),
    #[error("cannot encode packet: {0}")]
    Encode(#[from] EncodeError),
    #[error("unexpected packet from broker: {0}")]
    Unexpected(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsClientOptions {
    /// PEM file with the CA (or self-signed server) certificate to trust.
    pub ca_file: Option<PathBuf>,
    /// Skip certificate verification altogether.
    pub insecure: bool,
    pub server_name: String,
    /// Offer TLS 1.2 only.
    pub tls12_only: bool,
}

impl TlsClientOptions {
    pub fn with_ca(ca_file: PathBuf) -> Self {
        Self {
            ca_file: Some(ca_file),
            insecure: false,
            server_name: "localhost".into(),
            tls12_only: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// `host:port`.
    pub addr: String,
    pub tls: Option<TlsClientOptions>,
    pub version: ProtocolVersion,
    pub client_id: String,
    pub keep_alive_s: u16,
    /// Flag sent as a user property on CONNECT (v5 only).
    pub connect_flag: Option<EnforcementFlag>,
    /// Applies to every wait for a broker response.
    pub timeout: Duration,
}

impl ClientOptions {
    pub fn new(addr: impl Into<String>, client_id: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            tls: None,
            version: ProtocolVersion::V5,
            client_id: client_id.into(),
            keep_alive_s: 60,
            connect_flag: None,
            timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug)]
struct AcceptAnyCert(Arc<CryptoProvider>);

impl ServerCertVerifier for AcceptAnyCert {
    fn verify_server_cert(
        &self,
        _end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        Ok(ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls12_signature(message, cert, dss, &self.0.signature_verification_algorithms)
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls13_signature(message, cert, dss, &self.0.signature_verification_algorithms)
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.0.signature_verification_algorithms.supported_schemes()
    }
}

/// Builds a client TLS configuration. Session resumption is off so every
/// connection performs a full handshake.
pub fn client_tls_config(opts: &TlsClientOptions) -> Result<Arc<ClientConfig>, ClientError> {
    let provider = Arc::new(ring::default_provider());
    let versions: &[&rustls::SupportedProtocolVersion] = if opts.tls12_only {
        &[&rustls::version::TLS12]
    } else {
        &[&rustls::version::TLS13, &rustls::version::TLS12]
    };
    let builder =
        ClientConfig::builder_with_provider(provider.clone()).with_protocol_versions(versions)?;
    let mut config = if opts.insecure {
        builder
            .dangerous()
            .with_custom_certificate_verifier(Arc::new(AcceptAnyCert(provider)))
            .with_no_client_auth()
    } else {
        let mut roots = RootCertStore::empty();
        if let Some(path) = &opts.ca_file {
            let ca_err = |reason: String| ClientError::CaFile {
                path: path.clone(),
                reason,
            };
            for cert in CertificateDer::pem_file_iter(path).map_err(|e| ca_err(e.to_string()))? {
                roots.add(cert.map_err(|e| ca_err(e.to_string()))?)?;
            }
        }
        builder.with_root_certificates(roots).with_no_client_auth()
    };
    config.resumption = Resumption::disabled();
    Ok(Arc::new(config))
}

/// Opens the transport only (TCP, plus TLS when configured).
pub async fn open_stream(
    addr: &str,
    tls: Option<&TlsClientOptions>,
) -> Result<BoxStream, ClientError> {
    let tcp = TcpStream::connect(addr).await?;
    tcp.set_nodelay(true)?;
    match tls {
        None => Ok(Box::new(tcp)),
        Some(t) => {
            let name = ServerName::try_from(t.server_name.clone())
                .map_err(|_| ClientError::ServerName(t.server_name.clone()))?;
            let stream = TlsConnector::from(client_tls_config(t)?)
                .connect(name, tcp)
                .await?;
            Ok(Box::new(stream))
        }
    }
}

fn props_with(flag: Option<EnforcementFlag>) -> Properties {
    let mut p = Properties::new();
    if let Some(f) = flag {
        p.push(f.user_property());
    }
    p
}

pub struct Client {
    stream: BoxStream,
    decoder: Decoder,
    version: ProtocolVersion,
    buf: Vec<u8>,
    pending: VecDeque<Publish>,
    next_packet_id: u16,
    timeout: Duration,
}

impl Client {
    /// Connects and completes the CONNECT/CONNACK exchange.
    pub async fn connect(opts: &ClientOptions) -> Result<(Client, Connack), ClientError> {
        let stream = tokio::time::timeout(
            opts.timeout,
            open_stream(&opts.addr, opts.tls.as_ref()),
        )
        .await
        .map_err(|_| ClientError::Timeout)??;
        let mut client = Client {
            stream,
            decoder: Decoder::new(opts.version),
            version: opts.version,
            buf: Vec::new(),
            pending: VecDeque::new(),
            next_packet_id: 0,
            timeout: opts.timeout,
        };
        let mut connect = Connect::new(opts.version, opts.client_id.clone());
        connect.keep_alive_s = opts.keep_alive_s;
        if opts.version == ProtocolVersion::V5 {
            connect.properties = props_with(opts.connect_flag);
        }
        client.send(&Packet::Connect(connect)).await?;
        match client.recv().await? {
            Packet::Connack(ack) if ack.reason_code == 0 => Ok((client, ack)),
            Packet::Connack(ack) => Err(ClientError::Refused(ack.reason_code)),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    pub fn version(&self) -> ProtocolVersion {
        self.version
    }

    fn packet_id(&mut self) -> u16 {
        self.next_packet_id = self.next_packet_id.checked_add(1).unwrap_or(1);
        self.next_packet_id
    }

    pub async fn send(&mut self, p: &Packet) -> Result<(), ClientError> {
        let bytes = encode_packet_for(p, self.version)?;
        self.send_raw(&bytes).await
    }

    pub async fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        self.stream.write_all(bytes).await?;
        self.stream.flush().await?;
        Ok(())
    }

    /// Next packet from the broker, waiting at most the configured timeout.
    pub async fn recv(&mut self) -> Result<Packet, ClientError> {
        let t = self.timeout;
        self.recv_within(t).await
    }

    pub async fn recv_within(&mut self, limit: Duration) -> Result<Packet, ClientError> {
        let deadline = tokio::time::Instant::now() + limit;
        loop {
            match self.decoder.decode(&self.buf) {
                Ok((p, used)) => {
                    self.buf.drain(..used);
                    return Ok(p);
                }
                Err(DecodeError::Malformed(m)) => return Err(m.into()),
                Err(DecodeError::Incomplete { .. }) => {}
            }
            let mut chunk = [0u8; 8192];
            let n = tokio::time::timeout_at(deadline, self.stream.read(&mut chunk))
                .await
                .map_err(|_| ClientError::Timeout)??;
            if n == 0 {
                return Err(ClientError::Closed);
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }

    /// Waits for a specific response, parking any PUBLISH that arrives in
    /// between.
    async fn expect<T>(
        &mut self,
        mut pick: impl FnMut(Packet) -> Result<T, Packet>,
    ) -> Result<T, ClientError> {
        loop {
            match self.recv().await? {
                Packet::Publish(p) => self.accept_publish(p).await?,
                Packet::Disconnect(d) => return Err(ClientError::Disconnected(d.reason_code)),
                other => match pick(other) {
                    Ok(v) => return Ok(v),
                    Err(p) => return Err(ClientError::Unexpected(format!("{p:?}"))),
                },
            }
        }
    }

    async fn accept_publish(&mut self, p: Publish) -> Result<(), ClientError> {
        if let Some(packet_id) = p.packet_id {
            self.send(&Packet::Puback(Puback {
                packet_id,
                reason_code: 0,
                properties: Properties::new(),
            }))
            .await?;
        }
        self.pending.push_back(p);
        Ok(())
    }

    pub async fn subscribe(
        &mut self,
        filter: &str,
        qos: QoS,
        flag: Option<EnforcementFlag>,
    ) -> Result<Suback, ClientError> {
        self.subscribe_many(&[(filter, qos)], flag).await
    }

    pub async fn subscribe_many(
        &mut self,
        filters: &[(&str, QoS)],
        flag: Option<EnforcementFlag>,
    ) -> Result<Suback, ClientError> {
        let packet_id = self.packet_id();
        let properties = match self.version {
            ProtocolVersion::V5 => props_with(flag),
            ProtocolVersion::V311 => Properties::new(),
        };
        self.send(&Packet::Subscribe(Subscribe {
            packet_id,
            properties,
            filters: filters
                .iter()
                .map(|(f, q)| SubscribeFilter::new(*f, *q))
                .collect(),
        }))
        .await?;
        self.expect(|p| match p {
            Packet::Suback(s) if s.packet_id == packet_id => Ok(s),
            other => Err(other),
        })
        .await
    }

    /// Publishes a message. For QoS 1 waits for and returns the PUBACK.
    pub async fn publish(
        &mut self,
        topic: &str,
        payload: &[u8],
        qos: QoS,
        flag: Option<EnforcementFlag>,
    ) -> Result<Option<Puback>, ClientError> {
        let mut p = Publish::new(topic, payload.to_vec());
        p.qos = qos;
        if self.version == ProtocolVersion::V5 {
            p.properties = props_with(flag);
        }
        if qos != QoS::AtMostOnce {
            p.packet_id = Some(self.packet_id());
        }
        let packet_id = p.packet_id;
        self.send(&Packet::Publish(p)).await?;
        match packet_id {
            None => Ok(None),
            Some(id) => self
                .expect(|p| match p {
                    Packet::Puback(a) if a.packet_id == id => Ok(a),
                    other => Err(other),
                })
                .await
                .map(Some),
        }
    }

    /// Next application message, or `None` if nothing arrives within
    /// `limit`.
    pub async fn next_message(&mut self, limit: Duration) -> Result<Option<Publish>, ClientError> {
        if let Some(p) = self.pending.pop_front() {
            return Ok(Some(p));
        }
        let deadline = tokio::time::Instant::now() + limit;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            match self.recv_within(left).await {
                Ok(Packet::Publish(p)) => {
                    self.accept_publish(p).await?;
                    return Ok(self.pending.pop_front());
                }
                Ok(Packet::Pingresp) | Ok(Packet::Puback(_)) => {}
                Ok(Packet::Disconnect(d)) => return Err(ClientError::Disconnected(d.reason_code)),
                Ok(other) => return Err(ClientError::Unexpected(format!("{other:?}"))),
                Err(ClientError::Timeout) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
    }

    pub async fn ping(&mut self) -> Result<(), ClientError> {
        self.send(&Packet::Pingreq).await?;
        self.expect(|p| match p {
            Packet::Pingresp => Ok(()),
            other => Err(other),
        })
        .await
    }

    pub async fn disconnect(mut self) -> Result<(), ClientError> {
        self.send(&Packet::Disconnect(Disconnect {
            reason_code: 0,
            properties: Properties::new(),
        }))
        .await?;
        let _ = self.stream.shutdown().await;
        Ok(())
    }
}
