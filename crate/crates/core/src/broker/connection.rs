use std::future::pending;
use std::io;
use std::time::{Duration, Instant};

use tokio::io::{AsyncReadExt, AsyncWriteExt};

use super::{Broker, ClientSession, ConnectOutcome, Forward};
use crate::codec::{
    decode_varint, encode_packet_for, reason, Connack, DecodeError, Decoder, Disconnect,
    Malformed, Packet, Properties, ProtocolVersion, Publish, QoS,
};
use crate::transport::{BoxStream, ConnectionInfo};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);
const READ_CHUNK: usize = 16 * 1024;

enum Close {
    /// Peer went away or sent DISCONNECT.
    Normal,
    /// Broker closes, telling a v5 peer why.
    Reason(u8),
    Silent,
}

struct Conn {
    broker: Broker,
    info: ConnectionInfo,
    stream: BoxStream,
    buf: Vec<u8>,
    decoder: Decoder,
    version: ProtocolVersion,
    next_packet_id: u16,
}

/// Reads the protocol level of a CONNECT that failed to decode, so the
/// error CONNACK can be sent in a format the client understands.
fn sniff_connect_level(buf: &[u8]) -> Option<u8> {
    let (_, n) = decode_varint(buf.get(1..)?).ok()?;
    let at = 1 + n;
    let name_len = u16::from_be_bytes([*buf.get(at)?, *buf.get(at + 1)?]) as usize;
    buf.get(at + 2 + name_len).copied()
}

fn malformed_reason(m: &Malformed) -> u8 {
    match m {
        Malformed::PacketTooLarge { .. } => reason::PACKET_TOO_LARGE,
        Malformed::QosNotSupported => reason::QOS_NOT_SUPPORTED,
        Malformed::UnsupportedPacketType(_) => reason::PROTOCOL_ERROR,
        _ => reason::MALFORMED_PACKET,
    }
}

impl Broker {
    /// Runs one client connection to completion.
    pub async fn serve(&self, info: ConnectionInfo, stream: BoxStream) {
        let decoder = Decoder::new(ProtocolVersion::V5)
            .with_max_packet_size(self.config().max_packet_size)
            .with_experimental_security_property(self.config().experimental_security_property);
        let mut conn = Conn {
            broker: self.clone(),
            info,
            stream,
            buf: Vec::with_capacity(READ_CHUNK),
            decoder,
            version: ProtocolVersion::V5,
            next_packet_id: 0,
        };
        let Some(mut session) = conn.establish().await else {
            let _ = conn.stream.shutdown().await;
            return;
        };
        let close = conn.run(&mut session).await;
        self.handle_disconnect(&session);
        if let Close::Reason(code) = close {
            if conn.version == ProtocolVersion::V5 {
                let _ = conn
                    .send(&Packet::Disconnect(Disconnect {
                        reason_code: code,
                        properties: Properties::new(),
                    }))
                    .await;
            }
        }
        let _ = conn.stream.shutdown().await;
    }
}

impl Conn {
    async fn send(&mut self, p: &Packet) -> io::Result<()> {
        let bytes = encode_packet_for(p, self.version)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        self.write_bytes(&bytes).await
    }

    async fn write_bytes(&mut self, bytes: &[u8]) -> io::Result<()> {
        if let Some(tap) = self.broker.tap() {
            tap.on_write(&self.info, bytes);
        }
        self.stream.write_all(bytes).await?;
        self.stream.flush().await
    }

    async fn fill(&mut self) -> io::Result<usize> {
        let mut chunk = [0u8; READ_CHUNK];
        let n = self.stream.read(&mut chunk).await?;
        self.buf.extend_from_slice(&chunk[..n]);
        Ok(n)
    }

    /// Reads CONNECT and answers it. `None` means the connection is done.
    async fn establish(&mut self) -> Option<ClientSession> {
        let deadline = tokio::time::Instant::now() + CONNECT_TIMEOUT;
        let connect = loop {
            match self.decoder.decode(&self.buf) {
                Ok((Packet::Connect(c), used)) => {
                    self.buf.drain(..used);
                    break c;
                }
                Ok(_) => return None,
                Err(DecodeError::Incomplete { .. }) => {
                    match tokio::time::timeout_at(deadline, self.fill()).await {
                        Ok(Ok(n)) if n > 0 => {}
                        _ => return None,
                    }
                }
                Err(DecodeError::Malformed(m)) => {
                    self.reject_bad_connect(&m).await;
                    return None;
                }
            }
        };
        self.version = connect.protocol_version;
        self.decoder.version = connect.protocol_version;
        match self.broker.handle_connect(&self.info, connect) {
            ConnectOutcome::Accepted { connack, session } => {
                self.send(&Packet::Connack(connack)).await.ok()?;
                Some(session)
            }
            ConnectOutcome::Rejected { connack } => {
                let _ = self.send(&Packet::Connack(connack)).await;
                None
            }
        }
    }

    async fn reject_bad_connect(&mut self, m: &Malformed) {
        tracing::debug!(peer = %self.info.peer, error = %m, "bad CONNECT");
        let (version, code) = match (m, sniff_connect_level(&self.buf)) {
            (Malformed::UnsupportedProtocolVersion(_), _) => (
                ProtocolVersion::V311,
                reason::v311::UNACCEPTABLE_PROTOCOL_VERSION,
            ),
            (Malformed::WillNotSupported, Some(4)) => {
                (ProtocolVersion::V311, reason::v311::SERVER_UNAVAILABLE)
            }
            (Malformed::WillNotSupported, Some(5)) => {
                (ProtocolVersion::V5, reason::IMPLEMENTATION_SPECIFIC_ERROR)
            }
            (_, Some(5)) => (ProtocolVersion::V5, malformed_reason(m)),
            _ => return,
        };
        self.version = version;
        let _ = self
            .send(&Packet::Connack(Connack {
                session_present: false,
                reason_code: code,
                properties: Properties::new(),
            }))
            .await;
    }

    async fn run(&mut self, session: &mut ClientSession) -> Close {
        let window = session.keepalive_window();
        let mut last_rx = tokio::time::Instant::now();
        let kick = session.kick.clone();
        loop {
            // Drain whatever is already buffered before waiting again.
            loop {
                match self.decoder.decode(&self.buf) {
                    Ok((packet, used)) => {
                        self.buf.drain(..used);
                        let received_at = Instant::now();
                        if let Some(close) = self.on_packet(session, packet, received_at).await {
                            return close;
                        }
                    }
                    Err(DecodeError::Incomplete { .. }) => break,
                    Err(DecodeError::Malformed(m)) => {
                        tracing::debug!(client = %session.client_id, error = %m, "malformed packet");
                        return Close::Reason(malformed_reason(&m));
                    }
                }
            }
            let expiry = async move {
                match window {
                    Some(w) => tokio::time::sleep_until(last_rx + w).await,
                    None => pending().await,
                }
            };
            tokio::select! {
                _ = kick.notify.notified() => {
                    return match kick.reason() {
                        Some(code) => Close::Reason(code),
                        None => Close::Silent,
                    };
                }
                fwd = session.outbound.recv() => {
                    // A takeover drops the sender right after setting the kick reason.
                    let Some(fwd) = fwd else {
                        return kick.reason().map_or(Close::Silent, Close::Reason);
                    };
                    if self.forward(fwd).await.is_err() {
                        return Close::Silent;
                    }
                }
                _ = expiry => {
                    self.broker.expire_keepalive(session);
                    return Close::Reason(reason::KEEP_ALIVE_TIMEOUT);
                }
                read = self.fill() => {
                    match read {
                        Ok(0) | Err(_) => return Close::Normal,
                        Ok(_) => last_rx = tokio::time::Instant::now(),
                    }
                }
            }
        }
    }

    async fn forward(&mut self, fwd: Forward) -> io::Result<()> {
        let packet_id = match fwd.qos {
            QoS::AtMostOnce => None,
            _ => {
                self.next_packet_id = self.next_packet_id.checked_add(1).unwrap_or(1);
                Some(self.next_packet_id)
            }
        };
        let src = &fwd.publish;
        let publish = Publish {
            dup: false,
            qos: fwd.qos,
            retain: false,
            topic: src.topic.clone(),
            packet_id,
            properties: match self.version {
                ProtocolVersion::V5 => src.properties.clone(),
                ProtocolVersion::V311 => Properties::new(),
            },
            payload: src.payload.clone(),
        };
        self.send(&Packet::Publish(publish)).await?;
        if let Some(t) = fwd.received_at {
            self.broker.record_forward_latency(t.elapsed());
        }
        Ok(())
    }

    async fn on_packet(
        &mut self,
        session: &mut ClientSession,
        packet: Packet,
        received_at: Instant,
    ) -> Option<Close> {
        let io = |r: io::Result<()>| r.err().map(|_| Close::Silent);
        match packet {
            Packet::Publish(p) => match self.broker.handle_publish(session, p, received_at) {
                Ok(outcome) => match outcome.puback {
                    Some(ack) => io(self.send(&Packet::Puback(ack)).await),
                    None => None,
                },
                Err(v) => Some(Close::Reason(v.reason_code)),
            },
            Packet::Subscribe(s) => {
                let ack = self.broker.handle_subscribe(session, s);
                io(self.send(&Packet::Suback(ack)).await)
            }
            Packet::Unsubscribe(u) => {
                let ack = self.broker.handle_unsubscribe(session, u);
                io(self.send(&Packet::Unsuback(ack)).await)
            }
            Packet::Pingreq => io(self.send(&Packet::Pingresp).await),
            // Acknowledgements of forwarded QoS 1 messages; nothing is kept
            // in flight, so there is nothing to release.
            Packet::Puback(_) => None,
            Packet::Disconnect(_) => Some(Close::Normal),
            Packet::Connect(_)
            | Packet::Connack(_)
            | Packet::Suback(_)
            | Packet::Unsuback(_)
            | Packet::Pingresp => Some(Close::Reason(reason::PROTOCOL_ERROR)),
        }
    }
}
