use super::error::{DecodeError, EncodeError, Malformed};
use super::properties::Properties;
use super::wire::{self, Reader};

pub const CONNECT: u8 = 1;
pub const CONNACK: u8 = 2;
pub const PUBLISH: u8 = 3;
pub const PUBACK: u8 = 4;
pub const PUBREC: u8 = 5;
pub const PUBREL: u8 = 6;
pub const PUBCOMP: u8 = 7;
pub const SUBSCRIBE: u8 = 8;
pub const SUBACK: u8 = 9;
pub const UNSUBSCRIBE: u8 = 10;
pub const UNSUBACK: u8 = 11;
pub const PINGREQ: u8 = 12;
pub const PINGRESP: u8 = 13;
pub const DISCONNECT: u8 = 14;
pub const AUTH: u8 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolVersion {
    /// MQTT 3.1.1, protocol level 4.
    V311,
    /// MQTT 5.0, protocol level 5.
    V5,
}

impl ProtocolVersion {
    pub fn level(self) -> u8 {
        match self {
            ProtocolVersion::V311 => 4,
            ProtocolVersion::V5 => 5,
        }
    }

    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            4 => Some(ProtocolVersion::V311),
            5 => Some(ProtocolVersion::V5),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QoS {
    AtMostOnce = 0,
    AtLeastOnce = 1,
    ExactlyOnce = 2,
}

impl QoS {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(QoS::AtMostOnce),
            1 => Some(QoS::AtLeastOnce),
            2 => Some(QoS::ExactlyOnce),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connect {
    pub protocol_version: ProtocolVersion,
    pub client_id: String,
    pub clean_start: bool,
    pub keep_alive_s: u16,
    pub properties: Properties,
    pub username: Option<String>,
    pub password: Option<Vec<u8>>,
}

impl Connect {
    pub fn new(version: ProtocolVersion, client_id: impl Into<String>) -> Self {
        Self {
            protocol_version: version,
            client_id: client_id.into(),
            clean_start: true,
            keep_alive_s: 60,
            properties: Properties::new(),
            username: None,
            password: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connack {
    pub session_present: bool,
    /// Reason code (v5) or connect return code (v3.1.1).
    pub reason_code: u8,
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publish {
    pub dup: bool,
    pub qos: QoS,
    pub retain: bool,
    pub topic: String,
    pub packet_id: Option<u16>,
    pub properties: Properties,
    pub payload: Vec<u8>,
}

impl Publish {
    pub fn new(topic: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            dup: false,
            qos: QoS::AtMostOnce,
            retain: false,
            topic: topic.into(),
            packet_id: None,
            properties: Properties::new(),
            payload: payload.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Puback {
    pub packet_id: u16,
    pub reason_code: u8,
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscribeFilter {
    pub filter: String,
    pub qos: QoS,
    pub no_local: bool,
    pub retain_as_published: bool,
    pub retain_handling: u8,
}

impl SubscribeFilter {
    pub fn new(filter: impl Into<String>, qos: QoS) -> Self {
        Self {
            filter: filter.into(),
            qos,
            no_local: false,
            retain_as_published: false,
            retain_handling: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscribe {
    pub packet_id: u16,
    pub properties: Properties,
    pub filters: Vec<SubscribeFilter>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suback {
    pub packet_id: u16,
    pub properties: Properties,
    pub reason_codes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unsubscribe {
    pub packet_id: u16,
    pub properties: Properties,
    pub filters: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unsuback {
    pub packet_id: u16,
    pub properties: Properties,
    /// Always empty for MQTT 3.1.1.
    pub reason_codes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disconnect {
    pub reason_code: u8,
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect(Connect),
    Connack(Connack),
    Publish(Publish),
    Puback(Puback),
    Subscribe(Subscribe),
    Suback(Suback),
    Unsubscribe(Unsubscribe),
    Unsuback(Unsuback),
    Pingreq,
    Pingresp,
    Disconnect(Disconnect),
}

impl Packet {
    pub fn packet_type(&self) -> u8 {
        match self {
            Packet::Connect(_) => CONNECT,
            Packet::Connack(_) => CONNACK,
            Packet::Publish(_) => PUBLISH,
            Packet::Puback(_) => PUBACK,
            Packet::Subscribe(_) => SUBSCRIBE,
            Packet::Suback(_) => SUBACK,
            Packet::Unsubscribe(_) => UNSUBSCRIBE,
            Packet::Unsuback(_) => UNSUBACK,
            Packet::Pingreq => PINGREQ,
            Packet::Pingresp => PINGRESP,
            Packet::Disconnect(_) => DISCONNECT,
        }
    }
}

/// Encodes a packet for an MQTT v5 connection.
pub fn encode_packet(p: &Packet) -> Result<Vec<u8>, EncodeError> {
    encode_packet_for(p, ProtocolVersion::V5)
}

/// Encodes a packet for a connection speaking `version`. CONNECT always uses
/// the version it carries.
pub fn encode_packet_for(p: &Packet, version: ProtocolVersion) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::new();
    encode_packet_into(p, version, &mut out)?;
    Ok(out)
}

pub fn encode_packet_into(
    p: &Packet,
    version: ProtocolVersion,
    out: &mut Vec<u8>,
) -> Result<(), EncodeError> {
    let v5 = version == ProtocolVersion::V5;
    let mut body = Vec::new();
    let mut flags = 0u8;

    let props = |body: &mut Vec<u8>, props: &Properties| -> Result<(), EncodeError> {
        if v5 {
            props.write(body)
        } else if props.is_empty() {
            Ok(())
        } else {
            Err(EncodeError::PropertiesRequireV5)
        }
    };

    match p {
        Packet::Connect(c) => {
            let cv5 = c.protocol_version == ProtocolVersion::V5;
            wire::write_string(&mut body, "MQTT")?;
            body.push(c.protocol_version.level());
            if !cv5 && c.password.is_some() && c.username.is_none() {
                return Err(EncodeError::PasswordWithoutUsername);
            }
            let mut cf = 0u8;
            if c.username.is_some() {
                cf |= 0x80;
            }
            if c.password.is_some() {
                cf |= 0x40;
            }
            if c.clean_start {
                cf |= 0x02;
            }
            body.push(cf);
            wire::write_u16(&mut body, c.keep_alive_s);
            if cv5 {
                c.properties.write(&mut body)?;
            } else if !c.properties.is_empty() {
                return Err(EncodeError::PropertiesRequireV5);
            }
            wire::write_string(&mut body, &c.client_id)?;
            if let Some(u) = &c.username {
                wire::write_string(&mut body, u)?;
            }
            if let Some(pw) = &c.password {
                wire::write_binary(&mut body, pw)?;
            }
        }
        Packet::Connack(c) => {
            body.push(u8::from(c.session_present));
            body.push(c.reason_code);
            props(&mut body, &c.properties)?;
        }
        Packet::Publish(pb) => {
            match (pb.qos, pb.packet_id) {
                (QoS::ExactlyOnce, _) => return Err(EncodeError::QosNotSupported),
                (QoS::AtLeastOnce, None) => return Err(EncodeError::MissingPacketId),
                (QoS::AtMostOnce, Some(_)) => return Err(EncodeError::UnexpectedPacketId),
                (_, Some(0)) => return Err(EncodeError::ZeroPacketId),
                _ => {}
            }
            flags = (u8::from(pb.dup) << 3) | ((pb.qos as u8) << 1) | u8::from(pb.retain);
            wire::write_string(&mut body, &pb.topic)?;
            if let Some(id) = pb.packet_id {
                wire::write_u16(&mut body, id);
            }
            props(&mut body, &pb.properties)?;
            body.extend_from_slice(&pb.payload);
        }
        Packet::Puback(a) => {
            nonzero(a.packet_id)?;
            wire::write_u16(&mut body, a.packet_id);
            if v5 {
                if a.reason_code != 0 || !a.properties.is_empty() {
                    body.push(a.reason_code);
                }
                if !a.properties.is_empty() {
                    a.properties.write(&mut body)?;
                }
            } else if a.reason_code != 0 {
                return Err(EncodeError::RequiresV5("PUBACK reason code"));
            } else if !a.properties.is_empty() {
                return Err(EncodeError::PropertiesRequireV5);
            }
        }
        Packet::Subscribe(s) => {
            flags = 0b0010;
            nonzero(s.packet_id)?;
            if s.filters.is_empty() {
                return Err(EncodeError::EmptyFilterList);
            }
            wire::write_u16(&mut body, s.packet_id);
            props(&mut body, &s.properties)?;
            for f in &s.filters {
                wire::write_string(&mut body, &f.filter)?;
                if f.retain_handling > 2 {
                    return Err(EncodeError::InvalidRetainHandling(f.retain_handling));
                }
                if !v5 && (f.no_local || f.retain_as_published || f.retain_handling != 0) {
                    return Err(EncodeError::RequiresV5("subscription options"));
                }
                body.push(
                    (f.qos as u8)
                        | (u8::from(f.no_local) << 2)
                        | (u8::from(f.retain_as_published) << 3)
                        | (f.retain_handling << 4),
                );
            }
        }
        Packet::Suback(s) => {
            nonzero(s.packet_id)?;
            wire::write_u16(&mut body, s.packet_id);
            props(&mut body, &s.properties)?;
            body.extend_from_slice(&s.reason_codes);
        }
        Packet::Unsubscribe(u) => {
            flags = 0b0010;
            nonzero(u.packet_id)?;
            if u.filters.is_empty() {
                return Err(EncodeError::EmptyFilterList);
            }
            wire::write_u16(&mut body, u.packet_id);
            props(&mut body, &u.properties)?;
            for f in &u.filters {
                wire::write_string(&mut body, f)?;
            }
        }
        Packet::Unsuback(u) => {
            nonzero(u.packet_id)?;
            wire::write_u16(&mut body, u.packet_id);
            props(&mut body, &u.properties)?;
            if !v5 && !u.reason_codes.is_empty() {
                return Err(EncodeError::RequiresV5("UNSUBACK reason codes"));
            }
            body.extend_from_slice(&u.reason_codes);
        }
        Packet::Pingreq | Packet::Pingresp => {}
        Packet::Disconnect(d) => {
            if v5 {
                if d.reason_code != 0 || !d.properties.is_empty() {
                    body.push(d.reason_code);
                }
                if !d.properties.is_empty() {
                    d.properties.write(&mut body)?;
                }
            } else if d.reason_code != 0 {
                return Err(EncodeError::RequiresV5("DISCONNECT reason code"));
            } else if !d.properties.is_empty() {
                return Err(EncodeError::PropertiesRequireV5);
            }
        }
    }

    out.push((p.packet_type() << 4) | flags);
    wire::write_varint(out, u32::try_from(body.len()).unwrap_or(u32::MAX))?;
    out.extend_from_slice(&body);
    Ok(())
}

fn nonzero(id: u16) -> Result<(), EncodeError> {
    if id == 0 {
        Err(EncodeError::ZeroPacketId)
    } else {
        Ok(())
    }
}

/// Decodes one packet from the front of `buf` as seen on an MQTT v5
/// connection.
pub fn decode_packet(buf: &[u8]) -> Result<(Packet, usize), DecodeError> {
    Decoder::default().decode(buf)
}

/// Stateless decoder configuration for one connection.
#[derive(Debug, Clone, Copy)]
pub struct Decoder {
    pub version: ProtocolVersion,
    pub max_packet_size: usize,
    /// Accept the experimental one-byte security level property.
    pub experimental_security_property: bool,
}

impl Default for Decoder {
    fn default() -> Self {
        Self {
            version: ProtocolVersion::V5,
            max_packet_size: 1 + 4 + wire::VARINT_MAX as usize,
            experimental_security_property: false,
        }
    }
}

impl Decoder {
    pub fn new(version: ProtocolVersion) -> Self {
        Self {
            version,
            ..Self::default()
        }
    }

    pub fn with_max_packet_size(mut self, max: usize) -> Self {
        self.max_packet_size = max;
        self
    }

    pub fn with_experimental_security_property(mut self, enabled: bool) -> Self {
        self.experimental_security_property = enabled;
        self
    }

    /// Decodes the first packet in `buf`, returning it together with the
    /// number of bytes it occupied. Trailing bytes are left untouched.
    pub fn decode(&self, buf: &[u8]) -> Result<(Packet, usize), DecodeError> {
        let Some(&first) = buf.first() else {
            return Err(DecodeError::Incomplete { needed: 2 });
        };
        let packet_type = first >> 4;
        let flags = first & 0x0F;
        check_fixed_flags(packet_type, flags)?;

        let (remaining, len_bytes) = match wire::decode_varint(&buf[1..]) {
            Ok(v) => v,
            Err(e) => return Err(e),
        };
        let total = 1 + len_bytes + remaining as usize;
        if total > self.max_packet_size {
            return Err(Malformed::PacketTooLarge {
                size: total,
                max: self.max_packet_size,
            }
            .into());
        }
        if buf.len() < total {
            return Err(DecodeError::Incomplete {
                needed: total - buf.len(),
            });
        }
        let body = &buf[1 + len_bytes..total];
        let packet = self.decode_body(packet_type, flags, body)?;
        Ok((packet, total))
    }

    fn props(&self, r: &mut Reader<'_>) -> Result<Properties, Malformed> {
        if self.version == ProtocolVersion::V5 {
            Properties::read(r, self.experimental_security_property)
        } else {
            Ok(Properties::new())
        }
    }

    fn decode_body(&self, packet_type: u8, flags: u8, body: &[u8]) -> Result<Packet, Malformed> {
        let v5 = self.version == ProtocolVersion::V5;
        let mut r = Reader::new(body);
        let packet = match packet_type {
            CONNECT => return self.decode_connect(&mut r),
            CONNACK => {
                let ack = r.u8()?;
                if ack & 0xFE != 0 {
                    return Err(Malformed::ReservedBitSet);
                }
                let reason_code = r.u8()?;
                let properties = self.props(&mut r)?;
                Packet::Connack(Connack {
                    session_present: ack & 0x01 == 1,
                    reason_code,
                    properties,
                })
            }
            PUBLISH => {
                let qos = match (flags >> 1) & 0x03 {
                    0 => QoS::AtMostOnce,
                    1 => QoS::AtLeastOnce,
                    2 => return Err(Malformed::QosNotSupported),
                    q => return Err(Malformed::InvalidQos(q)),
                };
                let dup = flags & 0x08 != 0;
                if dup && qos == QoS::AtMostOnce {
                    return Err(Malformed::InvalidFlags { packet_type, flags });
                }
                let topic = r.string()?;
                let packet_id = match qos {
                    QoS::AtMostOnce => None,
                    _ => Some(r.packet_id()?),
                };
                let properties = self.props(&mut r)?;
                let payload = r.rest().to_vec();
                Packet::Publish(Publish {
                    dup,
                    qos,
                    retain: flags & 0x01 != 0,
                    topic,
                    packet_id,
                    properties,
                    payload,
                })
            }
            PUBACK => {
                let packet_id = r.packet_id()?;
                let mut reason_code = 0;
                let mut properties = Properties::new();
                if v5 {
                    if r.remaining() > 0 {
                        reason_code = r.u8()?;
                    }
                    if r.remaining() > 0 {
                        properties = self.props(&mut r)?;
                    }
                }
                Packet::Puback(Puback {
                    packet_id,
                    reason_code,
                    properties,
                })
            }
            SUBSCRIBE => {
                let packet_id = r.packet_id()?;
                let properties = self.props(&mut r)?;
                let mut filters = Vec::new();
                while r.remaining() > 0 {
                    let filter = r.string()?;
                    let opts = r.u8()?;
                    let reserved = if v5 { 0xC0 } else { 0xFC };
                    if opts & reserved != 0 {
                        return Err(Malformed::ReservedBitSet);
                    }
                    let qos = QoS::from_u8(opts & 0x03).ok_or(Malformed::InvalidQos(opts & 0x03))?;
                    let retain_handling = (opts >> 4) & 0x03;
                    if retain_handling == 3 {
                        return Err(Malformed::ReservedBitSet);
                    }
                    filters.push(SubscribeFilter {
                        filter,
                        qos,
                        no_local: opts & 0x04 != 0,
                        retain_as_published: opts & 0x08 != 0,
                        retain_handling,
                    });
                }
                if filters.is_empty() {
                    return Err(Malformed::EmptyFilterList);
                }
                Packet::Subscribe(Subscribe {
                    packet_id,
                    properties,
                    filters,
                })
            }
            SUBACK => {
                let packet_id = r.packet_id()?;
                let properties = self.props(&mut r)?;
                Packet::Suback(Suback {
                    packet_id,
                    properties,
                    reason_codes: r.rest().to_vec(),
                })
            }
            UNSUBSCRIBE => {
                let packet_id = r.packet_id()?;
                let properties = self.props(&mut r)?;
                let mut filters = Vec::new();
                while r.remaining() > 0 {
                    filters.push(r.string()?);
                }
                if filters.is_empty() {
                    return Err(Malformed::EmptyFilterList);
                }
                Packet::Unsubscribe(Unsubscribe {
                    packet_id,
                    properties,
                    filters,
                })
            }
            UNSUBACK => {
                let packet_id = r.packet_id()?;
                let properties = self.props(&mut r)?;
                let reason_codes = if v5 { r.rest().to_vec() } else { Vec::new() };
                Packet::Unsuback(Unsuback {
                    packet_id,
                    properties,
                    reason_codes,
                })
            }
            PINGREQ => Packet::Pingreq,
            PINGRESP => Packet::Pingresp,
            DISCONNECT => {
                let mut reason_code = 0;
                let mut properties = Properties::new();
                if v5 {
                    if r.remaining() > 0 {
                        reason_code = r.u8()?;
                    }
                    if r.remaining() > 0 {
                        properties = self.props(&mut r)?;
                    }
                }
                Packet::Disconnect(Disconnect {
                    reason_code,
                    properties,
                })
            }
            other => return Err(Malformed::InvalidPacketType(other)),
        };
        r.finish()?;
        Ok(packet)
    }

    fn decode_connect(&self, r: &mut Reader<'_>) -> Result<Packet, Malformed> {
        let name = r.binary()?;
        let level = r.u8()?;
        if name != b"MQTT" {
            return Err(if name == b"MQIsdp" {
                Malformed::UnsupportedProtocolVersion(level)
            } else {
                Malformed::InvalidProtocolName
            });
        }
        let version =
            ProtocolVersion::from_level(level).ok_or(Malformed::UnsupportedProtocolVersion(level))?;
        let cf = r.u8()?;
        if cf & 0x01 != 0 {
            return Err(Malformed::ReservedBitSet);
        }
        if cf & 0x04 != 0 {
            return Err(Malformed::WillNotSupported);
        }
        if cf & 0x38 != 0 {
            // Will QoS / Will Retain without a will.
            return Err(Malformed::ReservedBitSet);
        }
        let has_username = cf & 0x80 != 0;
        let has_password = cf & 0x40 != 0;
        if version == ProtocolVersion::V311 && has_password && !has_username {
            return Err(Malformed::PasswordWithoutUsername);
        }
        let keep_alive_s = r.u16()?;
        let properties = if version == ProtocolVersion::V5 {
            Properties::read(r, self.experimental_security_property)?
        } else {
            Properties::new()
        };
        let client_id = r.string()?;
        let username = if has_username { Some(r.string()?) } else { None };
        let password = if has_password {
            Some(r.binary()?.to_vec())
        } else {
            None
        };
        r.finish()?;
        Ok(Packet::Connect(Connect {
            protocol_version: version,
            client_id,
            clean_start: cf & 0x02 != 0,
            keep_alive_s,
            properties,
            username,
            password,
        }))
    }
}

fn check_fixed_flags(packet_type: u8, flags: u8) -> Result<(), Malformed> {
    let expected = match packet_type {
        PUBLISH => return Ok(()),
        PUBREC | PUBREL | PUBCOMP | AUTH => {
            return Err(Malformed::UnsupportedPacketType(packet_type))
        }
        SUBSCRIBE | UNSUBSCRIBE => 0b0010,
        CONNECT | CONNACK | PUBACK | SUBACK | UNSUBACK | PINGREQ | PINGRESP | DISCONNECT => 0,
        other => return Err(Malformed::InvalidPacketType(other)),
    };
    if flags != expected {
        return Err(Malformed::InvalidFlags { packet_type, flags });
    }
    Ok(())
}
