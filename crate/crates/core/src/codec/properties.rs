//! MQTT v5 properties.
//!
//! Properties are kept as an ordered list so that values the broker does not
//! interpret survive a decode/encode cycle unchanged.

use super::error::{EncodeError, Malformed};
use super::wire::{self, Reader};

pub const PAYLOAD_FORMAT_INDICATOR: u8 = 0x01;
pub const MESSAGE_EXPIRY_INTERVAL: u8 = 0x02;
pub const CONTENT_TYPE: u8 = 0x03;
pub const RESPONSE_TOPIC: u8 = 0x08;
pub const CORRELATION_DATA: u8 = 0x09;
pub const SUBSCRIPTION_IDENTIFIER: u8 = 0x0B;
pub const SESSION_EXPIRY_INTERVAL: u8 = 0x11;
pub const ASSIGNED_CLIENT_IDENTIFIER: u8 = 0x12;
pub const SERVER_KEEP_ALIVE: u8 = 0x13;
pub const AUTHENTICATION_METHOD: u8 = 0x15;
pub const AUTHENTICATION_DATA: u8 = 0x16;
pub const REQUEST_PROBLEM_INFORMATION: u8 = 0x17;
pub const WILL_DELAY_INTERVAL: u8 = 0x18;
pub const REQUEST_RESPONSE_INFORMATION: u8 = 0x19;
pub const RESPONSE_INFORMATION: u8 = 0x1A;
pub const SERVER_REFERENCE: u8 = 0x1C;
pub const REASON_STRING: u8 = 0x1F;
pub const RECEIVE_MAXIMUM: u8 = 0x21;
pub const TOPIC_ALIAS_MAXIMUM: u8 = 0x22;
pub const TOPIC_ALIAS: u8 = 0x23;
pub const MAXIMUM_QOS: u8 = 0x24;
pub const RETAIN_AVAILABLE: u8 = 0x25;
pub const USER_PROPERTY: u8 = 0x26;
pub const MAXIMUM_PACKET_SIZE: u8 = 0x27;
pub const WILDCARD_SUBSCRIPTION_AVAILABLE: u8 = 0x28;
pub const SUBSCRIPTION_IDENTIFIER_AVAILABLE: u8 = 0x29;
pub const SHARED_SUBSCRIPTION_AVAILABLE: u8 = 0x2A;

/// Unassigned identifier used by the experimental one-byte security level
/// property. Only decoded when the decoder explicitly enables it.
pub const EXPERIMENTAL_SECURITY_LEVEL: u8 = 0x7E;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Byte,
    TwoByteInt,
    FourByteInt,
    VarInt,
    Utf8,
    Binary,
    StringPair,
}

/// Wire type of each property identifier defined by MQTT v5.
pub fn property_kind(id: u8) -> Option<ValueKind> {
    use ValueKind::*;
    Some(match id {
        PAYLOAD_FORMAT_INDICATOR
        | REQUEST_PROBLEM_INFORMATION
        | REQUEST_RESPONSE_INFORMATION
        | MAXIMUM_QOS
        | RETAIN_AVAILABLE
        | WILDCARD_SUBSCRIPTION_AVAILABLE
        | SUBSCRIPTION_IDENTIFIER_AVAILABLE
        | SHARED_SUBSCRIPTION_AVAILABLE => Byte,
        SERVER_KEEP_ALIVE | RECEIVE_MAXIMUM | TOPIC_ALIAS_MAXIMUM | TOPIC_ALIAS => TwoByteInt,
        MESSAGE_EXPIRY_INTERVAL
        | SESSION_EXPIRY_INTERVAL
        | WILL_DELAY_INTERVAL
        | MAXIMUM_PACKET_SIZE => FourByteInt,
        SUBSCRIPTION_IDENTIFIER => VarInt,
        CONTENT_TYPE
        | RESPONSE_TOPIC
        | ASSIGNED_CLIENT_IDENTIFIER
        | AUTHENTICATION_METHOD
        | RESPONSE_INFORMATION
        | SERVER_REFERENCE
        | REASON_STRING => Utf8,
        CORRELATION_DATA | AUTHENTICATION_DATA => Binary,
        USER_PROPERTY => StringPair,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropertyValue {
    Byte(u8),
    TwoByteInt(u16),
    FourByteInt(u32),
    VarInt(u32),
    Utf8(String),
    Binary(Vec<u8>),
    StringPair(String, String),
}

impl PropertyValue {
    pub fn kind(&self) -> ValueKind {
        match self {
            PropertyValue::Byte(_) => ValueKind::Byte,
            PropertyValue::TwoByteInt(_) => ValueKind::TwoByteInt,
            PropertyValue::FourByteInt(_) => ValueKind::FourByteInt,
            PropertyValue::VarInt(_) => ValueKind::VarInt,
            PropertyValue::Utf8(_) => ValueKind::Utf8,
            PropertyValue::Binary(_) => ValueKind::Binary,
            PropertyValue::StringPair(..) => ValueKind::StringPair,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Property {
    pub id: u8,
    pub value: PropertyValue,
}

impl Property {
    pub fn new(id: u8, value: PropertyValue) -> Self {
        Self { id, value }
    }

    pub fn user(key: impl Into<String>, value: impl Into<String>) -> Self {
        Self::new(USER_PROPERTY, PropertyValue::StringPair(key.into(), value.into()))
    }
}

/// A key/value string pair carried under property identifier 0x26.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UserProperty {
    pub key: String,
    pub value: String,
}

impl UserProperty {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
        }
    }

    /// Bytes this property occupies inside a property list.
    pub fn wire_size(&self) -> usize {
        1 + 2 + self.key.len() + 2 + self.value.len()
    }
}

impl From<UserProperty> for Property {
    fn from(p: UserProperty) -> Self {
        Property::user(p.key, p.value)
    }
}

/// Encodes a single user property: identifier 0x26 followed by the key and
/// the value as length-prefixed UTF-8 strings.
pub fn encode_user_property(p: &UserProperty) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(p.wire_size());
    out.push(USER_PROPERTY);
    wire::write_string(&mut out, &p.key)?;
    wire::write_string(&mut out, &p.value)?;
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Properties(Vec<Property>);

impl Properties {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: Property) {
        self.0.push(p);
    }

    pub fn with(mut self, p: Property) -> Self {
        self.push(p);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Property> {
        self.0.iter()
    }

    /// First property carrying `id`.
    pub fn get(&self, id: u8) -> Option<&PropertyValue> {
        self.0.iter().find(|p| p.id == id).map(|p| &p.value)
    }

    pub fn user_properties(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().filter_map(|p| match &p.value {
            PropertyValue::StringPair(k, v) if p.id == USER_PROPERTY => {
                Some((k.as_str(), v.as_str()))
            }
            _ => None,
        })
    }

    fn body_len(&self) -> usize {
        self.0
            .iter()
            .map(|p| {
                1 + match &p.value {
                    PropertyValue::Byte(_) => 1,
                    PropertyValue::TwoByteInt(_) => 2,
                    PropertyValue::FourByteInt(_) => 4,
                    PropertyValue::VarInt(v) => wire::varint_len(*v),
                    PropertyValue::Utf8(s) => 2 + s.len(),
                    PropertyValue::Binary(b) => 2 + b.len(),
                    PropertyValue::StringPair(k, v) => 4 + k.len() + v.len(),
                }
            })
            .sum()
    }

    /// Size on the wire including the length prefix.
    pub fn wire_len(&self) -> usize {
        let body = self.body_len();
        wire::varint_len(body as u32) + body
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) -> Result<(), EncodeError> {
        let body = self.body_len();
        wire::write_varint(out, u32::try_from(body).unwrap_or(u32::MAX))?;
        for p in &self.0 {
            let expected = if p.id == EXPERIMENTAL_SECURITY_LEVEL {
                ValueKind::Byte
            } else {
                property_kind(p.id).ok_or(EncodeError::UnknownProperty(p.id))?
            };
            if p.value.kind() != expected {
                return Err(EncodeError::PropertyKindMismatch { id: p.id });
            }
            out.push(p.id);
            match &p.value {
                PropertyValue::Byte(b) => out.push(*b),
                PropertyValue::TwoByteInt(v) => wire::write_u16(out, *v),
                PropertyValue::FourByteInt(v) => out.extend_from_slice(&v.to_be_bytes()),
                PropertyValue::VarInt(v) => wire::write_varint(out, *v)?,
                PropertyValue::Utf8(s) => wire::write_string(out, s)?,
                PropertyValue::Binary(b) => wire::write_binary(out, b)?,
                PropertyValue::StringPair(k, v) => {
                    wire::write_string(out, k)?;
                    wire::write_string(out, v)?;
                }
            }
        }
        Ok(())
    }

    pub(crate) fn read(r: &mut Reader<'_>, experimental_security: bool) -> Result<Self, Malformed> {
        let len = r.varint()? as usize;
        let mut body = Reader::new(r.take(len)?);
        let mut props = Vec::new();
        while body.remaining() > 0 {
            let raw_id = body.varint()?;
            let id = u8::try_from(raw_id).map_err(|_| Malformed::UnknownProperty(raw_id))?;
            let kind = match property_kind(id) {
                Some(k) => k,
                None if experimental_security && id == EXPERIMENTAL_SECURITY_LEVEL => {
                    ValueKind::Byte
                }
                None => return Err(Malformed::UnknownProperty(raw_id)),
            };
            let value = match kind {
                ValueKind::Byte => PropertyValue::Byte(body.u8()?),
                ValueKind::TwoByteInt => PropertyValue::TwoByteInt(body.u16()?),
                ValueKind::FourByteInt => PropertyValue::FourByteInt(body.u32()?),
                ValueKind::VarInt => PropertyValue::VarInt(body.varint()?),
                ValueKind::Utf8 => PropertyValue::Utf8(body.string()?),
                ValueKind::Binary => PropertyValue::Binary(body.binary()?.to_vec()),
                ValueKind::StringPair => {
                    let k = body.string()?;
                    let v = body.string()?;
                    PropertyValue::StringPair(k, v)
                }
            };
            props.push(Property { id, value });
        }
        Ok(Properties(props))
    }
}

impl FromIterator<Property> for Properties {
    fn from_iter<T: IntoIterator<Item = Property>>(iter: T) -> Self {
        Properties(iter.into_iter().collect())
    }
}

impl FromIterator<UserProperty> for Properties {
    fn from_iter<T: IntoIterator<Item = UserProperty>>(iter: T) -> Self {
        Properties(iter.into_iter().map(Property::from).collect())
    }
}

impl IntoIterator for Properties {
    type Item = Property;
    type IntoIter = std::vec::IntoIter<Property>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}
