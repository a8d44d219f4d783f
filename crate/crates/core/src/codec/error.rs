use thiserror::Error;

/// Failure while decoding bytes into a packet.
///
/// `Incomplete` means the bytes seen so far are a valid prefix and the caller
/// should buffer more. `Malformed` is a protocol violation: the connection
/// must be closed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("incomplete packet, at least {needed} more byte(s) required")]
    Incomplete { needed: usize },
    #[error("malformed packet: {0}")]
    Malformed(#[from] Malformed),
}

impl DecodeError {
    pub fn is_incomplete(&self) -> bool {
        matches!(self, DecodeError::Incomplete { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Malformed {
    #[error("variable byte integer longer than 4 bytes")]
    VarIntTooLong,
    #[error("invalid packet type {0}")]
    InvalidPacketType(u8),
    #[error("unsupported packet type {0}")]
    UnsupportedPacketType(u8),
    #[error("invalid fixed header flags {flags:#06b} for packet type {packet_type}")]
    InvalidFlags { packet_type: u8, flags: u8 },
    #[error("packet of {size} bytes exceeds maximum of {max}")]
    PacketTooLarge { size: usize, max: usize },
    #[error("packet body ended before all fields were read")]
    Truncated,
    #[error("{0} trailing byte(s) after packet body")]
    TrailingBytes(usize),
    #[error("string is not valid UTF-8")]
    InvalidUtf8,
    #[error("string contains U+0000")]
    NullCharacter,
    #[error("invalid protocol name")]
    InvalidProtocolName,
    #[error("unsupported protocol version {0}")]
    UnsupportedProtocolVersion(u8),
    #[error("reserved flag bit set")]
    ReservedBitSet,
    #[error("invalid QoS value {0}")]
    InvalidQos(u8),
    #[error("QoS 2 is not supported")]
    QosNotSupported,
    #[error("packet identifier must be non-zero")]
    ZeroPacketId,
    #[error("unknown property identifier {0:#04x}")]
    UnknownProperty(u32),
    #[error("will messages are not supported")]
    WillNotSupported,
    #[error("password without username")]
    PasswordWithoutUsername,
    #[error("subscription packet carries no topic filters")]
    EmptyFilterList,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("value {0} does not fit a variable byte integer")]
    VarIntOutOfRange(u64),
    #[error("string or binary field of {0} bytes exceeds 65535")]
    FieldTooLong(usize),
    #[error("string contains U+0000")]
    NullCharacter,
    #[error("QoS 1 publish requires a packet identifier")]
    MissingPacketId,
    #[error("QoS 0 publish must not carry a packet identifier")]
    UnexpectedPacketId,
    #[error("packet identifier must be non-zero")]
    ZeroPacketId,
    #[error("QoS 2 is not supported")]
    QosNotSupported,
    #[error("properties require protocol version 5")]
    PropertiesRequireV5,
    #[error("field requires protocol version 5: {0}")]
    RequiresV5(&'static str),
    #[error("property {id:#04x} carries a value of the wrong type")]
    PropertyKindMismatch { id: u8 },
    #[error("unknown property identifier {0:#04x}")]
    UnknownProperty(u8),
    #[error("subscription packet carries no topic filters")]
    EmptyFilterList,
    #[error("retain handling {0} out of range")]
    InvalidRetainHandling(u8),
    #[error("password without username is not allowed in MQTT 3.1.1")]
    PasswordWithoutUsername,
}
