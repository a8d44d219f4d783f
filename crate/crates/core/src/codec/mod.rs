//! Encoder and decoder for the subset of the MQTT v5 and v3.1.1 wire format
//! the broker speaks.
//!
//! Everything here is a pure function over byte slices. Decoding
//! distinguishes an incomplete buffer (read more) from a malformed one
//! (close the connection).

mod error;
mod packet;
pub mod properties;
pub mod reason;
mod wire;

pub use error::{DecodeError, EncodeError, Malformed};
pub use packet::{
    decode_packet, encode_packet, encode_packet_for, encode_packet_into, Connack, Connect,
    Decoder, Disconnect, Packet, ProtocolVersion, Puback, Publish, QoS, Suback, Subscribe,
    SubscribeFilter, Unsuback, Unsubscribe,
};
pub use properties::{
    encode_user_property, Properties, Property, PropertyValue, UserProperty,
};
pub use wire::{decode_varint, encode_varint, VARINT_MAX};
