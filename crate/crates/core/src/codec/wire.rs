//! Primitive MQTT data representations: variable byte integers, length
//! prefixed strings and binary data.

use super::error::{DecodeError, EncodeError, Malformed};

pub const VARINT_MAX: u32 = 268_435_455;

/// Encodes `value` as an MQTT variable byte integer (1 to 4 bytes).
pub fn encode_varint(value: u32) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(4);
    write_varint(&mut out, value)?;
    Ok(out)
}

pub(crate) fn write_varint(out: &mut Vec<u8>, value: u32) -> Result<(), EncodeError> {
    if value > VARINT_MAX {
        return Err(EncodeError::VarIntOutOfRange(value as u64));
    }
    let mut x = value;
    loop {
        let mut byte = (x % 128) as u8;
        x /= 128;
        if x > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if x == 0 {
            return Ok(());
        }
    }
}

pub(crate) fn varint_len(value: u32) -> usize {
    match value {
        0..=127 => 1,
        128..=16_383 => 2,
        16_384..=2_097_151 => 3,
        _ => 4,
    }
}

/// Decodes a variable byte integer from the front of `buf`, returning the
/// value and the number of bytes consumed.
pub fn decode_varint(buf: &[u8]) -> Result<(u32, usize), DecodeError> {
    let mut value: u32 = 0;
    let mut multiplier: u32 = 1;
    for i in 0..4 {
        let Some(&byte) = buf.get(i) else {
            return Err(DecodeError::Incomplete { needed: 1 });
        };
        value += u32::from(byte & 0x7F) * multiplier;
        if byte & 0x80 == 0 {
            return Ok((value, i + 1));
        }
        multiplier *= 128;
    }
    Err(Malformed::VarIntTooLong.into())
}

pub(crate) fn write_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub(crate) fn write_binary(out: &mut Vec<u8>, data: &[u8]) -> Result<(), EncodeError> {
    let len = u16::try_from(data.len()).map_err(|_| EncodeError::FieldTooLong(data.len()))?;
    write_u16(out, len);
    out.extend_from_slice(data);
    Ok(())
}

pub(crate) fn write_string(out: &mut Vec<u8>, s: &str) -> Result<(), EncodeError> {
    check_string(s)?;
    write_binary(out, s.as_bytes())
}

pub(crate) fn check_string(s: &str) -> Result<(), EncodeError> {
    if s.len() > u16::MAX as usize {
        return Err(EncodeError::FieldTooLong(s.len()));
    }
    if s.contains('\0') {
        return Err(EncodeError::NullCharacter);
    }
    Ok(())
}

/// Cursor over a packet body whose length is already known. Running out of
/// bytes here is a protocol violation, not an incomplete read.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], Malformed> {
        if self.remaining() < n {
            return Err(Malformed::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    pub fn u8(&mut self) -> Result<u8, Malformed> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, Malformed> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Result<u32, Malformed> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn varint(&mut self) -> Result<u32, Malformed> {
        match decode_varint(&self.buf[self.pos..]) {
            Ok((v, n)) => {
                self.pos += n;
                Ok(v)
            }
            Err(DecodeError::Incomplete { .. }) => Err(Malformed::Truncated),
            Err(DecodeError::Malformed(m)) => Err(m),
        }
    }

    pub fn binary(&mut self) -> Result<&'a [u8], Malformed> {
        let len = self.u16()? as usize;
        self.take(len)
    }

    pub fn string(&mut self) -> Result<String, Malformed> {
        let raw = self.binary()?;
        let s = std::str::from_utf8(raw).map_err(|_| Malformed::InvalidUtf8)?;
        if s.contains('\0') {
            return Err(Malformed::NullCharacter);
        }
        Ok(s.to_owned())
    }

    pub fn packet_id(&mut self) -> Result<u16, Malformed> {
        match self.u16()? {
            0 => Err(Malformed::ZeroPacketId),
            id => Ok(id),
        }
    }

    pub fn finish(&self) -> Result<(), Malformed> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(Malformed::TrailingBytes(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription of the divide-by-128 loop from the MQTT
    /// standard, kept apart from `write_varint`.
    fn reference_encode(mut x: u32) -> Vec<u8> {
        let mut out = Vec::new();
        loop {
            let mut encoded = x % 128;
            x /= 128;
            if x > 0 {
                encoded |= 128;
            }
            out.push(encoded as u8);
            if x == 0 {
                break;
            }
        }
        out
    }

    #[test]
    fn reference_loop_yields_frozen_vectors() {
        assert_eq!(reference_encode(0), vec![0x00]);
        assert_eq!(reference_encode(128), vec![0x80, 0x01]);
        assert_eq!(reference_encode(16_383), vec![0xFF, 0x7F]);
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_varint(0).unwrap(), vec![0x00]);
        assert_eq!(encode_varint(128).unwrap(), vec![0x80, 0x01]);
        assert_eq!(encode_varint(16_383).unwrap(), vec![0xFF, 0x7F]);
        assert_eq!(
            encode_varint(VARINT_MAX).unwrap(),
            vec![0xFF, 0xFF, 0xFF, 0x7F]
        );
    }

    #[test]
    fn encode_out_of_range() {
        assert_eq!(
            encode_varint(VARINT_MAX + 1),
            Err(EncodeError::VarIntOutOfRange(VARINT_MAX as u64 + 1))
        );
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_varint(&[0x00]).unwrap(), (0, 1));
        assert_eq!(decode_varint(&[0x80, 0x01]).unwrap(), (128, 2));
        assert_eq!(decode_varint(&[0xFF, 0x7F, 0xAA]).unwrap(), (16_383, 2));
        assert_eq!(
            decode_varint(&[0xFF, 0xFF, 0xFF, 0xFF]),
            Err(DecodeError::Malformed(Malformed::VarIntTooLong))
        );
        assert!(decode_varint(&[0x80]).unwrap_err().is_incomplete());
        assert!(decode_varint(&[]).unwrap_err().is_incomplete());
    }

    #[test]
    fn width_boundaries() {
        for (v, len) in [
            (127, 1),
            (128, 2),
            (16_383, 2),
            (16_384, 3),
            (2_097_151, 3),
            (2_097_152, 4),
        ] {
            assert_eq!(varint_len(v), len);
            assert_eq!(encode_varint(v).unwrap(), reference_encode(v));
        }
    }

    proptest::proptest! {
        #[test]
        fn varint_roundtrip(v in 0u32..=VARINT_MAX) {
            let bytes = encode_varint(v).unwrap();
            proptest::prop_assert_eq!(&bytes, &reference_encode(v));
            proptest::prop_assert_eq!(bytes.len(), varint_len(v));
            proptest::prop_assert_eq!(decode_varint(&bytes).unwrap(), (v, bytes.len()));
        }
    }
}
