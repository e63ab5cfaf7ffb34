//! Wire frames: `len: u32 LE` (payload length + 1), `tag: u8`, payload.

use crate::codec::{put_uint, width, Reader};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tag {
    /// Opening of a secret value to both parties.
    Reveal = 0x01,
    /// Opening of a value masked by a random offset.
    MaskedShare = 0x02,
    /// Opening of Beaver `delta`/`eps` differences.
    TripleDelta = 0x03,
    /// Session control messages.
    Control = 0x04,
    /// The sender is giving up on the session.
    Abort = 0x05,
}

impl Tag {
    pub fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0x01 => Tag::Reveal,
            0x02 => Tag::MaskedShare,
            0x03 => Tag::TripleDelta,
            0x04 => Tag::Control,
            0x05 => Tag::Abort,
            other => return Err(Error::Transport(format!("unknown frame tag {other:#04x}"))),
        })
    }
}

pub const MAX_FRAME: usize = 1 << 30;

pub fn encode_frame(tag: Tag, payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(payload.len() + 5);
    buf.extend_from_slice(&((payload.len() + 1) as u32).to_le_bytes());
    buf.push(tag as u8);
    buf.extend_from_slice(payload);
    buf
}

/// Splits a complete frame into its tag and payload.
pub fn decode_frame(frame: &[u8]) -> Result<(Tag, &[u8])> {
    if frame.len() < 5 {
        return Err(Error::Transport(format!(
            "frame of {} bytes is too short",
            frame.len()
        )));
    }
    let len = u32::from_le_bytes(frame[..4].try_into().expect("4 bytes")) as usize;
    if len == 0 || len + 4 != frame.len() {
        return Err(Error::Transport(format!(
            "frame length field {len} does not match {} bytes",
            frame.len()
        )));
    }
    Ok((Tag::from_byte(frame[4])?, &frame[5..]))
}

/// Packs ring elements into `ceil(bits / 8)` little-endian bytes each.
pub fn pack(values: &[u64], bits: u32) -> Vec<u8> {
    let w = width(bits);
    let mut buf = Vec::with_capacity(values.len() * w);
    for &v in values {
        put_uint(&mut buf, v, w);
    }
    buf
}

pub fn unpack(bytes: &[u8], count: usize, bits: u32) -> Result<Vec<u64>> {
    let w = width(bits);
    if bytes.len() != count * w {
        return Err(Error::Transport(format!(
            "expected {count} elements of {w} bytes, got {} bytes",
            bytes.len()
        )));
    }
    let mut r = Reader::new(bytes);
    (0..count)
        .map(|_| {
            r.masked(w, bits)
                .map_err(|e| Error::Transport(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_layout() {
        let f = encode_frame(Tag::MaskedShare, &[9, 8, 7]);
        assert_eq!(f, vec![4, 0, 0, 0, 0x02, 9, 8, 7]);
        let (tag, payload) = decode_frame(&f).unwrap();
        assert_eq!(tag, Tag::MaskedShare);
        assert_eq!(payload, &[9, 8, 7]);
        assert!(decode_frame(&f[..6]).is_err());
        assert!(decode_frame(&[1, 0, 0, 0, 0x09]).is_err());
    }

    #[test]
    fn packing_width() {
        assert_eq!(pack(&[0x0102, 0x0304], 12), vec![0x02, 0x01, 0x04, 0x03]);
        assert_eq!(pack(&[5], 64).len(), 8);
        assert!(unpack(&[0xff, 0xff], 1, 12).is_err());
        assert!(unpack(&[1, 2, 3], 1, 12).is_err());
    }

    proptest! {
        #[test]
        fn pack_roundtrip(bits in 4u32..=64, raw in prop::collection::vec(any::<u64>(), 0..64)) {
            let m = crate::ring::mask(bits);
            let vals: Vec<u64> = raw.iter().map(|v| v & m).collect();
            prop_assert_eq!(unpack(&pack(&vals, bits), vals.len(), bits).unwrap(), vals);
        }
    }
}
