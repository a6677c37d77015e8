//! On-air frame format and payload fragmentation.
//!
//! Every frame is a 10-byte big-endian header followed by a body of at
//! most 242 bytes, keeping the whole frame within the 252-byte radio cap.
//!
//! Header layout (offsets in bytes):
//!
//! ```text
//! 0      version (high nibble) | kind (low nibble)
//! 1      source node id
//! 2      destination node id (255 = broadcast)
//! 3..5   message id, u16
//! 5..7   fragment index, u16
//! 7..9   fragment total, u16
//! 9      body length, u8
//! ```
//!
//! Application payloads are base64-encoded as one string and then split
//! into body-sized chunks, so fragment boundaries are independent of
//! base64 padding. Data-kind bodies therefore contain only base64
//! alphabet characters.

mod reassembly;

pub use reassembly::{BufferSet, FragmentStatus, ReassemblyBuffer, ReassemblyKey};

use crate::NodeId;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;

/// Wire protocol revision carried in every header's high nibble.
pub const PROTOCOL_VERSION: u8 = 1;
/// Serialized header size.
pub const HEADER_BYTES: usize = 10;
/// Largest whole frame the radio layer will accept.
pub const MAX_FRAME_BYTES: usize = 252;
/// Largest frame body.
pub const MAX_BODY_BYTES: usize = MAX_FRAME_BYTES - HEADER_BYTES;
/// Default cap on one application message before encoding.
pub const DEFAULT_MAX_MESSAGE_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("message of {len} bytes exceeds the {max}-byte limit")]
    MessageTooLarge { len: usize, max: usize },
    #[error("message needs {0} fragments, above the 16-bit fragment space")]
    TooManyFragments(usize),
    #[error("frame of {0} bytes is shorter than the {HEADER_BYTES}-byte header")]
    FrameTooShort(usize),
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_BYTES}-byte cap")]
    FrameTooLong(usize),
    #[error("unsupported protocol version {0}")]
    VersionMismatch(u8),
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("fragment index {index} not below fragment total {total}")]
    InvalidFragmentBounds { index: u16, total: u16 },
    #[error("declared body length {declared} but {actual} bytes follow the header")]
    BodyLengthMismatch { declared: usize, actual: usize },
    #[error("data-kind body contains bytes outside the base64 alphabet")]
    BodyNotBase64,
    #[error("frame kind {0:?} does not carry fragmented data")]
    NotDataKind(FrameKind),
    #[error("fragment total {got} conflicts with {expected} for an existing buffer")]
    TotalConflict { expected: u16, got: u16 },
    #[error("frame kind {got:?} conflicts with {expected:?} for an existing buffer")]
    KindConflict { expected: FrameKind, got: FrameKind },
    #[error("no reassembly buffer for source {node} message {message_id}")]
    UnknownBuffer { node: NodeId, message_id: u16 },
    #[error("reassembled text is not valid base64: {0}")]
    PayloadCorrupt(String),
}

/// Frame kinds, carried in the header's low nibble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum FrameKind {
    Data = 1,
    Ack = 2,
    Nack = 3,
    Heartbeat = 4,
    BundleData = 5,
    MetricsData = 6,
}

impl FrameKind {
    pub fn from_wire(value: u8) -> Result<Self, CodecError> {
        match value {
            1 => Ok(FrameKind::Data),
            2 => Ok(FrameKind::Ack),
            3 => Ok(FrameKind::Nack),
            4 => Ok(FrameKind::Heartbeat),
            5 => Ok(FrameKind::BundleData),
            6 => Ok(FrameKind::MetricsData),
            other => Err(CodecError::UnknownKind(other)),
        }
    }

    /// Kinds whose bodies are chunks of a base64-encoded payload.
    pub fn is_data(self) -> bool {
        matches!(
            self,
            FrameKind::Data | FrameKind::BundleData | FrameKind::MetricsData
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameHeader {
    pub version: u8,
    pub kind: FrameKind,
    pub source: NodeId,
    pub dest: NodeId,
    pub message_id: u16,
    pub fragment_index: u16,
    pub fragment_total: u16,
}

impl FrameHeader {
    pub fn new(
        kind: FrameKind,
        source: NodeId,
        dest: NodeId,
        message_id: u16,
        fragment_index: u16,
        fragment_total: u16,
    ) -> Self {
        FrameHeader {
            version: PROTOCOL_VERSION,
            kind,
            source,
            dest,
            message_id,
            fragment_index,
            fragment_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub header: FrameHeader,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(header: FrameHeader, body: Vec<u8>) -> Self {
        debug_assert!(body.len() <= MAX_BODY_BYTES);
        Frame { header, body }
    }

    /// Whole-frame length on the wire.
    pub fn wire_len(&self) -> usize {
        HEADER_BYTES + self.body.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.wire_len());
        out.push((h.version << 4) | (h.kind as u8));
        out.push(h.source.0);
        out.push(h.dest.0);
        out.extend_from_slice(&h.message_id.to_be_bytes());
        out.extend_from_slice(&h.fragment_index.to_be_bytes());
        out.extend_from_slice(&h.fragment_total.to_be_bytes());
        out.push(self.body.len() as u8);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn decode(wire: &[u8]) -> Result<Frame, CodecError> {
        if wire.len() < HEADER_BYTES {
            return Err(CodecError::FrameTooShort(wire.len()));
        }
        if wire.len() > MAX_FRAME_BYTES {
            return Err(CodecError::FrameTooLong(wire.len()));
        }
        let version = wire[0] >> 4;
        if version != PROTOCOL_VERSION {
            return Err(CodecError::VersionMismatch(version));
        }
        let kind = FrameKind::from_wire(wire[0] & 0x0f)?;
        let message_id = u16::from_be_bytes([wire[3], wire[4]]);
        let fragment_index = u16::from_be_bytes([wire[5], wire[6]]);
        let fragment_total = u16::from_be_bytes([wire[7], wire[8]]);
        if fragment_total == 0 || fragment_index >= fragment_total {
            return Err(CodecError::InvalidFragmentBounds {
                index: fragment_index,
                total: fragment_total,
            });
        }
        let declared = wire[9] as usize;
        let body = &wire[HEADER_BYTES..];
        if declared != body.len() {
            return Err(CodecError::BodyLengthMismatch {
                declared,
                actual: body.len(),
            });
        }
        if kind.is_data() && !body.iter().all(|&b| is_base64_byte(b)) {
            return Err(CodecError::BodyNotBase64);
        }
        Ok(Frame {
            header: FrameHeader {
                version,
                kind,
                source: NodeId(wire[1]),
                dest: NodeId(wire[2]),
                message_id,
                fragment_index,
                fragment_total,
            },
            body: body.to_vec(),
        })
    }
}

fn is_base64_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'+' || b == b'/' || b == b'='
}

/// Number of frames a payload of `payload_len` raw bytes fragments into.
pub fn fragment_count(payload_len: usize) -> usize {
    let b64_len = payload_len.div_ceil(3) * 4;
    b64_len.div_ceil(MAX_BODY_BYTES).max(1)
}

/// Fragment an application payload into ordered data frames.
///
/// The payload is base64-encoded as one string, then split into chunks of
/// at most [`MAX_BODY_BYTES`]; an empty payload still yields one frame.
/// Concatenating the bodies in index order and base64-decoding recovers
/// the payload exactly.
pub fn encode_message(
    kind: FrameKind,
    source: NodeId,
    dest: NodeId,
    message_id: u16,
    payload: &[u8],
    max_message_bytes: usize,
) -> Result<Vec<Frame>, CodecError> {
    if !kind.is_data() {
        return Err(CodecError::NotDataKind(kind));
    }
    if payload.len() > max_message_bytes {
        return Err(CodecError::MessageTooLarge {
            len: payload.len(),
            max: max_message_bytes,
        });
    }
    let encoded = BASE64.encode(payload);
    let total = fragment_count(payload.len());
    if total > u16::MAX as usize {
        return Err(CodecError::TooManyFragments(total));
    }
    let mut frames = Vec::with_capacity(total);
    for index in 0..total {
        let chunk = if encoded.is_empty() {
            &[][..]
        } else {
            let lo = index * MAX_BODY_BYTES;
            let hi = ((index + 1) * MAX_BODY_BYTES).min(encoded.len());
            &encoded.as_bytes()[lo..hi]
        };
        frames.push(Frame::new(
            FrameHeader::new(kind, source, dest, message_id, index as u16, total as u16),
            chunk.to_vec(),
        ));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_frame() -> Frame {
        Frame::new(
            FrameHeader::new(FrameKind::Data, NodeId(3), NodeId(0), 0x0102, 2, 5),
            b"QUJD".to_vec(),
        )
    }

    #[test]
    fn header_is_ten_bytes_big_endian() {
        let wire = data_frame().encode();
        assert_eq!(wire.len(), HEADER_BYTES + 4);
        assert_eq!(
            &wire[..HEADER_BYTES],
            &[0x11, 0x03, 0x00, 0x01, 0x02, 0x00, 0x02, 0x00, 0x05, 0x04]
        );
    }

    #[test]
    fn decode_inverts_encode() {
        let frame = data_frame();
        assert_eq!(Frame::decode(&frame.encode()).unwrap(), frame);
        let hb = Frame::new(
            FrameHeader::new(FrameKind::Heartbeat, NodeId(1), NodeId::BROADCAST, 9, 0, 1),
            vec![0x02, 0x00, 0x01],
        );
        assert_eq!(Frame::decode(&hb.encode()).unwrap(), hb);
    }

    #[test]
    fn short_input_is_rejected() {
        assert_eq!(
            Frame::decode(&[1, 2, 3, 4, 5]),
            Err(CodecError::FrameTooShort(5))
        );
    }

    #[test]
    fn version_and_kind_are_validated() {
        let mut wire = data_frame().encode();
        wire[0] = 0x21; // version 2
        assert_eq!(Frame::decode(&wire), Err(CodecError::VersionMismatch(2)));
        let mut wire = data_frame().encode();
        wire[0] = 0x1f; // kind 15
        assert_eq!(Frame::decode(&wire), Err(CodecError::UnknownKind(15)));
    }

    #[test]
    fn fragment_bounds_are_validated() {
        let mut wire = data_frame().encode();
        wire[5] = 0;
        wire[6] = 5; // index 5 == total 5
        assert_eq!(
            Frame::decode(&wire),
            Err(CodecError::InvalidFragmentBounds { index: 5, total: 5 })
        );
    }

    #[test]
    fn data_body_must_be_base64_alphabet() {
        let mut wire = data_frame().encode();
        wire[HEADER_BYTES] = 0x00;
        assert_eq!(Frame::decode(&wire), Err(CodecError::BodyNotBase64));
        // Control bodies are unconstrained: a NACK carries raw indices.
        let nack = Frame::new(
            FrameHeader::new(FrameKind::Nack, NodeId(2), NodeId(1), 7, 0, 1),
            vec![0x00, 0x02, 0x00, 0x05],
        );
        assert_eq!(Frame::decode(&nack.encode()).unwrap(), nack);
    }

    #[test]
    fn body_length_byte_is_checked() {
        let mut wire = data_frame().encode();
        wire[9] = 3;
        assert_eq!(
            Frame::decode(&wire),
            Err(CodecError::BodyLengthMismatch {
                declared: 3,
                actual: 4
            })
        );
    }

    #[test]
    fn empty_payload_yields_one_empty_frame() {
        let frames = encode_message(
            FrameKind::Data,
            NodeId(0),
            NodeId(1),
            1,
            b"",
            DEFAULT_MAX_MESSAGE_BYTES,
        )
        .unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].header.fragment_total, 1);
        assert!(frames[0].body.is_empty());
    }

    #[test]
    fn fragment_counts_match_base64_arithmetic() {
        // 100 raw bytes -> 136 base64 chars -> one frame.
        assert_eq!(fragment_count(100), 1);
        // 1000 raw bytes -> 1336 base64 chars -> 6 frames (5*242 + 126).
        let frames = encode_message(
            FrameKind::Data,
            NodeId(0),
            NodeId(1),
            1,
            &[0xAB; 1000],
            DEFAULT_MAX_MESSAGE_BYTES,
        )
        .unwrap();
        assert_eq!(frames.len(), 6);
        assert!(frames[..5].iter().all(|f| f.body.len() == MAX_BODY_BYTES));
        assert_eq!(frames[5].body.len(), 126);
        // 10 KiB -> 13656 base64 chars -> 57 frames.
        assert_eq!(fragment_count(10 * 1024), 57);
    }

    #[test]
    fn oversize_message_is_rejected() {
        let err = encode_message(FrameKind::Data, NodeId(0), NodeId(1), 1, &[0u8; 11], 10)
            .unwrap_err();
        assert_eq!(err, CodecError::MessageTooLarge { len: 11, max: 10 });
    }

    #[test]
    fn wire_vectors_match_the_protocol_document() {
        // Keep in sync with docs/protocol.md.
        let data = Frame::new(
            FrameHeader::new(FrameKind::Data, NodeId(3), NodeId(0), 0x0102, 2, 5),
            b"QUJD".to_vec(),
        );
        assert_eq!(
            data.encode(),
            b"\x11\x03\x00\x01\x02\x00\x02\x00\x05\x04QUJD"
        );
        let ack = Frame::new(
            FrameHeader::new(FrameKind::Ack, NodeId(2), NodeId(1), 7, 0, 1),
            Vec::new(),
        );
        assert_eq!(ack.encode(), b"\x12\x02\x01\x00\x07\x00\x00\x00\x01\x00");
        let nack = Frame::new(
            FrameHeader::new(FrameKind::Nack, NodeId(2), NodeId(1), 7, 0, 1),
            vec![0x00, 0x02, 0x00, 0x05],
        );
        assert_eq!(
            nack.encode(),
            b"\x13\x02\x01\x00\x07\x00\x00\x00\x01\x04\x00\x02\x00\x05"
        );
        let heartbeat = Frame::new(
            FrameHeader::new(FrameKind::Heartbeat, NodeId(4), NodeId::BROADCAST, 9, 0, 1),
            vec![0x00, 0x02, 0x00, 0x01],
        );
        assert_eq!(
            heartbeat.encode(),
            b"\x14\x04\xFF\x00\x09\x00\x00\x00\x01\x04\x00\x02\x00\x01"
        );
        let hello = encode_message(
            FrameKind::Data,
            NodeId(0),
            NodeId(1),
            0,
            b"hello",
            DEFAULT_MAX_MESSAGE_BYTES,
        )
        .unwrap();
        assert_eq!(hello.len(), 1);
        assert_eq!(
            hello[0].encode(),
            b"\x11\x00\x01\x00\x00\x00\x00\x00\x01\x08aGVsbG8="
        );
    }

    #[test]
    fn every_emitted_frame_fits_the_radio_cap() {
        for len in [0usize, 1, 2, 3, 100, 242, 243, 1000, 4096] {
            let frames = encode_message(
                FrameKind::BundleData,
                NodeId(0),
                NodeId(1),
                1,
                &vec![0x5A; len],
                DEFAULT_MAX_MESSAGE_BYTES,
            )
            .unwrap();
            for f in &frames {
                assert!(f.wire_len() <= MAX_FRAME_BYTES);
                assert!(Frame::decode(&f.encode()).is_ok());
            }
        }
    }
}
