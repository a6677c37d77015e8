use super::{CodecError, Frame, FrameKind};
use crate::kernel::SimTime;
use crate::NodeId;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use std::collections::BTreeMap;

/// Identity of an in-flight message: (source, message id) pairs are unique
/// among in-flight transfers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReassemblyKey {
    pub source: NodeId,
    pub message_id: u16,
}

/// Per-message reassembly bookkeeping on the receiving side.
#[derive(Debug, Clone)]
pub struct ReassemblyBuffer {
    pub kind: FrameKind,
    pub expected_total: u16,
    received: Vec<bool>,
    received_count: u16,
    fragments: Vec<Option<Vec<u8>>>,
    pub first_seen: SimTime,
    pub last_update: SimTime,
}

impl ReassemblyBuffer {
    fn new(kind: FrameKind, total: u16, now: SimTime) -> Self {
        ReassemblyBuffer {
            kind,
            expected_total: total,
            received: vec![false; total as usize],
            received_count: 0,
            fragments: vec![None; total as usize],
            first_seen: now,
            last_update: now,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.received_count == self.expected_total
    }

    pub fn missing(&self) -> Vec<u16> {
        self.received
            .iter()
            .enumerate()
            .filter(|(_, got)| !**got)
            .map(|(i, _)| i as u16)
            .collect()
    }
}

/// Result of feeding one fragment into the buffer set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FragmentStatus {
    Incomplete { missing: usize },
    Complete { kind: FrameKind, payload: Vec<u8> },
    Duplicate,
}

/// All reassembly buffers owned by one node.
#[derive(Debug, Default)]
pub struct BufferSet {
    buffers: BTreeMap<ReassemblyKey, ReassemblyBuffer>,
}

impl BufferSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn contains(&self, key: &ReassemblyKey) -> bool {
        self.buffers.contains_key(key)
    }

    pub fn get(&self, key: &ReassemblyKey) -> Option<&ReassemblyBuffer> {
        self.buffers.get(key)
    }

    /// Feed a data-kind fragment. On completion the payload is decoded and
    /// the buffer released. Duplicates never change stored bytes.
    pub fn accept_fragment(
        &mut self,
        frame: &Frame,
        now: SimTime,
    ) -> Result<FragmentStatus, CodecError> {
        let h = &frame.header;
        if !h.kind.is_data() {
            return Err(CodecError::NotDataKind(h.kind));
        }
        if h.fragment_total == 0 || h.fragment_index >= h.fragment_total {
            return Err(CodecError::InvalidFragmentBounds {
                index: h.fragment_index,
                total: h.fragment_total,
            });
        }
        let key = ReassemblyKey {
            source: h.source,
            message_id: h.message_id,
        };
        let buffer = self
            .buffers
            .entry(key)
            .or_insert_with(|| ReassemblyBuffer::new(h.kind, h.fragment_total, now));
        if buffer.expected_total != h.fragment_total {
            return Err(CodecError::TotalConflict {
                expected: buffer.expected_total,
                got: h.fragment_total,
            });
        }
        if buffer.kind != h.kind {
            return Err(CodecError::KindConflict {
                expected: buffer.kind,
                got: h.kind,
            });
        }
        let idx = h.fragment_index as usize;
        if buffer.received[idx] {
            return Ok(FragmentStatus::Duplicate);
        }
        buffer.received[idx] = true;
        buffer.received_count += 1;
        buffer.fragments[idx] = Some(frame.body.clone());
        buffer.last_update = now;

        if buffer.is_complete() {
            let buffer = self.buffers.remove(&key).expect("buffer present");
            let mut text = Vec::new();
            for piece in buffer.fragments.into_iter() {
                text.extend_from_slice(&piece.expect("complete buffer"));
            }
            let payload = BASE64
                .decode(&text)
                .map_err(|e| CodecError::PayloadCorrupt(e.to_string()))?;
            Ok(FragmentStatus::Complete {
                kind: buffer.kind,
                payload,
            })
        } else {
            Ok(FragmentStatus::Incomplete {
                missing: (buffer.expected_total - buffer.received_count) as usize,
            })
        }
    }

    /// Ascending indices of fragments not yet received for `key`.
    pub fn missing_fragments(&self, key: &ReassemblyKey) -> Result<Vec<u16>, CodecError> {
        self.buffers
            .get(key)
            .map(ReassemblyBuffer::missing)
            .ok_or(CodecError::UnknownBuffer {
                node: key.source,
                message_id: key.message_id,
            })
    }

    pub fn drop_buffer(&mut self, key: &ReassemblyKey) -> bool {
        self.buffers.remove(key).is_some()
    }

    /// Remove buffers idle past `timeout`; an expired message counts as
    /// lost at the caller's level.
    pub fn expire_idle(&mut self, now: SimTime, timeout: SimTime) -> Vec<ReassemblyKey> {
        let expired: Vec<_> = self
            .buffers
            .iter()
            .filter(|(_, b)| now.saturating_sub(b.last_update) > timeout)
            .map(|(k, _)| *k)
            .collect();
        for key in &expired {
            self.buffers.remove(key);
        }
        expired
    }
}
