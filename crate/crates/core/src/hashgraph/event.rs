use std::fmt;
use std::hash::{BuildHasherDefault, Hasher};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::{NodeId, Tick};
use crate::tx::Transaction;

/// SHA-256 digest of an event's canonical serialization.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub [u8; 32]);

impl EventId {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Low bit of the digest, used as the coin in coin rounds.
    pub fn low_bit(&self) -> bool {
        self.0[31] & 1 == 1
    }
}

impl fmt::Debug for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventId({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex()[..12])
    }
}

impl Serialize for EventId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for EventId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 64 {
            return Err(serde::de::Error::custom("event id must be 64 hex digits"));
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(serde::de::Error::custom)?;
        }
        Ok(EventId(out))
    }
}

/// Digests are already uniformly distributed, so hash maps keyed by them just
/// take the leading bytes.
#[derive(Default)]
pub struct DigestHasher(u64);

impl Hasher for DigestHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for chunk in bytes.chunks(8).take(1) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            self.0 ^= u64::from_le_bytes(buf);
        }
    }

    fn write_usize(&mut self, _: usize) {}
}

pub type DigestBuildHasher = BuildHasherDefault<DigestHasher>;

/// A vertex of the hashgraph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub id: EventId,
    pub creator: NodeId,
    pub self_parent: Option<EventId>,
    pub other_parent: Option<EventId>,
    pub payload: Vec<Transaction>,
    pub created_at: Tick,
}

impl Event {
    pub fn new(
        creator: NodeId,
        self_parent: Option<EventId>,
        other_parent: Option<EventId>,
        payload: Vec<Transaction>,
        created_at: Tick,
    ) -> Self {
        let id = EventId(Sha256::digest(canonical_bytes(
            creator,
            self_parent.as_ref(),
            other_parent.as_ref(),
            &payload,
            created_at,
        ))
        .into());
        Event {
            id,
            creator,
            self_parent,
            other_parent,
            payload,
            created_at,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.self_parent.is_none() && self.other_parent.is_none()
    }

    /// Transaction units carried; with a zero base size this is the event size.
    pub fn payload_units(&self) -> u64 {
        self.payload.iter().map(|tx| tx.size_units as u64).sum()
    }
}

/// Fixed field order, every field length-prefixed with a little-endian u32:
/// creator, self_parent, other_parent, payload tx ids, created_at. An absent
/// parent is a zero-length field.
pub fn canonical_bytes(
    creator: NodeId,
    self_parent: Option<&EventId>,
    other_parent: Option<&EventId>,
    payload: &[Transaction],
    created_at: Tick,
) -> Vec<u8> {
    fn field(out: &mut Vec<u8>, bytes: &[u8]) {
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(bytes);
    }
    let mut out = Vec::with_capacity(96 + 8 * payload.len());
    field(&mut out, &creator.0.to_le_bytes());
    field(&mut out, self_parent.map(|p| &p.0[..]).unwrap_or(&[]));
    field(&mut out, other_parent.map(|p| &p.0[..]).unwrap_or(&[]));
    let ids: Vec<u8> = payload.iter().flat_map(|tx| tx.id.0.to_le_bytes()).collect();
    field(&mut out, &ids);
    field(&mut out, &created_at.to_le_bytes());
    out
}

/// Size model: `base + per_tx * |payload|` units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSizeModel {
    pub base: u64,
    pub per_tx: u64,
}

impl Default for EventSizeModel {
    fn default() -> Self {
        EventSizeModel { base: 0, per_tx: 1 }
    }
}

impl EventSizeModel {
    pub fn size(&self, event: &Event) -> u64 {
        self.base + self.per_tx * event.payload_units()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{CommitteeId, TxId};

    #[test]
    fn digest_depends_on_every_field() {
        let tx = Transaction::transfer(TxId(7), CommitteeId(0), CommitteeId(0), 0);
        let base = Event::new(NodeId(1), None, None, vec![], 0);
        let variants = [
            Event::new(NodeId(2), None, None, vec![], 0),
            Event::new(NodeId(1), Some(base.id), None, vec![], 0),
            Event::new(NodeId(1), None, Some(base.id), vec![], 0),
            Event::new(NodeId(1), None, None, vec![tx], 0),
            Event::new(NodeId(1), None, None, vec![], 1),
        ];
        for v in &variants {
            assert_ne!(v.id, base.id);
        }
        assert_eq!(Event::new(NodeId(1), None, None, vec![], 0).id, base.id);
    }

    #[test]
    fn parents_are_not_interchangeable() {
        let p = Event::new(NodeId(1), None, None, vec![], 0);
        let a = Event::new(NodeId(1), Some(p.id), None, vec![], 1);
        let b = Event::new(NodeId(1), None, Some(p.id), vec![], 1);
        assert_ne!(a.id, b.id);
    }

    #[test]
    fn injection_tick_is_not_hashed() {
        let mut tx = Transaction::transfer(TxId(7), CommitteeId(0), CommitteeId(1), 0);
        let a = Event::new(NodeId(1), None, None, vec![tx.clone()], 0);
        tx.injected_at = 99;
        let b = Event::new(NodeId(1), None, None, vec![tx], 0);
        assert_eq!(a.id, b.id);
    }

    #[test]
    fn hex_round_trip() {
        let e = Event::new(NodeId(3), None, None, vec![], 5);
        let json = serde_json::to_string(&e.id).unwrap();
        let back: EventId = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e.id);
    }
}
