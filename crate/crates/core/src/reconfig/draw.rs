use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::{Tick, TxId};

/// Randomness taken from a control transaction's consensus timestamp.
///
/// Every honest node sees the same timestamp once the transaction is ordered,
/// so every node derives the same value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomnessDraw {
    pub source_tx: TxId,
    pub consensus_timestamp: Tick,
    pub derived: u64,
}

impl RandomnessDraw {
    /// First eight bytes (big-endian) of SHA-256 over the length-prefixed
    /// little-endian timestamp.
    pub fn new(source_tx: TxId, consensus_timestamp: Tick) -> Self {
        let mut h = Sha256::new();
        h.update(8u32.to_le_bytes());
        h.update(consensus_timestamp.to_le_bytes());
        let digest = h.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        RandomnessDraw {
            source_tx,
            consensus_timestamp,
            derived: u64::from_be_bytes(head),
        }
    }

    /// Index in `0..len` taken directly from the derived value.
    pub fn index(&self, len: usize) -> usize {
        (self.derived % len as u64) as usize
    }

    /// Pick `count` distinct items by drawing successive indices from a
    /// stream seeded with the derived value, removing each pick.
    pub fn choose<T: Clone>(&self, candidates: &[T], count: usize) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.derived);
        let mut pool: Vec<T> = candidates.to_vec();
        let mut out = Vec::with_capacity(count.min(pool.len()));
        while out.len() < count && !pool.is_empty() {
            let i = (rng.next_u64() % pool.len() as u64) as usize;
            out.push(pool.remove(i));
        }
        out
    }
}
