use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::hashgraph::EventId;
use crate::ids::{Tick, TxId};

/// One transaction in a committee's (or the Global Committee's) consensus
/// order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub tx: TxId,
    pub event: EventId,
    pub epoch: u32,
    pub round_received: u32,
    pub consensus_timestamp: Tick,
}

/// Append-only record of ordered transactions across graph epochs.
///
/// A new epoch starts whenever membership changes and the committee restarts
/// its hashgraph. Entries from closed epochs are final; `consumed` tracks how
/// much of the current epoch's order has been appended.
#[derive(Clone, Debug, Default)]
pub struct CommitteeLedger {
    epoch: u32,
    entries: Vec<LedgerEntry>,
    closed_len: usize,
    consumed: usize,
    ordered_events: usize,
    index: HashSet<TxId>,
    duplicates: Vec<TxId>,
}

impl CommitteeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuild from the closed prefix of another ledger.
    pub fn from_closed(epoch: u32, closed: &[LedgerEntry]) -> Self {
        let mut ledger = CommitteeLedger {
            epoch,
            ..Default::default()
        };
        for e in closed {
            ledger.record(e.clone());
        }
        ledger.closed_len = ledger.entries.len();
        ledger
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, tx: TxId) -> bool {
        self.index.contains(&tx)
    }

    pub fn closed(&self) -> &[LedgerEntry] {
        &self.entries[..self.closed_len]
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn ordered_events(&self) -> usize {
        self.ordered_events
    }

    /// Transactions that reached the order a second time and were dropped.
    pub fn duplicates(&self) -> &[TxId] {
        &self.duplicates
    }

    pub(crate) fn note_event(&mut self) {
        self.consumed += 1;
        self.ordered_events += 1;
    }

    /// Returns `false` (and remembers the id) if `tx` is already ordered.
    pub(crate) fn record(&mut self, entry: LedgerEntry) -> bool {
        if !self.index.insert(entry.tx) {
            self.duplicates.push(entry.tx);
            return false;
        }
        self.entries.push(entry);
        true
    }

    pub(crate) fn close_epoch(&mut self) {
        self.epoch += 1;
        self.closed_len = self.entries.len();
        self.consumed = 0;
    }

    /// Hex SHA-256 over the ordered (tx, event) pairs.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.tx.0.to_le_bytes());
            h.update(e.event.0);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
