//! Virtual voting: rounds, witnesses, fame, and the consensus order.
//!
//! All annotations are computed over slot indices of a [`Store`]. Ancestry is
//! kept as one bitset per event, and for every event the highest-depth
//! ancestor by each member, which makes "strongly sees" an O(members) query
//! for creators that never forked.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::event::EventId;
use super::graph::{Store, NONE};
use crate::ids::Tick;

#[derive(Clone, Debug, Default)]
struct BitSet(Vec<u64>);

impl BitSet {
    fn with_bits(bits: usize) -> Self {
        BitSet(vec![0; bits.div_ceil(64)])
    }

    fn set(&mut self, i: u32) {
        self.0[i as usize / 64] |= 1 << (i % 64);
    }

    fn has(&self, i: u32) -> bool {
        self.0
            .get(i as usize / 64)
            .is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    fn union_with(&mut self, other: &BitSet) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fame {
    Undecided,
    Famous,
    NotFamous,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderEntry {
    pub event: EventId,
    pub round_received: u32,
    pub consensus_timestamp: Tick,
}

/// Events sorted by round received, then consensus timestamp, then digest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusOrder {
    pub ordered: Vec<OrderEntry>,
}

impl ConsensusOrder {
    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    pub fn is_prefix_of(&self, other: &ConsensusOrder) -> bool {
        self.ordered.len() <= other.ordered.len() && other.ordered[..self.ordered.len()] == self.ordered[..]
    }

    /// One of the two is a prefix of the other.
    pub fn consistent_with(&self, other: &ConsensusOrder) -> bool {
        self.is_prefix_of(other) || other.is_prefix_of(self)
    }

    pub fn event_ids(&self) -> impl Iterator<Item = &EventId> {
        self.ordered.iter().map(|e| &e.event)
    }
}

#[derive(Debug)]
pub(crate) struct ConsensusCache {
    coin_period: u32,
    supermajority: usize,
    anc: Vec<BitSet>,
    last: Vec<Box<[u32]>>,
    round: Vec<u32>,
    witness: Vec<bool>,
    fame: Vec<Fame>,
    /// For witnesses: previous-round witnesses this one strongly sees.
    prev_seen: Vec<Vec<u32>>,
    /// Round -> witness slots, sorted by digest.
    witnesses: BTreeMap<u32, Vec<u32>>,
    received: Vec<Option<(u32, Tick)>>,
    unordered: BTreeSet<u32>,
    decided_through: u32,
    processed_through: u32,
    order: Vec<OrderEntry>,
}

impl ConsensusCache {
    pub fn build(store: &Store, coin_period: u32) -> Self {
        let mut cache = ConsensusCache {
            coin_period,
            supermajority: 2 * store.population.len() / 3 + 1,
            anc: Vec::with_capacity(store.slots.len()),
            last: Vec::with_capacity(store.slots.len()),
            round: Vec::with_capacity(store.slots.len()),
            witness: Vec::with_capacity(store.slots.len()),
            fame: Vec::with_capacity(store.slots.len()),
            prev_seen: Vec::with_capacity(store.slots.len()),
            witnesses: BTreeMap::new(),
            received: Vec::with_capacity(store.slots.len()),
            unordered: BTreeSet::new(),
            decided_through: 0,
            processed_through: 0,
            order: Vec::new(),
        };
        for slot in 0..store.slots.len() as u32 {
            cache.on_insert(store, slot);
        }
        cache
    }

    pub fn ancestor(&self, a: u32, b: u32) -> bool {
        self.anc[a as usize].has(b)
    }

    pub fn round(&self, x: u32) -> u32 {
        self.round[x as usize]
    }

    pub fn is_witness(&self, x: u32) -> bool {
        self.witness[x as usize]
    }

    pub fn fame(&self, x: u32) -> Fame {
        self.fame[x as usize]
    }

    pub fn received(&self, x: u32) -> Option<(u32, Tick)> {
        self.received[x as usize]
    }

    pub fn max_round(&self) -> u32 {
        self.witnesses.keys().next_back().copied().unwrap_or(0)
    }

    pub fn decided_through(&self) -> u32 {
        self.decided_through
    }

    pub fn witnesses_of(&self, round: u32) -> &[u32] {
        self.witnesses.get(&round).map(|v| &v[..]).unwrap_or(&[])
    }

    pub fn order(&self) -> ConsensusOrder {
        ConsensusOrder {
            ordered: self.order.clone(),
        }
    }

    pub fn order_len(&self) -> usize {
        self.order.len()
    }

    pub fn order_since(&self, from: usize) -> ConsensusOrder {
        ConsensusOrder {
            ordered: self.order[from.min(self.order.len())..].to_vec(),
        }
    }

    pub fn strongly_sees(&self, store: &Store, x: u32, y: u32) -> bool {
        if !self.ancestor(x, y) {
            return false;
        }
        let mut count = 0;
        for (c, events) in store.by_creator.iter().enumerate() {
            let through_c = if store.forked[c] {
                events
                    .iter()
                    .any(|&z| z <= x && self.ancestor(x, z) && self.ancestor(z, y))
            } else {
                let z = self.last[x as usize][c];
                z != NONE && self.ancestor(z, y)
            };
            if through_c {
                count += 1;
                if count >= self.supermajority {
                    return true;
                }
            }
        }
        false
    }

    /// Witnesses of `round` strongly seen by `x`, and how many distinct
    /// creators they cover.
    fn strongly_seen_witnesses(&self, store: &Store, x: u32, round: u32) -> (Vec<u32>, usize) {
        let seen: Vec<u32> = self
            .witnesses_of(round)
            .iter()
            .copied()
            .filter(|&w| self.strongly_sees(store, x, w))
            .collect();
        let creators: BTreeSet<u32> = seen.iter().map(|&w| store.slots[w as usize].creator).collect();
        (seen, creators.len())
    }

    pub fn on_insert(&mut self, store: &Store, x: u32) {
        let slot = &store.slots[x as usize];
        let (sp, op) = (slot.self_parent, slot.other_parent);

        let mut anc = BitSet::with_bits(x as usize + 1);
        let mut last = vec![NONE; store.population.len()].into_boxed_slice();
        for p in [sp, op] {
            if p == NONE {
                continue;
            }
            anc.union_with(&self.anc[p as usize]);
            for (mine, theirs) in last.iter_mut().zip(self.last[p as usize].iter()) {
                if *theirs != NONE
                    && (*mine == NONE || store.slots[*theirs as usize].depth > store.slots[*mine as usize].depth)
                {
                    *mine = *theirs;
                }
            }
        }
        anc.set(x);
        last[slot.creator as usize] = x;
        self.anc.push(anc);
        self.last.push(last);

        // Placeholder so strongly_sees can index this slot while we decide.
        self.round.push(0);
        let parent_round = [sp, op]
            .into_iter()
            .filter(|&p| p != NONE)
            .map(|p| self.round[p as usize])
            .max();
        let (round, advanced_seen) = match parent_round {
            None => (1, None),
            Some(r) => {
                let (seen, creators) = self.strongly_seen_witnesses(store, x, r);
                if creators >= self.supermajority {
                    (r + 1, Some(seen))
                } else {
                    (r, None)
                }
            }
        };
        self.round[x as usize] = round;
        let witness = sp == NONE || round > self.round[sp as usize];
        self.witness.push(witness);

        let mut fame = Fame::Undecided;
        let mut prev_seen = Vec::new();
        if witness {
            prev_seen = match advanced_seen {
                Some(seen) => seen,
                None if round > 1 => self.strongly_seen_witnesses(store, x, round - 1).0,
                None => Vec::new(),
            };
            let id = &slot.event.id;
            let list = self.witnesses.entry(round).or_default();
            let at = list
                .binary_search_by(|&w| store.slots[w as usize].event.id.cmp(id))
                .unwrap_or_else(|i| i);
            list.insert(at, x);
            // A witness showing up after its round was settled cannot be
            // famous: the later witnesses that settled it never saw it.
            if round <= self.decided_through {
                fame = Fame::NotFamous;
            }
        }
        self.fame.push(fame);
        self.prev_seen.push(prev_seen);
        self.received.push(None);
        self.unordered.insert(x);
    }

    pub fn elect_fame(&mut self, store: &Store) {
        let max_round = self.max_round();
        let undecided: Vec<u32> = self
            .witnesses
            .iter()
            .flat_map(|(_, ws)| ws.iter().copied())
            .filter(|&w| self.fame[w as usize] == Fame::Undecided)
            .collect();
        for y in undecided {
            if let Some(famous) = self.vote_on(store, y, max_round) {
                self.fame[y as usize] = if famous { Fame::Famous } else { Fame::NotFamous };
            }
        }
        while let Some(ws) = self.witnesses.get(&(self.decided_through + 1)) {
            if ws.iter().any(|&w| self.fame[w as usize] == Fame::Undecided) {
                break;
            }
            self.decided_through += 1;
        }
    }

    fn vote_on(&self, store: &Store, y: u32, max_round: u32) -> Option<bool> {
        let ry = self.round[y as usize];
        let mut votes: HashMap<u32, bool> = HashMap::new();
        for rx in ry + 1..=max_round {
            let diff = rx - ry;
            for &x in self.witnesses_of(rx) {
                if diff == 1 {
                    votes.insert(x, self.ancestor(x, y));
                    continue;
                }
                let seen = &self.prev_seen[x as usize];
                let yes = seen.iter().filter(|s| votes.get(s).copied().unwrap_or(false)).count();
                let no = seen.len() - yes;
                let majority = yes >= no;
                let tally = yes.max(no);
                let vote = if diff % self.coin_period != 0 {
                    if tally >= self.supermajority {
                        return Some(majority);
                    }
                    majority
                } else if tally >= self.supermajority {
                    majority
                } else {
                    store.slots[x as usize].event.id.low_bit()
                };
                votes.insert(x, vote);
            }
        }
        None
    }

    /// Assign round-received to events in newly decided rounds and append them
    /// to the order.
    pub fn advance_order(&mut self, store: &Store) {
        while self.processed_through < self.decided_through {
            let r = self.processed_through + 1;
            let famous: Vec<u32> = self
                .witnesses_of(r)
                .iter()
                .copied()
                .filter(|&w| self.fame[w as usize] == Fame::Famous)
                .collect();
            let mut per_creator: BTreeMap<u32, usize> = BTreeMap::new();
            for &w in &famous {
                *per_creator.entry(store.slots[w as usize].creator).or_default() += 1;
            }
            let unique: Vec<u32> = famous
                .into_iter()
                .filter(|&w| per_creator[&store.slots[w as usize].creator] == 1)
                .collect();
            if !unique.is_empty() {
                let mut batch: Vec<(Tick, EventId, u32)> = Vec::new();
                for &x in &self.unordered {
                    if self.round[x as usize] > r || !unique.iter().all(|&w| self.ancestor(w, x)) {
                        continue;
                    }
                    let mut stamps: Vec<Tick> = unique
                        .iter()
                        .map(|&w| {
                            let mut z = w;
                            loop {
                                let p = store.slots[z as usize].self_parent;
                                if p != NONE && self.ancestor(p, x) {
                                    z = p;
                                } else {
                                    break;
                                }
                            }
                            store.slots[z as usize].event.created_at
                        })
                        .collect();
                    stamps.sort_unstable();
                    let ts = stamps[stamps.len() / 2];
                    batch.push((ts, store.slots[x as usize].event.id, x));
                }
                batch.sort();
                for (ts, id, x) in batch {
                    self.unordered.remove(&x);
                    self.received[x as usize] = Some((r, ts));
                    self.order.push(OrderEntry {
                        event: id,
                        round_received: r,
                        consensus_timestamp: ts,
                    });
                }
            }
            self.processed_through = r;
        }
    }
}
