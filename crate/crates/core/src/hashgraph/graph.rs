use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use super::consensus::{ConsensusCache, ConsensusOrder, Fame};
use super::event::{DigestBuildHasher, Event, EventId};
use super::HashgraphError;
use crate::ids::{NodeId, Tick};
use crate::tx::Transaction;

pub(crate) const NONE: u32 = u32::MAX;

/// Smallest integer strictly greater than two thirds of `member_count`.
pub fn supermajority(member_count: usize) -> Result<usize, HashgraphError> {
    if member_count == 0 {
        return Err(HashgraphError::EmptyPopulation);
    }
    Ok(2 * member_count / 3 + 1)
}

#[derive(Clone, Debug)]
pub(crate) struct Slot {
    pub event: Arc<Event>,
    pub self_parent: u32,
    pub other_parent: u32,
    pub creator: u32,
    /// Length of the self-parent chain ending here.
    pub depth: u32,
}

/// Raw event storage, in insertion order. Insertion order is always
/// topological: parents are present before children.
#[derive(Clone, Debug)]
pub(crate) struct Store {
    pub population: Vec<NodeId>,
    pub slots: Vec<Slot>,
    pub index: HashMap<EventId, u32, DigestBuildHasher>,
    pub by_creator: Vec<Vec<u32>>,
    pub heads: Vec<u32>,
    pub forked: Vec<bool>,
    has_self_child: Vec<bool>,
    has_genesis: Vec<bool>,
}

impl Store {
    pub fn member_pos(&self, node: NodeId) -> Option<u32> {
        self.population.binary_search(&node).ok().map(|p| p as u32)
    }

    pub fn slot_of(&self, id: &EventId) -> Result<u32, HashgraphError> {
        self.index.get(id).copied().ok_or(HashgraphError::UnknownEvent(*id))
    }

    pub fn parent_slots(&self, x: u32) -> impl Iterator<Item = u32> {
        let s = &self.slots[x as usize];
        [s.self_parent, s.other_parent].into_iter().filter(|&p| p != NONE)
    }

    fn validate(&self, event: &Event) -> Result<(u32, u32, u32), HashgraphError> {
        let creator = self
            .member_pos(event.creator)
            .ok_or(HashgraphError::UnknownCreator(event.creator))?;
        let self_parent = match &event.self_parent {
            Some(id) => {
                let p = self.slot_of(id)?;
                if self.slots[p as usize].event.creator != event.creator {
                    return Err(HashgraphError::SelfParentCreator(event.id));
                }
                p
            }
            None => NONE,
        };
        let other_parent = match &event.other_parent {
            Some(id) => {
                if self_parent == NONE {
                    return Err(HashgraphError::MissingSelfParent(event.id));
                }
                let p = self.slot_of(id)?;
                if self.slots[p as usize].event.creator == event.creator {
                    return Err(HashgraphError::OtherParentSameCreator(event.id));
                }
                p
            }
            None => NONE,
        };
        Ok((creator, self_parent, other_parent))
    }

    /// Returns the new slot, or `None` if the event was already known.
    fn insert(&mut self, event: Arc<Event>) -> Result<Option<u32>, HashgraphError> {
        if self.index.contains_key(&event.id) {
            return Ok(None);
        }
        let (creator, self_parent, other_parent) = self.validate(&event)?;
        let slot = self.slots.len() as u32;
        let depth = if self_parent == NONE {
            1
        } else {
            self.slots[self_parent as usize].depth + 1
        };
        let c = creator as usize;
        if self_parent == NONE {
            if self.has_genesis[c] {
                self.forked[c] = true;
            }
            self.has_genesis[c] = true;
        } else {
            if self.has_self_child[self_parent as usize] {
                self.forked[c] = true;
            }
            self.has_self_child[self_parent as usize] = true;
        }
        self.index.insert(event.id, slot);
        self.slots.push(Slot {
            event,
            self_parent,
            other_parent,
            creator,
            depth,
        });
        self.has_self_child.push(false);
        self.by_creator[c].push(slot);
        let head = self.heads[c];
        if head == NONE || depth > self.slots[head as usize].depth {
            self.heads[c] = slot;
        }
        Ok(Some(slot))
    }
}

/// A node's view of one committee's event DAG plus lazily built consensus
/// annotations.
///
/// Annotations are only materialized once a consensus query is made; from
/// then on they are maintained incrementally as events arrive. Cloning a
/// graph copies the events but not the annotations.
#[derive(Debug)]
pub struct Hashgraph {
    pub(crate) store: Store,
    coin_period: u32,
    cache: Option<Box<ConsensusCache>>,
}

impl Clone for Hashgraph {
    fn clone(&self) -> Self {
        Hashgraph {
            store: self.store.clone(),
            coin_period: self.coin_period,
            cache: None,
        }
    }
}

/// What one gossip sync did to the receiver.
#[derive(Clone, Debug)]
pub struct SyncOutcome {
    pub transferred: Vec<Arc<Event>>,
    pub new_event: Arc<Event>,
}

pub const DEFAULT_COIN_PERIOD: u32 = 10;

impl Hashgraph {
    pub fn new(population: impl IntoIterator<Item = NodeId>) -> Result<Self, HashgraphError> {
        let population: Vec<NodeId> = population.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if population.is_empty() {
            return Err(HashgraphError::EmptyPopulation);
        }
        let n = population.len();
        Ok(Hashgraph {
            store: Store {
                population,
                slots: Vec::new(),
                index: HashMap::default(),
                by_creator: vec![Vec::new(); n],
                heads: vec![NONE; n],
                forked: vec![false; n],
                has_self_child: Vec::new(),
                has_genesis: vec![false; n],
            },
            coin_period: DEFAULT_COIN_PERIOD,
            cache: None,
        })
    }

    /// Period of coin rounds in fame voting. Must be at least 3.
    pub fn with_coin_period(mut self, period: u32) -> Self {
        assert!(period >= 3, "coin period must be at least 3");
        self.coin_period = period;
        self.cache = None;
        self
    }

    pub fn coin_period(&self) -> u32 {
        self.coin_period
    }

    pub fn population(&self) -> &[NodeId] {
        &self.store.population
    }

    pub fn is_member(&self, node: NodeId) -> bool {
        self.store.member_pos(node).is_some()
    }

    pub fn supermajority(&self) -> usize {
        2 * self.store.population.len() / 3 + 1
    }

    pub fn len(&self) -> usize {
        self.store.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.slots.is_empty()
    }

    pub fn contains(&self, id: &EventId) -> bool {
        self.store.index.contains_key(id)
    }

    pub fn get(&self, id: &EventId) -> Option<&Arc<Event>> {
        self.store.index.get(id).map(|&s| &self.store.slots[s as usize].event)
    }

    /// Events in insertion (topological) order.
    pub fn events(&self) -> impl Iterator<Item = &Arc<Event>> {
        self.store.slots.iter().map(|s| &s.event)
    }

    pub fn events_by(&self, creator: NodeId) -> impl Iterator<Item = &Arc<Event>> {
        let list = match self.store.member_pos(creator) {
            Some(p) => &self.store.by_creator[p as usize][..],
            None => &[][..],
        };
        list.iter().map(|&s| &self.store.slots[s as usize].event)
    }

    pub fn head(&self, node: NodeId) -> Option<EventId> {
        let pos = self.store.member_pos(node)?;
        let head = self.store.heads[pos as usize];
        (head != NONE).then(|| self.store.slots[head as usize].event.id)
    }

    /// Total payload units stored.
    pub fn payload_units(&self) -> u64 {
        self.store.slots.iter().map(|s| s.event.payload_units()).sum()
    }

    /// Creators known to have equivocated in this view.
    pub fn forked_creators(&self) -> Vec<NodeId> {
        self.store
            .forked
            .iter()
            .zip(&self.store.population)
            .filter(|(f, _)| **f)
            .map(|(_, n)| *n)
            .collect()
    }

    /// Insert an externally created event. Returns `false` if it was already
    /// known.
    pub fn insert(&mut self, event: Arc<Event>) -> Result<bool, HashgraphError> {
        match self.store.insert(event)? {
            Some(slot) => {
                if let Some(cache) = self.cache.as_mut() {
                    cache.on_insert(&self.store, slot);
                }
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Create and insert the creator's next event on top of its current head.
    pub fn create_event(
        &mut self,
        creator: NodeId,
        other_parent: Option<EventId>,
        payload: Vec<Transaction>,
        now: Tick,
    ) -> Result<Arc<Event>, HashgraphError> {
        if !self.is_member(creator) {
            return Err(HashgraphError::UnknownCreator(creator));
        }
        let self_parent = self.head(creator);
        if let Some(op) = &other_parent {
            let slot = self.store.slot_of(op)?;
            if self.store.slots[slot as usize].event.creator == creator {
                return Err(HashgraphError::OtherParentSameCreator(*op));
            }
            if self_parent.is_none() {
                return Err(HashgraphError::MissingSelfParent(*op));
            }
        }
        let event = Arc::new(Event::new(creator, self_parent, other_parent, payload, now));
        self.insert(event.clone())?;
        Ok(event)
    }

    /// Events this view holds that `other` lacks, in topological order.
    pub fn missing_from(&self, other: &Hashgraph) -> Vec<Arc<Event>> {
        let mut slots = Vec::new();
        for (pos, list) in self.store.by_creator.iter().enumerate() {
            if self.store.forked[pos] {
                slots.extend(list.iter().copied().filter(|&s| !other.contains(&self.store.slots[s as usize].event.id)));
            } else {
                // An honest creator's events form a chain, and any view holds a
                // prefix of it, so walking back from the tip is exact.
                for &s in list.iter().rev() {
                    if other.contains(&self.store.slots[s as usize].event.id) {
                        break;
                    }
                    slots.push(s);
                }
            }
        }
        slots.sort_unstable();
        slots.into_iter().map(|s| self.store.slots[s as usize].event.clone()).collect()
    }

    /// Pull every event `sender` has that this view lacks.
    pub fn receive_from(&mut self, sender: &Hashgraph) -> Result<Vec<Arc<Event>>, HashgraphError> {
        if sender.population() != self.population() {
            return Err(HashgraphError::PopulationMismatch);
        }
        let transferred = sender.missing_from(self);
        for event in &transferred {
            self.insert(event.clone())?;
        }
        Ok(transferred)
    }

    /// Is `b` reachable from `a` along parent edges? Every event is its own
    /// ancestor.
    pub fn is_ancestor(&self, a: &EventId, b: &EventId) -> Result<bool, HashgraphError> {
        let a = self.store.slot_of(a)?;
        let b = self.store.slot_of(b)?;
        if let Some(cache) = &self.cache {
            return Ok(cache.ancestor(a, b));
        }
        Ok(self.reachable(a, b))
    }

    fn reachable(&self, a: u32, b: u32) -> bool {
        if a == b {
            return true;
        }
        if b > a {
            return false;
        }
        let mut seen = vec![false; a as usize + 1];
        let mut stack = vec![a];
        while let Some(x) = stack.pop() {
            if x == b {
                return true;
            }
            for p in self.store.parent_slots(x) {
                // Parents always sit at lower slots, so anything below b
                // cannot lead back up to it.
                if p >= b && !seen[p as usize] {
                    seen[p as usize] = true;
                    stack.push(p);
                }
            }
        }
        false
    }

    /// Every pair of same-creator events where neither is an ancestor of the
    /// other. Pairs are reported with the smaller digest first.
    pub fn detect_forks(&self) -> BTreeSet<(NodeId, EventId, EventId)> {
        let mut out = BTreeSet::new();
        for (pos, list) in self.store.by_creator.iter().enumerate() {
            if !self.store.forked[pos] {
                continue;
            }
            for (i, &x) in list.iter().enumerate() {
                for &y in &list[i + 1..] {
                    let comparable = match &self.cache {
                        Some(c) => c.ancestor(x, y) || c.ancestor(y, x),
                        None => self.reachable(x, y) || self.reachable(y, x),
                    };
                    if !comparable {
                        let a = self.store.slots[x as usize].event.id;
                        let b = self.store.slots[y as usize].event.id;
                        out.insert((self.store.population[pos], a.min(b), a.max(b)));
                    }
                }
            }
        }
        out
    }

    fn cache(&mut self) -> &mut ConsensusCache {
        let store = &self.store;
        let coin = self.coin_period;
        self.cache.get_or_insert_with(|| Box::new(ConsensusCache::build(store, coin)))
    }

    /// Does `a` reach `b` through events by a supermajority of distinct members?
    pub fn strongly_sees(&mut self, a: &EventId, b: &EventId) -> Result<bool, HashgraphError> {
        let a = self.store.slot_of(a)?;
        let b = self.store.slot_of(b)?;
        self.cache();
        let cache = self.cache.as_ref().expect("built above");
        Ok(cache.strongly_sees(&self.store, a, b))
    }

    /// Materialize round and witness annotations. Idempotent.
    pub fn assign_rounds(&mut self) {
        self.cache();
    }

    /// Run virtual voting over all undecided witnesses. Decisions are final.
    pub fn elect_fame(&mut self) {
        self.cache();
        let cache = self.cache.as_mut().expect("built above");
        cache.elect_fame(&self.store);
    }

    /// The total order of every event whose round-received is decided.
    pub fn consensus_order(&mut self) -> ConsensusOrder {
        self.elect_fame();
        let cache = self.cache.as_mut().expect("built above");
        cache.advance_order(&self.store);
        cache.order()
    }

    /// Number of order entries, without cloning the order.
    pub fn consensus_len(&mut self) -> usize {
        self.elect_fame();
        let cache = self.cache.as_mut().expect("built above");
        cache.advance_order(&self.store);
        cache.order_len()
    }

    /// Order entries from position `from` on.
    pub fn consensus_since(&mut self, from: usize) -> ConsensusOrder {
        self.elect_fame();
        let cache = self.cache.as_mut().expect("built above");
        cache.advance_order(&self.store);
        cache.order_since(from)
    }

    /// Rounds 1..=r have every known witness decided.
    pub fn decided_rounds(&mut self) -> u32 {
        self.elect_fame();
        self.cache.as_ref().expect("built above").decided_through()
    }

    pub fn round(&mut self, id: &EventId) -> Result<u32, HashgraphError> {
        let s = self.store.slot_of(id)?;
        Ok(self.cache().round(s))
    }

    pub fn is_witness(&mut self, id: &EventId) -> Result<bool, HashgraphError> {
        let s = self.store.slot_of(id)?;
        Ok(self.cache().is_witness(s))
    }

    pub fn fame(&mut self, id: &EventId) -> Result<Fame, HashgraphError> {
        let s = self.store.slot_of(id)?;
        Ok(self.cache().fame(s))
    }

    /// `(round_received, consensus_timestamp)` once decided.
    pub fn received(&mut self, id: &EventId) -> Result<Option<(u32, Tick)>, HashgraphError> {
        let s = self.store.slot_of(id)?;
        self.consensus_len();
        Ok(self.cache().received(s))
    }

    pub fn max_round(&mut self) -> u32 {
        self.cache().max_round()
    }

    /// Witness ids of `round`, sorted by digest.
    pub fn witnesses(&mut self, round: u32) -> Vec<EventId> {
        self.cache();
        let cache = self.cache.as_ref().expect("built above");
        cache
            .witnesses_of(round)
            .iter()
            .map(|&s| self.store.slots[s as usize].event.id)
            .collect()
    }
}

/// Receiver pulls everything the sender knows, then records the sync as a
/// new event whose other-parent is the sender's head.
pub fn gossip_sync(
    sender_graph: &Hashgraph,
    sender: NodeId,
    receiver_graph: &mut Hashgraph,
    receiver: NodeId,
    payload: Vec<Transaction>,
    now: Tick,
) -> Result<SyncOutcome, HashgraphError> {
    let transferred = receiver_graph.receive_from(sender_graph)?;
    let other_parent = match receiver_graph.head(receiver) {
        Some(_) => sender_graph.head(sender),
        None => None,
    };
    let new_event = receiver_graph.create_event(receiver, other_parent, payload, now)?;
    Ok(SyncOutcome {
        transferred,
        new_event,
    })
}
