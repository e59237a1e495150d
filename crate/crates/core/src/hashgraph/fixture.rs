//! Small hand-checkable graphs stored as text.
//!
//! ```text
//! # comments and blank lines are ignored
//! population 4
//! # creator self_parent other_parent payload_count created_at
//! 0 - - 0 0
//! 1 - - 0 0
//! 0 0 1 1 1
//! ```
//!
//! Parent columns are zero-based indices of earlier event lines, or `-`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Event, EventId, Hashgraph, HashgraphError};
use crate::ids::{CommitteeId, NodeId, Tick, TxId};
use crate::tx::Transaction;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixtureEvent {
    pub creator: u32,
    pub self_parent: Option<usize>,
    pub other_parent: Option<usize>,
    pub payload_count: u32,
    pub created_at: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fixture {
    pub population: u32,
    pub events: Vec<FixtureEvent>,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing `population` header")]
    MissingPopulation,
    #[error("event {index}: {source}")]
    Invalid {
        index: usize,
        #[source]
        source: HashgraphError,
    },
}

impl Fixture {
    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut population = None;
        let mut events = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |msg: &str| FixtureError::Parse {
                line,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields[0] == "population" {
                let n = fields
                    .get(1)
                    .and_then(|v| v.parse::<u32>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| err("population must be a positive integer"))?;
                population = Some(n);
                continue;
            }
            if fields.len() != 5 {
                return Err(err("expected: creator self_parent other_parent payload_count created_at"));
            }
            let parent = |s: &str| -> Result<Option<usize>, FixtureError> {
                if s == "-" {
                    return Ok(None);
                }
                let idx: usize = s.parse().map_err(|_| err("parent must be an index or `-`"))?;
                if idx >= events.len() {
                    return Err(err("parent index must refer to an earlier event"));
                }
                Ok(Some(idx))
            };
            let ev = FixtureEvent {
                creator: fields[0].parse().map_err(|_| err("bad creator"))?,
                self_parent: parent(fields[1])?,
                other_parent: parent(fields[2])?,
                payload_count: fields[3].parse().map_err(|_| err("bad payload_count"))?,
                created_at: fields[4].parse().map_err(|_| err("bad created_at"))?,
            };
            events.push(ev);
        }
        Ok(Fixture {
            population: population.ok_or(FixtureError::MissingPopulation)?,
            events,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "population {}", self.population);
        let _ = writeln!(out, "# creator self_parent other_parent payload_count created_at");
        let idx = |p: Option<usize>| p.map_or("-".to_string(), |i| i.to_string());
        for e in &self.events {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                e.creator,
                idx(e.self_parent),
                idx(e.other_parent),
                e.payload_count,
                e.created_at
            );
        }
        out
    }

    /// Concrete events, in file order. Payload transactions get ids derived
    /// from the event index.
    pub fn materialize(&self) -> Vec<Arc<Event>> {
        let mut out: Vec<Arc<Event>> = Vec::with_capacity(self.events.len());
        for (i, e) in self.events.iter().enumerate() {
            let payload = (0..e.payload_count)
                .map(|j| Transaction::transfer(TxId(((i as u64) << 16) | j as u64), CommitteeId(0), CommitteeId(0), e.created_at))
                .collect();
            let id = |p: Option<usize>| p.map(|i| out[i].id);
            let ev = Event::new(NodeId(e.creator), id(e.self_parent), id(e.other_parent), payload, e.created_at);
            out.push(Arc::new(ev));
        }
        out
    }

    pub fn to_graph(&self) -> Result<Hashgraph, FixtureError> {
        let mut g = Hashgraph::new((0..self.population).map(NodeId)).map_err(|source| FixtureError::Invalid { index: 0, source })?;
        for (index, ev) in self.materialize().into_iter().enumerate() {
            g.insert(ev).map_err(|source| FixtureError::Invalid { index, source })?;
        }
        Ok(g)
    }

    pub fn ids(&self) -> Vec<EventId> {
        self.materialize().iter().map(|e| e.id).collect()
    }

    fn heads(&self) -> Vec<Option<usize>> {
        let mut heads = vec![None; self.population as usize];
        for (i, e) in self.events.iter().enumerate() {
            heads[e.creator as usize] = Some(i);
        }
        heads
    }

    fn push_sync(&mut self, creator: u32, partner: Option<u32>, payload_count: u32, at: Tick) {
        let heads = self.heads();
        self.events.push(FixtureEvent {
            creator,
            self_parent: heads[creator as usize],
            other_parent: partner.and_then(|p| heads[p as usize]),
            payload_count,
            created_at: at,
        });
    }

    fn genesis(population: u32) -> Self {
        Fixture {
            population,
            events: (0..population)
                .map(|c| FixtureEvent {
                    creator: c,
                    self_parent: None,
                    other_parent: None,
                    payload_count: 0,
                    created_at: 0,
                })
                .collect(),
        }
    }

    /// Node `i mod n` syncs from node `i + 1 mod n` each step, until every
    /// node has created `per_node` events including its genesis.
    pub fn round_robin(population: u32, per_node: u32) -> Self {
        let mut f = Self::genesis(population);
        let steps = population * per_node.saturating_sub(1);
        for i in 0..steps {
            let creator = i % population;
            f.push_sync(creator, Some((creator + 1) % population), 1, 1 + i as Tick);
        }
        f
    }

    /// Uniformly random syncs.
    pub fn random_gossip(population: u32, total_events: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Self::genesis(population);
        let mut t = 0;
        while f.events.len() < total_events {
            t += 1;
            let creator = rng.random_range(0..population);
            let partner = if population > 1 {
                Some((creator + rng.random_range(1..population)) % population)
            } else {
                None
            };
            f.push_sync(creator, partner, rng.random_range(0..3), t);
        }
        f
    }

    /// Random gossip in which `forker` at one point branches its own chain.
    pub fn with_forker(population: u32, total_events: usize, forker: u32, seed: u64) -> Self {
        let mut f = Self::random_gossip(population, total_events.saturating_sub(1), seed);
        let branch_from = f
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.creator == forker && e.self_parent.is_some())
            .map(|(i, e)| (i, e.self_parent))
            .next();
        let (self_parent, created_at) = match branch_from {
            Some((i, sp)) => (sp, f.events[i].created_at + 1000),
            None => (Some(forker as usize), 1000),
        };
        f.events.push(FixtureEvent {
            creator: forker,
            self_parent,
            other_parent: None,
            payload_count: 0,
            created_at,
        });
        f
    }
}


/// Round-robin gossip among members `0..active`, while the remaining members
/// contribute only their genesis events.
pub fn silent_members(population: u32, active: u32, total_events: usize) -> Fixture {
    let mut f = Fixture::genesis(population);
    let mut i = 0u32;
    while f.events.len() < total_events {
        let creator = i % active;
        f.push_sync(creator, Some((creator + 1) % active), 1, 1 + i as Tick);
        i += 1;
    }
    f
}

/// The fixtures shipped for oracle tests, with their file names.
pub fn shipped() -> Vec<(&'static str, Fixture)> {
    vec![
        ("round_robin_4x5.hg", Fixture::round_robin(4, 5)),
        ("gossip_4_seed1.hg", Fixture::random_gossip(4, 20, 1)),
        ("gossip_4_seed7.hg", Fixture::random_gossip(4, 20, 7)),
        ("forker_4.hg", Fixture::with_forker(4, 20, 3, 5)),
        // Seeds picked so that voting completes and events get ordered
        // within 20 events.
        ("ordered_4_seed23247.hg", Fixture::random_gossip(4, 20, 23247)),
        ("ordered_forker_4_seed130659.hg", Fixture::with_forker(4, 20, 3, 130659)),
        ("silent_member_4.hg", silent_members(4, 3, 20)),
    ]
}
