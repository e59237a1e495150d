//! Brute-force reference implementations of the consensus rules, written
//! directly from their definitions over a materialized fixture. Nothing here
//! shares code with the library's consensus engine.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use shardgraph::hashgraph::{Event, EventId};

pub struct Oracle {
    pub events: Vec<Arc<Event>>,
    pub population: usize,
    pub coin_period: u32,
    closure: Vec<Vec<bool>>,
    self_parent: Vec<Option<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleFame {
    Undecided,
    Yes,
    No,
}

impl Oracle {
    pub fn new(events: Vec<Arc<Event>>, population: usize) -> Self {
        let pos: HashMap<EventId, usize> = events.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
        let parents: Vec<Vec<usize>> = events
            .iter()
            .map(|e| [e.self_parent, e.other_parent].iter().flatten().map(|p| pos[p]).collect())
            .collect();
        let self_parent = events.iter().map(|e| e.self_parent.map(|p| pos[&p])).collect();
        // Transitive closure by depth-first search from every vertex.
        let closure = (0..events.len())
            .map(|start| {
                let mut seen = vec![false; events.len()];
                let mut stack = vec![start];
                while let Some(v) = stack.pop() {
                    if !seen[v] {
                        seen[v] = true;
                        stack.extend(parents[v].iter().copied());
                    }
                }
                seen
            })
            .collect();
        Oracle {
            events,
            population,
            coin_period: 10,
            closure,
            self_parent,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    fn supermajority(&self) -> usize {
        (2 * self.population) / 3 + 1
    }

    pub fn ancestor(&self, a: usize, b: usize) -> bool {
        self.closure[a][b]
    }

    /// Enumerate, for every creator, all of its events lying on some path
    /// from `a` down to `b`.
    pub fn strongly_sees(&self, a: usize, b: usize) -> bool {
        let mut creators = std::collections::BTreeSet::new();
        for z in 0..self.len() {
            if self.closure[a][z] && self.closure[z][b] {
                creators.insert(self.events[z].creator);
            }
        }
        creators.len() >= self.supermajority()
    }

    pub fn rounds(&self) -> (Vec<u32>, Vec<bool>) {
        let mut round = vec![0u32; self.len()];
        let mut witness = vec![false; self.len()];
        for x in 0..self.len() {
            let e = &self.events[x];
            let parent_rounds: Vec<u32> = (0..x)
                .filter(|&p| Some(self.events[p].id) == e.self_parent || Some(self.events[p].id) == e.other_parent)
                .map(|p| round[p])
                .collect();
            round[x] = match parent_rounds.iter().max() {
                None => 1,
                Some(&r) => {
                    let creators: std::collections::BTreeSet<_> = (0..x)
                        .filter(|&w| witness[w] && round[w] == r && self.strongly_sees(x, w))
                        .map(|w| self.events[w].creator)
                        .collect();
                    if creators.len() >= self.supermajority() {
                        r + 1
                    } else {
                        r
                    }
                }
            };
            witness[x] = match self.self_parent[x] {
                None => true,
                Some(p) => round[x] > round[p],
            };
        }
        (round, witness)
    }

    /// Virtual voting, one (voter, candidate) pair at a time.
    pub fn fame(&self) -> Vec<OracleFame> {
        let (round, witness) = self.rounds();
        let mut fame = vec![OracleFame::Undecided; self.len()];
        let mut vote: HashMap<(usize, usize), bool> = HashMap::new();
        let mut voters: Vec<usize> = (0..self.len()).filter(|&x| witness[x]).collect();
        voters.sort_by_key(|&x| (round[x], self.events[x].id));
        for &x in &voters {
            for &y in &voters {
                if round[y] >= round[x] || fame[y] != OracleFame::Undecided {
                    continue;
                }
                let d = round[x] - round[y];
                if d == 1 {
                    vote.insert((x, y), self.ancestor(x, y));
                    continue;
                }
                let s: Vec<usize> = voters
                    .iter()
                    .copied()
                    .filter(|&w| round[w] + 1 == round[x] && self.strongly_sees(x, w))
                    .collect();
                let yes = s.iter().filter(|&&w| vote.get(&(w, y)).copied().unwrap_or(false)).count();
                let no = s.len() - yes;
                let v = yes >= no;
                let t = yes.max(no);
                if d % self.coin_period != 0 {
                    if t >= self.supermajority() {
                        fame[y] = if v { OracleFame::Yes } else { OracleFame::No };
                    }
                    vote.insert((x, y), v);
                } else if t >= self.supermajority() {
                    vote.insert((x, y), v);
                } else {
                    vote.insert((x, y), self.events[x].id.0[31] & 1 == 1);
                }
            }
        }
        fame
    }

    /// (event index, round received, consensus timestamp), sorted.
    pub fn order(&self) -> Vec<(EventId, u32, u64)> {
        let (round, witness) = self.rounds();
        let fame = self.fame();
        let max_round = round.iter().copied().max().unwrap_or(0);
        let mut decided_through = 0;
        for r in 1..=max_round {
            let all = (0..self.len()).filter(|&w| witness[w] && round[w] == r).all(|w| fame[w] != OracleFame::Undecided);
            if !all {
                break;
            }
            decided_through = r;
        }
        let mut out = Vec::new();
        for x in 0..self.len() {
            for r in 1..=decided_through {
                let famous: Vec<usize> = (0..self.len())
                    .filter(|&w| witness[w] && round[w] == r && fame[w] == OracleFame::Yes)
                    .collect();
                let mut per_creator: BTreeMap<_, usize> = BTreeMap::new();
                for &w in &famous {
                    *per_creator.entry(self.events[w].creator).or_default() += 1;
                }
                let unique: Vec<usize> = famous.into_iter().filter(|&w| per_creator[&self.events[w].creator] == 1).collect();
                if unique.is_empty() || !unique.iter().all(|&w| self.ancestor(w, x)) {
                    continue;
                }
                let mut stamps: Vec<u64> = unique
                    .iter()
                    .map(|&w| {
                        // Walk the whole self-chain; keep the earliest member
                        // that still has x as an ancestor.
                        let mut chain = vec![w];
                        while let Some(p) = self.self_parent[*chain.last().unwrap()] {
                            chain.push(p);
                        }
                        let z = chain.into_iter().filter(|&z| self.ancestor(z, x)).last().unwrap();
                        self.events[z].created_at
                    })
                    .collect();
                stamps.sort();
                out.push((self.events[x].id, r, stamps[stamps.len() / 2]));
                break;
            }
        }
        out.sort_by(|a, b| (a.1, a.2, a.0).cmp(&(b.1, b.2, b.0)));
        out
    }
}
