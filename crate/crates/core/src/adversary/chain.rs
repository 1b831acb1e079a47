//! The (k,h)-ring, the chain obtained by opening it at the sender's
//! cluster, and the adversary that plays the two halves of the chain against
//! each other.
//!
//! The adversary runs a virtual network in which the sender's cluster `S`
//! exists twice: copy 0 holds input `v`, copy 1 holds `!v`, and every other
//! party exists once. A cast from a member of `S` misses at least one whole
//! middle cluster; the leftmost such cluster splits the chain, and only the
//! side of the matching copy hears it. Everyone in the virtual network runs
//! the honest protocol. Since the two sender copies hold different values,
//! some adjacent pair of clusters disagrees; making exactly that pair
//! compliant (and simulating everyone else from the virtual run) reproduces
//! the disagreement in a real run.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::netmodel::{Adversary, Cast, Node, PartyId, Payload, Round, RoundView};
use crate::protocol::{LevelContext, PhNode, Schedule};

use super::{AdversaryError, Strategy, StrategyDescriptor};

/// `2f >= kh`: enough parties for a (k,h)-ring.
pub fn ring_feasible(k: usize, h: usize, f: usize) -> bool {
    2 * f >= k * h
}

/// Clusters in chain order. The first and last entries are the two copies of
/// the sender's cluster and hold the same parties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChainPartition {
    pub k: usize,
    pub h: usize,
    pub f: usize,
    pub clusters: Vec<Vec<PartyId>>,
}

impl ChainPartition {
    /// The ring: every cluster once, sender's cluster first.
    pub fn ring(&self) -> &[Vec<PartyId>] {
        &self.clusters[..self.clusters.len() - 1]
    }

    pub fn sender_cluster(&self) -> &[PartyId] {
        &self.clusters[0]
    }

    /// Number of adjacent cluster pairs in the chain.
    pub fn pairs(&self) -> usize {
        self.clusters.len() - 1
    }

    /// Parties of clusters `pair` and `pair + 1`.
    pub fn pair_members(&self, pair: usize) -> Result<BTreeSet<PartyId>, AdversaryError> {
        if pair >= self.pairs() {
            return Err(AdversaryError::BadPair {
                pair,
                pairs: self.pairs(),
            });
        }
        Ok(self.clusters[pair]
            .iter()
            .chain(&self.clusters[pair + 1])
            .copied()
            .collect())
    }

    /// Chain index of a party outside the sender's cluster.
    fn middle_index(&self, party: PartyId) -> Option<usize> {
        (1..self.clusters.len() - 1).find(|&c| self.clusters[c].contains(&party))
    }

    /// Leftmost middle cluster with no member among `recipients`.
    pub fn split(&self, recipients: &[PartyId]) -> Option<usize> {
        (1..self.clusters.len() - 1)
            .find(|&c| self.clusters[c].iter().all(|p| !recipients.contains(p)))
    }

    /// Which copy of the sender's cluster a middle party hears for a cast to
    /// `recipients`: 0 left of the split, 1 right of it.
    fn side(&self, recipients: &[PartyId], party: PartyId) -> Option<usize> {
        let split = self.split(recipients)?;
        let at = self.middle_index(party)?;
        Some(usize::from(at > split))
    }

    /// Structural check: disjoint non-empty clusters covering `h + f`
    /// parties, at least `k + 2` ring clusters, every adjacent pair `>= h`.
    pub fn validate(&self) -> Result<(), AdversaryError> {
        let bad = |m: String| Err(AdversaryError::InvalidChain(m));
        if self.clusters.len() < 2 || self.clusters.first() != self.clusters.last() {
            return bad("first and last clusters must be copies".into());
        }
        let ring = self.ring();
        if ring.len() < self.k + 2 {
            return bad(format!("{} ring clusters, need {}", ring.len(), self.k + 2));
        }
        let mut seen = BTreeSet::new();
        for c in ring {
            if c.is_empty() {
                return bad("empty cluster".into());
            }
            for p in c {
                if !seen.insert(*p) {
                    return bad(format!("{p} appears twice"));
                }
            }
        }
        if !seen.iter().copied().eq((0..self.h + self.f).map(PartyId)) {
            return bad(format!(
                "clusters do not cover p0..p{}",
                self.h + self.f - 1
            ));
        }
        if !self.clusters[0].contains(&PartyId(0)) {
            return bad("sender not in the first cluster".into());
        }
        for pair in 0..self.pairs() {
            let size = self.clusters[pair].len() + self.clusters[pair + 1].len();
            if size < self.h {
                return Err(AdversaryError::PairTooSmall {
                    pair,
                    size,
                    h: self.h,
                });
            }
        }
        Ok(())
    }
}

/// Lays `h + f` parties on a ring of `k + 2` clusters, sizes alternating
/// `ceil(h/2)` and `floor(h/2)` with the surplus dealt out from the first
/// cluster on, sender first, then opens the ring at the sender's cluster.
pub fn build_chain(k: usize, h: usize, f: usize) -> Result<ChainPartition, AdversaryError> {
    if !ring_feasible(k, h, f) || h < 2 || k == 0 {
        return Err(AdversaryError::Infeasible { k, h, f });
    }
    let ring_len = k + 2;
    let mut sizes: Vec<usize> = (0..ring_len)
        .map(|i| if i % 2 == 0 { h.div_ceil(2) } else { h / 2 })
        .collect();
    let used: usize = sizes.iter().sum();
    let total = h + f;
    // Odd rings close with two large clusters, which still needs only
    // ceil(ring_len * h / 2) parties.
    let Some(surplus) = total.checked_sub(used) else {
        return Err(AdversaryError::Infeasible { k, h, f });
    };
    for i in 0..surplus {
        sizes[i % ring_len] += 1;
    }
    let mut next = 0;
    let mut clusters: Vec<Vec<PartyId>> = sizes
        .iter()
        .map(|&s| {
            let c = (next..next + s).map(PartyId).collect();
            next += s;
            c
        })
        .collect();
    clusters.push(clusters[0].clone());
    let chain = ChainPartition { k, h, f, clusters };
    chain.validate()?;
    Ok(chain)
}

/// Identity of a node in the virtual network: members of the sender's
/// cluster carry a copy index.
type VirtualId = (PartyId, Option<usize>);

/// The virtual run behind the chain adversary; it does not depend on which
/// pair is later made compliant.
#[derive(Debug)]
pub struct ChainSimulation {
    chain: ChainPartition,
    ctx: LevelContext,
    input: Payload,
    casts: Vec<BTreeMap<VirtualId, Vec<Cast>>>,
    values: BTreeMap<VirtualId, Payload>,
}

impl ChainSimulation {
    /// Runs the virtual network with `input` at the left sender copy.
    pub fn run(chain: &ChainPartition, input: &Payload) -> Result<Self, AdversaryError> {
        chain.validate()?;
        let ctx = LevelContext::top(chain.k, chain.h, chain.f)?;
        let schedule = Arc::new(Schedule::new(&ctx, input.len())?);
        let s_members: BTreeSet<PartyId> = chain.sender_cluster().iter().copied().collect();

        let mut nodes: BTreeMap<VirtualId, PhNode> = BTreeMap::new();
        for &p in &ctx.participants {
            if s_members.contains(&p) {
                for (copy, value) in [(0, input.clone()), (1, input.flipped())] {
                    let own = (p == ctx.sender).then_some(value);
                    nodes.insert((p, Some(copy)), PhNode::new(p, Arc::clone(&schedule), own));
                }
            } else {
                nodes.insert((p, None), PhNode::new(p, Arc::clone(&schedule), None));
            }
        }

        let mut casts = Vec::with_capacity(schedule.len());
        let mut inboxes: BTreeMap<VirtualId, Vec<Cast>> = BTreeMap::new();
        for round in 0..schedule.len() {
            let mut emitted = BTreeMap::new();
            let mut next: BTreeMap<VirtualId, Vec<Cast>> = BTreeMap::new();
            for (&vid, node) in nodes.iter_mut() {
                let out = node.step(round, inboxes.get(&vid).map_or(&[][..], Vec::as_slice));
                for cast in &out {
                    for &r in &cast.recipients {
                        for target in route(chain, &s_members, vid, cast, r) {
                            next.entry(target).or_default().push(cast.clone());
                        }
                    }
                }
                emitted.insert(vid, out);
            }
            for inbox in next.values_mut() {
                inbox.sort_by(|a, b| (a.sender, &a.recipients).cmp(&(b.sender, &b.recipients)));
            }
            casts.push(emitted);
            inboxes = next;
        }
        let mut values = BTreeMap::new();
        for (vid, node) in nodes.iter_mut() {
            node.finish(inboxes.get(vid).map_or(&[][..], Vec::as_slice));
            values.insert(*vid, node.evaluate().value);
        }
        Ok(ChainSimulation {
            chain: chain.clone(),
            ctx,
            input: input.clone(),
            casts,
            values,
        })
    }

    pub fn chain(&self) -> &ChainPartition {
        &self.chain
    }

    /// Values of the virtual nodes in chain order: one entry per cluster,
    /// each listing its members' values.
    pub fn cluster_values(&self) -> Vec<Vec<Payload>> {
        let last = self.chain.clusters.len() - 1;
        self.chain
            .clusters
            .iter()
            .enumerate()
            .map(|(c, members)| {
                let copy = match c {
                    0 => Some(0),
                    c if c == last => Some(1),
                    _ => None,
                };
                members
                    .iter()
                    .map(|p| self.values[&(*p, copy)].clone())
                    .collect()
            })
            .collect()
    }

    /// Adjacent pairs whose members do not all hold the same value.
    pub fn disagreeing_pairs(&self) -> Vec<usize> {
        let values = self.cluster_values();
        (0..self.chain.pairs())
            .filter(|&p| {
                let set: BTreeSet<&Payload> = values[p].iter().chain(&values[p + 1]).collect();
                set.len() > 1
            })
            .collect()
    }
}

fn route(
    chain: &ChainPartition,
    s_members: &BTreeSet<PartyId>,
    from: VirtualId,
    cast: &Cast,
    to: PartyId,
) -> Vec<VirtualId> {
    match (from.1, s_members.contains(&to)) {
        (None, true) => vec![(to, Some(0)), (to, Some(1))],
        (None, false) => vec![(to, None)],
        (Some(copy), true) => vec![(to, Some(copy))],
        (Some(copy), false) => match chain.side(&cast.recipients, to) {
            Some(side) if side == copy => vec![(to, None)],
            _ => Vec::new(),
        },
    }
}

/// The real-world adversary for one choice of compliant pair.
#[derive(Debug, Clone)]
pub struct ChainStrategy {
    sim: Arc<ChainSimulation>,
    pair: usize,
    compliant: BTreeSet<PartyId>,
    corrupt: BTreeSet<PartyId>,
    /// Which sender copy the real sender is, when it is compliant.
    sender_copy: Option<usize>,
}

impl ChainStrategy {
    pub fn from_simulation(sim: Arc<ChainSimulation>, pair: usize) -> Result<Self, AdversaryError> {
        let chain = &sim.chain;
        let compliant = chain.pair_members(pair)?;
        if compliant.len() < chain.h {
            return Err(AdversaryError::PairTooSmall {
                pair,
                size: compliant.len(),
                h: chain.h,
            });
        }
        let corrupt = sim
            .ctx
            .participants
            .iter()
            .copied()
            .filter(|p| !compliant.contains(p))
            .collect();
        let sender_copy = if pair == 0 {
            Some(0)
        } else if pair + 1 == chain.pairs() {
            Some(1)
        } else {
            None
        };
        Ok(ChainStrategy {
            sim,
            pair,
            compliant,
            corrupt,
            sender_copy,
        })
    }

    pub fn pair(&self) -> usize {
        self.pair
    }

    pub fn compliant(&self) -> &BTreeSet<PartyId> {
        &self.compliant
    }

    /// The values the compliant parties must end with: their values in the
    /// virtual run.
    pub fn expected_values(&self) -> BTreeMap<PartyId, Payload> {
        let s: BTreeSet<PartyId> = self.sim.chain.sender_cluster().iter().copied().collect();
        self.compliant
            .iter()
            .map(|&p| {
                let copy = s.contains(&p).then(|| self.sender_copy.unwrap_or(0));
                (p, self.sim.values[&(p, copy)].clone())
            })
            .collect()
    }

    fn emitted(&self, round: Round, vid: VirtualId) -> &[Cast] {
        self.sim
            .casts
            .get(round)
            .and_then(|r| r.get(&vid))
            .map_or(&[], Vec::as_slice)
    }
}

/// Chain adversary with clusters `pair` and `pair + 1` compliant and `input`
/// at the left sender copy.
pub fn chain_adversary(
    chain: &ChainPartition,
    pair: usize,
    input: &Payload,
) -> Result<ChainStrategy, AdversaryError> {
    let sim = Arc::new(ChainSimulation::run(chain, input)?);
    ChainStrategy::from_simulation(sim, pair)
}

impl Adversary for ChainStrategy {
    fn corrupt(&self) -> &BTreeSet<PartyId> {
        &self.corrupt
    }

    fn choose_input(&self, requested: &Payload) -> Payload {
        match self.sender_copy {
            Some(0) => self.sim.input.clone(),
            Some(_) => self.sim.input.flipped(),
            None => requested.clone(),
        }
    }

    fn act(&mut self, view: &RoundView<'_>) -> Vec<Cast> {
        let chain = &self.sim.chain;
        let s: BTreeSet<PartyId> = chain.sender_cluster().iter().copied().collect();
        let mut out = Vec::new();
        for &p in &self.corrupt {
            if !s.contains(&p) {
                out.extend_from_slice(self.emitted(view.round, (p, None)));
                continue;
            }
            let right = self.emitted(view.round, (p, Some(1)));
            for left in self.emitted(view.round, (p, Some(0))) {
                let sides: BTreeSet<usize> = left
                    .recipients
                    .iter()
                    .filter(|r| self.compliant.contains(r))
                    .filter_map(|r| chain.side(&left.recipients, *r))
                    .collect();
                // Compliant members of the sender's cluster are a fixed copy;
                // everyone else follows the split.
                let copy = sides.first().copied().or(self.sender_copy).unwrap_or(0);
                let pick = if copy == 1 {
                    right
                        .iter()
                        .find(|c| c.recipients == left.recipients)
                        .unwrap_or(left)
                } else {
                    left
                };
                out.push(pick.clone());
            }
        }
        out
    }
}

impl Strategy for ChainStrategy {
    fn descriptor(&self) -> StrategyDescriptor {
        StrategyDescriptor::Chain {
            pair: self.pair,
            input: self.sim.input.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::broadcast_p;

    fn sizes(c: &ChainPartition) -> Vec<usize> {
        c.clusters.iter().map(Vec::len).collect()
    }

    #[test]
    fn feasibility_examples() {
        assert!(ring_feasible(2, 2, 2));
        assert!(!ring_feasible(2, 3, 2));
        assert!(ring_feasible(1, 2, 1));
    }

    #[test]
    fn chain_examples() {
        let c = build_chain(1, 2, 1).unwrap();
        assert_eq!(sizes(&c), vec![1, 1, 1, 1]);
        assert_eq!(c.clusters[0], vec![PartyId(0)]);
        assert_eq!(c.clusters[3], vec![PartyId(0)]);

        let c = build_chain(2, 2, 2).unwrap();
        assert_eq!(sizes(&c), vec![1, 1, 1, 1, 1]);

        assert!(matches!(
            build_chain(2, 3, 2),
            Err(AdversaryError::Infeasible { k: 2, h: 3, f: 2 })
        ));
    }

    #[test]
    fn surplus_goes_left_to_right() {
        // h = 2, f = 3, k = 1: base sizes 1,1,1 and two spare parties.
        let c = build_chain(1, 2, 3).unwrap();
        assert_eq!(sizes(&c), vec![2, 2, 1, 2]);
        // Odd h: 2,1,2 for k = 1, h = 3, f = 2.
        let c = build_chain(1, 3, 2).unwrap();
        assert_eq!(sizes(&c), vec![2, 1, 2, 2]);
    }

    #[test]
    fn splits_pick_the_leftmost_missed_cluster() {
        let c = build_chain(2, 2, 2).unwrap();
        // Middle clusters are {1}, {2}, {3}.
        assert_eq!(c.split(&[PartyId(1), PartyId(3)]), Some(2));
        assert_eq!(c.split(&[PartyId(2), PartyId(3)]), Some(1));
        assert_eq!(c.side(&[PartyId(1), PartyId(3)], PartyId(1)), Some(0));
        assert_eq!(c.side(&[PartyId(1), PartyId(3)], PartyId(3)), Some(1));
    }

    #[test]
    fn bad_pairs_are_rejected() {
        let c = build_chain(1, 2, 1).unwrap();
        assert!(matches!(
            chain_adversary(&c, 3, &Payload::bit(false)),
            Err(AdversaryError::BadPair { pair: 3, pairs: 3 })
        ));
    }

    #[test]
    fn three_party_case_is_defeated() {
        let chain = build_chain(1, 2, 1).unwrap();
        let ctx = LevelContext::top(1, 2, 1).unwrap();
        let sim = Arc::new(ChainSimulation::run(&chain, &Payload::bit(false)).unwrap());
        assert!(!sim.disagreeing_pairs().is_empty());
        let mut defeated = false;
        for pair in 0..chain.pairs() {
            let mut adv = ChainStrategy::from_simulation(Arc::clone(&sim), pair).unwrap();
            let exec = broadcast_p(&ctx, &Payload::bit(false), &mut adv).unwrap();
            assert_eq!(exec.values, adv.expected_values(), "pair {pair}");
            defeated |= !exec.agreement();
        }
        assert!(defeated);
    }
}
