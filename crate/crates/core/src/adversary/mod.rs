//! Adversary strategies.
//!
//! Every strategy fixes its faulty set before the run and then writes all
//! faulty communications round by round. Besides the generic strategies
//! (silent, seeded random, exhaustive enumeration) this module holds the
//! chain construction that defeats any protocol once `2f >= kh`.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{Adversary, Cast, PartyId, Payload, Round, RoundView};
use crate::protocol::{LevelContext, ProtocolError, Schedule};

mod chain;
mod registry;

pub use chain::{
    build_chain, chain_adversary, ring_feasible, ChainPartition, ChainSimulation, ChainStrategy,
};
pub use registry::{AdversaryClass, AdversaryRegistry, ClassOptions, StrategyStream};

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("no (k,h)-ring for k={k}, h={h}, f={f}: needs 2f >= kh, got 2f = {} < kh = {}", 2 * f, k * h)]
    Infeasible { k: usize, h: usize, f: usize },
    #[error("chain has no adjacent cluster pair {pair} (pairs 0..{pairs})")]
    BadPair { pair: usize, pairs: usize },
    #[error("clusters {pair} and {} hold {size} parties, fewer than h = {h}", pair + 1)]
    PairTooSmall { pair: usize, size: usize, h: usize },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("exhaustive enumeration refused for {n} parties (limit {max_n}); raise the limit or override the guard")]
    Guard { n: usize, max_n: usize },
    #[error("{bits} decision bits for one faulty set is beyond enumeration")]
    TooManyBits { bits: usize },
    #[error("strategy needs a fresh top-level run (parties 0..h+f, sender p0)")]
    NotTopLevel,
    #[error("unknown adversary class {0:?}")]
    UnknownClass(String),
    #[error("descriptor does not fit this run: {0}")]
    Descriptor(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Serializable identity of a strategy, enough to rebuild it for replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum StrategyDescriptor {
    #[serde(rename = "none")]
    NoFaults,
    Silent {
        corrupt: Vec<PartyId>,
    },
    Random {
        seed: u64,
    },
    Chain {
        pair: usize,
        /// Input of the left sender copy; the right copy holds its complement.
        input: Payload,
    },
    Exhaustive {
        corrupt: Vec<PartyId>,
        assignment: Payload,
        depth_bound: Option<usize>,
    },
}

impl StrategyDescriptor {
    pub fn instantiate(&self, ctx: &LevelContext) -> Result<Box<dyn Strategy>, AdversaryError> {
        Ok(match self {
            StrategyDescriptor::NoFaults => Box::new(Silent::new(BTreeSet::new())),
            StrategyDescriptor::Silent { corrupt } => {
                let corrupt: BTreeSet<PartyId> = corrupt.iter().copied().collect();
                ctx.check_budget(&corrupt)?;
                Box::new(Silent::new(corrupt))
            }
            StrategyDescriptor::Random { seed } => Box::new(random_adversary(ctx, *seed)),
            StrategyDescriptor::Chain { pair, input } => {
                let chain = chain_for(ctx)?;
                Box::new(chain_adversary(&chain, *pair, input)?)
            }
            StrategyDescriptor::Exhaustive {
                corrupt,
                assignment,
                depth_bound,
            } => {
                let corrupt: BTreeSet<PartyId> = corrupt.iter().copied().collect();
                ctx.check_budget(&corrupt)?;
                let schedule = Schedule::new(ctx, 1)?;
                let points = decision_points(&schedule, &corrupt, *depth_bound);
                let bits: usize = points.iter().map(|p| p.len).sum();
                if bits != assignment.len() {
                    return Err(AdversaryError::Descriptor(format!(
                        "assignment has {} bits, the faulty set has {bits} decision bits",
                        assignment.len()
                    )));
                }
                Box::new(EnumeratedStrategy::new(
                    corrupt,
                    &points,
                    assignment.clone(),
                    *depth_bound,
                ))
            }
        })
    }
}

pub(crate) fn chain_for(ctx: &LevelContext) -> Result<ChainPartition, AdversaryError> {
    let cfg = ctx.cfg;
    let fresh = cfg.d == 0
        && ctx.depth == 0
        && ctx.sender == PartyId(0)
        && ctx.participants.iter().copied().eq((0..cfg.n).map(PartyId));
    if !fresh {
        return Err(AdversaryError::NotTopLevel);
    }
    build_chain(cfg.k, cfg.h, cfg.f)
}

/// An adversary that can describe itself.
pub trait Strategy: Adversary {
    fn descriptor(&self) -> StrategyDescriptor;
}

/// Faulty parties that never send anything. With an empty faulty set this is
/// the fault-free run.
#[derive(Debug, Clone)]
pub struct Silent {
    corrupt: BTreeSet<PartyId>,
}

impl Silent {
    pub fn new(corrupt: BTreeSet<PartyId>) -> Self {
        Silent { corrupt }
    }
}

impl Adversary for Silent {
    fn corrupt(&self) -> &BTreeSet<PartyId> {
        &self.corrupt
    }

    fn act(&mut self, _view: &RoundView<'_>) -> Vec<Cast> {
        Vec::new()
    }
}

impl Strategy for Silent {
    fn descriptor(&self) -> StrategyDescriptor {
        if self.corrupt.is_empty() {
            StrategyDescriptor::NoFaults
        } else {
            StrategyDescriptor::Silent {
                corrupt: self.corrupt.iter().copied().collect(),
            }
        }
    }
}

/// Seeded adversary that keeps, rewrites, flips or drops each prescribed
/// cast at random and now and then adds unscheduled casts.
#[derive(Debug, Clone)]
pub struct RandomStrategy {
    seed: u64,
    corrupt: BTreeSet<PartyId>,
    rng: ChaCha8Rng,
}

/// A random faulty set of the largest size the budget allows, then random
/// behaviour at every faulty decision point.
pub fn random_adversary(ctx: &LevelContext, seed: u64) -> RandomStrategy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<PartyId> = ctx.participants.iter().copied().collect();
    pool.shuffle(&mut rng);
    let mut corrupt: BTreeSet<PartyId> = pool.into_iter().take(ctx.cfg.f).collect();
    if ctx.check_budget(&corrupt).is_err() {
        corrupt.remove(&ctx.sender);
    }
    RandomStrategy { seed, corrupt, rng }
}

impl RandomStrategy {
    fn random_payload(&mut self, len: usize) -> Payload {
        Payload::from_bits((0..len).map(|_| self.rng.gen()).collect())
    }
}

impl Adversary for RandomStrategy {
    fn corrupt(&self) -> &BTreeSet<PartyId> {
        &self.corrupt
    }

    fn act(&mut self, view: &RoundView<'_>) -> Vec<Cast> {
        let mut out = Vec::new();
        for (&party, casts) in view.prescribed {
            for cast in casts {
                match self.rng.gen_range(0..4) {
                    0 => out.push(cast.clone()),
                    1 => {
                        let payload = self.random_payload(cast.payload.len());
                        out.push(Cast {
                            payload,
                            ..cast.clone()
                        });
                    }
                    2 => {
                        let mut bits = cast.payload.bits().to_vec();
                        let at = self.rng.gen_range(0..bits.len());
                        bits[at] = !bits[at];
                        out.push(Cast {
                            payload: Payload::from_bits(bits),
                            ..cast.clone()
                        });
                    }
                    _ => {}
                }
            }
            if self.rng.gen_ratio(1, 4) {
                let mut others: Vec<PartyId> = view
                    .parties
                    .iter()
                    .copied()
                    .filter(|p| *p != party)
                    .collect();
                others.shuffle(&mut self.rng);
                let len = self.rng.gen_range(1..=4);
                let payload = self.random_payload(len);
                out.push(Cast::new(
                    view.round,
                    party,
                    others.into_iter().take(view.width),
                    payload,
                ));
            }
        }
        out
    }
}

impl Strategy for RandomStrategy {
    fn descriptor(&self) -> StrategyDescriptor {
        StrategyDescriptor::Random { seed: self.seed }
    }
}

/// A scheduled cast of a faulty party whose payload the adversary chooses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionPoint {
    pub round: Round,
    pub sender: PartyId,
    pub target: Vec<PartyId>,
    pub len: usize,
}

/// The scheduled casts of `corrupt` at nesting depth up to `depth_bound`, in
/// round then recipient-set order.
pub fn decision_points(
    schedule: &Schedule,
    corrupt: &BTreeSet<PartyId>,
    depth_bound: Option<usize>,
) -> Vec<DecisionPoint> {
    schedule
        .instances()
        .iter()
        .filter(|i| corrupt.contains(&i.sender))
        .filter(|i| depth_bound.is_none_or(|b| i.depth <= b))
        .flat_map(|i| {
            i.slots.iter().map(move |s| DecisionPoint {
                round: i.round,
                sender: i.sender,
                target: s.target.clone(),
                len: i.payload_len,
            })
        })
        .collect()
}

/// One point of the exhaustive space: a faulty set and a payload for each of
/// its decision points. Casts below the depth bound are sent honestly.
#[derive(Debug, Clone)]
pub struct EnumeratedStrategy {
    corrupt: BTreeSet<PartyId>,
    assignment: Payload,
    depth_bound: Option<usize>,
    table: BTreeMap<(Round, PartyId, Vec<PartyId>), Payload>,
}

impl EnumeratedStrategy {
    fn new(
        corrupt: BTreeSet<PartyId>,
        points: &[DecisionPoint],
        assignment: Payload,
        depth_bound: Option<usize>,
    ) -> Self {
        let mut table = BTreeMap::new();
        let mut offset = 0;
        for p in points {
            let bits = assignment.bits()[offset..offset + p.len].to_vec();
            offset += p.len;
            table.insert(
                (p.round, p.sender, p.target.clone()),
                Payload::from_bits(bits),
            );
        }
        EnumeratedStrategy {
            corrupt,
            assignment,
            depth_bound,
            table,
        }
    }
}

impl Adversary for EnumeratedStrategy {
    fn corrupt(&self) -> &BTreeSet<PartyId> {
        &self.corrupt
    }

    fn act(&mut self, view: &RoundView<'_>) -> Vec<Cast> {
        view.prescribed
            .values()
            .flatten()
            .map(
                |c| match self.table.get(&(c.round, c.sender, c.recipients.clone())) {
                    Some(p) => Cast {
                        payload: p.clone(),
                        ..c.clone()
                    },
                    None => c.clone(),
                },
            )
            .collect()
    }
}

impl Strategy for EnumeratedStrategy {
    fn descriptor(&self) -> StrategyDescriptor {
        StrategyDescriptor::Exhaustive {
            corrupt: self.corrupt.iter().copied().collect(),
            assignment: self.assignment.clone(),
            depth_bound: self.depth_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationOptions {
    /// Deepest recursion level whose faulty casts are enumerated.
    pub depth_bound: Option<usize>,
    pub max_n: usize,
    pub override_guard: bool,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions {
            depth_bound: None,
            max_n: 4,
            override_guard: false,
        }
    }
}

/// Every faulty set within the budget, smallest first, paired with its
/// decision points.
fn faulty_sets(ctx: &LevelContext) -> Vec<BTreeSet<PartyId>> {
    (0..=ctx.cfg.f.min(ctx.participants.len()))
        .flat_map(|size| ctx.participants.iter().copied().combinations(size))
        .map(|c| c.into_iter().collect::<BTreeSet<_>>())
        .filter(|c| ctx.check_budget(c).is_ok())
        .collect()
}

/// Stream over every deterministic strategy with binary payloads: each
/// faulty set within the budget, times every payload for each decision point.
///
/// Omitting a cast is equivalent to sending zeros and unscheduled casts are
/// ignored by honest parties, so this covers every faulty behaviour up to
/// that equivalence.
pub struct AdversaryEnumeration {
    sets: Vec<(BTreeSet<PartyId>, Vec<DecisionPoint>, usize)>,
    depth_bound: Option<usize>,
    set: usize,
    next: u64,
}

pub fn enumerate_adversaries(
    ctx: &LevelContext,
    opts: &EnumerationOptions,
) -> Result<AdversaryEnumeration, AdversaryError> {
    let n = ctx.participants.len();
    if n > opts.max_n && !opts.override_guard {
        return Err(AdversaryError::Guard {
            n,
            max_n: opts.max_n,
        });
    }
    let schedule = Schedule::new(ctx, 1)?;
    let mut sets = Vec::new();
    for corrupt in faulty_sets(ctx) {
        let points = decision_points(&schedule, &corrupt, opts.depth_bound);
        let bits: usize = points.iter().map(|p| p.len).sum();
        if bits >= 63 {
            return Err(AdversaryError::TooManyBits { bits });
        }
        sets.push((corrupt, points, bits));
    }
    Ok(AdversaryEnumeration {
        sets,
        depth_bound: opts.depth_bound,
        set: 0,
        next: 0,
    })
}

impl AdversaryEnumeration {
    /// Total number of strategies in the stream.
    pub fn total(&self) -> u128 {
        self.sets.iter().map(|(_, _, bits)| 1u128 << bits).sum()
    }
}

impl Iterator for AdversaryEnumeration {
    type Item = EnumeratedStrategy;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (corrupt, points, bits) = self.sets.get(self.set)?;
            if self.next < 1u64 << bits {
                let code = self.next;
                self.next += 1;
                // Most significant bit first, so the order is lexicographic.
                let assignment =
                    Payload::from_bits((0..*bits).rev().map(|i| code >> i & 1 == 1).collect());
                return Some(EnumeratedStrategy::new(
                    corrupt.clone(),
                    points,
                    assignment,
                    self.depth_bound,
                ));
            }
            self.set += 1;
            self.next = 0;
        }
    }
}
