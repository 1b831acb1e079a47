//! Broadcast and consensus in terms of each other, valid with a compliant
//! majority (`h > f`).
//!
//! Consensus from broadcast: every party broadcasts its input and outputs the
//! most frequent value it ends up holding. Broadcast from consensus: the
//! sender sends its input to everyone and the parties run consensus on what
//! they received.

use std::collections::{BTreeMap, BTreeSet};

use crate::netmodel::{Adversary, Config, PartyId, Payload};

use super::{broadcast_p, LevelContext, ProtocolError};

/// A way to get one party's value to everyone.
pub trait BroadcastPrimitive {
    /// Values held by the compliant parties once `sender` has broadcast
    /// `value` (the sender included, when compliant).
    fn broadcast(
        &mut self,
        sender: PartyId,
        value: &Payload,
    ) -> Result<BTreeMap<PartyId, Payload>, ProtocolError>;
}

/// Trusted broadcast: a faulty sender can only choose which single value
/// everyone gets.
#[derive(Debug, Clone)]
pub struct IdealBroadcast {
    parties: BTreeSet<PartyId>,
    corrupt: BTreeSet<PartyId>,
    substitutes: BTreeMap<PartyId, Payload>,
}

impl IdealBroadcast {
    /// `substitutes` holds what each faulty party broadcasts; a faulty party
    /// without one broadcasts zeros of the requested length.
    pub fn new(
        parties: BTreeSet<PartyId>,
        corrupt: BTreeSet<PartyId>,
        substitutes: BTreeMap<PartyId, Payload>,
    ) -> Self {
        IdealBroadcast {
            parties,
            corrupt,
            substitutes,
        }
    }
}

impl BroadcastPrimitive for IdealBroadcast {
    fn broadcast(
        &mut self,
        sender: PartyId,
        value: &Payload,
    ) -> Result<BTreeMap<PartyId, Payload>, ProtocolError> {
        let delivered = if self.corrupt.contains(&sender) {
            self.substitutes
                .get(&sender)
                .cloned()
                .unwrap_or_else(|| Payload::zeros(value.len()))
        } else {
            value.clone()
        };
        Ok(self
            .parties
            .iter()
            .filter(|p| !self.corrupt.contains(p))
            .map(|&p| (p, delivered.clone()))
            .collect())
    }
}

/// Broadcast by running the k-cast protocol with each party in turn as
/// sender; `strategy_for` supplies the adversary of each run.
pub struct ProtocolBroadcast<F> {
    parties: BTreeSet<PartyId>,
    cfg: Config,
    strategy_for: F,
}

impl<F, A> ProtocolBroadcast<F>
where
    F: FnMut(&LevelContext) -> A,
    A: Adversary,
{
    pub fn new(parties: BTreeSet<PartyId>, cfg: Config, strategy_for: F) -> Self {
        ProtocolBroadcast {
            parties,
            cfg,
            strategy_for,
        }
    }
}

impl<F, A> BroadcastPrimitive for ProtocolBroadcast<F>
where
    F: FnMut(&LevelContext) -> A,
    A: Adversary,
{
    fn broadcast(
        &mut self,
        sender: PartyId,
        value: &Payload,
    ) -> Result<BTreeMap<PartyId, Payload>, ProtocolError> {
        let Config { k, h, f, .. } = self.cfg;
        let ctx = LevelContext::new(self.parties.clone(), sender, k, h, f, 0)?;
        let mut adversary = (self.strategy_for)(&ctx);
        Ok(broadcast_p(&ctx, value, &mut adversary)?.values)
    }
}

/// Most frequent value; ties go to the smallest.
pub fn majority<'a>(values: impl IntoIterator<Item = &'a Payload>) -> Option<Payload> {
    let mut counts: BTreeMap<&Payload, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    counts
        .into_iter()
        .find(|(_, c)| *c == best)
        .map(|(v, _)| v.clone())
}

fn require_majority(cfg: &Config, corrupt: &BTreeSet<PartyId>) -> Result<(), ProtocolError> {
    if cfg.h <= cfg.f {
        return Err(ProtocolError::FaultyMajority { h: cfg.h, f: cfg.f });
    }
    if corrupt.len() > cfg.f {
        return Err(ProtocolError::Budget {
            corrupt: corrupt.len(),
            missing: 0,
            budget: cfg.f,
        });
    }
    Ok(())
}

/// Consensus over `inputs` (one per party); returns the compliant outputs.
pub fn consensus_from_broadcast(
    inputs: &BTreeMap<PartyId, Payload>,
    cfg: &Config,
    corrupt: &BTreeSet<PartyId>,
    channel: &mut dyn BroadcastPrimitive,
) -> Result<BTreeMap<PartyId, Payload>, ProtocolError> {
    require_majority(cfg, corrupt)?;
    let mut held: BTreeMap<PartyId, Vec<Payload>> = BTreeMap::new();
    for (&sender, value) in inputs {
        for (party, got) in channel.broadcast(sender, value)? {
            held.entry(party).or_default().push(got);
        }
    }
    Ok(held
        .into_iter()
        .filter(|(p, _)| !corrupt.contains(p))
        .filter_map(|(p, vals)| majority(&vals).map(|m| (p, m)))
        .collect())
}

pub trait ConsensusPrimitive {
    /// Compliant outputs for the given per-party inputs.
    fn agree(
        &mut self,
        inputs: &BTreeMap<PartyId, Payload>,
    ) -> Result<BTreeMap<PartyId, Payload>, ProtocolError>;
}

/// Trusted consensus: every compliant party gets the majority of the
/// compliant inputs.
#[derive(Debug, Clone)]
pub struct IdealConsensus {
    corrupt: BTreeSet<PartyId>,
}

impl IdealConsensus {
    pub fn new(corrupt: BTreeSet<PartyId>) -> Self {
        IdealConsensus { corrupt }
    }
}

impl ConsensusPrimitive for IdealConsensus {
    fn agree(
        &mut self,
        inputs: &BTreeMap<PartyId, Payload>,
    ) -> Result<BTreeMap<PartyId, Payload>, ProtocolError> {
        let compliant: Vec<(&PartyId, &Payload)> = inputs
            .iter()
            .filter(|(p, _)| !self.corrupt.contains(p))
            .collect();
        let Some(winner) = majority(compliant.iter().map(|(_, v)| *v)) else {
            return Ok(BTreeMap::new());
        };
        Ok(compliant
            .into_iter()
            .map(|(p, _)| (*p, winner.clone()))
            .collect())
    }
}

/// Consensus built on a broadcast primitive.
pub struct BroadcastConsensus<'a> {
    cfg: Config,
    corrupt: BTreeSet<PartyId>,
    channel: &'a mut dyn BroadcastPrimitive,
}

impl<'a> BroadcastConsensus<'a> {
    pub fn new(
        cfg: Config,
        corrupt: BTreeSet<PartyId>,
        channel: &'a mut dyn BroadcastPrimitive,
    ) -> Self {
        BroadcastConsensus {
            cfg,
            corrupt,
            channel,
        }
    }
}

impl ConsensusPrimitive for BroadcastConsensus<'_> {
    fn agree(
        &mut self,
        inputs: &BTreeMap<PartyId, Payload>,
    ) -> Result<BTreeMap<PartyId, Payload>, ProtocolError> {
        consensus_from_broadcast(inputs, &self.cfg, &self.corrupt, self.channel)
    }
}

/// Broadcast of `input` from `sender` to `parties`. A faulty sender sends
/// `sent[p]` to each `p` (zeros when absent). Returns compliant values.
pub fn broadcast_from_consensus(
    sender: PartyId,
    input: &Payload,
    parties: &BTreeSet<PartyId>,
    cfg: &Config,
    corrupt: &BTreeSet<PartyId>,
    sent: &BTreeMap<PartyId, Payload>,
    consensus: &mut dyn ConsensusPrimitive,
) -> Result<BTreeMap<PartyId, Payload>, ProtocolError> {
    require_majority(cfg, corrupt)?;
    if !parties.contains(&sender) {
        return Err(ProtocolError::NotParticipant(sender));
    }
    let sender_faulty = corrupt.contains(&sender);
    let received: BTreeMap<PartyId, Payload> = parties
        .iter()
        .map(|&p| {
            let v = if p == sender || !sender_faulty {
                input.clone()
            } else {
                sent.get(&p)
                    .cloned()
                    .unwrap_or_else(|| Payload::zeros(input.len()))
            };
            (p, v)
        })
        .collect();
    let mut outputs = consensus.agree(&received)?;
    if !sender_faulty {
        outputs.insert(sender, input.clone());
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(r: std::ops::Range<usize>) -> BTreeSet<PartyId> {
        r.map(PartyId).collect()
    }

    fn bits(vals: &[u8]) -> BTreeMap<PartyId, Payload> {
        vals.iter()
            .enumerate()
            .map(|(i, &b)| (PartyId(i), Payload::bit(b == 1)))
            .collect()
    }

    #[test]
    fn unanimous_compliant_inputs_win() {
        let cfg = Config::top_level(1, 3, 1).unwrap();
        let corrupt: BTreeSet<_> = [PartyId(3)].into();
        let mut ch = IdealBroadcast::new(
            ids(0..4),
            corrupt.clone(),
            [(PartyId(3), Payload::bit(false))].into(),
        );
        let out = consensus_from_broadcast(&bits(&[1, 1, 1, 0]), &cfg, &corrupt, &mut ch).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.values().all(|v| *v == Payload::bit(true)));
    }

    #[test]
    fn split_compliant_inputs_follow_the_count() {
        // Compliant 1,1,0 and a faulty 0: two against two, the tie goes to 0,
        // which is still a compliant input. A faulty 1 makes it 3 to 1.
        let cfg = Config::top_level(1, 3, 1).unwrap();
        let corrupt: BTreeSet<_> = [PartyId(3)].into();
        for (fake, expected) in [(false, false), (true, true)] {
            let mut ch = IdealBroadcast::new(
                ids(0..4),
                corrupt.clone(),
                [(PartyId(3), Payload::bit(fake))].into(),
            );
            let out =
                consensus_from_broadcast(&bits(&[1, 1, 0, 0]), &cfg, &corrupt, &mut ch).unwrap();
            assert!(out.values().all(|v| *v == Payload::bit(expected)));
        }
    }

    #[test]
    fn faulty_majority_is_refused() {
        let cfg = Config::top_level(1, 2, 2).unwrap();
        let mut ch = IdealBroadcast::new(ids(0..4), BTreeSet::new(), BTreeMap::new());
        assert!(matches!(
            consensus_from_broadcast(&bits(&[0, 0, 0, 0]), &cfg, &BTreeSet::new(), &mut ch),
            Err(ProtocolError::FaultyMajority { h: 2, f: 2 })
        ));
        let mut cons = IdealConsensus::new(BTreeSet::new());
        assert!(broadcast_from_consensus(
            PartyId(0),
            &Payload::bit(true),
            &ids(0..4),
            &cfg,
            &BTreeSet::new(),
            &BTreeMap::new(),
            &mut cons
        )
        .is_err());
    }

    #[test]
    fn broadcast_from_consensus_cases() {
        let cfg = Config::top_level(1, 3, 1).unwrap();
        let parties = ids(0..4);

        let corrupt: BTreeSet<_> = [PartyId(2)].into();
        let mut cons = IdealConsensus::new(corrupt.clone());
        let out = broadcast_from_consensus(
            PartyId(0),
            &Payload::bit(false),
            &parties,
            &cfg,
            &corrupt,
            &BTreeMap::new(),
            &mut cons,
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.values().all(|v| *v == Payload::bit(false)));

        let corrupt: BTreeSet<_> = [PartyId(0)].into();
        let sent = [
            (PartyId(1), Payload::bit(true)),
            (PartyId(2), Payload::bit(false)),
        ]
        .into();
        let mut cons = IdealConsensus::new(corrupt.clone());
        let out = broadcast_from_consensus(
            PartyId(0),
            &Payload::bit(true),
            &parties,
            &cfg,
            &corrupt,
            &sent,
            &mut cons,
        )
        .unwrap();
        let values: BTreeSet<_> = out.values().collect();
        assert_eq!(out.len(), 3);
        assert_eq!(values.len(), 1);
    }

    #[test]
    fn consensus_over_the_kcast_protocol() {
        struct Silent(BTreeSet<PartyId>);
        impl Adversary for Silent {
            fn corrupt(&self) -> &BTreeSet<PartyId> {
                &self.0
            }
            fn act(&mut self, _: &crate::netmodel::RoundView<'_>) -> Vec<crate::netmodel::Cast> {
                Vec::new()
            }
        }
        let cfg = Config::top_level(2, 3, 1).unwrap();
        let corrupt: BTreeSet<_> = [PartyId(1)].into();
        let c2 = corrupt.clone();
        let mut ch = ProtocolBroadcast::new(ids(0..4), cfg, move |_| Silent(c2.clone()));
        let out = consensus_from_broadcast(&bits(&[1, 0, 1, 1]), &cfg, &corrupt, &mut ch).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.values().all(|v| *v == Payload::bit(true)));
    }
}
