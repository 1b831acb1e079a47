//! The communication schedule of the recursive protocol.
//!
//! The pattern of who casts to whom never depends on payloads, so the whole
//! run unrolls into a list of instances in pre-order. Instance `r` is the
//! sub-protocol whose sender distributes in round `r`; its children (one per
//! recipient) follow it in consecutive rounds.

use std::collections::{BTreeMap, BTreeSet};

use crate::distribution::{KSet, KSetIndex};
use crate::netmodel::{Config, PartyId, Round};

use super::{LevelContext, ProtocolError};

/// One scheduled cast: the report key it fills and the recipient set it is
/// sent to. Recursion removes one party per level, so base instances always
/// have exactly `min(k, n - 1)` recipients and the two coincide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub key: KSet,
    pub target: Vec<PartyId>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub round: Round,
    pub depth: usize,
    /// Senders from the top instance down to this one.
    pub path: Vec<PartyId>,
    pub sender: PartyId,
    pub participants: BTreeSet<PartyId>,
    pub recipients: BTreeSet<PartyId>,
    pub cfg: Config,
    /// One cast reaches every recipient; they output what they got.
    pub base: bool,
    pub index: KSetIndex,
    pub slots: Vec<Slot>,
    pub payload_len: usize,
    pub parent: Option<usize>,
    pub children: BTreeMap<PartyId, usize>,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    instances: Vec<Instance>,
    width: usize,
}

impl Schedule {
    pub fn new(ctx: &LevelContext, payload_len: usize) -> Result<Self, ProtocolError> {
        if payload_len == 0 {
            return Err(ProtocolError::InputLength {
                expected: 1,
                got: 0,
            });
        }
        let width = ctx.cfg.width();
        let mut schedule = Schedule {
            instances: Vec::new(),
            width,
        };
        schedule.unroll(
            ctx,
            ctx.participants.clone(),
            ctx.sender,
            vec![ctx.sender],
            ctx.depth,
            payload_len,
            None,
        )?;
        Ok(schedule)
    }

    #[allow(clippy::too_many_arguments)]
    fn unroll(
        &mut self,
        ctx: &LevelContext,
        participants: BTreeSet<PartyId>,
        sender: PartyId,
        path: Vec<PartyId>,
        depth: usize,
        payload_len: usize,
        parent: Option<usize>,
    ) -> Result<usize, ProtocolError> {
        let top = &ctx.cfg;
        let cfg = Config::with_present(top.k, top.h, top.f, participants.len())?;
        let mut recipients = participants.clone();
        recipients.remove(&sender);
        let base = recipients.len() <= top.k;

        let index = if base {
            KSetIndex::from_sets(vec![recipients.iter().copied().collect()])
        } else {
            KSetIndex::new(&recipients, top.k)?
        };
        let slots: Vec<Slot> = index
            .sets()
            .iter()
            .map(|s| Slot {
                key: s.clone(),
                target: s.clone(),
            })
            .collect();
        debug_assert!(slots.iter().all(|s| s.target.len() == self.width));

        let me = self.instances.len();
        self.instances.push(Instance {
            round: me,
            depth,
            path: path.clone(),
            sender,
            participants,
            recipients: recipients.clone(),
            cfg,
            base,
            index,
            slots,
            payload_len,
            parent,
            children: BTreeMap::new(),
        });

        if !base {
            for &i in &recipients {
                let entries = self.instances[me].index.containing(i).count();
                let mut child_path = path.clone();
                child_path.push(i);
                let child = self.unroll(
                    ctx,
                    recipients.clone(),
                    i,
                    child_path,
                    depth + 1,
                    entries * payload_len,
                    Some(me),
                )?;
                self.instances[me].children.insert(i, child);
            }
        }
        Ok(me)
    }

    /// Number of rounds, which equals the number of instances.
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn instance(&self, round: Round) -> &Instance {
        &self.instances[round]
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn top(&self) -> &Instance {
        &self.instances[0]
    }

    /// Casts an honest execution sends.
    pub fn prescribed_casts(&self) -> usize {
        self.instances.iter().map(|i| i.slots.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, k: usize) -> usize {
        if k > n {
            return 0;
        }
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    // Independent recurrence for the honest cast count with n participants.
    fn cost(n: usize, k: usize) -> usize {
        if n - 1 <= k {
            1
        } else {
            binom(n - 1, k) + (n - 1) * cost(n - 1, k)
        }
    }

    fn rounds(n: usize, k: usize) -> usize {
        if n - 1 <= k {
            1
        } else {
            1 + (n - 1) * rounds(n - 1, k)
        }
    }

    #[test]
    fn cast_and_round_counts_follow_the_recurrence() {
        for k in 1..=3 {
            for n in 2..=6 {
                let h = 2.max(n / 2);
                let ctx = LevelContext::top(k, h, n - h).unwrap();
                let s = Schedule::new(&ctx, 1).unwrap();
                assert_eq!(s.prescribed_casts(), cost(n, k), "n={n} k={k}");
                assert_eq!(s.len(), rounds(n, k), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn nested_payloads_carry_whole_reports() {
        let ctx = LevelContext::top(2, 3, 2).unwrap();
        let s = Schedule::new(&ctx, 1).unwrap();
        let top = s.top();
        assert_eq!(top.slots.len(), 6);
        let child = s.instance(top.children[&PartyId(1)]);
        // p1 sits in C(3,1) = 3 of the 2-sets of {1,2,3,4}.
        assert_eq!(child.payload_len, 3);
        assert_eq!(child.cfg.d, 1);
        assert_eq!(child.path, vec![PartyId(0), PartyId(1)]);
        assert!(s.instances().iter().all(|i| i.depth == i.path.len() - 1));
    }

    #[test]
    fn every_cast_uses_the_full_channel_width() {
        for (k, h, f) in [(3, 3, 2), (2, 3, 1), (3, 2, 0), (1, 3, 1)] {
            let ctx = LevelContext::top(k, h, f).unwrap();
            let s = Schedule::new(&ctx, 1).unwrap();
            assert_eq!(s.width(), k.min(h + f - 1));
            for inst in s.instances() {
                for slot in &inst.slots {
                    assert_eq!(slot.target.len(), s.width());
                    assert!(!slot.target.contains(&inst.sender));
                }
            }
        }
    }
}
