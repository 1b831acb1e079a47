//! k-subset enumeration, the distribute primitive, and the report
//! predicates that trust graphs are built from.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use thiserror::Error;

use crate::netmodel::{Cast, PartyId, Payload, Round};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DistributionError {
    #[error("cannot choose {k}-sets from {available} recipients")]
    TooFewRecipients { available: usize, k: usize },
    #[error("channel width must be at least 1")]
    ZeroWidth,
    #[error("sender {0} cannot be among its own recipients")]
    SenderIsRecipient(PartyId),
}

/// A recipient set, sorted ascending.
pub type KSet = Vec<PartyId>;

/// All size-`k` subsets of `recipients`, lexicographic over sorted indices.
pub fn ksubsets(recipients: &BTreeSet<PartyId>, k: usize) -> Result<Vec<KSet>, DistributionError> {
    if k == 0 {
        return Err(DistributionError::ZeroWidth);
    }
    if recipients.len() < k {
        return Err(DistributionError::TooFewRecipients {
            available: recipients.len(),
            k,
        });
    }
    Ok(recipients.iter().copied().combinations(k).collect())
}

/// Canonical enumeration of the k-sets of one level's recipient set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KSetIndex {
    sets: Vec<KSet>,
}

impl KSetIndex {
    pub fn new(recipients: &BTreeSet<PartyId>, k: usize) -> Result<Self, DistributionError> {
        Ok(KSetIndex {
            sets: ksubsets(recipients, k)?,
        })
    }

    /// An index holding exactly the given sets, in the given order.
    pub fn from_sets(sets: Vec<KSet>) -> Self {
        KSetIndex { sets }
    }

    pub fn sets(&self) -> &[KSet] {
        &self.sets
    }

    pub fn position(&self, set: &[PartyId]) -> Option<usize> {
        self.sets.iter().position(|s| s.as_slice() == set)
    }

    /// The sets containing `party`, in canonical order.
    pub fn containing(&self, party: PartyId) -> impl Iterator<Item = &KSet> + '_ {
        self.sets
            .iter()
            .filter(move |s| s.binary_search(&party).is_ok())
    }
}

/// One cast of `value` to every k-set of `recipients`, in canonical order.
pub fn distribute(
    round: Round,
    sender: PartyId,
    value: &Payload,
    recipients: &BTreeSet<PartyId>,
    k: usize,
) -> Result<Vec<Cast>, DistributionError> {
    if recipients.contains(&sender) {
        return Err(DistributionError::SenderIsRecipient(sender));
    }
    Ok(ksubsets(recipients, k)?
        .into_iter()
        .map(|set| Cast::new(round, sender, set, value.clone()))
        .collect())
}

/// The values a party claims to have received from a sender, one per k-set
/// containing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub owner: PartyId,
    pub values: BTreeMap<KSet, Payload>,
}

impl Report {
    pub fn new(owner: PartyId, values: BTreeMap<KSet, Payload>) -> Self {
        Report { owner, values }
    }

    /// Builds a total report over the sets of `index` containing `owner`;
    /// entries absent from `received` or of the wrong length become zeros.
    pub fn filled(
        owner: PartyId,
        index: &KSetIndex,
        received: &BTreeMap<KSet, Payload>,
        entry_len: usize,
    ) -> Self {
        let values = index
            .containing(owner)
            .map(|set| {
                let value = match received.get(set) {
                    Some(v) if v.len() == entry_len => v.clone(),
                    _ => Payload::zeros(entry_len),
                };
                (set.clone(), value)
            })
            .collect();
        Report { owner, values }
    }

    /// Canonical serialization: entries concatenated in k-set order.
    pub fn serialize(&self) -> Payload {
        Payload::concat(self.values.values())
    }

    /// Inverse of [`Report::serialize`]. A payload of the wrong length decodes
    /// to the all-zeros report.
    pub fn parse(owner: PartyId, index: &KSetIndex, payload: &Payload, entry_len: usize) -> Self {
        let sets: Vec<&KSet> = index.containing(owner).collect();
        let chunks = if payload.len() == sets.len() * entry_len {
            payload.split(sets.len())
        } else {
            None
        };
        let chunks = chunks.unwrap_or_else(|| vec![Payload::zeros(entry_len); sets.len()]);
        Report {
            owner,
            values: sets.into_iter().cloned().zip(chunks).collect(),
        }
    }
}

/// True iff the two reports agree on every k-set containing both owners.
pub fn consistent(a: &Report, b: &Report) -> bool {
    a.values
        .iter()
        .filter(|(set, _)| set.binary_search(&b.owner).is_ok())
        .all(|(set, va)| match b.values.get(set) {
            Some(vb) => va == vb,
            None => false,
        })
}

/// The common value of all entries, if there is one.
pub fn uniform_value(r: &Report) -> Option<Payload> {
    let mut values = r.values.values();
    let first = values.next()?;
    values.all(|v| v == first).then(|| first.clone())
}
