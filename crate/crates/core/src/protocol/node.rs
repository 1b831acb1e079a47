//! The honest party of the recursive protocol as a round-driven node.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::distribution::{KSet, Report};
use crate::netmodel::{Cast, Node, PartyId, Payload, Round};
use crate::trustgraph::{build_trust_graph, decide, prune};

use super::schedule::Schedule;

/// Something a compliant party observed that the agreement argument rules
/// out below the threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Anomaly {
    /// A pruned trust graph joins two different sender clusters.
    ClusterPath {
        party: PartyId,
        path: Vec<PartyId>,
        values: [Payload; 2],
    },
    /// Compliant parties disagree on the report of `about` although the
    /// recursive guarantee covers it.
    SubAgreement { about: PartyId },
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Anomaly::ClusterPath {
                party,
                path,
                values,
            } => {
                let path: Vec<String> = path.iter().map(|p| p.to_string()).collect();
                write!(
                    f,
                    "cluster-path party={party} instance=[{}] values={}/{}",
                    path.join(","),
                    values[0],
                    values[1]
                )
            }
            Anomaly::SubAgreement { about } => write!(f, "sub-agreement about={about}"),
        }
    }
}

/// Result of evaluating the top instance at one party.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: Payload,
    pub anomalies: Vec<Anomaly>,
    /// Agreed report of every top-level recipient as seen by this party
    /// (its own true report for itself); empty for a base-case top.
    pub agreed: BTreeMap<PartyId, Payload>,
}

#[derive(Debug, Clone)]
pub struct PhNode {
    id: PartyId,
    schedule: Arc<Schedule>,
    input: Option<Payload>,
    received: Vec<Option<BTreeMap<KSet, Payload>>>,
}

impl PhNode {
    /// `input` is used only when this party is the top-level sender.
    pub fn new(id: PartyId, schedule: Arc<Schedule>, input: Option<Payload>) -> Self {
        let received = vec![None; schedule.len()];
        PhNode {
            id,
            schedule,
            input,
            received,
        }
    }

    fn absorb(&mut self, round: Round, inbox: &[Cast]) {
        let inst = self.schedule.instance(round);
        if !inst.recipients.contains(&self.id) {
            return;
        }
        let mut got = BTreeMap::new();
        for slot in inst.slots.iter().filter(|s| s.key.contains(&self.id)) {
            let first = inbox.iter().find(|c| {
                c.round == round && c.sender == inst.sender && c.recipients == slot.target
            });
            if let Some(c) = first {
                got.insert(slot.key.clone(), c.payload.clone());
            }
        }
        self.received[round] = Some(got);
    }

    /// This party's report for the instance distributed in `round`, with
    /// missing or malformed entries read as zeros.
    pub fn report(&self, round: Round) -> Report {
        let inst = self.schedule.instance(round);
        let empty = BTreeMap::new();
        let got = self.received[round].as_ref().unwrap_or(&empty);
        Report::filled(self.id, &inst.index, got, inst.payload_len)
    }

    fn payload_for(&self, round: Round) -> Payload {
        let inst = self.schedule.instance(round);
        match inst.parent {
            None => self
                .input
                .clone()
                .unwrap_or_else(|| Payload::zeros(inst.payload_len)),
            Some(parent) => self.report(parent).serialize(),
        }
    }

    /// Output of this party for the instance distributed in `round`.
    fn evaluate_at(
        &self,
        round: Round,
        anomalies: &mut Vec<Anomaly>,
        agreed_out: Option<&mut BTreeMap<PartyId, Payload>>,
    ) -> Payload {
        let inst = self.schedule.instance(round);
        let own = self.report(round);
        if inst.base {
            return own
                .values
                .into_values()
                .next()
                .expect("base report has one entry");
        }
        let mut agreed = Vec::with_capacity(inst.recipients.len());
        for &i in &inst.recipients {
            if i == self.id {
                agreed.push(own.clone());
            } else {
                let child = inst.children[&i];
                let claimed = self.evaluate_at(child, anomalies, None);
                agreed.push(Report::parse(i, &inst.index, &claimed, inst.payload_len));
            }
        }
        if let Some(out) = agreed_out {
            out.extend(agreed.iter().map(|r| (r.owner, r.serialize())));
        }
        let graph = build_trust_graph(&agreed, &inst.cfg).expect("one report per recipient");
        let pruned = prune(&graph);
        if let Some((a, b)) = pruned.cluster_path() {
            anomalies.push(Anomaly::ClusterPath {
                party: self.id,
                path: inst.path.clone(),
                values: [a, b],
            });
        }
        decide(&pruned, self.id).value
    }

    /// This party's value: its input if it is the top-level sender, otherwise
    /// its decision for the top instance.
    pub fn evaluate(&self) -> Evaluation {
        let top = self.schedule.top();
        let mut anomalies = Vec::new();
        let mut agreed = BTreeMap::new();
        let value = if top.sender == self.id {
            self.payload_for(0)
        } else {
            self.evaluate_at(0, &mut anomalies, Some(&mut agreed))
        };
        Evaluation {
            value,
            anomalies,
            agreed,
        }
    }
}

impl Node for PhNode {
    fn id(&self) -> PartyId {
        self.id
    }

    fn step(&mut self, round: Round, inbox: &[Cast]) -> Vec<Cast> {
        if round > 0 {
            self.absorb(round - 1, inbox);
        }
        if round >= self.schedule.len() {
            return Vec::new();
        }
        let inst = self.schedule.instance(round);
        if inst.sender != self.id {
            return Vec::new();
        }
        let payload = self.payload_for(round);
        inst.slots
            .iter()
            .map(|s| Cast::new(round, self.id, s.target.iter().copied(), payload.clone()))
            .collect()
    }

    fn finish(&mut self, inbox: &[Cast]) {
        let last = self.schedule.len() - 1;
        self.absorb(last, inbox);
    }
}
