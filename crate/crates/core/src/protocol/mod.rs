//! Recursive Byzantine agreement over k-cast channels.
//!
//! The sender distributes its input over every k-set of the other parties.
//! Each recipient then re-broadcasts what it received (its report) with a
//! recursive run among the parties other than the sender, builds a trust
//! graph from the agreed reports, prunes it to its bi-star core, and outputs
//! the value of the sender cluster it can reach (zeros if none). Once one
//! cast reaches every remaining recipient the recursion stops and recipients
//! output what they received.
//!
//! With `h` compliant parties and `2f < kh` all compliant values agree, and
//! they equal the input whenever the sender is compliant.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::distribution::DistributionError;
use crate::netmodel::{
    Adversary, Config, Engine, Event, NetError, OutputRecord, PartyId, Payload, Role, Transcript,
};
use crate::trustgraph::TrustGraphError;

mod node;
pub mod reductions;
mod schedule;

pub use node::{Anomaly, Evaluation, PhNode};
pub use schedule::{Instance, Schedule, Slot};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    TrustGraph(#[from] TrustGraphError),
    #[error(
        "corruption budget exceeded: {corrupt} faulty present, {missing} missing, budget {budget}"
    )]
    Budget {
        corrupt: usize,
        missing: usize,
        budget: usize,
    },
    #[error("{0} is not a participant of this level")]
    NotParticipant(PartyId),
    #[error("payload length {got}, expected {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("refused: compliant majority required (h = {h}, f = {f})")]
    FaultyMajority { h: usize, f: usize },
}

/// Parameterization of one level of the protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelContext {
    pub participants: BTreeSet<PartyId>,
    pub sender: PartyId,
    pub cfg: Config,
    pub depth: usize,
}

impl LevelContext {
    /// A fresh run: parties `0..h+f`, sender `p0`, nobody missing.
    pub fn top(k: usize, h: usize, f: usize) -> Result<Self, ProtocolError> {
        let participants = (0..h + f).map(PartyId).collect();
        Self::new(participants, PartyId(0), k, h, f, 0)
    }

    pub fn new(
        participants: BTreeSet<PartyId>,
        sender: PartyId,
        k: usize,
        h: usize,
        f: usize,
        depth: usize,
    ) -> Result<Self, ProtocolError> {
        if !participants.contains(&sender) {
            return Err(ProtocolError::NotParticipant(sender));
        }
        let cfg = Config::with_present(k, h, f, participants.len())?;
        Ok(LevelContext {
            participants,
            sender,
            cfg,
            depth,
        })
    }

    /// The level below, run by `sender` among everyone except this level's
    /// sender.
    pub fn child(&self, sender: PartyId) -> Result<Self, ProtocolError> {
        let mut participants = self.participants.clone();
        participants.remove(&self.sender);
        let Config { k, h, f, .. } = self.cfg;
        Self::new(participants, sender, k, h, f, self.depth + 1)
    }

    /// Faulty budget check; missing parties count against it when the sender
    /// is faulty.
    pub fn check_budget(&self, corrupt: &BTreeSet<PartyId>) -> Result<(), ProtocolError> {
        if let Some(p) = corrupt.iter().find(|p| !self.participants.contains(p)) {
            return Err(ProtocolError::NotParticipant(*p));
        }
        let missing = if corrupt.contains(&self.sender) {
            self.cfg.d
        } else {
            0
        };
        if corrupt.len() + missing > self.cfg.f {
            return Err(ProtocolError::Budget {
                corrupt: corrupt.len(),
                missing,
                budget: self.cfg.f,
            });
        }
        Ok(())
    }
}

/// Everything observed in one run of the protocol.
#[derive(Debug, Clone)]
pub struct Execution {
    pub ctx: LevelContext,
    /// The sender's actual input (after any adversarial choice).
    pub input: Payload,
    pub corrupt: BTreeSet<PartyId>,
    /// Values of the compliant parties: the sender's input, recipients' outputs.
    pub values: BTreeMap<PartyId, Payload>,
    pub anomalies: Vec<Anomaly>,
    pub transcript: Transcript,
    pub casts: usize,
    pub prescribed_casts: usize,
}

impl Execution {
    pub fn sender_compliant(&self) -> bool {
        !self.corrupt.contains(&self.ctx.sender)
    }

    /// All compliant values identical.
    pub fn agreement(&self) -> bool {
        let mut values = self.values.values();
        match values.next() {
            Some(first) => values.all(|v| v == first),
            None => true,
        }
    }

    /// With a compliant sender, every compliant value equals its input.
    pub fn validity(&self) -> Option<bool> {
        self.sender_compliant()
            .then(|| self.values.values().all(|v| *v == self.input))
    }
}

/// Runs the protocol at `ctx` with the sender holding `input`, faulty
/// parties driven by `adversary`.
pub fn broadcast_p<A: Adversary + ?Sized>(
    ctx: &LevelContext,
    input: &Payload,
    adversary: &mut A,
) -> Result<Execution, ProtocolError> {
    let corrupt = adversary.corrupt().clone();
    ctx.check_budget(&corrupt)?;
    let input = adversary.choose_input(input);

    let schedule = Arc::new(Schedule::new(ctx, input.len())?);
    let nodes = ctx.participants.iter().map(|&p| {
        let own_input = (p == ctx.sender).then(|| input.clone());
        PhNode::new(p, Arc::clone(&schedule), own_input)
    });
    let mut engine = Engine::new(schedule.width(), corrupt.clone(), nodes)?;
    for inst in schedule.instances() {
        engine.run_round(adversary, inst.depth)?;
    }
    let (nodes, mut transcript, casts) = engine.finish();

    let mut values = BTreeMap::new();
    let mut anomalies = Vec::new();
    let mut agreed = BTreeMap::new();
    for (id, node) in &nodes {
        if corrupt.contains(id) {
            continue;
        }
        let eval = node.evaluate();
        anomalies.extend(eval.anomalies);
        transcript.push(Event::Output(OutputRecord {
            party: *id,
            role: if *id == ctx.sender {
                Role::Sender
            } else {
                Role::Recipient
            },
            value: eval.value.clone(),
        }));
        values.insert(*id, eval.value);
        agreed.insert(*id, eval.agreed);
    }
    anomalies.extend(sub_agreement_anomalies(&schedule, &corrupt, &agreed));

    Ok(Execution {
        ctx: ctx.clone(),
        input,
        corrupt,
        values,
        anomalies,
        transcript,
        casts,
        prescribed_casts: schedule.prescribed_casts(),
    })
}

/// Agreement on each recipient's report holds unless the sender is compliant
/// and that recipient faulty; a compliant recipient's report must come
/// through unchanged.
fn sub_agreement_anomalies(
    schedule: &Schedule,
    corrupt: &BTreeSet<PartyId>,
    agreed: &BTreeMap<PartyId, BTreeMap<PartyId, Payload>>,
) -> Vec<Anomaly> {
    let top = schedule.top();
    if top.base {
        return Vec::new();
    }
    let sender_compliant = !corrupt.contains(&top.sender);
    let mut out = Vec::new();
    for &about in &top.recipients {
        let faulty = corrupt.contains(&about);
        if sender_compliant && faulty {
            continue;
        }
        let seen: BTreeSet<&Payload> = agreed
            .iter()
            .filter(|(j, _)| **j != top.sender)
            .filter_map(|(_, m)| m.get(&about))
            .collect();
        if seen.len() > 1 {
            out.push(Anomaly::SubAgreement { about });
        }
    }
    out
}
