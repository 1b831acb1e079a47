//! Parties, payloads, the k-cast channel and a deterministic synchronous
//! round engine.
//!
//! A k-cast is authenticated and reliable: every recipient gets the same
//! payload together with the sender identity and the full recipient set.
//! Compliant parties are driven by a [`Node`] state machine; faulty parties
//! are driven by an [`Adversary`], which sees what an honest node would have
//! sent in their place and may replace, drop or add casts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("cast from {sender} in round {round}: expected {expected} recipients, got {got}")]
    WrongWidth {
        round: Round,
        sender: PartyId,
        expected: usize,
        got: usize,
    },
    #[error("cast from {sender} in round {round}: duplicate or unsorted recipient set")]
    DuplicateRecipient { round: Round, sender: PartyId },
    #[error("cast from {sender} in round {round}: sender is among its own recipients")]
    SelfAddressed { round: Round, sender: PartyId },
    #[error("cast in round {round}: unknown party {party}")]
    UnknownParty { round: Round, party: PartyId },
    #[error("authentication violation: adversary emitted a cast as compliant party {sender} in round {round}")]
    Authentication { round: Round, sender: PartyId },
    #[error("cast stamped with round {stamped} emitted during round {round}")]
    WrongRound { round: Round, stamped: Round },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid payload literal {0:?}")]
    PayloadLiteral(String),
    #[error("transcript line {line}: {message}")]
    Transcript { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(pub usize);

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

pub type Round = usize;

/// Fixed-length bit vector carried by a cast.
///
/// The top level of a run uses single-bit payloads; recursive levels carry the
/// serialized reports of the level above.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Payload(Vec<bool>);

impl Payload {
    pub fn zeros(len: usize) -> Self {
        Payload(vec![false; len])
    }

    pub fn bit(value: bool) -> Self {
        Payload(vec![value])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Payload(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|b| !b)
    }

    /// Bitwise complement.
    pub fn flipped(&self) -> Self {
        Payload(self.0.iter().map(|b| !b).collect())
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Payload>) -> Self {
        Payload(
            parts
                .into_iter()
                .flat_map(|p| p.0.iter().copied())
                .collect(),
        )
    }

    /// Splits into `count` equal chunks; `None` when the length does not divide.
    pub fn split(&self, count: usize) -> Option<Vec<Payload>> {
        if count == 0 || !self.0.len().is_multiple_of(count) {
            return None;
        }
        let size = self.0.len() / count;
        if size == 0 {
            return None;
        }
        Some(self.0.chunks(size).map(|c| Payload(c.to_vec())).collect())
    }

    /// Hex rendering of the bits read as a big-endian binary number, one
    /// digit per started nibble.
    pub fn to_hex(&self) -> String {
        if self.0.is_empty() {
            return String::new();
        }
        let pad = (4 - self.0.len() % 4) % 4;
        let padded: Vec<bool> = std::iter::repeat_n(false, pad)
            .chain(self.0.iter().copied())
            .collect();
        padded
            .chunks(4)
            .map(|nib| {
                let v = nib.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b));
                char::from_digit(v, 16).expect("nibble")
            })
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, NetError> {
        text.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(NetError::PayloadLiteral(text.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Payload)
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Payload({self})")
    }
}

impl Serialize for Payload {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Payload::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// One k-cast: a sender, its recipient set (kept sorted) and the payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cast {
    pub round: Round,
    pub sender: PartyId,
    pub recipients: Vec<PartyId>,
    pub payload: Payload,
}

impl Cast {
    /// Builds a cast; the recipient list is sorted but not deduplicated, so a
    /// duplicate survives to [`Cast::validate`].
    pub fn new(
        round: Round,
        sender: PartyId,
        recipients: impl IntoIterator<Item = PartyId>,
        payload: Payload,
    ) -> Self {
        let mut recipients: Vec<PartyId> = recipients.into_iter().collect();
        recipients.sort();
        Cast {
            round,
            sender,
            recipients,
            payload,
        }
    }

    pub fn validate(&self, width: usize, parties: &BTreeSet<PartyId>) -> Result<(), NetError> {
        let (round, sender) = (self.round, self.sender);
        if !parties.contains(&sender) {
            return Err(NetError::UnknownParty {
                round,
                party: sender,
            });
        }
        if self.recipients.len() != width {
            return Err(NetError::WrongWidth {
                round,
                sender,
                expected: width,
                got: self.recipients.len(),
            });
        }
        if self.recipients.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NetError::DuplicateRecipient { round, sender });
        }
        if self.recipients.contains(&sender) {
            return Err(NetError::SelfAddressed { round, sender });
        }
        if let Some(&party) = self.recipients.iter().find(|p| !parties.contains(p)) {
            return Err(NetError::UnknownParty { round, party });
        }
        Ok(())
    }
}

/// Run parameters: `n` present parties, channel width `k`, `h` compliant,
/// `f` faulty budget and `d = h + f - n` missing parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    pub n: usize,
    pub k: usize,
    pub h: usize,
    pub f: usize,
    pub d: usize,
}

impl Config {
    pub fn top_level(k: usize, h: usize, f: usize) -> Result<Self, NetError> {
        Self::with_present(k, h, f, h + f)
    }

    pub fn with_present(k: usize, h: usize, f: usize, n: usize) -> Result<Self, NetError> {
        if k == 0 {
            return Err(NetError::Config(
                "channel width k must be at least 1".into(),
            ));
        }
        if h < 2 {
            return Err(NetError::Config(
                "compliant count h must be at least 2".into(),
            ));
        }
        if n > h + f {
            return Err(NetError::Config(format!(
                "{n} present parties exceed h + f = {}",
                h + f
            )));
        }
        if n < 2 {
            return Err(NetError::Config("a run needs at least two parties".into()));
        }
        Ok(Config {
            n,
            k,
            h,
            f,
            d: h + f - n,
        })
    }

    /// Recipients per cast actually used on this channel.
    pub fn width(&self) -> usize {
        self.k.min(self.n - 1)
    }

    /// `2f < kh`, the side of the threshold where agreement is achievable.
    pub fn below_threshold(&self) -> bool {
        2 * self.f < self.k * self.h
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sender,
    Recipient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub party: PartyId,
    pub role: Role,
    pub value: Payload,
}

/// Final record of a run. The adversary descriptor is kept as raw JSON so the
/// transcript format stays independent of the strategy catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub k: usize,
    pub h: usize,
    pub f: usize,
    pub sender: PartyId,
    pub input: Payload,
    pub corrupt: Vec<PartyId>,
    pub adversary: serde_json::Value,
    pub agreement: bool,
    pub validity: Option<bool>,
    pub anomalies: Vec<String>,
    pub casts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Event {
    Cast(Cast),
    Output(OutputRecord),
    Verdict(VerdictRecord),
}

/// Ordered event log of a run, serialized as JSON lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub events: Vec<Event>,
}

impl Transcript {
    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn casts(&self) -> impl Iterator<Item = &Cast> {
        self.events.iter().filter_map(|e| match e {
            Event::Cast(c) => Some(c),
            _ => None,
        })
    }

    pub fn outputs(&self) -> impl Iterator<Item = &OutputRecord> {
        self.events.iter().filter_map(|e| match e {
            Event::Output(o) => Some(o),
            _ => None,
        })
    }

    pub fn verdict(&self) -> Option<&VerdictRecord> {
        self.events.iter().rev().find_map(|e| match e {
            Event::Verdict(v) => Some(v),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, NetError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(line).map_err(|e| NetError::Transcript {
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(event);
        }
        Ok(Transcript { events })
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())
    }
}

pub type Inboxes = BTreeMap<PartyId, Vec<Cast>>;

/// Puts `cast` into the inbox of each of its recipients.
pub fn deliver_cast(
    cast: &Cast,
    width: usize,
    parties: &BTreeSet<PartyId>,
    inboxes: &mut Inboxes,
) -> Result<(), NetError> {
    cast.validate(width, parties)?;
    for r in &cast.recipients {
        inboxes.entry(*r).or_default().push(cast.clone());
    }
    Ok(())
}

/// A party's protocol logic as a round-driven state machine.
pub trait Node {
    fn id(&self) -> PartyId;

    /// Consumes the casts delivered at the end of the previous round and
    /// returns this round's casts.
    fn step(&mut self, round: Round, inbox: &[Cast]) -> Vec<Cast>;

    /// Consumes the deliveries of the final round.
    fn finish(&mut self, inbox: &[Cast]);
}

/// What the adversary sees when it acts for the faulty parties in a round.
pub struct RoundView<'a> {
    pub round: Round,
    /// Protocol-defined nesting depth of the round, used by bounded strategies.
    pub depth: usize,
    pub width: usize,
    pub parties: &'a BTreeSet<PartyId>,
    /// Casts an honest node would emit for each faulty party this round.
    pub prescribed: &'a BTreeMap<PartyId, Vec<Cast>>,
    /// Inboxes of the faulty parties at the start of this round.
    pub inboxes: &'a Inboxes,
}

/// Engine-facing side of an adversary: it fixes the faulty set up front and
/// writes all faulty communications.
pub trait Adversary {
    fn corrupt(&self) -> &BTreeSet<PartyId>;

    fn act(&mut self, view: &RoundView<'_>) -> Vec<Cast>;

    /// The adversary also picks initial inputs; most strategies keep the
    /// requested one.
    fn choose_input(&self, requested: &Payload) -> Payload {
        requested.clone()
    }
}

pub struct Engine<N: Node> {
    parties: BTreeSet<PartyId>,
    width: usize,
    corrupt: BTreeSet<PartyId>,
    nodes: BTreeMap<PartyId, N>,
    inboxes: Inboxes,
    round: Round,
    transcript: Transcript,
    cast_count: usize,
}

impl<N: Node> Engine<N> {
    /// `nodes` must hold one node per party; nodes of faulty parties run as
    /// shadows whose output is only offered to the adversary.
    pub fn new(
        width: usize,
        corrupt: BTreeSet<PartyId>,
        nodes: impl IntoIterator<Item = N>,
    ) -> Result<Self, NetError> {
        let nodes: BTreeMap<PartyId, N> = nodes.into_iter().map(|n| (n.id(), n)).collect();
        let parties: BTreeSet<PartyId> = nodes.keys().copied().collect();
        if let Some(p) = corrupt.iter().find(|p| !parties.contains(p)) {
            return Err(NetError::UnknownParty {
                round: 0,
                party: *p,
            });
        }
        if width == 0 || width >= parties.len() {
            return Err(NetError::Config(format!(
                "channel width {width} unusable with {} parties",
                parties.len()
            )));
        }
        Ok(Engine {
            parties,
            width,
            corrupt,
            nodes,
            inboxes: Inboxes::new(),
            round: 0,
            transcript: Transcript::default(),
            cast_count: 0,
        })
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn parties(&self) -> &BTreeSet<PartyId> {
        &self.parties
    }

    /// Runs one synchronous round and returns the casts emitted in it, in
    /// delivery order.
    pub fn run_round<A: Adversary + ?Sized>(
        &mut self,
        adversary: &mut A,
        depth: usize,
    ) -> Result<Vec<Cast>, NetError> {
        let round = self.round;
        let inboxes = std::mem::take(&mut self.inboxes);
        let empty = Vec::new();

        let mut emitted = Vec::new();
        let mut prescribed = BTreeMap::new();
        let mut faulty_inboxes = Inboxes::new();
        for (id, node) in self.nodes.iter_mut() {
            let inbox = inboxes.get(id).unwrap_or(&empty);
            let casts = node.step(round, inbox);
            if self.corrupt.contains(id) {
                prescribed.insert(*id, casts);
                faulty_inboxes.insert(*id, inbox.clone());
            } else {
                for c in &casts {
                    debug_assert_eq!(c.sender, *id, "node emitted a cast for another party");
                }
                emitted.extend(casts);
            }
        }

        let view = RoundView {
            round,
            depth,
            width: self.width,
            parties: &self.parties,
            prescribed: &prescribed,
            inboxes: &faulty_inboxes,
        };
        let forged = adversary.act(&view);
        for c in &forged {
            if !self.corrupt.contains(&c.sender) {
                return Err(NetError::Authentication {
                    round,
                    sender: c.sender,
                });
            }
        }
        emitted.extend(forged);

        // Stable: duplicates on one (sender, recipients) key keep emission order.
        emitted.sort_by(|a, b| (a.sender, &a.recipients).cmp(&(b.sender, &b.recipients)));
        let mut next = Inboxes::new();
        for c in &emitted {
            if c.round != round {
                return Err(NetError::WrongRound {
                    round,
                    stamped: c.round,
                });
            }
            deliver_cast(c, self.width, &self.parties, &mut next)?;
            self.transcript.push(Event::Cast(c.clone()));
        }
        self.cast_count += emitted.len();
        self.inboxes = next;
        self.round += 1;
        Ok(emitted)
    }

    /// Hands the last round's deliveries to every node and returns the nodes,
    /// the transcript so far and the number of casts delivered.
    pub fn finish(mut self) -> (BTreeMap<PartyId, N>, Transcript, usize) {
        let empty = Vec::new();
        for (id, node) in self.nodes.iter_mut() {
            node.finish(self.inboxes.get(id).unwrap_or(&empty));
        }
        (self.nodes, self.transcript, self.cast_count)
    }
}
