//! In-memory network between the two operators and the coordinator.
//!
//! Every message goes through [`MessageBus::send`], which checks the route
//! table, assigns a sequence number and appends it to the [`Transcript`].
//! Queues are FIFO per directed edge. There is no latency or loss model.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::he::{Ciphertext, PublicKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartyId {
    Operator1,
    Operator2,
    Coordinator,
}

impl PartyId {
    pub const ALL: [PartyId; 3] = [PartyId::Operator1, PartyId::Operator2, PartyId::Coordinator];
    pub const OPERATORS: [PartyId; 2] = [PartyId::Operator1, PartyId::Operator2];

    /// Operator with 0-based index `i`.
    pub fn operator(i: usize) -> PartyId {
        match i {
            0 => PartyId::Operator1,
            1 => PartyId::Operator2,
            _ => panic!("operator index {i} out of range"),
        }
    }

    pub fn is_operator(self) -> bool {
        self != PartyId::Coordinator
    }

    /// 0-based operator index; `None` for the coordinator.
    pub fn operator_index(self) -> Option<usize> {
        match self {
            PartyId::Operator1 => Some(0),
            PartyId::Operator2 => Some(1),
            PartyId::Coordinator => None,
        }
    }
}

impl std::fmt::Display for PartyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PartyId::Operator1 => "operator1",
            PartyId::Operator2 => "operator2",
            PartyId::Coordinator => "coordinator",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subprotocol {
    Setup,
    Frame,
    Sampling,
    Compare,
    Output,
}

impl Subprotocol {
    pub const ALL: [Subprotocol; 5] = [
        Subprotocol::Setup,
        Subprotocol::Frame,
        Subprotocol::Sampling,
        Subprotocol::Compare,
        Subprotocol::Output,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subprotocol::Setup => "setup",
            Subprotocol::Frame => "frame",
            Subprotocol::Sampling => "sampling",
            Subprotocol::Compare => "compare",
            Subprotocol::Output => "output",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    KeyAnnounce,
    PublicParams,
    FrameUploadRequest,
    FrameDoubleEncUpload,
    FrameMaskedNormRequest,
    FrameMaskedNormReply,
    SamplingUploadRequest,
    SamplingDoubleEncUpload,
    SamplingMissDistanceRequest,
    SamplingMissDistanceReply,
    ComparePair,
    CompareResult,
    ResultPublish,
    Abort,
}

/// Which way a message kind may travel. Operators never talk to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToOperator,
    ToCoordinator,
    Either,
}

impl MessageKind {
    pub const ALL: [MessageKind; 14] = [
        MessageKind::KeyAnnounce,
        MessageKind::PublicParams,
        MessageKind::FrameUploadRequest,
        MessageKind::FrameDoubleEncUpload,
        MessageKind::FrameMaskedNormRequest,
        MessageKind::FrameMaskedNormReply,
        MessageKind::SamplingUploadRequest,
        MessageKind::SamplingDoubleEncUpload,
        MessageKind::SamplingMissDistanceRequest,
        MessageKind::SamplingMissDistanceReply,
        MessageKind::ComparePair,
        MessageKind::CompareResult,
        MessageKind::ResultPublish,
        MessageKind::Abort,
    ];

    /// Subprotocol the kind belongs to; `None` for `Abort`, which inherits the
    /// phase it interrupts.
    pub fn subprotocol(self) -> Option<Subprotocol> {
        use MessageKind::*;
        Some(match self {
            KeyAnnounce | PublicParams => Subprotocol::Setup,
            FrameUploadRequest | FrameDoubleEncUpload | FrameMaskedNormRequest | FrameMaskedNormReply => Subprotocol::Frame,
            SamplingUploadRequest | SamplingDoubleEncUpload | SamplingMissDistanceRequest | SamplingMissDistanceReply => Subprotocol::Sampling,
            ComparePair | CompareResult => Subprotocol::Compare,
            ResultPublish => Subprotocol::Output,
            Abort => return None,
        })
    }

    pub fn direction(self) -> Direction {
        use MessageKind::*;
        match self {
            KeyAnnounce | Abort => Direction::Either,
            PublicParams | FrameUploadRequest | FrameMaskedNormRequest | SamplingUploadRequest | SamplingMissDistanceRequest
            | ComparePair | ResultPublish => Direction::ToOperator,
            FrameDoubleEncUpload | FrameMaskedNormReply | SamplingDoubleEncUpload | SamplingMissDistanceReply | CompareResult => {
                Direction::ToCoordinator
            }
        }
    }

    pub fn allows(self, from: PartyId, to: PartyId) -> bool {
        let to_op = from == PartyId::Coordinator && to.is_operator();
        let to_coord = from.is_operator() && to == PartyId::Coordinator;
        match self.direction() {
            Direction::ToOperator => to_op,
            Direction::ToCoordinator => to_coord,
            Direction::Either => to_op || to_coord,
        }
    }
}

/// Role of a payload item within its message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Field {
    CoordinatorKey,
    Operator1Key,
    Operator2Key,
    /// Key under which the following items of a per-key upload are encrypted.
    PipelineKey,
    /// One bit per sample, `true` when operator 2 serves the sample.
    Schedule,
    SampleCount,
    PositionSkew,
    Velocity,
    VelocitySkew,
    MaskedVelocityNorm,
    MaskedMomentumNorm,
    InverseRoot,
    CovFactor,
    Radius,
    Position,
    MaskedMissDistance,
    MissRoot,
    SampleIds,
    MaskedFirst,
    MaskedSecond,
    Comparison,
    CollisionCount,
    Probability,
    Reason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Item {
    Cipher { field: Field, ct: Ciphertext },
    Plain { field: Field, values: Vec<f64> },
    Key { field: Field, key: PublicKey },
    Flags { field: Field, bits: Vec<bool> },
    Count { field: Field, values: Vec<u64> },
    Text { field: Field, text: String },
}

impl Item {
    pub fn field(&self) -> Field {
        match self {
            Item::Cipher { field, .. }
            | Item::Plain { field, .. }
            | Item::Key { field, .. }
            | Item::Flags { field, .. }
            | Item::Count { field, .. }
            | Item::Text { field, .. } => *field,
        }
    }

    /// Wire size: ciphertext envelopes, 8 bytes per number or key, one bit per flag.
    pub fn byte_len(&self) -> usize {
        match self {
            Item::Cipher { ct, .. } => ct.encoded_len(),
            Item::Plain { values, .. } => 8 * values.len(),
            Item::Key { .. } => 8,
            Item::Flags { bits, .. } => bits.len().div_ceil(8),
            Item::Count { values, .. } => 8 * values.len(),
            Item::Text { text, .. } => text.len(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub items: Vec<Item>,
}

impl Payload {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cipher(mut self, field: Field, ct: Ciphertext) -> Self {
        self.items.push(Item::Cipher { field, ct });
        self
    }

    pub fn plain(mut self, field: Field, values: Vec<f64>) -> Self {
        self.items.push(Item::Plain { field, values });
        self
    }

    pub fn key(mut self, field: Field, key: PublicKey) -> Self {
        self.items.push(Item::Key { field, key });
        self
    }

    pub fn flags(mut self, field: Field, bits: Vec<bool>) -> Self {
        self.items.push(Item::Flags { field, bits });
        self
    }

    pub fn count(mut self, field: Field, values: Vec<u64>) -> Self {
        self.items.push(Item::Count { field, values });
        self
    }

    pub fn text(mut self, field: Field, text: impl Into<String>) -> Self {
        self.items.push(Item::Text { field, text: text.into() });
        self
    }

    pub fn ciphers(&self, f: Field) -> impl Iterator<Item = &Ciphertext> {
        self.items.iter().filter_map(move |it| match it {
            Item::Cipher { field, ct } if *field == f => Some(ct),
            _ => None,
        })
    }

    pub fn first_cipher(&self, f: Field) -> Option<&Ciphertext> {
        self.ciphers(f).next()
    }

    pub fn keys(&self, f: Field) -> impl Iterator<Item = PublicKey> + '_ {
        self.items.iter().filter_map(move |it| match it {
            Item::Key { field, key } if *field == f => Some(*key),
            _ => None,
        })
    }

    pub fn key_of(&self, f: Field) -> Option<PublicKey> {
        self.keys(f).next()
    }

    /// Splits a per-key upload into the items following each `PipelineKey`.
    pub fn key_groups(&self) -> Vec<(PublicKey, Vec<&Item>)> {
        let mut groups: Vec<(PublicKey, Vec<&Item>)> = Vec::new();
        for it in &self.items {
            match (it, groups.last_mut()) {
                (Item::Key { field: Field::PipelineKey, key }, _) => groups.push((*key, Vec::new())),
                (_, Some((_, items))) => items.push(it),
                (_, None) => {}
            }
        }
        groups
    }

    pub fn flags_of(&self, f: Field) -> Option<&[bool]> {
        self.items.iter().find_map(|it| match it {
            Item::Flags { field, bits } if *field == f => Some(bits.as_slice()),
            _ => None,
        })
    }

    pub fn counts_of(&self, f: Field) -> Option<&[u64]> {
        self.items.iter().find_map(|it| match it {
            Item::Count { field, values } if *field == f => Some(values.as_slice()),
            _ => None,
        })
    }

    pub fn plain_of(&self, f: Field) -> Option<&[f64]> {
        self.items.iter().find_map(|it| match it {
            Item::Plain { field, values } if *field == f => Some(values.as_slice()),
            _ => None,
        })
    }

    pub fn text_of(&self, f: Field) -> Option<&str> {
        self.items.iter().find_map(|it| match it {
            Item::Text { field, text } if *field == f => Some(text.as_str()),
            _ => None,
        })
    }

    pub fn byte_len(&self) -> usize {
        self.items.iter().map(Item::byte_len).sum()
    }

    pub fn ciphertext_count(&self) -> usize {
        self.items.iter().filter(|it| matches!(it, Item::Cipher { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub from: PartyId,
    pub to: PartyId,
    pub kind: MessageKind,
    pub subprotocol: Subprotocol,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("unknown party {0}")]
    UnknownParty(PartyId),
    #[error("illegal route {from} -> {to} for {kind:?}")]
    IllegalRoute { from: PartyId, to: PartyId, kind: MessageKind },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    messages: Vec<Message>,
}

/// One transcript line of the JSON-lines export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub seq: u64,
    pub from: PartyId,
    pub to: PartyId,
    pub kind: MessageKind,
    pub subprotocol: Subprotocol,
    pub bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
}

impl Transcript {
    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn metrics(&self) -> MetricsTable {
        MetricsTable::from_messages(&self.messages)
    }

    pub fn records(&self, with_payload: bool) -> impl Iterator<Item = TranscriptRecord> + '_ {
        self.messages.iter().map(move |m| TranscriptRecord {
            seq: m.seq,
            from: m.from,
            to: m.to,
            kind: m.kind,
            subprotocol: m.subprotocol,
            bytes: m.payload.byte_len(),
            payload: with_payload.then(|| m.payload.clone()),
        })
    }

    /// One JSON object per line; payloads (ciphertexts as base64 envelopes)
    /// only when `with_payload` is set.
    pub fn to_jsonl(&self, with_payload: bool) -> String {
        let mut out = String::new();
        for r in self.records(with_payload) {
            out.push_str(&serde_json::to_string(&r).expect("transcript record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub subprotocol: Option<Subprotocol>,
    pub messages: u64,
    pub rounds: u64,
    pub ciphertexts: u64,
    pub bytes: u64,
}

/// Per-subprotocol communication counters. A round is a maximal run of
/// coordinator-to-operator messages followed by whatever answers arrive
/// before the next such run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_CSV_HEADER: &str = "subprotocol,messages,rounds,ciphertexts,bytes";

impl MetricsTable {
    fn from_messages(msgs: &[Message]) -> Self {
        let rows = Subprotocol::ALL
            .iter()
            .map(|&sub| {
                let mut row = MetricsRow {
                    subprotocol: Some(sub),
                    ..MetricsRow::default()
                };
                let mut in_request_run = false;
                for m in msgs.iter().filter(|m| m.subprotocol == sub) {
                    row.messages += 1;
                    row.ciphertexts += m.payload.ciphertext_count() as u64;
                    row.bytes += m.payload.byte_len() as u64;
                    let request = m.from == PartyId::Coordinator;
                    if request && !in_request_run {
                        row.rounds += 1;
                    }
                    in_request_run = request;
                }
                row
            })
            .collect();
        Self { rows }
    }

    pub fn row(&self, sub: Subprotocol) -> MetricsRow {
        self.rows
            .iter()
            .copied()
            .find(|r| r.subprotocol == Some(sub))
            .unwrap_or_default()
    }

    pub fn total(&self) -> MetricsRow {
        self.rows.iter().fold(MetricsRow::default(), |acc, r| MetricsRow {
            subprotocol: None,
            messages: acc.messages + r.messages,
            rounds: acc.rounds + r.rounds,
            ciphertexts: acc.ciphertexts + r.ciphertexts,
            bytes: acc.bytes + r.bytes,
        })
    }

    /// CSV with one row per subprotocol and a final `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_CSV_HEADER}\n");
        for r in self.rows.iter().copied().chain(std::iter::once(self.total())) {
            let name = r.subprotocol.map_or("total", Subprotocol::name);
            out.push_str(&format!("{name},{},{},{},{}\n", r.messages, r.rounds, r.ciphertexts, r.bytes));
        }
        out
    }
}

/// Serialized access to per-edge FIFO queues plus the transcript.
#[derive(Debug)]
pub struct MessageBus {
    parties: BTreeSet<PartyId>,
    queues: BTreeMap<(PartyId, PartyId), VecDeque<Message>>,
    transcript: Transcript,
    next_seq: u64,
    phase: Subprotocol,
}

impl Default for MessageBus {
    fn default() -> Self {
        Self::with_parties(&PartyId::ALL)
    }
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_parties(parties: &[PartyId]) -> Self {
        Self {
            parties: parties.iter().copied().collect(),
            queues: BTreeMap::new(),
            transcript: Transcript::default(),
            next_seq: 1,
            phase: Subprotocol::Setup,
        }
    }

    /// Checks the route, appends to the transcript and enqueues. Returns the
    /// sequence number.
    pub fn send(&mut self, from: PartyId, to: PartyId, kind: MessageKind, payload: Payload) -> Result<u64, NetError> {
        for p in [from, to] {
            if !self.parties.contains(&p) {
                return Err(NetError::UnknownParty(p));
            }
        }
        if !kind.allows(from, to) {
            return Err(NetError::IllegalRoute { from, to, kind });
        }
        let subprotocol = kind.subprotocol().unwrap_or(self.phase);
        self.phase = subprotocol;
        let seq = self.next_seq;
        self.next_seq += 1;
        let msg = Message {
            seq,
            from,
            to,
            kind,
            subprotocol,
            payload,
        };
        self.transcript.messages.push(msg.clone());
        self.queues.entry((from, to)).or_default().push_back(msg);
        Ok(seq)
    }

    /// Oldest pending message addressed to `to`, across all inbound edges.
    pub fn deliver(&mut self, to: PartyId) -> Result<Option<Message>, NetError> {
        if !self.parties.contains(&to) {
            return Err(NetError::UnknownParty(to));
        }
        let next = self
            .queues
            .iter()
            .filter(|((_, t), q)| *t == to && !q.is_empty())
            .min_by_key(|(_, q)| q.front().map(|m| m.seq))
            .map(|(edge, _)| *edge);
        Ok(next.and_then(|edge| self.queues.get_mut(&edge).and_then(VecDeque::pop_front)))
    }

    pub fn pending(&self, to: PartyId) -> usize {
        self.queues
            .iter()
            .filter(|((_, t), _)| *t == to)
            .map(|(_, q)| q.len())
            .sum()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::{BackendConfig, HeBackend, ReferenceBackend, Tensor};
    use PartyId::*;

    #[test]
    fn legal_route_is_delivered() {
        let mut bus = MessageBus::new();
        let p = Payload::new().count(Field::SampleCount, vec![3]);
        bus.send(Coordinator, Operator1, MessageKind::PublicParams, p.clone()).unwrap();
        let m = bus.deliver(Operator1).unwrap().unwrap();
        assert_eq!(m.payload, p);
        assert_eq!(m.subprotocol, Subprotocol::Setup);
        assert!(bus.deliver(Operator1).unwrap().is_none());
    }

    #[test]
    fn operators_cannot_talk_directly() {
        let mut bus = MessageBus::new();
        for kind in MessageKind::ALL {
            for (a, b) in [(Operator1, Operator2), (Operator2, Operator1)] {
                assert_eq!(
                    bus.send(a, b, kind, Payload::new()),
                    Err(NetError::IllegalRoute { from: a, to: b, kind })
                );
            }
        }
        assert!(bus.transcript().is_empty());
    }

    #[test]
    fn wrong_direction_is_rejected() {
        let mut bus = MessageBus::new();
        assert!(bus.send(Operator1, Coordinator, MessageKind::ComparePair, Payload::new()).is_err());
        assert!(bus.send(Coordinator, Operator2, MessageKind::CompareResult, Payload::new()).is_err());
        assert!(bus.send(Coordinator, Coordinator, MessageKind::Abort, Payload::new()).is_err());
    }

    #[test]
    fn unknown_party() {
        let mut bus = MessageBus::with_parties(&[Operator1, Coordinator]);
        assert_eq!(
            bus.send(Coordinator, Operator2, MessageKind::PublicParams, Payload::new()),
            Err(NetError::UnknownParty(Operator2))
        );
        assert_eq!(bus.deliver(Operator2), Err(NetError::UnknownParty(Operator2)));
    }

    #[test]
    fn sequence_numbers_and_fifo() {
        let mut bus = MessageBus::new();
        let seqs: Vec<_> = (0..3)
            .map(|i| {
                bus.send(Operator1, Coordinator, MessageKind::KeyAnnounce, Payload::new().count(Field::SampleCount, vec![i]))
                    .unwrap()
            })
            .collect();
        assert_eq!(seqs, vec![1, 2, 3]);
        bus.send(Operator2, Coordinator, MessageKind::KeyAnnounce, Payload::new()).unwrap();
        let order: Vec<_> = std::iter::from_fn(|| bus.deliver(Coordinator).unwrap()).map(|m| m.seq).collect();
        assert_eq!(order, vec![1, 2, 3, 4]);
        let ts: Vec<_> = bus.transcript().messages().iter().map(|m| m.seq).collect();
        assert_eq!(ts, vec![1, 2, 3, 4]);
    }

    #[test]
    fn abort_inherits_phase() {
        let mut bus = MessageBus::new();
        bus.send(Coordinator, Operator1, MessageKind::SamplingUploadRequest, Payload::new()).unwrap();
        bus.send(Operator1, Coordinator, MessageKind::Abort, Payload::new().text(Field::Reason, "x")).unwrap();
        assert_eq!(bus.transcript().messages()[1].subprotocol, Subprotocol::Sampling);
    }

    #[test]
    fn empty_metrics_are_zero() {
        let t = Transcript::default();
        let m = t.metrics();
        assert_eq!(m.rows.len(), Subprotocol::ALL.len());
        assert!(m.rows.iter().all(|r| r.messages == 0 && r.rounds == 0 && r.bytes == 0 && r.ciphertexts == 0));
        assert_eq!(m.to_csv().lines().next(), Some(METRICS_CSV_HEADER));
    }

    #[test]
    fn bytes_are_envelope_sums_and_rounds_count_request_runs() {
        let be = ReferenceBackend::new(BackendConfig::default(), 3);
        let k = be.keygen();
        let mut bus = MessageBus::new();
        let mut expected = 0;
        for round in 0..3 {
            let ct = be.encrypt_tensor(Tensor::vector(&[round as f64; 3]), &k.public);
            expected += 2 * ct.to_envelope().len();
            bus.send(Coordinator, Operator1, MessageKind::ComparePair, Payload::new().cipher(Field::MaskedFirst, ct.clone()))
                .unwrap();
            bus.send(Coordinator, Operator2, MessageKind::ComparePair, Payload::new().cipher(Field::MaskedFirst, ct))
                .unwrap();
            bus.send(Operator1, Coordinator, MessageKind::CompareResult, Payload::new().flags(Field::Comparison, vec![true]))
                .unwrap();
            expected += 1;
        }
        let row = bus.transcript().metrics().row(Subprotocol::Compare);
        assert_eq!(row.rounds, 3);
        assert_eq!(row.messages, 9);
        assert_eq!(row.ciphertexts, 6);
        assert_eq!(row.bytes as usize, expected);
    }

    #[test]
    fn jsonl_roundtrips() {
        let be = ReferenceBackend::new(BackendConfig::default(), 3);
        let k = be.keygen();
        let mut bus = MessageBus::new();
        let ct = be.encrypt_tensor(Tensor::scalar(2.5), &k.public);
        bus.send(Coordinator, Operator1, MessageKind::FrameMaskedNormRequest, Payload::new().cipher(Field::MaskedVelocityNorm, ct))
            .unwrap();
        for with_payload in [false, true] {
            let text = bus.transcript().to_jsonl(with_payload);
            let recs: Vec<TranscriptRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
            let again: Vec<_> = bus.transcript().records(with_payload).collect();
            assert_eq!(recs, again);
        }
    }
}
