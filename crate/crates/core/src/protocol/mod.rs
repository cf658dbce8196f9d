//! Three-party encrypted collision-probability protocol.
//!
//! Two operators each hold one body's state, covariance and radius. A
//! coordinator evaluates the Monte Carlo estimate on ciphertexts under the
//! operators' keys, delegating the three steps HE cannot do (inverse square
//! root, square root, comparison) to the key holders on masked values.
//!
//! Stages, each a set of lockstep rounds over [`MessageBus`]:
//! - setup: key exchange and the public schedule of which key serves each sample;
//! - frame: relative state, angular momentum and the encounter-plane projection;
//! - sampling: projected covariance factors, masked miss distance and per-sample
//!   squared distances `w²‖s − [r0, 0]‖²` against `w²R²`;
//! - compare: masked comparisons and the tally.
//!
//! One pipeline of ciphertexts is built per operator key used by the schedule.

pub mod compare;
mod coordinator;
pub mod masks;
mod operator;

use std::str::FromStr;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{factor_covariance, Covariance3, GeometryError, StateVector, DEFAULT_DEGENERACY_EPS};
use crate::he::{BackendConfig, HeBackend, HeError, ReferenceBackend, SecretKey};
use crate::netsim::{Field, Message, MessageBus, MessageKind, MetricsTable, NetError, PartyId, Transcript};
use crate::rng::{mix64, CounterRng, ZStream, STREAM_SCHEDULE};

pub use coordinator::{Coordinator, KeyedPipeline, Request};
pub use masks::{MaskMode, MaskRecord, MaskUse};
pub use operator::{Operator, DEGENERATE_REASON};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("degenerate geometry reported by {party}: {reason}")]
    DegenerateGeometry { party: PartyId, reason: String },
    #[error("{party} aborted: {reason}")]
    OperatorAbort { party: PartyId, reason: String },
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unexpected {0:?} message")]
    Unexpected(MessageKind),
    #[error("protocol step out of order: missing {0}")]
    OutOfOrder(&'static str),
}

/// One operator's private inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSecret {
    pub state: StateVector,
    pub cov: Covariance3,
    /// Hard-body radius, km.
    pub radius: f64,
    /// Lower Cholesky factor of `cov`.
    pub cov_factor: Matrix3<f64>,
}

impl OperatorSecret {
    pub fn new(state: StateVector, cov: Covariance3, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::InvalidModel(format!("radius {radius} must be > 0")));
        }
        let cov_factor = factor_covariance(&cov)
            .map_err(|_| GeometryError::InvalidCovariance("covariance is not positive definite".into()))?;
        Ok(Self {
            state,
            cov,
            radius,
            cov_factor,
        })
    }
}

/// Public assignment of each sample to the operator whose key serves it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    bits: Vec<bool>,
}

impl Schedule {
    /// Fair coin per sample, drawn from the schedule stream of `seed`.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = CounterRng::new(seed, STREAM_SCHEDULE);
        Self {
            bits: (0..n).map(|_| rng.coin()).collect(),
        }
    }

    /// Every sample served by operator `op` (0-based).
    pub fn fixed(n: usize, op: usize) -> Self {
        Self { bits: vec![op == 1; n] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// 0-based operator index serving sample `j`.
    pub fn operator_of(&self, j: usize) -> usize {
        self.bits[j] as usize
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn operators_used(&self) -> [bool; 2] {
        [self.bits.iter().any(|b| !b), self.bits.iter().any(|&b| b)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    #[default]
    Random,
    Operator1Only,
    Operator2Only,
}

/// Seeded bugs for audit and regression tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// `w = 1`, `α = 1`, `β = 0` everywhere.
    SkipMasking,
    /// One `w` for every masking operation.
    ReuseMask,
    /// Delegated norm requests go to the operator that does not own the key.
    WrongKeyRoute,
    /// The miss distance is delegated without a mask.
    UnmaskedMissDistance,
    /// Operators also upload their covariance factor in the clear.
    PlaintextCovarianceUpload,
    /// The threshold side is `w²R` instead of `w²R²`.
    RhsUnsquared,
}

impl Fault {
    pub const ALL: [Fault; 6] = [
        Fault::SkipMasking,
        Fault::ReuseMask,
        Fault::WrongKeyRoute,
        Fault::UnmaskedMissDistance,
        Fault::PlaintextCovarianceUpload,
        Fault::RhsUnsquared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fault::SkipMasking => "skip-masking",
            Fault::ReuseMask => "reuse-mask",
            Fault::WrongKeyRoute => "wrong-key-route",
            Fault::UnmaskedMissDistance => "unmasked-miss-distance",
            Fault::PlaintextCovarianceUpload => "plaintext-covariance-upload",
            Fault::RhsUnsquared => "rhs-unsquared",
        }
    }
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Fault::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown fault '{s}'"))
    }
}

pub const DEFAULT_BATCH: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolOptions {
    /// Comparisons per operator per comparison round.
    pub batch: usize,
    pub schedule: ScheduleMode,
    pub fault: Option<Fault>,
    /// Test mode: `w = 1` (comparison masks stay random).
    pub unit_masks: bool,
    /// Test mode: every `zᵢʲ = 0`.
    pub zero_samples: bool,
    /// Norms (km/s, km²/s) at or below this count as degenerate.
    pub degeneracy_eps: f64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            batch: DEFAULT_BATCH,
            schedule: ScheduleMode::Random,
            fault: None,
            unit_masks: false,
            zero_samples: false,
            degeneracy_eps: DEFAULT_DEGENERACY_EPS,
        }
    }
}

/// Independent seeds for each random role, derived from one master seed. The
/// sample seed is the master seed itself, so plaintext replays with
/// `ZStream::new(seed)` see the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub samples: u64,
    pub schedule: u64,
    pub masks: u64,
    pub backend: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            samples: seed,
            schedule: mix64(seed ^ 0x5C4E_D01E),
            masks: mix64(seed ^ 0x3A5C_0000_0000_0000),
            backend: mix64(seed ^ 0xBAC0_0000_BAC0_0000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutput {
    pub pc: f64,
    pub n_c: u64,
    #[serde(rename = "N")]
    pub n: u64,
    pub max_level: u32,
    pub metrics: MetricsTable,
}

/// Decryption keys of all parties after a session, for auditing.
#[derive(Debug)]
pub struct PartyKeys {
    pub coordinator: SecretKey,
    pub operators: [SecretKey; 2],
}

impl PartyKeys {
    pub fn of(&self, p: PartyId) -> &SecretKey {
        match p.operator_index() {
            Some(i) => &self.operators[i],
            None => &self.coordinator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Ready,
    FrameDone,
    SamplingDone,
    Finished,
}

pub struct Session<'a> {
    be: &'a dyn HeBackend,
    bus: MessageBus,
    coordinator: Coordinator<'a>,
    operators: [Operator<'a>; 2],
    stage: Stage,
}

impl<'a> Session<'a> {
    /// Key generation, key exchange and publication of the schedule.
    pub fn setup(
        secrets: [OperatorSecret; 2],
        n: u64,
        seeds: Seeds,
        be: &'a dyn HeBackend,
        opts: ProtocolOptions,
    ) -> Result<Self, ProtocolError> {
        let [s1, s2] = secrets;
        if s1.state.epoch != s2.state.epoch {
            return Err(GeometryError::EpochMismatch(s1.state.epoch, s2.state.epoch).into());
        }
        if n == 0 {
            return Err(ProtocolError::InvalidConfig("sample count must be >= 1".into()));
        }
        if opts.batch == 0 {
            return Err(ProtocolError::InvalidConfig("batch size must be >= 1".into()));
        }
        let n = n as usize;
        let schedule = match opts.schedule {
            ScheduleMode::Random => Schedule::random(n, seeds.schedule),
            ScheduleMode::Operator1Only => Schedule::fixed(n, 0),
            ScheduleMode::Operator2Only => Schedule::fixed(n, 1),
        };
        let mask_mode = match opts.fault {
            Some(Fault::SkipMasking) => MaskMode::Identity,
            Some(Fault::ReuseMask) => MaskMode::ReuseW,
            _ if opts.unit_masks => MaskMode::UnitW,
            _ => MaskMode::Fresh,
        };
        let masks = masks::MaskSampler::new(seeds.masks, mask_mode);
        let coordinator = Coordinator::new(be, schedule, masks, ZStream::new(seeds.samples), opts);
        let floor = opts.degeneracy_eps * (-masks::MASK_LOG2_RANGE).exp2();
        let op_fault = opts.fault.filter(|f| *f == Fault::PlaintextCovarianceUpload);
        let operators = [
            Operator::new(PartyId::Operator1, be, s1, op_fault, floor * floor),
            Operator::new(PartyId::Operator2, be, s2, op_fault, floor * floor),
        ];
        let mut session = Self {
            be,
            bus: MessageBus::new(),
            coordinator,
            operators,
            stage: Stage::Ready,
        };
        for (i, party) in PartyId::OPERATORS.into_iter().enumerate() {
            let out = session.operators[i].announce();
            session.bus.send(party, PartyId::Coordinator, out.kind, out.payload)?;
        }
        let announced = session.collect_replies()?;
        session.coordinator.ingest_key_announce(&announced)?;
        let reqs = session.coordinator.setup_requests();
        session.round(reqs)?;
        Ok(session)
    }

    pub fn backend(&self) -> &dyn HeBackend {
        self.be
    }

    pub fn coordinator(&self) -> &Coordinator<'a> {
        &self.coordinator
    }

    pub fn operator(&self, i: usize) -> &Operator<'a> {
        &self.operators[i]
    }

    pub fn pipeline(&self, k: usize) -> Option<&KeyedPipeline> {
        self.coordinator.pipeline(k)
    }

    pub fn transcript(&self) -> &Transcript {
        self.bus.transcript()
    }

    pub fn secret_key(&self, p: PartyId) -> &SecretKey {
        match p.operator_index() {
            Some(i) => self.operators[i].secret_key(),
            None => self.coordinator.secret_key(),
        }
    }

    fn collect_replies(&mut self) -> Result<Vec<Message>, ProtocolError> {
        let mut replies = Vec::new();
        while let Some(m) = self.bus.deliver(PartyId::Coordinator)? {
            if m.kind == MessageKind::Abort {
                let reason = m.payload.text_of(Field::Reason).unwrap_or_default().to_string();
                return Err(if reason.starts_with(DEGENERATE_REASON) {
                    ProtocolError::DegenerateGeometry { party: m.from, reason }
                } else {
                    ProtocolError::OperatorAbort { party: m.from, reason }
                });
            }
            replies.push(m);
        }
        Ok(replies)
    }

    /// Sends coordinator requests, lets each operator answer its inbox, and
    /// returns the answers in arrival order.
    fn round(&mut self, reqs: Vec<Request>) -> Result<Vec<Message>, ProtocolError> {
        for r in reqs {
            self.bus.send(PartyId::Coordinator, r.to, r.kind, r.payload)?;
        }
        for (i, party) in PartyId::OPERATORS.into_iter().enumerate() {
            while let Some(m) = self.bus.deliver(party)? {
                for out in self.operators[i].handle(&m) {
                    self.bus.send(party, PartyId::Coordinator, out.kind, out.payload)?;
                }
            }
        }
        self.collect_replies()
    }

    fn expect_stage(&self, s: Stage, what: &'static str) -> Result<(), ProtocolError> {
        if self.stage != s {
            return Err(ProtocolError::OutOfOrder(what));
        }
        Ok(())
    }

    /// Encounter-plane projection `Q_XZ` under each pipeline key.
    pub fn frame(&mut self) -> Result<(), ProtocolError> {
        self.expect_stage(Stage::Ready, "setup")?;
        let reqs = self.coordinator.frame_upload_requests();
        let uploads = self.round(reqs)?;
        self.coordinator.frame_ingest_uploads(&uploads)?;
        let reqs = self.coordinator.frame_norm_requests()?;
        let replies = self.round(reqs)?;
        self.coordinator.frame_finish(&replies)?;
        self.stage = Stage::FrameDone;
        Ok(())
    }

    /// Masked per-sample squared distances and the masked threshold.
    pub fn sampling(&mut self) -> Result<(), ProtocolError> {
        self.expect_stage(Stage::FrameDone, "frame")?;
        let reqs = self.coordinator.sampling_upload_requests();
        let uploads = self.round(reqs)?;
        self.coordinator.sampling_ingest_uploads(&uploads)?;
        let reqs = self.coordinator.sampling_miss_requests()?;
        let replies = self.round(reqs)?;
        self.coordinator.sampling_finish(&replies)?;
        self.stage = Stage::SamplingDone;
        Ok(())
    }

    /// Masked comparisons in batches, then publication of the estimate.
    pub fn compare(&mut self) -> Result<ProtocolOutput, ProtocolError> {
        self.expect_stage(Stage::SamplingDone, "sampling")?;
        for round in 0..self.coordinator.compare_rounds() {
            let reqs = self.coordinator.compare_requests(round)?;
            let expected = reqs.iter().map(|r| r.payload.ciphers(Field::MaskedFirst).count()).sum();
            let replies = self.round(reqs)?;
            self.coordinator.compare_ingest(&replies, expected)?;
        }
        let reqs = self.coordinator.publish();
        self.round(reqs)?;
        self.stage = Stage::Finished;
        let (n_c, n) = self.coordinator.tally();
        Ok(ProtocolOutput {
            pc: n_c as f64 / n as f64,
            n_c,
            n,
            max_level: self.coordinator.max_level(),
            metrics: self.transcript().metrics(),
        })
    }

    pub fn run(&mut self) -> Result<ProtocolOutput, ProtocolError> {
        self.frame()?;
        self.sampling()?;
        self.compare()
    }

    pub fn finish(self) -> (Transcript, PartyKeys, Vec<MaskRecord>) {
        let [o1, o2] = self.operators;
        let (coordinator, log) = self.coordinator.into_parts();
        let keys = PartyKeys {
            coordinator,
            operators: [o1.into_secret_key(), o2.into_secret_key()],
        };
        (self.bus.into_transcript(), keys, log)
    }
}

/// Everything a finished (or aborted) session leaves behind.
#[derive(Debug)]
pub struct ProtocolRun {
    pub result: Result<ProtocolOutput, ProtocolError>,
    pub transcript: Transcript,
    pub keys: PartyKeys,
    pub mask_log: Vec<MaskRecord>,
    pub backend: ReferenceBackend,
}

/// Runs a full session on a fresh reference backend. Setup failures are
/// returned directly; later failures are kept in `result` alongside the
/// partial transcript.
pub fn execute(
    secrets: [OperatorSecret; 2],
    n: u64,
    seeds: Seeds,
    backend: BackendConfig,
    opts: ProtocolOptions,
) -> Result<ProtocolRun, ProtocolError> {
    let be = ReferenceBackend::new(backend, seeds.backend);
    let (result, transcript, keys, mask_log) = {
        let mut session = Session::setup(secrets, n, seeds, &be, opts)?;
        let result = session.run();
        let (t, k, l) = session.finish();
        (result, t, k, l)
    };
    Ok(ProtocolRun {
        result,
        transcript,
        keys,
        mask_log,
        backend: be,
    })
}

pub fn run_protocol(
    secrets: [OperatorSecret; 2],
    n: u64,
    seeds: Seeds,
    backend: BackendConfig,
    opts: ProtocolOptions,
) -> Result<ProtocolOutput, ProtocolError> {
    execute(secrets, n, seeds, backend, opts)?.result
}
