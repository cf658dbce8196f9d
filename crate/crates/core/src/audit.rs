//! Semi-honest leakage audit over a finished transcript.
//!
//! Each party's view is rebuilt from the messages it received and the keys
//! it holds, then checked against an allowed-view policy and against ground
//! truth computed from both operators' secrets:
//! 1. every plaintext observable must carry an allowed step tag;
//! 2. no non-public observable may equal a nonzero secret component of
//!    another party;
//! 3. no masked channel may equal its unmasked value;
//! 4. no two masked channels may imply the same mask magnitude;
//! 5. delegated ciphertexts must be under the recipient's key, and uploads
//!    must be double encryptions under the coordinator's key.
//!
//! A statistical probe complements the structural checks: over many runs,
//! the masked miss distance should look like the mask distribution shifted
//! by a constant, whatever the true miss distance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{encounter_frame, relative_state, GeometryError};
use crate::he::{Ciphertext, HeBackend, KeyId};
use crate::netsim::{Field, Item, MessageKind, PartyId, Transcript};
use crate::pc_oracle::SplitPlaneModel;
use crate::protocol::masks::draw_magnitude;
use crate::protocol::{
    execute, OperatorSecret, PartyKeys, ProtocolError, ProtocolOptions, ProtocolRun, ScheduleMode, Seeds,
};
use crate::he::BackendConfig;
use crate::rng::{mix64, CounterRng, ZStream, STREAM_MASKS};

/// Relative tolerance for "equal" in value comparisons.
pub const MATCH_TOL: f64 = 1e-9;
pub const MIN_PROBE_TRIALS: usize = 1000;
pub const PROBE_SIGNIFICANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("mask probe needs at least {required} trials, got {got}")]
    InsufficientTrials { required: usize, got: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("probe run produced no masked miss-distance observation")]
    MissingObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StepTag {
    pub kind: MessageKind,
    pub field: Field,
}

impl StepTag {
    pub fn new(kind: MessageKind, field: Field) -> Self {
        Self { kind, field }
    }
}

impl std::fmt::Display for StepTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}/{:?}", self.kind, self.field)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Sent in the clear.
    Clear,
    /// Decrypted with the party's own key.
    Decrypted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueClass {
    Real,
    Count,
    Flag,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainObservation {
    pub seq: u64,
    pub tag: StepTag,
    pub class: ValueClass,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub provenance: Provenance,
    /// Sample indices carried by the same message, for per-sample channels.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherObservation {
    pub seq: u64,
    pub tag: StepTag,
    pub key: KeyId,
    pub layers: u8,
    /// Set when an outer layer was removed by the observing party.
    pub stripped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyView {
    pub party: PartyId,
    pub own_key: KeyId,
    pub plaintext: Vec<PlainObservation>,
    pub ciphertext: Vec<CipherObservation>,
}

/// Rebuilds every party's view from the transcript and its own key.
pub fn extract_views(transcript: &Transcript, be: &dyn HeBackend, keys: &PartyKeys) -> Vec<PartyView> {
    PartyId::ALL
        .iter()
        .map(|&party| {
            let sk = keys.of(party);
            let mut view = PartyView {
                party,
                own_key: sk.id(),
                plaintext: Vec::new(),
                ciphertext: Vec::new(),
            };
            for m in transcript.messages().iter().filter(|m| m.to == party) {
                let samples = m.payload.counts_of(Field::SampleIds).map(<[u64]>::to_vec).unwrap_or_default();
                let mut pair_index = BTreeMap::<Field, usize>::new();
                for it in &m.payload.items {
                    let tag = StepTag::new(m.kind, it.field());
                    let clear = |class, values: Vec<f64>, text: Option<String>| PlainObservation {
                        seq: m.seq,
                        tag,
                        class,
                        values,
                        text,
                        provenance: Provenance::Clear,
                        samples: Vec::new(),
                    };
                    match it {
                        Item::Plain { values, .. } => view.plaintext.push(clear(ValueClass::Real, values.clone(), None)),
                        Item::Count { values, .. } => {
                            view.plaintext.push(clear(ValueClass::Count, values.iter().map(|&v| v as f64).collect(), None))
                        }
                        Item::Flags { bits, .. } => {
                            view.plaintext.push(clear(ValueClass::Flag, bits.iter().map(|&b| b as u8 as f64).collect(), None))
                        }
                        Item::Text { text, .. } => view.plaintext.push(clear(ValueClass::Text, Vec::new(), Some(text.clone()))),
                        Item::Key { .. } => {}
                        Item::Cipher { ct, .. } => {
                            // Per-sample ciphertexts are matched to sample ids by position.
                            let idx = pair_index.entry(it.field()).or_default();
                            let sample = samples.get(*idx).copied();
                            *idx += 1;
                            observe_cipher(&mut view, be, keys, m.seq, tag, ct, sample);
                        }
                    }
                }
            }
            view
        })
        .collect()
}

fn observe_cipher(
    view: &mut PartyView,
    be: &dyn HeBackend,
    keys: &PartyKeys,
    seq: u64,
    tag: StepTag,
    ct: &Ciphertext,
    sample: Option<u64>,
) {
    let sk = keys.of(view.party);
    let (ct, stripped) = match (ct.layers(), ct.key_id() == sk.id()) {
        (2, true) => match be.decrypt_outer(ct, sk) {
            Ok(inner) => (inner, true),
            Err(_) => (ct.clone(), false),
        },
        _ => (ct.clone(), false),
    };
    if ct.layers() == 1 && ct.key_id() == sk.id() {
        if let Ok(p) = be.decrypt(&ct, sk) {
            view.plaintext.push(PlainObservation {
                seq,
                tag,
                class: ValueClass::Real,
                values: p.tensor.into_data(),
                text: None,
                provenance: Provenance::Decrypted,
                samples: sample.into_iter().collect(),
            });
            return;
        }
    }
    view.ciphertext.push(CipherObservation {
        seq,
        tag,
        key: ct.key_id(),
        layers: ct.layers(),
        stripped,
    });
}

/// Allowed plaintext step tags per party, plus the tags that are public
/// outputs (exempt from the secret-equality rule).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewPolicy {
    pub allowed: BTreeMap<PartyId, BTreeSet<StepTag>>,
    pub public: BTreeSet<StepTag>,
}

impl ViewPolicy {
    pub fn empty() -> Self {
        Self {
            allowed: PartyId::ALL.iter().map(|&p| (p, BTreeSet::new())).collect(),
            public: BTreeSet::new(),
        }
    }

    /// What the protocol is designed to reveal.
    pub fn protocol_default() -> Self {
        use Field::*;
        use MessageKind::*;
        let public: BTreeSet<_> = [
            (PublicParams, SampleCount),
            (PublicParams, Schedule),
            (ResultPublish, CollisionCount),
            (ResultPublish, Probability),
        ]
        .into_iter()
        .map(|(k, f)| StepTag::new(k, f))
        .collect();
        let operator: BTreeSet<_> = [
            (FrameMaskedNormRequest, MaskedVelocityNorm),
            (FrameMaskedNormRequest, MaskedMomentumNorm),
            (SamplingMissDistanceRequest, MaskedMissDistance),
            (ComparePair, SampleIds),
            (ComparePair, MaskedFirst),
            (ComparePair, MaskedSecond),
        ]
        .into_iter()
        .map(|(k, f)| StepTag::new(k, f))
        .chain(public.iter().copied())
        .collect();
        let coordinator: BTreeSet<_> = [(CompareResult, Comparison), (Abort, Reason)]
            .into_iter()
            .map(|(k, f)| StepTag::new(k, f))
            .collect();
        Self {
            allowed: BTreeMap::from([
                (PartyId::Operator1, operator.clone()),
                (PartyId::Operator2, operator),
                (PartyId::Coordinator, coordinator),
            ]),
            public,
        }
    }

    pub fn allows(&self, party: PartyId, tag: StepTag) -> bool {
        self.allowed.get(&party).is_some_and(|s| s.contains(&tag))
    }
}

/// Plaintext facts the auditor compares observations against.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    /// Nonzero secret components held by each operator.
    secrets: [Vec<f64>; 2],
    /// Unmasked value of each masked scalar channel.
    channels: BTreeMap<Field, f64>,
    samples: Option<(SplitPlaneModel, ZStream, bool)>,
}

impl GroundTruth {
    /// No ground truth: only the tag and key-route rules apply.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_secrets(secrets: &[OperatorSecret; 2]) -> Result<Self, GeometryError> {
        let components = |s: &OperatorSecret| -> Vec<f64> {
            s.state
                .r
                .iter()
                .chain(s.state.v.iter())
                .chain(s.cov.matrix().iter())
                .chain(s.cov_factor.iter())
                .copied()
                .chain([s.radius])
                .filter(|x| *x != 0.0)
                .collect()
        };
        let rel = relative_state(&secrets[0].state, &secrets[1].state)?;
        let channels = BTreeMap::from([
            (Field::MaskedVelocityNorm, rel.v_rel.norm_squared()),
            (Field::MaskedMomentumNorm, rel.h.norm_squared()),
            (Field::MaskedMissDistance, rel.r_rel.norm_squared()),
        ]);
        Ok(Self {
            secrets: [components(&secrets[0]), components(&secrets[1])],
            channels,
            samples: None,
        })
    }

    /// Adds per-sample truth `(lhs, rhs)` so masked pairs can be checked too.
    pub fn with_samples(mut self, model: SplitPlaneModel, stream: ZStream, zero_samples: bool) -> Self {
        self.samples = Some((model, stream, zero_samples));
        self
    }

    fn sample_sides(&self, j: u64) -> Option<(f64, f64)> {
        let (model, stream, zero) = self.samples.as_ref()?;
        let z = if *zero { ([0.0; 3], [0.0; 3]) } else { stream.pair_at(j) };
        Some(model.sides(&z))
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= MATCH_TOL * b.abs().max(a.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    DisallowedTag,
    SecretValue,
    UnmaskedChannel,
    MaskReuse,
    KeyRoute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub party: PartyId,
    pub seq: u64,
    pub tag: StepTag,
    pub value_class: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
    /// Observation counts per party: (plaintext, ciphertext).
    pub observations: BTreeMap<PartyId, (usize, usize)>,
    pub disclosed_by_design: Vec<String>,
    pub caveats: Vec<String>,
}

impl AuditReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("audit: {}\n", if self.passed { "pass" } else { "FAIL" });
        for (p, (plain, cipher)) in &self.observations {
            out.push_str(&format!("  {p}: {plain} plaintext, {cipher} ciphertext observables\n"));
        }
        for v in &self.violations {
            out.push_str(&format!(
                "  violation [{:?}] {} seq {} {}: {} ({})\n",
                v.rule, v.party, v.seq, v.tag, v.value_class, v.detail
            ));
        }
        for d in &self.disclosed_by_design {
            out.push_str(&format!("  disclosed by design: {d}\n"));
        }
        for c in &self.caveats {
            out.push_str(&format!("  caveat: {c}\n"));
        }
        out
    }

    /// Machine-readable violation records.
    pub fn records(&self) -> &[Violation] {
        &self.violations
    }

    pub fn count(&self, rule: Rule) -> usize {
        self.violations.iter().filter(|v| v.rule == rule).count()
    }
}

/// Applies all five rules to the extracted views.
pub fn check_policy(views: &[PartyView], policy: &ViewPolicy, truth: &GroundTruth) -> AuditReport {
    let mut violations = Vec::new();
    let mut implied_masks: Vec<(PartyId, u64, StepTag, f64)> = Vec::new();
    let coordinator_key = views.iter().find(|v| v.party == PartyId::Coordinator).map(|v| v.own_key);

    for view in views {
        let party = view.party;
        let others: Vec<f64> = match party.operator_index() {
            Some(i) => truth.secrets[1 - i].clone(),
            None => truth.secrets.concat(),
        };
        for obs in &view.plaintext {
            let mut flag = |rule, class: &str, detail: String| {
                violations.push(Violation {
                    rule,
                    party,
                    seq: obs.seq,
                    tag: obs.tag,
                    value_class: class.to_string(),
                    detail,
                })
            };
            if !policy.allows(party, obs.tag) {
                flag(Rule::DisallowedTag, "plaintext", format!("{} value(s) outside the allowed view", obs.values.len()));
            }
            if obs.class == ValueClass::Real && !policy.public.contains(&obs.tag) {
                if let Some(x) = obs.values.iter().find(|x| others.iter().any(|s| close(x.abs(), s.abs()))) {
                    flag(Rule::SecretValue, "secret-component", format!("observed {x} equals another party's input"));
                }
            }
            if let Some(&t) = truth.channels.get(&obs.tag.field) {
                if let Some(&x) = obs.values.first() {
                    if close(x, t) {
                        flag(Rule::UnmaskedChannel, "masked-norm", format!("observed {x} equals the unmasked value"));
                    } else if t > 0.0 && x > 0.0 {
                        implied_masks.push((party, obs.seq, obs.tag, (x / t).sqrt()));
                    }
                }
            }
            if matches!(obs.tag.field, Field::MaskedFirst | Field::MaskedSecond) {
                if let (Some(&j), Some(&x)) = (obs.samples.first(), obs.values.first()) {
                    if let Some((l, r)) = truth.sample_sides(j) {
                        if close(x, l) || close(x, r) {
                            flag(Rule::UnmaskedChannel, "masked-pair", format!("sample {j}: observed {x} equals an unmasked side"));
                        }
                    }
                }
            }
        }
        for c in &view.ciphertext {
            let mut flag = |detail: String| {
                violations.push(Violation {
                    rule: Rule::KeyRoute,
                    party,
                    seq: c.seq,
                    tag: c.tag,
                    value_class: "ciphertext".into(),
                    detail,
                })
            };
            if party.is_operator() {
                flag(format!("ciphertext under key {} delivered to the holder of {}", c.key, view.own_key));
            } else if !c.stripped && is_upload(c.tag.kind) {
                flag(format!("upload with {} layer(s) under key {} is not a double encryption under the coordinator key", c.layers, c.key));
            }
        }
        if party == PartyId::Coordinator {
            for obs in view.plaintext.iter().filter(|o| is_upload(o.tag.kind)) {
                violations.push(Violation {
                    rule: Rule::KeyRoute,
                    party,
                    seq: obs.seq,
                    tag: obs.tag,
                    value_class: "plaintext".into(),
                    detail: format!(
                        "upload item not encrypted under the coordinator key {}",
                        coordinator_key.map_or("?".into(), |k| k.to_string())
                    ),
                });
            }
        }
    }

    for (a, rest) in implied_masks.iter().enumerate().map(|(i, m)| (m, &implied_masks[i + 1..])) {
        if let Some(b) = rest.iter().find(|b| close(a.3, b.3)) {
            violations.push(Violation {
                rule: Rule::MaskReuse,
                party: b.0,
                seq: b.1,
                tag: b.2,
                value_class: "mask".into(),
                detail: format!("implied |w| = {} also used at seq {} ({})", b.3, a.1, a.2),
            });
        }
    }

    let observations = views
        .iter()
        .map(|v| (v.party, (v.plaintext.len(), v.ciphertext.len())))
        .collect();
    AuditReport {
        passed: violations.is_empty(),
        violations,
        observations,
        disclosed_by_design: vec![
            "per-sample comparison outcome (collision or not) to the operator serving the sample and to the coordinator".into(),
            "sample schedule, sample count, collision count and probability to all parties".into(),
        ],
        caveats: vec![
            "masks have bounded magnitude, so a masked norm still reveals its order of magnitude to within 2^16".into(),
            "a masked comparison pair reveals the ratio of its two sides up to the bounded offset".into(),
        ],
    }
}

/// Extracts views from a finished run and checks them against the default
/// policy, with per-sample truth replayed from the samples seed.
pub fn audit_run(
    run: &ProtocolRun,
    secrets: &[OperatorSecret; 2],
    seeds: &Seeds,
    opts: &ProtocolOptions,
) -> Result<AuditReport, GeometryError> {
    let views = extract_views(&run.transcript, &run.backend, &run.keys);
    let mut truth = GroundTruth::from_secrets(secrets)?;
    if let Ok(model) = split_model(secrets, opts.degeneracy_eps) {
        truth = truth.with_samples(model, ZStream::new(seeds.samples), opts.zero_samples);
    }
    Ok(check_policy(&views, &ViewPolicy::protocol_default(), &truth))
}

fn split_model(secrets: &[OperatorSecret; 2], eps: f64) -> Result<SplitPlaneModel, GeometryError> {
    let rel = relative_state(&secrets[0].state, &secrets[1].state)?;
    let frame = encounter_frame(&rel, eps)?;
    Ok(SplitPlaneModel {
        q_xz: frame.q_xz,
        factors: [secrets[0].cov_factor, secrets[1].cov_factor],
        r0: rel.r0,
        radius: secrets[0].radius + secrets[1].radius,
    })
}

fn is_upload(kind: MessageKind) -> bool {
    matches!(kind, MessageKind::FrameDoubleEncUpload | MessageKind::SamplingDoubleEncUpload)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    }
}

/// `Q(λ) = 2 Σ (-1)^(k-1) exp(-2k²λ²)`, the limiting tail of the KS statistic.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub trials: usize,
    pub significance: f64,
    /// Group 0 against group 1.
    pub between_groups: KsResult,
    /// Each group against the centered mask reference.
    pub against_reference: [KsResult; 2],
    pub passed: bool,
}

/// Compares centered log-observations of two groups with each other and
/// with a centered reference sample. `observe(group, trial)` returns one
/// masked observation.
pub fn mask_hiding_probe<F>(mut observe: F, trials: usize, reference: &[f64]) -> Result<ProbeReport, AuditError>
where
    F: FnMut(usize, usize) -> Result<f64, AuditError>,
{
    if trials < MIN_PROBE_TRIALS {
        return Err(AuditError::InsufficientTrials {
            required: MIN_PROBE_TRIALS,
            got: trials,
        });
    }
    let centered = |mut xs: Vec<f64>| {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter_mut().for_each(|x| *x -= mean);
        xs
    };
    let mut groups = [Vec::with_capacity(trials), Vec::with_capacity(trials)];
    for (g, group) in groups.iter_mut().enumerate() {
        for t in 0..trials {
            group.push(observe(g, t)?.ln());
        }
    }
    let [g0, g1] = groups.map(centered);
    let reference = centered(reference.to_vec());
    let between_groups = ks_two_sample(&g0, &g1);
    let against_reference = [ks_two_sample(&g0, &reference), ks_two_sample(&g1, &reference)];
    let passed = between_groups.p_value >= PROBE_SIGNIFICANCE
        && against_reference.iter().all(|r| r.p_value >= PROBE_SIGNIFICANCE);
    Ok(ProbeReport {
        trials,
        significance: PROBE_SIGNIFICANCE,
        between_groups,
        against_reference,
        passed,
    })
}

/// Mask behavior across probe trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMasks {
    Fresh,
    /// Same mask seed in every trial, so every run draws the same `w`.
    ReusedAcrossTrials,
    /// `w = 1`.
    Unit,
}

/// `2 ln w` for `n` draws of the multiplicative mask.
pub fn mask_reference(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = CounterRng::new(seed, STREAM_MASKS);
    (0..n).map(|_| 2.0 * draw_magnitude(&mut rng).ln()).collect()
}

/// Runs the probe on full single-sample protocol sessions for two
/// scenarios that differ in miss distance, reading the masked miss distance
/// from the serving operator's view.
pub fn protocol_mask_probe(
    scenarios: [&[OperatorSecret; 2]; 2],
    trials: usize,
    seed: u64,
    masks: ProbeMasks,
) -> Result<ProbeReport, AuditError> {
    let observe = |g: usize, t: usize| -> Result<f64, AuditError> {
        let mut seeds = Seeds::from_master(mix64(seed ^ ((g as u64) << 40) ^ t as u64));
        if masks == ProbeMasks::ReusedAcrossTrials {
            seeds.masks = mix64(seed);
        }
        let opts = ProtocolOptions {
            schedule: ScheduleMode::Operator1Only,
            unit_masks: masks == ProbeMasks::Unit,
            ..ProtocolOptions::default()
        };
        let run = execute(scenarios[g].clone(), 1, seeds, BackendConfig::default(), opts)?;
        run.result.clone()?;
        let views = extract_views(&run.transcript, &run.backend, &run.keys);
        views
            .iter()
            .filter(|v| v.party == PartyId::Operator1)
            .flat_map(|v| &v.plaintext)
            .find(|o| o.tag.field == Field::MaskedMissDistance)
            .and_then(|o| o.values.first().copied())
            .ok_or(AuditError::MissingObservation)
    };
    mask_hiding_probe(observe, trials, &mask_reference(trials, mix64(seed ^ 0x00EF)))
}
