//! Coordinator state machine: strips upload layers, evaluates the encrypted
//! pipelines, masks every delegated value and tallies the comparisons.

use crate::geometry::projection_xz;
use crate::he::{Ciphertext, HeBackend, HeError, KeyPair, PublicKey, SecretKey, Tensor};
use crate::netsim::{Field, Item, Message, MessageKind, PartyId, Payload};
use crate::rng::ZStream;

use super::compare::mask_comparison;
use super::masks::{MaskRecord, MaskSampler, MaskUse};
use super::{Fault, ProtocolError, ProtocolOptions, Schedule};

#[derive(Debug)]
pub struct Request {
    pub to: PartyId,
    pub kind: MessageKind,
    pub payload: Payload,
}

/// Every ciphertext the coordinator holds for one operator key. Fields fill
/// in as the subprotocols progress.
#[derive(Debug, Clone)]
pub struct KeyedPipeline {
    pub key: PublicKey,
    /// Index of the operator owning `key`.
    pub operator: usize,
    pub r_rel_skew: Option<Ciphertext>,
    pub v_rel: Option<Ciphertext>,
    pub v_rel_skew: Option<Ciphertext>,
    pub h: Option<Ciphertext>,
    pub y: Option<Ciphertext>,
    pub y_skew: Option<Ciphertext>,
    pub z: Option<Ciphertext>,
    pub x: Option<Ciphertext>,
    pub q_xz: Option<Ciphertext>,
    /// `Q_XZ Lᵢ` for each operator.
    pub sigma_xz: Vec<Ciphertext>,
    pub factors: Vec<Ciphertext>,
    pub r_rel: Option<Ciphertext>,
    pub radius: Option<Ciphertext>,
    /// `−w·[r0, 0]`.
    pub r0: Option<Ciphertext>,
    /// `w²R²`.
    pub rhs: Option<Ciphertext>,
    /// `(j, w²‖s − [r0, 0]‖²)` in sample order.
    pub lhs: Vec<(u64, Ciphertext)>,
    frame_parts: [Option<[Ciphertext; 3]>; 2],
    sampling_parts: [Option<[Ciphertext; 3]>; 2],
    pending_w: Vec<f64>,
    sample_w: f64,
}

impl KeyedPipeline {
    fn new(key: PublicKey, operator: usize) -> Self {
        Self {
            key,
            operator,
            r_rel_skew: None,
            v_rel: None,
            v_rel_skew: None,
            h: None,
            y: None,
            y_skew: None,
            z: None,
            x: None,
            q_xz: None,
            sigma_xz: Vec::new(),
            factors: Vec::new(),
            r_rel: None,
            radius: None,
            r0: None,
            rhs: None,
            lhs: Vec::new(),
            frame_parts: [None, None],
            sampling_parts: [None, None],
            pending_w: Vec::new(),
            sample_w: 1.0,
        }
    }
}

fn stage(c: &Option<Ciphertext>, what: &'static str) -> Result<Ciphertext, ProtocolError> {
    c.clone().ok_or(ProtocolError::OutOfOrder(what))
}

pub struct Coordinator<'a> {
    be: &'a dyn HeBackend,
    keys: KeyPair,
    operator_keys: [Option<PublicKey>; 2],
    schedule: Schedule,
    masks: MaskSampler,
    opts: ProtocolOptions,
    samples: ZStream,
    pipelines: [Option<KeyedPipeline>; 2],
    n_c: u64,
    decided: u64,
    max_level: u32,
}

impl<'a> Coordinator<'a> {
    pub fn new(be: &'a dyn HeBackend, schedule: Schedule, masks: MaskSampler, samples: ZStream, opts: ProtocolOptions) -> Self {
        Self {
            be,
            keys: be.keygen(),
            operator_keys: [None, None],
            schedule,
            masks,
            opts,
            samples,
            pipelines: [None, None],
            n_c: 0,
            decided: 0,
            max_level: 0,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public
    }

    pub fn secret_key(&self) -> &SecretKey {
        &self.keys.secret
    }

    pub fn pipeline(&self, k: usize) -> Option<&KeyedPipeline> {
        self.pipelines[k].as_ref()
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn tally(&self) -> (u64, u64) {
        (self.n_c, self.decided)
    }

    pub fn mask_log(&self) -> &[MaskRecord] {
        self.masks.log()
    }

    pub fn into_parts(self) -> (SecretKey, Vec<MaskRecord>) {
        (self.keys.secret, self.masks.into_log())
    }

    fn track(&mut self, c: Ciphertext) -> Ciphertext {
        self.max_level = self.max_level.max(c.level());
        c
    }

    fn mul(&mut self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        let c = self.be.mul(a, b)?;
        Ok(self.track(c))
    }

    fn add(&mut self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        let c = self.be.add(a, b)?;
        Ok(self.track(c))
    }

    fn enc(&self, t: Tensor, pk: &PublicKey) -> Ciphertext {
        self.be.encrypt_tensor(t, pk)
    }

    fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..2).filter(|&k| self.pipelines[k].is_some())
    }

    /// Destination of a delegated request for pipeline `k`.
    fn route(&self, k: usize) -> PartyId {
        let k = if self.opts.fault == Some(Fault::WrongKeyRoute) { 1 - k } else { k };
        PartyId::operator(k)
    }

    fn operators_to(&self, kind: MessageKind, payload: Payload) -> Vec<Request> {
        PartyId::OPERATORS
            .iter()
            .map(|&to| Request {
                to,
                kind,
                payload: payload.clone(),
            })
            .collect()
    }

    fn upload_request(&self, kind: MessageKind) -> Vec<Request> {
        let mut p = Payload::new();
        for k in self.active() {
            p = p.key(Field::PipelineKey, self.pipelines[k].as_ref().unwrap().key);
        }
        self.operators_to(kind, p)
    }

    pub fn ingest_key_announce(&mut self, msgs: &[Message]) -> Result<(), ProtocolError> {
        for m in msgs {
            let i = m.from.operator_index().ok_or(ProtocolError::Unexpected(m.kind))?;
            let field = [Field::Operator1Key, Field::Operator2Key][i];
            self.operator_keys[i] = Some(m.payload.key_of(field).ok_or(ProtocolError::Unexpected(m.kind))?);
        }
        let keys = self.operator_keys.map(|k| k.ok_or(ProtocolError::OutOfOrder("operator keys")));
        let [k1, k2] = keys;
        let keys = [k1?, k2?];
        let used = self.schedule.operators_used();
        for k in 0..2 {
            if used[k] {
                self.pipelines[k] = Some(KeyedPipeline::new(keys[k], k));
            }
        }
        Ok(())
    }

    pub fn setup_requests(&self) -> Vec<Request> {
        let [k1, k2] = self.operator_keys.map(|k| k.expect("keys ingested"));
        let mut out = self.operators_to(
            MessageKind::KeyAnnounce,
            Payload::new().key(Field::CoordinatorKey, self.keys.public),
        );
        out.extend(
            self.operators_to(
                MessageKind::PublicParams,
                Payload::new()
                    .key(Field::Operator1Key, k1)
                    .key(Field::Operator2Key, k2)
                    .count(Field::SampleCount, vec![self.schedule.len() as u64])
                    .flags(Field::Schedule, self.schedule.bits().to_vec()),
            ),
        );
        out
    }

    pub fn frame_upload_requests(&self) -> Vec<Request> {
        self.upload_request(MessageKind::FrameUploadRequest)
    }

    /// Strips the outer layer of every per-key upload item and checks the
    /// inner key matches the pipeline.
    fn strip_groups(&self, msg: &Message, fields: [Field; 3]) -> Result<Vec<(usize, [Ciphertext; 3])>, ProtocolError> {
        let mut out = Vec::new();
        for (key, items) in msg.payload.key_groups() {
            let Some(k) = self.active().find(|&k| self.pipelines[k].as_ref().unwrap().key == key) else {
                return Err(ProtocolError::Unexpected(msg.kind));
            };
            let mut parts = Vec::with_capacity(3);
            for f in fields {
                let ct = items
                    .iter()
                    .find_map(|it| match it {
                        Item::Cipher { field, ct } if *field == f => Some(ct),
                        _ => None,
                    })
                    .ok_or(ProtocolError::Unexpected(msg.kind))?;
                let inner = self.be.decrypt_outer(ct, &self.keys.secret)?;
                if inner.key_id() != key.id() {
                    return Err(HeError::KeyMismatch {
                        expected: key.id(),
                        found: inner.key_id(),
                    }
                    .into());
                }
                parts.push(inner);
            }
            out.push((k, parts.try_into().expect("three parts")));
        }
        Ok(out)
    }

    fn sum_parts(&mut self, parts: [Option<[Ciphertext; 3]>; 2]) -> Result<[Ciphertext; 3], ProtocolError> {
        let [Some(a), Some(b)] = parts else {
            return Err(ProtocolError::OutOfOrder("uploads from both operators"));
        };
        Ok([self.add(&a[0], &b[0])?, self.add(&a[1], &b[1])?, self.add(&a[2], &b[2])?])
    }

    pub fn frame_ingest_uploads(&mut self, msgs: &[Message]) -> Result<(), ProtocolError> {
        for m in msgs {
            let i = m.from.operator_index().ok_or(ProtocolError::Unexpected(m.kind))?;
            for (k, parts) in self.strip_groups(m, [Field::PositionSkew, Field::Velocity, Field::VelocitySkew])? {
                self.pipelines[k].as_mut().unwrap().frame_parts[i] = Some(parts);
            }
        }
        for k in self.active().collect::<Vec<_>>() {
            let parts = std::mem::take(&mut self.pipelines[k].as_mut().unwrap().frame_parts);
            let [r_skew, v, v_skew] = self.sum_parts(parts)?;
            let h = self.mul(&r_skew, &v)?;
            let p = self.pipelines[k].as_mut().unwrap();
            p.r_rel_skew = Some(r_skew);
            p.v_rel = Some(v);
            p.v_rel_skew = Some(v_skew);
            p.h = Some(h);
        }
        Ok(())
    }

    /// `w²‖x‖²` under pipeline `k`'s key, for a fresh `w`.
    fn masked_square(&mut self, k: usize, x: &Ciphertext, usage: MaskUse, w: Option<f64>) -> Result<Ciphertext, ProtocolError> {
        let w = w.unwrap_or_else(|| self.masks.w(usage, k));
        let key = self.pipelines[k].as_ref().unwrap().key;
        let w2 = self.enc(Tensor::scalar(w * w), &key);
        let xx = self.mul(x, x)?;
        let t = self.mul(&xx, &w2)?;
        self.pipelines[k].as_mut().unwrap().pending_w.push(w);
        Ok(t)
    }

    pub fn frame_norm_requests(&mut self) -> Result<Vec<Request>, ProtocolError> {
        let mut out = Vec::new();
        for k in self.active().collect::<Vec<_>>() {
            let p = self.pipelines[k].as_ref().unwrap();
            let (v, h) = (stage(&p.v_rel, "frame uploads")?, stage(&p.h, "frame uploads")?);
            let tv = self.masked_square(k, &v, MaskUse::VelocityNorm, None)?;
            let th = self.masked_square(k, &h, MaskUse::MomentumNorm, None)?;
            out.push(Request {
                to: self.route(k),
                kind: MessageKind::FrameMaskedNormRequest,
                payload: Payload::new()
                    .cipher(Field::MaskedVelocityNorm, tv)
                    .cipher(Field::MaskedMomentumNorm, th),
            });
        }
        Ok(out)
    }

    fn pipeline_of_reply(&self, m: &Message) -> Result<usize, ProtocolError> {
        let i = m.from.operator_index().ok_or(ProtocolError::Unexpected(m.kind))?;
        let k = if self.opts.fault == Some(Fault::WrongKeyRoute) { 1 - i } else { i };
        if self.pipelines[k].is_none() {
            return Err(ProtocolError::Unexpected(m.kind));
        }
        Ok(k)
    }

    /// `u ⊗ (root ⊗ w)`: removes the mask from a delegated inverse root.
    fn unmask(&mut self, k: usize, u: &Ciphertext, root: &Ciphertext, w: f64) -> Result<Ciphertext, ProtocolError> {
        let key = self.pipelines[k].as_ref().unwrap().key;
        let cw = self.enc(Tensor::scalar(w), &key);
        let scale = self.mul(root, &cw)?;
        Ok(self.mul(u, &scale)?)
    }

    pub fn frame_finish(&mut self, msgs: &[Message]) -> Result<(), ProtocolError> {
        for m in msgs {
            let k = self.pipeline_of_reply(m)?;
            let roots: Vec<Ciphertext> = m.payload.ciphers(Field::InverseRoot).cloned().collect();
            let [root_v, root_h] = roots.try_into().map_err(|_| ProtocolError::Unexpected(m.kind))?;
            let p = self.pipelines[k].as_mut().unwrap();
            let [wv, wh] = std::mem::take(&mut p.pending_w)
                .try_into()
                .map_err(|_| ProtocolError::OutOfOrder("frame norm requests"))?;
            let (v, v_skew, h) = (
                stage(&p.v_rel, "v_rel")?,
                stage(&p.v_rel_skew, "v_rel_skew")?,
                stage(&p.h, "h")?,
            );
            let y = self.unmask(k, &v, &root_v, wv)?;
            let y_skew = self.unmask(k, &v_skew, &root_v, wv)?;
            let z = self.unmask(k, &h, &root_h, wh)?;
            let x = self.mul(&y_skew, &z)?;
            let q = self.be.stack_rows(&[x.clone(), y.clone(), z.clone()])?;
            let proj = self.be.encode(projection_xz().into());
            let q_xz = self.be.plain_mul(&proj, &q)?;
            let p = self.pipelines[k].as_mut().unwrap();
            p.y = Some(y);
            p.y_skew = Some(y_skew);
            p.z = Some(z);
            p.x = Some(x);
            p.q_xz = Some(q_xz);
        }
        for k in self.active() {
            stage(&self.pipelines[k].as_ref().unwrap().q_xz, "frame norm replies")?;
        }
        Ok(())
    }

    pub fn sampling_upload_requests(&self) -> Vec<Request> {
        self.upload_request(MessageKind::SamplingUploadRequest)
    }

    pub fn sampling_ingest_uploads(&mut self, msgs: &[Message]) -> Result<(), ProtocolError> {
        for m in msgs {
            let i = m.from.operator_index().ok_or(ProtocolError::Unexpected(m.kind))?;
            for (k, parts) in self.strip_groups(m, [Field::CovFactor, Field::Radius, Field::Position])? {
                self.pipelines[k].as_mut().unwrap().sampling_parts[i] = Some(parts);
            }
        }
        for k in self.active().collect::<Vec<_>>() {
            let p = self.pipelines[k].as_mut().unwrap();
            let q_xz = stage(&p.q_xz, "frame")?;
            let parts = std::mem::take(&mut p.sampling_parts);
            let [Some([l1, r1, p1]), Some([l2, r2, p2])] = parts else {
                return Err(ProtocolError::OutOfOrder("sampling uploads from both operators"));
            };
            let sigma = vec![self.mul(&q_xz, &l1)?, self.mul(&q_xz, &l2)?];
            let radius = self.add(&r1, &r2)?;
            let r_rel = self.add(&p1, &p2)?;
            let p = self.pipelines[k].as_mut().unwrap();
            p.sigma_xz = sigma;
            p.factors = vec![l1, l2];
            p.radius = Some(radius);
            p.r_rel = Some(r_rel);
        }
        Ok(())
    }

    pub fn sampling_miss_requests(&mut self) -> Result<Vec<Request>, ProtocolError> {
        let mut out = Vec::new();
        for k in self.active().collect::<Vec<_>>() {
            let r = stage(&self.pipelines[k].as_ref().unwrap().r_rel, "sampling uploads")?;
            let forced = (self.opts.fault == Some(Fault::UnmaskedMissDistance)).then_some(1.0);
            let t = self.masked_square(k, &r, MaskUse::MissDistance, forced)?;
            out.push(Request {
                to: self.route(k),
                kind: MessageKind::SamplingMissDistanceRequest,
                payload: Payload::new().cipher(Field::MaskedMissDistance, t),
            });
        }
        Ok(out)
    }

    pub fn sampling_finish(&mut self, msgs: &[Message]) -> Result<(), ProtocolError> {
        for m in msgs {
            let k = self.pipeline_of_reply(m)?;
            let root = m
                .payload
                .first_cipher(Field::MissRoot)
                .ok_or(ProtocolError::Unexpected(m.kind))?
                .clone();
            let p = self.pipelines[k].as_mut().unwrap();
            let w = p.pending_w.pop().ok_or(ProtocolError::OutOfOrder("sampling miss request"))?;
            let (key, radius) = (p.key, stage(&p.radius, "radius")?);
            let r0 = self.be.plain_mul(&self.be.encode(Tensor::vector(&[-1.0, 0.0])), &root)?;
            let cw2 = self.enc(Tensor::scalar(w * w), &key);
            let rhs = if self.opts.fault == Some(Fault::RhsUnsquared) {
                self.mul(&cw2, &radius)?
            } else {
                let rr = self.mul(&radius, &radius)?;
                self.mul(&cw2, &rr)?
            };
            let p = self.pipelines[k].as_mut().unwrap();
            p.r0 = Some(r0);
            p.rhs = Some(rhs);
            p.sample_w = w;
        }
        self.encrypt_samples()
    }

    /// `C_sʲ = ⊕ᵢ C_QXZ ⊗ (C_Lᵢ ⊗ Enc(w zᵢʲ))`, then the squared distance to the disk center.
    fn encrypt_samples(&mut self) -> Result<(), ProtocolError> {
        let n = self.schedule.len();
        let mut z_iter = self.samples.iter();
        for j in 0..n {
            let (z1, z2) = z_iter.next().expect("z-stream is unbounded");
            let (z1, z2) = if self.opts.zero_samples { ([0.0; 3], [0.0; 3]) } else { (z1, z2) };
            let k = self.schedule.operator_of(j);
            let p = self.pipelines[k].as_ref().ok_or(ProtocolError::OutOfOrder("pipeline for scheduled key"))?;
            let (key, w) = (p.key, p.sample_w);
            let q_xz = stage(&p.q_xz, "q_xz")?;
            let r0 = stage(&p.r0, "r0")?;
            let factors = p.factors.clone();
            let mut s: Option<Ciphertext> = None;
            for (l, z) in factors.iter().zip([z1, z2]) {
                let wz = self.enc(Tensor::vector(&z.map(|x| w * x)), &key);
                let lz = self.mul(l, &wz)?;
                let term = self.mul(&q_xz, &lz)?;
                s = Some(match s {
                    None => term,
                    Some(acc) => self.add(&acc, &term)?,
                });
            }
            let diff = self.add(&s.expect("two operators"), &r0)?;
            let lhs = self.mul(&diff, &diff)?;
            self.pipelines[k].as_mut().unwrap().lhs.push((j as u64, lhs));
        }
        Ok(())
    }

    /// Number of comparison rounds needed for the configured batch size.
    pub fn compare_rounds(&self) -> usize {
        let b = self.opts.batch;
        self.active()
            .map(|k| self.pipelines[k].as_ref().unwrap().lhs.len().div_ceil(b))
            .max()
            .unwrap_or(0)
    }

    pub fn compare_requests(&mut self, round: usize) -> Result<Vec<Request>, ProtocolError> {
        let b = self.opts.batch;
        let mut out = Vec::new();
        for k in self.active().collect::<Vec<_>>() {
            let p = self.pipelines[k].as_ref().unwrap();
            let (key, rhs) = (p.key, stage(&p.rhs, "rhs")?);
            let start = (round * b).min(p.lhs.len());
            let end = ((round + 1) * b).min(p.lhs.len());
            if start == end {
                continue;
            }
            let batch: Vec<(u64, Ciphertext)> = p.lhs[start..end].to_vec();
            let mut payload = Payload::new().count(Field::SampleIds, batch.iter().map(|(j, _)| *j).collect());
            for (_, lhs) in &batch {
                let (alpha, beta) = self.masks.alpha_beta(k);
                let (first, second) = mask_comparison(self.be, lhs, &rhs, alpha, beta, &key)?;
                let (first, second) = (self.track(first), self.track(second));
                payload = payload.cipher(Field::MaskedFirst, first).cipher(Field::MaskedSecond, second);
            }
            out.push(Request {
                to: PartyId::operator(k),
                kind: MessageKind::ComparePair,
                payload,
            });
        }
        Ok(out)
    }

    pub fn compare_ingest(&mut self, msgs: &[Message], expected: usize) -> Result<(), ProtocolError> {
        let mut got = 0;
        for m in msgs {
            let bits = m
                .payload
                .flags_of(Field::Comparison)
                .ok_or(ProtocolError::Unexpected(m.kind))?;
            self.n_c += bits.iter().filter(|&&b| b).count() as u64;
            self.decided += bits.len() as u64;
            got += bits.len();
        }
        if got != expected {
            return Err(ProtocolError::OutOfOrder("comparison results for every sample"));
        }
        Ok(())
    }

    pub fn publish(&self) -> Vec<Request> {
        let n = self.schedule.len() as u64;
        self.operators_to(
            MessageKind::ResultPublish,
            Payload::new()
                .count(Field::CollisionCount, vec![self.n_c, n])
                .plain(Field::Probability, vec![self.n_c as f64 / n as f64]),
        )
    }
}
