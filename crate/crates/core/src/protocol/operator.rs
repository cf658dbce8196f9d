//! Operator state machine. It sees its own secrets, public keys, the schedule
//! and whatever arrives over the bus; it has no access to coordinator masks.

use crate::geometry::skew;
use crate::he::{Ciphertext, HeBackend, HeError, KeyPair, PublicKey, SecretKey, Tensor};
use crate::netsim::{Field, Message, MessageKind, PartyId, Payload};

use super::compare::decide;
use super::{Fault, OperatorSecret};

/// Reason prefix used when a delegated norm reveals degenerate geometry.
pub const DEGENERATE_REASON: &str = "degenerate";

#[derive(Debug)]
pub struct Outgoing {
    pub kind: MessageKind,
    pub payload: Payload,
}

pub struct Operator<'a> {
    id: PartyId,
    be: &'a dyn HeBackend,
    secret: OperatorSecret,
    keys: KeyPair,
    fault: Option<Fault>,
    /// Smallest masked squared norm accepted as non-degenerate.
    degenerate_below: f64,
    coordinator_key: Option<PublicKey>,
    operator_keys: [Option<PublicKey>; 2],
    schedule: Option<Vec<bool>>,
    published: Option<(u64, u64, f64)>,
}

impl<'a> Operator<'a> {
    pub fn new(
        id: PartyId,
        be: &'a dyn HeBackend,
        secret: OperatorSecret,
        fault: Option<Fault>,
        degenerate_below: f64,
    ) -> Self {
        Self {
            id,
            be,
            secret,
            keys: be.keygen(),
            fault,
            degenerate_below,
            coordinator_key: None,
            operator_keys: [None, None],
            schedule: None,
            published: None,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public
    }

    pub fn secret_key(&self) -> &SecretKey {
        &self.keys.secret
    }

    pub fn into_secret_key(self) -> SecretKey {
        self.keys.secret
    }

    /// Schedule received in the public parameters.
    pub fn schedule(&self) -> Option<&[bool]> {
        self.schedule.as_deref()
    }

    /// `(n_c, N, pc)` once the result has been published.
    pub fn published_result(&self) -> Option<(u64, u64, f64)> {
        self.published
    }

    pub fn announce(&self) -> Outgoing {
        let field = match self.id {
            PartyId::Operator1 => Field::Operator1Key,
            _ => Field::Operator2Key,
        };
        Outgoing {
            kind: MessageKind::KeyAnnounce,
            payload: Payload::new().key(field, self.keys.public),
        }
    }

    fn sign(&self) -> f64 {
        if self.id == PartyId::Operator1 { 1.0 } else { -1.0 }
    }

    pub fn handle(&mut self, msg: &Message) -> Vec<Outgoing> {
        match self.try_handle(msg) {
            Ok(out) => out,
            Err(reason) => vec![Outgoing {
                kind: MessageKind::Abort,
                payload: Payload::new().text(Field::Reason, reason),
            }],
        }
    }

    fn try_handle(&mut self, msg: &Message) -> Result<Vec<Outgoing>, String> {
        let p = &msg.payload;
        let reply = |kind, payload| Ok(vec![Outgoing { kind, payload }]);
        match msg.kind {
            MessageKind::KeyAnnounce => {
                self.coordinator_key = p.key_of(Field::CoordinatorKey);
                Ok(vec![])
            }
            MessageKind::PublicParams => {
                self.operator_keys = [p.key_of(Field::Operator1Key), p.key_of(Field::Operator2Key)];
                self.schedule = p.flags_of(Field::Schedule).map(<[bool]>::to_vec);
                Ok(vec![])
            }
            MessageKind::FrameUploadRequest => {
                let s = self.sign();
                let r = self.secret.state.r * s;
                let v = self.secret.state.v * s;
                let mut out = Payload::new();
                for pk in self.requested_keys(p)? {
                    out = out
                        .key(Field::PipelineKey, pk)
                        .cipher(Field::PositionSkew, self.double_enc(skew(&r).into(), &pk)?)
                        .cipher(Field::Velocity, self.double_enc(v.into(), &pk)?)
                        .cipher(Field::VelocitySkew, self.double_enc(skew(&v).into(), &pk)?);
                }
                reply(MessageKind::FrameDoubleEncUpload, out)
            }
            MessageKind::FrameMaskedNormRequest => {
                let mut out = Payload::new();
                for field in [Field::MaskedVelocityNorm, Field::MaskedMomentumNorm] {
                    if let Some(c) = p.first_cipher(field) {
                        let t = self.decrypt_scalar(c)?;
                        if t.is_nan() || t <= self.degenerate_below {
                            return Err(format!("{DEGENERATE_REASON}: masked squared norm {t:e} at or below threshold"));
                        }
                        let root = self.be.encrypt_tensor(Tensor::scalar(t.sqrt().recip()), &self.keys.public);
                        out = out.cipher(Field::InverseRoot, root);
                    }
                }
                reply(MessageKind::FrameMaskedNormReply, out)
            }
            MessageKind::SamplingUploadRequest => {
                let r = self.secret.state.r * self.sign();
                let l = self.secret.cov_factor;
                let mut out = Payload::new();
                for pk in self.requested_keys(p)? {
                    out = out.key(Field::PipelineKey, pk);
                    if self.fault == Some(Fault::PlaintextCovarianceUpload) {
                        out = out.plain(Field::CovFactor, Tensor::from(l).into_data());
                    }
                    out = out
                        .cipher(Field::CovFactor, self.double_enc(l.into(), &pk)?)
                        .cipher(Field::Radius, self.double_enc(Tensor::scalar(self.secret.radius), &pk)?)
                        .cipher(Field::Position, self.double_enc(r.into(), &pk)?);
                }
                reply(MessageKind::SamplingDoubleEncUpload, out)
            }
            MessageKind::SamplingMissDistanceRequest => {
                let c = p
                    .first_cipher(Field::MaskedMissDistance)
                    .ok_or("miss-distance request without ciphertext")?;
                let t = self.decrypt_scalar(c)?;
                let root = self.be.encrypt_tensor(Tensor::scalar(t.max(0.0).sqrt()), &self.keys.public);
                reply(MessageKind::SamplingMissDistanceReply, Payload::new().cipher(Field::MissRoot, root))
            }
            MessageKind::ComparePair => {
                let firsts: Vec<_> = p.ciphers(Field::MaskedFirst).collect();
                let seconds: Vec<_> = p.ciphers(Field::MaskedSecond).collect();
                if firsts.len() != seconds.len() {
                    return Err("unpaired comparison ciphertexts".into());
                }
                let bits = firsts
                    .iter()
                    .zip(&seconds)
                    .map(|(f, s)| Ok(decide(self.decrypt_scalar(f)?, self.decrypt_scalar(s)?)))
                    .collect::<Result<Vec<_>, String>>()?;
                reply(MessageKind::CompareResult, Payload::new().flags(Field::Comparison, bits))
            }
            MessageKind::ResultPublish => {
                let counts = p.counts_of(Field::CollisionCount).unwrap_or(&[]);
                let pc = p.plain_of(Field::Probability).and_then(|v| v.first().copied());
                if let (&[n_c, n], Some(pc)) = (counts, pc) {
                    self.published = Some((n_c, n, pc));
                }
                Ok(vec![])
            }
            MessageKind::Abort => Ok(vec![]),
            other => Err(format!("unexpected {other:?} at {}", self.id)),
        }
    }

    /// Keys listed in an upload request; each must be one of the announced operator keys.
    fn requested_keys(&self, p: &Payload) -> Result<Vec<PublicKey>, String> {
        let keys: Vec<PublicKey> = p.keys(Field::PipelineKey).collect();
        for k in &keys {
            if !self.operator_keys.contains(&Some(*k)) {
                return Err(format!("upload requested under unknown key {}", k.id()));
            }
        }
        Ok(keys)
    }

    fn double_enc(&self, m: Tensor, pk: &PublicKey) -> Result<Ciphertext, String> {
        let outer = self.coordinator_key.ok_or("coordinator key not announced")?;
        let inner = self.be.encrypt_tensor(m, pk);
        self.be.encrypt_ciphertext(&inner, &outer).map_err(|e| e.to_string())
    }

    fn decrypt_scalar(&self, c: &Ciphertext) -> Result<f64, String> {
        let p = self.be.decrypt(c, &self.keys.secret).map_err(|e: HeError| e.to_string())?;
        p.tensor.as_scalar().ok_or_else(|| "expected a scalar ciphertext".to_string())
    }
}
