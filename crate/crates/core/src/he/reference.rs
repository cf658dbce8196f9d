use std::sync::atomic::{AtomicU64, Ordering};

use super::{
    check_binary, product_level, quantize, BackendConfig, BackendMode, Ciphertext, HeBackend, HeError, KeyId,
    KeyPair, Plaintext, PublicKey, SecretKey, Shape, Tensor,
};
use crate::rng::mix64;

/// Reference backend. Slot values are sealed by XOR with a keystream derived
/// from the backend seed, key id and a per-ciphertext nonce, so handles are
/// opaque to code that does not go through `decrypt`. Not secure: anyone with
/// the backend object can unseal anything.
#[derive(Debug)]
pub struct ReferenceBackend {
    config: BackendConfig,
    seal_key: u64,
    next_key: AtomicU64,
    next_nonce: AtomicU64,
}

impl ReferenceBackend {
    pub fn new(config: BackendConfig, seed: u64) -> Self {
        Self {
            config,
            seal_key: mix64(seed ^ 0x5EA1_5EA1_5EA1_5EA1),
            next_key: AtomicU64::new(1),
            next_nonce: AtomicU64::new(1),
        }
    }

    fn pad(&self, key: KeyId, nonce: u64, slot: u64) -> u64 {
        mix64(self.seal_key ^ mix64(key.0 ^ mix64(nonce ^ mix64(slot))))
    }

    fn fresh_nonce(&self) -> u64 {
        self.next_nonce.fetch_add(1, Ordering::Relaxed)
    }

    fn round(&self, x: f64) -> f64 {
        match self.config.mode {
            BackendMode::Exact => x,
            BackendMode::Quantized => quantize(x, self.config.frac_bits),
        }
    }

    fn seal(&self, key: KeyId, level: u32, t: &Tensor) -> Ciphertext {
        let nonce = self.fresh_nonce();
        let payload = t
            .data()
            .iter()
            .enumerate()
            .flat_map(|(i, x)| (x.to_bits() ^ self.pad(key, nonce, i as u64)).to_le_bytes())
            .collect();
        Ciphertext::from_parts(key, t.shape(), level, 1, nonce, payload)
    }

    fn unseal(&self, c: &Ciphertext) -> Result<Tensor, HeError> {
        if c.payload().len() != 8 * c.shape().len() {
            return Err(HeError::MalformedEnvelope("payload size does not match shape".into()));
        }
        let data = c
            .payload()
            .chunks_exact(8)
            .enumerate()
            .map(|(i, b)| {
                let w = u64::from_le_bytes(b.try_into().unwrap());
                f64::from_bits(w ^ self.pad(c.key_id(), c.nonce(), i as u64))
            })
            .collect();
        Tensor::new(c.shape(), data)
    }

    fn xor_stream(&self, key: KeyId, nonce: u64, bytes: &[u8]) -> Vec<u8> {
        bytes
            .chunks(8)
            .enumerate()
            .flat_map(|(i, chunk)| {
                let pad = self.pad(key, nonce, u64::MAX - i as u64).to_le_bytes();
                chunk.iter().zip(pad).map(|(a, b)| a ^ b).collect::<Vec<_>>()
            })
            .collect()
    }

    fn require_single(c: &Ciphertext, what: &'static str) -> Result<(), HeError> {
        if c.layers() != 1 {
            return Err(HeError::LayerViolation(what));
        }
        Ok(())
    }
}

impl HeBackend for ReferenceBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn keygen(&self) -> KeyPair {
        KeyPair::from_id(KeyId(self.next_key.fetch_add(1, Ordering::Relaxed)))
    }

    fn encode(&self, m: Tensor) -> Plaintext {
        match self.config.mode {
            BackendMode::Exact => Plaintext {
                tensor: m,
                scale_bits: None,
            },
            BackendMode::Quantized => Plaintext {
                tensor: m.map(|x| self.round(x)),
                scale_bits: Some(self.config.frac_bits),
            },
        }
    }

    fn encrypt(&self, p: &Plaintext, pk: &PublicKey) -> Ciphertext {
        self.seal(pk.id(), 0, &p.tensor)
    }

    fn decrypt(&self, c: &Ciphertext, sk: &SecretKey) -> Result<Plaintext, HeError> {
        Self::require_single(c, "decrypt on a double encryption; remove the outer layer first")?;
        if c.key_id() != sk.id() {
            return Err(HeError::KeyMismatch {
                expected: sk.id(),
                found: c.key_id(),
            });
        }
        Ok(Plaintext {
            tensor: self.unseal(c)?,
            scale_bits: match self.config.mode {
                BackendMode::Exact => None,
                BackendMode::Quantized => Some(self.config.frac_bits),
            },
        })
    }

    fn encrypt_ciphertext(&self, inner: &Ciphertext, outer: &PublicKey) -> Result<Ciphertext, HeError> {
        Self::require_single(inner, "only single-layer ciphertexts can be wrapped")?;
        let nonce = self.fresh_nonce();
        let payload = self.xor_stream(outer.id(), nonce, &inner.to_envelope());
        Ok(Ciphertext::from_parts(outer.id(), inner.shape(), inner.level(), 2, nonce, payload))
    }

    fn decrypt_outer(&self, c: &Ciphertext, sk: &SecretKey) -> Result<Ciphertext, HeError> {
        if c.layers() != 2 {
            return Err(HeError::LayerViolation("outer decryption of a single-layer ciphertext"));
        }
        if c.key_id() != sk.id() {
            return Err(HeError::KeyMismatch {
                expected: sk.id(),
                found: c.key_id(),
            });
        }
        Ciphertext::from_envelope(&self.xor_stream(c.key_id(), c.nonce(), c.payload()))
    }

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        check_binary(a, b)?;
        let sum = self.unseal(a)?.add(&self.unseal(b)?)?;
        Ok(self.seal(a.key_id(), a.level().max(b.level()), &sum.map(|x| self.round(x))))
    }

    fn mul(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        check_binary(a, b)?;
        a.shape().product(b.shape())?;
        let level = product_level(a, b, self.config.level_budget)?;
        let prod = self.unseal(a)?.mul(&self.unseal(b)?)?;
        Ok(self.seal(a.key_id(), level, &prod.map(|x| self.round(x))))
    }

    fn plain_mul(&self, m: &Plaintext, c: &Ciphertext) -> Result<Ciphertext, HeError> {
        Self::require_single(c, "plaintext product with a double encryption")?;
        let prod = m.tensor.mul(&self.unseal(c)?)?;
        Ok(self.seal(c.key_id(), c.level(), &prod.map(|x| self.round(x))))
    }

    fn stack_rows(&self, rows: &[Ciphertext]) -> Result<Ciphertext, HeError> {
        let first = rows.first().ok_or(HeError::EmptyFold)?;
        let Shape::Vector(n) = first.shape() else {
            return Err(HeError::ShapeMismatch {
                op: "stack_rows",
                left: first.shape(),
                right: Shape::Vector(0),
            });
        };
        let mut data = Vec::with_capacity(rows.len() * n);
        let mut level = 0;
        for r in rows {
            check_binary(first, r)?;
            if r.shape() != first.shape() {
                return Err(HeError::ShapeMismatch {
                    op: "stack_rows",
                    left: first.shape(),
                    right: r.shape(),
                });
            }
            level = level.max(r.level());
            data.extend_from_slice(self.unseal(r)?.data());
        }
        let t = Tensor::new(Shape::Matrix(rows.len(), n), data)?;
        Ok(self.seal(first.key_id(), level, &t))
    }
}
