//! Homomorphic-encryption abstraction: keys, encode/encrypt/decrypt, `⊕`, `⊗`,
//! plaintext-ciphertext products and double (layered) encryption.
//!
//! Protocol code only talks to [`HeBackend`]. The [`ReferenceBackend`] keeps
//! values inside sealed handles and is homomorphism-exact (or fixed-point
//! quantized); it is a protocol-logic testbed and provides no cryptographic
//! security. Whatever the backend, the shared rules live here: key identity,
//! shape composability, layer handling and multiplicative-depth accounting.

mod ciphertext;
mod reference;
mod tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ciphertext::Ciphertext;
pub use reference::ReferenceBackend;
pub use tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeError {
    #[error("key mismatch: expected key {expected}, found key {found}")]
    KeyMismatch { expected: KeyId, found: KeyId },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Shape, right: Shape },
    #[error("layer violation: {0}")]
    LayerViolation(&'static str),
    #[error("multiplicative level {level} exceeds budget {budget}")]
    LevelBudgetExceeded { level: u32, budget: u32 },
    #[error("cannot fold an empty list of ciphertexts")]
    EmptyFold,
    #[error("malformed ciphertext envelope: {0}")]
    MalformedEnvelope(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KeyId(pub u64);

impl std::fmt::Display for KeyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKey {
    id: KeyId,
}

impl PublicKey {
    pub fn id(&self) -> KeyId {
        self.id
    }
}

/// Decryption capability for one key. Not `Clone` and not serializable, so it
/// cannot end up inside a message payload.
#[derive(PartialEq, Eq)]
pub struct SecretKey {
    id: KeyId,
}

impl SecretKey {
    pub fn id(&self) -> KeyId {
        self.id
    }
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SecretKey({})", self.id)
    }
}

#[derive(Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

impl KeyPair {
    /// For backend implementations: binds both halves to `id`.
    pub fn from_id(id: KeyId) -> Self {
        Self {
            public: PublicKey { id },
            secret: SecretKey { id },
        }
    }
}

/// An encoded message together with its fixed-point scale (`None` when exact).
#[derive(Debug, Clone, PartialEq)]
pub struct Plaintext {
    pub tensor: Tensor,
    pub scale_bits: Option<u32>,
}

impl Plaintext {
    pub fn shape(&self) -> Shape {
        self.tensor.shape()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendMode {
    Exact,
    Quantized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendConfig {
    pub mode: BackendMode,
    pub level_budget: u32,
    /// Mantissa bits kept by every encode and every homomorphic result in
    /// quantized mode.
    pub frac_bits: u32,
}

pub const DEFAULT_LEVEL_BUDGET: u32 = 8;
pub const DEFAULT_FRAC_BITS: u32 = 40;

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            mode: BackendMode::Exact,
            level_budget: DEFAULT_LEVEL_BUDGET,
            frac_bits: DEFAULT_FRAC_BITS,
        }
    }
}

impl BackendConfig {
    pub fn quantized(frac_bits: u32) -> Self {
        Self {
            mode: BackendMode::Quantized,
            frac_bits,
            ..Self::default()
        }
    }
}

/// Operations every HE construction must offer to the protocol.
pub trait HeBackend: Send + Sync {
    fn config(&self) -> &BackendConfig;

    fn keygen(&self) -> KeyPair;

    fn encode(&self, m: Tensor) -> Plaintext;

    fn encrypt(&self, p: &Plaintext, pk: &PublicKey) -> Ciphertext;

    /// Decrypts a single-layer ciphertext.
    fn decrypt(&self, c: &Ciphertext, sk: &SecretKey) -> Result<Plaintext, HeError>;

    /// Wraps a single-layer ciphertext under a second public key.
    fn encrypt_ciphertext(&self, inner: &Ciphertext, outer: &PublicKey) -> Result<Ciphertext, HeError>;

    /// Removes the outer layer of a double encryption.
    fn decrypt_outer(&self, c: &Ciphertext, sk: &SecretKey) -> Result<Ciphertext, HeError>;

    fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError>;

    fn mul(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError>;

    /// `m · c` for a plaintext left operand; consumes no level.
    fn plain_mul(&self, m: &Plaintext, c: &Ciphertext) -> Result<Ciphertext, HeError>;

    /// Assembles equally sized vector ciphertexts into the rows of a matrix.
    fn stack_rows(&self, rows: &[Ciphertext]) -> Result<Ciphertext, HeError>;

    fn encrypt_tensor(&self, m: Tensor, pk: &PublicKey) -> Ciphertext {
        self.encrypt(&self.encode(m), pk)
    }
}

/// `c₁ ⊕ c₂ ⊕ …`, folded left to right.
pub fn he_sum(backend: &dyn HeBackend, list: &[Ciphertext]) -> Result<Ciphertext, HeError> {
    let (first, rest) = list.split_first().ok_or(HeError::EmptyFold)?;
    rest.iter().try_fold(first.clone(), |acc, c| backend.add(&acc, c))
}

/// `c₁ ⊗ c₂ ⊗ …`, folded left to right.
pub fn he_prod(backend: &dyn HeBackend, list: &[Ciphertext]) -> Result<Ciphertext, HeError> {
    let (first, rest) = list.split_first().ok_or(HeError::EmptyFold)?;
    rest.iter().try_fold(first.clone(), |acc, c| backend.mul(&acc, c))
}

/// Checks shared by every binary homomorphic operation.
pub fn check_binary(a: &Ciphertext, b: &Ciphertext) -> Result<(), HeError> {
    if a.layers() != 1 || b.layers() != 1 {
        return Err(HeError::LayerViolation("homomorphic operation on a double encryption"));
    }
    if a.key_id() != b.key_id() {
        return Err(HeError::KeyMismatch {
            expected: a.key_id(),
            found: b.key_id(),
        });
    }
    Ok(())
}

/// Level of a product: the multiplicative depth, `max(l₁, l₂) + 1`.
pub fn product_level(a: &Ciphertext, b: &Ciphertext, budget: u32) -> Result<u32, HeError> {
    let level = a.level().max(b.level()) + 1;
    if level > budget {
        return Err(HeError::LevelBudgetExceeded { level, budget });
    }
    Ok(level)
}

/// Rounds `x` to `bits` significant fractional bits relative to its binary
/// exponent, so `|quantize(x) − x| ≤ 2^−(bits+1)·|x|`.
pub fn quantize(x: f64, bits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let biased = ((x.to_bits() >> 52) & 0x7ff) as i32;
    let exp = if biased == 0 { x.abs().log2().floor() as i32 } else { biased - 1023 };
    let quantum = 2f64.powi(exp - bits as i32);
    (x / quantum).round() * quantum
}
