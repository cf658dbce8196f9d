use base64::Engine as _;
use base64::engine::general_purpose::STANDARD;

use super::{HeError, KeyId, Shape};

/// Opaque ciphertext handle: public metadata plus backend-specific sealed bytes.
///
/// Envelope layout (little-endian): `"EPC1"`, key id `u64`, shape tag `u8` and
/// two `u32` dimensions, level `u32`, layers `u8`, nonce `u64`, payload length
/// `u32`, payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    key_id: KeyId,
    shape: Shape,
    level: u32,
    layers: u8,
    nonce: u64,
    payload: Vec<u8>,
}

const MAGIC: &[u8; 4] = b"EPC1";
const HEADER_LEN: usize = 4 + 8 + 9 + 4 + 1 + 8 + 4;

impl Ciphertext {
    pub fn from_parts(key_id: KeyId, shape: Shape, level: u32, layers: u8, nonce: u64, payload: Vec<u8>) -> Self {
        Self {
            key_id,
            shape,
            level,
            layers,
            nonce,
            payload,
        }
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Multiplicative depth consumed so far.
    pub fn level(&self) -> u32 {
        self.level
    }

    /// 1 for a plain encryption, 2 for a double encryption.
    pub fn layers(&self) -> u8 {
        self.layers
    }

    pub fn nonce(&self) -> u64 {
        self.nonce
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn to_envelope(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.key_id.0.to_le_bytes());
        let (tag, d0, d1) = match self.shape {
            Shape::Scalar => (0u8, 0u32, 0u32),
            Shape::Vector(n) => (1, n as u32, 0),
            Shape::Matrix(r, c) => (2, r as u32, c as u32),
        };
        out.push(tag);
        out.extend_from_slice(&d0.to_le_bytes());
        out.extend_from_slice(&d1.to_le_bytes());
        out.extend_from_slice(&self.level.to_le_bytes());
        out.push(self.layers);
        out.extend_from_slice(&self.nonce.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_envelope(bytes: &[u8]) -> Result<Self, HeError> {
        let bad = |m: &str| HeError::MalformedEnvelope(m.to_string());
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(bad("missing header"));
        }
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let key_id = KeyId(u64_at(4));
        let (d0, d1) = (u32_at(13) as usize, u32_at(17) as usize);
        let shape = match bytes[12] {
            0 => Shape::Scalar,
            1 => Shape::Vector(d0),
            2 => Shape::Matrix(d0, d1),
            _ => return Err(bad("unknown shape tag")),
        };
        let level = u32_at(21);
        let layers = bytes[25];
        if !(1..=2).contains(&layers) {
            return Err(bad("layer count must be 1 or 2"));
        }
        let nonce = u64_at(26);
        let len = u32_at(34) as usize;
        if bytes.len() != HEADER_LEN + len {
            return Err(bad("payload length mismatch"));
        }
        Ok(Self {
            key_id,
            shape,
            level,
            layers,
            nonce,
            payload: bytes[HEADER_LEN..].to_vec(),
        })
    }

    pub fn to_base64(&self) -> String {
        STANDARD.encode(self.to_envelope())
    }

    pub fn from_base64(s: &str) -> Result<Self, HeError> {
        let bytes = STANDARD
            .decode(s)
            .map_err(|e| HeError::MalformedEnvelope(e.to_string()))?;
        Self::from_envelope(&bytes)
    }
}

impl serde::Serialize for Ciphertext {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_base64())
    }
}

impl<'de> serde::Deserialize<'de> for Ciphertext {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::from_base64(&s).map_err(serde::de::Error::custom)
    }
}
