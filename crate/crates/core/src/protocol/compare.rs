//! Masked comparison for the final tally.
//!
//! The coordinator holds encryptions of `lhs` and `rhs` and wants `lhs ≤ rhs`
//! without decrypting. It applies the same map `x ↦ αx + β·rhs` to both and
//! sends the pair to the key holder. The offset is scaled by the encrypted
//! threshold so that rounding in approximate backends stays relative to it.
//! When `α < 0` the map reverses order, so the pair is sent swapped: the key
//! holder always tests `first ≤ second` and the answer is the original
//! comparison. Both sides use the same operation sequence, so ties survive
//! floating point exactly.

use crate::he::{Ciphertext, HeBackend, HeError, PublicKey, Tensor};

/// Coordinator side: `(first, second)` to send for decision.
pub fn mask_comparison(
    be: &dyn HeBackend,
    lhs: &Ciphertext,
    rhs: &Ciphertext,
    alpha: f64,
    beta: f64,
    pk: &PublicKey,
) -> Result<(Ciphertext, Ciphertext), HeError> {
    let c_alpha = be.encrypt_tensor(Tensor::scalar(alpha), pk);
    let c_beta = be.encrypt_tensor(Tensor::scalar(beta), pk);
    let offset = be.mul(&c_beta, rhs)?;
    let l = be.add(&be.mul(&c_alpha, lhs)?, &offset)?;
    let r = be.add(&be.mul(&c_alpha, rhs)?, &offset)?;
    Ok(if alpha < 0.0 { (r, l) } else { (l, r) })
}

/// Key-holder side: the only thing it learns is this bit.
pub fn decide(first: f64, second: f64) -> bool {
    first <= second
}

/// Plaintext reference of the masked pair, used to cross-check the encrypted path.
pub fn masked_pair_plain(lhs: f64, rhs: f64, alpha: f64, beta: f64) -> (f64, f64) {
    let offset = beta * rhs;
    let (l, r) = (alpha * lhs + offset, alpha * rhs + offset);
    if alpha < 0.0 { (r, l) } else { (l, r) }
}
