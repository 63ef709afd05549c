//! Authenticated layered sealing, test-mode implementation.
//!
//! Each layer is a keyed pseudorandom stream (SHA-256 in counter mode) plus a
//! truncated SHA-256 tag over the ciphertext. The contract is what matters:
//! exactly one layer is removable per key, inner content is unreadable before
//! its hop, and any tampering invalidates the current layer. A real cipher
//! suite can be swapped in behind the same two functions.

use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const NONCE_LEN: usize = 16;
pub const TAG_LEN: usize = 16;

const KS_DOMAIN: &[u8] = b"zmix.seal.keystream";
const TAG_DOMAIN: &[u8] = b"zmix.seal.tag";

#[derive(Clone, PartialEq, Eq)]
pub struct SealKey([u8; 32]);

impl SealKey {
    pub fn generate<R: RngCore>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        SealKey(k)
    }

    pub fn from_bytes(k: [u8; 32]) -> Self {
        SealKey(k)
    }
}

impl std::fmt::Debug for SealKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SealKey(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SealError {
    #[error("sealed blob truncated")]
    Truncated,
    #[error("authentication tag mismatch")]
    TagMismatch,
}

fn apply_keystream(key: &SealKey, nonce: &[u8; NONCE_LEN], buf: &mut [u8]) {
    let mut block_index = 0u64;
    let mut offset = 0;
    while offset < buf.len() {
        let mut h = Sha256::new();
        h.update(KS_DOMAIN);
        h.update(key.0);
        h.update(nonce);
        h.update(block_index.to_le_bytes());
        let block = h.finalize();
        for (b, k) in buf[offset..].iter_mut().zip(block.iter()) {
            *b ^= k;
        }
        offset += block.len();
        block_index += 1;
    }
}

fn tag(key: &SealKey, nonce: &[u8; NONCE_LEN], ct: &[u8]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    h.update(TAG_DOMAIN);
    h.update(key.0);
    h.update(nonce);
    h.update(ct);
    let full = h.finalize();
    let mut out = [0u8; TAG_LEN];
    out.copy_from_slice(&full[..TAG_LEN]);
    out
}

/// Seal `plaintext` under `key`. Layout: nonce || ciphertext || tag.
pub fn seal<R: RngCore>(key: &SealKey, rng: &mut R, plaintext: &[u8]) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let mut ct = plaintext.to_vec();
    apply_keystream(key, &nonce, &mut ct);
    let t = tag(key, &nonce, &ct);
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len() + TAG_LEN);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out.extend_from_slice(&t);
    out
}

pub fn open(key: &SealKey, sealed: &[u8]) -> Result<Vec<u8>, SealError> {
    if sealed.len() < NONCE_LEN + TAG_LEN {
        return Err(SealError::Truncated);
    }
    let mut nonce = [0u8; NONCE_LEN];
    nonce.copy_from_slice(&sealed[..NONCE_LEN]);
    let ct = &sealed[NONCE_LEN..sealed.len() - TAG_LEN];
    let claimed = &sealed[sealed.len() - TAG_LEN..];
    if tag(key, &nonce, ct) != claimed {
        return Err(SealError::TagMismatch);
    }
    let mut pt = ct.to_vec();
    apply_keystream(key, &nonce, &mut pt);
    Ok(pt)
}
