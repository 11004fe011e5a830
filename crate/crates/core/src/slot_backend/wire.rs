//! Ciphertext byte layout.
//!
//! ```text
//! [key_id: 16 bytes][nonce: 16 bytes][capacity: u32 LE][slots: capacity x 8 bytes LE]
//! ```
//!
//! Each slot word is the IEEE-754 bit pattern of the slot value XORed with a
//! keystream word. The keystream is ChaCha20 seeded by
//! `SHA-256(masking_seed || nonce)`, so a fresh nonce gives a fresh mask and
//! the bytes look uniform to anyone without the masking seed. With masking
//! disabled the keystream is all zeros.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::{EncryptionContext, KeyId, OpNode, SlotVector};
use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 16 + 16 + 4;

/// A parsed serialization. Parsing needs no key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiphertextBlob {
    pub key_id: KeyId,
    pub nonce: [u8; 16],
    /// Masked slot words, one per slot.
    pub words: Vec<u64>,
}

impl CiphertextBlob {
    pub fn capacity(&self) -> usize {
        self.words.len()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Malformed(format!(
                "ciphertext blob of {} bytes is shorter than its header",
                bytes.len()
            )));
        }
        let mut key_id = [0u8; 16];
        key_id.copy_from_slice(&bytes[..16]);
        let mut nonce = [0u8; 16];
        nonce.copy_from_slice(&bytes[16..32]);
        let capacity = u32::from_le_bytes(bytes[32..36].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != capacity * 8 {
            return Err(Error::Malformed(format!(
                "blob declares {capacity} slots but carries {} payload bytes",
                body.len()
            )));
        }
        let words = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            key_id: KeyId(key_id),
            nonce,
            words,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.words.len());
        out.extend_from_slice(&self.key_id.0);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }
}

impl EncryptionContext {
    fn keystream(&self, nonce: &[u8; 16]) -> Option<ChaCha20Rng> {
        if !self.masking {
            return None;
        }
        let mut h = Sha256::new();
        h.update(self.masking_seed());
        h.update(nonce);
        Some(ChaCha20Rng::from_seed(h.finalize().into()))
    }

    /// Serializes with a nonce drawn from `rng`.
    pub fn serialize_ciphertext<R: RngCore + ?Sized>(
        &self,
        sv: &SlotVector,
        rng: &mut R,
    ) -> Result<Vec<u8>> {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        self.serialize_with_nonce(sv, nonce)
    }

    pub fn serialize_with_nonce(&self, sv: &SlotVector, nonce: [u8; 16]) -> Result<Vec<u8>> {
        self.check_key(sv)?;
        let mut ks = self.keystream(&nonce);
        let words = sv
            .slots
            .iter()
            .map(|x| x.to_bits() ^ ks.as_mut().map_or(0, |k| k.next_u64()))
            .collect();
        Ok(CiphertextBlob {
            key_id: sv.key_id,
            nonce,
            words,
        }
        .to_bytes())
    }

    /// Recovers the slot values of a serialization made under this context.
    pub fn unmask(&self, blob: &CiphertextBlob) -> Result<Vec<f64>> {
        if blob.key_id != self.key_id {
            return Err(Error::KeyMismatch {
                expected: self.key_id.to_hex(),
                found: blob.key_id.to_hex(),
            });
        }
        let mut ks = self.keystream(&blob.nonce);
        Ok(blob
            .words
            .iter()
            .map(|w| f64::from_bits(w ^ ks.as_mut().map_or(0, |k| k.next_u64())))
            .collect())
    }

    /// Rebuilds a ciphertext from its serialization.
    ///
    /// The layout does not carry the logical length or the level, so the
    /// owner supplies both. Operation history starts afresh.
    pub fn deserialize_ciphertext(
        &self,
        bytes: &[u8],
        logical_len: usize,
        depth_used: u32,
    ) -> Result<SlotVector> {
        let blob = CiphertextBlob::parse(bytes)?;
        if blob.capacity() != self.slot_capacity {
            return Err(Error::CapacityMismatch {
                left: self.slot_capacity,
                right: blob.capacity(),
            });
        }
        self.check_depth(depth_used)?;
        let slots = self.unmask(&blob)?;
        Ok(SlotVector {
            logical_len: logical_len.clamp(1, slots.len()),
            slots,
            depth_used,
            key_id: self.key_id,
            history: OpNode::fresh(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slot_backend::PlainVector;
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> EncryptionContext {
        EncryptionContext::new(8, 16, 42).unwrap()
    }

    #[test]
    fn layout_sizes_and_header() {
        let c = ctx();
        let sv = c.encrypt_values(&[1.0, -2.5]).unwrap();
        let bytes = c.serialize_with_nonce(&sv, [7; 16]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 8);
        assert_eq!(&bytes[..16], &c.key_id().0);
        assert_eq!(&bytes[16..32], &[7; 16]);
        assert_eq!(&bytes[32..36], &8u32.to_le_bytes());
    }

    #[test]
    fn round_trip_recovers_slots() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values = [0.25, -1.5, 3.0e-9, 1.0e6, 0.0];
        let sv = c.encrypt_values(&values).unwrap();
        let bytes = c.serialize_ciphertext(&sv, &mut rng).unwrap();
        let back = c.deserialize_ciphertext(&bytes, 5, 0).unwrap();
        let got = c.decrypt(&back).unwrap();
        for (a, b) in got.values().iter().zip(values) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(CiphertextBlob::parse(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn fresh_nonce_changes_bytes() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sv = c.encrypt(&PlainVector::new(vec![1.0, 2.0]).unwrap()).unwrap();
        let a = c.serialize_ciphertext(&sv, &mut rng).unwrap();
        let b = c.serialize_ciphertext(&sv, &mut rng).unwrap();
        assert_ne!(a, b);
        assert_ne!(a[HEADER_LEN..], b[HEADER_LEN..]);
    }

    #[test]
    fn masking_disabled_exposes_raw_bits() {
        let c = ctx().with_masking_disabled();
        let sv = c.encrypt_values(&[1.5]).unwrap();
        let bytes = c.serialize_with_nonce(&sv, [0; 16]).unwrap();
        let blob = CiphertextBlob::parse(&bytes).unwrap();
        assert_eq!(blob.words[0], 1.5f64.to_bits());
        assert_eq!(blob.words[1], 0);
    }

    #[test]
    fn wrong_key_cannot_deserialize() {
        let c = ctx();
        let other = EncryptionContext::new(8, 16, 43).unwrap();
        let sv = c.encrypt_values(&[1.0]).unwrap();
        let bytes = c.serialize_with_nonce(&sv, [1; 16]).unwrap();
        assert!(matches!(
            other.deserialize_ciphertext(&bytes, 1, 0),
            Err(Error::KeyMismatch { .. })
        ));
    }

    #[test]
    fn truncated_blob_is_malformed() {
        let c = ctx();
        let sv = c.encrypt_values(&[1.0]).unwrap();
        let bytes = c.serialize_with_nonce(&sv, [1; 16]).unwrap();
        assert!(matches!(CiphertextBlob::parse(&bytes[..40]), Err(Error::Malformed(_))));
        assert!(matches!(CiphertextBlob::parse(&bytes[..10]), Err(Error::Malformed(_))));
    }

    /// Two-sample chi-square over byte frequencies of the masked payload.
    fn byte_chi_square(a: &[Vec<u8>], b: &[Vec<u8>]) -> f64 {
        let mut ca = [0f64; 256];
        let mut cb = [0f64; 256];
        for blob in a {
            for &x in &blob[HEADER_LEN..] {
                ca[x as usize] += 1.0;
            }
        }
        for blob in b {
            for &x in &blob[HEADER_LEN..] {
                cb[x as usize] += 1.0;
            }
        }
        let na: f64 = ca.iter().sum();
        let nb: f64 = cb.iter().sum();
        let mut chi = 0.0;
        for i in 0..256 {
            let tot = ca[i] + cb[i];
            if tot == 0.0 {
                continue;
            }
            let ea = tot * na / (na + nb);
            let eb = tot * nb / (na + nb);
            chi += (ca[i] - ea).powi(2) / ea + (cb[i] - eb).powi(2) / eb;
        }
        chi
    }

    #[test]
    fn serializations_of_distinct_plaintexts_are_indistinguishable() {
        let c = EncryptionContext::new(64, 16, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = c.encrypt_values(&vec![0.125; 64]).unwrap();
        let y = c.encrypt_values(&[-3.0, 7.0]).unwrap();
        let sx: Vec<_> = (0..1000).map(|_| c.serialize_ciphertext(&x, &mut rng).unwrap()).collect();
        let sy: Vec<_> = (0..1000).map(|_| c.serialize_ciphertext(&y, &mut rng).unwrap()).collect();
        let chi = byte_chi_square(&sx, &sy);
        // 255 degrees of freedom: mean 255, sigma sqrt(510).
        let limit = 255.0 + 3.0 * 510f64.sqrt();
        assert!(chi < limit, "chi-square {chi} >= {limit}");

        // control: without masking the two are trivially separable
        let raw = c.clone().with_masking_disabled();
        let rx: Vec<_> = (0..1000).map(|_| raw.serialize_ciphertext(&x, &mut rng).unwrap()).collect();
        let ry: Vec<_> = (0..1000).map(|_| raw.serialize_ciphertext(&y, &mut rng).unwrap()).collect();
        assert!(byte_chi_square(&rx, &ry) > limit);
    }
}
