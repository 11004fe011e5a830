//! Simulated CKKS-style SIMD-slot engine.
//!
//! A [`SlotVector`] stands in for a batched ciphertext. Values live in the
//! clear inside the simulator, but the public API only offers what a real
//! scheme offers: slot-wise add/mult, plaintext multiplication, cyclic
//! rotation over the full capacity, decryption under the matching key, and
//! a keyed serialization whose bytes are masked by a keystream.
//!
//! Multiplicative depth is tracked eagerly and checked against the context
//! budget. Rotation and multiplication counts are derived from the shared
//! operation history (see [`OpCounts`]).

mod provenance;
mod wire;

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use provenance::{OpKind, OpNode};

pub use provenance::OpCounts;
pub use wire::{CiphertextBlob, HEADER_LEN};

/// Default multiplicative depth budget of a context.
pub const DEFAULT_DEPTH_BUDGET: u32 = 16;

/// Public identifier of a key pair.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyId(pub [u8; 16]);

impl KeyId {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::Malformed(format!("key id: {e}")))?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|_| Error::Malformed("key id must be 16 bytes".into()))?;
        Ok(Self(arr))
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({})", self.to_hex())
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A plaintext vector. Never empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainVector(Vec<f64>);

impl PlainVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyPlaintext);
        }
        Ok(Self(values))
    }

    pub fn scalar(value: f64) -> Self {
        Self(vec![value])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for PlainVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// A simulated ciphertext.
///
/// Immutable: every operation returns a new value.
#[derive(Debug, Clone)]
pub struct SlotVector {
    slots: Vec<f64>,
    logical_len: usize,
    depth_used: u32,
    key_id: KeyId,
    history: Arc<OpNode>,
}

impl SlotVector {
    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn logical_len(&self) -> usize {
        self.logical_len
    }

    pub fn depth_used(&self) -> u32 {
        self.depth_used
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    /// Operations in this value's history, each counted once.
    pub fn op_counts(&self) -> OpCounts {
        provenance::count(&self.history)
    }

    pub fn rotations_used(&self) -> usize {
        self.op_counts().rotations
    }

    /// Ciphertext-ciphertext plus ciphertext-plaintext multiplications.
    pub fn mults_used(&self) -> usize {
        self.op_counts().total_mults()
    }

    /// Same ciphertext, with the number of slots returned by decryption changed.
    pub fn with_logical_len(&self, logical_len: usize) -> Self {
        Self {
            logical_len: logical_len.min(self.slots.len()),
            ..self.clone()
        }
    }
}

/// Key material and evaluation parameters.
///
/// Holds the roles of both the public and the secret key: anything that can
/// decrypt or unmask a serialization must hold the context.
#[derive(Clone)]
pub struct EncryptionContext {
    slot_capacity: usize,
    depth_budget: u32,
    key_id: KeyId,
    masking_seed: [u8; 32],
    noise_stddev: f64,
    masking: bool,
}

impl fmt::Debug for EncryptionContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncryptionContext")
            .field("slot_capacity", &self.slot_capacity)
            .field("depth_budget", &self.depth_budget)
            .field("key_id", &self.key_id)
            .field("noise_stddev", &self.noise_stddev)
            .field("masking", &self.masking)
            .finish_non_exhaustive()
    }
}

fn tagged_hash(tag: &[u8], data: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag);
    h.update(data);
    h.finalize().into()
}

impl EncryptionContext {
    /// Builds a context whose key pair is derived from `secret_seed`.
    ///
    /// The key id and the masking seed are independent hashes of the same
    /// secret, so distinct key ids imply distinct masking seeds.
    pub fn new(slot_capacity: usize, depth_budget: u32, secret_seed: u64) -> Result<Self> {
        if slot_capacity == 0 || !slot_capacity.is_power_of_two() {
            return Err(Error::InvalidContext(format!(
                "slot capacity {slot_capacity} is not a power of two"
            )));
        }
        if slot_capacity > u32::MAX as usize {
            return Err(Error::InvalidContext("slot capacity exceeds 2^32".into()));
        }
        if depth_budget == 0 {
            return Err(Error::InvalidContext("depth budget must be at least 1".into()));
        }
        let secret = tagged_hash(b"polyfhe/secret-key", &secret_seed.to_le_bytes());
        let id_digest = tagged_hash(b"polyfhe/key-id", &secret);
        let mut key_id = [0u8; 16];
        key_id.copy_from_slice(&id_digest[..16]);
        Ok(Self {
            slot_capacity,
            depth_budget,
            key_id: KeyId(key_id),
            masking_seed: tagged_hash(b"polyfhe/masking-seed", &secret),
            noise_stddev: 0.0,
            masking: true,
        })
    }

    /// Adds i.i.d. Gaussian noise with this standard deviation to every slot
    /// after each ciphertext-ciphertext multiplication.
    pub fn with_noise(mut self, stddev: f64) -> Result<Self> {
        if !(stddev >= 0.0 && stddev.is_finite()) {
            return Err(Error::InvalidContext(format!("noise stddev {stddev}")));
        }
        self.noise_stddev = stddev;
        Ok(self)
    }

    /// Debug mode: serializations carry the raw slot values.
    pub fn with_masking_disabled(mut self) -> Self {
        self.masking = false;
        self
    }

    pub fn slot_capacity(&self) -> usize {
        self.slot_capacity
    }

    pub fn depth_budget(&self) -> u32 {
        self.depth_budget
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn noise_stddev(&self) -> f64 {
        self.noise_stddev
    }

    pub fn masking_enabled(&self) -> bool {
        self.masking
    }

    pub(crate) fn masking_seed(&self) -> &[u8; 32] {
        &self.masking_seed
    }

    fn check_key(&self, sv: &SlotVector) -> Result<()> {
        if sv.key_id != self.key_id {
            return Err(Error::KeyMismatch {
                expected: self.key_id.to_hex(),
                found: sv.key_id.to_hex(),
            });
        }
        Ok(())
    }

    fn check_pair(&self, a: &SlotVector, b: &SlotVector) -> Result<()> {
        self.check_key(a)?;
        self.check_key(b)?;
        if a.capacity() != b.capacity() {
            return Err(Error::CapacityMismatch {
                left: a.capacity(),
                right: b.capacity(),
            });
        }
        Ok(())
    }

    fn check_depth(&self, required: u32) -> Result<()> {
        if required > self.depth_budget {
            return Err(Error::DepthExceeded {
                required,
                budget: self.depth_budget,
            });
        }
        Ok(())
    }

    fn broadcast<'a>(&self, scalars: &'a PlainVector) -> Result<Box<dyn Fn(usize) -> f64 + 'a>> {
        let v = scalars.values();
        if v.len() == 1 {
            let s = v[0];
            Ok(Box::new(move |_| s))
        } else if v.len() == self.slot_capacity {
            Ok(Box::new(move |i| v[i]))
        } else {
            Err(Error::BroadcastMismatch {
                len: v.len(),
                capacity: self.slot_capacity,
            })
        }
    }

    pub fn encrypt(&self, plain: &PlainVector) -> Result<SlotVector> {
        self.encrypt_values(plain.values())
    }

    /// Encrypts a raw slice; same contract as [`encrypt`](Self::encrypt).
    pub fn encrypt_values(&self, values: &[f64]) -> Result<SlotVector> {
        if values.is_empty() {
            return Err(Error::EmptyPlaintext);
        }
        if values.len() > self.slot_capacity {
            return Err(Error::CapacityExceeded {
                len: values.len(),
                capacity: self.slot_capacity,
            });
        }
        let mut slots = vec![0.0; self.slot_capacity];
        slots[..values.len()].copy_from_slice(values);
        Ok(SlotVector {
            slots,
            logical_len: values.len(),
            depth_used: 0,
            key_id: self.key_id,
            history: OpNode::fresh(),
        })
    }

    pub fn decrypt(&self, sv: &SlotVector) -> Result<PlainVector> {
        self.check_key(sv)?;
        PlainVector::new(sv.slots[..sv.logical_len.max(1)].to_vec())
    }

    /// Decrypts every slot, including those beyond the logical length.
    pub fn decrypt_all(&self, sv: &SlotVector) -> Result<Vec<f64>> {
        self.check_key(sv)?;
        Ok(sv.slots.clone())
    }

    fn binary(
        &self,
        a: &SlotVector,
        b: &SlotVector,
        kind: OpKind,
        depth_used: u32,
        f: impl Fn(f64, f64) -> f64,
    ) -> SlotVector {
        let slots = a.slots.iter().zip(&b.slots).map(|(&x, &y)| f(x, y)).collect();
        SlotVector {
            slots,
            logical_len: a.logical_len.max(b.logical_len),
            depth_used,
            key_id: a.key_id,
            history: OpNode::derive(kind, vec![a.history.clone(), b.history.clone()]),
        }
    }

    pub fn add(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        self.check_pair(a, b)?;
        Ok(self.binary(a, b, OpKind::Add, a.depth_used.max(b.depth_used), |x, y| x + y))
    }

    pub fn sub(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        self.check_pair(a, b)?;
        Ok(self.binary(a, b, OpKind::Sub, a.depth_used.max(b.depth_used), |x, y| x - y))
    }

    pub fn mult(&self, a: &SlotVector, b: &SlotVector) -> Result<SlotVector> {
        self.check_pair(a, b)?;
        let depth = a.depth_used.max(b.depth_used) + 1;
        self.check_depth(depth)?;
        let mut out = self.binary(a, b, OpKind::Mult, depth, |x, y| x * y);
        if self.noise_stddev > 0.0 {
            self.add_noise(&mut out.slots, a, b);
        }
        Ok(out)
    }

    // Seeded from the key and the operands so exact reruns reproduce the noise.
    fn add_noise(&self, slots: &mut [f64], a: &SlotVector, b: &SlotVector) {
        let mut h = Sha256::new();
        h.update(b"polyfhe/noise");
        h.update(self.masking_seed);
        for x in a.slots.iter().chain(&b.slots) {
            h.update(x.to_bits().to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let normal = Normal::new(0.0, self.noise_stddev).expect("validated stddev");
        for s in slots {
            *s += normal.sample(&mut rng);
        }
    }

    /// Slot-wise product with a plaintext; consumes one level.
    pub fn mult_plain(&self, a: &SlotVector, scalars: &PlainVector) -> Result<SlotVector> {
        self.check_key(a)?;
        let depth = a.depth_used + 1;
        self.check_depth(depth)?;
        let s = self.broadcast(scalars)?;
        Ok(SlotVector {
            slots: a.slots.iter().enumerate().map(|(i, &x)| x * s(i)).collect(),
            logical_len: a.logical_len,
            depth_used: depth,
            key_id: a.key_id,
            history: OpNode::derive(OpKind::MultPlain, vec![a.history.clone()]),
        })
    }

    /// Slot-wise sum with a plaintext; free in depth.
    pub fn add_plain(&self, a: &SlotVector, scalars: &PlainVector) -> Result<SlotVector> {
        self.check_key(a)?;
        let s = self.broadcast(scalars)?;
        Ok(SlotVector {
            slots: a.slots.iter().enumerate().map(|(i, &x)| x + s(i)).collect(),
            logical_len: a.logical_len,
            depth_used: a.depth_used,
            key_id: a.key_id,
            history: OpNode::derive(OpKind::AddPlain, vec![a.history.clone()]),
        })
    }

    /// Cyclic left rotation by `k` over the full capacity.
    pub fn rotate_left(&self, a: &SlotVector, k: usize) -> Result<SlotVector> {
        self.check_key(a)?;
        let mut slots = a.slots.clone();
        slots.rotate_left(k % a.capacity());
        Ok(SlotVector {
            slots,
            logical_len: a.logical_len,
            depth_used: a.depth_used,
            key_id: a.key_id,
            history: OpNode::derive(OpKind::Rotate, vec![a.history.clone()]),
        })
    }

    /// Cyclic right rotation, expressed as a left rotation by `capacity - k`.
    pub fn rotate_right(&self, a: &SlotVector, k: usize) -> Result<SlotVector> {
        let cap = a.capacity();
        self.rotate_left(a, cap - k % cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ctx(cap: usize) -> EncryptionContext {
        EncryptionContext::new(cap, DEFAULT_DEPTH_BUDGET, 1).unwrap()
    }

    fn pv(v: &[f64]) -> PlainVector {
        PlainVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn encrypt_pads_with_zeros() {
        let c = ctx(4);
        let sv = c.encrypt(&pv(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(c.decrypt_all(&sv).unwrap(), vec![1.0, 2.0, 3.0, 0.0]);
        assert_eq!(sv.depth_used(), 0);
        assert_eq!(sv.op_counts(), OpCounts::default());
        assert_eq!(sv.key_id(), c.key_id());
    }

    #[test]
    fn empty_and_oversized_plaintexts_rejected() {
        assert!(matches!(PlainVector::new(vec![]), Err(Error::EmptyPlaintext)));
        let c = ctx(2048);
        let err = c.encrypt(&pv(&[0.5; 2049])).unwrap_err();
        assert!(matches!(err, Error::CapacityExceeded { len: 2049, capacity: 2048 }));
    }

    #[test]
    fn context_rejects_bad_shapes() {
        assert!(EncryptionContext::new(6, 4, 0).is_err());
        assert!(EncryptionContext::new(8, 0, 0).is_err());
        assert!(EncryptionContext::new(8, 1, 0).unwrap().with_noise(-1.0).is_err());
    }

    #[test]
    fn decrypt_round_trip_and_foreign_key() {
        let c = ctx(4);
        let other = EncryptionContext::new(4, DEFAULT_DEPTH_BUDGET, 2).unwrap();
        assert_ne!(c.key_id(), other.key_id());
        assert_ne!(c.masking_seed(), other.masking_seed());
        let sv = c.encrypt(&pv(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(c.decrypt(&sv).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert!(matches!(other.decrypt(&sv), Err(Error::KeyMismatch { .. })));
    }

    #[test]
    fn add_is_homomorphic() {
        let c = ctx(4);
        let a = c.encrypt(&pv(&[1.0, 2.0])).unwrap();
        let b = c.encrypt(&pv(&[3.0, 4.0])).unwrap();
        assert_eq!(c.decrypt(&c.add(&a, &b).unwrap()).unwrap().values(), &[4.0, 6.0]);
        let z = c.encrypt(&pv(&[0.0, 0.0])).unwrap();
        assert_eq!(c.decrypt(&c.add(&a, &z).unwrap()).unwrap().values(), &[1.0, 2.0]);
    }

    #[test]
    fn add_depth_is_max_of_operands() {
        let c = ctx(4);
        let x = c.encrypt(&pv(&[1.0])).unwrap();
        let mut d2 = x.clone();
        for _ in 0..2 {
            d2 = c.mult(&d2, &x).unwrap();
        }
        let mut d3 = x.clone();
        for _ in 0..3 {
            d3 = c.mult(&d3, &x).unwrap();
        }
        assert_eq!((d2.depth_used(), d3.depth_used()), (2, 3));
        assert_eq!(c.add(&d2, &d3).unwrap().depth_used(), 3);
        assert_eq!(c.add(&d3, &d2).unwrap().depth_used(), 3);
    }

    #[test]
    fn mult_values_and_depth_budget() {
        let c = EncryptionContext::new(4, 3, 9).unwrap();
        let a = c.encrypt(&pv(&[2.0, 3.0])).unwrap();
        let b = c.encrypt(&pv(&[4.0, 5.0])).unwrap();
        assert_eq!(c.decrypt(&c.mult(&a, &b).unwrap()).unwrap().values(), &[8.0, 15.0]);

        let mut acc = a.clone();
        for level in 1..=3 {
            acc = c.mult(&acc, &a).unwrap();
            assert_eq!(acc.depth_used(), level);
        }
        assert!(matches!(
            c.mult(&acc, &a),
            Err(Error::DepthExceeded { required: 4, budget: 3 })
        ));
    }

    #[test]
    fn binary_ops_reject_foreign_keys() {
        let c = ctx(4);
        let other = EncryptionContext::new(4, DEFAULT_DEPTH_BUDGET, 77).unwrap();
        let a = c.encrypt(&pv(&[1.0])).unwrap();
        let b = other.encrypt(&pv(&[1.0])).unwrap();
        assert!(matches!(c.add(&a, &b), Err(Error::KeyMismatch { .. })));
        assert!(matches!(c.mult(&a, &b), Err(Error::KeyMismatch { .. })));
        assert!(matches!(c.sub(&b, &a), Err(Error::KeyMismatch { .. })));
    }

    #[test]
    fn mult_plain_broadcast_and_depth() {
        let c = ctx(4);
        let a = c.encrypt(&pv(&[1.0, 2.0, 3.0])).unwrap();
        let twice = c.mult_plain(&a, &PlainVector::scalar(2.0)).unwrap();
        assert_eq!(c.decrypt(&twice).unwrap().values(), &[2.0, 4.0, 6.0]);
        let same = c.mult_plain(&a, &PlainVector::scalar(1.0)).unwrap();
        assert_eq!(c.decrypt(&same).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert_eq!(same.depth_used(), 1);

        let full = c.encrypt(&pv(&[5.0, 6.0, 7.0, 8.0])).unwrap();
        let mask = pv(&[1.0, 0.0, 1.0, 0.0]);
        let masked = c.mult_plain(&full, &mask).unwrap();
        let expected: Vec<f64> = [5.0, 6.0, 7.0, 8.0]
            .iter()
            .zip(mask.values())
            .map(|(x, m)| x * m)
            .collect();
        assert_eq!(c.decrypt(&masked).unwrap().values(), expected.as_slice());

        assert!(matches!(
            c.mult_plain(&a, &pv(&[1.0, 2.0])),
            Err(Error::BroadcastMismatch { .. })
        ));
        let shallow = EncryptionContext::new(4, 1, 1).unwrap();
        let one = shallow.mult_plain(&a, &PlainVector::scalar(1.0)).unwrap();
        assert!(matches!(
            shallow.mult_plain(&one, &PlainVector::scalar(1.0)),
            Err(Error::DepthExceeded { .. })
        ));
    }

    #[test]
    fn rotation_basics() {
        let c = ctx(4);
        let a = c.encrypt(&pv(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        let r = c.rotate_left(&a, 1).unwrap();
        assert_eq!(c.decrypt(&r).unwrap().values(), &[2.0, 3.0, 4.0, 1.0]);
        assert_eq!(r.rotations_used(), 1);
        assert_eq!(r.depth_used(), 0);
        let full = c.rotate_left(&a, 4).unwrap();
        assert_eq!(c.decrypt(&full).unwrap().values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(full.rotations_used(), 1);
        let back = c.rotate_right(&r, 1).unwrap();
        assert_eq!(c.decrypt(&back).unwrap().values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rotation_group_law() {
        let c = ctx(64);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = c.encrypt_values(&values).unwrap();
        for _ in 0..50 {
            let a = rng.random_range(0..200usize);
            let b = rng.random_range(0..200usize);
            let two = c.rotate_left(&c.rotate_left(&x, a).unwrap(), b).unwrap();
            let one = c.rotate_left(&x, a + b).unwrap();
            assert_eq!(c.decrypt_all(&two).unwrap(), c.decrypt_all(&one).unwrap());
        }
    }

    #[test]
    fn homomorphism_on_random_pairs() {
        let c = ctx(32);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x: Vec<f64> = (0..32).map(|_| rng.random_range(-10.0..10.0)).collect();
            let y: Vec<f64> = (0..32).map(|_| rng.random_range(-10.0..10.0)).collect();
            let ex = c.encrypt_values(&x).unwrap();
            let ey = c.encrypt_values(&y).unwrap();
            let sum = c.decrypt_all(&c.add(&ex, &ey).unwrap()).unwrap();
            let prod = c.decrypt_all(&c.mult(&ex, &ey).unwrap()).unwrap();
            for i in 0..32 {
                assert!((sum[i] - (x[i] + y[i])).abs() <= 1e-12);
                assert!((prod[i] - x[i] * y[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn depth_monotone_along_mult_chain() {
        let c = EncryptionContext::new(8, 10, 3).unwrap();
        let x = c.encrypt(&pv(&[1.0, 1.0])).unwrap();
        let mut acc = x.clone();
        let mut last = 0;
        for len in 1..=10 {
            acc = c.mult(&acc, &x).unwrap();
            acc = c.rotate_left(&acc, 1).unwrap();
            acc = c.add(&acc, &x).unwrap();
            assert!(acc.depth_used() >= last);
            assert_eq!(acc.depth_used(), len);
            last = acc.depth_used();
        }
    }

    #[test]
    fn noisy_mult_perturbs_but_stays_close() {
        let c = ctx(16).with_noise(1e-6).unwrap();
        let x = c.encrypt(&pv(&[1.0; 16])).unwrap();
        let y = c.mult(&x, &x).unwrap();
        let out = c.decrypt(&y).unwrap();
        assert!(out.values().iter().any(|&v| v != 1.0));
        assert!(out.values().iter().all(|&v| (v - 1.0).abs() < 1e-4));
        // deterministic given key and operands
        assert_eq!(c.decrypt(&c.mult(&x, &x).unwrap()).unwrap(), out);
    }
}
