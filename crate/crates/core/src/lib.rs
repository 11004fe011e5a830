//! Face-template protection with PolyProtect over a simulated SIMD-slot
//! homomorphic encryption backend.
//!
//! Modules, bottom-up:
//!
//! - [`slot_backend`]: simulated ciphertexts with depth budgets, rotations and
//!   keyed masked serialization.
//! - [`summation`]: naive, DFT and fold-and-add slot summation.
//! - [`polyprotect`]: the PolyProtect mapping in plaintext and encrypted form.
//! - [`approx`]: polynomial approximation of `1/sqrt(x)`.
//! - [`similarity`]: encrypted cosine similarity.
//! - [`pipeline`]: compress, encrypt, protect, and 1:N search.
//! - [`leakage`]: soft-biometric leakage, Privacy Gain and Suppression Rate.

pub mod approx;
pub mod error;
pub mod leakage;
pub mod slot_backend;
pub mod pipeline;
pub mod polyprotect;
pub mod similarity;
pub mod summation;

pub use error::{Error, Result};
pub use slot_backend::{EncryptionContext, KeyId, PlainVector, SlotVector};
