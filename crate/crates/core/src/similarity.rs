//! Cosine similarity between ciphertexts.
//!
//! The encrypted path is: inner product and both squared norms by
//! multiply-then-fold, product of the squared norms, scaling by public
//! constants into the approximation domain, approximate inverse square root,
//! one more product and a closed-form correction. Scaling needs a public
//! bound on the inputs since nothing data-dependent can be computed under
//! encryption; see [`NormalizationPlan`].

use serde::{Deserialize, Serialize};

use crate::approx::{eval_poly_encrypted, PolyApprox};
use crate::error::{Error, Result};
use crate::slot_backend::{EncryptionContext, PlainVector, SlotVector};
use crate::summation::fold_add_all;

/// Absolute slack added to `2 · max_rel_err` when comparing encrypted and
/// plaintext scores.
pub const NUMERIC_SLACK: f64 = 1e-6;

/// Public scale constants for one comparison.
///
/// With `B` a bound on element magnitude of vectors of length `n` (or, more
/// tightly, `n·B²` a bound on their squared norm), `|a·b| ≤ n·B²` and
/// `‖a‖²‖b‖² ≤ (n·B²)²`, so the scaled numerator lies in `[-1, 1]` and the
/// scaled denominator in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationPlan {
    pub c_bound: f64,
    pub d_bound: f64,
    /// `c_bound / √d_bound`, multiplied in after the inverse square root.
    pub correction: f64,
}

impl NormalizationPlan {
    /// Plan from a bound on the squared norm of both inputs.
    pub fn from_squared_norm_bound(r2: f64) -> Result<Self> {
        if !(r2 > 0.0 && r2.is_finite()) {
            return Err(Error::InvalidParams(format!("squared norm bound {r2}")));
        }
        let c_bound = r2;
        let d_bound = r2 * r2;
        Ok(Self {
            c_bound,
            d_bound,
            correction: c_bound / d_bound.sqrt(),
        })
    }

    /// `(a·b / c_bound, ‖a‖²‖b‖² / d_bound)` computed in plaintext.
    pub fn scaled(&self, a: &[f64], b: &[f64]) -> (f64, f64) {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum();
        let nb: f64 = b.iter().map(|x| x * x).sum();
        (dot / self.c_bound, na * nb / self.d_bound)
    }
}

/// Plan for vectors of length `n` whose elements are bounded by `templates_bound`.
pub fn make_normalization_plan(templates_bound: f64, n: usize) -> Result<NormalizationPlan> {
    if n == 0 || !(templates_bound > 0.0) {
        return Err(Error::InvalidParams(format!(
            "element bound {templates_bound} over {n} elements"
        )));
    }
    NormalizationPlan::from_squared_norm_bound(n as f64 * templates_bound * templates_bound)
}

pub fn cosine_plain(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Plaintext pre-check that the scaled denominator falls inside the
/// approximation domain. The encrypted path cannot branch on this itself.
pub fn check_denominator_domain(
    a: &[f64],
    b: &[f64],
    plan: &NormalizationPlan,
    approx: &PolyApprox,
) -> Result<()> {
    let (_, den) = plan.scaled(a, b);
    if !approx.domain.contains(den) {
        return Err(Error::DomainViolation {
            value: den,
            lo: approx.domain.lo,
            hi: approx.domain.hi,
        });
    }
    Ok(())
}

/// Tolerance between decrypted and plaintext cosine for an approximant.
pub fn tolerance(approx: &PolyApprox) -> f64 {
    2.0 * approx.fit_report.max_rel_err + NUMERIC_SLACK
}

/// Encrypted cosine similarity of two ciphertexts holding `n` values each
/// (zeros beyond). The score is in slot 0 of the result.
///
/// Adds `approx.degree + 5` levels to the deeper input.
pub fn cosine_encrypted(
    ctx: &EncryptionContext,
    c1: &SlotVector,
    c2: &SlotVector,
    n: usize,
    plan: &NormalizationPlan,
    approx: &PolyApprox,
) -> Result<SlotVector> {
    let c = fold_add_all(ctx, &ctx.mult(c1, c2)?, n)?;
    let d1 = fold_add_all(ctx, &ctx.mult(c1, c1)?, n)?;
    let d2 = fold_add_all(ctx, &ctx.mult(c2, c2)?, n)?;
    let d = ctx.mult(&d1, &d2)?;
    let c = ctx.mult_plain(&c, &PlainVector::scalar(1.0 / plan.c_bound))?;
    let d = ctx.mult_plain(&d, &PlainVector::scalar(1.0 / plan.d_bound))?;
    let d = eval_poly_encrypted(ctx, &d, approx)?;
    let c = ctx.mult(&c, &d)?;
    Ok(ctx
        .mult_plain(&c, &PlainVector::scalar(plan.correction))?
        .with_logical_len(1))
}
