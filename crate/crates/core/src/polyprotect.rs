//! PolyProtect: windows of `m` embedding elements mapped through a
//! user-specific polynomial `p = Σ c_i · v_i^{e_i}`.
//!
//! Consecutive windows advance by `m - overlap`. The tail is zero-padded so
//! the last window is full; zero contributes nothing under positive
//! exponents, so padding never perturbs the output.
//!
//! The encrypted form evaluates each window under the slot contract. A
//! single slot operation cannot raise different slots to different powers,
//! so every needed power of the whole window is computed once (depth
//! `⌈log2 e⌉` for `x^e`) and each term `c_i · x_i^{e_i}` is picked out by a
//! plaintext vector carrying `c_i` at slot `i` only. The terms are summed,
//! the window is duplicated one power-of-two block to the right, and fold
//! and add then leaves `p_j` in each of the first `m` slots.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::slot_backend::{EncryptionContext, PlainVector, SlotVector};
use crate::summation::{ceil_log2, fold_add_all};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsFile {
    m: usize,
    overlap: usize,
    c_range: i64,
    coeffs: Vec<i64>,
    exps: Vec<u32>,
    #[serde(default)]
    params_id: Option<String>,
    #[serde(default)]
    seed: u64,
}

/// User-specific PolyProtect parameters.
///
/// JSON form: `{m, overlap, c_range, coeffs[], exps[], params_id, seed}`.
/// A file whose `params_id` does not match its contents is rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ParamsFile")]
pub struct PolyProtectParams {
    m: usize,
    overlap: usize,
    c_range: i64,
    coeffs: Vec<i64>,
    exps: Vec<u32>,
    params_id: String,
    seed: u64,
}

impl TryFrom<ParamsFile> for PolyProtectParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<Self> {
        let p = Self::new(f.m, f.overlap, f.c_range, f.coeffs, f.exps, f.seed)?;
        match f.params_id {
            Some(id) if id != p.params_id => Err(Error::InvalidParams(format!(
                "params_id {id} does not match contents ({})",
                p.params_id
            ))),
            _ => Ok(p),
        }
    }
}

fn check_shape(m: usize, overlap: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidParams(format!("m = {m}, need at least 2")));
    }
    if overlap > m - 1 {
        return Err(Error::InvalidParams(format!(
            "overlap {overlap} outside [0, {}]",
            m - 1
        )));
    }
    Ok(())
}

fn check_c_range(m: usize, c_range: i64) -> Result<()> {
    // [-C, C] holds 2C nonzero integers.
    if c_range < 1 || (2 * c_range as u64) < m as u64 {
        return Err(Error::InfeasibleParams { m, c_range });
    }
    Ok(())
}

impl PolyProtectParams {
    pub fn new(
        m: usize,
        overlap: usize,
        c_range: i64,
        coeffs: Vec<i64>,
        exps: Vec<u32>,
        seed: u64,
    ) -> Result<Self> {
        check_shape(m, overlap)?;
        check_c_range(m, c_range)?;
        if coeffs.len() != m || exps.len() != m {
            return Err(Error::InvalidParams(format!(
                "expected {m} coefficients and exponents, got {} and {}",
                coeffs.len(),
                exps.len()
            )));
        }
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0 || c.abs() > c_range {
                return Err(Error::InvalidParams(format!(
                    "coefficient {c} is zero or outside [-{c_range}, {c_range}]"
                )));
            }
            if coeffs[..i].contains(&c) {
                return Err(Error::InvalidParams(format!("coefficient {c} repeated")));
            }
        }
        for (i, &e) in exps.iter().enumerate() {
            if e == 0 || e > 64 {
                return Err(Error::InvalidParams(format!("exponent {e} outside [1, 64]")));
            }
            if exps[..i].contains(&e) {
                return Err(Error::InvalidParams(format!("exponent {e} repeated")));
            }
        }
        let params_id = Self::digest(m, overlap, c_range, &coeffs, &exps, seed);
        Ok(Self {
            m,
            overlap,
            c_range,
            coeffs,
            exps,
            params_id,
            seed,
        })
    }

    fn digest(m: usize, overlap: usize, c_range: i64, coeffs: &[i64], exps: &[u32], seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(b"polyfhe/params");
        h.update((m as u64).to_le_bytes());
        h.update((overlap as u64).to_le_bytes());
        h.update(c_range.to_le_bytes());
        for c in coeffs {
            h.update(c.to_le_bytes());
        }
        for e in exps {
            h.update(e.to_le_bytes());
        }
        h.update(seed.to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn c_range(&self) -> i64 {
        self.c_range
    }

    pub fn coeffs(&self) -> &[i64] {
        &self.coeffs
    }

    pub fn exps(&self) -> &[u32] {
        &self.exps
    }

    pub fn params_id(&self) -> &str {
        &self.params_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stride(&self) -> usize {
        self.m - self.overlap
    }

    /// Number of outputs for an input of length `n`:
    /// `⌊(n' - m) / stride⌋ + 1` with `n'` the padded length.
    pub fn output_len(&self, n: usize) -> Result<usize> {
        if n < self.m {
            return Err(Error::InputTooShort { len: n, m: self.m });
        }
        Ok((n - self.m).div_ceil(self.stride()) + 1)
    }

    /// Input length after tail padding.
    pub fn padded_len(&self, n: usize) -> Result<usize> {
        Ok(self.m + (self.output_len(n)? - 1) * self.stride())
    }

    /// Depth that [`protect_encrypted`] adds on top of its input.
    pub fn encrypted_depth_cost(&self) -> u32 {
        let max_exp = *self.exps.iter().max().expect("m >= 2") as usize;
        ceil_log2(max_exp) + 1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Samples parameters: coefficients uniformly without replacement from the
/// nonzero integers of `[-c_range, c_range]`, exponents a random permutation
/// of `1..=m`. Deterministic in `seed`.
pub fn gen_params(m: usize, overlap: usize, c_range: i64, seed: u64) -> Result<PolyProtectParams> {
    check_shape(m, overlap)?;
    check_c_range(m, c_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = 2 * c_range as usize;
    let coeffs = rand::seq::index::sample(&mut rng, pool, m)
        .into_iter()
        .map(|i| {
            let i = i as i64;
            if i < c_range {
                i - c_range
            } else {
                i - c_range + 1
            }
        })
        .collect();
    let mut exps: Vec<u32> = (1..=m as u32).collect();
    exps.shuffle(&mut rng);
    PolyProtectParams::new(m, overlap, c_range, coeffs, exps, seed)
}

#[derive(Debug, Clone)]
pub enum TemplateValues {
    Plain(Vec<f64>),
    /// One ciphertext per output, the value replicated in its first `m` slots.
    Encrypted(Vec<SlotVector>),
}

/// A PolyProtected template `P = [p_1 .. p_k]`.
#[derive(Debug, Clone)]
pub struct ProtectedTemplate {
    pub values: TemplateValues,
    pub params_id: String,
}

impl ProtectedTemplate {
    pub fn k(&self) -> usize {
        match &self.values {
            TemplateValues::Plain(v) => v.len(),
            TemplateValues::Encrypted(v) => v.len(),
        }
    }

    pub fn plain(&self) -> Option<&[f64]> {
        match &self.values {
            TemplateValues::Plain(v) => Some(v),
            TemplateValues::Encrypted(_) => None,
        }
    }

    pub fn ciphertexts(&self) -> Option<&[SlotVector]> {
        match &self.values {
            TemplateValues::Encrypted(v) => Some(v),
            TemplateValues::Plain(_) => None,
        }
    }

    /// Decrypts slot 0 of every window ciphertext.
    pub fn decrypt(&self, ctx: &EncryptionContext) -> Result<Vec<f64>> {
        match &self.values {
            TemplateValues::Plain(v) => Ok(v.clone()),
            TemplateValues::Encrypted(cts) => cts
                .iter()
                .map(|c| Ok(ctx.decrypt(c)?.values()[0]))
                .collect(),
        }
    }
}

/// Splits `v` into `m`-wide windows with the configured overlap.
pub fn chunk_embedding(v: &[f64], params: &PolyProtectParams) -> Result<Vec<PlainVector>> {
    let k = params.output_len(v.len())?;
    let mut padded = v.to_vec();
    padded.resize(params.padded_len(v.len())?, 0.0);
    (0..k)
        .map(|j| {
            let start = j * params.stride();
            PlainVector::new(padded[start..start + params.m].to_vec())
        })
        .collect()
}

fn eval_window(window: &[f64], params: &PolyProtectParams) -> f64 {
    window
        .iter()
        .zip(params.coeffs.iter().zip(&params.exps))
        .map(|(&v, (&c, &e))| c as f64 * v.powi(e as i32))
        .sum()
}

pub fn protect_plain(v: &[f64], params: &PolyProtectParams) -> Result<ProtectedTemplate> {
    let values = chunk_embedding(v, params)?
        .iter()
        .map(|w| eval_window(w.values(), params))
        .collect();
    Ok(ProtectedTemplate {
        values: TemplateValues::Plain(values),
        params_id: params.params_id.clone(),
    })
}

/// Chunks `v` and encrypts every window into its own ciphertext.
pub fn encrypt_windows(
    v: &[f64],
    params: &PolyProtectParams,
    ctx: &EncryptionContext,
) -> Result<Vec<SlotVector>> {
    chunk_embedding(v, params)?
        .iter()
        .map(|w| ctx.encrypt(w))
        .collect()
}

fn power(
    ctx: &EncryptionContext,
    x: &SlotVector,
    e: u32,
    memo: &mut HashMap<u32, SlotVector>,
) -> Result<SlotVector> {
    if e == 1 {
        return Ok(x.clone());
    }
    if let Some(p) = memo.get(&e) {
        return Ok(p.clone());
    }
    // x^e = x^h · x^(e-h) with h the largest power of two below e: depth ⌈log2 e⌉.
    let half = 1u32 << (ceil_log2(e as usize) - 1);
    let hi = power(ctx, x, half, memo)?;
    let lo = power(ctx, x, e - half, memo)?;
    let p = ctx.mult(&hi, &lo)?;
    memo.insert(e, p.clone());
    Ok(p)
}

fn protect_window(
    window: &SlotVector,
    params: &PolyProtectParams,
    ctx: &EncryptionContext,
) -> Result<SlotVector> {
    let cap = window.capacity();
    let block = params.m.next_power_of_two();
    if block > cap {
        return Err(Error::CapacityExceeded {
            len: block,
            capacity: cap,
        });
    }
    let mut memo = HashMap::new();
    let mut acc: Option<SlotVector> = None;
    for (i, (&c, &e)) in params.coeffs.iter().zip(&params.exps).enumerate() {
        let pow = power(ctx, window, e, &mut memo)?;
        let mut picker = vec![0.0; cap];
        picker[i] = c as f64;
        let term = ctx.mult_plain(&pow, &PlainVector::new(picker)?)?;
        acc = Some(match acc {
            None => term,
            Some(a) => ctx.add(&a, &term)?,
        });
    }
    let mut terms = acc.expect("m >= 2");
    if cap >= 2 * block {
        terms = ctx.add(&terms, &ctx.rotate_right(&terms, block)?)?;
    }
    Ok(fold_add_all(ctx, &terms, params.m)?.with_logical_len(params.m))
}

/// Encrypted PolyProtect over windows produced by [`encrypt_windows`].
///
/// Each window must hold its chunk in the first `m` slots and zeros
/// elsewhere. Adds [`PolyProtectParams::encrypted_depth_cost`] levels.
pub fn protect_encrypted(
    windows: &[SlotVector],
    params: &PolyProtectParams,
    ctx: &EncryptionContext,
) -> Result<ProtectedTemplate> {
    let cts = windows
        .par_iter()
        .map(|w| protect_window(w, params, ctx))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtectedTemplate {
        values: TemplateValues::Encrypted(cts),
        params_id: params.params_id.clone(),
    })
}

/// Gathers an encrypted template into one ciphertext with `p_j` at slot `j`
/// and zeros elsewhere. Costs one level and `k - 1` rotations.
pub fn pack_template(template: &ProtectedTemplate, ctx: &EncryptionContext) -> Result<SlotVector> {
    let cts = template
        .ciphertexts()
        .ok_or_else(|| Error::Malformed("packing needs an encrypted template".into()))?;
    let first = cts.first().ok_or(Error::EmptyPlaintext)?;
    let cap = first.capacity();
    if cts.len() > cap {
        return Err(Error::CapacityExceeded {
            len: cts.len(),
            capacity: cap,
        });
    }
    let mut unit = vec![0.0; cap];
    unit[0] = 1.0;
    let unit = PlainVector::new(unit)?;
    let mut acc = ctx.mult_plain(first, &unit)?;
    for (j, ct) in cts.iter().enumerate().skip(1) {
        let isolated = ctx.mult_plain(ct, &unit)?;
        acc = ctx.add(&acc, &ctx.rotate_right(&isolated, j)?)?;
    }
    Ok(acc.with_logical_len(cts.len()))
}

/// Pearson correlation of two equally long templates.
pub fn template_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(sab / (saa * sbb).sqrt())
}
