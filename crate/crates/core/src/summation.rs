//! Intra-ciphertext summation kernels and their benchmark harness.
//!
//! All three kernels expect the data in the first `n` slots and zeros in the
//! rest, because rotations wrap over the full capacity.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slot_backend::{EncryptionContext, PlainVector, SlotVector};

/// `⌈log2 n⌉` for `n ≥ 1`.
pub fn ceil_log2(n: usize) -> u32 {
    assert!(n >= 1, "ceil_log2 of 0");
    n.next_power_of_two().trailing_zeros()
}

fn check_len(c: &SlotVector, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParams("summation length must be at least 1".into()));
    }
    if n > c.capacity() {
        return Err(Error::CapacityExceeded {
            len: n,
            capacity: c.capacity(),
        });
    }
    Ok(())
}

/// Rotate-by-one running sum, `n - 1` rotations.
///
/// Slot `j` ends up holding `x[j] + … + x[j+n-1]` (indices mod capacity), so
/// slot 0 holds the sum. When `n` equals the capacity every slot holds it.
pub fn naive_add_all(ctx: &EncryptionContext, c: &SlotVector, n: usize) -> Result<SlotVector> {
    check_len(c, n)?;
    let mut acc = c.clone();
    let mut rotated = c.clone();
    for _ in 1..n {
        rotated = ctx.rotate_left(&rotated, 1)?;
        acc = ctx.add(&acc, &rotated)?;
    }
    Ok(acc)
}

/// Fold and add: rotations by `2^i` for `i = ⌈log2 n⌉-1` down to 0.
///
/// The loop includes `i = 0`; stopping at `i > 0` leaves the sum incomplete
/// for `n > 2`. Slots `n..2^⌈log2 n⌉` must be zero. Only slot 0 is
/// guaranteed to hold the sum.
pub fn fold_add_all(ctx: &EncryptionContext, c: &SlotVector, n: usize) -> Result<SlotVector> {
    check_len(c, n)?;
    let mut acc = c.clone();
    for i in (0..ceil_log2(n)).rev() {
        let rotated = ctx.rotate_left(&acc, 1 << i)?;
        acc = ctx.add(&acc, &rotated)?;
    }
    Ok(acc)
}

/// DC component of the DFT, i.e. the all-ones first row of the DFT matrix,
/// evaluated with the diagonal method: `Σ_i diag_i ⊙ rot(c, i)`.
///
/// Only row 0 is kept, so every diagonal is the unit vector at slot 0.
/// Costs `n - 1` rotations, `n` plaintext multiplications and one level.
pub fn dft_sum(ctx: &EncryptionContext, c: &SlotVector, n: usize) -> Result<SlotVector> {
    check_len(c, n)?;
    let mut diag = vec![0.0; c.capacity()];
    diag[0] = 1.0;
    let diag = PlainVector::new(diag)?;
    let mut acc = ctx.mult_plain(c, &diag)?;
    for i in 1..n {
        let term = ctx.mult_plain(&ctx.rotate_left(c, i)?, &diag)?;
        acc = ctx.add(&acc, &term)?;
    }
    Ok(acc)
}

/// Zero-pads plaintext data to the next power of two, as fold expects.
pub fn pad_to_pow2(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    out.resize(values.len().max(1).next_power_of_two(), 0.0);
    out
}

/// Zeroes every slot from `n` on. Costs one level.
pub fn mask_prefix(ctx: &EncryptionContext, c: &SlotVector, n: usize) -> Result<SlotVector> {
    let mask: Vec<f64> = (0..c.capacity()).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
    ctx.mult_plain(c, &PlainVector::new(mask)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SumMethod {
    Naive,
    Dft,
    Fold,
}

impl SumMethod {
    pub const ALL: [SumMethod; 3] = [SumMethod::Naive, SumMethod::Dft, SumMethod::Fold];

    pub fn run(self, ctx: &EncryptionContext, c: &SlotVector, n: usize) -> Result<SlotVector> {
        match self {
            SumMethod::Naive => naive_add_all(ctx, c, n),
            SumMethod::Dft => dft_sum(ctx, c, n),
            SumMethod::Fold => fold_add_all(ctx, c, n),
        }
    }
}

impl fmt::Display for SumMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SumMethod::Naive => "naive",
            SumMethod::Dft => "dft",
            SumMethod::Fold => "fold",
        })
    }
}

impl FromStr for SumMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(SumMethod::Naive),
            "dft" => Ok(SumMethod::Dft),
            "fold" => Ok(SumMethod::Fold),
            other => Err(Error::Malformed(format!("unknown summation method {other}"))),
        }
    }
}

/// One measurement of one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumBenchRow {
    pub n: usize,
    pub method: SumMethod,
    pub rotations: usize,
    pub mults: usize,
    pub wall_time: Duration,
}

/// Runs every kernel on seeded random data for each size.
///
/// `wall_time` is the fastest of `repeats` runs; counts come from the
/// ciphertext history.
pub fn bench_summation(
    sizes: &[usize],
    ctx: &EncryptionContext,
    repeats: usize,
    seed: u64,
) -> Result<Vec<SumBenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sizes.len() * 3);
    for &n in sizes {
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = ctx.encrypt_values(&data)?;
        for method in SumMethod::ALL {
            let mut best = Duration::MAX;
            let mut out = None;
            for _ in 0..repeats.max(1) {
                let start = Instant::now();
                let r = method.run(ctx, &c, n)?;
                best = best.min(start.elapsed());
                out = Some(r);
            }
            let counts = out.expect("at least one run").op_counts();
            rows.push(SumBenchRow {
                n,
                method,
                rotations: counts.rotations,
                mults: counts.total_mults(),
                wall_time: best,
            });
        }
    }
    Ok(rows)
}

pub const BENCH_CSV_HEADER: &str = "n,method,rotations,mults,wall_ns";

pub fn write_bench_csv<W: Write>(rows: &[SumBenchRow], mut out: W) -> Result<()> {
    writeln!(out, "{BENCH_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.n,
            r.method,
            r.rotations,
            r.mults,
            r.wall_time.as_nanos()
        )?;
    }
    Ok(())
}
