//! Polynomial approximation of `1/sqrt(x)` on a sub-unit interval.
//!
//! The fit minimizes relative error in the least-squares sense: on Chebyshev
//! nodes of the domain it solves `min Σ ((p(x) - 1/√x) · √x)²`, i.e. the
//! rows of the Vandermonde matrix are weighted by `√x` and the target is the
//! constant 1. The system is solved by SVD so that a rank-deficient fit is
//! reported instead of silently returned.
//!
//! No fixed-degree polynomial bounds the relative error as `x → 0`, so the
//! domain is a closed interval `[lo, hi]` with `lo > 0`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slot_backend::{EncryptionContext, PlainVector, SlotVector};

/// Default fitting domain.
pub const DEFAULT_DOMAIN: Domain = Domain { lo: 1e-3, hi: 1.0 };
/// Number of random points and seed used for the report attached at fit time.
pub const REPORT_SAMPLES: usize = 2000;
pub const REPORT_SEED: u64 = 2000;
/// Chebyshev nodes used by callers that do not pick their own count.
pub const DEFAULT_FIT_NODES: usize = 200;

const RANK_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "approximation domain [{lo}, {hi}] must satisfy 0 < lo <= hi <= 1"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// A fitted approximant; coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ApproxFile", try_from = "ApproxFile")]
pub struct PolyApprox {
    pub degree: usize,
    pub coeffs: Vec<f64>,
    pub domain: Domain,
    pub fit_report: FitReport,
}

/// Export layout: `{degree, domain: [lo, hi], coeffs, max_rel_err,
/// mean_rel_err, n_samples, seed}`.
#[derive(Serialize, Deserialize)]
struct ApproxFile {
    degree: usize,
    domain: [f64; 2],
    coeffs: Vec<f64>,
    max_rel_err: f64,
    mean_rel_err: f64,
    n_samples: usize,
    seed: u64,
}

impl From<PolyApprox> for ApproxFile {
    fn from(a: PolyApprox) -> Self {
        Self {
            degree: a.degree,
            domain: [a.domain.lo, a.domain.hi],
            coeffs: a.coeffs,
            max_rel_err: a.fit_report.max_rel_err,
            mean_rel_err: a.fit_report.mean_rel_err,
            n_samples: a.fit_report.n_samples,
            seed: a.fit_report.seed,
        }
    }
}

impl TryFrom<ApproxFile> for PolyApprox {
    type Error = Error;

    fn try_from(f: ApproxFile) -> Result<Self> {
        if f.coeffs.len() != f.degree + 1 {
            return Err(Error::Malformed(format!(
                "degree {} needs {} coefficients, found {}",
                f.degree,
                f.degree + 1,
                f.coeffs.len()
            )));
        }
        Ok(Self {
            degree: f.degree,
            coeffs: f.coeffs,
            domain: Domain::new(f.domain[0], f.domain[1])?,
            fit_report: FitReport {
                max_rel_err: f.max_rel_err,
                mean_rel_err: f.mean_rel_err,
                n_samples: f.n_samples,
                seed: f.seed,
            },
        })
    }
}

impl PolyApprox {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Chebyshev nodes of the first kind mapped onto `domain`.
pub fn chebyshev_nodes(domain: Domain, n: usize) -> Vec<f64> {
    let mid = 0.5 * (domain.lo + domain.hi);
    let half = 0.5 * (domain.hi - domain.lo);
    (0..n)
        .map(|k| {
            let t = ((2 * k + 1) as f64 * std::f64::consts::PI / (2 * n) as f64).cos();
            mid + half * t
        })
        .collect()
}

pub fn fit_inv_sqrt(degree: usize, domain: Domain, n_nodes: usize) -> Result<PolyApprox> {
    if n_nodes < degree + 1 {
        return Err(Error::InvalidParams(format!(
            "{n_nodes} nodes cannot determine a degree-{degree} polynomial"
        )));
    }
    let coeffs = if domain.lo == domain.hi {
        // A single point only pins the constant term.
        if degree > 0 {
            return Err(Error::IllConditioned(format!(
                "degree {degree} on the single point {}",
                domain.lo
            )));
        }
        vec![1.0 / domain.lo.sqrt()]
    } else {
        let nodes = chebyshev_nodes(domain, n_nodes);
        let a = DMatrix::from_fn(n_nodes, degree + 1, |r, c| {
            nodes[r].sqrt() * nodes[r].powi(c as i32)
        });
        let b = DVector::from_element(n_nodes, 1.0);
        let svd = a.svd(true, true);
        let s = &svd.singular_values;
        let ratio = s.min() / s.max();
        if !(ratio > RANK_TOLERANCE) {
            return Err(Error::IllConditioned(format!(
                "degree {degree} on [{}, {}]: singular value ratio {ratio:e}",
                domain.lo, domain.hi
            )));
        }
        let x = svd
            .solve(&b, 0.0)
            .map_err(|e| Error::IllConditioned(e.to_string()))?;
        x.iter().copied().collect()
    };
    let mut approx = PolyApprox {
        degree,
        coeffs,
        domain,
        fit_report: FitReport {
            max_rel_err: f64::NAN,
            mean_rel_err: f64::NAN,
            n_samples: 0,
            seed: REPORT_SEED,
        },
    };
    approx.fit_report = rel_error_report(&approx, REPORT_SAMPLES, REPORT_SEED)?;
    Ok(approx)
}

/// Horner evaluation.
pub fn eval_poly_plain(x: f64, approx: &PolyApprox) -> f64 {
    approx.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// `|p(x) - 1/√x| · √x`.
pub fn rel_error(x: f64, approx: &PolyApprox) -> f64 {
    (eval_poly_plain(x, approx) - 1.0 / x.sqrt()).abs() * x.sqrt()
}

/// Max and mean relative error over `n_samples` uniform points of the domain.
pub fn rel_error_report(approx: &PolyApprox, n_samples: usize, seed: u64) -> Result<FitReport> {
    if n_samples == 0 {
        return Err(Error::InvalidParams("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Domain { lo, hi } = approx.domain;
    let (mut max, mut sum) = (0.0f64, 0.0);
    for _ in 0..n_samples {
        let x = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let e = rel_error(x, approx);
        max = max.max(e);
        sum += e;
    }
    Ok(FitReport {
        max_rel_err: max,
        mean_rel_err: sum / n_samples as f64,
        n_samples,
        seed,
    })
}

/// Slot-wise Horner under the slot contract.
///
/// The leading step is a plaintext multiply, every later step a
/// ciphertext-ciphertext multiply by the input, constants are added for
/// free: `degree` levels in total. A constant polynomial costs nothing.
pub fn eval_poly_encrypted(
    ctx: &EncryptionContext,
    sv: &SlotVector,
    approx: &PolyApprox,
) -> Result<SlotVector> {
    let c = &approx.coeffs;
    let d = approx.degree;
    if d == 0 {
        let zero = ctx.sub(sv, sv)?;
        return ctx.add_plain(&zero, &PlainVector::scalar(c[0]));
    }
    let lead = ctx.mult_plain(sv, &PlainVector::scalar(c[d]))?;
    let mut acc = ctx.add_plain(&lead, &PlainVector::scalar(c[d - 1]))?;
    for i in (0..d - 1).rev() {
        acc = ctx.mult(&acc, sv)?;
        acc = ctx.add_plain(&acc, &PlainVector::scalar(c[i]))?;
    }
    Ok(acc)
}

/// Writes `x,p_x,rel_err` on `points` evenly spaced points of the domain.
pub fn write_curve_csv<W: Write>(approx: &PolyApprox, points: usize, mut out: W) -> Result<()> {
    writeln!(out, "x,p_x,rel_err")?;
    let Domain { lo, hi } = approx.domain;
    let steps = points.max(2) - 1;
    for i in 0..=steps {
        let x = lo + (hi - lo) * i as f64 / steps as f64;
        writeln!(out, "{x},{},{}", eval_poly_plain(x, approx), rel_error(x, approx))?;
    }
    Ok(())
}
