//! End-to-end identification: compress, encrypt, protect, then 1:N search
//! by encrypted cosine similarity.
//!
//! Every subject has their own PolyProtect parameters, so a probe is
//! re-protected with each gallery record's parameters before scoring: a
//! search costs one protection per record. Scores are decrypted by the
//! context owner and ranked in the clear.

mod dataset;
mod gallery;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::{fit_inv_sqrt, Domain, PolyApprox, DEFAULT_FIT_NODES};
use crate::error::{Error, Result};
use crate::polyprotect::{
    encrypt_windows, gen_params, pack_template, protect_encrypted, protect_plain, PolyProtectParams,
    ProtectedTemplate, TemplateValues,
};
use crate::similarity::{cosine_encrypted, cosine_plain, NormalizationPlan};
use crate::slot_backend::EncryptionContext;

pub use dataset::{gen_synthetic_dataset, read_dataset_csv, write_dataset_csv, SyntheticSpec};
pub use gallery::{load_gallery, save_gallery, GalleryManifest, MANIFEST_FILE, MANIFEST_VERSION};

pub const DEFAULT_COMPRESS_DIM: usize = 64;
pub const DEFAULT_SLOT_CAPACITY: usize = 64;
/// PolyProtect (4 levels at m = 5) + packing (1) + cosine (degree + 5).
pub const DEFAULT_DEPTH_BUDGET: u32 = 20;
pub const DEFAULT_M: usize = 5;
pub const DEFAULT_OVERLAP: usize = 4;
pub const DEFAULT_C_RANGE: i64 = 50;
pub const DEFAULT_APPROX_DEGREE: usize = 8;
/// Approximation domain for template similarity. On `[1e-3, 1]` a degree-8
/// fit is off by tens of percent, on `[0.05, 1]` by about one percent.
pub const SIMILARITY_DOMAIN: Domain = Domain { lo: 0.05, hi: 1.0 };
/// A record's squared-norm bound is this multiple of its template's squared
/// norm, placing same-sized probes near `1 / NORM_HEADROOM²` in the domain.
pub const NORM_HEADROOM: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attribute {
    Gender,
    AgeBand,
    Ethnicity,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Gender, Attribute::AgeBand, Attribute::Ethnicity];

    pub fn classes(self) -> usize {
        match self {
            Attribute::Gender => 2,
            Attribute::AgeBand => 4,
            Attribute::Ethnicity => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::AgeBand => "age_band",
            Attribute::Ethnicity => "ethnicity",
        }
    }

    pub fn label(self, a: &Attributes) -> u8 {
        match self {
            Attribute::Gender => a.gender,
            Attribute::AgeBand => a.age_band,
            Attribute::Ethnicity => a.ethnicity,
        }
    }
}

/// Age bands: 0-22, 23-40, 41-59, 60+.
pub const AGE_BANDS: [&str; 4] = ["0-22", "23-40", "41-59", "60+"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attributes {
    pub gender: u8,
    pub age_band: u8,
    pub ethnicity: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub subject_id: u32,
    pub attributes: Attributes,
}

pub(crate) fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

/// Keeps the first `d` coordinates and renormalizes.
pub fn compress_prefix(e: &Embedding, d: usize) -> Result<Embedding> {
    if d == 0 || d > e.values.len() {
        return Err(Error::InvalidParams(format!(
            "compression to {d} of a {}-dim embedding",
            e.values.len()
        )));
    }
    let values = normalize(&e.values[..d]).ok_or(Error::ZeroPrefix { dim: d })?;
    Ok(Embedding { values, ..e.clone() })
}

#[derive(Debug, Clone)]
pub struct GalleryRecord {
    pub subject_id: u32,
    pub protected: ProtectedTemplate,
    pub params_id: String,
    pub compress_dim: usize,
    /// Public squared-norm bound used to scale similarity for this record.
    pub norm_bound: f64,
}

/// Parameters by `params_id`.
#[derive(Debug, Clone, Default)]
pub struct ParamsStore(HashMap<String, PolyProtectParams>);

impl ParamsStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, params: PolyProtectParams) {
        self.0.insert(params.params_id().to_string(), params);
    }

    pub fn get(&self, params_id: &str) -> Result<&PolyProtectParams> {
        self.0
            .get(params_id)
            .ok_or_else(|| Error::UnknownParamsId(params_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PolyProtectParams> {
        self.0.values()
    }
}

impl FromIterator<PolyProtectParams> for ParamsStore {
    fn from_iter<I: IntoIterator<Item = PolyProtectParams>>(iter: I) -> Self {
        let mut s = Self::new();
        iter.into_iter().for_each(|p| s.insert(p));
        s
    }
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn record_for(
    e: &Embedding,
    protected: ProtectedTemplate,
    params: &PolyProtectParams,
    d: usize,
    plain_template: &[f64],
) -> GalleryRecord {
    GalleryRecord {
        subject_id: e.subject_id,
        protected,
        params_id: params.params_id().to_string(),
        compress_dim: d,
        norm_bound: NORM_HEADROOM * squared_norm(plain_template),
    }
}

/// Compresses, encrypts and protects `e` at the user's end.
pub fn enroll(
    e: &Embedding,
    params: &PolyProtectParams,
    ctx: &EncryptionContext,
    d: usize,
) -> Result<GalleryRecord> {
    let c = compress_prefix(e, d)?;
    let windows = encrypt_windows(&c.values, params, ctx)?;
    let protected = protect_encrypted(&windows, params, ctx)?;
    let plain = protect_plain(&c.values, params)?;
    Ok(record_for(e, protected, params, d, plain.plain().expect("plain")))
}

/// Plaintext counterpart of [`enroll`].
pub fn enroll_plain(e: &Embedding, params: &PolyProtectParams, d: usize) -> Result<GalleryRecord> {
    let c = compress_prefix(e, d)?;
    let protected = protect_plain(&c.values, params)?;
    let plain = protected.plain().expect("plain").to_vec();
    Ok(record_for(e, protected, params, d, &plain))
}

fn rank(mut scores: Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores
}

/// Ranks the gallery against `probe`, best first; ties go to the lower id.
///
/// The probe is protected under each record's parameters on the encrypted
/// path and scored with [`cosine_encrypted`]. Before that, a plaintext check
/// that the probe-record pair falls inside the approximation domain rejects
/// pairs whose score would be meaningless.
pub fn identify(
    probe: &Embedding,
    gallery: &[GalleryRecord],
    store: &ParamsStore,
    ctx: &EncryptionContext,
    approx: &PolyApprox,
) -> Result<Vec<(u32, f64)>> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let scores = gallery
        .par_iter()
        .map(|rec| {
            let params = store.get(&rec.params_id)?;
            let stored = match &rec.protected.values {
                TemplateValues::Encrypted(_) => pack_template(&rec.protected, ctx)?,
                TemplateValues::Plain(_) => {
                    return Err(Error::Malformed(format!(
                        "record {} holds a plaintext template",
                        rec.subject_id
                    )))
                }
            };
            let c = compress_prefix(probe, rec.compress_dim)?;
            let plan = NormalizationPlan::from_squared_norm_bound(rec.norm_bound)?;
            // The stored template's squared norm is recovered from its bound.
            let probe_plain = protect_plain(&c.values, params)?;
            let stored_sq = rec.norm_bound / NORM_HEADROOM;
            let den = squared_norm(probe_plain.plain().expect("plain")) * stored_sq / plan.d_bound;
            if !approx.domain.contains(den) {
                return Err(Error::DomainViolation {
                    value: den,
                    lo: approx.domain.lo,
                    hi: approx.domain.hi,
                });
            }
            let windows = encrypt_windows(&c.values, params, ctx)?;
            let probe_t = pack_template(&protect_encrypted(&windows, params, ctx)?, ctx)?;
            let k = rec.protected.k();
            let score = cosine_encrypted(ctx, &probe_t, &stored, k, &plan, approx)?;
            Ok((rec.subject_id, ctx.decrypt(&score)?.values()[0]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank(scores))
}

/// Plaintext counterpart of [`identify`] over records from [`enroll_plain`].
pub fn identify_plain(
    probe: &Embedding,
    gallery: &[GalleryRecord],
    store: &ParamsStore,
) -> Result<Vec<(u32, f64)>> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let scores = gallery
        .par_iter()
        .map(|rec| {
            let params = store.get(&rec.params_id)?;
            let stored = rec
                .protected
                .plain()
                .ok_or_else(|| Error::Malformed("plaintext search needs plaintext templates".into()))?;
            let c = compress_prefix(probe, rec.compress_dim)?;
            let p = protect_plain(&c.values, params)?;
            Ok((rec.subject_id, cosine_plain(p.plain().expect("plain"), stored)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank(scores))
}

/// Order of the stages applied to an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Compress,
    Encrypt,
    Protect,
}

pub const STAGE_ORDER: [Stage; 3] = [Stage::Compress, Stage::Encrypt, Stage::Protect];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Plain,
    Encrypted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stage_order: [Stage; 3],
    pub compress_dim: usize,
    pub m: usize,
    pub overlap: usize,
    pub c_range: i64,
    /// Per-subject parameters are generated from this and the subject id.
    pub params_seed: u64,
    pub approx_degree: usize,
    pub approx_domain: Domain,
    pub slot_capacity: usize,
    pub depth_budget: u32,
    pub key_seed: u64,
    pub noise_stddev: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stage_order: STAGE_ORDER,
            compress_dim: DEFAULT_COMPRESS_DIM,
            m: DEFAULT_M,
            overlap: DEFAULT_OVERLAP,
            c_range: DEFAULT_C_RANGE,
            params_seed: 0,
            approx_degree: DEFAULT_APPROX_DEGREE,
            approx_domain: SIMILARITY_DOMAIN,
            slot_capacity: DEFAULT_SLOT_CAPACITY,
            depth_budget: DEFAULT_DEPTH_BUDGET,
            key_seed: 0,
            noise_stddev: 0.0,
        }
    }
}

/// Seed for a numbered item derived from a base seed.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(base.to_le_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// A configured pipeline: context, approximant and parameter generation.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub ctx: EncryptionContext,
    pub approx: PolyApprox,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        if config.stage_order != STAGE_ORDER {
            return Err(Error::PipelineOrder(format!(
                "expected {STAGE_ORDER:?}, got {:?}",
                config.stage_order
            )));
        }
        let ctx = EncryptionContext::new(config.slot_capacity, config.depth_budget, config.key_seed)?
            .with_noise(config.noise_stddev)?;
        let approx = fit_inv_sqrt(config.approx_degree, config.approx_domain, DEFAULT_FIT_NODES)?;
        Ok(Self { config, ctx, approx })
    }

    pub fn params_for(&self, subject_id: u32) -> Result<PolyProtectParams> {
        let c = &self.config;
        gen_params(
            c.m,
            c.overlap,
            c.c_range,
            derive_seed(c.params_seed, "params", subject_id as u64),
        )
    }

    /// Enrolls every embedding with its subject's parameters.
    pub fn enroll_all(&self, data: &[&Embedding], mode: Mode) -> Result<(Vec<GalleryRecord>, ParamsStore)> {
        let params = data
            .iter()
            .map(|e| self.params_for(e.subject_id))
            .collect::<Result<Vec<_>>>()?;
        let gallery = data
            .par_iter()
            .zip(&params)
            .map(|(e, p)| match mode {
                Mode::Plain => enroll_plain(e, p, self.config.compress_dim),
                Mode::Encrypted => enroll(e, p, &self.ctx, self.config.compress_dim),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((gallery, params.into_iter().collect()))
    }

    pub fn identify(
        &self,
        probe: &Embedding,
        gallery: &[GalleryRecord],
        store: &ParamsStore,
        mode: Mode,
    ) -> Result<Vec<(u32, f64)>> {
        match mode {
            Mode::Plain => identify_plain(probe, gallery, store),
            Mode::Encrypted => identify(probe, gallery, store, &self.ctx, &self.approx),
        }
    }

    /// Per-probe rankings after enrolling the first sample of every identity.
    pub fn run(&self, data: &[Embedding], mode: Mode) -> Result<Vec<(u32, Vec<(u32, f64)>)>> {
        let (enrolled, probes) = split_enroll_probe(data);
        let (gallery, store) = self.enroll_all(&enrolled, mode)?;
        probes
            .iter()
            .map(|p| Ok((p.subject_id, self.identify(p, &gallery, &store, mode)?)))
            .collect()
    }

    pub fn rank1_accuracy(&self, data: &[Embedding], mode: Mode) -> Result<f64> {
        Ok(rank1_of(&self.run(data, mode)?))
    }
}

/// Fraction of rankings whose first entry is the true subject.
pub fn rank1_of(results: &[(u32, Vec<(u32, f64)>)]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .filter(|(truth, ranking)| ranking.first().map(|r| r.0) == Some(*truth))
        .count();
    hits as f64 / results.len() as f64
}

/// First sample of each identity to enroll, the rest as probes, in input order.
pub fn split_enroll_probe(data: &[Embedding]) -> (Vec<&Embedding>, Vec<&Embedding>) {
    let mut seen = std::collections::HashSet::new();
    data.iter().partition(|e| seen.insert(e.subject_id))
}
