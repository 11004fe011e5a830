//! Soft-biometric leakage: how well a linear attacker predicts attributes
//! from raw embeddings, protected templates and ciphertext serializations.
//!
//! Privacy Gain is `(1 - R_p) - (1 - R_o)` and Suppression Rate
//! `(A_o - A_p) / A_o`, with `R` and `A` both the attribute classifier's
//! test accuracy without (`o`) and with (`p`) protection.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{compress_prefix, derive_seed, Attribute, Embedding, DEFAULT_C_RANGE, DEFAULT_M, DEFAULT_OVERLAP};
use crate::polyprotect::{encrypt_windows, gen_params, pack_template, protect_encrypted, protect_plain, PolyProtectParams};
use crate::slot_backend::{EncryptionContext, PlainVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainMeta {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    /// classes × features, in standardized units.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub classes: Vec<u8>,
    pub train_meta: TrainMeta,
    mean: DVector<f64>,
    inv_std: DVector<f64>,
}

fn to_matrix(features: &[PlainVector]) -> Result<DMatrix<f64>> {
    let dim = features.first().map_or(0, |f| f.len());
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: f.len(),
        });
    }
    Ok(DMatrix::from_fn(features.len(), dim, |i, j| features[i].values()[j]))
}

fn softmax_rows(logits: &mut DMatrix<f64>) {
    for mut row in logits.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Full-batch gradient descent on softmax cross-entropy. Deterministic
/// given the seed and the sample order.
pub fn train_attr_classifier(
    features: &[PlainVector],
    labels: &[u8],
    meta: TrainMeta,
) -> Result<LinearClassifier> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    let mut classes: Vec<u8> = labels.iter().copied().collect::<HashSet<_>>().into_iter().collect();
    classes.sort_unstable();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabels);
    }
    let mut x = to_matrix(features)?;
    let (n, dim) = x.shape();
    let mean = DVector::from_fn(dim, |j, _| x.column(j).mean());
    let inv_std = DVector::from_fn(dim, |j, _| {
        let sd = x.column(j).map(|v| v - mean[j]).norm() / (n as f64).sqrt();
        if sd > 1e-12 { 1.0 / sd } else { 0.0 }
    });
    for j in 0..dim {
        x.column_mut(j).apply(|v| *v = (*v - mean[j]) * inv_std[j]);
    }
    let y = DMatrix::from_fn(n, classes.len(), |i, c| (labels[i] == classes[c]) as u8 as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
    let init = Normal::new(0.0, 0.01).expect("positive stddev");
    let mut w = DMatrix::from_fn(classes.len(), dim, |_, _| init.sample(&mut rng));
    let mut b = DVector::zeros(classes.len());
    let step = meta.learning_rate / n as f64;
    for _ in 0..meta.epochs {
        let mut p = &x * w.transpose();
        for mut row in p.row_iter_mut() {
            row += b.transpose();
        }
        softmax_rows(&mut p);
        let err = p - &y;
        w -= err.transpose() * &x * step;
        b -= err.row_sum().transpose() * step;
    }
    Ok(LinearClassifier {
        weights: w,
        bias: b,
        classes,
        train_meta: meta,
        mean,
        inv_std,
    })
}

impl LinearClassifier {
    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn predict(&self, features: &[f64]) -> Result<u8> {
        if features.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                found: features.len(),
            });
        }
        let z = DVector::from_fn(features.len(), |j, _| (features[j] - self.mean[j]) * self.inv_std[j]);
        let logits = &self.weights * z + &self.bias;
        Ok(self.classes[logits.argmax().0])
    }
}

pub fn eval_accuracy(clf: &LinearClassifier, features: &[PlainVector], labels: &[u8]) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    if features.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (f, &l) in features.iter().zip(labels) {
        hits += (clf.predict(f.values())? == l) as usize;
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// `sign(x) · ln(1 + |x|)`, with non-finite inputs mapped to 0.
fn signed_log(x: f64) -> f64 {
    if x.is_finite() {
        x.signum() * x.abs().ln_1p()
    } else {
        0.0
    }
}

/// Features an attacker can compute from a serialized ciphertext alone: the
/// normalized byte histogram followed by every 8-byte slot word read as an
/// `f64` and compressed by a signed logarithm.
pub fn bytes_features(bytes: &[u8]) -> Result<PlainVector> {
    let blob = crate::slot_backend::CiphertextBlob::parse(bytes)?;
    let mut hist = vec![0.0; 256];
    for &b in bytes {
        hist[b as usize] += 1.0;
    }
    let total = bytes.len() as f64;
    hist.iter_mut().for_each(|h| *h /= total);
    hist.extend(blob.words.iter().map(|&w| signed_log(f64::from_bits(w))));
    PlainVector::new(hist)
}

pub fn ciphertext_features(serialized: &[Vec<u8>]) -> Result<Vec<PlainVector>> {
    serialized.iter().map(|b| bytes_features(b)).collect()
}

/// `(1 - r_p) - (1 - r_o)`; positive means protection lowered recognition.
pub fn privacy_gain(r_o: f64, r_p: f64) -> f64 {
    (1.0 - r_p) - (1.0 - r_o)
}

pub fn suppression_rate(a_o: f64, a_p: f64) -> Result<f64> {
    if a_o == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok((a_o - a_p) / a_o)
}

/// `max(majority share, 1 / classes)`.
pub fn chance_level(labels: &[u8], classes: usize) -> f64 {
    let mut counts = vec![0usize; 256];
    labels.iter().for_each(|&l| counts[l as usize] += 1);
    let majority = counts.iter().max().copied().unwrap_or(0) as f64 / labels.len().max(1) as f64;
    majority.max(1.0 / classes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    None,
    PolyProtect,
    Mrl,
    MrlPolyProtect,
    MrlFhe,
    MrlPolyProtectFhe,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::None,
        Variant::PolyProtect,
        Variant::Mrl,
        Variant::MrlPolyProtect,
        Variant::MrlFhe,
        Variant::MrlPolyProtectFhe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::None => "None",
            Variant::PolyProtect => "PolyProtect",
            Variant::Mrl => "MRL",
            Variant::MrlPolyProtect => "MRL+PolyProtect",
            Variant::MrlFhe => "MRL+FHE",
            Variant::MrlPolyProtectFhe => "MRL+PolyProtect+FHE",
        }
    }

    pub fn encrypted(self) -> bool {
        matches!(self, Variant::MrlFhe | Variant::MrlPolyProtectFhe)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParams(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageConfig {
    pub compress_dim: usize,
    pub m: usize,
    pub overlap: usize,
    pub c_range: i64,
    /// One parameter set, shared by every sample, is drawn from this seed.
    pub params_seed: u64,
    pub train: TrainMeta,
    pub slot_capacity: usize,
    pub depth_budget: u32,
    pub key_seed: u64,
    /// Seeds the identity split and the serialization nonces.
    pub seed: u64,
    pub masking: bool,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        Self {
            compress_dim: 64,
            m: DEFAULT_M,
            overlap: DEFAULT_OVERLAP,
            c_range: DEFAULT_C_RANGE,
            params_seed: 0,
            train: TrainMeta::default(),
            slot_capacity: 64,
            depth_budget: crate::slot_backend::DEFAULT_DEPTH_BUDGET,
            key_seed: 0,
            seed: 0,
            masking: true,
        }
    }
}

impl LeakageConfig {
    pub fn context(&self) -> Result<EncryptionContext> {
        let ctx = EncryptionContext::new(self.slot_capacity, self.depth_budget, self.key_seed)?;
        Ok(if self.masking { ctx } else { ctx.with_masking_disabled() })
    }

    pub fn params(&self) -> Result<PolyProtectParams> {
        gen_params(self.m, self.overlap, self.c_range, self.params_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub attribute: Attribute,
    pub variant: Variant,
    pub a_o: f64,
    pub a_p: f64,
    pub r_o: f64,
    pub r_p: f64,
    pub pg: f64,
    pub sr: f64,
    pub chance: f64,
}

/// Splits distinct identities in half (shuffled by `seed`); returns
/// `(train, test)` sample indices. Samples of one identity never straddle.
pub fn identity_split(data: &[Embedding], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<u32> = data.iter().map(|e| e.subject_id).collect::<HashSet<_>>().into_iter().collect();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "split", 0)));
    let train: HashSet<u32> = ids[..ids.len() / 2].iter().copied().collect();
    (0..data.len()).partition(|&i| train.contains(&data[i].subject_id))
}

/// The feature representation a variant exposes for every sample.
pub fn variant_features(
    data: &[Embedding],
    variant: Variant,
    cfg: &LeakageConfig,
    ctx: &EncryptionContext,
    params: &PolyProtectParams,
) -> Result<Vec<PlainVector>> {
    let nonce_base = derive_seed(cfg.seed, "nonce", variant as u64);
    data.par_iter()
        .enumerate()
        .map(|(i, e)| {
            let compressed = || compress_prefix(e, cfg.compress_dim).map(|c| c.values);
            let values = match variant {
                Variant::None => e.values.clone(),
                Variant::PolyProtect => protect_plain(&e.values, params)?.plain().expect("plain").to_vec(),
                Variant::Mrl => compressed()?,
                Variant::MrlPolyProtect => protect_plain(&compressed()?, params)?.plain().expect("plain").to_vec(),
                Variant::MrlFhe | Variant::MrlPolyProtectFhe => {
                    let c = compressed()?;
                    let ct = if variant == Variant::MrlFhe {
                        ctx.encrypt_values(&c)?
                    } else {
                        let windows = encrypt_windows(&c, params, ctx)?;
                        pack_template(&protect_encrypted(&windows, params, ctx)?, ctx)?
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(nonce_base, "sample", i as u64));
                    return bytes_features(&ctx.serialize_ciphertext(&ct, &mut rng)?);
                }
            };
            PlainVector::new(values)
        })
        .collect()
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Train on the train identities, accuracy on the test identities.
pub fn attribute_accuracy(
    features: &[PlainVector],
    data: &[Embedding],
    attribute: Attribute,
    split: &(Vec<usize>, Vec<usize>),
    meta: TrainMeta,
) -> Result<f64> {
    let labels: Vec<u8> = data.iter().map(|e| attribute.label(&e.attributes)).collect();
    let clf = train_attr_classifier(&pick(features, &split.0), &pick(&labels, &split.0), meta)?;
    eval_accuracy(&clf, &pick(features, &split.1), &pick(&labels, &split.1))
}

/// Per attribute and variant accuracies, reported against the `None` baseline.
pub fn run_leakage_suite(data: &[Embedding], variants: &[Variant], cfg: &LeakageConfig) -> Result<Vec<LeakageReport>> {
    let ctx = cfg.context()?;
    let params = cfg.params()?;
    let split = identity_split(data, cfg.seed);
    let mut all = vec![Variant::None];
    all.extend(variants.iter().copied().filter(|v| *v != Variant::None));
    let features = all
        .iter()
        .map(|&v| variant_features(data, v, cfg, &ctx, &params))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, Attribute)> = (0..all.len())
        .flat_map(|v| Attribute::ALL.into_iter().map(move |a| (v, a)))
        .collect();
    let acc = cells
        .par_iter()
        .map(|&(v, a)| attribute_accuracy(&features[v], data, a, &split, cfg.train))
        .collect::<Result<Vec<_>>>()?;
    let accuracy = |v: usize, a: Attribute| {
        let ai = Attribute::ALL.iter().position(|x| *x == a).expect("known");
        acc[v * Attribute::ALL.len() + ai]
    };

    let mut out = Vec::new();
    for &variant in variants {
        let v = all.iter().position(|x| *x == variant).expect("listed");
        for a in Attribute::ALL {
            let a_o = accuracy(0, a);
            let a_p = accuracy(v, a);
            let test_labels: Vec<u8> = split.1.iter().map(|&i| a.label(&data[i].attributes)).collect();
            out.push(LeakageReport {
                attribute: a,
                variant,
                a_o,
                a_p,
                r_o: a_o,
                r_p: a_p,
                pg: privacy_gain(a_o, a_p),
                sr: suppression_rate(a_o, a_p)?,
                chance: chance_level(&test_labels, a.classes()),
            });
        }
    }
    Ok(out)
}

pub const LEAKAGE_CSV_HEADER: &str = "attribute,variant,a_o,a_p,pg_x100,sr,chance";

pub fn write_leakage_csv<W: Write>(reports: &[LeakageReport], mut out: W) -> Result<()> {
    writeln!(out, "{LEAKAGE_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.2},{:.4},{:.4}",
            r.attribute.name(),
            r.variant,
            r.a_o,
            r.a_p,
            100.0 * r.pg,
            r.sr,
            r.chance
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationParam {
    Overlap,
    M,
    CRange,
}

impl AblationParam {
    pub fn name(self) -> &'static str {
        match self {
            AblationParam::Overlap => "overlap",
            AblationParam::M => "m",
            AblationParam::CRange => "c_range",
        }
    }
}

impl FromStr for AblationParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlap" => Ok(AblationParam::Overlap),
            "m" => Ok(AblationParam::M),
            "c_range" | "c-range" => Ok(AblationParam::CRange),
            _ => Err(Error::InvalidParams(format!("unknown ablation parameter {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub param: AblationParam,
    pub value: i64,
    pub attribute: Attribute,
    pub accuracy: Option<f64>,
    pub chance: f64,
    pub error: Option<String>,
}

fn ablation_accuracies(
    data: &[Embedding],
    cfg: &LeakageConfig,
    split: &(Vec<usize>, Vec<usize>),
) -> Result<Vec<f64>> {
    let ctx = cfg.context()?;
    let params = cfg.params()?;
    let features = data
        .par_iter()
        .map(|e| {
            let c = compress_prefix(e, cfg.compress_dim)?;
            let windows = encrypt_windows(&c.values, &params, &ctx)?;
            PlainVector::new(protect_encrypted(&windows, &params, &ctx)?.decrypt(&ctx)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Attribute::ALL
        .iter()
        .map(|&a| attribute_accuracy(&features, data, a, split, cfg.train))
        .collect()
}

/// Attribute accuracy on MRL+PolyProtect templates (protected under
/// encryption, then decrypted) as one parameter varies. A failing value
/// yields rows carrying the error instead of an accuracy.
pub fn ablation_sweep(
    param: AblationParam,
    values: &[i64],
    data: &[Embedding],
    cfg: &LeakageConfig,
) -> Result<Vec<AblationRow>> {
    let split = identity_split(data, cfg.seed);
    let chance: Vec<f64> = Attribute::ALL
        .iter()
        .map(|&a| {
            let l: Vec<u8> = split.1.iter().map(|&i| a.label(&data[i].attributes)).collect();
            chance_level(&l, a.classes())
        })
        .collect();
    let mut rows = Vec::new();
    for &value in values {
        let mut c = cfg.clone();
        let outcome = (|| {
            let as_usize = usize::try_from(value)
                .map_err(|_| Error::InvalidParams(format!("{} = {value}", param.name())))?;
            match param {
                AblationParam::Overlap => c.overlap = as_usize,
                AblationParam::M => c.m = as_usize,
                AblationParam::CRange => c.c_range = value,
            }
            ablation_accuracies(data, &c, &split)
        })();
        for (ai, &attribute) in Attribute::ALL.iter().enumerate() {
            rows.push(AblationRow {
                param,
                value,
                attribute,
                accuracy: outcome.as_ref().ok().map(|acc| acc[ai]),
                chance: chance[ai],
                error: outcome.as_ref().err().map(|e| e.to_string()),
            });
        }
    }
    Ok(rows)
}

pub const ABLATION_CSV_HEADER: &str = "param,value,attribute,accuracy,chance,error";

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ABLATION_CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.param.name().to_string(),
            r.value.to_string(),
            r.attribute.name().to_string(),
            r.accuracy.map_or(String::new(), |a| format!("{a:.4}")),
            format!("{:.4}", r.chance),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
