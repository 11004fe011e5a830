//! Synthetic labeled embeddings and the dataset CSV format.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalize, Attribute, Attributes, Embedding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_ids: usize,
    pub samples_per_id: usize,
    pub dim: usize,
    /// Scale of an identity's center relative to unit-norm sample noise.
    pub class_separation: f64,
    /// Fraction of coordinates carrying attribute-dependent mean shifts.
    pub attribute_correlation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_ids: 50,
            samples_per_id: 4,
            dim: 512,
            class_separation: 3.0,
            attribute_correlation: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_ids < 2 {
            return Err(Error::InvalidParams(format!("num_ids {} < 2", self.num_ids)));
        }
        if self.samples_per_id == 0 || self.dim == 0 {
            return Err(Error::InvalidParams("samples_per_id and dim must be positive".into()));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "class_separation {} must be positive",
                self.class_separation
            )));
        }
        if !(0.0..=1.0).contains(&self.attribute_correlation) {
            return Err(Error::InvalidParams(format!(
                "attribute_correlation {} outside [0, 1]",
                self.attribute_correlation
            )));
        }
        Ok(())
    }
}

/// Which attribute, if any, shifts each coordinate. Carriers are spread
/// evenly over the vector (so every prefix keeps its share) and assigned to
/// the attributes round-robin.
fn carrier_map(dim: usize, rho: f64) -> Vec<Option<Attribute>> {
    let mut next = 0;
    (0..dim)
        .map(|j| {
            let carries = ((j + 1) as f64 * rho).floor() > (j as f64 * rho).floor();
            carries.then(|| {
                let a = Attribute::ALL[next % Attribute::ALL.len()];
                next += 1;
                a
            })
        })
        .collect()
}

/// Standard deviation of attribute class means on carrier coordinates,
/// relative to the unit-variance identity prototype.
pub const ATTRIBUTE_STRENGTH: f64 = 2.0;

/// Coordinate index at which the center spectrum has halved.
pub const SPECTRUM_KNEE: f64 = 64.0;

/// Per-identity Gaussian clusters on the unit sphere.
///
/// An identity's center is a standard normal prototype plus, on carrier
/// coordinates, the mean vector of each of its attribute classes. Center
/// coordinate `j` is then scaled by `1 / (1 + j / SPECTRUM_KNEE)`, so that
/// leading coordinates carry more of the signal as in embeddings trained for
/// prefix truncation. Samples are `normalize(separation · normalize(center)
/// + noise)` with isotropic noise of expected unit norm. Labels are drawn
/// uniformly per identity.
pub fn gen_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<Embedding>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let carriers = carrier_map(dim, spec.attribute_correlation);

    let class_means: Vec<Vec<Vec<f64>>> = Attribute::ALL
        .iter()
        .map(|&a| {
            (0..a.classes())
                .map(|_| {
                    carriers
                        .iter()
                        .map(|c| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            if *c == Some(a) { ATTRIBUTE_STRENGTH * z } else { 0.0 }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive stddev");
    let mut out = Vec::with_capacity(spec.num_ids * spec.samples_per_id);
    for id in 0..spec.num_ids {
        let labels = Attributes {
            gender: rng.random_range(0..Attribute::Gender.classes()) as u8,
            age_band: rng.random_range(0..Attribute::AgeBand.classes()) as u8,
            ethnicity: rng.random_range(0..Attribute::Ethnicity.classes()) as u8,
        };
        let mut center: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (ai, &a) in Attribute::ALL.iter().enumerate() {
            let mean = &class_means[ai][a.label(&labels) as usize];
            center.iter_mut().zip(mean).for_each(|(c, m)| *c += m);
        }
        center
            .iter_mut()
            .enumerate()
            .for_each(|(j, c)| *c /= 1.0 + j as f64 / SPECTRUM_KNEE);
        let center = normalize(&center).ok_or(Error::ZeroVector)?;
        for _ in 0..spec.samples_per_id {
            let sample: Vec<f64> = center
                .iter()
                .map(|c| spec.class_separation * c + noise.sample(&mut rng))
                .collect();
            out.push(Embedding {
                values: normalize(&sample).ok_or(Error::ZeroVector)?,
                subject_id: id as u32,
                attributes: labels,
            });
        }
    }
    Ok(out)
}

/// Writes `id,gender,age_band,ethnicity,v0..v{dim-1}`.
pub fn write_dataset_csv<W: Write>(data: &[Embedding], out: W) -> Result<()> {
    let dim = data.first().map_or(0, |e| e.values.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "gender".into(), "age_band".into(), "ethnicity".into()];
    header.extend((0..dim).map(|j| format!("v{j}")));
    w.write_record(&header)?;
    for e in data {
        if e.values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.values.len(),
            });
        }
        let mut row = vec![
            e.subject_id.to_string(),
            e.attributes.gender.to_string(),
            e.attributes.age_band.to_string(),
            e.attributes.ethnicity.to_string(),
        ];
        row.extend(e.values.iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<Vec<Embedding>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let expected = ["id", "gender", "age_band", "ethnicity"];
    if headers.len() < 5 || headers.iter().take(4).ne(expected) {
        return Err(Error::Malformed(
            "dataset header must start with id,gender,age_band,ethnicity,v0".into(),
        ));
    }
    let dim = headers.len() - 4;
    let parse_err = |line: usize, what: &str| Error::Malformed(format!("row {line}: bad {what}"));
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let label = |i: usize, a: Attribute| -> Result<u8> {
            let v: u8 = rec[i].trim().parse().map_err(|_| parse_err(line, a.name()))?;
            if v as usize >= a.classes() {
                return Err(parse_err(line, a.name()));
            }
            Ok(v)
        };
        let attributes = Attributes {
            gender: label(1, Attribute::Gender)?,
            age_band: label(2, Attribute::AgeBand)?,
            ethnicity: label(3, Attribute::Ethnicity)?,
        };
        let values = (0..dim)
            .map(|j| rec[4 + j].trim().parse::<f64>().map_err(|_| parse_err(line, "value")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Embedding {
            values,
            subject_id: rec[0].trim().parse().map_err(|_| parse_err(line, "id"))?,
            attributes,
        });
    }
    Ok(out)
}
