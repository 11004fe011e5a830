//! Run configuration: a TOML file with one table per concern. Every key has
//! a default and command-line flags override whatever the file says.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use polyfhe::approx::Domain;
use polyfhe::leakage::{LeakageConfig, TrainMeta};
use polyfhe::pipeline::{self, PipelineConfig, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtxSection {
    pub slot_capacity: usize,
    pub depth_budget: u32,
    pub noise_stddev: f64,
    /// Secret seed of the encryption context; the run seed when absent.
    pub key_seed: Option<u64>,
}

impl Default for CtxSection {
    fn default() -> Self {
        Self {
            slot_capacity: pipeline::DEFAULT_SLOT_CAPACITY,
            depth_budget: pipeline::DEFAULT_DEPTH_BUDGET,
            noise_stddev: 0.0,
            key_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolyProtectSection {
    pub m: usize,
    pub overlap: usize,
    pub c_range: i64,
}

impl Default for PolyProtectSection {
    fn default() -> Self {
        Self {
            m: pipeline::DEFAULT_M,
            overlap: pipeline::DEFAULT_OVERLAP,
            c_range: pipeline::DEFAULT_C_RANGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub compress_dim: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            compress_dim: pipeline::DEFAULT_COMPRESS_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxSection {
    pub degree: usize,
    /// `[lo, hi]`; each command has its own default when absent.
    pub domain: Option<[f64; 2]>,
}

impl Default for ApproxSection {
    fn default() -> Self {
        Self {
            degree: pipeline::DEFAULT_APPROX_DEGREE,
            domain: None,
        }
    }
}

impl ApproxSection {
    pub fn domain_or(&self, fallback: Domain) -> Result<Domain> {
        match self.domain {
            Some([lo, hi]) => Ok(Domain::new(lo, hi)?),
            None => Ok(fallback),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub num_ids: usize,
    pub samples_per_id: usize,
    pub dim: usize,
    pub class_separation: f64,
    pub attribute_correlation: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            num_ids: s.num_ids,
            samples_per_id: s.samples_per_id,
            dim: s.dim,
            class_separation: s.class_separation,
            attribute_correlation: s.attribute_correlation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub masking: bool,
    /// Slot capacity and depth budget for the leakage and ablation runs.
    pub slot_capacity: usize,
    pub depth_budget: u32,
}

impl Default for LeakageSection {
    fn default() -> Self {
        let c = LeakageConfig::default();
        Self {
            epochs: c.train.epochs,
            learning_rate: c.train.learning_rate,
            masking: c.masking,
            slot_capacity: c.slot_capacity,
            depth_budget: c.depth_budget,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub ctx: CtxSection,
    pub polyprotect: PolyProtectSection,
    pub pipeline: PipelineSection,
    pub approx: ApproxSection,
    pub dataset: DatasetSection,
    pub leakage: LeakageSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the resolved configuration in TOML form.
    pub fn digest(&self) -> Result<String> {
        let h = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(h.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn key_seed(&self) -> u64 {
        self.ctx.key_seed.unwrap_or(self.seed)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            compress_dim: self.pipeline.compress_dim,
            m: self.polyprotect.m,
            overlap: self.polyprotect.overlap,
            c_range: self.polyprotect.c_range,
            params_seed: self.seed,
            approx_degree: self.approx.degree,
            approx_domain: self.approx.domain_or(pipeline::SIMILARITY_DOMAIN)?,
            slot_capacity: self.ctx.slot_capacity,
            depth_budget: self.ctx.depth_budget,
            key_seed: self.key_seed(),
            noise_stddev: self.ctx.noise_stddev,
            ..Default::default()
        })
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let d = &self.dataset;
        SyntheticSpec {
            num_ids: d.num_ids,
            samples_per_id: d.samples_per_id,
            dim: d.dim,
            class_separation: d.class_separation,
            attribute_correlation: d.attribute_correlation,
            seed: self.seed,
        }
    }

    pub fn leakage_config(&self) -> LeakageConfig {
        LeakageConfig {
            compress_dim: self.pipeline.compress_dim,
            m: self.polyprotect.m,
            overlap: self.polyprotect.overlap,
            c_range: self.polyprotect.c_range,
            params_seed: self.seed,
            train: TrainMeta {
                epochs: self.leakage.epochs,
                learning_rate: self.leakage.learning_rate,
                seed: self.seed,
            },
            slot_capacity: self.leakage.slot_capacity,
            depth_budget: self.leakage.depth_budget,
            key_seed: self.key_seed(),
            seed: self.seed,
            masking: self.leakage.masking,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 7\n[polyprotect]\nm = 6\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.polyprotect.m, 6);
        assert_eq!(c.polyprotect.overlap, pipeline::DEFAULT_OVERLAP);
        assert_eq!(c.ctx, CtxSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[ctx]\nslots = 3\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig {
            seed: 3,
            approx: ApproxSection {
                degree: 6,
                domain: Some([0.01, 1.0]),
            },
            ..Default::default()
        };
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest().unwrap(), c.digest().unwrap());
    }
}
