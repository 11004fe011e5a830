//! Gallery persistence: `manifest.json` plus one blob per window ciphertext.

use std::fs;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{GalleryRecord, ParamsStore};
use crate::error::{Error, Result};
use crate::polyprotect::{ProtectedTemplate, TemplateValues};
use crate::slot_backend::{EncryptionContext, KeyId};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
const BLOB_DIR: &str = "blobs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCtx {
    pub slot_capacity: usize,
    pub depth_budget: u32,
    pub key_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub subject_id: u32,
    pub params_id: String,
    pub compress_dim: usize,
    /// Relative to the manifest's directory.
    pub blob_paths: Vec<String>,
    pub norm_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryManifest {
    pub version: u32,
    pub ctx: ManifestCtx,
    pub records: Vec<ManifestRecord>,
}

/// Writes an encrypted gallery under `dir`, drawing serialization nonces
/// from `rng`.
pub fn save_gallery<R: RngCore + ?Sized>(
    dir: &Path,
    gallery: &[GalleryRecord],
    ctx: &EncryptionContext,
    rng: &mut R,
) -> Result<GalleryManifest> {
    fs::create_dir_all(dir.join(BLOB_DIR))?;
    let mut records = Vec::with_capacity(gallery.len());
    for (i, rec) in gallery.iter().enumerate() {
        let cts = rec.protected.ciphertexts().ok_or_else(|| {
            Error::Malformed(format!("record {} holds a plaintext template", rec.subject_id))
        })?;
        let mut blob_paths = Vec::with_capacity(cts.len());
        for (j, ct) in cts.iter().enumerate() {
            let rel = format!("{BLOB_DIR}/{i:05}_{}_{j:04}.bin", rec.subject_id);
            fs::write(dir.join(&rel), ctx.serialize_ciphertext(ct, rng)?)?;
            blob_paths.push(rel);
        }
        records.push(ManifestRecord {
            subject_id: rec.subject_id,
            params_id: rec.params_id.clone(),
            compress_dim: rec.compress_dim,
            blob_paths,
            norm_bound: rec.norm_bound,
        });
    }
    let manifest = GalleryManifest {
        version: MANIFEST_VERSION,
        ctx: ManifestCtx {
            slot_capacity: ctx.slot_capacity(),
            depth_budget: ctx.depth_budget(),
            key_id: ctx.key_id().to_hex(),
        },
        records,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a gallery written by [`save_gallery`] under the same context.
///
/// Levels are restored from each record's parameters.
pub fn load_gallery(dir: &Path, ctx: &EncryptionContext, store: &ParamsStore) -> Result<Vec<GalleryRecord>> {
    let manifest: GalleryManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Malformed(format!(
            "manifest version {} (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    let key = KeyId::from_hex(&manifest.ctx.key_id)?;
    if key != ctx.key_id() {
        return Err(Error::KeyMismatch {
            expected: ctx.key_id().to_hex(),
            found: key.to_hex(),
        });
    }
    if manifest.ctx.slot_capacity != ctx.slot_capacity() {
        return Err(Error::CapacityMismatch {
            left: ctx.slot_capacity(),
            right: manifest.ctx.slot_capacity,
        });
    }
    manifest
        .records
        .iter()
        .map(|r| {
            let params = store.get(&r.params_id)?;
            let cts = r
                .blob_paths
                .iter()
                .map(|p| {
                    let bytes = fs::read(dir.join(p))?;
                    ctx.deserialize_ciphertext(&bytes, params.m(), params.encrypted_depth_cost())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GalleryRecord {
                subject_id: r.subject_id,
                protected: ProtectedTemplate {
                    values: TemplateValues::Encrypted(cts),
                    params_id: r.params_id.clone(),
                },
                params_id: r.params_id.clone(),
                compress_dim: r.compress_dim,
                norm_bound: r.norm_bound,
            })
        })
        .collect()
}
