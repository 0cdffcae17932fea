//! Dataset manifests and on-disk layout.
//!
//! A dataset directory holds `manifest.json` and one binary PGM per record.
//! Image paths in the manifest are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imgen::{self, Phenotype};
use crate::puf_sim::{ChallengePattern, EnvCondition, ResponseMeta};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub id: String,
    /// Present for simulated devices; lets a scenario re-create the device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub device_id: String,
    pub pattern: ChallengePattern,
    pub temp_c: f64,
    pub voltage_v: f64,
    pub repeat: u32,
    pub image_path: String,
}

impl ManifestRecord {
    pub fn new(meta: &ResponseMeta) -> Self {
        Self {
            device_id: meta.device_id.clone(),
            pattern: meta.pattern,
            temp_c: meta.env.temp_c,
            voltage_v: meta.env.voltage_v,
            repeat: meta.repeat,
            image_path: image_file_name(meta),
        }
    }

    pub fn env(&self) -> EnvCondition {
        EnvCondition { temp_c: self.temp_c, voltage_v: self.voltage_v }
    }

    pub fn meta(&self) -> ResponseMeta {
        ResponseMeta { device_id: self.device_id.clone(), pattern: self.pattern, env: self.env(), repeat: self.repeat }
    }
}

/// `Alpha_P_FF_20C_1.50V_r0.pgm`
pub fn image_file_name(meta: &ResponseMeta) -> String {
    format!(
        "{}_{}_{}C_{:.2}V_r{}.pgm",
        meta.device_id, meta.pattern, meta.env.temp_c, meta.env.voltage_v, meta.repeat
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub devices: Vec<DeviceEntry>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Device labels in manifest order.
    pub fn labels(&self) -> Vec<String> {
        self.devices.iter().map(|d| d.id.clone()).collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPhenotype {
    pub label: String,
    pub image: Phenotype,
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write every image as PGM plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, images: &[LabeledPhenotype]) -> Result<PathBuf> {
    if manifest.records.len() != images.len() {
        return Err(Error::Dataset(format!(
            "{} records but {} images",
            manifest.records.len(),
            images.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (rec, img) in manifest.records.iter().zip(images) {
        let path = dir.join(&rec.image_path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, imgen::to_pgm(&img.image)).map_err(|e| Error::io(&path, e))?;
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest.to_json()?).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// A manifest read from disk with its images and content hash.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<LabeledPhenotype>,
    /// SHA-256 of the manifest file bytes.
    pub manifest_hash: String,
}

pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)?;
    Ok((manifest, sha256_hex(&bytes)))
}

pub fn load_dataset(manifest_path: &Path) -> Result<LoadedDataset> {
    let (manifest, manifest_hash) = load_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut images = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let path = root.join(&rec.image_path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut image = imgen::from_pgm(&bytes).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        image.label = Some(rec.device_id.clone());
        image.meta = Some(rec.meta());
        images.push(LabeledPhenotype { label: rec.device_id.clone(), image });
    }
    Ok(LoadedDataset { manifest, images, manifest_hash })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puf_sim::{generate_dataset, EnvCondition};

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(2, &[EnvCondition::ideal()], 1, 9, None).unwrap();
        let path = write_dataset(dir.path(), &ds.manifest, &ds.images).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.manifest, ds.manifest);
        for (a, b) in loaded.images.iter().zip(&ds.images) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.image.pixels, b.image.pixels);
        }
        assert_eq!(loaded.manifest_hash, sha256_hex(&std::fs::read(&path).unwrap()));
    }

    #[test]
    fn file_names_are_canonical() {
        let meta = ResponseMeta {
            device_id: "Alpha".into(),
            pattern: ChallengePattern::Alt55,
            env: EnvCondition { temp_c: 40.0, voltage_v: 1.27 },
            repeat: 2,
        };
        assert_eq!(image_file_name(&meta), "Alpha_P_55_40C_1.27V_r2.pgm");
    }
}
