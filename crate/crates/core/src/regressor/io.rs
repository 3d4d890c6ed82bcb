//! Model file: `DPOSEMDL` magic, little-endian u64 header length, JSON
//! header, then every tensor as little-endian f64 in header order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NormalizationStats, RegressorConfig, ResidualRegressor};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonModel;

pub const MODEL_MAGIC: &[u8; 8] = b"DPOSEMDL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: RegressorConfig,
    skeleton_checksum: String,
    stats: NormalizationStats,
    tensors: Vec<TensorEntry>,
    /// sha256 of the payload that follows the header.
    content_sha256: String,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl ResidualRegressor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.net.named_tensors();
        let mut payload = Vec::with_capacity(8 * named.iter().map(|t| t.2.len()).sum::<usize>());
        for (_, _, data) in &named {
            for v in *data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            format_version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            skeleton_checksum: self.skeleton_checksum.clone(),
            stats: self.stats.clone(),
            tensors: named
                .into_iter()
                .map(|(name, shape, _)| TensorEntry { name, shape })
                .collect(),
            content_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Truncated("model file shorter than its preamble".into()));
        }
        if &bytes[..8] != MODEL_MAGIC {
            return Err(Error::Schema("not a model file (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(16))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Truncated("model header extends past end of file".into()))?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| Error::Schema(format!("model header: {e}")))?;
        let found = value.get("format_version").and_then(|v| v.as_u64());
        if found != Some(MODEL_FORMAT_VERSION as u64) {
            return Err(Error::Version {
                found: found.map_or(0, |v| u32::try_from(v).unwrap_or(u32::MAX)),
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let header: Header = serde_json::from_value(value).map_err(|e| Error::Schema(format!("model header: {e}")))?;

        let payload = &bytes[header_end..];
        let j = header.config.num_landmarks;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = ResidualRegressor::init(header.config, header.skeleton_checksum, j, header.stats, &mut rng)?;
        let expected: Vec<TensorEntry> = model
            .net
            .named_tensors()
            .into_iter()
            .map(|(name, shape, _)| TensorEntry { name, shape })
            .collect();
        if expected != header.tensors {
            return Err(Error::Schema(
                "tensor index does not match the configured architecture".into(),
            ));
        }
        let total: usize = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if payload.len() < total * 8 {
            return Err(Error::Truncated(format!(
                "model payload has {} bytes, expected {}",
                payload.len(),
                total * 8
            )));
        }
        if payload.len() > total * 8 {
            return Err(Error::Schema("trailing bytes after model payload".into()));
        }
        if hex::encode(Sha256::digest(payload)) != header.content_sha256 {
            return Err(Error::Checksum("model payload checksum mismatch".into()));
        }
        let mut words = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for t in model.net.tensors_mut() {
            for v in t.iter_mut() {
                *v = words.next().expect("length checked");
            }
        }
        if model
            .net
            .named_tensors()
            .iter()
            .any(|t| t.2.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("model weights".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Loads a model and checks it was trained for `skeleton`.
    pub fn load_for(path: impl AsRef<Path>, skeleton: &SkeletonModel) -> Result<Self> {
        let model = Self::load(path)?;
        if model.config.num_landmarks != skeleton.num_landmarks() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} landmarks, skeleton has {}",
                model.config.num_landmarks,
                skeleton.num_landmarks()
            )));
        }
        if model.skeleton_checksum != skeleton.checksum() {
            return Err(Error::Checksum("model was trained for a different skeleton".into()));
        }
        Ok(model)
    }
}
