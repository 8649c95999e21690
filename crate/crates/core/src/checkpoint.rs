//! Versioned model checkpoints.
//!
//! Layout: the 8-byte magic `TGCNCKPT`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every tensor as little-endian `f64` values in
//! row-major order, in the order listed by the header.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::preprocess::PreprocessStats;
use crate::train::{TrainConfig, TrainedModel};

pub const MAGIC: &[u8; 8] = b"TGCNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    schema_fingerprint: String,
    dims: ModelDims,
    preprocess_stats: PreprocessStats,
    train_config: TrainConfig,
    threshold: f64,
    created_at: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schema_fingerprint: String,
    pub dims: ModelDims,
    pub preprocess_stats: PreprocessStats,
    pub params: ModelParams,
    pub train_config: TrainConfig,
    /// Operating threshold chosen at training time.
    pub threshold: f64,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel, threshold: f64) -> Self {
        let created_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            schema_fingerprint: model.schema_fingerprint.clone(),
            dims: model.dims.clone(),
            preprocess_stats: model.stats.clone(),
            params: model.params.clone(),
            train_config: model.config.clone(),
            threshold,
            created_at,
        }
    }

    pub fn model(&self) -> TrainedModel {
        TrainedModel {
            schema_fingerprint: self.schema_fingerprint.clone(),
            dims: self.dims.clone(),
            params: self.params.clone(),
            stats: self.preprocess_stats.clone(),
            config: self.train_config.clone(),
        }
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        self.params.check_dims(&self.dims)?;
        let header = Header {
            format_version: FORMAT_VERSION,
            schema_fingerprint: self.schema_fingerprint.clone(),
            dims: self.dims.clone(),
            preprocess_stats: self.preprocess_stats.clone(),
            train_config: self.train_config.clone(),
            threshold: self.threshold,
            created_at: self.created_at,
            tensors: self
                .params
                .named_tensors()
                .into_iter()
                .map(|(name, t)| TensorEntry { name, rows: t.nrows(), cols: t.ncols() })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let mut buf = Vec::with_capacity(8 * self.params.len());
        for x in self.params.flatten() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        input
            .read_exact(&mut len)
            .map_err(|_| Error::Checkpoint("truncated header length".into()))?;
        let len = usize::try_from(u64::from_le_bytes(len))
            .map_err(|_| Error::Checkpoint("header length overflows".into()))?;
        let mut json = vec![0u8; len];
        input
            .read_exact(&mut json)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&json)
            .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        header
            .dims
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid dimensions: {e}")))?;
        let mut params = ModelParams::zeros(&header.dims);
        let expected: Vec<TensorEntry> = params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| TensorEntry { name, rows: t.nrows(), cols: t.ncols() })
            .collect();
        if expected != header.tensors {
            return Err(Error::Checkpoint("tensor manifest does not match the declared dimensions".into()));
        }
        let mut data = Vec::new();
        input.read_to_end(&mut data)?;
        if data.len() != 8 * params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} bytes of tensor data, found {}",
                8 * params.len(),
                data.len()
            )));
        }
        let flat: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.assign_flat(&flat)?;
        Ok(Self {
            schema_fingerprint: header.schema_fingerprint,
            dims: header.dims,
            preprocess_stats: header.preprocess_stats,
            params,
            train_config: header.train_config,
            threshold: header.threshold,
            created_at: header.created_at,
        })
    }

    pub fn check_schema(&self, fingerprint: &str) -> Result<()> {
        if self.schema_fingerprint == fingerprint {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "schema fingerprint mismatch: checkpoint {}, cohort {fingerprint}",
                self.schema_fingerprint
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::FeatureStats;

    fn sample() -> Checkpoint {
        let dims = ModelDims::new(3, vec![2, 4], 6);
        Checkpoint {
            schema_fingerprint: "abc".into(),
            params: ModelParams::init(&dims, 4).unwrap(),
            dims,
            preprocess_stats: PreprocessStats {
                features: vec![
                    FeatureStats::Numeric { median: 0.1, mean: 1.0 / 3.0, std: 2.0f64.sqrt() },
                    FeatureStats::Binary,
                    FeatureStats::Categorical { mode: 1 },
                ],
                fitted_on: 10,
                stats_after_impute: false,
            },
            train_config: TrainConfig::default(),
            threshold: 0.5,
            created_at: 1,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample();
        let mut buf = Vec::new();
        ckpt.save(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = Checkpoint::load(buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        let bits = |p: &ModelParams| p.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&ckpt.params));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        sample().save(&mut buf).unwrap();
        assert!(Checkpoint::load(&buf[..buf.len() - 1]).is_err());
        assert!(Checkpoint::load(&b"NOTACKPT"[..]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::load(bad.as_slice()).is_err());
    }

    #[test]
    fn fingerprint_check() {
        let c = sample();
        assert!(c.check_schema("abc").is_ok());
        assert!(matches!(c.check_schema("def"), Err(Error::Checkpoint(_))));
    }
}
