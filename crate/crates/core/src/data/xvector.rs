use std::path::PathBuf;

use byteorder::{ByteOrder, LittleEndian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::DataError;
use crate::model::{XVector, XVectorSource};

/// Where per-speaker x-vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum XVectorStore {
    /// `<dir>/<speaker>.xv`, `dim` little-endian f64 values.
    Dir { dir: PathBuf, dim: usize },
    /// Deterministic unit-norm pseudo-embedding derived from the speaker id.
    Stub { dim: usize },
}

impl XVectorStore {
    pub fn dim(&self) -> usize {
        match self {
            Self::Dir { dim, .. } | Self::Stub { dim } => *dim,
        }
    }

    pub fn lookup(&self, speaker: &str) -> Result<XVector, DataError> {
        match self {
            Self::Dir { dir, dim } => {
                let path = dir.join(format!("{speaker}.xv"));
                let bytes = std::fs::read(&path).map_err(|e| DataError::XVectorLookup {
                    speaker: speaker.into(),
                    detail: format!("{}: {e}", path.display()),
                })?;
                if bytes.len() != dim * 8 {
                    return Err(DataError::XVectorFormat {
                        path: path.display().to_string(),
                        detail: format!("expected {dim} f64 values ({} bytes), found {} bytes", dim * 8, bytes.len()),
                    });
                }
                let mut values = vec![0.0; *dim];
                LittleEndian::read_f64_into(&bytes, &mut values);
                XVector::new(speaker, values, XVectorSource::File).map_err(|e| DataError::XVectorFormat {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })
            }
            Self::Stub { dim } => {
                let mut rng = ChaCha8Rng::from_seed(Sha256::digest(speaker.as_bytes()).into());
                let mut values: Vec<f64> = (0..*dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                values.iter_mut().for_each(|v| *v /= norm);
                Ok(XVector::new(speaker, values, XVectorSource::Stub)?)
            }
        }
    }
}
