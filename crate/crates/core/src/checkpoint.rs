//! `.mfck` checkpoint container.
//!
//! Layout: `MFCK` magic, format version (u32 LE), SHA-256 of the payload,
//! payload length (u64 LE), then the payload. The payload is a u64 LE
//! manifest length, a JSON manifest, and the little-endian array data the
//! manifest points into.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::TrainingConfig;

pub const MAGIC: &[u8; 4] = b"MFCK";
pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "mfck";
const HEADER_LEN: usize = 4 + 4 + 32 + 8;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_name(&self) -> &'static str {
        match self {
            Self::F32(_) => "f32",
            Self::F64(_) => "f64",
        }
    }

    fn bit_eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::F32(a), Self::F32(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (Self::F64(a), Self::F64(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Result<Self> {
        let flat = t.flatten_all()?;
        let data = match t.dtype() {
            DType::F64 => ArrayData::F64(flat.to_vec1::<f64>()?),
            _ => ArrayData::F32(flat.to_dtype(DType::F32)?.to_vec1::<f32>()?),
        };
        Ok(Self {
            name: name.into(),
            shape: t.dims().to_vec(),
            data,
        })
    }

    /// Rebuilds the tensor and casts it to `dtype`.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = match &self.data {
            ArrayData::F32(v) => Tensor::from_slice(v, self.shape.as_slice(), device)?,
            ArrayData::F64(v) => Tensor::from_slice(v, self.shape.as_slice(), device)?,
        };
        Ok(t.to_dtype(dtype)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub config: TrainingConfig,
    /// Small integer state such as optimizer step counts.
    pub counters: BTreeMap<String, u64>,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    step: u64,
    config: TrainingConfig,
    counters: BTreeMap<String, u64>,
    arrays: Vec<ArrayEntry>,
}

impl Checkpoint {
    pub fn new(step: u64, config: TrainingConfig) -> Self {
        Self {
            version: FORMAT_VERSION,
            step,
            config,
            counters: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name)
            .ok_or_else(|| Error::Integrity(format!("checkpoint has no array `{name}`")))
    }

    /// Equality that compares floating-point arrays by bit pattern.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.step == other.step
            && self.config == other.config
            && self.counters == other.counters
            && self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.bit_eq(&b.data))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            let expected: usize = a.shape.iter().product();
            if expected != a.data.len() {
                return Err(Error::Shape(format!(
                    "array `{}` has shape {:?} but {} values",
                    a.name,
                    a.shape,
                    a.data.len()
                )));
            }
            let offset = blob.len() as u64;
            match &a.data {
                ArrayData::F32(v) => v.iter().for_each(|x| blob.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F64(v) => v.iter().for_each(|x| blob.extend_from_slice(&x.to_le_bytes())),
            }
            entries.push(ArrayEntry {
                name: a.name.clone(),
                dtype: a.data.dtype_name().into(),
                shape: a.shape.clone(),
                offset,
                len: blob.len() as u64 - offset,
            });
        }
        let manifest = serde_json::to_vec(&Manifest {
            step: self.step,
            config: self.config.clone(),
            counters: self.counters.clone(),
            arrays: entries,
        })?;
        let mut payload = Vec::with_capacity(8 + manifest.len() + blob.len());
        payload.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        payload.extend_from_slice(&manifest);
        payload.extend_from_slice(&blob);

        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&payload));
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Integrity("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Integrity("file is truncated inside the header".into()));
        }
        let checksum = &bytes[8..40];
        let payload_len = u64::from_le_bytes(bytes[40..48].try_into().expect("8 bytes")) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != payload_len {
            return Err(Error::Integrity(format!(
                "payload is {} bytes but the header declares {payload_len}",
                payload.len()
            )));
        }
        if Sha256::digest(payload).as_slice() != checksum {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        let bad = |msg: &str| Error::Integrity(msg.to_string());
        if payload.len() < 8 {
            return Err(bad("payload too short"));
        }
        let mlen = u64::from_le_bytes(payload[..8].try_into().expect("8 bytes")) as usize;
        let rest = &payload[8..];
        if mlen > rest.len() {
            return Err(bad("manifest extends past the end of the payload"));
        }
        let manifest: Manifest = serde_json::from_slice(&rest[..mlen])
            .map_err(|e| Error::Integrity(format!("unreadable manifest: {e}")))?;
        let blob = &rest[mlen..];
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for e in manifest.arrays {
            let (start, len) = (e.offset as usize, e.len as usize);
            let chunk = start
                .checked_add(len)
                .and_then(|end| blob.get(start..end))
                .ok_or_else(|| Error::Integrity(format!("array `{}` is out of bounds", e.name)))?;
            let n: usize = e.shape.iter().product();
            let data = match e.dtype.as_str() {
                "f32" if len == 4 * n => ArrayData::F32(
                    chunk
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                "f64" if len == 8 * n => ArrayData::F64(
                    chunk
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                other => {
                    return Err(Error::Integrity(format!(
                        "array `{}` has dtype {other} and {len} bytes for shape {:?}",
                        e.name, e.shape
                    )))
                }
            };
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self {
            version,
            step: manifest.step,
            config: manifest.config,
            counters: manifest.counters,
            arrays,
        })
    }
}

/// Writes to a temporary sibling first so a crash never leaves a partial file.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("mfck.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(17, TrainingConfig::default());
        c.counters.insert("adam.gen".into(), 17);
        c.arrays.push(NamedArray {
            name: "a".into(),
            shape: vec![2, 2],
            data: ArrayData::F32(vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0e-39]),
        });
        c.arrays.push(NamedArray {
            name: "b".into(),
            shape: vec![3],
            data: ArrayData::F64(vec![0.1, 1e300, -2.5]),
        });
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mfck");
        let c = sample();
        save_checkpoint(&c, &path).unwrap();
        assert!(load_checkpoint(&path).unwrap().bit_eq(&c));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Version { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [10, HEADER_LEN + 3, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))));
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Integrity(_))));
        assert!(matches!(Checkpoint::from_bytes(b"PNG\0\0\0\0\0"), Err(Error::Integrity(_))));
    }

    #[test]
    fn tensors_survive_conversion() {
        let t = Tensor::arange(0f32, 6.0, &Device::Cpu).unwrap().reshape((2, 3)).unwrap();
        let a = NamedArray::from_tensor("t", &t).unwrap();
        let back = a.to_tensor(DType::F32, &Device::Cpu).unwrap();
        assert_eq!(back.to_vec2::<f32>().unwrap(), t.to_vec2::<f32>().unwrap());
    }
}
