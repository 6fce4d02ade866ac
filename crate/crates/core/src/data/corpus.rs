//! On-disk synthetic corpora and paired-directory ingestion.
//!
//! Pairs are stored as `<stem>_rgb.png` / `<stem>_ir.png` next to a
//! `manifest.json` that records each item's seed, ground truth and warp.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::{generate_synthetic_scene, SceneTruth, SynthConfig};
use super::warp::{inject_misalignment, MisalignmentSpec};
use super::{load_image_pair, ImagePair};
use crate::error::{Error, Result};
use crate::image::RawImage;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MisalignmentMode {
    None,
    Fixed { spec: MisalignmentSpec },
    Random {
        max_shift_fraction: f64,
        max_rotation_deg: f64,
        max_scale_dev: f64,
        noise_sigma: f64,
    },
}

impl MisalignmentMode {
    /// Accepts `none`, `random:shift_frac,rot_deg,scale_dev,noise`, or a
    /// fixed `dx,dy,rot,scale,crop,noise` spec.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("none") {
            return Ok(Self::None);
        }
        if let Some(rest) = text.strip_prefix("random:") {
            let v: Vec<f64> = rest
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Validation(format!("`{p}` is not a number")))
                })
                .collect::<Result<_>>()?;
            if v.len() != 4 || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Validation(format!(
                    "random misalignment needs 4 non-negative values (shift_frac,rot_deg,scale_dev,noise), got `{rest}`"
                )));
            }
            if v[2] >= 1.0 {
                return Err(Error::Validation("scale deviation must be < 1".into()));
            }
            return Ok(Self::Random {
                max_shift_fraction: v[0],
                max_rotation_deg: v[1],
                max_scale_dev: v[2],
                noise_sigma: v[3],
            });
        }
        Ok(Self::Fixed {
            spec: MisalignmentSpec::parse(text)?,
        })
    }

    fn spec_for(&self, seed: u64, size: (usize, usize)) -> MisalignmentSpec {
        match *self {
            Self::None => MisalignmentSpec::identity(),
            Self::Fixed { spec } => spec,
            Self::Random {
                max_shift_fraction,
                max_rotation_deg,
                max_scale_dev,
                noise_sigma,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_3A2B);
                MisalignmentSpec::sample(
                    &mut rng,
                    size,
                    max_shift_fraction,
                    max_rotation_deg,
                    max_scale_dev,
                    noise_sigma,
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub count: usize,
    pub size: (usize, usize),
    pub n_blobs: usize,
    pub misalignment: MisalignmentMode,
    pub seed: u64,
    pub synth: SynthConfig,
}

impl CorpusSpec {
    pub fn item_seed(&self, index: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64 + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub stem: String,
    pub seed: u64,
    pub pair: ImagePair,
    pub truth: SceneTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub stem: String,
    pub seed: u64,
    pub truth: SceneTruth,
    pub misalignment: MisalignmentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub spec: CorpusSpec,
    pub items: Vec<ManifestItem>,
}

/// Generates every item of a corpus in memory.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusItem>> {
    let (h, w) = spec.size;
    (0..spec.count)
        .map(|i| {
            let seed = spec.item_seed(i);
            let (pair, mut truth) = generate_synthetic_scene(seed, h, w, spec.n_blobs, &spec.synth)?;
            let warp = spec.misalignment.spec_for(seed, (h, w));
            let pair = if warp == MisalignmentSpec::identity() {
                pair
            } else {
                let out = inject_misalignment(&pair, &warp, seed.wrapping_add(1))?;
                if let Some(w) = &out.warning {
                    log::warn!("item {i}: {w}");
                }
                out.pair
            };
            truth.warp_applied = warp;
            Ok(CorpusItem {
                stem: format!("scene_{i:05}"),
                seed,
                pair,
                truth,
            })
        })
        .collect()
}

/// Writes PNG pairs plus the manifest; returns every path written.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec, items: &[CorpusItem]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(items.len() * 2 + 1);
    for item in items {
        let rgb = dir.join(format!("{}_rgb.png", item.stem));
        let ir = dir.join(format!("{}_ir.png", item.stem));
        write_png(&item.pair.visual, &rgb)?;
        write_png(&item.pair.thermal, &ir)?;
        written.push(rgb);
        written.push(ir);
    }
    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        spec: spec.clone(),
        items: items
            .iter()
            .map(|it| ManifestItem {
                stem: it.stem.clone(),
                seed: it.seed,
                truth: it.truth.clone(),
                misalignment: it.truth.warp_applied,
            })
            .collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes an image as 8-bit PNG (values rounded from `[0, 1]`).
pub fn write_png(img: &RawImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let color = if img.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(path, &bytes, w, h, color, image::ImageFormat::Png).map_err(
        |e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_path_buf(),
                msg: other.to_string(),
            },
        },
    )
}

const EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

/// Loads every `<stem>_rgb.*` / `<stem>_ir.*` pair in `dir`, sorted by stem.
///
/// Stems that have only one of the two files are reported together in a
/// single validation error.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<(String, ImagePair)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        if !EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        if let Some(base) = stem.strip_suffix("_rgb") {
            stems.entry(base.to_string()).or_default().0 = Some(path.clone());
        } else if let Some(base) = stem.strip_suffix("_ir") {
            stems.entry(base.to_string()).or_default().1 = Some(path.clone());
        }
    }
    let unmatched: Vec<&str> = stems
        .iter()
        .filter(|(_, (v, t))| v.is_none() || t.is_none())
        .map(|(s, _)| s.as_str())
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Validation(format!(
            "unpaired stems in {}: {}",
            dir.display(),
            unmatched.join(", ")
        )));
    }
    stems
        .into_iter()
        .map(|(stem, (v, t))| {
            let pair = load_image_pair(&v.expect("checked above"), &t.expect("checked above"))?;
            Ok((stem, pair))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(count: usize) -> CorpusSpec {
        CorpusSpec {
            count,
            size: (32, 48),
            n_blobs: 1,
            misalignment: MisalignmentMode::parse("random:0.05,5,0.02,0.01").unwrap(),
            seed: 4,
            synth: SynthConfig::default(),
        }
    }

    #[test]
    fn parse_modes() {
        assert_eq!(MisalignmentMode::parse("none").unwrap(), MisalignmentMode::None);
        assert!(matches!(
            MisalignmentMode::parse("1,0,0,1,0,0").unwrap(),
            MisalignmentMode::Fixed { .. }
        ));
        assert!(MisalignmentMode::parse("random:0.1,10").is_err());
        assert!(MisalignmentMode::parse("garbage").is_err());
    }

    #[test]
    fn write_then_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(3);
        let items = generate_corpus(&s).unwrap();
        let written = write_corpus(dir.path(), &s, &items).unwrap();
        assert_eq!(written.len(), 7);
        let loaded = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        for ((stem, pair), item) in loaded.iter().zip(&items) {
            assert_eq!(stem, &item.stem);
            assert_eq!(pair.visual.dims(), (32, 48));
            for (a, b) in pair.thermal.data().iter().zip(item.pair.thermal.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        let manifest = read_manifest(dir.path()).unwrap();
        assert_eq!(manifest.items.len(), 3);
        assert_eq!(manifest.spec, s);
        assert_eq!(manifest.items[1].truth, items[1].truth);
    }

    #[test]
    fn unmatched_stems_listed() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(2);
        let items = generate_corpus(&s).unwrap();
        write_corpus(dir.path(), &s, &items).unwrap();
        std::fs::remove_file(dir.path().join("scene_00001_ir.png")).unwrap();
        write_png(&items[0].pair.visual, &dir.path().join("extra_rgb.png")).unwrap();
        let err = load_dataset_dir(dir.path()).unwrap_err().to_string();
        assert!(err.contains("scene_00001") && err.contains("extra"), "{err}");
    }

    #[test]
    fn corpus_is_deterministic() {
        assert_eq!(generate_corpus(&spec(2)).unwrap(), generate_corpus(&spec(2)).unwrap());
    }
}
