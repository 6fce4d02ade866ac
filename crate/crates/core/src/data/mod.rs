//! Image-pair ingestion, resizing, synthetic scene generation, misalignment
//! injection, dataset splitting and batching.

mod corpus;
mod resize;
mod split;
mod synthetic;
mod warp;

use std::path::Path;

use candle_core::{DType, Device, Tensor};

pub use corpus::{
    generate_corpus, load_dataset_dir, read_manifest, write_corpus, CorpusItem, CorpusManifest,
    CorpusSpec, ManifestItem, MisalignmentMode, MANIFEST_FILE, write_png,
};
pub use resize::resize_bilinear;
pub use split::{epoch_batches, split_dataset, BatchIterator, DatasetSplit};
pub use synthetic::{generate_synthetic_scene, SceneTruth, SynthConfig};
pub use warp::{inject_misalignment, MisalignmentSpec, WarpOutcome};

use crate::error::{Error, Result};
use crate::image::{Modality, RawImage};

/// One visual/thermal pair. Resolutions may differ until [`preprocess_pair`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub visual: RawImage,
    pub thermal: RawImage,
    /// True only for synthetic pairs before any warp was applied.
    pub aligned: bool,
}

impl ImagePair {
    pub fn new(visual: RawImage, thermal: RawImage, aligned: bool) -> Result<Self> {
        if visual.channels() != 3 {
            return Err(Error::Validation(format!(
                "visual image must have 3 channels, got {}",
                visual.channels()
            )));
        }
        if thermal.channels() != 1 {
            return Err(Error::Validation(format!(
                "thermal image must have 1 channel, got {}",
                thermal.channels()
            )));
        }
        Ok(Self {
            visual,
            thermal,
            aligned,
        })
    }

    pub fn same_size(&self) -> bool {
        self.visual.dims() == self.thermal.dims()
    }
}

/// Loads one image, normalising to `[0, 1]` by the container maximum.
///
/// Thermal images stored with three channels are reduced to luminance;
/// single-channel visual images are replicated to three channels.
pub fn load_image(path: &Path, modality: Modality) -> Result<RawImage> {
    std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let dynamic = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Validation(format!(
            "zero-sized image {}",
            path.display()
        )));
    }
    let color_channels = dynamic.color().channel_count();
    let is_gray = color_channels <= 2;
    let image = if is_gray {
        let luma = dynamic.to_luma32f();
        let gray = RawImage::new(h, w, 1, clamp_unit(luma.into_raw()))?;
        match modality {
            Modality::Thermal => gray,
            Modality::Visual => gray.replicate3(),
        }
    } else {
        let rgb = RawImage::new(h, w, 3, clamp_unit(dynamic.to_rgb32f().into_raw()))?;
        match modality {
            Modality::Visual => rgb,
            Modality::Thermal => rgb.to_gray(),
        }
    };
    let image = image.with_source(path.display().to_string());
    image.check_ingest_size()?;
    Ok(image)
}

fn clamp_unit(mut v: Vec<f32>) -> Vec<f32> {
    for x in &mut v {
        *x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
    }
    v
}

/// Loads a visual/thermal pair without resizing either image.
pub fn load_image_pair(visual_path: &Path, thermal_path: &Path) -> Result<ImagePair> {
    let visual = load_image(visual_path, Modality::Visual)?;
    let thermal = load_image(thermal_path, Modality::Thermal)?;
    ImagePair::new(visual, thermal, false)
}

/// Resizes both images of a pair to `target` (bilinear).
///
/// `factor` is the network's total downsampling factor; both target sides
/// must be at least 32 and divisible by it.
pub fn preprocess_pair(pair: &ImagePair, target: (usize, usize), factor: usize) -> Result<ImagePair> {
    let (th, tw) = target;
    if th < 32 || tw < 32 {
        return Err(Error::Config(format!(
            "target size {th}x{tw} is below the 32x32 minimum"
        )));
    }
    if factor == 0 || th % factor != 0 || tw % factor != 0 {
        return Err(Error::Config(format!(
            "target size {th}x{tw} is not divisible by the network downsampling factor {factor}"
        )));
    }
    Ok(ImagePair {
        visual: resize_bilinear(&pair.visual, th, tw),
        thermal: resize_bilinear(&pair.thermal, th, tw),
        aligned: pair.aligned,
    })
}

/// Stacks same-sized pairs into `(B,3,H,W)` visual and `(B,1,H,W)` thermal tensors.
pub fn stack_batch(pairs: &[&ImagePair], dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Validation("empty batch".into()))?;
    let dims = first.visual.dims();
    let mut visual = Vec::with_capacity(pairs.len());
    let mut thermal = Vec::with_capacity(pairs.len());
    for p in pairs {
        if p.visual.dims() != dims || p.thermal.dims() != dims {
            return Err(Error::Shape(format!(
                "batch mixes image sizes: {:?} vs visual {:?} / thermal {:?}",
                dims,
                p.visual.dims(),
                p.thermal.dims()
            )));
        }
        visual.push(p.visual.to_tensor(dtype, device)?);
        thermal.push(p.thermal.to_tensor(dtype, device)?);
    }
    Ok((Tensor::cat(&visual, 0)?, Tensor::cat(&thermal, 0)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(vh: usize, vw: usize, th: usize, tw: usize) -> ImagePair {
        let v = RawImage::from_fn(vh, vw, 3, |r, c, ch| ((r * 7 + c * 3 + ch) % 11) as f32 / 10.0)
            .unwrap();
        let t = RawImage::from_fn(th, tw, 1, |r, c, _| ((r + 2 * c) % 5) as f32 / 4.0).unwrap();
        ImagePair::new(v, t, false).unwrap()
    }

    #[test]
    fn preprocess_brings_both_to_target() {
        let p = pair(512, 640, 256, 336);
        let out = preprocess_pair(&p, (256, 256), 16).unwrap();
        assert_eq!(out.visual.dims(), (256, 256));
        assert_eq!(out.thermal.dims(), (256, 256));
        assert!(out.same_size());
    }

    #[test]
    fn preprocess_identity_is_bit_identical() {
        let p = pair(64, 64, 64, 64);
        let out = preprocess_pair(&p, (64, 64), 16).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn preprocess_rejects_non_divisible_and_small_targets() {
        let p = pair(64, 64, 64, 64);
        assert!(matches!(
            preprocess_pair(&p, (72, 64), 16),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            preprocess_pair(&p, (16, 16), 16),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pair_channel_contract() {
        let v = RawImage::constant(8, 8, 1, 0.5).unwrap();
        let t = RawImage::constant(8, 8, 1, 0.5).unwrap();
        assert!(ImagePair::new(v, t, false).is_err());
    }

    #[test]
    fn stack_batch_shapes() {
        let a = pair(32, 32, 32, 32);
        let b = pair(32, 32, 32, 32);
        let (v, t) = stack_batch(&[&a, &b], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(v.dims(), &[2, 3, 32, 32]);
        assert_eq!(t.dims(), &[2, 1, 32, 32]);
        let c = pair(64, 64, 64, 64);
        assert!(stack_batch(&[&a, &c], DType::F32, &Device::Cpu).is_err());
    }
}
