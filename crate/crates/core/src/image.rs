//! In-memory image containers shared by every stage of the pipeline.
//!
//! Pixels are stored as interleaved `f32` in row-major `H×W×C` order with
//! intensities normalised to `[0, 1]`.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Luminance weights applied to RGB triples (ITU-R BT.601).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Smallest side length accepted for ingested images.
pub const MIN_INGEST_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Thermal,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Visual => 3,
            Modality::Thermal => 1,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Modality::Visual => "rgb",
            Modality::Thermal => "ir",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    pub source: Option<String>,
}

impl RawImage {
    /// Builds an image from interleaved samples, checking shape and range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Validation(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "zero-sized image ({height}x{width})"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "expected {} samples for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Validation(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            source: None,
        })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by evaluating `f(row, col, channel)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::MIN, f32::max)
    }

    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::MAX, f32::min)
    }

    /// Rejects images too small to be meaningful network inputs.
    pub fn check_ingest_size(&self) -> Result<()> {
        if self.height < MIN_INGEST_SIDE || self.width < MIN_INGEST_SIDE {
            return Err(Error::Validation(format!(
                "image {}x{} is smaller than the {MIN_INGEST_SIDE}x{MIN_INGEST_SIDE} minimum{}",
                self.height,
                self.width,
                self.source
                    .as_deref()
                    .map(|s| format!(" ({s})"))
                    .unwrap_or_default()
            )));
        }
        Ok(())
    }

    /// Single-channel luminance: BT.601 weights for RGB, identity for one channel.
    pub fn luminance(&self) -> Plane {
        let data = match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|px| {
                    // Gray pixels map to themselves exactly.
                    if px[0] == px[1] && px[1] == px[2] {
                        return px[0] as f64;
                    }
                    LUMA_WEIGHTS[0] * px[0] as f64
                        + LUMA_WEIGHTS[1] * px[1] as f64
                        + LUMA_WEIGHTS[2] * px[2] as f64
                })
                .collect(),
        };
        Plane {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Converts a three-channel image to single-channel luminance.
    pub fn to_gray(&self) -> RawImage {
        if self.channels == 1 {
            return self.clone();
        }
        let lum = self.luminance();
        RawImage {
            height: self.height,
            width: self.width,
            channels: 1,
            data: lum.data.iter().map(|&v| (v as f32).clamp(0.0, 1.0)).collect(),
            source: self.source.clone(),
        }
    }

    /// Replicates a single channel three times; three-channel images pass through.
    pub fn replicate3(&self) -> RawImage {
        if self.channels == 3 {
            return self.clone();
        }
        RawImage {
            height: self.height,
            width: self.width,
            channels: 3,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
            source: self.source.clone(),
        }
    }

    /// `(1, C, H, W)` tensor in the requested dtype.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.height, self.width, self.channels), device)?
            .permute((2, 0, 1))?
            .unsqueeze(0)?
            .to_dtype(dtype)?
            .contiguous()?;
        Ok(t)
    }

    /// Inverse of [`RawImage::to_tensor`] for a `(C, H, W)` tensor. Values are
    /// clamped into `[0, 1]`.
    pub fn from_chw_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        let data = t
            .to_dtype(DType::F32)?
            .permute((1, 2, 0))?
            .flatten_all()?
            .to_vec1::<f32>()?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in image tensor".into()));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(h, w, c, data)
    }
}

/// Generator output: an `H×W×3` image strictly inside `(0, 1)` when produced
/// by the network's sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedImage(pub RawImage);

impl FusedImage {
    pub fn new(image: RawImage) -> Result<Self> {
        if image.channels() != 3 {
            return Err(Error::Shape(format!(
                "fused image must have 3 channels, got {}",
                image.channels()
            )));
        }
        Ok(Self(image))
    }

    pub fn image(&self) -> &RawImage {
        &self.0
    }
}

impl std::ops::Deref for FusedImage {
    type Target = RawImage;

    fn deref(&self) -> &RawImage {
        &self.0
    }
}

/// A single-channel `f64` plane used by the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_channels() {
        assert!(RawImage::new(2, 2, 1, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(RawImage::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(RawImage::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn luminance_of_gray_is_identity() {
        let img = RawImage::from_fn(3, 4, 1, |r, c, _| (r * 4 + c) as f32 / 12.0).unwrap();
        let lum = img.luminance();
        for (a, b) in lum.data.iter().zip(img.data()) {
            assert_eq!(*a, *b as f64);
        }
    }

    #[test]
    fn tensor_round_trip() {
        let img = RawImage::from_fn(4, 5, 3, |r, c, ch| ((r + c + ch) % 7) as f32 / 7.0).unwrap();
        let t = img.to_tensor(DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 4, 5]);
        let back = RawImage::from_chw_tensor(&t.squeeze(0).unwrap()).unwrap();
        assert_eq!(back, img);
    }
}
