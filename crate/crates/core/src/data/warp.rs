use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ImagePair;
use crate::error::{Error, Result};
use crate::image::RawImage;

/// Geometric and photometric perturbation applied to the thermal image.
///
/// The warp rotates about the image centre (positive degrees turn the
/// content counter-clockwise on screen), then scales about the centre, then
/// translates by `(dx, dy)` pixels where `dx` moves content along columns
/// and `dy` along rows. `crop_fraction` narrows the field of view: the
/// central `(1 - crop)` window is stretched back to full size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentSpec {
    pub dx: f64,
    pub dy: f64,
    pub rotation_deg: f64,
    pub scale: f64,
    pub crop_fraction: f64,
    pub noise_sigma: f64,
}

impl Default for MisalignmentSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl MisalignmentSpec {
    pub const fn identity() -> Self {
        Self {
            dx: 0.0,
            dy: 0.0,
            rotation_deg: 0.0,
            scale: 1.0,
            crop_fraction: 0.0,
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.dx,
            self.dy,
            self.rotation_deg,
            self.scale,
            self.crop_fraction,
            self.noise_sigma,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("misalignment spec has non-finite fields".into()));
        }
        if self.scale <= 0.0 {
            return Err(Error::Validation(format!(
                "misalignment scale must be > 0, got {}",
                self.scale
            )));
        }
        if !(0.0..0.5).contains(&self.crop_fraction) {
            return Err(Error::Validation(format!(
                "crop fraction must lie in [0, 0.5), got {}",
                self.crop_fraction
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Validation("noise sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn is_geometric_identity(&self) -> bool {
        self.dx == 0.0
            && self.dy == 0.0
            && self.rotation_deg == 0.0
            && self.scale == 1.0
            && self.crop_fraction == 0.0
    }

    /// Parses `dx,dy,rotation_deg,scale,crop_fraction,noise_sigma`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 6 {
            return Err(Error::Validation(format!(
                "expected 6 comma-separated values (dx,dy,rot,scale,crop,noise), got `{text}`"
            )));
        }
        let mut v = [0.0; 6];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::Validation(format!("`{p}` is not a number")))?;
        }
        let spec = Self {
            dx: v[0],
            dy: v[1],
            rotation_deg: v[2],
            scale: v[3],
            crop_fraction: v[4],
            noise_sigma: v[5],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Uniformly samples a spec within the given magnitudes.
    pub fn sample<R: Rng>(
        rng: &mut R,
        size: (usize, usize),
        max_shift_fraction: f64,
        max_rotation_deg: f64,
        max_scale_dev: f64,
        noise_sigma: f64,
    ) -> Self {
        let (h, w) = size;
        let sym = |rng: &mut R, m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        Self {
            dx: sym(rng, max_shift_fraction * w as f64),
            dy: sym(rng, max_shift_fraction * h as f64),
            rotation_deg: sym(rng, max_rotation_deg),
            scale: 1.0 + sym(rng, max_scale_dev),
            crop_fraction: 0.0,
            noise_sigma,
        }
    }

    fn effective_scale(&self) -> f64 {
        self.scale / (1.0 - self.crop_fraction)
    }

    /// Maps a `(row, col)` position in the source frame to the warped frame.
    pub fn forward_point(&self, size: (usize, usize), row: f64, col: f64) -> (f64, f64) {
        let (cy, cx) = centre(size);
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let s = self.effective_scale();
        let (u, v) = (col - cx, row - cy);
        let x = cx + self.dx + s * (cos * u + sin * v);
        let y = cy + self.dy + s * (-sin * u + cos * v);
        (y, x)
    }

    /// Maps a warped-frame `(row, col)` back to its source position.
    pub fn inverse_point(&self, size: (usize, usize), row: f64, col: f64) -> (f64, f64) {
        let (cy, cx) = centre(size);
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let s = self.effective_scale();
        let u = (col - cx - self.dx) / s;
        let v = (row - cy - self.dy) / s;
        let x = cx + cos * u - sin * v;
        let y = cy + sin * u + cos * v;
        (y, x)
    }

    pub fn radius_scale(&self) -> f64 {
        self.effective_scale()
    }
}

fn centre((h, w): (usize, usize)) -> (f64, f64) {
    ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0)
}

/// Result of [`inject_misalignment`].
#[derive(Debug, Clone)]
pub struct WarpOutcome {
    pub pair: ImagePair,
    /// Fraction of output pixels whose source lies outside the original frame.
    pub out_of_frame: f64,
    pub warning: Option<String>,
}

/// Warps and perturbs the thermal image; the visual image is untouched.
pub fn inject_misalignment(pair: &ImagePair, spec: &MisalignmentSpec, seed: u64) -> Result<WarpOutcome> {
    spec.validate()?;
    if !pair.same_size() {
        return Err(Error::Shape(format!(
            "misalignment needs equal sizes, got visual {:?} and thermal {:?}",
            pair.visual.dims(),
            pair.thermal.dims()
        )));
    }
    let (warped, out_of_frame) = if spec.is_geometric_identity() {
        (pair.thermal.clone(), 0.0)
    } else {
        warp_image(&pair.thermal, spec)
    };
    let thermal = if spec.noise_sigma > 0.0 {
        add_noise(&warped, spec.noise_sigma, seed)
    } else {
        warped
    };
    let warning = (out_of_frame > 0.5).then(|| {
        format!(
            "warp moves {:.0}% of the thermal content out of frame",
            out_of_frame * 100.0
        )
    });
    Ok(WarpOutcome {
        pair: ImagePair {
            visual: pair.visual.clone(),
            thermal,
            aligned: false,
        },
        out_of_frame,
        warning,
    })
}

fn warp_image(img: &RawImage, spec: &MisalignmentSpec) -> (RawImage, f64) {
    let size = img.dims();
    let (h, w) = size;
    let mut outside = 0usize;
    let mut out = RawImage::from_fn(h, w, img.channels(), |r, c, k| {
        let (sy, sx) = spec.inverse_point(size, r as f64, c as f64);
        if k == 0
            && (sy < -0.5 || sy > h as f64 - 0.5 || sx < -0.5 || sx > w as f64 - 0.5)
        {
            outside += 1;
        }
        sample_clamped(img, sy, sx, k)
    })
    .expect("bilinear sampling preserves the unit range");
    out.source = img.source.clone();
    (out, outside as f64 / (h * w) as f64)
}

/// Bilinear sample with edge replication outside the frame.
fn sample_clamped(img: &RawImage, row: f64, col: f64, k: usize) -> f32 {
    let (h, w) = img.dims();
    let y = row.clamp(0.0, (h - 1) as f64);
    let x = col.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = img.get(y0, x0, k) as f64 * (1.0 - fx) + img.get(y0, x1, k) as f64 * fx;
    let bottom = img.get(y1, x0, k) as f64 * (1.0 - fx) + img.get(y1, x1, k) as f64 * fx;
    ((top * (1.0 - fy) + bottom * fy) as f32).clamp(0.0, 1.0)
}

fn add_noise(img: &RawImage, sigma: f64, seed: u64) -> RawImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated as finite and non-negative");
    let data: Vec<f32> = img
        .data()
        .iter()
        .map(|&v| (v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32)
        .collect();
    let mut out = RawImage::new(img.height(), img.width(), img.channels(), data)
        .expect("noise output is clipped to the unit range");
    out.source = img.source.clone();
    out
}
