//! Procedural visual/thermal scenes with known hot-spot geometry.
//!
//! The thermal image is a dim, smoothly textured background with Gaussian
//! hot blobs. The visual image is muted terrain texture with a few flat
//! shapes. Blob positions are drawn independently of the visual content, so
//! nothing in the visual image marks where the blobs are.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::warp::MisalignmentSpec;
use super::ImagePair;
use crate::error::{Error, Result};
use crate::image::RawImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Thermal background intensity range.
    pub background: (f32, f32),
    /// Peak blob intensity range; the lower end must be at least 0.8.
    pub blob_peak: (f32, f32),
    pub min_radius: f64,
    /// Upper radius as a fraction of the shorter side.
    pub max_radius_fraction: f64,
    /// Number of flat shapes painted over the terrain.
    pub shapes: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            background: (0.05, 0.3),
            blob_peak: (0.85, 1.0),
            min_radius: 2.5,
            max_radius_fraction: 0.09,
            shapes: (2, 5),
        }
    }
}

/// Exact ground truth of a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    /// `(row, col)` in pixels, in the unwarped frame.
    pub blob_centers: Vec<(f64, f64)>,
    pub blob_radii: Vec<f64>,
    pub warp_applied: MisalignmentSpec,
}

impl SceneTruth {
    /// Boolean mask (row-major) of pixels within a blob radius, mapped through
    /// the recorded warp so it matches the thermal image as delivered.
    pub fn blob_mask(&self, size: (usize, usize)) -> Vec<bool> {
        let (h, w) = size;
        let blobs: Vec<((f64, f64), f64)> = self
            .blob_centers
            .iter()
            .zip(&self.blob_radii)
            .map(|(&(r, c), &rad)| {
                (
                    self.warp_applied.forward_point(size, r, c),
                    rad * self.warp_applied.radius_scale(),
                )
            })
            .collect();
        let mut mask = vec![false; h * w];
        for r in 0..h {
            for c in 0..w {
                mask[r * w + c] = blobs.iter().any(|&((br, bc), rad)| {
                    let (dr, dc) = (r as f64 - br, c as f64 - bc);
                    dr * dr + dc * dc <= rad * rad
                });
            }
        }
        mask
    }
}

/// Generates one aligned scene. Identical arguments give identical output.
pub fn generate_synthetic_scene(
    seed: u64,
    h: usize,
    w: usize,
    n_blobs: usize,
    config: &SynthConfig,
) -> Result<(ImagePair, SceneTruth)> {
    if h < 32 || w < 32 {
        return Err(Error::Generation(format!(
            "scene size {h}x{w} is below the 32x32 minimum"
        )));
    }
    if config.blob_peak.0 < 0.8 || config.blob_peak.1 > 1.0 || config.blob_peak.0 > config.blob_peak.1 {
        return Err(Error::Generation(format!(
            "blob peak range {:?} must lie within [0.8, 1]",
            config.blob_peak
        )));
    }
    if config.background.0 < 0.0 || config.background.1 >= 0.5 || config.background.0 > config.background.1 {
        return Err(Error::Generation(format!(
            "background range {:?} must lie within [0, 0.5)",
            config.background
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (centers, radii) = place_blobs(&mut rng, h, w, n_blobs, config)?;
    let thermal = thermal_image(&mut rng, h, w, &centers, &radii, config)?;
    let visual = visual_image(&mut rng, h, w, config)?;
    let pair = ImagePair::new(visual, thermal, true)?;
    Ok((
        pair,
        SceneTruth {
            blob_centers: centers,
            blob_radii: radii,
            warp_applied: MisalignmentSpec::identity(),
        },
    ))
}

fn place_blobs(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    n: usize,
    config: &SynthConfig,
) -> Result<(Vec<(f64, f64)>, Vec<f64>)> {
    let shorter = h.min(w) as f64;
    let max_r = (config.max_radius_fraction * shorter).max(config.min_radius);
    let min_r = config.min_radius;
    // Coverage bound: discs at their smallest radius must fit in half the frame.
    let min_area = n as f64 * std::f64::consts::PI * (min_r + 1.0).powi(2);
    if min_area > 0.5 * (h * w) as f64 {
        return Err(Error::Generation(format!(
            "{n} blobs cannot fit in a {h}x{w} scene"
        )));
    }
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut radii: Vec<f64> = Vec::with_capacity(n);
    const ATTEMPTS: usize = 500;
    for i in 0..n {
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let r = if max_r > min_r { rng.gen_range(min_r..=max_r) } else { min_r };
            let margin = r + 1.0;
            if 2.0 * margin >= shorter {
                break;
            }
            let row = rng.gen_range(margin..(h as f64 - margin));
            let col = rng.gen_range(margin..(w as f64 - margin));
            let clear = centers.iter().zip(&radii).all(|(&(cr, cc), &cr_rad)| {
                let d = ((row - cr).powi(2) + (col - cc).powi(2)).sqrt();
                d >= r + cr_rad + 2.0
            });
            if clear {
                centers.push((row, col));
                radii.push(r);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place blob {} of {n} without overlap in a {h}x{w} scene",
                i + 1
            )));
        }
    }
    Ok((centers, radii))
}

fn thermal_image(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    centers: &[(f64, f64)],
    radii: &[f64],
    config: &SynthConfig,
) -> Result<RawImage> {
    let noise = fractal_noise(rng, h, w, 16.0, 3);
    let (lo, hi) = config.background;
    let peaks: Vec<f32> = centers
        .iter()
        .map(|_| rng.gen_range(config.blob_peak.0..=config.blob_peak.1))
        .collect();
    RawImage::from_fn(h, w, 1, |r, c, _| {
        let mut v = lo + (hi - lo) * noise[r * w + c];
        for ((&(br, bc), &rad), &peak) in centers.iter().zip(radii).zip(&peaks) {
            let sigma = rad / 2.0;
            let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
            let blob = peak as f64 * (-d2 / (2.0 * sigma * sigma)).exp();
            v = v.max(blob as f32);
        }
        v.clamp(0.0, 1.0)
    })
}

const PALETTE: [[f32; 3]; 4] = [
    [0.22, 0.34, 0.16], // grass
    [0.42, 0.33, 0.22], // soil
    [0.46, 0.45, 0.42], // rock
    [0.16, 0.24, 0.13], // shrub
];

fn visual_image(rng: &mut ChaCha8Rng, h: usize, w: usize, config: &SynthConfig) -> Result<RawImage> {
    let mix_a = fractal_noise(rng, h, w, 20.0, 3);
    let mix_b = fractal_noise(rng, h, w, 11.0, 2);
    let grain = fractal_noise(rng, h, w, 3.0, 1);
    let n_shapes = rng.gen_range(config.shapes.0..=config.shapes.1.max(config.shapes.0));
    let shapes: Vec<Shape> = (0..n_shapes).map(|_| Shape::random(rng, h, w)).collect();
    RawImage::from_fn(h, w, 3, |r, c, k| {
        let i = r * w + c;
        let (a, b) = (mix_a[i], mix_b[i]);
        let base = lerp(
            lerp(PALETTE[0][k], PALETTE[1][k], a),
            lerp(PALETTE[2][k], PALETTE[3][k], a),
            b,
        );
        let mut v = base + 0.08 * (grain[i] - 0.5);
        if let Some(s) = shapes.iter().rev().find(|s| s.contains(r, c)) {
            v = 0.6 * s.color[k] + 0.4 * v;
        }
        v.clamp(0.0, 1.0)
    })
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

enum ShapeKind {
    Rect { r0: usize, c0: usize, r1: usize, c1: usize },
    Disc { r: f64, c: f64, radius: f64 },
}

struct Shape {
    kind: ShapeKind,
    color: [f32; 3],
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let color = [
            rng.gen_range(0.15..0.5),
            rng.gen_range(0.15..0.5),
            rng.gen_range(0.12..0.45),
        ];
        let kind = if rng.gen_bool(0.5) {
            let rh = rng.gen_range(h / 10..=h / 4).max(2);
            let rw = rng.gen_range(w / 10..=w / 4).max(2);
            let r0 = rng.gen_range(0..h - rh);
            let c0 = rng.gen_range(0..w - rw);
            ShapeKind::Rect {
                r0,
                c0,
                r1: r0 + rh,
                c1: c0 + rw,
            }
        } else {
            ShapeKind::Disc {
                r: rng.gen_range(0.0..h as f64),
                c: rng.gen_range(0.0..w as f64),
                radius: rng.gen_range(h.min(w) as f64 / 16.0..h.min(w) as f64 / 7.0),
            }
        };
        Self { kind, color }
    }

    fn contains(&self, row: usize, col: usize) -> bool {
        match self.kind {
            ShapeKind::Rect { r0, c0, r1, c1 } => (r0..r1).contains(&row) && (c0..c1).contains(&col),
            ShapeKind::Disc { r, c, radius } => {
                (row as f64 - r).powi(2) + (col as f64 - c).powi(2) <= radius * radius
            }
        }
    }
}

/// Sum of bilinear value-noise octaves, rescaled to `[0, 1]`.
fn fractal_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: f64, octaves: u32) -> Vec<f32> {
    let mut acc = vec![0.0f64; h * w];
    let mut amp = 1.0;
    let mut cell = cell;
    for _ in 0..octaves {
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
        for r in 0..h {
            let y = r as f64 / cell;
            let (y0, fy) = (y.floor() as usize, smooth(y.fract()));
            for c in 0..w {
                let x = c as f64 / cell;
                let (x0, fx) = (x.floor() as usize, smooth(x.fract()));
                let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                acc[r * w + c] += amp * (top * (1.0 - fy) + bottom * fy);
            }
        }
        amp *= 0.5;
        cell = (cell / 2.0).max(1.0);
    }
    let (lo, hi) = acc
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1e-12);
    acc.into_iter().map(|v| ((v - lo) / span) as f32).collect()
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}
