//! Adversarial, distribution and pixel losses.
//!
//! Host functions work on `f64` scalars and images and are what reports and
//! logs use. The `graph` submodule holds the differentiable tensor versions
//! that training backpropagates through.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FusedImage, RawImage};

/// Probabilities are kept this far away from 0 and 1 before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_ir: f64,
    pub lambda_rgb: f64,
    pub lambda_kl: f64,
    pub lambda_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ir: 1.0,
            lambda_rgb: 1.0,
            lambda_kl: 10.0,
            lambda_l1: 100.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            lambda_ir: 0.0,
            lambda_rgb: 0.0,
            lambda_kl: 0.0,
            lambda_l1: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_ir", self.lambda_ir),
            ("lambda_rgb", self.lambda_rgb),
            ("lambda_kl", self.lambda_kl),
            ("lambda_l1", self.lambda_l1),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_ir: f64,
    pub adv_rgb: f64,
    pub gen: f64,
    pub kl: f64,
    pub l1: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,adv_ir,adv_rgb,gen,kl,l1,total";

    /// Builds a breakdown whose total is recomputed from the components.
    pub fn compose(adv_ir: f64, adv_rgb: f64, gen: f64, kl: f64, l1: f64, w: &LossWeights) -> Result<Self> {
        for (name, v) in [("adv_ir", adv_ir), ("adv_rgb", adv_rgb)] {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite {name} loss: {v}")));
            }
        }
        Ok(Self {
            adv_ir,
            adv_rgb,
            gen,
            kl,
            l1,
            total: total_loss(gen, kl, l1, w)?,
        })
    }

    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{},{}",
            self.adv_ir, self.adv_rgb, self.gen, self.kl, self.l1, self.total
        )
    }

    /// First component that is not finite, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("adv_ir", self.adv_ir),
            ("adv_rgb", self.adv_rgb),
            ("gen", self.gen),
            ("kl", self.kl),
            ("l1", self.l1),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn clamp_prob(p: f64, what: &str) -> Result<f64> {
    if p.is_nan() {
        return Err(Error::Numeric(format!("{what} is NaN")));
    }
    Ok(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
}

/// `-ln d_real - ln(1 - d_fused)`.
pub fn adversarial_loss_discriminator(d_real: f64, d_fused: f64) -> Result<f64> {
    let r = clamp_prob(d_real, "real-pair discriminator output")?;
    let f = clamp_prob(d_fused, "fused-pair discriminator output")?;
    Ok(-r.ln() - (1.0 - f).ln())
}

/// Non-saturating generator term `λ_IR·(-ln d_ir) + λ_RGB·(-ln d_rgb)`.
pub fn adversarial_loss_generator(d_fused_ir: f64, d_fused_rgb: f64, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let a = clamp_prob(d_fused_ir, "thermal discriminator output")?;
    let b = clamp_prob(d_fused_rgb, "visual discriminator output")?;
    Ok(w.lambda_ir * -a.ln() + w.lambda_rgb * -b.ln())
}

/// Smoothed, normalised intensity histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelDistribution {
    pub probs: Vec<f64>,
    pub epsilon: f64,
}

impl PixelDistribution {
    /// Adds `epsilon` to every count-derived probability and renormalises.
    pub fn from_counts(counts: &[f64], epsilon: f64) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::Validation(format!("need at least 2 bins, got {}", counts.len())));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Validation(format!("epsilon must be > 0, got {epsilon}")));
        }
        let n: f64 = counts.iter().sum();
        if !(n > 0.0) {
            return Err(Error::Validation("histogram is empty".into()));
        }
        let smoothed: Vec<f64> = counts.iter().map(|c| c / n + epsilon).collect();
        let z: f64 = smoothed.iter().sum();
        Ok(Self {
            probs: smoothed.into_iter().map(|p| p / z).collect(),
            epsilon,
        })
    }

    pub fn bins(&self) -> usize {
        self.probs.len()
    }
}

/// Bin index of an intensity in `[0, 1]` for `bins` equal-width bins.
pub fn intensity_bin(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

pub fn image_to_distribution(image: &RawImage, bins: usize, epsilon: f64) -> Result<PixelDistribution> {
    if bins < 2 {
        return Err(Error::Validation(format!("need at least 2 bins, got {bins}")));
    }
    let lum = image.luminance();
    let mut counts = vec![0.0; bins];
    for &v in &lum.data {
        counts[intensity_bin(v, bins)] += 1.0;
    }
    PixelDistribution::from_counts(&counts, epsilon)
}

/// `Σ p_i ln(p_i / q_i)`.
pub fn kl_divergence(p: &PixelDistribution, q: &PixelDistribution) -> Result<f64> {
    if p.bins() != q.bins() {
        return Err(Error::Shape(format!(
            "distributions have {} and {} bins",
            p.bins(),
            q.bins()
        )));
    }
    Ok(p.probs.iter().zip(&q.probs).map(|(a, b)| a * (a / b).ln()).sum())
}

fn check_same_size(fused: &RawImage, other: &RawImage, what: &str) -> Result<()> {
    if fused.dims() != other.dims() {
        let (h, w) = fused.dims();
        let (oh, ow) = other.dims();
        return Err(Error::Shape(format!("fused is {h}x{w} but the {what} image is {oh}x{ow}")));
    }
    Ok(())
}

/// `KL(P_fus‖P_ir) + KL(P_fus‖P_rgb)` over hard luminance histograms.
pub fn kl_loss(fused: &FusedImage, ir: &RawImage, rgb: &RawImage, bins: usize, epsilon: f64) -> Result<f64> {
    let pf = image_to_distribution(fused, bins, epsilon)?;
    let pi = image_to_distribution(ir, bins, epsilon)?;
    let pr = image_to_distribution(rgb, bins, epsilon)?;
    Ok(kl_divergence(&pf, &pi)? + kl_divergence(&pf, &pr)?)
}

/// Mean absolute difference to the replicated thermal image plus mean
/// absolute difference to the visual image.
pub fn l1_loss(fused: &FusedImage, ir: &RawImage, rgb: &RawImage) -> Result<f64> {
    check_same_size(fused, ir, "thermal")?;
    check_same_size(fused, rgb, "visual")?;
    if ir.channels() != 1 || rgb.channels() != 3 {
        return Err(Error::Modality(format!(
            "expected 1-channel thermal and 3-channel visual, got {} and {}",
            ir.channels(),
            rgb.channels()
        )));
    }
    let f = fused.data();
    let n = f.len() as f64;
    let (h, w) = fused.dims();
    let mut to_ir = 0.0;
    for (i, px) in f.chunks_exact(3).enumerate() {
        let t = ir.data()[i] as f64;
        to_ir += px.iter().map(|&v| (v as f64 - t).abs()).sum::<f64>();
    }
    debug_assert_eq!(f.len(), h * w * 3);
    let to_rgb: f64 = f.iter().zip(rgb.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
    Ok(to_ir / n + to_rgb / n)
}

/// `gen + λ_KL·kl + λ_L1·l1`.
pub fn total_loss(gen: f64, kl: f64, l1: f64, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("gen", gen), ("kl", kl), ("l1", l1)] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite {name} loss: {v}")));
        }
    }
    Ok(gen + w.lambda_kl * kl + w.lambda_l1 * l1)
}

/// Differentiable counterparts operating on batched tensors.
pub mod graph {
    use candle_core::{DType, Tensor, D};

    use super::PROB_CLAMP;
    use crate::error::{Error, Result};
    use crate::image::LUMA_WEIGHTS;

    fn clamp(p: &Tensor) -> Result<Tensor> {
        Ok(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?)
    }

    /// Batch mean of `-ln d_real - ln(1 - d_fused)`; inputs are `(B,)`.
    pub fn discriminator_loss(d_real: &Tensor, d_fused: &Tensor) -> Result<Tensor> {
        let real = clamp(d_real)?.log()?.neg()?;
        let fake = clamp(d_fused)?.affine(-1.0, 1.0)?.log()?.neg()?;
        Ok((real + fake)?.mean_all()?)
    }

    /// Batch mean of `-ln d`.
    pub fn generator_term(d_fused: &Tensor) -> Result<Tensor> {
        Ok(clamp(d_fused)?.log()?.neg()?.mean_all()?)
    }

    /// `(B, C, H, W)` → `(B, H·W)` luminance; one-channel input passes through.
    pub fn luminance(x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let y = match c {
            1 => x.clone(),
            3 => {
                let wts = Tensor::new(&LUMA_WEIGHTS, x.device())?
                    .to_dtype(x.dtype())?
                    .reshape((1, 3, 1, 1))?;
                x.broadcast_mul(&wts)?.sum_keepdim(1)?
            }
            _ => return Err(Error::Shape(format!("luminance needs 1 or 3 channels, got {c}"))),
        };
        Ok(y.reshape((b, h * w))?)
    }

    /// Gaussian-kernel histogram: every pixel spreads unit mass over the bin
    /// centres, the result is averaged over pixels, smoothed with `epsilon`
    /// and renormalised. Returns `(B, bins)`.
    pub fn soft_histogram(lum: &Tensor, bins: usize, sigma_fraction: f64, epsilon: f64) -> Result<Tensor> {
        let (b, n) = lum.dims2()?;
        let width = 1.0 / bins as f64;
        let sigma = sigma_fraction * width;
        let centres: Vec<f64> = (0..bins).map(|k| (k as f64 + 0.5) * width).collect();
        let centres = Tensor::from_vec(centres, (1, 1, bins), lum.device())?.to_dtype(lum.dtype())?;
        let d = lum.reshape((b, n, 1))?.broadcast_sub(&centres)?;
        let k = (d.sqr()? * (-0.5 / (sigma * sigma)))?.exp()?;
        let k = k.broadcast_div(&k.sum_keepdim(D::Minus1)?)?;
        let p = (k.mean(1)? + epsilon)?;
        Ok(p.broadcast_div(&p.sum_keepdim(D::Minus1)?)?)
    }

    /// Batch mean of `Σ p ln(p/q)` for `(B, bins)` inputs.
    pub fn kl(p: &Tensor, q: &Tensor) -> Result<Tensor> {
        Ok((p * (p.log()? - q.log()?)?)?.sum(D::Minus1)?.mean_all()?)
    }

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct SoftHistogram {
        pub bins: usize,
        pub sigma_fraction: f64,
        pub epsilon: f64,
    }

    /// Soft-binned `KL(P_fus‖P_ir) + KL(P_fus‖P_rgb)`.
    pub fn kl_loss(fused: &Tensor, ir: &Tensor, rgb: &Tensor, h: SoftHistogram) -> Result<Tensor> {
        let hist = |x: &Tensor| soft_histogram(&luminance(x)?, h.bins, h.sigma_fraction, h.epsilon);
        let pf = hist(fused)?;
        Ok((kl(&pf, &hist(ir)?)? + kl(&pf, &hist(rgb)?)?)?)
    }

    /// `mean|fused - rep3(ir)| + mean|fused - rgb|`.
    pub fn l1_loss(fused: &Tensor, ir: &Tensor, rgb: &Tensor) -> Result<Tensor> {
        if fused.dims() != rgb.dims() {
            return Err(Error::Shape(format!("fused {:?} vs visual {:?}", fused.dims(), rgb.dims())));
        }
        let (b, _, h, w) = fused.dims4()?;
        if ir.dims() != [b, 1, h, w] {
            return Err(Error::Shape(format!("fused {:?} vs thermal {:?}", fused.dims(), ir.dims())));
        }
        let to_ir = fused.broadcast_sub(ir)?.abs()?.mean_all()?;
        let to_rgb = (fused - rgb)?.abs()?.mean_all()?;
        Ok((to_ir + to_rgb)?)
    }

    pub fn scalar(t: &Tensor) -> Result<f64> {
        Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }
}
