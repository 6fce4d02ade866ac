//! Finite-difference verification of the generator-phase objective.

use candle_core::{DType, Device, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{generator_objective, TrainingConfig};
use crate::data::{generate_synthetic_scene, resize_bilinear, stack_batch, ImagePair, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::{graph, LossWeights};
use crate::networks::{ArchConfig, Networks};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub seed: u64,
    /// Side of the square input image.
    pub size: usize,
    /// Random coordinates probed per parameter tensor, plus one random direction.
    pub coords_per_group: usize,
    pub step: f64,
    pub threshold: f64,
    /// Probes of one group that may be redrawn because they straddle a kink.
    pub redraws_per_group: usize,
    /// Random evaluation points tried before giving up on a smooth one.
    pub points: usize,
    /// Test fixture: scales the analytic gradient of this group.
    pub corrupt: Option<String>,
    pub corrupt_factor: f64,
    pub weights: LossWeights,
    /// Standard deviation of the initial weights and of the jitter added on top.
    pub init_std: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 16,
            coords_per_group: 3,
            step: 1e-4,
            threshold: 1e-4,
            redraws_per_group: 32,
            points: 4,
            corrupt: None,
            corrupt_factor: 1.5,
            weights: LossWeights::default(),
            init_std: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub size: usize,
    pub max_rel_error: f64,
    /// True when both gradients were too small for a relative error and the
    /// absolute difference was used instead.
    pub absolute: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub threshold: f64,
    /// Index of the evaluation point the groups were measured at.
    pub point: usize,
    /// Probes discarded for crossing a non-differentiable point.
    pub redrawn: usize,
}

impl GradCheckReport {
    pub fn failing(&self) -> Vec<&GroupError> {
        self.groups
            .iter()
            .filter(|g| !(g.max_rel_error < self.threshold))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failing().is_empty()
    }

    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

const ABS_FLOOR: f64 = 1e-8;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute difference when both norms
/// are below [`ABS_FLOOR`].
fn relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, bool) {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < ABS_FLOOR {
        (norm(&diff), true)
    } else {
        (norm(&diff) / scale, false)
    }
}

/// Central differences at the configured step and at half of it.
struct Differences {
    full: f64,
    half: f64,
}

impl Differences {
    /// Central difference at the configured step, the reported estimate.
    fn central(&self) -> f64 {
        self.full
    }

    /// A kink (leaky-ReLU or L1) crossed inside `[-h, h]` shifts the two
    /// estimates by different amounts, while for a smooth loss they agree to
    /// `O(h²)`. Probes where they disagree beyond the error budget are
    /// redrawn. The test only looks at loss values, never at the analytic
    /// gradient, so it cannot hide a wrong backward pass.
    fn smooth(&self, threshold: f64) -> bool {
        let scale = self.full.abs().max(self.half.abs()).max(ABS_FLOOR);
        (self.full - self.half).abs() <= 0.25 * threshold * scale
    }
}

fn differences(at: &mut impl FnMut(f64) -> Result<f64>, h: f64) -> Result<Differences> {
    let full = (at(h)? - at(-h)?) / (2.0 * h);
    let half = (at(0.5 * h)? - at(-0.5 * h)?) / h;
    Ok(Differences { full, half })
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.into_iter().map(|x| x / norm).collect()
}

fn set_values(var: &Var, values: &[f64]) -> Result<()> {
    var.set(&Tensor::from_slice(values, var.dims(), &Device::Cpu)?)?;
    Ok(())
}

/// Compares the analytic gradient of the total generator objective (soft
/// histogram KL path) with central differences for every parameter tensor
/// of the generator and both discriminators, in double precision on the
/// built-in tiny architecture.
///
/// The comparison runs at a random point: the seeded initialisation plus a
/// Gaussian jitter of every parameter. When some group finds no smooth probe
/// within its redraw budget the point is discarded and a new jitter drawn.
pub fn gradient_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if opts.points == 0 {
        return Err(Error::Validation("gradient check needs at least one evaluation point".into()));
    }
    let arch = ArchConfig {
        init_std: opts.init_std,
        ..ArchConfig::tiny()
    };
    arch.validate()?;
    let config = TrainingConfig {
        arch,
        resolution: (opts.size, opts.size),
        seed: opts.seed,
        weights: opts.weights,
        ..TrainingConfig::default()
    };
    // The scene generator has a 32-pixel floor; smaller checks downsample it.
    let side = opts.size.max(32);
    let (scene, _) = generate_synthetic_scene(opts.seed, side, side, 1, &SynthConfig::default())?;
    let pair = ImagePair::new(
        resize_bilinear(&scene.visual, opts.size, opts.size),
        resize_bilinear(&scene.thermal, opts.size, opts.size),
        true,
    )?;
    let (visual, thermal) = stack_batch(&[&pair], DType::F64, &Device::Cpu)?;

    let mut redrawn = 0;
    for point in 0..opts.points {
        let nets = Networks::init(opts.seed, &config.arch, DType::F64, &Device::Cpu)?;
        if let Some(c) = &opts.corrupt {
            if !nets.stores().iter().any(|(_, s)| s.get(c).is_some()) {
                return Err(Error::Validation(format!("no parameter group named `{c}`")));
            }
        }
        jitter(&nets, opts.init_std, opts.seed ^ 0x7177 ^ ((point as u64) << 32))?;
        let last = point + 1 == opts.points;
        let outcome = check_point(&nets, &config, &visual, &thermal, opts, point as u64, last)?;
        redrawn += outcome.redrawn;
        if let Some(groups) = outcome.groups {
            return Ok(GradCheckReport {
                groups,
                threshold: opts.threshold,
                point,
                redrawn,
            });
        }
        log::debug!("gradient check point {point} too close to a kink, drawing another");
    }
    unreachable!("the last point always reports")
}

fn jitter(nets: &Networks, std: f64, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, store) in nets.stores() {
        for (_, var) in store.iter() {
            let mut v: Vec<f64> = var.as_tensor().flatten_all()?.to_vec1()?;
            for x in &mut v {
                let n: f64 = StandardNormal.sample(&mut rng);
                *x += std * n;
            }
            set_values(var, &v)?;
        }
    }
    Ok(())
}

struct PointOutcome {
    /// `None` when a group ran out of redraws and the point was abandoned.
    groups: Option<Vec<GroupError>>,
    redrawn: usize,
}

fn check_point(
    nets: &Networks,
    config: &TrainingConfig,
    visual: &Tensor,
    thermal: &Tensor,
    opts: &GradCheckOptions,
    point: u64,
    last: bool,
) -> Result<PointOutcome> {
    let objective = || -> Result<Tensor> {
        let out = nets.generator.forward(visual, thermal)?;
        Ok(generator_objective(nets, config, &out, visual, thermal)?.total)
    };
    let eval = || -> Result<f64> { graph::scalar(&objective()?) };
    let grads = objective()?.backward()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6AAD ^ (point << 32));
    let h = opts.step;
    let mut redrawn = 0;
    let mut groups = Vec::new();
    for (_, store) in nets.stores() {
        for (name, var) in store.iter() {
            let base: Vec<f64> = var.as_tensor().flatten_all()?.to_vec1()?;
            let mut analytic: Vec<f64> = match grads.get(var.as_tensor()) {
                Some(g) => g.flatten_all()?.to_vec1()?,
                None => vec![0.0; base.len()],
            };
            if opts.corrupt.as_deref() == Some(name) {
                analytic.iter_mut().for_each(|g| *g *= opts.corrupt_factor);
            }
            let mut budget = opts.redraws_per_group;
            let mut exhausted = false;
            let mut accept = |d: &Differences| {
                if d.smooth(opts.threshold) {
                    return true;
                }
                if budget == 0 {
                    exhausted = true;
                    return true;
                }
                budget -= 1;
                redrawn += 1;
                false
            };

            let k = opts.coords_per_group.min(base.len());
            let mut a = Vec::with_capacity(k + 1);
            let mut num = Vec::with_capacity(k + 1);
            let mut probe = base.clone();
            for first in sample(&mut rng, base.len(), k).into_vec() {
                let mut coord = first;
                let d = loop {
                    let mut at = |s: f64| -> Result<f64> {
                        probe[coord] = base[coord] + s;
                        set_values(var, &probe)?;
                        let v = eval();
                        probe[coord] = base[coord];
                        v
                    };
                    let d = differences(&mut at, h)?;
                    if accept(&d) {
                        break d;
                    }
                    coord = rng.gen_range(0..base.len());
                };
                a.push(analytic[coord]);
                num.push(d.central());
            }
            set_values(var, &base)?;

            let (dir_analytic, dir_numeric) = loop {
                let dir = random_direction(&mut rng, base.len());
                let mut at = |s: f64| -> Result<f64> {
                    let shifted: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + s * d).collect();
                    set_values(var, &shifted)?;
                    eval()
                };
                let d = differences(&mut at, h)?;
                set_values(var, &base)?;
                if accept(&d) {
                    break (analytic.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>(), d.central());
                }
            };
            if exhausted && !last {
                return Ok(PointOutcome { groups: None, redrawn });
            }

            let (e_coords, abs_c) = relative_error(&a, &num);
            let (e_dir, abs_d) = relative_error(&[dir_analytic], &[dir_numeric]);
            groups.push(GroupError {
                name: name.to_string(),
                size: base.len(),
                max_rel_error: e_coords.max(e_dir),
                absolute: abs_c && abs_d,
            });
        }
    }
    Ok(PointOutcome {
        groups: Some(groups),
        redrawn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), (0.0, false));
        let (e, abs) = relative_error(&[2.0], &[1.0]);
        assert!((e - 0.5).abs() < 1e-15 && !abs);
        let (e, abs) = relative_error(&[1e-12], &[0.0]);
        assert!(abs && e < 1e-8);
    }
}
