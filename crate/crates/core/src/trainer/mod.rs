//! Alternating discriminator/generator optimisation, checkpoints, history,
//! gradient verification and the ablation harness.

mod ablation;
mod config;
mod gradcheck;

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, run_variant, AblationStudy, RunOutcome};
pub use config::{Ablation, KlConfig, Precision, TrainingConfig};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport, GroupError};

use crate::checkpoint::{save_checkpoint, Checkpoint, NamedArray};
use crate::data::{epoch_batches, stack_batch, DatasetSplit, ImagePair};
use crate::error::{Error, Result, TrainingAbort};
use crate::image::{FusedImage, RawImage};
use crate::losses::graph;
use crate::losses::LossBreakdown;
use crate::metrics::{evaluate_fusion, mean_report, MetricReport, ReportMeta};
use crate::networks::{GeneratorOutput, Networks};
use crate::nn::ParamStore;
use crate::optim::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Number of optimisation steps completed when the epoch ended.
    pub step: u64,
    pub validation: Option<MetricReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn totals(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.losses.total).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LossBreakdown::CSV_HEADER);
        s.push('\n');
        for r in &self.steps {
            s.push_str(&r.losses.csv_row(r.step));
            s.push('\n');
        }
        s
    }

    pub fn extend(&mut self, other: TrainingHistory) {
        self.steps.extend(other.steps);
        self.epochs.extend(other.epochs);
    }
}

/// Deep copies of every parameter plus optimizer state.
struct Snapshot {
    params: Vec<Vec<Tensor>>,
    opts: [Adam; 3],
}

pub struct Trainer {
    config: TrainingConfig,
    nets: Networks,
    opts: [Adam; 3],
    step: u64,
    device: Device,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("step", &self.step)
            .field("parameters", &self.nets.count_parameters())
            .finish()
    }
}

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let nets = Networks::init(config.seed, &config.effective_arch(), config.precision.dtype(), &device)?;
        let opts = Self::fresh_optimizers(&nets, &config)?;
        Ok(Self {
            config,
            nets,
            opts,
            step: 0,
            device,
        })
    }

    fn fresh_optimizers(nets: &Networks, config: &TrainingConfig) -> Result<[Adam; 3]> {
        let mk = |s: &ParamStore| Adam::new(s, config.learning_rate, config.optimizer);
        Ok([mk(&nets.gen_params)?, mk(&nets.disc_ir_params)?, mk(&nets.disc_rgb_params)?])
    }

    /// Restores parameters, optimizer state and the step counter.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(ckpt.config.clone())?;
        load_params(&t.nets, ckpt)?;
        for (i, (name, store)) in t.nets.stores().iter().enumerate() {
            let opt = &mut t.opts[i];
            opt.step = *ckpt
                .counters
                .get(&format!("adam.{name}"))
                .ok_or_else(|| Error::Integrity(format!("checkpoint has no optimizer counter for {name}")))?;
            for (j, pname) in store.names().iter().enumerate() {
                let dtype = store.dtype();
                opt.m[j] = ckpt.require(&format!("adam.m/{pname}"))?.to_tensor(dtype, &t.device)?;
                opt.v[j] = ckpt.require(&format!("adam.v/{pname}"))?.to_tensor(dtype, &t.device)?;
            }
        }
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(self.step, self.config.clone());
        for (i, (name, store)) in self.nets.stores().iter().enumerate() {
            for (pname, var) in store.iter() {
                c.arrays.push(NamedArray::from_tensor(pname, var.as_tensor())?);
            }
            let opt = &self.opts[i];
            for (j, pname) in store.names().iter().enumerate() {
                c.arrays.push(NamedArray::from_tensor(format!("adam.m/{pname}"), &opt.m[j])?);
                c.arrays.push(NamedArray::from_tensor(format!("adam.v/{pname}"), &opt.v[j])?);
            }
            c.counters.insert(format!("adam.{name}"), opt.step);
        }
        Ok(c)
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn networks(&self) -> &Networks {
        &self.nets
    }

    /// Optimisation steps completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn dtype(&self) -> DType {
        self.config.precision.dtype()
    }

    fn snapshot(&self) -> Result<Snapshot> {
        let params = self
            .nets
            .stores()
            .iter()
            .map(|(_, s)| s.vars().iter().map(|v| Ok(v.as_tensor().copy()?)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Snapshot {
            params,
            opts: self.opts.clone(),
        })
    }

    fn restore(&mut self, snap: Snapshot) -> Result<()> {
        for ((_, store), saved) in self.nets.stores().iter().zip(&snap.params) {
            for (var, t) in store.vars().iter().zip(saved) {
                var.set(t)?;
            }
        }
        self.opts = snap.opts;
        Ok(())
    }

    /// One alternating update: thermal discriminator, visual discriminator,
    /// then the generator against freshly evaluated discriminators.
    ///
    /// A non-finite loss rolls every parameter back to its state before the
    /// step and returns [`Error::Aborted`] carrying that state.
    pub fn train_step(&mut self, batch: &[&ImagePair]) -> Result<LossBreakdown> {
        let snap = self.snapshot()?;
        match self.try_step(batch) {
            Ok(Ok(b)) => {
                self.step += 1;
                Ok(b)
            }
            Ok(Err(component)) => {
                self.restore(snap)?;
                let last_good = self.checkpoint()?;
                let saved_to = match &self.config.out_dir {
                    Some(dir) => {
                        let path = dir.join(format!("abort_step_{:08}.mfck", self.step));
                        save_checkpoint(&last_good, &path)?;
                        Some(path)
                    }
                    None => None,
                };
                Err(Error::Aborted(Box::new(TrainingAbort {
                    step: self.step,
                    component: component.to_string(),
                    last_good,
                    saved_to,
                })))
            }
            Err(e) => {
                self.restore(snap)?;
                Err(e)
            }
        }
    }

    fn try_step(&mut self, batch: &[&ImagePair]) -> Result<std::result::Result<LossBreakdown, &'static str>> {
        let (visual, thermal) = stack_batch(batch, self.dtype(), &self.device)?;
        let out = self.nets.generator.forward(&visual, &thermal)?;
        let fused = out.fused.detach();

        let thermal3 = thermal.repeat((1, 3, 1, 1))?;
        let real = self.nets.disc_ir.forward(&thermal, &thermal3)?.score;
        let fake = self.nets.disc_ir.forward(&thermal, &fused)?.score;
        let loss_ir = graph::discriminator_loss(&real, &fake)?;
        let adv_ir = graph::scalar(&loss_ir)?;
        if !adv_ir.is_finite() {
            return Ok(Err("adv_ir"));
        }
        let grads = loss_ir.backward()?;
        self.opts[1].step(&self.nets.disc_ir_params, &grads)?;

        let real = self.nets.disc_rgb.forward(&visual, &visual)?.score;
        let fake = self.nets.disc_rgb.forward(&visual, &fused)?.score;
        let loss_rgb = graph::discriminator_loss(&real, &fake)?;
        let adv_rgb = graph::scalar(&loss_rgb)?;
        if !adv_rgb.is_finite() {
            return Ok(Err("adv_rgb"));
        }
        let grads = loss_rgb.backward()?;
        self.opts[2].step(&self.nets.disc_rgb_params, &grads)?;

        let terms = generator_objective(&self.nets, &self.config, &out, &visual, &thermal)?;
        let host = [
            ("gen", graph::scalar(&terms.gen)?),
            ("kl", graph::scalar(&terms.kl)?),
            ("l1", graph::scalar(&terms.l1)?),
        ];
        if let Some((name, _)) = host.iter().find(|(_, v)| !v.is_finite()) {
            return Ok(Err(name));
        }
        let w = self.config.effective_weights();
        let breakdown = LossBreakdown::compose(adv_ir, adv_rgb, host[0].1, host[1].1, host[2].1, &w)?;
        if !breakdown.total.is_finite() || !graph::scalar(&terms.total)?.is_finite() {
            return Ok(Err("total"));
        }
        let grads = terms.total.backward()?;
        self.opts[0].step(&self.nets.gen_params, &grads)?;
        Ok(Ok(breakdown))
    }

    /// Runs the configured epochs (or `max_steps`), continuing from the
    /// current step. Batch order depends only on the seed and the epoch, so
    /// a trainer restored from a checkpoint picks up the same sequence.
    pub fn train(&mut self, data: &DatasetSplit<ImagePair>) -> Result<TrainingHistory> {
        let n = data.train.len();
        if n == 0 {
            return Err(Error::Validation("training split is empty".into()));
        }
        for p in data.train.iter().chain(&data.val) {
            if p.visual.dims() != self.config.resolution || p.thermal.dims() != self.config.resolution {
                return Err(Error::Config(format!(
                    "pairs must be preprocessed to {:?}; found visual {:?} and thermal {:?}",
                    self.config.resolution,
                    p.visual.dims(),
                    p.thermal.dims()
                )));
            }
        }
        let bs = self.config.batch_size;
        let per_epoch = n.div_ceil(bs) as u64;
        let mut end = self.config.epochs * per_epoch;
        if let Some(m) = self.config.max_steps {
            end = end.min(m);
        }
        let mut history = TrainingHistory::default();
        while self.step < end {
            let epoch = self.step / per_epoch;
            let offset = (self.step % per_epoch) as usize;
            let batches = epoch_batches(n, bs, self.config.shuffle_seed(), epoch)?;
            for idx in &batches[offset..] {
                if self.step >= end {
                    break;
                }
                let batch: Vec<&ImagePair> = idx.iter().map(|&i| &data.train[i]).collect();
                let step = self.step;
                let losses = self.train_step(&batch)?;
                log::debug!("step {step}: total {:.5}", losses.total);
                history.steps.push(StepRecord { step, epoch, losses });
                if let (Some(every), Some(dir)) = (self.config.checkpoint_every, &self.config.out_dir) {
                    if self.step % every == 0 {
                        let path = dir.join(format!("checkpoint_{:08}.mfck", self.step));
                        save_checkpoint(&self.checkpoint()?, &path)?;
                    }
                }
            }
            let cap = self.config.val_max_items.unwrap_or(usize::MAX).min(data.val.len());
            let validation = if cap == 0 {
                None
            } else {
                Some(self.evaluate(&data.val[..cap], "validation")?)
            };
            log::info!("epoch {epoch} finished at step {}", self.step);
            history.epochs.push(EpochRecord {
                epoch,
                step: self.step,
                validation,
            });
        }
        Ok(history)
    }

    /// Mean metric report of the current generator over `items`.
    pub fn evaluate(&self, items: &[ImagePair], dataset_id: &str) -> Result<MetricReport> {
        let mut reports = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.config.batch_size.max(1)) {
            let refs: Vec<&ImagePair> = chunk.iter().collect();
            let (fused, _) = fuse_pairs(&self.nets, &refs)?;
            for (f, p) in fused.iter().zip(chunk) {
                reports.push(evaluate_fusion(f, p, &self.config.metrics)?);
            }
        }
        let mut r = mean_report(&reports)?;
        r.meta = ReportMeta {
            run_id: self.config.ablation.name().into(),
            checkpoint_step: Some(self.step),
            dataset_id: dataset_id.into(),
            ..r.meta
        };
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.checkpoint()?, path)
    }
}

/// Generator-phase loss terms as graph tensors.
pub(crate) struct GeneratorTerms {
    pub gen: Tensor,
    pub kl: Tensor,
    pub l1: Tensor,
    pub total: Tensor,
}

pub(crate) fn generator_objective(
    nets: &Networks,
    config: &TrainingConfig,
    out: &GeneratorOutput,
    visual: &Tensor,
    thermal: &Tensor,
) -> Result<GeneratorTerms> {
    let w = config.effective_weights();
    let d_ir = nets.disc_ir.forward(thermal, &out.fused)?.score;
    let d_rgb = nets.disc_rgb.forward(visual, &out.fused)?.score;
    let gen = ((graph::generator_term(&d_ir)? * w.lambda_ir)? + (graph::generator_term(&d_rgb)? * w.lambda_rgb)?)?;
    let kl = graph::kl_loss(&out.fused, thermal, visual, config.kl.soft())?;
    let l1 = graph::l1_loss(&out.fused, thermal, visual)?;
    let total = ((&gen + (&kl * w.lambda_kl)?)? + (&l1 * w.lambda_l1)?)?;
    Ok(GeneratorTerms { gen, kl, l1, total })
}

/// Runs the generator on preprocessed pairs.
pub fn fuse_pairs(nets: &Networks, pairs: &[&ImagePair]) -> Result<(Vec<FusedImage>, GeneratorOutput)> {
    let dtype = nets.gen_params.dtype();
    let (visual, thermal) = stack_batch(pairs, dtype, nets.gen_params.device())?;
    let out = nets.generator.forward(&visual, &thermal)?;
    let fused = out.fused.detach();
    let images = (0..pairs.len())
        .map(|i| FusedImage::new(RawImage::from_chw_tensor(&fused.get(i)?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((images, out))
}

/// Copies network parameters out of a checkpoint into existing stores.
pub fn load_params(nets: &Networks, ckpt: &Checkpoint) -> Result<()> {
    for (_, store) in nets.stores() {
        for (name, var) in store.iter() {
            let a = ckpt.require(name)?;
            if a.shape != var.dims() {
                return Err(Error::Integrity(format!(
                    "array `{name}` has shape {:?}, the network expects {:?}",
                    a.shape,
                    var.dims()
                )));
            }
            var.set(&a.to_tensor(store.dtype(), store.device())?)?;
        }
    }
    Ok(())
}

/// Rebuilds the networks a checkpoint was trained with.
pub fn networks_from_checkpoint(ckpt: &Checkpoint, dtype: DType) -> Result<Networks> {
    let nets = Networks::init(ckpt.config.seed, &ckpt.config.effective_arch(), dtype, &Device::Cpu)?;
    load_params(&nets, ckpt)?;
    Ok(nets)
}

/// Trains from scratch; returns the final checkpoint and the history.
pub fn train(config: TrainingConfig, dataset: &DatasetSplit<ImagePair>) -> Result<(Checkpoint, TrainingHistory)> {
    let mut t = Trainer::new(config)?;
    let history = t.train(dataset)?;
    Ok((t.checkpoint()?, history))
}

/// Default path of the final checkpoint inside an output directory.
pub fn final_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("final.mfck")
}
