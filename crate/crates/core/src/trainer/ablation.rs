use serde::{Deserialize, Serialize};

use super::{Ablation, Trainer, TrainingConfig, TrainingHistory};
use crate::checkpoint::Checkpoint;
use crate::data::{DatasetSplit, ImagePair};
use crate::error::{Error, Result};
use crate::metrics::{build_comparison, ComparisonTable, MetricReport};

/// One trained configuration and its held-out metrics.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub variant: Ablation,
    pub config: TrainingConfig,
    pub checkpoint: Checkpoint,
    pub history: TrainingHistory,
    pub parameters: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationStudy {
    pub parameters: Vec<(String, usize)>,
    pub reports: Vec<MetricReport>,
    pub table: ComparisonTable,
}

/// Trains `variant` applied to `base` and scores it on the validation split
/// (or the training split when there is no validation data).
pub fn run_variant(variant: Ablation, base: &TrainingConfig, data: &DatasetSplit<ImagePair>) -> Result<RunOutcome> {
    let config = variant.apply(base);
    let mut trainer = Trainer::new(config.clone())?;
    let history = trainer.train(data)?;
    let (items, id) = if data.val.is_empty() {
        (&data.train, "train")
    } else {
        (&data.val, "validation")
    };
    let cap = config.val_max_items.unwrap_or(usize::MAX).min(items.len());
    let report = trainer.evaluate(&items[..cap], id)?;
    Ok(RunOutcome {
        variant,
        parameters: trainer.networks().count_parameters(),
        checkpoint: trainer.checkpoint()?,
        config,
        history,
        report,
    })
}

/// Trains the base configuration and each variant with the same seed and
/// data order. `on_run` sees every finished run, base first.
pub fn run_ablation(
    variants: &[Ablation],
    base: &TrainingConfig,
    data: &DatasetSplit<ImagePair>,
    mut on_run: impl FnMut(&RunOutcome) -> Result<()>,
) -> Result<AblationStudy> {
    if variants.is_empty() {
        return Err(Error::Validation("no ablation variants requested".into()));
    }
    if variants.contains(&Ablation::None) {
        return Err(Error::Validation("`none` is the base run, not a variant".into()));
    }
    let base = TrainingConfig {
        ablation: Ablation::None,
        ..base.clone()
    };
    let mut parameters = Vec::new();
    let mut reports = Vec::new();
    let mut seen = Vec::new();
    for &v in std::iter::once(&Ablation::None).chain(variants) {
        if seen.contains(&v) {
            continue;
        }
        seen.push(v);
        log::info!("training {v}");
        let run = run_variant(v, &base, data)?;
        on_run(&run)?;
        parameters.push((v.name().to_string(), run.parameters));
        reports.push(run.report);
    }
    let table = build_comparison(&reports, true)?;
    let study = AblationStudy {
        parameters,
        reports,
        table,
    };
    Ok(study)
}
