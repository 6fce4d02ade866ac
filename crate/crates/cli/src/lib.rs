//! Command-line front end: synthetic data generation, training, fusion,
//! evaluation, ablation and the gradient check.
//!
//! Every command returns a [`CommandResult`] instead of exiting, so the same
//! code paths run from the binary and from tests.

pub mod charts;
pub mod config;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use misfit_core::attention::{attention_heatmap, AttentionMap, HeatmapFocus};
use misfit_core::checkpoint::load_checkpoint;
use misfit_core::data::{
    generate_corpus, load_dataset_dir, load_image_pair, preprocess_pair, split_dataset, write_corpus, write_png,
    CorpusSpec, DatasetSplit, ImagePair, MisalignmentMode, SynthConfig,
};
use misfit_core::error::Error;
use misfit_core::metrics::{build_comparison, evaluate_fusion, mean_report, Metric, ReportMeta};
use misfit_core::networks::ArchConfig;
use misfit_core::trainer::{
    final_checkpoint_path, fuse_pairs, gradient_check, networks_from_checkpoint, run_ablation, Ablation,
    GradCheckOptions, Trainer, TrainingConfig,
};
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration keys: {}", .0.join("; "))]
    Schema(Vec<String>),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for problems with the request or its inputs, 2 for failures while
    /// carrying it out.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Schema(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Core(e) => match e {
                Error::Io { .. }
                | Error::Format { .. }
                | Error::Validation(_)
                | Error::Config(_)
                | Error::Shape(_)
                | Error::Modality(_)
                | Error::Json(_) => 1,
                Error::Numeric(_)
                | Error::Generation(_)
                | Error::Construction { .. }
                | Error::Version { .. }
                | Error::Integrity(_)
                | Error::Aborted(_)
                | Error::Tensor(_) => 2,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq)]
pub struct CommandResult {
    /// 0 success, 1 validation error, 2 runtime error.
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: Vec<String>,
}

impl CommandResult {
    /// Success only if every artifact can be read back.
    fn finish(artifacts: Vec<PathBuf>, mut summary: Vec<String>) -> Self {
        let unreadable: Vec<String> = artifacts
            .iter()
            .filter(|p| std::fs::read(p).is_err())
            .map(|p| p.display().to_string())
            .collect();
        let exit_code = if unreadable.is_empty() {
            0
        } else {
            summary.push(format!("error: artifacts not readable after writing: {}", unreadable.join(", ")));
            2
        };
        Self {
            exit_code,
            artifacts,
            summary,
        }
    }

    fn failed(err: CliError, mut summary: Vec<String>) -> Self {
        summary.push(format!("error: {err}"));
        if let CliError::Core(Error::Aborted(a)) = &err {
            match &a.saved_to {
                Some(p) => summary.push(format!("last good checkpoint: {}", p.display())),
                None => summary.push("last good state was not saved (no out_dir)".into()),
            }
        }
        Self {
            exit_code: err.exit_code(),
            artifacts: Vec::new(),
            summary,
        }
    }

    fn from(outcome: CliResult<CommandResult>) -> Self {
        outcome.unwrap_or_else(|e| Self::failed(e, Vec::new()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "misfit", version, about = "Fusion of misaligned visual-thermal image pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus of visual/thermal pairs plus manifest.json.
    GenerateData(GenerateArgs),
    /// Train from a JSON config.
    Train(TrainArgs),
    /// Fuse one visual/thermal pair with a trained checkpoint.
    Fuse(FuseArgs),
    /// Score a checkpoint on every pair of a dataset directory.
    Evaluate(EvaluateArgs),
    /// Train the base config and ablation variants with a shared seed.
    Ablate(AblateArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("`{s}` is not of the form HxW"))?;
    let side = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("`{t}` is not a size"));
    Ok((side(h)?, side(w)?))
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Image size as HxW.
    #[arg(long, default_value = "256x256", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Hot blobs per thermal image.
    #[arg(long, default_value_t = 2)]
    pub blobs: usize,
    /// `none`, `random:shift_frac,rot_deg,scale_dev,noise`, or a fixed
    /// `dx,dy,rot_deg,scale,crop,noise`.
    #[arg(long, default_value = "none", allow_hyphen_values = true)]
    pub misalign: String,
    #[arg(long, env = config::SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// JSON file mirroring the training config.
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted-path override such as `weights.lambda_l1=1`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub visual: PathBuf,
    #[arg(long)]
    pub thermal: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write both attention heatmaps here.
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for one bar chart per metric.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated subset of l1_weight_1, no_kl, no_attention.
    #[arg(long, value_delimiter = ',', default_value = "l1_weight_1,no_kl,no_attention")]
    pub variants: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, env = config::SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Scales the analytic gradient of one parameter group (checker self-test).
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

/// The clap command, with the config keys and their defaults appended to
/// the help of the config-driven subcommands.
pub fn command() -> clap::Command {
    let keys = format!(
        "Config keys (JSON, dotted paths for --override) and defaults:\n  {}",
        config::schema_lines().join("\n  ")
    );
    Cli::command()
        .mut_subcommand("train", |c| c.after_help(keys.clone()))
        .mut_subcommand("ablate", |c| c.after_help(keys.clone()))
}

pub fn parse_from<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

pub fn run(cli: &Cli) -> CommandResult {
    match &cli.command {
        Command::GenerateData(a) => cmd_generate_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Fails early, before anything is written, if `dir` cannot hold files.
fn ensure_writable(dir: &Path) -> CliResult<()> {
    let probe = dir.join(".misfit-write-probe");
    std::fs::create_dir_all(dir)
        .and_then(|_| std::fs::write(&probe, b""))
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| CliError::Usage(format!("cannot write to {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str, artifacts: &mut Vec<PathBuf>) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    artifacts.push(path.to_path_buf());
    Ok(())
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn cmd_generate_data(args: &GenerateArgs) -> CommandResult {
    CommandResult::from((|| {
        if args.count == 0 {
            return Err(CliError::Usage("--count must be at least 1".into()));
        }
        let spec = CorpusSpec {
            count: args.count,
            size: args.size,
            n_blobs: args.blobs,
            misalignment: MisalignmentMode::parse(&args.misalign)?,
            seed: args.seed,
            synth: SynthConfig::default(),
        };
        let mut summary = Vec::new();
        if let Err(e) = ArchConfig::default().check_resolution(args.size) {
            summary.push(format!("warning: the default network cannot train on this size ({e})"));
        }
        let items = generate_corpus(&spec)?;
        ensure_writable(&args.out)?;
        let artifacts = write_corpus(&args.out, &spec, &items)?;
        summary.push(format!(
            "wrote {} pairs of {}x{} to {}",
            items.len(),
            args.size.0,
            args.size.1,
            args.out.display()
        ));
        Ok(CommandResult::finish(artifacts, summary))
    })())
}

/// Loads, resizes and splits the dataset named by the config.
pub fn load_split(config: &TrainingConfig) -> CliResult<DatasetSplit<ImagePair>> {
    let dir = config
        .data_dir
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no data_dir".into()))?;
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("dataset directory {} does not exist", dir.display())));
    }
    let factor = config.effective_arch().network_factor();
    let pairs = load_dataset_dir(dir)?
        .into_iter()
        .map(|(_, p)| preprocess_pair(&p, config.resolution, factor))
        .collect::<misfit_core::error::Result<Vec<_>>>()?;
    if pairs.len() < 2 {
        return Err(CliError::Usage(format!(
            "dataset {} has {} pairs; at least 2 are needed for a split",
            dir.display(),
            pairs.len()
        )));
    }
    Ok(split_dataset(&pairs, config.split_ratio, config.seed)?)
}

fn out_dir(config: &TrainingConfig) -> CliResult<PathBuf> {
    config
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Usage("config has no out_dir".into()))
}

pub fn cmd_train(args: &TrainArgs) -> CommandResult {
    CommandResult::from((|| {
        let config = config::load(&args.config, &args.overrides)?;
        let out = out_dir(&config)?;
        let data = load_split(&config)?;
        ensure_writable(&out)?;
        let mut trainer = Trainer::new(config.clone())?;
        let history = match trainer.train(&data) {
            Ok(h) => h,
            Err(e) => return Ok(CommandResult::failed(e.into(), vec![format!("training in {}", out.display())])),
        };

        let mut artifacts = Vec::new();
        let ckpt = final_checkpoint_path(&out);
        trainer.save(&ckpt)?;
        artifacts.push(ckpt);
        write_text(&out.join("training_log.csv"), &history.to_csv(), &mut artifacts)?;
        let epochs = serde_json::to_string_pretty(&history.epochs).map_err(Error::from)?;
        write_text(&out.join("validation.json"), &epochs, &mut artifacts)?;
        write_text(&out.join("config.json"), &config::to_json(&config), &mut artifacts)?;

        let totals = history.totals();
        let mut summary = vec![format!(
            "trained {} steps over {} epochs ({} train / {} validation pairs)",
            totals.len(),
            history.epochs.len(),
            data.train.len(),
            data.val.len()
        )];
        if let (Some(first), Some(last)) = (totals.first(), totals.last()) {
            summary.push(format!("total loss {first:.4} -> {last:.4}"));
        }
        if let Some(r) = history.epochs.last().and_then(|e| e.validation.as_ref()) {
            summary.push(format!(
                "validation UQI {:.4}/{:.4}, PSNR {:.2}/{:.2} dB (thermal/visual)",
                r.uqi.vs_thermal, r.uqi.vs_visual, r.psnr.vs_thermal, r.psnr.vs_visual
            ));
        }
        Ok(CommandResult::finish(artifacts, summary))
    })())
}

pub fn cmd_fuse(args: &FuseArgs) -> CommandResult {
    CommandResult::from((|| {
        let ckpt = load_checkpoint(&args.checkpoint)?;
        let res = ckpt.config.resolution;
        let arch = ckpt.config.effective_arch();
        arch.check_resolution(res).map_err(|e| {
            CliError::Usage(format!(
                "checkpoint resolution {}x{} is unusable: {e}; inputs are resized to the checkpoint's \
                 resolution, which must be at least 32x32 and divisible by {}",
                res.0,
                res.1,
                arch.network_factor()
            ))
        })?;
        if args.heatmaps.is_some() && !arch.use_attention {
            return Err(CliError::Usage("this checkpoint was trained without attention; no heatmaps exist".into()));
        }
        let raw = load_image_pair(&args.visual, &args.thermal)?;
        let pair = preprocess_pair(&raw, res, arch.network_factor())?;
        let nets = networks_from_checkpoint(&ckpt, ckpt.config.precision.dtype())?;
        let (fused, out) = fuse_pairs(&nets, &[&pair])?;
        let fused = &fused[0];

        ensure_writable(parent_dir(&args.out))?;
        let mut artifacts = Vec::new();
        write_png(fused.image(), &args.out)?;
        artifacts.push(args.out.clone());
        let mut summary = vec![format!(
            "fused {}x{} visual and {}x{} thermal into {}x{} at {}",
            raw.visual.height(),
            raw.visual.width(),
            raw.thermal.height(),
            raw.thermal.width(),
            res.0,
            res.1,
            args.out.display()
        )];

        if let (Some(dir), Some(ex)) = (&args.heatmaps, &out.exchange) {
            ensure_writable(dir)?;
            let grid = arch.downsampled_grid(res);
            for (name, map) in [
                ("visual_queries_over_thermal.png", &ex.map_rgb_to_ir),
                ("thermal_queries_over_visual.png", &ex.map_ir_to_rgb),
            ] {
                let heat = attention_heatmap(&AttentionMap::from_tensor(map, 0)?, grid, HeatmapFocus::Mean)?;
                let path = dir.join(name);
                write_png(&charts::colorize(&heat, arch.attention_factor()), &path)?;
                artifacts.push(path);
            }
            summary.push(format!("attention heatmaps ({}x{} grid) in {}", grid.0, grid.1, dir.display()));
        }
        Ok(CommandResult::finish(artifacts, summary))
    })())
}

fn write_charts(
    dir: &Path,
    table: &misfit_core::metrics::ComparisonTable,
    artifacts: &mut Vec<PathBuf>,
) -> CliResult<()> {
    ensure_writable(dir)?;
    for m in Metric::ALL {
        write_text(&dir.join(format!("{}.svg", m.name())), &charts::metric_chart(table, m), artifacts)?;
    }
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CommandResult {
    CommandResult::from((|| {
        let ckpt = load_checkpoint(&args.checkpoint)?;
        if !args.data.is_dir() {
            return Err(CliError::Usage(format!("dataset directory {} does not exist", args.data.display())));
        }
        let items = load_dataset_dir(&args.data)?;
        if items.is_empty() {
            return Err(CliError::Usage(format!("dataset {} contains no pairs", args.data.display())));
        }
        let cfg = &ckpt.config;
        let factor = cfg.effective_arch().network_factor();
        let nets = networks_from_checkpoint(&ckpt, cfg.precision.dtype())?;
        let mut rows = Vec::with_capacity(items.len());
        for chunk in items.chunks(cfg.batch_size.max(1)) {
            let pairs = chunk
                .iter()
                .map(|(_, p)| preprocess_pair(p, cfg.resolution, factor))
                .collect::<misfit_core::error::Result<Vec<_>>>()?;
            let refs: Vec<&ImagePair> = pairs.iter().collect();
            let (fused, _) = fuse_pairs(&nets, &refs)?;
            for ((stem, _), (f, p)) in chunk.iter().zip(fused.iter().zip(&pairs)) {
                rows.push((stem.clone(), evaluate_fusion(f, p, &cfg.metrics)?));
            }
        }
        let reports: Vec<_> = rows.iter().map(|(_, r)| r.clone()).collect();
        let aggregate = mean_report(&reports)?.with_meta(ReportMeta {
            run_id: cfg.ablation.name().into(),
            checkpoint_step: Some(ckpt.step),
            dataset_id: args.data.display().to_string(),
            items: reports.len(),
            ..reports[0].meta.clone()
        });
        let doc = json!({
            "aggregate": aggregate,
            "items": rows.iter().map(|(stem, r)| json!({ "stem": stem, "metrics": r })).collect::<Vec<_>>(),
        });

        ensure_writable(parent_dir(&args.out))?;
        let mut artifacts = Vec::new();
        let text = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
        write_text(&args.out, &text, &mut artifacts)?;
        if let Some(dir) = &args.plot {
            let table = build_comparison(std::slice::from_ref(&aggregate), false)?;
            write_charts(dir, &table, &mut artifacts)?;
        }
        let mut summary = vec![format!("evaluated {} pairs from {}", reports.len(), args.data.display())];
        for m in Metric::ALL {
            let p = aggregate.get(m);
            summary.push(format!("{:<9} vs thermal {:>10.5}  vs visual {:>10.5}", m.label(), p.vs_thermal, p.vs_visual));
        }
        Ok(CommandResult::finish(artifacts, summary))
    })())
}

pub fn cmd_ablate(args: &AblateArgs) -> CommandResult {
    CommandResult::from((|| {
        let names: Vec<&str> = args.variants.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
        if names.is_empty() {
            return Err(CliError::Usage("no variants requested; nothing to compare".into()));
        }
        let variants = names
            .iter()
            .map(|n| match Ablation::from_str(n)? {
                Ablation::None => Err(CliError::Usage("`none` is the base run and always included".into())),
                v => Ok(v),
            })
            .collect::<CliResult<Vec<_>>>()?;
        let mut config = config::load(&args.config, &[])?;
        // Per-run checkpoints are written below; the trainer's own periodic
        // files would collide between runs.
        config.out_dir = None;
        config.checkpoint_every = None;
        let data = load_split(&config)?;
        ensure_writable(&args.out)?;

        let mut artifacts = Vec::new();
        let study = run_ablation(&variants, &config, &data, |run| {
            let dir = args.out.join(run.variant.name());
            let ckpt = final_checkpoint_path(&dir);
            misfit_core::checkpoint::save_checkpoint(&run.checkpoint, &ckpt)?;
            artifacts.push(ckpt);
            let log = dir.join("training_log.csv");
            std::fs::write(&log, run.history.to_csv()).map_err(|e| Error::Io {
                path: log.clone(),
                source: e,
            })?;
            artifacts.push(log);
            Ok(())
        })?;

        let text = serde_json::to_string_pretty(&study).map_err(Error::from)?;
        write_text(&args.out.join("comparison.json"), &text, &mut artifacts)?;
        write_text(&args.out.join("comparison.csv"), &study.table.to_csv(), &mut artifacts)?;
        write_charts(&args.out.join("charts"), &study.table, &mut artifacts)?;

        let mut summary = vec![format!(
            "{} runs, comparison table {}x{}",
            study.table.rows.len(),
            study.table.rows.len(),
            study.table.columns.len()
        )];
        for (name, n) in &study.parameters {
            summary.push(format!("{name:<13} {n} parameters"));
        }
        Ok(CommandResult::finish(artifacts, summary))
    })())
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> CommandResult {
    CommandResult::from((|| {
        let opts = GradCheckOptions {
            seed: args.seed,
            corrupt: args.corrupt.clone(),
            ..GradCheckOptions::default()
        };
        let report = gradient_check(&opts)?;
        let mut summary: Vec<String> = report
            .groups
            .iter()
            .map(|g| {
                let kind = if g.absolute { " (absolute)" } else { "" };
                format!("{:<40} {:>6} {:.3e}{kind}", g.name, g.size, g.max_rel_error)
            })
            .collect();
        summary.push(format!(
            "{} groups, max relative error {:.3e}, threshold {:.0e} (evaluation point {}, {} probes redrawn)",
            report.groups.len(),
            report.max_error(),
            report.threshold,
            report.point,
            report.redrawn
        ));
        let failing: Vec<&str> = report.failing().iter().map(|g| g.name.as_str()).collect();
        if failing.is_empty() {
            return Ok(CommandResult::finish(Vec::new(), summary));
        }
        summary.push(format!("error: gradient mismatch in {}", failing.join(", ")));
        Ok(CommandResult {
            exit_code: 2,
            artifacts: Vec::new(),
            summary,
        })
    })())
}
