use std::path::{Path, PathBuf};
use std::process::Command;

use misfit_cli::{parse_from, run, CommandResult};

fn misfit(args: &[&str]) -> CommandResult {
    let cli = parse_from(std::iter::once("misfit").chain(args.iter().copied())).unwrap();
    run(&cli)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn corpus(dir: &Path, count: usize, size: &str) -> CommandResult {
    let count = count.to_string();
    misfit(&["generate-data", "--out", s(dir), "--count", &count, "--size", size, "--seed", "3"])
}

/// Tiny network at 32x32, small enough to train in well under a second.
fn tiny_config(dir: &Path, data: &Path, out: Option<&Path>, steps: usize) -> PathBuf {
    let mut v = serde_json::json!({
        "resolution": [32, 32],
        "max_steps": steps,
        "val_max_items": 2,
        "arch": {
            "down_channels": [4, 4],
            "attention": { "d_model": 4, "n_heads": 2 },
            "up_channels": [4, 4],
            "unet_in_channels": 8,
            "unet_channels": [4, 4, 4],
            "disc_channels": [4, 4, 4]
        },
        "data_dir": data,
    });
    if let Some(o) = out {
        v["out_dir"] = serde_json::json!(o);
    }
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    assert_eq!(corpus(&data, 10, "32x32").exit_code, 0);
    let run_dir = dir.join("run");
    let cfg = tiny_config(dir, &data, Some(&run_dir), 4);
    let r = misfit(&["train", "--config", s(&cfg)]);
    assert_eq!(r.exit_code, 0, "{:?}", r.summary);
    (run_dir.join("final.mfck"), data)
}

#[test]
fn generate_data_writes_pairs_and_manifest_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let r = corpus(&a, 10, "64x64");
    assert_eq!(r.exit_code, 0);
    let written = files(&a);
    assert_eq!(written.len(), 21);
    assert_eq!(written.iter().filter(|p| p.extension().unwrap() == "png").count(), 20);
    assert!(a.join("manifest.json").is_file());
    assert_eq!(r.artifacts.len(), 21);

    corpus(&b, 10, "64x64");
    let first: Vec<Vec<u8>> = written.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let other: Vec<Vec<u8>> = files(&b).iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(first, other);
    // A rerun into the same directory overwrites with identical bytes.
    corpus(&a, 10, "64x64");
    let again: Vec<Vec<u8>> = files(&a).iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(first, again);
}

#[test]
fn generate_data_warns_on_untrainable_size() {
    let tmp = tempfile::tempdir().unwrap();
    let r = corpus(tmp.path(), 2, "50x50");
    assert_eq!(r.exit_code, 0);
    assert!(r.summary.iter().any(|l| l.starts_with("warning:")), "{:?}", r.summary);
    assert_eq!(files(tmp.path()).len(), 5);
    assert!(!corpus(&tmp.path().join("ok"), 2, "64x64").summary.iter().any(|l| l.contains("warning")));
}

#[test]
fn generate_data_rejects_unwritable_dir_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let r = corpus(&blocker.join("sub"), 3, "32x32");
    assert_eq!(r.exit_code, 1);
    assert!(r.artifacts.is_empty());
    let bad = misfit(&["generate-data", "--out", s(&tmp.path().join("m")), "--misalign", "1,2"]);
    assert_eq!(bad.exit_code, 1);
    assert!(!tmp.path().join("m").exists());
}

#[test]
fn train_writes_checkpoint_log_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, _) = trained(tmp.path());
    let run_dir = ckpt.parent().unwrap();
    for name in ["final.mfck", "training_log.csv", "validation.json", "config.json"] {
        assert!(run_dir.join(name).is_file(), "{name}");
    }
    let log = std::fs::read_to_string(run_dir.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let epochs: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir.join("validation.json")).unwrap()).unwrap();
    assert!(epochs.as_array().unwrap().iter().all(|e| e["validation"]["uqi"].is_object()));
}

#[test]
fn train_override_sets_l1_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 6, "32x32");
    let out = tmp.path().join("run");
    let cfg = tiny_config(tmp.path(), &data, Some(&out), 1);
    let r = misfit(&["train", "--config", s(&cfg), "--override", "weights.lambda_l1=1"]);
    assert_eq!(r.exit_code, 0, "{:?}", r.summary);
    let written: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["weights"]["lambda_l1"], 1.0);
    assert_eq!(written["weights"]["lambda_kl"], 10.0);
}

#[test]
fn train_schema_violations_list_every_key() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 4, "32x32");
    let out = tmp.path().join("run");
    let cfg = tiny_config(tmp.path(), &data, Some(&out), 1);
    let r = misfit(&["train", "--config", s(&cfg), "--override", "weights.lambda_xx=1", "--override", "lr=2"]);
    assert_eq!(r.exit_code, 1);
    let msg = r.summary.join("\n");
    assert!(msg.contains("weights.lambda_xx") && msg.contains("lr"), "{msg}");
    assert!(!out.exists());

    let typed = misfit(&["train", "--config", s(&cfg), "--override", "epochs=\"many\""]);
    assert_eq!(typed.exit_code, 1);
    assert!(typed.summary.join("\n").contains("epochs"));

    std::fs::write(&cfg, r#"{"data_dir": "x", "optimiser": {"beta1": 0.9}}"#).unwrap();
    let r = misfit(&["train", "--config", s(&cfg)]);
    assert_eq!(r.exit_code, 1);
    assert!(r.summary.join("\n").contains("optimiser"));
}

#[test]
fn train_missing_dataset_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = tiny_config(tmp.path(), &tmp.path().join("absent"), Some(&out), 1);
    let r = misfit(&["train", "--config", s(&cfg)]);
    assert_eq!(r.exit_code, 1);
    assert!(r.summary.join("\n").contains("absent"));
    assert!(!out.exists());
}

#[test]
fn fuse_writes_configured_resolution_and_heatmaps() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, data) = trained(tmp.path());
    let (vis, th) = (data.join("scene_00001_rgb.png"), data.join("scene_00001_ir.png"));
    let out = tmp.path().join("fused.png");
    let heat = tmp.path().join("heat");
    let r = misfit(&[
        "fuse", "--checkpoint", s(&ckpt), "--visual", s(&vis), "--thermal", s(&th), "--out", s(&out), "--heatmaps",
        s(&heat),
    ]);
    assert_eq!(r.exit_code, 0, "{:?}", r.summary);
    let pair = misfit_core::data::load_image_pair(&out, &th).unwrap();
    assert_eq!(pair.visual.dims(), (32, 32));
    let maps = files(&heat);
    assert_eq!(maps.len(), 2);
    assert!(maps.iter().all(|p| p.extension().unwrap() == "png"));
}

#[test]
fn fuse_rejects_corrupted_checkpoint_with_runtime_code() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, data) = trained(tmp.path());
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    let bad = tmp.path().join("bad.mfck");
    std::fs::write(&bad, &bytes).unwrap();
    let out = tmp.path().join("fused.png");
    let r = misfit(&[
        "fuse",
        "--checkpoint",
        s(&bad),
        "--visual",
        s(&data.join("scene_00000_rgb.png")),
        "--thermal",
        s(&data.join("scene_00000_ir.png")),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.exit_code, 2);
    assert!(r.summary.join("\n").contains("integrity"), "{:?}", r.summary);
    assert!(!out.exists());
}

#[test]
fn fuse_without_attention_refuses_heatmaps() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 4, "32x32");
    let out = tmp.path().join("run");
    let cfg = tiny_config(tmp.path(), &data, Some(&out), 1);
    let r = misfit(&["train", "--config", s(&cfg), "--override", "ablation=\"no_attention\""]);
    assert_eq!(r.exit_code, 0, "{:?}", r.summary);
    let r = misfit(&[
        "fuse",
        "--checkpoint",
        s(&out.join("final.mfck")),
        "--visual",
        s(&data.join("scene_00000_rgb.png")),
        "--thermal",
        s(&data.join("scene_00000_ir.png")),
        "--out",
        s(&tmp.path().join("f.png")),
        "--heatmaps",
        s(&tmp.path().join("h")),
    ]);
    assert_eq!(r.exit_code, 1);
    assert!(!tmp.path().join("f.png").exists());
}

#[test]
fn evaluate_reports_aggregate_items_and_charts() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, data) = trained(tmp.path());
    let eval = |name: &str, plot: bool| {
        let out = tmp.path().join(name);
        let plots = tmp.path().join("plots");
        let mut args = vec!["evaluate", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&out)];
        if plot {
            args.extend(["--plot", s(&plots)]);
        }
        let r = misfit(&args);
        assert_eq!(r.exit_code, 0, "{:?}", r.summary);
        std::fs::read(out).unwrap()
    };
    let a = eval("a.json", true);
    let b = eval("b.json", false);
    assert_eq!(a, b);

    let doc: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let agg = &doc["aggregate"];
    let mut values = 0;
    for m in ["mse", "uqi", "msssim", "nmi", "psnr"] {
        for side in ["vs_thermal", "vs_visual"] {
            assert!(agg[m][side].as_f64().unwrap().is_finite());
            values += 1;
        }
    }
    assert_eq!(values, 10);
    assert_eq!(doc["items"].as_array().unwrap().len(), 10);
    assert_eq!(agg["meta"]["items"], 10);

    let charts = files(&tmp.path().join("plots"));
    assert_eq!(charts.len(), 5);
    assert!(charts.iter().all(|p| std::fs::read_to_string(p).unwrap().contains("<svg")));
}

#[test]
fn evaluate_empty_dataset_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (ckpt, _) = trained(tmp.path());
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = tmp.path().join("r.json");
    let r = misfit(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&empty), "--out", s(&out)]);
    assert_eq!(r.exit_code, 1);
    assert!(!out.exists());
}

#[test]
fn ablate_rejects_unknown_and_empty_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 4, "32x32");
    let cfg = tiny_config(tmp.path(), &data, None, 1);
    let out = tmp.path().join("abl");
    for variants in ["no_dropout", "", "none"] {
        let r = misfit(&["ablate", "--config", s(&cfg), "--variants", variants, "--out", s(&out)]);
        assert_eq!(r.exit_code, 1, "{variants:?}");
    }
    assert!(!out.exists());
}

#[test]
fn ablate_single_variant_writes_two_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    corpus(&data, 6, "32x32");
    let cfg = tiny_config(tmp.path(), &data, None, 1);
    let out = tmp.path().join("abl");
    let r = misfit(&["ablate", "--config", s(&cfg), "--variants", "no_kl", "--out", s(&out)]);
    assert_eq!(r.exit_code, 0, "{:?}", r.summary);
    assert!(out.join("none/final.mfck").is_file() && out.join("no_kl/final.mfck").is_file());
    let csv = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(files(&out.join("charts")).len(), 5);
}

#[test]
fn gradcheck_lists_every_group_once() {
    let r = misfit(&["gradcheck", "--seed", "1"]);
    assert_eq!(r.exit_code, 0, "{:?}", r.summary);
    let names: Vec<&str> = r.summary[..r.summary.len() - 1]
        .iter()
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    let report = misfit_core::trainer::gradient_check(&misfit_core::trainer::GradCheckOptions {
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let expected: Vec<&str> = report.groups.iter().map(|g| g.name.as_str()).collect();
    assert_eq!(names, expected);
}

#[test]
fn gradcheck_flags_a_corrupted_backward_path() {
    let r = misfit(&["gradcheck", "--corrupt", "gen.attn_rgb.query.weight"]);
    assert_eq!(r.exit_code, 2);
    let last = r.summary.last().unwrap();
    assert!(last.starts_with("error:") && last.contains("gen.attn_rgb.query.weight"), "{last}");
}

#[test]
fn binary_help_lists_config_keys_with_defaults() {
    let out = Command::new(env!("CARGO_BIN_EXE_misfit")).args(["train", "--help"]).output().unwrap();
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for line in misfit_cli::config::schema_lines() {
        assert!(help.contains(&line), "missing `{line}`");
    }
    assert!(help.contains("weights.lambda_l1 = 100.0") && help.contains("--override"));
    let gen = Command::new(env!("CARGO_BIN_EXE_misfit")).args(["generate-data", "--help"]).output().unwrap();
    let gen = String::from_utf8(gen.stdout).unwrap();
    assert!(gen.contains("[default: 256x256]") && gen.contains("MISFIT_SEED"));
}

#[test]
fn binary_exit_codes_and_seed_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_misfit");
    let status = Command::new(bin).args(["train"]).output().unwrap().status;
    assert_eq!(status.code(), Some(1));
    let status = Command::new(bin).args(["gradcheck", "--corrupt", "disc_ir.head.bias"]).output().unwrap().status;
    assert_eq!(status.code(), Some(2));

    let gen = |dir: &str, seed: Option<&str>| {
        let mut c = Command::new(bin);
        c.args(["generate-data", "--count", "1", "--size", "32x32", "--out"]).arg(tmp.path().join(dir));
        c.env_remove("MISFIT_SEED");
        if let Some(s) = seed {
            c.env("MISFIT_SEED", s);
        }
        assert!(c.output().unwrap().status.success());
        std::fs::read(tmp.path().join(dir).join("scene_00000_ir.png")).unwrap()
    };
    assert_eq!(gen("a", Some("5")), gen("b", Some("5")));
    assert_ne!(gen("c", Some("5")), gen("d", None));
}
