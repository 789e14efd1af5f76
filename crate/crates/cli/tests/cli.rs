use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn leafnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leafnet"))
        .args(args)
        .output()
        .expect("spawn leafnet")
}

fn ok_json(args: &[&str]) -> Value {
    let out = leafnet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn error_line(out: &Output) -> Value {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("error line")).expect("json error line")
}

fn corpus(dir: &Path) -> String {
    let out = dir.join("c");
    let v = ok_json(&[
        "gen-synthetic",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "4",
        "--images-per-class",
        "3",
        "--size",
        "32",
    ]);
    assert_eq!(v["images"], 114);
    v["manifest"].as_str().unwrap().to_string()
}

#[test]
fn split_check_and_segment() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path());
    let v = ok_json(&[
        "split",
        "--manifest",
        &m,
        "--ratio",
        "60-40",
        "--check",
        "--out-dir",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(v["check"]["leaked_groups"], 0);
    assert_eq!(v["train"].as_u64().unwrap() + v["test"].as_u64().unwrap(), 114);
    assert!(dir.path().join("s/train.csv").exists());

    let c = dir.path().join("c");
    let v = ok_json(&[
        "segment",
        "--input",
        c.join("images").to_str().unwrap(),
        "--out-dir",
        dir.path().join("seg").to_str().unwrap(),
        "--ground-truth",
        c.join("masks").to_str().unwrap(),
    ]);
    assert!(v["mean_iou"].as_f64().unwrap() >= 0.9);
    let rows = std::fs::read_to_string(dir.path().join("seg/iou.csv")).unwrap();
    assert_eq!(rows.lines().count(), 115);
}

#[test]
fn train_pretrain_transfer_eval_report_viz() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let base = ["--manifest", &m, "--desk", "--size", "32", "--epochs", "2", "--out-dir", out_s];

    let mut args = vec!["train", "AlexNet:TrainingFromScratch:Color:80-20"];
    args.extend(base);
    let v = ok_json(&args);
    assert_eq!(v["epochs"], 2);
    let ckpt = v["checkpoint"].as_str().unwrap().to_string();

    // transfer without a checkpoint fails with a machine-readable line
    let mut args = vec!["train", "AlexNet:TransferLearning:Color:80-20"];
    args.extend(base);
    assert_eq!(error_line(&leafnet(&args))["error"], "invalid_argument");

    let pre = dir.path().join("pre.vgnt");
    let v = ok_json(&[
        "pretrain",
        "--arch",
        "AlexNet",
        "--out",
        pre.to_str().unwrap(),
        "--size",
        "32",
        "--images-per-class",
        "2",
        "--epochs",
        "1",
    ]);
    assert_eq!(v["classes"], 14);
    args.extend(["--pretrained", pre.to_str().unwrap()]);
    assert_eq!(ok_json(&args)["epochs"], 2);

    let v = ok_json(&["eval", "--checkpoint", &ckpt, "--manifest", &m, "--topk", "5", "--known-crop"]);
    assert_eq!(v["topk"][0], 5);
    assert!(v["crop_conditional_accuracy"].as_f64().unwrap() >= v["metrics"]["accuracy"].as_f64().unwrap());

    let v = ok_json(&["report", "--out-dir", out_s]);
    assert_eq!(v["logs"], 2);
    assert_eq!(v["plots"].as_array().unwrap().len(), 5);
    assert!(out.join("plots/progression_mechanism.svg").exists());

    let img = dir.path().join("c/images/c00_0000.png");
    let viz = dir.path().join("conv1.png");
    let v = ok_json(&[
        "viz-activations",
        "--checkpoint",
        &ckpt,
        "--image",
        img.to_str().unwrap(),
        "--layer",
        "conv1",
        "--out",
        viz.to_str().unwrap(),
    ]);
    assert_eq!((v["rows"].as_u64(), v["cols"].as_u64()), (Some(4), Some(4)));
    let bad = leafnet(&[
        "viz-activations",
        "--checkpoint",
        &ckpt,
        "--image",
        img.to_str().unwrap(),
        "--layer",
        "conv9",
        "--out",
        viz.to_str().unwrap(),
    ]);
    assert_eq!(error_line(&bad)["error"], "unknown_layer");
}

#[test]
fn matrix_filter_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(dir.path());
    let out = dir.path().join("out");
    let v = ok_json(&[
        "matrix",
        "--manifest",
        &m,
        "--desk",
        "--size",
        "32",
        "--epochs",
        "1",
        "--filter",
        "AlexNet:TrainingFromScratch:*:80-20",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(v["cells"], 3);
    assert!(out.join("summary.csv").exists() && out.join("summary_table.csv").exists());
}

#[test]
fn errors_are_machine_readable() {
    let e = error_line(&leafnet(&[
        "train",
        "VGG:TransferLearning:Color:80-20",
        "--manifest",
        "/nonexistent.csv",
    ]));
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("architecture"));
    let e = error_line(&leafnet(&[
        "eval",
        "--checkpoint",
        "/nonexistent.vgnt",
        "--manifest",
        "/nonexistent.csv",
    ]));
    assert_eq!(e["error"], "io");
    assert_eq!(error_line(&leafnet(&["frobnicate"]))["error"], "usage");
    assert!(leafnet(&["--help"]).status.success());
}
