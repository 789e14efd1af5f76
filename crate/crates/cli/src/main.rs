use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use leafnet::data::{
    check_split, generate, grouped_split, load_manifest, write_manifest, ClassRegistry, DatasetManifest, SplitRatio, SplitSpec,
    SynthLabels, SynthOptions,
};
use leafnet::harness::{
    dump_activations, emit_progression, evaluate_checkpoint, parse_config, pretrain_surrogate, read_epoch_logs, run_experiment, run_matrix,
    CellFilter, GroupBy, MatrixOptions, PretrainOptions, RunOptions,
};
use leafnet::imaging::{load_gray, save_gray, RgbImage};
use leafnet::optimizer::OptimizerConfig;
use leafnet::segmentation::{iou, segment, Mask, SegmentationParams};
use leafnet::{Architecture, Checkpoint};

#[derive(Parser)]
#[command(name = "leafnet", version, about = "Leaf disease CNN experiments")]
struct Cli {
    /// Class registry file; the built-in 38-class registry otherwise.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic leaf corpus.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        images_per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// disease, crop-only or disease-only
        #[arg(long, default_value = "disease")]
        labels: String,
    },
    /// Segment every PNG in a directory.
    Segment(SegmentArgs),
    /// Grouped train/test split of a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "80-20")]
        ratio: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Audit leakage and balance; fails when the split is bad.
        #[arg(long)]
        check: bool,
        /// Writes train.csv and test.csv here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run one configuration, e.g. `AlexNet:TransferLearning:Color:80-20`.
    Train {
        config: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the experiment matrix.
    Matrix {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated cell patterns with `*` wildcards.
        #[arg(long, default_value = "")]
        filter: String,
        #[arg(long)]
        pretrained_alexnet: Option<PathBuf>,
        #[arg(long)]
        pretrained_googlenet: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        pretrain_images_per_class: usize,
        /// Label set of the surrogate pretraining corpus.
        #[arg(long, default_value = "crop-only")]
        pretrain_labels: String,
        /// Cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Surrogate pretraining of a mini architecture on synthetic leaves.
    Pretrain {
        #[arg(long, default_value = "AlexNetMini")]
        arch: String,
        #[arg(long)]
        out: PathBuf,
        /// Corpus directory; next to the checkpoint by default.
        #[arg(long)]
        work_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        images_per_class: usize,
        #[arg(long, default_value = "crop-only")]
        labels: String,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        topk: Option<usize>,
        /// Restrict predictions to each image's crop.
        #[arg(long)]
        known_crop: bool,
    },
    /// Progression plots from epoch logs.
    Report {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Log directory; `<out-dir>/logs` by default.
        #[arg(long)]
        logs: Option<PathBuf>,
        /// all, architecture, mechanism, dataset_type or split; every
        /// grouping when omitted.
        #[arg(long)]
        group_by: Option<String>,
    },
    /// Tile one layer's activations into a grayscale image.
    VizActivations {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "conv1")]
        layer: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Directory of same-named ground-truth masks; writes iou.csv.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    fix_cast: bool,
    #[arg(long, default_value_t = 0.15)]
    sat_min: f64,
    #[arg(long, default_value_t = 0.1)]
    bright_lo: f64,
    #[arg(long, default_value_t = 0.98)]
    bright_hi: f64,
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    lab_a_max: f64,
    #[arg(long, default_value_t = 2)]
    radius: usize,
    #[arg(long)]
    no_largest_component: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mini architectures at `--size`.
    #[arg(long)]
    desk: bool,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    step_epochs: Option<usize>,
}

impl RunArgs {
    fn optimizer(&self) -> Option<OptimizerConfig> {
        if self.epochs.is_none() && self.step_epochs.is_none() {
            return None;
        }
        let mut o = OptimizerConfig::default();
        if let Some(e) = self.epochs {
            o.total_epochs = e;
        }
        if let Some(s) = self.step_epochs {
            o.step_epochs = s;
        }
        Some(o)
    }

    fn run_options(&self, registry: &ClassRegistry) -> RunOptions {
        let mut r = RunOptions::new(&self.out_dir);
        r.desk_size = self.size;
        r.registry = registry.clone();
        r
    }
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl From<leafnet::Error> for Failure {
    fn from(e: leafnet::Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        leafnet::Error::from(e).into()
    }
}

type CliResult = Result<Value, Failure>;

fn parse_labels(s: &str) -> Result<SynthLabels, Failure> {
    match s {
        "disease" => Ok(SynthLabels::Disease),
        "crop-only" => Ok(SynthLabels::CropOnly),
        "disease-only" => Ok(SynthLabels::DiseaseOnly),
        _ => Err(Failure {
            kind: "config",
            message: format!("unknown label set `{s}`"),
        }),
    }
}

fn manifest(path: &Path, registry: &ClassRegistry) -> Result<DatasetManifest, Failure> {
    Ok(load_manifest(path, registry)?)
}

fn pngs(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

fn run_segment(a: &SegmentArgs) -> CliResult {
    let params = SegmentationParams {
        sat_min: a.sat_min,
        bright_lo: a.bright_lo,
        bright_hi: a.bright_hi,
        lab_a_max: a.lab_a_max,
        radius: a.radius,
        largest_component: !a.no_largest_component,
    };
    params.validate()?;
    let (mask_dir, seg_dir) = (a.out_dir.join("masks"), a.out_dir.join("segmented"));
    std::fs::create_dir_all(&mask_dir)?;
    std::fs::create_dir_all(&seg_dir)?;
    let mut ious = Vec::new();
    let files = pngs(&a.input)?;
    for path in &files {
        let name = path.file_name().expect("listed file");
        let img = RgbImage::load(path)?;
        let (mask, out) = segment(&img, &params, a.fix_cast)?;
        save_gray(&mask_dir.join(name), mask.width, mask.height, &mask.to_bytes())?;
        out.save(&seg_dir.join(name))?;
        if let Some(gt_dir) = &a.ground_truth {
            let (w, h, px) = load_gray(&gt_dir.join(name))?;
            ious.push((name.to_string_lossy().into_owned(), iou(&mask, &Mask::from_bytes(w, h, &px))?));
        }
    }
    let mut report = json!({ "images": files.len(), "out_dir": a.out_dir });
    if a.ground_truth.is_some() {
        let path = a.out_dir.join("iou.csv");
        let mut w = csv::Writer::from_path(&path).map_err(leafnet::Error::from)?;
        w.write_record(["image", "iou"]).map_err(leafnet::Error::from)?;
        for (n, v) in &ious {
            w.write_record([n.as_str(), &v.to_string()]).map_err(leafnet::Error::from)?;
        }
        w.flush()?;
        let mean = ious.iter().map(|x| x.1).sum::<f64>() / ious.len().max(1) as f64;
        report["mean_iou"] = json!(mean);
        report["iou_report"] = json!(path);
    }
    Ok(report)
}

fn run(cli: Cli) -> CliResult {
    let registry = match &cli.registry {
        Some(p) => ClassRegistry::parse(&std::fs::read_to_string(p)?)?,
        None => ClassRegistry::builtin().clone(),
    };
    match cli.command {
        Command::GenSynthetic {
            out,
            seed,
            images_per_class,
            size,
            labels,
        } => {
            let c = generate(
                &SynthOptions {
                    seed,
                    images_per_class,
                    size,
                    labels: parse_labels(&labels)?,
                },
                &out,
            )?;
            Ok(json!({ "manifest": c.manifest_path, "images": c.records.len(), "classes": c.registry.len() }))
        }
        Command::Segment(a) => run_segment(&a),
        Command::Split {
            manifest: path,
            ratio,
            seed,
            check,
            out_dir,
        } => {
            let m = manifest(&path, &registry)?;
            let spec = SplitSpec {
                ratio: ratio.parse::<SplitRatio>()?,
                seed,
            };
            let (train, test) = grouped_split(&m.records, spec);
            if let Some(dir) = &out_dir {
                std::fs::create_dir_all(dir)?;
                // paths stay valid relative to the new files
                let absolute = |rs: &[leafnet::data::SampleRecord]| -> Vec<leafnet::data::SampleRecord> {
                    rs.iter()
                        .map(|r| leafnet::data::SampleRecord {
                            image_path: m.resolve(r).to_string_lossy().into_owned(),
                            ..r.clone()
                        })
                        .collect()
                };
                write_manifest(&dir.join("train.csv"), &absolute(&train), &registry)?;
                write_manifest(&dir.join("test.csv"), &absolute(&test), &registry)?;
            }
            let audit = check_split(&m.records, &train, &test, spec, registry.len());
            let report = json!({ "train": train.len(), "test": test.len(), "check": audit, "ok": audit.ok() });
            if check && !audit.ok() {
                return Err(Failure {
                    kind: "split_check",
                    message: report.to_string(),
                });
            }
            Ok(report)
        }
        Command::Train {
            config,
            manifest: path,
            pretrained,
            run,
        } => {
            let mut cfg = parse_config(&config)?;
            cfg.seed = run.seed;
            cfg.desk = run.desk;
            if let Some(o) = run.optimizer() {
                cfg.optimizer = OptimizerConfig {
                    batch_size: cfg.optimizer.batch_size,
                    ..o
                };
            }
            let m = manifest(&path, &registry)?;
            let mut opts = run.run_options(&registry);
            opts.pretrained = pretrained;
            let out = run_experiment(&cfg, &m, &opts)?;
            Ok(json!({
                "config": cfg.name(),
                "seed": cfg.seed,
                "epochs": out.logs.len(),
                "log": out.log_path,
                "checkpoint": out.checkpoint_path,
                "final": out.final_report(),
            }))
        }
        Command::Matrix {
            manifest: path,
            filter,
            pretrained_alexnet,
            pretrained_googlenet,
            pretrain_images_per_class,
            pretrain_labels,
            jobs,
            run,
        } => {
            let m = manifest(&path, &registry)?;
            let mut opts = MatrixOptions::new(&run.out_dir);
            opts.seed = run.seed;
            opts.desk = run.desk;
            opts.filter = CellFilter::parse(&filter)?;
            opts.optimizer = run.optimizer();
            opts.pretrain_images_per_class = pretrain_images_per_class;
            opts.pretrain_labels = parse_labels(&pretrain_labels)?;
            opts.jobs = jobs;
            opts.run = run.run_options(&registry);
            let mut pre = HashMap::new();
            for (arch, p) in [
                (Architecture::AlexNet, pretrained_alexnet),
                (Architecture::GoogLeNet, pretrained_googlenet),
            ] {
                if let Some(p) = p {
                    pre.insert(arch, p);
                }
            }
            opts.pretrained = pre;
            let s = run_matrix(&m, &opts)?;
            Ok(json!({ "cells": s.rows.len(), "summary": s.summary_path, "table": s.table_path, "rows": s.rows }))
        }
        Command::Pretrain {
            arch,
            out,
            work_dir,
            size,
            seed,
            images_per_class,
            labels,
            epochs,
        } => {
            let arch: Architecture = arch.parse()?;
            let mut p = PretrainOptions::new(arch.desk(), size, seed);
            p.images_per_class = images_per_class;
            p.labels = parse_labels(&labels)?;
            if let Some(e) = epochs {
                p.optimizer.total_epochs = e;
            }
            let work = work_dir.unwrap_or_else(|| out.with_extension("corpus"));
            let ck = pretrain_surrogate(&p, &work, &out)?;
            Ok(json!({ "checkpoint": out, "arch": ck.arch, "classes": ck.class_count, "log": out.with_extension("csv") }))
        }
        Command::Eval {
            checkpoint,
            manifest: path,
            topk,
            known_crop,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let m = manifest(&path, &registry)?;
            let r = evaluate_checkpoint(&ck, &m, &registry, topk, known_crop)?;
            Ok(serde_json::to_value(r).expect("report serialises"))
        }
        Command::Report { out_dir, logs, group_by } => {
            let dir = logs.unwrap_or_else(|| out_dir.join("logs"));
            let mut all = Vec::new();
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            for f in &files {
                all.extend(read_epoch_logs(f)?);
            }
            if all.is_empty() {
                return Err(leafnet::Error::EmptyLogs.into());
            }
            let groupings = match group_by {
                Some(g) => vec![g.parse::<GroupBy>()?],
                None => GroupBy::ALL.to_vec(),
            };
            let plots = out_dir.join("plots");
            let mut written = Vec::new();
            for g in groupings {
                let (series, csv, svg) = emit_progression(&all, g, &plots)?;
                written.push(json!({ "group_by": g.as_str(), "series": series.len(), "csv": csv, "svg": svg }));
            }
            Ok(json!({ "logs": files.len(), "plots": written }))
        }
        Command::VizActivations {
            checkpoint,
            image,
            layer,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let g = dump_activations(&ck, &RgbImage::load(&image)?, &layer, &out)?;
            Ok(json!({ "out": out, "rows": g.rows, "cols": g.cols, "width": g.width(), "height": g.height() }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim_end() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            // a closed pipe is not a failure of the command
            let _ = writeln!(std::io::stdout(), "{v}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::FAILURE
        }
    }
}
