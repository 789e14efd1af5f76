use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{all_configs, CellFilter, ExperimentConfig, Mechanism, MATRIX_ARCHITECTURES};
use super::mix_seed;
use super::train::{prepare_for, pretrain_surrogate, run_prepared, PretrainOptions, RunOptions};
use crate::data::{DatasetManifest, SplitRatio, SynthLabels, Variant};
use crate::error::{Error, Result};
use crate::network::Architecture;
use crate::optimizer::OptimizerConfig;

#[derive(Clone, Debug)]
pub struct MatrixOptions {
    pub seed: u64,
    pub desk: bool,
    pub filter: CellFilter,
    /// Pretrained checkpoint per matrix architecture. Desk runs without one
    /// pretrain a surrogate.
    pub pretrained: HashMap<Architecture, PathBuf>,
    /// Replaces the per-architecture default when set; batch size is kept.
    pub optimizer: Option<OptimizerConfig>,
    pub pretrain_images_per_class: usize,
    pub pretrain_labels: SynthLabels,
    pub jobs: usize,
    pub run: RunOptions,
}

impl MatrixOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed: 0,
            desk: false,
            filter: CellFilter::default(),
            pretrained: HashMap::new(),
            optimizer: None,
            pretrain_images_per_class: 100,
            pretrain_labels: SynthLabels::CropOnly,
            jobs: 1,
            run: RunOptions::new(out_dir),
        }
    }

    /// Cells selected by the filter, seeded and configured for running.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        all_configs()
            .into_iter()
            .enumerate()
            .filter(|(_, c)| self.filter.matches(c))
            .map(|(i, mut c)| {
                c.seed = cell_seed(self.seed, i);
                c.desk = self.desk;
                if let Some(o) = &self.optimizer {
                    c.optimizer = OptimizerConfig {
                        batch_size: c.optimizer.batch_size,
                        ..o.clone()
                    };
                }
                c
            })
            .collect()
    }
}

/// Per-cell seed from the matrix seed and the canonical cell index.
pub fn cell_seed(matrix_seed: u64, index: usize) -> u64 {
    mix_seed(matrix_seed, index as u64 + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub config: String,
    pub architecture: Architecture,
    pub mechanism: Mechanism,
    pub dataset_type: Variant,
    pub split: SplitRatio,
    pub seed: u64,
    pub epochs: usize,
    pub mean_f1: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub accuracy: f64,
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSummary {
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
    pub table_path: PathBuf,
}

impl MatrixSummary {
    pub fn get(&self, config: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.config == config)
    }
}

const TABLE_COLUMNS: [(Architecture, Mechanism); 4] = [
    (Architecture::AlexNet, Mechanism::TransferLearning),
    (Architecture::AlexNet, Mechanism::TrainingFromScratch),
    (Architecture::GoogLeNet, Mechanism::TransferLearning),
    (Architecture::GoogLeNet, Mechanism::TrainingFromScratch),
];

/// `F1 (precision, recall, accuracy)` to four places.
pub fn table_cell(row: &SummaryRow) -> String {
    format!(
        "{:.4} ({:.4}, {:.4}, {:.4})",
        row.mean_f1, row.mean_precision, row.mean_recall, row.accuracy
    )
}

/// Writes the long-form summary (one row per cell) and the pivot whose
/// rows are split × dataset type and columns architecture × mechanism.
pub fn write_summary(rows: &[SummaryRow], out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir)?;
    let summary_path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let table_path = out_dir.join("summary_table.csv");
    let mut w = csv::Writer::from_path(&table_path)?;
    let mut header = vec!["split".to_string(), "dataset_type".to_string()];
    header.extend(TABLE_COLUMNS.iter().map(|(a, m)| format!("{a}:{m}")));
    w.write_record(&header)?;
    for split in SplitRatio::ALL {
        for variant in Variant::ALL {
            let mut rec = vec![split.to_string(), variant.to_string()];
            for (a, m) in TABLE_COLUMNS {
                let cell = rows
                    .iter()
                    .find(|r| (r.architecture, r.mechanism, r.dataset_type, r.split) == (a, m, variant, split))
                    .map(table_cell)
                    .unwrap_or_default();
                rec.push(cell);
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok((summary_path, table_path))
}

/// Runs every selected cell against one manifest, then writes the
/// summaries under `opts.run.out_dir`.
pub fn run_matrix(manifest: &DatasetManifest, opts: &MatrixOptions) -> Result<MatrixSummary> {
    let cells = opts.cells();
    let out_dir = &opts.run.out_dir;
    let mut pretrained = opts.pretrained.clone();
    for arch in MATRIX_ARCHITECTURES {
        let needed = cells
            .iter()
            .any(|c| c.architecture == arch && c.mechanism == Mechanism::TransferLearning);
        if !needed || pretrained.contains_key(&arch) {
            continue;
        }
        if !opts.desk {
            return Err(Error::InvalidArgument(format!(
                "transfer cells for {arch} need a pretrained checkpoint"
            )));
        }
        let net_arch = arch.desk();
        let mut p = PretrainOptions::new(net_arch, opts.run.desk_size, mix_seed(opts.seed, 0x9e));
        p.images_per_class = opts.pretrain_images_per_class;
        p.labels = opts.pretrain_labels;
        if let Some(o) = &opts.optimizer {
            p.optimizer = OptimizerConfig {
                batch_size: p.optimizer.batch_size,
                ..o.clone()
            };
        }
        let path = out_dir.join("checkpoints").join(format!("pretrain_{net_arch}.vgnt"));
        pretrain_surrogate(&p, &out_dir.join("pretrain_corpus").join(net_arch.as_str()), &path)?;
        pretrained.insert(arch, path);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rows: Vec<(usize, SummaryRow)> = Vec::with_capacity(cells.len());
    // one variant in memory at a time
    for variant in Variant::ALL {
        let group: Vec<(usize, &ExperimentConfig)> = cells.iter().enumerate().filter(|(_, c)| c.dataset_type == variant).collect();
        let mut stores = HashMap::new();
        for (_, c) in &group {
            if let Entry::Vacant(e) = stores.entry(c.network_arch()) {
                e.insert(prepare_for(c, manifest, &opts.run)?);
            }
        }
        let done: Vec<Result<(usize, SummaryRow)>> = pool.install(|| {
            group
                .par_iter()
                .map(|&(i, c)| {
                    let mut run = opts.run.clone();
                    run.pretrained = pretrained.get(&c.architecture).cloned();
                    let out = run_prepared(c, &stores[&c.network_arch()], &run)?;
                    let last = out.logs.last().expect("at least one epoch");
                    Ok((
                        i,
                        SummaryRow {
                            config: c.name(),
                            architecture: c.architecture,
                            mechanism: c.mechanism,
                            dataset_type: c.dataset_type,
                            split: c.split,
                            seed: c.seed,
                            epochs: out.logs.len(),
                            mean_f1: last.report.mean_f1,
                            mean_precision: last.report.mean_precision,
                            mean_recall: last.report.mean_recall,
                            accuracy: last.report.accuracy,
                            train_loss: last.train_loss,
                            test_loss: last.test_loss,
                        },
                    ))
                })
                .collect()
        });
        for r in done {
            rows.push(r?);
        }
    }
    rows.sort_by_key(|(i, _)| *i);
    let rows: Vec<SummaryRow> = rows.into_iter().map(|(_, r)| r).collect();
    let (summary_path, table_path) = write_summary(&rows, out_dir)?;
    Ok(MatrixSummary {
        rows,
        summary_path,
        table_path,
    })
}
