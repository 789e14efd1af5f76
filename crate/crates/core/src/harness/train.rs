use std::borrow::Cow;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, Mechanism};
use super::mix_seed;
use crate::data::{
    batch_indices, channel_means, generate, grouped_split_indices, prepare_rgb, subtract_means, ClassRegistry, DatasetManifest,
    PrepareOptions, SampleRecord, SplitRatio, SplitSpec, SynthLabels, SynthOptions, Variant,
};
use crate::error::{Error, Result};
use crate::evaluation::{argmax, macro_metrics, ConfusionMatrix, MetricsReport};
use crate::imaging::RgbImage;
use crate::layers::{LayerKind, Mode};
use crate::network::{backward, build, forward, transfer_reset, Architecture, Checkpoint, CheckpointMeta, InitPolicy, NetworkGraph};
use crate::optimizer::{lr_at_epoch, sgd_step, OptimizerConfig, VelocityState};
use crate::tensor::Tensor;

/// Side length images are resized to before the centre crop at full scale.
pub const FULL_RESIZE: usize = 256;

/// Networks see `(pixel − mean) · INPUT_SCALE`, i.e. 8-bit intensity units.
pub const INPUT_SCALE: f32 = 255.0;

/// Mean subtraction and scaling applied to every network input.
pub fn normalise_input(t: &mut Tensor, means: [f32; 3]) {
    subtract_means(t, means);
    t.data_mut().iter_mut().for_each(|v| *v *= INPUT_SCALE);
}

fn centre_crop(t: &Tensor, size: usize) -> Tensor {
    let (h, w) = (t.dim(1), t.dim(2));
    if (h, w) == (size, size) {
        return t.clone();
    }
    let (y0, x0) = ((h - size) / 2, (w - size) / 2);
    Tensor::from_fn(vec![3, size, size], |i| {
        let (c, r) = (i / (size * size), i % (size * size));
        t.data()[c * h * w + (y0 + r / size) * w + x0 + r % size]
    })
}

/// Preprocessed images of one dataset variant, not yet mean-subtracted.
pub struct SampleStore {
    pub variant: Variant,
    /// Network input side.
    pub size: usize,
    pub labels: Vec<usize>,
    pub records: Vec<SampleRecord>,
    source: Source,
}

enum Source {
    Memory(Vec<Tensor>),
    Disk { paths: Vec<PathBuf>, opts: PrepareOptions },
}

/// Prepares a manifest for a network with input side `size`. Images are
/// resized straight to `size` when `resize_to` is `None`; otherwise to
/// `resize_to` and then centre-cropped. `in_memory` decodes everything up
/// front.
pub fn prepare_store(
    manifest: &DatasetManifest,
    variant: Variant,
    size: usize,
    resize_to: Option<usize>,
    in_memory: bool,
) -> Result<SampleStore> {
    let opts = PrepareOptions::with_size(resize_to.unwrap_or(size));
    let paths: Vec<PathBuf> = manifest.records.iter().map(|r| manifest.resolve(r)).collect();
    let labels = manifest.records.iter().map(|r| r.class_id).collect();
    let mut store = SampleStore {
        variant,
        size,
        labels,
        records: manifest.records.clone(),
        source: Source::Disk { paths, opts },
    };
    if in_memory {
        let tensors = (0..store.len())
            .map(|i| store.get(i).map(Cow::into_owned))
            .collect::<Result<Vec<_>>>()?;
        store.source = Source::Memory(tensors);
    }
    Ok(store)
}

impl SampleStore {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[3 × size × size]` in `[0, 1]`.
    pub fn get(&self, i: usize) -> Result<Cow<'_, Tensor>> {
        match &self.source {
            Source::Memory(t) => Ok(Cow::Borrowed(&t[i])),
            Source::Disk { paths, opts } => {
                let img = prepare_rgb(&RgbImage::load(&paths[i])?, self.variant, opts)?;
                Ok(Cow::Owned(centre_crop(&img.to_tensor(), self.size)))
            }
        }
    }

    pub fn means(&self, indices: &[usize]) -> Result<[f32; 3]> {
        match &self.source {
            Source::Memory(t) => Ok(channel_means(indices.iter().map(|&i| &t[i]))),
            Source::Disk { .. } => {
                let loaded = indices
                    .iter()
                    .map(|&i| self.get(i).map(Cow::into_owned))
                    .collect::<Result<Vec<_>>>()?;
                Ok(channel_means(&loaded))
            }
        }
    }

    /// Mean-subtracted batch `[B × 3 × size × size]`.
    pub fn batch(&self, indices: &[usize], means: [f32; 3]) -> Result<Tensor> {
        let plane = 3 * self.size * self.size;
        let mut data = Vec::with_capacity(indices.len() * plane);
        for &i in indices {
            let mut t = self.get(i)?.into_owned();
            normalise_input(&mut t, means);
            data.extend_from_slice(t.data());
        }
        Tensor::new([indices.len(), 3, self.size, self.size], data)
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub config: String,
    pub seed: u64,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub report: MetricsReport,
}

pub const LOG_HEADER: &str = "config,seed,epoch,lr,train_loss,test_loss,mean_precision,mean_recall,mean_f1,accuracy,samples";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.config,
            self.seed,
            self.epoch,
            self.lr,
            self.train_loss,
            self.test_loss,
            r.mean_precision,
            r.mean_recall,
            r.mean_f1,
            r.accuracy,
            r.samples
        )
    }
}

/// Reads a log written by [`run_experiment`]. Per-class values are not
/// stored and come back empty.
pub fn read_epoch_logs(path: &Path) -> Result<Vec<EpochLog>> {
    let bad = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line != LOG_HEADER {
                return Err(bad(1, "not an epoch log".into()));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(bad(n + 1, format!("expected 11 fields, found {}", f.len())));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| bad(n + 1, format!("field {i}: {e}")));
        let int = |i: usize| f[i].parse::<u64>().map_err(|e| bad(n + 1, format!("field {i}: {e}")));
        let (train_loss, test_loss) = (num(4)?, num(5)?);
        let epoch = int(2)? as usize;
        out.push(EpochLog {
            config: f[0].to_string(),
            seed: int(1)?,
            epoch,
            lr: num(3)?,
            train_loss,
            test_loss,
            report: MetricsReport {
                per_class: Vec::new(),
                mean_precision: num(6)?,
                mean_recall: num(7)?,
                mean_f1: num(8)?,
                accuracy: num(9)?,
                samples: int(10)?,
                epoch: Some(epoch),
                train_loss: Some(train_loss),
                test_loss: Some(test_loss),
            },
        });
    }
    Ok(out)
}

/// Name of the softmax head fed by the evaluation classifier.
pub fn main_head(net: &NetworkGraph) -> String {
    net.layers
        .iter()
        .rev()
        .find(|l| matches!(l.kind, LayerKind::SoftmaxLoss { .. }) && !l.train_only)
        .map(|l| l.name.clone())
        .expect("every built network has a softmax head")
}

const EVAL_BATCH: usize = 100;

/// Logits and summed main-head loss over `indices`, in eval mode.
pub fn evaluate(net: &NetworkGraph, store: &SampleStore, indices: &[usize], means: [f32; 3]) -> Result<(Vec<Vec<f32>>, f64)> {
    let head = main_head(net);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rows = Vec::with_capacity(indices.len());
    let mut loss = 0.0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let x = store.batch(chunk, means)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| store.labels[i]).collect();
        let pass = forward(net, &net.params, &x, Some(&labels), Mode::Eval, &mut rng, None)?;
        loss += pass.losses.head(&head).unwrap_or(0.0);
        let logits = pass.logits();
        rows.extend(logits.data().chunks(net.class_count).map(<[f32]>::to_vec));
    }
    Ok((rows, loss))
}

pub(crate) struct Trained {
    pub net: NetworkGraph,
    pub logs: Vec<EpochLog>,
}

/// SGD over `train`, evaluating on `test` after each epoch. Each log row is
/// written and flushed before the next epoch starts.
#[allow(clippy::too_many_arguments)]
pub(crate) fn train_loop(
    mut net: NetworkGraph,
    store: &SampleStore,
    train: &[usize],
    test: &[usize],
    means: [f32; 3],
    opt: &OptimizerConfig,
    seed: u64,
    name: &str,
    log_path: Option<&Path>,
) -> Result<Trained> {
    opt.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!("`{name}`: empty train or test split")));
    }
    let mut log = match log_path {
        Some(p) => {
            crate::imaging::ensure_parent(p)?;
            let mut f = File::create(p)?;
            writeln!(f, "{LOG_HEADER}")?;
            f.flush()?;
            Some(f)
        }
        None => None,
    };
    let head = main_head(&net);
    let mut params = std::mem::take(&mut net.params);
    let mut velocity = VelocityState::zeros_like(&params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xd0));
    let mut logs = Vec::with_capacity(opt.total_epochs);
    for epoch in 0..opt.total_epochs {
        let lr = lr_at_epoch(opt, epoch)?;
        let mut train_loss = 0.0;
        for batch in batch_indices(train.len(), opt.batch_size, seed, epoch) {
            let idx: Vec<usize> = batch.iter().map(|&b| train[b]).collect();
            let x = store.batch(&idx, means)?;
            let labels: Vec<usize> = idx.iter().map(|&i| store.labels[i]).collect();
            let pass = forward(&net, &params, &x, Some(&labels), Mode::Train, &mut dropout_rng, None)?;
            train_loss += pass.losses.head(&head).unwrap_or(0.0);
            let grads = backward(&pass, &params, 1.0 / idx.len() as f64)?;
            drop(pass);
            sgd_step(&mut params, &grads, &mut velocity, lr, opt)?;
        }
        net.params = params;
        let (rows, test_loss) = evaluate(&net, store, test, means)?;
        params = std::mem::take(&mut net.params);
        let mut cm = ConfusionMatrix::new(net.class_count);
        for (row, &i) in rows.iter().zip(test) {
            cm.add(store.labels[i], argmax(row))?;
        }
        let mut report = macro_metrics(&cm)?;
        let (train_loss, test_loss) = (train_loss / train.len() as f64, test_loss / test.len() as f64);
        report.epoch = Some(epoch);
        report.train_loss = Some(train_loss);
        report.test_loss = Some(test_loss);
        let entry = EpochLog {
            config: name.to_string(),
            seed,
            epoch,
            lr,
            train_loss,
            test_loss,
            report,
        };
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", entry.csv_row())?;
            f.flush()?;
        }
        log::info!(
            "{name} epoch {epoch}: train {train_loss:.4} test {test_loss:.4} f1 {:.4}",
            entry.report.mean_f1
        );
        logs.push(entry);
    }
    net.params = params;
    Ok(Trained { net, logs })
}

/// Where and how a single experiment runs.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Required for transfer learning.
    pub pretrained: Option<PathBuf>,
    /// Desk-mode input side (32 or 64).
    pub desk_size: usize,
    pub registry: ClassRegistry,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            pretrained: None,
            desk_size: 64,
            registry: ClassRegistry::builtin().clone(),
        }
    }

    pub fn input_size(&self, arch: Architecture) -> usize {
        arch.native_input().unwrap_or(self.desk_size)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub logs: Vec<EpochLog>,
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl RunOutcome {
    pub fn final_report(&self) -> &MetricsReport {
        &self.logs.last().expect("at least one epoch").report
    }
}

/// Loads the manifest images for `cfg` in the form the network expects.
pub fn prepare_for(cfg: &ExperimentConfig, manifest: &DatasetManifest, opts: &RunOptions) -> Result<SampleStore> {
    let arch = cfg.network_arch();
    let size = opts.input_size(arch);
    let resize = arch.native_input().map(|_| FULL_RESIZE);
    prepare_store(manifest, cfg.dataset_type, size, resize, cfg.desk)
}

pub fn run_experiment(cfg: &ExperimentConfig, manifest: &DatasetManifest, opts: &RunOptions) -> Result<RunOutcome> {
    if manifest.is_empty() {
        return Err(Error::InvalidArgument("manifest is empty".into()));
    }
    let store = prepare_for(cfg, manifest, opts)?;
    run_prepared(cfg, &store, opts)
}

/// [`run_experiment`] on images already prepared for `cfg`.
pub fn run_prepared(cfg: &ExperimentConfig, store: &SampleStore, opts: &RunOptions) -> Result<RunOutcome> {
    let arch = cfg.network_arch();
    let size = opts.input_size(arch);
    if store.variant != cfg.dataset_type || store.size != size {
        return Err(Error::InvalidArgument(format!(
            "prepared set is {} at {}px, `{}` needs {} at {size}px",
            store.variant,
            store.size,
            cfg.name(),
            cfg.dataset_type
        )));
    }
    let classes = opts.registry.len();
    if let Some(&bad) = store.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label: bad, classes });
    }
    let (train, test) = grouped_split_indices(
        &store.records,
        SplitSpec {
            ratio: cfg.split,
            seed: cfg.seed,
        },
    );
    let means = store.means(&train)?;
    let init = InitPolicy::with_seed(cfg.seed);
    let mut net = build(arch, classes, size, &init)?;
    if cfg.mechanism == Mechanism::TransferLearning {
        let path = opts
            .pretrained
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("`{}` needs a pretrained checkpoint", cfg.name())))?;
        let ckpt = Checkpoint::load(path)?;
        if ckpt.arch != arch || ckpt.input_shape != net.input_shape {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint is {} at {:?}, experiment needs {arch} at {:?}",
                ckpt.arch, ckpt.input_shape, net.input_shape
            )));
        }
        net = transfer_reset(&net, &ckpt, arch.classifier_reset_set(), &init)?;
    }
    let stem = format!("{}_s{}", cfg.file_stem(), cfg.seed);
    let log_path = opts.out_dir.join("logs").join(format!("{stem}.csv"));
    let trained = train_loop(
        net,
        store,
        &train,
        &test,
        means,
        &cfg.optimizer,
        cfg.seed,
        &cfg.name(),
        Some(&log_path),
    )?;
    let checkpoint_path = opts.out_dir.join("checkpoints").join(format!("{stem}.vgnt"));
    let meta = CheckpointMeta {
        variant: Some(cfg.dataset_type.to_string()),
        channel_means: Some(means),
        config: Some(cfg.name()),
    };
    Checkpoint::from_network(&trained.net, meta).save(&trained.net, &checkpoint_path)?;
    Ok(RunOutcome {
        logs: trained.logs,
        log_path,
        checkpoint_path,
    })
}

/// Surrogate pretraining settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOptions {
    pub arch: Architecture,
    pub size: usize,
    pub seed: u64,
    pub images_per_class: usize,
    /// Label set of the pretraining corpus.
    pub labels: SynthLabels,
    pub optimizer: OptimizerConfig,
}

impl PretrainOptions {
    pub fn new(arch: Architecture, size: usize, seed: u64) -> Self {
        Self {
            arch,
            size,
            seed,
            images_per_class: 100,
            labels: SynthLabels::CropOnly,
            optimizer: OptimizerConfig::with_batch_size(arch.batch_size()),
        }
    }
}

/// Seed offset separating the pretraining corpus from any evaluation
/// corpus generated with the same user seed.
pub const PRETRAIN_CORPUS_SALT: u64 = 0x7072_6574_7261_696e;

/// Trains a classifier on a freshly generated synthetic corpus
/// and writes its checkpoint to `out`.
pub fn pretrain_surrogate(opts: &PretrainOptions, work_dir: &Path, out: &Path) -> Result<Checkpoint> {
    if opts.arch.native_input().is_some() {
        return Err(Error::InvalidArgument(format!(
            "surrogate pretraining targets the mini architectures, not {}",
            opts.arch
        )));
    }
    let corpus = generate(
        &SynthOptions {
            seed: mix_seed(opts.seed, PRETRAIN_CORPUS_SALT),
            images_per_class: opts.images_per_class,
            size: opts.size,
            labels: opts.labels,
        },
        work_dir,
    )?;
    let manifest = crate::data::load_manifest(&corpus.manifest_path, &corpus.registry)?;
    let store = prepare_store(&manifest, Variant::Color, opts.size, None, true)?;
    let (train, test) = grouped_split_indices(
        &store.records,
        SplitSpec {
            ratio: SplitRatio::S80_20,
            seed: opts.seed,
        },
    );
    let means = store.means(&train)?;
    let net = build(
        opts.arch,
        corpus.registry.len(),
        opts.size,
        &InitPolicy::with_seed(mix_seed(opts.seed, 1)),
    )?;
    let name = format!("pretrain:{}", opts.arch);
    let log_path = out.with_extension("csv");
    let trained = train_loop(
        net,
        &store,
        &train,
        &test,
        means,
        &opts.optimizer,
        opts.seed,
        &name,
        Some(&log_path),
    )?;
    let meta = CheckpointMeta {
        variant: Some(Variant::Color.to_string()),
        channel_means: Some(means),
        config: Some(name),
    };
    let ckpt = Checkpoint::from_network(&trained.net, meta);
    ckpt.save(&trained.net, out)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_minivillage, load_manifest};

    fn quick(cfg: &mut ExperimentConfig, epochs: usize) {
        cfg.desk = true;
        cfg.optimizer.total_epochs = epochs;
        cfg.optimizer.step_epochs = epochs.max(1);
    }

    #[test]
    fn logs_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = gen_minivillage(2, 3, 32, &dir.path().join("c")).unwrap();
        let manifest = load_manifest(&corpus.manifest_path, &corpus.registry).unwrap();
        let mut cfg = crate::harness::parse_config("AlexNet:TrainingFromScratch:Color:80-20").unwrap();
        quick(&mut cfg, 2);
        let mut opts = RunOptions::new(dir.path().join("out"));
        opts.desk_size = 32;
        let a = run_experiment(&cfg, &manifest, &opts).unwrap();
        assert_eq!(a.logs.len(), 2);
        let back = read_epoch_logs(&a.log_path).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in a.logs.iter().zip(&back) {
            assert_eq!(x.csv_row(), y.csv_row());
            assert_eq!(x.lr, lr_at_epoch(&cfg.optimizer, x.epoch).unwrap());
        }
        let ck = Checkpoint::load(&a.checkpoint_path).unwrap();
        assert_eq!(ck.meta.config.as_deref(), Some("AlexNet:TrainingFromScratch:Color:80-20"));
        assert_eq!(ck.arch, Architecture::AlexNetMini);
        let bytes = std::fs::read(&a.log_path).unwrap();
        let b = run_experiment(&cfg, &manifest, &opts).unwrap();
        assert_eq!(bytes, std::fs::read(&b.log_path).unwrap());
    }

    #[test]
    fn transfer_needs_matching_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = gen_minivillage(2, 2, 32, &dir.path().join("c")).unwrap();
        let manifest = load_manifest(&corpus.manifest_path, &corpus.registry).unwrap();
        let mut cfg = crate::harness::parse_config("AlexNet:TransferLearning:Color:50-50").unwrap();
        quick(&mut cfg, 1);
        let mut opts = RunOptions::new(dir.path().join("out"));
        opts.desk_size = 32;
        assert!(matches!(run_experiment(&cfg, &manifest, &opts), Err(Error::InvalidArgument(_))));

        let mut p = PretrainOptions::new(Architecture::GoogLeNetMini, 32, 1);
        p.images_per_class = 2;
        p.optimizer.total_epochs = 1;
        let ck = dir.path().join("pre.vgnt");
        pretrain_surrogate(&p, &dir.path().join("pre"), &ck).unwrap();
        opts.pretrained = Some(ck.clone());
        assert!(matches!(run_experiment(&cfg, &manifest, &opts), Err(Error::CheckpointMismatch(_))));

        p.arch = Architecture::AlexNetMini;
        let pre = pretrain_surrogate(&p, &dir.path().join("pre2"), &ck).unwrap();
        assert_eq!(pre.class_count, 14);
        let out = run_experiment(&cfg, &manifest, &opts).unwrap();
        let tuned = Checkpoint::load(&out.checkpoint_path).unwrap();
        assert_eq!(tuned.class_count, 38);
    }

    #[test]
    fn centre_crop_takes_middle() {
        let t = Tensor::from_fn(vec![3, 4, 4], |i| i as f32);
        let c = centre_crop(&t, 2);
        assert_eq!(c.data()[..4], [5.0, 6.0, 9.0, 10.0]);
        assert_eq!(c.data()[4], 21.0);
    }
}
