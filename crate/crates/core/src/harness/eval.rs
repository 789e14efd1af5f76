use serde::Serialize;

use super::train::{evaluate, prepare_store, FULL_RESIZE};
use crate::data::{ClassRegistry, DatasetManifest, Variant};
use crate::error::{Error, Result};
use crate::evaluation::{argmax, crop_conditional_predict, macro_metrics, topk_accuracy, ConfusionMatrix, MetricsReport};
use crate::network::Checkpoint;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub metrics: MetricsReport,
    pub topk: Option<(usize, f64)>,
    /// Accuracy with argmax restricted to each image's crop.
    pub crop_conditional_accuracy: Option<f64>,
    pub test_loss: f64,
}

/// Scores a checkpoint on every image of `manifest`. With `known_crop`,
/// records lacking a `known_crop` value fall back to the crop of their
/// labelled class.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    manifest: &DatasetManifest,
    registry: &ClassRegistry,
    topk: Option<usize>,
    known_crop: bool,
) -> Result<EvalReport> {
    if registry.len() != ckpt.class_count {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint has {} classes, registry {}",
            ckpt.class_count,
            registry.len()
        )));
    }
    if manifest.is_empty() {
        return Err(Error::InvalidArgument("manifest is empty".into()));
    }
    let net = ckpt.to_network()?;
    let variant: Variant = ckpt.meta.variant.as_deref().unwrap_or("Color").parse()?;
    let size = net.input_shape[1];
    let resize = net.arch.native_input().map(|_| FULL_RESIZE);
    let store = prepare_store(manifest, variant, size, resize, false)?;
    let all: Vec<usize> = (0..store.len()).collect();
    let (rows, loss) = evaluate(&net, &store, &all, ckpt.meta.channel_means.unwrap_or([0.0; 3]))?;
    let mut cm = ConfusionMatrix::new(net.class_count);
    for (row, &label) in rows.iter().zip(&store.labels) {
        cm.add(label, argmax(row))?;
    }
    let topk = match topk {
        Some(k) => Some((k, topk_accuracy(&rows, &store.labels, k)?)),
        None => None,
    };
    let any_known = manifest.records.iter().any(|r| r.known_crop.is_some());
    let crop_conditional_accuracy = if known_crop || any_known {
        let mut hits = 0usize;
        let mut counted = 0usize;
        for ((row, rec), &label) in rows.iter().zip(&manifest.records).zip(&store.labels) {
            let crop = match (&rec.known_crop, known_crop) {
                (Some(c), _) => c.clone(),
                (None, true) => registry.entry(label).expect("label checked").crop.clone(),
                (None, false) => continue,
            };
            counted += 1;
            hits += usize::from(crop_conditional_predict(row, &crop, registry)? == label);
        }
        Some(hits as f64 / counted.max(1) as f64)
    } else {
        None
    };
    Ok(EvalReport {
        metrics: macro_metrics(&cm)?,
        topk,
        crop_conditional_accuracy,
        test_loss: loss / store.len() as f64,
    })
}
