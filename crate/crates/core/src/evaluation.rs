//! Confusion matrices, macro metrics, top-k and crop-conditional scoring.

use serde::Serialize;

use crate::data::ClassRegistry;
use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for label in [truth, predicted] {
            if label >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.classes..(c + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|r| self.get(r, c)).sum()
    }

    /// Sums two shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::InvalidArgument(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub accuracy: f64,
    pub samples: u64,
    pub epoch: Option<usize>,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro precision, recall and F1. Zero denominators count
/// as 0 and stay in the mean.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.classes)
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics { precision, recall, f1 }
        })
        .collect();
    let k = cm.classes as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    Ok(MetricsReport {
        mean_precision: mean(|m| m.precision),
        mean_recall: mean(|m| m.recall),
        mean_f1: mean(|m| m.f1),
        accuracy: ratio(cm.trace(), total),
        samples: total,
        per_class,
        epoch: None,
        train_loss: None,
        test_loss: None,
    })
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Whether `label` is among the `k` largest entries, ties broken by lower
/// class index.
pub fn in_topk(row: &[f32], label: usize, k: usize) -> bool {
    let target = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > target || (v == target && i < label))
        .count();
    ahead < k
}

pub fn topk_accuracy(rows: &[Vec<f32>], labels: &[usize], k: usize) -> Result<f64> {
    if rows.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    if let Some(row) = rows.first() {
        if k == 0 || k > row.len() {
            return Err(Error::InvalidArgument(format!("k = {k} with {} classes", row.len())));
        }
    }
    let hits = rows.iter().zip(labels).filter(|(r, &l)| in_topk(r, l, k)).count();
    Ok(ratio(hits as u64, rows.len() as u64))
}

/// Argmax over the classes of `known_crop`.
pub fn crop_conditional_predict(row: &[f32], known_crop: &str, registry: &ClassRegistry) -> Result<usize> {
    let allowed = registry.classes_of_crop(known_crop)?;
    let mut best = allowed[0];
    for &c in &allowed[1..] {
        if row[c] > row[best] {
            best = c;
        }
    }
    Ok(best)
}

pub fn random_baseline(classes: usize) -> f64 {
    1.0 / classes as f64
}

/// Restricts to crops with at least `n_min` classes; returns
/// `(class_count, crop_count, crop_count / class_count)`.
pub fn crop_restricted_baseline(registry: &ClassRegistry, n_min: usize) -> Result<(usize, usize, f64)> {
    let mut classes = 0;
    let mut crops = 0;
    for crop in registry.crops() {
        let n = registry.classes_of_crop(crop)?.len();
        if n >= n_min {
            classes += n;
            crops += 1;
        }
    }
    if classes == 0 {
        return Err(Error::EmptyRestriction(n_min));
    }
    Ok((classes, crops, crops as f64 / classes as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassEntry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent formula, written out loop by loop.
    fn oracle(rows: &[Vec<u64>]) -> (f64, f64, f64, f64) {
        let k = rows.len();
        let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
        let mut diag = 0u64;
        let mut total = 0u64;
        for c in 0..k {
            let mut col = 0u64;
            let mut row = 0u64;
            for j in 0..k {
                col += rows[j][c];
                row += rows[c][j];
                total += rows[c][j];
            }
            diag += rows[c][c];
            let pc = if col > 0 { rows[c][c] as f64 / col as f64 } else { 0.0 };
            let rc = if row > 0 { rows[c][c] as f64 / row as f64 } else { 0.0 };
            p += pc;
            r += rc;
            f += if pc + rc > 0.0 { 2.0 * pc * rc / (pc + rc) } else { 0.0 };
        }
        (p / k as f64, r / k as f64, f / k as f64, diag as f64 / total as f64)
    }

    #[test]
    fn hand_case() {
        let cm = ConfusionMatrix::from_rows(&[vec![8, 2], vec![3, 7]]).unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert!((m.per_class[0].f1 - 0.76190).abs() < 1e-5);
        assert!((m.per_class[1].f1 - 0.73684).abs() < 1e-5);
        assert!((m.mean_f1 - 0.74937).abs() < 1e-5);
        assert_eq!(m.accuracy, 0.75);
    }

    #[test]
    fn diagonal_is_perfect() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 1, 0], vec![0, 0, 9]]).unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert_eq!((m.mean_precision, m.mean_recall, m.mean_f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_matrix_errors() {
        assert!(macro_metrics(&ConfusionMatrix::new(4)).is_err());
    }

    #[test]
    fn thousand_random_matrices_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let k = rng.gen_range(1..40);
            let rows: Vec<Vec<u64>> = (0..k)
                .map(|_| (0..k).map(|_| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..50) }).collect())
                .collect();
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            if cm.total() == 0 {
                continue;
            }
            let m = macro_metrics(&cm).unwrap();
            let (p, r, f, a) = oracle(&rows);
            for (x, y) in [(m.mean_precision, p), (m.mean_recall, r), (m.mean_f1, f), (m.accuracy, a)] {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn topk_edges() {
        let rows = vec![vec![0.1, 0.5, 0.4], vec![0.3, 0.3, 0.3]];
        assert_eq!(topk_accuracy(&rows, &[2, 2], 3).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&rows, &[1, 0], 1).unwrap(), 1.0);
        // tie: class 2 sits behind 0 and 1
        assert!(!in_topk(&rows[1], 2, 2));
        assert!(topk_accuracy(&rows, &[0, 0], 4).is_err());
    }

    #[test]
    fn topk_random_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20_000;
        let rows: Vec<Vec<f32>> = (0..n).map(|_| (0..38).map(|_| rng.gen::<f32>()).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..38)).collect();
        let a = topk_accuracy(&rows, &labels, 5).unwrap();
        assert!((a - 5.0 / 38.0).abs() < 0.02, "{a}");
    }

    #[test]
    fn baselines() {
        assert_eq!(format!("{:.2}%", 100.0 * random_baseline(38)), "2.63%");
        assert_eq!(random_baseline(1), 1.0);
        assert_eq!(random_baseline(2), 0.5);
        let reg = ClassRegistry::builtin();
        let (c, k, b) = crop_restricted_baseline(reg, 2).unwrap();
        assert_eq!((c, k, format!("{b:.3}")), (33, 9, "0.273".to_string()));
        let (c, k, b) = crop_restricted_baseline(reg, 3).unwrap();
        assert_eq!((c, k, format!("{b:.3}")), (25, 5, "0.200".to_string()));
        assert!(matches!(crop_restricted_baseline(reg, 50), Err(Error::EmptyRestriction(50))));

        let pairs: Vec<ClassEntry> = (0..6)
            .map(|i| ClassEntry {
                class_id: i,
                crop: format!("c{}", i / 2),
                disease: format!("d{i}"),
            })
            .collect();
        let reg = ClassRegistry::new(pairs).unwrap();
        assert_eq!(crop_restricted_baseline(&reg, 2).unwrap().2, 0.5);
    }

    #[test]
    fn crop_conditional_cases() {
        let reg = ClassRegistry::builtin();
        let row: Vec<f32> = (0..38).map(|i| i as f32).collect();
        // single-class crops are forced
        for crop in ["Blueberry", "Orange", "Raspberry", "Soybean", "Squash"] {
            let only = reg.classes_of_crop(crop).unwrap();
            assert_eq!(only.len(), 1);
            assert_eq!(crop_conditional_predict(&row, crop, reg).unwrap(), only[0]);
        }
        assert!(matches!(crop_conditional_predict(&row, "Durian", reg), Err(Error::UnknownCrop(_))));

        let everything: Vec<ClassEntry> = (0..5)
            .map(|i| ClassEntry {
                class_id: i,
                crop: "x".into(),
                disease: format!("d{i}"),
            })
            .collect();
        let one_crop = ClassRegistry::new(everything).unwrap();
        let r = [0.2, 0.9, 0.9, 0.1, 0.3];
        assert_eq!(crop_conditional_predict(&r, "x", &one_crop).unwrap(), argmax(&r));
    }

    #[test]
    fn three_class_crop_matches_filter_scan() {
        let reg = ClassRegistry::builtin();
        let grape = reg.classes_of_crop("Grape").unwrap();
        assert_eq!(grape.len(), 4);
        let potato = reg.classes_of_crop("Potato").unwrap();
        assert_eq!(potato.len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let row: Vec<f32> = (0..38).map(|_| rng.gen()).collect();
            let scan = (0..38)
                .filter(|c| potato.contains(c))
                .fold(None, |best: Option<usize>, c| match best {
                    Some(b) if row[b] >= row[c] => Some(b),
                    _ => Some(c),
                })
                .unwrap();
            assert_eq!(crop_conditional_predict(&row, "Potato", reg).unwrap(), scan);
        }
    }

    fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
        (2usize..8).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0u64..20, k), k))
    }

    proptest! {
        #[test]
        fn permutation_equivariant(rows in matrix_strategy(), seed in any::<u64>()) {
            let k = rows.len();
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            prop_assume!(cm.total() > 0);
            let mut perm: Vec<usize> = (0..k).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
            let mut permuted = vec![vec![0; k]; k];
            for i in 0..k {
                for j in 0..k {
                    permuted[perm[i]][perm[j]] = rows[i][j];
                }
            }
            let a = macro_metrics(&cm).unwrap();
            let b = macro_metrics(&ConfusionMatrix::from_rows(&permuted).unwrap()).unwrap();
            for c in 0..k {
                prop_assert_eq!(&a.per_class[c], &b.per_class[perm[c]]);
            }
            prop_assert!((a.mean_f1 - b.mean_f1).abs() < 1e-12);
            prop_assert!((a.mean_precision - b.mean_precision).abs() < 1e-12);
            prop_assert!((a.mean_recall - b.mean_recall).abs() < 1e-12);
            prop_assert_eq!(a.accuracy, b.accuracy);
        }

        #[test]
        fn top1_equals_argmax_accuracy(rows in prop::collection::vec(prop::collection::vec(-3i32..3, 6), 1..40), labels_seed in any::<u64>()) {
            let rows: Vec<Vec<f32>> = rows.into_iter().map(|r| r.into_iter().map(|v| v as f32).collect()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(labels_seed);
            let labels: Vec<usize> = rows.iter().map(|_| rng.gen_range(0..6)).collect();
            let mut cm = ConfusionMatrix::new(6);
            for (r, &l) in rows.iter().zip(&labels) {
                cm.add(l, argmax(r)).unwrap();
            }
            let acc = macro_metrics(&cm).unwrap().accuracy;
            prop_assert_eq!(topk_accuracy(&rows, &labels, 1).unwrap(), acc);
        }

        #[test]
        fn crop_conditional_never_hurts(seed in any::<u64>(), n in 1usize..60) {
            let reg = ClassRegistry::builtin();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut plain, mut cond) = (0, 0);
            for _ in 0..n {
                let row: Vec<f32> = (0..38).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let label = rng.gen_range(0..38);
                let crop = &reg.entry(label).unwrap().crop;
                plain += usize::from(argmax(&row) == label);
                cond += usize::from(crop_conditional_predict(&row, crop, reg).unwrap() == label);
            }
            prop_assert!(cond >= plain);
        }
    }
}
