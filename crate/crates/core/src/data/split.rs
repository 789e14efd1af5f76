use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::SampleRecord;
use crate::error::{Error, Result};

/// The five train-test distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitRatio {
    S80_20,
    S60_40,
    S50_50,
    S40_60,
    S20_80,
}

impl SplitRatio {
    pub const ALL: [SplitRatio; 5] = [
        SplitRatio::S80_20,
        SplitRatio::S60_40,
        SplitRatio::S50_50,
        SplitRatio::S40_60,
        SplitRatio::S20_80,
    ];

    pub fn train_fraction(self) -> f64 {
        match self {
            SplitRatio::S80_20 => 0.8,
            SplitRatio::S60_40 => 0.6,
            SplitRatio::S50_50 => 0.5,
            SplitRatio::S40_60 => 0.4,
            SplitRatio::S20_80 => 0.2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitRatio::S80_20 => "80-20",
            SplitRatio::S60_40 => "60-40",
            SplitRatio::S50_50 => "50-50",
            SplitRatio::S40_60 => "40-60",
            SplitRatio::S20_80 => "20-80",
        }
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitRatio::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| Error::Config {
            field: "split",
            token: s.to_string(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratio: SplitRatio,
    pub seed: u64,
}

/// Group key of each record; records without a group id are singletons.
fn group_keys(records: &[SampleRecord]) -> (Vec<usize>, Vec<usize>) {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut sizes = Vec::new();
    let keys = records
        .iter()
        .map(|r| {
            let g = match r.leaf_group_id.as_deref() {
                Some(id) => *ids.entry(id).or_insert_with(|| {
                    sizes.push(0);
                    sizes.len() - 1
                }),
                None => {
                    sizes.push(0);
                    sizes.len() - 1
                }
            };
            sizes[g] += 1;
            g
        })
        .collect();
    (keys, sizes)
}

/// Whole groups are shuffled by seed and assigned to train while the train
/// image count is below `round(fraction · N)`; the rest go to test. Both
/// sides keep manifest order.
pub fn grouped_split(records: &[SampleRecord], spec: SplitSpec) -> (Vec<SampleRecord>, Vec<SampleRecord>) {
    let (train_idx, test_idx) = grouped_split_indices(records, spec);
    (
        train_idx.into_iter().map(|i| records[i].clone()).collect(),
        test_idx.into_iter().map(|i| records[i].clone()).collect(),
    )
}

pub fn grouped_split_indices(records: &[SampleRecord], spec: SplitSpec) -> (Vec<usize>, Vec<usize>) {
    let (keys, sizes) = group_keys(records);
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let target = (spec.ratio.train_fraction() * records.len() as f64).round() as usize;
    let mut in_train = vec![false; sizes.len()];
    let mut count = 0;
    for g in order {
        if count >= target {
            break;
        }
        in_train[g] = true;
        count += sizes[g];
    }
    (0..records.len()).partition(|&i| in_train[keys[i]])
}

/// Shuffled index batches for one epoch; the last batch may be short.
pub fn batch_indices(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn make_batches<T: Clone>(records: &[T], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<T>> {
    batch_indices(records.len(), batch_size, seed, epoch)
        .into_iter()
        .map(|b| b.into_iter().map(|i| records[i].clone()).collect())
        .collect()
}

/// Outcome of a split audit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitCheck {
    pub train: usize,
    pub test: usize,
    pub target_train: usize,
    pub leaked_groups: usize,
    pub largest_group: usize,
    /// Per class `(train, test)` counts.
    pub per_class: Vec<(usize, usize)>,
}

impl SplitCheck {
    /// No leakage and train count within one group of the target.
    pub fn ok(&self) -> bool {
        self.leaked_groups == 0 && self.train.abs_diff(self.target_train) <= self.largest_group.max(1)
    }
}

pub fn check_split(records: &[SampleRecord], train: &[SampleRecord], test: &[SampleRecord], spec: SplitSpec, classes: usize) -> SplitCheck {
    let mut sides: HashMap<&str, (bool, bool)> = HashMap::new();
    for r in train {
        if let Some(g) = r.leaf_group_id.as_deref() {
            sides.entry(g).or_default().0 = true;
        }
    }
    for r in test {
        if let Some(g) = r.leaf_group_id.as_deref() {
            sides.entry(g).or_default().1 = true;
        }
    }
    let (_, sizes) = group_keys(records);
    let mut per_class = vec![(0, 0); classes];
    for r in train {
        per_class[r.class_id].0 += 1;
    }
    for r in test {
        per_class[r.class_id].1 += 1;
    }
    SplitCheck {
        train: train.len(),
        test: test.len(),
        target_train: (spec.ratio.train_fraction() * records.len() as f64).round() as usize,
        leaked_groups: sides.values().filter(|(a, b)| *a && *b).count(),
        largest_group: sizes.into_iter().max().unwrap_or(0),
        per_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn rec(i: usize, group: Option<String>) -> SampleRecord {
        SampleRecord {
            image_path: format!("{i}.png"),
            class_id: i % 38,
            leaf_group_id: group,
            known_crop: None,
        }
    }

    fn grouped(sizes: &[usize]) -> Vec<SampleRecord> {
        let mut out = Vec::new();
        for (g, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                out.push(rec(out.len(), Some(format!("g{g}"))));
            }
        }
        out
    }

    #[test]
    fn singletons_half() {
        let records: Vec<_> = (0..10).map(|i| rec(i, None)).collect();
        let (tr, te) = grouped_split(
            &records,
            SplitSpec {
                ratio: SplitRatio::S50_50,
                seed: 3,
            },
        );
        assert_eq!((tr.len(), te.len()), (5, 5));
    }

    #[test]
    fn five_pairs_eighty_twenty() {
        let records = grouped(&[2; 5]);
        let (tr, te) = grouped_split(
            &records,
            SplitSpec {
                ratio: SplitRatio::S80_20,
                seed: 1,
            },
        );
        assert_eq!((tr.len(), te.len()), (8, 2));
    }

    #[test]
    fn order_preserved_and_deterministic() {
        let records = grouped(&[1, 3, 2, 2, 1, 3, 1]);
        let spec = SplitSpec {
            ratio: SplitRatio::S60_40,
            seed: 9,
        };
        let (a, b) = grouped_split_indices(&records, spec);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert_eq!((a.clone(), b.clone()), grouped_split_indices(&records, spec));
    }

    #[test]
    fn batches() {
        let r: Vec<usize> = (0..100).collect();
        assert_eq!(make_batches(&r, 100, 0, 0).len(), 1);
        let r: Vec<usize> = (0..25).collect();
        let b = make_batches(&r, 24, 0, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [24, 1]);
        assert_eq!(b, make_batches(&r, 24, 0, 0));
        assert_ne!(b, make_batches(&r, 24, 0, 1));
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, r);
    }

    #[test]
    fn ratio_names_roundtrip() {
        for r in SplitRatio::ALL {
            assert_eq!(r.as_str().parse::<SplitRatio>().unwrap(), r);
        }
        assert!("70-30".parse::<SplitRatio>().is_err());
    }

    proptest! {
        #[test]
        fn no_leakage_and_tight_fraction(sizes in prop::collection::vec(1usize..4, 1..60), singles in 0usize..20, seed in any::<u64>()) {
            let mut records = grouped(&sizes);
            for _ in 0..singles {
                records.push(rec(records.len(), None));
            }
            for ratio in SplitRatio::ALL {
                let spec = SplitSpec { ratio, seed };
                let (tr, te) = grouped_split(&records, spec);
                let check = check_split(&records, &tr, &te, spec, 38);
                prop_assert!(check.ok(), "{check:?}");
                let all: HashSet<_> = tr.iter().chain(&te).map(|r| r.image_path.clone()).collect();
                prop_assert_eq!(all.len(), records.len());
                prop_assert_eq!(tr.len() + te.len(), records.len());
            }
        }
    }
}
