use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{SplitRatio, Variant};
use crate::error::{Error, Result};
use crate::network::Architecture;
use crate::optimizer::OptimizerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    TransferLearning,
    TrainingFromScratch,
}

impl Mechanism {
    pub const ALL: [Mechanism; 2] = [Mechanism::TransferLearning, Mechanism::TrainingFromScratch];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::TransferLearning => "TransferLearning",
            Mechanism::TrainingFromScratch => "TrainingFromScratch",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::Config {
            field: "mechanism",
            token: s.to_string(),
        })
    }
}

/// Architectures that may appear in the four-field notation.
pub const MATRIX_ARCHITECTURES: [Architecture; 2] = [Architecture::AlexNet, Architecture::GoogLeNet];

/// One cell of the experiment matrix plus its run settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub architecture: Architecture,
    pub mechanism: Mechanism,
    pub dataset_type: Variant,
    pub split: SplitRatio,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Mini architectures on small synthetic images.
    pub desk: bool,
}

impl ExperimentConfig {
    pub fn new(architecture: Architecture, mechanism: Mechanism, dataset_type: Variant, split: SplitRatio) -> Self {
        Self {
            architecture,
            mechanism,
            dataset_type,
            split,
            seed: 0,
            optimizer: OptimizerConfig::with_batch_size(architecture.batch_size()),
            desk: false,
        }
    }

    /// Architecture actually built.
    pub fn network_arch(&self) -> Architecture {
        if self.desk {
            self.architecture.desk()
        } else {
            self.architecture
        }
    }

    /// `Architecture:Mechanism:DatasetType:Split`.
    pub fn name(&self) -> String {
        format_config(self)
    }

    /// Filesystem-safe form of [`Self::name`].
    pub fn file_stem(&self) -> String {
        self.name().replace(':', "_")
    }
}

/// Parses the four-field notation. Seed, optimizer and desk mode take
/// their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let fields: Vec<&str> = text.trim().split(':').collect();
    if fields.len() != 4 {
        return Err(Error::Config {
            field: "config",
            token: text.to_string(),
        });
    }
    let arch = MATRIX_ARCHITECTURES
        .into_iter()
        .find(|a| a.as_str() == fields[0])
        .ok_or_else(|| Error::Config {
            field: "architecture",
            token: fields[0].to_string(),
        })?;
    Ok(ExperimentConfig::new(
        arch,
        fields[1].parse()?,
        fields[2].parse()?,
        fields[3].parse()?,
    ))
}

pub fn format_config(cfg: &ExperimentConfig) -> String {
    format!("{}:{}:{}:{}", cfg.architecture, cfg.mechanism, cfg.dataset_type, cfg.split)
}

/// The 60 cells in canonical order: architecture, mechanism, dataset type,
/// split.
pub fn all_configs() -> Vec<ExperimentConfig> {
    let mut out = Vec::with_capacity(60);
    for a in MATRIX_ARCHITECTURES {
        for m in Mechanism::ALL {
            for v in Variant::ALL {
                for s in SplitRatio::ALL {
                    out.push(ExperimentConfig::new(a, m, v, s));
                }
            }
        }
    }
    out
}

fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let mut rest = text;
    for (i, part) in parts.iter().enumerate() {
        if i == 0 {
            match rest.strip_prefix(part) {
                Some(r) => rest = r,
                None => return false,
            }
        } else if i == parts.len() - 1 {
            return rest.ends_with(part);
        } else {
            match rest.find(part) {
                Some(at) => rest = &rest[at + part.len()..],
                None => return false,
            }
        }
    }
    true
}

/// Cell filter: comma-separated four-field patterns, `*` matching any run
/// of characters within a field. An empty filter matches everything.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellFilter {
    patterns: Vec<[String; 4]>,
}

impl CellFilter {
    pub fn parse(text: &str) -> Result<Self> {
        let mut patterns = Vec::new();
        for p in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let f: Vec<&str> = p.split(':').collect();
            if f.len() != 4 {
                return Err(Error::Config {
                    field: "filter",
                    token: p.to_string(),
                });
            }
            patterns.push([0, 1, 2, 3].map(|i| f[i].to_string()));
        }
        Ok(Self { patterns })
    }

    pub fn matches(&self, cfg: &ExperimentConfig) -> bool {
        if self.patterns.is_empty() {
            return true;
        }
        let name = cfg.name();
        let fields: Vec<&str> = name.split(':').collect();
        self.patterns
            .iter()
            .any(|p| p.iter().zip(&fields).all(|(pat, f)| glob_match(pat, f)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn notation_example() {
        let c = parse_config("GoogLeNet:TransferLearning:GrayScale:60-40").unwrap();
        assert_eq!(
            (c.architecture, c.mechanism, c.dataset_type, c.split),
            (
                Architecture::GoogLeNet,
                Mechanism::TransferLearning,
                Variant::GrayScale,
                SplitRatio::S60_40
            )
        );
        assert_eq!(c.optimizer.batch_size, 24);
    }

    #[test]
    fn errors_name_the_field() {
        let field = |s: &str| match parse_config(s) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field("VGG:TransferLearning:Color:80-20"), "architecture");
        assert_eq!(field("AlexNet:Finetune:Color:80-20"), "mechanism");
        assert_eq!(field("AlexNet:TransferLearning:Sepia:80-20"), "dataset_type");
        assert_eq!(field("AlexNet:TransferLearning:Color:70-30"), "split");
        assert_eq!(field("AlexNet:TransferLearning:Color"), "config");
        assert_eq!(field("AlexNetMini:TransferLearning:Color:80-20"), "architecture");
    }

    #[test]
    fn sixty_cells_roundtrip() {
        let all = all_configs();
        assert_eq!(all.len(), 60);
        let names: std::collections::HashSet<String> = all.iter().map(format_config).collect();
        assert_eq!(names.len(), 60);
        for c in &all {
            assert_eq!(&parse_config(&format_config(c)).unwrap(), c);
        }
    }

    #[test]
    fn filters() {
        let count = |f: &str| {
            let f = CellFilter::parse(f).unwrap();
            all_configs().iter().filter(|c| f.matches(c)).count()
        };
        assert_eq!(count(""), 60);
        assert_eq!(count("GoogLeNet:*:*:80-20"), 6);
        assert_eq!(count("*:*:Color:80-20"), 4);
        assert_eq!(count("*Net:Training*:*:*"), 30);
        assert_eq!(count("AlexNet:*:Color:80-20,GoogLeNet:*:Color:80-20"), 4);
        assert!(CellFilter::parse("AlexNet:*").is_err());
    }

    proptest! {
        #[test]
        fn star_matches_everything(s in "[A-Za-z0-9-]{0,12}") {
            prop_assert!(glob_match("*", &s));
            let (head, tail) = (format!("{s}*"), format!("*{s}"));
            prop_assert!(glob_match(&head, &s));
            prop_assert!(glob_match(&tail, &s));
            prop_assert!(glob_match(&s, &s));
        }
    }
}
