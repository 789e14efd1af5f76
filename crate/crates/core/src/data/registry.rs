use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label of the disease-free class of each crop.
pub const HEALTHY: &str = "healthy";

const BUILTIN: &str = include_str!("../../data/registry_v1.csv");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: usize,
    pub crop: String,
    pub disease: String,
}

impl ClassEntry {
    pub fn is_healthy(&self) -> bool {
        self.disease == HEALTHY
    }

    pub fn label(&self) -> String {
        format!("{} / {}", self.crop, self.disease)
    }
}

/// Ordered crop-disease classes. Names compare case-insensitively, with
/// `_` treated as a space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassRegistry {
    entries: Vec<ClassEntry>,
    crops: Vec<String>,
}

fn norm(s: &str) -> String {
    s.trim().replace('_', " ").to_lowercase()
}

impl ClassRegistry {
    /// The shipped 38-class registry.
    pub fn builtin() -> &'static ClassRegistry {
        static REG: OnceLock<ClassRegistry> = OnceLock::new();
        REG.get_or_init(|| ClassRegistry::parse(BUILTIN).expect("shipped registry is valid"))
    }

    /// Parses `class_id,crop,disease` rows; `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let body: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let mut entries = Vec::new();
        for row in rdr.deserialize() {
            let e: ClassEntry = row?;
            entries.push(e);
        }
        Self::new(entries)
    }

    pub fn new(entries: Vec<ClassEntry>) -> Result<Self> {
        let mut crops: Vec<String> = Vec::new();
        for (i, e) in entries.iter().enumerate() {
            if e.class_id != i {
                return Err(Error::InvalidArgument(format!(
                    "registry class ids must be 0..K in order, found {} at {i}",
                    e.class_id
                )));
            }
            if entries[..i]
                .iter()
                .any(|o| norm(&o.crop) == norm(&e.crop) && norm(&o.disease) == norm(&e.disease))
            {
                return Err(Error::InvalidArgument(format!("duplicate registry pair {}", e.label())));
            }
            if !crops.iter().any(|c| norm(c) == norm(&e.crop)) {
                crops.push(e.crop.clone());
            }
        }
        Ok(Self { entries, crops })
    }

    /// A registry whose classes are the crops of `self`, one per crop.
    pub fn crop_only(&self) -> ClassRegistry {
        let entries = self
            .crops
            .iter()
            .enumerate()
            .map(|(i, c)| ClassEntry {
                class_id: i,
                crop: c.clone(),
                disease: "any".into(),
            })
            .collect();
        ClassRegistry::new(entries).expect("distinct crops")
    }

    /// One class per distinct disease name plus `healthy`, crop `any`.
    pub fn disease_only(&self) -> ClassRegistry {
        let names = std::iter::once(HEALTHY).chain(self.disease_names());
        let entries = names
            .enumerate()
            .map(|(i, d)| ClassEntry {
                class_id: i,
                crop: "any".into(),
                disease: d.to_string(),
            })
            .collect();
        ClassRegistry::new(entries).expect("distinct diseases")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn entry(&self, class_id: usize) -> Option<&ClassEntry> {
        self.entries.get(class_id)
    }

    /// Crop names in order of first appearance.
    pub fn crops(&self) -> &[String] {
        &self.crops
    }

    /// Distinct disease names, `healthy` excluded.
    pub fn disease_names(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in self.entries.iter().filter(|e| !e.is_healthy()) {
            if !out.iter().any(|d| norm(d) == norm(&e.disease)) {
                out.push(&e.disease);
            }
        }
        out
    }

    /// Number of classes that are not `healthy`.
    pub fn disease_class_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.is_healthy()).count()
    }

    pub fn lookup(&self, crop: &str, disease: &str) -> Result<usize> {
        let (c, d) = (norm(crop), norm(disease));
        self.entries
            .iter()
            .find(|e| norm(&e.crop) == c && norm(&e.disease) == d)
            .map(|e| e.class_id)
            .ok_or_else(|| Error::UnknownClass {
                crop: crop.to_string(),
                disease: disease.to_string(),
            })
    }

    pub fn crop_index(&self, crop: &str) -> Result<usize> {
        let c = norm(crop);
        self.crops
            .iter()
            .position(|k| norm(k) == c)
            .ok_or_else(|| Error::UnknownCrop(crop.to_string()))
    }

    /// Index into [`Self::crops`] of the crop of `class_id`.
    pub fn crop_of(&self, class_id: usize) -> usize {
        self.crop_index(&self.entries[class_id].crop).expect("registry crops are indexed")
    }

    pub fn classes_of_crop(&self, crop: &str) -> Result<Vec<usize>> {
        let idx = self.crop_index(crop)?;
        Ok(self
            .entries
            .iter()
            .filter(|e| self.crop_of(e.class_id) == idx)
            .map(|e| e.class_id)
            .collect())
    }

    /// Registry text in the shipped format.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# class registry, format version 1\nclass_id,crop,disease\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.class_id, e.crop, e.disease));
        }
        out
    }
}
