use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::registry::ClassRegistry;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRecord {
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub image_path: String,
    pub class_id: usize,
    /// Absent means the record is its own group.
    pub leaf_group_id: Option<String>,
    /// Crop supplied with external evaluation sets.
    pub known_crop: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

const REQUIRED: [&str; 4] = ["path", "crop", "disease", "leaf_group_id"];

/// Reads a `path,crop,disease,leaf_group_id[,known_crop]` CSV.
pub fn load_manifest(path: &Path, registry: &ClassRegistry) -> Result<DatasetManifest> {
    let err = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = col(name).ok_or_else(|| err(1, format!("missing column `{name}`")))?;
    }
    let known = col("known_crop");

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let (image, crop, disease, group) = (field(idx[0]), field(idx[1]), field(idx[2]), field(idx[3]));
        if image.is_empty() {
            return Err(err(line, "empty path".into()));
        }
        let class_id = registry.lookup(crop, disease).map_err(|e| err(line, e.to_string()))?;
        let known_crop = match known.map(field).filter(|s| !s.is_empty()) {
            Some(k) => {
                registry.crop_index(k).map_err(|e| err(line, e.to_string()))?;
                Some(k.to_string())
            }
            None => None,
        };
        records.push(SampleRecord {
            image_path: image.to_string(),
            class_id,
            leaf_group_id: (!group.is_empty()).then(|| group.to_string()),
            known_crop,
        });
    }
    Ok(DatasetManifest {
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        records,
    })
}

/// Writes records in the manifest format. The `known_crop` column is
/// emitted only if some record carries one.
pub fn write_manifest(path: &Path, records: &[SampleRecord], registry: &ClassRegistry) -> Result<()> {
    let with_known = records.iter().any(|r| r.known_crop.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = REQUIRED.to_vec();
    if with_known {
        header.push("known_crop");
    }
    w.write_record(&header)?;
    for r in records {
        let e = registry.entry(r.class_id).ok_or_else(|| Error::LabelOutOfRange {
            label: r.class_id,
            classes: registry.len(),
        })?;
        let mut row = vec![
            r.image_path.as_str(),
            e.crop.as_str(),
            e.disease.as_str(),
            r.leaf_group_id.as_deref().unwrap_or(""),
        ];
        if with_known {
            row.push(r.known_crop.as_deref().unwrap_or(""));
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)?.write_all(&bytes)?;
    Ok(())
}
