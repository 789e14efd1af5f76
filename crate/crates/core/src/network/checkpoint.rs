//! Binary checkpoint format:
//!
//! ```text
//! "VGNT" | version u16 LE | header_len u32 LE | JSON header | f32 LE data | FNV-1a u64 LE of data
//! ```
//! The header lists every tensor as `{layer, slot, shape, offset}` (offset in
//! bytes from the start of the data region) plus the architecture tag, the
//! class count and free-form run metadata.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::init::fnv1a;
use super::{build, Architecture, InitPolicy, NetworkGraph, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"VGNT";
const VERSION: u16 = 1;

/// Run metadata stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Dataset variant the weights were trained on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// Per-channel training-set means subtracted at input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_means: Option<[f32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub class_count: usize,
    pub input_shape: [usize; 3],
    pub params: ParamStore,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    layer: String,
    slot: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    class_count: usize,
    input_shape: [usize; 3],
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_network(net: &NetworkGraph, meta: CheckpointMeta) -> Self {
        Self {
            arch: net.arch,
            class_count: net.class_count,
            input_shape: net.input_shape,
            params: net.params.clone(),
            meta,
        }
    }

    /// Rebuilds the graph and installs these weights.
    pub fn to_network(&self) -> Result<NetworkGraph> {
        let mut net = build(self.arch, self.class_count, self.input_shape[1], &InitPolicy::default())?;
        if net.input_shape != self.input_shape {
            return Err(Error::CheckpointMismatch(format!(
                "input shape {:?} vs {:?}",
                self.input_shape, net.input_shape
            )));
        }
        for (key, t) in net.params.iter_mut() {
            let src = self
                .params
                .get(key)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing `{key}`")))?;
            if src.shape() != t.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "`{key}` has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        if self.params.len() != net.params.len() {
            return Err(Error::CheckpointMismatch("unexpected extra tensors".into()));
        }
        Ok(net)
    }

    pub fn save(&self, net_layers: &NetworkGraph, path: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        for (layer, slot) in net_layers.slots() {
            let key = format!("{layer}/{slot}");
            let t = self
                .params
                .get(&key)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing `{key}`")))?;
            tensors.push(TensorEntry {
                layer,
                slot,
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            arch: self.arch,
            class_count: self.class_count,
            input_shape: self.input_shape,
            tensors,
            meta: self.meta.clone(),
        })?;
        let mut data = Vec::with_capacity(offset as usize);
        for (layer, slot) in net_layers.slots() {
            for v in self.params[&format!("{layer}/{slot}")].data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }

        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("vgnt.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            w.write_all(&(header.len() as u32).to_le_bytes())?;
            w.write_all(&header)?;
            w.write_all(&data)?;
            w.write_all(&fnv1a(&data).to_le_bytes())?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        decode(&bytes)
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header_end = 10usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[10..header_end]).map_err(|e| corrupt(format!("header: {e}")))?;

    let data_len: usize = header.tensors.iter().map(|t| 4 * t.shape.iter().product::<usize>()).sum();
    if bytes.len() != header_end + data_len + 8 {
        return Err(corrupt(format!(
            "expected {} bytes, found {}",
            header_end + data_len + 8,
            bytes.len()
        )));
    }
    let data = &bytes[header_end..header_end + data_len];
    let stored = u64::from_le_bytes(bytes[header_end + data_len..].try_into().unwrap());
    if stored != fnv1a(data) {
        return Err(corrupt("checksum mismatch"));
    }

    let mut params = ParamStore::new();
    for t in header.tensors {
        let len: usize = t.shape.iter().product();
        let start = t.offset as usize;
        let chunk = data
            .get(start..start + 4 * len)
            .ok_or_else(|| corrupt(format!("`{}/{}` lies outside the data region", t.layer, t.slot)))?;
        let values = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        params.insert(format!("{}/{}", t.layer, t.slot), Tensor::new(t.shape, values)?);
    }
    Ok(Checkpoint {
        arch: header.arch,
        class_count: header.class_count,
        input_shape: header.input_shape,
        params,
        meta: header.meta,
    })
}

pub fn save_checkpoint(net: &NetworkGraph, path: &Path) -> Result<()> {
    Checkpoint::from_network(net, CheckpointMeta::default()).save(net, path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_desk_variant, transfer_reset};

    fn mini() -> NetworkGraph {
        build_desk_variant(Architecture::GoogLeNetMini, 38, 32, &InitPolicy::with_seed(3)).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vgnt");
        let net = mini();
        let meta = CheckpointMeta {
            variant: Some("Color".into()),
            channel_means: Some([0.25, 0.5, 0.125]),
            config: None,
        };
        Checkpoint::from_network(&net, meta.clone()).save(&net, &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.class_count, 38);
        assert_eq!(ck.meta, meta);
        assert_eq!(ck.params, net.params);
        assert_eq!(ck.to_network().unwrap().params, net.params);
    }

    #[test]
    fn truncation_and_bit_flips_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vgnt");
        let net = mini();
        save_checkpoint(&net, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [0, 3, 9, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let i = bytes.len() - 20;
        flipped[i] ^= 1;
        fs::write(&path, &flipped).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn reset_touches_only_named_layers() {
        let src = mini();
        let ck = Checkpoint::from_network(&src, CheckpointMeta::default());
        let target = build_desk_variant(Architecture::GoogLeNetMini, 38, 32, &InitPolicy::with_seed(9)).unwrap();

        let same = transfer_reset(&target, &ck, &[], &InitPolicy::with_seed(9)).unwrap();
        assert_eq!(same.params, src.params);

        let reset = transfer_reset(&target, &ck, &["loss3/classifier"], &InitPolicy::with_seed(9)).unwrap();
        for (k, v) in &reset.params {
            if k.starts_with("loss3/classifier/") {
                assert_eq!(v, &target.params[k]);
                if k.ends_with("weight") {
                    assert_ne!(v, &src.params[k]);
                }
            } else {
                assert_eq!(v, &src.params[k], "{k}");
            }
        }
        assert!(matches!(
            transfer_reset(&target, &ck, &["nope"], &InitPolicy::default()),
            Err(Error::UnknownLayer(_))
        ));
    }

    #[test]
    fn reset_allows_a_new_class_count() {
        let pre = build_desk_variant(Architecture::AlexNetMini, 14, 32, &InitPolicy::with_seed(1)).unwrap();
        let ck = Checkpoint::from_network(&pre, CheckpointMeta::default());
        let target = build_desk_variant(Architecture::AlexNetMini, 38, 32, &InitPolicy::with_seed(2)).unwrap();
        let net = transfer_reset(&target, &ck, &["fc8"], &InitPolicy::with_seed(2)).unwrap();
        assert_eq!(net.params["fc8/weight"].shape(), &[256, 38]);
        assert_eq!(net.params["conv1/weight"], pre.params["conv1/weight"]);
        assert!(matches!(
            transfer_reset(&target, &ck, &[], &InitPolicy::default()),
            Err(Error::CheckpointMismatch(_))
        ));
    }
}
