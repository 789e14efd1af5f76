//! Network graphs: layer DAGs with named parameter slots, the architecture
//! builders, transfer-learning resets, and checkpoint persistence.

mod arch;
pub mod checkpoint;
pub mod exec;
pub mod init;

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::layers::{InceptionSpec, LayerKind, LayerSpec, LrnParams};
use crate::tensor::{Scalar, Tensor, Window};

pub use arch::{build, build_alexnet38, build_desk_variant, build_googlenet38, Architecture};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use exec::{backward, forward, ForwardPass, LossSums};
pub use init::InitPolicy;

/// Name of the network input pseudo-layer.
pub const DATA: &str = "data";

/// Parameter tensors keyed `"<layer>/<slot>"`, in layer order.
pub type ParamStore<T = f32> = IndexMap<String, Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Source {
    Data,
    Layer(usize),
}

#[derive(Clone, Debug)]
pub struct NetworkGraph {
    pub arch: Architecture,
    /// Per-sample input extent `[C, H, W]`.
    pub input_shape: [usize; 3],
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
    pub params: ParamStore,
    /// Layer producing the logits used for evaluation.
    pub output: String,
    pub(crate) sources: Vec<Vec<Source>>,
    /// Per-sample output shape of every layer.
    pub(crate) shapes: Vec<Vec<usize>>,
}

impl NetworkGraph {
    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Per-sample output shape of `name`.
    pub fn output_shape(&self, name: &str) -> Option<&[usize]> {
        self.layer_index(name).map(|i| self.shapes[i].as_slice())
    }

    /// Fully-connected layers feeding a softmax head.
    pub fn classifier_layers(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::SoftmaxLoss { .. }))
            .flat_map(|l| l.inputs.iter().cloned())
            .collect()
    }

    /// `(layer, slot)` pairs in storage order.
    pub fn slots(&self) -> Vec<(String, String)> {
        self.layers
            .iter()
            .flat_map(|l| l.param_slots().into_iter().map(move |s| (l.name.clone(), s)))
            .collect()
    }

    pub fn params_as<T: Scalar>(&self) -> ParamStore<T> {
        self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    }

    pub fn count_layers(&self, tag: &str) -> usize {
        self.layers.iter().filter(|l| l.kind.tag() == tag).count()
    }
}

/// Sum of element counts over every parameter slot.
pub fn count_params(net: &NetworkGraph) -> usize {
    net.params.values().map(Tensor::len).sum()
}

/// Parameter count of the evaluation path, excluding train-only branches.
pub fn count_params_main(net: &NetworkGraph) -> usize {
    net.layers
        .iter()
        .filter(|l| !l.train_only)
        .flat_map(|l| l.param_slots().into_iter().map(move |s| l.param_key(&s)))
        .map(|k| net.params[&k].len())
        .sum()
}

/// Incrementally assembles a [`NetworkGraph`]. Layer helpers take the input
/// layer's name and return the new layer's name.
pub struct GraphBuilder {
    arch: Architecture,
    input_shape: [usize; 3],
    class_count: usize,
    layers: Vec<LayerSpec>,
    train_only: bool,
}

impl GraphBuilder {
    pub fn new(arch: Architecture, input_shape: [usize; 3], class_count: usize) -> Self {
        Self {
            arch,
            input_shape,
            class_count,
            layers: Vec::new(),
            train_only: false,
        }
    }

    /// Marks subsequently added layers as train-only (auxiliary branches).
    pub fn set_train_only(&mut self, on: bool) -> &mut Self {
        self.train_only = on;
        self
    }

    pub fn add(&mut self, name: &str, kind: LayerKind, inputs: &[&str]) -> String {
        self.layers.push(LayerSpec {
            name: name.to_string(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            train_only: self.train_only,
        });
        name.to_string()
    }

    pub fn conv(&mut self, name: &str, input: &str, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> String {
        let window = Window::square(kernel, stride, pad);
        self.add(name, LayerKind::Conv { out_channels, window }, &[input])
    }

    pub fn relu(&mut self, name: &str, input: &str) -> String {
        self.add(name, LayerKind::Relu, &[input])
    }

    pub fn lrn(&mut self, name: &str, input: &str) -> String {
        self.add(name, LayerKind::Lrn(LrnParams::default()), &[input])
    }

    pub fn maxpool(&mut self, name: &str, input: &str, kernel: usize, stride: usize, pad: usize) -> String {
        let window = Window::square(kernel, stride, pad);
        self.add(name, LayerKind::MaxPool { window }, &[input])
    }

    pub fn avgpool(&mut self, name: &str, input: &str, window: Option<Window>) -> String {
        self.add(name, LayerKind::AvgPool { window }, &[input])
    }

    pub fn fc(&mut self, name: &str, input: &str, out_features: usize) -> String {
        self.add(name, LayerKind::FullyConnected { out_features }, &[input])
    }

    pub fn dropout(&mut self, name: &str, input: &str, ratio: f64) -> String {
        self.add(name, LayerKind::Dropout { ratio }, &[input])
    }

    pub fn inception(&mut self, name: &str, input: &str, spec: InceptionSpec) -> String {
        self.add(name, LayerKind::Inception(spec), &[input])
    }

    pub fn softmax_loss(&mut self, name: &str, input: &str, weight: f64) -> String {
        self.add(name, LayerKind::SoftmaxLoss { weight }, &[input])
    }

    /// Resolves edges, infers shapes, and allocates parameters from `init`.
    pub fn finish(self, output: &str, init: &InitPolicy) -> Result<NetworkGraph> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut sources = Vec::with_capacity(self.layers.len());
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        let mut params = ParamStore::new();
        let [c, h, w] = self.input_shape;

        for (i, layer) in self.layers.iter().enumerate() {
            if index.insert(layer.name.as_str(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate layer name `{}`", layer.name)));
            }
            let src: Vec<Source> = layer
                .inputs
                .iter()
                .map(|n| {
                    if n == DATA {
                        Ok(Source::Data)
                    } else {
                        index
                            .get(n.as_str())
                            .filter(|&&j| j < i)
                            .map(|&j| Source::Layer(j))
                            .ok_or_else(|| Error::UnknownLayer(n.clone()))
                    }
                })
                .collect::<Result<_>>()?;
            let in_shapes: Vec<Vec<usize>> = src
                .iter()
                .map(|s| match s {
                    Source::Data => vec![c, h, w],
                    Source::Layer(j) => shapes[*j].clone(),
                })
                .collect();
            let shape = infer(layer, &in_shapes, init, &mut params)?;
            sources.push(src);
            shapes.push(shape);
        }

        let out_idx = *index.get(output).ok_or_else(|| Error::UnknownLayer(output.to_string()))?;
        if shapes[out_idx] != [self.class_count] {
            return Err(Error::ShapeMismatch {
                op: "classifier output",
                left: shapes[out_idx].clone(),
                right: vec![self.class_count],
            });
        }
        Ok(NetworkGraph {
            arch: self.arch,
            input_shape: self.input_shape,
            class_count: self.class_count,
            layers: self.layers,
            params,
            output: output.to_string(),
            sources,
            shapes,
        })
    }
}

fn mismatch(layer: &LayerSpec, shapes: &[Vec<usize>]) -> Error {
    Error::ShapeMismatch {
        op: "graph",
        left: shapes.first().cloned().unwrap_or_default(),
        right: vec![layer.inputs.len()],
    }
}

fn single<'a>(layer: &LayerSpec, shapes: &'a [Vec<usize>]) -> Result<&'a [usize]> {
    match shapes {
        [s] => Ok(s),
        _ => Err(mismatch(layer, shapes)),
    }
}

fn chw(layer: &LayerSpec, shapes: &[Vec<usize>]) -> Result<(usize, usize, usize)> {
    match single(layer, shapes)? {
        &[c, h, w] => Ok((c, h, w)),
        _ => Err(mismatch(layer, shapes)),
    }
}

fn infer(layer: &LayerSpec, in_shapes: &[Vec<usize>], init: &InitPolicy, params: &mut ParamStore) -> Result<Vec<usize>> {
    Ok(match &layer.kind {
        LayerKind::Conv { out_channels, window } => {
            let (c, h, w) = chw(layer, in_shapes)?;
            let (ho, wo) = window.conv_output(h, w)?;
            let key = layer.param_key("weight");
            let shape = [*out_channels, c, window.kernel.0, window.kernel.1];
            params.insert(key.clone(), init.conv_weight(&key, shape));
            params.insert(layer.param_key("bias"), init.bias(*out_channels));
            vec![*out_channels, ho, wo]
        }
        LayerKind::Relu | LayerKind::Lrn(_) | LayerKind::Dropout { .. } => single(layer, in_shapes)?.to_vec(),
        LayerKind::MaxPool { window } => {
            let (c, h, w) = chw(layer, in_shapes)?;
            let (ho, wo) = window.pool_output(h, w)?;
            vec![c, ho, wo]
        }
        LayerKind::AvgPool { window } => {
            let (c, h, w) = chw(layer, in_shapes)?;
            match window {
                Some(win) => {
                    let (ho, wo) = win.pool_output(h, w)?;
                    vec![c, ho, wo]
                }
                None => vec![c, 1, 1],
            }
        }
        LayerKind::FullyConnected { out_features } => {
            let d: usize = single(layer, in_shapes)?.iter().product();
            let key = layer.param_key("weight");
            params.insert(key.clone(), init.fc_weight(&key, [d, *out_features]));
            params.insert(layer.param_key("bias"), init.bias(*out_features));
            vec![*out_features]
        }
        LayerKind::Concat => {
            let first = in_shapes.first().ok_or_else(|| mismatch(layer, in_shapes))?;
            let mut total = 0;
            for s in in_shapes {
                if s.len() != 3 || s[1..] != first[1..] {
                    return Err(mismatch(layer, in_shapes));
                }
                total += s[0];
            }
            vec![total, first[1], first[2]]
        }
        LayerKind::SoftmaxLoss { .. } => {
            let s = single(layer, in_shapes)?;
            if s.len() != 1 {
                return Err(mismatch(layer, in_shapes));
            }
            s.to_vec()
        }
        LayerKind::Inception(spec) => {
            let (c, h, w) = chw(layer, in_shapes)?;
            for ((co, ci, k), slot) in spec.conv_shapes(c).into_iter().zip(crate::layers::BRANCH_SLOTS) {
                let key = layer.param_key(&format!("{slot}/weight"));
                params.insert(key.clone(), init.conv_weight(&key, [co, ci, k, k]));
                params.insert(layer.param_key(&format!("{slot}/bias")), init.bias(co));
            }
            vec![spec.out_channels(), h, w]
        }
    })
}

/// Copies every parameter from `pretrained` except the slots of
/// `reset_layers`, which are re-drawn from `init`. Nothing is frozen.
pub fn transfer_reset(net: &NetworkGraph, pretrained: &Checkpoint, reset_layers: &[&str], init: &InitPolicy) -> Result<NetworkGraph> {
    let reset: HashSet<&str> = reset_layers.iter().copied().collect();
    for name in &reset {
        if net.layer(name).is_none() {
            return Err(Error::UnknownLayer(name.to_string()));
        }
    }
    // a fresh build with `init` supplies the re-drawn slots
    let fresh = build(net.arch, net.class_count, net.input_shape[1], init)?;
    let mut out = net.clone();
    for layer in &net.layers {
        for slot in layer.param_slots() {
            let key = layer.param_key(&slot);
            let value = if reset.contains(layer.name.as_str()) {
                fresh.params[&key].clone()
            } else {
                let src = pretrained
                    .params
                    .get(&key)
                    .ok_or_else(|| Error::CheckpointMismatch(format!("checkpoint lacks `{key}`")))?;
                if src.shape() != net.params[&key].shape() {
                    return Err(Error::CheckpointMismatch(format!(
                        "`{key}`: checkpoint shape {:?}, network shape {:?}",
                        src.shape(),
                        net.params[&key].shape()
                    )));
                }
                src.clone()
            };
            out.params.insert(key, value);
        }
    }
    Ok(out)
}
