//! Forward and backward passes for every layer kind, plus the layer
//! descriptors used by [`crate::network::NetworkGraph`].

pub mod activation;
pub mod concat;
pub mod conv;
pub mod dropout;
pub mod fc;
pub mod gradcheck;
pub mod inception;
pub mod lrn;
pub mod pool;
pub mod softmax;

use serde::{Deserialize, Serialize};

pub use activation::{relu_backward, relu_forward};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask, Mode};
pub use fc::{fc_backward, fc_forward, FcGrads};
pub use inception::{inception_backward, inception_forward, InceptionParams, InceptionSpec, BRANCH_SLOTS};
pub use lrn::{lrn_backward, lrn_forward, LrnParams};
pub use pool::{avgpool_backward, avgpool_forward, maxpool_backward, maxpool_forward};
pub use softmax::{softmax, softmax_xent, softmax_xent_backward};

use crate::tensor::Window;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        window: Window,
    },
    Relu,
    Lrn(LrnParams),
    MaxPool {
        window: Window,
    },
    /// `None` pools over the whole spatial extent.
    AvgPool {
        window: Option<Window>,
    },
    FullyConnected {
        out_features: usize,
    },
    Dropout {
        ratio: f64,
    },
    Concat,
    /// Softmax head; `weight` scales its loss in the training objective.
    SoftmaxLoss {
        weight: f64,
    },
    Inception(InceptionSpec),
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "Conv",
            LayerKind::Relu => "ReLU",
            LayerKind::Lrn(_) => "LRN",
            LayerKind::MaxPool { .. } => "MaxPool",
            LayerKind::AvgPool { .. } => "AvgPool",
            LayerKind::FullyConnected { .. } => "FullyConnected",
            LayerKind::Dropout { .. } => "Dropout",
            LayerKind::Concat => "Concat",
            LayerKind::SoftmaxLoss { .. } => "SoftmaxLoss",
            LayerKind::Inception(_) => "Inception",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Names of producer layers; `"data"` is the network input.
    pub inputs: Vec<String>,
    /// Skipped in eval mode (auxiliary classifier branches).
    #[serde(default)]
    pub train_only: bool,
}

impl LayerSpec {
    /// Parameter slot names owned by this layer, without the layer prefix.
    pub fn param_slots(&self) -> Vec<String> {
        match &self.kind {
            LayerKind::Conv { .. } | LayerKind::FullyConnected { .. } => vec!["weight".into(), "bias".into()],
            LayerKind::Inception(_) => BRANCH_SLOTS
                .iter()
                .flat_map(|b| [format!("{b}/weight"), format!("{b}/bias")])
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Fully-qualified parameter key, `"<layer>/<slot>"`.
    pub fn param_key(&self, slot: &str) -> String {
        format!("{}/{}", self.name, slot)
    }
}
