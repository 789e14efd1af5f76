use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GraphBuilder, InitPolicy, NetworkGraph, DATA};
use crate::error::{Error, Result};
use crate::layers::InceptionSpec;
use crate::tensor::Window;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    AlexNet,
    GoogLeNet,
    AlexNetMini,
    GoogLeNetMini,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::AlexNet,
        Architecture::GoogLeNet,
        Architecture::AlexNetMini,
        Architecture::GoogLeNetMini,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::AlexNet => "AlexNet",
            Architecture::GoogLeNet => "GoogLeNet",
            Architecture::AlexNetMini => "AlexNetMini",
            Architecture::GoogLeNetMini => "GoogLeNetMini",
        }
    }

    /// The channel-reduced counterpart (identity on minis).
    pub fn desk(self) -> Self {
        match self {
            Architecture::AlexNet | Architecture::AlexNetMini => Architecture::AlexNetMini,
            Architecture::GoogLeNet | Architecture::GoogLeNetMini => Architecture::GoogLeNetMini,
        }
    }

    pub fn is_alexnet_family(self) -> bool {
        matches!(self, Architecture::AlexNet | Architecture::AlexNetMini)
    }

    /// Fixed input crop of the full builds.
    pub fn native_input(self) -> Option<usize> {
        match self {
            Architecture::AlexNet => Some(227),
            Architecture::GoogLeNet => Some(224),
            _ => None,
        }
    }

    /// Layers re-initialized when transferring to a new label set.
    pub fn classifier_reset_set(self) -> &'static [&'static str] {
        match self {
            Architecture::AlexNet | Architecture::AlexNetMini => &["fc8"],
            Architecture::GoogLeNet => &["loss1/classifier", "loss2/classifier", "loss3/classifier"],
            Architecture::GoogLeNetMini => &["loss3/classifier"],
        }
    }

    /// Training batch size.
    pub fn batch_size(self) -> usize {
        if self.is_alexnet_family() {
            100
        } else {
            24
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config {
                field: "architecture",
                token: s.to_string(),
            })
    }
}

/// Builds any architecture. Full builds require their native input size.
pub fn build(arch: Architecture, class_count: usize, input_size: usize, init: &InitPolicy) -> Result<NetworkGraph> {
    match arch.native_input() {
        Some(native) if native != input_size => Err(Error::UnsupportedInputSize(input_size)),
        Some(_) if arch == Architecture::AlexNet => alexnet(class_count, init),
        Some(_) => googlenet(class_count, init),
        None => build_desk_variant(arch, class_count, input_size, init),
    }
}

/// AlexNet with ungrouped convolutions on a 227×227 crop, classifier sized to 38.
pub fn build_alexnet38(init: &InitPolicy) -> Result<NetworkGraph> {
    alexnet(38, init)
}

/// GoogLeNet with both auxiliary heads on a 224×224 crop, all classifiers sized to 38.
pub fn build_googlenet38(init: &InitPolicy) -> Result<NetworkGraph> {
    googlenet(38, init)
}

fn alexnet(classes: usize, init: &InitPolicy) -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new(Architecture::AlexNet, [3, 227, 227], classes);
    let x = b.conv("conv1", DATA, 96, 11, 4, 0);
    let x = b.relu("relu1", &x);
    let x = b.lrn("norm1", &x);
    let x = b.maxpool("pool1", &x, 3, 2, 0);
    let x = b.conv("conv2", &x, 256, 5, 1, 2);
    let x = b.relu("relu2", &x);
    let x = b.lrn("norm2", &x);
    let x = b.maxpool("pool2", &x, 3, 2, 0);
    let x = b.conv("conv3", &x, 384, 3, 1, 1);
    let x = b.relu("relu3", &x);
    let x = b.conv("conv4", &x, 384, 3, 1, 1);
    let x = b.relu("relu4", &x);
    let x = b.conv("conv5", &x, 256, 3, 1, 1);
    let x = b.relu("relu5", &x);
    let x = b.maxpool("pool5", &x, 3, 2, 0);
    let x = b.fc("fc6", &x, 4096);
    let x = b.relu("relu6", &x);
    let x = b.dropout("drop6", &x, 0.5);
    let x = b.fc("fc7", &x, 4096);
    let x = b.relu("relu7", &x);
    let x = b.dropout("drop7", &x, 0.5);
    let x = b.fc("fc8", &x, classes);
    b.softmax_loss("loss", &x, 1.0);
    b.finish("fc8", init)
}

const GOOGLENET_MODULES: [(&str, InceptionSpec); 9] = [
    ("inception_3a", InceptionSpec::new(64, 96, 128, 16, 32, 32)),
    ("inception_3b", InceptionSpec::new(128, 128, 192, 32, 96, 64)),
    ("inception_4a", InceptionSpec::new(192, 96, 208, 16, 48, 64)),
    ("inception_4b", InceptionSpec::new(160, 112, 224, 24, 64, 64)),
    ("inception_4c", InceptionSpec::new(128, 128, 256, 24, 64, 64)),
    ("inception_4d", InceptionSpec::new(112, 144, 288, 32, 64, 64)),
    ("inception_4e", InceptionSpec::new(256, 160, 320, 32, 128, 128)),
    ("inception_5a", InceptionSpec::new(256, 160, 320, 32, 128, 128)),
    ("inception_5b", InceptionSpec::new(384, 192, 384, 48, 128, 128)),
];

fn aux_head(b: &mut GraphBuilder, prefix: &str, input: &str, classes: usize) {
    b.set_train_only(true);
    let x = b.avgpool(&format!("{prefix}/ave_pool"), input, Some(Window::square(5, 3, 0)));
    let x = b.conv(&format!("{prefix}/conv"), &x, 128, 1, 1, 0);
    let x = b.relu(&format!("{prefix}/relu_conv"), &x);
    let x = b.fc(&format!("{prefix}/fc"), &x, 1024);
    let x = b.relu(&format!("{prefix}/relu_fc"), &x);
    let x = b.dropout(&format!("{prefix}/drop_fc"), &x, 0.7);
    let x = b.fc(&format!("{prefix}/classifier"), &x, classes);
    b.softmax_loss(&format!("{prefix}/loss"), &x, 0.3);
    b.set_train_only(false);
}

fn googlenet(classes: usize, init: &InitPolicy) -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new(Architecture::GoogLeNet, [3, 224, 224], classes);
    let x = b.conv("conv1/7x7_s2", DATA, 64, 7, 2, 3);
    let x = b.relu("conv1/relu_7x7", &x);
    let x = b.maxpool("pool1/3x3_s2", &x, 3, 2, 1);
    let x = b.lrn("pool1/norm1", &x);
    let x = b.conv("conv2/3x3_reduce", &x, 64, 1, 1, 0);
    let x = b.relu("conv2/relu_3x3_reduce", &x);
    let x = b.conv("conv2/3x3", &x, 192, 3, 1, 1);
    let x = b.relu("conv2/relu_3x3", &x);
    let x = b.lrn("conv2/norm2", &x);
    let mut x = b.maxpool("pool2/3x3_s2", &x, 3, 2, 1);
    for (name, spec) in GOOGLENET_MODULES {
        x = b.inception(name, &x, spec);
        match name {
            "inception_3b" => x = b.maxpool("pool3/3x3_s2", &x, 3, 2, 1),
            "inception_4a" => aux_head(&mut b, "loss1", &x, classes),
            "inception_4d" => aux_head(&mut b, "loss2", &x, classes),
            "inception_4e" => x = b.maxpool("pool4/3x3_s2", &x, 3, 2, 1),
            _ => {}
        }
    }
    let x = b.avgpool("pool5/7x7_s1", &x, None);
    let x = b.dropout("pool5/drop_7x7_s1", &x, 0.4);
    let x = b.fc("loss3/classifier", &x, classes);
    b.softmax_loss("loss3/loss3", &x, 1.0);
    b.finish("loss3/classifier", init)
}

/// Channel-reduced variants for 32 or 64 pixel inputs.
pub fn build_desk_variant(arch: Architecture, class_count: usize, input_size: usize, init: &InitPolicy) -> Result<NetworkGraph> {
    if input_size != 32 && input_size != 64 {
        return Err(Error::UnsupportedInputSize(input_size));
    }
    let mut b = GraphBuilder::new(arch, [3, input_size, input_size], class_count);
    match arch {
        Architecture::AlexNetMini => {
            let x = b.conv("conv1", DATA, 16, 5, 2, 2);
            let x = b.relu("relu1", &x);
            let x = b.lrn("norm1", &x);
            let x = b.maxpool("pool1", &x, 3, 2, 1);
            let x = b.conv("conv2", &x, 32, 3, 1, 1);
            let x = b.relu("relu2", &x);
            let x = b.maxpool("pool2", &x, 3, 2, 1);
            let x = b.conv("conv3", &x, 48, 3, 1, 1);
            let x = b.relu("relu3", &x);
            let x = b.maxpool("pool3", &x, 3, 2, 1);
            let x = b.fc("fc6", &x, 256);
            let x = b.relu("relu6", &x);
            let x = b.dropout("drop6", &x, 0.5);
            let x = b.fc("fc8", &x, class_count);
            b.softmax_loss("loss", &x, 1.0);
            b.finish("fc8", init)
        }
        Architecture::GoogLeNetMini => {
            let x = b.conv("conv1", DATA, 16, 5, 2, 2);
            let x = b.relu("conv1/relu", &x);
            let x = b.maxpool("pool1", &x, 3, 2, 1);
            let x = b.lrn("pool1/norm1", &x);
            let x = b.inception("inception_3a", &x, InceptionSpec::new(8, 12, 16, 2, 4, 4));
            let x = b.inception("inception_3b", &x, InceptionSpec::new(16, 16, 24, 4, 12, 8));
            let x = b.avgpool("pool5", &x, None);
            let x = b.dropout("pool5/drop", &x, 0.4);
            let x = b.fc("loss3/classifier", &x, class_count);
            b.softmax_loss("loss3/loss3", &x, 1.0);
            b.finish("loss3/classifier", init)
        }
        full => Err(Error::InvalidArgument(format!("{full} is not a desk variant"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{LayerKind, Mode};
    use crate::network::exec::forward;
    use crate::network::{count_params, count_params_main};
    use crate::tensor::{Scalar, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv(cout: usize, cin: usize, k: usize) -> usize {
        cout * cin * k * k + cout
    }

    fn fc(d: usize, m: usize) -> usize {
        d * m + m
    }

    fn inception(cin: usize, s: InceptionSpec) -> usize {
        conv(s.c1, cin, 1)
            + conv(s.c3_reduce, cin, 1)
            + conv(s.c3, s.c3_reduce, 3)
            + conv(s.c5_reduce, cin, 1)
            + conv(s.c5, s.c5_reduce, 5)
            + conv(s.pool_proj, cin, 1)
    }

    #[test]
    fn alexnet_parameter_sheet() {
        let net = build_alexnet38(&InitPolicy::default()).unwrap();
        let sheet = conv(96, 3, 11)
            + conv(256, 96, 5)
            + conv(384, 256, 3)
            + conv(384, 384, 3)
            + conv(256, 384, 3)
            + fc(256 * 6 * 6, 4096)
            + fc(4096, 4096)
            + fc(4096, 38);
        assert_eq!(count_params(&net), sheet);
        assert_eq!(sheet, 58_437_030);
        assert!((55e6..=63e6).contains(&(sheet as f64)));
        assert_eq!(net.output_shape("fc8"), Some(&[38][..]));
        assert_eq!(net.output_shape("pool5"), Some(&[256, 6, 6][..]));
    }

    #[test]
    fn alexnet_layer_order() {
        let net = build_alexnet38(&InitPolicy::default()).unwrap();
        let tags: Vec<&str> = net.layers.iter().map(|l| l.kind.tag()).collect();
        let expected = [
            "Conv",
            "ReLU",
            "LRN",
            "MaxPool",
            "Conv",
            "ReLU",
            "LRN",
            "MaxPool",
            "Conv",
            "ReLU",
            "Conv",
            "ReLU",
            "Conv",
            "ReLU",
            "MaxPool",
            "FullyConnected",
            "ReLU",
            "Dropout",
            "FullyConnected",
            "ReLU",
            "Dropout",
            "FullyConnected",
            "SoftmaxLoss",
        ];
        assert_eq!(tags, expected);
        for name in ["drop6", "drop7"] {
            assert_eq!(net.layer(name).unwrap().kind, LayerKind::Dropout { ratio: 0.5 });
        }
        assert_eq!(net.count_layers("Dropout"), 2);
    }

    #[test]
    fn googlenet_parameter_sheet() {
        let net = build_googlenet38(&InitPolicy::default()).unwrap();
        let mut sheet = conv(64, 3, 7) + conv(64, 64, 1) + conv(192, 64, 3);
        let mut cin = 192;
        for (_, s) in GOOGLENET_MODULES {
            sheet += inception(cin, s);
            cin = s.out_channels();
        }
        sheet += fc(1024, 38);
        assert_eq!(count_params_main(&net), sheet);
        assert!((4e6..=8e6).contains(&(sheet as f64)), "{sheet}");
        let aux = |c| conv(128, c, 1) + fc(128 * 4 * 4, 1024) + fc(1024, 38);
        assert_eq!(count_params(&net), sheet + aux(512) + aux(528));
    }

    #[test]
    fn googlenet_topology() {
        let net = build_googlenet38(&InitPolicy::default()).unwrap();
        assert_eq!(net.count_layers("Inception"), 9);
        for name in Architecture::GoogLeNet.classifier_reset_set() {
            assert_eq!(net.output_shape(name), Some(&[38][..]), "{name}");
        }
        assert_eq!(net.output_shape("inception_5b"), Some(&[1024, 7, 7][..]));
        assert_eq!(net.output_shape("loss1/ave_pool"), Some(&[512, 4, 4][..]));
        assert_eq!(net.classifier_layers().len(), 3);
    }

    #[test]
    fn full_builds_give_finite_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (net, size) in [
            (build_alexnet38(&InitPolicy::default()).unwrap(), 227),
            (build_googlenet38(&InitPolicy::default()).unwrap(), 224),
        ] {
            let x = Tensor::zeros([1, 3, size, size]);
            let pass = forward(&net, &net.params, &x, None, Mode::Eval, &mut rng, None).unwrap();
            assert_eq!(pass.logits().shape(), &[1, 38]);
            assert!(pass.logits().all_finite());
            let noisy = Tensor::from_fn([1, 3, size, size], |i| f32::from_f64(((i * 7919) % 101) as f64 / 101.0));
            let pass = forward(&net, &net.params, &noisy, None, Mode::Eval, &mut rng, None).unwrap();
            assert!(pass.logits().all_finite());
        }
    }

    #[test]
    fn desk_variants() {
        let init = InitPolicy::default();
        let full_alex = count_params(&build_alexnet38(&init).unwrap());
        let full_goog = count_params(&build_googlenet38(&init).unwrap());
        for size in [32, 64] {
            let a = build_desk_variant(Architecture::AlexNetMini, 38, size, &init).unwrap();
            let g = build_desk_variant(Architecture::GoogLeNetMini, 38, size, &init).unwrap();
            assert_eq!(a.output_shape("fc8"), Some(&[38][..]));
            assert_eq!(g.output_shape("loss3/classifier"), Some(&[38][..]));
            assert_eq!(a.count_layers("Conv"), 3);
            assert_eq!(a.count_layers("FullyConnected"), 2);
            assert!(g.count_layers("Inception") >= 1);
            assert!(count_params(&a) * 20 < full_alex);
            assert!(count_params(&g) * 20 < full_goog);
        }
        assert!(matches!(
            build_desk_variant(Architecture::AlexNetMini, 38, 48, &init),
            Err(Error::UnsupportedInputSize(48))
        ));
    }

    #[test]
    fn fc_ten_to_five_has_55() {
        let mut b = GraphBuilder::new(Architecture::AlexNetMini, [10, 1, 1], 5);
        b.fc("fc", DATA, 5);
        let net = b.finish("fc", &InitPolicy::default()).unwrap();
        assert_eq!(count_params(&net), 55);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_desk_variant(Architecture::GoogLeNetMini, 38, 32, &InitPolicy::with_seed(5)).unwrap();
        let b = build_desk_variant(Architecture::GoogLeNetMini, 38, 32, &InitPolicy::with_seed(5)).unwrap();
        let c = build_desk_variant(Architecture::GoogLeNetMini, 38, 32, &InitPolicy::with_seed(6)).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn architecture_names_roundtrip() {
        for a in Architecture::ALL {
            assert_eq!(a.as_str().parse::<Architecture>().unwrap(), a);
        }
        assert!("VGG".parse::<Architecture>().is_err());
    }
}
