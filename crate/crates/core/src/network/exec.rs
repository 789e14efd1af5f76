//! Graph executor: forward pass with per-layer caches, and the matching
//! reverse sweep producing gradients for every parameter slot.

use rand::Rng;

use super::{NetworkGraph, ParamStore, Source};
use crate::error::{Error, Result};
use crate::layers::dropout::DropoutMask;
use crate::layers::inception::InceptionCache;
use crate::layers::lrn::LrnCache;
use crate::layers::pool::PoolIndices;
use crate::layers::*;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
enum Cache<T> {
    None,
    Lrn(LrnCache<T>),
    Pool(PoolIndices),
    Dropout(Option<DropoutMask<T>>),
    Inception(InceptionCache<T>),
}

/// Summed (not averaged) losses over the samples of one forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossSums {
    /// `(head layer name, summed cross-entropy)` in graph order.
    pub heads: Vec<(String, f64)>,
    /// Σ weight·loss over heads; the training objective.
    pub weighted: f64,
    pub samples: usize,
}

impl LossSums {
    pub fn head(&self, name: &str) -> Option<f64> {
        self.heads.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn merge(&mut self, other: &LossSums) {
        if self.heads.is_empty() {
            self.heads = other.heads.clone();
        } else {
            for ((_, a), (_, b)) in self.heads.iter_mut().zip(&other.heads) {
                *a += b;
            }
        }
        self.weighted += other.weighted;
        self.samples += other.samples;
    }
}

/// Activations and caches of one forward pass.
pub struct ForwardPass<'n, T: Scalar = f32> {
    net: &'n NetworkGraph,
    input: Tensor<T>,
    outputs: Vec<Option<Tensor<T>>>,
    caches: Vec<Cache<T>>,
    labels: Option<Vec<usize>>,
    pub losses: LossSums,
}

impl<'n, T: Scalar> ForwardPass<'n, T> {
    /// Output of `name`, if it was computed.
    pub fn output(&self, name: &str) -> Option<&Tensor<T>> {
        self.net.layer_index(name).and_then(|i| self.outputs[i].as_ref())
    }

    /// Logits of the evaluation classifier, `[N × class_count]`.
    pub fn logits(&self) -> &Tensor<T> {
        self.output(&self.net.output).expect("classifier evaluated")
    }
}

fn take<'a, T: Scalar>(net: &NetworkGraph, input: &'a Tensor<T>, outputs: &'a [Option<Tensor<T>>], i: usize) -> Result<Vec<&'a Tensor<T>>> {
    net.sources[i]
        .iter()
        .map(|s| match s {
            Source::Data => Ok(input),
            Source::Layer(j) => outputs[*j]
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("`{}` reads an unevaluated layer", net.layers[i].name))),
        })
        .collect()
}

fn param<'a, T>(params: &'a ParamStore<T>, key: &str) -> Result<&'a Tensor<T>> {
    params.get(key).ok_or_else(|| Error::UnknownLayer(key.to_string()))
}

fn inception_params<'a, T>(params: &'a ParamStore<T>, layer: &LayerSpec) -> Result<InceptionParams<'a, T>> {
    let mut convs = Vec::with_capacity(6);
    for slot in BRANCH_SLOTS {
        let w = param(params, &layer.param_key(&format!("{slot}/weight")))?;
        let b = param(params, &layer.param_key(&format!("{slot}/bias")))?;
        convs.push((w, b));
    }
    let convs: [(&Tensor<T>, &Tensor<T>); 6] = convs.try_into().map_err(|_| Error::UnknownLayer(layer.name.clone()))?;
    Ok(InceptionParams { convs })
}

/// Runs the graph on `input [N×C×H×W]`. Train mode evaluates auxiliary
/// branches and samples dropout masks from `rng`; eval mode skips both.
/// With `labels`, every evaluated softmax head records its loss. `stop_after`
/// ends the pass once the named layer has been computed.
pub fn forward<'n, T: Scalar, R: Rng + ?Sized>(
    net: &'n NetworkGraph,
    params: &ParamStore<T>,
    input: &Tensor<T>,
    labels: Option<&[usize]>,
    mode: Mode,
    rng: &mut R,
    stop_after: Option<&str>,
) -> Result<ForwardPass<'n, T>> {
    let [c, h, w] = net.input_shape;
    let n = input.shape().first().copied().unwrap_or(0);
    input.ensure_shape("network input", &[n, c, h, w])?;
    let stop = match stop_after {
        Some(name) => Some(net.layer_index(name).ok_or_else(|| Error::UnknownLayer(name.to_string()))?),
        None => None,
    };
    let mut outputs: Vec<Option<Tensor<T>>> = vec![None; net.layers.len()];
    let mut caches = vec![Cache::None; net.layers.len()];
    let mut losses = LossSums {
        samples: n,
        ..LossSums::default()
    };

    for (i, layer) in net.layers.iter().enumerate() {
        if layer.train_only && mode == Mode::Eval {
            continue;
        }
        let xs = take(net, input, &outputs, i)?;
        let (out, cache) = match &layer.kind {
            LayerKind::Conv { window, .. } => {
                let out = conv2d_forward(
                    xs[0],
                    param(params, &layer.param_key("weight"))?,
                    param(params, &layer.param_key("bias"))?,
                    *window,
                )?;
                (out, Cache::None)
            }
            LayerKind::Relu => (relu_forward(xs[0]), Cache::None),
            LayerKind::Lrn(p) => {
                let (out, c) = lrn_forward(xs[0], *p)?;
                (out, Cache::Lrn(c))
            }
            LayerKind::MaxPool { window } => {
                let (out, idx) = maxpool_forward(xs[0], *window)?;
                (out, Cache::Pool(idx))
            }
            LayerKind::AvgPool { window } => (avgpool_forward(xs[0], *window)?, Cache::None),
            LayerKind::FullyConnected { .. } => {
                let out = fc_forward(
                    xs[0],
                    param(params, &layer.param_key("weight"))?,
                    param(params, &layer.param_key("bias"))?,
                )?;
                (out, Cache::None)
            }
            LayerKind::Dropout { ratio } => {
                let (out, mask) = dropout_forward(xs[0], *ratio, mode, rng)?;
                (out, Cache::Dropout(mask))
            }
            LayerKind::Concat => (concat_channels(&xs)?, Cache::None),
            LayerKind::SoftmaxLoss { weight } => match labels {
                Some(y) => {
                    let (mean, probs) = softmax_xent(xs[0], y)?;
                    let sum = mean * n as f64;
                    losses.heads.push((layer.name.clone(), sum));
                    losses.weighted += weight * sum;
                    (probs, Cache::None)
                }
                None => (softmax(xs[0])?, Cache::None),
            },
            LayerKind::Inception(spec) => {
                let p = inception_params(params, layer)?;
                let (out, c) = inception_forward(xs[0], spec, &p)?;
                (out, Cache::Inception(c))
            }
        };
        outputs[i] = Some(out);
        caches[i] = cache;
        if stop == Some(i) {
            break;
        }
    }
    Ok(ForwardPass {
        net,
        input: input.clone(),
        outputs,
        caches,
        labels: labels.map(<[usize]>::to_vec),
        losses,
    })
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Reverse sweep. Each softmax head seeds `(p − onehot)·weight·scale`; pass
/// `scale = 1/N_total` for the batch-mean objective. Returns a gradient for
/// every parameter slot, zero for slots not reached (e.g. auxiliary heads in
/// an eval-mode pass).
pub fn backward<T: Scalar>(pass: &ForwardPass<'_, T>, params: &ParamStore<T>, scale: f64) -> Result<ParamStore<T>> {
    let net = pass.net;
    let labels = pass
        .labels
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("backward needs a forward pass with labels".into()))?;
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; net.layers.len()];
    let mut pgrads: ParamStore<T> = ParamStore::new();

    for (i, layer) in net.layers.iter().enumerate().rev() {
        let Some(out) = pass.outputs[i].as_ref() else { continue };
        let g = match (&layer.kind, grads[i].take()) {
            (LayerKind::SoftmaxLoss { weight }, _) => softmax_xent_backward(out, labels, weight * scale)?,
            (_, Some(g)) => g,
            (_, None) => continue,
        };
        let xs = take(net, &pass.input, &pass.outputs, i)?;
        let srcs = &net.sources[i];
        let wants_dx = srcs[0] != Source::Data;

        let dxs: Vec<Option<Tensor<T>>> = match (&layer.kind, &pass.caches[i]) {
            (LayerKind::Conv { window, .. }, _) => {
                let cg = conv2d_backward(xs[0], param(params, &layer.param_key("weight"))?, *window, &g, wants_dx)?;
                pgrads.insert(layer.param_key("weight"), cg.weight);
                pgrads.insert(layer.param_key("bias"), cg.bias);
                vec![cg.input]
            }
            (LayerKind::Relu, _) => vec![Some(relu_backward(xs[0], &g)?)],
            (LayerKind::Lrn(p), Cache::Lrn(c)) => vec![Some(lrn_backward(xs[0], c, &g, *p)?)],
            (LayerKind::MaxPool { .. }, Cache::Pool(idx)) => vec![Some(maxpool_backward(xs[0].shape(), idx, &g)?)],
            (LayerKind::AvgPool { window }, _) => vec![Some(avgpool_backward(xs[0].shape(), *window, &g)?)],
            (LayerKind::FullyConnected { .. }, _) => {
                let fg = fc_backward(xs[0], param(params, &layer.param_key("weight"))?, &g, wants_dx)?;
                pgrads.insert(layer.param_key("weight"), fg.weight);
                pgrads.insert(layer.param_key("bias"), fg.bias);
                vec![fg.input]
            }
            (LayerKind::Dropout { .. }, Cache::Dropout(mask)) => vec![Some(dropout_backward(mask.as_ref(), &g)?)],
            (LayerKind::Concat, _) => {
                let widths: Vec<usize> = xs.iter().map(|x| x.dim(1)).collect();
                split_channels(&g, &widths)?.into_iter().map(Some).collect()
            }
            (LayerKind::SoftmaxLoss { .. }, _) => vec![Some(g)],
            (LayerKind::Inception(spec), Cache::Inception(c)) => {
                let p = inception_params(params, layer)?;
                let ig = inception_backward(xs[0], spec, &p, c, &g)?;
                for ((dw, db), slot) in ig.convs.into_iter().zip(BRANCH_SLOTS) {
                    pgrads.insert(layer.param_key(&format!("{slot}/weight")), dw);
                    pgrads.insert(layer.param_key(&format!("{slot}/bias")), db);
                }
                vec![Some(ig.input)]
            }
            _ => return Err(Error::InvalidArgument(format!("missing cache for `{}`", layer.name))),
        };
        for (src, dx) in srcs.iter().zip(dxs) {
            if let (Source::Layer(j), Some(dx)) = (src, dx) {
                accumulate(&mut grads[*j], dx)?;
            }
        }
    }

    // storage order, zero-filled for unreached slots
    Ok(params
        .iter()
        .map(|(k, v)| {
            let g = pgrads.swap_remove(k).unwrap_or_else(|| Tensor::zeros(v.shape().to_vec()));
            (k.clone(), g)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{max_rel_error_at, numeric_grad_at, STEP_F64};
    use crate::network::{build_desk_variant, Architecture, InitPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss_with<T: Scalar>(net: &NetworkGraph, params: &ParamStore<T>, x: &Tensor<T>, y: &[usize], seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        forward(net, params, x, Some(y), Mode::Train, &mut rng, None)
            .unwrap()
            .losses
            .weighted
            / y.len() as f64
    }

    fn check_network(arch: Architecture) {
        let net = build_desk_variant(arch, 5, 32, &InitPolicy::with_seed(4)).unwrap();
        let mut params: ParamStore<f64> = net.params_as();
        // larger weights so every unit carries signal through ReLUs
        for t in params.values_mut() {
            t.scale(4.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Tensor<f64> = Tensor::from_fn([2, 3, 32, 32], |_| rng.gen_range(-1.0..1.0));
        let y = [1, 3];
        let mut frng = ChaCha8Rng::seed_from_u64(99);
        let pass = forward(&net, &params, &x, Some(&y), Mode::Train, &mut frng, None).unwrap();
        let grads = backward(&pass, &params, 0.5).unwrap();

        for (key, p) in &params {
            let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..p.len())).collect();
            let numeric = numeric_grad_at(p, &idx, STEP_F64, |probe| {
                let mut q = params.clone();
                q.insert(key.clone(), probe.clone());
                loss_with(&net, &q, &x, &y, 99)
            });
            let err = max_rel_error_at(&grads[key], &numeric, &idx);
            let pairs: Vec<(f64, f64)> = idx.iter().map(|&i| (grads[key].data()[i], numeric.data()[i])).collect();
            // whole-graph composition; each layer alone is checked at 1e-6
            assert!(err < 1e-4, "{key}: {err} {pairs:?}");
        }
    }

    #[test]
    fn alexnet_mini_end_to_end_gradients() {
        check_network(Architecture::AlexNetMini);
    }

    #[test]
    fn googlenet_mini_end_to_end_gradients() {
        check_network(Architecture::GoogLeNetMini);
    }

    #[test]
    fn eval_forward_is_pure() {
        let net = build_desk_variant(Architecture::GoogLeNetMini, 38, 32, &InitPolicy::with_seed(2)).unwrap();
        let x = Tensor::from_fn([2, 3, 32, 32], |i| (i % 17) as f32 / 17.0);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = forward(&net, &net.params, &x, None, Mode::Eval, &mut r1, None).unwrap();
        let b = forward(&net, &net.params, &x, None, Mode::Eval, &mut r2, None).unwrap();
        assert_eq!(a.logits(), b.logits());
        assert_eq!(a.logits().shape(), &[2, 38]);
    }

    #[test]
    fn stop_after_truncates() {
        let net = build_desk_variant(Architecture::AlexNetMini, 38, 32, &InitPolicy::default()).unwrap();
        let x = Tensor::zeros([1, 3, 32, 32]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = forward(&net, &net.params, &x, None, Mode::Eval, &mut rng, Some("conv1")).unwrap();
        assert_eq!(pass.output("conv1").unwrap().shape(), &[1, 16, 16, 16]);
        assert!(pass.output("fc6").is_none());
    }
}
