//! Model architectures: LeNet-5 for 28x28 grayscale inputs and a
//! configurable fully-connected network.
//!
//! Parameters live outside the graph as [`RawTensor`] buffers; a forward
//! pass binds them as graph leaves, so gradients w.r.t. weights are only
//! computed when the caller asks for them (attacks bind parameters as
//! constants and pay nothing for weight gradients).

use crate::error::{Error, Result};
use crate::seeding;
use crate::tensor::{RawTensor, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Lenet5,
    Mlp,
}

/// Architecture description: enough to initialize, load, and run a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Per-image shape `[channels, height, width]`.
    pub input_shape: [usize; 3],
    pub classes: usize,
    /// Full width chain for the MLP (input, hidden..., classes); empty
    /// for LeNet-5.
    pub mlp_widths: Vec<usize>,
}

impl ModelSpec {
    /// The classic LeNet-5 shape: two conv(5x5) + maxpool(2x2) stages
    /// with relu, then a 400-120-84-10 dense head.
    pub fn lenet5() -> Self {
        ModelSpec {
            arch: Arch::Lenet5,
            input_shape: [1, 28, 28],
            classes: 10,
            mlp_widths: Vec::new(),
        }
    }

    /// A relu MLP over flattened inputs; `widths` runs from the input
    /// dimension through every hidden layer to the class count.
    pub fn mlp(input_shape: [usize; 3], widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "mlp needs at least input and output widths".into(),
            ));
        }
        let input: usize = input_shape.iter().product();
        if widths[0] != input {
            return Err(Error::InvalidArgument(format!(
                "mlp input width {} does not match input shape {input_shape:?}",
                widths[0]
            )));
        }
        let classes = *widths.last().unwrap();
        if classes < 2 {
            return Err(Error::InvalidArgument("at least 2 classes".into()));
        }
        Ok(ModelSpec {
            arch: Arch::Mlp,
            input_shape,
            classes,
            mlp_widths: widths,
        })
    }

    /// Width of the activation feeding the final linear layer.
    pub fn feature_width(&self) -> usize {
        match self.arch {
            Arch::Lenet5 => 84,
            Arch::Mlp => self.mlp_widths[self.mlp_widths.len() - 2],
        }
    }

    /// Named parameter shapes in forward order.
    fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self.arch {
            Arch::Lenet5 => vec![
                ("conv1.weight".into(), vec![6, 1, 5, 5]),
                ("conv1.bias".into(), vec![6]),
                ("conv2.weight".into(), vec![16, 6, 5, 5]),
                ("conv2.bias".into(), vec![16]),
                ("fc1.weight".into(), vec![120, 400]),
                ("fc1.bias".into(), vec![120]),
                ("fc2.weight".into(), vec![84, 120]),
                ("fc2.bias".into(), vec![84]),
                ("fc3.weight".into(), vec![10, 84]),
                ("fc3.bias".into(), vec![10]),
            ],
            Arch::Mlp => {
                let mut shapes = Vec::new();
                for (i, pair) in self.mlp_widths.windows(2).enumerate() {
                    let (fan_in, fan_out) = (pair[0], pair[1]);
                    shapes.push((format!("fc{}.weight", i + 1), vec![fan_out, fan_in]));
                    shapes.push((format!("fc{}.bias", i + 1), vec![fan_out]));
                }
                shapes
            }
        }
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, RawTensor)>,
}

impl ParamSet {
    pub fn from_entries(entries: Vec<(String, RawTensor)>) -> Self {
        ParamSet { entries }
    }

    pub fn entries(&self) -> &[(String, RawTensor)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, RawTensor)] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&RawTensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Creates graph leaves for every parameter. With `requires_grad`
    /// set, a later backward pass fills each leaf's gradient.
    pub fn bind(&self, requires_grad: bool) -> Result<BoundParams> {
        let entries = self
            .entries
            .iter()
            .map(|(name, raw)| Ok((name.clone(), Tensor::from_raw(raw, requires_grad)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams { entries })
    }
}

/// Graph-bound view of a [`ParamSet`] for one forward/backward pass.
pub struct BoundParams {
    entries: Vec<(String, Tensor)>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))
    }

    /// Collects `(name, gradient)` for every bound parameter, erroring on
    /// any missing or non-finite gradient.
    pub fn grads(&self) -> Result<Vec<(String, Vec<f64>)>> {
        self.entries
            .iter()
            .map(|(name, t)| {
                let g = t.grad().ok_or_else(|| {
                    Error::Diverged(format!("no gradient reached parameter {name}"))
                })?;
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::Diverged(format!(
                        "non-finite gradient in parameter {name}"
                    )));
                }
                Ok((name.clone(), g))
            })
            .collect()
    }
}

/// Deterministic fan-in-scaled uniform initialization (bound
/// `sqrt(6 / fan_in)`), biases zero.
pub fn init(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, "init", &[]));
    let entries = spec
        .parameter_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let numel: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; numel]
            } else {
                // fan_in: everything but the leading output extent
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
            };
            (name, RawTensor { shape, data })
        })
        .collect();
    Ok(ParamSet { entries })
}

/// Logits plus the activation feeding the final linear layer.
pub struct ForwardPass {
    pub logits: Tensor,
    pub features: Tensor,
}

fn linear(params: &BoundParams, name: &str, x: &Tensor) -> Result<Tensor> {
    let w = params.get(&format!("{name}.weight"))?;
    let b = params.get(&format!("{name}.bias"))?;
    x.matmul(&w.transpose()?)?.add_row_bias(b)
}

fn check_input(spec: &ModelSpec, x: &Tensor) -> Result<usize> {
    let [c, h, w] = spec.input_shape;
    match *x.shape() {
        [n, xc, xh, xw] if (xc, xh, xw) == (c, h, w) => Ok(n),
        _ => Err(Error::BadShape {
            op: "forward",
            shape: x.shape().to_vec(),
            expected: format!("[n, {c}, {h}, {w}]"),
        }),
    }
}

/// Runs the model on a batched input of shape `[n, c, h, w]`.
pub fn forward_full(spec: &ModelSpec, params: &BoundParams, x: &Tensor) -> Result<ForwardPass> {
    let n = check_input(spec, x)?;
    match spec.arch {
        Arch::Lenet5 => {
            // conv1 pads by 2 (the 32x32-input wiring of the original
            // network), which is what makes the flattened width 400:
            // 28 -> 28 -> 14 -> 10 -> 5, and 16 * 5 * 5 = 400.
            let c1 = x
                .conv2d(params.get("conv1.weight")?, 1, 2)?
                .add_channel_bias(params.get("conv1.bias")?)?
                .relu()?
                .maxpool2d(2)?;
            let c2 = c1
                .conv2d(params.get("conv2.weight")?, 1, 0)?
                .add_channel_bias(params.get("conv2.bias")?)?
                .relu()?
                .maxpool2d(2)?;
            let flat = c2.reshape(vec![n, 400])?;
            let h1 = linear(params, "fc1", &flat)?.relu()?;
            let features = linear(params, "fc2", &h1)?.relu()?;
            let logits = linear(params, "fc3", &features)?;
            Ok(ForwardPass { logits, features })
        }
        Arch::Mlp => {
            let d: usize = spec.input_shape.iter().product();
            let mut h = x.reshape(vec![n, d])?;
            let layers = self::layer_count(spec);
            for i in 1..layers {
                h = linear(params, &format!("fc{i}"), &h)?.relu()?;
            }
            let logits = linear(params, &format!("fc{layers}"), &h)?;
            Ok(ForwardPass {
                logits,
                features: h,
            })
        }
    }
}

fn layer_count(spec: &ModelSpec) -> usize {
    spec.mlp_widths.len() - 1
}

/// Logits only.
pub fn forward(spec: &ModelSpec, params: &BoundParams, x: &Tensor) -> Result<Tensor> {
    Ok(forward_full(spec, params, x)?.logits)
}

/// The activation vector feeding the final linear layer, `[n, F]`.
pub fn penultimate_features(spec: &ModelSpec, params: &BoundParams, x: &Tensor) -> Result<Tensor> {
    Ok(forward_full(spec, params, x)?.features)
}

/// Graph-free batched inference: logits for a raw image block, evaluated
/// in chunks to bound memory.
pub fn logits_raw(spec: &ModelSpec, params: &ParamSet, images: &RawTensor) -> Result<RawTensor> {
    let n = images.shape[0];
    let d: usize = images.shape[1..].iter().product();
    let bound = params.bind(false)?;
    let mut out = Vec::with_capacity(n * spec.classes);
    let chunk = 256;
    let mut start = 0;
    while start < n {
        let stop = (start + chunk).min(n);
        let x = Tensor::constant(
            vec![
                stop - start,
                images.shape[1],
                images.shape[2],
                images.shape[3],
            ],
            images.data[start * d..stop * d].to_vec(),
        )?;
        let logits = forward(spec, &bound, &x)?;
        out.extend_from_slice(logits.data());
        start = stop;
    }
    RawTensor::new(vec![n, spec.classes], out)
}

/// Predicted class per sample.
pub fn predict(spec: &ModelSpec, params: &ParamSet, images: &RawTensor) -> Result<Vec<usize>> {
    let logits = logits_raw(spec, params, images)?;
    Ok(argmax_rows(&logits))
}

pub fn argmax_rows(logits: &RawTensor) -> Vec<usize> {
    let k = logits.shape[1];
    logits
        .data
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap()
        })
        .collect()
}
