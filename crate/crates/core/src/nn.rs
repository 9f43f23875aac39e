//! Feedforward networks: layer specs, shape checking, forward evaluation and
//! the reverse-mode backward pass.
//!
//! Networks process one example at a time. Convolutional inputs are rank-3
//! `[C, H, W]`; dense layers take rank-1 vectors, so a `flatten` layer sits
//! between the two. The final layer's output is the logit vector `[C]`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{self, Tensor, Window};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv2d {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
}

impl LayerKind {
    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2d { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::Flatten => "flatten",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }

    pub fn dense(name: impl Into<String>, units: usize) -> Self {
        Self::new(name, LayerKind::Dense { units })
    }

    /// Square-kernel convolution.
    pub fn conv2d(name: impl Into<String>, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::new(
            name,
            LayerKind::Conv2d {
                out_channels,
                kernel_h: kernel,
                kernel_w: kernel,
                stride,
                padding,
            },
        )
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Relu)
    }

    pub fn maxpool2d(name: impl Into<String>, window: usize, stride: usize) -> Self {
        Self::new(name, LayerKind::MaxPool2d { window, stride })
    }

    pub fn flatten(name: impl Into<String>) -> Self {
        Self::new(name, LayerKind::Flatten)
    }
}

/// A validated layer sequence together with every intermediate shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    output_shapes: Vec<Vec<usize>>,
}

impl Architecture {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::network(format!("invalid input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::network("network has no layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.name.is_empty() {
                return Err(Error::network(format!("layer {i} has an empty name")));
            }
            if layers[..i].iter().any(|o| o.name == l.name) {
                return Err(Error::network(format!("duplicate layer name {:?}", l.name)));
            }
        }

        let mut output_shapes = Vec::with_capacity(layers.len());
        let mut shape = input_shape.clone();
        for l in &layers {
            shape = output_shape(l, &shape)?;
            output_shapes.push(shape.clone());
        }
        if shape.len() != 1 {
            return Err(Error::network(format!(
                "final layer must produce a logit vector, got shape {shape:?}"
            )));
        }
        Ok(Architecture {
            input_shape,
            layers,
            output_shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.output_shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    pub fn output_shape(&self, layer: usize) -> &[usize] {
        &self.output_shapes[layer]
    }

    pub fn layer_input_shape(&self, layer: usize) -> &[usize] {
        if layer == 0 {
            &self.input_shape
        } else {
            &self.output_shapes[layer - 1]
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Indices of dense and conv2d layers, in forward order.
    pub fn parameterized(&self) -> impl DoubleEndedIterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.is_parameterized())
            .map(|(i, _)| i)
    }

    /// `(weight, bias)` shapes for a parameterized layer.
    pub fn param_shapes(&self, layer: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        let input = self.layer_input_shape(layer);
        match self.layers[layer].kind {
            LayerKind::Dense { units } => Some((vec![units, input[0]], vec![units])),
            LayerKind::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some((vec![out_channels, input[0], kernel_h, kernel_w], vec![out_channels])),
            _ => None,
        }
    }

    /// Fan-in of a parameterized layer's weights.
    pub fn fan_in(&self, layer: usize) -> Option<usize> {
        self.param_shapes(layer).map(|(w, _)| w[1..].iter().product())
    }
}

fn output_shape(layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    let bad = |what: &str| {
        Error::network(format!(
            "layer {:?} ({}): {what}, input shape {input:?}",
            layer.name,
            layer.kind.label()
        ))
    };
    match layer.kind {
        LayerKind::Dense { units } => {
            if input.len() != 1 {
                return Err(bad("dense expects a rank-1 input"));
            }
            if units == 0 {
                return Err(bad("dense needs at least one unit"));
            }
            Ok(vec![units])
        }
        LayerKind::Conv2d {
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        } => {
            if input.len() != 3 {
                return Err(bad("conv2d expects a [C, H, W] input"));
            }
            if out_channels == 0 {
                return Err(bad("conv2d needs at least one output channel"));
            }
            let win = Window {
                kh: kernel_h,
                kw: kernel_w,
                stride,
                padding,
            };
            let (oh, ow) = win
                .output_hw(input[1], input[2])
                .ok_or_else(|| bad("kernel does not fit the padded input"))?;
            Ok(vec![out_channels, oh, ow])
        }
        LayerKind::MaxPool2d { window, stride } => {
            if input.len() != 3 {
                return Err(bad("maxpool2d expects a [C, H, W] input"));
            }
            let win = Window {
                kh: window,
                kw: window,
                stride,
                padding: 0,
            };
            let (oh, ow) = win
                .output_hw(input[1], input[2])
                .ok_or_else(|| bad("pooling window does not fit the input"))?;
            Ok(vec![input[0], oh, ow])
        }
        LayerKind::Relu => Ok(input.to_vec()),
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_like(&self) -> LayerParams {
        LayerParams {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    /// Bitwise equality of every stored value.
    pub fn bit_identical(&self, other: &LayerParams) -> bool {
        fn bits(a: &Tensor, b: &Tensor) -> bool {
            a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        bits(&self.weight, &other.weight) && bits(&self.bias, &other.bias)
    }
}

/// Backward rule applied at ReLU units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ReluRule {
    /// Pass the upstream signal where the ReLU input was positive.
    #[default]
    Standard,
    /// Additionally zero negative upstream entries (guided backpropagation).
    Guided,
}

/// Scalar that explanations differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Objective {
    /// Pre-softmax class score.
    #[default]
    Logit,
    /// Softmax probability of the class.
    Softmax,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Output of a forward pass; keeps every layer's output for backward and
/// for feature-map lookups.
#[derive(Debug, Clone)]
pub struct Forward {
    input: Tensor,
    outputs: Vec<Tensor>,
    names: Vec<String>,
}

impl Forward {
    pub fn logits(&self) -> &Tensor {
        self.outputs.last().expect("non-empty network")
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn output(&self, layer: usize) -> &Tensor {
        &self.outputs[layer]
    }

    pub fn activation(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.outputs[i])
    }

    /// `(layer name, output)` pairs in forward order.
    pub fn activations(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.outputs)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient with respect to the network input.
    pub input: Tensor,
    /// Gradient with respect to each layer's output.
    pub outputs: Vec<Tensor>,
    /// Parameter gradients, present only when requested.
    pub params: Option<Vec<Option<LayerParams>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: Vec<Option<LayerParams>>,
}

impl Network {
    /// Pairs an architecture with parameters; `params[i]` must be `Some`
    /// exactly for dense and conv2d layers, with matching shapes.
    pub fn new(arch: Architecture, params: Vec<Option<LayerParams>>) -> Result<Self> {
        if params.len() != arch.layers.len() {
            return Err(Error::network(format!(
                "{} parameter slots for {} layers",
                params.len(),
                arch.layers.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            match (arch.param_shapes(i), p) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) => {
                    if p.weight.shape() != ws.as_slice() || p.bias.shape() != bs.as_slice() {
                        return Err(Error::network(format!(
                            "layer {:?}: params {:?}/{:?}, expected {ws:?}/{bs:?}",
                            arch.layers[i].name,
                            p.weight.shape(),
                            p.bias.shape()
                        )));
                    }
                }
                (Some(_), None) => {
                    return Err(Error::network(format!(
                        "layer {:?} is missing its parameters",
                        arch.layers[i].name
                    )))
                }
                (None, Some(_)) => {
                    return Err(Error::network(format!(
                        "layer {:?} carries no parameters",
                        arch.layers[i].name
                    )))
                }
            }
        }
        Ok(Network { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.arch.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.arch.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes()
    }

    pub fn params(&self, layer: usize) -> Option<&LayerParams> {
        self.params[layer].as_ref()
    }

    pub fn params_by_name(&self, name: &str) -> Option<&LayerParams> {
        self.arch.index_of(name).and_then(|i| self.params(i))
    }

    pub fn all_params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    /// Replaces one layer's parameters, checking shapes.
    pub fn set_params(&mut self, layer: usize, p: LayerParams) -> Result<()> {
        let (ws, bs) = self.arch.param_shapes(layer).ok_or_else(|| {
            Error::network(format!(
                "layer {:?} carries no parameters",
                self.arch.layers[layer].name
            ))
        })?;
        if p.weight.shape() != ws.as_slice() || p.bias.shape() != bs.as_slice() {
            return Err(Error::ShapeMismatch {
                left: p.weight.shape().to_vec(),
                right: ws,
            });
        }
        self.params[layer] = Some(p);
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Forward> {
        if x.shape() != self.arch.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                left: x.shape().to_vec(),
                right: self.arch.input_shape.clone(),
            });
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.arch.layers.len());
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let input = outputs.last().unwrap_or(x);
            let out = self.layer_forward(i, layer, input)?;
            outputs.push(out);
        }
        Ok(Forward {
            input: x.clone(),
            outputs,
            names: self.arch.layers.iter().map(|l| l.name.clone()).collect(),
        })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x).map(|f| f.logits().clone())
    }

    /// Index of the largest logit (first on ties).
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        self.logits(x).map(|l| l.argmax())
    }

    fn layer_forward(&self, i: usize, layer: &LayerSpec, input: &Tensor) -> Result<Tensor> {
        match layer.kind {
            LayerKind::Dense { units } => {
                let p = self.params[i].as_ref().expect("validated");
                let n_in = input.len();
                let w = p.weight.data();
                let x = input.data();
                let out = (0..units)
                    .map(|u| {
                        let row = &w[u * n_in..(u + 1) * n_in];
                        p.bias.data()[u] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                Tensor::new(vec![units], out)
            }
            LayerKind::Conv2d { stride, padding, .. } => {
                let p = self.params[i].as_ref().expect("validated");
                let batched = with_batch_axis(input)?;
                let y = tensor::conv2d(&batched, &p.weight, stride, padding)?;
                let shape = self.arch.output_shapes[i].clone();
                let hw = shape[1] * shape[2];
                let mut data = y.into_data();
                for (c, chunk) in data.chunks_mut(hw).enumerate() {
                    let b = p.bias.data()[c];
                    chunk.iter_mut().for_each(|v| *v += b);
                }
                Tensor::new(shape, data)
            }
            LayerKind::Relu => Ok(input.map(|v| if v > 0.0 { v } else { 0.0 })),
            LayerKind::MaxPool2d { window, stride } => {
                let y = tensor::maxpool2d(&with_batch_axis(input)?, window, stride)?;
                y.reshape(self.arch.output_shapes[i].clone())
            }
            LayerKind::Flatten => input.clone().reshape(self.arch.output_shapes[i].clone()),
        }
    }

    /// Reverse-mode pass seeded with `seed = dS/d(logits)`.
    pub fn backward(&self, fwd: &Forward, seed: Tensor, rule: ReluRule, want_params: bool) -> Result<Gradients> {
        if seed.shape() != fwd.logits().shape() {
            return Err(Error::ShapeMismatch {
                left: seed.shape().to_vec(),
                right: fwd.logits().shape().to_vec(),
            });
        }
        let n = self.arch.layers.len();
        let mut outputs: Vec<Tensor> = vec![Tensor::zeros(&[1]); n];
        let mut params: Vec<Option<LayerParams>> = vec![None; n];
        let mut g = seed;
        for i in (0..n).rev() {
            let input = if i == 0 { &fwd.input } else { &fwd.outputs[i - 1] };
            let (gin, gp) = self.layer_backward(i, input, &g, rule, want_params)?;
            params[i] = gp;
            outputs[i] = core::mem::replace(&mut g, gin);
        }
        Ok(Gradients {
            input: g,
            outputs,
            params: want_params.then_some(params),
        })
    }

    fn layer_backward(
        &self,
        i: usize,
        input: &Tensor,
        g: &Tensor,
        rule: ReluRule,
        want_params: bool,
    ) -> Result<(Tensor, Option<LayerParams>)> {
        let layer = &self.arch.layers[i];
        match layer.kind {
            LayerKind::Dense { units } => {
                let p = self.params[i].as_ref().expect("validated");
                let n_in = input.len();
                let w = p.weight.data();
                let gd = g.data();
                let mut gx = vec![0.0; n_in];
                for u in 0..units {
                    let gu = gd[u];
                    if gu == 0.0 {
                        continue;
                    }
                    let row = &w[u * n_in..(u + 1) * n_in];
                    for (a, &wv) in gx.iter_mut().zip(row) {
                        *a += wv * gu;
                    }
                }
                let gp = want_params.then(|| {
                    let x = input.data();
                    let mut gw = vec![0.0; units * n_in];
                    for u in 0..units {
                        let gu = gd[u];
                        if gu == 0.0 {
                            continue;
                        }
                        for (a, &xv) in gw[u * n_in..(u + 1) * n_in].iter_mut().zip(x) {
                            *a = gu * xv;
                        }
                    }
                    LayerParams {
                        weight: Tensor::new(vec![units, n_in], gw).expect("shape"),
                        bias: g.clone(),
                    }
                });
                Ok((Tensor::new(input.shape().to_vec(), gx)?, gp))
            }
            LayerKind::Conv2d { stride, padding, .. } => {
                let p = self.params[i].as_ref().expect("validated");
                let gb = with_batch_axis(g)?;
                let in_shape: Vec<usize> = core::iter::once(1).chain(input.shape().iter().copied()).collect();
                let gx = tensor::conv2d_backward_input(&gb, &p.weight, &in_shape, stride, padding)?
                    .reshape(input.shape().to_vec())?;
                let gp = if want_params {
                    let gw = tensor::conv2d_backward_kernel(
                        &with_batch_axis(input)?,
                        &gb,
                        p.weight.shape(),
                        stride,
                        padding,
                    )?;
                    let hw = g.shape()[1] * g.shape()[2];
                    let bias = g.data().chunks(hw).map(|c| c.iter().sum()).collect();
                    Some(LayerParams {
                        weight: gw,
                        bias: Tensor::new(p.bias.shape().to_vec(), bias)?,
                    })
                } else {
                    None
                };
                Ok((gx, gp))
            }
            LayerKind::Relu => {
                let data = input
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&z, &up)| match rule {
                        ReluRule::Standard if z > 0.0 => up,
                        ReluRule::Guided if z > 0.0 && up > 0.0 => up,
                        _ => 0.0,
                    })
                    .collect();
                Ok((Tensor::new(input.shape().to_vec(), data)?, None))
            }
            LayerKind::MaxPool2d { window, stride } => {
                let (_, arg) = tensor::maxpool2d_with_argmax(&with_batch_axis(input)?, window, stride)?;
                let mut gx = vec![0.0; input.len()];
                for (&src, &gv) in arg.iter().zip(g.data()) {
                    gx[src] += gv;
                }
                Ok((Tensor::new(input.shape().to_vec(), gx)?, None))
            }
            LayerKind::Flatten => Ok((g.clone().reshape(input.shape().to_vec())?, None)),
        }
    }

    /// `dS/d(logits)` for the chosen objective and class.
    pub fn objective_seed(&self, logits: &Tensor, class_index: usize, objective: Objective) -> Result<Tensor> {
        let c = self.num_classes();
        if class_index >= c {
            return Err(Error::ClassOutOfRange {
                index: class_index,
                classes: c,
            });
        }
        let mut seed = vec![0.0; c];
        match objective {
            Objective::Logit => seed[class_index] = 1.0,
            Objective::Softmax => {
                let p = softmax(logits.data());
                for (k, s) in seed.iter_mut().enumerate() {
                    let delta = if k == class_index { 1.0 } else { 0.0 };
                    *s = p[class_index] * (delta - p[k]);
                }
            }
        }
        Tensor::new(vec![c], seed)
    }

    /// `dS_c/dx` for the class logit (or GBP signal with [`ReluRule::Guided`]).
    pub fn input_gradient(&self, x: &Tensor, class_index: usize, rule: ReluRule) -> Result<Tensor> {
        self.input_gradient_with(x, class_index, rule, Objective::Logit)
    }

    pub fn input_gradient_with(
        &self,
        x: &Tensor,
        class_index: usize,
        rule: ReluRule,
        objective: Objective,
    ) -> Result<Tensor> {
        let fwd = self.forward(x)?;
        let seed = self.objective_seed(fwd.logits(), class_index, objective)?;
        Ok(self.backward(&fwd, seed, rule, false)?.input)
    }
}

fn with_batch_axis(t: &Tensor) -> Result<Tensor> {
    let shape: Vec<usize> = core::iter::once(1).chain(t.shape().iter().copied()).collect();
    Tensor::new(shape, t.data().to_vec())
}

/// Reference architectures for 1x28x28 inputs.
pub mod presets {
    use super::*;

    /// Three hidden dense layers (256-128-64, ReLU) and a linear output.
    pub fn mlp(input_shape: &[usize], classes: usize) -> Result<Architecture> {
        Architecture::new(
            input_shape.to_vec(),
            vec![
                LayerSpec::flatten("flatten"),
                LayerSpec::dense("d1", 256),
                LayerSpec::relu("relu1"),
                LayerSpec::dense("d2", 128),
                LayerSpec::relu("relu2"),
                LayerSpec::dense("d3", 64),
                LayerSpec::relu("relu3"),
                LayerSpec::dense("out", classes),
            ],
        )
    }

    /// Three conv(3x3, pad 1) + ReLU + 2x2 maxpool blocks (8-16-32 channels)
    /// and a dense output layer.
    pub fn cnn(input_shape: &[usize], classes: usize) -> Result<Architecture> {
        Architecture::new(
            input_shape.to_vec(),
            vec![
                LayerSpec::conv2d("c1", 8, 3, 1, 1),
                LayerSpec::relu("relu1"),
                LayerSpec::maxpool2d("pool1", 2, 2),
                LayerSpec::conv2d("c2", 16, 3, 1, 1),
                LayerSpec::relu("relu2"),
                LayerSpec::maxpool2d("pool2", 2, 2),
                LayerSpec::conv2d("c3", 32, 3, 1, 1),
                LayerSpec::relu("relu3"),
                LayerSpec::maxpool2d("pool3", 2, 2),
                LayerSpec::flatten("flatten"),
                LayerSpec::dense("out", classes),
            ],
        )
    }
}
