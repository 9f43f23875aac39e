//! Explanation maps for a single input and target class.
//!
//! Deterministic methods: plain gradient, integrated gradients (midpoint
//! rule along the straight path from a baseline), guided backpropagation
//! and guided Grad-CAM. SmoothGrad and VarGrad wrap any of those four and
//! take the mean, respectively the population variance, over noisy copies
//! of the input.
//!
//! By default every method differentiates the pre-softmax logit of the
//! target class; [`Explainer::objective`] switches to the softmax
//! probability.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::nn::{LayerKind, Network, Objective, ReluRule};
use crate::tensor::{self, ReduceOp, Tensor};
use crate::{seed, Error, Result};

/// The four methods that are deterministic functions of the input.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BaseMethod {
    Gradient,
    IntegratedGradients(IgConfig),
    GuidedBackprop,
    GuidedGradCam,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    Gradient,
    IntegratedGradients(IgConfig),
    GuidedBackprop,
    GuidedGradCam,
    SmoothGrad { base: BaseMethod, noise: NoiseConfig },
    VarGrad { base: BaseMethod, noise: NoiseConfig },
}

impl From<BaseMethod> for Method {
    fn from(b: BaseMethod) -> Self {
        match b {
            BaseMethod::Gradient => Method::Gradient,
            BaseMethod::IntegratedGradients(c) => Method::IntegratedGradients(c),
            BaseMethod::GuidedBackprop => Method::GuidedBackprop,
            BaseMethod::GuidedGradCam => Method::GuidedGradCam,
        }
    }
}

impl BaseMethod {
    pub fn name(&self) -> &'static str {
        Method::from(self.clone()).name()
    }
}

impl Method {
    /// Stable identifier used in reports and file names.
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gradient => "gradient",
            Method::IntegratedGradients(_) => "integrated_gradients",
            Method::GuidedBackprop => "guided_backprop",
            Method::GuidedGradCam => "guided_grad_cam",
            Method::SmoothGrad { .. } => "smooth_grad",
            Method::VarGrad { .. } => "var_grad",
        }
    }

    /// True for methods that draw no noise.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Method::SmoothGrad { .. } | Method::VarGrad { .. })
    }

    pub fn needs_conv(&self) -> bool {
        match self {
            Method::GuidedGradCam => true,
            Method::SmoothGrad { base, .. } | Method::VarGrad { base, .. } => {
                matches!(base, BaseMethod::GuidedGradCam)
            }
            _ => false,
        }
    }

    /// Same method with its noise seed replaced (no-op for deterministic methods).
    pub fn with_noise_seed(&self, seed: u64) -> Method {
        match self {
            Method::SmoothGrad { base, noise } => Method::SmoothGrad {
                base: base.clone(),
                noise: NoiseConfig { seed, ..*noise },
            },
            Method::VarGrad { base, noise } => Method::VarGrad {
                base: base.clone(),
                noise: NoiseConfig { seed, ..*noise },
            },
            m => m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IgConfig {
    /// Path start; `None` means all zeros.
    pub baseline: Option<Tensor>,
    pub steps: usize,
}

impl Default for IgConfig {
    fn default() -> Self {
        IgConfig {
            baseline: None,
            steps: 50,
        }
    }
}

impl IgConfig {
    pub fn with_steps(steps: usize) -> Self {
        IgConfig { baseline: None, steps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseConfig {
    pub samples: usize,
    /// Noise standard deviation as a fraction of `max(x) - min(x)`.
    pub sigma_fraction: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            samples: 25,
            sigma_fraction: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationMap {
    pub values: Tensor,
    pub method: Method,
    pub class_index: usize,
}

/// Class activation map at feature-map resolution plus its upsampled copy.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCam {
    /// `[H', W']` map from the last conv layer.
    pub cam: Tensor,
    /// Bilinear resize to the input's spatial size, replicated across input
    /// channels (same shape as the input).
    pub upsampled: Tensor,
}

/// Explanation methods bound to one network and objective.
#[derive(Debug, Clone, Copy)]
pub struct Explainer<'a> {
    net: &'a Network,
    objective: Objective,
}

impl<'a> Explainer<'a> {
    pub fn new(net: &'a Network) -> Self {
        Explainer {
            net,
            objective: Objective::Logit,
        }
    }

    pub fn objective(self, objective: Objective) -> Self {
        Explainer { objective, ..self }
    }

    pub fn explain(&self, x: &Tensor, class_index: usize, method: &Method) -> Result<ExplanationMap> {
        let values = match method {
            Method::Gradient => self.gradient_values(x, class_index)?,
            Method::IntegratedGradients(cfg) => self.ig_values(x, class_index, cfg)?,
            Method::GuidedBackprop => self.gbp_values(x, class_index)?,
            Method::GuidedGradCam => self.guided_grad_cam_values(x, class_index)?,
            Method::SmoothGrad { base, noise } => {
                let samples = self.noisy_samples(base, x, class_index, noise)?;
                mean_of(&samples)?
            }
            Method::VarGrad { base, noise } => {
                if noise.samples < 2 {
                    return Err(Error::config("VarGrad needs at least 2 noise samples"));
                }
                let samples = self.noisy_samples(base, x, class_index, noise)?;
                variance_of(&samples)?
            }
        };
        if !values.all_finite() {
            return Err(Error::NonFinite(format!("{} explanation", method.name())));
        }
        Ok(ExplanationMap {
            values,
            method: method.clone(),
            class_index,
        })
    }

    fn input_gradient(&self, x: &Tensor, class_index: usize, rule: ReluRule) -> Result<Tensor> {
        self.net.input_gradient_with(x, class_index, rule, self.objective)
    }

    fn gradient_values(&self, x: &Tensor, class_index: usize) -> Result<Tensor> {
        self.input_gradient(x, class_index, ReluRule::Standard)
    }

    fn gbp_values(&self, x: &Tensor, class_index: usize) -> Result<Tensor> {
        self.input_gradient(x, class_index, ReluRule::Guided)
    }

    fn ig_values(&self, x: &Tensor, class_index: usize, cfg: &IgConfig) -> Result<Tensor> {
        if cfg.steps == 0 {
            return Err(Error::config("integrated gradients needs at least 1 step"));
        }
        let zeros;
        let baseline = match &cfg.baseline {
            Some(b) => b,
            None => {
                zeros = Tensor::zeros(x.shape());
                &zeros
            }
        };
        let delta = x.sub(baseline)?;
        let m = cfg.steps;
        let mut total = Tensor::zeros(x.shape());
        for k in 0..m {
            let alpha = (k as f64 + 0.5) / m as f64;
            let mut point = baseline.clone();
            point.axpy(alpha, &delta)?;
            let g = self.gradient_values(&point, class_index)?;
            total.axpy(1.0, &g)?;
        }
        delta.mul(&total.scale(1.0 / m as f64))
    }

    pub fn grad_cam(&self, x: &Tensor, class_index: usize) -> Result<GradCam> {
        let net = self.net;
        let layers = net.layers();
        let conv = layers
            .iter()
            .rposition(|l| matches!(l.kind, LayerKind::Conv2d { .. }))
            .ok_or(Error::NoConvLayer)?;
        let target = match layers.get(conv + 1) {
            Some(l) if l.kind == LayerKind::Relu => conv + 1,
            _ => conv,
        };
        let fwd = net.forward(x)?;
        let seed = net.objective_seed(fwd.logits(), class_index, self.objective)?;
        let grads = net.backward(&fwd, seed, ReluRule::Standard, false)?;
        let a = fwd.output(target);
        let g = &grads.outputs[target];
        let (channels, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let weights = tensor::reduce(ReduceOp::Mean, g, Some(&[1, 2]))?;
        let cam = weighted_cam(a, weights.data())?;

        let in_shape = x.shape();
        let (ih, iw) = match in_shape.len() {
            3 => (in_shape[1], in_shape[2]),
            _ => return Err(Error::network("GradCAM needs a [C, H, W] input")),
        };
        let up = tensor::resize_bilinear(&cam, ih, iw)?;
        let mut data = Vec::with_capacity(x.len());
        for _ in 0..in_shape[0] {
            data.extend_from_slice(up.data());
        }
        debug_assert_eq!(channels * h * w, a.len());
        Ok(GradCam {
            cam,
            upsampled: Tensor::new(in_shape.to_vec(), data)?,
        })
    }

    fn guided_grad_cam_values(&self, x: &Tensor, class_index: usize) -> Result<Tensor> {
        let cam = self.grad_cam(x, class_index)?;
        let gbp = self.gbp_values(x, class_index)?;
        gbp.mul(&cam.upsampled)
    }

    fn base_values(&self, base: &BaseMethod, x: &Tensor, class_index: usize) -> Result<Tensor> {
        match base {
            BaseMethod::Gradient => self.gradient_values(x, class_index),
            BaseMethod::IntegratedGradients(cfg) => self.ig_values(x, class_index, cfg),
            BaseMethod::GuidedBackprop => self.gbp_values(x, class_index),
            BaseMethod::GuidedGradCam => self.guided_grad_cam_values(x, class_index),
        }
    }

    /// Base explanations of `x + g_i` for `g_i ~ N(0, sigma^2)`, where sample
    /// `i` draws from its own stream keyed by `(noise.seed, i)`.
    fn noisy_samples(
        &self,
        base: &BaseMethod,
        x: &Tensor,
        class_index: usize,
        noise: &NoiseConfig,
    ) -> Result<Vec<Tensor>> {
        if noise.samples == 0 {
            return Err(Error::config("noise samples must be >= 1"));
        }
        if !(noise.sigma_fraction >= 0.0 && noise.sigma_fraction.is_finite()) {
            return Err(Error::config("sigma fraction must be finite and >= 0"));
        }
        let sigma = noise.sigma_fraction * (x.max_value() - x.min_value());
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(format!("{e}")))?;
        (0..noise.samples)
            .map(|i| {
                let mut rng = seed::rng(seed::derive_index(noise.seed, i as u64));
                let mut noisy = x.clone();
                noisy.data_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
                self.base_values(base, &noisy, class_index)
            })
            .collect()
    }

    /// SmoothGrad over caller-supplied noise vectors.
    pub fn smooth_grad_with_noise(
        &self,
        base: &BaseMethod,
        x: &Tensor,
        class_index: usize,
        noise: &[Tensor],
    ) -> Result<Tensor> {
        mean_of(&self.perturbed(base, x, class_index, noise)?)
    }

    /// VarGrad over caller-supplied noise vectors.
    pub fn var_grad_with_noise(
        &self,
        base: &BaseMethod,
        x: &Tensor,
        class_index: usize,
        noise: &[Tensor],
    ) -> Result<Tensor> {
        if noise.len() < 2 {
            return Err(Error::config("VarGrad needs at least 2 noise samples"));
        }
        variance_of(&self.perturbed(base, x, class_index, noise)?)
    }

    fn perturbed(&self, base: &BaseMethod, x: &Tensor, class_index: usize, noise: &[Tensor]) -> Result<Vec<Tensor>> {
        if noise.is_empty() {
            return Err(Error::config("noise samples must be >= 1"));
        }
        noise
            .iter()
            .map(|g| self.base_values(base, &x.add(g)?, class_index))
            .collect()
    }
}

/// `relu(sum_k w_k A_k)` over the channels of a `[K, H, W]` activation.
pub fn weighted_cam(activation: &Tensor, channel_weights: &[f64]) -> Result<Tensor> {
    let s = activation.shape();
    if s.len() != 3 || s[0] != channel_weights.len() {
        return Err(Error::IncompatibleShape {
            op: "grad_cam",
            expected: vec![channel_weights.len(), 0, 0],
            got: s.to_vec(),
        });
    }
    let hw = s[1] * s[2];
    let mut cam = vec![0.0; hw];
    for (k, plane) in activation.data().chunks(hw).enumerate() {
        let wk = channel_weights[k];
        for (c, &a) in cam.iter_mut().zip(plane) {
            *c += wk * a;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    Tensor::new(vec![s[1], s[2]], cam)
}

fn stack(samples: &[Tensor]) -> Result<Tensor> {
    let shape = samples[0].shape();
    let mut data = Vec::with_capacity(samples.len() * samples[0].len());
    for s in samples {
        if s.shape() != shape {
            return Err(Error::ShapeMismatch {
                left: s.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        data.extend_from_slice(s.data());
    }
    let stacked_shape = core::iter::once(samples.len()).chain(shape.iter().copied()).collect();
    Tensor::new(stacked_shape, data)
}

fn mean_of(samples: &[Tensor]) -> Result<Tensor> {
    let out = tensor::reduce(ReduceOp::Mean, &stack(samples)?, Some(&[0]))?;
    out.reshape(samples[0].shape().to_vec())
}

fn variance_of(samples: &[Tensor]) -> Result<Tensor> {
    let out = tensor::reduce(ReduceOp::Variance, &stack(samples)?, Some(&[0]))?;
    out.reshape(samples[0].shape().to_vec())
}

pub fn gradient(net: &Network, x: &Tensor, class_index: usize) -> Result<ExplanationMap> {
    Explainer::new(net).explain(x, class_index, &Method::Gradient)
}

pub fn integrated_gradients(net: &Network, x: &Tensor, class_index: usize, cfg: &IgConfig) -> Result<ExplanationMap> {
    Explainer::new(net).explain(x, class_index, &Method::IntegratedGradients(cfg.clone()))
}

pub fn guided_backprop(net: &Network, x: &Tensor, class_index: usize) -> Result<ExplanationMap> {
    Explainer::new(net).explain(x, class_index, &Method::GuidedBackprop)
}

pub fn grad_cam(net: &Network, x: &Tensor, class_index: usize) -> Result<GradCam> {
    Explainer::new(net).grad_cam(x, class_index)
}

pub fn guided_grad_cam(net: &Network, x: &Tensor, class_index: usize) -> Result<ExplanationMap> {
    Explainer::new(net).explain(x, class_index, &Method::GuidedGradCam)
}

pub fn smooth_grad(
    base: &BaseMethod,
    net: &Network,
    x: &Tensor,
    class_index: usize,
    noise: &NoiseConfig,
) -> Result<ExplanationMap> {
    Explainer::new(net).explain(
        x,
        class_index,
        &Method::SmoothGrad {
            base: base.clone(),
            noise: *noise,
        },
    )
}

pub fn var_grad(
    base: &BaseMethod,
    net: &Network,
    x: &Tensor,
    class_index: usize,
    noise: &NoiseConfig,
) -> Result<ExplanationMap> {
    Explainer::new(net).explain(
        x,
        class_index,
        &Method::VarGrad {
            base: base.clone(),
            noise: *noise,
        },
    )
}
