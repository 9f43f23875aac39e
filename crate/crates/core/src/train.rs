//! Weight initialization and mini-batch SGD with momentum on softmax
//! cross-entropy.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::exec::Executor;
use crate::nn::{softmax, Architecture, LayerParams, Network, ReluRule};
use crate::{data::Dataset, seed, Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum InitKind {
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    #[default]
    UniformFan,
    /// `N(0, 2 / fan_in)` resampled outside two standard deviations.
    NormalTruncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InitScheme {
    pub kind: InitKind,
    pub seed: u64,
}

impl InitScheme {
    pub fn new(kind: InitKind, seed: u64) -> Self {
        InitScheme { kind, seed }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        InitScheme { seed, ..self }
    }

    /// Weights for one layer; a pure function of `(seed, name, shape)`.
    /// Biases are zero.
    pub fn layer_params(&self, name: &str, weight_shape: &[usize], bias_shape: &[usize]) -> LayerParams {
        let fan_in: usize = weight_shape[1..].iter().product();
        let mut rng = seed::rng(seed::derive(self.seed, name));
        let n: usize = weight_shape.iter().product();
        let values: Vec<f64> = match self.kind {
            InitKind::UniformFan => {
                let bound = libm::sqrt(6.0 / fan_in as f64);
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
            InitKind::NormalTruncated => {
                let std = libm::sqrt(2.0 / fan_in as f64);
                let normal = Normal::new(0.0, std).expect("finite std");
                (0..n)
                    .map(|_| loop {
                        let v: f64 = normal.sample(&mut rng);
                        if libm::fabs(v) <= 2.0 * std {
                            break v;
                        }
                    })
                    .collect()
            }
        };
        LayerParams {
            weight: Tensor::new(weight_shape.to_vec(), values).expect("weight shape"),
            bias: Tensor::zeros(bias_shape),
        }
    }
}

/// Builds a network with freshly initialized weights.
pub fn initialize(arch: &Architecture, scheme: &InitScheme) -> Network {
    let params = (0..arch.layers().len())
        .map(|i| {
            arch.param_shapes(i)
                .map(|(w, b)| scheme.layer_params(&arch.layers()[i].name, &w, &b))
        })
        .collect();
    Network::new(arch.clone(), params).expect("initializer matches architecture")
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Examples per accumulation chunk. Chunks are fixed by position in the batch
/// (not by thread), so parallel runs sum gradients in the same order.
const CHUNK: usize = 8;

struct Accum {
    grads: Vec<Option<LayerParams>>,
    loss: f64,
    correct: usize,
}

fn zero_grads(net: &Network) -> Vec<Option<LayerParams>> {
    net.all_params()
        .iter()
        .map(|p| p.as_ref().map(LayerParams::zeros_like))
        .collect()
}

fn add_grads(acc: &mut [Option<LayerParams>], g: &[Option<LayerParams>]) {
    for (a, g) in acc.iter_mut().zip(g) {
        if let (Some(a), Some(g)) = (a.as_mut(), g.as_ref()) {
            a.weight.axpy(1.0, &g.weight).expect("same shape");
            a.bias.axpy(1.0, &g.bias).expect("same shape");
        }
    }
}

/// Softmax cross-entropy loss and parameter gradients for one example.
pub fn example_gradients(net: &Network, x: &Tensor, label: usize) -> Result<(Vec<Option<LayerParams>>, f64, bool)> {
    let fwd = net.forward(x)?;
    let logits = fwd.logits();
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let loss = max + libm::log(z.iter().map(|v| libm::exp(v - max)).sum::<f64>()) - z[label];
    let p = softmax(z);
    let mut seed = p;
    seed[label] -= 1.0;
    let correct = logits.argmax() == label;
    let g = net.backward(
        &fwd,
        Tensor::new(alloc::vec![seed.len()], seed)?,
        ReluRule::Standard,
        true,
    )?;
    Ok((g.params.expect("requested"), loss, correct))
}

fn chunk_gradients(net: &Network, ds: &Dataset, idx: &[usize]) -> Result<Accum> {
    let mut acc = Accum {
        grads: zero_grads(net),
        loss: 0.0,
        correct: 0,
    };
    for &i in idx {
        let (g, loss, correct) = example_gradients(net, &ds.image(i), ds.label(i))?;
        add_grads(&mut acc.grads, &g);
        acc.loss += loss;
        acc.correct += usize::from(correct);
    }
    Ok(acc)
}

pub fn train(net: Network, ds: &Dataset, cfg: &TrainConfig) -> Result<(Network, Vec<EpochStats>)> {
    train_with(net, ds, cfg, &crate::exec::Sequential)
}

/// SGD with momentum (`v = m v + g; w -= lr v`), batch-mean gradients.
///
/// The result is identical for any executor: per-chunk sums are combined in
/// chunk order.
pub fn train_with<E: Executor>(
    mut net: Network,
    ds: &Dataset,
    cfg: &TrainConfig,
    exec: &E,
) -> Result<(Network, Vec<EpochStats>)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidDataset("empty training set".into()));
    }
    if ds.image_shape() != net.input_shape() {
        return Err(Error::ShapeMismatch {
            left: ds.image_shape().to_vec(),
            right: net.input_shape().to_vec(),
        });
    }
    if ds.num_classes() > net.num_classes() {
        return Err(Error::config(format!(
            "dataset has {} classes, network only {}",
            ds.num_classes(),
            net.num_classes()
        )));
    }

    let mut velocity = zero_grads(&net);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(seed::derive_index(seed::derive(cfg.seed, "shuffle"), epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
            let net_ref = &net;
            let results = exec.map(chunks.len(), |c| chunk_gradients(net_ref, ds, chunks[c]));
            let mut total = zero_grads(&net);
            let mut batch_loss = 0.0;
            for r in results {
                let a = r?;
                add_grads(&mut total, &a.grads);
                batch_loss += a.loss;
                epoch_correct += a.correct;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, step {step}")));
            }
            epoch_loss += batch_loss;

            let scale = 1.0 / batch.len() as f64;
            for ((v, g), p) in velocity.iter_mut().zip(&total).zip(net.params_mut()) {
                if let (Some(v), Some(g), Some(p)) = (v.as_mut(), g.as_ref(), p.as_mut()) {
                    for (vt, gt, pt) in [
                        (&mut v.weight, &g.weight, &mut p.weight),
                        (&mut v.bias, &g.bias, &mut p.bias),
                    ] {
                        for ((vv, &gv), pv) in vt.data_mut().iter_mut().zip(gt.data()).zip(pt.data_mut()) {
                            *vv = cfg.momentum * *vv + gv * scale;
                            *pv -= cfg.learning_rate * *vv;
                        }
                    }
                }
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        history.push(EpochStats {
            epoch,
            loss: epoch_loss / ds.len() as f64,
            accuracy: epoch_correct as f64 / ds.len() as f64,
        });
    }
    Ok((net, history))
}

/// Fraction of examples whose top logit matches the label.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    accuracy_with(net, ds, &crate::exec::Sequential)
}

pub fn accuracy_with<E: Executor>(net: &Network, ds: &Dataset, exec: &E) -> Result<f64> {
    let hits = exec.map(ds.len(), |i| net.predict(&ds.image(i)).map(|p| p == ds.label(i)));
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / ds.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Source, Split};
    use crate::nn::LayerSpec;

    fn small_mlp() -> Architecture {
        Architecture::new(
            alloc::vec![2],
            alloc::vec![
                LayerSpec::dense("h", 8),
                LayerSpec::relu("r"),
                LayerSpec::dense("out", 2),
            ],
        )
        .unwrap()
    }

    #[test]
    fn initialize_is_deterministic() {
        let arch = crate::nn::presets::cnn(&[1, 28, 28], 10).unwrap();
        let s = InitScheme::new(InitKind::UniformFan, 3);
        assert_eq!(initialize(&arch, &s), initialize(&arch, &s));
        assert_ne!(initialize(&arch, &s), initialize(&arch, &s.with_seed(4)));
        let n = initialize(&arch, &InitScheme::new(InitKind::NormalTruncated, 3));
        assert!(n.params(0).unwrap().bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn uniform_fan_bound() {
        let s = InitScheme::new(InitKind::UniformFan, 11);
        let p = s.layer_params("d", &[50, 100], &[50]);
        let bound = (6.0f64 / 100.0).sqrt();
        assert!(p.weight.data().iter().all(|w| w.abs() <= bound));
        assert!(p.weight.data().iter().any(|w| w.abs() > 0.9 * bound));
        let t = InitScheme::new(InitKind::NormalTruncated, 11).layer_params("d", &[50, 100], &[50]);
        let std = (2.0f64 / 100.0).sqrt();
        assert!(t.weight.data().iter().all(|w| w.abs() <= 2.0 * std));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..ok }.validate().is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(TrainConfig { momentum: 1.0, ..ok }.validate().is_err());
    }

    fn separable(n: usize) -> Dataset {
        let mut rng = seed::rng(5);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let y: f64 = rng.random_range(0.0..1.0);
            let x: f64 = if label == 0 {
                rng.random_range(0.0..0.45)
            } else {
                rng.random_range(0.55..1.0)
            };
            data.extend_from_slice(&[x, y]);
            labels.push(label);
        }
        let images = Tensor::new(alloc::vec![n, 1, 1, 2], data).unwrap();
        Dataset::new(images, labels, 2, Split::Train, Source::Synthetic).unwrap()
    }

    #[test]
    fn learns_separable_data() {
        let arch = Architecture::new(
            alloc::vec![1, 1, 2],
            core::iter::once(LayerSpec::flatten("f"))
                .chain(small_mlp().layers().iter().cloned())
                .collect(),
        )
        .unwrap();
        let net = initialize(&arch, &InitScheme::new(InitKind::UniformFan, 1));
        let ds = separable(400);
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 16,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 2,
        };
        let (trained, history) = train(net, &ds, &cfg).unwrap();
        assert_eq!(history.len(), 40);
        assert!(history.iter().all(|h| h.loss.is_finite()));
        let acc = accuracy(&trained, &ds).unwrap();
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn diverging_training_is_reported() {
        let arch = Architecture::new(
            alloc::vec![1, 1, 2],
            alloc::vec![LayerSpec::flatten("f"), LayerSpec::dense("out", 2)],
        )
        .unwrap();
        let net = initialize(&arch, &InitScheme::new(InitKind::UniformFan, 1));
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            learning_rate: 1e307,
            momentum: 0.9,
            seed: 2,
        };
        let r = train(net, &separable(64), &cfg);
        assert!(matches!(r, Err(Error::NonFinite(_))), "{:?}", r.map(|x| x.1));
    }
}
