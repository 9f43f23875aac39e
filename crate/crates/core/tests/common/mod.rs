//! Reference implementations and fixtures shared by the integration tests.
//! Each oracle is written independently of the library code it checks.

#![allow(dead_code)]

use sanity_core::nn::{Architecture, LayerParams, LayerSpec, Network};
use sanity_core::seed;
use sanity_core::Tensor;

/// Uniform draw in `[lo, hi)` keyed by `(stream, index)`.
pub fn uniform(stream: u64, index: u64, lo: f64, hi: f64) -> f64 {
    let u = (seed::derive_index(stream, index) >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * u
}

pub fn random_tensor(shape: &[usize], stream: u64, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n as u64).map(|i| uniform(stream, i, lo, hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Fills every parameterized layer with uniform weights and biases.
pub fn random_params(arch: Architecture, stream: u64) -> Network {
    let params = (0..arch.layers().len())
        .map(|i| {
            arch.param_shapes(i).map(|(w, b)| {
                let s = seed::derive_index(stream, i as u64);
                let fan_in: usize = w[1..].iter().product();
                let bound = (3.0 / fan_in as f64).sqrt();
                LayerParams {
                    weight: random_tensor(&w, s, -bound, bound),
                    bias: random_tensor(&b, s ^ 0x5555, -0.2, 0.2),
                }
            })
        })
        .collect();
    Network::new(arch, params).unwrap()
}

fn pick(stream: u64, index: u64, lo: usize, hi: usize) -> usize {
    lo + (seed::derive_index(stream, index) % (hi - lo + 1) as u64) as usize
}

/// Small random MLP: flatten, two hidden ReLU layers, linear output.
pub fn random_mlp(stream: u64) -> Network {
    let (h, w) = (pick(stream, 0, 2, 5), pick(stream, 1, 2, 5));
    let arch = Architecture::new(
        vec![1, h, w],
        vec![
            LayerSpec::flatten("flat"),
            LayerSpec::dense("d1", pick(stream, 2, 3, 12)),
            LayerSpec::relu("r1"),
            LayerSpec::dense("d2", pick(stream, 3, 3, 10)),
            LayerSpec::relu("r2"),
            LayerSpec::dense("out", pick(stream, 4, 2, 5)),
        ],
    )
    .unwrap();
    random_params(arch, stream)
}

/// Small random CNN: conv, ReLU, maxpool, conv, ReLU, dense output.
pub fn random_cnn(stream: u64) -> Network {
    let c = pick(stream, 0, 1, 2);
    let side = pick(stream, 1, 6, 8);
    let arch = Architecture::new(
        vec![c, side, side],
        vec![
            LayerSpec::conv2d("c1", pick(stream, 2, 2, 4), 3, 1, pick(stream, 3, 0, 1)),
            LayerSpec::relu("r1"),
            LayerSpec::maxpool2d("p1", 2, 2),
            LayerSpec::conv2d("c2", pick(stream, 4, 2, 4), 2, 1, 0),
            LayerSpec::relu("r2"),
            LayerSpec::flatten("flat"),
            LayerSpec::dense("out", pick(stream, 5, 2, 5)),
        ],
    )
    .unwrap();
    random_params(arch, stream)
}

/// Central finite differences of the class logit with respect to `x`.
pub fn fd_input_gradient(net: &Network, x: &Tensor, class: usize, h: f64) -> Vec<f64> {
    let score = |v: &Tensor| net.logits(v).unwrap().data()[class];
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.data_mut()[i] += h;
            minus.data_mut()[i] -= h;
            (score(&plus) - score(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Average ranks by explicit counting: `1 + #{less} + (#{equal} - 1) / 2`.
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Textbook Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

pub fn brute_spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&brute_ranks(a), &brute_ranks(b))
}

/// Sequential Kahan summation.
pub fn kahan_sum(v: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in v {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// `|got - want| <= max(abs, rel * |want|)`.
pub fn close(got: f64, want: f64, abs: f64, rel: f64) -> bool {
    (got - want).abs() <= abs.max(rel * want.abs())
}
