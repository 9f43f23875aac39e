mod common;

use common::{random_cnn, random_mlp, random_params, random_tensor};
use sanity_core::attribution::{BaseMethod, Explainer, IgConfig, Method, NoiseConfig};
use sanity_core::data::{synthetic, Split};
use sanity_core::nn::{presets, Architecture, LayerSpec, Network};
use sanity_core::Tensor;

fn linear(stream: u64) -> Network {
    let arch = Architecture::new(vec![1, 3, 4], vec![LayerSpec::flatten("f"), LayerSpec::dense("out", 3)]).unwrap();
    random_params(arch, stream)
}

fn all_methods(noise_seed: u64) -> Vec<Method> {
    let noise = NoiseConfig {
        samples: 6,
        sigma_fraction: 0.2,
        seed: noise_seed,
    };
    vec![
        Method::Gradient,
        Method::IntegratedGradients(IgConfig::with_steps(8)),
        Method::GuidedBackprop,
        Method::GuidedGradCam,
        Method::SmoothGrad {
            base: BaseMethod::GuidedBackprop,
            noise,
        },
        Method::VarGrad {
            base: BaseMethod::Gradient,
            noise,
        },
    ]
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn linear_model_closed_forms() {
    for s in 0..5 {
        let net = linear(s);
        let ex = Explainer::new(&net);
        let x = random_tensor(&[1, 3, 4], 40 + s, 0.0, 1.0);
        for c in 0..3 {
            let w = &net.params(1).unwrap().weight.data()[c * 12..(c + 1) * 12];
            let grad = ex.explain(&x, c, &Method::Gradient).unwrap();
            assert_eq!(grad.values.data(), w);
            for m in [1, 7, 50, 333] {
                let ig = ex
                    .explain(&x, c, &Method::IntegratedGradients(IgConfig::with_steps(m)))
                    .unwrap();
                let want: Vec<f64> = x.data().iter().zip(w).map(|(a, b)| a * b).collect();
                assert!(max_abs_diff(ig.values.data(), &want) <= 1e-10);
            }
            for (n, sigma) in [(1, 0.1), (5, 0.5), (30, 1.0)] {
                let noise = NoiseConfig {
                    samples: n,
                    sigma_fraction: sigma,
                    seed: s,
                };
                let sg = ex
                    .explain(
                        &x,
                        c,
                        &Method::SmoothGrad {
                            base: BaseMethod::Gradient,
                            noise,
                        },
                    )
                    .unwrap();
                assert!(max_abs_diff(sg.values.data(), w) <= 1e-10);
                if n >= 2 {
                    let vg = ex
                        .explain(
                            &x,
                            c,
                            &Method::VarGrad {
                                base: BaseMethod::Gradient,
                                noise,
                            },
                        )
                        .unwrap();
                    assert!(vg.values.data().iter().all(|v| v.abs() <= 1e-10));
                }
            }
        }
    }
}

#[test]
fn every_method_preserves_shape_and_is_pure() {
    let net = random_cnn(21);
    let ex = Explainer::new(&net);
    let x = random_tensor(net.input_shape(), 2, 0.0, 1.0);
    for m in all_methods(77) {
        let a = ex.explain(&x, 1, &m).unwrap();
        let b = ex.explain(&x, 1, &m).unwrap();
        assert_eq!(a.values.shape(), x.shape(), "{}", m.name());
        assert_eq!(a.values, b.values, "{}", m.name());
    }
}

#[test]
fn noise_seed_changes_noisy_methods_only() {
    let net = random_cnn(22);
    let ex = Explainer::new(&net);
    let x = random_tensor(net.input_shape(), 3, 0.0, 1.0);
    for (m1, m2) in all_methods(1).into_iter().zip(all_methods(2)) {
        let a = ex.explain(&x, 0, &m1).unwrap().values;
        let b = ex.explain(&x, 0, &m2).unwrap().values;
        assert_eq!(a == b, m1.is_deterministic(), "{}", m1.name());
    }
}

/// Reference CNN with random nonzero biases on synthetic images: many ReLU
/// units, so the integrand along the IG path has many small kinks rather
/// than a few large ones. With zero biases the network would be positively
/// homogeneous and IG exact at every step count.
fn wide_cnn() -> (Network, Vec<Tensor>) {
    let net = random_params(presets::cnn(&[1, 28, 28], 10).unwrap(), 8);
    let ds = synthetic(10, 2, 4, Split::Test).unwrap();
    let xs = (0..ds.len()).map(|i| ds.image(i)).collect();
    (net, xs)
}

#[test]
fn ig_completeness_on_reference_cnn() {
    let (net, xs) = wide_cnn();
    let zero = Tensor::zeros(net.input_shape());
    for x in xs.iter().take(10) {
        let c = net.predict(x).unwrap();
        let ig = Explainer::new(&net)
            .explain(x, c, &Method::IntegratedGradients(IgConfig::with_steps(512)))
            .unwrap();
        let gap = net.logits(x).unwrap().data()[c] - net.logits(&zero).unwrap().data()[c];
        let err = (ig.values.sum() - gap).abs();
        assert!(err <= 1e-8f64.max(0.005 * gap.abs()), "err {err}, gap {gap}");
    }
}

#[test]
fn ig_refinement_stabilizes() {
    let (net, xs) = wide_cnn();
    let mut checks = 0;
    let mut violations = 0;
    for x in xs.iter().take(10) {
        let c = net.predict(x).unwrap();
        let ig = |m| {
            Explainer::new(&net)
                .explain(x, c, &Method::IntegratedGradients(IgConfig::with_steps(m)))
                .unwrap()
                .values
        };
        let (a, b, c, d) = (ig(32), ig(64), ig(128), ig(256));
        for (coarse, fine) in [(a.sub(&b), b.sub(&c)), (b.sub(&c), c.sub(&d))] {
            checks += 1;
            if fine.unwrap().l2_norm() >= coarse.unwrap().l2_norm() {
                violations += 1;
            }
        }
    }
    assert!(violations * 10 <= checks, "{violations} of {checks}");
}

#[test]
fn grad_cam_rejected_without_conv() {
    let net = random_mlp(1);
    let x = random_tensor(net.input_shape(), 1, 0.0, 1.0);
    assert!(matches!(
        Explainer::new(&net).explain(&x, 0, &Method::GuidedGradCam),
        Err(sanity_core::Error::NoConvLayer)
    ));
}
