mod common;

use common::{close, fd_input_gradient, random_cnn, random_mlp, random_params, random_tensor};
use sanity_core::nn::{Architecture, LayerSpec, Network, ReluRule};
use sanity_core::train::example_gradients;

fn check_net(net: &Network, stream: u64) {
    assert!(net.parameter_count() <= 2000, "{} params", net.parameter_count());
    let x = random_tensor(net.input_shape(), stream, 0.0, 1.0);
    for class in 0..net.num_classes() {
        let g = net.input_gradient(&x, class, ReluRule::Standard).unwrap();
        let fd = fd_input_gradient(net, &x, class, 1e-5);
        for (i, (a, b)) in g.data().iter().zip(&fd).enumerate() {
            assert!(
                close(*a, *b, 1e-6, 1e-4),
                "class {class} component {i}: analytic {a} vs fd {b}"
            );
        }
    }
}

#[test]
fn mlp_input_gradients_match_finite_differences() {
    for s in 0..10 {
        check_net(&random_mlp(100 + s), 900 + s);
    }
}

#[test]
fn cnn_input_gradients_match_finite_differences() {
    for s in 0..10 {
        check_net(&random_cnn(200 + s), 800 + s);
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    // Cross-entropy gradient of every weight in a small CNN.
    let net = random_cnn(7);
    let x = random_tensor(net.input_shape(), 3, 0.0, 1.0);
    let label = 1;
    let (grads, _, _) = example_gradients(&net, &x, label).unwrap();
    let loss = |n: &Network| {
        let z = n.logits(&x).unwrap();
        let m = z.max_value();
        let lse = m + z.data().iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lse - z.data()[label]
    };
    let h = 1e-5;
    for (layer, g) in grads.iter().enumerate() {
        let Some(p) = net.params(layer) else { continue };
        let g = g.as_ref().unwrap();
        for i in 0..p.weight.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut wp = p.clone();
            wp.weight.data_mut()[i] += h;
            plus.set_params(layer, wp).unwrap();
            let mut wm = p.clone();
            wm.weight.data_mut()[i] -= h;
            minus.set_params(layer, wm).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = g.weight.data()[i];
            assert!(close(a, fd, 1e-6, 1e-4), "layer {layer} weight {i}: {a} vs {fd}");
        }
    }
}

#[test]
fn guided_equals_standard_without_relu() {
    let arch = Architecture::new(
        vec![2, 6, 6],
        vec![
            LayerSpec::conv2d("c", 3, 3, 1, 1),
            LayerSpec::maxpool2d("p", 2, 2),
            LayerSpec::flatten("f"),
            LayerSpec::dense("d", 5),
            LayerSpec::dense("out", 3),
        ],
    )
    .unwrap();
    let net = random_params(arch, 11);
    for s in 0..5 {
        let x = random_tensor(net.input_shape(), s, -1.0, 1.0);
        for c in 0..3 {
            let a = net.input_gradient(&x, c, ReluRule::Standard).unwrap();
            let b = net.input_gradient(&x, c, ReluRule::Guided).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn guided_signal_never_exceeds_standard_at_the_relu() {
    let arch = Architecture::new(
        vec![6],
        vec![
            LayerSpec::dense("d1", 16),
            LayerSpec::relu("r"),
            LayerSpec::dense("out", 4),
        ],
    )
    .unwrap();
    for s in 0..20 {
        let net = random_params(arch.clone(), 50 + s);
        let x = random_tensor(&[6], 70 + s, -1.0, 1.0);
        let fwd = net.forward(&x).unwrap();
        for c in 0..4 {
            let seed = net.objective_seed(fwd.logits(), c, Default::default()).unwrap();
            let std = net.backward(&fwd, seed.clone(), ReluRule::Standard, false).unwrap();
            let gd = net.backward(&fwd, seed, ReluRule::Guided, false).unwrap();
            // outputs[0] is the signal arriving at the ReLU's input.
            assert_eq!(std.outputs[1], gd.outputs[1]);
            for (a, b) in gd.outputs[0].data().iter().zip(std.outputs[0].data()) {
                assert!(a.abs() <= b.abs());
            }
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let net = random_cnn(5);
    let x = random_tensor(net.input_shape(), 1, 0.0, 1.0);
    let a = net.forward(&x).unwrap();
    let b = net.forward(&x).unwrap();
    assert_eq!(a.logits().data(), b.logits().data());
}
