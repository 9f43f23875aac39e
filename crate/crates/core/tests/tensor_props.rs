mod common;

use common::kahan_sum;
use proptest::prelude::*;
use sanity_core::tensor::{conv2d, elementwise, reduce, BinaryOp, ReduceOp};
use sanity_core::Tensor;

fn tensor_pair() -> impl Strategy<Value = (Tensor, Tensor)> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        (
            prop::collection::vec(-1e3f64..1e3, n),
            prop::collection::vec(-1e3f64..1e3, n),
        )
            .prop_map(move |(a, b)| {
                (
                    Tensor::new(shape.clone(), a).unwrap(),
                    Tensor::new(shape.clone(), b).unwrap(),
                )
            })
    })
}

proptest! {
    #[test]
    fn add_then_sub_recovers_input((a, b) in tensor_pair()) {
        let back = elementwise(BinaryOp::Sub, &elementwise(BinaryOp::Add, &a, &b).unwrap(), &b).unwrap();
        prop_assert_eq!(back.shape(), a.shape());
        for (x, y) in back.data().iter().zip(a.data()) {
            // Rounding in a + b is bounded by ulp(|a| + |b|) ~ 2e3 * 2^-52.
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_1x1_conv_is_exact(
        c in 1usize..4, h in 1usize..7, w in 1usize..7,
        seed in any::<u64>(),
    ) {
        let x = common::random_tensor(&[1, c, h, w], seed, -5.0, 5.0);
        let mut k = Tensor::zeros(&[c, c, 1, 1]);
        for i in 0..c {
            k.data_mut()[i * c + i] = 1.0;
        }
        prop_assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn sum_matches_compensated_reference(v in prop::collection::vec(-1e6f64..1e6, 1..400)) {
        let t = Tensor::from_slice(&v);
        let got = reduce(ReduceOp::Sum, &t, None).unwrap().data()[0];
        let want = kahan_sum(&v);
        let scale = v.iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
        prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-10 * scale));
    }
}

#[test]
fn ill_conditioned_sum() {
    let v = [1e16, 1.0, -1e16, 1.0, 3.0];
    assert_eq!(Tensor::from_slice(&v).sum(), 5.0);
}
