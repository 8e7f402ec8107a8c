use proptest::prelude::*;
use uplot::tensorcore::{
    activate, activate_backward, conv2d, conv2d_backward, max_pool2, max_pool2_backward, upsample2,
    upsample2_backward, Activation, Padding,
};
use uplot::Tensor;

fn tensor(shape: &[usize], values: &[f32]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), values.iter().cycle().take(n).copied().collect()).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, n)
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Central-difference derivative of `f` with respect to `x[i]`, in f64.
fn central_diff(x: &mut [f32], i: usize, h: f32, f: &dyn Fn(&[f32]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h as f64)
}

fn close(numeric: f64, analytic: f64, tol: f64) -> bool {
    (numeric - analytic).abs() <= tol * numeric.abs().max(analytic.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_is_linear_in_the_input(x in values(2 * 8 * 8), y in values(2 * 8 * 8), k in values(3 * 2 * 9),
                                   a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let kern = tensor(&[3, 2, 3, 3], &k);
        let zero = [0.0f32; 3];
        let xs = tensor(&[2, 8, 8], &x);
        let ys = tensor(&[2, 8, 8], &y);
        let mix: Vec<f32> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        for pad in [Padding::Same, Padding::Valid] {
            let lhs = conv2d(&tensor(&[2, 8, 8], &mix), &kern, &zero, pad).unwrap();
            let cx = conv2d(&xs, &kern, &zero, pad).unwrap();
            let cy = conv2d(&ys, &kern, &zero, pad).unwrap();
            for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
                prop_assert!((l - (a * p + b * q)).abs() <= 1e-4 * (1.0 + l.abs()));
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences(x in values(2 * 8 * 8), k in values(3 * 2 * 9),
                                               bias in values(3), w in values(3 * 8 * 8)) {
        let kern = tensor(&[3, 2, 3, 3], &k);
        let input = tensor(&[2, 8, 8], &x);
        for pad in [Padding::Same, Padding::Valid] {
            let out = conv2d(&input, &kern, &bias, pad).unwrap();
            let weights = tensor(out.shape(), &w);
            let g = conv2d_backward(&input, &kern, &weights, pad).unwrap();
            // Loss = <weights, conv(x)>, so dL/dout = weights.
            let loss_x = |xv: &[f32]| {
                dot(conv2d(&tensor(&[2, 8, 8], xv), &kern, &bias, pad).unwrap().data(), weights.data())
            };
            let loss_k = |kv: &[f32]| {
                dot(conv2d(&input, &tensor(&[3, 2, 3, 3], kv), &bias, pad).unwrap().data(), weights.data())
            };
            let loss_b = |bv: &[f32]| dot(conv2d(&input, &kern, bv, pad).unwrap().data(), weights.data());
            let mut xv = x.clone();
            for i in [0, 17, 63, 64, 100, 127] {
                prop_assert!(close(central_diff(&mut xv, i, 1e-3, &loss_x), g.input.data()[i] as f64, 1e-2));
            }
            let mut kv = k.clone();
            for i in [0, 5, 26, 53] {
                prop_assert!(close(central_diff(&mut kv, i, 1e-3, &loss_k), g.kernels.data()[i] as f64, 1e-2));
            }
            let mut bv = bias.clone();
            for i in 0..3 {
                prop_assert!(close(central_diff(&mut bv, i, 1e-3, &loss_b), g.bias[i] as f64, 1e-2));
            }
        }
    }

    #[test]
    fn upsample_gradients_match_finite_differences(x in values(3 * 4 * 4), k in values(2 * 3 * 4),
                                                   w in values(2 * 8 * 8)) {
        let input = tensor(&[3, 4, 4], &x);
        let kern = tensor(&[2, 3, 2, 2], &k);
        let weights = tensor(&[2, 8, 8], &w);
        let (dx, dk) = upsample2_backward(&input, &kern, &weights).unwrap();
        let loss_x = |xv: &[f32]| dot(upsample2(&tensor(&[3, 4, 4], xv), &kern).unwrap().data(), weights.data());
        let loss_k = |kv: &[f32]| dot(upsample2(&input, &tensor(&[2, 3, 2, 2], kv)).unwrap().data(), weights.data());
        let mut xv = x.clone();
        for i in [0, 9, 30, 47] {
            prop_assert!(close(central_diff(&mut xv, i, 1e-3, &loss_x), dx.data()[i] as f64, 1e-2));
        }
        let mut kv = k.clone();
        for i in [0, 7, 23] {
            prop_assert!(close(central_diff(&mut kv, i, 1e-3, &loss_k), dk.data()[i] as f64, 1e-2));
        }
    }

    #[test]
    fn pool_and_activation_gradients(x in values(2 * 8 * 8), w in values(2 * 4 * 4)) {
        let input = tensor(&[2, 8, 8], &x);
        let (out, idx) = max_pool2(&input).unwrap();
        let weights = tensor(out.shape(), &w);
        let dx = max_pool2_backward(&weights, &idx).unwrap();
        // Each window's maximum receives its weight; everything else zero.
        prop_assert!((dot(dx.data(), input.data()) - dot(weights.data(), out.data())).abs() < 1e-4);
        prop_assert_eq!(dx.data().iter().filter(|v| **v != 0.0).count(),
                        w.iter().filter(|v| **v != 0.0).count());

        for kind in [Activation::Relu, Activation::Sigmoid] {
            let y = activate(&input, kind);
            let wy = tensor(y.shape(), &x);
            let g = activate_backward(&y, &wy, kind).unwrap();
            let loss = |xv: &[f32]| dot(activate(&tensor(&[2, 8, 8], xv), kind).data(), wy.data());
            let mut xv = x.clone();
            for i in [1, 40, 90] {
                // Skip points within a step of the ReLU kink.
                if kind == Activation::Relu && x[i].abs() < 2e-3 {
                    continue;
                }
                prop_assert!(close(central_diff(&mut xv, i, 1e-3, &loss), g.data()[i] as f64, 1e-2));
            }
        }
    }

    #[test]
    fn same_padding_preserves_size(h in 1usize..7, w in 1usize..7, c in 1usize..3) {
        let x = Tensor::full(&[c, h * 2, w * 2], 0.5);
        let k = Tensor::full(&[2, c, 3, 3], 0.1);
        let y = conv2d(&x, &k, &[0.0, 0.0], Padding::Same).unwrap();
        prop_assert_eq!(y.shape(), &[2, h * 2, w * 2]);
    }
}
