//! Property tests over the engine invariants.

use detone_core::halftone::{error_diffuse_fs, sobel_gradient, GrayImage};
use detone_core::tensor::{
    concat_channels, conv2d_backward, conv2d_forward, mse_loss, relu_forward, split_channels,
    ConvParams, Dims, Tensor,
};

use proptest::prelude::*;

fn dims_strategy() -> impl Strategy<Value = Dims> {
    (1usize..3, 1usize..4, 3usize..9, 3usize..9).prop_map(|(n, c, h, w)| Dims::new(n, c, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn concat_split_round_trip_is_bit_exact(
        dims in dims_strategy(),
        seed in any::<u32>(),
    ) {
        let mut state = seed as u64 + 1;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let a = Tensor::from_fn(dims, |_| next());
        let b = Tensor::from_fn(Dims::new(dims.n, 2, dims.h, dims.w), |_| next());
        let c = Tensor::from_fn(Dims::new(dims.n, 1, dims.h, dims.w), |_| next());
        let cat = concat_channels(&[&a, &b, &c]).unwrap();
        let parts = split_channels(&cat, &[dims.c, 2, 1]).unwrap();
        prop_assert_eq!(&parts[0], &a);
        prop_assert_eq!(&parts[1], &b);
        prop_assert_eq!(&parts[2], &c);
    }

    #[test]
    fn mse_is_nonnegative_and_zero_iff_equal(
        dims in dims_strategy(),
        delta in -0.5f32..0.5,
    ) {
        let a = Tensor::filled(dims, 0.25f32);
        let (zero_loss, zero_grad) = mse_loss(&a, &a).unwrap();
        prop_assert_eq!(zero_loss, 0.0);
        prop_assert!(zero_grad.data().iter().all(|&v| v == 0.0));
        let mut b = a.clone();
        b.data_mut()[0] += delta;
        let (loss, _) = mse_loss(&a, &b).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, delta == 0.0);
    }

    #[test]
    fn conv_outputs_stay_finite(dims in dims_strategy(), wseed in any::<u32>()) {
        let mut state = wseed as u64 + 7;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let input = Tensor::from_fn(dims, |_| next());
        let params = ConvParams::new(
            Tensor::from_fn(Dims::new(2, dims.c, 3, 3), |_| next()),
            vec![next(), next()],
        )
        .unwrap();
        let out = conv2d_forward(&input, &params, 1).unwrap();
        prop_assert!(out.is_all_finite());
        let (act, _) = relu_forward(&out);
        prop_assert!(act.is_all_finite());
        let mut params = params;
        let grad_in = conv2d_backward(&input, &mut params, &out, 1).unwrap();
        prop_assert!(grad_in.is_all_finite());
        prop_assert!(params.weight_grad().is_all_finite());
    }

    #[test]
    fn adjoint_identity_on_random_shapes(
        dims in dims_strategy(),
        cout in 1usize..4,
        seed in any::<u32>(),
    ) {
        let mut state = seed as u64 + 13;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let x = Tensor::from_fn(dims, |_| next());
        let mut params = ConvParams::new(
            Tensor::from_fn(Dims::new(cout, dims.c, 3, 3), |_| next()),
            vec![0.0; cout],
        )
        .unwrap();
        let g = Tensor::from_fn(Dims::new(dims.n, cout, dims.h, dims.w), |_| next());
        let fwd = conv2d_forward(&x, &params, 1).unwrap();
        let bwd = conv2d_backward(&x, &mut params, &g, 1).unwrap();
        let lhs: f64 = fwd.data().iter().zip(g.data()).map(|(&a, &b)| a as f64 * b as f64).sum();
        let rhs: f64 = x.data().iter().zip(bwd.data()).map(|(&a, &b)| a as f64 * b as f64).sum();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-6);
        prop_assert!(rel < 1e-4, "<Ax,g>={} <x,A'g>={}", lhs, rhs);
    }

    #[test]
    fn error_diffusion_is_binary_and_tone_preserving(
        seed in any::<u32>(),
    ) {
        let mut state = seed as u64 + 3;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            0.1 + 0.8 * ((state >> 33) as f32 / (1u64 << 31) as f32).fract().abs()
        };
        let img = GrayImage::from_fn(128, 128, |_, _| next().clamp(0.1, 0.9));
        let ht = error_diffuse_fs(&img).unwrap();
        prop_assert!(ht.is_binary());
        let mean_in: f32 = img.data().iter().sum::<f32>() / img.data().len() as f32;
        let mean_out: f32 = ht.data().iter().sum::<f32>() / ht.data().len() as f32;
        prop_assert!((mean_in - mean_out).abs() < 0.01);
    }

    #[test]
    fn sobel_range_and_shift_invariance(seed in any::<u32>()) {
        let mut state = seed as u64 + 5;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            0.4 * ((state >> 33) as f32 / (1u64 << 31) as f32).abs()
        };
        let img = GrayImage::from_fn(16, 16, |_, _| next().clamp(0.0, 0.4));
        let g = sobel_gradient(&img).unwrap();
        prop_assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let shifted = GrayImage::from_raw(
            16, 16,
            img.data().iter().map(|v| v + 0.5).collect(),
        );
        let gs = sobel_gradient(&shifted).unwrap();
        for (a, b) in g.data().iter().zip(gs.data()) {
            prop_assert!((a - b).abs() < 2e-6);
        }
    }
}

/// Determinism within one process: identical seeds and inputs produce
/// bit-identical forward and backward results.
#[test]
fn repeated_runs_are_bit_identical() {
    use detone_core::network::{NetworkSpec, StructureAwareNet};
    let spec = NetworkSpec::new(3, 2, 3, 8, 5).unwrap();
    let run = || {
        let mut net = StructureAwareNet::<f32>::build(&spec, 31).unwrap();
        let ht = Tensor::from_fn(Dims::new(2, 1, 16, 16), |i| ((i * 2654435761) % 2) as f32);
        let out = net.forward_full(&ht).unwrap();
        let target = Tensor::zeros(out.reconstruction.dims());
        let (_, grad) = mse_loss(&out.reconstruction, &target).unwrap();
        let zero = Tensor::zeros(out.structure_map.dims());
        net.backward_full(&grad, &zero).unwrap();
        let grads: Vec<f32> = net
            .params_mut()
            .flat_map(|p| p.weight_grad().data().to_vec())
            .collect();
        (out.reconstruction, grads)
    };
    let (out_a, grads_a) = run();
    let (out_b, grads_b) = run();
    assert_eq!(out_a, out_b);
    assert_eq!(grads_a, grads_b);
}
