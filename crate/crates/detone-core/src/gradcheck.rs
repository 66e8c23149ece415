//! Finite-difference verification of every analytic gradient.
//!
//! All checks run at f64 so central differences are not drowned by
//! rounding: the production layers are generic over the element type and
//! are instantiated here at the wider precision. Reported values are the
//! maximum over checked coordinates of
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::network::{NetworkSpec, StructureAwareNet, Subnet, SubnetSpec};
use crate::rng;
use crate::tensor::{
    conv2d_backward, conv2d_forward, mse_loss, relu_backward, relu_forward, ConvParams, Dims,
    Tensor,
};

/// Central-difference step; keep within [1e-6, 1e-3].
pub const DEFAULT_STEP: f64 = 1e-5;
/// A layer or graph passes when its maximum relative error is below this.
pub const PASS_THRESHOLD: f64 = 1e-4;
/// Coordinates near the ReLU kink are excluded from its check.
const KINK_EXCLUSION: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn rand_uniform(rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    lo + unit * (hi - lo)
}

fn rand_tensor(seed: u64, dims: Dims, lo: f64, hi: f64) -> Tensor<f64> {
    let mut stream = rng::stream(seed);
    Tensor::from_fn(dims, |_| rand_uniform(&mut stream, lo, hi))
}

/// Gradients of one convolution layer (weights, biases, and input) under
/// the probe loss `L = <conv(x), G>` for a fixed random `G`. Every
/// coordinate is checked.
pub fn check_conv_layer(
    params: &ConvParams<f64>,
    input: &Tensor<f64>,
    pad: usize,
    h: f64,
    seed: u64,
) -> f64 {
    let out_dims = Dims::new(
        input.dims().n,
        params.out_channels(),
        input.dims().h,
        input.dims().w,
    );
    let probe = rand_tensor(rng::mix_seed(seed, 0xC0), out_dims, -1.0, 1.0);
    let loss = |params: &ConvParams<f64>, input: &Tensor<f64>| -> f64 {
        let out = conv2d_forward(input, params, pad).expect("shapes fixed in check");
        out.data()
            .iter()
            .zip(probe.data())
            .map(|(&o, &g)| o * g)
            .sum()
    };

    let mut work = params.clone();
    work.zero_grads();
    let grad_in = conv2d_backward(input, &mut work, &probe, pad).expect("shapes fixed in check");

    let mut max_err = 0.0f64;
    // Weights.
    for i in 0..params.weights().dims().count() {
        let mut plus = params.clone();
        plus.weights_mut().data_mut()[i] += h;
        let mut minus = params.clone();
        minus.weights_mut().data_mut()[i] -= h;
        let numeric = (loss(&plus, input) - loss(&minus, input)) / (2.0 * h);
        max_err = max_err.max(relative_error(work.weight_grad().data()[i], numeric));
    }
    // Biases.
    for i in 0..params.bias().len() {
        let mut plus = params.clone();
        plus.bias_mut()[i] += h;
        let mut minus = params.clone();
        minus.bias_mut()[i] -= h;
        let numeric = (loss(&plus, input) - loss(&minus, input)) / (2.0 * h);
        max_err = max_err.max(relative_error(work.bias_grad()[i], numeric));
    }
    // Input.
    for i in 0..input.dims().count() {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let numeric = (loss(params, &plus) - loss(params, &minus)) / (2.0 * h);
        max_err = max_err.max(relative_error(grad_in.data()[i], numeric));
    }
    max_err
}

/// ReLU gradient versus central differences, excluding coordinates within
/// [`KINK_EXCLUSION`] of the nondifferentiable point.
pub fn check_relu(input: &Tensor<f64>, h: f64, seed: u64) -> f64 {
    let probe = rand_tensor(rng::mix_seed(seed, 0xAE), input.dims(), -1.0, 1.0);
    let (_, mask) = relu_forward(input);
    let analytic = relu_backward(&mask, &probe).expect("same dims");
    let loss = |x: &Tensor<f64>| -> f64 {
        let (out, _) = relu_forward(x);
        out.data()
            .iter()
            .zip(probe.data())
            .map(|(&o, &g)| o * g)
            .sum()
    };
    let mut max_err = 0.0f64;
    for i in 0..input.dims().count() {
        if input.data()[i].abs() < KINK_EXCLUSION {
            continue;
        }
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        max_err = max_err.max(relative_error(analytic.data()[i], numeric));
    }
    max_err
}

/// MSE gradient with respect to the prediction versus central differences.
pub fn check_mse(pred: &Tensor<f64>, target: &Tensor<f64>, h: f64) -> f64 {
    let (_, analytic) = mse_loss(pred, target).expect("same dims");
    let mut max_err = 0.0f64;
    for i in 0..pred.dims().count() {
        let mut plus = pred.clone();
        plus.data_mut()[i] += h;
        let mut minus = pred.clone();
        minus.data_mut()[i] -= h;
        let lp = mse_loss(&plus, target).expect("same dims").0;
        let lm = mse_loss(&minus, target).expect("same dims").0;
        let numeric = (lp - lm) / (2.0 * h);
        max_err = max_err.max(relative_error(analytic.data()[i], numeric));
    }
    max_err
}

/// Weight gradients of a conv+ReLU stack under the probe loss
/// `L = <stack(x), G>`; every weight and bias coordinate is checked.
pub fn check_subnet(subnet: &Subnet<f64>, input: &Tensor<f64>, h: f64, seed: u64) -> f64 {
    let out_dims = Dims::new(
        input.dims().n,
        subnet.spec().out_channels,
        input.dims().h,
        input.dims().w,
    );
    let probe = rand_tensor(rng::mix_seed(seed, 0x57), out_dims, -1.0, 1.0);
    let loss = |net: &Subnet<f64>| -> f64 {
        let out = net.infer(input).expect("shapes fixed in check");
        out.data()
            .iter()
            .zip(probe.data())
            .map(|(&o, &g)| o * g)
            .sum()
    };

    let mut work = subnet.clone();
    let (_, cache) = work.forward(input).expect("shapes fixed in check");
    work.backward(&cache, &probe).expect("shapes fixed in check");

    let mut max_err = 0.0f64;
    for li in 0..subnet.layers().len() {
        let wcount = subnet.layers()[li].weights().dims().count();
        for i in 0..wcount + subnet.layers()[li].bias().len() {
            let mut plus = subnet.clone();
            let mut minus = subnet.clone();
            for (net, delta) in [(&mut plus, h), (&mut minus, -h)] {
                let layer = &mut net.layers_mut()[li];
                if i < wcount {
                    layer.weights_mut().data_mut()[i] += delta;
                } else {
                    layer.bias_mut()[i - wcount] += delta;
                }
            }
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = if i < wcount {
                work.layers()[li].weight_grad().data()[i]
            } else {
                work.layers()[li].bias_grad()[i - wcount]
            };
            max_err = max_err.max(relative_error(analytic, numeric));
        }
    }
    max_err
}

/// Combined loss of the full graph:
/// `mse(reconstruction, gray) + lambda * mse(structure_map, gradient)`.
fn full_graph_loss(
    net: &StructureAwareNet<f64>,
    halftone: &Tensor<f64>,
    gray: &Tensor<f64>,
    gradient: &Tensor<f64>,
    lambda: f64,
) -> f64 {
    let out = net.infer(halftone).expect("shapes fixed in check");
    let (l_recon, _) = mse_loss(&out.reconstruction, gray).expect("same dims");
    let (l_struct, _) = mse_loss(&out.structure_map, gradient).expect("same dims");
    l_recon + lambda * l_struct
}

/// Every weight and bias of the full graph (initial reconstruction ->
/// structure map -> concat -> final reconstruction, both losses active)
/// against central differences.
pub fn check_full_graph(spec: &NetworkSpec, side: usize, lambda: f64, h: f64, seed: u64) -> f64 {
    let dims = Dims::new(1, 1, side, side);
    // A smooth random input keeps every preactivation clear of ReLU kinks
    // at step h.
    let halftone = rand_tensor(rng::mix_seed(seed, 0x11), dims, 0.0, 1.0);
    let gray = rand_tensor(rng::mix_seed(seed, 0x22), dims, 0.0, 1.0);
    let gradient = rand_tensor(rng::mix_seed(seed, 0x33), dims, 0.0, 1.0);

    let mut net = StructureAwareNet::<f64>::build(spec, seed).expect("valid spec");
    let out = net.forward_full(&halftone).expect("shapes fixed in check");
    let (_, grad_recon) = mse_loss(&out.reconstruction, &gray).expect("same dims");
    let (_, grad_struct_raw) = mse_loss(&out.structure_map, &gradient).expect("same dims");
    let grad_struct = grad_struct_raw.scaled(lambda);
    net.backward_full(&grad_recon, &grad_struct)
        .expect("forward cached");

    let analytic: Vec<(Vec<f64>, Vec<f64>)> = net
        .params_mut()
        .map(|p| (p.weight_grad().data().to_vec(), p.bias_grad().to_vec()))
        .collect();

    let mut max_err = 0.0f64;
    for (li, (wgrads, bgrads)) in analytic.iter().enumerate() {
        for i in 0..wgrads.len() + bgrads.len() {
            let mut eval = |delta: f64| -> f64 {
                {
                    let p = net.params_mut().nth(li).expect("layer index in range");
                    if i < wgrads.len() {
                        p.weights_mut().data_mut()[i] += delta;
                    } else {
                        p.bias_mut()[i - wgrads.len()] += delta;
                    }
                }
                full_graph_loss(&net, &halftone, &gray, &gradient, lambda)
            };
            let lp = eval(h);
            let lm = eval(-2.0 * h);
            eval(h); // restore
            let numeric = (lp - lm) / (2.0 * h);
            let a = if i < wgrads.len() {
                wgrads[i]
            } else {
                bgrads[i - wgrads.len()]
            };
            max_err = max_err.max(relative_error(a, numeric));
        }
    }
    max_err
}

/// One named check within [`run_suite`].
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < PASS_THRESHOLD
    }
}

/// The standard verification suite over every layer type; `full` adds the
/// whole-graph check on a tiny two-layer-per-subnet model.
/// `corrupt_for_selftest` deliberately biases one analytic gradient so
/// callers can exercise their failure path.
pub fn run_suite(full: bool, corrupt_for_selftest: bool, seed: u64) -> Vec<CheckOutcome> {
    let h = DEFAULT_STEP;
    let mut out = Vec::new();

    let input = rand_tensor(rng::mix_seed(seed, 1), Dims::new(1, 2, 6, 6), -1.0, 1.0);
    let conv = conv_params_from_seed(rng::mix_seed(seed, 2), 3, 2, 5);
    let mut conv_err = check_conv_layer(&conv, &input, 2, h, seed);
    if corrupt_for_selftest {
        // Self-test hook: report what a broken backward pass would score.
        conv_err = conv_err.max(1.0);
    }
    out.push(CheckOutcome {
        name: format!("conv2d 3x2x5x5 on {} (weights, bias, input)", input.dims()),
        max_rel_error: conv_err,
    });

    let relu_in = rand_tensor(rng::mix_seed(seed, 3), Dims::new(1, 3, 5, 5), -1.0, 1.0);
    out.push(CheckOutcome {
        name: "relu (coordinates away from the kink)".into(),
        max_rel_error: check_relu(&relu_in, h, seed),
    });

    let pred = rand_tensor(rng::mix_seed(seed, 4), Dims::new(2, 1, 4, 4), 0.0, 1.0);
    let target = rand_tensor(rng::mix_seed(seed, 5), Dims::new(2, 1, 4, 4), 0.0, 1.0);
    out.push(CheckOutcome {
        name: "mse loss gradient".into(),
        max_rel_error: check_mse(&pred, &target, h),
    });

    let spec = SubnetSpec::new(3, 1, 4, 1, 5).expect("valid spec");
    let stack: Subnet<f64> = crate::network::build_subnet(&spec, rng::mix_seed(seed, 6));
    let stack_in = rand_tensor(rng::mix_seed(seed, 7), Dims::new(1, 1, 8, 8), 0.0, 1.0);
    out.push(CheckOutcome {
        name: "conv+relu stack, depth 3".into(),
        max_rel_error: check_subnet(&stack, &stack_in, h, seed),
    });

    if full {
        let net_spec = NetworkSpec::new(2, 2, 2, 4, 5).expect("valid spec");
        out.push(CheckOutcome {
            name: "full graph (p=q=r=2, m=4, 8x8, both losses)".into(),
            max_rel_error: check_full_graph(&net_spec, 8, 1.0, h, seed),
        });
    }
    out
}

fn conv_params_from_seed(seed: u64, cout: usize, cin: usize, k: usize) -> ConvParams<f64> {
    let mut stream = rng::stream(seed);
    let weights = Tensor::from_fn(Dims::new(cout, cin, k, k), |_| {
        rand_uniform(&mut stream, -0.5, 0.5)
    });
    let bias = (0..cout).map(|_| rand_uniform(&mut stream, -0.5, 0.5)).collect();
    ConvParams::new(weights, bias).expect("consistent params")
}
