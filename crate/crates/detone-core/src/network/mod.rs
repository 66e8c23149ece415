//! The reconstruction networks: three convolutional subnetworks (initial
//! reconstruction, structure-map prediction, final reconstruction) fused
//! through a channel concatenation, plus the plain sequential DCNN used
//! as the ablation baseline.
//!
//! Data flow of the full model on a halftone input `ht`:
//!
//! ```text
//! initial = IRS(ht)
//! structure_map = ISMP(initial)
//! reconstruction = RS(concat[ht, initial, structure_map])
//! ```
//!
//! Both losses (reconstruction vs. gray target, structure map vs. Sobel
//! target) backpropagate end to end; the initial-reconstruction subnet
//! receives gradient from the structure path and from the concat path.

mod checkpoint;

pub use checkpoint::{
    ensure_spec_matches, Checkpoint, CheckpointError, Stage, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use alloc::vec::Vec;
use core::fmt;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use rand_distr::{Distribution, Normal};

use crate::rng;
use crate::tensor::{
    concat_channels, conv2d_backward, conv2d_forward, relu_backward, relu_forward, split_channels,
    ConvParams, Dims, ReluMask, Scalar, Tensor, TensorError,
};

/// Seed tags so each subnet draws initial weights from its own stream.
const SEED_TAG_IRS: u64 = 0x1;
const SEED_TAG_ISMP: u64 = 0x2;
const SEED_TAG_RS: u64 = 0x3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NetworkError {
    /// Subnetworks need at least a first and a last convolution layer.
    DepthTooSmall { depth: usize },
    /// Kernels must be odd so same-size padding exists.
    BadKernel { kernel: usize },
    /// A subnet's endpoint channels violate the fixed wiring
    /// (1-in/1-out for the two gray branches, 3-in/1-out for the fused one).
    BadChannels {
        subnet: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// The three subnets must share hidden width and kernel size.
    InconsistentSpec { what: &'static str },
    /// `backward_full` called without a cached forward pass.
    BackwardBeforeForward,
    Tensor(TensorError),
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkError::DepthTooSmall { depth } => {
                write!(f, "subnet depth {depth} is below the minimum of 2")
            }
            NetworkError::BadKernel { kernel } => {
                write!(f, "kernel size {kernel} must be odd and positive")
            }
            NetworkError::BadChannels {
                subnet,
                expected,
                got,
            } => write!(
                f,
                "{subnet} must map {} -> {} channels, got {} -> {}",
                expected.0, expected.1, got.0, got.1
            ),
            NetworkError::InconsistentSpec { what } => {
                write!(f, "subnet specs disagree on {what}")
            }
            NetworkError::BackwardBeforeForward => {
                write!(f, "backward_full called before forward_full cached activations")
            }
            NetworkError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for NetworkError {}

impl From<TensorError> for NetworkError {
    fn from(e: TensorError) -> Self {
        NetworkError::Tensor(e)
    }
}

/// Layer plan of one subnetwork: `depth` total convolution layers, the
/// first mapping `in_channels -> hidden`, the middle ones
/// `hidden -> hidden`, and the last `hidden -> out_channels`. ReLU
/// follows every convolution except the last, leaving the regression
/// output unclamped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubnetSpec {
    pub depth: usize,
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl SubnetSpec {
    pub fn new(
        depth: usize,
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Result<Self, NetworkError> {
        if depth < 2 {
            return Err(NetworkError::DepthTooSmall { depth });
        }
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(NetworkError::BadKernel { kernel });
        }
        Ok(SubnetSpec {
            depth,
            in_channels,
            hidden,
            out_channels,
            kernel,
        })
    }

    /// (input, output) channels of layer `index`.
    pub fn layer_io(&self, index: usize) -> (usize, usize) {
        let cin = if index == 0 { self.in_channels } else { self.hidden };
        let cout = if index == self.depth - 1 {
            self.out_channels
        } else {
            self.hidden
        };
        (cin, cout)
    }

    /// Weight and bias count over all layers.
    pub fn parameter_count(&self) -> usize {
        (0..self.depth)
            .map(|i| {
                let (cin, cout) = self.layer_io(i);
                (cin * self.kernel * self.kernel + 1) * cout
            })
            .sum()
    }
}

/// Depths (p, q, r), hidden width m, and kernel k of the full model.
/// Defaults are the full-scale configuration: p=16, q=6, r=16, m=64, k=5.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub irs: SubnetSpec,
    pub ismp: SubnetSpec,
    pub rs: SubnetSpec,
}

impl NetworkSpec {
    pub fn new(p: usize, q: usize, r: usize, m: usize, k: usize) -> Result<Self, NetworkError> {
        let spec = NetworkSpec {
            irs: SubnetSpec::new(p, 1, m, 1, k)?,
            ismp: SubnetSpec::new(q, 1, m, 1, k)?,
            rs: SubnetSpec::new(r, 3, m, 1, k)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        for (name, subnet, expected) in [
            ("initial-reconstruction subnet", &self.irs, (1, 1)),
            ("structure-map subnet", &self.ismp, (1, 1)),
            ("final-reconstruction subnet", &self.rs, (3, 1)),
        ] {
            let got = (subnet.in_channels, subnet.out_channels);
            if got != expected {
                return Err(NetworkError::BadChannels {
                    subnet: name,
                    expected,
                    got,
                });
            }
            if subnet.depth < 2 {
                return Err(NetworkError::DepthTooSmall { depth: subnet.depth });
            }
        }
        if self.irs.hidden != self.ismp.hidden || self.irs.hidden != self.rs.hidden {
            return Err(NetworkError::InconsistentSpec { what: "hidden width" });
        }
        if self.irs.kernel != self.ismp.kernel || self.irs.kernel != self.rs.kernel {
            return Err(NetworkError::InconsistentSpec { what: "kernel size" });
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.irs.hidden
    }

    pub fn kernel(&self) -> usize {
        self.irs.kernel
    }

    pub fn parameter_count(&self) -> usize {
        self.irs.parameter_count() + self.ismp.parameter_count() + self.rs.parameter_count()
    }
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::new(16, 6, 16, 64, 5).expect("default spec is valid")
    }
}

/// A sequential stack of same-size convolutions with ReLU between (never
/// after the last layer).
#[derive(Clone, Debug)]
pub struct Subnet<T = f32> {
    spec: SubnetSpec,
    layers: Vec<ConvParams<T>>,
}

/// Activations retained by [`Subnet::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct SubnetCache<T = f32> {
    inputs: Vec<Tensor<T>>,
    masks: Vec<Option<ReluMask>>,
}

impl<T: Scalar> Subnet<T> {
    pub fn spec(&self) -> &SubnetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[ConvParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.parameter_count()).sum()
    }

    fn pad(&self) -> usize {
        (self.spec.kernel - 1) / 2
    }

    fn run(
        &self,
        input: &Tensor<T>,
        mut cache: Option<&mut SubnetCache<T>>,
    ) -> Result<Tensor<T>, NetworkError> {
        let pad = self.pad();
        let mut cur = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let conv_out = conv2d_forward(&cur, layer, pad)?;
            let last = i == self.layers.len() - 1;
            let (next, mask) = if last {
                (conv_out, None)
            } else {
                let (activated, mask) = relu_forward(&conv_out);
                (activated, Some(mask))
            };
            if let Some(cache) = cache.as_deref_mut() {
                cache.inputs.push(cur);
                cache.masks.push(mask);
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Forward pass retaining per-layer inputs and ReLU masks.
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, SubnetCache<T>), NetworkError> {
        let mut cache = SubnetCache {
            inputs: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let out = self.run(input, Some(&mut cache))?;
        Ok((out, cache))
    }

    /// Forward pass without caching; usable concurrently on shared refs.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, NetworkError> {
        self.run(input, None)
    }

    /// Backward pass: accumulates parameter gradients and returns the
    /// gradient with respect to the subnet input.
    pub fn backward(
        &mut self,
        cache: &SubnetCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>, NetworkError> {
        let pad = self.pad();
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if let Some(mask) = &cache.masks[i] {
                g = relu_backward(mask, &g)?;
            }
            g = conv2d_backward(&cache.inputs[i], &mut self.layers[i], &g, pad)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }

    pub fn sgd_step(&mut self, lr: T, momentum: T) {
        for layer in &mut self.layers {
            layer.sgd_update(lr, momentum);
        }
    }

    /// Mirror the stack at another precision for gradient checking.
    pub fn cast<U: Scalar>(&self) -> Subnet<U> {
        Subnet {
            spec: self.spec,
            layers: self.layers.iter().map(|l| l.cast()).collect(),
        }
    }
}

/// Build a subnetwork with He-Gaussian weights (std `sqrt(2 / (cin*k^2))`)
/// drawn from a ChaCha stream keyed by `seed`, and zero biases. The same
/// seed always yields the same weights.
pub fn build_subnet<T: Scalar>(spec: &SubnetSpec, seed: u64) -> Subnet<T> {
    let mut stream = rng::stream(seed);
    let k = spec.kernel;
    let layers = (0..spec.depth)
        .map(|i| {
            let (cin, cout) = spec.layer_io(i);
            let std = (2.0 / (cin * k * k) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is finite and positive");
            let weights = Tensor::from_fn(Dims::new(cout, cin, k, k), |_| {
                T::from_f64(normal.sample(&mut stream))
            });
            let bias = alloc::vec![T::zero(); cout];
            ConvParams::new(weights, bias).expect("generated params are consistent")
        })
        .collect();
    Subnet { spec: *spec, layers }
}

/// The ablation baseline: a plain sequential stack mapping the halftone
/// image directly to the reconstruction (`1 -> m -> ... -> m -> 1`),
/// structurally the fused-reconstruction subnet fed one channel.
pub fn build_baseline_dcnn<T: Scalar>(
    depth: usize,
    hidden: usize,
    seed: u64,
) -> Result<Subnet<T>, NetworkError> {
    let spec = SubnetSpec::new(depth, 1, hidden, 1, 5)?;
    Ok(build_subnet(&spec, seed))
}

/// Outputs of one full forward pass.
#[derive(Clone, Debug)]
pub struct FullOutputs<T = f32> {
    /// First-stage continuous-tone estimate.
    pub initial: Tensor<T>,
    /// Predicted gradient-magnitude map.
    pub structure_map: Tensor<T>,
    /// Final continuous-tone reconstruction.
    pub reconstruction: Tensor<T>,
}

#[derive(Clone, Debug)]
struct FullCache<T> {
    irs: SubnetCache<T>,
    ismp: SubnetCache<T>,
    rs: SubnetCache<T>,
}

/// The complete structure-aware model. Forward/backward require exclusive
/// ownership (activations are cached between the two); inference through
/// [`StructureAwareNet::infer`] is read-only.
#[derive(Clone, Debug)]
pub struct StructureAwareNet<T = f32> {
    spec: NetworkSpec,
    irs: Subnet<T>,
    ismp: Subnet<T>,
    rs: Subnet<T>,
    cache: Option<FullCache<T>>,
}

impl<T: Scalar> StructureAwareNet<T> {
    /// Deterministically initialize all three subnets from one seed.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self, NetworkError> {
        spec.validate()?;
        Ok(StructureAwareNet {
            spec: *spec,
            irs: build_subnet(&spec.irs, rng::mix_seed(seed, SEED_TAG_IRS)),
            ismp: build_subnet(&spec.ismp, rng::mix_seed(seed, SEED_TAG_ISMP)),
            rs: build_subnet(&spec.rs, rng::mix_seed(seed, SEED_TAG_RS)),
            cache: None,
        })
    }

    pub(crate) fn from_parts(
        spec: NetworkSpec,
        irs: Subnet<T>,
        ismp: Subnet<T>,
        rs: Subnet<T>,
    ) -> Self {
        StructureAwareNet {
            spec,
            irs,
            ismp,
            rs,
            cache: None,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn irs(&self) -> &Subnet<T> {
        &self.irs
    }

    pub fn irs_mut(&mut self) -> &mut Subnet<T> {
        &mut self.irs
    }

    pub fn ismp(&self) -> &Subnet<T> {
        &self.ismp
    }

    pub fn rs(&self) -> &Subnet<T> {
        &self.rs
    }

    pub fn parameter_count(&self) -> usize {
        self.irs.parameter_count() + self.ismp.parameter_count() + self.rs.parameter_count()
    }

    /// All parameter sets in the fixed order (IRS, ISMP, RS; layers in
    /// sequence). The checkpoint codec and optimizer both rely on it.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ConvParams<T>> {
        self.irs
            .layers_mut()
            .iter_mut()
            .chain(self.ismp.layers_mut())
            .chain(self.rs.layers_mut())
    }

    /// Full forward pass, caching activations for [`Self::backward_full`].
    /// The halftone tensor must be single-channel; spatial size is
    /// unconstrained because every layer preserves it.
    pub fn forward_full(&mut self, halftone: &Tensor<T>) -> Result<FullOutputs<T>, NetworkError> {
        let (initial, irs_cache) = self.irs.forward(halftone)?;
        let (structure_map, ismp_cache) = self.ismp.forward(&initial)?;
        // Channel order is fixed as (halftone, initial, structure map) and
        // recorded in the checkpoint header's reserved field.
        let fused = concat_channels(&[halftone, &initial, &structure_map])?;
        let (reconstruction, rs_cache) = self.rs.forward(&fused)?;
        self.cache = Some(FullCache {
            irs: irs_cache,
            ismp: ismp_cache,
            rs: rs_cache,
        });
        Ok(FullOutputs {
            initial,
            structure_map,
            reconstruction,
        })
    }

    /// Read-only forward pass for evaluation and deployment.
    pub fn infer(&self, halftone: &Tensor<T>) -> Result<FullOutputs<T>, NetworkError> {
        let initial = self.irs.infer(halftone)?;
        let structure_map = self.ismp.infer(&initial)?;
        let fused = concat_channels(&[halftone, &initial, &structure_map])?;
        let reconstruction = self.rs.infer(&fused)?;
        Ok(FullOutputs {
            initial,
            structure_map,
            reconstruction,
        })
    }

    /// Backpropagate both loss gradients through the whole graph,
    /// consuming the cached activations of the matching `forward_full`.
    ///
    /// `grad_reconstruction` enters at the final output;
    /// `grad_structure_map` enters at the predicted map. The structure
    /// branch additionally receives gradient through the concatenation,
    /// and the initial-reconstruction subnet accumulates contributions
    /// from both downstream paths.
    pub fn backward_full(
        &mut self,
        grad_reconstruction: &Tensor<T>,
        grad_structure_map: &Tensor<T>,
    ) -> Result<(), NetworkError> {
        let cache = self
            .cache
            .take()
            .ok_or(NetworkError::BackwardBeforeForward)?;
        let grad_fused = self.rs.backward(&cache.rs, grad_reconstruction)?;
        let mut parts = split_channels(&grad_fused, &[1, 1, 1])?;
        let grad_smap_concat = parts.pop().expect("three parts");
        let grad_initial_concat = parts.pop().expect("two parts");
        // parts[0] is the gradient at the halftone input; nothing upstream.
        let grad_smap_total = grad_structure_map.add(&grad_smap_concat)?;
        let grad_initial_ismp = self.ismp.backward(&cache.ismp, &grad_smap_total)?;
        let grad_initial_total = grad_initial_concat.add(&grad_initial_ismp)?;
        self.irs.backward(&cache.irs, &grad_initial_total)?;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.irs.zero_grads();
        self.ismp.zero_grads();
        self.rs.zero_grads();
    }

    /// One optimizer step over every parameter in the network.
    pub fn sgd_step(&mut self, lr: T, momentum: T) {
        self.irs.sgd_step(lr, momentum);
        self.ismp.sgd_step(lr, momentum);
        self.rs.sgd_step(lr, momentum);
    }

    /// Mirror the whole model at another precision (the activation cache
    /// is not carried over).
    pub fn cast<U: Scalar>(&self) -> StructureAwareNet<U> {
        StructureAwareNet {
            spec: self.spec,
            irs: self.irs.cast(),
            ismp: self.ismp.cast(),
            rs: self.rs.cast(),
            cache: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::mse_loss;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn default_spec_matches_full_scale_plan() {
        let spec = NetworkSpec::default();
        assert_eq!(spec.irs.depth, 16);
        assert_eq!(spec.ismp.depth, 6);
        assert_eq!(spec.rs.depth, 16);
        assert_eq!(spec.hidden(), 64);
        assert_eq!(spec.kernel(), 5);
        // First layer 1->64, fourteen 64->64, last 64->1.
        assert_eq!(spec.irs.layer_io(0), (1, 64));
        for i in 1..15 {
            assert_eq!(spec.irs.layer_io(i), (64, 64));
        }
        assert_eq!(spec.irs.layer_io(15), (64, 1));
        assert_eq!(spec.rs.layer_io(0), (3, 64));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(matches!(
            SubnetSpec::new(1, 1, 8, 1, 5),
            Err(NetworkError::DepthTooSmall { depth: 1 })
        ));
        assert!(matches!(
            SubnetSpec::new(3, 1, 8, 1, 4),
            Err(NetworkError::BadKernel { kernel: 4 })
        ));
        let mut spec = NetworkSpec::new(3, 3, 3, 8, 3).unwrap();
        spec.rs.in_channels = 2;
        assert!(matches!(
            spec.validate(),
            Err(NetworkError::BadChannels { .. })
        ));
    }

    #[test]
    fn depth_two_subnet_has_one_relu_between() {
        let spec = SubnetSpec::new(2, 1, 4, 1, 3).unwrap();
        let net = build_subnet::<f32>(&spec, 9);
        assert_eq!(net.layers().len(), 2);
        let x = Tensor::filled(Dims::new(1, 1, 6, 6), 0.3);
        let (_, cache) = net.forward(&x).unwrap();
        assert!(cache.masks[0].is_some(), "ReLU after the first layer");
        assert!(cache.masks[1].is_none(), "no ReLU after the last layer");
    }

    #[test]
    fn same_seed_same_weights() {
        let spec = SubnetSpec::new(3, 1, 8, 1, 5).unwrap();
        let a = build_subnet::<f32>(&spec, 1234);
        let b = build_subnet::<f32>(&spec, 1234);
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            assert_eq!(la.weights(), lb.weights());
        }
        let c = build_subnet::<f32>(&spec, 1235);
        assert_ne!(a.layers()[0].weights(), c.layers()[0].weights());
    }

    #[test]
    fn forward_full_shape_contract() {
        let spec = NetworkSpec::new(2, 2, 2, 4, 3).unwrap();
        let mut net = StructureAwareNet::<f32>::build(&spec, 7).unwrap();
        let ht = Tensor::filled(Dims::new(1, 1, 32, 32), 1.0);
        let out = net.forward_full(&ht).unwrap();
        let want = Dims::new(1, 1, 32, 32);
        assert_eq!(out.initial.dims(), want);
        assert_eq!(out.structure_map.dims(), want);
        assert_eq!(out.reconstruction.dims(), want);
    }

    #[test]
    fn zero_network_produces_zero_outputs() {
        let spec = NetworkSpec::new(2, 2, 2, 4, 3).unwrap();
        let mut net = StructureAwareNet::<f32>::build(&spec, 7).unwrap();
        for p in net.params_mut() {
            p.weights_mut().data_mut().fill(0.0);
            p.bias_mut().fill(0.0);
        }
        let ht = Tensor::filled(Dims::new(1, 1, 8, 8), 1.0);
        let out = net.infer(&ht).unwrap();
        assert!(out.initial.data().iter().all(|&v| v == 0.0));
        assert!(out.structure_map.data().iter().all(|&v| v == 0.0));
        assert!(out.reconstruction.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let spec = NetworkSpec::new(2, 2, 2, 4, 3).unwrap();
        let mut net = StructureAwareNet::<f32>::build(&spec, 7).unwrap();
        let g = Tensor::zeros(Dims::new(1, 1, 8, 8));
        assert!(matches!(
            net.backward_full(&g, &g),
            Err(NetworkError::BackwardBeforeForward)
        ));
        let ht = Tensor::filled(Dims::new(1, 1, 8, 8), 1.0);
        net.forward_full(&ht).unwrap();
        net.backward_full(&g, &g).unwrap();
        // The cache is consumed; a second backward must fail again.
        assert!(matches!(
            net.backward_full(&g, &g),
            Err(NetworkError::BackwardBeforeForward)
        ));
    }

    #[test]
    fn zero_loss_gradients_give_zero_param_grads() {
        let spec = NetworkSpec::new(3, 2, 3, 4, 3).unwrap();
        let mut net = StructureAwareNet::<f32>::build(&spec, 3).unwrap();
        let mut rng = StdRng::seed_from_u64(31);
        let ht = Tensor::from_fn(Dims::new(2, 1, 8, 8), |_| {
            if rng.random_bool(0.5) {
                1.0
            } else {
                0.0
            }
        });
        net.forward_full(&ht).unwrap();
        let zero = Tensor::zeros(Dims::new(2, 1, 8, 8));
        net.backward_full(&zero, &zero).unwrap();
        for p in net.params_mut() {
            assert!(p.weight_grad().data().iter().all(|&v| v == 0.0));
            assert!(p.bias_grad().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn concat_path_feeds_gradient_into_both_upstream_subnets() {
        // With no loss on the structure map at all, the concat path alone
        // must still deliver gradient to the structure subnet, and the
        // initial-reconstruction subnet must receive a contribution too.
        let spec = NetworkSpec::new(2, 2, 2, 4, 3).unwrap();
        let mut net = StructureAwareNet::<f32>::build(&spec, 5).unwrap();
        let mut rng = StdRng::seed_from_u64(32);
        let ht = Tensor::from_fn(Dims::new(1, 1, 8, 8), |_| {
            if rng.random_bool(0.5) {
                1.0
            } else {
                0.0
            }
        });
        let out = net.forward_full(&ht).unwrap();
        let target = Tensor::zeros(out.reconstruction.dims());
        let (_, grad_recon) = mse_loss(&out.reconstruction, &target).unwrap();
        let zero_smap_grad = Tensor::zeros(out.structure_map.dims());
        net.backward_full(&grad_recon, &zero_smap_grad).unwrap();
        let ismp_norm: f32 = net
            .ismp()
            .layers()
            .iter()
            .flat_map(|l| l.weight_grad().data())
            .map(|g| g.abs())
            .sum();
        let irs_norm: f32 = net
            .irs()
            .layers()
            .iter()
            .flat_map(|l| l.weight_grad().data())
            .map(|g| g.abs())
            .sum();
        assert!(ismp_norm > 0.0, "structure subnet starved of gradient");
        assert!(irs_norm > 0.0, "initial subnet starved of gradient");
    }

    #[test]
    fn baseline_matches_single_input_subnet() {
        // The baseline is exactly the fused-reconstruction stack fed one
        // channel: same parameter count and same forward map for the same
        // seed.
        let seed = 99;
        let baseline = build_baseline_dcnn::<f32>(4, 8, seed).unwrap();
        let degenerate = build_subnet::<f32>(&SubnetSpec::new(4, 1, 8, 1, 5).unwrap(), seed);
        assert_eq!(baseline.parameter_count(), degenerate.parameter_count());
        let mut rng = StdRng::seed_from_u64(33);
        let x = Tensor::from_fn(Dims::new(1, 1, 12, 12), |_| rng.random_range(0.0f32..1.0));
        assert_eq!(
            baseline.infer(&x).unwrap(),
            degenerate.infer(&x).unwrap()
        );
    }

    #[test]
    fn baseline_depth_two_structure() {
        let net = build_baseline_dcnn::<f32>(2, 8, 1).unwrap();
        assert_eq!(net.layers().len(), 2);
        assert_eq!(net.layers()[0].in_channels(), 1);
        assert_eq!(net.layers()[0].out_channels(), 8);
        assert_eq!(net.layers()[1].out_channels(), 1);
    }

    #[test]
    fn infer_matches_forward_full() {
        let spec = NetworkSpec::new(3, 2, 3, 4, 5).unwrap();
        let mut net = StructureAwareNet::<f32>::build(&spec, 17).unwrap();
        let mut rng = StdRng::seed_from_u64(34);
        let ht = Tensor::from_fn(Dims::new(1, 1, 16, 16), |_| {
            if rng.random_bool(0.5) {
                1.0
            } else {
                0.0
            }
        });
        let a = net.forward_full(&ht).unwrap();
        let b = net.infer(&ht).unwrap();
        assert_eq!(a.reconstruction, b.reconstruction);
        assert_eq!(a.structure_map, b.structure_map);
    }
}
