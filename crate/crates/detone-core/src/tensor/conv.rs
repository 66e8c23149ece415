//! Same-size 2-D convolution (cross-correlation, zero padding) with
//! analytic gradients for weights, biases, and input.
//!
//! Two internal routes compute the same map: a direct shift-accumulate
//! loop nest and an im2col + GEMM fast path. The public entry points pick
//! a route by problem size; `conv2d_forward_with` pins one explicitly so
//! tests can assert the routes agree.

use alloc::vec;
use alloc::vec::Vec;

use super::{Dims, Scalar, Tensor, TensorError};

/// Weights, biases, and their gradient/momentum buffers for one
/// convolution layer. Weights are laid out `(out_channels, in_channels,
/// k, k)`; biases are per output channel.
#[derive(Clone, Debug)]
pub struct ConvParams<T = f32> {
    weights: Tensor<T>,
    bias: Vec<T>,
    weight_grad: Tensor<T>,
    bias_grad: Vec<T>,
    weight_vel: Tensor<T>,
    bias_vel: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weights: Tensor<T>, bias: Vec<T>) -> Result<Self, TensorError> {
        let d = weights.dims();
        if d.h != d.w || d.h.is_multiple_of(2) {
            return Err(TensorError::BadPadding {
                kernel: d.h,
                pad: (d.h.max(1) - 1) / 2,
            });
        }
        if bias.len() != d.n {
            return Err(TensorError::LengthMismatch {
                dims: Dims::new(d.n, 1, 1, 1),
                len: bias.len(),
            });
        }
        let weight_grad = Tensor::zeros(d);
        let weight_vel = Tensor::zeros(d);
        let bias_grad = vec![T::zero(); d.n];
        let bias_vel = vec![T::zero(); d.n];
        Ok(ConvParams {
            weights,
            bias,
            weight_grad,
            bias_grad,
            weight_vel,
            bias_vel,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        let dims = Dims::new(out_channels, in_channels, kernel, kernel);
        ConvParams::new(Tensor::zeros(dims), vec![T::zero(); out_channels])
            .expect("zero params are always consistent")
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.weights.dims().n
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.weights.dims().c
    }

    #[inline]
    pub fn kernel(&self) -> usize {
        self.weights.dims().h
    }

    /// Padding that preserves spatial size for this kernel.
    #[inline]
    pub fn same_pad(&self) -> usize {
        (self.kernel() - 1) / 2
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn weight_grad(&self) -> &Tensor<T> {
        &self.weight_grad
    }

    pub fn bias_grad(&self) -> &[T] {
        &self.bias_grad
    }

    /// Weights plus biases.
    pub fn parameter_count(&self) -> usize {
        self.weights.dims().count() + self.bias.len()
    }

    pub fn zero_grads(&mut self) {
        self.weight_grad.data_mut().fill(T::zero());
        self.bias_grad.fill(T::zero());
    }

    /// One SGD step with classical momentum:
    /// `v = momentum*v - lr*grad; w = w + v`. Gradients are zeroed
    /// afterwards so the next accumulation cycle starts clean. Momentum 0
    /// reduces to plain `w -= lr*grad`.
    pub fn sgd_update(&mut self, lr: T, momentum: T) {
        for ((w, v), g) in self
            .weights
            .data_mut()
            .iter_mut()
            .zip(self.weight_vel.data_mut())
            .zip(self.weight_grad.data())
        {
            *v = momentum * *v - lr * *g;
            *w += *v;
        }
        for ((b, v), g) in self
            .bias
            .iter_mut()
            .zip(&mut self.bias_vel)
            .zip(&self.bias_grad)
        {
            *v = momentum * *v - lr * *g;
            *b += *v;
        }
        self.zero_grads();
    }

    /// Mirror weights and biases at another precision. Gradient and
    /// momentum buffers start zeroed in the copy.
    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        let weights = self.weights.cast::<U>();
        let bias = self.bias.iter().map(|v| U::from_f64(v.as_f64())).collect();
        ConvParams::new(weights, bias).expect("cast preserves consistency")
    }
}

/// Which internal convolution route to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvAlgo {
    /// Shift-accumulate loop nest; the readable reference.
    Direct,
    /// im2col buffer + GEMM; the fast path for real workloads.
    Im2col,
}

/// MAC count above which the GEMM path wins over the direct loops.
const IM2COL_THRESHOLD: usize = 1 << 16;

fn pick_algo(input: Dims, params_out: usize, k: usize) -> ConvAlgo {
    let macs = input.n * params_out * input.h * input.w * input.c * k * k;
    if macs >= IM2COL_THRESHOLD {
        ConvAlgo::Im2col
    } else {
        ConvAlgo::Direct
    }
}

fn check_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    pad: usize,
) -> Result<(), TensorError> {
    if params.kernel().is_multiple_of(2) || pad != params.same_pad() {
        return Err(TensorError::BadPadding {
            kernel: params.kernel(),
            pad,
        });
    }
    if input.dims().c != params.in_channels() {
        return Err(TensorError::ChannelMismatch {
            input: input.dims(),
            weights: params.weights.dims(),
        });
    }
    Ok(())
}

/// `out[n,o,y,x] = bias[o] + sum_{c,i,j} weights[o,c,i,j] *
/// input[n,c,y+i-pad,x+j-pad]`, with out-of-range input read as zero.
/// Output has the same N, H, W as the input and `out_channels` channels.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    let algo = pick_algo(input.dims(), params.out_channels(), params.kernel());
    conv2d_forward_with(input, params, pad, algo)
}

/// [`conv2d_forward`] with the internal route pinned.
pub fn conv2d_forward_with<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    pad: usize,
    algo: ConvAlgo,
) -> Result<Tensor<T>, TensorError> {
    check_forward(input, params, pad)?;
    let d = input.dims();
    let out_dims = Dims::new(d.n, params.out_channels(), d.h, d.w);
    let mut out = Tensor::zeros(out_dims);
    match algo {
        ConvAlgo::Direct => forward_direct(input, params, pad, &mut out),
        ConvAlgo::Im2col => forward_im2col(input, params, pad, &mut out),
    }
    Ok(out)
}

/// Backward pass of [`conv2d_forward`]: accumulates the weight and bias
/// gradients into `params` and returns the gradient with respect to the
/// input. `grad_out` must have the forward output's shape.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &mut ConvParams<T>,
    grad_out: &Tensor<T>,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    check_forward(input, params, pad)?;
    let d = input.dims();
    let expected = Dims::new(d.n, params.out_channels(), d.h, d.w);
    if grad_out.dims() != expected {
        return Err(TensorError::ShapeMismatch {
            what: "conv2d grad_out",
            left: grad_out.dims(),
            right: expected,
        });
    }
    // Bias gradient: plain sums over batch and positions.
    let hw = d.h * d.w;
    for n in 0..d.n {
        for oc in 0..params.out_channels() {
            let mut acc = T::zero();
            for &g in grad_out.plane(n, oc) {
                acc += g;
            }
            params.bias_grad[oc] += acc;
        }
    }
    let mut grad_in = Tensor::zeros(d);
    match pick_algo(d, params.out_channels(), params.kernel()) {
        ConvAlgo::Direct => backward_direct(input, params, grad_out, pad, &mut grad_in),
        ConvAlgo::Im2col => backward_im2col(input, params, grad_out, pad, &mut grad_in, hw),
    }
    Ok(grad_in)
}

/// Valid output-row range `[lo, hi)` such that `y + shift` stays inside
/// `[0, extent)`.
#[inline]
fn shifted_range(extent: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi_signed = extent as isize - shift;
    let hi = hi_signed.clamp(0, extent as isize) as usize;
    (lo, hi.max(lo))
}

fn forward_direct<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>, pad: usize, out: &mut Tensor<T>) {
    let d = input.dims();
    let k = params.kernel();
    let (h, w) = (d.h, d.w);
    let wdata = params.weights.data();
    let ksq = k * k;
    for n in 0..d.n {
        for oc in 0..params.out_channels() {
            let start = out.dims().offset(n, oc, 0, 0);
            out.data_mut()[start..start + h * w].fill(params.bias[oc]);
            for ic in 0..d.c {
                let in_plane = input.plane(n, ic);
                let wbase = (oc * d.c + ic) * ksq;
                for i in 0..k {
                    let dy = i as isize - pad as isize;
                    let (ylo, yhi) = shifted_range(h, dy);
                    for j in 0..k {
                        let wv = wdata[wbase + i * k + j];
                        let dx = j as isize - pad as isize;
                        let (xlo, xhi) = shifted_range(w, dx);
                        if xlo >= xhi {
                            continue;
                        }
                        for y in ylo..yhi {
                            let iy = (y as isize + dy) as usize;
                            let src = &in_plane
                                [iy * w + (xlo as isize + dx) as usize..iy * w + (xhi as isize + dx) as usize];
                            let dst =
                                &mut out.data_mut()[start + y * w + xlo..start + y * w + xhi];
                            for (o, &s) in dst.iter_mut().zip(src) {
                                *o += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn backward_direct<T: Scalar>(
    input: &Tensor<T>,
    params: &mut ConvParams<T>,
    grad_out: &Tensor<T>,
    pad: usize,
    grad_in: &mut Tensor<T>,
) {
    let d = input.dims();
    let k = params.kernel();
    let ksq = k * k;
    let (h, w) = (d.h, d.w);
    let cout = params.out_channels();
    let wdata = params.weights.data().to_vec();
    let wg = params.weight_grad.data_mut();
    for n in 0..d.n {
        for oc in 0..cout {
            let g_plane = grad_out.plane(n, oc);
            for ic in 0..d.c {
                let in_plane = input.plane(n, ic);
                let gi_start = d.offset(n, ic, 0, 0);
                let wbase = (oc * d.c + ic) * ksq;
                for i in 0..k {
                    let dy = i as isize - pad as isize;
                    let (ylo, yhi) = shifted_range(h, dy);
                    for j in 0..k {
                        let dx = j as isize - pad as isize;
                        let (xlo, xhi) = shifted_range(w, dx);
                        if xlo >= xhi {
                            continue;
                        }
                        let wv = wdata[wbase + i * k + j];
                        let mut wacc = T::zero();
                        for y in ylo..yhi {
                            let iy = (y as isize + dy) as usize;
                            let ix0 = (xlo as isize + dx) as usize;
                            let ix1 = (xhi as isize + dx) as usize;
                            let src = &in_plane[iy * w + ix0..iy * w + ix1];
                            let g_row = &g_plane[y * w + xlo..y * w + xhi];
                            // d/dw: correlate grad_out with the input window.
                            for (&g, &s) in g_row.iter().zip(src) {
                                wacc += g * s;
                            }
                            // d/dinput: scatter grad_out back through the tap.
                            let gi_row =
                                &mut grad_in.data_mut()[gi_start + iy * w + ix0..gi_start + iy * w + ix1];
                            for (gi, &g) in gi_row.iter_mut().zip(g_row) {
                                *gi += wv * g;
                            }
                        }
                        wg[wbase + i * k + j] += wacc;
                    }
                }
            }
        }
    }
}

/// Fill `cols` (layout `[c*k*k][h*w]`, rows contiguous) with the zero-padded
/// input windows of batch item `n`.
fn im2col<T: Scalar>(input: &Tensor<T>, n: usize, k: usize, pad: usize, cols: &mut [T]) {
    let d = input.dims();
    let (h, w) = (d.h, d.w);
    let hw = h * w;
    for ic in 0..d.c {
        let plane = input.plane(n, ic);
        for i in 0..k {
            let dy = i as isize - pad as isize;
            for j in 0..k {
                let dx = j as isize - pad as isize;
                let row = &mut cols[((ic * k + i) * k + j) * hw..((ic * k + i) * k + j + 1) * hw];
                let (ylo, yhi) = shifted_range(h, dy);
                let (xlo, xhi) = shifted_range(w, dx);
                row[..ylo * w].fill(T::zero());
                row[yhi * w..].fill(T::zero());
                for y in ylo..yhi {
                    let iy = (y as isize + dy) as usize;
                    let dst = &mut row[y * w..(y + 1) * w];
                    dst[..xlo].fill(T::zero());
                    dst[xhi..].fill(T::zero());
                    let src =
                        &plane[iy * w + (xlo as isize + dx) as usize..iy * w + (xhi as isize + dx) as usize];
                    dst[xlo..xhi].copy_from_slice(src);
                }
            }
        }
    }
}

/// Scatter-add a column-space gradient back to the input coordinates of
/// one batch item's slab; the adjoint of [`im2col`].
fn col2im_add<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, grad_slab: &mut [T]) {
    let hw = h * w;
    for ic in 0..c {
        let start = ic * hw;
        for i in 0..k {
            let dy = i as isize - pad as isize;
            let (ylo, yhi) = shifted_range(h, dy);
            for j in 0..k {
                let dx = j as isize - pad as isize;
                let (xlo, xhi) = shifted_range(w, dx);
                if xlo >= xhi {
                    continue;
                }
                let row = &cols[((ic * k + i) * k + j) * hw..((ic * k + i) * k + j + 1) * hw];
                for y in ylo..yhi {
                    let iy = (y as isize + dy) as usize;
                    let ix0 = (xlo as isize + dx) as usize;
                    let dst =
                        &mut grad_slab[start + iy * w + ix0..start + iy * w + ix0 + (xhi - xlo)];
                    let src = &row[y * w + xlo..y * w + xhi];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o += s;
                    }
                }
            }
        }
    }
}

/// Row count below which plain loops beat the blocked GEMM kernels (the
/// single-output-channel layers are the common case).
const GEMM_MIN_ROWS: usize = 4;

/// One batch item of the im2col forward: fill `cols`, multiply by the
/// weights, add the bias into `out_slab`.
fn forward_im2col_item<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    pad: usize,
    n: usize,
    cols: &mut [T],
    out_slab: &mut [T],
) {
    let d = input.dims();
    let k = params.kernel();
    let hw = d.h * d.w;
    let kdim = d.c * k * k;
    let cout = params.out_channels();
    im2col(input, n, k, pad, cols);
    if cout >= GEMM_MIN_ROWS {
        T::gemm(
            cout,
            kdim,
            hw,
            T::one(),
            params.weights.data(),
            kdim as isize,
            1,
            cols,
            hw as isize,
            1,
            T::zero(),
            out_slab,
            hw as isize,
            1,
        );
        for oc in 0..cout {
            let b = params.bias[oc];
            for v in &mut out_slab[oc * hw..(oc + 1) * hw] {
                *v += b;
            }
        }
    } else {
        for oc in 0..cout {
            let row = &mut out_slab[oc * hw..(oc + 1) * hw];
            row.fill(params.bias[oc]);
            for r in 0..kdim {
                let wv = params.weights.data()[oc * kdim + r];
                let src = &cols[r * hw..(r + 1) * hw];
                for (o, &s) in row.iter_mut().zip(src) {
                    *o += wv * s;
                }
            }
        }
    }
}

fn forward_im2col<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>, pad: usize, out: &mut Tensor<T>) {
    let d = input.dims();
    let kdim = d.c * params.kernel() * params.kernel();
    let hw = d.h * d.w;
    let item = out.dims().item_count();
    #[cfg(feature = "threads")]
    {
        use rayon::prelude::*;
        out.data_mut()
            .par_chunks_mut(item)
            .enumerate()
            .for_each_init(
                || vec![T::zero(); kdim * hw],
                |cols, (n, out_slab)| forward_im2col_item(input, params, pad, n, cols, out_slab),
            );
    }
    #[cfg(not(feature = "threads"))]
    {
        let mut cols = vec![T::zero(); kdim * hw];
        for n in 0..d.n {
            let out_slab = &mut out.data_mut()[n * item..(n + 1) * item];
            forward_im2col_item(input, params, pad, n, &mut cols, out_slab);
        }
    }
}

/// One batch item of the im2col backward: writes this item's input
/// gradient into `grad_slab` and returns its weight-gradient partial.
#[allow(clippy::too_many_arguments)]
fn backward_im2col_item<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    pad: usize,
    n: usize,
    g_slab: &[T],
    grad_slab: &mut [T],
    cols: &mut [T],
    gcols: &mut [T],
) -> Vec<T> {
    let d = input.dims();
    let k = weights.dims().h;
    let hw = d.h * d.w;
    let kdim = d.c * k * k;
    let cout = weights.dims().n;
    im2col(input, n, k, pad, cols);
    let mut partial = vec![T::zero(); cout * kdim];
    // d/dw for this item: grad_out (cout x hw) times cols^T (hw x kdim).
    if cout >= GEMM_MIN_ROWS {
        T::gemm(
            cout,
            hw,
            kdim,
            T::one(),
            g_slab,
            hw as isize,
            1,
            cols,
            1,
            hw as isize,
            T::zero(),
            &mut partial,
            kdim as isize,
            1,
        );
    } else {
        for oc in 0..cout {
            let g_row = &g_slab[oc * hw..(oc + 1) * hw];
            for r in 0..kdim {
                let src = &cols[r * hw..(r + 1) * hw];
                let mut acc = T::zero();
                for (&g, &s) in g_row.iter().zip(src) {
                    acc += g * s;
                }
                partial[oc * kdim + r] = acc;
            }
        }
    }
    // d/dinput: weights^T (kdim x cout) times grad_out (cout x hw).
    if cout >= GEMM_MIN_ROWS {
        T::gemm(
            kdim,
            cout,
            hw,
            T::one(),
            weights.data(),
            1,
            kdim as isize,
            g_slab,
            hw as isize,
            1,
            T::zero(),
            gcols,
            hw as isize,
            1,
        );
    } else {
        gcols.fill(T::zero());
        for oc in 0..cout {
            let g_row = &g_slab[oc * hw..(oc + 1) * hw];
            for r in 0..kdim {
                let wv = weights.data()[oc * kdim + r];
                let dst = &mut gcols[r * hw..(r + 1) * hw];
                for (o, &g) in dst.iter_mut().zip(g_row) {
                    *o += wv * g;
                }
            }
        }
    }
    col2im_add(gcols, d.c, d.h, d.w, k, pad, grad_slab);
    partial
}

fn backward_im2col<T: Scalar>(
    input: &Tensor<T>,
    params: &mut ConvParams<T>,
    grad_out: &Tensor<T>,
    pad: usize,
    grad_in: &mut Tensor<T>,
    hw: usize,
) {
    let d = input.dims();
    let k = params.kernel();
    let kdim = d.c * k * k;
    let item_in = d.item_count();
    let weights = &params.weights;
    #[cfg(feature = "threads")]
    let partials: Vec<Vec<T>> = {
        use rayon::prelude::*;
        grad_in
            .data_mut()
            .par_chunks_mut(item_in)
            .enumerate()
            .map_init(
                || (vec![T::zero(); kdim * hw], vec![T::zero(); kdim * hw]),
                |(cols, gcols), (n, grad_slab)| {
                    backward_im2col_item(
                        input,
                        weights,
                        pad,
                        n,
                        grad_out.item(n),
                        grad_slab,
                        cols,
                        gcols,
                    )
                },
            )
            .collect()
    };
    #[cfg(not(feature = "threads"))]
    let partials: Vec<Vec<T>> = {
        let mut cols = vec![T::zero(); kdim * hw];
        let mut gcols = vec![T::zero(); kdim * hw];
        (0..d.n)
            .map(|n| {
                let grad_slab = &mut grad_in.data_mut()[n * item_in..(n + 1) * item_in];
                backward_im2col_item(
                    input,
                    weights,
                    pad,
                    n,
                    grad_out.item(n),
                    grad_slab,
                    &mut cols,
                    &mut gcols,
                )
            })
            .collect()
    };
    // Reduce per-item partials in ascending n so the summation order (and
    // therefore the result, bitwise) is independent of the thread count.
    for partial in partials {
        for (acc, &p) in params.weight_grad.data_mut().iter_mut().zip(&partial) {
            *acc += p;
        }
    }
}
