//! Dense 4-D tensors in N,C,H,W order and the layer set the networks need:
//! 2-D convolution, ReLU, channel concatenation, MSE loss, and SGD, each
//! with an analytic backward pass.
//!
//! Training and inference run in `f32`; every operation is also
//! instantiable at `f64`, which the finite-difference verifier in
//! [`crate::gradcheck`] relies on.

mod conv;
mod ops;

pub use conv::{conv2d_backward, conv2d_forward, conv2d_forward_with, ConvAlgo, ConvParams};
pub use ops::{
    concat_channels, mse_loss, relu_backward, relu_forward, sgd_step, split_channels, ReluMask,
};

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Batch, channel, height, and width extents of a [`Tensor`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    /// Total element count `n*c*h*w`.
    pub const fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one batch item (`c*h*w`).
    pub const fn item_count(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub(crate) const fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Errors raised by tensor operations. All shape violations are hard
/// errors naming the shapes involved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TensorError {
    /// Backing buffer length does not match the declared dims.
    LengthMismatch { dims: Dims, len: usize },
    /// Two tensors that must agree in shape do not.
    ShapeMismatch {
        what: &'static str,
        left: Dims,
        right: Dims,
    },
    /// Convolution input channels differ from the weight channels.
    ChannelMismatch { input: Dims, weights: Dims },
    /// A concat part disagrees with the first part in N, H, or W.
    ConcatMismatch {
        index: usize,
        first: Dims,
        offending: Dims,
    },
    /// Concatenation of zero parts.
    ConcatEmpty,
    /// Split sizes do not sum to the tensor's channel count.
    SplitMismatch { channels: usize, requested: usize },
    /// Padding must be (k-1)/2 with odd k so spatial size is preserved.
    BadPadding { kernel: usize, pad: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::LengthMismatch { dims, len } => {
                write!(f, "buffer of {len} elements cannot back a {dims} tensor")
            }
            TensorError::ShapeMismatch { what, left, right } => {
                write!(f, "{what}: shape {left} does not match {right}")
            }
            TensorError::ChannelMismatch { input, weights } => write!(
                f,
                "input {input} has {} channels but weights {weights} expect {}",
                input.c, weights.c
            ),
            TensorError::ConcatMismatch {
                index,
                first,
                offending,
            } => write!(
                f,
                "concat part {index} has shape {offending}, incompatible with part 0 ({first})"
            ),
            TensorError::ConcatEmpty => write!(f, "cannot concatenate zero tensors"),
            TensorError::SplitMismatch {
                channels,
                requested,
            } => write!(
                f,
                "split sizes sum to {requested} but the tensor has {channels} channels"
            ),
            TensorError::BadPadding { kernel, pad } => write!(
                f,
                "kernel {kernel} requires odd size and padding {}, got padding {pad}",
                kernel.saturating_sub(1) / 2
            ),
        }
    }
}

impl core::error::Error for TensorError {}

/// Element type of the engine: `f32` for training and inference, `f64`
/// for the finite-difference verifier. Bundles the float surface from
/// `num-traits` with a GEMM kernel for the im2col fast path.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_usize(v: usize) -> Self;

    /// `c = alpha * a(m,k) * b(k,n) + beta * c(m,n)` with explicit row and
    /// column strides, matching the `matrixmultiply` calling convention.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_usize(v: usize) -> Self {
        v as f32
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        debug_assert!(a.len() >= gemm_span(m, k, rsa, csa));
        debug_assert!(b.len() >= gemm_span(k, n, rsb, csb));
        debug_assert!(c.len() >= gemm_span(m, n, rsc, csc));
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_usize(v: usize) -> Self {
        v as f64
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        debug_assert!(a.len() >= gemm_span(m, k, rsa, csa));
        debug_assert!(b.len() >= gemm_span(k, n, rsb, csb));
        debug_assert!(c.len() >= gemm_span(m, n, rsc, csc));
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

/// Minimum buffer length touched by a (rows, cols) matrix under the given
/// strides; used for the debug bounds assertions around raw GEMM calls.
fn gemm_span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    last as usize + 1
}

/// Dense 4-D array in contiguous row-major N,C,H,W order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: Dims) -> Self {
        Tensor {
            dims,
            data: vec![T::zero(); dims.count()],
        }
    }

    pub fn filled(dims: Dims, value: T) -> Self {
        Tensor {
            dims,
            data: vec![value; dims.count()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self, TensorError> {
        if data.len() != dims.count() {
            return Err(TensorError::LengthMismatch {
                dims,
                len: data.len(),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize) -> T) -> Self {
        let data = (0..dims.count()).map(&mut f).collect();
        Tensor { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.dims.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.dims.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// The contiguous `c*h*w` slice of one batch item.
    #[inline]
    pub fn item(&self, n: usize) -> &[T] {
        let stride = self.dims.item_count();
        &self.data[n * stride..(n + 1) * stride]
    }

    #[inline]
    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let stride = self.dims.item_count();
        &mut self.data[n * stride..(n + 1) * stride]
    }

    /// The contiguous `h*w` plane of channel `c` in batch item `n`.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.dims.h * self.dims.w;
        let start = self.dims.offset(n, c, 0, 0);
        &self.data[start..start + hw]
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self + other`, erroring on shape mismatch.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if self.dims != other.dims {
            return Err(TensorError::ShapeMismatch {
                what: "elementwise add",
                left: self.dims,
                right: other.dims,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            dims: self.dims,
            data,
        })
    }

    /// Elementwise scale by a constant.
    pub fn scaled(&self, factor: T) -> Tensor<T> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| v * factor).collect(),
        }
    }

    /// Lossy element cast, used to mirror an `f32` network at `f64` for
    /// gradient checking (and back).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor::<f32>::from_vec(Dims::new(1, 2, 3, 3), vec![0.0; 17]).unwrap_err();
        assert_eq!(
            err,
            TensorError::LengthMismatch {
                dims: Dims::new(1, 2, 3, 3),
                len: 17
            }
        );
    }

    #[test]
    fn layout_is_nchw_row_major() {
        let dims = Dims::new(2, 3, 4, 5);
        let t = Tensor::<f32>::from_fn(dims, |i| i as f32);
        assert_eq!(t.at(0, 0, 0, 0), 0.0);
        assert_eq!(t.at(0, 0, 0, 1), 1.0);
        assert_eq!(t.at(0, 0, 1, 0), 5.0);
        assert_eq!(t.at(0, 1, 0, 0), 20.0);
        assert_eq!(t.at(1, 0, 0, 0), 60.0);
        assert_eq!(t.item(1).len(), 60);
        assert_eq!(t.plane(1, 2), &t.data()[100..120]);
    }

    #[test]
    fn add_checks_shape() {
        let a = Tensor::<f32>::zeros(Dims::new(1, 1, 2, 2));
        let b = Tensor::<f32>::zeros(Dims::new(1, 1, 2, 3));
        assert!(a.add(&b).is_err());
    }
}
