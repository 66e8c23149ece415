//! Pointwise and structural layers: ReLU, channel concatenation, MSE
//! loss, and the SGD step over a parameter set.

use alloc::vec::Vec;

use super::{ConvParams, Dims, Scalar, Tensor, TensorError};

/// Activation mask retained by [`relu_forward`]: true where the input was
/// strictly positive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReluMask {
    dims: Dims,
    on: Vec<bool>,
}

impl ReluMask {
    pub fn dims(&self) -> Dims {
        self.dims
    }
}

/// `max(input, 0)` elementwise, plus the pass-through mask for backward.
pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, ReluMask) {
    let on: Vec<bool> = input.data().iter().map(|&v| v > T::zero()).collect();
    let out = Tensor::from_fn(input.dims(), |i| {
        if on[i] {
            input.data()[i]
        } else {
            T::zero()
        }
    });
    (
        out,
        ReluMask {
            dims: input.dims(),
            on,
        },
    )
}

/// Gradient of ReLU: `grad_out` where the forward input was positive,
/// zero elsewhere.
pub fn relu_backward<T: Scalar>(mask: &ReluMask, grad_out: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if mask.dims != grad_out.dims() {
        return Err(TensorError::ShapeMismatch {
            what: "relu mask vs grad_out",
            left: mask.dims,
            right: grad_out.dims(),
        });
    }
    Ok(Tensor::from_fn(grad_out.dims(), |i| {
        if mask.on[i] {
            grad_out.data()[i]
        } else {
            T::zero()
        }
    }))
}

/// Stack tensors along the channel axis in list order. All parts must
/// share N, H, and W.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    let first = *parts.first().ok_or(TensorError::ConcatEmpty)?;
    let fd = first.dims();
    let mut channels = 0;
    for (index, part) in parts.iter().enumerate() {
        let d = part.dims();
        if d.n != fd.n || d.h != fd.h || d.w != fd.w {
            return Err(TensorError::ConcatMismatch {
                index,
                first: fd,
                offending: d,
            });
        }
        channels += d.c;
    }
    let out_dims = Dims::new(fd.n, channels, fd.h, fd.w);
    let mut out = Tensor::zeros(out_dims);
    let hw = fd.h * fd.w;
    for n in 0..fd.n {
        let mut c0 = 0;
        for part in parts {
            let pc = part.dims().c;
            let src = part.item(n);
            let start = out_dims.offset(n, c0, 0, 0);
            out.data_mut()[start..start + pc * hw].copy_from_slice(src);
            c0 += pc;
        }
    }
    Ok(out)
}

/// Inverse of [`concat_channels`]: slice a tensor back into per-part
/// channel groups. This is also the backward pass of concatenation, since
/// the gradient of each part is the matching slice of `grad_out`.
pub fn split_channels<T: Scalar>(
    tensor: &Tensor<T>,
    sizes: &[usize],
) -> Result<Vec<Tensor<T>>, TensorError> {
    let d = tensor.dims();
    let total: usize = sizes.iter().sum();
    if total != d.c {
        return Err(TensorError::SplitMismatch {
            channels: d.c,
            requested: total,
        });
    }
    let hw = d.h * d.w;
    let mut parts = Vec::with_capacity(sizes.len());
    let mut c0 = 0;
    for &pc in sizes {
        let pdims = Dims::new(d.n, pc, d.h, d.w);
        let mut part = Tensor::zeros(pdims);
        for n in 0..d.n {
            let start = d.offset(n, c0, 0, 0);
            part.item_mut(n)
                .copy_from_slice(&tensor.data()[start..start + pc * hw]);
        }
        parts.push(part);
        c0 += pc;
    }
    Ok(parts)
}

/// Mean squared error and its gradient with respect to `pred`:
/// `loss = mean((pred - target)^2)`, `grad = 2/K * (pred - target)`.
/// The mean convention keeps the learning rate independent of batch and
/// patch size.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>), TensorError> {
    if pred.dims() != target.dims() {
        return Err(TensorError::ShapeMismatch {
            what: "mse pred vs target",
            left: pred.dims(),
            right: target.dims(),
        });
    }
    let count = T::from_usize(pred.dims().count());
    let mut acc = T::zero();
    let grad = Tensor::from_fn(pred.dims(), |i| {
        let diff = pred.data()[i] - target.data()[i];
        acc += diff * diff;
        (T::one() + T::one()) * diff / count
    });
    Ok((acc / count, grad))
}

/// Apply one momentum-SGD step to every parameter set and zero the
/// gradients. See [`ConvParams::sgd_update`] for the update rule.
pub fn sgd_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut ConvParams<T>>,
    lr: T,
    momentum: T,
) {
    for p in params {
        p.sgd_update(lr, momentum);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(dims: Dims, data: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(dims, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_definition() {
        let input = t(Dims::new(1, 1, 1, 3), &[-1.0, 2.0, 0.0]);
        let (out, _) = relu_forward(&input);
        assert_eq!(out.data(), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn relu_all_negative_and_all_positive() {
        let neg = Tensor::<f32>::filled(Dims::new(1, 2, 2, 2), -3.0);
        let (out, _) = relu_forward(&neg);
        assert!(out.data().iter().all(|&v| v == 0.0));
        let pos = Tensor::<f32>::filled(Dims::new(1, 2, 2, 2), 3.0);
        let (out, _) = relu_forward(&pos);
        assert_eq!(out, pos);
    }

    #[test]
    fn relu_backward_masks_grad() {
        let input = t(Dims::new(1, 1, 1, 2), &[-1.0, 2.0]);
        let (_, mask) = relu_forward(&input);
        let grad = relu_backward(&mask, &t(Dims::new(1, 1, 1, 2), &[5.0, 5.0])).unwrap();
        assert_eq!(grad.data(), &[0.0, 5.0]);
        let zero = relu_backward(&mask, &Tensor::<f32>::zeros(Dims::new(1, 1, 1, 2))).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_backward_rejects_shape_mismatch() {
        let (_, mask) = relu_forward(&Tensor::<f32>::zeros(Dims::new(1, 1, 2, 2)));
        assert!(relu_backward(&mask, &Tensor::<f32>::zeros(Dims::new(1, 1, 2, 3))).is_err());
    }

    #[test]
    fn concat_of_one_is_identity() {
        let a = t(Dims::new(1, 2, 2, 2), &[1., 2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_layout_and_round_trip() {
        let mk = |v: f32| Tensor::<f32>::filled(Dims::new(1, 1, 32, 32), v);
        let (a, b, c) = (mk(1.0), mk(2.0), mk(3.0));
        let cat = concat_channels(&[&a, &b, &c]).unwrap();
        assert_eq!(cat.dims(), Dims::new(1, 3, 32, 32));
        assert_eq!(cat.plane(0, 1), b.plane(0, 0));
        let parts = split_channels(&cat, &[1, 1, 1]).unwrap();
        assert_eq!(parts, vec![a, b, c]);
    }

    #[test]
    fn concat_names_offending_part() {
        let a = Tensor::<f32>::zeros(Dims::new(1, 1, 4, 4));
        let b = Tensor::<f32>::zeros(Dims::new(1, 1, 4, 5));
        let err = concat_channels(&[&a, &b]).unwrap_err();
        assert_eq!(
            err,
            TensorError::ConcatMismatch {
                index: 1,
                first: Dims::new(1, 1, 4, 4),
                offending: Dims::new(1, 1, 4, 5),
            }
        );
        assert!(matches!(concat_channels::<f32>(&[]), Err(TensorError::ConcatEmpty)));
    }

    #[test]
    fn mse_zero_when_equal() {
        let a = t(Dims::new(1, 1, 1, 4), &[0.1, 0.2, 0.3, 0.4]);
        let (loss, grad) = mse_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_hand_example() {
        // pred [1,0], target [0,0]: loss = 1/2, grad = [2/2*1, 0] = [1, 0].
        let pred = t(Dims::new(1, 1, 1, 2), &[1.0, 0.0]);
        let target = Tensor::zeros(Dims::new(1, 1, 1, 2));
        let (loss, grad) = mse_loss(&pred, &target).unwrap();
        assert!((loss - 0.5).abs() < 1e-7);
        assert_eq!(grad.data(), &[1.0, 0.0]);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = Tensor::<f32>::zeros(Dims::new(1, 1, 2, 2));
        let b = Tensor::<f32>::zeros(Dims::new(2, 1, 2, 2));
        assert!(mse_loss(&a, &b).is_err());
    }
}
