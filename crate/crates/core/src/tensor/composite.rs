//! Composite operations assembled from tape primitives. Building them from
//! primitives (rather than hand-deriving backward rules) keeps every one of
//! them differentiable to arbitrary order.

use super::tape::Var;
use super::{Result, Tensor, TensorError};

impl Var {
    /// Sum of all elements as a `[1]` scalar.
    pub fn sum_all(&self) -> Result<Var> {
        let rank = self.shape().len();
        let axes: Vec<usize> = (0..rank).collect();
        self.sum_axes_keep(&axes)?.reshape(&[1])
    }

    /// Mean of all elements as a `[1]` scalar.
    pub fn mean_all(&self) -> Result<Var> {
        let n = self.shape().iter().product::<usize>();
        self.sum_all()?.scale(1.0 / n as f32)
    }

    /// Per-item sum over all non-batch axes: `[N, ...] -> [N]`.
    pub fn item_sum(&self) -> Result<Var> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "item_sum",
                detail: "rank 0".into(),
            });
        }
        let axes: Vec<usize> = (1..shape.len()).collect();
        self.sum_axes_keep(&axes)?.reshape(&[shape[0]])
    }

    /// Broadcast a per-item `[N]` vector over all remaining axes of `shape`.
    pub fn item_broadcast(&self, shape: &[usize]) -> Result<Var> {
        let mut keep = vec![1usize; shape.len()];
        keep[0] = shape[0];
        self.reshape(&keep)?.broadcast_to(shape)
    }

    /// Add a per-channel bias `[C]` to an NCHW tensor.
    pub fn bias_add4(&self, bias: &Var) -> Result<Var> {
        let shape = self.shape();
        let c = bias.shape()[0];
        let b = bias.reshape(&[1, c, 1, 1])?.broadcast_to(&shape)?;
        self.add(&b)
    }

    /// Add a per-feature bias `[F]` to an `[N, F]` tensor.
    pub fn bias_add2(&self, bias: &Var) -> Result<Var> {
        let shape = self.shape();
        let f = bias.shape()[0];
        let b = bias.reshape(&[1, f])?.broadcast_to(&shape)?;
        self.add(&b)
    }

    /// Pixelwise feature normalization: each spatial position's channel
    /// vector is divided by its root mean square (plus `eps`).
    pub fn pixelnorm(&self, eps: f32) -> Result<Var> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(TensorError::InvalidArgument {
                op: "pixelnorm",
                detail: format!("expects rank 4, got {shape:?}"),
            });
        }
        let c = shape[1];
        let ms = self
            .square()?
            .sum_axes_keep(&[1])?
            .scale(1.0 / c as f32)?
            .add_scalar(eps)?;
        let inv = ms.sqrt()?.recip()?.broadcast_to(&shape)?;
        self.mul(&inv)
    }

    /// Append one constant feature map holding the mean (over channels and
    /// positions) of the per-position across-batch population standard
    /// deviation: `[N,C,H,W] -> [N,C+1,H,W]`.
    pub fn minibatch_stddev(&self, eps: f32) -> Result<Var> {
        let shape = self.shape();
        if shape.len() != 4 || shape[0] == 0 {
            return Err(TensorError::InvalidArgument {
                op: "minibatch_stddev",
                detail: format!("expects non-empty rank-4 batch, got {shape:?}"),
            });
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let mean = self.sum_axes_keep(&[0])?.scale(1.0 / n as f32)?;
        let centered = self.sub(&mean.broadcast_to(&shape)?)?;
        let var = centered.square()?.sum_axes_keep(&[0])?.scale(1.0 / n as f32)?;
        let std = var.add_scalar(eps)?.sqrt()?;
        let avg = std.sum_all()?.scale(1.0 / (c * h * w) as f32)?;
        let map = avg.broadcast_to(&[n, 1, h, w])?;
        self.concat_axis1(&map)
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against one-hot
    /// targets of the same shape. Targets should be a constant.
    pub fn softmax_cross_entropy(&self, onehot: &Var) -> Result<Var> {
        let shape = self.shape();
        if shape.len() != 2 || onehot.shape() != shape {
            return Err(TensorError::InvalidArgument {
                op: "softmax_cross_entropy",
                detail: format!("logits {shape:?} vs targets {:?}", onehot.shape()),
            });
        }
        let (n, k) = (shape[0], shape[1]);
        // Shift by the detached row max; the log-softmax value is exactly
        // invariant to the shift, so treating it as a constant is exact.
        let logits = self.value();
        let mut rowmax = vec![f32::NEG_INFINITY; n];
        for i in 0..n {
            for j in 0..k {
                rowmax[i] = rowmax[i].max(logits.data()[i * k + j]);
            }
        }
        let maxc = self
            .tape()
            .constant(Tensor::from_parts(vec![n], rowmax))
            .item_broadcast(&shape)?;
        let shifted = self.sub(&maxc)?;
        let lse = shifted.exp()?.sum_axes_keep(&[1])?.log()?.broadcast_to(&shape)?;
        let logp = shifted.sub(&lse)?;
        logp.mul(onehot)?.item_sum()?.mean_all()?.neg()
    }
}

/// One-hot encode class indices into an `[N, K]` tensor.
pub fn one_hot(indices: &[usize], k: usize) -> Tensor {
    let mut data = vec![0.0f32; indices.len() * k];
    for (i, &c) in indices.iter().enumerate() {
        assert!(c < k, "class index {c} out of range {k}");
        data[i * k + c] = 1.0;
    }
    Tensor::from_parts(vec![indices.len(), k], data)
}
