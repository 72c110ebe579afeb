//! Reverse-mode autodiff over dense n-dimensional arrays.
//!
//! Tensors are immutable values with an optional provenance node; the graph
//! is a DAG of `Arc`-shared tensors. Every op's backward rule is expressed
//! through the public ops themselves, so running [`backward`] with
//! `create_graph = true` records the gradient computation and makes
//! gradients-of-gradients available by calling [`backward`] again.

mod autodiff;
mod gradcheck;
pub mod kernels;
mod ops;

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use autodiff::{backward, backward_stopping, backward_toward, GradMode, Gradients};
pub use gradcheck::{grad_check, grad_check_masked};
pub use kernels::ConvGeom;
pub(crate) use ops::Op;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

thread_local! {
    static RECORDING: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` with graph recording disabled on this thread; ops executed
/// inside produce constant tensors.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = RECORDING.with(|r| r.replace(false));
    let out = f();
    RECORDING.with(|r| r.set(prev));
    out
}

pub fn is_recording() -> bool {
    RECORDING.with(|r| r.get())
}

/// Run `f` with recording forced on, regardless of an enclosing
/// [`no_grad`] scope. The inner refinement loop uses this so its per-step
/// gradient is available even when a caller evaluates inside `no_grad`.
pub(crate) fn with_recording_on<R>(f: impl FnOnce() -> R) -> R {
    let prev = RECORDING.with(|r| r.replace(true));
    let out = f();
    RECORDING.with(|r| r.set(prev));
    out
}

pub(crate) struct Node<T: Scalar> {
    pub op: Op<T>,
    pub parents: Vec<Tensor<T>>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<Node<T>>,
    requires_grad: bool,
}

/// Dense n-dimensional value, cheaply cloneable (shared storage).
///
/// Shape `[]` denotes a scalar. Image tensors use `[n, c, h, w]` order.
pub struct Tensor<T: Scalar>(Arc<Inner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn from_parts(shape: Vec<usize>, data: Arc<Vec<T>>, node: Option<Node<T>>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Inner { id: next_id(), shape, data, node, requires_grad }))
    }

    /// Constant leaf from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "from_vec",
                shape: shape.to_vec(),
                msg: format!("shape wants {} elements, got {}", numel, data.len()),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), Arc::new(data), None, false))
    }

    pub fn scalar(v: T) -> Self {
        Self::from_parts(vec![], Arc::new(vec![v]), None, false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_parts(shape.to_vec(), Arc::new(vec![v; numel]), None, false)
    }

    /// New leaf sharing this tensor's data, marked as requiring gradients.
    pub fn requiring_grad(&self) -> Self {
        Self::from_parts(self.0.shape.clone(), Arc::clone(&self.0.data), None, true)
    }

    /// New constant leaf sharing this tensor's data (cuts the graph).
    pub fn detach(&self) -> Self {
        Self::from_parts(self.0.shape.clone(), Arc::clone(&self.0.data), None, false)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.0.node.as_ref()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() == 1 {
            Ok(self.0.data[0])
        } else {
            Err(Error::Dimension {
                op: "item",
                shape: self.shape().to_vec(),
                msg: "expected exactly one element".into(),
            })
        }
    }

    /// Result of an op: records a graph node when recording is enabled and
    /// any parent requires gradients.
    fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>, parents: Vec<Tensor<T>>) -> Self {
        Self::from_op_shared(shape, Arc::new(data), op, parents)
    }

    /// [`Tensor::from_op`] for ops that reuse an existing buffer (reshape).
    fn from_op_shared(shape: Vec<usize>, data: Arc<Vec<T>>, op: Op<T>, parents: Vec<Tensor<T>>) -> Self {
        let track = is_recording() && parents.iter().any(|p| p.requires_grad());
        let node = track.then_some(Node { op, parents });
        Self::from_parts(shape, data, node, track)
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Ok(Self::from_op(self.0.shape.clone(), data, Op::Add, vec![self.clone(), other.clone()]))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Ok(Self::from_op(self.0.shape.clone(), data, Op::Sub, vec![self.clone(), other.clone()]))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "mul")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        Ok(Self::from_op(self.0.shape.clone(), data, Op::Mul, vec![self.clone(), other.clone()]))
    }

    /// Elementwise division. The caller keeps `|other|` bounded away from
    /// zero (typically via an explicit epsilon in the denominator).
    pub fn div(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "div")?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a / b).collect();
        Ok(Self::from_op(self.0.shape.clone(), data, Op::Div, vec![self.clone(), other.clone()]))
    }

    pub fn neg(&self) -> Self {
        let data = self.data().iter().map(|&a| -a).collect();
        Self::from_op(self.0.shape.clone(), data, Op::Neg, vec![self.clone()])
    }

    pub fn sqrt(&self) -> Result<Self> {
        if let Some(i) = self.data().iter().position(|v| *v < T::zero()) {
            return Err(Error::Domain {
                op: "sqrt",
                msg: format!("negative entry {} at index {}", self.data()[i], i),
            });
        }
        let data = self.data().iter().map(|&a| a.sqrt()).collect();
        Ok(Self::from_op(self.0.shape.clone(), data, Op::Sqrt, vec![self.clone()]))
    }

    /// max(x, 0); the subgradient at 0 is taken as 0.
    pub fn relu(&self) -> Self {
        let z = T::zero();
        let data = self.data().iter().map(|&a| if a > z { a } else { z }).collect();
        Self::from_op(self.0.shape.clone(), data, Op::Relu, vec![self.clone()])
    }

    pub fn tanh(&self) -> Self {
        let data = self.data().iter().map(|&a| a.tanh()).collect();
        Self::from_op(self.0.shape.clone(), data, Op::Tanh, vec![self.clone()])
    }

    pub fn scale(&self, alpha: T) -> Self {
        let data = self.data().iter().map(|&a| a * alpha).collect();
        Self::from_op(self.0.shape.clone(), data, Op::Scale(alpha), vec![self.clone()])
    }

    pub fn add_scalar(&self, alpha: T) -> Self {
        let data = self.data().iter().map(|&a| a + alpha).collect();
        Self::from_op(self.0.shape.clone(), data, Op::AddScalar(alpha), vec![self.clone()])
    }

    // ---- reductions ----

    /// Sum of all entries as a scalar tensor.
    pub fn sum(&self) -> Self {
        self.sum_to_shape(&[]).expect("sum_to scalar cannot fail")
    }

    pub fn mean(&self) -> Self {
        let n = crate::scalar::lit::<T>(self.numel() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Sum of squared entries as a scalar tensor.
    pub fn sq_norm(&self) -> Self {
        self.mul(self).expect("same tensor").sum()
    }

    // ---- data movement ----

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                shape: self.shape().to_vec(),
                msg: format!("cannot reshape to {:?}", shape),
            });
        }
        // row-major reshape never moves data
        Ok(Self::from_op_shared(shape.to_vec(), Arc::clone(&self.0.data), Op::Reshape, vec![self.clone()]))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Dimension {
                op: "permute",
                shape: self.shape().to_vec(),
                msg: format!("invalid axis permutation {:?}", perm),
            });
        }
        let data = kernels::permute(self.data(), self.shape(), perm);
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        Ok(Self::from_op(shape, data, Op::Permute(perm.to_vec()), vec![self.clone()]))
    }

    /// Matrix transpose of a 2-d tensor.
    pub fn transpose(&self) -> Result<Self> {
        self.permute(&[1, 0])
    }

    /// Numpy-style broadcast (right-aligned, size-1 axes expand).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        check_broadcastable(self.shape(), shape, "broadcast_to")?;
        let data = kernels::broadcast(self.data(), self.shape(), shape);
        Ok(Self::from_op(shape.to_vec(), data, Op::Broadcast, vec![self.clone()]))
    }

    /// Adjoint of broadcast: sum down to `shape`.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        check_broadcastable(shape, self.shape(), "sum_to_shape")?;
        let data = kernels::sum_to(self.data(), self.shape(), shape);
        Ok(Self::from_op(shape.to_vec(), data, Op::SumTo, vec![self.clone()]))
    }

    /// Strided subsampling keeping index (0,0) of each `t x t` block.
    pub fn downsample(&self, t: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims4("downsample")?;
        if t < 1 || h % t != 0 || w % t != 0 {
            return Err(Error::Dimension {
                op: "downsample",
                shape: self.shape().to_vec(),
                msg: format!("spatial dims must divide by t={}", t),
            });
        }
        let data = kernels::downsample(self.data(), n, c, h, w, t);
        Ok(Self::from_op(vec![n, c, h / t, w / t], data, Op::Downsample(t), vec![self.clone()]))
    }

    /// Adjoint of [`Tensor::downsample`]: zero-stuffed upsampling.
    pub fn upsample_zero(&self, t: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims4("upsample_zero")?;
        let data = kernels::upsample_zero(self.data(), n, c, h, w, t);
        Ok(Self::from_op(vec![n, c, h * t, w * t], data, Op::UpsampleZero(t), vec![self.clone()]))
    }

    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match *self.shape() {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::Dimension {
                op,
                shape: self.shape().to_vec(),
                msg: "expected a 4-d [n,c,h,w] tensor".into(),
            }),
        }
    }

    // ---- contractions ----

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = match *self.shape() {
            [m, k] => (m, k),
            _ => {
                return Err(Error::Dimension {
                    op: "matmul",
                    shape: self.shape().to_vec(),
                    msg: "left operand must be 2-d".into(),
                })
            }
        };
        match *other.shape() {
            [k2, n] if k2 == k => {
                let data = kernels::matmul(self.data(), other.data(), m, k, n);
                Ok(Self::from_op(vec![m, n], data, Op::MatMul, vec![self.clone(), other.clone()]))
            }
            _ => Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            }),
        }
    }

    /// `self[m,k] * other[n,k]^T` (transpose-free right-transposed matmul).
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        match (self.shape(), other.shape()) {
            (&[m, k], &[n, k2]) if k == k2 => {
                let data = kernels::matmul_nt(self.data(), other.data(), m, k, n);
                Ok(Self::from_op(vec![m, n], data, Op::MatMulNT, vec![self.clone(), other.clone()]))
            }
            _ => Err(Error::ShapeMismatch {
                op: "matmul_nt",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            }),
        }
    }

    /// `self[k,m]^T * other[k,n]` (transpose-free left-transposed matmul).
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        match (self.shape(), other.shape()) {
            (&[k, m], &[k2, n]) if k == k2 => {
                let data = kernels::matmul_tn(self.data(), other.data(), k, m, n);
                Ok(Self::from_op(vec![m, n], data, Op::MatMulTN, vec![self.clone(), other.clone()]))
            }
            _ => Err(Error::ShapeMismatch {
                op: "matmul_tn",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            }),
        }
    }

    pub fn im2col(&self, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims4("im2col")?;
        if stride < 1 || kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Dimension {
                op: "im2col",
                shape: self.shape().to_vec(),
                msg: format!("kernel {}x{} stride {} pad {} does not fit", kh, kw, stride, pad),
            });
        }
        let g = ConvGeom::new(n, c, h, w, kh, kw, stride, pad);
        let data = kernels::im2col(self.data(), &g);
        Ok(Self::from_op(vec![g.rows(), g.cols()], data, Op::Im2col(g), vec![self.clone()]))
    }

    /// Scatter-add a `[c*kh*kw, n*oh*ow]` column matrix back into the
    /// `[n,c,h,w]` image described by `g`.
    pub fn col2im(&self, g: ConvGeom) -> Result<Self> {
        if *self.shape() != [g.rows(), g.cols()] {
            return Err(Error::Dimension {
                op: "col2im",
                shape: self.shape().to_vec(),
                msg: format!("expected [{}, {}] for geometry {:?}", g.rows(), g.cols(), g),
            });
        }
        let data = kernels::col2im(self.data(), &g);
        Ok(Self::from_op(vec![g.n, g.c, g.h, g.w], data, Op::Col2im(g), vec![self.clone()]))
    }

    /// 2-d cross-correlation (no kernel flip) of `[n,c,h,w]` with
    /// `[o,c,kh,kw]`, zero padding.
    pub fn conv2d(&self, kernel: &Self, stride: usize, padding: usize) -> Result<Self> {
        let [n, c, _, _] = self.dims4("conv2d")?;
        let [o, kc, kh, kw] = kernel.dims4("conv2d")?;
        if kc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: self.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        let cols = self.im2col(kh, kw, stride, padding)?;
        let (oh, ow) = {
            let g = ConvGeom::new(n, c, self.shape()[2], self.shape()[3], kh, kw, stride, padding);
            (g.oh, g.ow)
        };
        let wr = kernel.reshape(&[o, c * kh * kw])?;
        let prod = wr.matmul(&cols)?.reshape(&[o, n, oh, ow])?;
        // a size-1 leading axis makes the (o, n) swap a pure relabeling
        if o == 1 || n == 1 {
            prod.reshape(&[n, o, oh, ow])
        } else {
            prod.permute(&[1, 0, 2, 3])
        }
    }

    /// Transposed convolution (adjoint of [`Tensor::conv2d`] in the spatial
    /// map); kernel layout `[c_in, c_out, kh, kw]`.
    pub fn deconv2d(&self, kernel: &Self, stride: usize, padding: usize) -> Result<Self> {
        let [n, ci, h, w] = self.dims4("deconv2d")?;
        let [kci, co, kh, kw] = kernel.dims4("deconv2d")?;
        if kci != ci {
            return Err(Error::ShapeMismatch {
                op: "deconv2d",
                left: self.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        let out_h = (h - 1) * stride + kh - 2 * padding;
        let out_w = (w - 1) * stride + kw - 2 * padding;
        let g = ConvGeom::new(n, co, out_h, out_w, kh, kw, stride, padding);
        debug_assert_eq!((g.oh, g.ow), (h, w));
        let xflat = if n == 1 || ci == 1 {
            self.reshape(&[ci, n * h * w])?
        } else {
            self.permute(&[1, 0, 2, 3])?.reshape(&[ci, n * h * w])?
        };
        let wr = kernel.reshape(&[ci, co * kh * kw])?;
        wr.matmul_tn(&xflat)?.col2im(g)
    }

    // ---- channel-wise dense map ----

    /// `out[n,c,i] = sum_j w[c,i,j] * x[n,c,j]` for `x: [n,c,s]`, `w: [c,s,s]`.
    pub fn chan_fc(&self, w: &Self) -> Result<Self> {
        let (n, c, s) = match *self.shape() {
            [n, c, s] => (n, c, s),
            _ => {
                return Err(Error::Dimension {
                    op: "chan_fc",
                    shape: self.shape().to_vec(),
                    msg: "expected [n,c,s]".into(),
                })
            }
        };
        if *w.shape() != [c, s, s] {
            return Err(Error::ShapeMismatch {
                op: "chan_fc",
                left: self.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        let data = kernels::chan_fc(self.data(), w.data(), n, c, s);
        Ok(Self::from_op(vec![n, c, s], data, Op::ChanFc, vec![self.clone(), w.clone()]))
    }

    /// `out[c,i,j] = sum_n a[n,c,i] * b[n,c,j]`.
    pub fn chan_outer(&self, b: &Self) -> Result<Self> {
        self.same_shape(b, "chan_outer")?;
        let (n, c, s) = match *self.shape() {
            [n, c, s] => (n, c, s),
            _ => {
                return Err(Error::Dimension {
                    op: "chan_outer",
                    shape: self.shape().to_vec(),
                    msg: "expected [n,c,s]".into(),
                })
            }
        };
        let data = kernels::chan_outer(self.data(), b.data(), n, c, s);
        Ok(Self::from_op(vec![c, s, s], data, Op::ChanOuter, vec![self.clone(), b.clone()]))
    }

    /// Per-channel matrix transpose of `[c,s,s]`.
    pub fn chan_transpose(&self) -> Result<Self> {
        let (c, s) = match *self.shape() {
            [c, s1, s2] if s1 == s2 => (c, s1),
            _ => {
                return Err(Error::Dimension {
                    op: "chan_transpose",
                    shape: self.shape().to_vec(),
                    msg: "expected [c,s,s]".into(),
                })
            }
        };
        let data = kernels::chan_transpose(self.data(), c, s);
        Ok(Self::from_op(vec![c, s, s], data, Op::ChanTranspose, vec![self.clone()]))
    }
}

fn check_broadcastable(src: &[usize], dst: &[usize], op: &'static str) -> Result<()> {
    if src.len() > dst.len() {
        return Err(Error::ShapeMismatch { op, left: src.to_vec(), right: dst.to_vec() });
    }
    let off = dst.len() - src.len();
    for i in 0..src.len() {
        if src[i] != 1 && src[i] != dst[i + off] {
            return Err(Error::ShapeMismatch { op, left: src.to_vec(), right: dst.to_vec() });
        }
    }
    Ok(())
}
