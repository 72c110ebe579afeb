//! Graph-node op descriptors and their backward rules.
//!
//! Each rule is written in terms of the public tensor ops, so when the
//! backward pass runs with recording enabled the gradient computation is
//! itself differentiable.

use super::kernels::ConvGeom;
use super::{Node, Tensor};
use crate::error::Result;
use crate::scalar::{lit, Scalar};

#[derive(Debug)]
pub(crate) enum Op<T: Scalar> {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sqrt,
    Relu,
    Tanh,
    Scale(T),
    AddScalar(T),
    MatMul,
    MatMulNT,
    MatMulTN,
    Permute(Vec<usize>),
    Reshape,
    Broadcast,
    SumTo,
    Downsample(usize),
    UpsampleZero(usize),
    Im2col(ConvGeom),
    Col2im(ConvGeom),
    ChanFc,
    ChanOuter,
    ChanTranspose,
}

/// 0/1 indicator of `x > 0`, as a constant tensor (the relu subgradient
/// at 0 is 0).
fn step_mask<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let z = T::zero();
    let data: Vec<T> = x.data().iter().map(|&v| if v > z { T::one() } else { z }).collect();
    Tensor::from_vec(x.shape(), data).expect("mask shape")
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Per-parent gradient contributions of a node given the output adjoint.
/// `need[i]` tells whether parent `i` actually wants a gradient.
pub(crate) fn vjp<T: Scalar>(node: &Node<T>, g: &Tensor<T>, need: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
    let p = &node.parents;
    let out: Vec<Option<Tensor<T>>> = match &node.op {
        Op::Add => vec![
            if need[0] { Some(g.clone()) } else { None },
            if need[1] { Some(g.clone()) } else { None },
        ],
        Op::Sub => vec![
            if need[0] { Some(g.clone()) } else { None },
            if need[1] { Some(g.neg()) } else { None },
        ],
        Op::Mul => vec![
            if need[0] { Some(g.mul(&p[1])?) } else { None },
            if need[1] { Some(g.mul(&p[0])?) } else { None },
        ],
        Op::Div => vec![
            if need[0] { Some(g.div(&p[1])?) } else { None },
            if need[1] {
                // -g * a / b^2
                Some(g.mul(&p[0])?.div(&p[1].mul(&p[1])?)?.neg())
            } else {
                None
            },
        ],
        Op::Neg => vec![if need[0] { Some(g.neg()) } else { None }],
        Op::Sqrt => vec![if need[0] {
            Some(g.div(&p[0].sqrt()?)?.scale(lit(0.5)))
        } else {
            None
        }],
        Op::Relu => vec![if need[0] { Some(g.mul(&step_mask(&p[0]))?) } else { None }],
        Op::Tanh => vec![if need[0] {
            let t = p[0].tanh();
            Some(g.mul(&t.mul(&t)?.neg().add_scalar(T::one()))?)
        } else {
            None
        }],
        Op::Scale(a) => vec![if need[0] { Some(g.scale(*a)) } else { None }],
        Op::AddScalar(_) => vec![if need[0] { Some(g.clone()) } else { None }],
        // a[m,k] @ b[k,n]: da = g b^T, db = a^T g
        Op::MatMul => vec![
            if need[0] { Some(g.matmul_nt(&p[1])?) } else { None },
            if need[1] { Some(p[0].matmul_tn(g)?) } else { None },
        ],
        // a[m,k] @ b[n,k]^T: da = g b, db = g^T a
        Op::MatMulNT => vec![
            if need[0] { Some(g.matmul(&p[1])?) } else { None },
            if need[1] { Some(g.matmul_tn(&p[0])?) } else { None },
        ],
        // a[k,m]^T @ b[k,n]: da = b g^T, db = a g
        Op::MatMulTN => vec![
            if need[0] { Some(p[1].matmul_nt(g)?) } else { None },
            if need[1] { Some(p[0].matmul(g)?) } else { None },
        ],
        Op::Permute(perm) => vec![if need[0] { Some(g.permute(&inverse_perm(perm))?) } else { None }],
        Op::Reshape => vec![if need[0] { Some(g.reshape(p[0].shape())?) } else { None }],
        Op::Broadcast => vec![if need[0] { Some(g.sum_to_shape(p[0].shape())?) } else { None }],
        Op::SumTo => vec![if need[0] { Some(g.broadcast_to(p[0].shape())?) } else { None }],
        Op::Downsample(t) => vec![if need[0] { Some(g.upsample_zero(*t)?) } else { None }],
        Op::UpsampleZero(t) => vec![if need[0] { Some(g.downsample(*t)?) } else { None }],
        Op::Im2col(geom) => vec![if need[0] { Some(g.col2im(*geom)?) } else { None }],
        Op::Col2im(geom) => vec![if need[0] {
            Some(g.im2col(geom.kh, geom.kw, geom.stride, geom.pad)?)
        } else {
            None
        }],
        Op::ChanFc => vec![
            if need[0] { Some(g.chan_fc(&p[1].chan_transpose()?)?) } else { None },
            if need[1] { Some(g.chan_outer(&p[0])?) } else { None },
        ],
        Op::ChanOuter => vec![
            if need[0] { Some(p[1].chan_fc(g)?) } else { None },
            if need[1] { Some(p[0].chan_fc(&g.chan_transpose()?)?) } else { None },
        ],
        Op::ChanTranspose => vec![if need[0] { Some(g.chan_transpose()?) } else { None }],
    };
    Ok(out)
}
