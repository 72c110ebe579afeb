//! Raw data kernels behind the tensor ops.
//!
//! Everything here works on flat row-major buffers and fixed loop orders,
//! which keeps results bit-deterministic across runs.

use crate::scalar::Scalar;

/// Geometry of an im2col/col2im pair: image `[n,c,h,w]`, kernel window
/// `kh x kw`, stride and zero padding, with derived output size `oh x ow`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(n: usize, c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        ConvGeom { n, c, h, w, kh, kw, stride, pad, oh, ow }
    }

    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// C = A[m,k] * B[k,n], row-major.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

/// C = A[m,k] * B[n,k]^T, without materializing the transpose.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc = acc + av * bv;
            }
            out.push(acc);
        }
    }
    out
}

/// C = A[k,m]^T * B[k,n], without materializing the transpose.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// Unfold image patches into a `[c*kh*kw, n*oh*ow]` matrix (zero padded).
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let ncols = g.cols();
    let mut cols = vec![T::zero(); g.rows() * ncols];
    for ci in 0..g.c {
        for di in 0..g.kh {
            for dj in 0..g.kw {
                let r = (ci * g.kh + di) * g.kw + dj;
                let row = &mut cols[r * ncols..(r + 1) * ncols];
                for ni in 0..g.n {
                    let xbase = (ni * g.c + ci) * g.h * g.w;
                    for oi in 0..g.oh {
                        let iy = (oi * g.stride + di) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * g.w;
                        let crow = (ni * g.oh + oi) * g.ow;
                        for oj in 0..g.ow {
                            let ix = (oj * g.stride + dj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                row[crow + oj] = x[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back into an image.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let ncols = g.cols();
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for di in 0..g.kh {
            for dj in 0..g.kw {
                let r = (ci * g.kh + di) * g.kw + dj;
                let row = &cols[r * ncols..(r + 1) * ncols];
                for ni in 0..g.n {
                    let xbase = (ni * g.c + ci) * g.h * g.w;
                    for oi in 0..g.oh {
                        let iy = (oi * g.stride + di) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * g.w;
                        let crow = (ni * g.oh + oi) * g.ow;
                        for oj in 0..g.ow {
                            let ix = (oj * g.stride + dj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                let xi = xrow + ix as usize;
                                x[xi] = x[xi] + row[crow + oj];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gather `dst` (row-major over `dst_shape`) from `src` using a per-axis
/// source stride (0 = broadcast along that axis).
fn strided_gather<T: Scalar>(src: &[T], dst_shape: &[usize], sstride: &[usize]) -> Vec<T> {
    let numel: usize = dst_shape.iter().product();
    let mut out = Vec::with_capacity(numel);
    let rank = dst_shape.len();
    let mut idx = vec![0usize; rank];
    let mut s = 0usize;
    for _ in 0..numel {
        out.push(src[s]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            s += sstride[ax];
            if idx[ax] < dst_shape[ax] {
                break;
            }
            s -= sstride[ax] * dst_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Permute tensor axes: `out[i0,..] = x[i_perm[0],..]` reordered so that
/// output axis `a` indexes input axis `perm[a]`.
pub fn permute<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let sstrides = strides_of(shape);
    let dst_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let gstride: Vec<usize> = perm.iter().map(|&p| sstrides[p]).collect();
    strided_gather(x, &dst_shape, &gstride)
}

/// Numpy-style right-aligned broadcast of `src_shape` into `dst_shape`.
pub fn broadcast<T: Scalar>(src: &[T], src_shape: &[usize], dst_shape: &[usize]) -> Vec<T> {
    let ld = dst_shape.len();
    let off = ld - src_shape.len();
    let sstrides = strides_of(src_shape);
    let mut gstride = vec![0usize; ld];
    for i in off..ld {
        if src_shape[i - off] != 1 {
            gstride[i] = sstrides[i - off];
        }
    }
    strided_gather(src, dst_shape, &gstride)
}

/// Adjoint of [`broadcast`]: sum `src` (shaped `src_shape`) down to
/// `dst_shape`, which must right-align into it.
pub fn sum_to<T: Scalar>(src: &[T], src_shape: &[usize], dst_shape: &[usize]) -> Vec<T> {
    let ls = src_shape.len();
    let off = ls - dst_shape.len();
    let dstrides = strides_of(dst_shape);
    let mut astride = vec![0usize; ls];
    for i in off..ls {
        if dst_shape[i - off] != 1 {
            astride[i] = dstrides[i - off];
        }
    }
    let numel: usize = src_shape.iter().product();
    let mut out = vec![T::zero(); dst_shape.iter().product()];
    let mut idx = vec![0usize; ls];
    let mut d = 0usize;
    for &v in src.iter().take(numel) {
        out[d] = out[d] + v;
        for ax in (0..ls).rev() {
            idx[ax] += 1;
            d += astride[ax];
            if idx[ax] < src_shape[ax] {
                break;
            }
            d -= astride[ax] * src_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Keep the top-left sample of each `t x t` block.
pub fn downsample<T: Scalar>(x: &[T], n: usize, c: usize, h: usize, w: usize, t: usize) -> Vec<T> {
    let (oh, ow) = (h / t, w / t);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for img in 0..n * c {
        let base = img * h * w;
        for i in 0..oh {
            let row = base + i * t * w;
            for j in 0..ow {
                out.push(x[row + j * t]);
            }
        }
    }
    out
}

/// Adjoint of [`downsample`]: place values at block corners, zeros elsewhere.
pub fn upsample_zero<T: Scalar>(x: &[T], n: usize, c: usize, oh: usize, ow: usize, t: usize) -> Vec<T> {
    let (h, w) = (oh * t, ow * t);
    let mut out = vec![T::zero(); n * c * h * w];
    for img in 0..n * c {
        let base = img * h * w;
        let sbase = img * oh * ow;
        for i in 0..oh {
            let row = base + i * t * w;
            let srow = sbase + i * ow;
            for j in 0..ow {
                out[row + j * t] = x[srow + j];
            }
        }
    }
    out
}

/// Per-channel dense map: `out[n,c,i] = sum_j w[c,i,j] * x[n,c,j]`.
pub fn chan_fc<T: Scalar>(x: &[T], w: &[T], n: usize, c: usize, s: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * c * s);
    for ni in 0..n {
        for ci in 0..c {
            let xrow = &x[(ni * c + ci) * s..(ni * c + ci + 1) * s];
            for i in 0..s {
                let wrow = &w[(ci * s + i) * s..(ci * s + i + 1) * s];
                let mut acc = T::zero();
                for (wv, xv) in wrow.iter().zip(xrow.iter()) {
                    acc = acc + *wv * *xv;
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Batched outer product: `out[c,i,j] = sum_n a[n,c,i] * b[n,c,j]`.
pub fn chan_outer<T: Scalar>(a: &[T], b: &[T], n: usize, c: usize, s: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * s * s];
    for ni in 0..n {
        for ci in 0..c {
            let arow = &a[(ni * c + ci) * s..(ni * c + ci + 1) * s];
            let brow = &b[(ni * c + ci) * s..(ni * c + ci + 1) * s];
            for i in 0..s {
                let av = arow[i];
                let orow = &mut out[(ci * s + i) * s..(ci * s + i + 1) * s];
                for (ov, bv) in orow.iter_mut().zip(brow.iter()) {
                    *ov = *ov + av * *bv;
                }
            }
        }
    }
    out
}

/// Transpose the per-channel matrices of a `[c,s,s]` tensor.
pub fn chan_transpose<T: Scalar>(w: &[T], c: usize, s: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c * s * s];
    for ci in 0..c {
        let base = ci * s * s;
        for i in 0..s {
            for j in 0..s {
                out[base + i * s + j] = w[base + j * s + i];
            }
        }
    }
    out
}
