//! Forward kernels. Each function is pure and validates its shapes.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution, shared by the forward and backward kernels.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }
}

pub(crate) fn conv_geometry(
    input: &[usize],
    weight: &[usize],
    bias: &[usize],
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    if input.len() != 4 {
        return Err(Error::dim(format!("conv2d input must be [N,Cin,H,W], got {input:?}")));
    }
    if weight.len() != 4 {
        return Err(Error::dim(format!(
            "conv2d weight must be [Cout,Cin,kh,kw], got {weight:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be at least 1".into()));
    }
    let (cin, h, w) = (input[1], input[2], input[3]);
    let (cout, wcin, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
    if wcin != cin {
        return Err(Error::dim(format!(
            "conv2d channel axis: input has Cin={cin}, weight expects Cin={wcin}"
        )));
    }
    if bias != [cout] {
        return Err(Error::dim(format!("conv2d bias axis: expected [{cout}], got {bias:?}")));
    }
    if kh > h + 2 * pad {
        return Err(Error::dim(format!(
            "conv2d height axis: kernel {kh} exceeds padded height {}",
            h + 2 * pad
        )));
    }
    if kw > w + 2 * pad {
        return Err(Error::dim(format!(
            "conv2d width axis: kernel {kw} exceeds padded width {}",
            w + 2 * pad
        )));
    }
    Ok(ConvGeom {
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
    })
}

/// Unfolds one sample [Cin, H, W] into columns laid out as [Cin·kh·kw, OH·OW].
pub(crate) fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let p = g.out_pixels();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto a zeroed [Cin, H, W] sample.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeom, x: &mut [f32]) {
    let p = g.out_pixels();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major single-precision GEMM: `c = alpha·op(a)·op(b) + beta·c`.
/// Transposition is expressed through the strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the debug assertions above describe the bounds every caller upholds;
    // all strides address within the provided slices and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geometry(input.shape(), weight.shape(), bias.shape(), stride, pad)?;
    let n = input.shape()[0];
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * g.out_pixels();
    let mut out = vec![0.0f32; n * out_len];
    let k = g.patch_len();
    let p = g.out_pixels();
    out.par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each_init(
            || vec![0.0f32; k * p],
            |cols, (o, x)| {
                im2col(x, &g, cols);
                gemm(g.cout, k, p, weight.data(), (k, 1), cols, (p, 1), 0.0, o);
                for (co, row) in o.chunks_mut(p).enumerate() {
                    let b = bias.data()[co];
                    row.iter_mut().for_each(|v| *v += b);
                }
            },
        );
    Tensor::new(&[n, g.cout, g.oh, g.ow], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_fn(input.shape(), |i| input.data()[i].max(0.0))
}

/// 2×2 non-overlapping max pool. Also returns, for every output, the flat input
/// index that won (first occurrence on ties, scanning row-major in the window).
pub(crate) fn maxpool2_with_argmax(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::dim(format!("maxpool2 input must be [N,C,H,W], got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("maxpool2 needs even H and W, got H={h}, W={w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, arg))
}

pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    maxpool2_with_argmax(input).map(|(t, _)| t)
}

pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d, k) = linear_dims(input.shape(), weight.shape(), bias.shape())?;
    let mut out = vec![0.0f32; n * k];
    for row in out.chunks_mut(k) {
        row.copy_from_slice(bias.data());
    }
    gemm(n, d, k, input.data(), (d, 1), weight.data(), (1, d), 1.0, &mut out);
    Tensor::new(&[n, k], out)
}

pub(crate) fn linear_dims(input: &[usize], weight: &[usize], bias: &[usize]) -> Result<(usize, usize, usize)> {
    if input.len() != 2 || weight.len() != 2 {
        return Err(Error::dim(format!(
            "linear expects [N,D] input and [K,D] weight, got {input:?} and {weight:?}"
        )));
    }
    if input[1] != weight[1] {
        return Err(Error::dim(format!(
            "linear inner axis: input D={} but weight D={}",
            input[1], weight[1]
        )));
    }
    if bias != [weight[0]] {
        return Err(Error::dim(format!(
            "linear bias: expected [{}], got {bias:?}",
            weight[0]
        )));
    }
    Ok((input[0], input[1], weight[0]))
}

/// Row-wise softmax over the last axis of an [N, C] tensor, max-subtracted.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    if z.rank() != 2 {
        return Err(Error::dim(format!("softmax expects [N,C], got {:?}", z.shape())));
    }
    if z.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    let c = z.shape()[1];
    let mut out = z.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    let t = Tensor::new(z.shape(), out)?;
    t.ensure_finite("softmax")?;
    Ok(t)
}

/// Smallest probability fed to the logarithm of the cross-entropy.
pub const LOG_CLAMP: f32 = 1e-12;

/// Cross-entropy with the 1/|C| class normalisation, averaged over the batch:
/// `-(1/N) Σ_n (1/C) Σ_c y_nc · ln ŷ_nc`.
///
/// Returns the loss and the number of entries whose probability had to be
/// clamped at [`LOG_CLAMP`] at a positive target.
pub fn cross_entropy_loss(y_hat: &Tensor, y: &Tensor) -> Result<(f32, usize)> {
    if y_hat.rank() != 2 || y_hat.shape() != y.shape() {
        return Err(Error::dim(format!(
            "cross entropy expects matching [N,C] tensors, got {:?} and {:?}",
            y_hat.shape(),
            y.shape()
        )));
    }
    let (n, c) = (y_hat.shape()[0], y_hat.shape()[1]);
    let mut total = 0.0f64;
    let mut clamped = 0;
    for (p, t) in y_hat.data().iter().zip(y.data()) {
        if *t != 0.0 {
            if *p < LOG_CLAMP {
                clamped += 1;
            }
            total += f64::from(*t) * f64::from(p.max(LOG_CLAMP)).ln();
        }
    }
    let loss = (-total / (n as f64 * c as f64)) as f32;
    if !loss.is_finite() {
        return Err(Error::Numeric("cross entropy is not finite".into()));
    }
    Ok((loss, clamped))
}

/// Sub-pixel rearrangement: [N, C·r², H, W] → [N, C, H·r, W·r].
pub fn pixel_shuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 || r == 0 || !s[1].is_multiple_of(r * r) {
        return Err(Error::dim(format!(
            "pixel_shuffle by {r} needs [N, C·r², H, W], got {s:?}"
        )));
    }
    let (n, cr, h, w) = (s[0], s[1], s[2], s[3]);
    let c = cr / (r * r);
    let mut out = vec![0.0f32; input.numel()];
    for (src, dst) in shuffle_index_pairs(n, c, h, w, r) {
        out[dst] = input.data()[src];
    }
    Tensor::new(&[n, c, h * r, w * r], out)
}

/// (input index, output index) pairs of the sub-pixel rearrangement.
pub(crate) fn shuffle_index_pairs(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    r: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let (oh, ow) = (h * r, w * r);
    (0..n).flat_map(move |b| {
        (0..c).flat_map(move |ch| {
            (0..r * r).flat_map(move |sub| {
                let (i, j) = (sub / r, sub % r);
                (0..h).flat_map(move |y| {
                    (0..w).map(move |x| {
                        let src = ((b * c * r * r + ch * r * r + sub) * h + y) * w + x;
                        let dst = ((b * c + ch) * oh + y * r + i) * ow + x * r + j;
                        (src, dst)
                    })
                })
            })
        })
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "add: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i]))
}
