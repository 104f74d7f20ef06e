//! Forward and backward passes of the individual layers.
//!
//! Image tensors are NCHW. Convolution is cross-correlation with zero
//! padding, lowered to a matrix product over an im2col buffer.

use super::{NnError, Tensor};

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> NnError {
    NnError::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
/// `a` is stored `m x k` (or `k x m` when `ta`), `b` is `k x n` (or `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Geometry of one convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if kernel == 0 || stride == 0 || height + 2 * pad < kernel || width + 2 * pad < kernel {
            return None;
        }
        let out_h = (height + 2 * pad - kernel) / stride + 1;
        let out_w = (width + 2 * pad - kernel) / stride + 1;
        Some(Self { channels, height, width, kernel, stride, pad, out_h, out_w })
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one CHW image into a `(C*k*k) x (OH*OW)` matrix.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let (k, p) = (self.kernel, self.cols());
        for c in 0..self.channels {
            let plane = &img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for i in 0..k {
                for j in 0..k {
                    let row = &mut cols[((c * k + i) * k + j) * p..][..p];
                    for oy in 0..self.out_h {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.out_w..(oy + 1) * self.out_w];
                        if y < 0 || y >= self.height as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[y as usize * self.width..(y as usize + 1) * self.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let x = (ox * self.stride + j) as isize - self.pad as isize;
                            *d = if x < 0 || x >= self.width as isize { 0.0 } else { src[x as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: accumulates columns back into an image.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let (k, p) = (self.kernel, self.cols());
        for c in 0..self.channels {
            let plane = &mut img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for i in 0..k {
                for j in 0..k {
                    let row = &cols[((c * k + i) * k + j) * p..][..p];
                    for oy in 0..self.out_h {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.width..(y as usize + 1) * self.width];
                        for ox in 0..self.out_w {
                            let x = (ox * self.stride + j) as isize - self.pad as isize;
                            if x >= 0 && x < self.width as isize {
                                dst[x as usize] += row[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom, NnError> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 4 || ks.len() != 4 || ks[1] != is[1] || ks[2] != ks[3] {
        return Err(shape_err("conv2d", is, ks));
    }
    if bias.shape() != [ks[0]] {
        return Err(shape_err("conv2d bias", bias.shape(), ks));
    }
    ConvGeom::new(is[1], is[2], is[3], ks[2], stride, pad).ok_or_else(|| {
        NnError::Shape(format!("conv2d: kernel {ks:?} stride {stride} pad {pad} gives empty output for input {is:?}"))
    })
}

/// `out[n,o,y,x] = bias[o] + sum_{c,i,j} in[n,c,y*s-p+i,x*s-p+j] * ker[o,c,i,j]`.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor, NnError> {
    let g = conv_geom(input, kernel, bias, stride, pad)?;
    let (n, o) = (input.shape()[0], kernel.shape()[0]);
    let (rows, p) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(&[n, o, g.out_h, g.out_w]);
    let mut cols = vec![0.0; rows * p];
    for s in 0..n {
        g.im2col(input.outer(s), &mut cols);
        let dst = &mut out.data_mut()[s * o * p..(s + 1) * o * p];
        for (oc, b) in bias.data().iter().enumerate() {
            dst[oc * p..(oc + 1) * p].fill(*b);
        }
        gemm(o, rows, p, kernel.data(), false, &cols, false, 1.0, dst);
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`]: `(d_input, d_kernel, d_bias)`. The
/// input gradient is skipped (returned empty) when `need_input` is false.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
    dout: &Tensor,
    need_input: bool,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let bias_shape = Tensor::zeros(&[kernel.shape()[0]]);
    let g = conv_geom(input, kernel, &bias_shape, stride, pad)?;
    let (n, o) = (input.shape()[0], kernel.shape()[0]);
    if dout.shape() != [n, o, g.out_h, g.out_w] {
        return Err(shape_err("conv2d backward", dout.shape(), &[n, o, g.out_h, g.out_w]));
    }
    let (rows, p) = (g.rows(), g.cols());
    let mut dkernel = Tensor::zeros(kernel.shape());
    let mut dbias = Tensor::zeros(&[o]);
    let mut dinput = if need_input { Tensor::zeros(input.shape()) } else { Tensor::zeros(&[0]) };
    let mut cols = vec![0.0; rows * p];
    let mut dcols = vec![0.0; rows * p];
    let img = g.channels * g.height * g.width;
    for s in 0..n {
        let ds = dout.outer(s);
        for oc in 0..o {
            dbias.data_mut()[oc] += ds[oc * p..(oc + 1) * p].iter().sum::<f64>();
        }
        g.im2col(input.outer(s), &mut cols);
        gemm(o, p, rows, ds, false, &cols, true, 1.0, dkernel.data_mut());
        if need_input {
            gemm(rows, o, p, kernel.data(), true, ds, false, 0.0, &mut dcols);
            g.col2im(&dcols, &mut dinput.data_mut()[s * img..(s + 1) * img]);
        }
    }
    Ok((dinput, dkernel, dbias))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes the upstream gradient where the forward input was positive.
pub fn relu_backward(x: &Tensor, dout: &Tensor) -> Result<Tensor, NnError> {
    if x.shape() != dout.shape() {
        return Err(shape_err("relu backward", x.shape(), dout.shape()));
    }
    let data = x.data().iter().zip(dout.data()).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data)
}

/// Max pooling over `window x window` patches; also returns the flat input
/// index of each selected maximum (first maximum wins ties).
pub fn maxpool_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>), NnError> {
    let s = x.shape();
    if s.len() != 4 || window == 0 || stride == 0 || s[2] < window || s[3] < window {
        return Err(NnError::Shape(format!("maxpool: window {window} stride {stride} invalid for {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base;
                for i in 0..window {
                    for j in 0..window {
                        let idx = base + (oy * stride + i) * w + ox * stride + j;
                        if data[idx] > best {
                            best = data[idx];
                            best_i = idx;
                        }
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                out.data_mut()[o] = best;
                arg[o] = best_i;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], dout: &Tensor) -> Result<Tensor, NnError> {
    if argmax.len() != dout.len() {
        return Err(NnError::Shape("maxpool backward: cache does not match gradient".into()));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &d) in argmax.iter().zip(dout.data()) {
        dx.data_mut()[i] += d;
    }
    Ok(dx)
}

/// NCHW -> NC spatial mean.
pub fn global_avg_pool_forward(x: &Tensor) -> Result<Tensor, NnError> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(NnError::Shape(format!("global_avg_pool expects NCHW, got {s:?}")));
    }
    let hw = s[2] * s[3];
    let data = x.data().chunks(hw).map(|c| c.iter().sum::<f64>() / hw as f64).collect();
    Tensor::from_vec(&[s[0], s[1]], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], dout: &Tensor) -> Result<Tensor, NnError> {
    if input_shape.len() != 4 || dout.shape() != [input_shape[0], input_shape[1]] {
        return Err(shape_err("global_avg_pool backward", input_shape, dout.shape()));
    }
    let hw = input_shape[2] * input_shape[3];
    let data = dout.data().iter().flat_map(|&d| std::iter::repeat_n(d / hw as f64, hw)).collect();
    Tensor::from_vec(input_shape, data)
}

/// `y = x W^T + b` with `x: N x K`, `W: C x K`, `b: C`.
pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bias.shape() != [ws[0]] {
        return Err(shape_err("linear", xs, ws));
    }
    let (n, k, c) = (xs[0], xs[1], ws[0]);
    let mut out = Tensor::zeros(&[n, c]);
    for row in out.data_mut().chunks_mut(c) {
        row.copy_from_slice(bias.data());
    }
    gemm(n, k, c, x.data(), false, weight.data(), true, 1.0, out.data_mut());
    Ok(out)
}

/// `(d_x, d_weight, d_bias)` for [`linear_forward`].
pub fn linear_backward(x: &Tensor, weight: &Tensor, dout: &Tensor) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || dout.shape() != [xs[0], ws[0]] {
        return Err(shape_err("linear backward", xs, dout.shape()));
    }
    let (n, k, c) = (xs[0], xs[1], ws[0]);
    let mut dx = Tensor::zeros(xs);
    gemm(n, c, k, dout.data(), false, weight.data(), false, 0.0, dx.data_mut());
    let mut dw = Tensor::zeros(ws);
    gemm(c, n, k, dout.data(), true, x.data(), false, 0.0, dw.data_mut());
    let mut db = Tensor::zeros(&[c]);
    for row in dout.data().chunks(c) {
        for (b, d) in db.data_mut().iter_mut().zip(row) {
            *b += d;
        }
    }
    Ok((dx, dw, db))
}
