//! 2D cross-correlation via im2col and a dense matrix product.

use std::rc::Rc;

use super::ConvParams;
use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tensor};

struct Conv2dOp {
    batch: usize,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    /// Saved im2col matrix, `[in_ch*kh*kw, batch*out_h*out_w]`.
    cols: Vec<f64>,
}

fn im2col(
    x: &[f64],
    (b, ci, h, w): (usize, usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    padding: usize,
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let rows = ci * kh * kw;
    let ncols = b * oh * ow;
    let mut cols = vec![0.0; rows * ncols];
    for bi in 0..b {
        for c in 0..ci {
            let plane = &x[(bi * ci + c) * h * w..(bi * ci + c + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (c * kh + ky) * kw + kx;
                    let out_base = row * ncols + bi * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols[out_base + oy * ow + ox] = plane[iy * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    dcols: &[f64],
    (b, ci, h, w): (usize, usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    padding: usize,
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let ncols = b * oh * ow;
    let mut dx = vec![0.0; b * ci * h * w];
    for bi in 0..b {
        for c in 0..ci {
            let plane = &mut dx[(bi * ci + c) * h * w..(bi * ci + c + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (c * kh + ky) * kw + kx;
                    let src_base = row * ncols + bi * oh * ow;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            plane[iy * w + ix as usize] += dcols[src_base + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

impl CustomOp for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, grad_out: &[f64], inputs: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (b, oh, ow) = (self.batch, self.out_h, self.out_w);
        let rows = self.in_ch * self.kh * self.kw;
        let ncols = b * oh * ow;

        // [b, co, oh, ow] -> [co, b*oh*ow]
        let mut g_mat = vec![0.0; self.out_ch * ncols];
        for bi in 0..b {
            for o in 0..self.out_ch {
                let src = &grad_out[(bi * self.out_ch + o) * oh * ow..(bi * self.out_ch + o + 1) * oh * ow];
                g_mat[o * ncols + bi * oh * ow..o * ncols + (bi + 1) * oh * ow].copy_from_slice(src);
            }
        }

        let dx = needs[0].then(|| {
            let kernel = inputs[1].data();
            let dcols = crate::tensor::matmul_tn_raw(kernel, &g_mat, self.out_ch, rows, ncols);
            col2im(
                &dcols,
                (b, self.in_ch, self.in_h, self.in_w),
                (self.kh, self.kw),
                self.stride,
                self.padding,
                (oh, ow),
            )
        });
        let dkernel = needs[1].then(|| crate::tensor::matmul_nt_raw(&g_mat, &self.cols, self.out_ch, ncols, rows));
        let dbias = needs[2].then(|| {
            (0..self.out_ch)
                .map(|o| g_mat[o * ncols..(o + 1) * ncols].iter().sum())
                .collect()
        });
        vec![dx, dkernel, dbias]
    }
}

/// Cross-correlation of `x: [b, in_ch, h, w]` with `p.kernel`, plus bias.
/// Differentiable with respect to the input, the kernel and the bias.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::ShapeMismatch { op: "conv2d", lhs: xs.to_vec(), rhs: vec![] });
    }
    let (b, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let ks = p.kernel.shape();
    let (co, kci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if ci != kci {
        return Err(Error::ChannelMismatch { input: ci, expected: kci });
    }
    if h + 2 * p.padding < kh || w + 2 * p.padding < kw {
        return Err(Error::ShapeMismatch { op: "conv2d", lhs: vec![h, w], rhs: vec![kh, kw] });
    }
    let oh = (h + 2 * p.padding - kh) / p.stride + 1;
    let ow = (w + 2 * p.padding - kw) / p.stride + 1;

    let cols = im2col(x.data(), (b, ci, h, w), (kh, kw), p.stride, p.padding, (oh, ow));
    let rows = ci * kh * kw;
    let ncols = b * oh * ow;
    let out_mat = crate::tensor::matmul_nn_raw(p.kernel.data(), &cols, co, rows, ncols);

    // [co, b*oh*ow] -> [b, co, oh, ow], adding bias per output channel.
    let bias = p.bias.data();
    let mut out = vec![0.0; b * co * oh * ow];
    for bi in 0..b {
        for o in 0..co {
            let dst = &mut out[(bi * co + o) * oh * ow..(bi * co + o + 1) * oh * ow];
            let src = &out_mat[o * ncols + bi * oh * ow..o * ncols + (bi + 1) * oh * ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bias[o];
            }
        }
    }

    let op = Conv2dOp {
        batch: b,
        in_ch: ci,
        in_h: h,
        in_w: w,
        out_ch: co,
        kh,
        kw,
        stride: p.stride,
        padding: p.padding,
        out_h: oh,
        out_w: ow,
        cols,
    };
    Ok(Tensor::from_custom_op(
        Rc::new(op),
        vec![x.clone(), p.kernel.clone(), p.bias.clone()],
        out,
        vec![b, co, oh, ow],
    ))
}
