//! Bilinear upsampling, align-corners = false.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tensor};

/// Source coordinates and weights for one output index.
fn taps(i: usize, input: usize, output: usize) -> (usize, usize, f64, f64) {
    let scale = input as f64 / output as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(input - 1);
    let hi = (lo + 1).min(input - 1);
    let frac = src - lo as f64;
    (lo, hi, 1.0 - frac, frac)
}

struct BilinearUpsampleOp {
    batch: usize,
    ch: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl CustomOp for BilinearUpsampleOp {
    fn name(&self) -> &'static str {
        "bilinear_upsample"
    }

    fn backward(&self, grad_out: &[f64], inputs: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        if !needs[0] {
            return vec![None];
        }
        let _ = inputs;
        let (oh, ow) = (self.out_h, self.out_w);
        let mut dx = vec![0.0; self.batch * self.ch * self.in_h * self.in_w];
        for plane in 0..self.batch * self.ch {
            let g_plane = &grad_out[plane * oh * ow..(plane + 1) * oh * ow];
            let dst = &mut dx[plane * self.in_h * self.in_w..(plane + 1) * self.in_h * self.in_w];
            for i in 0..oh {
                let (y0, y1, wy0, wy1) = taps(i, self.in_h, oh);
                for j in 0..ow {
                    let (x0, x1, wx0, wx1) = taps(j, self.in_w, ow);
                    let g = g_plane[i * ow + j];
                    dst[y0 * self.in_w + x0] += g * wy0 * wx0;
                    dst[y0 * self.in_w + x1] += g * wy0 * wx1;
                    dst[y1 * self.in_w + x0] += g * wy1 * wx0;
                    dst[y1 * self.in_w + x1] += g * wy1 * wx1;
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Upsamples `x: [b, ch, h, w]` to `out_h x out_w` by bilinear interpolation.
pub fn bilinear_upsample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::ShapeMismatch { op: "bilinear_upsample", lhs: xs.to_vec(), rhs: vec![] });
    }
    let (b, ch, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if out_h < h || out_w < w {
        return Err(Error::DownscaleRequested { out_h, out_w, in_h: h, in_w: w });
    }
    let mut out = vec![0.0; b * ch * out_h * out_w];
    for plane in 0..b * ch {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for i in 0..out_h {
            let (y0, y1, wy0, wy1) = taps(i, h, out_h);
            for j in 0..out_w {
                let (x0, x1, wx0, wx1) = taps(j, w, out_w);
                dst[i * out_w + j] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                    + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
            }
        }
    }
    let op = BilinearUpsampleOp { batch: b, ch, in_h: h, in_w: w, out_h, out_w };
    Ok(Tensor::from_custom_op(Rc::new(op), vec![x.clone()], out, vec![b, ch, out_h, out_w]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, random_group, FD_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(&[1, 2, 3, 3], -1.25);
        let y = bilinear_upsample(&x, 7, 9).unwrap();
        assert_eq!(y.shape(), &[1, 2, 7, 9]);
        assert!(y.data().iter().all(|&v| (v + 1.25).abs() < 1e-12));
    }

    #[test]
    fn one_by_one_fills() {
        let x = Tensor::from_vec(vec![3.5], &[1, 1, 1, 1]).unwrap();
        let y = bilinear_upsample(&x, 4, 5).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::from_vec((0..12).map(|v| v as f64).collect(), &[1, 1, 3, 4]).unwrap();
        let y = bilinear_upsample(&x, 3, 4).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn rejects_downscale() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(matches!(
            bilinear_upsample(&x, 2, 4),
            Err(Error::DownscaleRequested { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_group(&mut rng, "x", &[1, 2, 3, 4], -2.0, 2.0);
        let report = check_gradients(&[x], FD_STEP, |leaves| {
            bilinear_upsample(&leaves[0], 7, 6)?.square()?.sum_all()
        })
        .unwrap();
        assert!(report[0].1 < 1e-6, "rel err {}", report[0].1);
    }
}
