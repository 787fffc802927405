//! Adaptive average pooling over the spatial axes.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tensor};

/// Window along one axis for output cell `i`: `floor(i*in/out)` up to
/// `ceil((i+1)*in/out)`.
fn window(i: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = i * input / output;
    let hi = ((i + 1) * input).div_ceil(output);
    (lo, hi)
}

struct AdaptiveAvgPoolOp {
    batch: usize,
    ch: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl CustomOp for AdaptiveAvgPoolOp {
    fn name(&self) -> &'static str {
        "adaptive_avg_pool"
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
                let (y0, y1) = window(i, self.in_h, oh);
                for j in 0..ow {
                    let (x0, x1) = window(j, self.in_w, ow);
                    let share = g_plane[i * ow + j] / ((y1 - y0) * (x1 - x0)) as f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            dst[y * self.in_w + x] += share;
                        }
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Averages `x: [b, ch, h, w]` into an `out_h x out_w` grid; each output
/// cell is the mean of its contiguous input window.
pub fn adaptive_avg_pool(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::ShapeMismatch { op: "adaptive_avg_pool", lhs: xs.to_vec(), rhs: vec![] });
    }
    let (b, ch, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if out_h > h || out_w > w || out_h == 0 || out_w == 0 {
        return Err(Error::PoolOutputTooLarge { out_h, out_w, in_h: h, in_w: w });
    }
    let mut out = vec![0.0; b * ch * out_h * out_w];
    for plane in 0..b * ch {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for i in 0..out_h {
            let (y0, y1) = window(i, h, out_h);
            for j in 0..out_w {
                let (x0, x1) = window(j, w, out_w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[y * w + xx];
                    }
                }
                dst[i * out_w + j] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    let op = AdaptiveAvgPoolOp { batch: b, ch, in_h: h, in_w: w, out_h, out_w };
    Ok(Tensor::from_custom_op(Rc::new(op), vec![x.clone()], out, vec![b, ch, out_h, out_w]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, random_group, FD_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn even_division_averages_blocks() {
        let x = Tensor::from_vec((0..16).map(|v| v as f64).collect(), &[1, 1, 4, 4]).unwrap();
        let y = adaptive_avg_pool(&x, 2, 2).unwrap();
        // block means of [[0..3],[4..7],...]
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn constant_maps_to_constant() {
        let x = Tensor::full(&[2, 3, 5, 7], 0.75);
        let y = adaptive_avg_pool(&x, 2, 3).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::from_vec((0..12).map(|v| v as f64 * 0.5).collect(), &[1, 2, 2, 3]).unwrap();
        let y = adaptive_avg_pool(&x, 2, 3).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn rejects_output_larger_than_input() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            adaptive_avg_pool(&x, 3, 2),
            Err(Error::PoolOutputTooLarge { .. })
        ));
    }

    #[test]
    fn partition_property_recovers_total_sum() {
        // even division: sum(pool * window_area) == sum(input)
        let x = Tensor::from_vec((0..64).map(|v| (v as f64).sin()).collect(), &[1, 1, 8, 8]).unwrap();
        let y = adaptive_avg_pool(&x, 4, 4).unwrap();
        let recovered: f64 = y.data().iter().map(|&v| v * 4.0).sum();
        let total: f64 = x.data().iter().sum();
        assert!((recovered - total).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_group(&mut rng, "x", &[1, 2, 5, 6], -2.0, 2.0);
        let report = check_gradients(&[x], FD_STEP, |leaves| {
            adaptive_avg_pool(&leaves[0], 2, 3)?.square()?.sum_all()
        })
        .unwrap();
        assert!(report[0].1 < 1e-6, "rel err {}", report[0].1);
    }
}
