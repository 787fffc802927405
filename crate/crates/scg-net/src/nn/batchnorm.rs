//! Batch normalization over `[b, ch, h, w]` with per-channel statistics.

use std::rc::Rc;

use super::BatchNormParams;
use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tensor};
use crate::Mode;

struct BatchNormOp {
    mode: Mode,
    ch: usize,
    /// Elements per channel (b*h*w).
    n: usize,
    /// Normalized activations, saved for both grad and scale/shift grads.
    x_hat: Vec<f64>,
    /// Per-channel 1/sqrt(var + eps) for the statistics actually used.
    inv_std: Vec<f64>,
    batch: usize,
    h: usize,
    w: usize,
}

impl BatchNormOp {
    fn channel_indices<'a>(&'a self, c: usize) -> impl Iterator<Item = usize> + 'a {
        let plane = self.h * self.w;
        let ch = self.ch;
        (0..self.batch).flat_map(move |bi| {
            let base = (bi * ch + c) * plane;
            base..base + plane
        })
    }
}

impl CustomOp for BatchNormOp {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, grad_out: &[f64], inputs: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let scale = inputs[1].data();
        let n = self.n as f64;

        let mut dx = needs[0].then(|| vec![0.0; grad_out.len()]);
        let mut dscale = needs[1].then(|| vec![0.0; self.ch]);
        let mut dshift = needs[2].then(|| vec![0.0; self.ch]);

        for c in 0..self.ch {
            let mut sum_g = 0.0;
            let mut sum_g_xhat = 0.0;
            for idx in self.channel_indices(c) {
                sum_g += grad_out[idx];
                sum_g_xhat += grad_out[idx] * self.x_hat[idx];
            }
            if let Some(ds) = dscale.as_mut() {
                ds[c] = sum_g_xhat;
            }
            if let Some(db) = dshift.as_mut() {
                db[c] = sum_g;
            }
            if let Some(dx) = dx.as_mut() {
                let k = scale[c] * self.inv_std[c];
                match self.mode {
                    // Batch statistics depend on x, so the mean/variance
                    // paths feed back into dx.
                    Mode::Train => {
                        for idx in self.channel_indices(c) {
                            dx[idx] = k / n
                                * (n * grad_out[idx] - sum_g - self.x_hat[idx] * sum_g_xhat);
                        }
                    }
                    // Running statistics are constants here.
                    Mode::Eval => {
                        for idx in self.channel_indices(c) {
                            dx[idx] = k * grad_out[idx];
                        }
                    }
                }
            }
        }
        vec![dx, dscale, dshift]
    }
}

/// Train mode normalizes with batch statistics (variance epsilon from `p`)
/// and updates the running statistics; eval mode uses the running
/// statistics only.
pub fn batchnorm(x: &Tensor, p: &BatchNormParams, mode: Mode) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 4 || xs[1] != p.channels() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm",
            lhs: xs.to_vec(),
            rhs: vec![p.channels()],
        });
    }
    let (b, ch, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let n = b * h * w;
    let plane = h * w;
    let data = x.data();

    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; ch];
            let mut var = vec![0.0; ch];
            for c in 0..ch {
                let mut acc = 0.0;
                for bi in 0..b {
                    let base = (bi * ch + c) * plane;
                    acc += data[base..base + plane].iter().sum::<f64>();
                }
                mean[c] = acc / n as f64;
                let mut sq = 0.0;
                for bi in 0..b {
                    let base = (bi * ch + c) * plane;
                    for &v in &data[base..base + plane] {
                        let d = v - mean[c];
                        sq += d * d;
                    }
                }
                var[c] = sq / n as f64;
            }
            // Running update uses the unbiased variance when possible.
            let m = p.momentum;
            let mut rm = p.running_mean.borrow_mut();
            let mut rv = p.running_var.borrow_mut();
            for c in 0..ch {
                let unbiased = if n > 1 { var[c] * n as f64 / (n - 1) as f64 } else { var[c] };
                rm[c] = (1.0 - m) * rm[c] + m * mean[c];
                rv[c] = (1.0 - m) * rv[c] + m * unbiased;
            }
            (mean, var)
        }
        Mode::Eval => (p.running_mean.borrow().clone(), p.running_var.borrow().clone()),
    };

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + p.eps).sqrt()).collect();
    let scale = p.scale.data();
    let shift = p.shift.data();
    let mut x_hat = vec![0.0; data.len()];
    let mut out = vec![0.0; data.len()];
    for bi in 0..b {
        for c in 0..ch {
            let base = (bi * ch + c) * plane;
            for i in base..base + plane {
                let xh = (data[i] - mean[c]) * inv_std[c];
                x_hat[i] = xh;
                out[i] = scale[c] * xh + shift[c];
            }
        }
    }

    let op = BatchNormOp { mode, ch, n, x_hat, inv_std, batch: b, h, w };
    Ok(Tensor::from_custom_op(
        Rc::new(op),
        vec![x.clone(), p.scale.clone(), p.shift.clone()],
        out,
        xs.to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, random_group, ParamGroup, FD_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_normalizes_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_vec(
            crate::nn::fan_in_uniform(&mut rng, 1, 2 * 3 * 4 * 4),
            &[2, 3, 4, 4],
        )
        .unwrap();
        let p = BatchNormParams::new(3).unwrap();
        let y = batchnorm(&x, &p, Mode::Train).unwrap();
        for c in 0..3 {
            let mut vals = Vec::new();
            for bi in 0..2 {
                let base = (bi * 3 + c) * 16;
                vals.extend_from_slice(&y.data()[base..base + 16]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
        }
    }

    #[test]
    fn eval_identity_with_unit_running_stats() {
        let x = Tensor::from_vec(vec![0.5, -1.0, 2.0, 0.0], &[1, 1, 2, 2]).unwrap();
        let p = BatchNormParams::new(1).unwrap();
        let y = batchnorm(&x, &p, Mode::Eval).unwrap();
        // identity up to the variance epsilon: scale 1/sqrt(1 + 1e-5)
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 2e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn train_updates_running_stats_eval_does_not() {
        let x = Tensor::from_vec(vec![10.0, 12.0, 14.0, 16.0], &[1, 1, 2, 2]).unwrap();
        let p = BatchNormParams::new(1).unwrap();
        batchnorm(&x, &p, Mode::Train).unwrap();
        let rm = p.running_mean.borrow()[0];
        assert!((rm - 1.3).abs() < 1e-12, "running mean {rm}");
        let rv = p.running_var.borrow()[0];
        batchnorm(&x, &p, Mode::Eval).unwrap();
        assert_eq!(p.running_mean.borrow()[0], rm);
        assert_eq!(p.running_var.borrow()[0], rv);
    }

    #[test]
    fn gradient_matches_finite_differences_batch_stats_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_group(&mut rng, "x", &[2, 2, 3, 3], -2.0, 2.0);
        let scale = ParamGroup::new("scale", vec![1.2, 0.7], &[2]);
        let shift = ParamGroup::new("shift", vec![0.1, -0.4], &[2]);
        let report = check_gradients(&[x, scale, shift], FD_STEP, |leaves| {
            let p = BatchNormParams {
                scale: leaves[1].clone(),
                shift: leaves[2].clone(),
                running_mean: std::cell::RefCell::new(vec![0.0; 2]),
                running_var: std::cell::RefCell::new(vec![1.0; 2]),
                momentum: 0.1,
                eps: 1e-5,
            };
            batchnorm(&leaves[0], &p, Mode::Train)?.square()?.sum_all()
        })
        .unwrap();
        for (name, err) in &report {
            assert!(*err < 1e-6, "{name}: rel err {err}");
        }
    }
}
