//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the tape's backward rules it is used to verify. Checks
//! run at 64-bit with step 1e-5; errors are elementwise relative:
//! `|a - n| / max(1, |a|, |n|)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// One named parameter group to differentiate against.
#[derive(Clone)]
pub struct ParamGroup {
    pub name: String,
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl ParamGroup {
    pub fn new(name: &str, data: Vec<f64>, shape: &[usize]) -> Self {
        ParamGroup { name: name.into(), data, shape: shape.to_vec() }
    }
}

/// Result of one gradient check: worst relative error per parameter group.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub scope: String,
    pub tolerance: f64,
    pub groups: Vec<(String, f64)>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0_f64.max(a.abs()).max(n.abs())
}

/// Compares tape gradients of `build` against central finite differences.
///
/// `build` must reconstruct the scalar loss from the given leaves on every
/// call; the first leaf vector carries `requires_grad`, the perturbed
/// re-evaluations use plain constants.
pub fn check_gradients(
    groups: &[ParamGroup],
    step: f64,
    build: impl Fn(&[Tensor]) -> Result<Tensor>,
) -> Result<Vec<(String, f64)>> {
    let leaves: Vec<Tensor> = groups
        .iter()
        .map(|g| Tensor::parameter(g.data.clone(), &g.shape))
        .collect::<Result<_>>()?;
    let loss = build(&leaves)?;
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss { elements: loss.numel() });
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|l| l.grad_or_zeros()).collect();

    let eval_at = |datas: &[Vec<f64>]| -> Result<f64> {
        let consts: Vec<Tensor> = datas
            .iter()
            .zip(groups)
            .map(|(d, g)| Tensor::from_vec(d.clone(), &g.shape))
            .collect::<Result<_>>()?;
        Ok(build(&consts)?.item())
    };

    let mut datas: Vec<Vec<f64>> = groups.iter().map(|g| g.data.clone()).collect();
    let mut report = Vec::with_capacity(groups.len());
    for gi in 0..groups.len() {
        let mut worst = 0.0f64;
        for ei in 0..groups[gi].data.len() {
            let orig = datas[gi][ei];
            datas[gi][ei] = orig + step;
            let plus = eval_at(&datas)?;
            datas[gi][ei] = orig - step;
            let minus = eval_at(&datas)?;
            datas[gi][ei] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(rel_err(analytic[gi][ei], numeric));
        }
        report.push((groups[gi].name.clone(), worst));
    }
    Ok(report)
}

/// Uniform draw in `[lo, hi)` shaped into a parameter group.
pub fn random_group(
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: &[usize],
    lo: f64,
    hi: f64,
) -> ParamGroup {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.random_range(lo..hi)).collect();
    ParamGroup::new(name, data, shape)
}

mod registry;
pub use registry::{registered_scopes, run_all, run_scope, CheckCase};
