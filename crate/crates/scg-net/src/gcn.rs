//! Graph convolution layers and binary-adjacency normalization.
//!
//! One layer computes `act(BN?(a_hat * x * theta))`; a stack chains layers.
//! The first layer of the model uses ReLU and batch normalization, the
//! second neither.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{batchnorm, fan_in_uniform, BatchNormParams};
use crate::tensor::Tensor;
use crate::Mode;

/// One graph-convolution layer: weight `[d_in, d_out]` plus the
/// activation/normalization switches.
pub struct GcnLayerParams {
    pub theta: Tensor,
    pub use_relu: bool,
    pub use_batchnorm: bool,
    pub bn: Option<BatchNormParams>,
}

impl GcnLayerParams {
    pub fn new(
        d_in: usize,
        d_out: usize,
        use_relu: bool,
        use_batchnorm: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let theta = Tensor::parameter(fan_in_uniform(rng, d_in, d_in * d_out), &[d_in, d_out])?;
        let bn = if use_batchnorm { Some(BatchNormParams::new(d_out)?) } else { None };
        Ok(GcnLayerParams { theta, use_relu, use_batchnorm, bn })
    }

    pub fn d_in(&self) -> usize {
        self.theta.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.theta.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.theta.numel() + self.bn.as_ref().map_or(0, |bn| bn.param_count())
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.theta"), &mut self.theta);
        if let Some(bn) = self.bn.as_mut() {
            bn.for_each_param(&format!("{prefix}.bn"), f);
        }
    }

    pub fn for_each_buffer(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(String, &std::cell::RefCell<Vec<f64>>),
    ) {
        if let Some(bn) = self.bn.as_ref() {
            bn.for_each_buffer(&format!("{prefix}.bn"), f);
        }
    }
}

/// Symmetric normalization with self-loops:
/// `a_hat = D^{-1/2} (A + I) D^{-1/2}`, `D_ii = sum_j (A + I)_ij`.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::ShapeMismatch { op: "normalize_adjacency", lhs: s.to_vec(), rhs: vec![] });
    }
    let n = s[0];
    let with_loops = a.add(&Tensor::eye(n))?;
    let root_deg = with_loops.sum_axes(&[1])?.sqrt()?;
    let denom = root_deg.reshape(&[n, 1])?.mul(&root_deg.reshape(&[1, n])?)?;
    with_loops.div(&denom)
}

/// One message-passing step over `a_hat` for node features `x: [n, d_in]`.
/// Batch normalization, when enabled, treats the node axis as the batch.
pub fn gcn_layer(a_hat: &Tensor, x: &Tensor, p: &GcnLayerParams, mode: Mode) -> Result<Tensor> {
    let mut z = a_hat.matmul(x)?.matmul(&p.theta)?;
    if p.use_batchnorm {
        let bn = p.bn.as_ref().ok_or(Error::ShapeMismatch {
            op: "gcn_layer",
            lhs: vec![],
            rhs: vec![],
        })?;
        let n = z.shape()[0];
        let d = z.shape()[1];
        z = batchnorm(&z.reshape(&[n, d, 1, 1])?, bn, mode)?.reshape(&[n, d])?;
    }
    if p.use_relu {
        z = z.relu()?;
    }
    Ok(z)
}

/// Sequential application of [`gcn_layer`]; an empty stack is the identity.
pub fn gcn_stack(a_hat: &Tensor, x: &Tensor, layers: &[GcnLayerParams], mode: Mode) -> Result<Tensor> {
    let mut h = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        if h.shape()[1] != layer.d_in() {
            return Err(Error::DimensionChain {
                layer: i,
                expected: layer.d_in(),
                got: h.shape()[1],
            });
        }
        h = gcn_layer(a_hat, &h, layer, mode)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, random_group, FD_STEP};
    use rand::SeedableRng;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    fn plain_layer(theta: Tensor) -> GcnLayerParams {
        GcnLayerParams { theta, use_relu: false, use_batchnorm: false, bn: None }
    }

    #[test]
    fn normalize_zero_adjacency_is_identity() {
        let a = Tensor::zeros(&[3, 3]);
        assert_eq!(normalize_adjacency(&a).unwrap().data(), Tensor::eye(3).data());
    }

    #[test]
    fn normalize_two_node_path_hand_value() {
        let a = t(&[0.0, 1.0, 1.0, 0.0], &[2, 2]);
        let a_hat = normalize_adjacency(&a).unwrap();
        for &v in a_hat.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_keeps_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let raw = crate::scg::sample_standard_normal(&[5, 5], &mut rng).unwrap();
            let sym = raw.add(&raw.transpose().unwrap()).unwrap().relu().unwrap();
            let a_hat = normalize_adjacency(&sym).unwrap();
            let d = a_hat.data();
            for i in 0..5 {
                for j in 0..5 {
                    assert!((d[i * 5 + j] - d[j * 5 + i]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn layer_identity_propagation() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let layer = plain_layer(Tensor::eye(2));
        let out = gcn_layer(&Tensor::eye(2), &x, &layer, Mode::Eval).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn layer_uniform_adjacency_averages_rows() {
        let x = t(&[1.0, 10.0, 3.0, 20.0], &[2, 2]);
        let avg = Tensor::full(&[2, 2], 0.5);
        let layer = plain_layer(Tensor::eye(2));
        let out = gcn_layer(&avg, &x, &layer, Mode::Eval).unwrap();
        assert_eq!(out.data(), &[2.0, 15.0, 2.0, 15.0]);
    }

    #[test]
    fn layer_is_linear_in_x_without_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = {
            let raw = crate::scg::sample_standard_normal(&[3, 3], &mut rng).unwrap();
            normalize_adjacency(&raw.add(&raw.transpose().unwrap()).unwrap().relu().unwrap()).unwrap()
        };
        let theta = crate::scg::sample_standard_normal(&[2, 2], &mut rng).unwrap();
        let layer = plain_layer(theta);
        let x1 = crate::scg::sample_standard_normal(&[3, 2], &mut rng).unwrap();
        let x2 = crate::scg::sample_standard_normal(&[3, 2], &mut rng).unwrap();
        let lhs = gcn_layer(&a, &x1.add(&x2).unwrap(), &layer, Mode::Eval).unwrap();
        let rhs = gcn_layer(&a, &x1, &layer, Mode::Eval)
            .unwrap()
            .add(&gcn_layer(&a, &x2, &layer, Mode::Eval).unwrap())
            .unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_stack_is_identity() {
        let x = t(&[1.0, 2.0], &[1, 2]);
        let out = gcn_stack(&Tensor::eye(1), &x, &[], Mode::Eval).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn two_identity_layers_pass_through() {
        let x = t(&[1.0, -2.0, 0.5, 3.0], &[2, 2]);
        let layers = vec![plain_layer(Tensor::eye(2)), plain_layer(Tensor::eye(2))];
        let out = gcn_stack(&Tensor::eye(2), &x, &layers, Mode::Eval).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn stack_matches_brute_force_on_path_graph() {
        // 4-node path graph, two plain layers: the stack must equal the
        // explicitly multiplied-out dense expression a*(a*x*t1)*t2.
        let mut adj = vec![0.0; 16];
        for i in 0..3 {
            adj[i * 4 + i + 1] = 1.0;
            adj[(i + 1) * 4 + i] = 1.0;
        }
        let a_hat = normalize_adjacency(&t(&adj, &[4, 4])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = crate::scg::sample_standard_normal(&[4, 3], &mut rng).unwrap();
        let t1 = crate::scg::sample_standard_normal(&[3, 3], &mut rng).unwrap();
        let t2 = crate::scg::sample_standard_normal(&[3, 2], &mut rng).unwrap();
        let layers = vec![plain_layer(t1.clone()), plain_layer(t2.clone())];
        let fast = gcn_stack(&a_hat, &x, &layers, Mode::Eval).unwrap();
        let brute = a_hat
            .matmul(&a_hat.matmul(&x).unwrap().matmul(&t1).unwrap())
            .unwrap()
            .matmul(&t2)
            .unwrap();
        for (f, b) in fast.data().iter().zip(brute.data()) {
            assert!((f - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_chain_error() {
        let x = t(&[1.0, 2.0], &[1, 2]);
        let layers = vec![plain_layer(Tensor::eye(3))];
        match gcn_stack(&Tensor::eye(1), &x, &layers, Mode::Eval) {
            Err(Error::DimensionChain { layer, expected, got }) => {
                assert_eq!((layer, expected, got), (0, 3, 2));
            }
            other => panic!("expected dimension-chain error, got {other:?}"),
        }
    }

    #[test]
    fn permutation_equivariance() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 6;
        for _ in 0..20 {
            let raw = crate::scg::sample_standard_normal(&[n, n], &mut rng).unwrap();
            let a = normalize_adjacency(&raw.add(&raw.transpose().unwrap()).unwrap().relu().unwrap())
                .unwrap();
            let x = crate::scg::sample_standard_normal(&[n, 3], &mut rng).unwrap();
            let theta = crate::scg::sample_standard_normal(&[3, 2], &mut rng).unwrap();
            let layer = plain_layer(theta);

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut p = vec![0.0; n * n];
            for (row, &src) in perm.iter().enumerate() {
                p[row * n + src] = 1.0;
            }
            let p = t(&p, &[n, n]);

            let pa = p.matmul(&a).unwrap().matmul(&p.transpose().unwrap()).unwrap();
            let px = p.matmul(&x).unwrap();
            let lhs = gcn_layer(&pa, &px, &layer, Mode::Eval).unwrap();
            let rhs = p.matmul(&gcn_layer(&a, &x, &layer, Mode::Eval).unwrap()).unwrap();
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                assert!((l - r).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn spectral_radius_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let raw = crate::scg::sample_standard_normal(&[5, 5], &mut rng).unwrap();
            let sym = raw.add(&raw.transpose().unwrap()).unwrap().relu().unwrap();
            let a_hat = normalize_adjacency(&sym).unwrap();
            let mut v = crate::scg::sample_standard_normal(&[5, 1], &mut rng).unwrap();
            let mut radius = 0.0;
            for _ in 0..200 {
                let next = a_hat.matmul(&v).unwrap();
                let norm = next.square().unwrap().sum_all().unwrap().item().sqrt();
                if norm < 1e-30 {
                    radius = 0.0;
                    break;
                }
                radius = norm
                    / v.square().unwrap().sum_all().unwrap().item().sqrt();
                v = next.scale(1.0 / norm).unwrap();
            }
            assert!(radius <= 1.0 + 1e-8, "spectral radius {radius}");
        }
    }

    #[test]
    fn joint_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = random_group(&mut rng, "a_hat", &[3, 3], 0.0, 1.0);
        let x = random_group(&mut rng, "x", &[3, 4], -2.0, 2.0);
        let theta = random_group(&mut rng, "theta", &[4, 2], -1.0, 1.0);
        let report = check_gradients(&[a, x, theta], FD_STEP, |leaves| {
            let layer = GcnLayerParams {
                theta: leaves[2].clone(),
                use_relu: false,
                use_batchnorm: false,
                bn: None,
            };
            gcn_layer(&leaves[0], &leaves[1], &layer, Mode::Eval)?.square()?.sum_all()
        })
        .unwrap();
        for (name, err) in &report {
            assert!(*err < 1e-6, "{name}: rel err {err}");
        }
    }
}
