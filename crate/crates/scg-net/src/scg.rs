//! Self-constructing graph: learns a weighted adjacency and an auxiliary
//! residual prediction directly from a pooled feature map.
//!
//! Dataflow per sample: pool the feature map to an `h' x w'` node grid,
//! encode the grid into Gaussian parameters (mu, log sigma), draw a latent
//! embedding by reparameterization, decode the adjacency as `relu(Z Z^T)`,
//! then enhance the diagonal with a data-dependent factor gamma and
//! symmetrically normalize. Two regularizers fall out on the way: a KL
//! pull toward the unit Gaussian and a log barrier on the adjacency
//! diagonal.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{adaptive_avg_pool, conv2d, ConvParams};
use crate::tensor::Tensor;
use crate::EPS_NUM;

/// Gaussian encoder output for one sample: mean and log standard deviation,
/// both `[n, c]`. Sigma stays positive by construction (`exp(log_sigma)`).
pub struct GaussianParams {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl GaussianParams {
    pub fn sigma(&self) -> Result<Tensor> {
        self.log_sigma.exp()
    }
}

/// Latent embedding `z`, its deterministic companion `z_hat` and the noise
/// draw that produced `z`. In eval mode the noise is zero and `z = mu`.
pub struct LatentState {
    pub z: Tensor,
    pub z_hat: Tensor,
    pub noise: Tensor,
}

/// Constructed graph for one sample: raw and normalized adjacency, the node
/// features the GCN will propagate, and the adaptive factor.
pub struct GraphState {
    pub a_raw: Tensor,
    pub a_norm: Tensor,
    pub node_features: Tensor,
    pub gamma: Tensor,
    pub n: usize,
}

/// Encoder parameters: a 3x3 same-padded convolution for the mean, a 1x1
/// convolution (zero-initialized) for log sigma.
pub struct ScgParams {
    pub phi: ConvParams,
    pub psi: ConvParams,
}

impl ScgParams {
    pub fn new(feature_dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(ScgParams {
            phi: ConvParams::new(feature_dim, classes, 3, 1, 1, rng)?,
            psi: ConvParams::zero_init(feature_dim, classes, 1, 1, 0)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.phi.out_channels()
    }

    pub fn param_count(&self) -> usize {
        self.phi.param_count() + self.psi.param_count()
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.phi.for_each_param(&format!("{prefix}.phi"), f);
        self.psi.for_each_param(&format!("{prefix}.psi"), f);
    }
}

/// Noise policy for [`scg_forward`]: sample fresh standard normals, reuse
/// fixed per-sample draws (gradient checking), or none (eval).
pub enum SamplingMode<'a> {
    Eval,
    Sample(&'a mut ChaCha8Rng),
    Fixed(&'a [Tensor]),
}

/// Batched output of the SCG module. Losses are averaged over the batch.
pub struct ScgOutput {
    pub graphs: Vec<GraphState>,
    pub residuals: Vec<Tensor>,
    pub kl: Tensor,
    pub dl: Tensor,
}

impl ScgOutput {
    /// `[b, n, n]` view of the raw adjacencies.
    pub fn stacked_a_raw(&self) -> Result<Tensor> {
        let parts: Vec<Tensor> = self.graphs.iter().map(|g| g.a_raw.clone()).collect();
        Tensor::stack0(&parts)
    }

    /// `[b, n, n]` view of the normalized adjacencies.
    pub fn stacked_a_norm(&self) -> Result<Tensor> {
        let parts: Vec<Tensor> = self.graphs.iter().map(|g| g.a_norm.clone()).collect();
        Tensor::stack0(&parts)
    }

    /// `[b, n, d]` view of the node features.
    pub fn stacked_node_features(&self) -> Result<Tensor> {
        let parts: Vec<Tensor> = self.graphs.iter().map(|g| g.node_features.clone()).collect();
        Tensor::stack0(&parts)
    }

    /// `[b, n, c]` view of the residual predictions.
    pub fn stacked_residuals(&self) -> Result<Tensor> {
        Tensor::stack0(&self.residuals)
    }
}

/// Standard-normal draw shaped `[n, c]`, recorded as a constant leaf.
pub fn sample_standard_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(data, shape)
}

/// Pools `x: [b, d, h, w]` to an `h2 x w2` grid and flattens the spatial
/// axes into the node axis: `[b, n, d]` with `n = h2*w2`, features last.
pub fn pool_to_nodes(x: &Tensor, h2: usize, w2: usize) -> Result<Tensor> {
    let pooled = adaptive_avg_pool(x, h2, w2)?;
    let b = pooled.shape()[0];
    let parts: Vec<Tensor> = (0..b)
        .map(|i| nodes_from_pooled(&pooled, i))
        .collect::<Result<_>>()?;
    Tensor::stack0(&parts)
}

/// Sample `i` of a pooled map `[b, d, h2, w2]` as node features `[n, d]`.
fn nodes_from_pooled(pooled: &Tensor, i: usize) -> Result<Tensor> {
    let s = pooled.shape();
    let (d, n) = (s[1], s[2] * s[3]);
    pooled.select0(i)?.reshape(&[d, n])?.transpose()
}

/// Applies the two encoder convolutions to node features `[n, d]` laid back
/// out as an `h2 x w2` grid; returns mean and log sigma, each `[n, c]`.
pub fn encode(x_nodes: &Tensor, params: &ScgParams, h2: usize, w2: usize) -> Result<GaussianParams> {
    let s = x_nodes.shape();
    if s.len() != 2 || s[0] != h2 * w2 {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: s.to_vec(),
            rhs: vec![h2 * w2],
        });
    }
    let (n, d) = (s[0], s[1]);
    let grid = x_nodes.transpose()?.reshape(&[1, d, h2, w2])?;
    let c = params.classes();
    let to_nodes = |t: Tensor| -> Result<Tensor> { t.reshape(&[c, n])?.transpose() };
    let mu = to_nodes(conv2d(&grid, &params.phi)?)?;
    let log_sigma = to_nodes(conv2d(&grid, &params.psi)?)?;
    Ok(GaussianParams { mu, log_sigma })
}

/// `z = mu + sigma * noise` when noise is given, `z = mu` otherwise; the
/// companion embedding is `z_hat = mu * (1 - log_sigma)` in both cases.
/// Gradients reach mu and log_sigma through both embeddings, never the noise.
pub fn reparameterize(g: &GaussianParams, noise: Option<&Tensor>) -> Result<LatentState> {
    let z_hat = g.mu.mul(&g.log_sigma.neg()?.add_scalar(1.0)?)?;
    match noise {
        Some(eps) => {
            if eps.shape() != g.mu.shape() {
                return Err(Error::ShapeMismatch {
                    op: "reparameterize",
                    lhs: g.mu.shape().to_vec(),
                    rhs: eps.shape().to_vec(),
                });
            }
            let noise = eps.detach();
            let z = g.mu.add(&g.sigma()?.mul(&noise)?)?;
            Ok(LatentState { z, z_hat, noise })
        }
        None => Ok(LatentState {
            z: g.mu.clone(),
            z_hat,
            noise: Tensor::zeros(g.mu.shape()),
        }),
    }
}

/// KL divergence to the unit Gaussian:
/// `-(1/2n) * sum(1 + 2*log_sigma - mu^2 - sigma^2)` over all n*c entries.
pub fn kl_loss(g: &GaussianParams) -> Result<Tensor> {
    let n = g.mu.shape()[0];
    let log_var = g.log_sigma.scale(2.0)?;
    let var = log_var.exp()?;
    let terms = log_var.add_scalar(1.0)?.sub(&g.mu.square()?)?.sub(&var)?;
    terms.sum_all()?.scale(-0.5 / n as f64)
}

/// Decoded adjacency `relu(z z^T)`: symmetric and nonnegative.
pub fn decode_adjacency(ls: &LatentState) -> Result<Tensor> {
    ls.z.matmul(&ls.z.transpose()?)?.relu()
}

/// Adaptive factor `gamma = sqrt(1 + n / (trace(a_raw) + eps))`.
pub fn adaptive_gamma(a_raw: &Tensor) -> Result<Tensor> {
    let s = a_raw.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::ShapeMismatch { op: "adaptive_gamma", lhs: s.to_vec(), rhs: vec![] });
    }
    let n = s[0];
    let denom = a_raw.trace()?.add_scalar(EPS_NUM)?;
    Tensor::scalar(n as f64).div(&denom)?.add_scalar(1.0)?.sqrt()
}

/// Diagonal log barrier `-(gamma/n^2) * sum_i log(clamp(a_ii, 0, 1) + eps)`.
/// Gamma acts as a constant weight here (detached); gradients reach the
/// diagonal entries only.
pub fn dl_loss(a_raw: &Tensor, gamma: &Tensor) -> Result<Tensor> {
    let n = a_raw.shape()[0];
    let logs = a_raw.diagonal()?.clamp(0.0, 1.0)?.add_scalar(EPS_NUM)?.log()?;
    logs.sum_all()?
        .mul(&gamma.detach())?
        .scale(-1.0 / (n * n) as f64)
}

/// Diagonal enhancement followed by symmetric normalization:
/// `B = a_raw + gamma*diag(a_raw) + I`, `a_hat = D^{-1/2} B D^{-1/2}` with
/// `D_ii = sum_j B_ij`. Differentiable through both `a_raw` and `gamma`.
pub fn enhance_and_normalize(a_raw: &Tensor, gamma: &Tensor) -> Result<Tensor> {
    let s = a_raw.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::ShapeMismatch {
            op: "enhance_and_normalize",
            lhs: s.to_vec(),
            rhs: vec![],
        });
    }
    let n = s[0];
    let boosted_diag = a_raw.diagonal()?.diag_embed()?.mul(gamma)?;
    let b = a_raw.add(&boosted_diag)?.add(&Tensor::eye(n))?;
    // Row sums stay >= 1 because every B_ii >= 1.
    let deg = b.sum_axes(&[1])?;
    let root_deg = deg.sqrt()?;
    let denom = root_deg.reshape(&[n, 1])?.mul(&root_deg.reshape(&[1, n])?)?;
    // The diagonal goes through B_ii / d_i directly: sqrt(d)^2 can land one
    // ulp under d and push a saturated diagonal entry above 1, while the
    // plain division can never exceed 1 for B_ii <= d_i.
    let mut off_mask = vec![1.0; n * n];
    for i in 0..n {
        off_mask[i * n + i] = 0.0;
    }
    let off = b.div(&denom)?.mul(&Tensor::from_vec(off_mask, &[n, n])?)?;
    let diag = b.diagonal()?.div(&deg)?.diag_embed()?;
    off.add(&diag)
}

/// Residual prediction `y_hat = gamma * z_hat`; gradients flow through both.
pub fn residual_prediction(ls: &LatentState, gamma: &Tensor) -> Result<Tensor> {
    ls.z_hat.mul(gamma)
}

/// Full SCG pass over a batched feature map `[b, d, h, w]`: graph, residual
/// prediction and both regularizers per sample, losses batch-averaged.
pub fn scg_forward(
    x: &Tensor,
    params: &ScgParams,
    h2: usize,
    w2: usize,
    mut sampling: SamplingMode<'_>,
) -> Result<ScgOutput> {
    let pooled = adaptive_avg_pool(x, h2, w2)?;
    let b = pooled.shape()[0];
    let c = params.classes();
    let n = h2 * w2;

    let mut graphs = Vec::with_capacity(b);
    let mut residuals = Vec::with_capacity(b);
    let mut kls = Vec::with_capacity(b);
    let mut dls = Vec::with_capacity(b);
    for i in 0..b {
        let nodes = nodes_from_pooled(&pooled, i)?;
        let gauss = encode(&nodes, params, h2, w2)?;
        let noise = match &mut sampling {
            SamplingMode::Eval => None,
            SamplingMode::Sample(rng) => Some(sample_standard_normal(&[n, c], rng)?),
            SamplingMode::Fixed(tensors) => Some(tensors[i].clone()),
        };
        let latent = reparameterize(&gauss, noise.as_ref())?;
        kls.push(kl_loss(&gauss)?);
        let a_raw = decode_adjacency(&latent)?;
        let gamma = adaptive_gamma(&a_raw)?;
        dls.push(dl_loss(&a_raw, &gamma)?);
        let a_norm = enhance_and_normalize(&a_raw, &gamma)?;
        residuals.push(residual_prediction(&latent, &gamma)?);
        graphs.push(GraphState { a_raw, a_norm, node_features: nodes, gamma, n });
    }
    let kl = Tensor::stack0(&kls)?.mean_all()?;
    let dl = Tensor::stack0(&dls)?.mean_all()?;
    Ok(ScgOutput { graphs, residuals, kl, dl })
}
