//! Full pipeline: backbone CNN -> self-constructing graph -> 2-layer GCN ->
//! element-wise-sum fusion with the residual prediction -> projection back
//! to per-pixel logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gcn::{gcn_stack, GcnLayerParams};
use crate::nn::{batchnorm, bilinear_upsample, conv2d, BatchNormParams, ConvParams};
use crate::scg::{scg_forward, SamplingMode, ScgOutput, ScgParams};
use crate::tensor::Tensor;
use crate::Mode;

const INIT_STREAM: u64 = 0x0101;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Decorrelated stream seed derived from the run seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Model hyperparameters. `node_h * node_w` is the graph size; the backbone
/// reduces the input by a total stride of 8, so the node grid must fit into
/// `patch_size / 8`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub backbone_widths: Vec<usize>,
    pub patch_size: usize,
    pub node_h: usize,
    pub node_w: usize,
    pub classes: usize,
    pub gcn_hidden: usize,
    pub seed: u64,
    /// Fusion ablation switches; both on by default.
    pub use_gcn: bool,
    pub use_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            backbone_widths: vec![16, 32, 64],
            patch_size: 64,
            node_h: 8,
            node_w: 8,
            classes: 4,
            gcn_hidden: 32,
            seed: 42,
            use_gcn: true,
            use_residual: true,
        }
    }
}

impl ModelConfig {
    pub fn total_stride(&self) -> usize {
        1 << self.backbone_widths.len()
    }

    pub fn nodes(&self) -> usize {
        self.node_h * self.node_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone_widths.is_empty() {
            return Err(Error::Config("backbone_widths must not be empty".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be at least 2".into()));
        }
        if self.nodes() == 0 || self.nodes() > 4096 {
            return Err(Error::Config(format!(
                "node grid {}x{} outside (0, 4096]",
                self.node_h, self.node_w
            )));
        }
        let stride = self.total_stride();
        if self.patch_size % stride != 0 {
            return Err(Error::NotDivisible { size: self.patch_size, stride });
        }
        let feat = self.patch_size / stride;
        if self.node_h > feat || self.node_w > feat {
            return Err(Error::Config(format!(
                "node grid {}x{} exceeds backbone output {feat}x{feat}",
                self.node_h, self.node_w
            )));
        }
        Ok(())
    }
}

/// conv -> batchnorm -> relu
pub struct ConvBlock {
    pub conv: ConvParams,
    pub bn: BatchNormParams,
}

impl ConvBlock {
    fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(ConvBlock {
            conv: ConvParams::new(in_ch, out_ch, 3, stride, 1, rng)?,
            bn: BatchNormParams::new(out_ch)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        batchnorm(&conv2d(x, &self.conv)?, &self.bn, mode)?.relu()
    }

    fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv.for_each_param(&format!("{prefix}.conv"), f);
        self.bn.for_each_param(&format!("{prefix}.bn"), f);
    }

    fn for_each_buffer(&self, prefix: &str, f: &mut dyn FnMut(String, &std::cell::RefCell<Vec<f64>>)) {
        self.bn.for_each_buffer(&format!("{prefix}.bn"), f);
    }
}

/// One backbone stage: a stride-2 downsampling block then a stride-1
/// refinement block.
pub struct BackboneStage {
    pub down: ConvBlock,
    pub refine: ConvBlock,
}

/// Small trainable CNN with total stride `2^stages`.
pub struct Backbone {
    pub stages: Vec<BackboneStage>,
}

impl Backbone {
    pub fn new(input_channels: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut stages = Vec::with_capacity(widths.len());
        let mut in_ch = input_channels;
        for &w in widths {
            stages.push(BackboneStage {
                down: ConvBlock::new(in_ch, w, 2, rng)?,
                refine: ConvBlock::new(w, w, 1, rng)?,
            });
            in_ch = w;
        }
        Ok(Backbone { stages })
    }

    /// Features `[b, d, H/stride, W/stride]`; the input spatial extents must
    /// divide by the total stride.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let stride = 1usize << self.stages.len();
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch { op: "backbone", lhs: s.to_vec(), rhs: vec![] });
        }
        for extent in [s[2], s[3]] {
            if extent % stride != 0 {
                return Err(Error::NotDivisible { size: extent, stride });
            }
        }
        let mut h = x.clone();
        for stage in &self.stages {
            h = stage.refine.forward(&stage.down.forward(&h, mode)?, mode)?;
        }
        Ok(h)
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(0, |s| s.refine.conv.out_channels())
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(|s| s.down.param_count() + s.refine.param_count()).sum()
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.down.for_each_param(&format!("{prefix}.stage{i}.down"), f);
            stage.refine.for_each_param(&format!("{prefix}.stage{i}.refine"), f);
        }
    }

    pub fn for_each_buffer(&self, prefix: &str, f: &mut dyn FnMut(String, &std::cell::RefCell<Vec<f64>>)) {
        for (i, stage) in self.stages.iter().enumerate() {
            stage.down.for_each_buffer(&format!("{prefix}.stage{i}.down"), f);
            stage.refine.for_each_buffer(&format!("{prefix}.stage{i}.refine"), f);
        }
    }
}

/// Output of one model pass. Graphs and residuals stay available for export.
pub struct ModelOutput {
    pub logits: Tensor,
    pub kl: Tensor,
    pub dl: Tensor,
    pub scg: ScgOutput,
}

/// The assembled network.
pub struct ScgNet {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub scg: ScgParams,
    pub gcn_layers: Vec<GcnLayerParams>,
}

impl ScgNet {
    /// Builds the model; initialization is fully determined by the config
    /// seed.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, INIT_STREAM));
        let backbone = Backbone::new(config.input_channels, &config.backbone_widths, &mut rng)?;
        let d = backbone.out_channels();
        let scg = ScgParams::new(d, config.classes, &mut rng)?;
        // ReLU + batch norm only in the first GCN layer.
        let gcn_layers = vec![
            GcnLayerParams::new(d, config.gcn_hidden, true, true, &mut rng)?,
            GcnLayerParams::new(config.gcn_hidden, config.classes, false, false, &mut rng)?,
        ];
        Ok(ScgNet { config: config.clone(), backbone, scg, gcn_layers }.into_checked())
    }

    fn into_checked(self) -> Self {
        debug_assert_eq!(self.gcn_layers.last().map(|l| l.d_out()), Some(self.config.classes));
        self
    }

    /// logits `[b, c, H, W]` plus the two graph regularizers.
    pub fn forward(&self, images: &Tensor, mode: Mode, sampling: SamplingMode<'_>) -> Result<ModelOutput> {
        let (h2, w2) = (self.config.node_h, self.config.node_w);
        let c = self.config.classes;
        let s = images.shape().to_vec();
        let feats = self.backbone.forward(images, mode)?;
        let scg_out = scg_forward(&feats, &self.scg, h2, w2, sampling)?;

        let mut maps = Vec::with_capacity(scg_out.graphs.len());
        for (graph, residual) in scg_out.graphs.iter().zip(&scg_out.residuals) {
            let node_pred = if self.config.use_gcn {
                gcn_stack(&graph.a_norm, &graph.node_features, &self.gcn_layers, mode)?
            } else {
                Tensor::zeros(&[graph.n, c])
            };
            let fused = if self.config.use_residual {
                node_pred.add(residual)?
            } else {
                node_pred
            };
            maps.push(fused.transpose()?.reshape(&[c, h2, w2])?);
        }
        let grid_logits = Tensor::stack0(&maps)?;
        let logits = bilinear_upsample(&grid_logits, s[2], s[3])?;
        Ok(ModelOutput { logits, kl: scg_out.kl.clone(), dl: scg_out.dl.clone(), scg: scg_out })
    }

    pub fn param_count(&self) -> usize {
        self.backbone.param_count()
            + self.scg.param_count()
            + self.gcn_layers.iter().map(|l| l.param_count()).sum::<usize>()
    }

    pub fn for_each_param(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.backbone.for_each_param("backbone", f);
        self.scg.for_each_param("scg", f);
        for (i, layer) in self.gcn_layers.iter_mut().enumerate() {
            layer.for_each_param(&format!("gcn{i}"), f);
        }
    }

    pub fn for_each_buffer(&self, f: &mut dyn FnMut(String, &std::cell::RefCell<Vec<f64>>)) {
        self.backbone.for_each_buffer("backbone", f);
        for (i, layer) in self.gcn_layers.iter().enumerate() {
            layer.for_each_buffer(&format!("gcn{i}"), f);
        }
    }

    /// Replaces every trainable parameter from `leaves`, in visitor order.
    pub fn set_params(&mut self, leaves: &[Tensor]) -> Result<()> {
        let mut idx = 0usize;
        let mut bad = None;
        self.for_each_param(&mut |name, t| {
            if idx >= leaves.len() || leaves[idx].shape() != t.shape() {
                bad.get_or_insert(name);
            } else {
                *t = leaves[idx].clone();
            }
            idx += 1;
        });
        if bad.is_some() || idx != leaves.len() {
            return Err(Error::Config(format!(
                "parameter assignment mismatch at {:?}",
                bad.unwrap_or_else(|| "count".into())
            )));
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param(&mut |_, t| t.zero_grad());
    }
}
