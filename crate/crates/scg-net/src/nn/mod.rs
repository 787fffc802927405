//! Neural building blocks for the backbone and the graph encoder:
//! 2D convolution, batch normalization, adaptive average pooling,
//! bilinear upsampling, and parameter initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;

use crate::error::Result;
use crate::tensor::Tensor;

mod batchnorm;
mod conv;
mod pool;
mod upsample;

pub use batchnorm::batchnorm;
pub use conv::conv2d;
pub use pool::adaptive_avg_pool;
pub use upsample::bilinear_upsample;

/// Fan-in-scaled uniform draw, bound `sqrt(1 / fan_in)`.
pub fn fan_in_uniform(rng: &mut ChaCha8Rng, fan_in: usize, count: usize) -> Vec<f64> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..count).map(|_| rng.random_range(-bound..bound)).collect()
}

/// 2D convolution parameters: kernel `[out_ch, in_ch, k, k]` plus bias.
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    /// Fan-in-scaled uniform kernel, zero bias. With stride 1, odd k and
    /// padding (k-1)/2 the spatial size is preserved.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = in_ch * k * k;
        let kernel = Tensor::parameter(
            fan_in_uniform(rng, fan_in, out_ch * fan_in),
            &[out_ch, in_ch, k, k],
        )?;
        let bias = Tensor::parameter(vec![0.0; out_ch], &[out_ch])?;
        Ok(ConvParams { kernel, bias, stride, padding })
    }

    /// All-zero kernel and bias, used for the log-sigma head so that the
    /// initial spread is exp(0) = 1.
    pub fn zero_init(in_ch: usize, out_ch: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        let kernel = Tensor::parameter(vec![0.0; out_ch * in_ch * k * k], &[out_ch, in_ch, k, k])?;
        let bias = Tensor::parameter(vec![0.0; out_ch], &[out_ch])?;
        Ok(ConvParams { kernel, bias, stride, padding })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.kernel.numel() + self.bias.numel()
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.kernel"), &mut self.kernel);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Batch normalization state. `scale` and `shift` are trainable; the running
/// statistics are buffers updated in train mode and read in eval mode.
pub struct BatchNormParams {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: RefCell<Vec<f64>>,
    pub running_var: RefCell<Vec<f64>>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNormParams {
            scale: Tensor::parameter(vec![1.0; channels], &[channels])?,
            shift: Tensor::parameter(vec![0.0; channels], &[channels])?,
            running_mean: RefCell::new(vec![0.0; channels]),
            running_var: RefCell::new(vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn channels(&self) -> usize {
        self.scale.numel()
    }

    pub fn param_count(&self) -> usize {
        self.scale.numel() + self.shift.numel()
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.scale"), &mut self.scale);
        f(format!("{prefix}.shift"), &mut self.shift);
    }

    pub fn for_each_buffer(&self, prefix: &str, f: &mut dyn FnMut(String, &RefCell<Vec<f64>>)) {
        f(format!("{prefix}.running_mean"), &self.running_mean);
        f(format!("{prefix}.running_var"), &self.running_var);
    }
}
