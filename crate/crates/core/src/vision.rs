//! Compact CNN producing `z_vision` and vision-only logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_head, init_linear, linear, uniform_tensor, Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

pub const IMAGE_SIDE: usize = 64;
pub const POOL: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisionModelConfig {
    pub image_side: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl Default for VisionModelConfig {
    fn default() -> Self {
        Self {
            image_side: IMAGE_SIDE,
            channels: vec![8, 16, 32, 64],
            kernels: vec![5, 3, 3, 3],
            embed_dim: 256,
            num_classes: 3,
        }
    }
}

impl VisionModelConfig {
    /// Spatial side after each conv block.
    pub fn block_sides(&self) -> Result<Vec<usize>> {
        if self.channels.len() != self.kernels.len() || self.channels.is_empty() {
            return Err(Error::Config("vision: channels and kernels must be non-empty and aligned".into()));
        }
        if self.num_classes < 2 || self.embed_dim == 0 {
            return Err(Error::Config("vision: need ≥2 classes and a positive embedding width".into()));
        }
        let mut side = self.image_side;
        let mut sides = Vec::new();
        for &k in &self.kernels {
            if k == 0 || k > side || (side - k + 1) % POOL != 0 {
                return Err(Error::Config(format!(
                    "vision: kernel {k} does not fit side {side} with pooling {POOL}"
                )));
            }
            side = (side - k + 1) / POOL;
            sides.push(side);
        }
        Ok(sides)
    }
}

pub struct VisionOutput<'t, T: Scalar> {
    pub embedding: Var<'t, T>,
    pub logits: Var<'t, T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisionModel<T> {
    pub config: VisionModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> VisionModel<T> {
    pub fn new(config: VisionModelConfig, seed: u64) -> Result<Self> {
        config.block_sides()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut c_in = 1;
        for (b, (&c_out, &k)) in config.channels.iter().zip(&config.kernels).enumerate() {
            // He-uniform for ReLU blocks.
            let fan_in = c_in * k * k;
            let bound = (6.0 / fan_in as f64).sqrt();
            params.insert(format!("conv{b}.weight"), uniform_tensor(&[c_out, c_in, k, k], bound, &mut rng));
            params.insert(format!("conv{b}.bias"), Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        init_linear(&mut params, "projection", c_in, config.embed_dim, &mut rng);
        init_head(&mut params, "classifier", config.embed_dim, config.num_classes, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_params(config: VisionModelConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        crate::morphograph::check_layout(&reference.params, &params)?;
        Ok(Self { config, params })
    }

    /// `images` is `[B×1×S×S]`.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, images: &Tensor<T>) -> Result<VisionOutput<'t, T>> {
        let side = self.config.image_side;
        let [_, c, h, w] = images.dims4("vision_forward")?;
        if c != 1 || h != side || w != side {
            return Err(Error::Dimension {
                op: "vision_forward",
                msg: format!("expected [B×1×{side}×{side}], got {:?}", images.shape()),
            });
        }
        let tape = p.get("classifier.weight")?.tape();
        let mut x = tape.constant(images.clone());
        for b in 0..self.config.channels.len() {
            x = x
                .conv2d(p.get(&format!("conv{b}.weight"))?, 1)?
                .add_channel_bias(p.get(&format!("conv{b}.bias"))?)?
                .relu()
                .maxpool2d(POOL)?;
        }
        let embedding = linear(x.global_avg_pool()?, p, "projection")?;
        let logits = linear(embedding, p, "classifier")?;
        Ok(VisionOutput { embedding, logits })
    }
}
