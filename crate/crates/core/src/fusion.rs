//! Translation head, fusion head and the alignment objectives.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_head, init_mlp2, linear, mlp2, Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Classic,
    Mim,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Classic => "classic",
            FusionMode::Mim => "mim",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(FusionMode::Classic),
            "mim" => Ok(FusionMode::Mim),
            other => Err(Error::Config(format!("unknown fusion mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MimConfig {
    pub temperature: f64,
    pub lambda_ce: f64,
    pub lambda_info: f64,
    /// Schedule horizon `E` of the mask ratio, in optimizer steps.
    pub total_steps: usize,
}

impl Default for MimConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            lambda_ce: 0.8,
            lambda_info: 0.2,
            total_steps: 1500,
        }
    }
}

/// `r(e) = max(0, 1 − e/E)`.
pub fn mask_ratio(step: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Contract("mask_ratio: total steps must be ≥ 1".into()));
    }
    Ok((1.0 - step as f64 / total_steps as f64).max(0.0))
}

/// `r·z_graph + (1−r)·z_trans`.
pub fn combined_embedding<'t, T: Scalar>(z_graph: Var<'t, T>, z_trans: Var<'t, T>, r: f64) -> Result<Var<'t, T>> {
    if z_graph.shape() != z_trans.shape() {
        return Err(Error::Shape {
            op: "combined_embedding",
            lhs: z_graph.shape(),
            rhs: z_trans.shape(),
        });
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Contract(format!("mask ratio {r} outside [0, 1]")));
    }
    z_graph.scale(T::of(r)).add(z_trans.scale(T::of(1.0 - r)))
}

/// Mean squared difference over batch and feature dimensions.
pub fn mse_alignment_loss<'t, T: Scalar>(z_graph: Var<'t, T>, z_combined: Var<'t, T>) -> Result<Var<'t, T>> {
    if z_graph.shape() != z_combined.shape() {
        return Err(Error::Shape {
            op: "mse_alignment_loss",
            lhs: z_graph.shape(),
            rhs: z_combined.shape(),
        });
    }
    let diff = z_graph.sub(z_combined)?;
    Ok(diff.mul(diff)?.mean())
}

/// One-directional InfoNCE with row `i` of `z_graph` as the positive for
/// row `i` of `z_trans` and the remaining rows as negatives.
pub fn infonce_loss<'t, T: Scalar>(z_trans: Var<'t, T>, z_graph: Var<'t, T>, temperature: f64) -> Result<Var<'t, T>> {
    let n = z_trans.shape()[0];
    if n < 2 {
        return Err(Error::Contract("infonce needs at least two rows".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Contract(format!("temperature must be positive, got {temperature}")));
    }
    if z_graph.shape() != z_trans.shape() {
        return Err(Error::Shape {
            op: "infonce_loss",
            lhs: z_trans.shape(),
            rhs: z_graph.shape(),
        });
    }
    let labels: Vec<usize> = (0..n).collect();
    z_trans
        .cosine_similarity_matrix(z_graph)?
        .scale(T::of(1.0 / temperature))
        .softmax_cross_entropy(&labels)
}

/// `λ_CE·CE + λ_Info·InfoNCE + λ_Info·MSE`.
pub fn total_loss(ce: f64, infonce: f64, mse: f64, cfg: &MimConfig) -> f64 {
    cfg.lambda_ce * ce + cfg.lambda_info * infonce + cfg.lambda_info * mse
}

fn total_loss_var<'t, T: Scalar>(ce: Var<'t, T>, infonce: Var<'t, T>, mse: Var<'t, T>, cfg: &MimConfig) -> Result<Var<'t, T>> {
    let lambda_info = T::of(cfg.lambda_info);
    ce.scale(T::of(cfg.lambda_ce))
        .add(infonce.scale(lambda_info))?
        .add(mse.scale(lambda_info))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionModelConfig {
    pub vision_dim: usize,
    pub graph_dim: usize,
    pub num_classes: usize,
}

impl Default for FusionModelConfig {
    fn default() -> Self {
        Self {
            vision_dim: 256,
            graph_dim: 128,
            num_classes: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel<T> {
    pub config: FusionModelConfig,
    pub params: ParamStore<T>,
}

/// Loss terms of one batch as plain numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub ce: f64,
    pub infonce: f64,
    pub mse: f64,
    pub mask_ratio: f64,
}

pub struct FusionHeads<'t, T: Scalar> {
    pub z_trans: Var<'t, T>,
    pub z_rep: Var<'t, T>,
    pub logits: Var<'t, T>,
}

pub struct FusionOutput<'t, T: Scalar> {
    pub logits: Var<'t, T>,
    pub z_trans: Var<'t, T>,
    pub ce: Var<'t, T>,
    pub infonce: Var<'t, T>,
    pub mse: Var<'t, T>,
    /// Optimized objective.
    pub loss: Var<'t, T>,
    pub terms: LossTerms,
}

impl<T: Scalar> FusionModel<T> {
    pub fn new(config: FusionModelConfig, seed: u64) -> Result<Self> {
        if config.num_classes < 2 || config.vision_dim == 0 || config.graph_dim == 0 {
            return Err(Error::Config("fusion: need ≥2 classes and positive widths".into()));
        }
        let d = config.graph_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_mlp2(&mut params, "t_head", config.vision_dim, d, d, &mut rng);
        init_mlp2(&mut params, "merge", 2 * d, d, d, &mut rng);
        init_head(&mut params, "classifier", d, config.num_classes, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_params(config: FusionModelConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        crate::morphograph::check_layout(&reference.params, &params)?;
        Ok(Self { config, params })
    }

    /// `z_trans = t_head(z_vision)`, `z_rep = merge([z_graph ‖ z_trans])` and
    /// the logits of `z_rep`.
    pub fn heads<'t>(&self, p: &Bound<'t, T>, z_vision: Var<'t, T>, z_graph: Var<'t, T>) -> Result<FusionHeads<'t, T>> {
        if z_vision.shape()[0] != z_graph.shape()[0] {
            return Err(Error::Dimension {
                op: "multimodal_forward",
                msg: format!(
                    "{} image rows vs {} graph rows",
                    z_vision.shape()[0],
                    z_graph.shape()[0]
                ),
            });
        }
        if z_graph.shape()[1] != self.config.graph_dim {
            return Err(Error::Shape {
                op: "multimodal_forward",
                lhs: z_graph.shape(),
                rhs: vec![z_graph.shape()[0], self.config.graph_dim],
            });
        }
        let z_trans = mlp2(z_vision, p, "t_head")?;
        let z_rep = mlp2(z_graph.concat(z_trans)?, p, "merge")?;
        Ok(FusionHeads {
            z_trans,
            z_rep,
            logits: linear(z_rep, p, "classifier")?,
        })
    }

    /// Full objective for one batch. `z_graph` must come from a frozen
    /// encoder; it is only ever read. The combined embedding feeds the MSE
    /// term alone. Classic mode optimizes `λ_CE·CE` and reports the
    /// alignment terms without differentiating them.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, T>,
        z_vision: Var<'t, T>,
        z_graph: Var<'t, T>,
        labels: &[usize],
        mode: FusionMode,
        step: usize,
        cfg: &MimConfig,
    ) -> Result<FusionOutput<'t, T>> {
        let FusionHeads { z_trans, logits, .. } = self.heads(p, z_vision, z_graph)?;
        let ce = logits.softmax_cross_entropy(labels)?;
        let r = mask_ratio(step, cfg.total_steps)?;
        let tape = z_trans.tape();
        let (info_input, mse_input) = match mode {
            FusionMode::Mim => (z_trans, z_trans),
            FusionMode::Classic => {
                let detached = tape.constant(z_trans.value().as_ref().clone());
                (detached, detached)
            }
        };
        let infonce = infonce_loss(info_input, z_graph, cfg.temperature)?;
        let mse = mse_alignment_loss(z_graph, combined_embedding(z_graph, mse_input, r)?)?;
        let loss = match mode {
            FusionMode::Mim => total_loss_var(ce, infonce, mse, cfg)?,
            FusionMode::Classic => ce.scale(T::of(cfg.lambda_ce)),
        };
        let terms = LossTerms {
            total: loss.item().to_f64_lossless(),
            ce: ce.item().to_f64_lossless(),
            infonce: infonce.item().to_f64_lossless(),
            mse: mse.item().to_f64_lossless(),
            mask_ratio: r,
        };
        Ok(FusionOutput {
            logits,
            z_trans,
            ce,
            infonce,
            mse,
            loss,
            terms,
        })
    }
}
