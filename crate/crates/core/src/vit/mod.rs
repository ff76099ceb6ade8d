//! A minimal Vision Transformer classifier with hand-derived gradients.
//!
//! Pre-norm encoder: `Z' = Z + MSA(LN(Z))`, `Z = Z' + FFN(LN(Z'))`, with a
//! learnable class token whose final state feeds a linear softmax head.
//! All weights of a linear map are stored `[out, in]` row-major.

mod backward;
mod checkpoint;
mod forward;
mod ops;

pub use backward::{backward, BatchGrad};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{
    attention, attention_weights, embed_patches, encoder_layer, forward, forward_logits, loss_from_logits,
    loss_smoothed_ce, smoothed_targets, Prediction,
};
pub use ops::{gelu, layer_norm};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Real, Result};

pub const CHANNELS: usize = 3;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-12
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            embed_dim: 192,
            num_layers: 4,
            num_heads: 3,
            mlp_dim: 768,
            num_classes: 14,
            ln_eps: default_ln_eps(),
        }
    }
}

impl VitConfig {
    /// The small configuration used in quick experiments and tests.
    pub fn tiny(image_size: usize, embed_dim: usize, num_layers: usize, num_heads: usize, num_classes: usize) -> Self {
        Self {
            image_size,
            patch_size: 16,
            embed_dim,
            num_layers,
            num_heads,
            mlp_dim: 4 * embed_dim,
            num_classes,
            ln_eps: default_ln_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.num_heads == 0 || self.embed_dim == 0 || self.embed_dim % self.num_heads != 0 {
            return fail(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            ));
        }
        if self.mlp_dim == 0 || self.num_classes == 0 {
            return fail("mlp_dim and num_classes must be positive".into());
        }
        if !(self.ln_eps >= 0.0 && self.ln_eps.is_finite()) {
            return fail("ln_eps must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }

    pub fn input_len(&self) -> usize {
        self.image_size * self.image_size * CHANNELS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    fn trunc_normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).unwrap();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| loop {
                let v: f64 = normal.sample(rng);
                if v.abs() <= 2.0 * std {
                    break T::lit(v);
                }
            })
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub qkv_w: Tensor<T>,
    pub qkv_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

impl<T: Real> LayerParams<T> {
    fn tensors(&self) -> [(&'static str, &Tensor<T>); 12] {
        [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("qkv_w", &self.qkv_w),
            ("qkv_b", &self.qkv_b),
            ("proj_w", &self.proj_w),
            ("proj_b", &self.proj_b),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("fc1_w", &self.fc1_w),
            ("fc1_b", &self.fc1_b),
            ("fc2_w", &self.fc2_w),
            ("fc2_b", &self.fc2_b),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 12] {
        [
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("qkv_w", &mut self.qkv_w),
            ("qkv_b", &mut self.qkv_b),
            ("proj_w", &mut self.proj_w),
            ("proj_b", &mut self.proj_b),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
            ("fc1_w", &mut self.fc1_w),
            ("fc1_b", &mut self.fc1_b),
            ("fc2_w", &mut self.fc2_w),
            ("fc2_b", &mut self.fc2_b),
        ]
    }
}

/// All learnable parameters. The same type doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct VitModel<T> {
    pub config: VitConfig,
    pub patch_w: Tensor<T>,
    pub patch_b: Tensor<T>,
    pub pos_embed: Tensor<T>,
    pub class_token: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
}

impl<T: Real> VitModel<T> {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: VitConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let m = config.mlp_dim;
        let layer = LayerParams {
            ln1_gain: Tensor::zeros(&[d]),
            ln1_bias: Tensor::zeros(&[d]),
            qkv_w: Tensor::zeros(&[3 * d, d]),
            qkv_b: Tensor::zeros(&[3 * d]),
            proj_w: Tensor::zeros(&[d, d]),
            proj_b: Tensor::zeros(&[d]),
            ln2_gain: Tensor::zeros(&[d]),
            ln2_bias: Tensor::zeros(&[d]),
            fc1_w: Tensor::zeros(&[m, d]),
            fc1_b: Tensor::zeros(&[m]),
            fc2_w: Tensor::zeros(&[d, m]),
            fc2_b: Tensor::zeros(&[d]),
        };
        Ok(Self {
            config,
            patch_w: Tensor::zeros(&[d, config.patch_dim()]),
            patch_b: Tensor::zeros(&[d]),
            pos_embed: Tensor::zeros(&[config.num_tokens(), d]),
            class_token: Tensor::zeros(&[d]),
            layers: vec![layer; config.num_layers],
            head_w: Tensor::zeros(&[config.num_classes, d]),
            head_b: Tensor::zeros(&[config.num_classes]),
        })
    }

    /// Truncated-normal weights (std 0.02, cut at 2σ), zero biases, unit
    /// layer-norm gains.
    pub fn init(config: VitConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, INIT_STD)
    }

    pub fn init_with_std(config: VitConfig, seed: u64, std: f64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = seed::rng(seed);
        for (name, t) in model.tensors_mut() {
            let leaf = name.rsplit('.').next().unwrap();
            if leaf.ends_with("gain") {
                t.data.iter_mut().for_each(|v| *v = T::one());
            } else if leaf.ends_with("_w") || leaf == "pos_embed" || leaf == "class_token" {
                *t = Tensor::trunc_normal(&t.shape, std, &mut rng);
            }
        }
        Ok(model)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    /// Every parameter tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("patch_w".to_string(), &self.patch_w),
            ("patch_b".to_string(), &self.patch_b),
            ("pos_embed".to_string(), &self.pos_embed),
            ("class_token".to_string(), &self.class_token),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.tensors().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        out.push(("head_w".to_string(), &self.head_w));
        out.push(("head_b".to_string(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("patch_w".to_string(), &mut self.patch_w),
            ("patch_b".to_string(), &mut self.patch_b),
            ("pos_embed".to_string(), &mut self.pos_embed),
            ("class_token".to_string(), &mut self.class_token),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(
                l.tensors_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("layers.{i}.{n}"), t)),
            );
        }
        out.push(("head_w".to_string(), &mut self.head_w));
        out.push(("head_b".to_string(), &mut self.head_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    /// Euclidean norm over every parameter.
    pub fn global_norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, &y)| *x += y);
        }
    }
}
