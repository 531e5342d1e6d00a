//! Parameter containers for both models.
//!
//! Every trainable array is a dense 2-D `f64` matrix (length-F vectors
//! are stored 1 × F). `arrays()` / `arrays_mut()` expose the flat
//! canonical order shared by the checkpoint format, the optimizer state,
//! and gradient extraction from the tape.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::{Error, Result};

/// Structural hyperparameters of the transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PapcHyper {
    /// Number of base stations (input feature length per user).
    pub m: usize,
    /// Maximum user count the datasets are padded to.
    pub k_max: usize,
    /// Model width.
    pub m_bar: usize,
    /// Attention heads; must divide `m_bar`.
    pub heads: usize,
    /// Transformer block count.
    pub blocks: usize,
    /// Width constant of the learning-rate schedule.
    pub d_mod: usize,
}

impl PapcHyper {
    /// Per-head feature width `D = m_bar / heads`.
    pub fn head_dim(&self) -> usize {
        self.m_bar / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.m_bar.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "m_bar ({}) must be a positive multiple of heads ({})",
                self.m_bar, self.heads
            )));
        }
        if self.m_bar <= self.m {
            return Err(Error::Config(format!(
                "m_bar ({}) must exceed m ({})",
                self.m_bar, self.m
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Config("blocks must be >= 1".into()));
        }
        if self.m == 0 || self.k_max == 0 || self.d_mod == 0 {
            return Err(Error::Config("m, k_max and d_mod must be positive".into()));
        }
        Ok(())
    }
}

/// Feature-wise scale and shift applied after global-statistics
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
}

impl LayerNorm {
    pub fn identity(features: usize) -> Self {
        Self {
            alpha: Array2::ones((1, features)),
            beta: Array2::zeros((1, features)),
        }
    }
}

/// Row-wise affine map `x @ weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// in × out.
    pub weight: Array2<f64>,
    /// 1 × out.
    pub bias: Array2<f64>,
}

impl Linear {
    /// Uniform(±1/sqrt(fan_in)) for weight and bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound)),
            bias: Array2::from_shape_fn((1, fan_out), |_| rng.random_range(-bound..bound)),
        }
    }
}

/// One attention head's Q/K/V maps, each `m_bar × head_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

/// One transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub heads: Vec<AttentionHead>,
    /// Head-concat output map, `m_bar × m_bar`.
    pub output: Linear,
    /// Normalization after the attention residual.
    pub ln_attn: LayerNorm,
    /// Normalization after the feed-forward residual.
    pub ln_ff: LayerNorm,
    /// Feed-forward hidden layer, `m_bar × m_bar`, ReLU.
    pub ff1: Linear,
    pub ff2: Linear,
}

/// All trainable parameters of the transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct PapcParams {
    pub hyper: PapcHyper,
    /// Input normalization over the log-fading features (length m).
    pub ln_input: LayerNorm,
    /// Embedding into the model width, `m × m_bar`.
    pub embed: Linear,
    /// Normalization after the embedding (length m_bar).
    pub ln_embed: LayerNorm,
    pub blocks: Vec<Block>,
    /// Output head back to per-BS features, `m_bar × m`.
    pub out: Linear,
    /// Output normalization (length m).
    pub ln_out: LayerNorm,
}

impl PapcParams {
    pub fn init(hyper: PapcHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let d = hyper.head_dim();
        let blocks = (0..hyper.blocks)
            .map(|_| Block {
                heads: (0..hyper.heads)
                    .map(|_| AttentionHead {
                        query: Linear::init(hyper.m_bar, d, &mut rng),
                        key: Linear::init(hyper.m_bar, d, &mut rng),
                        value: Linear::init(hyper.m_bar, d, &mut rng),
                    })
                    .collect(),
                output: Linear::init(hyper.m_bar, hyper.m_bar, &mut rng),
                ln_attn: LayerNorm::identity(hyper.m_bar),
                ln_ff: LayerNorm::identity(hyper.m_bar),
                ff1: Linear::init(hyper.m_bar, hyper.m_bar, &mut rng),
                ff2: Linear::init(hyper.m_bar, hyper.m_bar, &mut rng),
            })
            .collect();
        Ok(Self {
            hyper,
            ln_input: LayerNorm::identity(hyper.m),
            embed: Linear::init(hyper.m, hyper.m_bar, &mut rng),
            ln_embed: LayerNorm::identity(hyper.m_bar),
            blocks,
            out: Linear::init(hyper.m_bar, hyper.m, &mut rng),
            ln_out: LayerNorm::identity(hyper.m),
        })
    }

    /// Canonical flat order of all parameter arrays.
    pub fn arrays(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![
            &self.ln_input.alpha,
            &self.ln_input.beta,
            &self.embed.weight,
            &self.embed.bias,
            &self.ln_embed.alpha,
            &self.ln_embed.beta,
        ];
        for block in &self.blocks {
            for head in &block.heads {
                out.push(&head.query.weight);
                out.push(&head.query.bias);
                out.push(&head.key.weight);
                out.push(&head.key.bias);
                out.push(&head.value.weight);
                out.push(&head.value.bias);
            }
            out.push(&block.output.weight);
            out.push(&block.output.bias);
            out.push(&block.ln_attn.alpha);
            out.push(&block.ln_attn.beta);
            out.push(&block.ln_ff.alpha);
            out.push(&block.ln_ff.beta);
            out.push(&block.ff1.weight);
            out.push(&block.ff1.bias);
            out.push(&block.ff2.weight);
            out.push(&block.ff2.bias);
        }
        out.push(&self.out.weight);
        out.push(&self.out.bias);
        out.push(&self.ln_out.alpha);
        out.push(&self.ln_out.beta);
        out
    }

    /// Mutable view in the same canonical order as [`PapcParams::arrays`].
    pub fn arrays_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = vec![
            &mut self.ln_input.alpha,
            &mut self.ln_input.beta,
            &mut self.embed.weight,
            &mut self.embed.bias,
            &mut self.ln_embed.alpha,
            &mut self.ln_embed.beta,
        ];
        for block in &mut self.blocks {
            for head in &mut block.heads {
                out.push(&mut head.query.weight);
                out.push(&mut head.query.bias);
                out.push(&mut head.key.weight);
                out.push(&mut head.key.bias);
                out.push(&mut head.value.weight);
                out.push(&mut head.value.bias);
            }
            out.push(&mut block.output.weight);
            out.push(&mut block.output.bias);
            out.push(&mut block.ln_attn.alpha);
            out.push(&mut block.ln_attn.beta);
            out.push(&mut block.ln_ff.alpha);
            out.push(&mut block.ln_ff.beta);
            out.push(&mut block.ff1.weight);
            out.push(&mut block.ff1.bias);
            out.push(&mut block.ff2.weight);
            out.push(&mut block.ff2.bias);
        }
        out.push(&mut self.out.weight);
        out.push(&mut self.out.bias);
        out.push(&mut self.ln_out.alpha);
        out.push(&mut self.ln_out.beta);
        out
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }
}

/// The fully-connected baseline. Operates on a flattened fading matrix,
/// so it is tied to one fixed `(m, k)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnParams {
    pub m: usize,
    pub k: usize,
    /// Hidden width.
    pub width: usize,
    pub d_mod: usize,
    /// Input normalization over the flattened m·k features.
    pub ln_input: LayerNorm,
    /// m·k × width.
    pub input: Linear,
    pub ln_hidden1: LayerNorm,
    /// width × width.
    pub hidden: Linear,
    pub ln_hidden2: LayerNorm,
    /// width × m·k.
    pub output: Linear,
    /// Post-reshape normalization over per-BS features (length m).
    pub ln_out: LayerNorm,
}

impl FcnParams {
    pub fn init(m: usize, k: usize, width: usize, d_mod: usize, seed: u64) -> Result<Self> {
        if m == 0 || k == 0 || width == 0 || d_mod == 0 {
            return Err(Error::Config("fcn dimensions must be positive".into()));
        }
        let mk = m * k;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Ok(Self {
            m,
            k,
            width,
            d_mod,
            ln_input: LayerNorm::identity(mk),
            input: Linear::init(mk, width, &mut rng),
            ln_hidden1: LayerNorm::identity(width),
            hidden: Linear::init(width, width, &mut rng),
            ln_hidden2: LayerNorm::identity(width),
            output: Linear::init(width, mk, &mut rng),
            ln_out: LayerNorm::identity(m),
        })
    }

    pub fn arrays(&self) -> Vec<&Array2<f64>> {
        vec![
            &self.ln_input.alpha,
            &self.ln_input.beta,
            &self.input.weight,
            &self.input.bias,
            &self.ln_hidden1.alpha,
            &self.ln_hidden1.beta,
            &self.hidden.weight,
            &self.hidden.bias,
            &self.ln_hidden2.alpha,
            &self.ln_hidden2.beta,
            &self.output.weight,
            &self.output.bias,
            &self.ln_out.alpha,
            &self.ln_out.beta,
        ]
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.ln_input.alpha,
            &mut self.ln_input.beta,
            &mut self.input.weight,
            &mut self.input.bias,
            &mut self.ln_hidden1.alpha,
            &mut self.ln_hidden1.beta,
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.ln_hidden2.alpha,
            &mut self.ln_hidden2.beta,
            &mut self.output.weight,
            &mut self.output.bias,
            &mut self.ln_out.alpha,
            &mut self.ln_out.beta,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }
}

/// FCN parameter count for a hidden width, without materializing arrays.
fn fcn_count(m: usize, k: usize, width: usize) -> usize {
    let mk = m * k;
    2 * mk                        // input layer norm
        + mk * width + width      // input linear
        + 2 * width               // hidden norm 1
        + width * width + width   // hidden linear
        + 2 * width               // hidden norm 2
        + width * mk + mk         // output linear
        + 2 * m                   // output norm
}

/// Smallest hidden width whose parameter count is closest to `target`
/// (used to match the transformer's size).
pub fn fcn_width_for_parity(m: usize, k: usize, target: usize) -> usize {
    let mut best = (usize::MAX, 1usize);
    let mut width = 1usize;
    loop {
        let count = fcn_count(m, k, width);
        let diff = count.abs_diff(target);
        if diff < best.0 {
            best = (diff, width);
        }
        if count > target && width > best.1 + 2 {
            break;
        }
        width += 1;
    }
    best.1
}

/// A trained (or freshly initialized) model of either kind.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Papc(PapcParams),
    Fcn(FcnParams),
}

impl Model {
    pub fn param_count(&self) -> usize {
        match self {
            Model::Papc(p) => p.param_count(),
            Model::Fcn(p) => p.param_count(),
        }
    }

    pub fn arrays(&self) -> Vec<&Array2<f64>> {
        match self {
            Model::Papc(p) => p.arrays(),
            Model::Fcn(p) => p.arrays(),
        }
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            Model::Papc(p) => p.arrays_mut(),
            Model::Fcn(p) => p.arrays_mut(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Papc(_) => "papc",
            Model::Fcn(_) => "fcn",
        }
    }
}
