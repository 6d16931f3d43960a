//! Patch/feature mixer: per node, alternately mix the `p × d` patch along
//! the patch axis and the feature axis, aggregate over the patch axis, and
//! classify with a two-layer head.
//!
//! All parameters live in one flat buffer described by a [`Layout`], so the
//! optimizer, checkpoints and gradient checks treat the model as a vector.

mod loss;
mod net;

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{gelu, gelu_grad, sqrt, tanh};

pub use loss::{accuracy, cross_entropy};
pub use net::{
    feature_mixing, layer_norm, mixer_backward, mixer_forward, mixer_forward_nodes, patch_mixing,
    predict, ForwardTape, Gradients,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
    Flatten,
}

/// Nonlinearity between the two dense layers of every MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    #[default]
    Gelu,
    Relu,
    Tanh,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Gelu => gelu(x),
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Tanh => tanh(x),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Gelu => gelu_grad(x),
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => {
                let t = tanh(x);
                1.0 - t * t
            }
        }
    }
}

/// Axis normalized by the layer norm in front of the patch-mixing MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormAxis {
    /// Down each feature column, over the `p` patch entries.
    Patch,
    /// Along each patch row, over the `d` features.
    #[default]
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub patch_size: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub layers: usize,
    pub hidden_patch: usize,
    pub hidden_feature: usize,
    pub hidden_head: usize,
    pub dropout: f64,
    pub residual: bool,
    pub aggregation: Aggregation,
    pub nonlinearity: Nonlinearity,
    pub patch_norm_axis: NormAxis,
    pub ln_eps: f64,
}

impl MixerConfig {
    /// Defaults: two layers, `hidden_patch = 2p`, 64-wide feature and head
    /// MLPs, dropout 0.5, no residual, mean aggregation, GELU.
    pub fn new(patch_size: usize, feature_dim: usize, num_classes: usize) -> Self {
        Self {
            patch_size,
            feature_dim,
            num_classes,
            layers: 2,
            hidden_patch: 2 * patch_size,
            hidden_feature: 64,
            hidden_head: 64,
            dropout: 0.5,
            residual: false,
            aggregation: Aggregation::Mean,
            nonlinearity: Nonlinearity::Gelu,
            patch_norm_axis: NormAxis::Feature,
            ln_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("patch_size", self.patch_size),
            ("feature_dim", self.feature_dim),
            ("num_classes", self.num_classes),
            ("hidden_patch", self.hidden_patch),
            ("hidden_feature", self.hidden_feature),
            ("hidden_head", self.hidden_head),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Param(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Param(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Param("layer-norm eps must be positive".to_string()));
        }
        Ok(())
    }

    /// Length of the patch-block layer-norm gain and bias.
    pub fn patch_norm_len(&self) -> usize {
        match self.patch_norm_axis {
            NormAxis::Patch => self.patch_size,
            NormAxis::Feature => self.feature_dim,
        }
    }

    pub fn aggregated_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Mean | Aggregation::Sum => self.feature_dim,
            Aggregation::Flatten => self.patch_size * self.feature_dim,
        }
    }
}

/// Offsets of one mixer layer inside the flat parameter buffer. Dense
/// weights are stored `[out][in]` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerOffsets {
    pub patch_ln_gain: Range<usize>,
    pub patch_ln_bias: Range<usize>,
    pub patch_w1: Range<usize>,
    pub patch_b1: Range<usize>,
    pub patch_w2: Range<usize>,
    pub patch_b2: Range<usize>,
    pub feature_ln_gain: Range<usize>,
    pub feature_ln_bias: Range<usize>,
    pub feature_w1: Range<usize>,
    pub feature_b1: Range<usize>,
    pub feature_w2: Range<usize>,
    pub feature_b2: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadOffsets {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerOffsets>,
    pub head: HeadOffsets,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, len: usize) -> Range<usize> {
        let r = self.0..self.0 + len;
        self.0 += len;
        r
    }
}

impl Layout {
    pub fn new(cfg: &MixerConfig) -> Self {
        let (p, d) = (cfg.patch_size, cfg.feature_dim);
        let (hp, hf, hh) = (cfg.hidden_patch, cfg.hidden_feature, cfg.hidden_head);
        let pn = cfg.patch_norm_len();
        let mut c = Cursor(0);
        let layers = (0..cfg.layers)
            .map(|_| LayerOffsets {
                patch_ln_gain: c.take(pn),
                patch_ln_bias: c.take(pn),
                patch_w1: c.take(hp * p),
                patch_b1: c.take(hp),
                patch_w2: c.take(p * hp),
                patch_b2: c.take(p),
                feature_ln_gain: c.take(d),
                feature_ln_bias: c.take(d),
                feature_w1: c.take(hf * d),
                feature_b1: c.take(hf),
                feature_w2: c.take(d * hf),
                feature_b2: c.take(d),
            })
            .collect();
        let head = HeadOffsets {
            w1: c.take(hh * cfg.aggregated_dim()),
            b1: c.take(hh),
            w2: c.take(cfg.num_classes * hh),
            b2: c.take(cfg.num_classes),
        };
        Self {
            layers,
            head,
            total: c.0,
        }
    }

    /// `(range, fan_in, fan_out)` of every dense weight matrix.
    fn dense_weights(&self, cfg: &MixerConfig) -> Vec<(Range<usize>, usize, usize)> {
        let (p, d) = (cfg.patch_size, cfg.feature_dim);
        let (hp, hf, hh) = (cfg.hidden_patch, cfg.hidden_feature, cfg.hidden_head);
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((l.patch_w1.clone(), p, hp));
            out.push((l.patch_w2.clone(), hp, p));
            out.push((l.feature_w1.clone(), d, hf));
            out.push((l.feature_w2.clone(), hf, d));
        }
        out.push((self.head.w1.clone(), cfg.aggregated_dim(), hh));
        out.push((self.head.w2.clone(), hh, cfg.num_classes));
        out
    }

    fn gains(&self) -> Vec<Range<usize>> {
        self.layers
            .iter()
            .flat_map(|l| [l.patch_ln_gain.clone(), l.feature_ln_gain.clone()])
            .collect()
    }
}

/// Mixer parameters plus a generation counter that invalidates tapes
/// recorded before the last parameter change. Equality ignores the counter.
#[derive(Debug, Clone)]
pub struct MixerModel {
    config: MixerConfig,
    layout: Layout,
    params: Vec<f64>,
    generation: u64,
}

impl PartialEq for MixerModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

/// Process-wide stamp, so a tape never matches a different model either.
fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

impl MixerModel {
    /// Glorot-uniform dense weights, zero biases, unit layer-norm gains.
    pub fn init(config: MixerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (range, fan_in, fan_out) in layout.dense_weights(&config) {
            let bound = sqrt(6.0 / (fan_in + fan_out) as f64);
            for w in &mut params[range] {
                *w = rng.random_range(-bound..bound);
            }
        }
        for range in layout.gains() {
            params[range].fill(1.0);
        }
        Ok(Self {
            config,
            layout,
            params,
            generation: next_generation(),
        })
    }

    pub fn from_params(config: MixerConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "parameter buffer has {} entries, configuration needs {}",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".to_string()));
        }
        Ok(Self {
            config,
            layout,
            params,
            generation: next_generation(),
        })
    }

    pub fn config(&self) -> &MixerConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters; any tape recorded earlier becomes stale.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }
}
