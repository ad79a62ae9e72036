//! AWD-LSTM language model and the concat-pooling text classifier built on its encoder.

mod classifier;
pub mod dropout;
mod encoder;
mod lm;

pub use classifier::{concat_pool_tensor, pad_batch, Head, TextClassifier, DEFAULT_MAX_LEN, N_CLASSES};
pub use dropout::{apply_weight_drop, embedding_dropout, variational_dropout, LstmLayerValues};
pub use encoder::{Encoder, EncoderOutput, LstmLayer, LstmState};
pub use lm::{AwdLstm, LmOutput};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// emb 400, hidden 1152, 3 layers.
    Full,
    /// emb 64, hidden 128, 3 layers.
    Tiny,
    Custom,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Tiny => "tiny",
            Preset::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "tiny" => Ok(Preset::Tiny),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::invalid(format!("unknown preset `{other}`"))),
        }
    }
}

/// Architecture sizes. The final LSTM layer always outputs `emb_dim` so the
/// decoder can share the embedding matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub preset: Preset,
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hid_dim: usize,
    pub n_layers: usize,
    pub head_hidden: usize,
}

impl ArchConfig {
    pub fn full(vocab_size: usize) -> Self {
        Self {
            preset: Preset::Full,
            vocab_size,
            emb_dim: 400,
            hid_dim: 1152,
            n_layers: 3,
            head_hidden: 50,
        }
    }

    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            preset: Preset::Tiny,
            vocab_size,
            emb_dim: 64,
            hid_dim: 128,
            n_layers: 3,
            head_hidden: 50,
        }
    }

    pub fn custom(vocab_size: usize, emb_dim: usize, hid_dim: usize, n_layers: usize) -> Self {
        Self {
            preset: Preset::Custom,
            vocab_size,
            emb_dim,
            hid_dim,
            n_layers,
            head_hidden: 50,
        }
    }

    pub fn for_preset(preset: Preset, vocab_size: usize) -> Result<Self> {
        match preset {
            Preset::Full => Ok(Self::full(vocab_size)),
            Preset::Tiny => Ok(Self::tiny(vocab_size)),
            Preset::Custom => Err(Error::invalid("custom preset needs explicit sizes")),
        }
    }

    /// Hidden width of layer `l`.
    pub fn layer_output(&self, l: usize) -> usize {
        if l + 1 == self.n_layers {
            self.emb_dim
        } else {
            self.hid_dim
        }
    }

    pub fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.emb_dim
        } else {
            self.hid_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= crate::textpipe::SPECIALS.len()
            || self.emb_dim == 0
            || self.hid_dim == 0
            || self.n_layers == 0
            || self.head_hidden == 0
        {
            return Err(Error::invalid(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    /// `preset:emb:hid:layers:head` string stored in checkpoints.
    pub fn descriptor(&self) -> String {
        format!(
            "{}:{}:{}:{}:{}",
            self.preset.name(),
            self.emb_dim,
            self.hid_dim,
            self.n_layers,
            self.head_hidden
        )
    }
}

/// Dropout probabilities before the multiplier. Defaults follow the common
/// AWD-LSTM recipe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutConfig {
    pub embed: f64,
    pub input: f64,
    pub hidden: f64,
    pub weight: f64,
    pub output: f64,
    pub head: f64,
    pub multiplier: f64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            embed: 0.02,
            input: 0.25,
            hidden: 0.15,
            weight: 0.2,
            output: 0.1,
            head: 0.1,
            multiplier: 1.0,
        }
    }
}

impl DropoutConfig {
    pub fn with_multiplier(multiplier: f64) -> Self {
        Self {
            multiplier,
            ..Self::default()
        }
    }

    pub fn none() -> Self {
        Self::with_multiplier(0.0)
    }

    /// Probabilities after the multiplier, clamped to `[0, 1]`.
    pub fn effective(&self) -> Result<EffectiveDropout> {
        if !(self.multiplier >= 0.0) {
            return Err(Error::invalid(format!(
                "dropout multiplier {} must be non-negative",
                self.multiplier
            )));
        }
        let s = |p: f64| (p * self.multiplier).clamp(0.0, 1.0);
        Ok(EffectiveDropout {
            embed: s(self.embed),
            input: s(self.input),
            hidden: s(self.hidden),
            weight: s(self.weight),
            output: s(self.output),
            head: s(self.head),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveDropout {
    pub embed: f64,
    pub input: f64,
    pub hidden: f64,
    pub weight: f64,
    pub output: f64,
    pub head: f64,
}
