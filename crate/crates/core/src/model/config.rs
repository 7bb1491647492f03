// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DEFAULT_NORM_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Rms,
    Layernorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalKind {
    Rotary,
    Learned,
}

/// Feed-forward block shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    /// `down(silu(gate(x)) * up(x))`, Llama family.
    #[default]
    GatedSilu,
    /// `down(gelu(up(x)))`, GPT-2 family.
    Gelu,
}

fn default_eps() -> f32 {
    DEFAULT_NORM_EPS
}

fn default_rope_theta() -> f32 {
    10_000.0
}

/// Architecture hyperparameters of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub norm_kind: NormKind,
    pub positional_kind: PositionalKind,
    #[serde(default)]
    pub ffn_kind: FfnKind,
    /// Projections and norms carry additive biases.
    #[serde(default)]
    pub bias: bool,
    #[serde(default = "default_eps")]
    pub norm_eps: f32,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f32,
}

impl ModelConfig {
    /// RMS norm, rotary positions, gated SiLU FFN, no biases.
    pub fn llama_like(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
        vocab_size: usize,
        max_seq_len: usize,
    ) -> Self {
        Self {
            n_layers,
            d_model,
            n_heads,
            d_ff,
            vocab_size,
            max_seq_len,
            norm_kind: NormKind::Rms,
            positional_kind: PositionalKind::Rotary,
            ffn_kind: FfnKind::GatedSilu,
            bias: false,
            norm_eps: DEFAULT_NORM_EPS,
            rope_theta: default_rope_theta(),
        }
    }

    /// LayerNorm, learned positions, GELU FFN, biases everywhere.
    pub fn gpt2_like(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
        vocab_size: usize,
        max_seq_len: usize,
    ) -> Self {
        Self {
            norm_kind: NormKind::Layernorm,
            positional_kind: PositionalKind::Learned,
            ffn_kind: FfnKind::Gelu,
            bias: true,
            ..Self::llama_like(n_layers, d_model, n_heads, d_ff, vocab_size, max_seq_len)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_layers < 2 {
            return fail(format!("n_layers must be >= 2, got {}", self.n_layers));
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be >= 2, got {}", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_seq_len == 0 {
            return fail("d_model, n_heads, d_ff and max_seq_len must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.positional_kind == PositionalKind::Rotary && !self.head_dim().is_multiple_of(2) {
            return fail(format!(
                "rotary positions need an even head dimension, got {}",
                self.head_dim()
            ));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return fail(format!("norm_eps must be positive, got {}", self.norm_eps));
        }
        if !(self.rope_theta > 0.0 && self.rope_theta.is_finite()) {
            return fail(format!("rope_theta must be positive, got {}", self.rope_theta));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_configs() {
        let ok = ModelConfig::llama_like(4, 16, 2, 32, 64, 8);
        assert!(ok.validate().is_ok());
        assert!(ModelConfig { d_model: 15, ..ok.clone() }.validate().is_err());
        assert!(ModelConfig { n_layers: 1, ..ok.clone() }.validate().is_err());
        assert!(ModelConfig { vocab_size: 1, ..ok.clone() }.validate().is_err());
        // head_dim 3 cannot be rotated pairwise
        assert!(ModelConfig { d_model: 6, n_heads: 2, ..ok.clone() }.validate().is_err());
        let learned = ModelConfig { d_model: 6, n_heads: 2, ..ModelConfig::gpt2_like(4, 6, 2, 8, 64, 8) };
        assert!(learned.validate().is_ok());
    }

    #[test]
    fn json_defaults_fill_optional_fields() {
        let json = r#"{"n_layers":2,"d_model":8,"n_heads":2,"d_ff":16,"vocab_size":10,
            "max_seq_len":4,"norm_kind":"rms","positional_kind":"rotary"}"#;
        let cfg: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg, ModelConfig::llama_like(2, 8, 2, 16, 10, 4));
    }
}
