// SPDX-License-Identifier: MIT OR Apache-2.0

//! Parameter tensors and the named-tensor schema that weight files follow.
//!
//! Projection matrices are stored input-major (`d_in × d_out`) so a layer
//! computes `x · W + b`. Layer indices in tensor names are zero-based
//! (`layers.0.*` is the first layer).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::config::{FfnKind, ModelConfig, NormKind, PositionalKind};
use crate::numerics::Matrix;

/// What a tensor is, which decides how random initialization fills it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Weight,
    Gain,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
}

impl TensorSpec {
    fn new(name: impl Into<String>, shape: &[usize], role: TensorRole) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            role,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Every tensor a model with `config` must carry, in canonical file order.
pub fn tensor_schema(config: &ModelConfig) -> Vec<TensorSpec> {
    use TensorRole::*;
    let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
    let norm_bias = config.norm_kind == NormKind::Layernorm;
    let mut out = vec![TensorSpec::new("tok_embeddings", &[v, d], Weight)];
    if config.positional_kind == PositionalKind::Learned {
        out.push(TensorSpec::new("pos_embeddings", &[config.max_seq_len, d], Weight));
    }

    let norm = |out: &mut Vec<TensorSpec>, prefix: &str| {
        out.push(TensorSpec::new(format!("{prefix}.weight"), &[d], Gain));
        if norm_bias {
            out.push(TensorSpec::new(format!("{prefix}.bias"), &[d], Bias));
        }
    };
    let linear = |out: &mut Vec<TensorSpec>, prefix: &str, rows: usize, cols: usize| {
        out.push(TensorSpec::new(format!("{prefix}.weight"), &[rows, cols], Weight));
        if config.bias {
            out.push(TensorSpec::new(format!("{prefix}.bias"), &[cols], Bias));
        }
    };

    for i in 0..config.n_layers {
        let p = format!("layers.{i}");
        norm(&mut out, &format!("{p}.attn_norm"));
        for proj in ["q", "k", "v", "o"] {
            linear(&mut out, &format!("{p}.attn.{proj}"), d, d);
        }
        norm(&mut out, &format!("{p}.ffn_norm"));
        linear(&mut out, &format!("{p}.ffn.up"), d, f);
        if config.ffn_kind == FfnKind::GatedSilu {
            linear(&mut out, &format!("{p}.ffn.gate"), d, f);
        }
        linear(&mut out, &format!("{p}.ffn.down"), f, d);
    }
    norm(&mut out, "final_norm");
    out.push(TensorSpec::new("lm_head.weight", &[d, v], Weight));
    out
}

/// Norm gain with an optional additive bias (LayerNorm only).
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gain: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

/// `y = x · weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Option<Vec<f32>>,
}

/// One transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ffn_norm: Norm,
    pub up: Linear,
    pub gate: Option<Linear>,
    pub down: Linear,
}

impl LayerWeights {
    /// Sets every projection matrix and bias to zero, leaving norm gains alone.
    pub fn zero_projections(&mut self) {
        for lin in [&mut self.q, &mut self.k, &mut self.v, &mut self.o, &mut self.up, &mut self.down]
        {
            zero_linear(lin);
        }
        if let Some(gate) = &mut self.gate {
            zero_linear(gate);
        }
    }
}

fn zero_linear(lin: &mut Linear) {
    lin.weight.data_mut().fill(0.0);
    if let Some(b) = &mut lin.bias {
        b.fill(0.0);
    }
}

/// Frozen parameters of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub tok_embeddings: Matrix,
    pub pos_embeddings: Option<Matrix>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Norm,
    pub lm_head: Matrix,
}

struct TensorStore {
    tensors: HashMap<String, Vec<f32>>,
}

impl TensorStore {
    fn take(&mut self, name: &str) -> Result<Vec<f32>> {
        self.tensors
            .remove(name)
            .ok_or_else(|| Error::Schema(format!("missing tensor `{name}`")))
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let data = self.take(name)?;
        Matrix::new(rows, cols, data)
            .map_err(|e| Error::Schema(format!("tensor `{name}`: {e}")))
    }

    fn norm(&mut self, prefix: &str, bias: bool) -> Result<Norm> {
        Ok(Norm {
            gain: self.take(&format!("{prefix}.weight"))?,
            bias: if bias {
                Some(self.take(&format!("{prefix}.bias"))?)
            } else {
                None
            },
        })
    }

    fn linear(&mut self, prefix: &str, rows: usize, cols: usize, bias: bool) -> Result<Linear> {
        Ok(Linear {
            weight: self.matrix(&format!("{prefix}.weight"), rows, cols)?,
            bias: if bias {
                Some(self.take(&format!("{prefix}.bias"))?)
            } else {
                None
            },
        })
    }
}

impl ModelWeights {
    /// Builds weights by asking `fill` for the contents of every schema tensor.
    pub fn from_fn(
        config: ModelConfig,
        mut fill: impl FnMut(&TensorSpec) -> Vec<f32>,
    ) -> Result<Self> {
        config.validate()?;
        let tensors = tensor_schema(&config)
            .into_iter()
            .map(|spec| {
                let data = fill(&spec);
                (spec.name, data)
            })
            .collect();
        Self::from_named(config, tensors)
    }

    /// Assembles weights from named flat tensors, checking schema completeness.
    pub fn from_named(config: ModelConfig, tensors: HashMap<String, Vec<f32>>) -> Result<Self> {
        config.validate()?;
        for spec in tensor_schema(&config) {
            match tensors.get(&spec.name) {
                None => return Err(Error::Schema(format!("missing tensor `{}`", spec.name))),
                Some(data) if data.len() != spec.numel() => {
                    return Err(Error::Schema(format!(
                        "tensor `{}` has {} values, shape {:?} needs {}",
                        spec.name,
                        data.len(),
                        spec.shape,
                        spec.numel()
                    )))
                }
                Some(_) => {}
            }
        }
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        let norm_bias = config.norm_kind == NormKind::Layernorm;
        let mut store = TensorStore { tensors };

        let tok_embeddings = store.matrix("tok_embeddings", v, d)?;
        let pos_embeddings = match config.positional_kind {
            PositionalKind::Learned => {
                Some(store.matrix("pos_embeddings", config.max_seq_len, d)?)
            }
            PositionalKind::Rotary => None,
        };
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let p = format!("layers.{i}");
            let b = config.bias;
            layers.push(LayerWeights {
                attn_norm: store.norm(&format!("{p}.attn_norm"), norm_bias)?,
                q: store.linear(&format!("{p}.attn.q"), d, d, b)?,
                k: store.linear(&format!("{p}.attn.k"), d, d, b)?,
                v: store.linear(&format!("{p}.attn.v"), d, d, b)?,
                o: store.linear(&format!("{p}.attn.o"), d, d, b)?,
                ffn_norm: store.norm(&format!("{p}.ffn_norm"), norm_bias)?,
                up: store.linear(&format!("{p}.ffn.up"), d, f, b)?,
                gate: match config.ffn_kind {
                    FfnKind::GatedSilu => Some(store.linear(&format!("{p}.ffn.gate"), d, f, b)?),
                    FfnKind::Gelu => None,
                },
                down: store.linear(&format!("{p}.ffn.down"), f, d, b)?,
            });
        }
        let final_norm = store.norm("final_norm", norm_bias)?;
        let lm_head = store.matrix("lm_head.weight", d, v)?;

        if let Some(extra) = store.tensors.keys().min() {
            return Err(Error::Schema(format!("unexpected tensor `{extra}`")));
        }
        let weights = Self {
            config,
            tok_embeddings,
            pos_embeddings,
            layers,
            final_norm,
            lm_head,
        };
        weights.validate()?;
        Ok(weights)
    }

    /// Schema tensors paired with their data, in canonical order.
    pub fn named_tensors(&self) -> Vec<(TensorSpec, &[f32])> {
        tensor_schema(&self.config)
            .into_iter()
            .map(|spec| {
                let data = self.tensor(&spec.name).expect("schema names resolve");
                (spec, data)
            })
            .collect()
    }

    /// Looks a tensor up by schema name.
    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        fn norm_part<'a>(norm: &'a Norm, part: &str) -> Option<&'a [f32]> {
            match part {
                "weight" => Some(&norm.gain),
                "bias" => norm.bias.as_deref(),
                _ => None,
            }
        }
        fn linear_part<'a>(lin: &'a Linear, part: &str) -> Option<&'a [f32]> {
            match part {
                "weight" => Some(lin.weight.data()),
                "bias" => lin.bias.as_deref(),
                _ => None,
            }
        }
        match name {
            "tok_embeddings" => return Some(self.tok_embeddings.data()),
            "pos_embeddings" => return self.pos_embeddings.as_ref().map(Matrix::data),
            "lm_head.weight" => return Some(self.lm_head.data()),
            _ => {}
        }
        if let Some(part) = name.strip_prefix("final_norm.") {
            return norm_part(&self.final_norm, part);
        }
        let rest = name.strip_prefix("layers.")?;
        let (idx, rest) = rest.split_once('.')?;
        let layer = self.layers.get(idx.parse::<usize>().ok()?)?;
        let (module, part) = rest.rsplit_once('.')?;
        match module {
            "attn_norm" => norm_part(&layer.attn_norm, part),
            "ffn_norm" => norm_part(&layer.ffn_norm, part),
            "attn.q" => linear_part(&layer.q, part),
            "attn.k" => linear_part(&layer.k, part),
            "attn.v" => linear_part(&layer.v, part),
            "attn.o" => linear_part(&layer.o, part),
            "ffn.up" => linear_part(&layer.up, part),
            "ffn.gate" => layer.gate.as_ref().and_then(|g| linear_part(g, part)),
            "ffn.down" => linear_part(&layer.down, part),
            _ => None,
        }
    }

    /// Checks tensor shapes against the config.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        if self.layers.len() != c.n_layers {
            return Err(Error::Schema(format!(
                "{} layers for n_layers = {}",
                self.layers.len(),
                c.n_layers
            )));
        }
        for spec in tensor_schema(c) {
            let data = self
                .tensor(&spec.name)
                .ok_or_else(|| Error::Schema(format!("missing tensor `{}`", spec.name)))?;
            if data.len() != spec.numel() {
                return Err(Error::Schema(format!(
                    "tensor `{}` has {} values, shape {:?} needs {}",
                    spec.name,
                    data.len(),
                    spec.shape,
                    spec.numel()
                )));
            }
        }
        let check = |name: &str, m: &Matrix, shape: (usize, usize)| {
            if m.shape() == shape {
                Ok(())
            } else {
                Err(Error::Schema(format!(
                    "tensor `{name}` is {:?}, expected {shape:?}",
                    m.shape()
                )))
            }
        };
        let (d, f) = (c.d_model, c.d_ff);
        check("tok_embeddings", &self.tok_embeddings, (c.vocab_size, d))?;
        check("lm_head.weight", &self.lm_head, (d, c.vocab_size))?;
        if let Some(pos) = &self.pos_embeddings {
            check("pos_embeddings", pos, (c.max_seq_len, d))?;
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, lin, shape) in [
                ("attn.q", &layer.q, (d, d)),
                ("attn.k", &layer.k, (d, d)),
                ("attn.v", &layer.v, (d, d)),
                ("attn.o", &layer.o, (d, d)),
                ("ffn.up", &layer.up, (d, f)),
                ("ffn.down", &layer.down, (f, d)),
            ] {
                check(&format!("layers.{i}.{name}.weight"), &lin.weight, shape)?;
            }
            if let Some(gate) = &layer.gate {
                check(&format!("layers.{i}.ffn.gate.weight"), &gate.weight, (d, f))?;
            }
        }
        Ok(())
    }

    /// Zeroes the projections of every layer, turning each block into an
    /// exact identity on the residual stream.
    pub fn zero_layer_projections(&mut self) {
        for layer in &mut self.layers {
            layer.zero_projections();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_counts() {
        // 9 per layer (2 gains, 4 attention, 3 ffn) plus embeddings, final gain, head.
        let llama = ModelConfig::llama_like(4, 8, 2, 16, 32, 8);
        assert_eq!(tensor_schema(&llama).len(), 9 * 4 + 3);
        // GPT-2 layout: norms carry biases, every projection carries a bias, no gate.
        let gpt = ModelConfig::gpt2_like(12, 8, 2, 32, 32, 8);
        assert_eq!(tensor_schema(&gpt).len(), (4 + 2 * 4 + 2 * 2) * 12 + 5);
    }

    #[test]
    fn tensor_lookup_covers_schema() {
        let cfg = ModelConfig::gpt2_like(2, 4, 2, 8, 6, 3);
        let w = ModelWeights::from_fn(cfg, |spec| vec![0.5; spec.numel()]).unwrap();
        for spec in tensor_schema(&w.config) {
            assert_eq!(w.tensor(&spec.name).unwrap().len(), spec.numel(), "{}", spec.name);
        }
        assert!(w.tensor("layers.2.attn.q.weight").is_none());
        assert!(w.tensor("layers.0.ffn.gate.weight").is_none());
    }

    #[test]
    fn missing_and_extra_tensors_are_schema_errors() {
        let cfg = ModelConfig::llama_like(2, 4, 2, 8, 6, 3);
        let full: HashMap<String, Vec<f32>> = tensor_schema(&cfg)
            .into_iter()
            .map(|s| {
                let n = s.numel();
                (s.name, vec![0.0; n])
            })
            .collect();

        let mut missing = full.clone();
        missing.remove("final_norm.weight");
        let err = ModelWeights::from_named(cfg.clone(), missing).unwrap_err();
        assert!(err.to_string().contains("final_norm.weight"), "{err}");

        let mut extra = full.clone();
        extra.insert("bogus".into(), vec![1.0]);
        assert!(matches!(ModelWeights::from_named(cfg.clone(), extra), Err(Error::Schema(_))));

        let mut short = full;
        short.insert("lm_head.weight".into(), vec![0.0; 3]);
        assert!(matches!(ModelWeights::from_named(cfg, short), Err(Error::Schema(_))));
    }
}
