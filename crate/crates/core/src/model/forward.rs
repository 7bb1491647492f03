// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward pass on the residual stream, driven by an [`ExecutionPlan`].

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::config::{FfnKind, ModelConfig, NormKind, PositionalKind};
use crate::model::weights::{LayerWeights, Linear, ModelWeights, Norm};
use crate::numerics::{
    gelu_tanh_scalar, layer_norm_into, matmul, rms_norm_into, silu_scalar, softmax_in_place,
    Matrix,
};
use crate::plans::{validate_plan, ExecutionPlan, Merge, Stage};

/// Nonempty list of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Degenerate("empty token sequence".into()));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks ids and length against model limits.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.0.len() > config.max_seq_len {
            return Err(Error::Vocabulary(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                self.0.len(),
                config.max_seq_len
            )));
        }
        if let Some((pos, id)) = self
            .0
            .iter()
            .enumerate()
            .find(|(_, &id)| id as usize >= config.vocab_size)
        {
            return Err(Error::Vocabulary(format!(
                "token id {id} at position {pos} outside vocabulary of {}",
                config.vocab_size
            )));
        }
        Ok(())
    }
}

/// Post-residual, pre-final-norm hidden states, one per executed stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    pub states: Vec<Matrix>,
}

impl TraceBundle {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Per-sequence positional state shared by every executed layer.
///
/// Rotary tables are indexed by absolute token position, so a layer sees
/// the same rotation whatever stage it runs in.
#[derive(Debug, Clone)]
pub struct LayerContext {
    seq_len: usize,
    half: usize,
    cos: Vec<f32>,
    sin: Vec<f32>,
}

impl LayerContext {
    pub fn new(config: &ModelConfig, seq_len: usize) -> Self {
        let half = config.head_dim() / 2;
        let (mut cos, mut sin) = (Vec::new(), Vec::new());
        if config.positional_kind == PositionalKind::Rotary {
            cos.reserve(seq_len * half);
            sin.reserve(seq_len * half);
            for pos in 0..seq_len {
                for i in 0..half {
                    let freq = (config.rope_theta as f64).powf(-2.0 * i as f64 / (2 * half) as f64);
                    let angle = pos as f64 * freq;
                    cos.push(angle.cos() as f32);
                    sin.push(angle.sin() as f32);
                }
            }
        }
        Self {
            seq_len,
            half,
            cos,
            sin,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn rotate(&self, m: &mut Matrix, n_heads: usize, head_dim: usize) {
        for pos in 0..m.rows() {
            let cos = &self.cos[pos * self.half..(pos + 1) * self.half];
            let sin = &self.sin[pos * self.half..(pos + 1) * self.half];
            let row = m.row_mut(pos);
            for h in 0..n_heads {
                let head = &mut row[h * head_dim..(h + 1) * head_dim];
                for i in 0..self.half {
                    let (a, b) = (head[i], head[i + self.half]);
                    head[i] = a * cos[i] - b * sin[i];
                    head[i + self.half] = b * cos[i] + a * sin[i];
                }
            }
        }
    }
}

fn normalize_rows(config: &ModelConfig, norm: &Norm, h: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for i in 0..h.rows() {
        let (x, o) = (h.row(i), out.row_mut(i));
        match config.norm_kind {
            NormKind::Rms => rms_norm_into(x, &norm.gain, config.norm_eps, o),
            NormKind::Layernorm => {
                layer_norm_into(x, &norm.gain, norm.bias.as_deref(), config.norm_eps, o)
            }
        }
    }
    out
}

fn project(x: &Matrix, lin: &Linear) -> Result<Matrix> {
    let mut y = matmul(x, &lin.weight)?;
    if let Some(b) = &lin.bias {
        y.add_row_bias(b);
    }
    Ok(y)
}

/// Token embedding plus learned positions (rotary models add nothing here).
pub fn embed(weights: &ModelWeights, tokens: &TokenSequence) -> Result<Matrix> {
    let config = &weights.config;
    tokens.check(config)?;
    let d = config.d_model;
    let mut h = Matrix::zeros(tokens.len(), d);
    for (pos, &id) in tokens.ids().iter().enumerate() {
        let row = h.row_mut(pos);
        row.copy_from_slice(weights.tok_embeddings.row(id as usize));
        if let Some(pe) = &weights.pos_embeddings {
            for (a, b) in row.iter_mut().zip(pe.row(pos)) {
                *a += *b;
            }
        }
    }
    Ok(h)
}

fn causal_attention(config: &ModelConfig, q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    let (seq, d) = q.shape();
    let head_dim = config.head_dim();
    let scale = 1.0 / (head_dim as f32).sqrt();
    let mut out = Matrix::zeros(seq, d);
    let mut scores = vec![0.0f32; seq];
    for h in 0..config.n_heads {
        let cols = h * head_dim..(h + 1) * head_dim;
        for i in 0..seq {
            let qi = &q.row(i)[cols.clone()];
            let scores = &mut scores[..=i];
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &k.row(j)[cols.clone()];
                let mut dot = 0.0f32;
                for (a, b) in qi.iter().zip(kj) {
                    dot += a * b;
                }
                *s = dot * scale;
            }
            softmax_in_place(scores);
            let oi = &mut out.row_mut(i)[cols.clone()];
            for (j, &p) in scores.iter().enumerate() {
                let vj = &v.row(j)[cols.clone()];
                for (o, b) in oi.iter_mut().zip(vj) {
                    *o += p * b;
                }
            }
        }
    }
    out
}

/// One pre-norm block: `h + attn(norm(h))`, then `+ ffn(norm(·))`.
pub fn apply_layer(
    config: &ModelConfig,
    layer: &LayerWeights,
    h: &Matrix,
    ctx: &LayerContext,
) -> Result<Matrix> {
    if h.cols() != config.d_model || h.rows() != ctx.seq_len() {
        return Err(Error::Shape(format!(
            "layer input {}x{} for d_model {} and sequence length {}",
            h.rows(),
            h.cols(),
            config.d_model,
            ctx.seq_len()
        )));
    }
    let x = normalize_rows(config, &layer.attn_norm, h);
    let mut q = project(&x, &layer.q)?;
    let mut k = project(&x, &layer.k)?;
    let v = project(&x, &layer.v)?;
    if config.positional_kind == PositionalKind::Rotary {
        ctx.rotate(&mut q, config.n_heads, config.head_dim());
        ctx.rotate(&mut k, config.n_heads, config.head_dim());
    }
    let attn = causal_attention(config, &q, &k, &v);
    let mut out = h.clone();
    out.add_assign(&project(&attn, &layer.o)?);

    let x = normalize_rows(config, &layer.ffn_norm, &out);
    let mut act = project(&x, &layer.up)?;
    match (config.ffn_kind, &layer.gate) {
        (FfnKind::GatedSilu, Some(gate)) => {
            let g = project(&x, gate)?;
            for (u, &gv) in act.data_mut().iter_mut().zip(g.data()) {
                *u *= silu_scalar(gv);
            }
        }
        (FfnKind::Gelu, None) => act.data_mut().iter_mut().for_each(|u| *u = gelu_tanh_scalar(*u)),
        _ => return Err(Error::Shape("gate projection does not match ffn_kind".into())),
    }
    out.add_assign(&project(&act, &layer.down)?);
    Ok(out)
}

/// Final norm followed by the unembedding product.
pub fn logits(weights: &ModelWeights, h: &Matrix) -> Result<Matrix> {
    if h.cols() != weights.config.d_model {
        return Err(Error::Shape(format!(
            "hidden width {} for d_model {}",
            h.cols(),
            weights.config.d_model
        )));
    }
    let x = normalize_rows(&weights.config, &weights.final_norm, h);
    matmul(&x, &weights.lm_head)
}

fn apply_stage(
    weights: &ModelWeights,
    h: &Matrix,
    stage: &Stage,
    ctx: &LayerContext,
    concurrent: bool,
) -> Result<Matrix> {
    let config = &weights.config;
    let run = |&idx: &usize| apply_layer(config, &weights.layers[idx - 1], h, ctx);
    match stage.merge {
        Merge::Identity => run(&stage.layers[0]),
        Merge::Mean => {
            // Collected in stage order (ascending index), then reduced in that order.
            let outputs: Vec<Matrix> = if concurrent {
                stage.layers.par_iter().map(run).collect::<Result<_>>()?
            } else {
                stage.layers.iter().map(run).collect::<Result<_>>()?
            };
            let mut iter = outputs.into_iter();
            let mut acc = iter.next().expect("validated stages are nonempty");
            for m in iter {
                acc.add_assign(&m);
            }
            let n = stage.layers.len() as f32;
            acc.data_mut().iter_mut().for_each(|v| *v /= n);
            Ok(acc)
        }
    }
}

fn run_stages(
    weights: &ModelWeights,
    mut h: Matrix,
    stages: &[Stage],
    ctx: &LayerContext,
    concurrent: bool,
    mut trace: Option<&mut Vec<Matrix>>,
) -> Result<Matrix> {
    for stage in stages {
        h = apply_stage(weights, &h, stage, ctx, concurrent)?;
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(h.clone());
        }
    }
    Ok(h)
}

/// Logits and, when requested, the per-stage hidden-state trace.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub trace: Option<TraceBundle>,
}

/// Plain sequential forward through layers `1..=T`, independent of plans.
pub fn forward(weights: &ModelWeights, tokens: &TokenSequence) -> Result<Matrix> {
    let ctx = LayerContext::new(&weights.config, tokens.len());
    let mut h = embed(weights, tokens)?;
    for layer in &weights.layers {
        h = apply_layer(&weights.config, layer, &h, &ctx)?;
    }
    logits(weights, &h)
}

/// Runs `plan` on a single thread.
pub fn execute_plan(
    weights: &ModelWeights,
    tokens: &TokenSequence,
    plan: &ExecutionPlan,
    capture: bool,
) -> Result<ForwardOutput> {
    execute_plan_with(weights, tokens, plan, capture, 1)
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Runs `plan`, evaluating the layers of each mean stage on up to `workers`
/// threads. Output is bit-identical for every worker count.
pub fn execute_plan_with(
    weights: &ModelWeights,
    tokens: &TokenSequence,
    plan: &ExecutionPlan,
    capture: bool,
    workers: usize,
) -> Result<ForwardOutput> {
    let plan = validate_plan(plan, &weights.config)?;
    let run = |concurrent: bool| -> Result<ForwardOutput> {
        let ctx = LayerContext::new(&weights.config, tokens.len());
        let h = embed(weights, tokens)?;
        let mut states = capture.then(|| Vec::with_capacity(plan.stages.len()));
        let h = run_stages(weights, h, &plan.stages, &ctx, concurrent, states.as_mut())?;
        Ok(ForwardOutput {
            logits: logits(weights, &h)?,
            trace: states.map(|states| TraceBundle { states }),
        })
    };
    if workers == 1 {
        run(false)
    } else {
        worker_pool(workers)?.install(|| run(true))
    }
}

/// Wall-clock time of the stages between the first `start_layer` stages and
/// the last `start_layer + 1` stages of `plan`, with mean stages spread over
/// `workers` threads. The prefix runs untimed to produce the block's input.
pub fn middle_block_wallclock(
    weights: &ModelWeights,
    tokens: &TokenSequence,
    plan: &ExecutionPlan,
    start_layer: usize,
    workers: usize,
) -> Result<Duration> {
    let plan = validate_plan(plan, &weights.config)?;
    let pool = worker_pool(workers)?;
    let (prefix, suffix) = (start_layer, start_layer + 1);
    if prefix + suffix > plan.stages.len() {
        return Err(Error::Plan(format!(
            "plan of {} stages has no middle block for start layer {start_layer}",
            plan.stages.len()
        )));
    }
    let middle = &plan.stages[prefix..plan.stages.len() - suffix];
    let ctx = LayerContext::new(&weights.config, tokens.len());
    let h = embed(weights, tokens)?;
    let h = run_stages(weights, h, &plan.stages[..prefix], &ctx, false, None)?;
    pool.install(|| {
        let start = Instant::now();
        let out = run_stages(weights, h, middle, &ctx, workers > 1, None)?;
        let elapsed = start.elapsed();
        drop(out);
        Ok(elapsed)
    })
}
