// SPDX-License-Identifier: MIT OR Apache-2.0

//! Test-only reference implementations, written scalar-by-scalar in f64
//! against the named tensor layout rather than the engine's structs.

#![allow(dead_code)]

use layer_painter::model::{FfnKind, ModelConfig, ModelWeights, NormKind, PositionalKind};

type Mat = Vec<Vec<f64>>;

fn tensor(w: &ModelWeights, name: &str) -> Vec<f64> {
    w.tensor(name)
        .unwrap_or_else(|| panic!("missing tensor {name}"))
        .iter()
        .map(|&v| v as f64)
        .collect()
}

/// `x · W (+ b)` with `W` stored `[in, out]` row-major.
fn linear(x: &[f64], w: &[f64], bias: Option<&[f64]>, out_dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_dim];
    for (i, xi) in x.iter().enumerate() {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj += xi * w[i * out_dim + j];
        }
    }
    if let Some(b) = bias {
        for (yj, bj) in y.iter_mut().zip(b) {
            *yj += bj;
        }
    }
    y
}

fn norm(cfg: &ModelConfig, w: &ModelWeights, prefix: &str, x: &[f64]) -> Vec<f64> {
    let gain = tensor(w, &format!("{prefix}.weight"));
    let n = x.len() as f64;
    let eps = cfg.norm_eps as f64;
    match cfg.norm_kind {
        NormKind::Rms => {
            let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
            let r = 1.0 / (ms + eps).sqrt();
            x.iter().zip(&gain).map(|(v, g)| v * r * g).collect()
        }
        NormKind::Layernorm => {
            let bias = tensor(w, &format!("{prefix}.bias"));
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let r = 1.0 / (var + eps).sqrt();
            (0..x.len()).map(|i| (x[i] - mean) * r * gain[i] + bias[i]).collect()
        }
    }
}

fn rope(cfg: &ModelConfig, v: &mut [f64], pos: usize) {
    let hd = cfg.head_dim();
    let half = hd / 2;
    for h in 0..cfg.n_heads {
        let base = h * hd;
        for i in 0..half {
            let theta = pos as f64 / (cfg.rope_theta as f64).powf(2.0 * i as f64 / hd as f64);
            let (a, b) = (v[base + i], v[base + i + half]);
            v[base + i] = a * theta.cos() - b * theta.sin();
            v[base + i + half] = a * theta.sin() + b * theta.cos();
        }
    }
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn embed(w: &ModelWeights, tokens: &[u32]) -> Mat {
    let cfg = &w.config;
    let d = cfg.d_model;
    let tok = tensor(w, "tok_embeddings");
    let pos = (cfg.positional_kind == PositionalKind::Learned).then(|| tensor(w, "pos_embeddings"));
    tokens
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            (0..d)
                .map(|j| tok[t as usize * d + j] + pos.as_ref().map_or(0.0, |pe| pe[p * d + j]))
                .collect()
        })
        .collect()
}

/// One pre-norm block, `layer` 1-based.
pub fn layer(w: &ModelWeights, layer: usize, h: &Mat) -> Mat {
    let cfg = &w.config;
    let (d, f, hd) = (cfg.d_model, cfg.d_ff, cfg.head_dim());
    let p = format!("layers.{}", layer - 1);
    let get = |n: &str| tensor(w, &format!("{p}.{n}"));
    let bias = |n: &str| cfg.bias.then(|| get(&format!("{n}.bias")));
    let (wq, wk, wv, wo) = (get("attn.q.weight"), get("attn.k.weight"), get("attn.v.weight"), get("attn.o.weight"));
    let (bq, bk, bv, bo) = (bias("attn.q"), bias("attn.k"), bias("attn.v"), bias("attn.o"));

    let seq = h.len();
    let mut q = Vec::new();
    let mut k = Vec::new();
    let mut v = Vec::new();
    for (pos, row) in h.iter().enumerate() {
        let x = norm(cfg, w, &format!("{p}.attn_norm"), row);
        let mut qi = linear(&x, &wq, bq.as_deref(), d);
        let mut ki = linear(&x, &wk, bk.as_deref(), d);
        if cfg.positional_kind == PositionalKind::Rotary {
            rope(cfg, &mut qi, pos);
            rope(cfg, &mut ki, pos);
        }
        q.push(qi);
        k.push(ki);
        v.push(linear(&x, &wv, bv.as_deref(), d));
    }
    let mut out = h.clone();
    for i in 0..seq {
        let mut attn = vec![0.0; d];
        for head in 0..cfg.n_heads {
            let r = head * hd..(head + 1) * hd;
            let scores: Vec<f64> = (0..=i)
                .map(|j| r.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for (j, s) in scores.iter().enumerate() {
                let pj = (s - m).exp() / z;
                for c in r.clone() {
                    attn[c] += pj * v[j][c];
                }
            }
        }
        let o = linear(&attn, &wo, bo.as_deref(), d);
        for c in 0..d {
            out[i][c] += o[c];
        }
        let x = norm(cfg, w, &format!("{p}.ffn_norm"), &out[i]);
        let up = linear(&x, &get("ffn.up.weight"), bias("ffn.up").as_deref(), f);
        let act: Vec<f64> = match cfg.ffn_kind {
            FfnKind::GatedSilu => {
                let gate = linear(&x, &get("ffn.gate.weight"), bias("ffn.gate").as_deref(), f);
                up.iter().zip(&gate).map(|(u, g)| u * silu(*g)).collect()
            }
            FfnKind::Gelu => up.iter().map(|&u| gelu(u)).collect(),
        };
        let down = linear(&act, &get("ffn.down.weight"), bias("ffn.down").as_deref(), d);
        for c in 0..d {
            out[i][c] += down[c];
        }
    }
    out
}

pub fn logits(w: &ModelWeights, h: &Mat) -> Mat {
    let cfg = &w.config;
    let head = tensor(w, "lm_head.weight");
    h.iter()
        .map(|row| linear(&norm(cfg, w, "final_norm", row), &head, None, cfg.vocab_size))
        .collect()
}

/// Embedding, layers `1..=T` in order, final norm and unembedding.
pub fn forward(w: &ModelWeights, tokens: &[u32]) -> Mat {
    let mut h = embed(w, tokens);
    for l in 1..=w.config.n_layers {
        h = layer(w, l, &h);
    }
    logits(w, &h)
}

/// Runs an explicit list of stages, each a set of 1-based layers whose
/// outputs are averaged.
pub fn forward_stages(w: &ModelWeights, tokens: &[u32], stages: &[Vec<usize>]) -> Mat {
    let mut h = embed(w, tokens);
    for stage in stages {
        let outs: Vec<Mat> = stage.iter().map(|&l| layer(w, l, &h)).collect();
        h = (0..h.len())
            .map(|i| {
                (0..w.config.d_model)
                    .map(|c| outs.iter().map(|o| o[i][c]).sum::<f64>() / outs.len() as f64)
                    .collect()
            })
            .collect();
    }
    logits(w, &h)
}

pub fn max_abs_diff(engine: &layer_painter::numerics::Matrix, oracle: &Mat) -> f64 {
    assert_eq!(engine.rows(), oracle.len());
    let mut worst = 0.0f64;
    for (i, row) in oracle.iter().enumerate() {
        assert_eq!(engine.cols(), row.len());
        for (a, b) in engine.row(i).iter().zip(row) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    worst
}

/// Random model used throughout: seeded, Llama-like unless stated.
pub fn random_model(config: &ModelConfig, seed: u64) -> ModelWeights {
    layer_painter::store::generate_random_model(config, seed).expect("valid config")
}

pub fn tokens(n: usize, vocab: usize, seed: u64) -> Vec<u32> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) % vocab as u64) as u32
        })
        .collect()
}

/// Mean of `sim[i][j]` over all ordered pairs inside `[a, b)`.
fn segment_mean(sim: &[Vec<f64>], a: usize, b: usize) -> (f64, usize) {
    let mut total = 0.0;
    for row in &sim[a..b] {
        for v in &row[a..b] {
            total += v;
        }
    }
    (total, (b - a) * (b - a))
}

/// Brute force over every split: direct pair sums, no prefix tables.
/// Returns `(cut1, cut2, objective)`, earliest split winning ties.
pub fn segment_exhaustive(sim: &[Vec<f64>]) -> (usize, usize, f64) {
    let n = sim.len();
    let mut best = (0, 0, f64::NEG_INFINITY);
    for c1 in 1..n {
        for c2 in c1 + 1..n {
            let parts = [segment_mean(sim, 0, c1), segment_mean(sim, c1, c2), segment_mean(sim, c2, n)];
            let total: f64 = parts.iter().map(|p| p.0).sum();
            let pairs: usize = parts.iter().map(|p| p.1).sum();
            let score = total / pairs as f64;
            if score > best.2 + 1e-12 {
                best = (c1, c2, score);
            }
        }
    }
    best
}

/// Symmetric matrix with unit diagonal and three planted contiguous blocks:
/// within-block entries near `high`, cross-block entries near `low`.
pub fn planted_blocks(sizes: [usize; 3], high: f64, low: f64, noise: f64, rng: &mut impl rand::Rng) -> Vec<Vec<f64>> {
    let n: usize = sizes.iter().sum();
    let label: Vec<usize> = (0..3).flat_map(|b| std::iter::repeat_n(b, sizes[b])).collect();
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let base = if label[i] == label[j] { high } else { low };
            let v = base + rng.random_range(-noise..=noise);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}
