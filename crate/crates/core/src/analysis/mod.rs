// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hidden-state analytics over captured traces: average cosine similarity
//! between layers, per-layer activation statistics, and the exact
//! three-segment (beginning / middle / ending) layer grouping.
//!
//! Similarities pool every token position of every sample; nothing is
//! restricted to the final token.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::model::TraceBundle;
use crate::numerics::cosine_similarity;
use crate::svg;

/// `L × L` average cosine similarities between per-layer hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    /// Hidden-state vectors pooled per entry (samples × positions).
    pub pooled_vectors: usize,
}

impl SimilarityMatrix {
    /// Wraps row-major values, checking range, symmetry (1e-6) and unit diagonal.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!(
                "{n}x{n} similarity matrix needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            if (values[i * n + i] - 1.0).abs() > 1e-6 {
                return Err(Error::Degenerate(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&v) {
                    return Err(Error::Degenerate(format!("entry ({i},{j}) = {v} outside [-1,1]")));
                }
                if (v - values[j * n + i]).abs() > 1e-6 {
                    return Err(Error::Degenerate(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(Self {
            n,
            values,
            pooled_vectors: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Zero-based entry.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `L` rows of `L` comma-separated values, six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| format!("{:.6}", self.get(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_svg(&self, title: &str) -> String {
        let lo = self.values.iter().copied().fold(1.0f64, f64::min);
        svg::heatmap(title, self.n, &self.values, lo.min(0.0), 1.0)
    }
}

/// Average cosine similarity between the hidden states of every pair of layers.
///
/// Entry `(i, j)` is the mean over samples and token positions of
/// `cos(h_i[pos], h_j[pos])`. The diagonal is exactly 1.
pub fn similarity_matrix(traces: &[TraceBundle]) -> Result<SimilarityMatrix> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Degenerate("no traces to compare".into()))?;
    let n = first.len();
    if n == 0 {
        return Err(Error::Degenerate("trace has no layers".into()));
    }
    let mut sums = vec![0.0f64; n * n];
    let mut count = 0usize;
    for (s, trace) in traces.iter().enumerate() {
        if trace.len() != n {
            return Err(Error::Shape(format!(
                "trace {s} has {} layers, expected {n}",
                trace.len()
            )));
        }
        let shape = trace.states[0].shape();
        if trace.states.iter().any(|m| m.shape() != shape) {
            return Err(Error::Shape(format!("trace {s} mixes hidden-state shapes")));
        }
        for pos in 0..shape.0 {
            for i in 0..n {
                for j in i + 1..n {
                    sums[i * n + j] +=
                        cosine_similarity(trace.states[i].row(pos), trace.states[j].row(pos))?;
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("traces hold no token positions".into()));
    }
    let mut values = vec![1.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sums[i * n + j] / count as f64;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix {
        n,
        values,
        pooled_vectors: count,
    })
}

/// Mean and population variance of hidden-state entries per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl LayerStats {
    /// Header `layer,mean,variance`, one row per one-based layer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,mean,variance\n");
        for (i, (m, v)) in self.mean.iter().zip(&self.variance).enumerate() {
            let _ = writeln!(out, "{},{m:.6e},{v:.6e}", i + 1);
        }
        out
    }
}

/// Per-layer statistics pooled over dimensions, positions and samples.
pub fn variance_profile(traces: &[TraceBundle]) -> Result<LayerStats> {
    let n = traces
        .first()
        .ok_or_else(|| Error::Degenerate("no traces to summarize".into()))?
        .len();
    // Welford accumulation per layer, samples in order.
    let mut count = vec![0u64; n];
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    for (s, trace) in traces.iter().enumerate() {
        if trace.len() != n {
            return Err(Error::Shape(format!(
                "trace {s} has {} layers, expected {n}",
                trace.len()
            )));
        }
        for (layer, state) in trace.states.iter().enumerate() {
            for &x in state.data() {
                let x = x as f64;
                count[layer] += 1;
                let delta = x - mean[layer];
                mean[layer] += delta / count[layer] as f64;
                m2[layer] += delta * (x - mean[layer]);
            }
        }
    }
    let variance = m2
        .iter()
        .zip(&count)
        .map(|(&m2, &c)| if c == 0 { 0.0 } else { (m2 / c as f64).max(0.0) })
        .collect();
    Ok(LayerStats { mean, variance })
}

/// Beginning / middle / ending partition of layers `1..=L`:
/// `1..=cut1`, `cut1+1..=cut2`, `cut2+1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrouping {
    pub cut1: usize,
    pub cut2: usize,
    pub n_layers: usize,
    /// Mean pairwise similarity inside each segment.
    pub within: [f64; 3],
    /// Mean over all within-segment pairs, the maximized quantity.
    pub objective: f64,
}

impl LayerGrouping {
    pub fn sizes(&self) -> [usize; 3] {
        [self.cut1, self.cut2 - self.cut1, self.n_layers - self.cut2]
    }

    pub fn summary(&self) -> String {
        let [b, m, e] = self.sizes();
        format!(
            "cut1,cut2,beginning,middle,ending,within_beginning,within_middle,within_ending,objective\n\
             {},{},{b},{m},{e},{:.6},{:.6},{:.6},{:.6}\n",
            self.cut1, self.cut2, self.within[0], self.within[1], self.within[2], self.objective
        )
    }
}

/// Exact search over all contiguous three-way splits for the one maximizing
/// the mean similarity over all within-segment pairs `(i, j)`, diagonal
/// included. Ties go to the smallest `cut1`, then the smallest `cut2`.
pub fn segment_layers(sim: &SimilarityMatrix) -> Result<LayerGrouping> {
    let n = sim.len();
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 layers to segment, got {n}"
        )));
    }
    // prefix[i][j] = sum of sim over rows < i, cols < j
    let w = n + 1;
    let mut prefix = vec![0.0f64; w * w];
    for i in 0..n {
        for j in 0..n {
            prefix[(i + 1) * w + j + 1] =
                sim.get(i, j) + prefix[i * w + j + 1] + prefix[(i + 1) * w + j] - prefix[i * w + j];
        }
    }
    let block = |a: usize, b: usize| {
        prefix[b * w + b] - prefix[a * w + b] - prefix[b * w + a] + prefix[a * w + a]
    };
    let mut best: Option<(f64, usize, usize)> = None;
    for cut1 in 1..n - 1 {
        for cut2 in cut1 + 1..n {
            let total = block(0, cut1) + block(cut1, cut2) + block(cut2, n);
            let pairs = cut1 * cut1 + (cut2 - cut1).pow(2) + (n - cut2).pow(2);
            let score = total / pairs as f64;
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, cut1, cut2));
            }
        }
    }
    let (objective, cut1, cut2) = best.expect("n >= 3 yields at least one split");
    let mean_block = |a: usize, b: usize| block(a, b) / ((b - a) * (b - a)) as f64;
    Ok(LayerGrouping {
        cut1,
        cut2,
        n_layers: n,
        within: [mean_block(0, cut1), mean_block(cut1, cut2), mean_block(cut2, n)],
        objective,
    })
}
