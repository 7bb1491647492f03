// SPDX-License-Identifier: MIT OR Apache-2.0

//! Python bindings: model generation and loading, plan compilation,
//! plan execution, similarity analysis and score normalization.

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use layer_painter::analysis::{segment_layers as segment, similarity_matrix, SimilarityMatrix};
use layer_painter::eval::{aggregate_normalized_median, normalize_score as normalize, NormalizedScore, TaskKind};
use layer_painter::model::{execute_plan_with, forward, ModelConfig, ModelWeights, TokenSequence};
use layer_painter::plans::{self, compile_variant, ExecutionPlan, VariantKind};
use layer_painter::store::{generate_random_model, load_weights, save_weights};
use layer_painter::Error;

create_exception!(layer_painter_py, LayerPainterError, PyValueError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => LayerPainterError::new_err(other.to_string()),
    }
}

fn rows(m: &layer_painter::numerics::Matrix) -> Vec<Vec<f32>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Transformer weights plus configuration.
#[pyclass(module = "layer_painter_py", frozen)]
struct Model {
    weights: ModelWeights,
}

#[pymethods]
impl Model {
    /// Seeded random model; `arch` is "llama" or "gpt2".
    #[staticmethod]
    #[pyo3(signature = (n_layers, d_model, n_heads, d_ff, vocab_size, max_seq_len, seed=0, arch="llama"))]
    #[allow(clippy::too_many_arguments)]
    fn random(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
        vocab_size: usize,
        max_seq_len: usize,
        seed: u64,
        arch: &str,
    ) -> PyResult<Self> {
        let build = match arch {
            "llama" => ModelConfig::llama_like,
            "gpt2" => ModelConfig::gpt2_like,
            other => return Err(LayerPainterError::new_err(format!("unknown arch `{other}`"))),
        };
        let config = build(n_layers, d_model, n_heads, d_ff, vocab_size, max_seq_len);
        let weights = generate_random_model(&config, seed).map_err(to_py)?;
        Ok(Self { weights })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            weights: load_weights(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        save_weights(&self.weights, path).map_err(to_py)
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.weights.config.n_layers
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.weights.config.vocab_size
    }

    #[getter]
    fn max_seq_len(&self) -> usize {
        self.weights.config.max_seq_len
    }

    /// Copy of the model with every attention and FFN output projection zeroed.
    fn with_zero_layers(&self) -> Self {
        let mut weights = self.weights.clone();
        weights.zero_layer_projections();
        Self { weights }
    }

    /// Plain sequential forward; returns `[seq_len][vocab]` logits.
    fn forward(&self, py: Python<'_>, tokens: Vec<u32>) -> PyResult<Vec<Vec<f32>>> {
        let tokens = TokenSequence::new(tokens).map_err(to_py)?;
        let logits = py.detach(|| forward(&self.weights, &tokens)).map_err(to_py)?;
        Ok(rows(&logits))
    }

    #[pyo3(signature = (plan, tokens, workers=1))]
    fn execute(&self, py: Python<'_>, plan: &Plan, tokens: Vec<u32>, workers: usize) -> PyResult<Vec<Vec<f32>>> {
        let tokens = TokenSequence::new(tokens).map_err(to_py)?;
        let out = py
            .detach(|| execute_plan_with(&self.weights, &tokens, &plan.plan, false, workers))
            .map_err(to_py)?;
        Ok(rows(&out.logits))
    }

    /// Layer-by-layer cosine similarity of baseline hidden states pooled over
    /// every position of every sequence.
    fn similarity(&self, py: Python<'_>, sequences: Vec<Vec<u32>>) -> PyResult<Vec<Vec<f64>>> {
        let plan = ExecutionPlan::baseline(self.weights.config.n_layers);
        let sim = py
            .detach(|| {
                let traces = sequences
                    .into_iter()
                    .map(|ids| {
                        let tokens = TokenSequence::new(ids)?;
                        let out = layer_painter::model::execute_plan(&self.weights, &tokens, &plan, true)?;
                        Ok(out.trace.expect("capture requested"))
                    })
                    .collect::<layer_painter::Result<Vec<_>>>()?;
                similarity_matrix(&traces)
            })
            .map_err(to_py)?;
        Ok(matrix_rows(&sim))
    }
}

fn matrix_rows(sim: &SimilarityMatrix) -> Vec<Vec<f64>> {
    (0..sim.len())
        .map(|i| (0..sim.len()).map(|j| sim.get(i, j)).collect())
        .collect()
}

/// Compiled execution plan.
#[pyclass(module = "layer_painter_py", frozen)]
struct Plan {
    plan: ExecutionPlan,
}

#[pymethods]
impl Plan {
    #[staticmethod]
    #[pyo3(signature = (variant, n_layers, start_layer=None, iterations=None, seed=0, probe_layer=None))]
    fn from_variant(
        variant: &str,
        n_layers: usize,
        start_layer: Option<usize>,
        iterations: Option<usize>,
        seed: u64,
        probe_layer: Option<usize>,
    ) -> PyResult<Self> {
        let kind: VariantKind = variant.parse().map_err(to_py)?;
        let v = kind
            .with_params(start_layer, iterations, seed, probe_layer)
            .map_err(to_py)?;
        Ok(Self {
            plan: compile_variant(&v, n_layers).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn parse(text: &str, n_layers: usize) -> PyResult<Self> {
        Ok(Self {
            plan: ExecutionPlan::parse(text, n_layers).map_err(to_py)?,
        })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.plan.depth()
    }

    fn text(&self) -> String {
        self.plan.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Plan(depth={})", self.plan.depth())
    }
}

/// `(first, middle, last)` 1-based layer lists.
#[pyfunction]
fn middle_block(n_layers: usize, start_layer: usize) -> PyResult<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let b = plans::middle_block(n_layers, start_layer).map_err(to_py)?;
    Ok((b.first.collect(), b.middle.collect(), b.last.collect()))
}

#[pyfunction]
fn center_layer(n_layers: usize) -> usize {
    plans::center_layer(n_layers)
}

/// Best 3-segment split of a similarity matrix as `(cut1, cut2)`.
#[pyfunction]
fn segment_layers(matrix: Vec<Vec<f64>>) -> PyResult<(usize, usize)> {
    let n = matrix.len();
    let sim = SimilarityMatrix::from_values(n, matrix.into_iter().flatten().collect()).map_err(to_py)?;
    let g = segment(&sim).map_err(to_py)?;
    Ok((g.cut1, g.cut2))
}

#[pyfunction]
fn normalize_score(raw: f64, baseline: f64, anchor: f64) -> PyResult<f64> {
    normalize(raw, baseline, anchor).map_err(to_py)
}

/// Median of accuracy-type scores given as `(raw, baseline, anchor)` triples.
#[pyfunction]
fn normalized_median(scores: Vec<(f64, f64, f64)>) -> PyResult<f64> {
    let scores = scores
        .into_iter()
        .map(|(raw, baseline, anchor)| NormalizedScore::new(TaskKind::MultipleChoice, raw, baseline, anchor))
        .collect::<layer_painter::Result<Vec<_>>>()
        .map_err(to_py)?;
    aggregate_normalized_median(&scores).map_err(to_py)
}

#[pymodule]
fn layer_painter_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LayerPainterError", m.py().get_type::<LayerPainterError>())?;
    m.add_class::<Model>()?;
    m.add_class::<Plan>()?;
    m.add_function(wrap_pyfunction!(middle_block, m)?)?;
    m.add_function(wrap_pyfunction!(center_layer, m)?)?;
    m.add_function(wrap_pyfunction!(segment_layers, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_score, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_median, m)?)?;
    Ok(())
}
