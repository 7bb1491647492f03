// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(clippy::needless_range_loop)]

mod common;

use layer_painter::analysis::{segment_layers, similarity_matrix, variance_profile, SimilarityMatrix};
use layer_painter::model::{execute_plan, ModelConfig, TokenSequence, TraceBundle};
use layer_painter::plans::ExecutionPlan;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn traces(seed: u64, samples: usize) -> Vec<TraceBundle> {
    let cfg = ModelConfig::llama_like(6, 16, 2, 32, 40, 10);
    let w = common::random_model(&cfg, seed);
    (0..samples as u64)
        .map(|s| {
            let ids = TokenSequence::new(common::tokens(3 + s as usize % 5, 40, s)).unwrap();
            execute_plan(&w, &ids, &ExecutionPlan::baseline(6), true).unwrap().trace.unwrap()
        })
        .collect()
}

fn naive_similarity(traces: &[TraceBundle]) -> Vec<Vec<f64>> {
    let n = traces[0].len();
    let mut out = vec![vec![0.0; n]; n];
    let mut count = 0.0;
    for t in traces {
        for pos in 0..t.states[0].rows() {
            count += 1.0;
            for i in 0..n {
                for j in 0..n {
                    let (u, v) = (t.states[i].row(pos), t.states[j].row(pos));
                    let dot: f64 = u.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
                    let nu: f64 = u.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                    let nv: f64 = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                    out[i][j] += dot / (nu * nv);
                }
            }
        }
    }
    out.iter_mut().flatten().for_each(|v| *v /= count);
    out
}

#[test]
fn similarity_matches_naive_pooling() {
    let t = traces(3, 7);
    let sim = similarity_matrix(&t).unwrap();
    let want = naive_similarity(&t);
    for i in 0..sim.len() {
        for j in 0..sim.len() {
            assert!((sim.get(i, j) - want[i][j]).abs() < 1e-12, "({i},{j})");
        }
    }
    let positions: usize = t.iter().map(|b| b.states[0].rows()).sum();
    assert_eq!(sim.pooled_vectors, positions);
}

#[test]
fn similarity_is_symmetric_with_unit_diagonal() {
    let sim = similarity_matrix(&traces(5, 4)).unwrap();
    for i in 0..sim.len() {
        assert_eq!(sim.get(i, i), 1.0);
        for j in 0..sim.len() {
            assert_eq!(sim.get(i, j), sim.get(j, i));
            assert!((-1.0..=1.0).contains(&sim.get(i, j)));
        }
    }
}

#[test]
fn similarity_ignores_per_layer_scale() {
    let t = traces(8, 3);
    let scaled: Vec<TraceBundle> = t
        .iter()
        .map(|b| TraceBundle {
            states: b.states.iter().enumerate().map(|(i, m)| m.scaled(0.25 + i as f32 * 1.7)).collect(),
        })
        .collect();
    let (a, b) = (similarity_matrix(&t).unwrap(), similarity_matrix(&scaled).unwrap());
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn variance_profile_matches_two_pass_statistics() {
    let t = traces(2, 4);
    let stats = variance_profile(&t).unwrap();
    for layer in 0..t[0].len() {
        let values: Vec<f64> = t.iter().flat_map(|b| b.states[layer].data().iter().map(|&v| v as f64)).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        assert!((stats.mean[layer] - mean).abs() < 1e-12);
        assert!((stats.variance[layer] - var).abs() < 1e-9 * var.max(1.0));
    }
}

#[test]
fn segmentation_agrees_with_brute_force_on_arbitrary_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let n = rng.random_range(3..14);
        let mut m = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.random_range(-1.0..1.0);
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        let sim = SimilarityMatrix::from_values(n, m.iter().flatten().copied().collect()).unwrap();
        let g = segment_layers(&sim).unwrap();
        let (c1, c2, obj) = common::segment_exhaustive(&m);
        assert_eq!((g.cut1, g.cut2), (c1, c2));
        assert!((g.objective - obj).abs() < 1e-12);
    }
}

#[test]
fn segmentation_recovers_planted_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let sizes = [rng.random_range(1..8), rng.random_range(1..12), rng.random_range(1..8)];
        let m = common::planted_blocks(sizes, 0.9, 0.3, 0.05, &mut rng);
        let sim = SimilarityMatrix::from_values(m.len(), m.concat()).unwrap();
        let g = segment_layers(&sim).unwrap();
        assert_eq!(g.sizes(), sizes);
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(similarity_matrix(&[]).is_err());
    let two = SimilarityMatrix::from_values(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
    assert!(segment_layers(&two).is_err());
    assert!(SimilarityMatrix::from_values(2, vec![1.0, 0.5, 0.4, 1.0]).is_err());
}
