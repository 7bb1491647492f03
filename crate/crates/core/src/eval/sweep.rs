// SPDX-License-Identifier: MIT OR Apache-2.0

//! Variant sweeps: every variant scored on every task, normalized against
//! the full model.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::Result;
use crate::eval::score::{median, random_baseline, NormalizedScore};
use crate::eval::task::{run_task, Task, TaskResult};
use crate::model::ModelWeights;
use crate::plans::{compile_variant, plan_depth, ExecutionPlan, Variant, VariantKind};

/// Random-order rows average this many seeds unless configured otherwise.
pub const DEFAULT_RANDOM_SEEDS: usize = 10;

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Seeds averaged per random-order row, starting from the variant's seed.
    pub random_seeds: usize,
    pub workers: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            random_seeds: DEFAULT_RANDOM_SEEDS,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: Variant,
    /// Runs averaged into this row.
    pub seed_count: usize,
    pub fraction_skipped: f64,
    pub depth: usize,
    /// One raw score per task, in task order.
    pub raw: Vec<f64>,
    pub normalized_median: f64,
    pub error: Option<String>,
}

impl SweepRow {
    /// Start layer for middle-block variants, probe layer for probes.
    pub fn n_column(&self) -> Option<usize> {
        self.variant.start_layer().or(self.variant.probe_layer())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub n_layers: usize,
    pub task_ids: Vec<String>,
    pub random_baselines: Vec<f64>,
    /// Full-model raw score per task.
    pub anchors: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

fn opt(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl SweepResult {
    /// `variant,N,K,seed_count,fraction_skipped,depth,<task...>,normalized_median`.
    /// Error rows leave scores empty and put `error` in the last column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,N,K,seed_count,fraction_skipped,depth");
        for id in &self.task_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push_str(",normalized_median\n");
        for row in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{:.6},{}",
                row.variant.kind(),
                opt(row.n_column()),
                opt(row.variant.iterations()),
                row.seed_count,
                row.fraction_skipped,
                row.depth
            );
            if row.error.is_some() {
                out.push_str(&",".repeat(self.task_ids.len()));
                out.push_str(",error\n");
            } else {
                for raw in &row.raw {
                    let _ = write!(out, ",{raw:.6}");
                }
                let _ = writeln!(out, ",{:.6}", row.normalized_median);
            }
        }
        out
    }

    /// Best loop count per start layer over looped-parallel rows; ties go to
    /// the smaller `K`.
    pub fn best_iterations(&self) -> Vec<BestIterations> {
        let mut best: BTreeMap<usize, BestIterations> = BTreeMap::new();
        for row in self.rows.iter().filter(|r| r.error.is_none()) {
            let Variant::LoopedParallel { start, iterations } = row.variant else {
                continue;
            };
            let candidate = BestIterations {
                start,
                middle_layers: self.n_layers.saturating_sub(2 * start + 1),
                iterations,
                normalized_median: row.normalized_median,
            };
            best.entry(start)
                .and_modify(|b| {
                    let better = candidate.normalized_median > b.normalized_median
                        || (candidate.normalized_median == b.normalized_median
                            && candidate.iterations < b.iterations);
                    if better {
                        *b = candidate.clone();
                    }
                })
                .or_insert(candidate);
        }
        best.into_values().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestIterations {
    pub start: usize,
    pub middle_layers: usize,
    pub iterations: usize,
    pub normalized_median: f64,
}

/// `N,M,best_K,normalized_median` table.
pub fn best_iterations_csv(best: &[BestIterations]) -> String {
    let mut out = String::from("N,M,best_K,normalized_median\n");
    for b in best {
        let _ = writeln!(
            out,
            "{},{},{},{:.6}",
            b.start, b.middle_layers, b.iterations, b.normalized_median
        );
    }
    out
}

/// Normalized median of one row of raw scores against the sweep's anchors.
pub fn normalized_median(tasks: &[Task], raw: &[f64], anchors: &[f64]) -> f64 {
    Normalizer {
        tasks,
        baselines: tasks.iter().map(random_baseline).collect(),
        anchors: anchors.to_vec(),
    }
    .median(raw)
}

struct Normalizer<'a> {
    tasks: &'a [Task],
    baselines: Vec<f64>,
    anchors: Vec<f64>,
}

impl Normalizer<'_> {
    /// Tasks whose anchor equals their baseline carry no signal and drop out.
    fn median(&self, raw: &[f64]) -> f64 {
        let values: Vec<f64> = self
            .tasks
            .iter()
            .zip(raw)
            .zip(self.baselines.iter().zip(&self.anchors))
            .filter_map(|((task, &r), (&b, &a))| NormalizedScore::new(task.kind, r, b, a).ok())
            .map(|s| s.value)
            .collect();
        median(values).unwrap_or(f64::NAN)
    }
}

fn score_plan(
    weights: &ModelWeights,
    plan: &ExecutionPlan,
    tasks: &[Task],
    workers: usize,
) -> Result<Vec<TaskResult>> {
    tasks.iter().map(|t| run_task(weights, plan, t, workers)).collect()
}

fn run_variant(
    weights: &ModelWeights,
    tasks: &[Task],
    variant: Variant,
    options: &SweepOptions,
) -> Result<(usize, usize, Vec<f64>)> {
    let t = weights.config.n_layers;
    let seeds: Vec<Variant> = match variant {
        Variant::RandomOrder { seed, .. } => (0..options.random_seeds.max(1) as u64)
            .map(|i| variant.with_seed(seed.wrapping_add(i)))
            .collect(),
        other => vec![other],
    };
    let mut sums = vec![0.0f64; tasks.len()];
    let mut depth = 0;
    for v in &seeds {
        let plan = compile_variant(v, t)?;
        depth = plan_depth(&plan);
        for (sum, result) in sums.iter_mut().zip(score_plan(weights, &plan, tasks, options.workers)?) {
            *sum += result.raw_score;
        }
    }
    let n = seeds.len();
    Ok((n, depth, sums.into_iter().map(|s| s / n as f64).collect()))
}

/// Scores the baseline and then each variant on every task.
///
/// The first row is always the full-model anchor. A variant that fails to
/// compile or run becomes an error row; the sweep carries on.
pub fn run_sweep(
    weights: &ModelWeights,
    tasks: &[Task],
    variants: &[Variant],
    options: &SweepOptions,
) -> Result<SweepResult> {
    let t = weights.config.n_layers;
    let baseline_plan = ExecutionPlan::baseline(t);
    let anchors: Vec<f64> = score_plan(weights, &baseline_plan, tasks, options.workers)?
        .into_iter()
        .map(|r| r.raw_score)
        .collect();
    let norm = Normalizer {
        tasks,
        baselines: tasks.iter().map(random_baseline).collect(),
        anchors,
    };

    let mut rows = vec![SweepRow {
        variant: Variant::Baseline,
        seed_count: 1,
        fraction_skipped: 0.0,
        depth: plan_depth(&baseline_plan),
        raw: norm.anchors.clone(),
        normalized_median: norm.median(&norm.anchors),
        error: None,
    }];
    let pending: Vec<Variant> = variants
        .iter()
        .copied()
        .filter(|v| v.kind() != VariantKind::Baseline)
        .collect();
    for (k, &variant) in pending.iter().enumerate() {
        log::info!("variant {}/{}: {variant}", k + 1, pending.len());
        let row = match run_variant(weights, tasks, variant, options) {
            Ok((seed_count, depth, raw)) => SweepRow {
                variant,
                seed_count,
                fraction_skipped: variant.fraction_skipped(t),
                depth,
                normalized_median: norm.median(&raw),
                raw,
                error: None,
            },
            Err(e) => {
                log::warn!("variant {variant} failed: {e}");
                SweepRow {
                    variant,
                    seed_count: 0,
                    fraction_skipped: variant.fraction_skipped(t),
                    depth: 0,
                    raw: Vec::new(),
                    normalized_median: f64::NAN,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    Ok(SweepResult {
        n_layers: t,
        task_ids: tasks.iter().map(|t| t.id.clone()).collect(),
        random_baselines: norm.baselines,
        anchors: norm.anchors,
        rows,
    })
}
