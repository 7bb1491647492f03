// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use crate::analysis::{segment_layers, similarity_matrix, variance_profile};
use crate::cli::{Arch, DataArgs, GenModelArgs, InfoArgs, RunArgs, SimilarityArgs, SweepArgs, TaskArgs, VariantArgs, THREADS_ENV};
use crate::error::{Error, Result};
use crate::eval::{
    best_iterations_csv, cloze_task, multiple_choice_task, normalized_median, perplexity_task,
    run_sweep, run_task, SweepOptions, SweepResult, SweepRow, Task, TaskResult,
};
use crate::io_util::write_atomic;
use crate::model::{execute_plan, ModelConfig, ModelWeights, TokenSequence};
use crate::plans::{compile_variant, middle_block, plan_depth, ExecutionPlan, Variant, VariantKind};
use crate::store::{generate_random_model, load_corpus, load_weights, save_weights, TokenizedCorpus};
use crate::svg::{line_chart, Series};

/// Stdout output that tolerates a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = std::io::Write::write_fmt(&mut std::io::stdout(), format_args!($($arg)*));
    }};
}

macro_rules! sayln {
    ($($arg:tt)*) => {{
        say!($($arg)*);
        say!("\n");
    }};
}

fn resolve_workers(flag: Option<usize>) -> Result<usize> {
    let workers = match flag {
        Some(w) => w,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a count")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, usize::from),
        },
    };
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    Ok(workers)
}

fn load_text_corpus(path: &Path) -> Result<TokenizedCorpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TokenizedCorpus::from_text(&text)
}

struct Inputs {
    weights: ModelWeights,
    corpus: TokenizedCorpus,
    workers: usize,
}

fn load_inputs(data: &DataArgs) -> Result<Inputs> {
    let workers = resolve_workers(data.workers)?;
    let weights = load_weights(&data.model)?;
    let corpus = match (&data.corpus, &data.text) {
        (Some(p), _) => load_corpus(p)?,
        (None, Some(p)) => load_text_corpus(p)?,
        (None, None) => return Err(Error::Config("need --corpus or --text".into())),
    };
    if corpus.vocab_size() as usize > weights.config.vocab_size {
        return Err(Error::Vocabulary(format!(
            "corpus vocabulary {} exceeds model vocabulary {}",
            corpus.vocab_size(),
            weights.config.vocab_size
        )));
    }
    log::info!(
        "model: {} layers, d_model {}, vocab {}; corpus: {} tokens in {} sentences; {workers} worker(s)",
        weights.config.n_layers,
        weights.config.d_model,
        weights.config.vocab_size,
        corpus.tokens().len(),
        corpus.n_sentences()
    );
    std::fs::create_dir_all(&data.out).map_err(|e| Error::io(&data.out, e))?;
    Ok(Inputs {
        weights,
        corpus,
        workers,
    })
}

fn build_tasks(args: &TaskArgs, corpus: &TokenizedCorpus, config: &ModelConfig) -> Result<Vec<Task>> {
    let max = config.max_seq_len;
    args.tasks
        .iter()
        .map(|name| match name.trim() {
            "cloze" => cloze_task(corpus, max, args.max_items),
            "perplexity" | "ppl" => perplexity_task(corpus, max, args.max_items),
            other => {
                let n = other
                    .strip_prefix("mc")
                    .map(|n| if n.is_empty() { Ok(4) } else { n.parse::<usize>() })
                    .and_then(|r| r.ok())
                    .ok_or_else(|| Error::Config(format!("unknown task `{other}`")))?;
                multiple_choice_task(corpus, n, args.choice_len, max, args.max_items, args.task_seed)
            }
        })
        .collect()
}

fn variant_of(args: &VariantArgs) -> Result<Variant> {
    args.variant
        .with_params(args.start_layer, args.iterations, args.seed, args.probe_layer)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, contents.as_bytes())?;
    Ok(path)
}

fn task_results_csv(tasks: &[Task], results: &[TaskResult], anchors: &[TaskResult]) -> String {
    let mut out = String::from("task,kind,raw_score,n_items,n_skipped,random_baseline,full_model\n");
    for ((task, r), a) in tasks.iter().zip(results).zip(anchors) {
        let _ = writeln!(
            out,
            "{},{:?},{:.6},{},{},{:.6},{:.6}",
            r.task_id,
            r.kind,
            r.raw_score,
            r.n_items,
            r.n_skipped,
            crate::eval::random_baseline(task),
            a.raw_score
        );
    }
    out
}

/// One variant on the selected tasks: `results.csv` (sweep schema),
/// `tasks.csv` and `plan.txt`.
pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let variant = variant_of(&args.variant)?;
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let inputs = load_inputs(&args.data)?;
    let t = inputs.weights.config.n_layers;
    let plan = compile_variant(&variant, t)?;
    let tasks = build_tasks(&args.tasks, &inputs.corpus, &inputs.weights.config)?;
    let run_all = |plan: &ExecutionPlan| -> Result<Vec<TaskResult>> {
        tasks.iter().map(|task| run_task(&inputs.weights, plan, task, inputs.workers)).collect()
    };
    let anchors = run_all(&ExecutionPlan::baseline(t))?;

    let seeded: Vec<Variant> = match variant {
        Variant::RandomOrder { seed, .. } => (0..args.seeds as u64)
            .map(|i| variant.with_seed(seed.wrapping_add(i)))
            .collect(),
        v => vec![v],
    };
    let mut per_seed = Vec::with_capacity(seeded.len());
    for v in &seeded {
        per_seed.push(run_all(&compile_variant(v, t)?)?);
    }
    let raw: Vec<f64> = (0..tasks.len())
        .map(|k| per_seed.iter().map(|r| r[k].raw_score).sum::<f64>() / per_seed.len() as f64)
        .collect();
    let anchor_raw: Vec<f64> = anchors.iter().map(|r| r.raw_score).collect();
    let result = SweepResult {
        n_layers: t,
        task_ids: tasks.iter().map(|t| t.id.clone()).collect(),
        random_baselines: tasks.iter().map(crate::eval::random_baseline).collect(),
        anchors: anchor_raw.clone(),
        rows: vec![SweepRow {
            variant,
            seed_count: seeded.len(),
            fraction_skipped: variant.fraction_skipped(t),
            depth: plan_depth(&plan),
            normalized_median: normalized_median(&tasks, &raw, &anchor_raw),
            raw,
            error: None,
        }],
    };
    let out = &args.data.out;
    write_file(out, "results.csv", &result.to_csv())?;
    write_file(out, "tasks.csv", &task_results_csv(&tasks, &per_seed[0], &anchors))?;
    write_file(out, "plan.txt", &plan.to_string())?;
    say!("{}", result.to_csv());
    Ok(())
}

fn expand_grid(args: &SweepArgs, t: usize) -> Vec<Variant> {
    let valid_starts: Vec<usize> = (1..=t.saturating_sub(2) / 2).collect();
    let starts = args.start_layers.as_ref().map_or(valid_starts, |l| l.0.clone());
    let mut grid = Vec::new();
    for &kind in &args.variants {
        let iterations = args.iterations.as_ref().map(|l| l.0.clone()).unwrap_or_else(|| {
            if kind == VariantKind::FullRepeat { vec![2, 3] } else { vec![3] }
        });
        match kind {
            VariantKind::Baseline => grid.push(Variant::Baseline),
            VariantKind::LoopedParallel => {
                for &start in &starts {
                    for &k in &iterations {
                        grid.push(Variant::LoopedParallel { start, iterations: k });
                    }
                }
            }
            VariantKind::FullRepeat => {
                grid.extend(iterations.iter().map(|&k| Variant::FullRepeat { iterations: k }))
            }
            VariantKind::SkipSingle | VariantKind::SwitchAdjacent => {
                let last = if kind == VariantKind::SkipSingle { t } else { t - 1 };
                let probes = args.probe_layers.as_ref().map_or((1..=last).collect(), |l| l.0.clone());
                for layer in probes {
                    grid.push(if kind == VariantKind::SkipSingle {
                        Variant::SkipSingle { layer }
                    } else {
                        Variant::SwitchAdjacent { layer }
                    });
                }
            }
            _ => {
                for &start in &starts {
                    let v = kind
                        .with_params(Some(start), None, args.seed, None)
                        .expect("start layer supplied");
                    grid.push(v);
                }
            }
        }
    }
    grid
}

/// Series key: looped-parallel rows split per loop count.
fn series_name(v: &Variant) -> String {
    match v {
        Variant::LoopedParallel { iterations, .. } => format!("looped_parallel_{iterations}x"),
        Variant::FullRepeat { .. } => "full_repeat".into(),
        other => other.kind().to_string(),
    }
}

fn charts(result: &SweepResult) -> Vec<(String, String)> {
    let rows: Vec<&SweepRow> = result.rows.iter().filter(|r| r.error.is_none()).collect();
    let group = |x: &dyn Fn(&SweepRow) -> Option<f64>, y: &dyn Fn(&SweepRow) -> f64| {
        let mut by_name: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for row in &rows {
            if let Some(xv) = x(row) {
                by_name.entry(series_name(&row.variant)).or_default().push((xv, y(row)));
            }
        }
        by_name
            .into_iter()
            .map(|(name, mut points)| {
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series { name, points }
            })
            .collect::<Vec<_>>()
    };
    let mut out = Vec::new();
    for (k, id) in result.task_ids.iter().enumerate() {
        let series = group(&|r| r.n_column().map(|n| n as f64), &|r| r.raw[k]);
        out.push((
            format!("task_{id}.svg"),
            line_chart(&format!("{id}: raw score by N"), "N", id, &series),
        ));
    }
    let series = group(
        &|r| (r.variant.kind() != VariantKind::Baseline).then_some(r.fraction_skipped),
        &|r| r.normalized_median,
    );
    out.push((
        "comparison.svg".into(),
        line_chart(
            "Normalized median by variant",
            "fraction of layers skipped or rewired",
            "normalized median",
            &series,
        ),
    ));
    out
}

/// Variant grid: `sweep.csv`, one chart per task, `comparison.svg`, and for
/// looped-parallel grids `best_iterations.csv`.
pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let inputs = load_inputs(&args.data)?;
    let tasks = build_tasks(&args.tasks, &inputs.corpus, &inputs.weights.config)?;
    let grid = expand_grid(args, inputs.weights.config.n_layers);
    let options = SweepOptions {
        random_seeds: args.seeds,
        workers: inputs.workers,
    };
    let result = run_sweep(&inputs.weights, &tasks, &grid, &options)?;
    let out = &args.data.out;
    write_file(out, "sweep.csv", &result.to_csv())?;
    for (name, svg) in charts(&result) {
        write_file(out, &name, &svg)?;
    }
    let best = result.best_iterations();
    if !best.is_empty() {
        let table = best_iterations_csv(&best);
        write_file(out, "best_iterations.csv", &table)?;
        say!("{table}");
    }
    let errors: Vec<String> = result
        .rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.variant)))
        .collect();
    if !errors.is_empty() {
        write_file(out, "sweep_errors.txt", &(errors.join("\n") + "\n"))?;
        eprintln!("{} variant(s) failed; see sweep_errors.txt", errors.len());
    }
    sayln!("wrote {} rows to {}", result.rows.len(), out.join("sweep.csv").display());
    Ok(())
}

/// Baseline traces over corpus sentences: `similarity.csv`, `similarity.svg`,
/// `variance.csv`, `grouping.csv` and `similarity_meta.txt`.
pub fn cmd_similarity(args: &SimilarityArgs) -> Result<()> {
    let inputs = load_inputs(&args.data)?;
    let config = &inputs.weights.config;
    let plan = ExecutionPlan::baseline(config.n_layers);
    let mut traces = Vec::new();
    for sentence in inputs.corpus.sentences().filter(|s| !s.is_empty()).take(args.samples) {
        let ids = sentence[..sentence.len().min(config.max_seq_len)].to_vec();
        let out = execute_plan(&inputs.weights, &TokenSequence::new(ids)?, &plan, true)?;
        traces.push(out.trace.expect("capture requested"));
    }
    let sim = similarity_matrix(&traces)?;
    let stats = variance_profile(&traces)?;
    let out = &args.data.out;
    write_file(out, "similarity.csv", &sim.to_csv())?;
    write_file(
        out,
        "similarity.svg",
        &sim.to_svg(&format!("Avg. cosine similarity between hidden states of {} layers", sim.len())),
    )?;
    write_file(out, "variance.csv", &stats.to_csv())?;
    let meta = format!(
        "samples={}\npooled_vectors={}\npositions=all\nstate=post_residual_pre_final_norm\n",
        traces.len(),
        sim.pooled_vectors
    );
    write_file(out, "similarity_meta.txt", &meta)?;
    if sim.len() >= 3 {
        let grouping = segment_layers(&sim)?;
        write_file(out, "grouping.csv", &grouping.summary())?;
        let [b, m, e] = grouping.sizes();
        sayln!(
            "grouping: cuts ({}, {}) -> beginning {b}, middle {m}, ending {e} layers",
            grouping.cut1, grouping.cut2
        );
    } else {
        sayln!("grouping: needs at least 3 layers, model has {}", sim.len());
    }
    Ok(())
}

pub fn cmd_gen_model(args: &GenModelArgs) -> Result<()> {
    let build = match args.arch {
        Arch::Llama => ModelConfig::llama_like,
        Arch::Gpt2 => ModelConfig::gpt2_like,
    };
    let config = build(args.layers, args.d_model, args.heads, args.d_ff, args.vocab, args.max_seq);
    config.validate()?;
    let mut weights = generate_random_model(&config, args.seed)?;
    if args.zero_layers {
        weights.zero_layer_projections();
    }
    save_weights(&weights, &args.out)?;
    sayln!("wrote {}-layer model to {}", config.n_layers, args.out.display());
    Ok(())
}

pub fn cmd_info(args: &InfoArgs) -> Result<()> {
    let t = match (&args.model, args.layers) {
        (Some(path), _) => load_weights(path)?.config.n_layers,
        (None, Some(t)) => t,
        (None, None) => return Err(Error::Config("need --model or --layers".into())),
    };
    let variant = variant_of(&args.variant)?;
    let plan = compile_variant(&variant, t)?;
    sayln!("variant: {variant}");
    sayln!("layers: {t}");
    if let Some(start) = variant.start_layer() {
        let block = middle_block(t, start)?;
        sayln!(
            "middle block: {}..={} (M = {})",
            block.middle.start,
            block.middle.end - 1,
            block.len()
        );
    }
    sayln!("fraction_skipped: {:.6}", variant.fraction_skipped(t));
    sayln!("depth: {}", plan_depth(&plan));
    say!("{plan}");
    Ok(())
}
