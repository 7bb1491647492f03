// SPDX-License-Identifier: MIT OR Apache-2.0

//! Micro-tasks built from a tokenized corpus and their scoring under a plan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{execute_plan, ModelWeights, TokenSequence};
use crate::numerics::Matrix;
use crate::plans::{validate_plan, ExecutionPlan};
use crate::store::TokenizedCorpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// `exp` of the mean target-token negative log-likelihood.
    Perplexity,
    /// Accuracy of the argmax prediction of a passage's final token.
    ClozeLastWord,
    /// Accuracy of picking the continuation with the highest total log-likelihood.
    MultipleChoice,
}

impl TaskKind {
    pub fn is_accuracy(self) -> bool {
        !matches!(self, TaskKind::Perplexity)
    }
}

/// One scored example. Perplexity and cloze items carry exactly one
/// continuation; multiple-choice items carry one per choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskItem {
    pub context: Vec<u32>,
    pub continuations: Vec<Vec<u32>>,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub items: Vec<TaskItem>,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        kind: TaskKind,
        vocab_size: usize,
        items: Vec<TaskItem>,
    ) -> Result<Self> {
        let id = id.into();
        if items.is_empty() {
            return Err(Error::Degenerate(format!("task `{id}` has no items")));
        }
        for (n, item) in items.iter().enumerate() {
            let bad = |msg: &str| Err(Error::Degenerate(format!("task `{id}` item {n}: {msg}")));
            if item.context.is_empty() {
                return bad("empty context");
            }
            if item.continuations.is_empty() || item.continuations.iter().any(Vec::is_empty) {
                return bad("empty continuation");
            }
            if item.answer >= item.continuations.len() {
                return bad("answer index out of range");
            }
            match kind {
                TaskKind::Perplexity if item.continuations.len() != 1 => {
                    return bad("perplexity items take one continuation")
                }
                TaskKind::ClozeLastWord
                    if item.continuations.len() != 1 || item.continuations[0].len() != 1 =>
                {
                    return bad("cloze items take one single-token target")
                }
                TaskKind::MultipleChoice if item.continuations.len() < 2 => {
                    return bad("multiple-choice items need at least two choices")
                }
                _ => {}
            }
            let ids = item.context.iter().chain(item.continuations.iter().flatten());
            if let Some(&t) = ids.into_iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::Vocabulary(format!(
                    "task `{id}` item {n}: token {t} outside vocabulary of {vocab_size}"
                )));
            }
        }
        Ok(Self {
            id,
            kind,
            vocab_size,
            items,
        })
    }

    /// Largest choice count over items (1 for single-continuation kinds).
    pub fn n_choices(&self) -> usize {
        self.items.iter().map(|i| i.continuations.len()).max().unwrap_or(1)
    }
}

/// Raw outcome of one task under one plan.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub task_id: String,
    pub kind: TaskKind,
    /// Accuracy in `[0, 1]` or perplexity `>= 1`.
    pub raw_score: f64,
    /// Items scored.
    pub n_items: usize,
    /// Items dropped for exceeding the model's sequence limit.
    pub n_skipped: usize,
}

enum Outcome {
    /// Summed `nll - ln(vocab)`: log-likelihood relative to uniform guessing.
    Nll { excess: f64, tokens: usize },
    Correct(bool),
    Skipped,
}

/// `ln softmax(row)[target]` in f64.
fn log_prob(row: &[f32], target: u32) -> f64 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0f64;
    for &v in row {
        sum += (v as f64 - max).exp();
    }
    row[target as usize] as f64 - max - sum.ln()
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn continuation_logprob(
    weights: &ModelWeights,
    plan: &ExecutionPlan,
    context: &[u32],
    continuation: &[u32],
) -> Result<f64> {
    let ids: Vec<u32> = context.iter().chain(continuation).copied().collect();
    let out = execute_plan(weights, &TokenSequence::new(ids)?, plan, false)?;
    Ok(score_rows(&out.logits, context.len(), continuation))
}

fn score_rows(logits: &Matrix, context_len: usize, continuation: &[u32]) -> f64 {
    continuation
        .iter()
        .enumerate()
        .map(|(t, &target)| log_prob(logits.row(context_len - 1 + t), target))
        .sum()
}

fn score_item(
    weights: &ModelWeights,
    plan: &ExecutionPlan,
    kind: TaskKind,
    item: &TaskItem,
) -> Result<Outcome> {
    let max = weights.config.max_seq_len;
    let longest = item.continuations.iter().map(Vec::len).max().unwrap_or(0);
    let needed = match kind {
        TaskKind::ClozeLastWord => item.context.len(),
        _ => item.context.len() + longest,
    };
    if needed > max {
        return Ok(Outcome::Skipped);
    }
    match kind {
        TaskKind::Perplexity => {
            let target = &item.continuations[0];
            let ids: Vec<u32> = item.context.iter().chain(target).copied().collect();
            let out = execute_plan(weights, &TokenSequence::new(ids)?, plan, false)?;
            let ln_vocab = (out.logits.cols() as f64).ln();
            let excess = target
                .iter()
                .enumerate()
                .map(|(t, &tok)| -log_prob(out.logits.row(item.context.len() - 1 + t), tok) - ln_vocab)
                .sum();
            Ok(Outcome::Nll {
                excess,
                tokens: target.len(),
            })
        }
        TaskKind::ClozeLastWord => {
            let out =
                execute_plan(weights, &TokenSequence::new(item.context.clone())?, plan, false)?;
            let last = out.logits.row(item.context.len() - 1);
            Ok(Outcome::Correct(argmax(last) == item.continuations[0][0] as usize))
        }
        TaskKind::MultipleChoice => {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (c, choice) in item.continuations.iter().enumerate() {
                let lp = continuation_logprob(weights, plan, &item.context, choice)?;
                if lp > best.0 {
                    best = (lp, c);
                }
            }
            Ok(Outcome::Correct(best.1 == item.answer))
        }
    }
}

/// Scores `task` under `plan`, spreading items over `workers` threads.
/// Outcomes are reduced in item order, so the result is independent of
/// the worker count.
pub fn run_task(
    weights: &ModelWeights,
    plan: &ExecutionPlan,
    task: &Task,
    workers: usize,
) -> Result<TaskResult> {
    let plan = validate_plan(plan, &weights.config)?;
    if task.vocab_size > weights.config.vocab_size {
        return Err(Error::Vocabulary(format!(
            "task `{}` uses a vocabulary of {}, model has {}",
            task.id, task.vocab_size, weights.config.vocab_size
        )));
    }
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let score = |item: &TaskItem| score_item(weights, &plan, task.kind, item);
    let outcomes: Vec<Outcome> = if workers == 1 {
        task.items.iter().map(score).collect::<Result<_>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?
            .install(|| task.items.par_iter().map(score).collect::<Result<_>>())?
    };

    let (mut excess_sum, mut tokens, mut correct, mut scored, mut skipped) = (0.0f64, 0usize, 0usize, 0usize, 0usize);
    for outcome in outcomes {
        match outcome {
            Outcome::Skipped => skipped += 1,
            Outcome::Nll { excess, tokens: n } => {
                excess_sum += excess;
                tokens += n;
                scored += 1;
            }
            Outcome::Correct(ok) => {
                correct += usize::from(ok);
                scored += 1;
            }
        }
    }
    if scored == 0 {
        return Err(Error::Degenerate(format!(
            "every item of task `{}` exceeds max_seq_len {}",
            task.id, weights.config.max_seq_len
        )));
    }
    if skipped > 0 {
        log::warn!("task `{}`: skipped {skipped} overlong items", task.id);
    }
    let raw_score = match task.kind {
        // vocab * exp(mean excess), exact for uniform logits.
        TaskKind::Perplexity => weights.config.vocab_size as f64 * (excess_sum / tokens as f64).exp(),
        _ => correct as f64 / scored as f64,
    };
    Ok(TaskResult {
        task_id: task.id.clone(),
        kind: task.kind,
        raw_score,
        n_items: scored,
        n_skipped: skipped,
    })
}

fn usable_sentences(corpus: &TokenizedCorpus, min_len: usize) -> impl Iterator<Item = &[u32]> {
    corpus.sentences().filter(move |s| s.len() >= min_len)
}

fn tail(tokens: &[u32], keep: usize) -> Vec<u32> {
    tokens[tokens.len().saturating_sub(keep)..].to_vec()
}

/// Each sentence's final token as a target, its preceding tokens (left-truncated
/// to fit `max_seq_len`) as context.
pub fn cloze_task(corpus: &TokenizedCorpus, max_seq_len: usize, max_items: usize) -> Result<Task> {
    let items = usable_sentences(corpus, 2)
        .take(max_items)
        .map(|s| TaskItem {
            context: tail(&s[..s.len() - 1], max_seq_len),
            continuations: vec![vec![s[s.len() - 1]]],
            answer: 0,
        })
        .collect();
    Task::new("cloze", TaskKind::ClozeLastWord, corpus.vocab_size() as usize, items)
}

/// Perplexity of each sentence (truncated to `max_seq_len`) given its first token.
pub fn perplexity_task(
    corpus: &TokenizedCorpus,
    max_seq_len: usize,
    max_items: usize,
) -> Result<Task> {
    let items = usable_sentences(corpus, 2)
        .take(max_items)
        .map(|s| {
            let s = &s[..s.len().min(max_seq_len)];
            TaskItem {
                context: vec![s[0]],
                continuations: vec![s[1..].to_vec()],
                answer: 0,
            }
        })
        .collect();
    Task::new("perplexity", TaskKind::Perplexity, corpus.vocab_size() as usize, items)
}

/// The true last `choice_len` tokens of each sentence against `n_choices - 1`
/// distractor spans drawn from the corpus; answer position drawn uniformly.
pub fn multiple_choice_task(
    corpus: &TokenizedCorpus,
    n_choices: usize,
    choice_len: usize,
    max_seq_len: usize,
    max_items: usize,
    seed: u64,
) -> Result<Task> {
    if n_choices < 2 || choice_len == 0 || choice_len >= max_seq_len {
        return Err(Error::Config(format!(
            "multiple choice needs >= 2 choices of length 1..{max_seq_len}"
        )));
    }
    let tokens = corpus.tokens();
    if tokens.len() < choice_len {
        return Err(Error::Degenerate("corpus shorter than one choice".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for s in usable_sentences(corpus, choice_len + 1).take(max_items) {
        let (ctx, truth) = s.split_at(s.len() - choice_len);
        let mut choices = vec![truth.to_vec()];
        while choices.len() < n_choices {
            let start = rng.random_range(0..=tokens.len() - choice_len);
            let span = tokens[start..start + choice_len].to_vec();
            // Corpora with little variety may only offer duplicates.
            if !choices.contains(&span) || rng.random_bool(0.01) {
                choices.push(span);
            }
        }
        let answer = rng.random_range(0..n_choices);
        choices.swap(0, answer);
        items.push(TaskItem {
            context: tail(ctx, max_seq_len - choice_len),
            continuations: choices,
            answer,
        });
    }
    Task::new(
        format!("mc{n_choices}"),
        TaskKind::MultipleChoice,
        corpus.vocab_size() as usize,
        items,
    )
}
