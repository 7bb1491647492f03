// SPDX-License-Identifier: MIT OR Apache-2.0

//! Random-guess baselines, anchor normalization and the normalized median.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::eval::task::{Task, TaskKind};

/// Score of random (or max-class) guessing on `task`.
///
/// Accuracy tasks: `max(1 / n_choices, max-class frequency)`, the classes
/// being answer positions for multiple choice and target tokens for cloze.
/// Perplexity: the vocabulary size, i.e. a uniform model.
pub fn random_baseline(task: &Task) -> f64 {
    let max_class = |keys: Vec<usize>| {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for k in &keys {
            *counts.entry(*k).or_default() += 1;
        }
        counts.values().copied().max().unwrap_or(0) as f64 / keys.len().max(1) as f64
    };
    match task.kind {
        TaskKind::Perplexity => task.vocab_size as f64,
        TaskKind::ClozeLastWord => {
            let targets = task.items.iter().map(|i| i.continuations[0][0] as usize).collect();
            (1.0 / task.vocab_size as f64).max(max_class(targets))
        }
        TaskKind::MultipleChoice => {
            let answers = task.items.iter().map(|i| i.answer).collect();
            (1.0 / task.n_choices() as f64).max(max_class(answers))
        }
    }
}

/// `(raw - baseline) / (anchor - baseline)`: 0 at random guessing, 1 at the full model.
pub fn normalize_score(raw: f64, baseline: f64, anchor: f64) -> Result<f64> {
    if anchor == baseline {
        return Err(Error::DegenerateAnchor { anchor, baseline });
    }
    Ok((raw - baseline) / (anchor - baseline))
}

/// A raw score placed between its random baseline and full-model anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedScore {
    pub value: f64,
    pub random_baseline: f64,
    pub full_model_anchor: f64,
}

impl NormalizedScore {
    /// Perplexities go through `-ln` first so that higher is better for every kind.
    pub fn new(kind: TaskKind, raw: f64, baseline: f64, anchor: f64) -> Result<Self> {
        let map = |x: f64| if kind == TaskKind::Perplexity { -x.ln() } else { x };
        Ok(Self {
            value: normalize_score(map(raw), map(baseline), map(anchor))?,
            random_baseline: baseline,
            full_model_anchor: anchor,
        })
    }
}

/// Median of the normalized values; mean of the central two for even counts.
pub fn aggregate_normalized_median(scores: &[NormalizedScore]) -> Result<f64> {
    median(scores.iter().map(|s| s.value).collect())
}

pub(crate) fn median(mut values: Vec<f64>) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("median of no scores".into()));
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Ok(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::task::TaskItem;
    use proptest::prelude::*;

    fn mc_task(answers: &[usize], n_choices: usize) -> Task {
        let items = answers
            .iter()
            .map(|&answer| TaskItem {
                context: vec![0],
                continuations: (0..n_choices as u32).map(|c| vec![c]).collect(),
                answer,
            })
            .collect();
        Task::new("mc", TaskKind::MultipleChoice, 8, items).unwrap()
    }

    #[test]
    fn baselines() {
        assert_eq!(random_baseline(&mc_task(&[0, 1, 2, 3], 4)), 0.25);
        let skewed: Vec<usize> = (0..10).map(|i| usize::from(i >= 7)).collect();
        assert!((random_baseline(&mc_task(&skewed, 2)) - 0.7).abs() < 1e-12);
        let ppl = Task::new(
            "p",
            TaskKind::Perplexity,
            256,
            vec![TaskItem { context: vec![1], continuations: vec![vec![2]], answer: 0 }],
        )
        .unwrap();
        assert_eq!(random_baseline(&ppl), 256.0);
    }

    #[test]
    fn normalization_fixed_points() {
        assert_eq!(normalize_score(0.8, 0.25, 0.8).unwrap(), 1.0);
        assert_eq!(normalize_score(0.25, 0.25, 0.8).unwrap(), 0.0);
        assert_eq!(normalize_score(0.5, 0.0, 1.0).unwrap(), 0.5);
        assert!(matches!(
            normalize_score(0.5, 0.3, 0.3),
            Err(Error::DegenerateAnchor { .. })
        ));
        let p = NormalizedScore::new(TaskKind::Perplexity, 20.0, 256.0, 20.0).unwrap();
        assert_eq!(p.value, 1.0);
        let p = NormalizedScore::new(TaskKind::Perplexity, 256.0, 256.0, 20.0).unwrap();
        assert_eq!(p.value, 0.0);
    }

    #[test]
    fn medians() {
        let ns = |v: &[f64]| -> Vec<NormalizedScore> {
            v.iter()
                .map(|&value| NormalizedScore { value, random_baseline: 0.0, full_model_anchor: 1.0 })
                .collect()
        };
        assert_eq!(aggregate_normalized_median(&ns(&[0.0, 0.5, 1.0])).unwrap(), 0.5);
        assert_eq!(aggregate_normalized_median(&ns(&[1.0, 0.0, 0.5])).unwrap(), 0.5);
        assert_eq!(aggregate_normalized_median(&ns(&[0.2, 0.8])).unwrap(), 0.5);
        assert_eq!(aggregate_normalized_median(&ns(&[0.3; 5])).unwrap(), 0.3);
        assert!(aggregate_normalized_median(&[]).is_err());
    }

    proptest! {
        #[test]
        fn normalization_preserves_argmax(
            raws in prop::collection::vec(0.0f64..1.0, 1..20),
            baseline in 0.0f64..0.5,
            gap in 0.01f64..0.5,
        ) {
            let anchor = baseline + gap;
            let normalized: Vec<f64> =
                raws.iter().map(|&r| normalize_score(r, baseline, anchor).unwrap()).collect();
            let argmax = |v: &[f64]| {
                v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b })
            };
            prop_assert_eq!(argmax(&raws), argmax(&normalized));
        }
    }
}
