// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-intervention variants compiled into explicit execution plans.
//!
//! Layers are numbered `1..=T`. For a start layer `N` the stack splits into
//! a first segment `1..=N`, a middle block `N+1..=T-N-1` of
//! `M = T - 2N - 1` layers, and a last segment `T-N..=T`. Every middle-block
//! variant rewires only the middle block. With this split `T = 32, N = 15`
//! touches layer 16 alone and `N = 13` touches five layers.
//!
//! Loops are unrolled at compile time, so executing a plan is a plain fold
//! over its stages and its depth is the stage count.

mod variant;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub use variant::{Variant, VariantKind};

/// How the outputs of a stage's layers combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Merge {
    /// Single layer; its output passes through unchanged.
    Identity,
    /// Arithmetic mean of the full post-layer hidden states.
    Mean,
}

/// One plan step: every listed layer reads the same stage input.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Stage {
    /// One-based layer indices, ascending for mean stages.
    pub layers: Vec<usize>,
    pub merge: Merge,
}

impl Stage {
    pub fn single(layer: usize) -> Self {
        Self {
            layers: vec![layer],
            merge: Merge::Identity,
        }
    }

    /// Mean stage over `layers`, sorted ascending; one layer yields an identity stage.
    pub fn mean(mut layers: Vec<usize>) -> Self {
        layers.sort_unstable();
        let merge = if layers.len() == 1 {
            Merge::Identity
        } else {
            Merge::Mean
        };
        Self { layers, merge }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.merge {
            Merge::Identity if self.layers.len() == 1 => write!(f, "[{}]", self.layers[0]),
            _ => {
                let list: Vec<String> = self.layers.iter().map(usize::to_string).collect();
                write!(f, "mean{{{}}}", list.join(","))
            }
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Plan(format!("cannot parse stage `{s}`"));
        let parse_list = |body: &str| -> Result<Vec<usize>> {
            body.split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|_| bad()))
                .collect()
        };
        if let Some(body) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            Ok(Stage::single(body.trim().parse().map_err(|_| bad())?))
        } else if let Some(body) = s.strip_prefix("mean{").and_then(|r| r.strip_suffix('}')) {
            Ok(Stage {
                layers: parse_list(body)?,
                merge: Merge::Mean,
            })
        } else {
            Err(bad())
        }
    }
}

/// Ordered stages for a model with `n_layers` layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExecutionPlan {
    pub stages: Vec<Stage>,
    /// Variant the plan was compiled from; `None` for hand-written plans.
    pub variant: Option<Variant>,
    pub n_layers: usize,
}

impl ExecutionPlan {
    pub fn baseline(n_layers: usize) -> Self {
        Self {
            stages: (1..=n_layers).map(Stage::single).collect(),
            variant: Some(Variant::Baseline),
            n_layers,
        }
    }

    /// Parses the text form (one stage per line, blank lines and `#` comments ignored).
    pub fn parse(text: &str, n_layers: usize) -> Result<Self> {
        let stages = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<Vec<Stage>>>()?;
        Ok(Self {
            stages,
            variant: None,
            n_layers,
        })
    }

    pub fn depth(&self) -> usize {
        plan_depth(self)
    }
}

/// One stage per line: `[i]` or `mean{i,j,...}`.
impl fmt::Display for ExecutionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for stage in &self.stages {
            writeln!(f, "{stage}")?;
        }
        Ok(())
    }
}

/// The three contiguous segments around a middle block, as one-based
/// half-open ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiddleBlock {
    pub first: Range<usize>,
    pub middle: Range<usize>,
    pub last: Range<usize>,
}

impl MiddleBlock {
    /// Number of middle layers `M`.
    pub fn len(&self) -> usize {
        self.middle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.middle.is_empty()
    }
}

/// Splits `1..=n_layers` around start layer `start`.
pub fn middle_block(n_layers: usize, start: usize) -> Result<MiddleBlock> {
    if 2 * start + 1 > n_layers {
        return Err(Error::Plan(format!(
            "start layer {start} leaves no room for a middle block in {n_layers} layers \
             (need 2N + 1 <= T)"
        )));
    }
    Ok(MiddleBlock {
        first: 1..start + 1,
        middle: start + 1..n_layers - start,
        last: n_layers - start..n_layers + 1,
    })
}

/// The layer every middle-repeat stage reuses.
pub fn center_layer(n_layers: usize) -> usize {
    n_layers / 2
}

/// Uniform shuffle of the layers in `middle` drawn from ChaCha8 seeded with
/// `seed` via Fisher-Yates. Equal seeds give equal permutations.
pub fn random_permutation(middle: Range<usize>, seed: u64) -> Vec<usize> {
    let mut layers: Vec<usize> = middle.collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layers.shuffle(&mut rng);
    layers
}

fn checked_block(n_layers: usize, start: usize) -> Result<MiddleBlock> {
    if start < 1 {
        return Err(Error::Plan("start layer N must be at least 1".into()));
    }
    let block = middle_block(n_layers, start)?;
    if block.is_empty() {
        return Err(Error::Plan(format!(
            "start layer {start} leaves an empty middle block in {n_layers} layers \
             (need N <= {})",
            (n_layers.saturating_sub(2)) / 2
        )));
    }
    Ok(block)
}

fn check_iterations(iterations: usize) -> Result<()> {
    if iterations < 1 {
        return Err(Error::Plan("iteration count K must be at least 1".into()));
    }
    Ok(())
}

fn singles(layers: impl IntoIterator<Item = usize>) -> impl Iterator<Item = Stage> {
    layers.into_iter().map(Stage::single)
}

/// Compiles `variant` into a validated plan for a `n_layers`-layer model.
pub fn compile_variant(variant: &Variant, n_layers: usize) -> Result<ExecutionPlan> {
    if n_layers < 2 {
        return Err(Error::Plan(format!("model must have at least 2 layers, got {n_layers}")));
    }
    let around = |block: &MiddleBlock, middle: Vec<Stage>| -> Vec<Stage> {
        singles(block.first.clone())
            .chain(middle)
            .chain(singles(block.last.clone()))
            .collect()
    };
    let stages = match *variant {
        Variant::Baseline => singles(1..=n_layers).collect(),
        Variant::Skip { start } => around(&checked_block(n_layers, start)?, Vec::new()),
        Variant::MiddleRepeat { start } => {
            let block = checked_block(n_layers, start)?;
            let center = center_layer(n_layers);
            around(&block, vec![Stage::single(center); block.len()])
        }
        Variant::Reverse { start } => {
            let block = checked_block(n_layers, start)?;
            around(&block, singles(block.middle.clone().rev()).collect())
        }
        Variant::RandomOrder { start, seed } => {
            let block = checked_block(n_layers, start)?;
            around(
                &block,
                singles(random_permutation(block.middle.clone(), seed)).collect(),
            )
        }
        Variant::Parallel { start } => {
            let block = checked_block(n_layers, start)?;
            around(&block, vec![Stage::mean(block.middle.clone().collect())])
        }
        Variant::LoopedParallel { start, iterations } => {
            check_iterations(iterations)?;
            let block = checked_block(n_layers, start)?;
            let stage = Stage::mean(block.middle.clone().collect());
            around(&block, vec![stage; iterations])
        }
        Variant::FullRepeat { iterations } => {
            check_iterations(iterations)?;
            (0..iterations).flat_map(|_| singles(1..=n_layers)).collect()
        }
        Variant::SkipSingle { layer } => {
            if !(1..=n_layers).contains(&layer) {
                return Err(Error::Plan(format!(
                    "probe layer {layer} outside 1..={n_layers}"
                )));
            }
            singles((1..=n_layers).filter(|&i| i != layer)).collect()
        }
        Variant::SwitchAdjacent { layer } => {
            if !(1..n_layers).contains(&layer) {
                return Err(Error::Plan(format!(
                    "switch probe layer {layer} outside 1..={}",
                    n_layers - 1
                )));
            }
            let mut order: Vec<usize> = (1..=n_layers).collect();
            order.swap(layer - 1, layer);
            singles(order).collect()
        }
    };
    Ok(ExecutionPlan {
        stages,
        variant: Some(*variant),
        n_layers,
    })
}

/// Checks layer bounds, merge arity and layer count agreement. Returns the
/// plan with single-layer mean stages normalized to identity.
pub fn validate_plan(plan: &ExecutionPlan, config: &ModelConfig) -> Result<ExecutionPlan> {
    let t = config.n_layers;
    if plan.n_layers != t {
        return Err(Error::Plan(format!(
            "plan built for {} layers, model has {t}",
            plan.n_layers
        )));
    }
    if plan.stages.is_empty() {
        return Err(Error::Plan("plan has no stages".into()));
    }
    let mut out = plan.clone();
    for (i, stage) in out.stages.iter_mut().enumerate() {
        let n = i + 1;
        if stage.layers.is_empty() {
            return Err(Error::Plan(format!("stage {n} has no layers")));
        }
        if let Some(&bad) = stage.layers.iter().find(|&&l| l < 1 || l > t) {
            return Err(Error::Plan(format!(
                "stage {n} references layer {bad} outside 1..={t}"
            )));
        }
        match stage.merge {
            Merge::Identity if stage.layers.len() != 1 => {
                return Err(Error::Plan(format!(
                    "stage {n} has identity merge over {} layers",
                    stage.layers.len()
                )));
            }
            Merge::Identity => {}
            Merge::Mean => {
                stage.layers.sort_unstable();
                if stage.layers.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::Plan(format!("stage {n} repeats a layer")));
                }
                if stage.layers.len() == 1 {
                    stage.merge = Merge::Identity;
                }
            }
        }
    }
    Ok(out)
}

/// Sequential critical path: the stage count, a mean stage counting once.
pub fn plan_depth(plan: &ExecutionPlan) -> usize {
    plan.stages.len()
}
