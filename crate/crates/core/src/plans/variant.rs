// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Intervention parameters. `start` is the start layer `N`, `iterations` the
/// loop count `K`, `layer` the one-based probe layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    /// Drop the middle block.
    Skip { start: usize },
    /// Run the center layer once per middle-block position.
    MiddleRepeat { start: usize },
    /// Run the middle block in descending order.
    Reverse { start: usize },
    /// Run the middle block in a seeded random order.
    RandomOrder { start: usize, seed: u64 },
    /// Run the middle block as one mean stage.
    Parallel { start: usize },
    /// Feed the parallel stage's mean back into it `iterations` times.
    LoopedParallel { start: usize, iterations: usize },
    /// Run the whole stack `iterations` times without re-embedding.
    FullRepeat { iterations: usize },
    /// Drop one layer.
    SkipSingle { layer: usize },
    /// Swap `layer` with `layer + 1`.
    SwitchAdjacent { layer: usize },
}

/// Variant names without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantKind {
    Baseline,
    Skip,
    MiddleRepeat,
    Reverse,
    RandomOrder,
    Parallel,
    LoopedParallel,
    FullRepeat,
    SkipSingle,
    SwitchAdjacent,
}

impl VariantKind {
    pub const ALL: [VariantKind; 10] = [
        VariantKind::Baseline,
        VariantKind::Skip,
        VariantKind::MiddleRepeat,
        VariantKind::Reverse,
        VariantKind::RandomOrder,
        VariantKind::Parallel,
        VariantKind::LoopedParallel,
        VariantKind::FullRepeat,
        VariantKind::SkipSingle,
        VariantKind::SwitchAdjacent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Baseline => "baseline",
            VariantKind::Skip => "skip",
            VariantKind::MiddleRepeat => "middle_repeat",
            VariantKind::Reverse => "reverse",
            VariantKind::RandomOrder => "random_order",
            VariantKind::Parallel => "parallel",
            VariantKind::LoopedParallel => "looped_parallel",
            VariantKind::FullRepeat => "full_repeat",
            VariantKind::SkipSingle => "skip_single",
            VariantKind::SwitchAdjacent => "switch_adjacent",
        }
    }

    /// Variants that rewire the middle block around a start layer.
    pub fn uses_middle_block(self) -> bool {
        matches!(
            self,
            VariantKind::Skip
                | VariantKind::MiddleRepeat
                | VariantKind::Reverse
                | VariantKind::RandomOrder
                | VariantKind::Parallel
                | VariantKind::LoopedParallel
        )
    }

    /// Builds a variant, failing when a parameter it needs is absent.
    pub fn with_params(
        self,
        start: Option<usize>,
        iterations: Option<usize>,
        seed: u64,
        probe: Option<usize>,
    ) -> Result<Variant> {
        let need = |v: Option<usize>, what: &str| {
            v.ok_or_else(|| Error::Plan(format!("variant {} needs {what}", self.name())))
        };
        Ok(match self {
            VariantKind::Baseline => Variant::Baseline,
            VariantKind::Skip => Variant::Skip { start: need(start, "a start layer")? },
            VariantKind::MiddleRepeat => Variant::MiddleRepeat { start: need(start, "a start layer")? },
            VariantKind::Reverse => Variant::Reverse { start: need(start, "a start layer")? },
            VariantKind::RandomOrder => Variant::RandomOrder {
                start: need(start, "a start layer")?,
                seed,
            },
            VariantKind::Parallel => Variant::Parallel { start: need(start, "a start layer")? },
            VariantKind::LoopedParallel => Variant::LoopedParallel {
                start: need(start, "a start layer")?,
                iterations: need(iterations, "an iteration count")?,
            },
            VariantKind::FullRepeat => Variant::FullRepeat {
                iterations: need(iterations, "an iteration count")?,
            },
            VariantKind::SkipSingle => Variant::SkipSingle { layer: need(probe, "a probe layer")? },
            VariantKind::SwitchAdjacent => Variant::SwitchAdjacent {
                layer: need(probe, "a probe layer")?,
            },
        })
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().replace('-', "_");
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Plan(format!("unknown variant `{s}`")))
    }
}

impl Variant {
    pub fn kind(&self) -> VariantKind {
        match self {
            Variant::Baseline => VariantKind::Baseline,
            Variant::Skip { .. } => VariantKind::Skip,
            Variant::MiddleRepeat { .. } => VariantKind::MiddleRepeat,
            Variant::Reverse { .. } => VariantKind::Reverse,
            Variant::RandomOrder { .. } => VariantKind::RandomOrder,
            Variant::Parallel { .. } => VariantKind::Parallel,
            Variant::LoopedParallel { .. } => VariantKind::LoopedParallel,
            Variant::FullRepeat { .. } => VariantKind::FullRepeat,
            Variant::SkipSingle { .. } => VariantKind::SkipSingle,
            Variant::SwitchAdjacent { .. } => VariantKind::SwitchAdjacent,
        }
    }

    pub fn start_layer(&self) -> Option<usize> {
        match *self {
            Variant::Skip { start }
            | Variant::MiddleRepeat { start }
            | Variant::Reverse { start }
            | Variant::RandomOrder { start, .. }
            | Variant::Parallel { start }
            | Variant::LoopedParallel { start, .. } => Some(start),
            _ => None,
        }
    }

    pub fn iterations(&self) -> Option<usize> {
        match *self {
            Variant::LoopedParallel { iterations, .. } | Variant::FullRepeat { iterations } => {
                Some(iterations)
            }
            _ => None,
        }
    }

    pub fn probe_layer(&self) -> Option<usize> {
        match *self {
            Variant::SkipSingle { layer } | Variant::SwitchAdjacent { layer } => Some(layer),
            _ => None,
        }
    }

    /// Same variant with a different random-order seed; other kinds are unchanged.
    pub fn with_seed(self, seed: u64) -> Variant {
        match self {
            Variant::RandomOrder { start, .. } => Variant::RandomOrder { start, seed },
            other => other,
        }
    }

    /// Share of the stack the variant rewires: `M / T` for middle-block
    /// variants, `1 / T` for a single skip, zero otherwise.
    pub fn fraction_skipped(&self, n_layers: usize) -> f64 {
        let t = n_layers as f64;
        match (self.start_layer(), self) {
            (Some(start), _) => n_layers.saturating_sub(2 * start + 1) as f64 / t,
            (None, Variant::SkipSingle { .. }) => 1.0 / t,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind())?;
        if let Some(n) = self.start_layer() {
            write!(f, " N={n}")?;
        }
        if let Some(k) = self.iterations() {
            write!(f, " K={k}")?;
        }
        if let Variant::RandomOrder { seed, .. } = self {
            write!(f, " seed={seed}")?;
        }
        if let Some(n) = self.probe_layer() {
            write!(f, " n={n}")?;
        }
        Ok(())
    }
}
