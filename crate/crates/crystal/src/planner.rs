//! End-to-end planning: canonicalization, plan reversal, reconfiguration
//! between two shapes, and plan metrics.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{merge_level, HierarchyError};
use crate::lattice::{canonical_shape, Configuration, Occupancy, ATOMS_PER_MODULE};
use crate::primitives::{apply_step_mut, replay, ParallelStep, PrimitiveOp, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("source has {source_count} modules but target has {target_count}")]
    CountMismatch { source_count: usize, target_count: usize },
    #[error("source square has side {source_side} but target square has side {target_side}")]
    FrameMismatch { source_side: i32, target_side: i32 },
    #[error("configuration side {0} is not 16 times a power of two")]
    BadSide(i32),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("replay rejected step {index}: {violation}")]
    Invalid { index: usize, violation: Violation },
    #[error("invariant trap: {0}")]
    Trap(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    pub steps: Vec<ParallelStep>,
    /// Step range emitted for each hierarchy level, lowest level first.
    pub levels: Vec<Range<usize>>,
    /// Configuration reached at the end of canonicalization.
    pub canonical: Configuration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_atoms: u64,
    pub parallel_steps: u64,
    pub module_ops: u64,
    pub atom_ops: u64,
    pub levels: u32,
}

impl Plan {
    pub fn empty(canonical: Configuration) -> Self {
        Plan {
            steps: Vec::new(),
            levels: Vec::new(),
            canonical,
        }
    }
}

/// Plans the source into the packed ring of its square. The result is
/// validated step by step while it is built.
pub fn canonicalize(cfg: &Configuration) -> Result<(Plan, Configuration), PlanError> {
    let top = cfg.level().ok_or(PlanError::BadSide(cfg.side()))?;
    let mut steps = Vec::new();
    let mut levels = Vec::new();
    let mut cur = cfg.clone();
    for level in 0..=top {
        let (s, next) = merge_level(&cur, level)?;
        let start = steps.len();
        steps.extend(s);
        levels.push(start..steps.len());
        cur = next;
    }
    let canonical = Configuration::from_cells(cfg.side(), &canonical_shape(cfg.side(), cfg.module_count()))
        .map_err(|e| PlanError::Trap(e.to_string()))?;
    if !cur.same_shape(&canonical) {
        return Err(PlanError::Trap("top cell did not end as the canonical ring".into()));
    }
    let plan = Plan {
        steps,
        levels,
        canonical: cur.clone(),
    };
    Ok((plan, cur))
}

/// Steps in reverse order with every op inverted.
pub fn reverse_plan(plan: &Plan) -> Plan {
    let n = plan.steps.len();
    Plan {
        steps: plan.steps.iter().rev().map(|s| s.reversed()).collect(),
        levels: plan.levels.iter().rev().map(|r| n - r.end..n - r.start).collect(),
        canonical: plan.canonical.clone(),
    }
}

/// Plans source to target through their common canonical ring.
pub fn reconfigure(source: &Configuration, target: &Configuration) -> Result<Plan, PlanError> {
    if source.module_count() != target.module_count() {
        return Err(PlanError::CountMismatch {
            source_count: source.module_count(),
            target_count: target.module_count(),
        });
    }
    if source.side() != target.side() {
        return Err(PlanError::FrameMismatch {
            source_side: source.side(),
            target_side: target.side(),
        });
    }
    let (forward, mid) = canonicalize(source)?;
    let (backward, _) = canonicalize(target)?;
    let mut back = reverse_plan(&backward);
    rename_slides(&mid, &mut back.steps, forward.steps.len())?;
    let offset = forward.steps.len();
    let mut steps = forward.steps;
    steps.extend(back.steps);
    let mut levels = forward.levels;
    levels.extend(back.levels.into_iter().map(|r| r.start + offset..r.end + offset));
    let plan = Plan {
        steps,
        levels,
        canonical: forward.canonical,
    };
    let end = replay(source, &plan.steps).map_err(|(index, violation)| PlanError::Invalid { index, violation })?;
    if !end.same_shape(target) {
        return Err(PlanError::Trap("reconfiguration did not end at the target".into()));
    }
    Ok(plan)
}

/// Module ids are tracked, shapes are not labelled: the target's half of
/// a plan names its modules after the target's own run. Rename every
/// slide after the module actually standing at its source.
fn rename_slides(start: &Configuration, steps: &mut [ParallelStep], offset: usize) -> Result<(), PlanError> {
    let mut cur = start.clone();
    for (index, step) in steps.iter_mut().enumerate() {
        for op in &mut step.ops {
            if let PrimitiveOp::Slide { module, from, .. } = op {
                if let Occupancy::Single(id) = cur.get(*from) {
                    *module = id;
                }
            }
        }
        apply_step_mut(&mut cur, step).map_err(|violation| PlanError::Invalid {
            index: offset + index,
            violation,
        })?;
    }
    Ok(())
}

pub fn compute_metrics(plan: &Plan, source: &Configuration) -> Metrics {
    let module_ops: u64 = plan.steps.iter().map(|s| s.len() as u64).sum();
    Metrics {
        n_atoms: ATOMS_PER_MODULE * source.module_count() as u64,
        parallel_steps: plan.steps.len() as u64,
        module_ops,
        atom_ops: ATOMS_PER_MODULE * module_ops,
        levels: source.level().unwrap_or(0),
    }
}
