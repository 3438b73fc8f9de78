//! Executable forms of the structural properties of `G^T` sets.

use serde::Serialize;

use super::{compute_gt, gamma_of, walk, ConleyError, Orbit};
use crate::boxgrid::BoxSet;
use crate::dynamics::{Dynamics, FlowConfig, StepScratch};
use crate::fieldlang::EvalError;
use crate::par;

/// Outcome of the nesting property `G^{2T} ⊂ int G^T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Nesting {
    /// Holds exactly on the grid.
    Exact,
    /// Holds after allowing one box layer.
    WithinLayer,
    Violated,
    /// Precondition `G^T ⊆ int N` not met; nothing to check.
    NotApplicable,
}

impl Nesting {
    pub fn holds(self) -> bool {
        !matches!(self, Nesting::Violated)
    }
}

/// `G^{t_long}(N) ⊆ G^{t_short}(N)` for `t_long > t_short`.
pub fn check_monotone<D: Dynamics + ?Sized>(
    n: &BoxSet,
    dynamics: &D,
    t_long: f64,
    t_short: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<bool, ConleyError> {
    let long = compute_gt(n, dynamics, 0.0, t_long, cfg, samples)?;
    let short = compute_gt(n, dynamics, 0.0, t_short, cfg, samples)?;
    Ok(long.is_subset(&short))
}

pub fn check_nesting<D: Dynamics + ?Sized>(
    n: &BoxSet,
    dynamics: &D,
    t: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<Nesting, ConleyError> {
    let g1 = compute_gt(n, dynamics, 0.0, t, cfg, samples)?;
    if !g1.is_subset(&n.interior()) {
        return Ok(Nesting::NotApplicable);
    }
    let g2 = compute_gt(n, dynamics, 0.0, 2.0 * t, cfg, samples)?;
    Ok(if g2.is_subset(&g1.interior()) {
        Nesting::Exact
    } else if g2.is_subset(&g1) {
        Nesting::WithinLayer
    } else {
        Nesting::Violated
    })
}

/// When `Γ^T(N)` is empty, every sample of `G^T(N)` stays within one box
/// diagonal of `G^T(N)` on the forward mesh up to `T`. Returns `None` when
/// `Γ^T(N)` is not empty.
pub fn check_stability<D: Dynamics + ?Sized>(
    n: &BoxSet,
    dynamics: &D,
    t: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<Option<bool>, ConleyError> {
    let g = compute_gt(n, dynamics, 0.0, t, cfg, samples)?;
    if !gamma_of(&g, n, dynamics, 0.0, t, cfg, samples)?.is_empty() {
        return Ok(None);
    }
    let grid = g.grid().clone();
    let target = g.dilate(grid.diagonal());
    let steps = cfg.steps_for(t) as u64;
    let boxes = g.indices();
    let ok = par::map(&boxes, |b| -> Result<bool, EvalError> {
        let mut ws = StepScratch::new(grid.dim());
        for p in grid.interior_samples(b, samples) {
            if let Orbit::Left = walk(dynamics, 0.0, &p, steps, cfg.step, cfg, &mut ws, |y| {
                target.contains_point(y)
            })? {
                return Ok(false);
            }
        }
        Ok(true)
    });
    let mut all = true;
    for o in ok {
        all &= o.map_err(ConleyError::from)?;
    }
    Ok(Some(all))
}
