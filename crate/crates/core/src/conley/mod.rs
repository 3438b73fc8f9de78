//! Flow-defined sets on box grids.
//!
//! * [`compute_gt`] / [`compute_gamma_t`]: boxes whose orbits over `[-T, T]`
//!   stay in a neighbourhood `N`, and those among them whose forward orbit
//!   reaches the boundary of `N`.
//! * [`invariant_set`]: combinatorial maximal invariant set.
//! * [`GMinusEvaluator`] and [`build_stable_block`]: positively invariant
//!   sublevel blocks of a Lyapunov-type function around an attractor.
//! * [`compute_delta`]: neighbourhood margin between nested `G` sets.
//! * [`pullback_slices`]: time slices of the pullback attractor of a
//!   non-autonomous field inside a block.

mod boxmap;
mod checks;
mod gminus;
mod pullback;

use thiserror::Error;

use crate::boxgrid::BoxSet;
use crate::dynamics::{Dynamics, FlowConfig, FlowError, StepScratch};
use crate::fieldlang::EvalError;
use crate::par;

pub use boxmap::{box_image, image, invariant_set, BoxMap};
pub use checks::{check_monotone, check_nesting, check_stability, Nesting};
pub use gminus::{build_stable_block, BlockParams, BlockValidation, GMinusEvaluator, StableBlock};
pub use pullback::{pullback_slices, SliceFamily, SliceOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConleyError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("invariant set iteration did not converge after {iters} iterations")]
    NotConverged { iters: usize, last: BoxSet },
    #[error("g- orbit from {x:?} left the grid before the supremum could be truncated")]
    OrbitEscaped { x: Vec<f64> },
    #[error("epsilon {epsilon} must lie in (0, 1/2)")]
    EpsilonOutOfRange { epsilon: f64 },
    #[error("epsilon {epsilon} too large: block reaches the boundary of the neighbourhood")]
    EpsilonTooLarge { epsilon: f64 },
    #[error("the invariant set of the neighbourhood is empty")]
    EmptyInvariantSet,
    #[error("the invariant set is not isolated: it reaches the boundary of the neighbourhood")]
    NotIsolated,
    #[error("stable block validation failed ({0}); try a smaller epsilon or a finer grid")]
    Validation(String),
    #[error("grid too coarse for this horizon: margin {delta} does not exceed one box diagonal {diagonal}")]
    GridTooCoarse { delta: f64, diagonal: f64 },
    #[error("{0}")]
    Invalid(String),
}

impl From<EvalError> for ConleyError {
    fn from(e: EvalError) -> Self {
        ConleyError::Flow(FlowError::Eval(e))
    }
}

/// How an orbit test ended.
pub(crate) enum Orbit {
    Stayed,
    Left,
}

/// Walk `steps` mesh steps of signed size `h` from `(s, x)` and report
/// whether every mesh point satisfies `keep`; stops at the first failure.
#[allow(clippy::too_many_arguments)]
pub(crate) fn walk<D: Dynamics + ?Sized>(
    dynamics: &D,
    s: f64,
    x0: &[f64],
    steps: u64,
    h: f64,
    cfg: &FlowConfig,
    ws: &mut StepScratch,
    mut keep: impl FnMut(&[f64]) -> bool,
) -> Result<Orbit, EvalError> {
    let mut x = x0.to_vec();
    for k in 0..steps {
        dynamics.step(s + k as f64 * h, h, &mut x, ws)?;
        if !x.iter().all(|v| v.abs() <= cfg.blowup_bound) || !keep(&x) {
            return Ok(Orbit::Left);
        }
    }
    Ok(Orbit::Stayed)
}

pub(crate) fn horizon_steps(horizon: f64, cfg: &FlowConfig) -> Result<u64, ConleyError> {
    if !(horizon >= 0.0) {
        return Err(ConleyError::Invalid(format!(
            "horizon must be nonnegative, got {horizon}"
        )));
    }
    Ok(cfg.steps_for(horizon) as u64)
}

/// Boxes of `candidates ∩ n` all of whose samples have mesh orbits over
/// `[-horizon, horizon]` (from base time `base`) inside `n` dilated by one
/// box diagonal.
pub(crate) fn gt_within<D: Dynamics + ?Sized>(
    n: &BoxSet,
    candidates: &BoxSet,
    dynamics: &D,
    base: f64,
    horizon: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<BoxSet, ConleyError> {
    within(
        n,
        candidates,
        dynamics,
        base,
        horizon,
        cfg,
        samples,
        &[-cfg.step, cfg.step],
    )
}

/// Boxes of `candidates ∩ n` whose sample orbits over `[0, horizon]` stay
/// in `n` dilated by one box diagonal.
pub(crate) fn forward_within<D: Dynamics + ?Sized>(
    n: &BoxSet,
    candidates: &BoxSet,
    dynamics: &D,
    base: f64,
    horizon: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<BoxSet, ConleyError> {
    within(n, candidates, dynamics, base, horizon, cfg, samples, &[cfg.step])
}

#[allow(clippy::too_many_arguments)]
fn within<D: Dynamics + ?Sized>(
    n: &BoxSet,
    candidates: &BoxSet,
    dynamics: &D,
    base: f64,
    horizon: f64,
    cfg: &FlowConfig,
    samples: usize,
    directions: &[f64],
) -> Result<BoxSet, ConleyError> {
    let steps = horizon_steps(horizon, cfg)?;
    let grid = n.grid().clone();
    let target = n.dilate(grid.diagonal());
    let boxes: Vec<usize> = n.intersection(candidates).indices();
    let keep = par::map(&boxes, |b| -> Result<bool, EvalError> {
        let mut ws = StepScratch::new(grid.dim());
        for p in grid.interior_samples(b, samples) {
            for &h in directions {
                if let Orbit::Left = walk(dynamics, base, &p, steps, h, cfg, &mut ws, |y| target.contains_point(y))? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    });
    let mut out = BoxSet::empty(grid);
    for (b, k) in boxes.iter().zip(keep) {
        if k? {
            out.insert(*b);
        }
    }
    Ok(out)
}

/// `G^T(N)`: boxes of `n` whose sample orbits over `[-T, T]` stay in `n`
/// (up to one box diagonal). For skew-product dynamics the test runs from
/// base time `base`, giving the `base`-slice of the set.
pub fn compute_gt<D: Dynamics + ?Sized>(
    n: &BoxSet,
    dynamics: &D,
    base: f64,
    horizon: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<BoxSet, ConleyError> {
    gt_within(n, n, dynamics, base, horizon, cfg, samples)
}

/// `Γ^T(N)`: boxes of `G^T(N)` with a sample whose forward orbit over
/// `[0, T]` enters a boundary box of `n`.
pub fn compute_gamma_t<D: Dynamics + ?Sized>(
    n: &BoxSet,
    dynamics: &D,
    base: f64,
    horizon: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<BoxSet, ConleyError> {
    let g = compute_gt(n, dynamics, base, horizon, cfg, samples)?;
    gamma_of(&g, n, dynamics, base, horizon, cfg, samples)
}

pub(crate) fn gamma_of<D: Dynamics + ?Sized>(
    g: &BoxSet,
    n: &BoxSet,
    dynamics: &D,
    base: f64,
    horizon: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<BoxSet, ConleyError> {
    let steps = horizon_steps(horizon, cfg)?;
    let grid = n.grid().clone();
    let rim = n.boundary();
    let boxes = g.indices();
    let hits = par::map(&boxes, |b| -> Result<bool, EvalError> {
        let mut ws = StepScratch::new(grid.dim());
        for p in grid.interior_samples(b, samples) {
            if rim.contains_point(&p) {
                return Ok(true);
            }
            let orbit = walk(dynamics, base, &p, steps, cfg.step, cfg, &mut ws, |y| {
                !rim.contains_point(y)
            })?;
            if let Orbit::Left = orbit {
                return Ok(true);
            }
        }
        Ok(false)
    });
    let mut out = BoxSet::empty(grid);
    for (b, h) in boxes.iter().zip(hits) {
        if h? {
            out.insert(*b);
        }
    }
    Ok(out)
}

/// Margin `δ` with `U_δ(G^{2T}) ⊆ G^T` and `U_δ(G^T) ⊆ block` for the
/// autonomous `dynamics`, reduced by one box diagonal.
///
/// The supremum over admissible dilation radii is computed exactly from the
/// distance transform of the inner sets.
pub fn compute_delta<D: Dynamics + ?Sized>(
    block: &BoxSet,
    dynamics: &D,
    horizon: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<f64, ConleyError> {
    let diagonal = block.grid().diagonal();
    let g1 = compute_gt(block, dynamics, 0.0, horizon, cfg, samples)?;
    let g2 = compute_gt(block, dynamics, 0.0, 2.0 * horizon, cfg, samples)?;
    if g2.is_empty() {
        return Err(ConleyError::GridTooCoarse { delta: 0.0, diagonal });
    }
    let inner = g2.dilation_margin(&g1).unwrap_or(0.0);
    let outer = g1.dilation_margin(block).unwrap_or(0.0);
    let delta = inner.min(outer) - diagonal;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(ConleyError::GridTooCoarse {
            delta: inner.min(outer),
            diagonal,
        });
    }
    Ok(delta)
}
