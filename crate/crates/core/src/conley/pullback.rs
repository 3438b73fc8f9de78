//! Time slices of pullback attractors inside a block.

use std::fmt::Write as _;

use serde::Serialize;

use super::{gt_within, image, ConleyError, StableBlock};
use crate::boxgrid::BoxSet;
use crate::dynamics::{FlowConfig, SkewFlow};
use crate::fieldlang::FieldAst;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceOptions {
    /// Horizon `T` of the `G^T` sets the images are intersected with.
    pub horizon: f64,
    /// How far back the pullback starts.
    pub depth: f64,
    /// Length of one push-forward increment.
    pub tau: f64,
    pub samples: usize,
}

impl Default for SliceOptions {
    fn default() -> Self {
        SliceOptions {
            horizon: 1.0,
            depth: 20.0,
            tau: 1.0,
            samples: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceFamily {
    pub times: Vec<f64>,
    pub slices: Vec<BoxSet>,
    /// Set when the intersection became empty; the slice is then empty.
    pub degenerate: Vec<bool>,
}

impl SliceFamily {
    pub fn all_nonempty(&self) -> bool {
        !self.degenerate.iter().any(|&d| d)
    }

    /// Union of all slices; `None` for an empty family.
    pub fn union(&self) -> Option<BoxSet> {
        let mut it = self.slices.iter();
        let first = it.next()?.clone();
        Some(it.fold(first, |acc, s| acc.union(s)))
    }

    /// One line per (time, member box): `t,i1..id,x1..xd`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let Some(first) = self.slices.first() else {
            return "t\n".into();
        };
        let d = first.grid().dim();
        s.push('t');
        for i in 1..=d {
            let _ = write!(s, ",i{i}");
        }
        for i in 1..=d {
            let _ = write!(s, ",x{i}");
        }
        s.push('\n');
        let mut c = vec![0.0; d];
        for (t, slice) in self.times.iter().zip(&self.slices) {
            for k in slice.iter() {
                let _ = write!(s, "{t},");
                slice.write_row(k, &mut c, &mut s);
                s.push('\n');
            }
        }
        s
    }
}

/// Pullback slices of `field` at the sorted `times`: start from the `G^T`
/// slice of the block `depth` before the earliest time, then alternately push
/// forward by `tau` and intersect with the `G^T` slice at the new base time,
/// recording the set on reaching each requested time. Later slices thus get
/// more than `depth` of history, never less.
fn chained_slices(
    field: &FieldAst,
    block: &BoxSet,
    times: &[f64],
    opts: &SliceOptions,
    cfg: &FlowConfig,
) -> Result<Vec<BoxSet>, ConleyError> {
    let dynamics = SkewFlow::new(field);
    let chunk = cfg.steps_for(opts.tau).max(1);
    let mut base = times[0] - opts.depth;
    let mut s = gt_within(block, block, &dynamics, base, opts.horizon, cfg, opts.samples)?;
    let mut remaining = cfg.steps_for(opts.depth);
    let mut out = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            remaining = cfg.steps_for(t - base);
        }
        while remaining > 0 && !s.is_empty() {
            let n = chunk.min(remaining);
            let pushed = image(&s, &dynamics, base, n as f64 * cfg.step, cfg, opts.samples)?;
            remaining -= n;
            // keep the base time on the mesh of t rather than accumulating
            base = t - remaining as f64 * cfg.step;
            s = gt_within(block, &pushed, &dynamics, base, opts.horizon, cfg, opts.samples)?;
        }
        base = t;
        out.push(s.clone());
    }
    Ok(out)
}

/// Pullback attractor slices of `field` inside `block` at each of `times`.
pub fn pullback_slices(
    field: &FieldAst,
    block: &StableBlock,
    times: &[f64],
    opts: &SliceOptions,
    cfg: &FlowConfig,
) -> Result<SliceFamily, ConleyError> {
    if !(opts.depth >= 0.0 && opts.tau > 0.0) {
        return Err(ConleyError::Invalid(
            "depth must be nonnegative and tau positive".into(),
        ));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(ConleyError::Invalid("slice times must be finite".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let mut slices = vec![BoxSet::empty(block.block.grid().clone()); times.len()];
    if !sorted.is_empty() {
        for (k, s) in chained_slices(field, &block.block, &sorted, opts, cfg)?
            .into_iter()
            .enumerate()
        {
            slices[order[k]] = s;
        }
    }
    let degenerate = slices.iter().map(BoxSet::is_empty).collect();
    Ok(SliceFamily {
        times: times.to_vec(),
        slices,
        degenerate,
    })
}
