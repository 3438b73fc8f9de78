//! Time-`τ` box maps and the combinatorial maximal invariant set.

use std::sync::Arc;

use super::{horizon_steps, ConleyError};
use crate::boxgrid::{BoxSet, Grid};
use crate::dynamics::{Dynamics, FlowConfig, StepScratch};
use crate::fieldlang::EvalError;
use crate::par;

/// Safety factor on the linearised covering radius of each image sample.
const COVER_FACTOR: f64 = 0.55;

/// Boxes meeting the image of box `b` under the flow for `steps` mesh steps
/// from base time `base`.
///
/// The box is sampled on an `n^d` cell-centred lattice (`n >= 2`). Every
/// point of the box lies within half a lattice spacing of a sample in each
/// coordinate, so its image lies within `½ Σ_i |y_{j+e_i} - y_j|` of the
/// sample image `y_j` to first order; balls of that radius (with a 10%
/// allowance for curvature) around each image sample cover the image.
/// Image samples that leave the grid or blow up contribute nothing.
pub fn box_image<D: Dynamics + ?Sized>(
    grid: &Grid,
    dynamics: &D,
    base: f64,
    steps: u64,
    cfg: &FlowConfig,
    samples: usize,
    b: usize,
) -> Result<Vec<usize>, EvalError> {
    let n = samples.max(2);
    let d = grid.dim();
    let mut ws = StepScratch::new(d);
    let mut pts = grid.interior_samples(b, n);
    for p in pts.iter_mut() {
        for k in 0..steps {
            dynamics.step(base + k as f64 * cfg.step, cfg.step, p, &mut ws)?;
        }
    }
    let mut stride = vec![1usize; d];
    for i in 1..d {
        stride[i] = stride[i - 1] * n;
    }
    let mut out = Vec::new();
    for (j, y) in pts.iter().enumerate() {
        if !y.iter().all(|v| v.is_finite() && v.abs() <= cfg.blowup_bound) {
            continue;
        }
        let mut spread = 0.0;
        for i in 0..d {
            let ji = (j / stride[i]) % n;
            let nb = if ji + 1 < n { j + stride[i] } else { j - stride[i] };
            spread += dist(y, &pts[nb]);
        }
        let r = COVER_FACTOR * spread + 1e-12 * grid.diameter();
        mark_ball(grid, y, r, &mut out);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Append every box meeting the closed ball `B(y, r)`.
fn mark_ball(grid: &Grid, y: &[f64], r: f64, out: &mut Vec<usize>) {
    let d = grid.dim();
    let mut lo_idx = Vec::with_capacity(d);
    let mut hi_idx = Vec::with_capacity(d);
    for i in 0..d {
        let w = grid.widths()[i];
        let a = ((y[i] - r - grid.lo()[i]) / w).floor();
        let b = ((y[i] + r - grid.lo()[i]) / w).floor();
        let last = grid.res()[i] as f64 - 1.0;
        if b < 0.0 || a > last {
            return;
        }
        lo_idx.push(a.max(0.0) as usize);
        hi_idx.push(b.min(last) as usize);
    }
    let mut idx = lo_idx.clone();
    loop {
        let flat = grid.ravel(&idx);
        if grid.point_box_distance(y, flat) <= r {
            out.push(flat);
        }
        let mut i = 0;
        loop {
            if i == d {
                return;
            }
            if idx[i] < hi_idx[i] {
                idx[i] += 1;
                break;
            }
            idx[i] = lo_idx[i];
            i += 1;
        }
    }
}

/// Union of the box images of `set` for time `tau` from base time `base`.
pub fn image<D: Dynamics + ?Sized>(
    set: &BoxSet,
    dynamics: &D,
    base: f64,
    tau: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<BoxSet, ConleyError> {
    let steps = horizon_steps(tau, cfg)?;
    let grid = set.grid().clone();
    let boxes = set.indices();
    let images = par::map(&boxes, |b| box_image(&grid, dynamics, base, steps, cfg, samples, b));
    let mut out = BoxSet::empty(grid);
    for targets in images {
        for t in targets? {
            out.insert(t);
        }
    }
    Ok(out)
}

/// The box-to-box transition graph of a time-`τ` map on a domain.
#[derive(Debug, Clone)]
pub struct BoxMap {
    grid: Arc<Grid>,
    domain: Vec<usize>,
    targets: Vec<Vec<usize>>,
}

impl BoxMap {
    pub fn new<D: Dynamics + ?Sized>(
        domain: &BoxSet,
        dynamics: &D,
        base: f64,
        tau: f64,
        cfg: &FlowConfig,
        samples: usize,
    ) -> Result<BoxMap, ConleyError> {
        let steps = horizon_steps(tau, cfg)?;
        let grid = domain.grid().clone();
        let boxes = domain.indices();
        let targets = par::map(&boxes, |b| box_image(&grid, dynamics, base, steps, cfg, samples, b))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BoxMap {
            grid,
            domain: boxes,
            targets,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Targets of box `b`, if `b` is in the domain.
    pub fn targets(&self, b: usize) -> Option<&[usize]> {
        self.domain.binary_search(&b).ok().map(|i| self.targets[i].as_slice())
    }

    /// `S ∩ F(S) ∩ F⁻¹(S)` for `S` inside the domain.
    pub fn refine(&self, s: &BoxSet) -> BoxSet {
        let mut img = BoxSet::empty(self.grid.clone());
        let mut pre = BoxSet::empty(self.grid.clone());
        for (b, ts) in self.domain.iter().zip(&self.targets) {
            if !s.contains(*b) {
                continue;
            }
            let mut hits = false;
            for &t in ts {
                if s.contains(t) {
                    img.insert(t);
                    hits = true;
                }
            }
            if hits {
                pre.insert(*b);
            }
        }
        img.intersection(&pre)
    }

    /// Iterate [`BoxMap::refine`] from `start` to a fixpoint.
    pub fn invariant_part(&self, start: &BoxSet, max_iters: usize) -> Result<BoxSet, ConleyError> {
        let mut s = start.clone();
        for _ in 0..max_iters {
            let next = self.refine(&s);
            if next == s {
                return Ok(s);
            }
            s = next;
        }
        Err(ConleyError::NotConverged {
            iters: max_iters,
            last: s,
        })
    }
}

/// Combinatorial maximal invariant set of `n` under the time-`tau` map.
pub fn invariant_set<D: Dynamics + ?Sized>(
    n: &BoxSet,
    dynamics: &D,
    tau: f64,
    cfg: &FlowConfig,
    samples: usize,
    max_iters: usize,
) -> Result<BoxSet, ConleyError> {
    BoxMap::new(n, dynamics, 0.0, tau, cfg, samples)?.invariant_part(n, max_iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::AutonomousFlow;
    use crate::fieldlang::parse;

    fn line(lo: f64, hi: f64, res: usize) -> Arc<Grid> {
        Arc::new(Grid::new(vec![lo], vec![hi], vec![res]).unwrap())
    }

    fn cfg() -> FlowConfig {
        FlowConfig::new(1e-2, 1e6).unwrap()
    }

    #[test]
    fn image_covers_flowed_points() {
        let g = Arc::new(Grid::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![40, 40]).unwrap());
        let f = parse("x1*(1-x1^2-x2^2)-x2; x2*(1-x1^2-x2^2)+x1", 2).unwrap();
        let dynamics = AutonomousFlow::new(&f).unwrap();
        let mut ws = StepScratch::new(2);
        for b in [123, 500, 817, 1230] {
            let img = box_image(&g, &dynamics, 0.0, 50, &cfg(), 3, b).unwrap();
            // dense oracle: every one of 21x21 points of the box lands in the image
            let (lo, hi) = g.bounds(b);
            for i in 0..=20 {
                for j in 0..=20 {
                    let mut p = vec![
                        lo[0] + (hi[0] - lo[0]) * i as f64 / 20.0,
                        lo[1] + (hi[1] - lo[1]) * j as f64 / 20.0,
                    ];
                    for k in 0..50 {
                        dynamics.step(k as f64 * 0.01, 0.01, &mut p, &mut ws).unwrap();
                    }
                    let hit = g.locate(&p).unwrap();
                    assert!(img.contains(&hit), "box {b}: {p:?}");
                }
            }
        }
    }

    #[test]
    fn invariant_set_examples() {
        let g = line(-1.0, 1.0, 128);
        let n = BoxSet::full(g.clone());
        let f = parse("-x1", 1).unwrap();
        let dynamics = AutonomousFlow::new(&f).unwrap();
        let k = invariant_set(&n, &dynamics, 1.0, &cfg(), 2, 1000).unwrap();
        assert!(!k.is_empty() && k.len() <= 2, "{k:?}");
        assert!(k.contains_point(&[0.0]));

        let f = parse("0", 1).unwrap();
        let dynamics = AutonomousFlow::new(&f).unwrap();
        assert_eq!(invariant_set(&n, &dynamics, 1.0, &cfg(), 2, 1000).unwrap(), n);

        let g = line(0.0, 2.0, 128);
        let n = BoxSet::from_centers(g.clone(), |x| (0.5..=1.5).contains(&x[0]));
        let f = parse("x1 - x1^3", 1).unwrap();
        let dynamics = AutonomousFlow::new(&f).unwrap();
        let k = invariant_set(&n, &dynamics, 1.0, &cfg(), 2, 1000).unwrap();
        assert!(k.contains_point(&[1.0]));
        let h = g.widths()[0];
        for b in k.iter() {
            assert!((g.center(b)[0] - 1.0).abs() <= 1.5 * h);
        }
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        let g = line(-1.0, 1.0, 128);
        let n = BoxSet::full(g);
        let f = parse("-x1", 1).unwrap();
        let dynamics = AutonomousFlow::new(&f).unwrap();
        match invariant_set(&n, &dynamics, 0.1, &cfg(), 2, 1) {
            Err(ConleyError::NotConverged { iters: 1, last }) => assert!(last.is_subset(&n) && last != n),
            other => panic!("{other:?}"),
        }
    }
}
