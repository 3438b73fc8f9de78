//! The `g⁻` function of an attractor and its sublevel blocks.

use std::sync::{Arc, OnceLock};

use serde::Serialize;

use super::{invariant_set, walk, ConleyError, Orbit};
use crate::boxgrid::{BoxSet, Grid};
use crate::dynamics::{AutonomousFlow, FlowConfig, StepScratch};
use crate::fieldlang::FieldAst;
use crate::par;

/// Evaluates `g⁻(x) = sup_t α(t) F(x π t)` with `F = min(1, dist(·, K))`
/// and `α(t) = 2 - 1/(1 + a t)`.
pub struct GMinusEvaluator {
    f0: FieldAst,
    attractor: BoxSet,
    alpha_scale: f64,
    horizon_cap: f64,
    cfg: FlowConfig,
    /// Squared centre distance of each box to the nearest attractor box.
    nearest: Vec<f64>,
    /// Lazily built per-box lists of attractor boxes that can realise the
    /// distance from a point of that box.
    candidates: Vec<OnceLock<Box<[u32]>>>,
}

impl std::fmt::Debug for GMinusEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GMinusEvaluator")
            .field("f0", &self.f0.to_string())
            .field("attractor", &self.attractor)
            .field("alpha_scale", &self.alpha_scale)
            .field("horizon_cap", &self.horizon_cap)
            .finish()
    }
}

impl GMinusEvaluator {
    pub fn new(
        f0: &FieldAst,
        attractor: BoxSet,
        alpha_scale: f64,
        horizon_cap: f64,
        cfg: FlowConfig,
    ) -> Result<Self, ConleyError> {
        AutonomousFlow::new(f0)?;
        if attractor.is_empty() {
            return Err(ConleyError::EmptyInvariantSet);
        }
        if !(alpha_scale > 0.0 && alpha_scale.is_finite()) {
            return Err(ConleyError::Invalid(format!(
                "alpha_scale must be positive, got {alpha_scale}"
            )));
        }
        if !(horizon_cap > 0.0 && horizon_cap.is_finite()) {
            return Err(ConleyError::Invalid(format!(
                "horizon_cap must be positive, got {horizon_cap}"
            )));
        }
        cfg.validate()?;
        let nearest = attractor.distance_field();
        let candidates = (0..nearest.len()).map(|_| OnceLock::new()).collect();
        Ok(GMinusEvaluator {
            f0: f0.clone(),
            attractor,
            alpha_scale,
            horizon_cap,
            cfg,
            nearest,
            candidates,
        })
    }

    pub fn attractor(&self) -> &BoxSet {
        &self.attractor
    }

    fn grid(&self) -> &Arc<Grid> {
        self.attractor.grid()
    }

    #[inline]
    pub fn alpha(&self, t: f64) -> f64 {
        2.0 - 1.0 / (1.0 + self.alpha_scale * t)
    }

    /// `min(1, dist(y, K))` with `K` the union of the closed attractor boxes.
    /// Points outside the grid rectangle get `None`.
    pub fn capped_distance(&self, y: &[f64]) -> Option<f64> {
        let grid = self.grid();
        let b = grid.locate(y)?;
        let centre = self.nearest[b].sqrt();
        // y is within half a diagonal of its centre, every K point within
        // half a diagonal of its box centre
        if centre - grid.diagonal() >= 1.0 {
            return Some(1.0);
        }
        let list = self.candidates[b].get_or_init(|| {
            let reach = centre + 1.5 * grid.diagonal();
            let c = grid.center(b);
            self.attractor
                .iter()
                .filter(|&k| grid.point_box_distance(&c, k) <= reach)
                .map(|k| k as u32)
                .collect()
        });
        let d = list
            .iter()
            .map(|&k| grid.point_box_distance(y, k as usize))
            .fold(f64::INFINITY, f64::min);
        Some(d.min(1.0))
    }

    /// `g⁻(x)` on the step mesh.
    ///
    /// The running supremum stops at the first mesh time with
    /// `2 F(x π t) <= sup so far`; since `α < 2` no later term of a
    /// still-approaching orbit can exceed it. The horizon is capped.
    pub fn eval(&self, x: &[f64]) -> Result<f64, ConleyError> {
        let dynamics = AutonomousFlow::new(&self.f0)?;
        let escaped = || ConleyError::OrbitEscaped { x: x.to_vec() };
        let mut best = self.capped_distance(x).ok_or_else(escaped)?;
        let steps = self.cfg.steps_for(self.horizon_cap) as u64;
        let h = self.cfg.step;
        let mut ws = StepScratch::new(x.len());
        let mut k = 0u64;
        let mut outside = false;
        let mut stopped = false;
        walk(&dynamics, 0.0, x, steps, h, &self.cfg, &mut ws, |y| {
            k += 1;
            match self.capped_distance(y) {
                None => {
                    outside = true;
                    false
                }
                Some(f) => {
                    if 2.0 * f <= best {
                        stopped = true;
                        return false;
                    }
                    best = best.max(self.alpha(k as f64 * h) * f);
                    true
                }
            }
        })?;
        if outside || (!stopped && k < steps) {
            return Err(escaped());
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockParams {
    pub epsilon: f64,
    pub alpha_scale: f64,
    pub horizon_cap: f64,
    /// Time of the box map used for the invariant set.
    pub tau: f64,
    pub max_iters: usize,
    pub samples: usize,
    /// Horizon of the forward-invariance check.
    pub invariance_horizon: f64,
}

impl Default for BlockParams {
    fn default() -> Self {
        BlockParams {
            epsilon: 0.25,
            alpha_scale: 1.0,
            horizon_cap: 100.0,
            tau: 1.0,
            max_iters: 10_000,
            samples: 2,
            invariance_horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockValidation {
    pub attractor_in_interior: bool,
    pub forward_invariant: bool,
    pub touches_domain_edge: bool,
}

/// A positively invariant block around an attractor.
#[derive(Debug, Clone)]
pub struct StableBlock {
    pub block: BoxSet,
    /// Sublevel of `g⁻` defining the block; `None` for a user-given block.
    pub level: Option<f64>,
    /// `g⁻` at the centre of each member box, by box index.
    pub g_values: Vec<(usize, f64)>,
    pub attractor: BoxSet,
    pub validation: BlockValidation,
}

impl StableBlock {
    /// Validate a user-given block: its invariant set must be nonempty and
    /// interior, and the block forward invariant.
    pub fn from_explicit(
        block: BoxSet,
        f0: &FieldAst,
        params: &BlockParams,
        cfg: &FlowConfig,
    ) -> Result<Self, ConleyError> {
        let dynamics = AutonomousFlow::new(f0)?;
        let attractor = invariant_set(&block, &dynamics, params.tau, cfg, params.samples, params.max_iters)?;
        if attractor.is_empty() {
            return Err(ConleyError::EmptyInvariantSet);
        }
        let validation = validate(&block, &attractor, f0, params, cfg)?;
        Ok(StableBlock {
            block,
            level: None,
            g_values: Vec::new(),
            attractor,
            validation,
        })
    }
}

fn validate(
    block: &BoxSet,
    attractor: &BoxSet,
    f0: &FieldAst,
    params: &BlockParams,
    cfg: &FlowConfig,
) -> Result<BlockValidation, ConleyError> {
    let attractor_in_interior = attractor.is_subset(&block.interior());
    if !attractor_in_interior {
        return Err(ConleyError::Validation(
            "attractor is not in the interior of the block".into(),
        ));
    }
    let dynamics = AutonomousFlow::new(f0)?;
    let grid = block.grid().clone();
    let target = block.dilate(grid.diagonal());
    let steps = super::horizon_steps(params.invariance_horizon, cfg)?.max(1);
    let rim = block.boundary().indices();
    let ok = par::map(&rim, |b| {
        let mut ws = StepScratch::new(grid.dim());
        let c = grid.center(b);
        walk(&dynamics, 0.0, &c, steps, cfg.step, cfg, &mut ws, |y| {
            target.contains_point(y)
        })
        .map(|o| matches!(o, Orbit::Stayed))
    });
    let mut forward_invariant = true;
    for o in ok {
        forward_invariant &= o?;
    }
    if !forward_invariant {
        return Err(ConleyError::Validation(
            "an orbit from the block boundary leaves the block".into(),
        ));
    }
    Ok(BlockValidation {
        attractor_in_interior,
        forward_invariant,
        touches_domain_edge: block.touches_domain_edge(),
    })
}

/// `B_ε = {g⁻ <= ε}` around the attractor of `ntilde`.
pub fn build_stable_block(
    ntilde: &BoxSet,
    f0: &FieldAst,
    params: &BlockParams,
    cfg: &FlowConfig,
) -> Result<StableBlock, ConleyError> {
    let eps = params.epsilon;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(ConleyError::EpsilonOutOfRange { epsilon: eps });
    }
    let dynamics = AutonomousFlow::new(f0)?;
    let attractor = invariant_set(ntilde, &dynamics, params.tau, cfg, params.samples, params.max_iters)?;
    if attractor.is_empty() {
        return Err(ConleyError::EmptyInvariantSet);
    }
    if !attractor.is_subset(&ntilde.interior()) {
        return Err(ConleyError::NotIsolated);
    }
    let ev = GMinusEvaluator::new(f0, attractor.clone(), params.alpha_scale, params.horizon_cap, *cfg)?;
    let grid = ntilde.grid().clone();
    // g⁻ >= F, so boxes with F(centre) > ε cannot qualify
    let near: Vec<usize> = ntilde
        .iter()
        .filter(|&b| ev.capped_distance(&grid.center(b)).is_some_and(|f| f <= eps))
        .collect();
    let values = par::map(&near, |b| ev.eval(&grid.center(b)));
    let mut block = BoxSet::empty(grid.clone());
    let mut g_values = Vec::new();
    for (&b, v) in near.iter().zip(values) {
        match v {
            Ok(g) if g <= eps => {
                block.insert(b);
                g_values.push((b, g));
            }
            // an orbit leaving the grid is not in the covered basin
            Ok(_) | Err(ConleyError::OrbitEscaped { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if !block.intersection(&ntilde.boundary()).is_empty() {
        return Err(ConleyError::EpsilonTooLarge { epsilon: eps });
    }
    let validation = validate(&block, &attractor, f0, params, cfg)?;
    Ok(StableBlock {
        block,
        level: Some(eps),
        g_values,
        attractor,
        validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::flow_auto;
    use crate::fieldlang::parse;
    use proptest::prelude::*;

    fn line(lo: f64, hi: f64, res: usize) -> Arc<Grid> {
        Arc::new(Grid::new(vec![lo], vec![hi], vec![res]).unwrap())
    }

    fn cfg() -> FlowConfig {
        FlowConfig::new(1e-2, 1e6).unwrap()
    }

    fn linear_evaluator() -> GMinusEvaluator {
        let g = line(-1.25, 1.25, 320);
        let f = parse("-x1", 1).unwrap();
        let k = BoxSet::from_centers(g, |x| x[0].abs() < 0.005);
        GMinusEvaluator::new(&f, k, 1.0, 100.0, cfg()).unwrap()
    }

    #[test]
    fn alpha_shape() {
        let ev = linear_evaluator();
        assert_eq!(ev.alpha(0.0), 1.0);
        let mut last = 1.0;
        for k in 1..1000 {
            let a = ev.alpha(k as f64 * 0.1);
            assert!(a > last && a < 2.0);
            last = a;
        }
    }

    #[test]
    fn g_minus_of_linear_contraction_is_abs() {
        // (2 - 1/(1+t)) e^{-t} has derivative -1 at t = 0 and decreases
        let brute = (0..100_000)
            .map(|k| {
                let t = k as f64 * 1e-4;
                (2.0 - 1.0 / (1.0 + t)) * (-t).exp()
            })
            .fold(0.0, f64::max);
        assert_eq!(brute, 1.0);
        let ev = linear_evaluator();
        let h = ev.grid().widths()[0];
        for k in 0..=200 {
            let x = -1.0 + 2.0 * k as f64 / 200.0;
            let g = ev.eval(&[x]).unwrap();
            assert!((g - x.abs()).abs() <= 2.0 * h, "{x}: {g}");
        }
        let c = ev.grid().center(ev.attractor().indices()[0]);
        assert_eq!(ev.eval(&c).unwrap(), 0.0);
    }

    #[test]
    fn escaping_orbit_is_an_error() {
        let g = line(-1.0, 1.0, 64);
        let f = parse("x1", 1).unwrap();
        let k = BoxSet::from_centers(g, |x| x[0].abs() < 0.02);
        let ev = GMinusEvaluator::new(&f, k, 1.0, 100.0, cfg()).unwrap();
        assert!(matches!(ev.eval(&[0.5]), Err(ConleyError::OrbitEscaped { .. })));
    }

    #[test]
    fn linear_block() {
        let g = line(-1.25, 1.25, 320);
        let ntilde = BoxSet::from_centers(g.clone(), |x| x[0].abs() <= 1.0);
        let f = parse("-x1", 1).unwrap();
        let params = BlockParams {
            epsilon: 0.25,
            ..Default::default()
        };
        let b = build_stable_block(&ntilde, &f, &params, &cfg()).unwrap();
        let h = g.widths()[0];
        let idx = b.block.indices();
        let lo = g.bounds(idx[0]).0[0];
        let hi = g.bounds(*idx.last().unwrap()).1[0];
        assert!(
            (lo + 0.25).abs() <= 2.0 * h && (hi - 0.25).abs() <= 2.0 * h,
            "[{lo}, {hi}]"
        );
        assert!(b.g_values.iter().all(|&(_, v)| v <= 0.25));
        assert_eq!(b.g_values.len(), b.block.len());
        assert!(b.validation.forward_invariant && b.validation.attractor_in_interior);
        assert!(!b.validation.touches_domain_edge);

        for eps in [0.0, 0.5, 0.7] {
            let p = BlockParams { epsilon: eps, ..params };
            assert!(matches!(
                build_stable_block(&ntilde, &f, &p, &cfg()),
                Err(ConleyError::EpsilonOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn epsilon_too_large_for_neighbourhood() {
        let g = line(-1.25, 1.25, 320);
        let ntilde = BoxSet::from_centers(g, |x| x[0].abs() <= 0.3);
        let f = parse("-x1", 1).unwrap();
        let p = BlockParams {
            epsilon: 0.45,
            ..Default::default()
        };
        assert!(matches!(
            build_stable_block(&ntilde, &f, &p, &cfg()),
            Err(ConleyError::EpsilonTooLarge { .. })
        ));
    }

    #[test]
    fn pitchfork_block() {
        let g = line(0.0, 2.0, 256);
        let ntilde = BoxSet::from_centers(g.clone(), |x| (0.5..=1.5).contains(&x[0]));
        let f = parse("x1 - x1^3", 1).unwrap();
        let p = BlockParams {
            epsilon: 0.2,
            ..Default::default()
        };
        let b = build_stable_block(&ntilde, &f, &p, &cfg()).unwrap();
        assert!(b.block.contains_point(&[1.0]));
        assert!(b.validation.forward_invariant);
        // brute force: sup over a fine orbit of α F along the exact-ish orbit
        let k = &b.attractor;
        let dist = |y: f64| k.iter().map(|j| g.point_box_distance(&[y], j)).fold(1.0, f64::min);
        let fine = FlowConfig::new(1e-3, 1e6).unwrap();
        for &(bx, v) in b.g_values.iter().step_by(5) {
            let x0 = g.center(bx)[0];
            let mut sup = dist(x0);
            let mut x = x0;
            for j in 1..=5000 {
                x = flow_auto(&f, &[x], 1e-3, &fine).unwrap().endpoint.x[0];
                sup = sup.max((2.0 - 1.0 / (1.0 + j as f64 * 1e-3)) * dist(x));
            }
            assert!((sup - v).abs() <= 2e-3, "{x0}: {sup} vs {v}");
        }
    }

    #[test]
    fn hopf_annulus_block() {
        let g = Arc::new(Grid::new(vec![-1.7, -1.7], vec![1.7, 1.7], vec![96, 96]).unwrap());
        let ntilde = BoxSet::from_centers(g.clone(), |x| {
            let r = x[0].hypot(x[1]);
            (0.5..=1.5).contains(&r)
        });
        let f = parse("x1*(1-x1^2-x2^2)-x2; x2*(1-x1^2-x2^2)+x1", 2).unwrap();
        let p = BlockParams {
            epsilon: 0.2,
            ..Default::default()
        };
        let b = build_stable_block(&ntilde, &f, &p, &cfg()).unwrap();
        for k in 0..64 {
            let th = k as f64 * std::f64::consts::TAU / 64.0;
            assert!(b.block.contains_point(&[th.cos(), th.sin()]));
            assert!(b.attractor.contains_point(&[th.cos(), th.sin()]));
        }
        // annulus: no box near the origin or the outer rim
        let h = g.diagonal();
        for x in b.block.iter() {
            let c = g.center(x);
            let r = c[0].hypot(c[1]);
            assert!((r - 1.0).abs() <= 0.2 + 2.0 * h, "{r}");
        }
    }

    #[test]
    fn explicit_block() {
        let g = line(-1.25, 1.25, 320);
        let f = parse("-x1", 1).unwrap();
        let block = BoxSet::from_centers(g.clone(), |x| x[0].abs() <= 1.0);
        let b = StableBlock::from_explicit(block.clone(), &f, &BlockParams::default(), &cfg()).unwrap();
        assert_eq!(b.level, None);
        assert!(b.attractor.contains_point(&[0.0]) && b.attractor.len() <= 2);
        let f = parse("x1", 1).unwrap();
        assert!(StableBlock::from_explicit(block, &f, &BlockParams::default(), &cfg()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn g_minus_decreases_along_orbits(x in -1.0f64..1.0, s in 0.01f64..2.0) {
            let ev = linear_evaluator();
            let f = parse("-x1", 1).unwrap();
            let y = flow_auto(&f, &[x], s, &cfg()).unwrap().endpoint.x;
            // F is 1-Lipschitz, so grid effects enter through one diagonal
            let slack = ev.grid().diagonal();
            prop_assert!(ev.eval(&y).unwrap() <= ev.eval(&[x]).unwrap() + slack);
        }
    }
}
