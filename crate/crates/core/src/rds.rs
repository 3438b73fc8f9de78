//! Bounded-noise random dynamical systems over a stable block.
//!
//! A realization is a two-sided forcing path `ξ` with `‖ξ(t)‖∞ <= ρ`,
//! drawn cell by cell on a mesh of width `Δ` from a counter-based
//! generator, so any window of the path is reproducible on its own. The
//! noisy field is `f0(x) + g(x, ξ(t))`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::{smallvec, SmallVec};
use thiserror::Error;

use crate::boxgrid::BoxSet;
use crate::conley::{forward_within, image, ConleyError, StableBlock};
use crate::dynamics::{rk4_step, AutonomousFlow, Dynamics, FlowConfig, StepScratch};
use crate::fieldlang::{parse_with_params, EvalError, FieldAst, ParseError};
use crate::par;
use crate::perturb::{deviation_from, strided, DeviationSampling};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("noise bound rho must be finite and nonnegative, got {0}")]
    Rho(f64),
    #[error("noise mesh must be positive, got {0}")]
    Mesh(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Independent values held constant on each mesh cell.
    #[default]
    PiecewiseConstant,
    /// Linear interpolation between cell knots.
    Smoothed,
}

#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rho: f64,
    pub mesh: f64,
    /// `g(x, u)` with parameters `u1..um`.
    coupling: FieldAst,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rho: f64, mesh: f64, coupling: FieldAst) -> Result<Self, NoiseError> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(NoiseError::Rho(rho));
        }
        if !(mesh > 0.0 && mesh.is_finite()) {
            return Err(NoiseError::Mesh(mesh));
        }
        Ok(NoiseSpec {
            kind,
            rho,
            mesh,
            coupling,
        })
    }

    /// Parse a coupling over `m` forcing symbols `u1..um`.
    pub fn parse(
        kind: NoiseKind,
        rho: f64,
        mesh: f64,
        m: usize,
        coupling: &str,
        dim: usize,
    ) -> Result<Self, NoiseError> {
        let names: Vec<String> = (1..=m).map(|j| format!("u{j}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Self::new(kind, rho, mesh, parse_with_params(coupling, dim, &refs)?)
    }

    /// Forcing dimension `m`.
    pub fn m(&self) -> usize {
        self.coupling.params().len()
    }

    pub fn coupling(&self) -> &FieldAst {
        &self.coupling
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self, NoiseError> {
        Self::new(self.kind, rho, self.mesh, self.coupling.clone())
    }
}

/// One forcing realization, precomputed on `[-t_max, t_max]` and generated
/// on demand outside it.
#[derive(Debug, Clone)]
pub struct NoisePath {
    pub seed: u64,
    spec: NoiseSpec,
    t_max: f64,
    first_cell: i64,
    values: Vec<f64>,
    /// Shift in cells: this path at `t` is the unshifted one at `t + offset Δ`.
    offset: i64,
}

fn cell_values(seed: u64, cell: i64, m: usize, rho: f64) -> SmallVec<[f64; 4]> {
    if rho == 0.0 {
        return smallvec![0.0; m];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell as u64);
    (0..m).map(|_| rng.random_range(-rho..=rho).clamp(-rho, rho)).collect()
}

pub fn sample_path(spec: &NoiseSpec, seed: u64, t_max: f64) -> NoisePath {
    let m = spec.m();
    let t_max = t_max.abs();
    let first_cell = (-t_max / spec.mesh).floor() as i64 - 1;
    let last_cell = (t_max / spec.mesh).ceil() as i64 + 1;
    let mut values = Vec::with_capacity((last_cell - first_cell + 1) as usize * m);
    for c in first_cell..=last_cell {
        values.extend(cell_values(seed, c, m, spec.rho));
    }
    NoisePath {
        seed,
        spec: spec.clone(),
        t_max,
        first_cell,
        values,
        offset: 0,
    }
}

impl NoisePath {
    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// The realization `θ_{cells Δ} ω`.
    pub fn shifted(&self, cells: i64) -> NoisePath {
        NoisePath {
            offset: self.offset + cells,
            ..self.clone()
        }
    }

    fn cell(&self, c: i64, out: &mut [f64]) {
        let c = c + self.offset;
        let m = self.spec.m();
        let k = c - self.first_cell;
        if k >= 0 && ((k as usize + 1) * m) <= self.values.len() {
            out.copy_from_slice(&self.values[k as usize * m..(k as usize + 1) * m]);
        } else {
            out.copy_from_slice(&cell_values(self.seed, c, m, self.spec.rho));
        }
    }

    /// `ξ(t)`.
    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        let pos = t / self.spec.mesh;
        let c = pos.floor();
        self.cell(c as i64, out);
        if self.spec.kind == NoiseKind::Smoothed {
            let frac = pos - c;
            let mut next: SmallVec<[f64; 4]> = smallvec![0.0; out.len()];
            self.cell(c as i64 + 1, &mut next);
            let rho = self.spec.rho;
            for (o, n) in out.iter_mut().zip(&next) {
                *o = ((1.0 - frac) * *o + frac * n).clamp(-rho, rho);
            }
        }
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.m()];
        self.value_into(t, &mut out);
        out
    }
}

/// Skew-product flow of `f0 + g(·, ξ(t))` along one realization.
///
/// Piecewise-constant forcing is frozen over each integrator step at its
/// midpoint value, so steps never straddle a switch when `Δ` is a step
/// multiple and the flow is an exact concatenation of autonomous flows.
#[derive(Debug, Clone, Copy)]
pub struct NoisyFlow<'a> {
    f0: &'a FieldAst,
    path: &'a NoisePath,
}

impl<'a> NoisyFlow<'a> {
    pub fn new(f0: &'a FieldAst, path: &'a NoisePath) -> Self {
        NoisyFlow { f0, path }
    }
}

impl Dynamics for NoisyFlow<'_> {
    fn dim(&self) -> usize {
        self.f0.dim()
    }

    fn step(&self, s: f64, h: f64, x: &mut [f64], ws: &mut StepScratch) -> Result<(), EvalError> {
        let m = self.path.spec.m();
        let coupling = &self.path.spec.coupling;
        let d = self.f0.dim();
        let rhs = |t: f64, y: &[f64], out: &mut [f64], u: &[f64]| -> Result<(), EvalError> {
            self.f0.eval_into(t, y, out)?;
            let mut g: SmallVec<[f64; 8]> = smallvec![0.0; d];
            coupling.eval_with_params(t, y, u, &mut g)?;
            for (o, v) in out.iter_mut().zip(&g) {
                *o += v;
            }
            Ok(())
        };
        match self.path.spec.kind {
            NoiseKind::PiecewiseConstant => {
                let mut u: SmallVec<[f64; 4]> = smallvec![0.0; m];
                self.path.value_into(s + 0.5 * h, &mut u);
                rk4_step(|t, y, out| rhs(t, y, out, &u), s, h, x, ws)
            }
            NoiseKind::Smoothed => rk4_step(
                |t, y, out| {
                    let mut u: SmallVec<[f64; 4]> = smallvec![0.0; m];
                    self.path.value_into(t, &mut u);
                    rhs(t, y, out, &u)
                },
                s,
                h,
                x,
                ws,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RdsOptions {
    /// Push-forward increment of the pullback half.
    pub tau: f64,
    pub samples: usize,
}

impl Default for RdsOptions {
    fn default() -> Self {
        RdsOptions { tau: 1.0, samples: 2 }
    }
}

/// `D(ω) = ⋂_{t ∈ [-T, T]} B φ^{θ_{-t} ω}(t)` at base time `base`.
///
/// The part `t >= 0` intersects the images of the block flowed from
/// `base - t` to `base` for checkpoints `t = τ, 2τ, …` and `t = T`; each
/// image is taken in one piece so box-covering errors do not accumulate.
/// The part `t <= 0` keeps boxes whose forward sample orbits over `[0, T]`
/// stay in the block.
pub fn pullback_slice_d(
    path: &NoisePath,
    f0: &FieldAst,
    block: &StableBlock,
    horizon: f64,
    base: f64,
    cfg: &FlowConfig,
    opts: &RdsOptions,
) -> Result<BoxSet, ConleyError> {
    let dynamics = NoisyFlow::new(f0, path);
    let b = &block.block;
    let total = cfg.steps_for(horizon);
    let chunk = cfg.steps_for(opts.tau).max(1);
    let mut checkpoints: Vec<i64> = (1..).map(|j| j * chunk).take_while(|&n| n < total).collect();
    if total > 0 {
        checkpoints.push(total);
    }
    let mut s = b.clone();
    // longest pullback first: it is the smallest set and empties fastest
    for &n in checkpoints.iter().rev() {
        let t = n as f64 * cfg.step;
        let img = image(b, &dynamics, base - t, t, cfg, opts.samples)?;
        s = s.intersection(&img);
        if s.is_empty() {
            return Ok(s);
        }
    }
    forward_within(b, &s, &dynamics, base, horizon, cfg, opts.samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathRecord {
    pub seed: u64,
    pub nonempty: bool,
    pub contained: bool,
    /// Semidistance from `D` to the unperturbed attractor.
    pub semidist: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceReport {
    pub rho: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_paths: usize,
    pub fraction_nonempty: f64,
    pub fraction_contained: f64,
    pub max_semidist: Option<f64>,
    pub per_path: Vec<PathRecord>,
}

impl PersistenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,nonempty,contained,semidist\n");
        for r in &self.per_path {
            let d = r.semidist.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.seed, r.nonempty, r.contained, d);
        }
        s
    }
}

/// `D(ω)` at base time 0 for seeds `seed0 .. seed0 + n_paths`.
#[allow(clippy::too_many_arguments)]
pub fn persistence_stats(
    spec: &NoiseSpec,
    f0: &FieldAst,
    block: &StableBlock,
    horizon: f64,
    cfg: &FlowConfig,
    n_paths: usize,
    seed0: u64,
    opts: &RdsOptions,
) -> Result<PersistenceReport, ConleyError> {
    AutonomousFlow::new(f0)?;
    if spec.coupling.dim() != f0.dim() {
        return Err(ConleyError::Invalid(format!(
            "coupling has dimension {}, field has {}",
            spec.coupling.dim(),
            f0.dim()
        )));
    }
    let order: Vec<usize> = (0..n_paths).collect();
    let per_path = par::map(&order, |i| -> Result<PathRecord, ConleyError> {
        let seed = seed0.wrapping_add(i as u64);
        let path = sample_path(spec, seed, horizon + opts.tau + spec.mesh);
        let d = pullback_slice_d(&path, f0, block, horizon, 0.0, cfg, opts)?;
        Ok(PathRecord {
            seed,
            nonempty: !d.is_empty(),
            contained: !d.is_empty() && d.is_subset(&block.block),
            semidist: d.semidist(&block.attractor).ok(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let n = per_path.len().max(1) as f64;
    let count = |f: fn(&PathRecord) -> bool| per_path.iter().filter(|r| f(r)).count() as f64 / n;
    let max_semidist = per_path.iter().filter_map(|r| r.semidist).reduce(f64::max);
    Ok(PersistenceReport {
        rho: spec.rho,
        horizon,
        n_paths,
        fraction_nonempty: count(|r| r.nonempty),
        fraction_contained: count(|r| r.contained),
        max_semidist,
        per_path,
    })
}

/// Largest deviation over `[-T, T]` between noisy and unperturbed orbits
/// from block points at base time 0, over `n_paths` realizations.
#[allow(clippy::too_many_arguments)]
pub fn noise_deviation(
    spec: &NoiseSpec,
    f0: &FieldAst,
    block: &StableBlock,
    horizon: f64,
    cfg: &FlowConfig,
    n_paths: usize,
    seed0: u64,
    sampling: &DeviationSampling,
) -> Result<f64, ConleyError> {
    let grid = block.block.grid().clone();
    let points = strided(&block.block, sampling.max_points);
    let order: Vec<usize> = (0..n_paths).collect();
    let devs = par::map(&order, |i| {
        let path = sample_path(spec, seed0.wrapping_add(i as u64), horizon + spec.mesh);
        let dynamics = NoisyFlow::new(f0, &path);
        points
            .iter()
            .map(|&b| deviation_from(&dynamics, f0, 0.0, &grid.center(b), -horizon, horizon, cfg))
            .try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
    });
    devs.into_iter().try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
}

/// Bisect the largest `rho` in `(0, rho_max]` whose noise deviation stays
/// below `δ/3`.
#[allow(clippy::too_many_arguments)]
pub fn admissible_rho(
    spec: &NoiseSpec,
    f0: &FieldAst,
    block: &StableBlock,
    horizon: f64,
    delta: f64,
    rho_max: f64,
    cfg: &FlowConfig,
    n_paths: usize,
    seed0: u64,
    iters: usize,
) -> Result<f64, ConleyError> {
    let sampling = DeviationSampling::default();
    let ok = |rho: f64| -> Result<bool, ConleyError> {
        let s = spec.with_rho(rho).map_err(|e| ConleyError::Invalid(e.to_string()))?;
        Ok(noise_deviation(&s, f0, block, horizon, cfg, n_paths, seed0, &sampling)? < delta / 3.0)
    };
    if ok(rho_max)? {
        return Ok(rho_max);
    }
    let (mut lo, mut hi) = (0.0, rho_max);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxgrid::Grid;
    use crate::conley::BlockParams;
    use crate::dynamics::{flow_steps, SkewState};
    use crate::fieldlang::parse;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn cfg() -> FlowConfig {
        FlowConfig::new(1e-2, 1e6).unwrap()
    }

    fn spec(rho: f64, kind: NoiseKind) -> NoiseSpec {
        NoiseSpec::parse(kind, rho, 0.05, 1, "u1", 1).unwrap()
    }

    fn linear_block() -> (FieldAst, StableBlock) {
        let g = Arc::new(Grid::new(vec![-1.25], vec![1.25], vec![320]).unwrap());
        let f = parse("-x1", 1).unwrap();
        let block = BoxSet::from_centers(g, |x| x[0].abs() <= 1.0);
        let b = StableBlock::from_explicit(block, &f, &BlockParams::default(), &cfg()).unwrap();
        (f, b)
    }

    #[test]
    fn paths_are_reproducible_and_bounded() {
        for kind in [NoiseKind::PiecewiseConstant, NoiseKind::Smoothed] {
            let s = spec(0.1, kind);
            let a = sample_path(&s, 7, 12.0);
            let b = sample_path(&s, 7, 12.0);
            let c = sample_path(&s, 8, 12.0);
            // a shorter window agrees cell by cell
            let short = sample_path(&s, 7, 3.0);
            let mut sup: f64 = 0.0;
            for k in 0..10_000 {
                let t = -12.0 + 24.0 * k as f64 / 10_000.0;
                let v = a.value(t);
                assert_eq!(v, b.value(t));
                assert_eq!(v, short.value(t));
                assert_ne!(v, c.value(t));
                sup = sup.max(v[0].abs());
            }
            assert!(sup <= 0.1 && sup > 0.09);
        }
        let z = sample_path(&spec(0.0, NoiseKind::Smoothed), 3, 5.0);
        assert!((0..100).all(|k| z.value(k as f64 * 0.1 - 5.0) == vec![0.0]));
    }

    #[test]
    fn shift_is_the_base_flow() {
        let p = sample_path(&spec(0.1, NoiseKind::PiecewiseConstant), 1, 5.0);
        let q = p.shifted(3);
        for k in 0..200 {
            let t = -4.0 + k as f64 * 0.037;
            assert_eq!(q.value(t), p.value(t + 3.0 * 0.05));
        }
    }

    #[test]
    fn zero_noise_reduces_to_f0() {
        let f = parse("-x1", 1).unwrap();
        let p = sample_path(&spec(0.0, NoiseKind::PiecewiseConstant), 1, 5.0);
        let noisy = NoisyFlow::new(&f, &p);
        let plain = AutonomousFlow::new(&f).unwrap();
        let x0 = SkewState::new(-2.0, vec![0.7]);
        let a = flow_steps(&noisy, &x0, 300, &cfg()).unwrap();
        let b = flow_steps(&plain, &x0, 300, &cfg()).unwrap();
        assert_eq!(a.endpoint.x, b.endpoint.x);
    }

    #[test]
    fn cocycle_on_the_mesh() {
        let f = parse("x1 - x1^3", 1).unwrap();
        let p = sample_path(&spec(0.2, NoiseKind::PiecewiseConstant), 11, 10.0);
        let noisy = NoisyFlow::new(&f, &p);
        let x0 = SkewState::new(-3.0, vec![0.4]);
        for (a, b) in [(100, 250), (5, 7), (333, 1)] {
            let once = flow_steps(&noisy, &x0, a + b, &cfg()).unwrap();
            let mid = flow_steps(&noisy, &x0, a, &cfg()).unwrap();
            let twice = flow_steps(&noisy, &mid.endpoint, b, &cfg()).unwrap();
            assert_eq!(once.endpoint.x, twice.endpoint.x);
        }
    }

    #[test]
    fn d_without_noise_is_the_attractor() {
        let (f, b) = linear_block();
        let p = sample_path(&spec(0.0, NoiseKind::PiecewiseConstant), 1, 6.0);
        let d = pullback_slice_d(&p, &f, &b, 5.0, 0.0, &cfg(), &RdsOptions::default()).unwrap();
        let e5 = (-5.0f64).exp();
        assert!(!d.is_empty() && d.len() <= 2, "{d:?}");
        let g = d.grid();
        assert!(d.iter().all(|k| g.center(k)[0].abs() <= e5 + g.widths()[0]));
    }

    #[test]
    fn d_is_bounded_by_the_noise() {
        let (f, b) = linear_block();
        let s = spec(0.1, NoiseKind::PiecewiseConstant);
        let slack = 2.0 * b.block.grid().widths()[0];
        for seed in 0..10 {
            let p = sample_path(&s, seed, 11.0);
            let d = pullback_slice_d(&p, &f, &b, 10.0, 0.0, &cfg(), &RdsOptions::default()).unwrap();
            assert!(!d.is_empty());
            let g = d.grid();
            assert!(d.iter().all(|k| g.center(k)[0].abs() <= 0.1 + slack));
        }
    }

    #[test]
    fn d_shrinks_with_the_horizon() {
        let (f, b) = linear_block();
        let p = sample_path(&spec(0.1, NoiseKind::Smoothed), 4, 12.0);
        let o = RdsOptions::default();
        let mut last = b.block.clone();
        for t in [2.0, 5.0, 10.0] {
            let d = pullback_slice_d(&p, &f, &b, t, 0.0, &cfg(), &o).unwrap();
            assert!(d.is_subset(&last), "T = {t}");
            last = d;
        }
    }

    #[test]
    fn d_is_shift_equivariant() {
        let (f, b) = linear_block();
        let p = sample_path(&spec(0.1, NoiseKind::PiecewiseConstant), 9, 12.0);
        let o = RdsOptions::default();
        let q = p.shifted(1);
        let at_shift = pullback_slice_d(&p, &f, &b, 5.0, 0.05, &cfg(), &o).unwrap();
        let shifted = pullback_slice_d(&q, &f, &b, 5.0, 0.0, &cfg(), &o).unwrap();
        assert_eq!(at_shift, shifted);
    }

    #[test]
    fn persistence_of_linear_attractor() {
        let (f, b) = linear_block();
        let o = RdsOptions::default();
        let diag = b.block.grid().diagonal();
        let r = persistence_stats(&spec(0.0, NoiseKind::PiecewiseConstant), &f, &b, 5.0, &cfg(), 4, 0, &o).unwrap();
        assert_eq!(r.fraction_nonempty, 1.0);
        assert!(r.max_semidist.unwrap() <= diag);
        let r = persistence_stats(
            &spec(0.1, NoiseKind::PiecewiseConstant),
            &f,
            &b,
            10.0,
            &cfg(),
            10,
            100,
            &o,
        )
        .unwrap();
        assert_eq!(r.fraction_nonempty, 1.0);
        assert_eq!(r.fraction_contained, 1.0);
        assert!(r.max_semidist.unwrap() <= 0.1 + 2.0 * b.block.grid().widths()[0]);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.lines().nth(1).unwrap().starts_with("100,true,true,"));
    }

    #[test]
    fn rho_bisection() {
        let (f, b) = linear_block();
        let s = spec(0.1, NoiseKind::PiecewiseConstant);
        let delta = 0.2;
        let rho = admissible_rho(&s, &f, &b, 1.0, delta, 1.0, &cfg(), 3, 0, 12).unwrap();
        assert!(rho > 0.0 && rho < 1.0);
        let dev = |r: f64| {
            noise_deviation(
                &s.with_rho(r).unwrap(),
                &f,
                &b,
                1.0,
                &cfg(),
                3,
                0,
                &DeviationSampling::default(),
            )
            .unwrap()
        };
        assert!(dev(rho) < delta / 3.0);
        // deviation is linear in rho for an additive coupling of a linear field
        assert!((dev(0.1) / dev(0.05) - 2.0).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn forcing_never_exceeds_rho(seed in any::<u64>(), rho in 0.0f64..5.0, t in -50.0f64..50.0, smooth in any::<bool>()) {
            let kind = if smooth { NoiseKind::Smoothed } else { NoiseKind::PiecewiseConstant };
            let s = NoiseSpec::parse(kind, rho, 0.05, 3, "u1+u2+u3", 1).unwrap();
            let p = sample_path(&s, seed, 10.0);
            prop_assert!(p.value(t).iter().all(|v| v.abs() <= rho));
        }
    }
}
