//! Non-autonomous perturbations `f_ε(t, x)` of an autonomous field `f0`
//! and the quantities that decide whether a stable block survives them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::boxgrid::BoxSet;
use crate::conley::{
    compute_delta, compute_gamma_t, compute_gt, pullback_slices, ConleyError, SliceFamily, SliceOptions, StableBlock,
};
use crate::dynamics::{AutonomousFlow, Dynamics, FlowConfig, SkewFlow, StepScratch};
use crate::fieldlang::{parse, parse_with_params, EvalErrorKind, FieldAst, ParseError};
use crate::par;

/// Name of the amplitude parameter in perturbation templates.
pub const EPS: &str = "eps";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerturbError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("template does not use the amplitude parameter `eps`")]
    NoAmplitude,
    #[error("template with eps = 0 differs from f0 at t = {t}, x = {x:?}")]
    Inconsistent { t: f64, x: Vec<f64> },
    #[error("eps values must be positive and strictly decreasing")]
    BadEpsValues,
    #[error("template and f0 have different dimensions")]
    DimensionMismatch,
    #[error("invalid base-time sampling: {0}")]
    Sampling(String),
    #[error(transparent)]
    Conley(#[from] ConleyError),
}

/// How base times of skew objects are probed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseSampling {
    /// `count` equally spaced times over one forcing period.
    Periodic { period: f64, count: usize },
    /// `count` low-discrepancy times over `[0, t_max]`.
    QuasiRandom { t_max: f64, count: usize },
}

impl BaseSampling {
    pub fn periodic(period: f64) -> Self {
        BaseSampling::Periodic { period, count: 8 }
    }

    pub fn quasi_random(t_max: f64) -> Self {
        BaseSampling::QuasiRandom { t_max, count: 16 }
    }

    /// Base times, rounded to the step mesh so skew sets at equal times are
    /// computed on identical meshes.
    pub fn times(&self, cfg: &FlowConfig) -> Vec<f64> {
        match *self {
            BaseSampling::Periodic { period, count } => (0..count)
                .map(|k| cfg.round_time(period * k as f64 / count as f64))
                .collect(),
            BaseSampling::QuasiRandom { t_max, count } => {
                // additive recurrence with the golden ratio
                let phi = 0.5 * (5f64.sqrt() - 1.0);
                (1..=count)
                    .map(|k| cfg.round_time(t_max * (k as f64 * phi).fract()))
                    .collect()
            }
        }
    }

    fn validate(&self) -> Result<(), PerturbError> {
        let (len, count) = match *self {
            BaseSampling::Periodic { period, count } => (period, count),
            BaseSampling::QuasiRandom { t_max, count } => (t_max, count),
        };
        if !(len > 0.0 && len.is_finite()) || count == 0 {
            return Err(PerturbError::Sampling(format!("length {len}, count {count}")));
        }
        Ok(())
    }
}

/// A family `f_ε` of non-autonomous fields with `f_0 = f0`.
#[derive(Debug, Clone)]
pub struct PerturbationFamily {
    f0: FieldAst,
    template: FieldAst,
    eps_values: Vec<f64>,
    sampling: BaseSampling,
}

impl PerturbationFamily {
    pub fn new(
        f0: FieldAst,
        template: FieldAst,
        eps_values: Vec<f64>,
        sampling: BaseSampling,
    ) -> Result<Self, PerturbError> {
        if f0.dim() != template.dim() {
            return Err(PerturbError::DimensionMismatch);
        }
        let uses_eps = template.params() == [EPS] && template.exprs().iter().any(|e| e.uses_param(0));
        if !uses_eps {
            return Err(PerturbError::NoAmplitude);
        }
        if eps_values.iter().any(|e| !(*e > 0.0 && e.is_finite())) || eps_values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(PerturbError::BadEpsValues);
        }
        sampling.validate()?;
        AutonomousFlow::new(&f0).map_err(ConleyError::from)?;
        let fam = PerturbationFamily {
            f0,
            template,
            eps_values,
            sampling,
        };
        fam.check_consistency()?;
        Ok(fam)
    }

    /// Parse `f0` and a template over the parameter `eps`.
    pub fn parse(
        f0: &str,
        template: &str,
        dim: usize,
        eps_values: Vec<f64>,
        sampling: BaseSampling,
    ) -> Result<Self, PerturbError> {
        let f0 = parse(f0, dim)?;
        let template = parse_with_params(template, dim, &[EPS])?;
        Self::new(f0, template, eps_values, sampling)
    }

    fn check_consistency(&self) -> Result<(), PerturbError> {
        let at_zero = self.field(0.0);
        let d = self.f0.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..100 {
            let t = rng.random_range(0.0..20.0 * std::f64::consts::PI);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let same = match (self.f0.eval(t, &x), at_zero.eval(t, &x)) {
                (Ok(a), Ok(b)) => a.iter().zip(&b).all(|(u, v)| (u - v).abs() <= 1e-12 * (1.0 + u.abs())),
                (Err(_), Err(_)) => true,
                _ => false,
            };
            if !same {
                return Err(PerturbError::Inconsistent { t, x });
            }
        }
        Ok(())
    }

    pub fn f0(&self) -> &FieldAst {
        &self.f0
    }

    pub fn eps_values(&self) -> &[f64] {
        &self.eps_values
    }

    pub fn sampling(&self) -> &BaseSampling {
        &self.sampling
    }

    /// The member `f_ε`.
    pub fn field(&self, eps: f64) -> FieldAst {
        self.template.bind(EPS, eps).expect("template has eps")
    }
}

/// `max ‖f_ε(t, x) − f0(x)‖₂` over box centres of `region` and `t_samples`
/// equally spaced times in `[0, 20π]`.
pub fn field_sup_gap(fam: &PerturbationFamily, eps: f64, region: &BoxSet, t_samples: usize) -> f64 {
    let fe = fam.field(eps);
    let grid = region.grid();
    let span = 20.0 * std::f64::consts::PI;
    let n = t_samples.max(1);
    let mut best: f64 = 0.0;
    let mut c = vec![0.0; grid.dim()];
    for b in region.iter() {
        grid.center_into(b, &mut c);
        let Ok(base) = fam.f0.eval(0.0, &c) else { continue };
        for k in 0..n {
            let t = if n == 1 { 0.0 } else { span * k as f64 / (n - 1) as f64 };
            if let Ok(v) = fe.eval(t, &c) {
                let gap = v.iter().zip(&base).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                best = best.max(gap);
            }
        }
    }
    best
}

/// Sampling of `(s, x)` pairs for deviation measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationSampling {
    /// At most this many block box centres, evenly strided.
    pub max_points: usize,
}

impl Default for DeviationSampling {
    fn default() -> Self {
        DeviationSampling { max_points: 64 }
    }
}

pub(crate) fn strided(set: &BoxSet, max_points: usize) -> Vec<usize> {
    let all = set.indices();
    let stride = all.len().div_ceil(max_points.max(1)).max(1);
    let mut picked: Vec<usize> = all.iter().copied().step_by(stride).collect();
    // the extreme boxes carry the largest deviations for linear-like fields
    if let Some(&last) = all.last() {
        if picked.last() != Some(&last) {
            picked.push(last);
        }
    }
    picked
}

/// `max_{t ∈ [t0, t1]} ‖P₂((s, x) π_ε t) − x π₀ t‖` on a shared step mesh;
/// infinite if either orbit blows up.
pub fn orbit_deviation(
    fe: &FieldAst,
    f0: &FieldAst,
    s: f64,
    x: &[f64],
    t0: f64,
    t1: f64,
    cfg: &FlowConfig,
) -> Result<f64, ConleyError> {
    deviation_from(&SkewFlow::new(fe), f0, s, x, t0, t1, cfg)
}

/// [`orbit_deviation`] for arbitrary perturbed dynamics.
pub fn deviation_from<D: Dynamics + ?Sized>(
    pert: &D,
    f0: &FieldAst,
    s: f64,
    x: &[f64],
    t0: f64,
    t1: f64,
    cfg: &FlowConfig,
) -> Result<f64, ConleyError> {
    let base = AutonomousFlow::new(f0)?;
    let mut ws = StepScratch::new(x.len());
    let mut best: f64 = 0.0;
    for (horizon, h) in [(-t0.min(0.0), -cfg.step), (t1.max(0.0), cfg.step)] {
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        for k in 0..cfg.steps_for(horizon) {
            let stepped = pert
                .step(s + k as f64 * h, h, &mut a, &mut ws)
                .and_then(|_| base.step(k as f64 * h, h, &mut b, &mut ws));
            match stepped {
                Err(e) if e.kind == EvalErrorKind::NonFinite => return Ok(f64::INFINITY),
                other => other?,
            }
            let ok = |v: &[f64]| v.iter().all(|c| c.abs() <= cfg.blowup_bound);
            if !ok(&a) || !ok(&b) {
                return Ok(f64::INFINITY);
            }
            let d = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            best = best.max(d);
        }
    }
    Ok(best)
}

/// Sup deviation over `[-T, T]` between perturbed and unperturbed orbits,
/// over block centres and the family's base times.
pub fn trajectory_deviation(
    fam: &PerturbationFamily,
    eps: f64,
    block: &StableBlock,
    horizon: f64,
    cfg: &FlowConfig,
    sampling: &DeviationSampling,
) -> Result<f64, ConleyError> {
    let fe = fam.field(eps);
    let grid = block.block.grid().clone();
    let points = strided(&block.block, sampling.max_points);
    let times = fam.sampling.times(cfg);
    let devs = par::map(&points, |b| {
        let x = grid.center(b);
        times
            .iter()
            .map(|&s| orbit_deviation(&fe, &fam.f0, s, &x, -horizon, horizon, cfg))
            .try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
    });
    devs.into_iter().try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerdictOptions {
    pub samples: usize,
    pub deviation: DeviationSampling,
    pub slices: SliceOptions,
}

impl Default for VerdictOptions {
    fn default() -> Self {
        VerdictOptions {
            samples: 2,
            deviation: DeviationSampling::default(),
            slices: SliceOptions::default(),
        }
    }
}

/// Empirical check of the finite-horizon persistence statement: if
/// orbits stay within `δ/3` of the unperturbed ones, no point of `G^T`
/// exits and the pullback slices are nonempty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub struct TheoremFiniteVerdict {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub eps: f64,
    pub delta: f64,
    pub deviation: f64,
    pub hypothesis_met: bool,
    pub gamma_empty: bool,
    pub slices_nonempty: bool,
    pub margin_eps: f64,
}

impl TheoremFiniteVerdict {
    pub fn conclusion_holds(&self) -> bool {
        self.gamma_empty && self.slices_nonempty
    }

    /// The implication `hypothesis ⟹ conclusion`.
    pub fn consistent(&self) -> bool {
        !self.hypothesis_met || self.conclusion_holds()
    }
}

#[derive(Debug, Clone)]
pub struct FiniteCheck {
    pub verdict: TheoremFiniteVerdict,
    pub slices: SliceFamily,
}

/// `δ` for the block at horizon `horizon` under `f0`.
pub fn block_delta(
    fam: &PerturbationFamily,
    block: &StableBlock,
    horizon: f64,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<f64, ConleyError> {
    let d = AutonomousFlow::new(&fam.f0)?;
    compute_delta(&block.block, &d, horizon, cfg, samples)
}

pub fn check_theorem_finite(
    fam: &PerturbationFamily,
    eps: f64,
    block: &StableBlock,
    horizon: f64,
    cfg: &FlowConfig,
    opts: &VerdictOptions,
) -> Result<FiniteCheck, ConleyError> {
    let delta = block_delta(fam, block, horizon, cfg, opts.samples)?;
    check_with_delta(fam, eps, block, horizon, delta, cfg, opts)
}

/// [`check_theorem_finite`] with a precomputed `δ`.
pub fn check_with_delta(
    fam: &PerturbationFamily,
    eps: f64,
    block: &StableBlock,
    horizon: f64,
    delta: f64,
    cfg: &FlowConfig,
    opts: &VerdictOptions,
) -> Result<FiniteCheck, ConleyError> {
    let deviation = trajectory_deviation(fam, eps, block, horizon, cfg, &opts.deviation)?;
    let fe = fam.field(eps);
    let skew = SkewFlow::new(&fe);
    let times = fam.sampling.times(cfg);
    let mut gamma_empty = true;
    for &s in &times {
        if !compute_gamma_t(&block.block, &skew, s, horizon, cfg, opts.samples)?.is_empty() {
            gamma_empty = false;
            break;
        }
    }
    let slice_opts = SliceOptions { horizon, ..opts.slices };
    let slices = pullback_slices(&fe, block, &times, &slice_opts, cfg)?;
    let slices_nonempty = slices.all_nonempty();
    let mut margin_eps = f64::INFINITY;
    for (&t, s) in times.iter().zip(&slices.slices) {
        if s.is_empty() {
            margin_eps = 0.0;
            break;
        }
        let g = compute_gt(&block.block, &skew, t, horizon, cfg, opts.samples)?;
        margin_eps = margin_eps.min(s.dilation_margin(&g).unwrap_or(0.0));
    }
    let verdict = TheoremFiniteVerdict {
        horizon,
        eps,
        delta,
        deviation,
        hypothesis_met: deviation < delta / 3.0,
        gamma_empty,
        slices_nonempty,
        margin_eps,
    };
    Ok(FiniteCheck { verdict, slices })
}

/// Largest `eps` in `(0, eps_max]` (to relative precision `2^-iters`) whose
/// deviation stays below `δ/3`, assuming deviation grows with `eps`.
/// Returns 0 when even tiny amplitudes fail.
#[allow(clippy::too_many_arguments)]
pub fn admissible_eps(
    fam: &PerturbationFamily,
    block: &StableBlock,
    horizon: f64,
    delta: f64,
    eps_max: f64,
    cfg: &FlowConfig,
    sampling: &DeviationSampling,
    iters: usize,
) -> Result<f64, ConleyError> {
    let ok = |e: f64| -> Result<bool, ConleyError> {
        Ok(trajectory_deviation(fam, e, block, horizon, cfg, sampling)? < delta / 3.0)
    };
    if ok(eps_max)? {
        return Ok(eps_max);
    }
    let (mut lo, mut hi) = (0.0, eps_max);
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub eps: f64,
    /// `None` when some slice degenerated.
    pub semidist: Option<f64>,
}

/// Semidistance from the union of pullback slices over the base times to
/// the unperturbed attractor, for each amplitude of the family.
pub fn semicontinuity_curve(
    fam: &PerturbationFamily,
    block: &StableBlock,
    cfg: &FlowConfig,
    opts: &SliceOptions,
) -> Result<Vec<CurvePoint>, ConleyError> {
    let times = fam.sampling.times(cfg);
    fam.eps_values
        .iter()
        .map(|&eps| {
            let fam_slices = pullback_slices(&fam.field(eps), block, &times, opts, cfg)?;
            let semidist = if fam_slices.all_nonempty() {
                let u = fam_slices.union().expect("at least one base time");
                Some(u.semidist(&block.attractor).expect("both nonempty"))
            } else {
                None
            };
            Ok(CurvePoint { eps, semidist })
        })
        .collect()
}

/// Whether a curve is nonincreasing as `eps` decreases, up to `slack`.
pub fn curve_monotone(curve: &[CurvePoint], slack: f64) -> bool {
    curve.windows(2).all(|w| match (w[0].semidist, w[1].semidist) {
        (Some(a), Some(b)) => b <= a + slack,
        (None, _) => true,
        (Some(_), None) => false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SsingReport {
    pub eps: f64,
    pub t_max: f64,
    /// `(shift, max deviation)` per shift.
    pub per_shift: Vec<(f64, f64)>,
    pub max: f64,
    pub spread: f64,
}

/// Forward deviation `max_{0 <= t <= t_max} ‖P₂((s, x) π_ε t) − x π₀ t‖`,
/// maximised over `n_points` random block points, for each base shift `s`.
#[allow(clippy::too_many_arguments)]
pub fn ssing_diagnostic(
    fam: &PerturbationFamily,
    eps: f64,
    block: &StableBlock,
    cfg: &FlowConfig,
    shifts: &[f64],
    t_max: f64,
    n_points: usize,
    seed: u64,
) -> Result<SsingReport, ConleyError> {
    let fe = fam.field(eps);
    let grid = block.block.grid().clone();
    let members = block.block.indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..n_points.max(1))
        .map(|_| {
            let b = members[rng.random_range(0..members.len())];
            let (lo, hi) = grid.bounds(b);
            lo.iter().zip(&hi).map(|(a, c)| rng.random_range(*a..*c)).collect()
        })
        .collect();
    let order: Vec<usize> = (0..shifts.len()).collect();
    let per_shift = par::map(&order, |i| {
        points
            .iter()
            .map(|x| orbit_deviation(&fe, &fam.f0, shifts[i], x, 0.0, t_max, cfg))
            .try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
            .map(|d| (shifts[i], d))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let max = per_shift.iter().map(|p| p.1).fold(0.0, f64::max);
    let min = per_shift.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(SsingReport {
        eps,
        t_max,
        per_shift,
        max,
        spread: if min.is_finite() { max - min } else { 0.0 },
    })
}
