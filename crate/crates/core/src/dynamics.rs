//! Fixed-step numerical flows.
//!
//! Everything runs on a uniform time mesh of spacing `FlowConfig::step`:
//! requested durations are rounded to the nearest multiple of the step, and
//! backward time is integrated with a negative step. Because the step
//! sequence is fixed, flowing for `n + m` steps is bitwise identical to
//! flowing `n` steps and then `m` more for autonomous systems.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fieldlang::{EvalError, FieldAst};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("field depends on t but an autonomous flow was requested")]
    NotAutonomous,
    #[error("field has dimension {field} but state has dimension {state}")]
    DimensionMismatch { field: usize, state: usize },
    #[error("invalid flow configuration: {0}")]
    Config(String),
}

/// Integrator parameters shared by every set computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Step size of the classical fourth-order Runge-Kutta scheme.
    pub step: f64,
    /// A trajectory with `|x|_inf > blowup_bound` is declared escaped.
    pub blowup_bound: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            step: 1e-3,
            blowup_bound: 1e6,
        }
    }
}

impl FlowConfig {
    pub fn new(step: f64, blowup_bound: f64) -> Result<Self, FlowError> {
        let cfg = FlowConfig { step, blowup_bound };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(FlowError::Config(format!("step must be positive, got {}", self.step)));
        }
        if !(self.blowup_bound > 0.0) {
            return Err(FlowError::Config(format!(
                "blowup_bound must be positive, got {}",
                self.blowup_bound
            )));
        }
        Ok(())
    }

    /// Signed number of mesh steps closest to `t`.
    pub fn steps_for(&self, t: f64) -> i64 {
        (t / self.step).round() as i64
    }

    /// `t` rounded to the step mesh.
    pub fn round_time(&self, t: f64) -> f64 {
        self.steps_for(t) as f64 * self.step
    }

    /// Whether `t` already lies on the mesh (up to rounding noise).
    pub fn is_step_multiple(&self, t: f64) -> bool {
        (t - self.round_time(t)).abs() <= 1e-9 * self.step.max(t.abs())
    }
}

/// A point of the extended phase space: base time `s` and state `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewState {
    pub s: f64,
    pub x: Vec<f64>,
}

impl SkewState {
    pub fn new(s: f64, x: Vec<f64>) -> Self {
        SkewState { s, x }
    }

    /// Projection onto the state component.
    pub fn p2(&self) -> &[f64] {
        &self.x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    /// Last computed state; the escape point when `escaped` is set.
    pub endpoint: SkewState,
    pub escaped: bool,
    /// Elapsed (unsigned) time at which the trajectory left the bound.
    pub escape_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// States on the mesh, in increasing base time.
    pub states: Vec<SkewState>,
    pub escaped: bool,
    pub escape_time: Option<f64>,
}

/// Scratch buffers for one integrator step.
#[derive(Debug, Clone)]
pub struct StepScratch {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl StepScratch {
    pub fn new(dim: usize) -> Self {
        StepScratch {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
        }
    }
}

/// One classical RK4 step of size `h` (negative for backward time) for
/// `x' = rhs(t, x)` starting at time `t`.
#[inline]
pub fn rk4_step<F>(rhs: F, t: f64, h: f64, x: &mut [f64], ws: &mut StepScratch) -> Result<(), EvalError>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<(), EvalError>,
{
    let [k1, k2, k3, k4] = &mut ws.k;
    let tmp = &mut ws.tmp;
    let half = 0.5 * h;
    rhs(t, x, k1)?;
    for i in 0..x.len() {
        tmp[i] = x[i] + half * k1[i];
    }
    rhs(t + half, tmp, k2)?;
    for i in 0..x.len() {
        tmp[i] = x[i] + half * k2[i];
    }
    rhs(t + half, tmp, k3)?;
    for i in 0..x.len() {
        tmp[i] = x[i] + h * k3[i];
    }
    rhs(t + h, tmp, k4)?;
    let sixth = h / 6.0;
    for i in 0..x.len() {
        x[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

/// A system that can be advanced on the mesh from a given base time.
///
/// Implementations define the skew-product flow `(s, x) -> (s + h, x')`;
/// the base coordinate always advances additively and is tracked by the
/// callers, not by the implementation.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;

    /// Advance `x` by one step of size `h` (possibly negative) starting at
    /// base time `s`.
    fn step(&self, s: f64, h: f64, x: &mut [f64], ws: &mut StepScratch) -> Result<(), EvalError>;
}

/// The flow of an autonomous field; the base time is ignored.
#[derive(Debug, Clone, Copy)]
pub struct AutonomousFlow<'a> {
    field: &'a FieldAst,
}

impl<'a> AutonomousFlow<'a> {
    pub fn new(field: &'a FieldAst) -> Result<Self, FlowError> {
        if field.uses_time() {
            return Err(FlowError::NotAutonomous);
        }
        Ok(AutonomousFlow { field })
    }

    pub fn field(&self) -> &'a FieldAst {
        self.field
    }
}

impl Dynamics for AutonomousFlow<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    #[inline]
    fn step(&self, s: f64, h: f64, x: &mut [f64], ws: &mut StepScratch) -> Result<(), EvalError> {
        rk4_step(|t, y, out| self.field.eval_into(t, y, out), s, h, x, ws)
    }
}

/// Skew-product flow of a possibly time-dependent field: the state solves
/// `x' = f(s + u, x)` while the base advances as `s + u`.
#[derive(Debug, Clone, Copy)]
pub struct SkewFlow<'a> {
    field: &'a FieldAst,
}

impl<'a> SkewFlow<'a> {
    pub fn new(field: &'a FieldAst) -> Self {
        SkewFlow { field }
    }
}

impl Dynamics for SkewFlow<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    #[inline]
    fn step(&self, s: f64, h: f64, x: &mut [f64], ws: &mut StepScratch) -> Result<(), EvalError> {
        rk4_step(|t, y, out| self.field.eval_into(t, y, out), s, h, x, ws)
    }
}

#[inline]
fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Base time after `k` signed steps from `s`.
#[inline]
pub fn mesh_time(s: f64, k: i64, h: f64) -> f64 {
    s + k as f64 * h
}

/// Flow `state` for `steps` signed mesh steps.
///
/// The endpoint base time is `s + steps * h`, computed in one rounding.
pub fn flow_steps<D: Dynamics + ?Sized>(
    dynamics: &D,
    state: &SkewState,
    steps: i64,
    cfg: &FlowConfig,
) -> Result<FlowResult, FlowError> {
    if state.x.len() != dynamics.dim() {
        return Err(FlowError::DimensionMismatch {
            field: dynamics.dim(),
            state: state.x.len(),
        });
    }
    let h = if steps >= 0 { cfg.step } else { -cfg.step };
    let n = steps.unsigned_abs() as i64;
    let mut x = state.x.clone();
    let mut ws = StepScratch::new(x.len());
    for k in 0..n {
        let s = state.s + (k as f64) * h;
        dynamics.step(s, h, &mut x, &mut ws)?;
        if !(sup_norm(&x) <= cfg.blowup_bound) {
            return Ok(FlowResult {
                endpoint: SkewState::new(state.s + ((k + 1) as f64) * h, x),
                escaped: true,
                escape_time: Some((k + 1) as f64 * cfg.step),
            });
        }
    }
    Ok(FlowResult {
        endpoint: SkewState::new(state.s + (n as f64) * h, x),
        escaped: false,
        escape_time: None,
    })
}

/// Flow for time `t` (rounded to the mesh) under any [`Dynamics`].
pub fn flow<D: Dynamics + ?Sized>(
    dynamics: &D,
    state: &SkewState,
    t: f64,
    cfg: &FlowConfig,
) -> Result<FlowResult, FlowError> {
    flow_steps(dynamics, state, cfg.steps_for(t), cfg)
}

/// `x pi_0 t` for an autonomous field.
pub fn flow_auto(f0: &FieldAst, x: &[f64], t: f64, cfg: &FlowConfig) -> Result<FlowResult, FlowError> {
    let dynamics = AutonomousFlow::new(f0)?;
    flow(&dynamics, &SkewState::new(0.0, x.to_vec()), t, cfg)
}

/// `(s, x) pi_n t` for a possibly non-autonomous field.
pub fn flow_skew(field: &FieldAst, state: &SkewState, t: f64, cfg: &FlowConfig) -> Result<FlowResult, FlowError> {
    flow(&SkewFlow::new(field), state, t, cfg)
}

/// All mesh states between relative times `t0 <= 0 <= t1`.
///
/// On escape in either direction the sequence is truncated at the escape
/// point and flagged; `escape_time` then holds the first escape found.
pub fn trajectory<D: Dynamics + ?Sized>(
    dynamics: &D,
    state: &SkewState,
    t0: f64,
    t1: f64,
    cfg: &FlowConfig,
) -> Result<Trajectory, FlowError> {
    if state.x.len() != dynamics.dim() {
        return Err(FlowError::DimensionMismatch {
            field: dynamics.dim(),
            state: state.x.len(),
        });
    }
    let back = cfg.steps_for(t0.min(0.0)).unsigned_abs();
    let fwd = cfg.steps_for(t1.max(0.0)).unsigned_abs();
    let h = cfg.step;
    let mut ws = StepScratch::new(state.x.len());
    let mut escape_time = None;

    let mut past = Vec::with_capacity(back as usize);
    let mut x = state.x.clone();
    for k in 0..back as i64 {
        dynamics.step(mesh_time(state.s, -k, h), -h, &mut x, &mut ws)?;
        past.push(SkewState::new(mesh_time(state.s, -(k + 1), h), x.clone()));
        if !(sup_norm(&x) <= cfg.blowup_bound) {
            escape_time = Some((k + 1) as f64 * h);
            break;
        }
    }
    past.reverse();
    let mut states = past;
    states.push(state.clone());
    if escape_time.is_none() {
        let mut x = state.x.clone();
        for k in 0..fwd as i64 {
            dynamics.step(mesh_time(state.s, k, h), h, &mut x, &mut ws)?;
            states.push(SkewState::new(mesh_time(state.s, k + 1, h), x.clone()));
            if !(sup_norm(&x) <= cfg.blowup_bound) {
                escape_time = Some((k + 1) as f64 * h);
                break;
            }
        }
    }
    Ok(Trajectory {
        states,
        escaped: escape_time.is_some(),
        escape_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldlang::parse;
    use std::f64::consts::PI;

    fn cfg(step: f64) -> FlowConfig {
        FlowConfig::new(step, 1e6).unwrap()
    }

    #[test]
    fn linear_decay_matches_closed_form() {
        let f = parse("-x1", 1).unwrap();
        let r = flow_auto(&f, &[1.0], 1.0, &cfg(1e-3)).unwrap();
        assert!(!r.escaped);
        assert!((r.endpoint.x[0] - (-1.0f64).exp()).abs() < 1e-6);
        assert_eq!(r.endpoint.s, 1.0);
    }

    #[test]
    fn zero_time_is_identity() {
        let f = parse("x2*x1 - 3; sin(x1)", 2).unwrap();
        let r = flow_auto(&f, &[0.3, -1.7], 0.0, &cfg(1e-3)).unwrap();
        assert_eq!(r.endpoint.x, vec![0.3, -1.7]);
        let g = parse("-x1 + 0.2*sin(t)", 1).unwrap();
        let r = flow_skew(&g, &SkewState::new(0.0, vec![0.0]), 0.0, &cfg(1e-3)).unwrap();
        assert_eq!(r.endpoint, SkewState::new(0.0, vec![0.0]));
    }

    #[test]
    fn backward_flow_of_growth() {
        let f = parse("x1", 1).unwrap();
        let r = flow_auto(&f, &[1.0], -1.0, &cfg(1e-3)).unwrap();
        assert!((r.endpoint.x[0] - (-1.0f64).exp()).abs() < 1e-6);
        assert_eq!(r.endpoint.s, -1.0);
    }

    #[test]
    fn autonomous_flow_rejects_time() {
        let f = parse("t", 1).unwrap();
        assert_eq!(
            flow_auto(&f, &[0.0], 1.0, &cfg(0.1)).unwrap_err(),
            FlowError::NotAutonomous
        );
    }

    #[test]
    fn periodic_forced_solution_returns() {
        // x*(t) = 0.1 (sin t - cos t) solves x' = -x + 0.2 sin t
        let f = parse("-x1+0.2*sin(t)", 1).unwrap();
        let r = flow_skew(&f, &SkewState::new(0.0, vec![-0.1]), 2.0 * PI, &cfg(1e-3)).unwrap();
        assert!((r.endpoint.x[0] + 0.1).abs() < 1e-4);
        assert!((r.endpoint.s - 2.0 * PI).abs() < 1e-3);
    }

    #[test]
    fn skew_reduces_to_autonomous_bitwise() {
        let f = parse("x1 - x1^3", 1).unwrap();
        let a = flow_auto(&f, &[0.2], 2.5, &cfg(1e-2)).unwrap();
        let b = flow_skew(&f, &SkewState::new(17.3, vec![0.2]), 2.5, &cfg(1e-2)).unwrap();
        assert_eq!(a.endpoint.x[0].to_bits(), b.endpoint.x[0].to_bits());
    }

    #[test]
    fn base_time_is_exact() {
        let f = parse("-x1+0.2*sin(t)", 1).unwrap();
        let c = cfg(0.25);
        for (s, t) in [(0.0, 1.0), (3.5, -2.0), (-7.25, 4.75)] {
            let r = flow_skew(&f, &SkewState::new(s, vec![0.1]), t, &c).unwrap();
            assert_eq!(r.endpoint.s, s + t);
        }
    }

    #[test]
    fn trajectory_cases() {
        let f = parse("-x1", 1).unwrap();
        let dynamics = AutonomousFlow::new(&f).unwrap();
        let c = cfg(1e-3);
        let st = SkewState::new(0.0, vec![1.0]);
        let single = trajectory(&dynamics, &st, 0.0, 0.0, &c).unwrap();
        assert_eq!(single.states, vec![st.clone()]);

        let tr = trajectory(&dynamics, &st, -1.0, 1.0, &c).unwrap();
        assert_eq!(tr.states.len(), 2001);
        assert!((tr.states[0].x[0] - 1f64.exp()).abs() < 1e-5);
        assert!((tr.states[2000].x[0] - (-1f64).exp()).abs() < 1e-6);
        assert!(tr.states.windows(2).all(|w| w[1].x[0] < w[0].x[0] && w[1].s > w[0].s));
        // endpoint agrees with flow
        let r = flow(&dynamics, &st, 1.0, &c).unwrap();
        assert_eq!(tr.states[2000].x, r.endpoint.x);
    }

    #[test]
    fn escape_is_detected() {
        let f = parse("x1", 1).unwrap();
        let dynamics = AutonomousFlow::new(&f).unwrap();
        let tr = trajectory(&dynamics, &SkewState::new(0.0, vec![1.0]), 0.0, 50.0, &cfg(1e-3)).unwrap();
        assert!(tr.escaped);
        let te = tr.escape_time.unwrap();
        assert!((te - 1e6f64.ln()).abs() < 2e-3, "{te}");
        assert!(te < 50.0);
        let r = flow_auto(&f, &[1.0], 50.0, &cfg(1e-3)).unwrap();
        assert!(r.escaped && (r.escape_time.unwrap() - te).abs() < 1e-12);
    }

    #[test]
    fn semigroup_is_exact_on_mesh() {
        let f = parse("x2; -sin(x1) - 0.1*x2", 2).unwrap();
        let dynamics = AutonomousFlow::new(&f).unwrap();
        let c = cfg(1e-3);
        let st = SkewState::new(0.0, vec![1.0, 0.5]);
        let whole = flow(&dynamics, &st, 1.5, &c).unwrap();
        let first = flow(&dynamics, &st, 0.6, &c).unwrap();
        let second = flow(&dynamics, &first.endpoint, 0.9, &c).unwrap();
        assert_eq!(whole.endpoint.x, second.endpoint.x);
    }

    #[test]
    fn semigroup_skew_within_tolerance() {
        let f = parse("-x1 + 0.3*cos(2*t)*x1 + sin(t)", 1).unwrap();
        let c = cfg(1e-3);
        let st = SkewState::new(0.4, vec![0.7]);
        let whole = flow_skew(&f, &st, 2.0, &c).unwrap();
        let a = flow_skew(&f, &st, 0.75, &c).unwrap();
        let b = flow_skew(&f, &a.endpoint, 1.25, &c).unwrap();
        assert!((whole.endpoint.x[0] - b.endpoint.x[0]).abs() <= 2e-9);
    }

    #[test]
    fn fourth_order_convergence() {
        let f = parse("-x1", 1).unwrap();
        let exact = (-2.0f64).exp();
        let err = |h: f64| (flow_auto(&f, &[1.0], 2.0, &cfg(h)).unwrap().endpoint.x[0] - exact).abs();
        let (e1, e2) = (err(0.1), err(0.05));
        let order = (e1 / e2).log2();
        assert!(e1 / e2 >= 8.0 && order >= 3.5, "order {order}");
    }
}
