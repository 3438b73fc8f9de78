//! Vector-field expressions.
//!
//! A field is written as `dim` expressions separated by `;`, one per state
//! component, over the variables `t` and `x1..xd`. Expressions may also
//! reference named parameters (for example an amplitude `eps` or forcing
//! symbols `u1..um`) when parsed with [`parse_with_params`]; such fields must
//! be evaluated with parameter values or bound with [`FieldAst::bind`].
//!
//! Parsing produces a tree ([`Expr`]) for printing and substitution, and a
//! flat postfix program per component that is what actually gets evaluated.

mod parser;
mod program;

use std::fmt;

use thiserror::Error;

pub use parser::{parse, parse_scalar, parse_with_params};
use program::Program;

/// Built-in unary functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tanh,
    Exp,
    Abs,
}

impl Func {
    pub(crate) fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Abs => "abs",
        }
    }

    #[inline]
    pub(crate) fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tanh => v.tanh(),
            Func::Exp => v.exp(),
            Func::Abs => v.abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Expression tree. State indices are zero-based (`x1` is `State(0)`).
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Time,
    State(usize),
    Param(usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn uses_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Num(_) | Expr::State(_) | Expr::Param(_) => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.uses_time(),
            Expr::Binary(_, a, b) => a.uses_time() || b.uses_time(),
        }
    }

    pub fn uses_param(&self, param: usize) -> bool {
        match self {
            Expr::Param(p) => *p == param,
            Expr::Num(_) | Expr::State(_) | Expr::Time => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.uses_param(param),
            Expr::Binary(_, a, b) => a.uses_param(param) || b.uses_param(param),
        }
    }

    fn substitute(&self, param: usize, value: f64) -> Expr {
        match self {
            Expr::Param(p) if *p == param => Expr::Num(value),
            Expr::Param(p) if *p > param => Expr::Param(p - 1),
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(param, value))),
            Expr::Call(f, e) => Expr::Call(*f, Box::new(e.substitute(param, value))),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.substitute(param, value)),
                Box::new(b.substitute(param, value)),
            ),
            other => other.clone(),
        }
    }
}

/// Parse failure, positioned at a character offset into the source text.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdent { pos: usize, name: String },
    #[error("variable `{name}` at position {pos} exceeds dimension {dim}")]
    IndexOutOfRange { pos: usize, name: String, dim: usize },
    #[error("expected {expected} expressions separated by `;`, found {found}")]
    WrongCount { expected: usize, found: usize },
}

impl ParseError {
    /// Character offset of the error, when there is one.
    pub fn position(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::UnknownIdent { pos, .. }
            | ParseError::IndexOutOfRange { pos, .. } => Some(*pos),
            ParseError::WrongCount { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    /// Component evaluated to NaN or an infinity.
    NonFinite,
    /// Negative base raised to a non-integer power.
    NegativeBase,
    /// A named parameter has no value.
    UnboundParameter,
    /// State vector length does not match the field dimension.
    DimensionMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("evaluation of component {component} failed: {kind:?}")]
pub struct EvalError {
    pub component: usize,
    pub kind: EvalErrorKind,
}

/// A parsed `dim`-dimensional vector field.
///
/// Immutable after construction; evaluation is pure, so one instance may be
/// shared by any number of threads.
#[derive(Clone, Debug)]
pub struct FieldAst {
    dim: usize,
    exprs: Vec<Expr>,
    params: Vec<String>,
    uses_time: bool,
    code: Vec<Program>,
}

impl FieldAst {
    pub(crate) fn from_exprs(dim: usize, exprs: Vec<Expr>, params: Vec<String>) -> FieldAst {
        debug_assert_eq!(exprs.len(), dim);
        let uses_time = exprs.iter().any(Expr::uses_time);
        let code = exprs.iter().map(Program::compile).collect();
        FieldAst {
            dim,
            exprs,
            params,
            uses_time,
            code,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub fn uses_time(&self) -> bool {
        self.uses_time
    }

    /// Names of free parameters, in declaration order.
    pub fn params(&self) -> &[String] {
        &self.params
    }

    /// Replace the parameter `name` by the constant `value`.
    ///
    /// Returns `None` if the field has no such parameter.
    pub fn bind(&self, name: &str, value: f64) -> Option<FieldAst> {
        let idx = self.params.iter().position(|p| p == name)?;
        let exprs = self.exprs.iter().map(|e| e.substitute(idx, value)).collect();
        let mut params = self.params.clone();
        params.remove(idx);
        Some(FieldAst::from_exprs(self.dim, exprs, params))
    }

    /// Evaluate all components at `(t, x)`.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, x, &mut out)?;
        Ok(out)
    }

    /// Evaluate into a caller-provided buffer of length `dim`.
    #[inline]
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        if !self.params.is_empty() {
            return Err(EvalError {
                component: 0,
                kind: EvalErrorKind::UnboundParameter,
            });
        }
        self.eval_with_params(t, x, &[], out)
    }

    /// Evaluate with explicit values for the free parameters.
    #[inline]
    pub fn eval_with_params(&self, t: f64, x: &[f64], params: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        if x.len() != self.dim || out.len() != self.dim {
            return Err(EvalError {
                component: 0,
                kind: EvalErrorKind::DimensionMismatch,
            });
        }
        if params.len() < self.params.len() {
            return Err(EvalError {
                component: 0,
                kind: EvalErrorKind::UnboundParameter,
            });
        }
        for (component, (prog, slot)) in self.code.iter().zip(out.iter_mut()).enumerate() {
            let v = prog.run(t, x, params).map_err(|kind| EvalError { component, kind })?;
            if !v.is_finite() {
                return Err(EvalError {
                    component,
                    kind: EvalErrorKind::NonFinite,
                });
            }
            *slot = v;
        }
        Ok(())
    }

    fn fmt_expr(&self, e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match e {
            Expr::Num(v) => {
                if *v < 0.0 {
                    write!(f, "({v:?})")
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Time => f.write_str("t"),
            Expr::State(i) => write!(f, "x{}", i + 1),
            Expr::Param(p) => f.write_str(&self.params[*p]),
            Expr::Neg(inner) => {
                f.write_str("(-")?;
                self.fmt_expr(inner, f)?;
                f.write_str(")")
            }
            Expr::Call(func, arg) => {
                write!(f, "{}(", func.name())?;
                self.fmt_expr(arg, f)?;
                f.write_str(")")
            }
            Expr::Binary(op, a, b) => {
                f.write_str("(")?;
                self.fmt_expr(a, f)?;
                write!(f, " {} ", op.symbol())?;
                self.fmt_expr(b, f)?;
                f.write_str(")")
            }
        }
    }
}

/// Fully parenthesised source text; re-parsing it gives the same field.
impl fmt::Display for FieldAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.exprs.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            self.fmt_expr(e, f)?;
        }
        Ok(())
    }
}

/// A single real-valued expression over a `dim`-dimensional state, e.g. a
/// region predicate `g(x) <= 0`.
#[derive(Clone, Debug)]
pub struct ScalarField {
    dim: usize,
    expr: Expr,
    code: Program,
}

impl ScalarField {
    pub(crate) fn new(dim: usize, expr: Expr) -> ScalarField {
        let code = Program::compile(&expr);
        ScalarField { dim, expr, code }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        let fail = |kind| EvalError { component: 0, kind };
        if x.len() != self.dim {
            return Err(fail(EvalErrorKind::DimensionMismatch));
        }
        let v = self.code.run(t, x, &[]).map_err(fail)?;
        if !v.is_finite() {
            return Err(fail(EvalErrorKind::NonFinite));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval1(src: &str, t: f64, x: &[f64]) -> Vec<f64> {
        parse(src, x.len()).unwrap().eval(t, x).unwrap()
    }

    #[test]
    fn basic_examples() {
        assert_eq!(eval1("-x1", 0.0, &[2.0]), vec![-2.0]);
        assert_eq!(eval1("x1 - x1^3", 0.0, &[2.0]), vec![-6.0]);
        assert_eq!(eval1("-x1", 5.0, &[0.3]), vec![-0.3]);
        assert_eq!(eval1("x1 - x1^3", 0.0, &[1.0]), vec![0.0]);
        assert_eq!(eval1("x2; -x1", 0.0, &[1.0, 0.0]), vec![0.0, -1.0]);
    }

    #[test]
    fn time_dependence_is_detected() {
        let f = parse("-x1 + 0.2*sin(t)", 1).unwrap();
        assert!(f.uses_time());
        assert_eq!(f.eval(0.0, &[0.7]).unwrap(), vec![-0.7]);
        assert!(!parse("x1 - x1^3", 1).unwrap().uses_time());
    }

    #[test]
    fn index_beyond_dim_is_rejected() {
        let err = parse("x3", 2).unwrap_err();
        assert!(matches!(err, ParseError::IndexOutOfRange { pos: 0, .. }));
        assert!(matches!(parse("x0", 2).unwrap_err(), ParseError::UnknownIdent { .. }));
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err = parse("x1 + * 2", 1).unwrap_err();
        assert_eq!(err.position(), Some(5));
        let err = parse("sinh(x1)", 1).unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdent { pos: 0, .. }));
        let err = parse("(x1 + 1", 1).unwrap_err();
        assert_eq!(err.position(), Some(7));
        assert!(matches!(
            parse("x1; x1", 1).unwrap_err(),
            ParseError::WrongCount { expected: 1, found: 2 }
        ));
        assert!(matches!(
            parse("x1", 2).unwrap_err(),
            ParseError::WrongCount { expected: 2, found: 1 }
        ));
        assert!(parse("x1 $ 2", 1).unwrap_err().position() == Some(3));
    }

    #[test]
    fn whitespace_is_ignored() {
        let a = parse("  x2 ;-x1  ", 2).unwrap();
        let b = parse("x2;-x1", 2).unwrap();
        assert_eq!(a.exprs(), b.exprs());
    }

    #[test]
    fn domain_errors() {
        let f = parse("1/x1", 1).unwrap();
        let e = f.eval(0.0, &[0.0]).unwrap_err();
        assert_eq!(e.kind, EvalErrorKind::NonFinite);
        let f = parse("x1; x1^0.5", 2).unwrap();
        let e = f.eval(0.0, &[-4.0, -4.0]).unwrap_err();
        assert_eq!(e.component, 1);
        assert_eq!(e.kind, EvalErrorKind::NegativeBase);
        // integer exponents of negative bases are fine
        assert_eq!(eval1("x1^3", 0.0, &[-2.0]), vec![-8.0]);
        assert_eq!(eval1("x1^-1", 0.0, &[-2.0]), vec![-0.5]);
    }

    #[test]
    fn precedence_table() {
        use BinOp::*;
        let n = |v: f64| Box::new(Expr::Num(v));
        let bin = |op, a, b| Box::new(Expr::Binary(op, a, b));
        let cases: Vec<(&str, Expr)> = vec![
            ("2+3*4", *bin(Add, n(2.0), bin(Mul, n(3.0), n(4.0)))),
            ("2*3+4", *bin(Add, bin(Mul, n(2.0), n(3.0)), n(4.0))),
            ("10-4-3", *bin(Sub, bin(Sub, n(10.0), n(4.0)), n(3.0))),
            ("24/4/3", *bin(Div, bin(Div, n(24.0), n(4.0)), n(3.0))),
            ("2^3^2", *bin(Pow, n(2.0), bin(Pow, n(3.0), n(2.0)))),
            ("-2^2", Expr::Neg(bin(Pow, n(2.0), n(2.0)))),
            ("(2+3)*4", *bin(Mul, bin(Add, n(2.0), n(3.0)), n(4.0))),
            ("2*-3", *bin(Mul, n(2.0), Box::new(Expr::Neg(n(3.0))))),
            ("8-2*3^2", *bin(Sub, n(8.0), bin(Mul, n(2.0), bin(Pow, n(3.0), n(2.0))))),
            ("1-2+3", *bin(Add, bin(Sub, n(1.0), n(2.0)), n(3.0))),
        ];
        let expected = [14.0, 10.0, 3.0, 2.0, 512.0, -4.0, 20.0, -6.0, -10.0, 2.0];
        for ((src, tree), want) in cases.into_iter().zip(expected) {
            let f = parse(src, 1).unwrap();
            assert_eq!(f.exprs()[0], tree, "{src}");
            let hand = FieldAst::from_exprs(1, vec![tree], vec![]);
            let got = f.eval(0.0, &[0.0]).unwrap()[0];
            assert_eq!(got, hand.eval(0.0, &[0.0]).unwrap()[0]);
            assert_eq!(got, want, "{src}");
        }
    }

    #[test]
    fn literals() {
        assert_eq!(eval1("1.5e-1 + .5 + 2.", 0.0, &[0.0]), vec![0.15 + 0.5 + 2.0]);
        assert_eq!(eval1("tanh(0) + exp(0) + abs(-3) + cos(0)", 0.0, &[0.0]), vec![5.0]);
    }

    #[test]
    fn parameters_bind_and_evaluate() {
        let f = parse_with_params("-x1 + eps*sin(t)", 1, &["eps"]).unwrap();
        assert_eq!(f.params(), ["eps"]);
        assert!(f.eval(0.0, &[1.0]).is_err());
        let mut out = [0.0];
        f.eval_with_params(std::f64::consts::FRAC_PI_2, &[1.0], &[0.5], &mut out)
            .unwrap();
        assert_eq!(out, [-0.5]);
        let g = f.bind("eps", 0.0).unwrap();
        assert!(g.params().is_empty());
        assert_eq!(g.eval(1.0, &[2.0]).unwrap(), vec![-2.0]);
        assert!(f.bind("rho", 1.0).is_none());

        let two = parse_with_params("u1*x1 + u2", 1, &["u1", "u2"]).unwrap();
        let one = two.bind("u1", 2.0).unwrap();
        let mut out = [0.0];
        one.eval_with_params(0.0, &[3.0], &[1.0], &mut out).unwrap();
        assert_eq!(out, [7.0]);
    }

    #[test]
    fn deterministic_evaluation() {
        let f = parse("x1*cos(t) - x2^3/7; tanh(x1*x2) + exp(-t)", 2).unwrap();
        let a = f.eval(0.37, &[1.25, -0.4]).unwrap();
        for _ in 0..10 {
            let b = f.eval(0.37, &[1.25, -0.4]).unwrap();
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }

    fn leaf() -> impl Strategy<Value = String> {
        prop_oneof![
            (0.0f64..10.0).prop_map(|v| format!("{v}")),
            Just("t".to_string()),
            Just("x1".to_string()),
            Just("x2".to_string()),
        ]
    }

    fn expr_text() -> impl Strategy<Value = String> {
        leaf().prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                (
                    inner.clone(),
                    inner.clone(),
                    prop::sample::select(vec!["+", "-", "*", "/"])
                )
                    .prop_map(|(a, b, op)| format!("{a} {op} {b}")),
                (inner.clone(), 0u8..4).prop_map(|(a, k)| format!("({a})^{k}")),
                inner.clone().prop_map(|a| format!("-({a})")),
                (inner, prop::sample::select(vec!["sin", "cos", "tanh", "exp", "abs"]))
                    .prop_map(|(a, f)| format!("{f}({a})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_round_trips(a in expr_text(), b in expr_text(),
                               pts in prop::collection::vec((-3.0f64..3.0, -2.0f64..2.0, -2.0f64..2.0), 100)) {
            let src = format!("{a}; {b}");
            let f = parse(&src, 2).unwrap();
            let g = parse(&f.to_string(), 2).unwrap();
            for (t, x1, x2) in pts {
                let (u, v) = (f.eval(t, &[x1, x2]), g.eval(t, &[x1, x2]));
                match (u, v) {
                    (Ok(u), Ok(v)) => {
                        prop_assert_eq!(u[0].to_bits(), v[0].to_bits());
                        prop_assert_eq!(u[1].to_bits(), v[1].to_bits());
                    }
                    (Err(e1), Err(e2)) => prop_assert_eq!(e1, e2),
                    (u, v) => prop_assert!(false, "{:?} vs {:?}", u, v),
                }
            }
        }
    }

    #[test]
    fn scalar_over_plane() {
        let g = parse_scalar("x1^2 + x2^2 - 1", 2).unwrap();
        assert!(g.eval(0.0, &[0.6, 0.8]).unwrap().abs() < 1e-12);
        assert_eq!(g.eval(0.0, &[0.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            parse_scalar("x1; x2", 2),
            Err(ParseError::WrongCount { expected: 1, found: 2 })
        ));
        assert_eq!(g.eval(0.0, &[1.0]).unwrap_err().kind, EvalErrorKind::DimensionMismatch);
    }
}
