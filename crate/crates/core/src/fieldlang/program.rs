use smallvec::SmallVec;

use super::{BinOp, EvalErrorKind, Expr, Func};

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    Time,
    State(usize),
    Param(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    PowI(i32),
    Call(Func),
}

/// Postfix program for one component.
#[derive(Clone, Debug)]
pub(super) struct Program {
    ops: Vec<Op>,
    depth: usize,
}

/// Programs at most this deep run on a fixed array instead of the heap.
const INLINE_DEPTH: usize = 32;

impl Program {
    pub(super) fn compile(e: &Expr) -> Program {
        let mut ops = Vec::new();
        emit(e, &mut ops);
        let mut depth = 0usize;
        let mut max = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Time | Op::State(_) | Op::Param(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => depth -= 1,
                Op::Neg | Op::PowI(_) | Op::Call(_) => {}
            }
            max = max.max(depth);
        }
        Program { ops, depth: max }
    }

    #[inline]
    pub(super) fn run(&self, t: f64, x: &[f64], params: &[f64]) -> Result<f64, EvalErrorKind> {
        if self.depth <= INLINE_DEPTH {
            let mut stack = [0.0f64; INLINE_DEPTH];
            self.exec(t, x, params, &mut stack)
        } else {
            let mut stack: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, self.depth);
            self.exec(t, x, params, &mut stack)
        }
    }

    #[inline(always)]
    fn exec(&self, t: f64, x: &[f64], params: &[f64], st: &mut [f64]) -> Result<f64, EvalErrorKind> {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(v) => {
                    st[sp] = v;
                    sp += 1;
                }
                Op::Time => {
                    st[sp] = t;
                    sp += 1;
                }
                Op::State(i) => {
                    st[sp] = x[i];
                    sp += 1;
                }
                Op::Param(i) => {
                    st[sp] = params[i];
                    sp += 1;
                }
                Op::Neg => st[sp - 1] = -st[sp - 1],
                Op::PowI(k) => {
                    let a = st[sp - 1];
                    st[sp - 1] = match k {
                        2 => a * a,
                        3 => a * a * a,
                        _ => a.powi(k),
                    };
                }
                Op::Call(f) => st[sp - 1] = f.apply(st[sp - 1]),
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => {
                    sp -= 1;
                    let b = st[sp];
                    let a = st[sp - 1];
                    st[sp - 1] = match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div => a / b,
                        _ => pow(a, b)?,
                    };
                }
            }
        }
        Ok(st[0])
    }
}

fn pow(base: f64, exp: f64) -> Result<f64, EvalErrorKind> {
    if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
        Ok(base.powi(exp as i32))
    } else if base < 0.0 {
        Err(EvalErrorKind::NegativeBase)
    } else {
        Ok(base.powf(exp))
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    match e {
        Expr::Num(v) => ops.push(Op::Const(*v)),
        Expr::Time => ops.push(Op::Time),
        Expr::State(i) => ops.push(Op::State(*i)),
        Expr::Param(i) => ops.push(Op::Param(*i)),
        Expr::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Expr::Call(f, a) => {
            emit(a, ops);
            ops.push(Op::Call(*f));
        }
        Expr::Binary(BinOp::Pow, a, b) => {
            emit(a, ops);
            match **b {
                Expr::Num(k) if k.fract() == 0.0 && k.abs() <= 64.0 => ops.push(Op::PowI(k as i32)),
                _ => {
                    emit(b, ops);
                    ops.push(Op::Pow);
                }
            }
        }
        Expr::Binary(op, a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div,
                BinOp::Pow => unreachable!(),
            });
        }
    }
}
