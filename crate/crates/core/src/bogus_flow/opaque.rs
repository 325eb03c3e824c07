//! Number-theoretic opaque predicates.
//!
//! Each family has a fixed straight-line template over abstract locals
//! (`x`, `y`, `t0`..., result `p`). [`OpaquePredicate::instantiate`] copies
//! the template into a function under fresh local names, so the emitted code
//! is the template up to renaming.

use rand::Rng;
use serde::Serialize;

use crate::interp::{eval_binop, eval_rel};
use crate::ir::{BinOp, Inst, IrFunction, Literal, Place, Rel, Type, Value};
use crate::rng;

/// Inputs of `seven_square` are masked to this many low bits.
pub const SEVEN_SQUARE_MASK_BITS: u32 = 16;
const MASK: i64 = (1 << SEVEN_SQUARE_MASK_BITS) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateFamily {
    /// `x²(x+1)² mod 4 == 0`. The product of consecutive integers is even
    /// and reduction mod 2⁶⁴ keeps residues mod 4, so this holds for every
    /// `i64` under wrapping arithmetic.
    SquareMod4,
    /// `7y² - 1 != x²` with both inputs masked to 16 bits. Squares mod 7
    /// are {0, 1, 2, 4} and never 6; masking keeps every product exact.
    SevenSquare,
}

impl PredicateFamily {
    pub const ALL: [PredicateFamily; 2] = [PredicateFamily::SquareMod4, PredicateFamily::SevenSquare];

    pub fn arity(self) -> usize {
        match self {
            PredicateFamily::SquareMod4 => 1,
            PredicateFamily::SevenSquare => 2,
        }
    }

    /// Reference formula evaluated directly in Rust, independent of the
    /// emitted instruction template.
    pub fn holds(self, inputs: &[i64]) -> bool {
        match self {
            PredicateFamily::SquareMod4 => {
                let x = inputs[0];
                let sq = x.wrapping_mul(x).wrapping_mul(x.wrapping_add(1)).wrapping_mul(x.wrapping_add(1));
                sq & 3 == 0
            }
            PredicateFamily::SevenSquare => {
                let (x, y) = (inputs[0] & MASK, inputs[1] & MASK);
                7 * y * y - 1 != x * x
            }
        }
    }
}

fn local(n: &str) -> Value {
    Value::local(n)
}

fn bin(dst: &str, op: BinOp, lhs: Value, rhs: Value) -> Inst {
    Inst::Binop { dst: Place::local(dst), op, lhs, rhs }
}

/// An instruction sequence whose boolean result is fixed at obfuscation time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpaquePredicate {
    pub family: PredicateFamily,
    pub truth: bool,
    /// Template locals in declaration order; the first `family.arity()` are
    /// the inputs, the last is the boolean result.
    pub locals: Vec<(String, Type)>,
    pub insts: Vec<Inst>,
}

impl OpaquePredicate {
    pub fn new(family: PredicateFamily, truth: bool) -> Self {
        let int = |n: &str| (n.to_string(), Type::Int);
        let (locals, mut insts) = match family {
            PredicateFamily::SquareMod4 => (
                vec![int("x"), int("t0"), int("t1"), int("t2"), int("t3"), int("t4")],
                vec![
                    bin("t0", BinOp::Add, local("x"), Value::int(1)),
                    bin("t1", BinOp::Mul, local("x"), local("x")),
                    bin("t2", BinOp::Mul, local("t0"), local("t0")),
                    bin("t3", BinOp::Mul, local("t1"), local("t2")),
                    bin("t4", BinOp::And, local("t3"), Value::int(3)),
                    Inst::Cmp { dst: Place::local("p"), rel: Rel::Eq, lhs: local("t4"), rhs: Value::int(0) },
                ],
            ),
            PredicateFamily::SevenSquare => (
                vec![int("x"), int("y"), int("t0"), int("t1"), int("t2"), int("t3")],
                vec![
                    bin("x", BinOp::And, local("x"), Value::int(MASK)),
                    bin("y", BinOp::And, local("y"), Value::int(MASK)),
                    bin("t0", BinOp::Mul, local("x"), local("x")),
                    bin("t1", BinOp::Mul, local("y"), local("y")),
                    bin("t2", BinOp::Mul, local("t1"), Value::int(7)),
                    bin("t3", BinOp::Sub, local("t2"), Value::int(1)),
                    Inst::Cmp { dst: Place::local("p"), rel: Rel::Ne, lhs: local("t3"), rhs: local("t0") },
                ],
            ),
        };
        if !truth {
            insts.push(bin("p", BinOp::Xor, local("p"), Value::bool(true)));
        }
        let mut locals = locals;
        locals.push(("p".to_string(), Type::Bool));
        OpaquePredicate { family, truth, locals, insts }
    }

    /// Execute the template on concrete inputs.
    pub fn evaluate(&self, inputs: &[i64]) -> bool {
        let mut regs: Vec<(String, i64)> = self.locals.iter().map(|(n, _)| (n.clone(), 0)).collect();
        for (slot, v) in regs.iter_mut().zip(inputs) {
            slot.1 = *v;
        }
        let read = |regs: &[(String, i64)], v: &Value| match v {
            Value::Local(n) => regs.iter().find(|(r, _)| r == n).map(|(_, v)| *v).expect("template local"),
            Value::Lit(Literal::Int(i)) => *i,
            Value::Lit(Literal::Bool(b)) => i64::from(*b),
            Value::Global(_) => unreachable!("templates read no globals"),
        };
        for inst in &self.insts {
            let (dst, value) = match inst {
                Inst::Binop { dst, op, lhs, rhs } => {
                    (dst, eval_binop(*op, read(&regs, lhs), read(&regs, rhs)).expect("templates never divide"))
                }
                Inst::Cmp { dst, rel, lhs, rhs } => (dst, i64::from(eval_rel(*rel, read(&regs, lhs), read(&regs, rhs)))),
                _ => unreachable!("templates hold only binops and compares"),
            };
            let Place::Local(d) = dst else { unreachable!() };
            regs.iter_mut().find(|(r, _)| r == d).expect("template local").1 = value;
        }
        regs.last().expect("result local").1 != 0
    }

    /// Copy the template into `f` under fresh locals. `sources` supply the
    /// input values (one per input). Returns the instructions to splice in
    /// and the name of the boolean result local.
    pub fn instantiate(&self, f: &mut IrFunction, sources: &[Value]) -> (Vec<Inst>, String) {
        let renamed: Vec<(String, String)> = self
            .locals
            .iter()
            .map(|(n, ty)| (n.clone(), f.fresh_local(&format!("op.{n}"), *ty)))
            .collect();
        let rename = |n: &str| renamed.iter().find(|(from, _)| from == n).map(|(_, to)| to.clone()).expect("template local");
        let mut out: Vec<Inst> = renamed
            .iter()
            .take(self.family.arity())
            .zip(sources)
            .map(|((_, to), src)| match src {
                Value::Lit(value) => Inst::Const { dst: Place::local(to.clone()), value: *value },
                other => Inst::Assign { dst: Place::local(to.clone()), src: other.clone() },
            })
            .collect();
        for inst in &self.insts {
            let mut inst = inst.clone();
            rename_locals(&mut inst, &rename);
            out.push(inst);
        }
        (out, rename("p"))
    }
}

fn rename_locals(inst: &mut Inst, rename: &impl Fn(&str) -> String) {
    if let Some(Place::Local(n)) = match inst {
        Inst::Const { dst, .. } | Inst::Binop { dst, .. } | Inst::Cmp { dst, .. } | Inst::Assign { dst, .. } => Some(dst),
        Inst::Call { dst, .. } => dst.as_mut(),
    } {
        *n = rename(n);
    }
    for v in inst.operands_mut() {
        if let Value::Local(n) = v {
            *n = rename(n);
        }
    }
}

/// Pick a family uniformly from `seed` and build the predicate.
pub fn make_opaque_predicate(seed: u64, truth: bool) -> OpaquePredicate {
    let mut rng = rng::rng(seed);
    let family = PredicateFamily::ALL[rng.gen_range(0..PredicateFamily::ALL.len())];
    OpaquePredicate::new(family, truth)
}

/// An integer selector that always evaluates to `0` while its provable range
/// is `{0, 1}`: `(x·(x+1)) & 1`. Switch cases with literals `>= 2` on it can
/// never be taken, and neither can the default when case `0` is present.
pub fn emit_zero_selector(f: &mut IrFunction, source: Value) -> (Vec<Inst>, String) {
    let x = f.fresh_local("sel.x", Type::Int);
    let t = f.fresh_local("sel.t", Type::Int);
    let s = f.fresh_local("sel", Type::Int);
    let first = match source {
        Value::Lit(value) => Inst::Const { dst: Place::local(x.clone()), value },
        other => Inst::Assign { dst: Place::local(x.clone()), src: other },
    };
    let insts = vec![
        first,
        bin(&t, BinOp::Add, local(&x), Value::int(1)),
        bin(&t, BinOp::Mul, local(&x), local(&t)),
        bin(&s, BinOp::And, local(&t), Value::int(1)),
    ];
    (insts, s)
}

/// Candidate input values for predicates in `f`: integer parameters, then
/// integer locals, then a constant drawn from `rng`.
pub fn predicate_sources<R: Rng>(f: &IrFunction, count: usize, rng: &mut R) -> Vec<Value> {
    let pool: Vec<Value> = f
        .params
        .iter()
        .chain(f.locals.iter().filter(|l| !l.name.starts_with("op.") && !l.name.starts_with("sel")))
        .filter(|p| p.ty == Type::Int)
        .map(|p| Value::local(p.name.clone()))
        .collect();
    (0..count)
        .map(|_| {
            if pool.is_empty() {
                Value::int(rng.gen_range(-1_000_000..1_000_000))
            } else {
                pool[rng.gen_range(0..pool.len())].clone()
            }
        })
        .collect()
}
