//! Clone mutation shared by bogus blocks, nested-switch decoys and overload
//! decoys: one opcode swap plus one integer constant bumped by one.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::ir::{BinOp, Inst, IrFunction, Literal, Rel, Type, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    Opcode { inst: usize, from: String, to: String },
    Constant { inst: usize, from: i64, to: i64 },
}

/// Binops an integer opcode may be swapped to. Division is never introduced
/// so a clone cannot gain a static divide-by-zero.
const INT_SWAPS: [BinOp; 8] =
    [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::And, BinOp::Or, BinOp::Xor, BinOp::Shl, BinOp::Shr];
const BOOL_SWAPS: [BinOp; 3] = [BinOp::And, BinOp::Or, BinOp::Xor];

fn operand_type(f: &IrFunction, v: &Value) -> Type {
    match v {
        Value::Local(n) => f.local_type(n).unwrap_or(Type::Int),
        Value::Global(_) => Type::Int,
        Value::Lit(l) => l.ty(),
    }
}

/// Copy `insts` (typed against `f`) and apply at most one opcode swap and at
/// most one constant bump, chosen by `rng`.
pub fn mutate_clone<R: Rng>(insts: &[Inst], f: &IrFunction, rng: &mut R) -> (Vec<Inst>, Vec<Mutation>) {
    let mut out = insts.to_vec();
    let mut applied = Vec::new();

    let swappable: Vec<usize> = out
        .iter()
        .enumerate()
        .filter(|(_, i)| matches!(i, Inst::Binop { .. } | Inst::Cmp { .. }))
        .map(|(n, _)| n)
        .collect();
    if let Some(&at) = swappable.choose(rng) {
        match &mut out[at] {
            Inst::Binop { op, lhs, .. } => {
                let pool: &[BinOp] = if operand_type(f, lhs) == Type::Bool { &BOOL_SWAPS } else { &INT_SWAPS };
                let choices: Vec<BinOp> = pool.iter().copied().filter(|o| o != op).collect();
                let to = *choices.choose(rng).expect("every pool has an alternative");
                applied.push(Mutation::Opcode { inst: at, from: op.keyword().into(), to: to.keyword().into() });
                *op = to;
            }
            Inst::Cmp { rel, lhs, .. } => {
                let choices: Vec<Rel> = if operand_type(f, lhs) == Type::Bool {
                    vec![if *rel == Rel::Eq { Rel::Ne } else { Rel::Eq }]
                } else {
                    Rel::ALL.into_iter().filter(|r| r != rel).collect()
                };
                let to = *choices.choose(rng).expect("non-empty");
                applied.push(Mutation::Opcode { inst: at, from: rel.keyword().into(), to: to.keyword().into() });
                *rel = to;
            }
            _ => unreachable!(),
        }
    }

    // (instruction, operand position or None for a const literal)
    let mut constants: Vec<(usize, Option<usize>)> = Vec::new();
    for (n, inst) in out.iter().enumerate() {
        match inst {
            Inst::Const { value: Literal::Int(_), .. } => constants.push((n, None)),
            Inst::Const { .. } => {}
            _ => {
                for (k, v) in inst.operands().into_iter().enumerate() {
                    let Value::Lit(Literal::Int(c)) = v else { continue };
                    let divisor = matches!(inst, Inst::Binop { op, .. } if op.is_division()) && k == 1;
                    if !(divisor && c.wrapping_add(1) == 0) {
                        constants.push((n, Some(k)));
                    }
                }
            }
        }
    }
    if let Some(&(n, pos)) = constants.choose(rng) {
        let slot = match (&mut out[n], pos) {
            (Inst::Const { value: Literal::Int(c), .. }, None) => c,
            (inst, Some(k)) => match inst.operands_mut().into_iter().nth(k) {
                Some(Value::Lit(Literal::Int(c))) => c,
                _ => unreachable!(),
            },
            _ => unreachable!(),
        };
        let from = *slot;
        *slot = from.wrapping_add(1);
        applied.push(Mutation::Constant { inst: n, from, to: *slot });
    }
    (out, applied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, validate, IrModule};
    use crate::rng;

    const SRC: &str = "func @f(%a: int, %b: bool) -> int { local %x: int\n local %c: bool\n\
        e: %x = 5 %x = add %x, %a %x = sdiv %x, -1 %c = cmp eq %b, true %c = xor %c, %b ret %x }";

    #[test]
    fn one_swap_and_one_bump() {
        let m = parse_module(SRC).unwrap();
        let f = &m.functions[0];
        for seed in 0..200 {
            let (insts, muts) = mutate_clone(&f.blocks[0].insts, f, &mut rng::rng(seed));
            assert_eq!(muts.iter().filter(|m| matches!(m, Mutation::Opcode { .. })).count(), 1);
            assert_eq!(muts.iter().filter(|m| matches!(m, Mutation::Constant { .. })).count(), 1);
            assert_ne!(insts, f.blocks[0].insts);
            let mut g = f.clone();
            g.blocks[0].insts = insts;
            let check = IrModule { functions: vec![g], ..Default::default() };
            assert!(validate(&check).is_empty(), "seed {seed}: {:?}", validate(&check));
        }
    }

    #[test]
    fn divisor_minus_one_is_never_bumped_to_zero() {
        let m = parse_module("func @f(%a: int) -> int { e: %a = srem %a, -1 ret %a }").unwrap();
        let f = &m.functions[0];
        for seed in 0..50 {
            let (insts, _) = mutate_clone(&f.blocks[0].insts, f, &mut rng::rng(seed));
            assert!(!insts.iter().any(|i| matches!(i, Inst::Binop { op: BinOp::Srem | BinOp::Sdiv, rhs, .. } if *rhs == Value::int(0))));
        }
    }

    #[test]
    fn nothing_to_mutate() {
        let m = parse_module("func @f(%a: int) -> int { e: %a = %a ret %a }").unwrap();
        let f = &m.functions[0];
        let (insts, muts) = mutate_clone(&f.blocks[0].insts, f, &mut rng::rng(1));
        assert_eq!(insts, f.blocks[0].insts);
        assert!(muts.is_empty());
    }
}
