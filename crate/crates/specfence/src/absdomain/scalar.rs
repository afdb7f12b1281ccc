//! Scalar value tracking: a tristate number plus an unsigned range, and the
//! branch-outcome refinement used to prune architectural paths.

use super::tnum::{tnum_binop, Tnum};
use crate::isa::{AluOp, CondOp};
use serde::{Deserialize, Serialize};

/// Abstract 64-bit scalar: every concrete value compatible with `tnum` and
/// inside `[umin, umax]`. The set is kept non-empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalarInfo {
    pub tnum: Tnum,
    pub umin: u64,
    pub umax: u64,
}

impl ScalarInfo {
    pub fn unknown() -> ScalarInfo {
        ScalarInfo { tnum: Tnum::UNKNOWN, umin: 0, umax: u64::MAX }
    }

    pub fn constant(v: u64) -> ScalarInfo {
        ScalarInfo { tnum: Tnum::constant(v), umin: v, umax: v }
    }

    pub fn is_constant(&self) -> bool {
        self.umin == self.umax
    }

    pub fn const_value(&self) -> Option<u64> {
        self.is_constant().then_some(self.umin)
    }

    pub fn contains(&self, v: u64) -> bool {
        self.tnum.contains(v) && (self.umin..=self.umax).contains(&v)
    }

    /// Tightens range and tnum against each other. Returns `None` when the
    /// concretization would be empty.
    fn normalized(mut self) -> Option<ScalarInfo> {
        if self.umin > self.umax {
            return None;
        }
        self.umin = self.tnum.min_at_least(self.umin)?;
        self.umax = self.tnum.max_at_most(self.umax)?;
        if self.umin > self.umax {
            return None;
        }
        if self.umin == self.umax {
            self.tnum = Tnum::constant(self.umin);
        }
        Some(self)
    }

    /// Like [`ScalarInfo::normalized`] for transfer-function results, where
    /// the set is non-empty by soundness of the inputs.
    fn normalized_total(self) -> ScalarInfo {
        self.normalized().expect("sound transfer produced an empty scalar set")
    }
}

/// Abstract ALU transfer: tnum transfer plus interval arithmetic, each
/// clamping the other.
pub fn scalar_binop(op: AluOp, a: ScalarInfo, b: ScalarInfo) -> ScalarInfo {
    let tnum = tnum_binop(op, a.tnum, b.tnum);
    let (mut umin, mut umax) = match op {
        AluOp::Add => match (a.umin.checked_add(b.umin), a.umax.checked_add(b.umax)) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => (0, u64::MAX), // may wrap
        },
        AluOp::Sub => {
            if a.umin >= b.umax {
                (a.umin - b.umax, a.umax - b.umin)
            } else {
                (0, u64::MAX)
            }
        }
        AluOp::And => (0, a.umax.min(b.umax)),
        AluOp::Or => (a.umin.max(b.umin), u64::MAX),
        AluOp::Xor => (0, u64::MAX),
        AluOp::Mul => match a.umax.checked_mul(b.umax) {
            Some(hi) => (a.umin.wrapping_mul(b.umin), hi),
            None => (0, u64::MAX),
        },
        AluOp::Lsh => match b.const_value() {
            Some(s) if s < 64 && a.umax.leading_zeros() as u64 >= s => {
                (a.umin << s, a.umax << s)
            }
            _ => (0, u64::MAX),
        },
        AluOp::Rsh => match b.const_value() {
            Some(s) if s < 64 => (a.umin >> s, a.umax >> s),
            _ => (0, u64::MAX),
        },
        AluOp::Arsh => match b.const_value() {
            // Safe only when every input is non-negative in the signed view.
            Some(s) if s < 64 && a.umax <= i64::MAX as u64 => (a.umin >> s, a.umax >> s),
            _ => (0, u64::MAX),
        },
    };
    umin = umin.max(tnum.min());
    umax = umax.min(tnum.max());
    ScalarInfo { tnum, umin, umax }.normalized_total()
}

/// Result of refining two operands against a branch outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    Refined(ScalarInfo, ScalarInfo),
    /// No concrete pair of values can produce this outcome.
    Infeasible,
}

/// Refines `lhs` and `rhs` under the assumption that `lhs cond rhs`
/// evaluated to `taken`. Never removes a concrete pair satisfying the
/// outcome; reports [`Refinement::Infeasible`] only when no pair does.
pub fn refine_on_branch(
    cond: CondOp,
    lhs: ScalarInfo,
    rhs: ScalarInfo,
    taken: bool,
) -> Refinement {
    let cond = if taken { cond } else { cond.negate() };
    match cond {
        CondOp::Eq => refine_eq(lhs, rhs),
        CondOp::Ne => refine_ne(lhs, rhs),
        CondOp::Lt => refine_unsigned(lhs, rhs, false),
        CondOp::Le => refine_unsigned(lhs, rhs, true),
        CondOp::Gt => flip(refine_unsigned(rhs, lhs, false)),
        CondOp::Ge => flip(refine_unsigned(rhs, lhs, true)),
        CondOp::Slt => refine_signed(lhs, rhs, false),
        CondOp::Sle => refine_signed(lhs, rhs, true),
        CondOp::Sgt => flip(refine_signed(rhs, lhs, false)),
        CondOp::Sge => flip(refine_signed(rhs, lhs, true)),
    }
}

fn flip(r: Refinement) -> Refinement {
    match r {
        Refinement::Refined(a, b) => Refinement::Refined(b, a),
        Refinement::Infeasible => Refinement::Infeasible,
    }
}

fn refine_eq(lhs: ScalarInfo, rhs: ScalarInfo) -> Refinement {
    if !lhs.tnum.agrees_with(rhs.tnum) {
        return Refinement::Infeasible;
    }
    let tnum = lhs.tnum.intersect(rhs.tnum);
    let both = ScalarInfo { tnum, umin: lhs.umin.max(rhs.umin), umax: lhs.umax.min(rhs.umax) };
    match both.normalized() {
        Some(s) => Refinement::Refined(s, s),
        None => Refinement::Infeasible,
    }
}

fn refine_ne(lhs: ScalarInfo, rhs: ScalarInfo) -> Refinement {
    match (lhs.const_value(), rhs.const_value()) {
        (Some(a), Some(b)) if a == b => Refinement::Infeasible,
        // Trim an endpoint when one side is a known constant.
        (_, Some(c)) => match trim_ne(lhs, c) {
            Some(l) => Refinement::Refined(l, rhs),
            None => Refinement::Infeasible,
        },
        (Some(c), _) => match trim_ne(rhs, c) {
            Some(r) => Refinement::Refined(lhs, r),
            None => Refinement::Infeasible,
        },
        _ => Refinement::Refined(lhs, rhs),
    }
}

fn trim_ne(mut s: ScalarInfo, c: u64) -> Option<ScalarInfo> {
    if s.umin == c {
        s.umin = s.umin.checked_add(1)?;
    } else if s.umax == c {
        s.umax = s.umax.checked_sub(1)?;
    }
    s.normalized()
}

/// `lhs < rhs` (or `<=` when `or_eq`).
fn refine_unsigned(lhs: ScalarInfo, rhs: ScalarInfo, or_eq: bool) -> Refinement {
    let (lhs_hi, rhs_lo) = if or_eq {
        (rhs.umax, lhs.umin)
    } else {
        if rhs.umax == 0 || lhs.umin == u64::MAX {
            return Refinement::Infeasible;
        }
        (rhs.umax - 1, lhs.umin + 1)
    };
    let l = ScalarInfo { umax: lhs.umax.min(lhs_hi), ..lhs };
    let r = ScalarInfo { umin: rhs.umin.max(rhs_lo), ..rhs };
    match (l.normalized(), r.normalized()) {
        (Some(l), Some(r)) => Refinement::Refined(l, r),
        _ => Refinement::Infeasible,
    }
}

/// Signed view of an unsigned range, when it does not straddle the sign
/// boundary.
fn signed_view(s: &ScalarInfo) -> Option<(i64, i64)> {
    let lo = s.umin as i64;
    let hi = s.umax as i64;
    // Same half of the number line means the cast is monotone.
    ((lo < 0) == (hi < 0) && lo <= hi).then_some((lo, hi))
}

fn apply_signed(mut s: ScalarInfo, lo: i64, hi: i64) -> Option<ScalarInfo> {
    if lo > hi {
        return None;
    }
    if (lo < 0) == (hi < 0) {
        s.umin = s.umin.max(lo as u64);
        s.umax = s.umax.min(hi as u64);
    }
    // A refined interval spanning the sign boundary is not representable as
    // an unsigned interval; keep the original bounds (sound, just coarser).
    s.normalized()
}

/// `lhs s< rhs` (or `s<=`). Falls back to "feasible, unrefined" when either
/// operand straddles the signed boundary.
fn refine_signed(lhs: ScalarInfo, rhs: ScalarInfo, or_eq: bool) -> Refinement {
    let (Some((l_lo, l_hi)), Some((r_lo, r_hi))) = (signed_view(&lhs), signed_view(&rhs)) else {
        return Refinement::Refined(lhs, rhs);
    };
    let (lhs_hi, rhs_lo) = if or_eq {
        (r_hi, l_lo)
    } else {
        if r_hi == i64::MIN || l_lo == i64::MAX {
            return Refinement::Infeasible;
        }
        (r_hi - 1, l_lo + 1)
    };
    let l = apply_signed(lhs, l_lo, l_hi.min(lhs_hi));
    let r = apply_signed(rhs, r_lo.max(rhs_lo), r_hi);
    match (l, r) {
        (Some(l), Some(r)) => Refinement::Refined(l, r),
        _ => Refinement::Infeasible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(lo: u64, hi: u64) -> ScalarInfo {
        ScalarInfo { tnum: Tnum::UNKNOWN, umin: lo, umax: hi }.normalized().unwrap()
    }

    /// Interval oracle: concrete filtering of a small range.
    fn oracle(
        cond: CondOp,
        lhs: &ScalarInfo,
        rhs: &ScalarInfo,
        taken: bool,
        space: impl Iterator<Item = u64> + Clone,
    ) -> Vec<(u64, u64)> {
        let mut sat = Vec::new();
        for x in space.clone() {
            if !lhs.contains(x) {
                continue;
            }
            for y in space.clone() {
                if rhs.contains(y) && cond.eval(x, y) == taken {
                    sat.push((x, y));
                }
            }
        }
        sat
    }

    #[test]
    fn lt_taken_tightens_umax() {
        let lhs = range(0, 100);
        let rhs = ScalarInfo::constant(10);
        match refine_on_branch(CondOp::Lt, lhs, rhs, true) {
            Refinement::Refined(l, _) => {
                assert_eq!((l.umin, l.umax), (0, 9));
            }
            other => panic!("unexpected {other:?}"),
        }
        // Oracle cross-check over 0..=100.
        let sat = oracle(CondOp::Lt, &lhs, &rhs, true, 0..=100);
        let max_l = sat.iter().map(|p| p.0).max().unwrap();
        assert_eq!(max_l, 9);
    }

    #[test]
    fn contradicted_equality_is_infeasible() {
        let lhs = ScalarInfo::constant(5);
        let rhs = ScalarInfo::constant(5);
        assert_eq!(refine_on_branch(CondOp::Eq, lhs, rhs, false), Refinement::Infeasible);
    }

    #[test]
    fn sgt_minus_one_keeps_small_range() {
        // Signed-view enumeration: every value in [0,3] satisfies `s> -1`.
        let lhs = range(0, 3);
        let rhs = ScalarInfo::constant((-1i64) as u64);
        match refine_on_branch(CondOp::Sgt, lhs, rhs, true) {
            Refinement::Refined(l, _) => assert_eq!((l.umin, l.umax), (0, 3)),
            other => panic!("unexpected {other:?}"),
        }
        for v in 0..=3u64 {
            assert!(CondOp::Sgt.eval(v, (-1i64) as u64));
        }
    }

    #[test]
    fn refinement_never_drops_satisfying_pairs() {
        // Exhaustive soundness check over small ranges and all conditions.
        let conds = [
            CondOp::Eq,
            CondOp::Ne,
            CondOp::Lt,
            CondOp::Le,
            CondOp::Gt,
            CondOp::Ge,
            CondOp::Slt,
            CondOp::Sle,
            CondOp::Sgt,
            CondOp::Sge,
        ];
        let mk = |lo: u64, hi: u64, tmask: u64| {
            ScalarInfo { tnum: Tnum::new(0, tmask), umin: lo, umax: hi }.normalized()
        };
        let candidates: Vec<ScalarInfo> = [
            mk(0, 15, 0xf),
            mk(3, 9, 0xf),
            mk(5, 5, 0xf),
            mk(0, 1, 0x1),
            mk(2, 14, 0b1110),
            Some(ScalarInfo::constant(7)),
            Some(ScalarInfo::constant(0)),
        ]
        .into_iter()
        .flatten()
        .collect();
        for cond in conds {
            for lhs in &candidates {
                for rhs in &candidates {
                    for taken in [true, false] {
                        let sat = oracle(cond, lhs, rhs, taken, 0..=15);
                        match refine_on_branch(cond, *lhs, *rhs, taken) {
                            Refinement::Infeasible => {
                                assert!(
                                    sat.is_empty(),
                                    "{cond:?} taken={taken} lhs={lhs:?} rhs={rhs:?}"
                                );
                            }
                            Refinement::Refined(l, r) => {
                                for (x, y) in sat {
                                    assert!(
                                        l.contains(x) && r.contains(y),
                                        "{cond:?} taken={taken} dropped ({x},{y})"
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn binop_interval_examples() {
        let a = range(2, 6);
        let b = ScalarInfo::constant(3);
        let sum = scalar_binop(AluOp::Add, a, b);
        assert_eq!((sum.umin, sum.umax), (5, 9));
        let masked = scalar_binop(AluOp::And, ScalarInfo::unknown(), ScalarInfo::constant(63));
        assert_eq!((masked.umin, masked.umax), (0, 63));
        assert_eq!(masked.tnum.max(), 63);
    }
}
