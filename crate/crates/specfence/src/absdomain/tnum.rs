//! Tristate numbers: a 64-bit abstract value as a `(value, mask)` pair.
//!
//! A set mask bit marks the position as unknown; known bits live in
//! `value`. The concretization of `t` is every `v` with
//! `v & !t.mask == t.value`. The operation formulas are the standard sound
//! tnum algebra; an exhaustive 8-bit enumeration oracle in the test suite
//! checks containment for every operation.

use crate::isa::AluOp;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tnum {
    pub value: u64,
    pub mask: u64,
}

impl Tnum {
    /// All 64 bits unknown.
    pub const UNKNOWN: Tnum = Tnum { value: 0, mask: u64::MAX };

    pub fn new(value: u64, mask: u64) -> Tnum {
        debug_assert_eq!(value & mask, 0, "known bit marked unknown");
        Tnum { value, mask }
    }

    pub fn constant(value: u64) -> Tnum {
        Tnum { value, mask: 0 }
    }

    pub fn is_constant(self) -> bool {
        self.mask == 0
    }

    /// Membership in the concretization set.
    pub fn contains(self, v: u64) -> bool {
        v & !self.mask == self.value
    }

    /// Smallest member of the concretization set.
    pub fn min(self) -> u64 {
        self.value
    }

    /// Largest member of the concretization set.
    pub fn max(self) -> u64 {
        self.value | self.mask
    }

    /// Do the two tnums share at least one concrete value?
    pub fn agrees_with(self, other: Tnum) -> bool {
        (self.value ^ other.value) & !self.mask & !other.mask == 0
    }

    /// Intersection of two concretization sets. Caller must check
    /// [`Tnum::agrees_with`] first; on disagreement the result is
    /// meaningless.
    pub fn intersect(self, other: Tnum) -> Tnum {
        let value = self.value | other.value;
        let mask = self.mask & other.mask;
        Tnum::new(value & !mask, mask)
    }

    /// Smallest member of the concretization that is `>= lo`, if any.
    ///
    /// Walks the bits from the top, tracking the prefix of `lo`. The answer
    /// is either `lo` itself or shares a prefix with `lo` down to the lowest
    /// bit where it can go from 0 to 1, with the minimal completion below.
    pub fn min_at_least(self, lo: u64) -> Option<u64> {
        if self.min() >= lo {
            return Some(self.min());
        }
        if self.max() < lo {
            return None;
        }
        if self.contains(lo) {
            return Some(lo);
        }
        let mut breakout: Option<u64> = None;
        let mut prefix: u64 = 0;
        for bit in (0..64).rev() {
            let b = 1u64 << bit;
            let unknown = self.mask & b != 0;
            let can0 = unknown || self.value & b == 0;
            let can1 = unknown || self.value & b != 0;
            let min_below = self.value & (b - 1);
            if lo & b == 0 {
                if can1 {
                    breakout = Some(prefix | b | min_below);
                }
                if !can0 {
                    // Forced above `lo`; this beats any higher breakout.
                    return breakout;
                }
            } else {
                if can1 {
                    prefix |= b;
                } else {
                    // Forced below `lo` on this prefix; fall back to the
                    // lowest recorded upward deviation.
                    return breakout;
                }
            }
        }
        Some(prefix)
    }

    /// Largest member of the concretization that is `<= hi`, if any.
    pub fn max_at_most(self, hi: u64) -> Option<u64> {
        if self.max() <= hi {
            return Some(self.max());
        }
        if self.min() > hi {
            return None;
        }
        if self.contains(hi) {
            return Some(hi);
        }
        let mut breakdown: Option<u64> = None;
        let mut prefix: u64 = 0;
        for bit in (0..64).rev() {
            let b = 1u64 << bit;
            let unknown = self.mask & b != 0;
            let can0 = unknown || self.value & b == 0;
            let can1 = unknown || self.value & b != 0;
            let max_below = (self.value | self.mask) & (b - 1);
            if hi & b != 0 {
                if can0 {
                    breakdown = Some(prefix | max_below);
                }
                if can1 {
                    prefix |= b;
                } else {
                    return breakdown;
                }
            } else if !can0 {
                // Forced above `hi` on this prefix.
                return breakdown;
            }
        }
        Some(prefix)
    }
}

/// Sound abstract transfer for an ALU operation.
///
/// Shifts by a non-constant amount and any amount `>= 64` in the abstract
/// operand go to [`Tnum::UNKNOWN`]; the concrete semantics mask the shift
/// amount, so a constant amount is reduced modulo 64 first.
pub fn tnum_binop(op: AluOp, a: Tnum, b: Tnum) -> Tnum {
    match op {
        AluOp::Add => add(a, b),
        AluOp::Sub => sub(a, b),
        AluOp::And => and(a, b),
        AluOp::Or => or(a, b),
        AluOp::Xor => xor(a, b),
        AluOp::Lsh => shift(a, b, |x, s| Tnum::new(x.value << s, x.mask << s)),
        AluOp::Rsh => shift(a, b, |x, s| Tnum::new(x.value >> s, x.mask >> s)),
        AluOp::Arsh => shift(a, b, |x, s| {
            let value = ((x.value as i64) >> s) as u64;
            let mask = ((x.mask as i64) >> s) as u64;
            // Sign extension of an unknown sign bit makes the copies unknown.
            Tnum::new(value & !mask, mask)
        }),
        AluOp::Mul => mul(a, b),
    }
}

fn add(a: Tnum, b: Tnum) -> Tnum {
    let sm = a.mask.wrapping_add(b.mask);
    let sv = a.value.wrapping_add(b.value);
    let sigma = sm.wrapping_add(sv);
    let chi = sigma ^ sv;
    let mu = chi | a.mask | b.mask;
    Tnum::new(sv & !mu, mu)
}

fn sub(a: Tnum, b: Tnum) -> Tnum {
    let dv = a.value.wrapping_sub(b.value);
    let alpha = dv.wrapping_add(a.mask);
    let beta = dv.wrapping_sub(b.mask);
    let chi = alpha ^ beta;
    let mu = chi | a.mask | b.mask;
    Tnum::new(dv & !mu, mu)
}

fn and(a: Tnum, b: Tnum) -> Tnum {
    let alpha = a.value | a.mask;
    let beta = b.value | b.mask;
    let v = a.value & b.value;
    Tnum::new(v, alpha & beta & !v)
}

fn or(a: Tnum, b: Tnum) -> Tnum {
    let v = a.value | b.value;
    let mu = a.mask | b.mask;
    Tnum::new(v, mu & !v)
}

fn xor(a: Tnum, b: Tnum) -> Tnum {
    let v = a.value ^ b.value;
    let mu = a.mask | b.mask;
    Tnum::new(v & !mu, mu)
}

fn shift(a: Tnum, b: Tnum, f: impl Fn(Tnum, u32) -> Tnum) -> Tnum {
    if !b.is_constant() {
        return Tnum::UNKNOWN;
    }
    f(a, b.value as u32 & 63)
}

/// Shift-add decomposition over the multiplier's bits: known one-bits add
/// a shifted copy of `b`, unknown bits add an "either 0 or b" term.
fn mul(a: Tnum, b: Tnum) -> Tnum {
    let mut a = a;
    let mut b = b;
    let acc = Tnum::constant(a.value.wrapping_mul(b.value));
    let mut acc_unknown = Tnum::constant(0);
    while a.value != 0 || a.mask != 0 {
        if a.value & 1 != 0 {
            acc_unknown = add(acc_unknown, Tnum::new(0, b.mask));
        } else if a.mask & 1 != 0 {
            acc_unknown = add(acc_unknown, Tnum::new(0, b.value | b.mask));
        }
        a = Tnum::new(a.value >> 1, a.mask >> 1);
        b = Tnum::new(b.value << 1, b.mask << 1);
    }
    add(acc, acc_unknown)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Enumerates the concretization of an 8-bit tnum.
    fn gamma8(t: Tnum) -> Vec<u64> {
        (0..=255u64).filter(|&v| t.contains(v)).collect()
    }

    #[test]
    fn add_example_from_enumeration() {
        // Oracle: enumerate γ(a) × γ(b) and check every sum is contained.
        let a = Tnum::new(2, 0);
        let b = Tnum::new(0, 1);
        let r = tnum_binop(AluOp::Add, a, b);
        assert_eq!(r, Tnum::new(2, 1));
        let members: Vec<u64> = (0..=7).filter(|&v| r.contains(v)).collect();
        assert_eq!(members, vec![2, 3]);
        for x in gamma8(a) {
            for y in gamma8(b) {
                assert!(r.contains(x.wrapping_add(y)));
            }
        }
    }

    #[test]
    fn and_with_zero_annihilates() {
        let zero = Tnum::constant(0);
        for mask in 0..=255u64 {
            let b = Tnum::new(0xAA & !mask, mask);
            assert_eq!(tnum_binop(AluOp::And, zero, b), zero);
        }
    }

    #[test]
    fn constant_shift_folds() {
        let a = Tnum::constant(1);
        assert_eq!(tnum_binop(AluOp::Lsh, a, Tnum::constant(1)), Tnum::constant(2));
    }

    #[test]
    fn unknown_shift_amount_is_top() {
        let a = Tnum::constant(4);
        assert_eq!(tnum_binop(AluOp::Lsh, a, Tnum::new(0, 3)), Tnum::UNKNOWN);
    }

    #[test]
    fn contains_matches_bit_oracle() {
        // Brute force over 8-bit truncations.
        for value in 0..=255u64 {
            for mask in 0..=255u64 {
                if value & mask != 0 {
                    continue;
                }
                let t = Tnum::new(value, mask);
                for v in 0..=255u64 {
                    let expected = (0..8).all(|bit| {
                        let b = 1u64 << bit;
                        mask & b != 0 || (v & b) == (value & b)
                    });
                    assert_eq!(t.contains(v), expected);
                }
            }
        }
        assert!(Tnum::new(2, 1).contains(3));
        assert!(!Tnum::new(2, 1).contains(4));
    }

    #[test]
    fn min_at_least_and_max_at_most_match_enumeration() {
        for value in 0..=255u64 {
            for mask in 0..=255u64 {
                if value & mask != 0 {
                    continue;
                }
                let t = Tnum::new(value, mask);
                let members = gamma8(t);
                for bound in [0u64, 1, 5, 17, 99, 128, 200, 255, 256, 300] {
                    let expect_min = members.iter().copied().find(|&v| v >= bound);
                    assert_eq!(t.min_at_least(bound), expect_min, "t={t:?} lo={bound}");
                    let expect_max = members.iter().copied().rev().find(|&v| v <= bound);
                    assert_eq!(t.max_at_most(bound), expect_max, "t={t:?} hi={bound}");
                }
            }
        }
    }

    #[test]
    fn intersect_is_sound_on_agreeing_pairs() {
        for va in 0..=63u64 {
            for ma in 0..=63u64 {
                if va & ma != 0 {
                    continue;
                }
                for vb in 0..=63u64 {
                    for mb in 0..=63u64 {
                        if vb & mb != 0 {
                            continue;
                        }
                        let a = Tnum::new(va, ma);
                        let b = Tnum::new(vb, mb);
                        let both: Vec<u64> =
                            (0..64).filter(|&v| a.contains(v) && b.contains(v)).collect();
                        assert_eq!(a.agrees_with(b), !both.is_empty());
                        if a.agrees_with(b) {
                            let i = a.intersect(b);
                            for v in both {
                                assert!(i.contains(v));
                            }
                        }
                    }
                }
            }
        }
    }
}
