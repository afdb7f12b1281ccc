//! Per-path abstract machine state and the single-step transition.
//!
//! The domain distinguishes pointer classes (stack, context, map value)
//! from scalars; scalars carry a tristate number plus an unsigned range.
//! The transition enforces the sandbox type discipline: only pointers are
//! dereferenced, accesses stay within their region, nothing uninitialized
//! is read, and stack offsets are compile-time constants.

pub mod scalar;
pub mod tnum;

pub use scalar::{refine_on_branch, scalar_binop, Refinement, ScalarInfo};
pub use tnum::{tnum_binop, Tnum};

use crate::isa::{AluOp, Instruction, MemSize, Program, Register, STACK_SIZE};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

pub const STACK_SLOTS: usize = (STACK_SIZE / 8) as usize;

/// Verifier-visible type of a register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegType {
    Uninit,
    Scalar(ScalarInfo),
    /// Pointer into the stack; `off` is a byte offset from `fp`.
    StackPtr { off: i64 },
    /// Pointer into the read-only context region.
    CtxPtr { off: i64 },
    /// Pointer into a map value region. The offset is an interval to model
    /// masked variable indices; constant pointers have `off_lo == off_hi`.
    MapPtr { map_id: u32, off_lo: i64, off_hi: i64 },
}

impl RegType {
    pub fn is_pointer(&self) -> bool {
        matches!(self, RegType::StackPtr { .. } | RegType::CtxPtr { .. } | RegType::MapPtr { .. })
    }

    pub fn scalar(&self) -> Option<&ScalarInfo> {
        match self {
            RegType::Scalar(s) => Some(s),
            _ => None,
        }
    }
}

/// Verifier-visible type of an 8-byte stack slot.
///
/// Scalar slots track which of their bytes have been written, so that
/// sub-8-byte stores and loads are decidable per byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotType {
    Uninit,
    Scalar { init: u8 },
    StackPtr { off: i64 },
    CtxPtr { off: i64 },
    MapPtr { map_id: u32, off_lo: i64, off_hi: i64 },
}

impl SlotType {
    fn is_pointer(&self) -> bool {
        !matches!(self, SlotType::Uninit | SlotType::Scalar { .. })
    }

    fn byte_initialized(&self, byte: usize) -> bool {
        match self {
            SlotType::Uninit => false,
            SlotType::Scalar { init } => init & (1 << byte) != 0,
            _ => true,
        }
    }
}

/// Why a step is unsafe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnsafeKind {
    TypeViolation,
    Breakout,
    UninitRead,
    VariableStackAccess,
}

/// Result of one abstract step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// Successor states; conditional branches yield one or two.
    Continue(Vec<AbstractState>),
    Exit,
    Unsafe(UnsafeKind, String),
}

/// Whether variable map-pointer advances may assume an index mask.
#[derive(Debug, Clone, Copy)]
pub enum MaskPolicy<'a> {
    /// Architectural exploration plans a mask at every variable advance, so
    /// each such site is bounded by construction.
    PlanAhead,
    /// Speculative exploration: only architecturally planned sites carry a
    /// mask; anything else is unbounded and caught at the access.
    Planned(&'a BTreeSet<usize>),
}

impl MaskPolicy<'_> {
    fn site_is_masked(&self, pc: usize) -> bool {
        match self {
            MaskPolicy::PlanAhead => true,
            MaskPolicy::Planned(set) => set.contains(&pc),
        }
    }
}

/// Per-path verifier state.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractState {
    pub pc: usize,
    pub regs: [RegType; 11],
    pub stack: [SlotType; STACK_SLOTS],
    pub speculative: bool,
    /// Instructions simulated along this path, entry state counted as 0.
    pub budget_used: u64,
}

impl AbstractState {
    /// The entry state: `r1` points at the context, everything else is
    /// uninitialized, `fp` is fixed.
    pub fn entry() -> AbstractState {
        let mut regs = [RegType::Uninit; 11];
        regs[1] = RegType::CtxPtr { off: 0 };
        regs[10] = RegType::StackPtr { off: 0 };
        AbstractState {
            pc: 0,
            regs,
            stack: [SlotType::Uninit; STACK_SLOTS],
            speculative: false,
            budget_used: 0,
        }
    }

    pub fn reg(&self, r: Register) -> &RegType {
        &self.regs[r.index() as usize]
    }

    fn set_reg(&mut self, r: Register, t: RegType) {
        debug_assert!(!r.is_fp());
        self.regs[r.index() as usize] = t;
    }

    fn advanced(&self, pc: usize) -> AbstractState {
        let mut next = self.clone();
        next.pc = pc;
        next.budget_used += 1;
        next
    }

    /// Entry into a mispredicted branch direction: same facts, no
    /// refinement from the branch condition, speculative from here on.
    pub fn mispredicted(&self, target_pc: usize) -> AbstractState {
        let mut next = self.advanced(target_pc);
        next.speculative = true;
        next
    }
}

fn unsafe_step(kind: UnsafeKind, detail: impl Into<String>) -> StepOutcome {
    StepOutcome::Unsafe(kind, detail.into())
}

/// Classification of what a stack store overwrites and with what, recorded
/// by the engine for the store-bypass barrier rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StlObservation {
    /// Every overwritten byte already held scalar data and the stored value
    /// is a scalar: bypassing the store confuses one scalar with another.
    ScalarOverScalar,
    /// Anything else: initializing, overwriting a spilled pointer, or
    /// storing a pointer.
    Critical,
}

/// Slot index and byte-within-slot for a stack byte offset in `[-512, 0)`.
fn slot_of(off: i64) -> (usize, usize) {
    debug_assert!((-STACK_SIZE..0).contains(&off));
    let rel = (off + STACK_SIZE) as usize;
    (rel / 8, rel % 8)
}

fn stack_in_bounds(addr: i64, size: u32) -> bool {
    addr >= -STACK_SIZE && addr + size as i64 <= 0
}

/// If `insn` stores through a stack pointer in `state` (with valid bounds),
/// classifies the store for the barrier rule.
pub fn classify_stack_store(state: &AbstractState, insn: &Instruction) -> Option<StlObservation> {
    let (base, off, size, value_is_scalar) = match *insn {
        Instruction::StoreReg { dst, src, off, size } => {
            (dst, off, size, state.reg(src).scalar().is_some())
        }
        Instruction::StoreImm { dst, off, size, .. } => (dst, off, size, true),
        _ => return None,
    };
    let RegType::StackPtr { off: base_off } = *state.reg(base) else {
        return None;
    };
    let addr = base_off + off as i64;
    if !stack_in_bounds(addr, size.bytes()) {
        return None;
    }
    let mut all_scalar = value_is_scalar;
    for i in 0..size.bytes() as i64 {
        let (slot, byte) = slot_of(addr + i);
        all_scalar &= matches!(state.stack[slot], SlotType::Scalar { .. })
            && state.stack[slot].byte_initialized(byte);
    }
    Some(if all_scalar { StlObservation::ScalarOverScalar } else { StlObservation::Critical })
}

/// If `insn` advances a map pointer by a non-constant scalar, returns
/// `(map_id, index_register, needs_mask)`. `needs_mask` is false when the
/// scalar's known bits already bound it within the padded region, making an
/// index mask a no-op.
pub fn variable_map_advance(
    state: &AbstractState,
    insn: &Instruction,
    prog: &Program,
) -> Option<(u32, Register, bool)> {
    let (dst, src) = match *insn {
        Instruction::AluReg { op: AluOp::Add | AluOp::Sub, dst, src } => (dst, src),
        _ => return None,
    };
    let RegType::MapPtr { map_id, .. } = *state.reg(dst) else {
        return None;
    };
    let s = state.reg(src).scalar()?;
    if s.is_constant() {
        return None;
    }
    let padded = prog.map(map_id).map(|m| m.padded_size as u64)?;
    let needs_mask = s.tnum.max() > padded - 1;
    Some((map_id, src, needs_mask))
}

/// Executes one instruction abstractly. Pure: identical inputs produce
/// identical outcomes. `insn` must be `prog.instructions[state.pc]`.
pub fn abstract_step(
    state: &AbstractState,
    insn: &Instruction,
    prog: &Program,
    masks: MaskPolicy<'_>,
) -> StepOutcome {
    debug_assert_eq!(&prog.instructions[state.pc], insn);
    let next_pc = state.pc + 1;
    match *insn {
        Instruction::MovImm { dst, imm } => {
            let mut next = state.advanced(next_pc);
            next.set_reg(dst, RegType::Scalar(ScalarInfo::constant(imm as u64)));
            StepOutcome::Continue(vec![next])
        }
        Instruction::MovReg { dst, src } => {
            let value = *state.reg(src);
            if value == RegType::Uninit {
                return unsafe_step(UnsafeKind::UninitRead, format!("{src} read uninitialized"));
            }
            let mut next = state.advanced(next_pc);
            next.set_reg(dst, value);
            StepOutcome::Continue(vec![next])
        }
        Instruction::AluImm { op, dst, imm } => {
            alu(state, prog, masks, op, dst, Operand::Imm(imm))
        }
        Instruction::AluReg { op, dst, src } => {
            alu(state, prog, masks, op, dst, Operand::Reg(src))
        }
        Instruction::Load { dst, src, off, size } => load(state, prog, dst, src, off, size),
        Instruction::StoreReg { dst, src, off, size } => {
            let value = *state.reg(src);
            if value == RegType::Uninit {
                return unsafe_step(UnsafeKind::UninitRead, format!("{src} read uninitialized"));
            }
            store(state, prog, dst, off, size, value)
        }
        Instruction::StoreImm { dst, imm, off, size } => {
            let value = RegType::Scalar(ScalarInfo::constant(size.truncate(imm as u64)));
            store(state, prog, dst, off, size, value)
        }
        Instruction::Jmp { off } => {
            let target = (state.pc as i64 + 1 + off as i64) as usize;
            StepOutcome::Continue(vec![state.advanced(target)])
        }
        Instruction::JcondImm { cond, lhs, imm, off } => {
            branch(state, cond, lhs, Operand::Imm(imm), off)
        }
        Instruction::JcondReg { cond, lhs, rhs, off } => {
            branch(state, cond, lhs, Operand::Reg(rhs), off)
        }
        Instruction::MapPtr { dst, map_id } => {
            let mut next = state.advanced(next_pc);
            next.set_reg(dst, RegType::MapPtr { map_id, off_lo: 0, off_hi: 0 });
            StepOutcome::Continue(vec![next])
        }
        Instruction::Exit => StepOutcome::Exit,
        // Architecturally a no-op; the path engine gives barriers their
        // exit-like meaning on speculative paths.
        Instruction::NospecV1 | Instruction::NospecV4 => {
            StepOutcome::Continue(vec![state.advanced(next_pc)])
        }
    }
}

#[derive(Clone, Copy)]
enum Operand {
    Imm(i64),
    Reg(Register),
}

fn operand_scalar(state: &AbstractState, operand: &Operand) -> Result<ScalarInfo, StepOutcome> {
    match operand {
        Operand::Imm(imm) => Ok(ScalarInfo::constant(*imm as u64)),
        Operand::Reg(r) => match state.reg(*r) {
            RegType::Scalar(s) => Ok(*s),
            RegType::Uninit => {
                Err(unsafe_step(UnsafeKind::UninitRead, format!("{r} read uninitialized")))
            }
            _ => Err(unsafe_step(
                UnsafeKind::TypeViolation,
                format!("{r} is a pointer, expected scalar"),
            )),
        },
    }
}

fn alu(
    state: &AbstractState,
    prog: &Program,
    masks: MaskPolicy<'_>,
    op: AluOp,
    dst: Register,
    operand: Operand,
) -> StepOutcome {
    let dst_ty = *state.reg(dst);
    match dst_ty {
        RegType::Uninit => {
            unsafe_step(UnsafeKind::UninitRead, format!("{dst} read uninitialized"))
        }
        RegType::Scalar(lhs) => {
            let rhs = match operand_scalar(state, &operand) {
                Ok(s) => s,
                Err(e) => return e,
            };
            let mut next = state.advanced(state.pc + 1);
            next.set_reg(dst, RegType::Scalar(scalar_binop(op, lhs, rhs)));
            StepOutcome::Continue(vec![next])
        }
        _ if !matches!(op, AluOp::Add | AluOp::Sub) => unsafe_step(
            UnsafeKind::TypeViolation,
            format!("{op:?} on pointer {dst}"),
        ),
        _ => {
            let rhs = match operand_scalar(state, &operand) {
                Ok(s) => s,
                Err(e) => return e,
            };
            pointer_advance(state, prog, masks, op, dst, dst_ty, rhs)
        }
    }
}

fn pointer_advance(
    state: &AbstractState,
    prog: &Program,
    masks: MaskPolicy<'_>,
    op: AluOp,
    dst: Register,
    dst_ty: RegType,
    rhs: ScalarInfo,
) -> StepOutcome {
    // Constant advances shift the offset; variable advances are only
    // representable on map pointers, where an index mask (planned or proven
    // by known bits) bounds the contribution. Offsets saturate at the i64
    // boundary, which only ever widens the interval; the access check
    // rejects anything that ends up out of range.
    let apply = |lo: i64, hi: i64, add_lo: u64, add_hi: u64| -> (i64, i64) {
        let (a, b) = match op {
            AluOp::Add => (
                (lo as i128).saturating_add(add_lo as i128),
                (hi as i128).saturating_add(add_hi as i128),
            ),
            AluOp::Sub => (
                (lo as i128).saturating_sub(add_hi as i128),
                (hi as i128).saturating_sub(add_lo as i128),
            ),
            _ => unreachable!(),
        };
        (a.clamp(i64::MIN as i128, i64::MAX as i128) as i64,
         b.clamp(i64::MIN as i128, i64::MAX as i128) as i64)
    };
    match dst_ty {
        RegType::StackPtr { off } => match rhs.const_value() {
            Some(c) => {
                let (lo, _) = apply(off, off, c, c);
                let mut next = state.advanced(state.pc + 1);
                next.set_reg(dst, RegType::StackPtr { off: lo });
                StepOutcome::Continue(vec![next])
            }
            None => unsafe_step(
                UnsafeKind::VariableStackAccess,
                format!("stack pointer {dst} advanced by non-constant scalar"),
            ),
        },
        RegType::CtxPtr { off } => match rhs.const_value() {
            Some(c) => {
                let (lo, _) = apply(off, off, c, c);
                let mut next = state.advanced(state.pc + 1);
                next.set_reg(dst, RegType::CtxPtr { off: lo });
                StepOutcome::Continue(vec![next])
            }
            None => unsafe_step(
                UnsafeKind::TypeViolation,
                format!("context pointer {dst} advanced by non-constant scalar"),
            ),
        },
        RegType::MapPtr { map_id, off_lo, off_hi } => {
            let padded = prog.map(map_id).expect("validated map id").padded_size as u64;
            let (add_lo, add_hi) = match rhs.const_value() {
                Some(c) => (c, c),
                None if rhs.tnum.max() <= padded - 1 => {
                    // Known bits bound the index branchlessly; ranges from
                    // branch refinement are not trusted here because a
                    // misprediction bypasses them.
                    (rhs.tnum.min(), rhs.tnum.max())
                }
                None if masks.site_is_masked(state.pc) => (0, padded - 1),
                None => (rhs.umin, rhs.umax),
            };
            let (lo, hi) = apply(off_lo, off_hi, add_lo, add_hi);
            let mut next = state.advanced(state.pc + 1);
            next.set_reg(dst, RegType::MapPtr { map_id, off_lo: lo, off_hi: hi });
            StepOutcome::Continue(vec![next])
        }
        _ => unreachable!(),
    }
}

fn load(
    state: &AbstractState,
    prog: &Program,
    dst: Register,
    src: Register,
    off: i16,
    size: MemSize,
) -> StepOutcome {
    let bytes = size.bytes();
    let loaded = match *state.reg(src) {
        RegType::Uninit => {
            return unsafe_step(UnsafeKind::UninitRead, format!("{src} read uninitialized"))
        }
        RegType::Scalar(_) => {
            return unsafe_step(
                UnsafeKind::TypeViolation,
                format!("dereference of scalar {src}"),
            )
        }
        RegType::StackPtr { off: base } => {
            let addr = base + off as i64;
            if !stack_in_bounds(addr, bytes) {
                return unsafe_step(
                    UnsafeKind::Breakout,
                    format!("stack access at fp{addr:+} size {bytes}"),
                );
            }
            match stack_load_type(state, addr, size) {
                Ok(t) => t,
                Err(o) => return o,
            }
        }
        RegType::CtxPtr { off: base } => {
            let addr = base + off as i64;
            if addr < 0 || addr + bytes as i64 > prog.ctx_size as i64 {
                return unsafe_step(
                    UnsafeKind::Breakout,
                    format!("context access at {addr} size {bytes} exceeds {}", prog.ctx_size),
                );
            }
            RegType::Scalar(ScalarInfo::unknown())
        }
        RegType::MapPtr { map_id, off_lo, off_hi } => {
            let padded = prog.map(map_id).expect("validated map id").padded_size as i64;
            let lo = off_lo + off as i64;
            let hi = off_hi + off as i64 + bytes as i64;
            if lo < 0 || hi > padded {
                return unsafe_step(
                    UnsafeKind::Breakout,
                    format!("map {map_id} access in [{lo},{hi}) exceeds {padded}"),
                );
            }
            RegType::Scalar(ScalarInfo::unknown())
        }
    };
    let mut next = state.advanced(state.pc + 1);
    next.set_reg(dst, loaded);
    StepOutcome::Continue(vec![next])
}

/// Type of the value produced by an in-bounds stack load.
fn stack_load_type(state: &AbstractState, addr: i64, size: MemSize) -> Result<RegType, StepOutcome> {
    let bytes = size.bytes() as i64;
    for i in 0..bytes {
        let (slot, byte) = slot_of(addr + i);
        if !state.stack[slot].byte_initialized(byte) {
            return Err(unsafe_step(
                UnsafeKind::UninitRead,
                format!("stack byte fp{:+} read uninitialized", addr + i),
            ));
        }
    }
    // A full, aligned reload of a spilled pointer restores it; any partial
    // read of pointer bytes degrades to an unknown scalar.
    if size == MemSize::U64 && addr % 8 == 0 {
        let (slot, _) = slot_of(addr);
        let restored = match state.stack[slot] {
            SlotType::StackPtr { off } => Some(RegType::StackPtr { off }),
            SlotType::CtxPtr { off } => Some(RegType::CtxPtr { off }),
            SlotType::MapPtr { map_id, off_lo, off_hi } => {
                Some(RegType::MapPtr { map_id, off_lo, off_hi })
            }
            _ => None,
        };
        if let Some(t) = restored {
            return Ok(t);
        }
    }
    Ok(RegType::Scalar(ScalarInfo::unknown()))
}

fn store(
    state: &AbstractState,
    prog: &Program,
    dst: Register,
    off: i16,
    size: MemSize,
    value: RegType,
) -> StepOutcome {
    let bytes = size.bytes();
    match *state.reg(dst) {
        RegType::Uninit => {
            unsafe_step(UnsafeKind::UninitRead, format!("{dst} read uninitialized"))
        }
        RegType::Scalar(_) => unsafe_step(
            UnsafeKind::TypeViolation,
            format!("store through scalar {dst}"),
        ),
        RegType::CtxPtr { .. } => unsafe_step(
            UnsafeKind::TypeViolation,
            "store to read-only context region",
        ),
        RegType::MapPtr { map_id, off_lo, off_hi } => {
            let padded = prog.map(map_id).expect("validated map id").padded_size as i64;
            let lo = off_lo + off as i64;
            let hi = off_hi + off as i64 + bytes as i64;
            if lo < 0 || hi > padded {
                return unsafe_step(
                    UnsafeKind::Breakout,
                    format!("map {map_id} store in [{lo},{hi}) exceeds {padded}"),
                );
            }
            // Map memory is untyped; stored pointers degrade to bytes.
            StepOutcome::Continue(vec![state.advanced(state.pc + 1)])
        }
        RegType::StackPtr { off: base } => {
            let addr = base + off as i64;
            if !stack_in_bounds(addr, bytes) {
                return unsafe_step(
                    UnsafeKind::Breakout,
                    format!("stack store at fp{addr:+} size {bytes}"),
                );
            }
            let mut next = state.advanced(state.pc + 1);
            if value.is_pointer() {
                if size != MemSize::U64 || addr % 8 != 0 {
                    return unsafe_step(
                        UnsafeKind::TypeViolation,
                        "pointer spill must be 8 bytes, 8-byte aligned",
                    );
                }
                let (slot, _) = slot_of(addr);
                next.stack[slot] = match value {
                    RegType::StackPtr { off } => SlotType::StackPtr { off },
                    RegType::CtxPtr { off } => SlotType::CtxPtr { off },
                    RegType::MapPtr { map_id, off_lo, off_hi } => {
                        SlotType::MapPtr { map_id, off_lo, off_hi }
                    }
                    _ => unreachable!(),
                };
            } else {
                for i in 0..bytes as i64 {
                    let (slot, byte) = slot_of(addr + i);
                    let init = match next.stack[slot] {
                        SlotType::Scalar { init } => init,
                        // Overwriting part of a spilled pointer leaves the
                        // remaining bytes as initialized raw data.
                        s if s.is_pointer() => 0xff,
                        _ => 0,
                    };
                    next.stack[slot] = SlotType::Scalar { init: init | (1 << byte) };
                }
            }
            StepOutcome::Continue(vec![next])
        }
    }
}

/// Outcome of stepping a conditional branch, keeping the two directions
/// apart so the path engine can spawn mispredicted explorations.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchStep {
    Unsafe(UnsafeKind, String),
    Forks {
        taken_pc: usize,
        fallthrough_pc: usize,
        /// Refined successor for the taken direction; `None` when the
        /// condition contradicts it architecturally.
        taken: Option<AbstractState>,
        fallthrough: Option<AbstractState>,
    },
}

/// Steps a conditional branch. On architectural states the condition
/// refines each feasible direction; on speculative states both directions
/// survive unrefined, since a transient path may take either regardless of
/// the operands.
pub fn branch_step(state: &AbstractState, insn: &Instruction) -> BranchStep {
    let (cond, lhs, rhs, off) = match *insn {
        Instruction::JcondImm { cond, lhs, imm, off } => (cond, lhs, Operand::Imm(imm), off),
        Instruction::JcondReg { cond, lhs, rhs, off } => (cond, lhs, Operand::Reg(rhs), off),
        _ => panic!("branch_step on non-branch {insn:?}"),
    };
    let lhs_info = match operand_scalar(state, &Operand::Reg(lhs)) {
        Ok(s) => s,
        Err(StepOutcome::Unsafe(kind, detail)) => return BranchStep::Unsafe(kind, detail),
        Err(_) => unreachable!(),
    };
    let rhs_info = match operand_scalar(state, &rhs) {
        Ok(s) => s,
        Err(StepOutcome::Unsafe(kind, detail)) => return BranchStep::Unsafe(kind, detail),
        Err(_) => unreachable!(),
    };
    let taken_pc = (state.pc as i64 + 1 + off as i64) as usize;
    let fallthrough_pc = state.pc + 1;

    if state.speculative {
        return BranchStep::Forks {
            taken_pc,
            fallthrough_pc,
            taken: Some(state.advanced(taken_pc)),
            fallthrough: Some(state.advanced(fallthrough_pc)),
        };
    }

    let direction = |taken: bool, pc: usize| -> Option<AbstractState> {
        match refine_on_branch(cond, lhs_info, rhs_info, taken) {
            Refinement::Infeasible => None,
            Refinement::Refined(l, r) => {
                let mut next = state.advanced(pc);
                next.set_reg(lhs, RegType::Scalar(l));
                if let Operand::Reg(rr) = rhs {
                    if rr != lhs {
                        next.set_reg(rr, RegType::Scalar(r));
                    }
                }
                Some(next)
            }
        }
    };
    let taken = direction(true, taken_pc);
    let fallthrough = direction(false, fallthrough_pc);
    debug_assert!(
        taken.is_some() || fallthrough.is_some(),
        "a branch direction must be feasible"
    );
    BranchStep::Forks { taken_pc, fallthrough_pc, taken, fallthrough }
}

fn branch(
    state: &AbstractState,
    cond: crate::isa::CondOp,
    lhs: Register,
    rhs: Operand,
    off: i16,
) -> StepOutcome {
    let insn = match rhs {
        Operand::Imm(imm) => Instruction::JcondImm { cond, lhs, imm, off },
        Operand::Reg(rhs) => Instruction::JcondReg { cond, lhs, rhs, off },
    };
    match branch_step(state, &insn) {
        BranchStep::Unsafe(kind, detail) => StepOutcome::Unsafe(kind, detail),
        BranchStep::Forks { taken, fallthrough, .. } => {
            StepOutcome::Continue(taken.into_iter().chain(fallthrough).collect())
        }
    }
}
