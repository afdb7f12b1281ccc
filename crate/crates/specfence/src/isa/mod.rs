//! Instruction set, program container, and the textual assembly format.
//!
//! The bytecode is a deliberately small register machine: eleven 64-bit
//! registers (`r0`..`r9` general purpose, `r10`/`fp` a read-only frame
//! pointer), a 512-byte stack below `fp`, a read-only context region, and
//! zero or more map value regions obtained through `map_ptr`. Control flow
//! is conditional/unconditional jumps with instruction-relative
//! displacements; every program ends in `exit`.
//!
//! Two speculation barrier instructions exist: `nospec_v1` (placed before
//! an instruction, terminates speculation that would reach it) and
//! `nospec_v4` (placed after a store, terminates speculation that would
//! bypass it). Both are architectural no-ops.

mod emit;
mod parse;

pub use emit::emit_asm;
pub use parse::{parse_asm, ParseError};

use serde::{Deserialize, Serialize};

/// Number of registers, including the frame pointer.
pub const REG_COUNT: usize = 11;

/// Index of the frame pointer register.
pub const FP: u8 = 10;

/// Size of the stack region in bytes. The stack occupies `[fp-512, fp)`.
pub const STACK_SIZE: i64 = 512;

/// Largest accepted map value size. Map regions are laid out on fixed
/// 4 KiB strides by the simulator, so padded sizes may not exceed that.
pub const MAX_MAP_VALUE_SIZE: u32 = 4096;

/// A register operand, `r0`..`r9` or `fp` (= `r10`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Register(u8);

impl Register {
    /// Creates a register from its index. Returns `None` above `r10`.
    pub fn new(index: u8) -> Option<Register> {
        (index < REG_COUNT as u8).then_some(Register(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn is_fp(self) -> bool {
        self.0 == FP
    }

    /// The frame pointer, `r10`.
    pub fn fp() -> Register {
        Register(FP)
    }
}

impl std::fmt::Display for Register {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_fp() {
            write!(f, "fp")
        } else {
            write!(f, "r{}", self.0)
        }
    }
}

/// Arithmetic/logic operations on 64-bit scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Lsh,
    Rsh,
    Arsh,
    Mul,
}

impl AluOp {
    /// Concrete 64-bit semantics. Shift amounts are taken modulo 64.
    pub fn apply(self, lhs: u64, rhs: u64) -> u64 {
        match self {
            AluOp::Add => lhs.wrapping_add(rhs),
            AluOp::Sub => lhs.wrapping_sub(rhs),
            AluOp::And => lhs & rhs,
            AluOp::Or => lhs | rhs,
            AluOp::Xor => lhs ^ rhs,
            AluOp::Lsh => lhs.wrapping_shl(rhs as u32 & 63),
            AluOp::Rsh => lhs.wrapping_shr(rhs as u32 & 63),
            AluOp::Arsh => ((lhs as i64).wrapping_shr(rhs as u32 & 63)) as u64,
            AluOp::Mul => lhs.wrapping_mul(rhs),
        }
    }

    pub fn is_shift(self) -> bool {
        matches!(self, AluOp::Lsh | AluOp::Rsh | AluOp::Arsh)
    }
}

/// Branch comparison. `S*` variants compare as signed 64-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CondOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Slt,
    Sle,
    Sgt,
    Sge,
}

impl CondOp {
    /// Concrete comparison semantics shared by the verifier's oracles and
    /// the simulator.
    pub fn eval(self, lhs: u64, rhs: u64) -> bool {
        match self {
            CondOp::Eq => lhs == rhs,
            CondOp::Ne => lhs != rhs,
            CondOp::Lt => lhs < rhs,
            CondOp::Le => lhs <= rhs,
            CondOp::Gt => lhs > rhs,
            CondOp::Ge => lhs >= rhs,
            CondOp::Slt => (lhs as i64) < rhs as i64,
            CondOp::Sle => (lhs as i64) <= rhs as i64,
            CondOp::Sgt => (lhs as i64) > rhs as i64,
            CondOp::Sge => (lhs as i64) >= rhs as i64,
        }
    }

    /// The comparison that holds exactly when `self` does not.
    pub fn negate(self) -> CondOp {
        match self {
            CondOp::Eq => CondOp::Ne,
            CondOp::Ne => CondOp::Eq,
            CondOp::Lt => CondOp::Ge,
            CondOp::Ge => CondOp::Lt,
            CondOp::Le => CondOp::Gt,
            CondOp::Gt => CondOp::Le,
            CondOp::Slt => CondOp::Sge,
            CondOp::Sge => CondOp::Slt,
            CondOp::Sle => CondOp::Sgt,
            CondOp::Sgt => CondOp::Sle,
        }
    }
}

/// Memory access width in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MemSize {
    U8,
    U16,
    U32,
    U64,
}

impl MemSize {
    pub fn bytes(self) -> u32 {
        match self {
            MemSize::U8 => 1,
            MemSize::U16 => 2,
            MemSize::U32 => 4,
            MemSize::U64 => 8,
        }
    }

    pub fn from_bytes(n: u32) -> Option<MemSize> {
        match n {
            1 => Some(MemSize::U8),
            2 => Some(MemSize::U16),
            4 => Some(MemSize::U32),
            8 => Some(MemSize::U64),
            _ => None,
        }
    }

    /// Truncates a 64-bit value to this width.
    pub fn truncate(self, v: u64) -> u64 {
        match self {
            MemSize::U8 => v as u8 as u64,
            MemSize::U16 => v as u16 as u64,
            MemSize::U32 => v as u32 as u64,
            MemSize::U64 => v,
        }
    }
}

/// A decoded instruction.
///
/// Jump displacements are relative to the *next* instruction, so `off = 0`
/// falls through and `off = -2` re-executes the jump's predecessor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    /// `rD = IMM`
    MovImm { dst: Register, imm: i64 },
    /// `rD = rS`
    MovReg { dst: Register, src: Register },
    /// `rD op= IMM`
    AluImm { op: AluOp, dst: Register, imm: i64 },
    /// `rD op= rS`
    AluReg { op: AluOp, dst: Register, src: Register },
    /// `rD = *(uN)(rS + OFF)`
    Load { dst: Register, src: Register, off: i16, size: MemSize },
    /// `*(uN)(rD + OFF) = rS`
    StoreReg { dst: Register, src: Register, off: i16, size: MemSize },
    /// `*(uN)(rD + OFF) = IMM`
    StoreImm { dst: Register, imm: i64, off: i16, size: MemSize },
    /// `goto L`
    Jmp { off: i16 },
    /// `if rA cond IMM goto L`
    JcondImm { cond: CondOp, lhs: Register, imm: i64, off: i16 },
    /// `if rA cond rB goto L`
    JcondReg { cond: CondOp, lhs: Register, rhs: Register, off: i16 },
    /// `rD = map_ptr M` — a non-null pointer to map `M`'s value memory.
    MapPtr { dst: Register, map_id: u32 },
    /// `exit`
    Exit,
    /// Speculation barrier against branch misprediction.
    NospecV1,
    /// Speculation barrier against store bypass.
    NospecV4,
}

impl Instruction {
    /// The register this instruction writes, if any. Store instructions
    /// write memory, not a register.
    pub fn written_reg(&self) -> Option<Register> {
        match *self {
            Instruction::MovImm { dst, .. }
            | Instruction::MovReg { dst, .. }
            | Instruction::AluImm { dst, .. }
            | Instruction::AluReg { dst, .. }
            | Instruction::Load { dst, .. }
            | Instruction::MapPtr { dst, .. } => Some(dst),
            _ => None,
        }
    }

    /// Jump displacement for `Jmp`/`Jcond*`.
    pub fn jump_off(&self) -> Option<i16> {
        match *self {
            Instruction::Jmp { off }
            | Instruction::JcondImm { off, .. }
            | Instruction::JcondReg { off, .. } => Some(off),
            _ => None,
        }
    }

    pub fn is_cond_jump(&self) -> bool {
        matches!(self, Instruction::JcondImm { .. } | Instruction::JcondReg { .. })
    }

    pub fn is_store(&self) -> bool {
        matches!(self, Instruction::StoreReg { .. } | Instruction::StoreImm { .. })
    }

    /// Rewrites the jump displacement; panics on non-jump instructions.
    pub(crate) fn with_jump_off(self, new_off: i16) -> Instruction {
        match self {
            Instruction::Jmp { .. } => Instruction::Jmp { off: new_off },
            Instruction::JcondImm { cond, lhs, imm, .. } => {
                Instruction::JcondImm { cond, lhs, imm, off: new_off }
            }
            Instruction::JcondReg { cond, lhs, rhs, .. } => {
                Instruction::JcondReg { cond, lhs, rhs, off: new_off }
            }
            other => panic!("not a jump: {other:?}"),
        }
    }
}

/// Declaration of a map value region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapDecl {
    pub id: u32,
    /// Requested value size in bytes.
    pub value_size: u32,
    /// `value_size` ceiled to the next power of two; the verifier masks
    /// variable indices with `padded_size - 1` and the simulator backs the
    /// region with this many bytes (padding reads as zero).
    pub padded_size: u32,
}

impl MapDecl {
    pub fn new(id: u32, value_size: u32) -> MapDecl {
        MapDecl { id, value_size, padded_size: value_size.next_power_of_two() }
    }
}

/// A parsed program: instructions plus region declarations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub name: String,
    pub instructions: Vec<Instruction>,
    pub maps: Vec<MapDecl>,
    /// Size of the read-only context region in bytes.
    pub ctx_size: u32,
}

impl Program {
    pub fn map(&self, id: u32) -> Option<&MapDecl> {
        self.maps.iter().find(|m| m.id == id)
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Instruction-stream equality, ignoring the program name.
    pub fn same_code(&self, other: &Program) -> bool {
        self.instructions == other.instructions
            && self.maps == other.maps
            && self.ctx_size == other.ctx_size
    }
}

/// A structural defect found by [`validate_structure`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StructuralError {
    #[error("program is empty")]
    EmptyProgram,
    #[error("instruction {index}: jump target {target} is outside the program")]
    JumpOutOfRange { index: usize, target: i64 },
    #[error("instruction {index}: write to frame pointer")]
    WriteToFramePointer { index: usize },
    #[error("instruction {index}: shift amount {amount} not in 0..=63")]
    ShiftOutOfRange { index: usize, amount: i64 },
    #[error("instruction {index}: map {map_id} is not declared")]
    UnknownMap { index: usize, map_id: u32 },
    #[error("last instruction may fall through past the end of the program")]
    MissingTerminator,
    #[error("map {map_id}: value size {size} not in 1..={max}", max = MAX_MAP_VALUE_SIZE)]
    BadMapSize { map_id: u32, size: u32 },
}

/// Checks every structural invariant. An empty result means the program can
/// be fed to the verifier and the simulator without index faults.
pub fn validate_structure(p: &Program) -> Vec<StructuralError> {
    let mut errors = Vec::new();
    if p.instructions.is_empty() {
        errors.push(StructuralError::EmptyProgram);
        return errors;
    }
    let len = p.instructions.len() as i64;
    for (index, insn) in p.instructions.iter().enumerate() {
        if let Some(dst) = insn.written_reg() {
            if dst.is_fp() {
                errors.push(StructuralError::WriteToFramePointer { index });
            }
        }
        if let Some(off) = insn.jump_off() {
            let target = index as i64 + 1 + off as i64;
            if target < 0 || target >= len {
                errors.push(StructuralError::JumpOutOfRange { index, target });
            }
        }
        if let Instruction::AluImm { op, imm, .. } = insn {
            if op.is_shift() && !(0..=63).contains(imm) {
                errors.push(StructuralError::ShiftOutOfRange { index, amount: *imm });
            }
        }
        if let Instruction::MapPtr { map_id, .. } = insn {
            if p.map(*map_id).is_none() {
                errors.push(StructuralError::UnknownMap { index, map_id: *map_id });
            }
        }
    }
    // No fallthrough off the end: the last instruction must be exit or an
    // unconditional jump.
    match p.instructions.last() {
        Some(Instruction::Exit) | Some(Instruction::Jmp { .. }) => {}
        _ => errors.push(StructuralError::MissingTerminator),
    }
    for m in &p.maps {
        if m.value_size == 0 || m.value_size > MAX_MAP_VALUE_SIZE {
            errors.push(StructuralError::BadMapSize { map_id: m.id, size: m.value_size });
        }
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prog(insns: Vec<Instruction>) -> Program {
        Program { name: String::new(), instructions: insns, maps: vec![], ctx_size: 0 }
    }

    fn r(i: u8) -> Register {
        Register::new(i).unwrap()
    }

    #[test]
    fn smallest_valid_program() {
        let p = prog(vec![Instruction::MovImm { dst: r(0), imm: 0 }, Instruction::Exit]);
        assert!(validate_structure(&p).is_empty());
    }

    #[test]
    fn jump_out_of_range_is_reported() {
        let p = prog(vec![Instruction::Jmp { off: 5 }, Instruction::Exit]);
        assert_eq!(
            validate_structure(&p),
            vec![StructuralError::JumpOutOfRange { index: 0, target: 6 }]
        );
    }

    #[test]
    fn write_to_fp_is_reported() {
        let p = prog(vec![Instruction::MovImm { dst: r(10), imm: 0 }, Instruction::Exit]);
        assert_eq!(
            validate_structure(&p),
            vec![StructuralError::WriteToFramePointer { index: 0 }]
        );
    }

    #[test]
    fn fallthrough_off_the_end_is_reported() {
        let p = prog(vec![Instruction::MovImm { dst: r(0), imm: 0 }]);
        assert_eq!(validate_structure(&p), vec![StructuralError::MissingTerminator]);
        let p = prog(vec![Instruction::Exit, Instruction::NospecV1]);
        assert_eq!(validate_structure(&p), vec![StructuralError::MissingTerminator]);
    }

    #[test]
    fn shift_range_is_checked() {
        let p = prog(vec![
            Instruction::AluImm { op: AluOp::Lsh, dst: r(1), imm: 64 },
            Instruction::Exit,
        ]);
        assert_eq!(
            validate_structure(&p),
            vec![StructuralError::ShiftOutOfRange { index: 0, amount: 64 }]
        );
    }

    #[test]
    fn map_references_must_resolve() {
        let p = prog(vec![Instruction::MapPtr { dst: r(1), map_id: 3 }, Instruction::Exit]);
        assert_eq!(
            validate_structure(&p),
            vec![StructuralError::UnknownMap { index: 0, map_id: 3 }]
        );
    }

    #[test]
    fn padded_size_is_minimal_power_of_two() {
        // Brute-force oracle over the full accepted size range.
        for size in 1..=MAX_MAP_VALUE_SIZE {
            let padded = MapDecl::new(0, size).padded_size;
            assert!(padded.is_power_of_two());
            assert!(padded >= size);
            assert!(padded / 2 < size, "padded {padded} not minimal for {size}");
        }
    }

    #[test]
    fn alu_shift_semantics_mask_the_amount() {
        assert_eq!(AluOp::Lsh.apply(1, 65), 2);
        assert_eq!(AluOp::Arsh.apply(u64::MAX, 3), u64::MAX);
        assert_eq!(AluOp::Rsh.apply(u64::MAX, 63), 1);
    }
}
