//! Materializes patch directives into a rewritten program and lowers
//! barriers for targets that do not need both kinds.
//!
//! Insertion semantics: a `Before` directive lands between the target
//! instruction and *all* of its predecessors, so jumps into the target are
//! redirected onto the inserted instruction (a speculative path entering a
//! fenced block must hit the barrier first). An `After` directive lands on
//! the fallthrough edge only; jumps around it are untouched.

use crate::isa::{AluOp, Instruction, Program};
use crate::verifier::{PatchDirective, PatchKind, Placement};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatchError {
    #[error("directive index {0} is outside the program")]
    InvalidIndex(usize),
    #[error("duplicate directive at index {0}")]
    DuplicateDirective(usize),
    #[error("directive kind and placement disagree at index {0}")]
    BadPlacement(usize),
    #[error("map {0} is not declared")]
    UnknownMap(u32),
    #[error("a rewritten jump displacement does not fit in 16 bits")]
    DisplacementOverflow,
}

/// A patched program together with the mapping from original instruction
/// indices to their new positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Patched {
    pub program: Program,
    /// `index_map[i]` is the new index of original instruction `i`.
    pub index_map: Vec<usize>,
}

fn materialize(kind: PatchKind, prog: &Program) -> Result<Instruction, PatchError> {
    Ok(match kind {
        PatchKind::NospecV1 => Instruction::NospecV1,
        PatchKind::NospecV4 => Instruction::NospecV4,
        PatchKind::MaskIndex { map_id, reg } => {
            let map = prog.map(map_id).ok_or(PatchError::UnknownMap(map_id))?;
            Instruction::AluImm { op: AluOp::And, dst: reg, imm: (map.padded_size - 1) as i64 }
        }
    })
}

/// Inserts every directive and recomputes all jump displacements so each
/// control edge connects the same logical instructions as before.
pub fn apply_patches(prog: &Program, directives: &[PatchDirective]) -> Result<Patched, PatchError> {
    let len = prog.instructions.len();
    let mut sorted: Vec<PatchDirective> = directives.to_vec();
    sorted.sort_unstable_by_key(|d| (d.index, d.kind, d.placement));
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(PatchError::DuplicateDirective(pair[0].index));
        }
    }
    let mut before: Vec<Vec<Instruction>> = vec![Vec::new(); len];
    let mut after: Vec<Vec<Instruction>> = vec![Vec::new(); len];
    for d in &sorted {
        if d.index >= len {
            return Err(PatchError::InvalidIndex(d.index));
        }
        let expected = match d.kind {
            PatchKind::NospecV1 | PatchKind::MaskIndex { .. } => Placement::Before,
            PatchKind::NospecV4 => Placement::After,
        };
        if d.placement != expected {
            return Err(PatchError::BadPlacement(d.index));
        }
        let insn = materialize(d.kind, prog)?;
        match d.placement {
            Placement::Before => before[d.index].push(insn),
            Placement::After => after[d.index].push(insn),
        }
    }

    // Lay out the new instruction stream and both index views: where each
    // original instruction went, and where a jump into it should land.
    let mut instructions = Vec::with_capacity(len + sorted.len());
    let mut index_map = Vec::with_capacity(len);
    let mut entry_map = Vec::with_capacity(len);
    for i in 0..len {
        entry_map.push(instructions.len());
        instructions.extend(before[i].iter().copied());
        index_map.push(instructions.len());
        instructions.push(prog.instructions[i]);
        instructions.extend(after[i].iter().copied());
    }

    for (i, insn) in prog.instructions.iter().enumerate() {
        if let Some(off) = insn.jump_off() {
            let target = (i as i64 + 1 + off as i64) as usize;
            let new_off = entry_map[target] as i64 - index_map[i] as i64 - 1;
            let new_off = i16::try_from(new_off).map_err(|_| PatchError::DisplacementOverflow)?;
            instructions[index_map[i]] = insn.with_jump_off(new_off);
        }
    }

    let program = Program {
        name: prog.name.clone(),
        instructions,
        maps: prog.maps.clone(),
        ctx_size: prog.ctx_size,
    };
    Ok(Patched { program, index_map })
}

/// What the execution target needs barriers lowered to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoweringTarget {
    /// Keeps both barrier kinds.
    FenceMachine,
    /// Store-bypass is already defended below the ISA; `nospec_v4` drops
    /// out, `nospec_v1` stays.
    NoopMachine,
}

/// Drops barrier instructions the target does not need, re-fixing jumps.
pub fn lower_barriers(prog: &Program, target: LoweringTarget) -> Result<Program, PatchError> {
    if target == LoweringTarget::FenceMachine {
        return Ok(prog.clone());
    }
    let len = prog.instructions.len();
    let keep: Vec<bool> =
        prog.instructions.iter().map(|i| !matches!(i, Instruction::NospecV4)).collect();
    // New position of each kept instruction; removed ones forward to the
    // next kept instruction, which is where a jump onto them should land.
    let mut new_pos = vec![0usize; len + 1];
    let mut pos = 0;
    for i in 0..len {
        new_pos[i] = pos;
        if keep[i] {
            pos += 1;
        }
    }
    new_pos[len] = pos;

    let mut instructions = Vec::with_capacity(pos);
    for (i, insn) in prog.instructions.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let insn = if let Some(off) = insn.jump_off() {
            let target_idx = (i as i64 + 1 + off as i64) as usize;
            let new_off = new_pos[target_idx] as i64 - new_pos[i] as i64 - 1;
            insn.with_jump_off(
                i16::try_from(new_off).map_err(|_| PatchError::DisplacementOverflow)?,
            )
        } else {
            *insn
        };
        instructions.push(insn);
    }
    Ok(Program {
        name: prog.name.clone(),
        instructions,
        maps: prog.maps.clone(),
        ctx_size: prog.ctx_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_asm, validate_structure, Register};

    fn v1(index: usize) -> PatchDirective {
        PatchDirective { index, kind: PatchKind::NospecV1, placement: Placement::Before }
    }

    fn v4(index: usize) -> PatchDirective {
        PatchDirective { index, kind: PatchKind::NospecV4, placement: Placement::After }
    }

    #[test]
    fn empty_directives_are_identity() {
        let p = parse_asm("r0 = 0\nif r0 == 0 goto L\nr0 = 1\nL: exit").unwrap();
        let patched = apply_patches(&p, &[]).unwrap();
        assert!(patched.program.same_code(&p));
        assert_eq!(patched.index_map, vec![0, 1, 2, 3]);
    }

    #[test]
    fn jump_into_patched_target_lands_on_the_barrier() {
        // Both the fallthrough edge and the jump edge into instruction 2
        // must execute the inserted barrier first.
        let src = "\
    r0 = 0
    if r0 == 0 goto B
B:  r0 = 1
    exit
";
        let p = parse_asm(src).unwrap();
        let patched = apply_patches(&p, &[v1(2)]).unwrap();
        let q = &patched.program;
        assert!(validate_structure(q).is_empty());
        assert_eq!(q.instructions[2], Instruction::NospecV1);
        // Original instruction 2 moved to 3; the branch at 1 lands on 2.
        assert_eq!(patched.index_map, vec![0, 1, 3, 4]);
        assert_eq!(q.instructions[1].jump_off(), Some(0), "branch targets the barrier");
    }

    #[test]
    fn after_insertions_stay_off_the_jump_edge() {
        // A jump over a store skips the store's after-barrier too.
        let src = "\
    r2 = 1
    if r2 == 1 goto OVER
    *(u64)(fp - 8) = r2
OVER: exit
";
        let p = parse_asm(src).unwrap();
        let patched = apply_patches(&p, &[v4(2)]).unwrap();
        let q = &patched.program;
        assert!(validate_structure(q).is_empty());
        assert_eq!(q.instructions[3], Instruction::NospecV4);
        // The jump still lands on `exit`, now at index 4.
        assert_eq!(q.instructions[1].jump_off(), Some(2));
    }

    #[test]
    fn backward_jump_grows_by_the_insertions_inside_its_span() {
        let src = "\
    r2 = 3
L:  r2 -= 1
    *(u64)(fp - 8) = r2
    if r2 != 0 goto L
    exit
";
        let p = parse_asm(src).unwrap();
        assert_eq!(p.instructions[3].jump_off(), Some(-3));
        let patched = apply_patches(&p, &[v4(2)]).unwrap();
        // One insertion inside the span: displacement magnitude grows by 1.
        assert_eq!(patched.program.instructions[4].jump_off(), Some(-4));
        assert!(validate_structure(&patched.program).is_empty());
    }

    #[test]
    fn mask_directives_materialize_as_and() {
        let p = parse_asm(".map 0 size=48\nr2 = map_ptr 0\nr2 += r3\nexit").unwrap();
        let d = PatchDirective {
            index: 1,
            kind: PatchKind::MaskIndex { map_id: 0, reg: Register::new(3).unwrap() },
            placement: Placement::Before,
        };
        let patched = apply_patches(&p, &[d]).unwrap();
        assert_eq!(
            patched.program.instructions[1],
            Instruction::AluImm { op: AluOp::And, dst: Register::new(3).unwrap(), imm: 63 }
        );
    }

    #[test]
    fn length_accounting() {
        let p = parse_asm("r0 = 0\n*(u64)(fp - 8) = r0\nexit").unwrap();
        let directives = [v1(0), v4(1), v1(2)];
        let patched = apply_patches(&p, &directives).unwrap();
        assert_eq!(patched.program.len(), p.len() + directives.len());
    }

    #[test]
    fn duplicates_and_bad_indices_error() {
        let p = parse_asm("r0 = 0\nexit").unwrap();
        assert_eq!(apply_patches(&p, &[v1(0), v1(0)]), Err(PatchError::DuplicateDirective(0)));
        assert_eq!(apply_patches(&p, &[v1(7)]), Err(PatchError::InvalidIndex(7)));
        let bad =
            PatchDirective { index: 0, kind: PatchKind::NospecV1, placement: Placement::After };
        assert_eq!(apply_patches(&p, &[bad]), Err(PatchError::BadPlacement(0)));
    }

    #[test]
    fn lowering_drops_v4_and_keeps_v1() {
        let src = "\
    r2 = 1
    *(u64)(fp - 8) = r2
    nospec_v4
    if r2 == 1 goto OUT
    nospec_v1
    *(u64)(fp - 16) = r2
    nospec_v4
OUT: exit
";
        let p = parse_asm(src).unwrap();
        let lowered = lower_barriers(&p, LoweringTarget::NoopMachine).unwrap();
        assert_eq!(lowered.len(), p.len() - 2);
        assert!(lowered.instructions.iter().all(|i| *i != Instruction::NospecV4));
        assert_eq!(lowered.instructions.iter().filter(|i| **i == Instruction::NospecV1).count(), 1);
        assert!(validate_structure(&lowered).is_empty());
        // The branch (now at index 2) lands on `exit` at its new position 5.
        assert_eq!(lowered.instructions[2].jump_off(), Some(2));

        let unchanged = lower_barriers(&p, LoweringTarget::FenceMachine).unwrap();
        assert!(unchanged.same_code(&p));

        let no_barriers = parse_asm("r0 = 0\nexit").unwrap();
        let lowered = lower_barriers(&no_barriers, LoweringTarget::NoopMachine).unwrap();
        assert!(lowered.same_code(&no_barriers));
    }
}
