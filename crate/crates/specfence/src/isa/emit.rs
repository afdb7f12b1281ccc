//! Renders a program back to assembly source. `parse_asm(emit_asm(p))`
//! reproduces `p` instruction for instruction.

use super::{AluOp, CondOp, Instruction, MemSize, Program};
use std::collections::BTreeMap;
use std::fmt::Write;

fn alu_assign(op: AluOp) -> &'static str {
    match op {
        AluOp::Add => "+=",
        AluOp::Sub => "-=",
        AluOp::And => "&=",
        AluOp::Or => "|=",
        AluOp::Xor => "^=",
        AluOp::Lsh => "<<=",
        AluOp::Rsh => ">>=",
        AluOp::Arsh => "s>>=",
        AluOp::Mul => "*=",
    }
}

fn cond_str(cond: CondOp) -> &'static str {
    match cond {
        CondOp::Eq => "==",
        CondOp::Ne => "!=",
        CondOp::Lt => "<",
        CondOp::Le => "<=",
        CondOp::Gt => ">",
        CondOp::Ge => ">=",
        CondOp::Slt => "s<",
        CondOp::Sle => "s<=",
        CondOp::Sgt => "s>",
        CondOp::Sge => "s>=",
    }
}

fn size_str(size: MemSize) -> &'static str {
    match size {
        MemSize::U8 => "u8",
        MemSize::U16 => "u16",
        MemSize::U32 => "u32",
        MemSize::U64 => "u64",
    }
}

fn mem_operand(base: super::Register, off: i16) -> String {
    if off < 0 {
        format!("({base} - {})", -(off as i32))
    } else {
        format!("({base} + {off})")
    }
}

/// Emits assembly source for a structurally valid program.
pub fn emit_asm(p: &Program) -> String {
    // Assign labels to jump targets in address order.
    let mut targets: BTreeMap<usize, String> = BTreeMap::new();
    for (index, insn) in p.instructions.iter().enumerate() {
        if let Some(off) = insn.jump_off() {
            let target = (index as i64 + 1 + off as i64) as usize;
            targets.entry(target).or_default();
        }
    }
    for (n, label) in targets.values_mut().enumerate() {
        *label = format!("L{n}");
    }

    let mut out = String::new();
    if p.ctx_size > 0 {
        writeln!(out, ".ctx size={}", p.ctx_size).unwrap();
    }
    for m in &p.maps {
        writeln!(out, ".map {} size={}", m.id, m.value_size).unwrap();
    }
    for (index, insn) in p.instructions.iter().enumerate() {
        if let Some(label) = targets.get(&index) {
            writeln!(out, "{label}:").unwrap();
        }
        let target_label = |off: i16| {
            let t = (index as i64 + 1 + off as i64) as usize;
            targets[&t].clone()
        };
        let line = match *insn {
            Instruction::MovImm { dst, imm } => format!("{dst} = {imm}"),
            Instruction::MovReg { dst, src } => format!("{dst} = {src}"),
            Instruction::AluImm { op, dst, imm } => format!("{dst} {} {imm}", alu_assign(op)),
            Instruction::AluReg { op, dst, src } => format!("{dst} {} {src}", alu_assign(op)),
            Instruction::Load { dst, src, off, size } => {
                format!("{dst} = *({}){}", size_str(size), mem_operand(src, off))
            }
            Instruction::StoreReg { dst, src, off, size } => {
                format!("*({}){} = {src}", size_str(size), mem_operand(dst, off))
            }
            Instruction::StoreImm { dst, imm, off, size } => {
                format!("*({}){} = {imm}", size_str(size), mem_operand(dst, off))
            }
            Instruction::Jmp { off } => format!("goto {}", target_label(off)),
            Instruction::JcondImm { cond, lhs, imm, off } => {
                format!("if {lhs} {} {imm} goto {}", cond_str(cond), target_label(off))
            }
            Instruction::JcondReg { cond, lhs, rhs, off } => {
                format!("if {lhs} {} {rhs} goto {}", cond_str(cond), target_label(off))
            }
            Instruction::MapPtr { dst, map_id } => format!("{dst} = map_ptr {map_id}"),
            Instruction::Exit => "exit".to_string(),
            Instruction::NospecV1 => "nospec_v1".to_string(),
            Instruction::NospecV4 => "nospec_v4".to_string(),
        };
        writeln!(out, "    {line}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{parse_asm, Register};
    use super::*;

    #[test]
    fn trivial_round_trip() {
        let p = Program {
            name: String::new(),
            instructions: vec![
                Instruction::MovImm { dst: Register::new(0).unwrap(), imm: 0 },
                Instruction::Exit,
            ],
            maps: vec![],
            ctx_size: 0,
        };
        let src = emit_asm(&p);
        assert_eq!(src, "    r0 = 0\n    exit\n");
        assert!(parse_asm(&src).unwrap().same_code(&p));
    }

    #[test]
    fn barriers_render_by_name() {
        let src = "nospec_v1\nnospec_v4\nexit";
        let p = parse_asm(src).unwrap();
        let emitted = emit_asm(&p);
        assert!(emitted.contains("nospec_v1"));
        assert!(emitted.contains("nospec_v4"));
        assert!(parse_asm(&emitted).unwrap().same_code(&p));
    }

    #[test]
    fn labels_and_directives_round_trip() {
        let src = "\
.ctx size=16
.map 2 size=48
top:
    r1 += 1
    if r1 < 10 goto top
    r2 = map_ptr 2
    *(u8)(fp - 1) = 7
    goto done
done:
    exit
";
        let p = parse_asm(src).unwrap();
        let p2 = parse_asm(&emit_asm(&p)).unwrap();
        assert!(p.same_code(&p2));
    }
}
