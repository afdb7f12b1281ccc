//! Line-oriented assembler for the textual program format.
//!
//! One instruction per line; `;` starts a comment; `NAME:` defines a label
//! (alone on a line or prefixing an instruction); `.ctx size=N` and
//! `.map M size=N` declare the memory regions.

use super::{AluOp, CondOp, Instruction, MapDecl, MemSize, Program, Register, MAX_MAP_VALUE_SIZE};
use std::collections::HashMap;

/// A parse failure with its source position (1-based line and column).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
    #[error("immediate out of range")]
    ImmOutOfRange,
    #[error("offset out of range")]
    OffOutOfRange,
    #[error("jump displacement does not fit in 16 bits")]
    DisplacementOverflow,
    #[error("duplicate declaration of map {0}")]
    DuplicateMap(u32),
    #[error("map size must be in 1..={MAX_MAP_VALUE_SIZE}")]
    BadMapSize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(u64),
    Op(&'static str),
}

/// Longest-match operator table; order matters.
const OPS: &[&str] = &[
    "<<=", ">>=", "==", "!=", "<=", ">=", "<<", ">>", "+=", "-=", "&=", "|=", "^=", "*=", "=",
    "<", ">", "+", "-", "&", "|", "^", "*", "(", ")", ":", ".",
];

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { line: self.line, col: self.pos + 1, kind }
    }

    fn lex_line(&mut self) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut out = Vec::new();
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c == b';' {
                break; // comment
            }
            if c.is_ascii_whitespace() {
                self.pos += 1;
                continue;
            }
            let col = self.pos + 1;
            if c.is_ascii_digit() {
                out.push((Tok::Num(self.lex_number()?), col));
            } else if c.is_ascii_alphabetic() || c == b'_' {
                let ident = self.lex_ident();
                // `s<`, `s<=`, `s>`, `s>=`, `s>>`, `s>>=` lex as one operator.
                if ident == "s" && matches!(self.peek(), Some(b'<') | Some(b'>')) {
                    let op = self.lex_op()?;
                    let signed: &'static str = match op {
                        "<" => "s<",
                        "<=" => "s<=",
                        ">" => "s>",
                        ">=" => "s>=",
                        ">>" => "s>>",
                        ">>=" => "s>>=",
                        other => {
                            return Err(self.err(ParseErrorKind::Syntax(format!(
                                "unexpected operator `s{other}`"
                            ))))
                        }
                    };
                    out.push((Tok::Op(signed), col));
                } else {
                    out.push((Tok::Ident(ident), col));
                }
            } else {
                out.push((Tok::Op(self.lex_op()?), col));
            }
        }
        Ok(out)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn lex_ident(&mut self) -> String {
        let start = self.pos;
        while self
            .peek()
            .map(|c| c.is_ascii_alphanumeric() || c == b'_')
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn lex_number(&mut self) -> Result<u64, ParseError> {
        let start = self.pos;
        let hex = self.src[self.pos..].starts_with(b"0x") || self.src[self.pos..].starts_with(b"0X");
        if hex {
            self.pos += 2;
        }
        while self
            .peek()
            .map(|c| c.is_ascii_alphanumeric())
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let parsed = if hex {
            u64::from_str_radix(&text[2..], 16)
        } else {
            text.parse::<u64>()
        };
        parsed.map_err(|_| self.err(ParseErrorKind::ImmOutOfRange))
    }

    fn lex_op(&mut self) -> Result<&'static str, ParseError> {
        let rest = &self.src[self.pos..];
        for op in OPS {
            if rest.starts_with(op.as_bytes()) {
                self.pos += op.len();
                return Ok(op);
            }
        }
        Err(self.err(ParseErrorKind::Syntax(format!(
            "unexpected character `{}`",
            self.src[self.pos] as char
        ))))
    }
}

/// Jump target before label resolution.
enum Target {
    Label(String, usize, usize), // name, line, col
}

enum Item {
    Insn(Instruction, usize),          // resolved instruction, line
    Jump(JumpProto, Target, usize),    // jump needing resolution, line
}

enum JumpProto {
    Jmp,
    CondImm(CondOp, Register, i64),
    CondReg(CondOp, Register, Register),
}

struct LineParser {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    line: usize,
}

impl LineParser {
    fn err_at(&self, col: usize, kind: ParseErrorKind) -> ParseError {
        ParseError { line: self.line, col, kind }
    }

    fn err_here(&self, kind: ParseErrorKind) -> ParseError {
        let col = self
            .toks
            .get(self.idx)
            .map(|t| t.1)
            .unwrap_or_else(|| self.toks.last().map(|t| t.1 + 1).unwrap_or(1));
        self.err_at(col, kind)
    }

    fn syntax(&self, msg: &str) -> ParseError {
        self.err_here(ParseErrorKind::Syntax(msg.to_string()))
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|t| &t.0)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).cloned();
        self.idx += 1;
        t.map(|t| t.0)
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ParseError> {
        match self.next() {
            Some(Tok::Op(o)) if o == op => Ok(()),
            _ => {
                self.idx -= 1;
                Err(self.syntax(&format!("expected `{op}`")))
            }
        }
    }

    fn expect_ident(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.next() {
            Some(Tok::Ident(i)) if i == kw => Ok(()),
            _ => {
                self.idx -= 1;
                Err(self.syntax(&format!("expected `{kw}`")))
            }
        }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        if self.idx == self.toks.len() {
            Ok(())
        } else {
            Err(self.syntax("trailing tokens"))
        }
    }

    fn register(&mut self) -> Result<Register, ParseError> {
        match self.next() {
            Some(Tok::Ident(name)) => reg_by_name(&name).ok_or_else(|| {
                self.idx -= 1;
                self.err_here(ParseErrorKind::UnknownRegister(name))
            }),
            _ => {
                self.idx -= 1;
                Err(self.syntax("expected register"))
            }
        }
    }

    /// Signed immediate: optional `-` followed by a literal.
    fn imm(&mut self) -> Result<i64, ParseError> {
        let neg = matches!(self.peek(), Some(Tok::Op("-")));
        if neg {
            self.next();
        }
        match self.next() {
            Some(Tok::Num(m)) => {
                if neg {
                    if m > 1u64 << 63 {
                        self.idx -= 1;
                        return Err(self.err_here(ParseErrorKind::ImmOutOfRange));
                    }
                    Ok((m as i128).wrapping_neg() as i64)
                } else {
                    Ok(m as i64)
                }
            }
            _ => {
                self.idx -= 1;
                Err(self.syntax("expected immediate"))
            }
        }
    }

    fn mem_size(&mut self) -> Result<MemSize, ParseError> {
        match self.next() {
            Some(Tok::Ident(s)) => match s.as_str() {
                "u8" => Ok(MemSize::U8),
                "u16" => Ok(MemSize::U16),
                "u32" => Ok(MemSize::U32),
                "u64" => Ok(MemSize::U64),
                _ => {
                    self.idx -= 1;
                    Err(self.syntax("expected access size u8|u16|u32|u64"))
                }
            },
            _ => {
                self.idx -= 1;
                Err(self.syntax("expected access size"))
            }
        }
    }

    /// `( reg [ (+|-) OFF ] )` — returns the base register and byte offset.
    fn mem_operand(&mut self) -> Result<(Register, i16), ParseError> {
        self.expect_op("(")?;
        let base = self.register()?;
        let off: i64 = match self.peek() {
            Some(Tok::Op(")")) => 0,
            Some(Tok::Op("+")) => {
                self.next();
                self.imm()?
            }
            Some(Tok::Op("-")) => {
                self.next();
                let m = self.imm()?;
                m.checked_neg().ok_or_else(|| self.err_here(ParseErrorKind::OffOutOfRange))?
            }
            _ => return Err(self.syntax("expected `+`, `-`, or `)`")),
        };
        self.expect_op(")")?;
        let off =
            i16::try_from(off).map_err(|_| self.err_here(ParseErrorKind::OffOutOfRange))?;
        Ok((base, off))
    }

    fn label_ref(&mut self) -> Result<Target, ParseError> {
        let col = self.toks.get(self.idx).map(|t| t.1).unwrap_or(1);
        match self.next() {
            Some(Tok::Ident(name)) => Ok(Target::Label(name, self.line, col)),
            _ => {
                self.idx -= 1;
                Err(self.syntax("expected label"))
            }
        }
    }

    fn cond_op(&mut self) -> Result<CondOp, ParseError> {
        match self.next() {
            Some(Tok::Op(op)) => {
                let cond = match op {
                    "==" => CondOp::Eq,
                    "!=" => CondOp::Ne,
                    "<" => CondOp::Lt,
                    "<=" => CondOp::Le,
                    ">" => CondOp::Gt,
                    ">=" => CondOp::Ge,
                    "s<" => CondOp::Slt,
                    "s<=" => CondOp::Sle,
                    "s>" => CondOp::Sgt,
                    "s>=" => CondOp::Sge,
                    _ => {
                        self.idx -= 1;
                        return Err(self.syntax("expected comparison operator"));
                    }
                };
                Ok(cond)
            }
            _ => {
                self.idx -= 1;
                Err(self.syntax("expected comparison operator"))
            }
        }
    }
}

fn reg_by_name(name: &str) -> Option<Register> {
    if name == "fp" {
        return Some(Register::fp());
    }
    let rest = name.strip_prefix('r')?;
    let idx: u8 = rest.parse().ok()?;
    Register::new(idx)
}

fn alu_for_assign(op: &str) -> Option<AluOp> {
    Some(match op {
        "+=" => AluOp::Add,
        "-=" => AluOp::Sub,
        "&=" => AluOp::And,
        "|=" => AluOp::Or,
        "^=" => AluOp::Xor,
        "<<=" => AluOp::Lsh,
        ">>=" => AluOp::Rsh,
        "s>>=" => AluOp::Arsh,
        "*=" => AluOp::Mul,
        _ => return None,
    })
}

fn is_keyword(name: &str) -> bool {
    matches!(
        name,
        "if" | "goto" | "exit" | "nospec_v1" | "nospec_v4" | "map_ptr" | "size" | "ctx" | "map"
            | "u8" | "u16" | "u32" | "u64"
    ) || reg_by_name(name).is_some()
}

/// Parses assembly source into a [`Program`] (name left empty).
pub fn parse_asm(text: &str) -> Result<Program, ParseError> {
    let mut items: Vec<Item> = Vec::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut maps: Vec<MapDecl> = Vec::new();
    let mut ctx_size: u32 = 0;

    for (line_no, raw_line) in text.lines().enumerate() {
        let line = line_no + 1;
        let mut lexer = Lexer { src: raw_line.as_bytes(), pos: 0, line };
        let toks = lexer.lex_line()?;
        if toks.is_empty() {
            continue;
        }
        let mut p = LineParser { toks, idx: 0, line };

        // Leading labels: `NAME:` possibly repeated, possibly alone.
        loop {
            let is_label = matches!(
                (p.toks.get(p.idx).map(|t| &t.0), p.toks.get(p.idx + 1).map(|t| &t.0)),
                (Some(Tok::Ident(name)), Some(Tok::Op(":"))) if !is_keyword(name)
            );
            if !is_label {
                break;
            }
            let (name, col) = match &p.toks[p.idx].0 {
                Tok::Ident(n) => (n.clone(), p.toks[p.idx].1),
                _ => unreachable!(),
            };
            if labels.insert(name.clone(), items.len()).is_some() {
                return Err(p.err_at(col, ParseErrorKind::DuplicateLabel(name)));
            }
            p.idx += 2;
        }
        if p.idx == p.toks.len() {
            continue;
        }

        // Directives.
        if matches!(p.peek(), Some(Tok::Op("."))) {
            p.next();
            match p.next() {
                Some(Tok::Ident(d)) if d == "ctx" => {
                    p.expect_ident("size")?;
                    p.expect_op("=")?;
                    let n = p.imm()?;
                    ctx_size = u32::try_from(n)
                        .map_err(|_| p.err_here(ParseErrorKind::ImmOutOfRange))?;
                    p.expect_end()?;
                }
                Some(Tok::Ident(d)) if d == "map" => {
                    let id = p.imm()?;
                    let id = u32::try_from(id)
                        .map_err(|_| p.err_here(ParseErrorKind::ImmOutOfRange))?;
                    p.expect_ident("size")?;
                    p.expect_op("=")?;
                    let n = p.imm()?;
                    let size = u32::try_from(n).ok().filter(|s| (1..=MAX_MAP_VALUE_SIZE).contains(s));
                    let size = size.ok_or_else(|| p.err_here(ParseErrorKind::BadMapSize))?;
                    if maps.iter().any(|m| m.id == id) {
                        return Err(p.err_here(ParseErrorKind::DuplicateMap(id)));
                    }
                    maps.push(MapDecl::new(id, size));
                    p.expect_end()?;
                }
                _ => return Err(p.syntax("expected `.ctx` or `.map`")),
            }
            continue;
        }

        let item = parse_instruction(&mut p)?;
        p.expect_end()?;
        items.push(item);
    }

    // Resolve labels into displacements.
    let len = items.len();
    let mut instructions = Vec::with_capacity(len);
    for (index, item) in items.into_iter().enumerate() {
        match item {
            Item::Insn(insn, _) => instructions.push(insn),
            Item::Jump(proto, Target::Label(name, line, col), _) => {
                let target = *labels.get(&name).ok_or(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::UnknownLabel(name.clone()),
                })?;
                let disp = target as i64 - index as i64 - 1;
                let off = i16::try_from(disp).map_err(|_| ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::DisplacementOverflow,
                })?;
                instructions.push(match proto {
                    JumpProto::Jmp => Instruction::Jmp { off },
                    JumpProto::CondImm(cond, lhs, imm) => {
                        Instruction::JcondImm { cond, lhs, imm, off }
                    }
                    JumpProto::CondReg(cond, lhs, rhs) => {
                        Instruction::JcondReg { cond, lhs, rhs, off }
                    }
                });
            }
        }
    }

    Ok(Program { name: String::new(), instructions, maps, ctx_size })
}

fn parse_instruction(p: &mut LineParser) -> Result<Item, ParseError> {
    let line = p.line;
    match p.peek().cloned() {
        Some(Tok::Ident(kw)) if kw == "exit" => {
            p.next();
            Ok(Item::Insn(Instruction::Exit, line))
        }
        Some(Tok::Ident(kw)) if kw == "nospec_v1" => {
            p.next();
            Ok(Item::Insn(Instruction::NospecV1, line))
        }
        Some(Tok::Ident(kw)) if kw == "nospec_v4" => {
            p.next();
            Ok(Item::Insn(Instruction::NospecV4, line))
        }
        Some(Tok::Ident(kw)) if kw == "goto" => {
            p.next();
            let target = p.label_ref()?;
            Ok(Item::Jump(JumpProto::Jmp, target, line))
        }
        Some(Tok::Ident(kw)) if kw == "if" => {
            p.next();
            let lhs = p.register()?;
            let cond = p.cond_op()?;
            let rhs_reg = match p.peek() {
                Some(Tok::Ident(_)) => Some(p.register()?),
                _ => None,
            };
            let proto = match rhs_reg {
                Some(rhs) => JumpProto::CondReg(cond, lhs, rhs),
                None => JumpProto::CondImm(cond, lhs, p.imm()?),
            };
            p.expect_ident("goto")?;
            let target = p.label_ref()?;
            Ok(Item::Jump(proto, target, line))
        }
        Some(Tok::Op("*")) => {
            // `*(uN)(rD + OFF) = rS | IMM`
            p.next();
            p.expect_op("(")?;
            let size = p.mem_size()?;
            p.expect_op(")")?;
            let (dst, off) = p.mem_operand()?;
            p.expect_op("=")?;
            let insn = match p.peek() {
                Some(Tok::Ident(_)) => {
                    let src = p.register()?;
                    Instruction::StoreReg { dst, src, off, size }
                }
                _ => Instruction::StoreImm { dst, imm: p.imm()?, off, size },
            };
            Ok(Item::Insn(insn, line))
        }
        Some(Tok::Ident(_)) => {
            let dst = p.register()?;
            match p.next() {
                Some(Tok::Op("=")) => match p.peek() {
                    Some(Tok::Ident(kw)) if kw == "map_ptr" => {
                        p.next();
                        let id = p.imm()?;
                        let map_id = u32::try_from(id)
                            .map_err(|_| p.err_here(ParseErrorKind::ImmOutOfRange))?;
                        Ok(Item::Insn(Instruction::MapPtr { dst, map_id }, line))
                    }
                    Some(Tok::Ident(_)) => {
                        let src = p.register()?;
                        Ok(Item::Insn(Instruction::MovReg { dst, src }, line))
                    }
                    Some(Tok::Op("*")) => {
                        p.next();
                        p.expect_op("(")?;
                        let size = p.mem_size()?;
                        p.expect_op(")")?;
                        let (src, off) = p.mem_operand()?;
                        Ok(Item::Insn(Instruction::Load { dst, src, off, size }, line))
                    }
                    _ => Ok(Item::Insn(Instruction::MovImm { dst, imm: p.imm()? }, line)),
                },
                Some(Tok::Op(op)) => match alu_for_assign(op) {
                    Some(alu) => match p.peek() {
                        Some(Tok::Ident(_)) => {
                            let src = p.register()?;
                            Ok(Item::Insn(Instruction::AluReg { op: alu, dst, src }, line))
                        }
                        _ => Ok(Item::Insn(Instruction::AluImm { op: alu, dst, imm: p.imm()? }, line)),
                    },
                    None => {
                        p.idx -= 1;
                        Err(p.syntax("expected assignment operator"))
                    }
                },
                _ => {
                    p.idx -= 1;
                    Err(p.syntax("expected assignment operator"))
                }
            }
        }
        _ => Err(p.syntax("expected instruction")),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{validate_structure, Register};
    use super::*;

    fn r(i: u8) -> Register {
        Register::new(i).unwrap()
    }

    #[test]
    fn smallest_program() {
        let p = parse_asm("r0 = 0\nexit").unwrap();
        assert_eq!(
            p.instructions,
            vec![Instruction::MovImm { dst: r(0), imm: 0 }, Instruction::Exit]
        );
    }

    #[test]
    fn forward_branch_displacement() {
        let p = parse_asm("if r1 == r2 goto L1\nexit\nL1: r0 = 1\nexit").unwrap();
        assert_eq!(
            p.instructions[0],
            Instruction::JcondReg { cond: CondOp::Eq, lhs: r(1), rhs: r(2), off: 1 }
        );
        assert!(validate_structure(&p).is_empty());
    }

    #[test]
    fn memory_operands_and_fp_alias() {
        let p = parse_asm("*(u64)(fp - 8) = r1\nr2 = *(u32)(r1 + 4)\nexit").unwrap();
        assert_eq!(
            p.instructions[0],
            Instruction::StoreReg { dst: Register::fp(), src: r(1), off: -8, size: MemSize::U64 }
        );
        assert_eq!(
            p.instructions[1],
            Instruction::Load { dst: r(2), src: r(1), off: 4, size: MemSize::U32 }
        );
    }

    #[test]
    fn directives_and_comments() {
        let p = parse_asm(".ctx size=16 ; input region\n.map 0 size=48\nr0 = map_ptr 0\nexit")
            .unwrap();
        assert_eq!(p.ctx_size, 16);
        assert_eq!(p.maps, vec![MapDecl { id: 0, value_size: 48, padded_size: 64 }]);
        assert_eq!(p.instructions[0], Instruction::MapPtr { dst: r(0), map_id: 0 });
    }

    #[test]
    fn signed_operators() {
        let p = parse_asm("r1 s>>= 3\nif r1 s> -1 goto L\nL: exit").unwrap();
        assert_eq!(p.instructions[0], Instruction::AluImm { op: AluOp::Arsh, dst: r(1), imm: 3 });
        assert_eq!(
            p.instructions[1],
            Instruction::JcondImm { cond: CondOp::Sgt, lhs: r(1), imm: -1, off: 0 }
        );
    }

    #[test]
    fn alu_forms() {
        let p = parse_asm("r1 += 2\nr1 -= r2\nr1 &= 0xff\nr1 <<= 4\nr1 *= r1\nexit").unwrap();
        assert_eq!(p.instructions.len(), 6);
        assert_eq!(p.instructions[2], Instruction::AluImm { op: AluOp::And, dst: r(1), imm: 255 });
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_asm("r0 = 0\nr11 = 1\nexit").unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.kind, ParseErrorKind::UnknownRegister("r11".into()));

        let err = parse_asm("goto NOWHERE\nexit").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownLabel("NOWHERE".into()));

        let err = parse_asm("L: r0 = 0\nL: exit").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicateLabel("L".into()));

        let err = parse_asm(".map 0 size=0\nexit").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::BadMapSize);
    }

    #[test]
    fn negative_and_hex_immediates() {
        let p = parse_asm("r1 = -5\nr2 = 0xffffffffffffffff\nexit").unwrap();
        assert_eq!(p.instructions[0], Instruction::MovImm { dst: r(1), imm: -5 });
        assert_eq!(p.instructions[1], Instruction::MovImm { dst: r(2), imm: -1 });
    }
}
