//! Two-pass assembler for the RV32 subset.
//!
//! Pass 1 parses statements, expands pseudo-ops and collects label
//! positions; width assignment then iterates to a fixed point (compressed
//! branch/jump eligibility depends on resolved offsets, and widths only ever
//! grow); pass 2 resolves label operands into concrete immediates. Assembly
//! is all-or-nothing: the first error aborts with its source line.
//!
//! Accepted statements, one per line, `#` starts a comment:
//!
//! * labels `name:` (may share a line with a statement),
//! * directives `.text`, `.data`, `.global name`, `.word v, ...`,
//!   `.byte v, ...`, `.space n`,
//! * RV32I base instructions (ALU reg-reg and reg-imm, loads, stores,
//!   conditional branches, `jal`, `jalr`, `lui`, `auipc`, `ecall`),
//! * pseudo-ops `li`, `mv`, `ret`, `j`, `call`, `nop`.
//!
//! Pseudo-op expansion table (normative — expansion changes instruction
//! counts):
//!
//! | pseudo            | expansion                                        |
//! |-------------------|--------------------------------------------------|
//! | `nop`             | `addi x0, x0, 0`                                 |
//! | `mv rd, rs`       | `addi rd, rs, 0`                                 |
//! | `ret`             | `jalr x0, x1, 0`                                 |
//! | `j target`        | `jal x0, target`                                 |
//! | `call target`     | `jal x1, target`                                 |
//! | `li rd, imm` (imm in [−2048, 2047]) | `addi rd, x0, imm`             |
//! | `li rd, imm` (otherwise)            | `lui rd, hi; addi rd, rd, lo`  |
//! | `li rd, label`    | always the two-instruction `lui`+`addi` form     |
//!
//! Branch/`jal` targets may be labels or even numeric byte offsets relative
//! to the instruction's own address (the form the disassembler emits).

use std::collections::BTreeMap;

use thiserror::Error;

use super::{
    compressible, AluOp, BranchOp, InstrKind, Instruction, LoadOp, Program, Reg, StoreOp, TEXT_BASE,
};

#[derive(Debug, Clone, Copy, Default)]
pub struct AsmOptions {
    /// Assign 2-byte widths to instructions in the compressible subset.
    pub compress: bool,
}

#[derive(Debug, Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: u32,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Error)]
pub enum AsmErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("immediate {value} outside [{min}, {max}]")]
    ImmOutOfRange { value: i64, min: i64, max: i64 },
    #[error("bad operand: {0}")]
    BadOperand(String),
    #[error("expected {expected} operands, found {found}")]
    OperandCount { expected: usize, found: usize },
    #[error("`{0}` is only valid in the .data section")]
    DataDirectiveInText(String),
    #[error("instructions are only valid in the .text section")]
    InstrInData,
    #[error("branch or jump offset {0} is odd; instruction addresses are 2-byte aligned")]
    MisalignedTarget(i64),
    #[error("`.global` names undefined label `{0}`")]
    UndefinedEntry(String),
}

fn err(line: u32, kind: AsmErrorKind) -> AsmError {
    AsmError { line, kind }
}

/// An immediate operand that may still reference a label.
#[derive(Debug, Clone)]
enum ImmRef {
    Value(i64),
    /// Absolute address of a label (branch/jal: relative to the instruction).
    Label(String),
    /// Upper 20 bits of a label address, for the `li rd, label` expansion.
    LabelHi(String),
    /// Low 12 bits (sign-adjusted) of a label address.
    LabelLo(String),
}

/// Instruction with possibly-unresolved immediates.
#[derive(Debug, Clone)]
enum Proto {
    Alu { op: AluOp, rd: Reg, rs1: Reg, rs2: Reg },
    AluImm { op: AluOp, rd: Reg, rs1: Reg, imm: ImmRef },
    Load { op: LoadOp, rd: Reg, rs1: Reg, off: ImmRef },
    Store { op: StoreOp, rs2: Reg, rs1: Reg, off: ImmRef },
    Branch { op: BranchOp, rs1: Reg, rs2: Reg, target: ImmRef },
    Jal { rd: Reg, target: ImmRef },
    Jalr { rd: Reg, rs1: Reg, off: ImmRef },
    Lui { rd: Reg, imm: ImmRef },
    Auipc { rd: Reg, imm: ImmRef },
    Ecall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Text,
    Data,
}

#[derive(Debug, Clone, Copy)]
enum LabelPos {
    /// Attached to the text instruction at this index (or text end).
    Text(usize),
    /// Byte offset into the data image.
    Data(usize),
}

struct Parser {
    protos: Vec<(Proto, u32)>,
    data: Vec<u8>,
    labels: BTreeMap<String, LabelPos>,
    /// Data labels bind to the next emitted byte, after any alignment.
    pending_data: Vec<String>,
    global: Option<(String, u32)>,
    section: Section,
}

impl Parser {
    fn flush_data_labels(&mut self) {
        let off = self.data.len();
        for name in self.pending_data.drain(..) {
            self.labels.insert(name, LabelPos::Data(off));
        }
    }
}

/// Assembles `source` into a [`Program`].
pub fn assemble(source: &str, options: AsmOptions) -> Result<Program, AsmError> {
    let mut p = Parser {
        protos: Vec::new(),
        data: Vec::new(),
        labels: BTreeMap::new(),
        pending_data: Vec::new(),
        global: None,
        section: Section::Text,
    };

    for (idx, raw_line) in source.lines().enumerate() {
        let line = (idx + 1) as u32;
        let stripped = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let mut stmt = stripped.trim();
        // Leading labels; several may stack on one line.
        while let Some(colon) = label_prefix(stmt) {
            let name = stmt[..colon].trim();
            if !is_ident(name) {
                return Err(err(line, AsmErrorKind::BadOperand(format!("label `{name}`"))));
            }
            let duplicate = p.labels.contains_key(name)
                || p.pending_data.iter().any(|n| n == name);
            if duplicate {
                return Err(err(line, AsmErrorKind::DuplicateLabel(name.to_string())));
            }
            match p.section {
                Section::Text => {
                    p.labels.insert(name.to_string(), LabelPos::Text(p.protos.len()));
                }
                Section::Data => p.pending_data.push(name.to_string()),
            }
            stmt = stmt[colon + 1..].trim();
        }
        if stmt.is_empty() {
            continue;
        }
        if let Some(rest) = stmt.strip_prefix('.') {
            parse_directive(&mut p, rest, line)?;
        } else {
            if p.section == Section::Data {
                return Err(err(line, AsmErrorKind::InstrInData));
            }
            parse_instruction(&mut p, stmt, line)?;
        }
    }

    finalize(p, options)
}

/// Index of the colon ending a leading label, if the statement starts with
/// one. A colon inside an operand (e.g. a char literal) never matches
/// because labels cannot contain quotes or whitespace.
fn label_prefix(stmt: &str) -> Option<usize> {
    let colon = stmt.find(':')?;
    let head = &stmt[..colon];
    if !head.is_empty() && is_ident(head.trim()) && !head.contains(['\'', '"']) {
        Some(colon)
    } else {
        None
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_directive(p: &mut Parser, rest: &str, line: u32) -> Result<(), AsmError> {
    let (name, args) = match rest.find(char::is_whitespace) {
        Some(pos) => (&rest[..pos], rest[pos..].trim()),
        None => (rest, ""),
    };
    match name {
        "text" => p.section = Section::Text,
        "data" => p.section = Section::Data,
        "global" => {
            if !is_ident(args) {
                return Err(err(line, AsmErrorKind::BadOperand(format!(".global `{args}`"))));
            }
            p.global = Some((args.to_string(), line));
        }
        "word" | "byte" | "space" => {
            if p.section != Section::Data {
                return Err(err(line, AsmErrorKind::DataDirectiveInText(format!(".{name}"))));
            }
            match name {
                "word" => {
                    while p.data.len() % 4 != 0 {
                        p.data.push(0);
                    }
                    p.flush_data_labels();
                    for tok in split_operands(args) {
                        let v = parse_data_value(&tok, line, -(1i64 << 31), (1i64 << 32) - 1)?;
                        p.data.extend_from_slice(&(v as u32).to_le_bytes());
                    }
                }
                "byte" => {
                    p.flush_data_labels();
                    for tok in split_operands(args) {
                        if tok.starts_with('"') {
                            p.data.extend_from_slice(&parse_string(&tok, line)?);
                        } else {
                            let v = parse_data_value(&tok, line, -128, 255)?;
                            p.data.push(v as u8);
                        }
                    }
                }
                "space" => {
                    p.flush_data_labels();
                    let v = parse_data_value(args, line, 0, 1 << 16)?;
                    p.data.extend(std::iter::repeat(0).take(v as usize));
                }
                _ => unreachable!(),
            }
        }
        other => {
            return Err(err(line, AsmErrorKind::UnknownMnemonic(format!(".{other}"))));
        }
    }
    Ok(())
}

fn split_operands(s: &str) -> Vec<String> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    // Respect quotes so `.byte 'a', ','` splits correctly.
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    for c in s.chars() {
        match quote {
            Some(q) => {
                let escaped = cur.ends_with('\\') && !cur.ends_with("\\\\");
                cur.push(c);
                if c == q && !escaped {
                    quote = None;
                }
            }
            None => match c {
                '\'' | '"' => {
                    quote = Some(c);
                    cur.push(c);
                }
                ',' => {
                    out.push(cur.trim().to_string());
                    cur.clear();
                }
                _ => cur.push(c),
            },
        }
    }
    out.push(cur.trim().to_string());
    out
}

fn parse_data_value(tok: &str, line: u32, min: i64, max: i64) -> Result<i64, AsmError> {
    let v = if tok.starts_with('\'') {
        parse_char(tok, line)? as i64
    } else {
        parse_int(tok).ok_or_else(|| err(line, AsmErrorKind::BadOperand(format!("value `{tok}`"))))?
    };
    if v < min || v > max {
        return Err(err(line, AsmErrorKind::ImmOutOfRange { value: v, min, max }));
    }
    Ok(v)
}

fn parse_int(tok: &str) -> Option<i64> {
    let tok = tok.trim();
    let (neg, body) = match tok.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, tok),
    };
    let mag = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -mag } else { mag })
}

fn parse_char(tok: &str, line: u32) -> Result<u8, AsmError> {
    let bad = || err(line, AsmErrorKind::BadOperand(format!("char literal `{tok}`")));
    let inner = tok.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')).ok_or_else(bad)?;
    let bytes = unescape(inner).map_err(|_| bad())?;
    if bytes.len() != 1 {
        return Err(bad());
    }
    Ok(bytes[0])
}

fn parse_string(tok: &str, line: u32) -> Result<Vec<u8>, AsmError> {
    let bad = || err(line, AsmErrorKind::BadOperand(format!("string literal `{tok}`")));
    let inner = tok.strip_prefix('"').and_then(|s| s.strip_suffix('"')).ok_or_else(bad)?;
    unescape(inner).map_err(|_| bad())
}

fn unescape(s: &str) -> Result<Vec<u8>, ()> {
    let mut out = Vec::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push(b'\n'),
                Some('t') => out.push(b'\t'),
                Some('r') => out.push(b'\r'),
                Some('0') => out.push(0),
                Some('\\') => out.push(b'\\'),
                Some('\'') => out.push(b'\''),
                Some('"') => out.push(b'"'),
                _ => return Err(()),
            }
        } else {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
        }
    }
    Ok(out)
}

const ABI_NAMES: [(&str, u8); 33] = [
    ("zero", 0),
    ("ra", 1),
    ("sp", 2),
    ("gp", 3),
    ("tp", 4),
    ("t0", 5),
    ("t1", 6),
    ("t2", 7),
    ("s0", 8),
    ("fp", 8),
    ("s1", 9),
    ("a0", 10),
    ("a1", 11),
    ("a2", 12),
    ("a3", 13),
    ("a4", 14),
    ("a5", 15),
    ("a6", 16),
    ("a7", 17),
    ("s2", 18),
    ("s3", 19),
    ("s4", 20),
    ("s5", 21),
    ("s6", 22),
    ("s7", 23),
    ("s8", 24),
    ("s9", 25),
    ("s10", 26),
    ("s11", 27),
    ("t3", 28),
    ("t4", 29),
    ("t5", 30),
    ("t6", 31),
];

fn parse_reg(tok: &str) -> Option<Reg> {
    let tok = tok.trim();
    if let Some(num) = tok.strip_prefix('x') {
        let n: u8 = num.parse().ok()?;
        if n < 32 {
            return Some(Reg(n));
        }
        return None;
    }
    ABI_NAMES.iter().find(|(n, _)| *n == tok).map(|&(_, i)| Reg(i))
}

fn reg_operand(tok: &str, line: u32) -> Result<Reg, AsmError> {
    parse_reg(tok).ok_or_else(|| err(line, AsmErrorKind::BadOperand(format!("register `{tok}`"))))
}

/// Immediate or label operand.
fn imm_operand(tok: &str, line: u32) -> Result<ImmRef, AsmError> {
    if let Some(v) = parse_int(tok) {
        return Ok(ImmRef::Value(v));
    }
    if is_ident(tok) {
        return Ok(ImmRef::Label(tok.to_string()));
    }
    Err(err(line, AsmErrorKind::BadOperand(format!("immediate `{tok}`"))))
}

/// Numeric immediate, range-checked at parse time.
fn value_operand(tok: &str, line: u32, min: i64, max: i64) -> Result<i64, AsmError> {
    let v = parse_int(tok)
        .ok_or_else(|| err(line, AsmErrorKind::BadOperand(format!("immediate `{tok}`"))))?;
    if v < min || v > max {
        return Err(err(line, AsmErrorKind::ImmOutOfRange { value: v, min, max }));
    }
    Ok(v)
}

/// `off(reg)` memory operand.
fn mem_operand(tok: &str, line: u32) -> Result<(i64, Reg), AsmError> {
    let bad = || err(line, AsmErrorKind::BadOperand(format!("memory operand `{tok}`")));
    let open = tok.find('(').ok_or_else(bad)?;
    let close = tok.strip_suffix(')').ok_or_else(bad)?;
    let off_str = tok[..open].trim();
    let off = if off_str.is_empty() {
        0
    } else {
        value_operand(off_str, line, -2048, 2047)?
    };
    let reg = reg_operand(&close[open + 1..], line)?;
    Ok((off, reg))
}

fn expect_operands(ops: &[String], n: usize, line: u32) -> Result<(), AsmError> {
    if ops.len() != n {
        return Err(err(line, AsmErrorKind::OperandCount { expected: n, found: ops.len() }));
    }
    Ok(())
}

fn parse_instruction(p: &mut Parser, stmt: &str, line: u32) -> Result<(), AsmError> {
    let (mnemonic, rest) = match stmt.find(char::is_whitespace) {
        Some(pos) => (&stmt[..pos], stmt[pos..].trim()),
        None => (stmt, ""),
    };
    let ops = split_operands(rest);

    let alu_rr = |op: AluOp, ops: &[String]| -> Result<Proto, AsmError> {
        expect_operands(ops, 3, line)?;
        Ok(Proto::Alu {
            op,
            rd: reg_operand(&ops[0], line)?,
            rs1: reg_operand(&ops[1], line)?,
            rs2: reg_operand(&ops[2], line)?,
        })
    };
    let alu_ri = |op: AluOp, ops: &[String], min: i64, max: i64| -> Result<Proto, AsmError> {
        expect_operands(ops, 3, line)?;
        Ok(Proto::AluImm {
            op,
            rd: reg_operand(&ops[0], line)?,
            rs1: reg_operand(&ops[1], line)?,
            imm: ImmRef::Value(value_operand(&ops[2], line, min, max)?),
        })
    };
    let load = |op: LoadOp, ops: &[String]| -> Result<Proto, AsmError> {
        expect_operands(ops, 2, line)?;
        let (off, rs1) = mem_operand(&ops[1], line)?;
        Ok(Proto::Load { op, rd: reg_operand(&ops[0], line)?, rs1, off: ImmRef::Value(off) })
    };
    let store = |op: StoreOp, ops: &[String]| -> Result<Proto, AsmError> {
        expect_operands(ops, 2, line)?;
        let (off, rs1) = mem_operand(&ops[1], line)?;
        Ok(Proto::Store { op, rs2: reg_operand(&ops[0], line)?, rs1, off: ImmRef::Value(off) })
    };
    let branch = |op: BranchOp, ops: &[String]| -> Result<Proto, AsmError> {
        expect_operands(ops, 3, line)?;
        Ok(Proto::Branch {
            op,
            rs1: reg_operand(&ops[0], line)?,
            rs2: reg_operand(&ops[1], line)?,
            target: imm_operand(&ops[2], line)?,
        })
    };

    let proto = match mnemonic {
        "add" => alu_rr(AluOp::Add, &ops)?,
        "sub" => alu_rr(AluOp::Sub, &ops)?,
        "sll" => alu_rr(AluOp::Sll, &ops)?,
        "slt" => alu_rr(AluOp::Slt, &ops)?,
        "sltu" => alu_rr(AluOp::Sltu, &ops)?,
        "xor" => alu_rr(AluOp::Xor, &ops)?,
        "srl" => alu_rr(AluOp::Srl, &ops)?,
        "sra" => alu_rr(AluOp::Sra, &ops)?,
        "or" => alu_rr(AluOp::Or, &ops)?,
        "and" => alu_rr(AluOp::And, &ops)?,
        "addi" => alu_ri(AluOp::Add, &ops, -2048, 2047)?,
        "slti" => alu_ri(AluOp::Slt, &ops, -2048, 2047)?,
        "sltiu" => alu_ri(AluOp::Sltu, &ops, -2048, 2047)?,
        "xori" => alu_ri(AluOp::Xor, &ops, -2048, 2047)?,
        "ori" => alu_ri(AluOp::Or, &ops, -2048, 2047)?,
        "andi" => alu_ri(AluOp::And, &ops, -2048, 2047)?,
        "slli" => alu_ri(AluOp::Sll, &ops, 0, 31)?,
        "srli" => alu_ri(AluOp::Srl, &ops, 0, 31)?,
        "srai" => alu_ri(AluOp::Sra, &ops, 0, 31)?,
        "lw" => load(LoadOp::Lw, &ops)?,
        "lh" => load(LoadOp::Lh, &ops)?,
        "lb" => load(LoadOp::Lb, &ops)?,
        "lbu" => load(LoadOp::Lbu, &ops)?,
        "lhu" => load(LoadOp::Lhu, &ops)?,
        "sw" => store(StoreOp::Sw, &ops)?,
        "sh" => store(StoreOp::Sh, &ops)?,
        "sb" => store(StoreOp::Sb, &ops)?,
        "beq" => branch(BranchOp::Beq, &ops)?,
        "bne" => branch(BranchOp::Bne, &ops)?,
        "blt" => branch(BranchOp::Blt, &ops)?,
        "bge" => branch(BranchOp::Bge, &ops)?,
        "bltu" => branch(BranchOp::Bltu, &ops)?,
        "bgeu" => branch(BranchOp::Bgeu, &ops)?,
        "jal" => {
            expect_operands(&ops, 2, line)?;
            Proto::Jal { rd: reg_operand(&ops[0], line)?, target: imm_operand(&ops[1], line)? }
        }
        "jalr" => {
            expect_operands(&ops, 3, line)?;
            Proto::Jalr {
                rd: reg_operand(&ops[0], line)?,
                rs1: reg_operand(&ops[1], line)?,
                off: ImmRef::Value(value_operand(&ops[2], line, -2048, 2047)?),
            }
        }
        "lui" => {
            expect_operands(&ops, 2, line)?;
            Proto::Lui {
                rd: reg_operand(&ops[0], line)?,
                imm: ImmRef::Value(value_operand(&ops[1], line, 0, 0xFFFFF)?),
            }
        }
        "auipc" => {
            expect_operands(&ops, 2, line)?;
            Proto::Auipc {
                rd: reg_operand(&ops[0], line)?,
                imm: ImmRef::Value(value_operand(&ops[1], line, 0, 0xFFFFF)?),
            }
        }
        "ecall" => {
            expect_operands(&ops, 0, line)?;
            Proto::Ecall
        }
        // Pseudo-ops.
        "nop" => {
            expect_operands(&ops, 0, line)?;
            Proto::AluImm { op: AluOp::Add, rd: Reg(0), rs1: Reg(0), imm: ImmRef::Value(0) }
        }
        "mv" => {
            expect_operands(&ops, 2, line)?;
            Proto::AluImm {
                op: AluOp::Add,
                rd: reg_operand(&ops[0], line)?,
                rs1: reg_operand(&ops[1], line)?,
                imm: ImmRef::Value(0),
            }
        }
        "ret" => {
            expect_operands(&ops, 0, line)?;
            Proto::Jalr { rd: Reg(0), rs1: Reg(1), off: ImmRef::Value(0) }
        }
        "j" => {
            expect_operands(&ops, 1, line)?;
            Proto::Jal { rd: Reg(0), target: imm_operand(&ops[0], line)? }
        }
        "call" => {
            expect_operands(&ops, 1, line)?;
            Proto::Jal { rd: Reg(1), target: imm_operand(&ops[0], line)? }
        }
        "li" => {
            expect_operands(&ops, 2, line)?;
            let rd = reg_operand(&ops[0], line)?;
            match imm_operand(&ops[1], line)? {
                ImmRef::Value(v) => {
                    if !(-(1i64 << 31)..(1i64 << 32)).contains(&v) {
                        return Err(err(
                            line,
                            AsmErrorKind::ImmOutOfRange {
                                value: v,
                                min: -(1i64 << 31),
                                max: (1i64 << 32) - 1,
                            },
                        ));
                    }
                    let v = v as u32 as i64;
                    let v = if v > i32::MAX as i64 { v - (1i64 << 32) } else { v };
                    if (-2048..=2047).contains(&v) {
                        Proto::AluImm { op: AluOp::Add, rd, rs1: Reg(0), imm: ImmRef::Value(v) }
                    } else {
                        let (hi, lo) = hi_lo(v as i32);
                        p.protos.push((
                            Proto::Lui { rd, imm: ImmRef::Value(hi as i64) },
                            line,
                        ));
                        Proto::AluImm { op: AluOp::Add, rd, rs1: rd, imm: ImmRef::Value(lo as i64) }
                    }
                }
                // Label addresses always use the two-instruction form so
                // instruction counts do not depend on final layout.
                ImmRef::Label(name) => {
                    p.protos.push((Proto::Lui { rd, imm: ImmRef::LabelHi(name.clone()) }, line));
                    Proto::AluImm { op: AluOp::Add, rd, rs1: rd, imm: ImmRef::LabelLo(name) }
                }
                _ => unreachable!(),
            }
        }
        other => return Err(err(line, AsmErrorKind::UnknownMnemonic(other.to_string()))),
    };
    p.protos.push((proto, line));
    Ok(())
}

/// Splits a 32-bit value for `lui`+`addi`: `lui` loads `hi << 12` and the
/// `addi` adds the sign-extended low 12 bits.
fn hi_lo(v: i32) -> (u32, i32) {
    let lo = (v << 20) >> 20;
    let hi = (v.wrapping_sub(lo) as u32 >> 12) & 0xFFFFF;
    (hi, lo)
}

fn align4(v: u32) -> u32 {
    (v + 3) & !3
}

fn finalize(mut p: Parser, options: AsmOptions) -> Result<Program, AsmError> {
    p.flush_data_labels();
    let n = p.protos.len();

    // Width assignment. Forms whose eligibility does not depend on offsets
    // are decided once; branch/jal forms start compressed and widen when the
    // resolved offset leaves the short range. Widths only grow, so this
    // reaches a fixed point.
    let mut widths: Vec<u8> = p
        .protos
        .iter()
        .map(|(proto, _)| {
            if !options.compress {
                return 4;
            }
            match proto_as_kind(proto, 0) {
                Some(kind) => {
                    if compressible(&kind) {
                        2
                    } else {
                        4
                    }
                }
                // Label-dependent: optimistically compressed if the form
                // allows it at any offset.
                None => match proto {
                    Proto::Jal { rd, .. } if rd.0 == 0 => 2,
                    Proto::Branch { op, rs1, rs2, .. }
                        if matches!(op, BranchOp::Beq | BranchOp::Bne)
                            && rs2.0 == 0
                            && (8..=15).contains(&rs1.0) =>
                    {
                        2
                    }
                    _ => 4,
                },
            }
        })
        .collect();

    let mut addrs = vec![0u32; n];
    let mut symbols: BTreeMap<String, u32> = BTreeMap::new();
    loop {
        let mut addr = TEXT_BASE;
        for i in 0..n {
            addrs[i] = addr;
            addr += widths[i] as u32;
        }
        let text_end = addr;
        let data_base = align4(text_end);
        symbols.clear();
        for (name, pos) in &p.labels {
            let a = match *pos {
                LabelPos::Text(idx) => {
                    if idx < n {
                        addrs[idx]
                    } else {
                        text_end
                    }
                }
                LabelPos::Data(off) => data_base + off as u32,
            };
            symbols.insert(name.clone(), a);
        }

        if !options.compress {
            break;
        }
        let mut changed = false;
        for i in 0..n {
            if widths[i] != 2 {
                continue;
            }
            let (proto, line) = &p.protos[i];
            let offset = match proto {
                Proto::Jal { target, .. } | Proto::Branch { target, .. } => {
                    resolve_rel(target, &symbols, addrs[i], *line)?
                }
                _ => continue,
            };
            let kind = proto_as_kind_resolved(proto, offset);
            if !compressible(&kind) {
                widths[i] = 4;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let text_end = addrs.last().map(|&a| a + widths[n - 1] as u32).unwrap_or(TEXT_BASE);
    let data_base = align4(text_end);

    // Pass 2: resolve operands.
    let mut text = Vec::with_capacity(n);
    for i in 0..n {
        let (proto, line) = &p.protos[i];
        let kind = resolve_proto(proto, &symbols, addrs[i], *line)?;
        text.push(Instruction { kind, width: widths[i], addr: addrs[i], source_line: *line });
    }

    let entry = match &p.global {
        Some((name, line)) => *symbols
            .get(name)
            .ok_or_else(|| err(*line, AsmErrorKind::UndefinedEntry(name.clone())))?,
        None => TEXT_BASE,
    };

    let program = Program {
        text,
        text_base: TEXT_BASE,
        data: p.data,
        data_base,
        symbols,
        entry,
        payload_range: None,
    };
    debug_assert_eq!(program.validate(), Ok(()));
    Ok(program)
}

fn resolve_rel(
    target: &ImmRef,
    symbols: &BTreeMap<String, u32>,
    addr: u32,
    line: u32,
) -> Result<i64, AsmError> {
    match target {
        ImmRef::Value(v) => Ok(*v),
        ImmRef::Label(name) => {
            let dest = *symbols
                .get(name)
                .ok_or_else(|| err(line, AsmErrorKind::UndefinedLabel(name.clone())))?;
            Ok(dest as i64 - addr as i64)
        }
        _ => unreachable!("relative operand cannot be a hi/lo reference"),
    }
}

fn resolve_abs(
    imm: &ImmRef,
    symbols: &BTreeMap<String, u32>,
    line: u32,
) -> Result<i64, AsmError> {
    match imm {
        ImmRef::Value(v) => Ok(*v),
        ImmRef::Label(name) | ImmRef::LabelHi(name) | ImmRef::LabelLo(name) => {
            let a = *symbols
                .get(name)
                .ok_or_else(|| err(line, AsmErrorKind::UndefinedLabel(name.clone())))?;
            match imm {
                ImmRef::LabelHi(_) => Ok(hi_lo(a as i32).0 as i64),
                ImmRef::LabelLo(_) => Ok(hi_lo(a as i32).1 as i64),
                _ => Ok(a as i64),
            }
        }
    }
}

fn check_range(v: i64, min: i64, max: i64, line: u32) -> Result<i32, AsmError> {
    if v < min || v > max {
        return Err(err(line, AsmErrorKind::ImmOutOfRange { value: v, min, max }));
    }
    Ok(v as i32)
}

fn check_rel(v: i64, min: i64, max: i64, line: u32) -> Result<i32, AsmError> {
    if v % 2 != 0 {
        return Err(err(line, AsmErrorKind::MisalignedTarget(v)));
    }
    check_range(v, min, max, line)
}

/// Resolves a proto whose immediates are all literal; `None` when a label is
/// still involved (used only for the initial width pass).
fn proto_as_kind(proto: &Proto, _addr: u32) -> Option<InstrKind> {
    let lit = |imm: &ImmRef| match imm {
        ImmRef::Value(v) => Some(*v as i32),
        _ => None,
    };
    Some(match proto {
        Proto::Alu { op, rd, rs1, rs2 } => InstrKind::Alu { op: *op, rd: *rd, rs1: *rs1, rs2: *rs2 },
        Proto::AluImm { op, rd, rs1, imm } => {
            InstrKind::AluImm { op: *op, rd: *rd, rs1: *rs1, imm: lit(imm)? }
        }
        Proto::Load { op, rd, rs1, off } => {
            InstrKind::Load { op: *op, rd: *rd, rs1: *rs1, offset: lit(off)? }
        }
        Proto::Store { op, rs2, rs1, off } => {
            InstrKind::Store { op: *op, rs2: *rs2, rs1: *rs1, offset: lit(off)? }
        }
        Proto::Branch { op, rs1, rs2, target } => {
            InstrKind::Branch { op: *op, rs1: *rs1, rs2: *rs2, offset: lit(target)? }
        }
        Proto::Jal { rd, target } => InstrKind::Jal { rd: *rd, offset: lit(target)? },
        Proto::Jalr { rd, rs1, off } => InstrKind::Jalr { rd: *rd, rs1: *rs1, offset: lit(off)? },
        Proto::Lui { rd, imm } => InstrKind::Lui { rd: *rd, imm20: lit(imm)? as u32 },
        Proto::Auipc { rd, imm } => InstrKind::Auipc { rd: *rd, imm20: lit(imm)? as u32 },
        Proto::Ecall => InstrKind::Ecall,
    })
}

/// Builds the kind for a branch/jal proto with a known offset.
fn proto_as_kind_resolved(proto: &Proto, offset: i64) -> InstrKind {
    match proto {
        Proto::Jal { rd, .. } => InstrKind::Jal { rd: *rd, offset: offset as i32 },
        Proto::Branch { op, rs1, rs2, .. } => {
            InstrKind::Branch { op: *op, rs1: *rs1, rs2: *rs2, offset: offset as i32 }
        }
        _ => unreachable!(),
    }
}

fn resolve_proto(
    proto: &Proto,
    symbols: &BTreeMap<String, u32>,
    addr: u32,
    line: u32,
) -> Result<InstrKind, AsmError> {
    Ok(match proto {
        Proto::Alu { op, rd, rs1, rs2 } => InstrKind::Alu { op: *op, rd: *rd, rs1: *rs1, rs2: *rs2 },
        Proto::AluImm { op, rd, rs1, imm } => {
            let v = resolve_abs(imm, symbols, line)?;
            let (min, max) = match op {
                AluOp::Sll | AluOp::Srl | AluOp::Sra => (0, 31),
                _ => (-2048, 2047),
            };
            InstrKind::AluImm { op: *op, rd: *rd, rs1: *rs1, imm: check_range(v, min, max, line)? }
        }
        Proto::Load { op, rd, rs1, off } => InstrKind::Load {
            op: *op,
            rd: *rd,
            rs1: *rs1,
            offset: check_range(resolve_abs(off, symbols, line)?, -2048, 2047, line)?,
        },
        Proto::Store { op, rs2, rs1, off } => InstrKind::Store {
            op: *op,
            rs2: *rs2,
            rs1: *rs1,
            offset: check_range(resolve_abs(off, symbols, line)?, -2048, 2047, line)?,
        },
        Proto::Branch { op, rs1, rs2, target } => InstrKind::Branch {
            op: *op,
            rs1: *rs1,
            rs2: *rs2,
            offset: check_rel(resolve_rel(target, symbols, addr, line)?, -4096, 4094, line)?,
        },
        Proto::Jal { rd, target } => InstrKind::Jal {
            rd: *rd,
            offset: check_rel(resolve_rel(target, symbols, addr, line)?, -(1 << 20), (1 << 20) - 2, line)?,
        },
        Proto::Jalr { rd, rs1, off } => InstrKind::Jalr {
            rd: *rd,
            rs1: *rs1,
            offset: check_range(resolve_abs(off, symbols, line)?, -2048, 2047, line)?,
        },
        Proto::Lui { rd, imm } => InstrKind::Lui {
            rd: *rd,
            imm20: check_range(resolve_abs(imm, symbols, line)?, 0, 0xFFFFF, line)? as u32,
        },
        Proto::Auipc { rd, imm } => InstrKind::Auipc {
            rd: *rd,
            imm20: check_range(resolve_abs(imm, symbols, line)?, 0, 0xFFFFF, line)? as u32,
        },
        Proto::Ecall => InstrKind::Ecall,
    })
}
