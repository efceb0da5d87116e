//! Instruction set definition and program images for the RV32 subset.
//!
//! Programs are kept as decoded instructions with assigned addresses; there
//! is no binary machine-code layer. Instruction widths are still tracked
//! (2 or 4 bytes) so that a compressed build changes addresses and the
//! `compressed` event count without changing semantics.

mod asm;
mod disasm;

pub use asm::{assemble, AsmError, AsmErrorKind, AsmOptions};
pub use disasm::disassemble;

use std::collections::BTreeMap;

/// Base address of the text segment.
pub const TEXT_BASE: u32 = 0;

/// Register index, 0..32. `x0` reads as zero and ignores writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Reg(pub u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);
    pub const RA: Reg = Reg(1);
    pub const SP: Reg = Reg(2);
    pub const A0: Reg = Reg(10);
    pub const A1: Reg = Reg(11);
}

impl std::fmt::Display for Reg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// Register-register ALU operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluOp {
    Add,
    Sub,
    Sll,
    Slt,
    Sltu,
    Xor,
    Srl,
    Sra,
    Or,
    And,
}

impl AluOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Sll => "sll",
            AluOp::Slt => "slt",
            AluOp::Sltu => "sltu",
            AluOp::Xor => "xor",
            AluOp::Srl => "srl",
            AluOp::Sra => "sra",
            AluOp::Or => "or",
            AluOp::And => "and",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadOp {
    Lw,
    Lh,
    Lb,
    Lbu,
    Lhu,
}

impl LoadOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            LoadOp::Lw => "lw",
            LoadOp::Lh => "lh",
            LoadOp::Lb => "lb",
            LoadOp::Lbu => "lbu",
            LoadOp::Lhu => "lhu",
        }
    }

    pub fn size(self) -> u32 {
        match self {
            LoadOp::Lw => 4,
            LoadOp::Lh | LoadOp::Lhu => 2,
            LoadOp::Lb | LoadOp::Lbu => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOp {
    Sw,
    Sh,
    Sb,
}

impl StoreOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            StoreOp::Sw => "sw",
            StoreOp::Sh => "sh",
            StoreOp::Sb => "sb",
        }
    }

    pub fn size(self) -> u32 {
        match self {
            StoreOp::Sw => 4,
            StoreOp::Sh => 2,
            StoreOp::Sb => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchOp {
    Beq,
    Bne,
    Blt,
    Bge,
    Bltu,
    Bgeu,
}

impl BranchOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BranchOp::Beq => "beq",
            BranchOp::Bne => "bne",
            BranchOp::Blt => "blt",
            BranchOp::Bge => "bge",
            BranchOp::Bltu => "bltu",
            BranchOp::Bgeu => "bgeu",
        }
    }
}

/// A decoded instruction. Branch, `jal` and `auipc` immediates are byte
/// offsets relative to the instruction's own address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrKind {
    Alu { op: AluOp, rd: Reg, rs1: Reg, rs2: Reg },
    /// Immediate ALU form; `Sub` never appears here (there is no `subi`).
    AluImm { op: AluOp, rd: Reg, rs1: Reg, imm: i32 },
    Load { op: LoadOp, rd: Reg, rs1: Reg, offset: i32 },
    Store { op: StoreOp, rs2: Reg, rs1: Reg, offset: i32 },
    Branch { op: BranchOp, rs1: Reg, rs2: Reg, offset: i32 },
    Jal { rd: Reg, offset: i32 },
    Jalr { rd: Reg, rs1: Reg, offset: i32 },
    Lui { rd: Reg, imm20: u32 },
    Auipc { rd: Reg, imm20: u32 },
    Ecall,
}

/// One assembled instruction with its assigned address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instruction {
    pub kind: InstrKind,
    /// Encoding width in bytes: 2 only for compressed-eligible forms when
    /// compression was requested, otherwise 4.
    pub width: u8,
    pub addr: u32,
    /// 1-based source line, for diagnostics.
    pub source_line: u32,
}

/// Assembled program image: text, data, symbols and entry point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub text: Vec<Instruction>,
    pub text_base: u32,
    pub data: Vec<u8>,
    /// Data segment base; always `align4(text_base + text_size)`.
    pub data_base: u32,
    pub symbols: BTreeMap<String, u32>,
    pub entry: u32,
    /// `[start, end)` address interval of the malicious function, when the
    /// program carries one.
    pub payload_range: Option<(u32, u32)>,
}

impl Program {
    /// End address of the text segment (one past the last instruction).
    pub fn text_end(&self) -> u32 {
        self.text
            .last()
            .map(|i| i.addr + i.width as u32)
            .unwrap_or(self.text_base)
    }

    /// End address of the data segment.
    pub fn data_end(&self) -> u32 {
        self.data_base + self.data.len() as u32
    }

    /// Checks the structural invariants: contiguous 2-byte-aligned text
    /// addresses, symbols inside the image, entry in text, payload range in
    /// text.
    pub fn validate(&self) -> Result<(), String> {
        let mut addr = self.text_base;
        for ins in &self.text {
            if ins.addr != addr {
                return Err(format!(
                    "instruction at {:#x} expected address {addr:#x}",
                    ins.addr
                ));
            }
            if ins.addr % 2 != 0 {
                return Err(format!("misaligned instruction address {:#x}", ins.addr));
            }
            if !matches!(ins.width, 2 | 4) {
                return Err(format!("bad width {} at {:#x}", ins.width, ins.addr));
            }
            addr += ins.width as u32;
        }
        let text_end = self.text_end();
        for (name, &a) in &self.symbols {
            let in_text = a >= self.text_base && a <= text_end;
            let in_data = a >= self.data_base && a <= self.data_end();
            if !in_text && !in_data {
                return Err(format!("symbol {name} = {a:#x} outside the image"));
            }
        }
        if !(self.entry >= self.text_base && self.entry < text_end.max(self.text_base + 1)) {
            return Err(format!("entry {:#x} outside text", self.entry));
        }
        if let Some((start, end)) = self.payload_range {
            if !(start >= self.text_base && end <= text_end && start < end) {
                return Err(format!("payload range {start:#x}..{end:#x} outside text"));
            }
        }
        Ok(())
    }
}

/// Registers read as source operands, used for load-use hazard detection.
pub fn source_regs(kind: &InstrKind) -> [Option<Reg>; 2] {
    match *kind {
        InstrKind::Alu { rs1, rs2, .. } => [Some(rs1), Some(rs2)],
        InstrKind::AluImm { rs1, .. } => [Some(rs1), None],
        InstrKind::Load { rs1, .. } => [Some(rs1), None],
        InstrKind::Store { rs1, rs2, .. } => [Some(rs1), Some(rs2)],
        InstrKind::Branch { rs1, rs2, .. } => [Some(rs1), Some(rs2)],
        InstrKind::Jalr { rs1, .. } => [Some(rs1), None],
        InstrKind::Jal { .. } | InstrKind::Lui { .. } | InstrKind::Auipc { .. } | InstrKind::Ecall => {
            [None, None]
        }
    }
}

/// The curated compressed-instruction eligibility table.
///
/// A form maps to a 2-byte encoding iff it matches one of:
///
/// | form                                   | RVC analog    |
/// |----------------------------------------|---------------|
/// | `addi rd, rs, 0`, rd≠x0, rs≠x0         | `c.mv`        |
/// | `addi rd, x0, imm`, rd≠x0, −32≤imm≤31  | `c.li`        |
/// | `addi rd, rd, imm`, rd≠x0, −32≤imm≤31, imm≠0 | `c.addi` |
/// | `add rd, rd, rs`, rd≠x0, rs≠x0         | `c.add`       |
/// | `jalr x0, rs, 0`, rs≠x0                | `c.jr`        |
/// | `jalr x1, rs, 0`, rs≠x0                | `c.jalr`      |
/// | `jal x0, off`, −2048≤off≤2046          | `c.j`         |
/// | `beq/bne rs, x0, off`, rs∈x8..x15, −256≤off≤254 | `c.beqz`/`c.bnez` |
///
/// Offsets are the final resolved byte offsets; callers iterate width
/// assignment to a fixed point when offsets depend on addresses.
pub fn compressible(kind: &InstrKind) -> bool {
    match *kind {
        InstrKind::AluImm { op: AluOp::Add, rd, rs1, imm } => {
            if rd.0 == 0 {
                return false;
            }
            if imm == 0 && rs1.0 != 0 {
                return true; // c.mv
            }
            if rs1.0 == 0 && (-32..=31).contains(&imm) {
                return true; // c.li
            }
            rs1 == rd && (-32..=31).contains(&imm) && imm != 0 // c.addi
        }
        InstrKind::Alu { op: AluOp::Add, rd, rs1, rs2 } => rd.0 != 0 && rs1 == rd && rs2.0 != 0,
        InstrKind::Jalr { rd, rs1, offset } => (rd.0 == 0 || rd.0 == 1) && rs1.0 != 0 && offset == 0,
        InstrKind::Jal { rd, offset } => rd.0 == 0 && (-2048..=2046).contains(&offset),
        InstrKind::Branch { op, rs1, rs2, offset } => {
            matches!(op, BranchOp::Beq | BranchOp::Bne)
                && rs2.0 == 0
                && (8..=15).contains(&rs1.0)
                && (-256..=254).contains(&offset)
        }
        _ => false,
    }
}
