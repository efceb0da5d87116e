//! Disassembler emitting canonical assembly that re-assembles to an
//! identical instruction sequence, widths and data image (given the same
//! options). Branch and jump targets are printed as numeric byte offsets;
//! the payload range is not representable and is dropped.

use super::{InstrKind, Program, TEXT_BASE};

pub fn disassemble(program: &Program) -> String {
    let mut out = String::new();
    out.push_str("    .text\n");
    if program.entry != TEXT_BASE {
        out.push_str("    .global _start\n");
    }
    for ins in &program.text {
        if program.entry != TEXT_BASE && ins.addr == program.entry {
            out.push_str("_start:\n");
        }
        out.push_str("    ");
        out.push_str(&instr_text(&ins.kind));
        out.push('\n');
    }
    if !program.data.is_empty() {
        out.push_str("    .data\n");
        for chunk in program.data.chunks(12) {
            out.push_str("    .byte ");
            for (i, b) in chunk.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&format!("{b:#04x}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Canonical text for one instruction, offsets numeric.
pub fn instr_text(kind: &InstrKind) -> String {
    match *kind {
        InstrKind::Alu { op, rd, rs1, rs2 } => format!("{} {rd}, {rs1}, {rs2}", op.mnemonic()),
        InstrKind::AluImm { op, rd, rs1, imm } => {
            let m = match op {
                super::AluOp::Add => "addi",
                super::AluOp::Slt => "slti",
                super::AluOp::Sltu => "sltiu",
                super::AluOp::Xor => "xori",
                super::AluOp::Or => "ori",
                super::AluOp::And => "andi",
                super::AluOp::Sll => "slli",
                super::AluOp::Srl => "srli",
                super::AluOp::Sra => "srai",
                super::AluOp::Sub => unreachable!("no subi form"),
            };
            format!("{m} {rd}, {rs1}, {imm}")
        }
        InstrKind::Load { op, rd, rs1, offset } => {
            format!("{} {rd}, {offset}({rs1})", op.mnemonic())
        }
        InstrKind::Store { op, rs2, rs1, offset } => {
            format!("{} {rs2}, {offset}({rs1})", op.mnemonic())
        }
        InstrKind::Branch { op, rs1, rs2, offset } => {
            format!("{} {rs1}, {rs2}, {offset}", op.mnemonic())
        }
        InstrKind::Jal { rd, offset } => format!("jal {rd}, {offset}"),
        InstrKind::Jalr { rd, rs1, offset } => format!("jalr {rd}, {rs1}, {offset}"),
        InstrKind::Lui { rd, imm20 } => format!("lui {rd}, {imm20:#x}"),
        InstrKind::Auipc { rd, imm20 } => format!("auipc {rd}, {imm20:#x}"),
        InstrKind::Ecall => "ecall".to_string(),
    }
}
