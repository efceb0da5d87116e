//! Single-hart emulator for assembled [`Program`]s with an eight-counter
//! hardware event unit. Counters are architectural event counts, not
//! cycles, and are reported only at the end of a run.
//!
//! Machine model and ABI (normative):
//!
//! * byte-addressable little-endian memory, 64 KiB, no protection;
//! * at entry `sp` = memory top, `a0` = input region base, `a1` = input
//!   length; the input region is 4 KiB at `0xE000`;
//! * `ecall` halts with the exit code in `a0`;
//! * a data memory access outside the image, or a `pc` that does not map to
//!   an instruction (a wild return address), halts with `memory_fault`;
//! * `jalr` to an odd target faults at the jump itself.
//!
//! The load-use hazard counter follows a single-load-use-stall rule: one
//! hazard is counted when an instruction reads, as any source operand
//! (including store data), the destination of the immediately preceding
//! load; `rd = x0` never arms the hazard.

use thiserror::Error;

use crate::isa::{source_regs, AluOp, InstrKind, Program, Reg};

/// Memory size of the machine model.
pub const MEM_SIZE: u32 = 64 * 1024;
/// Base address of the 4 KiB input region.
pub const INPUT_BASE: u32 = 0xE000;
/// Capacity of the input region in bytes.
pub const INPUT_CAPACITY: u32 = 4096;
/// Default step limit; bounds runaway workloads without truncating
/// legitimate desk-scale runs.
pub const DEFAULT_STEP_LIMIT: u64 = 5_000_000;

#[derive(Debug, Error)]
pub enum EmuError {
    #[error("input length {len} exceeds the {INPUT_CAPACITY}-byte input region")]
    InputTooLarge { len: usize },
    #[error("program image ends at {end:#x}, beyond the input region base {INPUT_BASE:#x}")]
    ImageTooLarge { end: u32 },
}

/// End-of-run hardware event counters; the feature vector for detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HpcVector {
    pub instr_executed: u64,
    pub load_hazards: u64,
    pub loads: u64,
    pub stores: u64,
    pub jumps: u64,
    pub branches_total: u64,
    pub branches_taken: u64,
    pub compressed: u64,
}

impl HpcVector {
    pub const FEATURE_NAMES: [&'static str; 8] = [
        "instr_executed",
        "load_hazards",
        "loads",
        "stores",
        "jumps",
        "branches_total",
        "branches_taken",
        "compressed",
    ];

    pub fn as_features(&self) -> [f64; 8] {
        [
            self.instr_executed as f64,
            self.load_hazards as f64,
            self.loads as f64,
            self.stores as f64,
            self.jumps as f64,
            self.branches_total as f64,
            self.branches_taken as f64,
            self.compressed as f64,
        ]
    }

    /// Checks the counter algebra; every recorded run must satisfy it.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.branches_taken > self.branches_total {
            return Err(format!(
                "branches_taken {} > branches_total {}",
                self.branches_taken, self.branches_total
            ));
        }
        if self.branches_total > self.instr_executed {
            return Err("branches_total > instr_executed".into());
        }
        if self.loads + self.stores > self.instr_executed {
            return Err("loads + stores > instr_executed".into());
        }
        if self.jumps > self.instr_executed {
            return Err("jumps > instr_executed".into());
        }
        if self.compressed > self.instr_executed {
            return Err("compressed > instr_executed".into());
        }
        if self.load_hazards > self.loads {
            return Err("load_hazards > loads".into());
        }
        Ok(())
    }
}

/// Event classification of one retired instruction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub is_load: bool,
    pub is_store: bool,
    pub is_jump: bool,
    pub is_branch: bool,
    pub branch_taken: bool,
    pub is_compressed: bool,
    pub is_load_hazard: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    CleanExit,
    LimitExceeded,
    MemoryFault,
}

impl ExitStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExitStatus::CleanExit => "clean_exit",
            ExitStatus::LimitExceeded => "limit_exceeded",
            ExitStatus::MemoryFault => "memory_fault",
        }
    }

    pub fn parse(s: &str) -> Option<ExitStatus> {
        match s {
            "clean_exit" => Some(ExitStatus::CleanExit),
            "limit_exceeded" => Some(ExitStatus::LimitExceeded),
            "memory_fault" => Some(ExitStatus::MemoryFault),
            _ => None,
        }
    }
}

/// Result of one complete execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunResult {
    pub hpc: HpcVector,
    pub exit_status: ExitStatus,
    pub exit_code: u32,
    /// True iff `pc` ever entered the program's payload range.
    pub payload_executed: bool,
    /// Retired instructions; always equals `hpc.instr_executed`.
    pub steps: u64,
    /// Retired instructions whose `pc` lay inside the payload range.
    pub payload_steps: u64,
}

/// Outcome of a single step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// Instruction retired with this event classification. The machine may
    /// have halted cleanly (`ecall`).
    Retired(StepEvents),
    /// The step faulted (bad fetch, bad memory access or odd jump target);
    /// nothing retired, machine halted with `memory_fault`.
    Fault,
}

/// Machine state driving one run. `step` has no global state; independent
/// machines may run concurrently.
pub struct Machine<'p> {
    program: &'p Program,
    /// Instruction index per halfword of text, `u32::MAX` for none.
    index: Vec<u32>,
    pub regs: [u32; 32],
    pub pc: u32,
    pub mem: Vec<u8>,
    pub halted: bool,
    pub exit_status: ExitStatus,
    pub exit_code: u32,
    /// Destination of the immediately preceding instruction iff it was a
    /// load with `rd != x0`.
    pub last_load_rd: Option<Reg>,
    payload_entered: bool,
}

impl<'p> Machine<'p> {
    pub fn new(program: &'p Program, input: &[u8]) -> Result<Self, EmuError> {
        if input.len() > INPUT_CAPACITY as usize {
            return Err(EmuError::InputTooLarge { len: input.len() });
        }
        if program.data_end() > INPUT_BASE {
            return Err(EmuError::ImageTooLarge { end: program.data_end() });
        }
        let text_end = program.text_end();
        let mut index = vec![u32::MAX; ((text_end - program.text_base) / 2) as usize];
        for (i, ins) in program.text.iter().enumerate() {
            index[((ins.addr - program.text_base) / 2) as usize] = i as u32;
        }
        let mut mem = vec![0u8; MEM_SIZE as usize];
        let db = program.data_base as usize;
        mem[db..db + program.data.len()].copy_from_slice(&program.data);
        mem[INPUT_BASE as usize..INPUT_BASE as usize + input.len()].copy_from_slice(input);
        let mut regs = [0u32; 32];
        regs[Reg::SP.0 as usize] = MEM_SIZE;
        regs[Reg::A0.0 as usize] = INPUT_BASE;
        regs[Reg::A1.0 as usize] = input.len() as u32;
        Ok(Machine {
            program,
            index,
            regs,
            pc: program.entry,
            mem,
            halted: false,
            exit_status: ExitStatus::LimitExceeded,
            exit_code: 0,
            last_load_rd: None,
            payload_entered: false,
        })
    }

    fn fetch(&self) -> Option<&'p crate::isa::Instruction> {
        if self.pc < self.program.text_base || self.pc % 2 != 0 {
            return None;
        }
        let slot = ((self.pc - self.program.text_base) / 2) as usize;
        let idx = *self.index.get(slot)?;
        if idx == u32::MAX {
            return None;
        }
        Some(&self.program.text[idx as usize])
    }

    fn r(&self, r: Reg) -> u32 {
        self.regs[r.0 as usize]
    }

    fn w(&mut self, r: Reg, v: u32) {
        if r.0 != 0 {
            self.regs[r.0 as usize] = v;
        }
    }

    fn load(&self, addr: u32, size: u32) -> Option<u32> {
        let end = addr.checked_add(size)?;
        if end > MEM_SIZE {
            return None;
        }
        let mut v = 0u32;
        for i in 0..size {
            v |= (self.mem[(addr + i) as usize] as u32) << (8 * i);
        }
        Some(v)
    }

    fn store(&mut self, addr: u32, size: u32, v: u32) -> Option<()> {
        let end = addr.checked_add(size)?;
        if end > MEM_SIZE {
            return None;
        }
        for i in 0..size {
            self.mem[(addr + i) as usize] = (v >> (8 * i)) as u8;
        }
        Some(())
    }

    fn fault(&mut self) -> StepOutcome {
        self.halted = true;
        self.exit_status = ExitStatus::MemoryFault;
        StepOutcome::Fault
    }

    /// Executes one instruction. Pre: not halted.
    pub fn step(&mut self) -> StepOutcome {
        assert!(!self.halted, "step on a halted machine");
        if let Some((start, end)) = self.program.payload_range {
            if self.pc >= start && self.pc < end {
                self.payload_entered = true;
            }
        }
        let ins = match self.fetch() {
            Some(ins) => ins,
            None => return self.fault(),
        };
        let mut ev = StepEvents { is_compressed: ins.width == 2, ..Default::default() };
        if let Some(last) = self.last_load_rd {
            ev.is_load_hazard = source_regs(&ins.kind).iter().flatten().any(|&r| r == last);
        }
        let mut next_load_rd = None;
        let next_pc = self.pc.wrapping_add(ins.width as u32);
        match ins.kind {
            InstrKind::Alu { op, rd, rs1, rs2 } => {
                let v = alu(op, self.r(rs1), self.r(rs2));
                self.w(rd, v);
                self.pc = next_pc;
            }
            InstrKind::AluImm { op, rd, rs1, imm } => {
                let v = alu(op, self.r(rs1), imm as u32);
                self.w(rd, v);
                self.pc = next_pc;
            }
            InstrKind::Load { op, rd, rs1, offset } => {
                ev.is_load = true;
                let addr = self.r(rs1).wrapping_add(offset as u32);
                let raw = match self.load(addr, op.size()) {
                    Some(v) => v,
                    None => return self.fault(),
                };
                let v = match op {
                    crate::isa::LoadOp::Lw | crate::isa::LoadOp::Lbu | crate::isa::LoadOp::Lhu => {
                        raw
                    }
                    crate::isa::LoadOp::Lb => raw as u8 as i8 as i32 as u32,
                    crate::isa::LoadOp::Lh => raw as u16 as i16 as i32 as u32,
                };
                self.w(rd, v);
                if rd.0 != 0 {
                    next_load_rd = Some(rd);
                }
                self.pc = next_pc;
            }
            InstrKind::Store { op, rs2, rs1, offset } => {
                ev.is_store = true;
                let addr = self.r(rs1).wrapping_add(offset as u32);
                if self.store(addr, op.size(), self.r(rs2)).is_none() {
                    return self.fault();
                }
                self.pc = next_pc;
            }
            InstrKind::Branch { op, rs1, rs2, offset } => {
                ev.is_branch = true;
                let a = self.r(rs1);
                let b = self.r(rs2);
                let taken = match op {
                    crate::isa::BranchOp::Beq => a == b,
                    crate::isa::BranchOp::Bne => a != b,
                    crate::isa::BranchOp::Blt => (a as i32) < (b as i32),
                    crate::isa::BranchOp::Bge => (a as i32) >= (b as i32),
                    crate::isa::BranchOp::Bltu => a < b,
                    crate::isa::BranchOp::Bgeu => a >= b,
                };
                ev.branch_taken = taken;
                self.pc = if taken { self.pc.wrapping_add(offset as u32) } else { next_pc };
            }
            InstrKind::Jal { rd, offset } => {
                ev.is_jump = true;
                self.w(rd, next_pc);
                self.pc = self.pc.wrapping_add(offset as u32);
            }
            InstrKind::Jalr { rd, rs1, offset } => {
                ev.is_jump = true;
                let target = self.r(rs1).wrapping_add(offset as u32);
                if target % 2 != 0 {
                    return self.fault();
                }
                self.w(rd, next_pc);
                self.pc = target;
            }
            InstrKind::Lui { rd, imm20 } => {
                self.w(rd, imm20 << 12);
                self.pc = next_pc;
            }
            InstrKind::Auipc { rd, imm20 } => {
                self.w(rd, self.pc.wrapping_add(imm20 << 12));
                self.pc = next_pc;
            }
            InstrKind::Ecall => {
                self.halted = true;
                self.exit_status = ExitStatus::CleanExit;
                self.exit_code = self.r(Reg::A0);
                self.pc = next_pc;
            }
        }
        self.last_load_rd = next_load_rd;
        debug_assert_eq!(self.regs[0], 0);
        StepOutcome::Retired(ev)
    }

    /// True while the current `pc` lies in the payload range.
    pub fn pc_in_payload(&self) -> bool {
        match self.program.payload_range {
            Some((start, end)) => self.pc >= start && self.pc < end,
            None => false,
        }
    }
}

fn alu(op: AluOp, a: u32, b: u32) -> u32 {
    match op {
        AluOp::Add => a.wrapping_add(b),
        AluOp::Sub => a.wrapping_sub(b),
        AluOp::Sll => a.wrapping_shl(b & 31),
        AluOp::Slt => ((a as i32) < (b as i32)) as u32,
        AluOp::Sltu => (a < b) as u32,
        AluOp::Xor => a ^ b,
        AluOp::Srl => a.wrapping_shr(b & 31),
        AluOp::Sra => ((a as i32).wrapping_shr(b & 31)) as u32,
        AluOp::Or => a | b,
        AluOp::And => a & b,
    }
}

/// Runs `program` on `input` until halt or `step_limit`, accumulating the
/// event counters. A pure function of its arguments.
pub fn run(program: &Program, input: &[u8], step_limit: u64) -> Result<RunResult, EmuError> {
    let mut m = Machine::new(program, input)?;
    let mut hpc = HpcVector::default();
    let mut payload_steps = 0u64;
    while !m.halted && hpc.instr_executed < step_limit {
        let in_payload = m.pc_in_payload();
        match m.step() {
            StepOutcome::Retired(ev) => {
                hpc.instr_executed += 1;
                hpc.load_hazards += ev.is_load_hazard as u64;
                hpc.loads += ev.is_load as u64;
                hpc.stores += ev.is_store as u64;
                hpc.jumps += ev.is_jump as u64;
                hpc.branches_total += ev.is_branch as u64;
                hpc.branches_taken += ev.branch_taken as u64;
                hpc.compressed += ev.is_compressed as u64;
                if in_payload {
                    payload_steps += 1;
                }
            }
            StepOutcome::Fault => break,
        }
    }
    let exit_status = if m.halted { m.exit_status } else { ExitStatus::LimitExceeded };
    debug_assert!(hpc.check_invariants().is_ok());
    Ok(RunResult {
        hpc,
        exit_status,
        exit_code: m.exit_code,
        payload_executed: m.payload_entered,
        steps: hpc.instr_executed,
        payload_steps,
    })
}
