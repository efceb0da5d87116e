#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use sbolab::isa::{AsmOptions, Program};
use sbolab::workloads::{build_workload, WorkloadName};

fn program() -> &'static Program {
    static PROGRAM: OnceLock<Program> = OnceLock::new();
    PROGRAM.get_or_init(|| build_workload(WorkloadName::Aes, AsmOptions { compress: true }))
}

// The emulator is the component that faces attacker-controlled input: any
// byte string up to the region capacity must run to a definite outcome
// with the counter algebra intact.
fuzz_target!(|data: &[u8]| {
    let input = &data[..data.len().min(4096)];
    let r = sbolab::emu::run(program(), input, 200_000).expect("in-capacity input");
    r.hpc.check_invariants().expect("counter algebra");
    assert_eq!(r.steps, r.hpc.instr_executed);
});
