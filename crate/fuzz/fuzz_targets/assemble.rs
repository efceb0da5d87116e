#![no_main]

use libfuzzer_sys::fuzz_target;
use sbolab::isa::{assemble, disassemble, AsmOptions};

// The assembler must never panic on arbitrary text, and anything it
// accepts must survive the disassemble/reassemble round trip.
fuzz_target!(|data: &[u8]| {
    let Ok(source) = std::str::from_utf8(data) else { return };
    for compress in [false, true] {
        let opts = AsmOptions { compress };
        if let Ok(program) = assemble(source, opts) {
            program.validate().expect("assembled program violates its invariants");
            let listing = disassemble(&program);
            let again = assemble(&listing, opts).expect("canonical listing must reassemble");
            let strip = |p: &sbolab::isa::Program| {
                p.text.iter().map(|i| (i.kind, i.width, i.addr)).collect::<Vec<_>>()
            };
            assert_eq!(strip(&program), strip(&again), "round trip changed the program");
            assert_eq!(program.data, again.data);
        }
    }
});
