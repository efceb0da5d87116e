//! Property suite: randomized programs survive the disassemble/reassemble
//! round trip in both width modes.

use proptest::prelude::*;

use sbolab::isa::{assemble, disassemble, AsmOptions, Program};
use sbolab::progen;

fn strip(p: &Program) -> Vec<(sbolab::isa::InstrKind, u8, u32)> {
    p.text.iter().map(|i| (i.kind, i.width, i.addr)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn random_programs_round_trip(seed in any::<u64>(), compress in any::<bool>()) {
        let source = progen::random_source(seed);
        let opts = AsmOptions { compress };
        let first = assemble(&source, opts).expect("generated program assembles");
        let listing = disassemble(&first);
        let second = assemble(&listing, opts).expect("listing reassembles");
        prop_assert_eq!(strip(&first), strip(&second));
        prop_assert_eq!(&first.data, &second.data);
        prop_assert_eq!(first.entry, second.entry);
    }
}
