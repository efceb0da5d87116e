//! Seeded generator of random *safe* programs: bounded loops, in-bounds
//! memory traffic, forward control flow, always terminating in an `ecall`.
//! The differential and counter-algebra suites run thousands of these.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const POOL: [&str; 8] = ["t0", "t1", "t2", "t3", "t4", "t5", "s0", "s1"];

fn reg(rng: &mut ChaCha8Rng) -> &'static str {
    POOL[rng.random_range(0..POOL.len())]
}

/// Generates the source of a random safe program. Deterministic in `seed`.
pub fn random_source(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src = String::new();
    let mut label = 0usize;

    for r in &POOL {
        src.push_str(&format!("    li {r}, {}\n", rng.random_range(-64i32..64)));
    }
    src.push_str("    li a2, scratch\n");

    let blocks = rng.random_range(1..=10);
    for _ in 0..blocks {
        match rng.random_range(0..5) {
            // ALU burst.
            0 => {
                for _ in 0..rng.random_range(1..=5) {
                    let ops = ["add", "sub", "sll", "slt", "sltu", "xor", "srl", "sra", "or", "and"];
                    let op = ops[rng.random_range(0..ops.len())];
                    src.push_str(&format!(
                        "    {op} {}, {}, {}\n",
                        reg(&mut rng),
                        reg(&mut rng),
                        reg(&mut rng)
                    ));
                }
            }
            // Immediate forms.
            1 => {
                for _ in 0..rng.random_range(1..=4) {
                    let (op, lo, hi) = [
                        ("addi", -2048, 2047),
                        ("andi", -2048, 2047),
                        ("ori", -2048, 2047),
                        ("xori", -2048, 2047),
                        ("slli", 0, 31),
                        ("srli", 0, 31),
                        ("srai", 0, 31),
                    ][rng.random_range(0..7)];
                    src.push_str(&format!(
                        "    {op} {}, {}, {}\n",
                        reg(&mut rng),
                        reg(&mut rng),
                        rng.random_range(lo..=hi)
                    ));
                }
            }
            // Store/load pair in the scratch region, sometimes with a
            // dependent consumer right after the load.
            2 => {
                let off = rng.random_range(0..16) * 4;
                let (st, ld) = [("sw", "lw"), ("sb", "lbu"), ("sh", "lhu"), ("sb", "lb"), ("sh", "lh")]
                    [rng.random_range(0..5)];
                let r1 = reg(&mut rng);
                let r2 = reg(&mut rng);
                src.push_str(&format!("    {st} {r1}, {off}(a2)\n"));
                src.push_str(&format!("    {ld} {r2}, {off}(a2)\n"));
                if rng.random_bool(0.5) {
                    src.push_str(&format!("    add {}, {r2}, {r2}\n", reg(&mut rng)));
                }
            }
            // Counted loop with a small body; the body never writes the
            // counter register.
            3 => {
                let counter = reg(&mut rng);
                let k = rng.random_range(1..=12);
                let l = format!("L{label}");
                label += 1;
                src.push_str(&format!("    li {counter}, {k}\n{l}:\n"));
                for _ in 0..rng.random_range(1..=3) {
                    let rd = loop {
                        let r = reg(&mut rng);
                        if r != counter {
                            break r;
                        }
                    };
                    src.push_str(&format!(
                        "    add {rd}, {}, {}\n",
                        reg(&mut rng),
                        reg(&mut rng)
                    ));
                }
                src.push_str(&format!("    addi {counter}, {counter}, -1\n"));
                src.push_str(&format!("    bne {counter}, x0, {l}\n"));
            }
            // Forward branch or jump over a short block.
            _ => {
                let l = format!("F{label}");
                label += 1;
                if rng.random_bool(0.3) {
                    src.push_str(&format!("    j {l}\n"));
                } else {
                    let ops = ["beq", "bne", "blt", "bge", "bltu", "bgeu"];
                    src.push_str(&format!(
                        "    {} {}, {}, {l}\n",
                        ops[rng.random_range(0..ops.len())],
                        reg(&mut rng),
                        reg(&mut rng)
                    ));
                }
                for _ in 0..rng.random_range(1..=3) {
                    src.push_str(&format!(
                        "    xor {}, {}, {}\n",
                        reg(&mut rng),
                        reg(&mut rng),
                        reg(&mut rng)
                    ));
                }
                src.push_str(&format!("{l}:\n"));
            }
        }
    }

    src.push_str(&format!("    mv a0, {}\n    ecall\n", reg(&mut rng)));
    src.push_str("    .data\nscratch: .space 64\n");
    src
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emu::{run, ExitStatus, DEFAULT_STEP_LIMIT};
    use crate::isa::{assemble, AsmOptions};

    #[test]
    fn generated_programs_assemble_and_halt_cleanly() {
        for seed in 0..200 {
            let src = random_source(seed);
            let p = assemble(&src, AsmOptions::default())
                .unwrap_or_else(|e| panic!("seed {seed}: {e}\n{src}"));
            let r = run(&p, &[], DEFAULT_STEP_LIMIT).unwrap();
            assert_eq!(r.exit_status, ExitStatus::CleanExit, "seed {seed}\n{src}");
            r.hpc.check_invariants().unwrap();
        }
    }
}
