//! The five exploitable benchmark programs, input generators, attack
//! crafting and payload-size calibration.
//!
//! Every workload shares the same vulnerable `process_input` frame shape: a
//! 64-byte stack buffer with the saved return address 68 bytes above its
//! base. The attack input is laid out as
//!
//! ```text
//! [ 68 bytes random padding | payload address (4 bytes LE) | k (4 bytes LE) ]
//! ```
//!
//! so one layout rule exploits all five programs. The Fibonacci payload is
//! the last routine of every program; its address range is recorded as the
//! program's payload range.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::emu::{self, RunResult, DEFAULT_STEP_LIMIT, INPUT_CAPACITY};
use crate::isa::{assemble, AsmOptions, Program};
use crate::util::{self, streams};

const AES_SRC: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../workloads/aes.s"));
const RSA_FIXED_SRC: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../workloads/rsa_fixed.s"));
const RSA_FULL_SRC: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../workloads/rsa_full.s"));
const SHA_SRC: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../workloads/sha.s"));
const DIJKSTRA_SRC: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../workloads/dijkstra.s"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WorkloadName {
    Aes,
    RsaFixed,
    RsaFull,
    Sha,
    Dijkstra,
}

impl WorkloadName {
    pub const ALL: [WorkloadName; 5] = [
        WorkloadName::Aes,
        WorkloadName::RsaFixed,
        WorkloadName::RsaFull,
        WorkloadName::Sha,
        WorkloadName::Dijkstra,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WorkloadName::Aes => "aes",
            WorkloadName::RsaFixed => "rsa_fixed",
            WorkloadName::RsaFull => "rsa_full",
            WorkloadName::Sha => "sha",
            WorkloadName::Dijkstra => "dijkstra",
        }
    }

    pub fn parse(s: &str) -> Option<WorkloadName> {
        WorkloadName::ALL.iter().copied().find(|w| w.as_str() == s)
    }

    fn source(&self) -> &'static str {
        match self {
            WorkloadName::Aes => AES_SRC,
            WorkloadName::RsaFixed => RSA_FIXED_SRC,
            WorkloadName::RsaFull => RSA_FULL_SRC,
            WorkloadName::Sha => SHA_SRC,
            WorkloadName::Dijkstra => DIJKSTRA_SRC,
        }
    }
}

impl std::fmt::Display for WorkloadName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Static parameters of one workload's vulnerable frame and input policy.
#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub name: WorkloadName,
    /// Stack buffer size in bytes.
    pub buffer_size: u32,
    /// Bytes from the buffer base to the saved return address slot.
    pub saved_ra_offset: u32,
    /// Inclusive clean input length range; max never exceeds the buffer.
    pub clean_len_range: (u32, u32),
    /// Median clean-run instruction count, filled by calibration.
    pub baseline_instret: Option<u64>,
}

impl WorkloadSpec {
    pub fn new(name: WorkloadName) -> Self {
        let spec = WorkloadSpec {
            name,
            buffer_size: 64,
            saved_ra_offset: 68,
            clean_len_range: (1, 64),
            baseline_instret: None,
        };
        debug_assert!(spec.clean_len_range.1 <= spec.buffer_size);
        debug_assert!(spec.saved_ra_offset >= spec.buffer_size);
        spec
    }
}

/// Fibonacci payload sizing: `payload_instret(k) ~= a*k + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadParams {
    /// Loop iterations delivered inside the attack input.
    pub k: u64,
    /// Requested payload size as a percentage of the clean baseline.
    pub pct: f64,
    /// Instructions per iteration (measured).
    pub a: f64,
    /// Fixed payload overhead in instructions (measured).
    pub b: f64,
}

/// Calibration output: the payload parameters plus what they were derived
/// from.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub params: PayloadParams,
    pub baseline_instret: u64,
    /// Set when even k = 1 overshoots the requested size by more than 3x.
    pub warning: Option<String>,
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("program has no payload range; build it with build_workload")]
    NoPayloadRange,
    #[error("attack input of {len} bytes exceeds the {INPUT_CAPACITY}-byte input region")]
    LayoutOverflow { len: usize },
    #[error("payload parameters require k >= 1")]
    BadPayloadParams,
    #[error(transparent)]
    Emu(#[from] emu::EmuError),
}

/// Assembles the named workload. The payload routine is the last one in
/// every source, so its range runs from the `payload` symbol to text end.
pub fn build_workload(name: WorkloadName, options: AsmOptions) -> Program {
    let source = name.source();
    let mut program = match assemble(source, options) {
        Ok(p) => p,
        Err(e) => panic!("workload `{name}` failed to assemble: {e}"),
    };
    let start = *program
        .symbols
        .get("payload")
        .unwrap_or_else(|| panic!("workload `{name}` has no payload symbol"));
    program.payload_range = Some((start, program.text_end()));
    program
}

/// Deterministic clean input: length uniform in the spec's range, bytes
/// uniform.
pub fn gen_clean_input(spec: &WorkloadSpec, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (min, max) = spec.clean_len_range;
    let len = rng.random_range(min..=max) as usize;
    let mut bytes = vec![0u8; len];
    rng.fill(bytes.as_mut_slice());
    bytes
}

/// Builds the overflowing input: random padding up to the saved return
/// address, then the payload entry address, then the Fibonacci iteration
/// count.
pub fn craft_attack_input(
    spec: &WorkloadSpec,
    program: &Program,
    params: &PayloadParams,
    seed: u64,
) -> Result<Vec<u8>, WorkloadError> {
    let (payload_entry, _) = program.payload_range.ok_or(WorkloadError::NoPayloadRange)?;
    if params.k < 1 {
        return Err(WorkloadError::BadPayloadParams);
    }
    let len = spec.saved_ra_offset as usize + 8;
    if len > INPUT_CAPACITY as usize {
        return Err(WorkloadError::LayoutOverflow { len });
    }
    let mut bytes = vec![0u8; len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.fill(&mut bytes[..spec.saved_ra_offset as usize]);
    let ra = spec.saved_ra_offset as usize;
    bytes[ra..ra + 4].copy_from_slice(&payload_entry.to_le_bytes());
    bytes[ra + 4..ra + 8].copy_from_slice(&(params.k as u32).to_le_bytes());
    Ok(bytes)
}

/// Runs one clean seed through the workload.
pub fn run_clean(
    spec: &WorkloadSpec,
    program: &Program,
    seed: u64,
    step_limit: u64,
) -> Result<RunResult, WorkloadError> {
    let input = gen_clean_input(spec, seed);
    Ok(emu::run(program, &input, step_limit)?)
}

/// Measures the payload cost line and picks k for the requested percentage
/// of the median clean baseline.
///
/// The baseline is the median `instr_executed` over 200 seeded clean runs;
/// (a, b) come from in-payload step counts at two probe k values.
pub fn calibrate(
    spec: &WorkloadSpec,
    program: &Program,
    pct: f64,
    master_seed: u64,
) -> Result<Calibration, WorkloadError> {
    assert!(pct > 0.0, "payload percentage must be positive");
    const BASELINE_RUNS: u64 = 200;
    let mut instrs = Vec::with_capacity(BASELINE_RUNS as usize);
    for i in 0..BASELINE_RUNS {
        let seed = util::derive_seed(master_seed, streams::CALIBRATE, i);
        let r = run_clean(spec, program, seed, DEFAULT_STEP_LIMIT)?;
        instrs.push(r.hpc.instr_executed);
    }
    let baseline = util::median_u64(&instrs);

    let probe = |k: u64| -> Result<u64, WorkloadError> {
        let params = PayloadParams { k, pct, a: 0.0, b: 0.0 };
        let seed = util::derive_seed(master_seed, streams::CALIBRATE, BASELINE_RUNS + k);
        let input = craft_attack_input(spec, program, &params, seed)?;
        let r = emu::run(program, &input, DEFAULT_STEP_LIMIT)?;
        debug_assert!(r.payload_executed);
        Ok(r.payload_steps)
    };
    let (k1, k2) = (50u64, 150u64);
    let (p1, p2) = (probe(k1)?, probe(k2)?);
    let a = (p2 as f64 - p1 as f64) / (k2 - k1) as f64;
    let b = p1 as f64 - a * k1 as f64;

    let target = pct / 100.0 * baseline as f64;
    let k = (((target - b) / a).round() as i64).max(1) as u64;
    let achieved_at_one = a + b;
    let warning = if k == 1 && achieved_at_one > 3.0 * target {
        Some(format!(
            "requested {pct}% of baseline {baseline} is {target:.0} instructions, \
             but the smallest payload already costs {achieved_at_one:.0}"
        ))
    } else {
        None
    };
    Ok(Calibration { params: PayloadParams { k, pct, a, b }, baseline_instret: baseline, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emu::{run, ExitStatus};

    fn build(name: WorkloadName) -> Program {
        build_workload(name, AsmOptions::default())
    }

    #[test]
    fn all_workloads_assemble_with_and_without_compression() {
        for name in WorkloadName::ALL {
            let p = build_workload(name, AsmOptions::default());
            p.validate().unwrap();
            assert!(p.payload_range.is_some());
            let pc = build_workload(name, AsmOptions { compress: true });
            pc.validate().unwrap();
            assert_eq!(p.text.len(), pc.text.len(), "{name}: compression changed instruction count");
        }
    }

    #[test]
    fn clean_inputs_deterministic_and_in_range() {
        let spec = WorkloadSpec::new(WorkloadName::Aes);
        assert_eq!(gen_clean_input(&spec, 7), gen_clean_input(&spec, 7));
        assert_ne!(gen_clean_input(&spec, 7), gen_clean_input(&spec, 8));
        for seed in 0..500 {
            let len = gen_clean_input(&spec, seed).len() as u32;
            assert!(len >= spec.clean_len_range.0 && len <= spec.clean_len_range.1);
        }
    }

    #[test]
    fn clean_input_length_distribution_covers_range() {
        let spec = WorkloadSpec::new(WorkloadName::Sha);
        let mut seen = [false; 65];
        for seed in 0..10_000 {
            seen[gen_clean_input(&spec, seed).len()] = true;
        }
        for len in 1..=64 {
            assert!(seen[len], "length {len} never generated");
        }
    }

    #[test]
    fn workloads_run_clean_and_deterministic() {
        for name in WorkloadName::ALL {
            let spec = WorkloadSpec::new(name);
            let p = build(name);
            let a = run_clean(&spec, &p, 42, DEFAULT_STEP_LIMIT).unwrap();
            let b = run_clean(&spec, &p, 42, DEFAULT_STEP_LIMIT).unwrap();
            assert_eq!(a, b, "{name} not deterministic");
            assert_eq!(a.exit_status, ExitStatus::CleanExit, "{name} did not exit cleanly");
            assert!(!a.payload_executed, "{name} clean run entered the payload");
            a.hpc.check_invariants().unwrap();
        }
    }

    #[test]
    fn exploit_works_on_every_workload() {
        for name in WorkloadName::ALL {
            let spec = WorkloadSpec::new(name);
            let p = build(name);
            let params = PayloadParams { k: 10, pct: 1.0, a: 5.0, b: 4.0 };
            let input = craft_attack_input(&spec, &p, &params, 1).unwrap();
            assert_eq!(input.len(), 76);
            let r = run(&p, &input, DEFAULT_STEP_LIMIT).unwrap();
            assert!(r.payload_executed, "{name}: exploit missed the payload");
            assert_eq!(r.exit_status, ExitStatus::CleanExit, "{name}: payload did not halt");
        }
    }

    // The payload cost line is exact: 5 instructions per iteration plus 4
    // of entry/halt overhead, so payload steps for k and k+100 differ by
    // exactly 500. Total instructions additionally shift by the checksum
    // cost of the k field itself: the low k byte goes 10 -> 110, which is
    // 3 more residue-fold iterations at 2 instructions each.
    #[test]
    fn payload_cost_is_linear_in_k() {
        let spec = WorkloadSpec::new(WorkloadName::Aes);
        let p = build(WorkloadName::Aes);
        let at = |k: u64| {
            let params = PayloadParams { k, pct: 1.0, a: 0.0, b: 0.0 };
            let input = craft_attack_input(&spec, &p, &params, 3).unwrap();
            run(&p, &input, DEFAULT_STEP_LIMIT).unwrap()
        };
        let r1 = at(10);
        let r2 = at(110);
        assert_eq!(r2.payload_steps - r1.payload_steps, 500);
        assert_eq!(r2.hpc.instr_executed - r1.hpc.instr_executed, 500 + 6);
    }

    // Truncating the crafted input so the return address is only partially
    // overwritten must not reach the payload: the stale high bytes of the
    // slot send execution back into early text (or into a fault), and the
    // payload sits far beyond that. Cutting the whole overflow off leaves
    // a clean run.
    #[test]
    fn truncated_attack_never_reaches_payload() {
        for name in WorkloadName::ALL {
            let spec = WorkloadSpec::new(name);
            let p = build(name);
            let params = PayloadParams { k: 10, pct: 1.0, a: 5.0, b: 4.0 };
            let input = craft_attack_input(&spec, &p, &params, 5).unwrap();
            for keep in [69, 68] {
                let r = run(&p, &input[..keep], DEFAULT_STEP_LIMIT).unwrap();
                assert!(
                    !r.payload_executed,
                    "{name}: truncated input ({keep} bytes) still reached the payload"
                );
            }
        }
    }

    #[test]
    fn calibration_hits_requested_percentage() {
        let spec = WorkloadSpec::new(WorkloadName::Sha);
        let p = build(WorkloadName::Sha);
        for pct in [1.0, 2.0, 5.0] {
            let cal = calibrate(&spec, &p, pct, 99).unwrap();
            let input = craft_attack_input(&spec, &p, &cal.params, 17).unwrap();
            let r = run(&p, &input, DEFAULT_STEP_LIMIT).unwrap();
            let achieved = r.payload_steps as f64 / cal.baseline_instret as f64 * 100.0;
            assert!(
                (achieved - pct).abs() <= 0.1 * pct,
                "pct {pct}: achieved {achieved:.3}"
            );
        }
    }

    #[test]
    fn calibration_doubles_k_with_pct() {
        let spec = WorkloadSpec::new(WorkloadName::Aes);
        let p = build(WorkloadName::Aes);
        let c1 = calibrate(&spec, &p, 1.0, 7).unwrap();
        let c2 = calibrate(&spec, &p, 2.0, 7).unwrap();
        let ratio = c2.params.k as f64 / c1.params.k as f64;
        assert!((1.9..=2.1).contains(&ratio), "ratio {ratio}");
    }

    // rsa_full's prime search makes its run cost vary run to run; the
    // fixed-prime variant stays comparatively tight.
    #[test]
    fn rsa_full_disperses_more_than_rsa_fixed() {
        let std_dev = |name: WorkloadName| {
            let spec = WorkloadSpec::new(name);
            let p = build(name);
            let xs: Vec<f64> = (0..100)
                .map(|s| {
                    run_clean(&spec, &p, s, DEFAULT_STEP_LIMIT).unwrap().hpc.instr_executed as f64
                })
                .collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
        };
        let full = std_dev(WorkloadName::RsaFull);
        let fixed = std_dev(WorkloadName::RsaFixed);
        assert!(full > fixed, "full {full} <= fixed {fixed}");
    }

    // Committed 4-node graph, hand-derived: with input [0, 9] the matrix
    // derivation alternates bytes 0 and 9 per cell (row stride 16 keeps
    // the parity of the cell index equal to the parity of the column), so
    // w(i, even j) = 1 and w(i, odd j) = 10. n = 4 + (0 mod 13) = 4.
    // Shortest 0 -> 3: direct edge w(0,3) = 10; via node 2: w(0,2) +
    // w(2,3) = 1 + 10 = 11. Answer: 10.
    #[test]
    fn dijkstra_hand_computed_graph() {
        let p = build(WorkloadName::Dijkstra);
        let r = run(&p, &[0, 9], DEFAULT_STEP_LIMIT).unwrap();
        assert_eq!(r.exit_status, ExitStatus::CleanExit);
        assert_eq!(r.exit_code, 10);
    }

    #[test]
    fn compression_neutrality_on_workloads() {
        for name in WorkloadName::ALL {
            let spec = WorkloadSpec::new(name);
            let plain = build_workload(name, AsmOptions::default());
            let comp = build_workload(name, AsmOptions { compress: true });
            for seed in [1u64, 2, 3] {
                let input = gen_clean_input(&spec, seed);
                let a = run(&plain, &input, DEFAULT_STEP_LIMIT).unwrap();
                let b = run(&comp, &input, DEFAULT_STEP_LIMIT).unwrap();
                assert_eq!(a.exit_code, b.exit_code, "{name} seed {seed}");
                assert_eq!(a.exit_status, b.exit_status);
                assert_eq!(a.hpc.instr_executed, b.hpc.instr_executed);
                assert_eq!(a.hpc.loads, b.hpc.loads);
                assert_eq!(a.hpc.stores, b.hpc.stores);
                assert_eq!(a.hpc.jumps, b.hpc.jumps);
                assert_eq!(a.hpc.branches_total, b.hpc.branches_total);
                assert_eq!(a.hpc.branches_taken, b.hpc.branches_taken);
                assert_eq!(a.hpc.load_hazards, b.hpc.load_hazards);
                assert_eq!(a.hpc.compressed, 0, "{name}: plain build counted compressed");
                assert!(b.hpc.compressed > 0, "{name}: compressed build counted none");
            }
        }
    }
}
