//! Hardware-event-based detection of stack-buffer-overflow attacks, at desk
//! scale.
//!
//! The crate bundles the whole experiment pipeline:
//!
//! * [`isa`] — an assembler/disassembler for a small RV32 subset,
//! * [`emu`] — a single-hart emulator with eight hardware event counters
//!   reported at end of execution,
//! * [`workloads`] — five exploitable benchmark programs plus the Fibonacci
//!   payload, input generators and payload-size calibration,
//! * [`campaign`] — seeded batch runs producing train/test CSV datasets,
//! * [`detect`] — semi-supervised one-class detectors (OC-SVM, LOF,
//!   isolation forest, elliptic envelope) and an autoencoder path,
//! * [`eval`] — metric computation, the payload-size × feature-count sweep,
//!   and CSV/SVG reports.
//!
//! Everything is deterministic given the configured master seed: campaigns,
//! detector fits and reports reproduce byte-for-byte, also when run on
//! multiple threads.

pub mod campaign;
pub mod config;
pub mod detect;
pub mod emu;
pub mod eval;
pub mod isa;
pub mod progen;
pub mod util;
pub mod workloads;
