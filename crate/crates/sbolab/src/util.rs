//! Small shared helpers: seed derivation, hashing, quantiles.

/// splitmix64 finalizer. Used as the documented 64-bit mix function behind
/// [`derive_seed`].
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives the seed for one run from the campaign master seed, a stream id
/// and the run index within the stream.
///
/// Streams keep train/test/calibration corpora independent:
/// `seed = mix64(mix64(master ^ GOLD*(stream+1)) ^ GOLD*(index+1))`
/// with `GOLD = 0x9e3779b97f4a7c15` (all arithmetic wrapping).
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    const GOLD: u64 = 0x9e37_79b9_7f4a_7c15;
    let a = mix64(master ^ GOLD.wrapping_mul(stream.wrapping_add(1)));
    mix64(a ^ GOLD.wrapping_mul(index.wrapping_add(1)))
}

/// Seed stream ids used by the campaign runner.
pub mod streams {
    pub const TRAIN: u64 = 0;
    pub const TEST_CLEAN: u64 = 1;
    pub const TEST_ATTACK: u64 = 2;
    pub const CALIB_CLEAN: u64 = 3;
    pub const CALIB_ATTACK: u64 = 4;
    pub const CALIBRATE: u64 = 5;
}

/// FNV-1a over bytes; used for config hashes and per-cell seed derivation.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Nearest-rank empirical quantile: the `ceil(q*n)`-th smallest value
/// (1-based), clamped to the sample. `values` must be non-empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Median as the nearest-rank 0.5 quantile over integer samples.
pub fn median_u64(values: &[u64]) -> u64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    sorted[(sorted.len() - 1) / 2]
}

/// Formats an `f64` with 17 significant digits, enough to round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
