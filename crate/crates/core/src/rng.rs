//! Counter-based deterministic random draws.
//!
//! Every random quantity in this crate is a pure function of a 64-bit key
//! assembled from a seed plus structural indices (step, coordinate, node,
//! sample slot, ...). There is no sequential generator state, so draws are
//! independent of evaluation order and of how work is split across threads.
//! Two runs with the same seed produce bit-identical results at any worker
//! count, and removing one kind of draw (for example the crop coin in
//! shift-invariant training) does not shift any other draw.

/// Purpose tags appended to keys so distinct draw kinds never collide.
pub mod tag {
    pub const PRIOR: u64 = 0x01;
    pub const STEP_NOISE: u64 = 0x02;
    pub const SAMPLE: u64 = 0x03;
    pub const BATCH: u64 = 0x04;
    pub const TIME_DRAW: u64 = 0x05;
    pub const NOISE_EPS: u64 = 0x06;
    pub const PARAM_INIT: u64 = 0x07;
    pub const CROP_COIN: u64 = 0x08;
    pub const CROP_OFFSET: u64 = 0x09;
    pub const NODE: u64 = 0x0a;
    pub const AR_BLOCK: u64 = 0x0b;
    pub const CROP_POS: u64 = 0x0c;
    pub const DATA: u64 = 0x0d;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer: a strong 64-bit avalanche.
fn finalize(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mixes an ordered list of 64-bit parts into one key.
pub fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x6a09_e667_f3bc_c909u64; // sqrt(2) fractional bits
    for &p in parts {
        h = finalize(h.wrapping_add(GOLDEN).wrapping_add(p));
    }
    h
}

/// Uniform draw in the open interval (0, 1).
pub fn unit(key: u64) -> f64 {
    // 53 random bits, offset by half an ulp so 0.0 and 1.0 are excluded.
    ((finalize(key) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw via Box–Muller on two decorrelated sub-keys.
pub fn standard_normal(key: u64) -> f64 {
    let u1 = unit(key ^ 0x5851_f42d_4c95_7f2d);
    let u2 = unit(key ^ 0x1405_7b7e_f767_814f);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Uniform integer in `0..n`. `n` must be non-zero.
pub fn index(key: u64, n: usize) -> usize {
    debug_assert!(n > 0);
    // Modulo bias is ~n/2^64, irrelevant at the sizes used here.
    (finalize(key) % n as u64) as usize
}
