//! Standard-normal helpers and seed derivation shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Φ(x), the standard-normal CDF via the complementary error function;
/// absolute error below 1e-15.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// One-sided upper-tail p-value 1 − Φ(t), evaluated as Φ(−t) so small
/// p-values keep full precision instead of cancelling to zero.
pub fn upper_tail_p(t: f64) -> f64 {
    0.5 * libm::erfc(t / SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// z_{q}, the q-quantile of the standard normal: a rational-approximation
/// start refined by two Newton steps against the erfc-based CDF.
pub fn normal_quantile(q: f64) -> f64 {
    let mut z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(q);
    for _ in 0..2 {
        let density = normal_pdf(z);
        if density < 1e-300 {
            break;
        }
        z -= (normal_cdf(z) - q) / density;
    }
    z
}

/// SplitMix64 finalizer; the standard avalanche mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x1_0000_01b3);
    }
    h
}

/// Derive a child seed from a master seed, an index, and a stage label.
///
/// Used by the experiment runner so that replications and stages never share
/// RNG streams: `derive_seed(s, rep, "train")`, `derive_seed(s, rep, "cate")`,
/// etc. Stable across platforms and releases.
pub fn derive_seed(master: u64, index: u64, stage: &str) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a64(stage.as_bytes())) ^ index)
}
