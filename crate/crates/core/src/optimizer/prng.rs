//! SplitMix64, the generator replicas share for seeded searches.
//!
//! Every replica must draw the identical sequence from the same seed, so the
//! algorithm and its derived operations are fixed here:
//!
//! * `next_u64`: SplitMix64 with the golden-gamma increment `0x9E3779B97F4A7C15`
//!   and the mix constants `0xBF58476D1CE4E5B9`, `0x94D049BB133111EB`.
//! * `next_f64`: the top 53 bits of `next_u64` scaled by `2^-53`, in `[0, 1)`.
//! * `next_int(k)`: `⌊next_f64() · k⌋`.

use rand_core::RngCore;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..k`; `k` must be positive.
    pub fn next_int(&mut self, k: usize) -> usize {
        debug_assert!(k > 0);
        ((self.next_f64() * k as f64) as usize).min(k - 1)
    }

    /// Independent stream for a sub-entity, e.g. one simulated link or client.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut mixer = Self::new(seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
        Self::new(mixer.next_u64())
    }
}

impl RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (SplitMix64::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        SplitMix64::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = SplitMix64::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Parses one line of the test-vector file: `seed out1 out2 ...`, all hex.
pub fn parse_vector_line(line: &str) -> Option<(u64, Vec<u64>)> {
    let mut it = line.split_whitespace().map(|t| u64::from_str_radix(t.trim_start_matches("0x"), 16));
    let seed = it.next()?.ok()?;
    let outs = it.collect::<Result<Vec<_>, _>>().ok()?;
    Some((seed, outs))
}

/// Formats the first `count` outputs for `seed` as a test-vector line.
pub fn vector_line(seed: u64, count: usize) -> String {
    let mut rng = SplitMix64::new(seed);
    let mut line = format!("{seed:016x}");
    for _ in 0..count {
        line.push_str(&format!(" {:016x}", rng.next_u64()));
    }
    line
}
