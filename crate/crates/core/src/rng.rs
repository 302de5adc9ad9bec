//! Counter-based random streams.
//!
//! Every random quantity in a scenario is derived from one root seed through
//! labeled sub-streams, so streams can be reproduced bit-exactly in any
//! language:
//!
//! * `key = splitmix64(root ^ fnv1a64(label))`
//! * the `c`-th raw word (c = 0, 1, ...) of a stream is
//!   `splitmix64(key + (c + 1) * 0x9E3779B97F4A7C15)` (wrapping arithmetic),
//!   i.e. the reference SplitMix64 generator seeded with `key`
//! * a uniform draw is `((word >> 11) + 0.5) * 2^-53`, always in the open
//!   interval (0, 1)
//! * standard normals come in Box-Muller pairs from two consecutive uniforms
//!   `u1, u2`: `r = sqrt(-2 ln u1)`, `(r cos(2 pi u2), r sin(2 pi u2))`

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a hash of a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives a sub-seed of `root` for the given label.
pub fn sub_seed(root: u64, label: &str) -> u64 {
    splitmix64(root ^ fnv1a64(label.as_bytes()))
}

/// Derives a sub-seed of `root` indexed by a list of integers, e.g. `(t, n)`.
pub fn indexed_seed(root: u64, label: &str, index: &[u64]) -> u64 {
    let mut key = sub_seed(root, label);
    for &i in index {
        key = splitmix64(key ^ splitmix64(i.wrapping_add(GOLDEN)));
    }
    key
}

/// A position in a SplitMix64 stream. Cloning a stream forks it.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(key: u64) -> Self {
        Self {
            key,
            counter: 0,
            spare: None,
        }
    }

    /// Stream for `label` under the root seed.
    pub fn labeled(root: u64, label: &str) -> Self {
        Self::new(sub_seed(root, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        splitmix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box-Muller, cosine branch first).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * angle.sin());
        r * angle.cos()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
