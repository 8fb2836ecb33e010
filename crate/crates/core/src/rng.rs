//! Portable SplitMix64 random numbers.
//!
//! The generator is fully specified by its update equations, so any
//! implementation reproduces the same phantoms and subsamples:
//!
//! ```text
//! state  <- state + 0x9E3779B97F4A7C15            (mod 2^64)
//! z      <- state
//! z      <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (mod 2^64)
//! z      <- (z ^ (z >> 27)) * 0x94D049BB133111EB  (mod 2^64)
//! output <- z ^ (z >> 31)
//! ```
//!
//! Because the state advances by a constant, output `i` of a stream that
//! starts at `key` is `mix(key + (i + 1) * GAMMA)`. [`CounterRng`] uses
//! this to draw the value for any (stream, counter) pair directly, which
//! keeps voxel-level draws independent of traversal order.
//!
//! Uniforms take the top 53 bits: `u = (x >> 11) * 2^-53`. Normals use
//! Box-Muller on two consecutive counters: `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.

pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_MUL: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential SplitMix64.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform integer in `0..n` by rejection, free of modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        box_muller(self.next_f64(), self.next_f64())
    }
}

#[inline]
fn box_muller(u1: f64, u2: f64) -> f64 {
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Random access into the SplitMix64 streams derived from one seed.
#[derive(Clone, Copy, Debug)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Starting state of stream `stream`.
    #[inline]
    pub fn key(&self, stream: u64) -> u64 {
        mix64(self.seed.wrapping_add(stream.wrapping_mul(STREAM_MUL)))
    }

    #[inline]
    pub fn u64_at(&self, stream: u64, counter: u64) -> u64 {
        mix64(
            self.key(stream)
                .wrapping_add(counter.wrapping_add(1).wrapping_mul(GAMMA)),
        )
    }

    #[inline]
    pub fn uniform_at(&self, stream: u64, counter: u64) -> f64 {
        to_unit(self.u64_at(stream, counter))
    }

    /// Standard normal draw `i` of a stream (uses counters `2i` and `2i+1`).
    #[inline]
    pub fn normal_at(&self, stream: u64, i: u64) -> f64 {
        box_muller(
            self.uniform_at(stream, 2 * i),
            self.uniform_at(stream, 2 * i + 1),
        )
    }

    /// A sequential generator positioned at the start of `stream`.
    pub fn stream(&self, stream: u64) -> SplitMix64 {
        SplitMix64::new(self.key(stream))
    }
}
