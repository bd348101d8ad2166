//! Deterministic pseudo-random stream used by the MDP generators and the
//! Monte Carlo test oracles.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood): 64-bit state advanced
//! by the golden-ratio increment `0x9E3779B97F4A7C15`, output mixed with the
//! `0xBF58476D1CE4E5B9` / `0x94D049BB133111EB` finalizer. The stream is fully
//! specified here so an independent implementation reproduces it bit-exactly:
//!
//! * `next_u64`: `state += 0x9E3779B97F4A7C15; z = state;
//!   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//!   z = (z ^ (z >> 27)) * 0x94D049BB133111EB; return z ^ (z >> 31)`.
//! * `next_f64`: `(next_u64() >> 11) as f64 * 2^-53`, uniform on `[0, 1)`.
//! * `next_open01`: `((next_u64() >> 11) as f64 + 0.5) * 2^-53`, uniform on
//!   `(0, 1)`; used where a strictly positive draw is required.
//! * `next_below(n)`: rejection sampling on the low bits (smallest power of
//!   two mask covering `n`), so the result is exactly uniform on `0..n`.

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Stream used for retry attempt `t` of a seeded generator: the seed is
    /// offset by `t` golden-ratio increments before mixing begins.
    pub fn for_attempt(seed: u64, attempt: u64) -> Self {
        SplitMix64 {
            state: seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`; never returns 0.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` via masked rejection sampling.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below(0)");
        let n = n as u64;
        let mask = n.next_power_of_two().wrapping_sub(1).max(n - 1);
        loop {
            let v = self.next_u64() & mask;
            if v < n {
                return v as usize;
            }
        }
    }

    /// Draws `k` distinct values from `0..n` by a partial Fisher-Yates
    /// shuffle of the identity array; the draw order is part of the stream
    /// contract.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
