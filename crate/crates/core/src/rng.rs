//! Counter-based random numbers.
//!
//! Noise is addressed by `(key, counter)` instead of being drawn from a
//! sequential stream, so any particle's increment at any step can be
//! regenerated independently. This is what makes parallel force loops and
//! replica scheduling unable to change results.

use std::f64::consts::PI;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

#[inline(always)]
fn philox_round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
    let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
    [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0]
}

/// Philox4x32 with 10 rounds (Salmon et al., Random123).
#[inline]
pub fn philox4x32(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    ctr = philox_round(ctr, key);
    for _ in 1..10 {
        key[0] = key[0].wrapping_add(PHILOX_W0);
        key[1] = key[1].wrapping_add(PHILOX_W1);
        ctr = philox_round(ctr, key);
    }
    ctr
}

/// SplitMix64 finalizer, used to fold seeds and tags into keys.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Well-known stream tags, so different consumers of one seed never collide.
pub mod tags {
    pub const DYNAMICS: u64 = 0x6479_6e61;
    pub const INITIAL: u64 = 0x696e_6974;
    pub const INITIAL_B: u64 = 0x696e_6962;
    pub const MALA: u64 = 0x6d61_6c61;
    pub const PROJECTIONS: u64 = 0x7072_6f6a;
    pub const REFERENCE: u64 = 0x7265_6665;
    pub const SCAN: u64 = 0x7363_616e;
}

/// A keyed counter-based generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseStream {
    key: [u32; 2],
}

#[inline(always)]
fn unit_open(hi: u32, lo: u32) -> f64 {
    // 53 random bits mapped to the open interval (0, 1).
    let bits = ((hi as u64) << 21) ^ ((lo as u64) >> 11);
    ((bits & ((1u64 << 53) - 1)) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

impl NoiseStream {
    /// Derives a stream key from a seed and a path of tags
    /// (e.g. `[tags::DYNAMICS, replica]`).
    pub fn new(seed: u64, path: &[u64]) -> Self {
        let mut h = splitmix64(seed);
        for &t in path {
            h = splitmix64(h ^ splitmix64(t));
        }
        NoiseStream {
            key: [h as u32, (h >> 32) as u32],
        }
    }

    #[inline]
    pub fn raw(&self, a: u64, b: u32, c: u32) -> [u32; 4] {
        philox4x32([a as u32, (a >> 32) as u32, b, c], self.key)
    }

    /// Two uniforms on (0, 1) at counter `(a, b, c)`.
    #[inline]
    pub fn uniform_pair(&self, a: u64, b: u32, c: u32) -> (f64, f64) {
        let r = self.raw(a, b, c);
        (unit_open(r[0], r[1]), unit_open(r[2], r[3]))
    }

    #[inline]
    pub fn uniform(&self, a: u64, b: u32, c: u32) -> f64 {
        self.uniform_pair(a, b, c).0
    }

    /// Two independent standard normals at counter `(a, b, c)` (Box–Muller).
    #[inline]
    pub fn normal_pair(&self, a: u64, b: u32, c: u32) -> (f64, f64) {
        let (u1, u2) = self.uniform_pair(a, b, c);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, co) = (2.0 * PI * u2).sin_cos();
        (r * co, r * s)
    }

    /// Fills `out` with the `out.len()` standard normals of row `row` at
    /// counter `a`: component `k` comes from block `k / 2`.
    #[inline]
    pub fn fill_normals(&self, a: u64, row: u32, out: &mut [f64]) {
        for (block, chunk) in out.chunks_mut(2).enumerate() {
            let (z0, z1) = self.normal_pair(a, row, block as u32);
            chunk[0] = z0;
            if chunk.len() > 1 {
                chunk[1] = z1;
            }
        }
    }

    /// Noise for all `n` rows of width `dim` at counter `a`, row-major.
    pub fn fill_matrix(&self, a: u64, dim: usize, out: &mut [f64]) {
        use rayon::prelude::*;
        out.par_chunks_mut(dim)
            .with_min_len(512)
            .enumerate()
            .for_each(|(i, row)| self.fill_normals(a, i as u32, row));
    }
}
