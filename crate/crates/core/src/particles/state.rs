use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KclError, Result};
use crate::rng::NoiseStream;

const MAGIC: &[u8; 4] = b"KCL1";

/// Phase-space configuration of `N` particles in dimension `d`, stored
/// row-major (`positions[i * d + k]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub n: usize,
    pub dim: usize,
    pub time: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

/// Independent Gaussian initial law `N(x_mean, x_std²) ⊗ N(y_mean, y_std²)`
/// per coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianInit {
    pub x_mean: f64,
    pub x_std: f64,
    pub y_mean: f64,
    pub y_std: f64,
}

impl ParticleState {
    pub fn new(n: usize, dim: usize, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        let s = ParticleState {
            n,
            dim,
            time: 0.0,
            positions,
            velocities,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        ParticleState {
            n,
            dim,
            time: 0.0,
            positions: vec![0.0; n * dim],
            velocities: vec![0.0; n * dim],
        }
    }

    /// Draws every coordinate independently from `init` using `stream`.
    pub fn sample_gaussian(
        n: usize,
        dim: usize,
        init: &GaussianInit,
        stream: &NoiseStream,
    ) -> Result<Self> {
        if !(init.x_std >= 0.0 && init.y_std >= 0.0) {
            return Err(KclError::invalid(
                "initial",
                "standard deviations must be nonnegative",
            ));
        }
        let mut s = ParticleState::zeros(n, dim);
        stream.fill_matrix(0, dim, &mut s.positions);
        stream.fill_matrix(1, dim, &mut s.velocities);
        for v in &mut s.positions {
            *v = init.x_mean + init.x_std * *v;
        }
        for v in &mut s.velocities {
            *v = init.y_mean + init.y_std * *v;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.dim == 0 {
            return Err(KclError::invalid("state", "N and d must be positive"));
        }
        for (name, arr) in [
            ("positions", &self.positions),
            ("velocities", &self.velocities),
        ] {
            if arr.len() != self.n * self.dim {
                return Err(KclError::Dimension {
                    expected: self.n * self.dim,
                    got: arr.len(),
                });
            }
            if let Some(i) = arr.iter().position(|v| !v.is_finite()) {
                return Err(KclError::NonFinite {
                    what: name.to_string(),
                    location: format!("particle {}", i / self.dim),
                });
            }
        }
        if !(self.time.is_finite() && self.time >= 0.0) {
            return Err(KclError::invalid("time", "must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    /// Reorders particles so that new particle `k` is old particle `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        let mut out = self.clone();
        for (k, &i) in perm.iter().enumerate() {
            out.positions[k * d..(k + 1) * d].copy_from_slice(self.position(i));
            out.velocities[k * d..(k + 1) * d].copy_from_slice(self.velocity(i));
        }
        out
    }

    /// Phase-space points `(x_i, y_i)` as rows of width `2d`.
    pub fn phase_points(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(2 * self.n * d);
        for i in 0..self.n {
            out.extend_from_slice(self.position(i));
            out.extend_from_slice(self.velocity(i));
        }
        out
    }

    /// `Σ_i (|x_i − x'_i|² + |y_i − y'_i|²) / N`.
    pub fn mean_sq_distance(&self, other: &ParticleState) -> Result<f64> {
        if self.n != other.n || self.dim != other.dim {
            return Err(KclError::Dimension {
                expected: self.n * self.dim,
                got: other.n * other.dim,
            });
        }
        let sq =
            |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        Ok(
            (sq(&self.positions, &other.positions) + sq(&self.velocities, &other.velocities))
                / self.n as f64,
        )
    }

    /// Writes the `KCL1` little-endian snapshot.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.time.to_le_bytes())?;
        let mut buf = Vec::with_capacity(16 * self.n * self.dim);
        for v in self.positions.iter().chain(&self.velocities) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |reason: &str| KclError::Format {
            what: "snapshot",
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| fmt("truncated header"))?;
        if &magic != MAGIC {
            return Err(fmt("bad magic bytes"));
        }
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b8).map_err(|_| fmt("truncated header"))?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4).map_err(|_| fmt("truncated header"))?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8).map_err(|_| fmt("truncated header"))?;
        let time = f64::from_le_bytes(b8);
        let len = n
            .checked_mul(dim)
            .and_then(|m| m.checked_mul(16))
            .ok_or_else(|| fmt("size overflow"))?;
        let mut body = vec![0u8; len];
        r.read_exact(&mut body).map_err(|_| fmt("truncated body"))?;
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (p, v) = vals.split_at(n * dim);
        let s = ParticleState {
            n,
            dim,
            time,
            positions: p.to_vec(),
            velocities: v.to_vec(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_snapshot(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_snapshot(std::io::BufReader::new(f))
    }
}
