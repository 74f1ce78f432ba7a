use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KclError, Result};
use crate::potential::PotentialSpec;

/// Cell-centred tensor grid on `[x_min, x_max] × [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub n_y: usize,
}

impl GridSpec {
    pub fn symmetric(x_half: f64, n_x: usize, y_half: f64, n_y: usize) -> Result<Self> {
        let g = GridSpec {
            x_min: -x_half,
            x_max: x_half,
            n_x,
            y_min: -y_half,
            y_max: y_half,
            n_y,
        };
        g.validate()?;
        Ok(g)
    }

    /// Six effective standard deviations in each direction: `1/√β` in `y`,
    /// `1/√(βρ)` in `x` with `ρ` from the convex split (or 1 without one).
    pub fn auto(spec: &PotentialSpec, beta: f64, n_x: usize, n_y: usize) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(KclError::invalid("beta", "must be positive and finite"));
        }
        let rho = spec.convex_split.map(|s| s.rho).unwrap_or(1.0);
        Self::symmetric(6.0 / (beta * rho).sqrt(), n_x, 6.0 / beta.sqrt(), n_y)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x < 4 || self.n_y < 4 {
            return Err(KclError::invalid(
                "grid",
                "need at least 4 cells per direction",
            ));
        }
        if !(self.x_max > self.x_min)
            || !(self.y_max > self.y_min)
            || !(self.x_max - self.x_min).is_finite()
            || !(self.y_max - self.y_min).is_finite()
        {
            return Err(KclError::invalid(
                "grid",
                "bounds must be finite with min < max",
            ));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_x as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.n_y as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + (j as f64 + 0.5) * self.dy()
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x(i)).collect()
    }

    pub fn y_nodes(&self) -> Vec<f64> {
        (0..self.n_y).map(|j| self.y(j)).collect()
    }

    pub fn cells(&self) -> usize {
        self.n_x * self.n_y
    }

    /// Halves both cell sizes on the same domain.
    pub fn refined(&self) -> Self {
        GridSpec {
            n_x: 2 * self.n_x,
            n_y: 2 * self.n_y,
            ..*self
        }
    }
}

/// A phase-space density on a [`GridSpec`], stored with `x` as the outer
/// index: `values[i * n_y + j]` is the density in cell `(x_i, y_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMoments {
    pub mass: f64,
    pub x_mean: f64,
    pub x_var: f64,
    pub y_mean: f64,
    pub y_var: f64,
    pub xy_cov: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    grid: GridSpec,
}

const FORMAT: &str = "kcl-grid-1";

impl GridDensity {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.cells() {
            return Err(KclError::Dimension {
                expected: grid.cells(),
                got: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(KclError::NonFinite {
                what: "grid density".into(),
                location: format!("cell ({}, {})", k / grid.n_y, k % grid.n_y),
            });
        }
        if let Some(k) = values.iter().position(|v| *v < 0.0) {
            return Err(KclError::NegativeDensity {
                ix: k / grid.n_y,
                iy: k % grid.n_y,
                value: values[k],
            });
        }
        Ok(GridDensity { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.cells());
        for i in 0..grid.n_x {
            for j in 0..grid.n_y {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Self::new(grid, values)
    }

    /// `ρ(x) ⊗ μ(y)` from cell values of the two factors.
    pub fn product(grid: GridSpec, rho_x: &[f64], mu_y: &[f64]) -> Result<Self> {
        if rho_x.len() != grid.n_x || mu_y.len() != grid.n_y {
            return Err(KclError::invalid(
                "product",
                "factor lengths do not match the grid",
            ));
        }
        let mut values = Vec::with_capacity(grid.cells());
        for r in rho_x {
            values.extend(mu_y.iter().map(|m| r * m));
        }
        let mut g = Self::new(grid, values)?;
        g.normalize()?;
        Ok(g)
    }

    /// Independent Gaussians in `x` and `y` sampled at cell centres and
    /// renormalized.
    pub fn gaussian(
        grid: GridSpec,
        x_mean: f64,
        x_std: f64,
        y_mean: f64,
        y_std: f64,
    ) -> Result<Self> {
        if !(x_std > 0.0 && y_std > 0.0) {
            return Err(KclError::invalid("std", "must be positive"));
        }
        let mut g = Self::from_fn(grid, |x, y| {
            let (u, v) = ((x - x_mean) / x_std, (y - y_mean) / y_std);
            (-0.5 * (u * u + v * v)).exp()
        })?;
        g.normalize()?;
        Ok(g)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_y + j]
    }

    pub fn cell_area(&self) -> f64 {
        self.grid.dx() * self.grid.dy()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(KclError::invalid(
                "density",
                format!("cannot normalize mass {m}"),
            ));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(())
    }

    /// `ρ(x_i) = Σ_j f_ij Δy`.
    pub fn x_marginal(&self) -> Vec<f64> {
        let dy = self.grid.dy();
        self.values
            .chunks(self.grid.n_y)
            .map(|row| row.iter().sum::<f64>() * dy)
            .collect()
    }

    pub fn y_marginal(&self) -> Vec<f64> {
        let dx = self.grid.dx();
        let mut m = vec![0.0; self.grid.n_y];
        for row in self.values.chunks(self.grid.n_y) {
            for (a, v) in m.iter_mut().zip(row) {
                *a += v * dx;
            }
        }
        m
    }

    /// Mass in the outermost two layers of cells.
    pub fn boundary_mass(&self) -> f64 {
        let (nx, ny) = (self.grid.n_x, self.grid.n_y);
        let mut s = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                if i < 2 || j < 2 || i + 2 >= nx || j + 2 >= ny {
                    s += self.at(i, j);
                }
            }
        }
        s * self.cell_area()
    }

    pub fn moments(&self) -> GridMoments {
        let area = self.cell_area();
        let (mut m, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..self.grid.n_x {
            let x = self.grid.x(i);
            for j in 0..self.grid.n_y {
                let (y, w) = (self.grid.y(j), self.at(i, j) * area);
                m += w;
                sx += w * x;
                sy += w * y;
                sxx += w * x * x;
                syy += w * y * y;
                sxy += w * x * y;
            }
        }
        let (xm, ym) = (sx / m, sy / m);
        GridMoments {
            mass: m,
            x_mean: xm,
            x_var: sxx / m - xm * xm,
            y_mean: ym,
            y_var: syy / m - ym * ym,
            xy_cov: sxy / m - xm * ym,
        }
    }

    pub fn sup_distance(&self, other: &GridDensity) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn same_grid(&self, other: &GridDensity) -> Result<()> {
        if self.grid != other.grid {
            return Err(KclError::invalid(
                "grid",
                "densities live on different grids",
            ));
        }
        Ok(())
    }

    /// CSV with columns `x,y,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "x,y,value")?;
        for i in 0..self.grid.n_x {
            for j in 0..self.grid.n_y {
                writeln!(w, "{},{},{}", self.grid.x(i), self.grid.y(j), self.at(i, j))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One line of JSON header, then the values as little-endian `f64`.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let header = Header {
            format: FORMAT.into(),
            grid: self.grid,
        };
        serde_json::to_writer(&mut w, &header).map_err(|e| KclError::Format {
            what: "grid header",
            reason: e.to_string(),
        })?;
        w.write_all(b"\n")?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header =
            serde_json::from_str(line.trim_end()).map_err(|e| KclError::Format {
                what: "grid header",
                reason: e.to_string(),
            })?;
        if header.format != FORMAT {
            return Err(KclError::Format {
                what: "grid header",
                reason: format!("unknown format `{}`", header.format),
            });
        }
        header.grid.validate()?;
        let mut bytes = vec![0u8; header.grid.cells() * 8];
        r.read_exact(&mut bytes).map_err(|e| KclError::Format {
            what: "grid values",
            reason: e.to_string(),
        })?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(KclError::Format {
                what: "grid values",
                reason: "trailing bytes after the value block".into(),
            });
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(header.grid, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_binary(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(File::open(path)?)
    }
}
