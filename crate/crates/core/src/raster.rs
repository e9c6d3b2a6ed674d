//! Rasterized scalar fields on a uniform grid, with CSV persistence.
//!
//! Rasters carry user-supplied densities. The file format is one header
//! line `origin_x,origin_y,spacing,nx,ny` followed by `ny` lines of `nx`
//! comma-separated values, row-major from the bottom row up: the value at
//! position `origin + spacing * (i, j)` sits in row `j`, column `i`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Uniformly sampled scalar field with bilinear interpolation and
/// nearest-edge (constant) extension outside its extent.
#[derive(Debug, Clone)]
pub struct Raster {
    origin: Vec2,
    spacing: f64,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl Raster {
    /// Wraps raw samples; `values` is row-major with `nx * ny` entries.
    pub fn new(origin: Vec2, spacing: f64, nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Data(format!(
                "raster needs at least 2x2 samples, got {nx}x{ny}"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::Data(format!("raster spacing must be positive, got {spacing}")));
        }
        if values.len() != nx * ny {
            return Err(Error::Data(format!(
                "raster expects {} values ({nx}x{ny}), got {}",
                nx * ny,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("raster contains non-finite value {bad}")));
        }
        Ok(Raster {
            origin,
            spacing,
            nx,
            ny,
            values,
        })
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn size(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Bilinear interpolation; coordinates outside the sampled extent are
    /// clamped to the edge, which extends the field by its boundary values.
    pub fn eval(&self, p: Vec2) -> f64 {
        let u = ((p.x - self.origin.x) / self.spacing).clamp(0.0, (self.nx - 1) as f64);
        let v = ((p.y - self.origin.y) / self.spacing).clamp(0.0, (self.ny - 1) as f64);
        let i0 = (u.floor() as usize).min(self.nx - 2);
        let j0 = (v.floor() as usize).min(self.ny - 2);
        let s = u - i0 as f64;
        let t = v - j0 as f64;
        let (f00, f10) = (self.at(i0, j0), self.at(i0 + 1, j0));
        let (f01, f11) = (self.at(i0, j0 + 1), self.at(i0 + 1, j0 + 1));
        (1.0 - t) * ((1.0 - s) * f00 + s * f10) + t * ((1.0 - s) * f01 + s * f11)
    }

    /// Reads the CSV format documented at module level.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text)
            .map_err(|msg| Error::Data(format!("{}: {msg}", path.display())))
    }

    pub(crate) fn parse_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty raster file")?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(format!(
                "header must be `origin_x,origin_y,spacing,nx,ny`, got {} fields",
                fields.len()
            ));
        }
        let num = |s: &str| -> std::result::Result<f64, String> {
            s.parse::<f64>().map_err(|_| format!("bad number `{s}` in header"))
        };
        let origin = Vec2::new(num(fields[0])?, num(fields[1])?);
        let spacing = num(fields[2])?;
        let nx: usize = fields[3].parse().map_err(|_| format!("bad nx `{}`", fields[3]))?;
        let ny: usize = fields[4].parse().map_err(|_| format!("bad ny `{}`", fields[4]))?;
        let mut values = Vec::with_capacity(nx * ny);
        for (j, line) in lines.enumerate() {
            if j >= ny {
                return Err(format!("expected {ny} data rows, found more"));
            }
            for s in line.split(',') {
                let v: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad value `{}` in row {j}", s.trim()))?;
                values.push(v);
            }
            if values.len() != (j + 1) * nx {
                return Err(format!("row {j} has {} values, expected {nx}", values.len() - j * nx));
            }
        }
        Raster::new(origin, spacing, nx, ny, values).map_err(|e| e.to_string())
    }

    /// Writes the CSV format documented at module level.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            self.origin.x, self.origin.y, self.spacing, self.nx, self.ny
        );
        for j in 0..self.ny {
            let row: Vec<String> = (0..self.nx).map(|i| self.at(i, j).to_string()).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
