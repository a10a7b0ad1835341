//! Piecewise-constant background rate fields on a lon/lat lattice.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::catalog::KM_PER_DEGREE;
use crate::error::{invalid, Error, Result};

/// Background rate μ(x, y) in events/day/deg² on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundField {
    /// (lon_min, lon_max, lat_min, lat_max) in degrees.
    pub bounds: (f64, f64, f64, f64),
    pub nx: usize,
    pub ny: usize,
    /// Row-major values, index `iy * nx + ix`.
    pub values: Vec<f64>,
}

impl BackgroundField {
    pub fn new(bounds: (f64, f64, f64, f64), nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        let (x0, x1, y0, y1) = bounds;
        if !(x0 < x1 && y0 < y1) || nx == 0 || ny == 0 {
            return Err(invalid(format!("degenerate grid {bounds:?} with {nx}x{ny} cells")));
        }
        if values.len() != nx * ny {
            return Err(invalid(format!("expected {} grid values, got {}", nx * ny, values.len())));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("background values must be finite and non-negative"));
        }
        Ok(Self { bounds, nx, ny, values })
    }

    /// Constant field with cells of size `cell = (dlon, dlat)`; the cell
    /// counts are rounded to cover the bounds.
    pub fn uniform(bounds: (f64, f64, f64, f64), cell: (f64, f64), value: f64) -> Result<Self> {
        if !(cell.0 > 0.0 && cell.1 > 0.0) {
            return Err(invalid("cell size must be positive"));
        }
        let nx = ((bounds.1 - bounds.0) / cell.0).round().max(1.0) as usize;
        let ny = ((bounds.3 - bounds.2) / cell.1).round().max(1.0) as usize;
        Self::new(bounds, nx, ny, vec![value; nx * ny])
    }

    /// Cell size (dlon, dlat) in degrees.
    pub fn cell(&self) -> (f64, f64) {
        (
            (self.bounds.1 - self.bounds.0) / self.nx as f64,
            (self.bounds.3 - self.bounds.2) / self.ny as f64,
        )
    }

    pub fn cell_area(&self) -> f64 {
        let (dx, dy) = self.cell();
        dx * dy
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let (dx, dy) = self.cell();
        (self.bounds.0 + (ix as f64 + 0.5) * dx, self.bounds.2 + (iy as f64 + 0.5) * dy)
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        let (x0, x1, y0, y1) = self.bounds;
        lon >= x0 && lon <= x1 && lat >= y0 && lat <= y1
    }

    pub fn index(&self, lon: f64, lat: f64) -> Result<usize> {
        if !self.contains(lon, lat) {
            return Err(Error::OutsideGrid { x: lon, y: lat });
        }
        let (dx, dy) = self.cell();
        let ix = (((lon - self.bounds.0) / dx) as usize).min(self.nx - 1);
        let iy = (((lat - self.bounds.2) / dy) as usize).min(self.ny - 1);
        Ok(iy * self.nx + ix)
    }

    pub fn value_at(&self, lon: f64, lat: f64) -> Result<f64> {
        Ok(self.values[self.index(lon, lat)?])
    }

    /// ∫∫ μ dlon dlat over the grid (events/day).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    /// Writes `x,y,mu` rows at cell centers.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| invalid(format!("failed to write background grid: {e}"));
        w.write_record(["x", "y", "mu"]).map_err(io)?;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let (x, y) = self.cell_center(ix, iy);
                let v = self.values[iy * self.nx + ix];
                w.write_record([x.to_string(), y.to_string(), v.to_string()]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| invalid(format!("failed to write background grid: {e}")))?;
        Ok(())
    }

    /// Reads a grid written by [`BackgroundField::write_csv`]; cell centers
    /// must form a complete regular lattice.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| invalid(format!("background grid row {}: {e}", i + 2)))?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| invalid(format!("background grid row {}: bad column {}", i + 2, k + 1)))
            };
            rows.push((parse(0)?, parse(1)?, parse(2)?));
        }
        let uniq = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            v
        };
        let xs = uniq(rows.iter().map(|r| r.0).collect());
        let ys = uniq(rows.iter().map(|r| r.1).collect());
        if xs.is_empty() || xs.len() * ys.len() != rows.len() {
            return Err(invalid("background grid is not a complete lattice"));
        }
        let step = |v: &[f64]| if v.len() > 1 { (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64 } else { 1.0 };
        let (dx, dy) = (step(&xs), step(&ys));
        let bounds = (xs[0] - dx / 2.0, xs[xs.len() - 1] + dx / 2.0, ys[0] - dy / 2.0, ys[ys.len() - 1] + dy / 2.0);
        let (nx, ny) = (xs.len(), ys.len());
        let mut values = vec![f64::NAN; nx * ny];
        for (x, y, v) in rows {
            let ix = ((x - xs[0]) / dx).round() as usize;
            let iy = ((y - ys[0]) / dy).round() as usize;
            values[iy.min(ny - 1) * nx + ix.min(nx - 1)] = v;
        }
        Self::new(bounds, nx, ny, values)
    }

    /// Weighted Gaussian kernel density of the points (lon, lat, weight) with
    /// bandwidth `bandwidth_km`, divided by `duration` days and rescaled so
    /// the grid integral equals Σ weight / duration.
    pub fn from_weighted_points(
        template: &BackgroundField,
        points: &[(f64, f64, f64)],
        bandwidth_km: f64,
        duration: f64,
    ) -> Result<Self> {
        if !(bandwidth_km > 0.0) || !(duration > 0.0) {
            return Err(invalid("bandwidth and duration must be positive"));
        }
        let total: f64 = points.iter().map(|p| p.2).sum();
        if !(total > 0.0) {
            return Err(invalid("total background weight is zero"));
        }
        let h2 = bandwidth_km * bandwidth_km;
        let mut values = vec![0.0; template.nx * template.ny];
        for iy in 0..template.ny {
            for ix in 0..template.nx {
                let (cx, cy) = template.cell_center(ix, iy);
                let kx = KM_PER_DEGREE * cy.to_radians().cos();
                let jac = kx * KM_PER_DEGREE;
                let mut s = 0.0;
                for &(lon, lat, w) in points {
                    let dx = (lon - cx) * kx;
                    let dy = (lat - cy) * KM_PER_DEGREE;
                    s += w * (-(dx * dx + dy * dy) / (2.0 * h2)).exp();
                }
                values[iy * template.nx + ix] = s * jac / (2.0 * std::f64::consts::PI * h2);
            }
        }
        let mass = values.iter().sum::<f64>() * template.cell_area();
        if !(mass > 0.0) {
            return Err(invalid("kernel density vanishes on the grid; increase the bandwidth"));
        }
        let scale = total / duration / mass;
        values.iter_mut().for_each(|v| *v *= scale);
        Self::new(template.bounds, template.nx, template.ny, values)
    }

    /// Largest relative change between two fields on the same grid,
    /// measured against the larger field maximum.
    pub fn max_relative_change(&self, other: &BackgroundField) -> f64 {
        let scale = self
            .values
            .iter()
            .chain(&other.values)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_integral_and_csv_round_trip() {
        let f = BackgroundField::new((130.0, 132.0, 30.0, 31.0), 4, 2, (0..8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(f.value_at(130.1, 30.1).unwrap(), 0.0);
        assert_eq!(f.value_at(131.9, 30.9).unwrap(), 7.0);
        assert_eq!(f.value_at(132.0, 31.0).unwrap(), 7.0);
        assert!(matches!(f.value_at(129.0, 30.5), Err(Error::OutsideGrid { .. })));
        assert!((f.integral() - 28.0 * 0.25).abs() < 1e-12);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let g = BackgroundField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(g.nx, 4);
        assert_eq!(g.values, f.values);
        assert!((g.bounds.0 - 130.0).abs() < 1e-9 && (g.bounds.3 - 31.0).abs() < 1e-9);
    }

    #[test]
    fn kde_concentrates_as_bandwidth_shrinks() {
        let t = BackgroundField::uniform((0.0, 2.0, 0.0, 2.0), (0.1, 0.1), 1.0).unwrap();
        let pts = [(1.05, 1.05, 3.0)];
        let wide = BackgroundField::from_weighted_points(&t, &pts, 30.0, 10.0).unwrap();
        let narrow = BackgroundField::from_weighted_points(&t, &pts, 2.0, 10.0).unwrap();
        assert!((narrow.integral() - 0.3).abs() < 1e-12);
        let cell = t.index(1.05, 1.05).unwrap();
        let share = |f: &BackgroundField| f.values[cell] * f.cell_area() / f.integral();
        assert!(share(&narrow) > 0.95);
        assert!(share(&narrow) > share(&wide));
        assert!(BackgroundField::from_weighted_points(&t, &[(1.0, 1.0, 0.0)], 2.0, 1.0).is_err());
    }
}
