//! Flat square-cell grid that discretizes space into location ids.

use core::fmt;

use crate::error::{Error, Result};
use crate::math;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Index of a grid cell, `row * width + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocationId(pub u32);

impl LocationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A `width x height` grid of square cells with edge `cell_size` meters.
/// `origin` is the (latitude, longitude) of the south-west corner of cell 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationGrid {
    width: u32,
    height: u32,
    cell_size: f64,
    origin: (f64, f64),
}

impl LocationGrid {
    pub fn new(width: u32, height: u32, cell_size: f64, origin: (f64, f64)) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("grid", "width and height must be at least 1"));
        }
        if width.checked_mul(height).is_none() {
            return Err(Error::param("grid", "cell count overflows u32"));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::param("cell_size", "must be positive and finite"));
        }
        Ok(Self { width, height, cell_size, origin })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn num_cells(&self) -> u32 {
        self.width * self.height
    }

    pub fn contains(&self, id: LocationId) -> bool {
        id.0 < self.num_cells()
    }

    pub fn check(&self, id: LocationId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::InvalidLocation { id: id.0, cells: self.num_cells() })
        }
    }

    /// `(col, row)` of a cell.
    pub fn coords(&self, id: LocationId) -> Result<(u32, u32)> {
        self.check(id)?;
        Ok((id.0 % self.width, id.0 / self.width))
    }

    pub fn id_at(&self, col: u32, row: u32) -> Result<LocationId> {
        if col >= self.width || row >= self.height {
            return Err(Error::param("grid", "cell coordinates outside the grid"));
        }
        Ok(LocationId(row * self.width + col))
    }

    /// Center of a cell in meters east/north of the grid origin.
    pub fn cell_center(&self, id: LocationId) -> Result<(f64, f64)> {
        let (c, r) = self.coords(id)?;
        Ok(((c as f64 + 0.5) * self.cell_size, (r as f64 + 0.5) * self.cell_size))
    }

    /// Squared distance between cell centers in units of cells. Exact, so
    /// usable as a ranking key.
    pub(crate) fn cell_offset_sq(&self, a: LocationId, b: LocationId) -> u64 {
        let (ax, ay) = (a.0 % self.width, a.0 / self.width);
        let (bx, by) = (b.0 % self.width, b.0 / self.width);
        let dx = ax.abs_diff(bx) as u64;
        let dy = ay.abs_diff(by) as u64;
        dx * dx + dy * dy
    }

    /// Euclidean distance between the centers of two cells, in meters.
    pub fn distance(&self, a: LocationId, b: LocationId) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.distance_unchecked(a, b))
    }

    pub(crate) fn distance_unchecked(&self, a: LocationId, b: LocationId) -> f64 {
        self.cell_size * math::sqrt(self.cell_offset_sq(a, b) as f64)
    }

    /// Largest possible center-to-center distance.
    pub fn diagonal(&self) -> f64 {
        let dx = (self.width - 1) as f64;
        let dy = (self.height - 1) as f64;
        let d = self.cell_size * math::sqrt(dx * dx + dy * dy);
        if d > 0.0 {
            d
        } else {
            self.cell_size
        }
    }

    /// Local equirectangular projection of a coordinate onto the grid.
    /// Returns `None` outside the grid.
    pub fn locate(&self, latitude: f64, longitude: f64) -> Option<LocationId> {
        let (lat0, lon0) = self.origin;
        let to_rad = core::f64::consts::PI / 180.0;
        let east = EARTH_RADIUS_M * (longitude - lon0) * to_rad * math::cos(lat0 * to_rad);
        let north = EARTH_RADIUS_M * (latitude - lat0) * to_rad;
        if !(east >= 0.0 && north >= 0.0) {
            return None;
        }
        let col = (east / self.cell_size) as u64;
        let row = (north / self.cell_size) as u64;
        if col >= self.width as u64 || row >= self.height as u64 {
            return None;
        }
        Some(LocationId(row as u32 * self.width + col as u32))
    }
}
