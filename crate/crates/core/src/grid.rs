//! Regular spatial lattice shared by the census, basis, and zoning stages.
//!
//! Cells are axis-aligned squares indexed by `(x_index, y_index)`. Cell
//! intervals are half-open except along the upper plot edges, which are
//! closed so that a point on the outer boundary still belongs to the plot.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid must have positive cell_size and at least one cell per axis")]
    BadSpec,
    #[error("point ({x}, {y}) for {label} lies outside the grid")]
    OutOfBounds { x: f64, y: f64, label: String },
}

impl GridError {
    pub fn kind(&self) -> &'static str {
        match self {
            GridError::BadSpec => "BadSpec",
            GridError::OutOfBounds { .. } => "OutOfBounds",
        }
    }
}

/// Axis-aligned square lattice covering `[origin_x, origin_x + nx*cell_size] x
/// [origin_y, origin_y + ny*cell_size]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        nx: usize,
        ny: usize,
    ) -> Result<Self, GridError> {
        if !(cell_size > 0.0) || nx == 0 || ny == 0 {
            return Err(GridError::BadSpec);
        }
        Ok(GridSpec { origin_x, origin_y, cell_size, nx, ny })
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat identifier for a cell, row-major from the grid origin.
    pub fn cell_id(&self, x_index: usize, y_index: usize) -> usize {
        y_index * self.nx + x_index
    }

    pub fn cell_indices(&self, cell_id: usize) -> (usize, usize) {
        (cell_id % self.nx, cell_id / self.nx)
    }

    /// Cell containing a point. Intervals are `[lo, hi)` except that the last
    /// cell on each axis also claims its upper edge.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let ix = Self::axis_index(x - self.origin_x, self.cell_size, self.nx)?;
        let iy = Self::axis_index(y - self.origin_y, self.cell_size, self.ny)?;
        Some((ix, iy))
    }

    fn axis_index(offset: f64, size: f64, n: usize) -> Option<usize> {
        if !offset.is_finite() || offset < 0.0 {
            return None;
        }
        let upper = size * n as f64;
        if offset > upper {
            return None;
        }
        if offset == upper {
            return Some(n - 1);
        }
        let idx = (offset / size).floor() as usize;
        Some(idx.min(n - 1))
    }

    /// Centroids of every cell in `cell_id` order.
    pub fn centroids(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.n_cells());
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                out.push((
                    self.origin_x + (ix as f64 + 0.5) * self.cell_size,
                    self.origin_y + (iy as f64 + 0.5) * self.cell_size,
                ));
            }
        }
        out
    }
}

/// Subset of grid cells, used to mark regions such as the swamp strip where
/// one census is backfilled from another.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegionMask {
    cells: BTreeSet<(usize, usize)>,
}

impl RegionMask {
    pub fn from_cells<I: IntoIterator<Item = (usize, usize)>>(cells: I) -> Self {
        RegionMask { cells: cells.into_iter().collect() }
    }

    /// Mask covering every cell of the grid.
    pub fn full(spec: &GridSpec) -> Self {
        let mut cells = BTreeSet::new();
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                cells.insert((ix, iy));
            }
        }
        RegionMask { cells }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn contains_cell(&self, x_index: usize, y_index: usize) -> bool {
        self.cells.contains(&(x_index, y_index))
    }

    /// Whether the point falls in a masked cell. Points outside the grid are
    /// never inside the mask.
    pub fn contains_point(&self, spec: &GridSpec, x: f64, y: f64) -> bool {
        match spec.locate(x, y) {
            Some((ix, iy)) => self.contains_cell(ix, iy),
            None => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.cells.iter()
    }
}
