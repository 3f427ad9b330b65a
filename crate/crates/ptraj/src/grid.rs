//! Uniform spatial grid over a geographic bounding box.
//!
//! All pipeline stages work on grid cells rather than raw coordinates. The
//! grid uses a local equirectangular projection: meters-per-degree is fixed
//! at the box's mid-latitude, which keeps cell geometry uniform across the
//! box and makes cell-to-cell distances a pure function of cell indices.
//! Rows count from the north edge, columns from the west edge.
//!
//! [`GridSpec`] owns the geographic box and the projection (needed only while
//! ingesting raw coordinates); [`GridShape`] is the discrete part — row and
//! column counts plus the cell size — which is all that datasets, models, and
//! metrics ever need, and all that their on-disk formats record.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Mean Earth radius in meters (spherical model).
const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A cell in the full grid, identified by its row-major index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId(pub u32);

/// Hour-of-day slot, 0..=23.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeSlot(u8);

impl TimeSlot {
    pub fn new(hour: u8) -> Result<Self> {
        if hour < 24 {
            Ok(TimeSlot(hour))
        } else {
            Err(Error::Data(format!("hour {hour} out of range 0..=23")))
        }
    }

    pub fn hour(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Number of slots in a day.
    pub const COUNT: usize = 24;

    /// All slots in order.
    pub fn all() -> impl Iterator<Item = TimeSlot> {
        (0..24).map(TimeSlot)
    }
}

/// Square neighborhood of Chebyshev radius `s` around a cell.
///
/// The `(2s+1)²` cells of the block (center included) are numbered row-major:
/// class `(dr + s) * (2s+1) + (dc + s)` for row/column offsets `dr, dc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub s: usize,
}

impl NeighborhoodSpec {
    pub fn new(s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::Config("neighborhood radius s must be >= 1".into()));
        }
        Ok(NeighborhoodSpec { s })
    }

    /// Side length of the neighborhood block.
    pub fn side(&self) -> usize {
        2 * self.s + 1
    }

    /// Total number of offset classes, center included.
    pub fn class_count(&self) -> usize {
        self.side() * self.side()
    }

    /// Class index of the zero offset (the cell itself).
    pub fn center_class(&self) -> usize {
        self.s * self.side() + self.s
    }
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        NeighborhoodSpec { s: 5 }
    }
}

/// The discrete grid: row/column counts and cell size, with no geographic
/// anchoring. Everything downstream of coordinate snapping works on this.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Cell edge length in meters.
    pub cell_size_m: f64,
}

impl GridShape {
    pub fn new(n_rows: usize, n_cols: usize, cell_size_m: f64) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Config("grid must have at least one row and column".into()));
        }
        match n_rows.checked_mul(n_cols) {
            Some(total) if total <= u32::MAX as usize => {}
            _ => return Err(Error::Config("grid too large for 32-bit cell ids".into())),
        }
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(Error::Config(format!("cell size must be positive, got {cell_size_m}")));
        }
        Ok(GridShape { n_rows, n_cols, cell_size_m })
    }

    /// Total number of cells in the full grid.
    pub fn cell_count(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn contains(&self, cell: CellId) -> bool {
        (cell.0 as usize) < self.cell_count()
    }

    pub fn row(&self, cell: CellId) -> usize {
        cell.0 as usize / self.n_cols
    }

    pub fn col(&self, cell: CellId) -> usize {
        cell.0 as usize % self.n_cols
    }

    pub fn cell_at(&self, row: usize, col: usize) -> CellId {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        CellId((row * self.n_cols + col) as u32)
    }

    /// Cell center in projected meter coordinates (x east, y south of the
    /// grid's north-west corner).
    pub fn center_meters(&self, cell: CellId) -> (f64, f64) {
        let x = (self.col(cell) as f64 + 0.5) * self.cell_size_m;
        let y = (self.row(cell) as f64 + 0.5) * self.cell_size_m;
        (x, y)
    }

    /// Straight-line distance between cell centers, in meters.
    pub fn cell_distance_m(&self, a: CellId, b: CellId) -> f64 {
        let dr = self.row(a) as f64 - self.row(b) as f64;
        let dc = self.col(a) as f64 - self.col(b) as f64;
        (dr * self.cell_size_m).hypot(dc * self.cell_size_m)
    }

    /// Offset class of `to` relative to `from`, or `None` when `to` is
    /// outside the Chebyshev-radius-`s` block around `from`.
    pub fn relative_offset(&self, from: CellId, to: CellId, nb: NeighborhoodSpec) -> Option<usize> {
        let s = nb.s as i64;
        let dr = self.row(to) as i64 - self.row(from) as i64;
        let dc = self.col(to) as i64 - self.col(from) as i64;
        if dr.abs() > s || dc.abs() > s {
            return None;
        }
        Some(((dr + s) * nb.side() as i64 + (dc + s)) as usize)
    }

    /// Inverse of [`relative_offset`](Self::relative_offset): the cell at
    /// offset `class` from `from`, or `None` when it falls outside the grid.
    pub fn offset_to_cell(&self, from: CellId, class: usize, nb: NeighborhoodSpec) -> Option<CellId> {
        debug_assert!(class < nb.class_count());
        let s = nb.s as i64;
        let dr = class as i64 / nb.side() as i64 - s;
        let dc = class as i64 % nb.side() as i64 - s;
        let row = self.row(from) as i64 + dr;
        let col = self.col(from) as i64 + dc;
        if row < 0 || row >= self.n_rows as i64 || col < 0 || col >= self.n_cols as i64 {
            return None;
        }
        Some(self.cell_at(row as usize, col as usize))
    }
}

/// Geographic grid: a bounding box, the local projection, and the resulting
/// [`GridShape`]. Only coordinate snapping needs this; everything else takes
/// the shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub shape: GridShape,
    /// Meters per degree of latitude under the local projection.
    meters_per_deg_lat: f64,
    /// Meters per degree of longitude at the box's mid-latitude.
    meters_per_deg_lon: f64,
}

impl GridSpec {
    /// Build a grid covering the box. The box must not straddle the
    /// antimeridian; row/column counts are rounded up so the final row and
    /// column may extend slightly past the southern/eastern edges.
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64, cell_size_m: f64) -> Result<Self> {
        if !(lat_min.is_finite() && lat_max.is_finite() && lon_min.is_finite() && lon_max.is_finite()) {
            return Err(Error::Config("bounding box coordinates must be finite".into()));
        }
        if lat_min >= lat_max || lon_min >= lon_max {
            return Err(Error::Config(format!(
                "degenerate bounding box: lat [{lat_min}, {lat_max}], lon [{lon_min}, {lon_max}]"
            )));
        }
        if lat_min < -89.0 || lat_max > 89.0 {
            return Err(Error::Config("bounding box too close to a pole for a planar projection".into()));
        }
        if lon_min < -180.0 || lon_max > 180.0 {
            return Err(Error::Config("longitudes must lie in [-180, 180]".into()));
        }

        let mid_lat = 0.5 * (lat_min + lat_max);
        let meters_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let meters_per_deg_lon = meters_per_deg_lat * mid_lat.to_radians().cos();

        let height_m = (lat_max - lat_min) * meters_per_deg_lat;
        let width_m = (lon_max - lon_min) * meters_per_deg_lon;
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(Error::Config(format!("cell size must be positive, got {cell_size_m}")));
        }
        let n_rows = (height_m / cell_size_m).ceil() as usize;
        let n_cols = (width_m / cell_size_m).ceil() as usize;
        let shape = GridShape::new(n_rows.max(1), n_cols.max(1), cell_size_m)?;

        Ok(GridSpec {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            shape,
            meters_per_deg_lat,
            meters_per_deg_lon,
        })
    }

    /// Map a point to its cell, or `None` if it lies outside the box.
    ///
    /// Row 0 sits at the northern edge. Cells are half-open to the south and
    /// east except that the box's own southern/eastern boundary falls into
    /// the last row/column.
    pub fn snap(&self, lat: f64, lon: f64) -> Option<CellId> {
        if !(self.lat_min..=self.lat_max).contains(&lat) || !(self.lon_min..=self.lon_max).contains(&lon) {
            return None;
        }
        let y = (self.lat_max - lat) * self.meters_per_deg_lat;
        let x = (lon - self.lon_min) * self.meters_per_deg_lon;
        let row = ((y / self.shape.cell_size_m) as usize).min(self.shape.n_rows - 1);
        let col = ((x / self.shape.cell_size_m) as usize).min(self.shape.n_cols - 1);
        Some(self.shape.cell_at(row, col))
    }

    /// Project a point into box-local meter coordinates (x east of the west
    /// edge, y south of the north edge). The point may lie outside the box.
    pub fn project_meters(&self, lat: f64, lon: f64) -> (f64, f64) {
        let x = (lon - self.lon_min) * self.meters_per_deg_lon;
        let y = (self.lat_max - lat) * self.meters_per_deg_lat;
        (x, y)
    }

    /// (latitude, longitude) of a cell's center — the inverse of [`snap`]
    /// up to in-cell position. Centers in the last row or column can fall
    /// just outside the box when its extent is not a multiple of the cell
    /// size.
    ///
    /// [`snap`]: GridSpec::snap
    pub fn cell_center_geo(&self, cell: CellId) -> (f64, f64) {
        let (x, y) = self.shape.center_meters(cell);
        let lat = self.lat_max - y / self.meters_per_deg_lat;
        let lon = self.lon_min + x / self.meters_per_deg_lon;
        (lat, lon)
    }
}

/// Dense re-indexing of the cells that actually occur in a dataset.
///
/// Model vocabularies are sized by occupied cells only, which is far smaller
/// than the full grid. Dense ids are assigned in ascending full-grid order,
/// so the mapping is reproducible from the cell set alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<u32>", into = "Vec<u32>")]
pub struct OccupiedCellIndex {
    cells: Vec<u32>,
    dense_of_full: HashMap<u32, u32>,
}

impl OccupiedCellIndex {
    pub fn from_cells(cells: impl IntoIterator<Item = CellId>) -> Self {
        let mut cells: Vec<u32> = cells.into_iter().map(|c| c.0).collect();
        cells.sort_unstable();
        cells.dedup();
        let dense_of_full = cells.iter().enumerate().map(|(d, &f)| (f, d as u32)).collect();
        OccupiedCellIndex { cells, dense_of_full }
    }

    /// Number of occupied cells.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Full-grid cell for a dense id. Panics on out-of-range ids.
    pub fn full(&self, dense: u32) -> CellId {
        CellId(self.cells[dense as usize])
    }

    /// Dense id for a full-grid cell, or `None` if the cell never occurred.
    pub fn dense(&self, cell: CellId) -> Option<u32> {
        self.dense_of_full.get(&cell.0).copied()
    }

    pub fn contains(&self, cell: CellId) -> bool {
        self.dense_of_full.contains_key(&cell.0)
    }

    /// Occupied cells in dense-id order.
    pub fn iter(&self) -> impl Iterator<Item = CellId> + '_ {
        self.cells.iter().map(|&f| CellId(f))
    }
}

impl From<Vec<u32>> for OccupiedCellIndex {
    fn from(cells: Vec<u32>) -> Self {
        OccupiedCellIndex::from_cells(cells.into_iter().map(CellId))
    }
}

impl From<OccupiedCellIndex> for Vec<u32> {
    fn from(idx: OccupiedCellIndex) -> Self {
        idx.cells
    }
}
