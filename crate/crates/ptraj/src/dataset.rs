//! Trajectory datasets and their on-disk text format.
//!
//! A processed dataset is a list of cell-sequence trajectories, each tagged
//! with the hour of day it started in. Files are line-oriented UTF-8 so they
//! stay diffable and greppable:
//!
//! ```text
//! #PTRAJ-DS v1 rows=47 cols=29 cell=500
//! 8<TAB>101,102,131
//! 17<TAB>345,316,315
//! ```
//!
//! The header pins the grid the cells refer to; synthetic outputs carry an
//! extra `synthetic=1` marker so they can never be mistaken for real data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{CellId, GridShape, OccupiedCellIndex, TimeSlot};
use crate::util::atomic_write;

/// One trip: at least two cells, no consecutive repeats, one hour slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub cells: Vec<CellId>,
    pub hour: TimeSlot,
}

impl Trajectory {
    pub fn new(cells: Vec<CellId>, hour: TimeSlot) -> Result<Self> {
        if cells.len() < 2 {
            return Err(Error::Data(format!("trajectory needs >= 2 cells, got {}", cells.len())));
        }
        if cells.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Data("trajectory has consecutive duplicate cells".into()));
        }
        Ok(Trajectory { cells, hour })
    }

    pub fn src(&self) -> CellId {
        self.cells[0]
    }

    pub fn dst(&self) -> CellId {
        *self.cells.last().unwrap()
    }

    /// Number of cells visited.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: >= 2 cells
    }
}

/// A set of trajectories on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: GridShape,
    pub trajectories: Vec<Trajectory>,
    /// True when this data was sampled from models rather than observed.
    pub synthetic: bool,
}

impl Dataset {
    pub fn new(shape: GridShape, trajectories: Vec<Trajectory>) -> Self {
        Dataset { shape, trajectories, synthetic: false }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Every cell that occurs anywhere in the data, densely re-indexed.
    /// Model vocabularies are built from this.
    pub fn occupied_index(&self) -> OccupiedCellIndex {
        OccupiedCellIndex::from_cells(self.trajectories.iter().flat_map(|t| t.cells.iter().copied()))
    }

    /// Serialize to the text format. `cell=` prints trailing-zero-free
    /// (`500`, not `500.0`) so headers are stable across writers.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write!(
            out,
            "#PTRAJ-DS v1 rows={} cols={} cell={}",
            self.shape.n_rows, self.shape.n_cols, self.shape.cell_size_m
        )
        .unwrap();
        if self.synthetic {
            out.push_str(" synthetic=1");
        }
        out.push('\n');
        for t in &self.trajectories {
            write!(out, "{}\t", t.hour.hour()).unwrap();
            for (i, c) in t.cells.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{}", c.0).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_text(&text).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Dataset> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty dataset file".into()))?;
        let (shape, synthetic) = parse_header(header)?;
        let cell_count = shape.cell_count() as u32;

        let mut trajectories = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let lineno = lineno + 2; // 1-based, after the header
            if line.is_empty() {
                continue;
            }
            let (hour_str, cells_str) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("line {lineno}: expected '<hour>\\t<cells>'")))?;
            let hour: u8 = hour_str
                .parse()
                .map_err(|_| Error::Data(format!("line {lineno}: bad hour {hour_str:?}")))?;
            let hour = TimeSlot::new(hour).map_err(|_| Error::Data(format!("line {lineno}: hour {hour} out of range")))?;
            let mut cells = Vec::new();
            for tok in cells_str.split(',') {
                let id: u32 = tok
                    .parse()
                    .map_err(|_| Error::Data(format!("line {lineno}: bad cell id {tok:?}")))?;
                if id >= cell_count {
                    return Err(Error::Data(format!(
                        "line {lineno}: cell {id} outside {}x{} grid",
                        shape.n_rows, shape.n_cols
                    )));
                }
                cells.push(CellId(id));
            }
            let traj = Trajectory::new(cells, hour)
                .map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
            trajectories.push(traj);
        }

        Ok(Dataset { shape, trajectories, synthetic })
    }
}

fn parse_header(header: &str) -> Result<(GridShape, bool)> {
    let rest = header
        .strip_prefix("#PTRAJ-DS v1")
        .ok_or_else(|| Error::Data(format!("bad dataset header {header:?} (expected '#PTRAJ-DS v1 ...')")))?;
    let mut rows = None;
    let mut cols = None;
    let mut cell = None;
    let mut synthetic = false;
    for tok in rest.split_whitespace() {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("bad header token {tok:?}")))?;
        match key {
            "rows" => rows = Some(value.parse::<usize>().map_err(|_| Error::Data(format!("bad rows={value}")))?),
            "cols" => cols = Some(value.parse::<usize>().map_err(|_| Error::Data(format!("bad cols={value}")))?),
            "cell" => cell = Some(value.parse::<f64>().map_err(|_| Error::Data(format!("bad cell={value}")))?),
            "synthetic" => synthetic = value == "1",
            other => return Err(Error::Data(format!("unknown header key {other:?}"))),
        }
    }
    let (Some(rows), Some(cols), Some(cell)) = (rows, cols, cell) else {
        return Err(Error::Data("dataset header must carry rows=, cols=, cell=".into()));
    };
    let shape = GridShape::new(rows, cols, cell).map_err(|e| Error::Data(format!("bad grid in header: {e}")))?;
    Ok((shape, synthetic))
}
