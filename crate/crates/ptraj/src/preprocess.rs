//! Raw GPS log ingestion and cleaning.
//!
//! Input is one plain-text log per taxi with whitespace-separated
//! `lat lon occupied unix_time` records (the classic taxi-trace layout).
//! The pipeline turns those into grid trajectories in a fixed order:
//!
//! 1. split into occupied trips (maximal runs with the flag set)
//! 2. reject trips leaving the bounding box or exceeding a speed cap
//! 3. snap points to grid cells
//! 4. aggregate to one visit per 60 s window (majority cell)
//! 5. interpolate short gaps, split on long ones
//! 6. contract consecutive repeats of the same cell
//! 7. drop trips shorter than two visits
//! 8. drop weekend/holiday trips
//! 9. assign each trip its modal hour of day
//!
//! Every drop is counted in [`PreprocessStats`] so a run can be audited.
//! The pipeline is deterministic: the same input files produce byte-identical
//! output regardless of the order the files are listed in.

use std::collections::HashSet;
use std::path::Path;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDate, Timelike, Utc, Weekday};

use crate::dataset::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{CellId, GridShape, GridSpec, NeighborhoodSpec, OccupiedCellIndex, TimeSlot};

/// One GPS fix from a raw log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPoint {
    pub lat: f64,
    pub lon: f64,
    pub occupied: bool,
    pub timestamp: i64,
}

/// A taxi's full log, sorted by timestamp ascending.
#[derive(Debug, Clone)]
pub struct RawLog {
    pub taxi_id: String,
    pub points: Vec<RawPoint>,
}

/// Tunables for the cleaning pipeline.
#[derive(Debug, Clone)]
pub struct PreprocessOptions {
    /// Trips containing a segment faster than this are dropped entirely.
    pub max_speed_kmh: f64,
    /// Offset from UTC for calendar and hour-of-day decisions, in seconds.
    pub utc_offset_secs: i32,
    /// Local dates to drop in addition to weekends.
    pub holidays: HashSet<NaiveDate>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            max_speed_kmh: 150.0,
            // Pacific Standard Time; the bundled example configs target the
            // San Francisco box.
            utc_offset_secs: -8 * 3600,
            holidays: HashSet::new(),
        }
    }
}

/// Where the data went: one counter per pipeline decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PreprocessStats {
    pub raw_points: usize,
    pub occupied_trips: usize,
    pub rejected_out_of_box: usize,
    pub rejected_speed: usize,
    pub gap_splits: usize,
    pub interpolated_visits: usize,
    pub dropped_short: usize,
    pub dropped_calendar: usize,
    /// Consecutive cell pairs farther apart than the transition neighborhood
    /// allows. These survive preprocessing (the trip is still plausible) and
    /// are skipped later when transition samples are extracted.
    pub radius_violations: usize,
    pub trajectories: usize,
}

impl PreprocessStats {
    pub fn report(&self) -> String {
        format!(
            "raw_points={} occupied_trips={} rejected_out_of_box={} rejected_speed={} \
             gap_splits={} interpolated_visits={} dropped_short={} dropped_calendar={} \
             radius_violations={} trajectories={}",
            self.raw_points,
            self.occupied_trips,
            self.rejected_out_of_box,
            self.rejected_speed,
            self.gap_splits,
            self.interpolated_visits,
            self.dropped_short,
            self.dropped_calendar,
            self.radius_violations,
            self.trajectories
        )
    }
}

/// A snapped point: grid cell plus timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit {
    pub cell: CellId,
    pub timestamp: i64,
}

// ---------------------------------------------------------------------------
// Raw log parsing
// ---------------------------------------------------------------------------

/// Parse one taxi log. Records may appear in any order; they are sorted by
/// timestamp (the common layout is newest-first).
pub fn parse_raw_log(taxi_id: &str, text: &str) -> Result<RawLog> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(lat), Some(lon), Some(occ), Some(ts)) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(Error::Data(format!(
                "{taxi_id} line {}: expected 'lat lon occupied unix_time'",
                lineno + 1
            )));
        };
        let parse_f = |v: &str, what: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Data(format!("{taxi_id} line {}: bad {what} {v:?}", lineno + 1)))
        };
        let lat = parse_f(lat, "latitude")?;
        let lon = parse_f(lon, "longitude")?;
        let occupied = match occ {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Data(format!(
                    "{taxi_id} line {}: bad occupancy flag {other:?}",
                    lineno + 1
                )))
            }
        };
        let timestamp: i64 = ts
            .parse()
            .map_err(|_| Error::Data(format!("{taxi_id} line {}: bad timestamp {ts:?}", lineno + 1)))?;
        points.push(RawPoint { lat, lon, occupied, timestamp });
    }
    points.sort_by_key(|p| p.timestamp);
    Ok(RawLog { taxi_id: taxi_id.to_string(), points })
}

/// Read a directory of `*.txt` taxi logs. The file stem becomes the taxi id.
pub fn read_log_dir(dir: &Path) -> Result<Vec<RawLog>> {
    let mut logs = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("unusable log file name: {}", path.display())))?
            .to_string();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        logs.push(parse_raw_log(&stem, &text)?);
    }
    if logs.is_empty() {
        return Err(Error::Data(format!("no .txt logs found in {}", dir.display())));
    }
    logs.sort_by(|a, b| a.taxi_id.cmp(&b.taxi_id));
    Ok(logs)
}

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

/// Maximal runs of occupied points, in time order.
pub fn split_trips(points: &[RawPoint]) -> Vec<&[RawPoint]> {
    let mut trips = Vec::new();
    let mut start = None;
    for (i, p) in points.iter().enumerate() {
        match (p.occupied, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                trips.push(&points[s..i]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        trips.push(&points[s..]);
    }
    trips
}

/// Why a trip was rejected before snapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripReject {
    OutOfBox,
    TooFast,
}

/// Reject trips that leave the box or move implausibly fast. Speed is
/// measured between consecutive fixes under the grid's projection; two fixes
/// at the same timestamp but different positions count as infinitely fast.
pub fn check_speed_bbox(trip: &[RawPoint], grid: &GridSpec, max_speed_kmh: f64) -> std::result::Result<(), TripReject> {
    for p in trip {
        if grid.snap(p.lat, p.lon).is_none() {
            return Err(TripReject::OutOfBox);
        }
    }
    for w in trip.windows(2) {
        let (ax, ay) = grid.project_meters(w[0].lat, w[0].lon);
        let (bx, by) = grid.project_meters(w[1].lat, w[1].lon);
        let dist_m = (bx - ax).hypot(by - ay);
        let dt = (w[1].timestamp - w[0].timestamp) as f64;
        if dt <= 0.0 {
            if dist_m > 0.0 {
                return Err(TripReject::TooFast);
            }
            continue;
        }
        if dist_m * 3.6 / dt > max_speed_kmh {
            return Err(TripReject::TooFast);
        }
    }
    Ok(())
}

/// Snap every point of an in-box trip to its cell.
pub fn snap_trip(trip: &[RawPoint], grid: &GridSpec) -> Vec<Visit> {
    trip.iter()
        .map(|p| Visit {
            cell: grid.snap(p.lat, p.lon).expect("trip was box-checked"),
            timestamp: p.timestamp,
        })
        .collect()
}

/// Collapse to one visit per 60-second window, anchored at the trip's first
/// timestamp. The window's cell is the most frequent one; ties go to the cell
/// seen earliest within the window. The visit carries the window start time.
pub fn aggregate_60s(visits: &[Visit]) -> Vec<Visit> {
    let Some(first) = visits.first() else { return Vec::new() };
    let t0 = first.timestamp;
    let mut out: Vec<Visit> = Vec::new();
    let mut i = 0;
    while i < visits.len() {
        let window = (visits[i].timestamp - t0) / 60;
        let mut j = i;
        while j < visits.len() && (visits[j].timestamp - t0) / 60 == window {
            j += 1;
        }
        // Majority cell; first-seen order breaks ties.
        let mut counts: Vec<(CellId, usize)> = Vec::new();
        for v in &visits[i..j] {
            match counts.iter_mut().find(|(c, _)| *c == v.cell) {
                Some((_, n)) => *n += 1,
                None => counts.push((v.cell, 1)),
            }
        }
        // First strict maximum, so first-seen wins ties.
        let mut best = counts[0];
        for &(cell, n) in &counts[1..] {
            if n > best.1 {
                best = (cell, n);
            }
        }
        let best = best.0;
        out.push(Visit { cell: best, timestamp: t0 + window * 60 });
        i = j;
    }
    out
}

/// Fill short gaps and split on long ones.
///
/// A gap of exactly one window is contiguous. Gaps shorter than
/// `split_gap_secs` (default 300 s) get one synthetic visit per missing
/// window, positions linearly interpolated in (row, col) space and rounded
/// to the nearest cell. Longer gaps split the trip.
pub fn interpolate_gaps(visits: &[Visit], shape: &GridShape) -> (Vec<Vec<Visit>>, usize) {
    const STEP: i64 = 60;
    const SPLIT_AT: i64 = 300;
    let mut trips: Vec<Vec<Visit>> = Vec::new();
    let mut cur: Vec<Visit> = Vec::new();
    let mut inserted = 0;
    for &v in visits {
        let Some(&prev) = cur.last() else {
            cur.push(v);
            continue;
        };
        let gap = v.timestamp - prev.timestamp;
        debug_assert!(gap >= 0 && gap % STEP == 0, "aggregated visits sit on window starts");
        if gap >= SPLIT_AT {
            trips.push(std::mem::take(&mut cur));
            cur.push(v);
            continue;
        }
        if gap > STEP {
            let missing = gap / STEP - 1;
            let (r0, c0) = (shape.row(prev.cell) as f64, shape.col(prev.cell) as f64);
            let (r1, c1) = (shape.row(v.cell) as f64, shape.col(v.cell) as f64);
            for k in 1..=missing {
                let frac = k as f64 / (missing + 1) as f64;
                let row = (r0 + (r1 - r0) * frac).round() as usize;
                let col = (c0 + (c1 - c0) * frac).round() as usize;
                cur.push(Visit {
                    cell: shape.cell_at(row.min(shape.n_rows - 1), col.min(shape.n_cols - 1)),
                    timestamp: prev.timestamp + k * STEP,
                });
                inserted += 1;
            }
        }
        cur.push(v);
    }
    if !cur.is_empty() {
        trips.push(cur);
    }
    (trips, inserted)
}

/// Collapse consecutive visits to the same cell, keeping the first timestamp.
pub fn contract_self_loops(visits: &[Visit]) -> Vec<Visit> {
    let mut out: Vec<Visit> = Vec::new();
    for &v in visits {
        if out.last().map(|p| p.cell) != Some(v.cell) {
            out.push(v);
        }
    }
    out
}

fn local_time(timestamp: i64, utc_offset_secs: i32) -> DateTime<FixedOffset> {
    let offset = FixedOffset::east_opt(utc_offset_secs).expect("offset validated in config");
    DateTime::<Utc>::from_timestamp(timestamp, 0)
        .expect("unix timestamps from logs fit chrono's range")
        .with_timezone(&offset)
}

/// True when the trip's local start date is a weekend or blacklisted holiday.
pub fn is_calendar_dropped(first_timestamp: i64, opts: &PreprocessOptions) -> bool {
    let local = local_time(first_timestamp, opts.utc_offset_secs);
    let date = local.date_naive();
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun) || opts.holidays.contains(&date)
}

/// Modal local hour over the trip's visits; ties go to the hour that occurs
/// first in the trip.
pub fn assign_hour(visits: &[Visit], utc_offset_secs: i32) -> TimeSlot {
    debug_assert!(!visits.is_empty());
    let mut counts = [0usize; TimeSlot::COUNT];
    let mut first_seen = [usize::MAX; TimeSlot::COUNT];
    for (i, v) in visits.iter().enumerate() {
        let h = local_time(v.timestamp, utc_offset_secs).hour() as usize;
        counts[h] += 1;
        if first_seen[h] == usize::MAX {
            first_seen[h] = i;
        }
    }
    let best = (0..TimeSlot::COUNT)
        .filter(|&h| counts[h] > 0)
        .min_by_key(|&h| (std::cmp::Reverse(counts[h]), first_seen[h]))
        .expect("at least one visit");
    TimeSlot::new(best as u8).unwrap()
}

/// Parse a holiday blacklist: one `YYYY-MM-DD` per line, `#` comments.
pub fn parse_holidays(text: &str) -> Result<HashSet<NaiveDate>> {
    let mut out = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let date = NaiveDate::parse_from_str(line, "%Y-%m-%d")
            .map_err(|_| Error::Data(format!("holiday file line {}: bad date {line:?}", lineno + 1)))?;
        out.insert(date);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Run the whole pipeline over a set of taxi logs.
///
/// Output trajectories are ordered by (taxi id, trip start time), which makes
/// the result independent of the order the logs are supplied in.
pub fn preprocess_logs(
    logs: &[RawLog],
    grid: &GridSpec,
    nb: NeighborhoodSpec,
    opts: &PreprocessOptions,
) -> (Dataset, PreprocessStats) {
    let mut stats = PreprocessStats::default();
    // (taxi, start time, sequence number) keeps the sort total and stable.
    let mut keyed: Vec<(&str, i64, usize, Trajectory)> = Vec::new();

    let mut logs_sorted: Vec<&RawLog> = logs.iter().collect();
    logs_sorted.sort_by(|a, b| a.taxi_id.cmp(&b.taxi_id));

    for log in logs_sorted {
        stats.raw_points += log.points.len();
        for trip in split_trips(&log.points) {
            stats.occupied_trips += 1;
            match check_speed_bbox(trip, grid, opts.max_speed_kmh) {
                Err(TripReject::OutOfBox) => {
                    stats.rejected_out_of_box += 1;
                    continue;
                }
                Err(TripReject::TooFast) => {
                    stats.rejected_speed += 1;
                    continue;
                }
                Ok(()) => {}
            }
            let snapped = snap_trip(trip, grid);
            let aggregated = aggregate_60s(&snapped);
            let (pieces, inserted) = interpolate_gaps(&aggregated, &grid.shape);
            stats.interpolated_visits += inserted;
            stats.gap_splits += pieces.len().saturating_sub(1);
            for piece in pieces {
                let contracted = contract_self_loops(&piece);
                if contracted.len() < 2 {
                    stats.dropped_short += 1;
                    continue;
                }
                if is_calendar_dropped(contracted[0].timestamp, opts) {
                    stats.dropped_calendar += 1;
                    continue;
                }
                let hour = assign_hour(&contracted, opts.utc_offset_secs);
                let start = contracted[0].timestamp;
                let cells: Vec<CellId> = contracted.iter().map(|v| v.cell).collect();
                let traj = Trajectory::new(cells, hour).expect("pipeline guarantees the invariants");
                keyed.push((log.taxi_id.as_str(), start, keyed.len(), traj));
            }
        }
    }

    keyed.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let trajectories: Vec<Trajectory> = keyed.into_iter().map(|(_, _, _, t)| t).collect();

    // Post-pass diagnostic: consecutive pairs wider than the transition
    // neighborhood survive here but will be skipped at sample extraction.
    for t in &trajectories {
        stats.radius_violations += t
            .cells
            .windows(2)
            .filter(|w| grid.shape.relative_offset(w[0], w[1], nb).is_none())
            .count();
    }

    stats.trajectories = trajectories.len();
    (Dataset::new(grid.shape, trajectories), stats)
}

// ---------------------------------------------------------------------------
// Transition samples
// ---------------------------------------------------------------------------

/// One next-cell training example, in model-ready dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionSample {
    /// Dense id of the cell the taxi is in.
    pub current: u32,
    /// Dense id of the trip's destination cell.
    pub dst: u32,
    pub hour: TimeSlot,
    /// Offset class of the next cell relative to `current`.
    pub label: u16,
}

/// All transition samples of a dataset, grouped by source trajectory so the
/// trainer can sample trajectory-first.
#[derive(Debug, Clone, Default)]
pub struct TransitionSet {
    pub samples: Vec<TransitionSample>,
    /// One contiguous `samples` range per trajectory that produced at least
    /// one sample.
    pub traj_ranges: Vec<std::ops::Range<usize>>,
    /// Consecutive pairs skipped because they exceed the neighborhood radius.
    pub dropped_pairs: usize,
}

impl TransitionSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of trajectories contributing samples. DP accounting uses this
    /// as the sampling universe size.
    pub fn n_trajectories(&self) -> usize {
        self.traj_ranges.len()
    }
}

/// Turn trajectories into transition samples. Pairs farther apart than the
/// neighborhood radius are counted and skipped; trajectories whose pairs all
/// drop contribute nothing.
pub fn extract_transition_samples(
    dataset: &Dataset,
    occupied: &OccupiedCellIndex,
    nb: NeighborhoodSpec,
) -> Result<TransitionSet> {
    let shape = &dataset.shape;
    let mut set = TransitionSet::default();
    for traj in &dataset.trajectories {
        let start = set.samples.len();
        let dst = occupied
            .dense(traj.dst())
            .ok_or_else(|| Error::Data(format!("destination cell {} not in occupied index", traj.dst().0)))?;
        for w in traj.cells.windows(2) {
            let Some(label) = shape.relative_offset(w[0], w[1], nb) else {
                set.dropped_pairs += 1;
                continue;
            };
            let current = occupied
                .dense(w[0])
                .ok_or_else(|| Error::Data(format!("cell {} not in occupied index", w[0].0)))?;
            set.samples.push(TransitionSample { current, dst, hour: traj.hour, label: label as u16 });
        }
        if set.samples.len() > start {
            set.traj_ranges.push(start..set.samples.len());
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDateTime;

    fn sf_grid() -> GridSpec {
        GridSpec::new(37.6017, 37.8112, -122.5158, -122.3527, 500.0).unwrap()
    }

    fn pt(lat: f64, lon: f64, occupied: bool, timestamp: i64) -> RawPoint {
        RawPoint { lat, lon, occupied, timestamp }
    }

    /// Unix timestamp for a local San Francisco (UTC-8) wall-clock time.
    fn sf_ts(y: i32, mo: u32, d: u32, h: u32, mi: u32) -> i64 {
        let naive = NaiveDate::from_ymd_opt(y, mo, d).unwrap().and_hms_opt(h, mi, 0).unwrap();
        let off = FixedOffset::east_opt(-8 * 3600).unwrap();
        NaiveDateTime::and_local_timezone(&naive, off).unwrap().timestamp()
    }

    #[test]
    fn parse_sorts_by_time_and_validates() {
        let log = parse_raw_log("cab1", "37.75 -122.39 0 100\n37.76 -122.40 1 40\n").unwrap();
        assert_eq!(log.points[0].timestamp, 40);
        assert!(log.points[0].occupied);
        assert!(parse_raw_log("cab1", "37.75 -122.39 2 100\n").is_err());
        assert!(parse_raw_log("cab1", "37.75 -122.39 0\n").is_err());
        assert!(parse_raw_log("cab1", "x -122.39 0 100\n").is_err());
    }

    #[test]
    fn split_on_occupancy_runs() {
        let pts = [
            pt(37.7, -122.4, false, 0),
            pt(37.7, -122.4, true, 60),
            pt(37.7, -122.4, true, 120),
            pt(37.7, -122.4, false, 180),
            pt(37.7, -122.4, true, 240),
        ];
        let trips = split_trips(&pts);
        assert_eq!(trips.len(), 2);
        assert_eq!(trips[0].len(), 2);
        assert_eq!(trips[1].len(), 1);
    }

    #[test]
    fn speed_gate() {
        let g = sf_grid();
        // ~5 km north in 60 s is ~300 km/h: rejected.
        let fast = [pt(37.70, -122.45, true, 0), pt(37.745, -122.45, true, 60)];
        assert_eq!(check_speed_bbox(&fast, &g, 150.0), Err(TripReject::TooFast));
        // Same displacement in 600 s is ~30 km/h: fine.
        let slow = [pt(37.70, -122.45, true, 0), pt(37.745, -122.45, true, 600)];
        assert_eq!(check_speed_bbox(&slow, &g, 150.0), Ok(()));
        // Duplicate timestamp at same position is fine; at different positions it is not.
        let dup_same = [pt(37.70, -122.45, true, 0), pt(37.70, -122.45, true, 0)];
        assert_eq!(check_speed_bbox(&dup_same, &g, 150.0), Ok(()));
        let dup_moved = [pt(37.70, -122.45, true, 0), pt(37.701, -122.45, true, 0)];
        assert_eq!(check_speed_bbox(&dup_moved, &g, 150.0), Err(TripReject::TooFast));
        // Any point outside the box kills the trip.
        let outside = [pt(37.70, -122.45, true, 0), pt(37.55, -122.45, true, 600)];
        assert_eq!(check_speed_bbox(&outside, &g, 150.0), Err(TripReject::OutOfBox));
    }

    #[test]
    fn aggregation_takes_window_majority() {
        let g = sf_grid();
        let a = g.shape.cell_at(5, 5);
        let b = g.shape.cell_at(5, 6);
        // Three fixes in A and one in B inside the first window: A wins.
        let visits = [
            Visit { cell: a, timestamp: 1000 },
            Visit { cell: a, timestamp: 1010 },
            Visit { cell: a, timestamp: 1050 },
            Visit { cell: b, timestamp: 1055 },
        ];
        let agg = aggregate_60s(&visits);
        assert_eq!(agg, vec![Visit { cell: a, timestamp: 1000 }]);
        // 2-2 tie: the earliest-seen cell wins.
        let tied = [
            Visit { cell: b, timestamp: 1000 },
            Visit { cell: a, timestamp: 1010 },
            Visit { cell: a, timestamp: 1020 },
            Visit { cell: b, timestamp: 1030 },
        ];
        assert_eq!(aggregate_60s(&tied)[0].cell, b);
        // Later windows are stamped with their window start.
        let spread = [Visit { cell: a, timestamp: 1000 }, Visit { cell: b, timestamp: 1130 }];
        assert_eq!(
            aggregate_60s(&spread),
            vec![Visit { cell: a, timestamp: 1000 }, Visit { cell: b, timestamp: 1120 }]
        );
    }

    #[test]
    fn gap_interpolation_walks_the_line() {
        let shape = GridShape::new(10, 10, 500.0).unwrap();
        let v = |r: usize, c: usize, t: i64| Visit { cell: shape.cell_at(r, c), timestamp: t };
        // 240 s gap from (0,0) to (0,4): three synthetic visits at columns 1..3.
        let (trips, inserted) = interpolate_gaps(&[v(0, 0, 0), v(0, 4, 240)], &shape);
        assert_eq!(inserted, 3);
        assert_eq!(trips, vec![vec![v(0, 0, 0), v(0, 1, 60), v(0, 2, 120), v(0, 3, 180), v(0, 4, 240)]]);
        // Exactly one window apart: untouched.
        let (trips, inserted) = interpolate_gaps(&[v(0, 0, 0), v(0, 1, 60)], &shape);
        assert_eq!((trips.len(), inserted), (1, 0));
        // A 300 s gap splits the trip.
        let (trips, inserted) = interpolate_gaps(&[v(0, 0, 0), v(0, 1, 60), v(5, 5, 360)], &shape);
        assert_eq!(inserted, 0);
        assert_eq!(trips, vec![vec![v(0, 0, 0), v(0, 1, 60)], vec![v(5, 5, 360)]]);
    }

    #[test]
    fn contraction_keeps_first_timestamps() {
        let shape = GridShape::new(10, 10, 500.0).unwrap();
        let v = |r: usize, c: usize, t: i64| Visit { cell: shape.cell_at(r, c), timestamp: t };
        let contracted = contract_self_loops(&[v(0, 0, 0), v(0, 0, 60), v(0, 1, 120), v(0, 1, 180), v(0, 0, 240)]);
        assert_eq!(contracted, vec![v(0, 0, 0), v(0, 1, 120), v(0, 0, 240)]);
    }

    #[test]
    fn calendar_drops_weekends_and_holidays() {
        // 2008-05-24 was a Saturday, 2008-05-26 (Memorial Day) a Monday.
        let opts = PreprocessOptions {
            holidays: parse_holidays("# federal\n2008-05-26\n").unwrap(),
            ..PreprocessOptions::default()
        };
        assert!(is_calendar_dropped(sf_ts(2008, 5, 24, 12, 0), &opts));
        assert!(is_calendar_dropped(sf_ts(2008, 5, 25, 12, 0), &opts));
        assert!(is_calendar_dropped(sf_ts(2008, 5, 26, 12, 0), &opts));
        assert!(!is_calendar_dropped(sf_ts(2008, 5, 27, 12, 0), &opts));
        // The date is taken in local time: 2008-05-24 01:00 local is still
        // Saturday even though it is 09:00 UTC.
        assert!(is_calendar_dropped(sf_ts(2008, 5, 24, 1, 0), &opts));
    }

    #[test]
    fn hour_assignment_mode_and_ties() {
        let shape = GridShape::new(10, 10, 500.0).unwrap();
        let cell = shape.cell_at(0, 0);
        let at = |h: u32, mi: u32| Visit { cell, timestamp: sf_ts(2008, 5, 27, h, mi) };
        // Majority: three visits in hour 10 beat two in hour 9.
        let visits = [at(9, 58), at(9, 59), at(10, 0), at(10, 1), at(10, 2)];
        assert_eq!(assign_hour(&visits, -8 * 3600).hour(), 10);
        // Tie: equal counts in hours 9 and 10; the earlier-occurring hour wins.
        let tied = [at(9, 58), at(9, 59), at(10, 0), at(10, 1)];
        assert_eq!(assign_hour(&tied, -8 * 3600).hour(), 9);
    }

    #[test]
    fn full_pipeline_produces_expected_trajectory() {
        let g = sf_grid();
        // Build a trip by walking cell centers eastwards, one cell per minute.
        let lat = 37.70;
        let lon0 = -122.45;
        let step = 0.006; // ~0.5 km in longitude
        let t0 = sf_ts(2008, 5, 27, 9, 0);
        let mut points = vec![pt(37.75, -122.44, false, t0 - 60)];
        for k in 0..4 {
            points.push(pt(lat, lon0 + step * k as f64, true, t0 + 60 * k as i64));
        }
        points.push(pt(37.75, -122.44, false, t0 + 400));

        let log = RawLog { taxi_id: "cab1".into(), points };
        let (ds, stats) = preprocess_logs(&[log], &g, NeighborhoodSpec::default(), &PreprocessOptions::default());
        assert_eq!(stats.occupied_trips, 1);
        assert_eq!(stats.trajectories, 1);
        assert_eq!(ds.len(), 1);
        let traj = &ds.trajectories[0];
        assert_eq!(traj.hour.hour(), 9);
        assert_eq!(traj.len(), 4);
        // Columns strictly increase along the walk.
        let cols: Vec<usize> = traj.cells.iter().map(|&c| ds.shape.col(c)).collect();
        assert!(cols.windows(2).all(|w| w[1] == w[0] + 1), "cols: {cols:?}");
    }

    #[test]
    fn pipeline_is_order_independent() {
        let g = sf_grid();
        let t0 = sf_ts(2008, 5, 27, 9, 0);
        let mk = |taxi: &str, lon0: f64| RawLog {
            taxi_id: taxi.into(),
            points: (0..3)
                .map(|k| pt(37.70, lon0 + 0.006 * k as f64, true, t0 + 60 * k))
                .collect(),
        };
        let (a, b) = (mk("alpha", -122.45), mk("beta", -122.42));
        let opts = PreprocessOptions::default();
        let nb = NeighborhoodSpec::default();
        let (ds1, _) = preprocess_logs(&[a.clone(), b.clone()], &g, nb, &opts);
        let (ds2, _) = preprocess_logs(&[b, a], &g, nb, &opts);
        assert_eq!(ds1.to_text(), ds2.to_text());
    }

    #[test]
    fn short_trips_are_dropped_but_counted() {
        let g = sf_grid();
        // Two fixes in the same cell: contracts to one visit, dropped.
        let t0 = sf_ts(2008, 5, 27, 9, 0);
        let log = RawLog {
            taxi_id: "cab1".into(),
            points: vec![pt(37.70, -122.45, true, t0), pt(37.70, -122.45, true, t0 + 60)],
        };
        let (ds, stats) = preprocess_logs(&[log], &g, NeighborhoodSpec::default(), &PreprocessOptions::default());
        assert!(ds.is_empty());
        assert_eq!(stats.dropped_short, 1);
    }

    #[test]
    fn transition_extraction_drops_wide_pairs() {
        let shape = GridShape::new(20, 20, 500.0).unwrap();
        let nb = NeighborhoodSpec::new(2).unwrap();
        let c = |r: usize, col: usize| shape.cell_at(r, col);
        let ds = Dataset::new(
            shape,
            vec![
                Trajectory::new(vec![c(0, 0), c(0, 1), c(0, 9), c(0, 10)], TimeSlot::new(8).unwrap()).unwrap(),
                Trajectory::new(vec![c(5, 5), c(6, 6)], TimeSlot::new(9).unwrap()).unwrap(),
            ],
        );
        let occ = ds.occupied_index();
        let set = extract_transition_samples(&ds, &occ, nb).unwrap();
        // The (0,1) -> (0,9) hop exceeds radius 2 and is skipped.
        assert_eq!(set.dropped_pairs, 1);
        assert_eq!(set.len(), 3);
        assert_eq!(set.n_trajectories(), 2);
        assert_eq!(set.traj_ranges, vec![0..2, 2..3]);
        // Labels: one step east = center class + 1; one step SE = center + side + 1.
        assert_eq!(set.samples[0].label as usize, nb.center_class() + 1);
        assert_eq!(set.samples[2].label as usize, nb.center_class() + nb.side() + 1);
        // Destination is the dense id of the trip's final cell even when the
        // final hop was dropped.
        assert_eq!(occ.full(set.samples[0].dst), c(0, 10));
        // Hours ride along.
        assert_eq!(set.samples[2].hour.hour(), 9);
    }

    #[test]
    fn holiday_parser_rejects_garbage() {
        assert!(parse_holidays("2008-13-01\n").is_err());
        assert!(parse_holidays("not a date\n").is_err());
        let ok = parse_holidays("\n# comment\n2008-07-04\n").unwrap();
        assert_eq!(ok.len(), 1);
    }
}
