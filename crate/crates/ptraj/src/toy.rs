//! Small deterministic corpora for examples and end-to-end tests.
//!
//! The toy world is a 10x10 grid of 500 m cells with three fixed commute
//! routes spanning two hours. Trajectories are drawn i.i.d. from a
//! categorical distribution over the routes, so every distributional property
//! of the corpus (trip-length histogram per hour, frequent patterns,
//! source/destination pairs) is known in closed form and can be checked
//! against pipeline output.
//!
//! The route layout is chosen so that end-to-end checks stay meaningful under
//! a *stochastic* generator, whose endpoint model occasionally recombines the
//! source of one route with the destination of another:
//!
//! * Routes that share no cells are more than two rows/columns apart, so under
//!   the radius-2 transition neighborhood a mixed-up endpoint pair has no
//!   connecting path and the generator must redraw it.
//! * The two routes that do share cells form a nested pair (one is a prefix of
//!   the other), so mixing up *their* endpoints reproduces a real route. As a
//!   side effect the shared prefix makes the three most frequent patterns sit
//!   a full route-weight above the rest of the ranking, rather than being tied
//!   with dozens of equally frequent patterns whose top-k order would flip on
//!   a single stray draw.

use crate::dataset::{Dataset, Trajectory};
use crate::dp::derive_rng;
use crate::grid::{CellId, GridShape, GridSpec, NeighborhoodSpec, TimeSlot};
use crate::preprocess::{RawLog, RawPoint};
use rand::RngExt;

/// RNG stream tag for toy-data draws (training uses 1-2, generation 3, eval 4).
const TOY_STREAM: u64 = 5;

/// One fixed route: a cell sequence, the hour its trips happen, and the
/// probability a toy trajectory follows it.
#[derive(Debug, Clone)]
pub struct ToyRoute {
    pub cells: Vec<CellId>,
    pub hour: TimeSlot,
    pub weight: f64,
}

/// A sampled toy dataset together with the ground truth it was drawn from.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub dataset: Dataset,
    pub nb: NeighborhoodSpec,
    pub routes: Vec<ToyRoute>,
}

/// The 10x10 toy grid: 500 m cells, ids are `row * 10 + col`.
pub fn toy_shape() -> GridShape {
    GridShape::new(10, 10, 500.0).expect("static toy grid")
}

/// The three toy routes; see the module docs for why they are laid out like
/// this. Every step moves to an adjacent cell. The two morning routes share
/// their three-cell prefix, the evening route keeps more than two
/// rows/columns of separation from both.
pub fn toy_routes() -> Vec<ToyRoute> {
    let hour = |h| TimeSlot::new(h).unwrap();
    vec![
        // Short morning hop at the start of the north edge...
        ToyRoute { cells: (0..=2).map(CellId).collect(), hour: hour(8), weight: 0.30 },
        // ...and the longer morning run that extends it along the same row.
        ToyRoute { cells: (0..=6).map(CellId).collect(), hour: hour(8), weight: 0.40 },
        // Evening run along row 3, ending one row down.
        ToyRoute {
            cells: [30, 31, 32, 33, 34, 35, 36, 37, 38, 39, 49].map(CellId).to_vec(),
            hour: hour(17),
            weight: 0.30,
        },
    ]
}

/// Draw `n` trajectories from the toy route distribution.
pub fn toy_corpus(n: usize, seed: u64) -> ToyCorpus {
    let routes = toy_routes();
    let mut rng = derive_rng(seed, &[TOY_STREAM, 0]);
    let mut trajectories = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u: f64 = rng.random();
        let mut pick = routes.len() - 1;
        for (i, r) in routes.iter().enumerate() {
            u -= r.weight;
            if u < 0.0 {
                pick = i;
                break;
            }
        }
        let r = &routes[pick];
        trajectories.push(Trajectory::new(r.cells.clone(), r.hour).expect("routes are valid"));
    }
    ToyCorpus {
        dataset: Dataset::new(toy_shape(), trajectories),
        nb: NeighborhoodSpec::new(2).unwrap(),
        routes,
    }
}

/// A geographic bounding box that discretizes to the toy grid.
///
/// The box spans 4900 m per side, so 500 m cells give exactly 10 rows and 10
/// columns and every cell center (even in the overhanging last row/column)
/// still lies inside the box.
pub fn toy_grid_spec() -> GridSpec {
    const SPAN_M: f64 = 4_900.0;
    let lat_min = 37.7100;
    let lon_min = -122.4600;
    let m_per_deg_lat = 6_371_000.0 * std::f64::consts::PI / 180.0;
    let dlat = SPAN_M / m_per_deg_lat;
    // Longitude scale uses the box's mid latitude, same as the projection.
    let mid_lat = lat_min + dlat / 2.0;
    let dlon = SPAN_M / (m_per_deg_lat * mid_lat.to_radians().cos());
    let spec = GridSpec::new(lat_min, lat_min + dlat, lon_min, lon_min + dlon, 500.0)
        .expect("static toy box");
    debug_assert_eq!((spec.shape.n_rows, spec.shape.n_cols), (10, 10));
    spec
}

/// Synthesize raw GPS logs that preprocess back into the toy corpus.
///
/// Each taxi drives `trips_per_taxi` occupied trips on workdays, one GPS fix
/// per cell at 60 s spacing with a small in-cell jitter, and an empty cruise
/// fix between trips. Taxi 0 additionally logs one trip that teleports across
/// the grid (speed reject), one that leaves the box, and one on a Saturday
/// (calendar drop), so pipeline statistics have something to count.
pub fn toy_raw_logs(n_taxis: usize, trips_per_taxi: usize, seed: u64) -> Vec<RawLog> {
    let spec = toy_grid_spec();
    let routes = toy_routes();
    // Wed 2008-05-21 00:00 local time (UTC-8), as a unix timestamp.
    const WEDNESDAY_LOCAL_MIDNIGHT: i64 = 1_211_328_000 + 28_800;
    const SATURDAY_LOCAL_MIDNIGHT: i64 = WEDNESDAY_LOCAL_MIDNIGHT + 3 * 86_400;

    let mut logs = Vec::with_capacity(n_taxis);
    for taxi in 0..n_taxis {
        let mut rng = derive_rng(seed, &[TOY_STREAM, 1, taxi as u64]);
        let mut points = Vec::new();
        let mut day = 0i64;
        for trip in 0..trips_per_taxi {
            let mut u: f64 = rng.random();
            let mut pick = routes.len() - 1;
            for (i, r) in routes.iter().enumerate() {
                u -= r.weight;
                if u < 0.0 {
                    pick = i;
                    break;
                }
            }
            let route = &routes[pick];
            // One trip per (day, hour); advance the day after each trip so
            // same-hour trips never merge into one occupied run.
            let start = WEDNESDAY_LOCAL_MIDNIGHT
                + day * 86_400
                + i64::from(route.hour.hour()) * 3_600
                + 300;
            push_route_points(&mut points, &spec, &route.cells, start, true, &mut rng);
            // A cruise fix after the trip ends the occupied run.
            let (lat, lon) = spec.cell_center_geo(route.cells[0]);
            points.push(RawPoint {
                lat,
                lon,
                occupied: false,
                timestamp: start + 60 * route.cells.len() as i64 + 600,
            });
            // Stay on weekdays: Wed, Thu, Fri, then skip to next Monday.
            day += if (trip + 1) % 3 == 0 { 5 } else { 1 };
        }
        if taxi == 0 {
            spike_rejects(&mut points, &spec, &routes[0].cells, SATURDAY_LOCAL_MIDNIGHT);
        }
        points.sort_by_key(|p| p.timestamp);
        logs.push(RawLog { taxi_id: format!("toy{taxi:03}"), points });
    }
    logs
}

fn push_route_points(
    points: &mut Vec<RawPoint>,
    spec: &GridSpec,
    cells: &[CellId],
    start: i64,
    occupied: bool,
    rng: &mut impl rand::Rng,
) {
    // +-80 m of jitter keeps each fix well inside its 500 m cell.
    const JITTER_DEG: f64 = 0.0007;
    for (k, &cell) in cells.iter().enumerate() {
        let (lat, lon) = spec.cell_center_geo(cell);
        points.push(RawPoint {
            lat: lat + rng.random_range(-JITTER_DEG..JITTER_DEG),
            lon: lon + rng.random_range(-JITTER_DEG..JITTER_DEG),
            occupied,
            timestamp: start + 60 * k as i64,
        });
    }
}

/// Three deliberately bad trips: too fast, out of the box, and on a weekend.
fn spike_rejects(points: &mut Vec<RawPoint>, spec: &GridSpec, route: &[CellId], saturday: i64) {
    let (lat0, lon0) = spec.cell_center_geo(CellId(0));
    let (lat9, lon9) = spec.cell_center_geo(CellId(99));
    let base = saturday - 2 * 86_400 + 12 * 3_600; // Thursday noon
    // Corner-to-corner in 30 s: several hundred km/h.
    points.push(RawPoint { lat: lat0, lon: lon0, occupied: true, timestamp: base });
    points.push(RawPoint { lat: lat9, lon: lon9, occupied: true, timestamp: base + 30 });
    points.push(RawPoint { lat: lat0, lon: lon0, occupied: false, timestamp: base + 90 });
    // A fix north of the box.
    points.push(RawPoint { lat: lat0 + 1.0, lon: lon0, occupied: true, timestamp: base + 7_200 });
    points.push(RawPoint { lat: lat0 + 1.0, lon: lon0, occupied: true, timestamp: base + 7_260 });
    points.push(RawPoint { lat: lat0, lon: lon0, occupied: false, timestamp: base + 7_320 });
    // A clean Saturday-morning trip, dropped by the workday filter.
    for (k, &cell) in route.iter().enumerate() {
        let (lat, lon) = spec.cell_center_geo(cell);
        points.push(RawPoint { lat, lon, occupied: true, timestamp: saturday + 8 * 3_600 + 60 * k as i64 });
    }
    let (lat, lon) = spec.cell_center_geo(route[0]);
    points.push(RawPoint { lat, lon, occupied: false, timestamp: saturday + 8 * 3_600 + 60 * route.len() as i64 + 300 });
}
