//! Synthetic trace generation from the two trained models.
//!
//! For each trajectory the initialization model proposes a (source,
//! destination, hour) triple, and the route is the most probable path under
//! the transition model: edge weights are `-ln p` of the masked next-step
//! probabilities, so the minimum-weight path maximizes the product of step
//! probabilities. Generation touches nothing but the two models and the
//! seed — the training data never enters this module.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashMap;

use crate::dataset::{Dataset, Trajectory};
use crate::dp::derive_rng;
use crate::error::{Error, Result};
use crate::grid::TimeSlot;
use crate::nn::PROB_FLOOR;
use crate::ti::TiModel;
use crate::tpg::TpgModel;

/// A minimum-weight route between two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<u32>,
    /// Total edge weight; `exp(-cost)` is the route's probability.
    pub cost: f64,
}

#[derive(Clone, Copy)]
struct NodeBest {
    dist: f64,
    hops: u32,
    pred: u32,
}

const NO_PRED: u32 = u32::MAX;

/// Heap entry ordered by (dist, hops, pred, node); BinaryHeap is a max-heap
/// so comparisons are reversed.
struct HeapEntry {
    dist: f64,
    hops: u32,
    pred: u32,
    node: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.hops.cmp(&self.hops))
            .then_with(|| other.pred.cmp(&self.pred))
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Dijkstra with a deterministic total order on paths.
///
/// Among equal-weight paths the one with fewer edges wins; remaining ties
/// resolve by comparing predecessors backwards from the goal (lowest node id
/// first), which yields one well-defined winner and makes results exactly
/// reproducible. `edges` returns finite non-negative out-edge weights; it is
/// consulted lazily, once per settled node.
pub fn most_probable_path(
    n_nodes: usize,
    start: u32,
    goal: u32,
    mut edges: impl FnMut(u32) -> Vec<(u32, f64)>,
) -> Result<Path> {
    assert!((start as usize) < n_nodes && (goal as usize) < n_nodes);
    if start == goal {
        return Ok(Path { nodes: vec![start], cost: 0.0 });
    }
    let mut best: Vec<Option<NodeBest>> = vec![None; n_nodes];
    let mut settled = vec![false; n_nodes];
    let mut heap = BinaryHeap::new();
    best[start as usize] = Some(NodeBest { dist: 0.0, hops: 0, pred: NO_PRED });
    heap.push(HeapEntry { dist: 0.0, hops: 0, pred: NO_PRED, node: start });

    while let Some(top) = heap.pop() {
        let u = top.node;
        if settled[u as usize] {
            continue;
        }
        settled[u as usize] = true;
        if u == goal {
            let mut nodes = vec![goal];
            let mut at = goal;
            while let Some(b) = best[at as usize] {
                if b.pred == NO_PRED {
                    break;
                }
                nodes.push(b.pred);
                at = b.pred;
            }
            nodes.reverse();
            return Ok(Path { nodes, cost: top.dist });
        }
        let (du, hu) = (top.dist, top.hops);
        for (v, w) in edges(u) {
            debug_assert!(w.is_finite() && w >= 0.0, "edge weight {w}");
            if settled[v as usize] {
                continue;
            }
            let cand = NodeBest { dist: du + w, hops: hu + 1, pred: u };
            let improves = match best[v as usize] {
                None => true,
                Some(cur) => {
                    cand.dist
                        .total_cmp(&cur.dist)
                        .then_with(|| cand.hops.cmp(&cur.hops))
                        .then_with(|| cand.pred.cmp(&cur.pred))
                        == Ordering::Less
                }
            };
            if improves {
                best[v as usize] = Some(cand);
                heap.push(HeapEntry { dist: cand.dist, hops: cand.hops, pred: cand.pred, node: v });
            }
        }
    }
    Err(Error::NoPath { from: start, to: goal })
}

/// Per-(destination, hour) view of the transition model as a weighted graph
/// over dense cell ids. Out-edges are computed on first visit and cached.
pub struct RoutingGraph<'a> {
    model: &'a TpgModel,
    dst: u32,
    hour: u8,
    adj: Vec<Option<Vec<(u32, f64)>>>,
}

impl<'a> RoutingGraph<'a> {
    pub fn new(model: &'a TpgModel, dst: u32, hour: u8) -> Self {
        let n = model.vocab();
        RoutingGraph { model, dst, hour, adj: vec![None; n] }
    }

    /// Out-edges of `u`: one per reachable masked class, weighted
    /// `-ln(p)` with probabilities floored so weights stay finite.
    pub fn edges(&mut self, u: u32) -> Vec<(u32, f64)> {
        if self.adj[u as usize].is_none() {
            let probs = self.model.masked_distribution(u, self.dst, self.hour);
            let current = self.model.occupied.full(u);
            let mut out = Vec::new();
            for (class, &p) in probs.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let cell = self
                    .model
                    .shape
                    .offset_to_cell(current, class, self.model.nb)
                    .expect("masked class stays on the grid");
                let v = self.model.occupied.dense(cell).expect("masked class is occupied");
                out.push((v, -(p.max(PROB_FLOOR).ln())));
            }
            self.adj[u as usize] = Some(out);
        }
        self.adj[u as usize].as_ref().unwrap().clone()
    }
}

/// Generation knobs.
#[derive(Debug, Clone, Copy)]
pub struct GenerateOptions {
    /// Trajectories to produce; defaults to the training-set size recorded
    /// in the initialization model.
    pub count: Option<usize>,
    /// Proposal attempts per trajectory before it is skipped. A draw is
    /// rejected when source equals destination or no route exists.
    pub max_retries: u32,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { count: None, max_retries: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateReport {
    pub requested: usize,
    pub generated: usize,
    /// Trajectories abandoned after every attempt was rejected.
    pub skipped: usize,
    /// Total proposal draws across all trajectories.
    pub attempts: u64,
}

impl GenerateReport {
    /// Fraction of requested trajectories that had to be skipped; above 1%
    /// the run deserves a warning.
    pub fn skipped_fraction(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.skipped as f64 / self.requested as f64
        }
    }
}

/// Sample a synthetic dataset from the two models.
///
/// Trajectory `i` draws from an RNG derived from `(seed, i)`, so any prefix
/// of the output is reproducible independent of the rest. Route graphs are
/// cached per (destination, hour); the cache is bounded and evicts
/// arbitrarily past `ROUTE_CACHE_CAP` entries.
pub fn generate(
    ti: &TiModel,
    tpg: &TpgModel,
    seed: u64,
    opts: &GenerateOptions,
) -> Result<(Dataset, GenerateReport)> {
    if ti.shape != tpg.shape || ti.occupied != tpg.occupied {
        return Err(Error::Config(
            "initialization and transition models disagree on grid or vocabulary".into(),
        ));
    }
    let n = opts.count.unwrap_or(ti.dataset_size);
    let n_cells = ti.occupied.len();
    let mut trajectories = Vec::with_capacity(n);
    let mut report = GenerateReport { requested: n, generated: 0, skipped: 0, attempts: 0 };
    let mut routes: HashMap<(u32, u8), RoutingGraph> = HashMap::new();

    for i in 0..n as u64 {
        let mut rng = derive_rng(seed, &[GEN_STREAM, i]);
        let mut done = false;
        for _ in 0..=opts.max_retries {
            report.attempts += 1;
            let triple = ti.sample(&mut rng);
            if triple.src == triple.dst {
                continue;
            }
            if routes.len() >= ROUTE_CACHE_CAP && !routes.contains_key(&(triple.dst, triple.hour)) {
                let evict = *routes.keys().next().expect("cache is non-empty at cap");
                routes.remove(&evict);
            }
            let graph = routes
                .entry((triple.dst, triple.hour))
                .or_insert_with(|| RoutingGraph::new(tpg, triple.dst, triple.hour));
            match most_probable_path(n_cells, triple.src, triple.dst, |u| graph.edges(u)) {
                Ok(path) => {
                    let cells = path.nodes.iter().map(|&d| ti.occupied.full(d)).collect();
                    let hour = TimeSlot::new(triple.hour).expect("sampled hour is in range");
                    trajectories.push(Trajectory::new(cells, hour)?);
                    report.generated += 1;
                    done = true;
                    break;
                }
                Err(Error::NoPath { .. }) => continue,
                Err(other) => return Err(other),
            }
        }
        if !done {
            report.skipped += 1;
        }
    }

    let mut dataset = Dataset::new(ti.shape, trajectories);
    dataset.synthetic = true;
    Ok((dataset, report))
}

/// RNG stream tag for generation draws.
const GEN_STREAM: u64 = 3;
/// Bound on simultaneously cached route graphs.
const ROUTE_CACHE_CAP: usize = 1024;
