//! Utility metrics comparing a synthetic dataset against the real one:
//! per-hour trip-length divergence, frequent-pattern retrieval, and per-hour
//! source-destination earth mover's distance.
//!
//! All three work on datasets alone — they are evaluation tools, not part of
//! the private training path.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::dataset::Dataset;
use crate::dp::derive_rng;
use crate::error::{Error, Result};
use crate::grid::{CellId, GridShape, TimeSlot};

/// Jensen-Shannon divergence in bits between two discrete distributions
/// given as sparse maps. Ranges over `[0, 1]`; 0 means identical, 1 means
/// disjoint supports.
pub fn jsd_base2(p: &HashMap<u64, f64>, q: &HashMap<u64, f64>) -> f64 {
    let mut total = 0.0;
    for (key, &pk) in p {
        let qk = q.get(key).copied().unwrap_or(0.0);
        let m = 0.5 * (pk + qk);
        if pk > 0.0 {
            total += 0.5 * pk * (pk / m).log2();
        }
    }
    for (key, &qk) in q {
        let pk = p.get(key).copied().unwrap_or(0.0);
        let m = 0.5 * (pk + qk);
        if qk > 0.0 {
            total += 0.5 * qk * (qk / m).log2();
        }
    }
    total
}

fn length_histogram(ds: &Dataset, hour: u8) -> Option<HashMap<u64, f64>> {
    let mut counts: HashMap<u64, f64> = HashMap::new();
    let mut total = 0.0;
    for t in ds.trajectories.iter().filter(|t| t.hour.hour() == hour) {
        *counts.entry(t.len() as u64).or_insert(0.0) += 1.0;
        total += 1.0;
    }
    if total == 0.0 {
        return None;
    }
    for v in counts.values_mut() {
        *v /= total;
    }
    Some(counts)
}

/// Trip-length divergence for each hour; `None` where either dataset has no
/// trips starting in that hour.
pub fn trip_length_jsd(real: &Dataset, synth: &Dataset) -> Vec<Option<f64>> {
    (0..TimeSlot::COUNT as u8)
        .map(|h| match (length_histogram(real, h), length_histogram(synth, h)) {
            (Some(p), Some(q)) => Some(jsd_base2(&p, &q)),
            _ => None,
        })
        .collect()
}

/// Patterns are contiguous cell subsequences of 2 to 8 cells.
pub const PATTERN_MIN_LEN: usize = 2;
pub const PATTERN_MAX_LEN: usize = 8;

/// Count, for every pattern, the number of trajectories containing it at
/// least once.
fn pattern_counts(ds: &Dataset) -> HashMap<Vec<u32>, u64> {
    let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
    let mut seen: std::collections::HashSet<Vec<u32>> = std::collections::HashSet::new();
    for t in &ds.trajectories {
        seen.clear();
        let cells: Vec<u32> = t.cells.iter().map(|c| c.0).collect();
        for len in PATTERN_MIN_LEN..=PATTERN_MAX_LEN.min(cells.len()) {
            for w in cells.windows(len) {
                if seen.insert(w.to_vec()) {
                    *counts.entry(w.to_vec()).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}

/// The `k` most common patterns, ties broken by lexicographic cell order so
/// the cut is deterministic. Returns fewer when the dataset has fewer
/// distinct patterns.
pub fn top_patterns(ds: &Dataset, k: usize) -> Vec<Vec<u32>> {
    let mut ranked: Vec<(Vec<u32>, u64)> = pattern_counts(ds).into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(p, _)| p).collect()
}

/// Top-k pattern agreement between two datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternTpr {
    pub k: usize,
    /// Effective cutoff: `k` capped by both datasets' distinct-pattern counts.
    pub k_used: usize,
    /// Share of the real top-`k_used` recovered in the synthetic top-`k_used`.
    pub tpr: f64,
}

pub fn pattern_true_positive_rate(real: &Dataset, synth: &Dataset, k: usize) -> PatternTpr {
    let real_counts = pattern_counts(real);
    let synth_counts = pattern_counts(synth);
    let k_used = k.min(real_counts.len()).min(synth_counts.len());
    if k_used == 0 {
        return PatternTpr { k, k_used: 0, tpr: 0.0 };
    }
    let cut = |counts: HashMap<Vec<u32>, u64>| -> std::collections::HashSet<Vec<u32>> {
        let mut ranked: Vec<(Vec<u32>, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.into_iter().take(k_used).map(|(p, _)| p).collect()
    };
    let real_top = cut(real_counts);
    let synth_top = cut(synth_counts);
    let hits = real_top.intersection(&synth_top).count();
    PatternTpr { k, k_used, tpr: hits as f64 / k_used as f64 }
}

/// Exact minimum-cost transport between two weighted point sets.
///
/// Classic transportation simplex: northwest-corner start, then pivots
/// chosen by Bland's rule (first improving arc, lexicographic leaving arc),
/// which cannot cycle even on degenerate bases. Supplies and demands must
/// each sum to the same total. Cost is `O(m·n)` per pivot.
pub fn transport_min_cost(cost: &[Vec<f64>], supply: &[f64], demand: &[f64]) -> Result<f64> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 {
        return Err(Error::Data("transport problem needs nonempty supports".into()));
    }
    let (sa, sb) = (supply.iter().sum::<f64>(), demand.iter().sum::<f64>());
    if (sa - sb).abs() > 1e-9 * sa.max(sb).max(1.0) {
        return Err(Error::Data(format!("unbalanced transport problem: {sa} vs {sb}")));
    }

    // Basis arcs (i, j, flow); exactly m + n - 1 of them at all times.
    let mut basis: Vec<(usize, usize, f64)> = Vec::with_capacity(m + n - 1);
    let mut in_basis = vec![false; m * n];
    {
        let mut a = supply.to_vec();
        let mut b = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = a[i].min(b[j]);
            basis.push((i, j, x));
            in_basis[i * n + j] = true;
            a[i] -= x;
            b[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(basis.len(), m + n - 1);
    }

    // Node ids: rows 0..m, columns m..m+n.
    let nodes = m + n;
    let mut iterations = 0usize;
    loop {
        iterations += 1;
        if iterations > 50_000 {
            return Err(Error::Numerical("transport simplex failed to converge".into()));
        }
        // Duals from the basis tree: u[i] + v[j] = cost[i][j] on basic arcs.
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
        for (idx, &(i, j, _)) in basis.iter().enumerate() {
            adj[i].push((m + j, idx));
            adj[m + j].push((i, idx));
        }
        let mut potential = vec![f64::NAN; nodes];
        potential[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            for &(w, idx) in &adj[u] {
                if potential[w].is_nan() {
                    let (i, j, _) = basis[idx];
                    potential[w] = cost[i][j] - potential[u];
                    stack.push(w);
                }
            }
        }

        // Entering arc: first (row-major) with negative reduced cost.
        let mut entering = None;
        'scan: for i in 0..m {
            for j in 0..n {
                if !in_basis[i * n + j] && cost[i][j] - potential[i] - potential[m + j] < -1e-10 {
                    entering = Some((i, j));
                    break 'scan;
                }
            }
        }
        let Some((ei, ej)) = entering else { break };

        // The unique cycle: tree path from column ej back to row ei, then
        // the entering arc. Arcs along the path alternate -, +, -, ...
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
        let mut stack = vec![ei];
        let mut seen = vec![false; nodes];
        seen[ei] = true;
        while let Some(u) = stack.pop() {
            if u == m + ej {
                break;
            }
            for &(w, idx) in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some((u, idx));
                    stack.push(w);
                }
            }
        }
        let mut path_arcs = Vec::new();
        let mut at = m + ej;
        while at != ei {
            let (prev, idx) = parent[at].expect("basis tree is connected");
            path_arcs.push(idx);
            at = prev;
        }
        // path_arcs[0] touches column ej: positions 0, 2, 4, ... lose flow.
        let mut theta = f64::INFINITY;
        let mut leaving: Option<usize> = None;
        for (pos, &idx) in path_arcs.iter().enumerate() {
            if pos % 2 == 0 {
                let (i, j, f) = basis[idx];
                let better = match f.total_cmp(&theta) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => leaving
                        .is_some_and(|l| (i, j) < (basis[l].0, basis[l].1)),
                };
                if better {
                    theta = f;
                    leaving = Some(idx);
                }
            }
        }
        let leaving = leaving.expect("cycle has at least one decreasing arc");
        for (pos, &idx) in path_arcs.iter().enumerate() {
            if pos % 2 == 0 {
                basis[idx].2 -= theta;
            } else {
                basis[idx].2 += theta;
            }
        }
        let (li, lj, lf) = basis[leaving];
        debug_assert!(lf.abs() < 1e-9, "leaving arc keeps {lf} flow");
        in_basis[li * n + lj] = false;
        in_basis[ei * n + ej] = true;
        basis[leaving] = (ei, ej, theta);
    }

    let total = basis.iter().map(|&(i, j, f)| f * cost[i][j]).sum();
    debug_assert!(basis.iter().all(|&(_, _, f)| f >= -1e-9));
    Ok(total)
}

/// Deterministically subsample `k` of `0..n` without replacement.
fn sample_indices(n: usize, k: usize, rng: &mut rand_chacha::ChaCha20Rng) -> Vec<usize> {
    use rand::RngExt;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx
}

/// A weighted distribution over (source, destination) cell pairs.
type PairDistribution = (Vec<(u32, u32)>, Vec<f64>);

fn pair_distribution(
    ds: &Dataset,
    hour: u8,
    cap: usize,
    rng: &mut rand_chacha::ChaCha20Rng,
) -> Option<PairDistribution> {
    let trips: Vec<(u32, u32)> = ds
        .trajectories
        .iter()
        .filter(|t| t.hour.hour() == hour)
        .map(|t| (t.src().0, t.dst().0))
        .collect();
    if trips.is_empty() {
        return None;
    }
    let chosen: Vec<(u32, u32)> = if trips.len() > cap {
        sample_indices(trips.len(), cap, rng).into_iter().map(|i| trips[i]).collect()
    } else {
        trips
    };
    let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
    for pair in &chosen {
        *counts.entry(*pair).or_insert(0.0) += 1.0;
    }
    let total = chosen.len() as f64;
    let mut support: Vec<(u32, u32)> = counts.keys().copied().collect();
    support.sort_unstable();
    let weights = support.iter().map(|p| counts[p] / total).collect();
    Some((support, weights))
}

/// Ground distance between two (source, destination) pairs: straight-line
/// distance between the sources plus the same between the destinations.
pub fn pair_ground_distance(shape: &GridShape, a: (u32, u32), b: (u32, u32)) -> f64 {
    shape.cell_distance_m(CellId(a.0), CellId(b.0)) + shape.cell_distance_m(CellId(a.1), CellId(b.1))
}

/// Options for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Cutoffs for the frequent-pattern metric.
    pub pattern_ks: Vec<usize>,
    /// Per-hour trip cap for the EMD metric; hours with more trips are
    /// subsampled deterministically from the seed.
    pub emd_trip_cap: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { pattern_ks: vec![10, 20, 50, 100], emd_trip_cap: 2000, seed: 0 }
    }
}

/// Earth mover's distance between the hourly source-destination
/// distributions; `None` where either dataset is silent.
pub fn source_dest_emd_by_hour(
    real: &Dataset,
    synth: &Dataset,
    opts: &EvalOptions,
) -> Result<Vec<Option<f64>>> {
    let mut out = Vec::with_capacity(TimeSlot::COUNT);
    for h in 0..TimeSlot::COUNT as u8 {
        let mut rng_r = derive_rng(opts.seed, &[EVAL_STREAM, h as u64, 0]);
        let mut rng_s = derive_rng(opts.seed, &[EVAL_STREAM, h as u64, 1]);
        let (r, s) = (
            pair_distribution(real, h, opts.emd_trip_cap, &mut rng_r),
            pair_distribution(synth, h, opts.emd_trip_cap, &mut rng_s),
        );
        match (r, s) {
            (Some((rs, rw)), Some((ss, sw))) => {
                let cost: Vec<Vec<f64>> = rs
                    .iter()
                    .map(|&a| ss.iter().map(|&b| pair_ground_distance(&real.shape, a, b)).collect())
                    .collect();
                out.push(Some(transport_min_cost(&cost, &rw, &sw)?));
            }
            _ => out.push(None),
        }
    }
    Ok(out)
}

const EVAL_STREAM: u64 = 4;

/// Full comparison report.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub jsd_by_hour: Vec<Option<f64>>,
    pub patterns: Vec<PatternTpr>,
    pub emd_by_hour: Vec<Option<f64>>,
}

impl EvalReport {
    fn mean(values: &[Option<f64>]) -> Option<f64> {
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        }
    }

    pub fn mean_jsd(&self) -> Option<f64> {
        Self::mean(&self.jsd_by_hour)
    }

    pub fn mean_emd(&self) -> Option<f64> {
        Self::mean(&self.emd_by_hour)
    }

    /// Render the report file: one line per hour per metric, then the
    /// pattern table and the means.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        out.push_str("trip-length JSD by hour (bits):\n");
        for (h, v) in self.jsd_by_hour.iter().enumerate() {
            match v {
                Some(v) => writeln!(out, "  hour {h:02}  {v:.6}").unwrap(),
                None => writeln!(out, "  hour {h:02}  -").unwrap(),
            }
        }
        out.push_str("frequent-pattern true positive rate:\n");
        for p in &self.patterns {
            writeln!(out, "  k={:<4} tpr={:.4} (k_used={})", p.k, p.tpr, p.k_used).unwrap();
        }
        out.push_str("source-destination EMD by hour (meters):\n");
        for (h, v) in self.emd_by_hour.iter().enumerate() {
            match v {
                Some(v) => writeln!(out, "  hour {h:02}  {v:.3}").unwrap(),
                None => writeln!(out, "  hour {h:02}  -").unwrap(),
            }
        }
        match (self.mean_jsd(), self.mean_emd()) {
            (Some(j), Some(e)) => {
                writeln!(out, "mean over active hours: jsd={j:.6} emd={e:.3}").unwrap()
            }
            _ => out.push_str("mean over active hours: no overlapping hours\n"),
        }
        out
    }
}

/// Run all three metrics. Both datasets must live on the same grid.
pub fn evaluate(real: &Dataset, synth: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if real.shape != synth.shape {
        return Err(Error::Data(format!(
            "datasets use different grids: {}x{} vs {}x{}",
            real.shape.n_rows, real.shape.n_cols, synth.shape.n_rows, synth.shape.n_cols
        )));
    }
    Ok(EvalReport {
        jsd_by_hour: trip_length_jsd(real, synth),
        patterns: opts
            .pattern_ks
            .iter()
            .map(|&k| pattern_true_positive_rate(real, synth, k))
            .collect(),
        emd_by_hour: source_dest_emd_by_hour(real, synth, opts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Trajectory;
    use rand::RngExt;

    fn dist(pairs: &[(u64, f64)]) -> HashMap<u64, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn jsd_worked_example() {
        // {2: 1/2, 3: 1/2} vs {2: 1}.
        let p = dist(&[(2, 0.5), (3, 0.5)]);
        let q = dist(&[(2, 1.0)]);
        // Mixture M = {2: 3/4, 3: 1/4}; JSD = (KL(P‖M) + KL(Q‖M)) / 2.
        let expected = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2())
            + 0.5 * (1.0f64 / 0.75).log2();
        assert!((jsd_base2(&p, &q) - expected).abs() < 1e-12);
        assert!((jsd_base2(&p, &q) - 0.311278).abs() < 1e-6);
        // Symmetric up to summation order.
        assert!((jsd_base2(&p, &q) - jsd_base2(&q, &p)).abs() < 1e-15);
    }

    #[test]
    fn jsd_bounds() {
        let p = dist(&[(1, 0.3), (2, 0.7)]);
        assert_eq!(jsd_base2(&p, &p), 0.0);
        let q = dist(&[(3, 0.4), (4, 0.6)]);
        assert!((jsd_base2(&p, &q) - 1.0).abs() < 1e-12, "disjoint supports hit 1 bit");
    }

    fn ds(routes: &[(&[u32], u8, usize)]) -> Dataset {
        let shape = GridShape::new(10, 10, 500.0).unwrap();
        let mut trajs = Vec::new();
        for &(cells, hour, count) in routes {
            for _ in 0..count {
                trajs.push(
                    Trajectory::new(cells.iter().map(|&c| CellId(c)).collect(), TimeSlot::new(hour).unwrap())
                        .unwrap(),
                );
            }
        }
        Dataset::new(shape, trajs)
    }

    #[test]
    fn per_hour_jsd_marks_silent_hours() {
        let real = ds(&[(&[0, 1, 2], 8, 4), (&[0, 1], 17, 4)]);
        let synth = ds(&[(&[5, 6, 7], 8, 4)]);
        let jsd = trip_length_jsd(&real, &synth);
        assert_eq!(jsd[8], Some(0.0), "same length distribution at hour 8");
        assert_eq!(jsd[17], None, "synthetic has no hour-17 trips");
        assert_eq!(jsd[0], None);
    }

    #[test]
    fn pattern_counting_is_once_per_trajectory() {
        // Cell sequence [0,1,0,1] contains [0,1] twice but counts once.
        let d = ds(&[(&[0, 1, 0, 1], 8, 1), (&[0, 1], 9, 1)]);
        let counts = pattern_counts(&d);
        assert_eq!(counts[&vec![0, 1]], 2, "one count from each trajectory");
        assert_eq!(counts[&vec![1, 0]], 1);
        assert_eq!(counts[&vec![0, 1, 0, 1]], 1);
        // Length-1 and overlong windows are not patterns.
        assert!(!counts.contains_key(&vec![0]));
    }

    #[test]
    fn top_patterns_break_ties_lexicographically() {
        // Both 2-patterns appear once; [1,2] sorts before [3,4].
        let d = ds(&[(&[1, 2], 8, 1), (&[3, 4], 8, 1)]);
        assert_eq!(top_patterns(&d, 1), vec![vec![1, 2]]);
        assert_eq!(top_patterns(&d, 5), vec![vec![1, 2], vec![3, 4]]);
    }

    #[test]
    fn tpr_identity_disjoint_and_hand_counted() {
        // Distinct patterns: 6 windows of [0,1,2,3] plus [20,21] = 7 < k.
        let d = ds(&[(&[0, 1, 2, 3], 8, 5), (&[20, 21], 9, 2)]);
        let same = pattern_true_positive_rate(&d, &d, 10);
        assert_eq!(same.tpr, 1.0);
        assert_eq!(same.k_used, 7);

        let other = ds(&[(&[50, 51, 52], 8, 3)]);
        let disjoint = pattern_true_positive_rate(&d, &other, 10);
        assert_eq!(disjoint.tpr, 0.0);
        assert_eq!(disjoint.k_used, 3, "synthetic side has only 3 distinct patterns");

        // Real counts: [1,2] x8, then [0,1] x5 beats [0,1,2] x5 on the
        // lexicographic tie, so top-2 = {[1,2], [0,1]}. Synthetic top-2 =
        // {[1,2], [4,5]}; one of two matches.
        let real = ds(&[(&[0, 1, 2], 8, 5), (&[1, 2], 8, 3)]);
        let synth = ds(&[(&[1, 2], 8, 9), (&[4, 5], 8, 1)]);
        let got = pattern_true_positive_rate(&real, &synth, 2);
        assert_eq!(got.k_used, 2);
        assert_eq!(got.tpr, 0.5);
    }

    #[test]
    fn transport_worked_examples() {
        // Identical point masses: zero cost.
        let c = vec![vec![0.0]];
        assert_eq!(transport_min_cost(&c, &[1.0], &[1.0]).unwrap(), 0.0);
        // Single supplier, two consumers.
        let c = vec![vec![3.0, 7.0]];
        let got = transport_min_cost(&c, &[1.0], &[0.25, 0.75]).unwrap();
        assert!((got - (0.25 * 3.0 + 0.75 * 7.0)).abs() < 1e-12);
        // Classic 2x2 where the greedy diagonal is wrong.
        let c = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let got = transport_min_cost(&c, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(got, 0.0);
        let got = transport_min_cost(&c, &[0.9, 0.1], &[0.1, 0.9]).unwrap();
        assert!((got - 0.8).abs() < 1e-12);
    }

    /// Enumerate every spanning-tree basis of the transportation polytope
    /// and return the cheapest feasible one. Exponential; tiny inputs only.
    fn transport_by_enumeration(cost: &[Vec<f64>], supply: &[f64], demand: &[f64]) -> f64 {
        let m = supply.len();
        let n = demand.len();
        let arcs: Vec<(usize, usize)> =
            (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let need = m + n - 1;
        let mut best = f64::INFINITY;
        let mut chosen = Vec::with_capacity(need);

        fn solve_tree(
            chosen: &[(usize, usize)],
            m: usize,
            n: usize,
            supply: &[f64],
            demand: &[f64],
            cost: &[Vec<f64>],
        ) -> Option<f64> {
            // Spanning-tree check via union-find over m + n nodes.
            let mut parent: Vec<usize> = (0..m + n).collect();
            fn find(parent: &mut [usize], x: usize) -> usize {
                let mut x = x;
                while parent[x] != x {
                    parent[x] = parent[parent[x]];
                    x = parent[x];
                }
                x
            }
            for &(i, j) in chosen {
                let (a, b) = (find(&mut parent, i), find(&mut parent, m + j));
                if a == b {
                    return None;
                }
                parent[a] = b;
            }
            // Leaf elimination solves the unique flows on the tree.
            let mut excess: Vec<f64> = supply.iter().copied().chain(demand.iter().map(|&d| -d)).collect();
            let mut degree = vec![0usize; m + n];
            let mut incident: Vec<Vec<usize>> = vec![Vec::new(); m + n];
            for (idx, &(i, j)) in chosen.iter().enumerate() {
                degree[i] += 1;
                degree[m + j] += 1;
                incident[i].push(idx);
                incident[m + j].push(idx);
            }
            let mut removed_arc = vec![false; chosen.len()];
            let mut removed_node = vec![false; m + n];
            let mut total = 0.0;
            for _ in 0..chosen.len() {
                let leaf = (0..m + n).find(|&v| !removed_node[v] && degree[v] == 1)?;
                let arc = *incident[leaf].iter().find(|&&a| !removed_arc[a])?;
                let (i, j) = chosen[arc];
                // The leaf's only arc must absorb its entire excess; a
                // negative flow means this basis is infeasible.
                let f = if leaf < m { excess[leaf] } else { -excess[leaf] };
                if f < -1e-9 {
                    return None;
                }
                total += f * cost[i][j];
                let other = if leaf < m { m + j } else { i };
                excess[other] += excess[leaf];
                excess[leaf] = 0.0;
                removed_arc[arc] = true;
                removed_node[leaf] = true;
                degree[leaf] -= 1;
                degree[other] -= 1;
            }
            Some(total)
        }

        #[allow(clippy::too_many_arguments)]
        fn rec(
            arcs: &[(usize, usize)],
            from: usize,
            chosen: &mut Vec<(usize, usize)>,
            need: usize,
            m: usize,
            n: usize,
            supply: &[f64],
            demand: &[f64],
            cost: &[Vec<f64>],
            best: &mut f64,
        ) {
            if chosen.len() == need {
                if let Some(total) = solve_tree(chosen, m, n, supply, demand, cost) {
                    if total < *best {
                        *best = total;
                    }
                }
                return;
            }
            if arcs.len() - from < need - chosen.len() {
                return;
            }
            for idx in from..arcs.len() {
                chosen.push(arcs[idx]);
                rec(arcs, idx + 1, chosen, need, m, n, supply, demand, cost, best);
                chosen.pop();
            }
        }

        rec(&arcs, 0, &mut chosen, need, m, n, supply, demand, cost, &mut best);
        best
    }

    #[test]
    fn simplex_matches_basis_enumeration_on_random_instances() {
        let mut rng = derive_rng(23, &[7]);
        for trial in 0..25 {
            let m = rng.random_range(1..=4usize);
            let n = rng.random_range(1..=4usize);
            // Half the draws use a coarse cost set to provoke ties.
            let coarse = trial % 2 == 0;
            let cost: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            if coarse {
                                [0.0, 1.0, 2.0, 5.0][rng.random_range(0..4)]
                            } else {
                                rng.random_range(0.0..10.0)
                            }
                        })
                        .collect()
                })
                .collect();
            let raw_s: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let raw_d: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let st: f64 = raw_s.iter().sum();
            let dt: f64 = raw_d.iter().sum();
            let supply: Vec<f64> = raw_s.iter().map(|x| x / st).collect();
            let demand: Vec<f64> = raw_d.iter().map(|x| x / dt).collect();
            let got = transport_min_cost(&cost, &supply, &demand).unwrap();
            let want = transport_by_enumeration(&cost, &supply, &demand);
            assert!(
                (got - want).abs() <= 1e-6 * want.max(1.0),
                "trial {trial}: simplex {got} vs enumeration {want}"
            );
        }
    }

    #[test]
    fn emd_identity_shift_and_symmetry() {
        let real = ds(&[(&[0, 1, 2], 8, 4), (&[30, 31], 8, 4)]);
        let same = source_dest_emd_by_hour(&real, &real, &EvalOptions::default()).unwrap();
        assert_eq!(same[8], Some(0.0));
        assert_eq!(same[9], None);

        // One cell of horizontal shift on src and dst: 500 m + 500 m.
        let a = ds(&[(&[0, 1], 8, 1)]);
        let b = ds(&[(&[1, 2], 8, 1)]);
        let d = source_dest_emd_by_hour(&a, &b, &EvalOptions::default()).unwrap();
        assert!((d[8].unwrap() - 1000.0).abs() < 1e-9);
        let r = source_dest_emd_by_hour(&b, &a, &EvalOptions::default()).unwrap();
        assert!((d[8].unwrap() - r[8].unwrap()).abs() < 1e-9, "EMD is symmetric");
    }

    #[test]
    fn evaluate_self_comparison_is_perfect() {
        let real = ds(&[(&[0, 1, 2, 12], 8, 6), (&[40, 41, 42], 17, 5), (&[7, 8], 23, 2)]);
        let report = evaluate(&real, &real, &EvalOptions::default()).unwrap();
        for (h, v) in report.jsd_by_hour.iter().enumerate() {
            match h {
                8 | 17 | 23 => assert_eq!(*v, Some(0.0)),
                _ => assert_eq!(*v, None),
            }
        }
        for p in &report.patterns {
            assert_eq!(p.tpr, 1.0, "k={}", p.k);
        }
        for (h, v) in report.emd_by_hour.iter().enumerate() {
            match h {
                8 | 17 | 23 => assert_eq!(*v, Some(0.0)),
                _ => assert_eq!(*v, None),
            }
        }
        assert_eq!(report.mean_jsd(), Some(0.0));
        assert_eq!(report.mean_emd(), Some(0.0));
        let text = report.to_text();
        assert!(text.contains("hour 08  0.000000"));
        assert!(text.contains("tpr=1.0000"));
        assert!(text.contains("mean over active hours"));
    }

    #[test]
    fn evaluate_rejects_mismatched_grids() {
        let a = ds(&[(&[0, 1], 8, 1)]);
        let mut b = ds(&[(&[0, 1], 8, 1)]);
        b.shape = GridShape::new(5, 5, 500.0).unwrap();
        assert!(evaluate(&a, &b, &EvalOptions::default()).is_err());
    }

    #[test]
    fn emd_subsampling_is_deterministic() {
        // 30 trips with cap 10: the subsample is seed-determined.
        let mut routes: Vec<(&[u32], u8, usize)> = Vec::new();
        let cells: Vec<Vec<u32>> = (0..30u32).map(|i| vec![i, i + 10]).collect();
        for c in &cells {
            routes.push((c, 8, 1));
        }
        let real = ds(&routes);
        let synth = ds(&[(&[50, 51], 8, 3)]);
        let opts = EvalOptions { emd_trip_cap: 10, seed: 5, ..Default::default() };
        let a = source_dest_emd_by_hour(&real, &synth, &opts).unwrap();
        let b = source_dest_emd_by_hour(&real, &synth, &opts).unwrap();
        assert_eq!(a[8], b[8]);
        let other = EvalOptions { emd_trip_cap: 10, seed: 6, ..Default::default() };
        let c = source_dest_emd_by_hour(&real, &synth, &other).unwrap();
        assert!(a[8].is_some() && c[8].is_some());
    }
}
