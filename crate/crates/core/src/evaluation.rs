//! Fidelity metrics of trajectory sets as distributions, compared by
//! Jensen-Shannon divergence in nats.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{LocationGrid, LocationId};
use crate::math;
use crate::trajectory::{Trajectory, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Radius,
    DailyLoc,
    Distance,
    GRank,
    IRank,
}

impl Metric {
    pub const ALL: [Metric; 5] =
        [Metric::Radius, Metric::DailyLoc, Metric::Distance, Metric::GRank, Metric::IRank];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Radius => "radius",
            Metric::DailyLoc => "daily_loc",
            Metric::Distance => "distance",
            Metric::GRank => "g_rank",
            Metric::IRank => "i_rank",
        }
    }
}

/// Root-mean-square distance of the points from their centroid, in meters.
pub fn radius_of_gyration(trajectory: &Trajectory, grid: &LocationGrid) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let centers: Vec<(f64, f64)> =
        trajectory.points().iter().map(|p| grid.cell_center(p.loc)).collect::<Result<_>>()?;
    let n = centers.len() as f64;
    let cx = centers.iter().map(|c| c.0).sum::<f64>() / n;
    let cy = centers.iter().map(|c| c.1).sum::<f64>() / n;
    let ms = centers.iter().map(|c| (c.0 - cx) * (c.0 - cx) + (c.1 - cy) * (c.1 - cy)).sum::<f64>() / n;
    Ok(math::sqrt(ms))
}

/// Distinct locations per calendar day that has points, in day order.
pub fn daily_locations(trajectory: &Trajectory, slots_per_day: u32) -> Vec<usize> {
    let mut days: BTreeMap<u32, Vec<LocationId>> = BTreeMap::new();
    for p in trajectory.points() {
        days.entry(p.slot / slots_per_day).or_default().push(p.loc);
    }
    days.into_values()
        .map(|mut locs| {
            locs.sort_unstable();
            locs.dedup();
            locs.len()
        })
        .collect()
}

pub fn jump_distances(trajectory: &Trajectory, grid: &LocationGrid) -> Result<Vec<f64>> {
    trajectory.points().windows(2).map(|w| grid.distance(w[0].loc, w[1].loc)).collect()
}

/// Counts sorted descending (ties by location id), truncated to `top_k`
/// and normalized by their own sum.
fn rank_vector(counts: &BTreeMap<LocationId, u64>, top_k: usize) -> Vec<f64> {
    let mut ranked: Vec<(LocationId, u64)> = counts.iter().map(|(&l, &c)| (l, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = vec![0.0; top_k];
    let top: Vec<u64> = ranked.iter().take(top_k).map(|&(_, c)| c).collect();
    let total: u64 = top.iter().sum();
    if total > 0 {
        for (o, c) in out.iter_mut().zip(top) {
            *o = c as f64 / total as f64;
        }
    }
    out
}

fn check_top_k(top_k: usize) -> Result<()> {
    if top_k == 0 {
        return Err(Error::param("top_k", "must be at least 1"));
    }
    Ok(())
}

/// Normalized visit frequencies of the `top_k` most visited locations overall.
pub fn g_rank(trajectories: &[Trajectory], top_k: usize) -> Result<Vec<f64>> {
    check_top_k(top_k)?;
    if trajectories.is_empty() {
        return Err(Error::Empty("trajectory set"));
    }
    let mut counts = BTreeMap::new();
    for p in trajectories.iter().flat_map(|t| t.points()) {
        *counts.entry(p.loc).or_insert(0u64) += 1;
    }
    Ok(rank_vector(&counts, top_k))
}

/// Per-user rank vectors averaged over users, renormalized.
pub fn i_rank(trajectories: &[Trajectory], top_k: usize) -> Result<Vec<f64>> {
    check_top_k(top_k)?;
    let mut per_user: BTreeMap<UserId, BTreeMap<LocationId, u64>> = BTreeMap::new();
    for t in trajectories {
        let counts = per_user.entry(t.user()).or_default();
        for p in t.points() {
            *counts.entry(p.loc).or_insert(0) += 1;
        }
    }
    let mut acc = vec![0.0; top_k];
    let mut users = 0usize;
    for counts in per_user.values().filter(|c| !c.is_empty()) {
        for (a, v) in acc.iter_mut().zip(rank_vector(counts, top_k)) {
            *a += v;
        }
        users += 1;
    }
    if users == 0 {
        return Err(Error::Empty("trajectory set"));
    }
    let total: f64 = acc.iter().sum();
    Ok(acc.into_iter().map(|a| a / total).collect())
}

/// Jensen-Shannon divergence in nats, exactly symmetric and within `[0, ln 2]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { expected: p.len(), got: q.len() });
    }
    if p.iter().chain(q).any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::param("distribution", "masses must be finite and non-negative"));
    }
    let half_kl = |a: f64, m: f64| if a > 0.0 { 0.5 * a * math::ln(a / m) } else { 0.0 };
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        total += half_kl(a, m) + half_kl(b, m);
    }
    Ok(total.clamp(0.0, core::f64::consts::LN_2))
}

/// Probability mass per bin; bin `i` covers `[edges[i], edges[i + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricDistribution {
    pub metric: Metric,
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
}

impl MetricDistribution {
    /// Histogram of `values`; values past the last edge land in the last bin.
    pub fn histogram(metric: Metric, edges: Vec<f64>, values: &[f64]) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param("edges", "need at least two strictly increasing edges"));
        }
        if values.is_empty() {
            return Err(Error::Empty("metric values"));
        }
        let bins = edges.len() - 1;
        let mut counts = vec![0u64; bins];
        for &v in values {
            let i = edges[1..].partition_point(|&e| e <= v).min(bins - 1);
            counts[i] += 1;
        }
        let n = values.len() as f64;
        Ok(Self { metric, edges, mass: counts.into_iter().map(|c| c as f64 / n).collect() })
    }

    /// A categorical distribution over rank positions `1..=k`.
    pub fn ranks(metric: Metric, mass: Vec<f64>) -> Self {
        let edges = (0..=mass.len()).map(|i| i as f64 + 0.5).collect();
        Self { metric, edges, mass }
    }

    /// Bin midpoints (finite edges) or lower edges (open last bin).
    pub fn labels(&self) -> Vec<f64> {
        self.edges
            .windows(2)
            .map(|w| if w[1].is_finite() { 0.5 * (w[0] + w[1]) } else { w[0] + 0.5 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub slots_per_day: u32,
    /// Log-spaced bins for radius and distance, besides the zero bin.
    pub log_bins: usize,
    /// DailyLoc bins `1..=daily_max` plus one overflow bin.
    pub daily_max: usize,
    pub top_k_max: usize,
}

impl EvalConfig {
    pub fn new(slots_per_day: u32) -> Self {
        Self { slots_per_day, log_bins: 30, daily_max: 30, top_k_max: 100 }
    }
}

/// `[0, cell/2)` as a zero bin, then log-spaced edges up to the diagonal.
fn length_edges(grid: &LocationGrid, bins: usize) -> Vec<f64> {
    let lo = grid.cell_size() / 2.0;
    let hi = grid.diagonal().max(grid.cell_size());
    let ratio = math::ln(hi / lo) / bins as f64;
    let mut edges = vec![0.0];
    edges.extend((0..=bins).map(|i| lo * math::exp(ratio * i as f64)));
    edges
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricEntry {
    pub real: MetricDistribution,
    pub synthetic: MetricDistribution,
    pub jsd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn jsd(&self, metric: Metric) -> Option<f64> {
        self.entries.iter().find(|e| e.real.metric == metric).map(|e| e.jsd)
    }
}

struct Raw {
    radius: Vec<f64>,
    daily: Vec<f64>,
    distance: Vec<f64>,
}

fn raw_metrics(set: &[Trajectory], grid: &LocationGrid, spd: u32) -> Result<Raw> {
    let mut raw = Raw { radius: Vec::new(), daily: Vec::new(), distance: Vec::new() };
    for t in set.iter().filter(|t| !t.is_empty()) {
        raw.radius.push(radius_of_gyration(t, grid)?);
        raw.daily.extend(daily_locations(t, spd).into_iter().map(|c| c as f64));
        raw.distance.extend(jump_distances(t, grid)?);
    }
    if raw.distance.is_empty() {
        // every trajectory is a single point: all jumps are trivially zero
        raw.distance.push(0.0);
    }
    Ok(raw)
}

/// All five metrics over bins shared by both sets and derived from `real`.
pub fn evaluate(
    real: &[Trajectory],
    synthetic: &[Trajectory],
    grid: &LocationGrid,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    if real.iter().all(|t| t.is_empty()) {
        return Err(Error::Empty("real trajectory set"));
    }
    if synthetic.iter().all(|t| t.is_empty()) {
        return Err(Error::Empty("synthetic trajectory set"));
    }
    if cfg.log_bins == 0 || cfg.daily_max == 0 || cfg.top_k_max == 0 || cfg.slots_per_day == 0 {
        return Err(Error::param("eval", "bin counts and slots per day must be positive"));
    }
    for t in real.iter().chain(synthetic) {
        t.validate(grid)?;
    }
    let r = raw_metrics(real, grid, cfg.slots_per_day)?;
    let s = raw_metrics(synthetic, grid, cfg.slots_per_day)?;
    let lengths = length_edges(grid, cfg.log_bins);
    let mut daily_edges: Vec<f64> = (0..=cfg.daily_max).map(|i| i as f64 + 0.5).collect();
    daily_edges.push(f64::INFINITY);

    let distinct: alloc::collections::BTreeSet<LocationId> =
        real.iter().flat_map(|t| t.points().iter().map(|p| p.loc)).collect();
    let top_k = distinct.len().min(cfg.top_k_max);

    let pairs = [
        (
            MetricDistribution::histogram(Metric::Radius, lengths.clone(), &r.radius)?,
            MetricDistribution::histogram(Metric::Radius, lengths.clone(), &s.radius)?,
        ),
        (
            MetricDistribution::histogram(Metric::DailyLoc, daily_edges.clone(), &r.daily)?,
            MetricDistribution::histogram(Metric::DailyLoc, daily_edges, &s.daily)?,
        ),
        (
            MetricDistribution::histogram(Metric::Distance, lengths.clone(), &r.distance)?,
            MetricDistribution::histogram(Metric::Distance, lengths, &s.distance)?,
        ),
        (
            MetricDistribution::ranks(Metric::GRank, g_rank(real, top_k)?),
            MetricDistribution::ranks(Metric::GRank, g_rank(synthetic, top_k)?),
        ),
        (
            MetricDistribution::ranks(Metric::IRank, i_rank(real, top_k)?),
            MetricDistribution::ranks(Metric::IRank, i_rank(synthetic, top_k)?),
        ),
    ];
    let entries = pairs
        .into_iter()
        .map(|(real, synthetic)| {
            let jsd = jsd(&real.mass, &synthetic.mass)?;
            Ok(MetricEntry { real, synthetic, jsd })
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Point;

    fn traj(user: u32, pts: &[(u32, u32)]) -> Trajectory {
        Trajectory::new(UserId(user), pts.iter().map(|&(s, l)| Point::new(s, l)).collect()).unwrap()
    }

    fn grid() -> LocationGrid {
        LocationGrid::new(10, 10, 500.0, (0.0, 0.0)).unwrap()
    }

    #[test]
    fn radius_examples() {
        let g = grid();
        assert_eq!(radius_of_gyration(&traj(0, &[(0, 5)]), &g).unwrap(), 0.0);
        assert_eq!(radius_of_gyration(&traj(0, &[(0, 5), (1, 5), (7, 5)]), &g).unwrap(), 0.0);
        let r = radius_of_gyration(&traj(0, &[(0, 0), (1, 43)]), &g).unwrap();
        assert!((r - 1250.0).abs() < 1e-9);
        assert!(radius_of_gyration(&traj(0, &[]), &g).is_err());
    }

    #[test]
    fn daily_and_jumps() {
        assert_eq!(daily_locations(&traj(0, &[(0, 1), (1, 1), (2, 2)]), 48), vec![2]);
        assert_eq!(daily_locations(&traj(0, &[(0, 1), (50, 1), (200, 1)]), 48), vec![1, 1, 1]);
        let g = grid();
        assert_eq!(jump_distances(&traj(0, &[(0, 1), (1, 1)]), &g).unwrap(), vec![0.0]);
        assert_eq!(jump_distances(&traj(0, &[(0, 0), (1, 43)]), &g).unwrap(), vec![2500.0]);
        assert!(jump_distances(&traj(0, &[(0, 0)]), &g).unwrap().is_empty());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(g_rank(&[traj(0, &[(0, 4), (1, 4)])], 3).unwrap(), vec![1.0, 0.0, 0.0]);
        let t = traj(0, &[(0, 1), (1, 1), (2, 2), (3, 3)]);
        let v = g_rank(&[t.clone()], 2).unwrap();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15 && (v[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(g_rank(&[traj(0, &[(0, 1), (1, 2)])], 2).unwrap(), vec![0.5, 0.5]);
        assert_eq!(i_rank(&[t.clone()], 2).unwrap(), v);
        let two = [traj(0, &[(0, 1), (1, 1)]), traj(1, &[(0, 2)])];
        assert_eq!(i_rank(&two, 2).unwrap(), vec![1.0, 0.0]);
        let s: f64 = i_rank(&[t, traj(3, &[(0, 9), (1, 8)])], 4).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jsd_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        let h = jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        let expect = 0.5 * (0.5 * math::ln(0.5 / 0.75) + 0.5 * math::ln(0.5 / 0.25))
            + 0.5 * math::ln(1.0 / 0.75);
        assert!((h - expect).abs() < 1e-15);
        assert!((h - 0.215762).abs() < 1e-6);
        assert!(jsd(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn histogram_bins() {
        let d = MetricDistribution::histogram(Metric::Radius, vec![0.0, 1.0, 2.0], &[0.0, 0.5, 1.0, 9.0])
            .unwrap();
        assert_eq!(d.mass, vec![0.5, 0.5]);
        assert!(MetricDistribution::histogram(Metric::Radius, vec![1.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn self_comparison_is_zero() {
        let set = [traj(0, &[(0, 1), (1, 2), (2, 2), (49, 7)]), traj(1, &[(0, 3), (1, 13)])];
        let r = evaluate(&set, &set, &grid(), &EvalConfig::new(48)).unwrap();
        assert_eq!(r.entries.len(), 5);
        for e in &r.entries {
            assert_eq!(e.jsd, 0.0);
            assert!((e.real.mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let other = [traj(5, &[(0, 90), (1, 99)])];
        let r = evaluate(&set, &other, &grid(), &EvalConfig::new(48)).unwrap();
        assert!(r.entries.iter().all(|e| (0.0..=core::f64::consts::LN_2).contains(&e.jsd)));
    }
}
