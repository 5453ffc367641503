//! Passage times on a ball: Dijkstra from the identity, the seed ensemble,
//! and the infimum over lifts that estimates `T~` on `N^ab_free`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{NilError, Result};
use crate::group::{GroupElement, GroupModel, IVec};
use crate::highway::Construction;
use crate::marks::{keyed_hash, BlockMarks, HashedMarks};
use crate::region::{BallRegion, NONE};
use crate::stats;
use crate::weights::{resolve_region, RegionWeights};

const TAG_SEED: u64 = 0x5eed;

/// Relative tolerance on the upper weight bound `K`.
const K_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkKind {
    /// Block-sampled level fields (needed for deep truncation levels).
    Block,
    /// Per-site hashed marks.
    Hashed,
}

/// Where edge weights come from.
#[derive(Clone, Copy)]
pub enum WeightSource<'a> {
    Field {
        cons: &'a Construction,
        n_max: u32,
        marks: MarkKind,
    },
    /// Every edge gets the same weight (test oracle).
    Uniform(f64),
}

impl WeightSource<'_> {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, WeightSource::Uniform(_))
    }

    /// Resolves the weights of `region` for one seed and checks the
    /// weight-range laws on every edge.
    pub fn resolve(&self, region: &BallRegion, seed: u64, count_claimants: bool) -> Result<RegionWeights> {
        match *self {
            WeightSource::Uniform(w) => {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(NilError::Config(format!("uniform weight {w} must be positive")));
                }
                Ok(RegionWeights::uniform(region, w))
            }
            WeightSource::Field { cons, n_max, marks } => {
                let kind = cons.model.kind();
                let rw = match marks {
                    MarkKind::Block => {
                        let m = BlockMarks::new(seed, kind);
                        resolve_region(cons, &m, region, n_max, count_claimants)?
                    }
                    MarkKind::Hashed => {
                        let m = HashedMarks::new(seed, kind);
                        resolve_region(cons, &m, region, n_max, count_claimants)?
                    }
                };
                let (lo, hi) = (cons.constants.k_lower, cons.constants.k);
                for (e, ..) in region.edges() {
                    let w = rw.weights[e];
                    if !(w > 0.0 && w >= lo && w <= hi * (1.0 + K_TOL)) {
                        return Err(NilError::Integrity(format!(
                            "edge {e} has weight {w} outside [{lo}, {hi}]"
                        )));
                    }
                }
                Ok(rw)
            }
        }
    }
}

/// Independent master seeds derived from one run seed.
pub fn derive_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| keyed_hash(master, TAG_SEED, &[i])).collect()
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, u32);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `T(1, .)` on a region.
#[derive(Clone, Debug)]
pub struct PassageTimes {
    pub times: Vec<f64>,
    pred: Vec<u32>,
    via_boundary: Vec<bool>,
    /// Smallest passage time to a boundary vertex. Any path leaving the
    /// region passes a boundary vertex first, so every `T(1, x) <=
    /// boundary_min` computed inside the region is the true passage time.
    pub boundary_min: f64,
}

impl PassageTimes {
    pub fn time(&self, v: u32) -> f64 {
        self.times[v as usize]
    }

    pub fn predecessor(&self, v: u32) -> Option<u32> {
        let p = self.pred[v as usize];
        (p != NONE).then_some(p)
    }

    /// Vertices of the returned geodesic from the identity to `v`.
    pub fn geodesic(&self, v: u32) -> Vec<u32> {
        let mut out = vec![v];
        let mut cur = v;
        while let Some(p) = self.predecessor(cur) {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Whether the returned geodesic to `v` uses a boundary vertex.
    pub fn touches_boundary(&self, v: u32) -> bool {
        self.via_boundary[v as usize]
    }

    /// Whether `T(1, v)` is certified equal to the infinite-volume value.
    pub fn is_exact(&self, v: u32) -> bool {
        self.times[v as usize] <= self.boundary_min
    }
}

/// Single-source shortest paths from the identity (vertex 0).
pub fn dijkstra(region: &BallRegion, weights: &RegionWeights) -> Result<PassageTimes> {
    let n = region.len();
    let mut times = vec![f64::INFINITY; n];
    let mut pred = vec![NONE; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    times[0] = 0.0;
    heap.push(Entry(0.0, 0));
    let degree = region.degree();
    while let Some(Entry(d, v)) = heap.pop() {
        if done[v as usize] {
            continue;
        }
        done[v as usize] = true;
        for l in 0..degree {
            let l = crate::group::Letter(l as u8);
            let Some(w) = region.neighbor(v, l) else {
                continue;
            };
            if done[w as usize] {
                continue;
            }
            let e = region.edge_index(v, l).expect("neighbour inside region");
            let we = weights.weights[e];
            if !(we > 0.0 && we.is_finite()) {
                return Err(NilError::Integrity(format!("nonpositive weight {we} on edge {e}")));
            }
            let nd = d + we;
            if nd < times[w as usize] {
                times[w as usize] = nd;
                pred[w as usize] = v;
                heap.push(Entry(nd, w));
            }
        }
    }
    let mut via_boundary = vec![false; n];
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|a, b| times[*a as usize].total_cmp(&times[*b as usize]).then(a.cmp(b)));
    for &v in &order {
        let p = pred[v as usize];
        via_boundary[v as usize] = region.is_boundary(v) || (p != NONE && via_boundary[p as usize]);
    }
    let boundary_min = (0..n as u32)
        .filter(|&v| region.is_boundary(v))
        .map(|v| times[v as usize])
        .fold(f64::INFINITY, f64::min);
    Ok(PassageTimes {
        times,
        pred,
        via_boundary,
        boundary_min,
    })
}

/// Runs `f` on each seed's weights and passage times; results come back in
/// seed order whatever the thread count.
pub fn for_each_seed<R, F>(region: &BallRegion, source: &WeightSource, seeds: &[u64], f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64, &RegionWeights, &PassageTimes) -> Result<R> + Sync,
{
    seeds
        .par_iter()
        .map(|&seed| {
            let rw = source.resolve(region, seed, false)?;
            let times = dijkstra(region, &rw)?;
            f(seed, &rw, &times)
        })
        .collect()
}

/// Lifts in the region of each abelianized target.
#[derive(Clone, Debug)]
pub struct Targets {
    pub points: Vec<IVec>,
    pub lifts: Vec<Vec<u32>>,
}

impl Targets {
    pub fn new(model: &GroupModel, region: &BallRegion, points: &[IVec]) -> Result<Self> {
        let mut by_point: FxHashMap<IVec, Vec<u32>> = FxHashMap::default();
        for (i, p) in points.iter().enumerate() {
            if by_point.insert(*p, Vec::new()).is_some() {
                return Err(NilError::Config(format!("duplicate target {:?} at index {i}", p)));
            }
        }
        for (v, x) in region.vertices().iter().enumerate() {
            if let Some(z) = model.abelianize(x) {
                if let Some(list) = by_point.get_mut(&z) {
                    list.push(v as u32);
                }
            }
        }
        let mut lifts = Vec::with_capacity(points.len());
        for p in points {
            let list = by_point.remove(p).unwrap_or_default();
            if list.is_empty() {
                return Err(NilError::Domain(format!(
                    "no lift of {:?} within radius {}; increase the search radius",
                    p, region.radius
                )));
            }
            lifts.push(list);
        }
        Ok(Targets {
            points: points.to_vec(),
            lifts,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// What one seed contributes to the estimates.
#[derive(Clone, Debug)]
pub struct SeedSample {
    pub seed: u64,
    /// `times[i][j]`: passage time to lift `j` of target `i`.
    pub times: Vec<Vec<f64>>,
    pub touched: Vec<Vec<bool>>,
    pub boundary_min: f64,
}

impl SeedSample {
    pub fn collect(seed: u64, targets: &Targets, pt: &PassageTimes) -> Self {
        SeedSample {
            seed,
            times: targets.lifts.iter().map(|l| l.iter().map(|&v| pt.time(v)).collect()).collect(),
            touched: targets
                .lifts
                .iter()
                .map(|l| l.iter().map(|&v| pt.touches_boundary(v)).collect())
                .collect(),
            boundary_min: pt.boundary_min,
        }
    }
}

/// Estimate of `T~(z)`.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct InfimumEstimate {
    pub target: IVec,
    pub lift: GroupElement,
    pub mean: f64,
    pub se: f64,
    pub seeds: usize,
    /// Fraction of seeds whose geodesic to the minimizing lift touches the
    /// boundary.
    pub boundary_fraction: f64,
    /// Set when the region cannot certify the infimum: some lift outside the
    /// region, or some truncated per-seed time, could be cheaper on average.
    pub stale: bool,
    /// Per-seed passage times to the minimizing lift.
    pub per_seed: Vec<f64>,
}

/// `min` over lifts of the per-lift mean across seeds (same seeds per lift).
pub fn abelian_infimum(region: &BallRegion, targets: &Targets, samples: &[SeedSample], i: usize) -> Result<InfimumEstimate> {
    if samples.is_empty() {
        return Err(NilError::Precondition("no seed samples".into()));
    }
    let lifts = &targets.lifts[i];
    let mut best = (f64::INFINITY, 0usize);
    for j in 0..lifts.len() {
        let m = stats::mean(&samples.iter().map(|s| s.times[i][j]).collect::<Vec<_>>());
        if m < best.0 {
            best = (m, j);
        }
    }
    let (mean, j) = best;
    let col: Vec<f64> = samples.iter().map(|s| s.times[i][j]).collect();
    // certified lower bound for every lift, including those outside
    let outside = stats::mean(&samples.iter().map(|s| s.boundary_min).collect::<Vec<_>>());
    let mut floor = outside;
    for jj in 0..lifts.len() {
        let lb = stats::mean(
            &samples
                .iter()
                .map(|s| s.times[i][jj].min(s.boundary_min))
                .collect::<Vec<_>>(),
        );
        floor = floor.min(lb);
    }
    let touched = samples.iter().filter(|s| s.touched[i][j]).count();
    Ok(InfimumEstimate {
        target: targets.points[i],
        lift: *region.vertex(lifts[j]),
        mean,
        se: stats::std_err(&col),
        seeds: samples.len(),
        boundary_fraction: touched as f64 / samples.len() as f64,
        stale: mean > floor,
        per_seed: col,
    })
}

/// Estimates `T~` at each target from an ensemble of seeds.
pub fn monte_carlo(
    region: &BallRegion,
    source: &WeightSource,
    targets: &Targets,
    seeds: &[u64],
) -> Result<Vec<InfimumEstimate>> {
    if seeds.len() < 2 && !source.is_deterministic() {
        return Err(NilError::Precondition("Monte Carlo needs at least two seeds".into()));
    }
    let samples = for_each_seed(region, source, seeds, |seed, _, pt| Ok(SeedSample::collect(seed, targets, pt)))?;
    (0..targets.len())
        .map(|i| abelian_infimum(region, targets, &samples, i))
        .collect()
}
