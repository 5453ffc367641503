//! Limit-shape evidence: directional ratios against `Phi`, rescaled ball
//! clouds, the membership invariant, and the structural audits.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::engine::{
    for_each_seed, InfimumEstimate, PassageTimes, SeedSample, Targets, WeightSource,
};
use crate::error::{NilError, Result};
use crate::group::{to_real, GroupElement, GroupModel, IVec, Letter, ModelKind};
use crate::highway::{competition_bound, Construction, Mode};
use crate::norm::{dot, l2, Norm};
use crate::region::BallRegion;
use crate::stats;
use crate::weights::RegionWeights;

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub witness: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct AuditReport {
    pub name: String,
    pub checks: Vec<Check>,
}

impl AuditReport {
    pub fn new(name: &str) -> Self {
        AuditReport {
            name: name.into(),
            checks: Vec::new(),
        }
    }

    /// Records a check; failures must carry a witness.
    pub fn push(&mut self, name: impl Into<String>, passed: bool, value: f64, tolerance: f64, witness: Option<String>) {
        let witness = if passed {
            witness
        } else {
            Some(witness.unwrap_or_else(|| format!("value {value} against tolerance {tolerance}")))
        };
        self.checks.push(Check {
            name: name.into(),
            passed,
            value,
            tolerance,
            witness,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// The eight king-move directions in the plane, or `+-e_i` and the
/// positive diagonals in higher dimension.
pub fn lattice_directions(dim: usize) -> Vec<IVec> {
    if dim == 2 {
        return vec![
            [1, 0, 0],
            [1, 1, 0],
            [0, 1, 0],
            [-1, 1, 0],
            [-1, 0, 0],
            [-1, -1, 0],
            [0, -1, 0],
            [1, -1, 0],
        ];
    }
    let mut out = Vec::new();
    for i in 0..dim {
        let mut v = [0; 3];
        v[i] = 1;
        out.push(v);
        v[i] = -1;
        out.push(v);
    }
    if dim == 3 {
        out.push([1, 1, 1]);
        out.push([-1, -1, -1]);
    }
    out
}

/// How a direction `v` and scale `t` become a lattice target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetScaling {
    /// `t v`.
    #[default]
    Lattice,
    /// `t v / ||v||_2`, rounded coordinatewise. Keeps diagonal targets
    /// inside small balls.
    Euclidean,
}

impl TargetScaling {
    pub fn target(self, v: &IVec, t: u32) -> IVec {
        let t = t as i64;
        match self {
            TargetScaling::Lattice => [v[0] * t, v[1] * t, v[2] * t],
            TargetScaling::Euclidean => {
                let n = v.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
                v.map(|c| (c as f64 * t as f64 / n).round() as i64)
            }
        }
    }
}

/// Targets for every direction and scale, without repeats.
pub fn profile_targets(directions: &[IVec], schedule: &[u32], scaling: TargetScaling) -> Vec<IVec> {
    let mut seen = FxHashSet::default();
    let mut out = Vec::new();
    for v in directions {
        for &t in schedule {
            let z = scaling.target(v, t);
            if seen.insert(z) {
                out.push(z);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub t: u32,
    pub target: IVec,
    /// `T~(z) / Phi(z)` from the seed mean, `z` the target.
    pub ratio: f64,
    /// Standard error of `ratio`.
    pub se: f64,
    /// Median over seeds of the per-seed ratio at the minimizing lift.
    pub median_ratio: f64,
    pub stale: bool,
    pub boundary_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionalProfile {
    pub direction: IVec,
    pub phi: f64,
    pub points: Vec<ProfilePoint>,
    /// Consecutive scales where `|median r_t - 1|` did not grow.
    pub improvements: usize,
    pub non_increasing: bool,
    /// Least-squares slope of `|median r_t - 1|` against `log2 t`.
    pub trend_slope: f64,
}

impl DirectionalProfile {
    pub fn at(&self, t: u32) -> Option<&ProfilePoint> {
        self.points.iter().find(|p| p.t == t)
    }
}

/// Ratios `r_t` per direction from estimates covering [`profile_targets`].
pub fn directional_profiles(
    norm: &Norm,
    directions: &[IVec],
    schedule: &[u32],
    scaling: TargetScaling,
    estimates: &[InfimumEstimate],
) -> Result<Vec<DirectionalProfile>> {
    let by_target: FxHashMap<IVec, &InfimumEstimate> = estimates.iter().map(|e| (e.target, e)).collect();
    let mut out = Vec::new();
    for v in directions {
        let phi = norm.phi_int(v);
        if phi <= 0.0 {
            return Err(NilError::Precondition(format!("direction {v:?} is zero")));
        }
        let mut points = Vec::new();
        for &t in schedule {
            let z = scaling.target(v, t);
            let est = by_target
                .get(&z)
                .ok_or_else(|| NilError::Precondition(format!("no estimate for target {z:?}")))?;
            let denom = norm.phi_int(&z);
            points.push(ProfilePoint {
                t,
                target: z,
                ratio: est.mean / denom,
                se: est.se / denom,
                median_ratio: stats::median(&est.per_seed) / denom,
                stale: est.stale,
                boundary_fraction: est.boundary_fraction,
            });
        }
        let errs: Vec<f64> = points.iter().map(|p| (p.median_ratio - 1.0).abs()).collect();
        let improvements = errs.windows(2).filter(|w| w[1] <= w[0]).count();
        let trend_slope = if points.len() > 1 {
            stats::ls_slope(
                &points
                    .iter()
                    .zip(&errs)
                    .map(|(p, e)| ((p.t as f64).log2(), *e))
                    .collect::<Vec<_>>(),
            )
        } else {
            0.0
        };
        out.push(DirectionalProfile {
            direction: *v,
            phi,
            non_increasing: improvements + 1 == points.len(),
            improvements,
            trend_slope,
            points,
        });
    }
    Ok(out)
}

/// Splits the displacement of each highway into the part along `b_n` and
/// the rest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FastSplit {
    pub level: u32,
    /// `Phi(D_par / T)`.
    pub phi_parallel: f64,
    /// `||D_perp||_2`.
    pub perp: f64,
}

pub fn fast_splits(cons: &Construction) -> Result<Vec<FastSplit>> {
    let model = &cons.model;
    let d = model.dim();
    let mut out = Vec::new();
    for hw in &cons.highways {
        let mut x = model.identity();
        for &l in &hw.letters {
            x = model.apply(&x, l)?;
        }
        let (_, disp) = model.displacement_between(&model.identity(), &x)?;
        let dv = to_real(&disp, d);
        let b = &hw.direction;
        let coef = dot(&dv, b) / dot(b, b);
        let par: Vec<f64> = b.iter().map(|bi| coef * bi).collect();
        let perp: Vec<f64> = dv.iter().zip(&par).map(|(a, p)| a - p).collect();
        let t = hw.total_fast_time();
        out.push(FastSplit {
            level: hw.level,
            phi_parallel: cons.norm.phi(&par.iter().map(|p| p / t).collect::<Vec<_>>()),
            perp: l2(&perp),
        });
    }
    Ok(out)
}

/// Largest `Phi(D / (T + slack))` seen, with the number of paths checked.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MembershipSummary {
    pub checked: usize,
    pub violations: usize,
    pub max_phi: f64,
    pub slack: f64,
}

/// Checks `Phi(D(gamma) / (T(gamma) + slack)) <= 1 + tol` on random walks
/// inside the region and on every geodesic of the Dijkstra tree.
#[allow(clippy::too_many_arguments)]
pub fn membership_audit(
    model: &GroupModel,
    norm: &Norm,
    slack: f64,
    region: &BallRegion,
    weights: &RegionWeights,
    times: &PassageTimes,
    walks: usize,
    max_walk: usize,
    seed: u64,
    tol: f64,
    report: &mut AuditReport,
) -> Result<MembershipSummary> {
    let d = model.dim();
    let mut summary = MembershipSummary {
        checked: 0,
        violations: 0,
        max_phi: 0.0,
        slack,
    };
    let mut witness = None;
    let mut consider = |from: &GroupElement, to: &GroupElement, t: f64, what: &dyn Fn() -> String| -> Result<()> {
        let (_, disp) = model.displacement_between(from, to)?;
        let phi = norm.phi(&to_real(&disp, d)) / (t + slack);
        summary.checked += 1;
        summary.max_phi = summary.max_phi.max(phi);
        if phi > 1.0 + tol {
            summary.violations += 1;
            if witness.is_none() {
                witness = Some(format!("{} with D = {disp:?}, T = {t}, Phi ratio {phi}", what()));
            }
        }
        Ok(())
    };
    let id = model.identity();
    for v in 0..region.len() as u32 {
        let t = times.time(v);
        consider(&id, region.vertex(v), t, &|| format!("geodesic to {:?}", region.vertex(v)))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let degree = region.degree();
    for _ in 0..walks {
        let start = rng.random_range(0..region.len() as u32);
        let len = rng.random_range(1..=max_walk);
        let mut v = start;
        let mut t = 0.0;
        for _ in 0..len {
            let (l, w) = loop {
                let l = Letter(rng.random_range(0..degree) as u8);
                if let Some(w) = region.neighbor(v, l) {
                    break (l, w);
                }
            };
            t += weights.weight(region.edge_index(v, l).expect("edge in region"));
            v = w;
        }
        consider(region.vertex(start), region.vertex(v), t, &|| {
            format!("walk from {:?} of length {len}", region.vertex(start))
        })?;
    }
    report.push(
        "membership",
        summary.violations == 0,
        summary.max_phi,
        1.0 + tol,
        witness,
    );
    Ok(summary)
}

/// Adds the fast-subpath checks: in simple mode `Phi(D_par / T) = 1`.
pub fn fast_split_checks(cons: &Construction, tol: f64, report: &mut AuditReport) -> Result<Vec<FastSplit>> {
    let splits = fast_splits(cons)?;
    if cons.constants.mode == Mode::Simple {
        let worst = splits
            .iter()
            .map(|s| (s.phi_parallel - 1.0).abs())
            .fold(0.0, f64::max);
        let bad = splits.iter().find(|s| (s.phi_parallel - 1.0).abs() > tol);
        report.push(
            "fast subpaths along b_n",
            bad.is_none(),
            worst,
            tol,
            bad.map(|s| format!("level {} has Phi(D_par/T) = {}", s.level, s.phi_parallel)),
        );
    }
    Ok(splits)
}

/// The targets and all their images `z^phi(q)`, without repeats.
pub fn symmetry_points(model: &GroupModel, zs: &[IVec]) -> Vec<IVec> {
    let quo = model.quotient();
    let mut points: Vec<IVec> = Vec::new();
    for z in zs {
        for q in 0..quo.order() as u8 {
            let img = quo.act(q, z);
            if !points.contains(&img) {
                points.push(img);
            }
        }
    }
    points
}

/// Region vertices of the coset representatives.
pub fn representative_vertices(model: &GroupModel, region: &BallRegion) -> Result<Vec<u32>> {
    model
        .coset_representatives()
        .iter()
        .map(|r| {
            region.index_of(r).ok_or_else(|| {
                NilError::Domain(format!("coset representative {r:?} outside the region"))
            })
        })
        .collect()
}

/// `|T~(z) - T~(z^phi(q))| <= 2 C^ + 4 SE` for every target and `q`, where
/// `C^` is the largest mean passage time to a coset representative and SE
/// is the standard error of the difference. `estimates` must cover
/// [`symmetry_points`].
pub fn symmetry_report(model: &GroupModel, zs: &[IVec], estimates: &[InfimumEstimate], c_hat: f64) -> Result<AuditReport> {
    let mut report = AuditReport::new("symmetry");
    let quo = model.quotient();
    if quo.is_trivial() {
        report.push("trivial quotient", true, 0.0, 0.0, None);
        return Ok(report);
    }
    let find = |z: &IVec| {
        estimates
            .iter()
            .find(|e| e.target == *z)
            .ok_or_else(|| NilError::Precondition(format!("no estimate for {z:?}")))
    };
    report.push("C^", true, c_hat, f64::MAX, None);
    for z in zs {
        let a = find(z)?;
        for q in 1..quo.order() as u8 {
            let b = find(&quo.act(q, z))?;
            let diff = (a.mean - b.mean).abs();
            let se = (a.se * a.se + b.se * b.se).sqrt();
            let tol = 2.0 * c_hat + 4.0 * se;
            report.push(
                format!("z = {:?}, q = {q}", &z[..model.dim()]),
                diff <= tol,
                diff,
                tol,
                (diff > tol).then(|| {
                    format!(
                        "T~({:?}) = {} vs T~({:?}) = {}",
                        a.target, a.mean, b.target, b.mean
                    )
                }),
            );
        }
    }
    Ok(report)
}

/// Standalone symmetry audit: simulates the targets, their images and the
/// coset representatives.
pub fn symmetry_audit(
    model: &GroupModel,
    region: &BallRegion,
    source: &WeightSource,
    seeds: &[u64],
    zs: &[IVec],
) -> Result<AuditReport> {
    if model.quotient().is_trivial() {
        return symmetry_report(model, zs, &[], 0.0);
    }
    let targets = Targets::new(model, region, &symmetry_points(model, zs))?;
    let reps = representative_vertices(model, region)?;
    let rows = for_each_seed(region, source, seeds, |seed, _, pt| {
        Ok((
            SeedSample::collect(seed, &targets, pt),
            reps.iter().map(|&v| pt.time(v)).collect::<Vec<_>>(),
        ))
    })?;
    let samples: Vec<SeedSample> = rows.iter().map(|r| r.0.clone()).collect();
    let c_hat = (0..reps.len())
        .map(|j| stats::mean(&rows.iter().map(|r| r.1[j]).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    let est: Vec<InfimumEstimate> = (0..targets.len())
        .map(|i| crate::engine::abelian_infimum(region, &targets, &samples, i))
        .collect::<Result<_>>()?;
    symmetry_report(model, zs, &est, c_hat)
}

/// Central elements per word ball, and the log-log slope of the counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CenterCensus {
    pub counts: Vec<(u32, usize)>,
    pub slope: f64,
}

pub fn center_growth_census(
    model: &GroupModel,
    radii: &[u32],
    budget: usize,
    slope_range: (f64, f64),
) -> Result<(CenterCensus, AuditReport)> {
    if model.kind() != ModelKind::Heisenberg {
        return Err(NilError::Precondition("center census needs a Heisenberg model".into()));
    }
    let r_max = *radii.iter().max().ok_or_else(|| NilError::Precondition("no radii".into()))?;
    let ball = model.word_ball(r_max, budget)?;
    let mut per_length = vec![0usize; r_max as usize + 1];
    for (x, len) in &ball {
        if model.is_central(x) {
            per_length[*len as usize] += 1;
        }
    }
    let counts: Vec<(u32, usize)> = radii
        .iter()
        .map(|&r| (r, per_length[..=r as usize].iter().sum()))
        .collect();
    let slope = stats::ls_slope(
        &counts
            .iter()
            .map(|&(r, c)| ((r as f64).ln(), (c as f64).ln()))
            .collect::<Vec<_>>(),
    );
    let mut report = AuditReport::new("center growth");
    report.push(
        "log-log slope",
        slope >= slope_range.0 && slope <= slope_range.1,
        slope,
        slope_range.1,
        None,
    );
    Ok((CenterCensus { counts, slope }, report))
}

/// Empirical competition per edge and winner levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompetitionCensus {
    pub edges: usize,
    pub mean_claimants: f64,
    pub bound: f64,
    /// `histogram[n]`: sampled edges won by level `n` (0 = unclaimed).
    pub histogram: Vec<usize>,
    /// `histogram[n + 1] / histogram[n]` where both counts are at least 30.
    /// Descriptive only: edges sampled in one seed share highways.
    pub ratios: Vec<(u32, f64)>,
}

pub fn competition_census(
    cons: &Construction,
    region: &BallRegion,
    source: &WeightSource,
    seeds: &[u64],
    per_seed: usize,
) -> Result<(CompetitionCensus, AuditReport)> {
    let WeightSource::Field { n_max, .. } = *source else {
        return Err(NilError::Precondition("competition census needs the mark field".into()));
    };
    let edges: Vec<usize> = region.edges().map(|e| e.0).collect();
    if edges.is_empty() {
        return Err(NilError::Precondition("region has no edges".into()));
    }
    let mut histogram = vec![0usize; n_max as usize + 1];
    let mut total = 0u64;
    let mut count = 0usize;
    for &seed in seeds {
        let rw = source.resolve(region, seed, true)?;
        let claimants = rw.claimants.as_ref().expect("claimants requested");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..per_seed {
            let e = edges[rng.random_range(0..edges.len())];
            total += claimants[e] as u64;
            histogram[rw.levels[e] as usize] += 1;
            count += 1;
        }
    }
    let mean = total as f64 / count as f64;
    let bound = competition_bound(n_max, cons.constants.shell_c);
    let ratios = (1..n_max as usize)
        .filter(|&n| histogram[n] >= 30 && histogram[n + 1] >= 30)
        .map(|n| (n as u32, histogram[n + 1] as f64 / histogram[n] as f64))
        .collect();
    let census = CompetitionCensus {
        edges: count,
        mean_claimants: mean,
        bound,
        histogram,
        ratios,
    };
    let mut report = AuditReport::new("competition");
    report.push("mean |X_f|", mean <= bound, mean, bound, None);
    Ok((census, report))
}

/// Mean passage time per vertex over the seeds, and the mean of the
/// per-seed boundary minima.
#[derive(Clone, Debug)]
pub struct MeanField {
    pub mean: Vec<f64>,
    pub boundary_min: f64,
}

pub fn mean_field(region: &BallRegion, source: &WeightSource, seeds: &[u64]) -> Result<MeanField> {
    let rows = for_each_seed(region, source, seeds, |_, _, pt| Ok((pt.times.clone(), pt.boundary_min)))?;
    let mut mean = vec![0.0; region.len()];
    for (t, _) in &rows {
        for (m, x) in mean.iter_mut().zip(t) {
            *m += x;
        }
    }
    let n = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(MeanField {
        mean,
        boundary_min: rows.iter().map(|r| r.1).sum::<f64>() / n,
    })
}

/// `T~` on every abelianized point with a lift in the region: the smallest
/// mean over lifts.
pub fn abelian_field(model: &GroupModel, region: &BallRegion, mean: &[f64]) -> FxHashMap<IVec, f64> {
    let mut out: FxHashMap<IVec, f64> = FxHashMap::default();
    for (v, x) in region.vertices().iter().enumerate() {
        if let Some(z) = model.abelianize(x) {
            let e = out.entry(z).or_insert(f64::INFINITY);
            *e = e.min(mean[v]);
        }
    }
    out
}

/// `{z : T~(z) <= t}` rescaled by `1/t`; each lattice point stands for the
/// cell `z + [-1/2, 1/2]^d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapeCloud {
    pub t: f64,
    pub dim: usize,
    pub cells: Vec<IVec>,
    /// Cells with a lattice neighbour `z +- e_i` outside the cloud.
    pub outline: Vec<IVec>,
    /// Whether `t` stays below the certified passage-time range.
    pub certified: bool,
}

pub fn ball_cloud(field: &FxHashMap<IVec, f64>, dim: usize, t: f64, certified_up_to: f64) -> ShapeCloud {
    let mut cells: Vec<IVec> = field.iter().filter(|(_, &v)| v <= t).map(|(z, _)| *z).collect();
    cells.sort_unstable();
    let set: FxHashSet<IVec> = cells.iter().copied().collect();
    let outline = cells
        .iter()
        .filter(|z| {
            (0..dim).any(|i| {
                [-1, 1].iter().any(|s| {
                    let mut y = **z;
                    y[i] += s;
                    !set.contains(&y)
                })
            })
        })
        .copied()
        .collect();
    ShapeCloud {
        t,
        dim,
        cells,
        outline,
        certified: t <= certified_up_to,
    }
}

fn sphere_samples(norm: &Norm, radius: f64, count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / count as f64;
            let u = [a.cos(), a.sin()];
            let s = radius / norm.phi(&u);
            [u[0] * s, u[1] * s]
        })
        .collect()
}

impl ShapeCloud {
    fn outline_points(&self) -> Vec<[f64; 2]> {
        self.outline
            .iter()
            .map(|z| [z[0] as f64 / self.t, z[1] as f64 / self.t])
            .collect()
    }

    /// Hausdorff distance between the rescaled outline and the sphere
    /// `{Phi = radius}` (planar clouds only).
    pub fn hausdorff_to_sphere(&self, norm: &Norm, radius: f64) -> Option<f64> {
        if self.dim != 2 || self.outline.is_empty() {
            return None;
        }
        let pts = self.outline_points();
        let sph = sphere_samples(norm, radius, 4096);
        let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let one_way = |xs: &[[f64; 2]], ys: &[[f64; 2]]| {
            xs.iter()
                .map(|x| ys.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        Some(one_way(&pts, &sph).max(one_way(&sph, &pts)))
    }

    /// `(min Phi over the outline, max Phi over the cloud)`, both over `t`.
    pub fn phi_extent(&self, norm: &Norm) -> (f64, f64) {
        let phi = |z: &IVec| norm.phi_int(z) / self.t;
        (
            self.outline.iter().map(phi).fold(f64::INFINITY, f64::min),
            self.cells.iter().map(phi).fold(0.0, f64::max),
        )
    }

    /// Self-contained SVG of the cloud cells over `{Phi = 1}`.
    pub fn svg(&self, norm: &Norm) -> Option<String> {
        if self.dim != 2 {
            return None;
        }
        let extent = self
            .cells
            .iter()
            .map(|z| (z[0].abs().max(z[1].abs()) as f64 + 0.5) / self.t)
            .fold(0.0, f64::max);
        let sph = sphere_samples(norm, 1.0, 720);
        let reach = sph.iter().map(|p| p[0].abs().max(p[1].abs())).fold(extent, f64::max) * 1.1;
        let px = 480.0 / (2.0 * reach);
        let map = |x: f64, y: f64| (240.0 + x * px, 240.0 - y * px);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" viewBox=\"0 0 480 480\">"
        );
        let _ = writeln!(s, "<rect width=\"480\" height=\"480\" fill=\"white\"/>");
        let cell = px / self.t;
        let _ = writeln!(s, "<g fill=\"#4a78b5\" fill-opacity=\"0.55\">");
        for z in &self.cells {
            let (x, y) = map((z[0] as f64 - 0.5) / self.t, (z[1] as f64 + 0.5) / self.t);
            let _ = writeln!(
                s,
                "<rect x=\"{x:.3}\" y=\"{y:.3}\" width=\"{cell:.3}\" height=\"{cell:.3}\"/>"
            );
        }
        let _ = writeln!(s, "</g>");
        let pts: Vec<String> = sph
            .iter()
            .map(|p| {
                let (x, y) = map(p[0], p[1]);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        );
        let _ = writeln!(s, "</svg>");
        Some(s)
    }
}

/// Graded rescaling `(a / t, c / t, b / t^2)` of a Heisenberg element.
pub fn heisenberg_scale(x: &GroupElement, t: f64) -> Result<[f64; 3]> {
    if !(t > 0.0) {
        return Err(NilError::Precondition(format!("scale {t} must be positive")));
    }
    let c = x.coords();
    Ok([c[0] as f64 / t, c[2] as f64 / t, c[1] as f64 / (t * t)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{dijkstra, monte_carlo, MarkKind};

    #[test]
    fn uniform_profile_is_exact() {
        let z2 = GroupModel::abelian(2).unwrap();
        let l1 = Norm::lp(1.0, 2).unwrap();
        let region = BallRegion::grow(&z2, 40, 100_000).unwrap();
        let dirs = lattice_directions(2);
        let schedule = [4, 8, 16];
        let targets = Targets::new(&z2, &region, &profile_targets(&dirs, &schedule, TargetScaling::Lattice)).unwrap();
        let est = monte_carlo(&region, &WeightSource::Uniform(1.0), &targets, &[0]).unwrap();
        let prof = directional_profiles(&l1, &dirs, &schedule, TargetScaling::Lattice, &est).unwrap();
        for p in &prof {
            for pt in &p.points {
                assert_eq!(pt.ratio, 1.0);
                assert_eq!(pt.se, 0.0);
            }
        }
        // v and -v agree
        assert_eq!(prof[0].points, {
            let mut q = prof[4].points.clone();
            for (a, b) in q.iter_mut().zip(&prof[0].points) {
                a.target = b.target;
            }
            q
        });
        // K-weighted: r_t = K |tv|_1 / (t Phi(v))
        let est = monte_carlo(&region, &WeightSource::Uniform(3.5), &targets, &[0]).unwrap();
        let linf = Norm::lp(f64::INFINITY, 2).unwrap();
        let prof = directional_profiles(&linf, &dirs, &schedule, TargetScaling::Lattice, &est).unwrap();
        assert_eq!(prof[1].points[0].ratio, 3.5 * 8.0 / 4.0);
    }

    #[test]
    fn euclidean_scaling() {
        let e = TargetScaling::Euclidean;
        assert_eq!(e.target(&[1, 0, 0], 32), [32, 0, 0]);
        assert_eq!(e.target(&[-1, 1, 0], 32), [-23, 23, 0]);
        assert_eq!(TargetScaling::Lattice.target(&[-1, 1, 0], 32), [-32, 32, 0]);
        // ratio uses Phi of the rounded target
        let z2 = GroupModel::abelian(2).unwrap();
        let l1 = Norm::lp(1.0, 2).unwrap();
        let region = BallRegion::grow(&z2, 40, 100_000).unwrap();
        let dirs = lattice_directions(2);
        let targets = Targets::new(&z2, &region, &profile_targets(&dirs, &[8, 16], e)).unwrap();
        let est = monte_carlo(&region, &WeightSource::Uniform(1.0), &targets, &[0]).unwrap();
        for p in directional_profiles(&l1, &dirs, &[8, 16], e, &est).unwrap() {
            assert!(p.points.iter().all(|pt| pt.ratio == 1.0));
        }
    }

    #[test]
    fn uniform_cloud_is_the_l1_ball() {
        let z2 = GroupModel::abelian(2).unwrap();
        let l1 = Norm::lp(1.0, 2).unwrap();
        let region = BallRegion::grow(&z2, 40, 100_000).unwrap();
        let mf = mean_field(&region, &WeightSource::Uniform(1.0), &[0]).unwrap();
        let field = abelian_field(&z2, &region, &mf.mean);
        for t in [8.0, 16.0, 32.0] {
            let cloud = ball_cloud(&field, 2, t, mf.boundary_min);
            assert!(cloud.certified);
            assert_eq!(cloud.cells.len(), (2.0 * t * t + 2.0 * t + 1.0) as usize);
            assert!(cloud.hausdorff_to_sphere(&l1, 1.0).unwrap() <= 1.0 / t);
            let (lo, hi) = cloud.phi_extent(&l1);
            assert_eq!((lo, hi), (1.0, 1.0));
            assert!(cloud.svg(&l1).unwrap().contains("<polygon"));
        }
        // weight K shrinks the cloud by K
        let mf = mean_field(&region, &WeightSource::Uniform(2.0), &[0]).unwrap();
        let field = abelian_field(&z2, &region, &mf.mean);
        let cloud = ball_cloud(&field, 2, 32.0, mf.boundary_min);
        assert!(cloud.hausdorff_to_sphere(&l1, 0.5).unwrap() <= 1.0 / 32.0);
    }

    #[test]
    fn membership_holds_on_a_run() {
        for (model, norm) in [
            (GroupModel::abelian(2).unwrap(), Norm::lp(2.0, 2).unwrap()),
            (GroupModel::semidirect_zi().unwrap(), Norm::lp(f64::INFINITY, 2).unwrap()),
            (GroupModel::heisenberg(true).unwrap(), Norm::lp(1.0, 2).unwrap()),
        ] {
            let mode = Mode::default_for(&model);
            let cons = Construction::build(&model, &norm, mode, 8, 4).unwrap();
            let region = BallRegion::grow(&model, 10, 1_000_000).unwrap();
            let src = WeightSource::Field {
                cons: &cons,
                n_max: 8,
                marks: MarkKind::Block,
            };
            let rw = src.resolve(&region, 9, false).unwrap();
            let pt = dijkstra(&region, &rw).unwrap();
            let mut report = AuditReport::new("membership");
            let s = membership_audit(
                &model,
                &norm,
                cons.constants.slack,
                &region,
                &rw,
                &pt,
                300,
                60,
                1,
                1e-9,
                &mut report,
            )
            .unwrap();
            assert_eq!(s.violations, 0, "{}: {report:?}", model.name());
            assert_eq!(s.checked, region.len() + 300);
            fast_split_checks(&cons, 1e-9, &mut report).unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn slow_edge_membership_example() {
        // one slow edge in Z^2 with the Euclidean ball: Phi(e1) / (K + slack) < 1
        let z2 = GroupModel::abelian(2).unwrap();
        let norm = Norm::lp(2.0, 2).unwrap();
        let cons = Construction::build(&z2, &norm, Mode::Simple, 2, 0).unwrap();
        let c0 = 2.0 * 2f64.sqrt();
        assert_eq!(cons.constants.slack, 2.0 * c0);
        assert!(1.0 / (cons.constants.k + cons.constants.slack) < 1.0);
    }

    #[test]
    fn symmetry_with_uniform_weights() {
        let s = GroupModel::semidirect_zi().unwrap();
        let region = BallRegion::grow(&s, 24, 1_000_000).unwrap();
        let rep = symmetry_audit(&s, &region, &WeightSource::Uniform(1.0), &[0], &[[8, 0, 0], [6, 3, 0]]).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let c_hat = rep.checks[0].value;
        let max_rep = s
            .coset_representatives()
            .iter()
            .map(|r| region.length(region.index_of(r).unwrap()) as f64)
            .fold(0.0, f64::max);
        assert_eq!(c_hat, max_rep);
        let h = GroupModel::heisenberg(false).unwrap();
        let region = BallRegion::grow(&h, 3, 10_000).unwrap();
        let rep = symmetry_audit(&h, &region, &WeightSource::Uniform(1.0), &[0], &[[1, 0, 0]]).unwrap();
        assert!(rep.passed());
    }

    #[test]
    fn center_census_examples() {
        let hz = GroupModel::heisenberg(true).unwrap();
        let (c, _) = center_growth_census(&hz, &[1, 2], 1_000_000, (0.0, 10.0)).unwrap();
        assert!(c.counts[0].1 >= 3);
        let h = GroupModel::heisenberg(false).unwrap();
        let (c, _) = center_growth_census(&h, &[4], 1_000_000, (0.0, 10.0)).unwrap();
        assert!(c.counts[0].1 >= 3);
        // independent count over the BFS oracle
        let ball = h.word_ball(4, 1_000_000).unwrap();
        let n = ball.iter().filter(|(x, _)| x.coords()[0] == 0 && x.coords()[2] == 0).count();
        assert_eq!(c.counts[0].1, n);
        assert!(center_growth_census(&GroupModel::abelian(2).unwrap(), &[4], 100, (0.0, 1.0)).is_err());
    }

    #[test]
    fn competition_single_level() {
        let z2 = GroupModel::abelian(2).unwrap();
        let norm = Norm::lp(1.0, 2).unwrap();
        let cons = Construction::build(&z2, &norm, Mode::Simple, 1, 0).unwrap();
        let region = BallRegion::grow(&z2, 20, 100_000).unwrap();
        let src = WeightSource::Field {
            cons: &cons,
            n_max: 1,
            marks: MarkKind::Block,
        };
        let (c, rep) = competition_census(&cons, &region, &src, &[1, 2], 1000).unwrap();
        assert!((c.bound - cons.constants.shell_c * 2.0 / 3.0).abs() < 1e-12);
        assert!(rep.checks[0].passed, "{c:?}");
        assert_eq!(c.edges, 2000);
    }

    #[test]
    fn heisenberg_scaling() {
        let h = GroupModel::heisenberg(true).unwrap();
        let t = 7.0;
        assert_eq!(heisenberg_scale(&h.element([7, 0, 0]).unwrap(), t).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(heisenberg_scale(&h.element([0, 49, 0]).unwrap(), t).unwrap(), [0.0, 0.0, 1.0]);
        assert_eq!(heisenberg_scale(&h.identity(), 3.0).unwrap(), [0.0; 3]);
        assert!(heisenberg_scale(&h.identity(), 0.0).is_err());
    }
}
