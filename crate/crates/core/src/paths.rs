//! Directional highway paths: balanced lattice staircases, their lifts to the
//! group, loop erasure and coarse-monotone segmentation, each with a
//! certificate that re-measures the geometric guarantees exactly.

use std::collections::VecDeque;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{NilError, Result};
use crate::group::{
    euclid, vadd, vsub, AlmostAbelianPoint, EdgePath, GroupModel, IVec, Letter,
};
use crate::norm::{dot, l2};

const INNER_TOL: f64 = 1e-12;

/// Lattice path from the origin using signed unit steps. A step is encoded
/// as `2 * axis + (negative as u8)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticePath {
    pub dim: usize,
    pub target: IVec,
    pub steps: Vec<u8>,
}

pub fn step_vector(step: u8) -> IVec {
    let mut v = [0i64; 3];
    v[(step / 2) as usize] = if step & 1 == 1 { -1 } else { 1 };
    v
}

impl LatticePath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn points(&self) -> Vec<IVec> {
        let mut p = [0i64; 3];
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(p);
        for &s in &self.steps {
            p = vadd(&p, &step_vector(s));
            out.push(p);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaircaseCertificate {
    /// Largest Euclidean distance from a vertex to the segment `[0, z]`.
    pub max_dev_segment: f64,
    /// Largest Euclidean distance from a vertex to the line through `b`.
    pub max_dev_line: f64,
    /// Smallest `<step, b>` over all steps.
    pub min_step_inner: f64,
    pub length: usize,
    pub minimal_length: bool,
    /// The deviation bound `2 sqrt(d)` the path is certified against.
    pub c0: f64,
    pub passed: bool,
}

/// Coordinate `i` of `round(t z / m)`, halves toward zero, in exact integers.
fn rounded_fraction(t: u64, z: i64, m: u64) -> i64 {
    let num = t as u128 * z.unsigned_abs() as u128;
    let (f, r) = (num / m as u128, num % m as u128);
    let mag = if 2 * r > m as u128 { f + 1 } else { f } as i64;
    if z < 0 {
        -mag
    } else {
        mag
    }
}

fn dist_to_segment(p: &[f64], z: &[f64]) -> f64 {
    let zz = dot(z, z);
    let t = if zz == 0.0 { 0.0 } else { (dot(p, z) / zz).clamp(0.0, 1.0) };
    let diff: Vec<f64> = p.iter().zip(z).map(|(a, b)| a - t * b).collect();
    l2(&diff)
}

fn dist_to_line(p: &[f64], unit: &[f64]) -> f64 {
    let s = dot(p, unit);
    let diff: Vec<f64> = p.iter().zip(unit).map(|(a, b)| a - s * b).collect();
    l2(&diff)
}

/// Balanced staircase to `z`: visits `round(t z / m)` for `t = 0..=m`
/// (`m = ||z||_1`), joining consecutive points with unit steps taken in
/// increasing coordinate order.
pub fn staircase_path(z: &IVec, b: &[f64]) -> Result<(LatticePath, StaircaseCertificate)> {
    let d = b.len();
    if d == 0 || d > 3 || z[d..].iter().any(|&c| c != 0) {
        return Err(NilError::Dimension {
            expected: d,
            got: z.len(),
        });
    }
    for i in 0..d {
        if z[i] != 0 && (z[i] as f64) * b[i] < 0.0 {
            return Err(NilError::Precondition(format!(
                "target coordinate {i} has the wrong sign for the direction"
            )));
        }
    }
    let m: u64 = z[..d].iter().map(|c| c.unsigned_abs()).sum();
    let mut steps = Vec::with_capacity(m as usize);
    let mut prev = [0i64; 3];
    for t in 1..=m {
        let mut next = [0i64; 3];
        for i in 0..d {
            next[i] = rounded_fraction(t, z[i], m);
        }
        for i in 0..d {
            let delta = next[i] - prev[i];
            let step = (2 * i) as u8 + u8::from(delta < 0);
            for _ in 0..delta.unsigned_abs() {
                steps.push(step);
            }
        }
        prev = next;
    }
    let path = LatticePath {
        dim: d,
        target: *z,
        steps,
    };
    let cert = certify_staircase(&path, b);
    Ok((path, cert))
}

pub fn certify_staircase(path: &LatticePath, b: &[f64]) -> StaircaseCertificate {
    let d = path.dim;
    let zf: Vec<f64> = path.target[..d].iter().map(|&c| c as f64).collect();
    let bn = l2(b);
    let unit: Vec<f64> = b.iter().map(|x| x / bn).collect();
    let mut max_dev_segment = 0.0f64;
    let mut max_dev_line = 0.0f64;
    let mut min_step_inner = f64::INFINITY;
    let mut p = [0i64; 3];
    let mut pf = vec![0.0; d];
    for &s in &path.steps {
        let v = step_vector(s);
        min_step_inner = min_step_inner.min(v[(s / 2) as usize] as f64 * b[(s / 2) as usize]);
        p = vadd(&p, &v);
        for i in 0..d {
            pf[i] = p[i] as f64;
        }
        max_dev_segment = max_dev_segment.max(dist_to_segment(&pf, &zf));
        max_dev_line = max_dev_line.max(dist_to_line(&pf, &unit));
    }
    let length = path.steps.len();
    let minimal_length =
        p == path.target && length as i64 == path.target.iter().map(|c| c.abs()).sum::<i64>();
    let c0 = 2.0 * (d as f64).sqrt();
    let passed = minimal_length
        && max_dev_segment <= c0
        && max_dev_line <= c0
        && (length == 0 || min_step_inner > 0.0);
    StaircaseCertificate {
        max_dev_segment,
        max_dev_line,
        min_step_inner: if length == 0 { 0.0 } else { min_step_inner },
        length,
        minimal_length,
        c0,
        passed,
    }
}

/// Shortest generator words realizing each standard basis vector in the
/// almost-abelianization (`words[i]` has displacement `(1, e_i)`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiftTable {
    pub words: Vec<Vec<Letter>>,
    /// Longest word length, the constant `C`.
    pub c: usize,
}

impl LiftTable {
    pub fn new(model: &GroupModel) -> Result<Self> {
        let d = model.dim();
        let quo = model.quotient();
        let images: Vec<(Letter, AlmostAbelianPoint)> = model
            .letters()
            .map(|l| (l, model.project(model.letter_element(l))))
            .collect();
        let mut words = Vec::with_capacity(d);
        for i in 0..d {
            let mut goal = [0i64; 3];
            goal[i] = 1;
            let goal = AlmostAbelianPoint { q: 0, n: goal };
            let start = quo.identity_point();
            let mut parent: FxHashMap<AlmostAbelianPoint, (AlmostAbelianPoint, Letter)> =
                FxHashMap::default();
            let mut depth: FxHashMap<AlmostAbelianPoint, usize> = FxHashMap::default();
            depth.insert(start, 0);
            let mut queue = VecDeque::from([start]);
            let mut found = false;
            while let Some(x) = queue.pop_front() {
                if x == goal {
                    found = true;
                    break;
                }
                let dx = depth[&x];
                if dx >= 8 {
                    continue;
                }
                for (l, img) in &images {
                    let y = quo.twisted_mul(&x, img);
                    if !depth.contains_key(&y) {
                        depth.insert(y, dx + 1);
                        parent.insert(y, (x, *l));
                        queue.push_back(y);
                    }
                }
            }
            if !found {
                return Err(NilError::Precondition(format!(
                    "no generator word of length <= 8 realizes basis vector {i}"
                )));
            }
            let mut word = Vec::new();
            let mut cur = goal;
            while cur != start {
                let (prev, l) = parent[&cur];
                word.push(l);
                cur = prev;
            }
            word.reverse();
            words.push(word);
        }
        let c = words.iter().map(|w| w.len()).max().unwrap_or(0);
        Ok(LiftTable { words, c })
    }

    fn word(&self, step: u8) -> Vec<Letter> {
        let w = &self.words[(step / 2) as usize];
        if step & 1 == 0 {
            w.clone()
        } else {
            w.iter().rev().map(|l| l.inverse()).collect()
        }
    }
}

/// Substitutes each lattice step by its word, starting at the identity.
pub fn lift_path(path: &LatticePath, model: &GroupModel, table: &LiftTable) -> Result<EdgePath> {
    if path.dim != model.dim() {
        return Err(NilError::Dimension {
            expected: model.dim(),
            got: path.dim,
        });
    }
    let fwd: Vec<Vec<Letter>> = (0..2 * path.dim as u8).map(|s| table.word(s)).collect();
    let mut letters = Vec::with_capacity(path.steps.len() * table.c.max(1));
    for &s in &path.steps {
        letters.extend_from_slice(&fwd[s as usize]);
    }
    Ok(EdgePath::new(model.identity(), letters))
}

/// Chronological loop erasure: walk the path and cut back to the earlier
/// visit whenever a vertex repeats.
pub fn loop_erase(path: &EdgePath, model: &GroupModel) -> Result<EdgePath> {
    let mut verts = vec![path.start];
    let mut letters: Vec<Letter> = Vec::with_capacity(path.letters.len());
    let mut index: FxHashMap<_, usize> = FxHashMap::default();
    index.insert(path.start, 0);
    let mut x = path.start;
    for &l in &path.letters {
        x = model.apply(&x, l)?;
        if let Some(&j) = index.get(&x) {
            for v in verts.drain(j + 1..) {
                index.remove(&v);
            }
            letters.truncate(j);
        } else {
            index.insert(x, verts.len());
            verts.push(x);
            letters.push(l);
        }
    }
    Ok(EdgePath::new(path.start, letters))
}

pub fn is_simple(path: &EdgePath, model: &GroupModel) -> Result<bool> {
    let verts = path.vertices(model)?;
    let set: rustc_hash::FxHashSet<_> = verts.iter().collect();
    Ok(set.len() == verts.len())
}

/// `K' = max_{s, q} ||D(s)^{phi(q)}||_2 + max ||eta^{phi}||_2`.
pub fn displacement_edge_bound(model: &GroupModel) -> f64 {
    let quo = model.quotient();
    let mut best = 0.0f64;
    for l in model.letters() {
        let (_, d) = model
            .displacement_between(&model.identity(), model.letter_element(l))
            .expect("generator arithmetic");
        for q in 0..quo.order() as u8 {
            best = best.max(euclid(&quo.act(q, &d)));
        }
    }
    best + quo.max_eta_norm()
}

/// `k'(M)`: smallest average progress along `u` over windows of length in
/// `[M, 2M - 1]` (which equals the minimum over all lengths `>= M`).
pub fn window_progress(paths: &[LatticePath], unit: &[f64], m: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    for path in paths {
        let d = path.dim;
        let mut prefix = Vec::with_capacity(path.steps.len() + 1);
        prefix.push(0.0);
        let mut s = 0.0;
        for &st in &path.steps {
            let v = step_vector(st);
            s += (0..d).map(|i| v[i] as f64 * unit[i]).sum::<f64>();
            prefix.push(s);
        }
        let l = path.steps.len();
        for len in m..(2 * m).min(l + 1) {
            for a in 0..=(l - len) {
                let avg = (prefix[a + len] - prefix[a]) / len as f64;
                best = Some(best.map_or(avg, |b: f64| b.min(avg)));
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityScan {
    pub k_prime: f64,
    pub m: usize,
    /// `M' = max(M, ceil((2 K' C + 1) / k'))`.
    pub m_prime: usize,
}

/// Scans window sizes `M <= max_window` and keeps the `(k', M)` pair giving
/// the smallest `M'`.
pub fn monotonicity_scan(
    paths: &[LatticePath],
    unit: &[f64],
    k_prime_c: f64,
    max_window: usize,
) -> Result<MonotonicityScan> {
    let mut best: Option<MonotonicityScan> = None;
    for m in 1..=max_window {
        if best.is_some_and(|b| b.m_prime <= m) {
            break;
        }
        let Some(k) = window_progress(paths, unit, m) else {
            break;
        };
        if k <= INNER_TOL {
            continue;
        }
        let m_prime = m.max(((2.0 * k_prime_c + 1.0) / k).ceil() as usize);
        if best.is_none_or(|b| m_prime < b.m_prime) {
            best = Some(MonotonicityScan {
                k_prime: k,
                m,
                m_prime,
            });
        }
    }
    best.ok_or_else(|| {
        NilError::Certification("monotonicity scan found no positive k'".into())
    })
}

/// Highway path in the group with its coarse-monotone segmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarsePath {
    pub level: u32,
    /// Euclidean unit direction `u`.
    pub direction: Vec<f64>,
    pub path: EdgePath,
    /// Exclusive end index (in edges) of each segment; the last equals `len`.
    pub boundaries: Vec<usize>,
    /// `<D(beta_0..beta_i) - D(beta_0..beta_{i-1}), u>` per segment.
    pub progress: Vec<f64>,
}

impl CoarsePath {
    pub fn segment_lengths(&self) -> Vec<usize> {
        let mut prev = 0;
        self.boundaries
            .iter()
            .map(|&e| {
                let l = e - prev;
                prev = e;
                l
            })
            .collect()
    }
}

/// Displacement `D` of every prefix of a path that starts at the identity.
pub fn prefix_displacements(model: &GroupModel, path: &EdgePath) -> Result<Vec<IVec>> {
    let quo = model.quotient();
    let start_inv = model.inverse(&path.start)?;
    let mut out = Vec::with_capacity(path.len() + 1);
    let mut x = path.start;
    out.push([0; 3]);
    for &l in &path.letters {
        x = model.apply(&x, l)?;
        let rel = model.multiply(&start_inv, &x)?;
        out.push(quo.untwist(&model.project(&rel)));
    }
    Ok(out)
}

fn inner_int(v: &IVec, unit: &[f64]) -> f64 {
    unit.iter().enumerate().map(|(i, u)| v[i] as f64 * u).sum()
}

/// Greedy segmentation: a segment closes at the first vertex where the
/// prefix displacement has advanced by at least 1 along `u` since the last
/// cut. The tail is merged into the final segment.
pub fn segment_coarse(
    model: &GroupModel,
    path: &EdgePath,
    level: u32,
    unit: &[f64],
    cap: usize,
) -> Result<CoarsePath> {
    let prefixes = prefix_displacements(model, path)?;
    let mut boundaries = Vec::new();
    let mut progress = Vec::new();
    let mut last = 0usize;
    for t in 1..prefixes.len() {
        let gain = inner_int(&vsub(&prefixes[t], &prefixes[last]), unit);
        if gain >= 1.0 - INNER_TOL {
            if t - last > cap {
                return Err(NilError::Certification(format!(
                    "segment of {} edges exceeds cap {cap} at level {level}",
                    t - last
                )));
            }
            boundaries.push(t);
            progress.push(gain);
            last = t;
        }
    }
    let len = path.len();
    if last < len {
        match boundaries.len() {
            k if k > 0 => {
                let begin = if k >= 2 { boundaries[k - 2] } else { 0 };
                if len - begin > cap {
                    return Err(NilError::Certification(format!(
                        "final segment of {} edges exceeds cap {cap} at level {level}",
                        len - begin
                    )));
                }
                boundaries[k - 1] = len;
                progress[k - 1] = inner_int(&vsub(&prefixes[len], &prefixes[begin]), unit);
            }
            _ => {
                if len > cap {
                    return Err(NilError::Certification(format!(
                        "path of {len} edges never advances by 1 (cap {cap})"
                    )));
                }
                boundaries.push(len);
                progress.push(inner_int(&prefixes[len], unit));
            }
        }
    }
    Ok(CoarsePath {
        level,
        direction: unit.to_vec(),
        path: path.clone(),
        boundaries,
        progress,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseCertificate {
    /// `||D(gamma) - 2^n u||_2`.
    pub endpoint_dev: f64,
    /// `|gamma| / (2^n ||u||_2)`.
    pub length_ratio: f64,
    /// Largest `||D(alpha) - proj_u D(alpha)||_2` over prefixes.
    pub max_perp_dev: f64,
    pub max_segment_len: usize,
    /// Largest `||D(beta')^{phi(q)}||_2` over subpaths of segments.
    pub max_subpath_disp: f64,
    pub min_progress: f64,
    pub eta_max: f64,
    pub simple: bool,
    pub monotone: bool,
    /// Tightest constant satisfying all four conditions (infinite when not
    /// monotone).
    pub c0_prime: f64,
}

impl CoarseCertificate {
    /// Re-checks the four conditions against a given constant and length
    /// ratio bound.
    pub fn holds(&self, c0_prime: f64, c: f64) -> [bool; 4] {
        let tol = 1e-9;
        [
            self.endpoint_dev <= c0_prime + tol,
            self.length_ratio <= c + tol,
            self.max_perp_dev <= c0_prime + tol,
            self.simple
                && self.monotone
                && self.max_segment_len as f64 <= c0_prime + tol
                && self.max_subpath_disp <= c0_prime + tol
                && self.min_progress >= 1.0 / c0_prime - tol
                && self.eta_max <= c0_prime + tol,
        ]
    }
}

pub fn certify_coarse_path(model: &GroupModel, cp: &CoarsePath) -> Result<CoarseCertificate> {
    let quo = model.quotient();
    let unit = &cp.direction;
    let prefixes = prefix_displacements(model, &cp.path)?;
    let scale = 2f64.powi(cp.level as i32);
    let end = prefixes.last().copied().unwrap_or([0; 3]);
    let endpoint_dev = {
        let diff: Vec<f64> = unit
            .iter()
            .enumerate()
            .map(|(i, u)| end[i] as f64 - scale * u)
            .collect();
        l2(&diff)
    };
    let length_ratio = cp.path.len() as f64 / (scale * l2(unit));
    let mut max_perp_dev = 0.0f64;
    for p in &prefixes {
        let v: Vec<f64> = unit.iter().enumerate().map(|(i, _)| p[i] as f64).collect();
        max_perp_dev = max_perp_dev.max(dist_to_line(&v, unit));
    }
    let verts = cp.path.vertices(model)?;
    let mut max_subpath_disp = 0.0f64;
    let mut prev = 0;
    for &e in &cp.boundaries {
        for a in prev..e {
            let a_inv = model.inverse(&verts[a])?;
            for b in a + 1..=e {
                let rel = model.multiply(&a_inv, &verts[b])?;
                let d = quo.untwist(&model.project(&rel));
                for q in 0..quo.order() as u8 {
                    max_subpath_disp = max_subpath_disp.max(euclid(&quo.act(q, &d)));
                }
            }
        }
        prev = e;
    }
    let max_segment_len = cp.segment_lengths().into_iter().max().unwrap_or(0);
    let min_progress = cp.progress.iter().copied().fold(f64::INFINITY, f64::min);
    let monotone = cp.progress.iter().all(|&p| p > 0.0);
    let eta_max = quo.max_eta_norm();
    let simple = is_simple(&cp.path, model)?;
    let c0_prime = if monotone && simple {
        [
            endpoint_dev,
            max_perp_dev,
            max_segment_len as f64,
            max_subpath_disp,
            if min_progress.is_finite() { 1.0 / min_progress } else { 0.0 },
            eta_max,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(CoarseCertificate {
        endpoint_dev,
        length_ratio,
        max_perp_dev,
        max_segment_len,
        max_subpath_disp,
        min_progress,
        eta_max,
        simple,
        monotone,
        c0_prime,
    })
}

/// Everything produced for one `(direction, level)` pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForgedPath {
    pub lattice: LatticePath,
    pub staircase: StaircaseCertificate,
    pub scan: MonotonicityScan,
    pub cap: usize,
    pub coarse: CoarsePath,
    pub certificate: CoarseCertificate,
}

/// Levels whose staircases feed the monotonicity scan.
pub const SCAN_LEVELS: u32 = 10;
pub const SCAN_MAX_WINDOW: usize = 200;

/// Full pipeline for one direction `b` and level `n`: staircase, lift, loop
/// erasure, `(k', M)` scan, greedy segmentation and certification.
pub fn forge(model: &GroupModel, table: &LiftTable, b: &[f64], level: u32) -> Result<ForgedPath> {
    let unit: Vec<f64> = {
        let r = l2(b);
        b.iter().map(|x| x / r).collect()
    };
    let z = crate::norm::lattice_target(b, level);
    let (lattice, staircase) = staircase_path(&z, b)?;
    if !staircase.passed {
        return Err(NilError::Certification(format!(
            "staircase certificate failed at level {level}: {staircase:?}"
        )));
    }
    let mut family = Vec::new();
    for m in 1..=level.min(SCAN_LEVELS) {
        if m == level {
            family.push(lattice.clone());
        } else {
            family.push(staircase_path(&crate::norm::lattice_target(b, m), b)?.0);
        }
    }
    if family.is_empty() {
        family.push(lattice.clone());
    }
    let k_prime_c = displacement_edge_bound(model) * table.c as f64;
    let scan = monotonicity_scan(&family, &unit, k_prime_c, SCAN_MAX_WINDOW)?;
    let cap = 2 * scan.m_prime * table.c.max(1);
    let lifted = lift_path(&lattice, model, table)?;
    let erased = loop_erase(&lifted, model)?;
    let coarse = segment_coarse(model, &erased, level, &unit, cap)?;
    let certificate = certify_coarse_path(model, &coarse)?;
    Ok(ForgedPath {
        lattice,
        staircase,
        scan,
        cap,
        coarse,
        certificate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::{lattice_target, BoundarySequence, Norm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn staircase_examples() {
        let (p, c) = staircase_path(&[3, 0, 0], &[1.0, 0.0]).unwrap();
        assert_eq!(p.steps, vec![0, 0, 0]);
        assert_eq!(c.max_dev_segment, 0.0);
        assert_eq!(c.length, 3);
        assert!(c.passed);

        let r = 13f64.sqrt();
        let (p, c) = staircase_path(&[3, 2, 0], &[3.0 / r, 2.0 / r]).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(*p.points().last().unwrap(), [3, 2, 0]);
        assert!(c.passed && c.minimal_length);

        let (p, c) = staircase_path(&[-4, 3, 0], &[-0.8, 0.6]).unwrap();
        assert_eq!(p.len(), 7);
        assert!(c.passed);

        assert!(matches!(
            staircase_path(&[3, -2, 0], &[0.8, 0.6]),
            Err(NilError::Precondition(_))
        ));
    }

    #[test]
    fn staircases_hold_their_guarantees() {
        let norm = Norm::lp(2.0, 2).unwrap();
        let seq = BoundarySequence::new(7, 2);
        let c0 = 2.0 * 2f64.sqrt();
        let mut worst = 0.0f64;
        for k in 1..=64 {
            let b = seq.point(&norm, k);
            for n in 0..=12 {
                let z = lattice_target(&b, n);
                let (_, c) = staircase_path(&z, &b).unwrap();
                assert!(c.passed, "{c:?}");
                worst = worst.max(c.max_dev_segment).max(c.max_dev_line);
            }
        }
        assert!(worst <= c0);
        // three dimensions
        let s3 = BoundarySequence::new(1, 3);
        let n3 = Norm::lp(2.0, 3).unwrap();
        for k in 1..=16 {
            let b = s3.point(&n3, k);
            let (_, c) = staircase_path(&lattice_target(&b, 9), &b).unwrap();
            assert!(c.passed);
        }
    }

    #[test]
    fn lift_examples() {
        let z2 = GroupModel::abelian(2).unwrap();
        let t = LiftTable::new(&z2).unwrap();
        assert_eq!(t.c, 1);
        let (p, _) = staircase_path(&[2, 1, 0], &[0.8, 0.6]).unwrap();
        let lifted = lift_path(&p, &z2, &t).unwrap();
        let steps: Vec<u8> = lifted.letters.iter().map(|l| l.0).collect();
        assert_eq!(steps, p.steps);

        let h = GroupModel::heisenberg(false).unwrap();
        let t = LiftTable::new(&h).unwrap();
        let p = LatticePath {
            dim: 2,
            target: [1, 1, 0],
            steps: vec![0, 2],
        };
        let lifted = lift_path(&p, &h, &t).unwrap();
        assert_eq!(lifted.endpoint(&h).unwrap().coords(), &[1, 1, 1]);
        assert_eq!(h.displacement(&lifted).unwrap().1, [1, 1, 0]);

        let s = GroupModel::semidirect_zi().unwrap();
        let t = LiftTable::new(&s).unwrap();
        assert_eq!(t.c, 3);
        let b = [0.5f64.sqrt(), 0.5f64.sqrt()];
        let (p, _) = staircase_path(&[3, 3, 0], &b).unwrap();
        let lifted = lift_path(&p, &s, &t).unwrap();
        let end = lifted.endpoint(&s).unwrap();
        // endpoint oracle: start^-1 end projected and untwisted
        let p_end = s.project(&end);
        assert_eq!(s.quotient().untwist(&p_end), [3, 3, 0]);
        assert_eq!(s.displacement(&lifted).unwrap().1, [3, 3, 0]);
    }

    #[test]
    fn loop_erase_examples() {
        let z2 = GroupModel::abelian(2).unwrap();
        let simple = EdgePath::new(z2.identity(), vec![Letter(0), Letter(2), Letter(0)]);
        assert_eq!(loop_erase(&simple, &z2).unwrap(), simple);
        let back = EdgePath::new(z2.identity(), vec![Letter(0), Letter(1), Letter(0)]);
        assert_eq!(loop_erase(&back, &z2).unwrap().letters, vec![Letter(0)]);
    }

    #[test]
    fn loop_erase_random_heisenberg_walks() {
        let h = GroupModel::heisenberg(false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let letters: Vec<Letter> = (0..200).map(|_| Letter(rng.random_range(0..4))).collect();
            let walk = EdgePath::new(h.identity(), letters);
            let erased = loop_erase(&walk, &h).unwrap();
            assert!(is_simple(&erased, &h).unwrap());
            assert!(erased.len() <= walk.len());
            assert_eq!(erased.endpoint(&h).unwrap(), walk.endpoint(&h).unwrap());
            // subpath displacements of the erased path occur in the walk
            let wv = walk.vertices(&h).unwrap();
            let ev = erased.vertices(&h).unwrap();
            let pos: FxHashMap<_, usize> = wv.iter().enumerate().map(|(i, v)| (*v, i)).collect();
            for w in ev.windows(2) {
                assert!(pos.contains_key(&w[0]) && pos.contains_key(&w[1]));
            }
        }
    }

    #[test]
    fn edge_bound_examples() {
        assert_eq!(displacement_edge_bound(&GroupModel::abelian(2).unwrap()), 1.0);
        assert_eq!(displacement_edge_bound(&GroupModel::semidirect_zi().unwrap()), 1.0);
        assert_eq!(displacement_edge_bound(&GroupModel::heisenberg(true).unwrap()), 1.0);
    }

    #[test]
    fn edge_bound_holds_on_random_pairs() {
        for m in [
            GroupModel::abelian(2).unwrap(),
            GroupModel::heisenberg(true).unwrap(),
            GroupModel::semidirect_zi().unwrap(),
        ] {
            let kp = displacement_edge_bound(&m);
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let n = 2 * m.num_generators() as u8;
            for _ in 0..1000 {
                let a: Vec<Letter> = (0..rng.random_range(0..30)).map(|_| Letter(rng.random_range(0..n))).collect();
                let b: Vec<Letter> = (0..rng.random_range(0..=20)).map(|_| Letter(rng.random_range(0..n))).collect();
                let alpha = EdgePath::new(m.identity(), a.clone());
                let mut ab = a.clone();
                ab.extend_from_slice(&b);
                let da = m.displacement(&alpha).unwrap().1;
                let dab = m.displacement(&EdgePath::new(m.identity(), ab)).unwrap().1;
                assert!(euclid(&vsub(&dab, &da)) <= kp * b.len() as f64 + 1e-12);
            }
        }
    }

    #[test]
    fn scan_examples() {
        let (p, _) = staircase_path(&[16, 0, 0], &[1.0, 0.0]).unwrap();
        let s = monotonicity_scan(&[p], &[1.0, 0.0], 1.0, 200).unwrap();
        assert_eq!((s.k_prime, s.m), (1.0, 1));

        let u = [0.5f64.sqrt(), 0.5f64.sqrt()];
        let family: Vec<_> = (1..=8)
            .map(|n| staircase_path(&lattice_target(&u, n), &u).unwrap().0)
            .collect();
        let k2 = window_progress(&family, &u, 2).unwrap();
        assert!(k2 >= 0.5f64.sqrt() - 1e-12);

        let eps = [1.0, 0.01];
        let r = l2(&eps);
        let unit = [eps[0] / r, eps[1] / r];
        let family: Vec<_> = (1..=10)
            .map(|n| staircase_path(&lattice_target(&unit, n), &unit).unwrap().0)
            .collect();
        let s = monotonicity_scan(&family, &unit, 1.0, 200).unwrap();
        assert!(s.k_prime > 0.0 && s.m >= 1);
    }

    #[test]
    fn segmentation_examples() {
        let z2 = GroupModel::abelian(2).unwrap();
        let path = EdgePath::new(z2.identity(), vec![Letter(0); 8]);
        let cp = segment_coarse(&z2, &path, 3, &[1.0, 0.0], 4).unwrap();
        assert_eq!(cp.boundaries, (1..=8).collect::<Vec<_>>());
        assert!(cp.progress.iter().all(|&p| p == 1.0));
        let cert = certify_coarse_path(&z2, &cp).unwrap();
        assert_eq!(cert.endpoint_dev, 0.0);
        assert!(cert.holds(cert.c0_prime, 1.0).iter().all(|&x| x));

        // a reversed highway walks against its direction
        let rev = EdgePath::new(z2.identity(), vec![Letter(1); 8]);
        let cp = CoarsePath {
            level: 3,
            direction: vec![1.0, 0.0],
            path: rev,
            boundaries: (1..=8).collect(),
            progress: vec![-1.0; 8],
        };
        let cert = certify_coarse_path(&z2, &cp).unwrap();
        assert!(!cert.monotone);
        assert!(!cert.holds(100.0, 100.0)[3]);
    }

    #[test]
    fn segmentation_cap_is_enforced() {
        let z2 = GroupModel::abelian(2).unwrap();
        // e2 steps make no progress along e1
        let mut letters = vec![Letter(2); 6];
        letters.push(Letter(0));
        let path = EdgePath::new(z2.identity(), letters);
        assert!(matches!(
            segment_coarse(&z2, &path, 3, &[1.0, 0.0], 4),
            Err(NilError::Certification(_))
        ));
    }

    #[test]
    fn forged_paths_certify_for_all_models() {
        let norm = Norm::lp(2.0, 2).unwrap();
        let seq = BoundarySequence::new(0, 2);
        for (model, dirs) in [
            (GroupModel::heisenberg(false).unwrap(), 4),
            (GroupModel::semidirect_zi().unwrap(), 16),
        ] {
            let table = LiftTable::new(&model).unwrap();
            for k in 1..=dirs {
                let b = seq.point(&norm, k);
                for n in [1, 6, 10] {
                    let f = forge(&model, &table, &b, n).unwrap();
                    let c = f.certificate.c0_prime;
                    assert!(c.is_finite());
                    assert!(f.certificate.holds(c, f.certificate.length_ratio).iter().all(|&x| x));
                    assert!(f.coarse.segment_lengths().iter().all(|&l| l <= f.cap));
                }
            }
        }
        let h = GroupModel::heisenberg(false).unwrap();
        let table = LiftTable::new(&h).unwrap();
        let u = [0.5f64.sqrt(), 0.5f64.sqrt()];
        let f = forge(&h, &table, &u, 6).unwrap();
        assert!(f.coarse.progress[..f.coarse.progress.len() - 1].iter().all(|&p| p >= 1.0 - 1e-12));
    }
}
