//! Highway configurations: one certified path per level with its edge shell
//! and weight table, plus the run constants derived from them.

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{NilError, Result};
use crate::group::{euclid, GroupElement, GroupModel, Letter};
use crate::norm::{
    choose_k_general, choose_k_simple, general_k_holds, l2, lattice_target, simple_k_holds,
    BoundarySequence, Norm,
};
use crate::paths::{
    displacement_edge_bound, forge, lift_path, staircase_path, CoarseCertificate, LiftTable,
    MonotonicityScan,
};

/// Vertices per checkpoint chunk.
pub const CHUNK: usize = 32;

/// Largest level supported in general mode (chord detection keeps every
/// highway vertex in a hash map).
pub const GENERAL_MAX_LEVEL: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Per-edge tables; needs trivial `Q` and generators projecting onto a basis.
    Simple,
    /// Per-segment tables on coarse-monotone paths.
    General,
}

impl Mode {
    /// General mode unless the model is eligible for per-edge tables and
    /// has no extra generators.
    pub fn default_for(model: &GroupModel) -> Mode {
        if simple_mode_supported(model).is_ok() && model.num_generators() == model.dim() {
            Mode::Simple
        } else {
            Mode::General
        }
    }
}

/// Per-edge tables need trivial `Q`, a single generator per basis vector
/// and every generator displacement of Euclidean length at most one.
pub fn simple_mode_supported(model: &GroupModel) -> Result<()> {
    if !model.quotient().is_trivial() {
        return Err(NilError::Config("per-edge tables need a trivial finite quotient".into()));
    }
    let table = LiftTable::new(model)?;
    if table.c != 1 {
        return Err(NilError::Config(
            "per-edge tables need generators projecting onto the standard basis".into(),
        ));
    }
    for l in model.letters() {
        let (_, d) = model.displacement_between(&model.identity(), model.letter_element(l))?;
        if euclid(&d) > 1.0 {
            return Err(NilError::Config(
                "per-edge tables need generator displacements of length <= 1".into(),
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FastTable {
    /// Weight by letter (simple mode).
    PerLetter(Vec<f64>),
    /// Weight by segment; `ends[i]` is the exclusive end edge of segment `i`.
    Segments { ends: Vec<u32>, weights: Vec<f64> },
}

/// The path `gamma_n` with its table `eta_n`.
#[derive(Clone, Debug)]
pub struct Highway {
    pub level: u32,
    /// `b_n`, a point of the unit sphere of the target norm.
    pub direction: Vec<f64>,
    pub letters: Vec<Letter>,
    pub fast: FastTable,
    checkpoints: Vec<GroupElement>,
    /// `(t, letter)` pairs whose neighbour is an earlier, non-adjacent path
    /// vertex; sorted.
    chords: Vec<(u32, u8)>,
}

impl Highway {
    fn new(
        model: &GroupModel,
        level: u32,
        direction: Vec<f64>,
        letters: Vec<Letter>,
        fast: FastTable,
        detect_chords: bool,
    ) -> Result<Self> {
        let mut checkpoints = Vec::with_capacity(letters.len() / CHUNK + 2);
        let mut x = model.identity();
        checkpoints.push(x);
        let mut index: FxHashMap<GroupElement, u32> = FxHashMap::default();
        if detect_chords {
            index.insert(x, 0);
        }
        for (t, &l) in letters.iter().enumerate() {
            x = model.apply(&x, l)?;
            if (t + 1) % CHUNK == 0 {
                checkpoints.push(x);
            }
            if detect_chords && index.insert(x, t as u32 + 1).is_some() {
                return Err(NilError::Certification(format!(
                    "highway at level {level} is not simple"
                )));
            }
        }
        let mut chords = Vec::new();
        if detect_chords {
            let mut x = model.identity();
            for t in 0..=letters.len() {
                for s in model.letters() {
                    if t > 0 && s == letters[t - 1].inverse() {
                        continue;
                    }
                    let y = model.apply(&x, s)?;
                    if let Some(&j) = index.get(&y) {
                        if (j as usize) < t {
                            chords.push((t as u32, s.0));
                        }
                    }
                }
                if t < letters.len() {
                    x = model.apply(&x, letters[t])?;
                }
            }
        }
        Ok(Highway {
            level,
            direction,
            letters,
            fast,
            checkpoints,
            chords,
        })
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn num_chunks(&self) -> usize {
        self.letters.len() / CHUNK + 1
    }

    /// Vertices `p_t` for `t` in chunk `k`, with the first index.
    pub fn chunk_vertices(&self, model: &GroupModel, k: usize, out: &mut Vec<GroupElement>) -> Result<usize> {
        out.clear();
        let start = k * CHUNK;
        let end = ((k + 1) * CHUNK).min(self.letters.len() + 1);
        let mut x = self.checkpoints[k];
        out.push(x);
        for t in start..end - 1 {
            x = model.apply(&x, self.letters[t])?;
            out.push(x);
        }
        Ok(start)
    }

    /// `p_t`.
    pub fn vertex(&self, model: &GroupModel, t: usize) -> Result<GroupElement> {
        let k = t / CHUNK;
        let mut x = self.checkpoints[k];
        for s in k * CHUNK..t {
            x = model.apply(&x, self.letters[s])?;
        }
        Ok(x)
    }

    /// Weight of the path edge from `p_t` to `p_{t+1}`.
    pub fn fast_weight(&self, t: usize) -> f64 {
        match &self.fast {
            FastTable::PerLetter(w) => w[self.letters[t].0 as usize],
            FastTable::Segments { ends, weights } => {
                weights[ends.partition_point(|&e| e as usize <= t)]
            }
        }
    }

    pub fn is_chord(&self, t: usize, s: Letter) -> bool {
        !self.chords.is_empty() && self.chords.binary_search(&(t as u32, s.0)).is_ok()
    }

    pub fn num_chords(&self) -> usize {
        self.chords.len()
    }

    /// `|E_n|`: edges meeting the path.
    pub fn shell_size(&self, degree: usize) -> usize {
        degree * (self.letters.len() + 1) - self.letters.len() - self.chords.len()
    }

    /// Sum of the fast weights along the path.
    pub fn total_fast_time(&self) -> f64 {
        (0..self.letters.len()).map(|t| self.fast_weight(t)).sum()
    }
}

/// The run's instantiation of every construction constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsBundle {
    pub mode: Mode,
    /// Inscribed Euclidean radius of the unit ball.
    pub h: f64,
    /// Slow-edge weight.
    pub k: f64,
    /// Staircase deviation bound `2 sqrt(d)`.
    pub c0: f64,
    /// Certified coarse-path constant (general mode).
    pub c0_prime: Option<f64>,
    /// Displacement per edge bound.
    pub k_prime: f64,
    /// Longest basis word in the generators.
    pub c: usize,
    /// Largest segmentation window over all levels.
    pub m_prime: usize,
    /// Lower bound on every resolved weight (general mode: the uniform
    /// bound `min_n 1 / (C0'^2 ||b_n||)`; simple mode: smallest table entry).
    pub k_lower: f64,
    /// `max_n |E_n| / 2^n`.
    pub shell_c: f64,
    /// `max_n |gamma_n| / 2^n`.
    pub length_c: f64,
    /// Additive slack of the membership invariant (`2 C0 / h` or `8 C0' / h`).
    pub slack: f64,
}

impl ConstantsBundle {
    /// Re-checks the defining inequalities.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.mode {
            Mode::Simple => simple_k_holds(self.k, self.h, self.c0),
            Mode::General => match self.c0_prime {
                Some(c) => general_k_holds(self.k, self.h, c, self.k_prime),
                None => false,
            },
        };
        if !ok || self.k_lower <= 0.0 || self.k_lower > self.k {
            return Err(NilError::Integrity(format!(
                "constants fail their defining inequalities: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Measurements recorded for one level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: u32,
    pub direction: Vec<f64>,
    pub target: [i64; 3],
    pub length: usize,
    pub staircase_deviation: f64,
    pub shell_size: usize,
    pub chords: usize,
    pub scan: Option<MonotonicityScan>,
    pub cap: Option<usize>,
    pub certificate: Option<CoarseCertificate>,
}

/// All highways of a run and the constants they certify.
#[derive(Clone, Debug)]
pub struct Construction {
    pub model: GroupModel,
    pub norm: Norm,
    pub n_max: u32,
    pub constants: ConstantsBundle,
    pub highways: Vec<Highway>,
    pub reports: Vec<LevelReport>,
}

impl Construction {
    pub fn build(
        model: &GroupModel,
        norm: &Norm,
        mode: Mode,
        n_max: u32,
        direction_seed: u64,
    ) -> Result<Self> {
        if n_max < 1 {
            return Err(NilError::Config("n_max must be at least 1".into()));
        }
        if norm.dim() != model.dim() {
            return Err(NilError::Dimension {
                expected: model.dim(),
                got: norm.dim(),
            });
        }
        let seq = BoundarySequence::new(direction_seed, model.dim());
        match mode {
            Mode::Simple => Self::build_simple(model, norm, n_max, &seq),
            Mode::General => Self::build_general(model, norm, n_max, &seq),
        }
    }

    fn build_simple(model: &GroupModel, norm: &Norm, n_max: u32, seq: &BoundarySequence) -> Result<Self> {
        simple_mode_supported(model)?;
        let table = LiftTable::new(model)?;
        let d = model.dim();
        let h = norm.inscribed_radius();
        let c0 = 2.0 * (d as f64).sqrt();
        let k = choose_k_simple(h, c0)?;
        let degree = 2 * model.num_generators();
        let mut highways = Vec::new();
        let mut reports = Vec::new();
        let mut k_lower = k;
        for n in 1..=n_max {
            let b = seq.point(norm, n as u64);
            let z = lattice_target(&b, n);
            let (lattice, cert) = staircase_path(&z, &b)?;
            if !cert.passed {
                return Err(NilError::Certification(format!(
                    "staircase certificate failed at level {n}: {cert:?}"
                )));
            }
            let bb = crate::norm::dot(&b, &b);
            let mut per_letter = vec![k; degree];
            for (i, word) in table.words.iter().enumerate() {
                let w = b[i].abs() / bb;
                per_letter[word[0].0 as usize] = w;
                per_letter[word[0].inverse().0 as usize] = w;
            }
            let path = lift_path(&lattice, model, &table)?;
            let hw = Highway::new(model, n, b.clone(), path.letters, FastTable::PerLetter(per_letter), false)?;
            for t in 0..hw.len() {
                let w = hw.fast_weight(t);
                if !(w > 0.0 && w <= k) {
                    return Err(NilError::Integrity(format!(
                        "fast weight {w} outside (0, K] at level {n}"
                    )));
                }
                k_lower = k_lower.min(w);
            }
            reports.push(LevelReport {
                level: n,
                direction: b,
                target: z,
                length: hw.len(),
                staircase_deviation: cert.max_dev_segment.max(cert.max_dev_line),
                shell_size: hw.shell_size(degree),
                chords: 0,
                scan: None,
                cap: None,
                certificate: None,
            });
            highways.push(hw);
        }
        let constants = ConstantsBundle {
            mode: Mode::Simple,
            h,
            k,
            c0,
            c0_prime: None,
            k_prime: displacement_edge_bound(model),
            c: 1,
            m_prime: 1,
            k_lower,
            shell_c: shell_constant(&reports),
            length_c: length_constant(&reports),
            slack: 2.0 * c0 / h,
        };
        constants.validate()?;
        Ok(Construction {
            model: model.clone(),
            norm: norm.clone(),
            n_max,
            constants,
            highways,
            reports,
        })
    }

    fn build_general(model: &GroupModel, norm: &Norm, n_max: u32, seq: &BoundarySequence) -> Result<Self> {
        if n_max > GENERAL_MAX_LEVEL {
            return Err(NilError::Config(format!(
                "per-segment tables support n_max <= {GENERAL_MAX_LEVEL}"
            )));
        }
        let table = LiftTable::new(model)?;
        let d = model.dim();
        let h = norm.inscribed_radius();
        let k_prime = displacement_edge_bound(model);
        let degree = 2 * model.num_generators();
        let mut forged = Vec::new();
        let mut c0_prime = model.quotient().max_eta_norm();
        for n in 1..=n_max {
            let b = seq.point(norm, n as u64);
            let f = forge(model, &table, &b, n)?;
            if !f.certificate.c0_prime.is_finite() {
                return Err(NilError::Certification(format!(
                    "coarse path at level {n} is not simple and monotone"
                )));
            }
            c0_prime = c0_prime.max(f.certificate.c0_prime);
            forged.push((b, f));
        }
        let k = choose_k_general(h, c0_prime, k_prime)?;
        let mut highways = Vec::new();
        let mut reports = Vec::new();
        let mut k_lower = f64::INFINITY;
        let mut m_prime = 0;
        for (b, f) in forged {
            let n = f.coarse.level;
            let holds = f.certificate.holds(c0_prime, f.certificate.length_ratio);
            if !holds.iter().all(|&x| x) {
                return Err(NilError::Certification(format!(
                    "coarse path at level {n} fails condition(s) {holds:?}"
                )));
            }
            let bn = l2(&b);
            k_lower = k_lower.min(1.0 / (c0_prime * c0_prime * bn));
            m_prime = m_prime.max(f.scan.m_prime);
            let lengths = f.coarse.segment_lengths();
            let weights: Vec<f64> = f
                .coarse
                .progress
                .iter()
                .zip(&lengths)
                .map(|(p, &l)| p / (bn * l as f64))
                .collect();
            let ends = f.coarse.boundaries.iter().map(|&e| e as u32).collect();
            let hw = Highway::new(
                model,
                n,
                b.clone(),
                f.coarse.path.letters.clone(),
                FastTable::Segments { ends, weights },
                true,
            )?;
            for t in 0..hw.len() {
                let w = hw.fast_weight(t);
                if !(w > 0.0 && w <= k) {
                    return Err(NilError::Integrity(format!(
                        "fast weight {w} outside (0, K] at level {n}"
                    )));
                }
            }
            reports.push(LevelReport {
                level: n,
                direction: b,
                target: lattice_target(&hw.direction, n),
                length: hw.len(),
                staircase_deviation: f.staircase.max_dev_segment.max(f.staircase.max_dev_line),
                shell_size: hw.shell_size(degree),
                chords: hw.num_chords(),
                scan: Some(f.scan),
                cap: Some(f.cap),
                certificate: Some(f.certificate),
            });
            highways.push(hw);
        }
        let constants = ConstantsBundle {
            mode: Mode::General,
            h,
            k,
            c0: 2.0 * (d as f64).sqrt(),
            c0_prime: Some(c0_prime),
            k_prime,
            c: table.c,
            m_prime,
            k_lower,
            shell_c: shell_constant(&reports),
            length_c: length_constant(&reports),
            slack: 8.0 * c0_prime / h,
        };
        constants.validate()?;
        Ok(Construction {
            model: model.clone(),
            norm: norm.clone(),
            n_max,
            constants,
            highways,
            reports,
        })
    }

    pub fn highway(&self, level: u32) -> &Highway {
        &self.highways[level as usize - 1]
    }

    pub fn truncation_bound(&self) -> f64 {
        truncation_error_bound(self.n_max, self.constants.shell_c)
    }
}

fn shell_constant(reports: &[LevelReport]) -> f64 {
    reports
        .iter()
        .map(|r| r.shell_size as f64 / 2f64.powi(r.level as i32))
        .fold(0.0, f64::max)
}

fn length_constant(reports: &[LevelReport]) -> f64 {
    reports
        .iter()
        .map(|r| r.length as f64 / 2f64.powi(r.level as i32))
        .fold(0.0, f64::max)
}

/// Per-edge probability that truncating at `n_max` changes the resolution:
/// `c * sum_{n > n_max} (2/3)^n = 3 c (2/3)^(n_max + 1)`.
pub fn truncation_error_bound(n_max: u32, shell_c: f64) -> f64 {
    3.0 * shell_c * (2.0f64 / 3.0).powi(n_max as i32 + 1)
}

/// Expected number of competing configurations per edge up to `n_max`:
/// `sum_{n <= n_max} c 2^n 3^-n`.
pub fn competition_bound(n_max: u32, shell_c: f64) -> f64 {
    (1..=n_max).map(|n| shell_c * (2.0f64 / 3.0).powi(n as i32)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z2_linf() -> (GroupModel, Norm) {
        (
            GroupModel::abelian(2).unwrap(),
            Norm::polytope(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        )
    }

    #[test]
    fn simple_tables() {
        let z2 = GroupModel::abelian(2).unwrap();
        let l2n = Norm::lp(2.0, 2).unwrap();
        let c = Construction::build(&z2, &l2n, Mode::Simple, 8, 0).unwrap();
        assert!((c.constants.k - (1.0 + 4.0 * 2f64.sqrt())).abs() < 1e-12);
        for hw in &c.highways {
            // total along the path is <z_n, b_n> / ||b_n||^2
            let z = lattice_target(&hw.direction, hw.level);
            let b = &hw.direction;
            let want = (z[0] as f64 * b[0] + z[1] as f64 * b[1]) / crate::norm::dot(b, b);
            assert!((hw.total_fast_time() - want).abs() < 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn simple_weight_example() {
        // b = (3/5, 4/5) on the Euclidean sphere
        let z2 = GroupModel::abelian(2).unwrap();
        let table = LiftTable::new(&z2).unwrap();
        let b = [0.6f64, 0.8];
        let bb = b[0] * b[0] + b[1] * b[1];
        assert_eq!(table.words[0], vec![Letter(0)]);
        assert!((b[0] / bb - 0.6).abs() < 1e-15);
        assert!((b[1] / bb - 0.8).abs() < 1e-15);
        let (lat, _) = staircase_path(&[8, 0, 0], &[1.0, 0.0]).unwrap();
        let path = lift_path(&lat, &z2, &table).unwrap();
        let hw = Highway::new(
            &z2,
            3,
            vec![1.0, 0.0],
            path.letters,
            FastTable::PerLetter(vec![1.0, 1.0, 0.0, 0.0]),
            true,
        )
        .unwrap();
        assert_eq!(hw.total_fast_time(), 8.0);
        assert_eq!(hw.num_chords(), 0);
        assert_eq!(hw.shell_size(4), 4 * 9 - 8);
    }

    #[test]
    fn shell_size_matches_enumeration() {
        let (z2, norm) = z2_linf();
        let c = Construction::build(&z2, &norm, Mode::Simple, 6, 1).unwrap();
        for hw in &c.highways {
            let mut edges = rustc_hash::FxHashSet::default();
            let mut x = z2.identity();
            for t in 0..=hw.len() {
                for l in z2.letters() {
                    let y = z2.apply(&x, l).unwrap();
                    let e = if l.is_inverse() { (y, l.generator()) } else { (x, l.generator()) };
                    edges.insert(e);
                }
                if t < hw.len() {
                    x = z2.apply(&x, hw.letters[t]).unwrap();
                }
            }
            assert_eq!(edges.len(), hw.shell_size(4));
            assert!(edges.len() as f64 <= c.constants.shell_c * 2f64.powi(hw.level as i32) + 1e-9);
        }
    }

    #[test]
    fn general_tables_respect_bounds() {
        let s = GroupModel::semidirect_zi().unwrap();
        let (_, norm) = z2_linf();
        let c = Construction::build(&s, &norm, Mode::General, 10, 0).unwrap();
        let k = &c.constants;
        assert!(general_k_holds(k.k, k.h, k.c0_prime.unwrap(), k.k_prime));
        // K re-substituted gives equality up to rounding
        let gap = k.k - 8.0 * k.c0_prime.unwrap() / k.h;
        assert!((k.k_prime / gap - k.h).abs() < 1e-9);
        for hw in &c.highways {
            let bound = 1.0 / (k.c0_prime.unwrap().powi(2) * l2(&hw.direction));
            for t in 0..hw.len() {
                let w = hw.fast_weight(t);
                assert!(w >= bound && w <= k.k);
            }
        }
        c.constants.validate().unwrap();
    }

    #[test]
    fn simple_mode_eligibility() {
        assert!(simple_mode_supported(&GroupModel::abelian(2).unwrap()).is_ok());
        assert!(simple_mode_supported(&GroupModel::heisenberg(false).unwrap()).is_ok());
        assert!(simple_mode_supported(&GroupModel::heisenberg(true).unwrap()).is_ok());
        assert!(simple_mode_supported(&GroupModel::semidirect_zi().unwrap()).is_err());
        assert_eq!(Mode::default_for(&GroupModel::heisenberg(true).unwrap()), Mode::General);
        assert_eq!(Mode::default_for(&GroupModel::heisenberg(false).unwrap()), Mode::Simple);
        assert_eq!(Mode::default_for(&GroupModel::semidirect_zi().unwrap()), Mode::General);
    }

    #[test]
    fn truncation_bound_examples() {
        let v = truncation_error_bound(20, 10.0);
        assert!((v - 30.0 * (2.0f64 / 3.0).powi(21)).abs() < 1e-15);
        assert!((v - 6.0e-3).abs() < 1e-4);
        assert!(truncation_error_bound(200, 10.0) < 1e-30);
        let ratio = truncation_error_bound(40, 3.0) / truncation_error_bound(20, 3.0);
        assert!((ratio - (2.0f64 / 3.0).powi(20)).abs() < 1e-15);
        assert!((competition_bound(1, 6.0) - 4.0).abs() < 1e-15);
    }
}
