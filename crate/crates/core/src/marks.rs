//! Site marks `(Y_x, Z_x)`: a level `Y_x` with `P(Y = 0) = 1/2`,
//! `P(Y = n) = 3^-n`, and an independent uniform tie-breaker `Z_x`.
//!
//! Two exact realizations are provided. [`HashedMarks`] draws every site
//! independently from a keyed hash, which is simple but can only be searched
//! site by site. [`BlockMarks`] builds the same law from independent
//! Bernoulli fields, one per level, sampled block by block, so that the rare
//! high-level sites inside a huge region can be listed without visiting
//! every element.

use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rustc_hash::FxHashMap;

use crate::group::{GroupElement, GroupModel, ModelKind};
use crate::norm::splitmix;

/// Highest level represented; the top level stands for `Y >= MAX_LEVEL`.
pub const MAX_LEVEL: u32 = 32;

/// Expected number of fired sites per block.
const BLOCK_MEAN: f64 = 8.0;

const TAG_Y: u64 = 0x59;
const TAG_Z: u64 = 0x5a;
const TAG_BLOCK: u64 = 0x42;

/// Keyed hash of a list of 64-bit words.
pub fn keyed_hash(seed: u64, tag: u64, words: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(tag));
    for &w in words {
        h = splitmix(h ^ w);
    }
    h
}

fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

/// `P(Y >= n)`: 1 for `n = 0`, `(3/2) 3^-n` otherwise.
pub fn tail_probability(n: u32) -> f64 {
    if n == 0 {
        1.0
    } else {
        1.5 * 3f64.powi(-(n as i32))
    }
}

/// Inverse CDF: `Y = 0` if `u < 1/2`, else the smallest `n` with
/// `u < 1 - 3^-n / 2`.
pub fn level_from_uniform(u: f64) -> u32 {
    let mut n = 0u32;
    let mut cdf = 0.5;
    while u >= cdf && n < 64 {
        n += 1;
        cdf = 1.0 - 0.5 * 3f64.powi(-(n as i32));
    }
    n
}

/// Coordinates used to tile the group into blocks.
pub fn to_field(kind: ModelKind, x: &GroupElement) -> [i64; 3] {
    let c = x.coords();
    match kind {
        ModelKind::Abelian(_) => *c,
        ModelKind::Heisenberg => [c[0], c[2], c[1]],
        ModelKind::SemidirectZi => [c[1], c[2], c[0]],
    }
}

pub fn from_field(kind: ModelKind, f: &[i64; 3]) -> GroupElement {
    let coords = match kind {
        ModelKind::Abelian(_) => *f,
        ModelKind::Heisenberg => [f[0], f[2], f[1]],
        ModelKind::SemidirectZi => [f[2], f[0], f[1]],
    };
    GroupElement::new(kind, coords)
}

/// Inclusive box in field coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldBox {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl FieldBox {
    pub fn contains(&self, f: &[i64; 3]) -> bool {
        (0..3).all(|i| self.lo[i] <= f[i] && f[i] <= self.hi[i])
    }

    pub fn volume(&self) -> u128 {
        (0..3)
            .map(|i| (self.hi[i] - self.lo[i] + 1).max(0) as u128)
            .product()
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.hi[i] < self.lo[i])
    }
}

/// A realization of the site marks.
pub trait MarkField: Sync {
    fn kind(&self) -> ModelKind;

    /// `Y_x`.
    fn level(&self, x: &GroupElement) -> u32;

    /// `Z_x` as raw 64 bits (uniform on `[0, 1)` after scaling by `2^-64`).
    fn tiebreak(&self, x: &GroupElement) -> u64;

    /// Whether `Y_x == n`.
    fn confirm(&self, x: &GroupElement, n: u32) -> bool {
        self.level(x) == n
    }

    /// Appends a superset of `{x in bx : Y_x = n}`; callers confirm each
    /// entry. The default visits every site of the box.
    fn candidates(&self, n: u32, bx: &FieldBox, out: &mut Vec<GroupElement>) {
        let kind = self.kind();
        if bx.is_empty() {
            return;
        }
        for f0 in bx.lo[0]..=bx.hi[0] {
            for f1 in bx.lo[1]..=bx.hi[1] {
                for f2 in bx.lo[2]..=bx.hi[2] {
                    let x = from_field(kind, &[f0, f1, f2]);
                    if self.level(&x) == n {
                        out.push(x);
                    }
                }
            }
        }
    }

    /// Preferred column width when a caller splits a sheared search box.
    fn column_width(&self, _n: u32) -> i64 {
        1
    }

    /// Drops any memoized state.
    fn clear_cache(&self) {}
}

/// Independent per-site marks from a keyed hash of the element encoding.
#[derive(Clone, Debug)]
pub struct HashedMarks {
    pub seed: u64,
    kind: ModelKind,
}

impl HashedMarks {
    pub fn new(seed: u64, kind: ModelKind) -> Self {
        HashedMarks { seed, kind }
    }

    pub fn uniform(&self, x: &GroupElement) -> f64 {
        unit_interval(keyed_hash(self.seed, TAG_Y, &x.words()))
    }
}

impl MarkField for HashedMarks {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn level(&self, x: &GroupElement) -> u32 {
        level_from_uniform(self.uniform(x))
    }

    fn tiebreak(&self, x: &GroupElement) -> u64 {
        keyed_hash(self.seed, TAG_Z, &x.words())
    }
}

/// Marks seen from a translated origin: `(T_g w)(x) = w(g^-1 x)`.
pub struct TranslatedMarks<'a> {
    inner: &'a dyn MarkField,
    model: &'a GroupModel,
    g_inv: GroupElement,
}

impl<'a> TranslatedMarks<'a> {
    pub fn new(inner: &'a dyn MarkField, model: &'a GroupModel, g: &GroupElement) -> Self {
        TranslatedMarks {
            inner,
            model,
            g_inv: model.inverse(g).expect("inverse of a model element"),
        }
    }

    fn pull(&self, x: &GroupElement) -> GroupElement {
        self.model
            .multiply(&self.g_inv, x)
            .expect("translation stays in range")
    }
}

impl MarkField for TranslatedMarks<'_> {
    fn kind(&self) -> ModelKind {
        self.inner.kind()
    }

    fn level(&self, x: &GroupElement) -> u32 {
        self.inner.level(&self.pull(x))
    }

    fn tiebreak(&self, x: &GroupElement) -> u64 {
        self.inner.tiebreak(&self.pull(x))
    }
}

/// Level fields sampled in blocks. Level `n` fires independently at each
/// site with probability `q_n = 3^-n / (1 - P(Y >= n + 1))` (the top level
/// uses `P(Y >= MAX_LEVEL)`), and `Y_x` is the highest level firing at `x`.
/// This reproduces the law of `Y` exactly:
/// `P(Y = n) = q_n * prod_{m > n} (1 - q_m) = q_n * P(Y <= n) = 3^-n`.
pub struct BlockMarks {
    pub seed: u64,
    kind: ModelKind,
    rates: Vec<f64>,
    dims: Vec<[i64; 3]>,
    cache: Mutex<Vec<FxHashMap<[i64; 3], Vec<u64>>>>,
}

fn floor_div(a: i64, b: i64) -> i64 {
    a.div_euclid(b)
}

impl BlockMarks {
    pub fn new(seed: u64, kind: ModelKind) -> Self {
        let mut rates = vec![0.0; MAX_LEVEL as usize + 1];
        let mut dims = vec![[1i64; 3]; MAX_LEVEL as usize + 1];
        for n in 1..=MAX_LEVEL {
            let q = if n == MAX_LEVEL {
                tail_probability(n)
            } else {
                3f64.powi(-(n as i32)) / (1.0 - tail_probability(n + 1))
            };
            rates[n as usize] = q;
            dims[n as usize] = block_dims(kind, BLOCK_MEAN / q);
        }
        BlockMarks {
            seed,
            kind,
            rates,
            dims,
            cache: Mutex::new(vec![FxHashMap::default(); MAX_LEVEL as usize + 1]),
        }
    }

    /// Per-site firing probability of level `n`.
    pub fn rate(&self, n: u32) -> f64 {
        self.rates[n as usize]
    }

    pub fn block_dims(&self, n: u32) -> [i64; 3] {
        self.dims[n as usize]
    }

    fn sample_block(&self, n: u32, key: &[i64; 3]) -> Vec<u64> {
        let d = self.dims[n as usize];
        let vol = (d[0] * d[1] * d[2]) as u64;
        let h = keyed_hash(
            self.seed,
            TAG_BLOCK,
            &[n as u64, key[0] as u64, key[1] as u64, key[2] as u64],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let count = Binomial::new(vol, self.rates[n as usize])
            .expect("valid binomial parameters")
            .sample(&mut rng);
        let mut idx: Vec<u64> = if count == 0 {
            Vec::new()
        } else {
            rand::seq::index::sample(&mut rng, vol as usize, count as usize)
                .into_iter()
                .map(|i| i as u64)
                .collect()
        };
        idx.sort_unstable();
        idx
    }

    fn with_block<R>(&self, n: u32, key: &[i64; 3], f: impl FnOnce(&[u64]) -> R) -> R {
        let mut cache = self.cache.lock().expect("mark cache poisoned");
        let level = &mut cache[n as usize];
        if !level.contains_key(key) {
            let block = self.sample_block(n, key);
            level.insert(*key, block);
        }
        f(&level[key])
    }

    /// Whether level `n` fires at field coordinates `f`.
    pub fn fires(&self, n: u32, f: &[i64; 3]) -> bool {
        let d = self.dims[n as usize];
        let key = [floor_div(f[0], d[0]), floor_div(f[1], d[1]), floor_div(f[2], d[2])];
        let off = [f[0] - key[0] * d[0], f[1] - key[1] * d[1], f[2] - key[2] * d[2]];
        let lin = (off[0] + d[0] * (off[1] + d[1] * off[2])) as u64;
        self.with_block(n, &key, |b| b.binary_search(&lin).is_ok())
    }

    /// All sites inside `bx` where level `n` fires.
    pub fn fired_in(&self, n: u32, bx: &FieldBox, out: &mut Vec<[i64; 3]>) {
        if bx.is_empty() {
            return;
        }
        let d = self.dims[n as usize];
        let klo = [
            floor_div(bx.lo[0], d[0]),
            floor_div(bx.lo[1], d[1]),
            floor_div(bx.lo[2], d[2]),
        ];
        let khi = [
            floor_div(bx.hi[0], d[0]),
            floor_div(bx.hi[1], d[1]),
            floor_div(bx.hi[2], d[2]),
        ];
        for k0 in klo[0]..=khi[0] {
            for k1 in klo[1]..=khi[1] {
                for k2 in klo[2]..=khi[2] {
                    let key = [k0, k1, k2];
                    self.with_block(n, &key, |b| {
                        for &lin in b {
                            let lin = lin as i64;
                            let f = [
                                k0 * d[0] + lin % d[0],
                                k1 * d[1] + (lin / d[0]) % d[1],
                                k2 * d[2] + lin / (d[0] * d[1]),
                            ];
                            if bx.contains(&f) {
                                out.push(f);
                            }
                        }
                    });
                }
            }
        }
    }

    fn fired_above(&self, f: &[i64; 3], n: u32) -> bool {
        (n + 1..=MAX_LEVEL).rev().any(|m| self.fires(m, f))
    }
}

/// Block side lengths with volume close to `target`, shaped to the model.
fn block_dims(kind: ModelKind, target: f64) -> [i64; 3] {
    let side = |x: f64| -> i64 { (x.max(1.0).round() as i64).clamp(1, 1 << 40) };
    match kind {
        ModelKind::Abelian(d) => {
            let s = side(target.powf(1.0 / d as f64));
            let mut out = [1i64; 3];
            for o in out.iter_mut().take(d as usize) {
                *o = s;
            }
            out
        }
        ModelKind::Heisenberg => {
            // Candidate sets are thin sheared slabs in the central
            // coordinate, so keep the horizontal sides short.
            let s = side(target.powf(0.25)).min(64);
            [s, s, side(target / (s * s) as f64)]
        }
        ModelKind::SemidirectZi => {
            let s = side((target / 4.0).sqrt());
            [s, s, 4]
        }
    }
}

impl MarkField for BlockMarks {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn level(&self, x: &GroupElement) -> u32 {
        let f = to_field(self.kind, x);
        (1..=MAX_LEVEL).rev().find(|&m| self.fires(m, &f)).unwrap_or(0)
    }

    fn tiebreak(&self, x: &GroupElement) -> u64 {
        keyed_hash(self.seed, TAG_Z, &x.words())
    }

    fn confirm(&self, x: &GroupElement, n: u32) -> bool {
        let f = to_field(self.kind, x);
        if n == 0 {
            return !self.fired_above(&f, 0);
        }
        self.fires(n, &f) && !self.fired_above(&f, n)
    }

    fn candidates(&self, n: u32, bx: &FieldBox, out: &mut Vec<GroupElement>) {
        let mut fs = Vec::new();
        self.fired_in(n, bx, &mut fs);
        out.extend(fs.iter().map(|f| from_field(self.kind, f)));
    }

    fn column_width(&self, n: u32) -> i64 {
        self.dims[n as usize][0]
    }

    fn clear_cache(&self) {
        let mut cache = self.cache.lock().expect("mark cache poisoned");
        for level in cache.iter_mut() {
            level.clear();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_examples() {
        assert_eq!(level_from_uniform(0.40), 0);
        assert_eq!(level_from_uniform(0.60), 1);
        assert_eq!(level_from_uniform(0.95), 3);
        assert_eq!(level_from_uniform(0.5), 1);
        assert_eq!(level_from_uniform(0.0), 0);
    }

    #[test]
    fn level_rates_telescope() {
        let m = BlockMarks::new(0, ModelKind::Abelian(2));
        assert!((m.rate(1) - 0.4).abs() < 1e-15);
        // P(Y = n) = q_n prod_{m>n}(1 - q_m)
        for n in 1..MAX_LEVEL {
            let mut p = m.rate(n);
            for k in n + 1..=MAX_LEVEL {
                p *= 1.0 - m.rate(k);
            }
            let want = 3f64.powi(-(n as i32));
            assert!((p / want - 1.0).abs() < 1e-12, "level {n}");
        }
    }

    fn chi_square(counts: &[usize], total: usize) -> f64 {
        // bins 0..=4 and ">= 5"
        let mut probs = vec![0.5];
        for n in 1..=4 {
            probs.push(3f64.powi(-n));
        }
        probs.push(tail_probability(5));
        counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| {
                let e = p * total as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum()
    }

    fn census(field: &dyn MarkField, model: &GroupModel, n: i64) -> (Vec<usize>, usize) {
        let mut counts = vec![0usize; 6];
        let mut total = 0;
        for a in 0..n {
            for b in 0..n {
                let x = model.element([a, b, 0]).unwrap();
                counts[(field.level(&x) as usize).min(5)] += 1;
                total += 1;
            }
        }
        (counts, total)
    }

    #[test]
    fn hashed_marks_follow_the_law() {
        let z2 = GroupModel::abelian(2).unwrap();
        let f = HashedMarks::new(11, z2.kind());
        let (counts, total) = census(&f, &z2, 300);
        // 5 dof, 99.9% quantile 20.5
        assert!(chi_square(&counts, total) < 20.5, "{counts:?}");
        let x = z2.element([3, 4, 0]).unwrap();
        assert_eq!(f.level(&x), HashedMarks::new(11, z2.kind()).level(&x));
        assert_eq!(f.tiebreak(&x), HashedMarks::new(11, z2.kind()).tiebreak(&x));
    }

    #[test]
    fn block_marks_follow_the_law() {
        let z2 = GroupModel::abelian(2).unwrap();
        let f = BlockMarks::new(5, z2.kind());
        let (counts, total) = census(&f, &z2, 300);
        assert!(chi_square(&counts, total) < 20.5, "{counts:?}");
    }

    #[test]
    fn block_marks_are_uncorrelated_between_neighbours() {
        let z2 = GroupModel::abelian(2).unwrap();
        let f = BlockMarks::new(9, z2.kind());
        let n = 400;
        let mut both = 0usize;
        let mut single = 0usize;
        for a in 0..n {
            for b in 0..n {
                let x = f.level(&z2.element([a, b, 0]).unwrap()) > 0;
                let y = f.level(&z2.element([a + 1, b, 0]).unwrap()) > 0;
                single += usize::from(x);
                both += usize::from(x && y);
            }
        }
        let total = (n * n) as f64;
        let p = single as f64 / total;
        let pair = both as f64 / total;
        // independence: P(both) = p^2 up to sampling error
        assert!((pair - p * p).abs() < 0.01, "p {p} pair {pair}");
    }

    #[test]
    fn block_enumeration_matches_pointwise_levels() {
        for model in [
            GroupModel::abelian(2).unwrap(),
            GroupModel::heisenberg(false).unwrap(),
            GroupModel::semidirect_zi().unwrap(),
        ] {
            let f = BlockMarks::new(3, model.kind());
            let kind = model.kind();
            let bx = match kind {
                ModelKind::SemidirectZi => FieldBox { lo: [-9, -7, 0], hi: [12, 8, 3] },
                _ => FieldBox { lo: [-9, -7, -30], hi: [12, 8, 25] },
            };
            for n in 1..=4 {
                let mut listed = Vec::new();
                f.candidates(n, &bx, &mut listed);
                let listed: Vec<_> = listed.into_iter().filter(|x| f.confirm(x, n)).collect();
                let mut scanned = Vec::new();
                for f0 in bx.lo[0]..=bx.hi[0] {
                    for f1 in bx.lo[1]..=bx.hi[1] {
                        for f2 in bx.lo[2]..=bx.hi[2] {
                            let x = from_field(kind, &[f0, f1, f2]);
                            if f.level(&x) == n {
                                scanned.push(x);
                            }
                        }
                    }
                }
                let mut a = listed.clone();
                a.sort();
                scanned.sort();
                assert_eq!(a, scanned);
            }
        }
    }

    #[test]
    fn field_coordinates_round_trip() {
        for model in [
            GroupModel::abelian(3).unwrap(),
            GroupModel::heisenberg(false).unwrap(),
            GroupModel::semidirect_zi().unwrap(),
        ] {
            for (x, _) in model.word_ball(3, 10_000).unwrap() {
                assert_eq!(from_field(model.kind(), &to_field(model.kind(), &x)), x);
            }
        }
    }

    #[test]
    fn translation_view() {
        let z2 = GroupModel::abelian(2).unwrap();
        let f = HashedMarks::new(1, z2.kind());
        let id = z2.identity();
        let t = TranslatedMarks::new(&f, &z2, &id);
        let g = z2.element([1, 0, 0]).unwrap();
        let tg = TranslatedMarks::new(&f, &z2, &g);
        for (x, _) in z2.word_ball(4, 1000).unwrap() {
            assert_eq!(t.level(&x), f.level(&x));
            let gx = z2.multiply(&g, &x).unwrap();
            assert_eq!(tg.level(&gx), f.level(&x));
            assert_eq!(tg.tiebreak(&gx), f.tiebreak(&x));
        }
    }
}
