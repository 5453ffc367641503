//! Target norms on `R^d`, the boundary sequence `b_n`, lattice targets and the
//! construction constants that depend only on the norm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{NilError, Result};
use crate::group::{IVec, Quotient};

/// Absolute tolerance on Phi-values for membership and invariance checks.
pub const PHI_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NormSpec {
    /// `l^p` norm, `1 <= p <= inf` (`"inf"` in JSON).
    Lp {
        #[serde(serialize_with = "ser_exponent", deserialize_with = "de_exponent")]
        p: f64,
    },
    /// `B = {x : |<a_j, x>| <= 1 for all j}`.
    Polytope { normals: Vec<Vec<f64>> },
}

fn ser_exponent<S: Serializer>(p: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if p.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*p)
    }
}

fn de_exponent<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(x) => Ok(x),
        Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Infinity") => Ok(f64::INFINITY),
        Raw::Text(t) => Err(serde::de::Error::custom(format!("bad exponent {t:?}"))),
    }
}

/// A validated norm of a fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    spec: NormSpec,
    dim: usize,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn matrix_rank(rows: &[Vec<f64>], dim: usize) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let mut rank = 0;
    for col in 0..dim {
        let pivot = (rank..m.len())
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()));
        let Some(p) = pivot else { break };
        if m[p][col].abs() < 1e-12 {
            continue;
        }
        m.swap(rank, p);
        for r in 0..m.len() {
            if r != rank {
                let f = m[r][col] / m[rank][col];
                for c in col..dim {
                    m[r][c] -= f * m[rank][c];
                }
            }
        }
        rank += 1;
    }
    rank
}

impl Norm {
    pub fn new(spec: NormSpec, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(NilError::Config("norm dimension must be positive".into()));
        }
        match &spec {
            NormSpec::Lp { p } => {
                if p.is_nan() || *p < 1.0 {
                    return Err(NilError::Config(format!("l^p needs p >= 1, got {p}")));
                }
            }
            NormSpec::Polytope { normals } => {
                if normals.is_empty() {
                    return Err(NilError::Config("polytope needs at least one normal".into()));
                }
                for a in normals {
                    if a.len() != dim {
                        return Err(NilError::Dimension {
                            expected: dim,
                            got: a.len(),
                        });
                    }
                    if a.iter().any(|x| !x.is_finite()) {
                        return Err(NilError::Config("non-finite facet normal".into()));
                    }
                }
                if matrix_rank(normals, dim) < dim {
                    return Err(NilError::Config(
                        "facet normals do not span R^d, unit ball is unbounded".into(),
                    ));
                }
            }
        }
        Ok(Norm { spec, dim })
    }

    pub fn lp(p: f64, dim: usize) -> Result<Self> {
        Self::new(NormSpec::Lp { p }, dim)
    }

    pub fn polytope(normals: Vec<Vec<f64>>) -> Result<Self> {
        let dim = normals.first().map_or(0, |a| a.len());
        Self::new(NormSpec::Polytope { normals }, dim)
    }

    pub fn spec(&self) -> &NormSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Phi(x)`; `x` must have exactly `dim` entries.
    pub fn minkowski(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(NilError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.phi(x))
    }

    /// Unchecked `Phi` (only the first `dim` entries of `x` are read).
    pub fn phi(&self, x: &[f64]) -> f64 {
        let x = &x[..self.dim];
        match &self.spec {
            NormSpec::Polytope { normals } => normals
                .iter()
                .map(|a| dot(a, x).abs())
                .fold(0.0, f64::max),
            NormSpec::Lp { p } => {
                if p.is_infinite() {
                    x.iter().map(|v| v.abs()).fold(0.0, f64::max)
                } else if *p == 1.0 {
                    x.iter().map(|v| v.abs()).sum()
                } else if *p == 2.0 {
                    l2(x)
                } else {
                    // Scale by the largest entry to keep powers in range.
                    let m = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    if m == 0.0 {
                        return 0.0;
                    }
                    m * x.iter().map(|v| (v.abs() / m).powf(*p)).sum::<f64>().powf(1.0 / p)
                }
            }
        }
    }

    pub fn phi_int(&self, z: &IVec) -> f64 {
        let v: Vec<f64> = z[..self.dim].iter().map(|&c| c as f64).collect();
        self.phi(&v)
    }

    /// Largest `h` with the Euclidean `h`-ball inside `B`.
    pub fn inscribed_radius(&self) -> f64 {
        match &self.spec {
            NormSpec::Polytope { normals } => {
                1.0 / normals.iter().map(|a| l2(a)).fold(0.0, f64::max)
            }
            NormSpec::Lp { p } => {
                // max of ||x||_p on the Euclidean unit sphere is d^{1/p - 1/2}
                // for p <= 2 (diagonal) and 1 for p >= 2 (axis).
                if *p <= 2.0 {
                    (self.dim as f64).powf(0.5 - 1.0 / p)
                } else {
                    1.0
                }
            }
        }
    }
}

/// Slow-edge weight for per-edge tables: `K = max(1/h, 1/h + 2 C0 / h)`.
pub fn choose_k_simple(h: f64, c0: f64) -> Result<f64> {
    if h <= 0.0 || h.is_nan() {
        return Err(NilError::Domain(format!("inscribed radius must be positive, got {h}")));
    }
    Ok((1.0 / h).max(1.0 / h + 2.0 * c0 / h))
}

/// Slow-edge weight for per-segment tables: `K = 8 C0' / h + numerator / h`,
/// where `numerator` bounds `||D(f)^phi|| + ||eta^phi||`.
pub fn choose_k_general(h: f64, c0_prime: f64, numerator: f64) -> Result<f64> {
    if h <= 0.0 || h.is_nan() {
        return Err(NilError::Domain(format!("inscribed radius must be positive, got {h}")));
    }
    Ok(8.0 * c0_prime / h + numerator / h)
}

/// Re-check `K >= 1/h` and `1 / (K - 2 C0 / h) <= h`.
pub fn simple_k_holds(k: f64, h: f64, c0: f64) -> bool {
    let rel = 1e-12 * k.max(1.0);
    let gap = k - 2.0 * c0 / h;
    k + rel >= 1.0 / h && gap > 0.0 && 1.0 / gap <= h * (1.0 + 1e-12)
}

/// Re-check `numerator / (K - 8 C0' / h) <= h`.
pub fn general_k_holds(k: f64, h: f64, c0_prime: f64, numerator: f64) -> bool {
    let gap = k - 8.0 * c0_prime / h;
    gap > 0.0 && numerator / gap <= h * (1.0 + 1e-12)
}

/// Deterministic dense sequence of points on the unit sphere of `Phi`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundarySequence {
    pub seed: u64,
    pub dim: usize,
}

const GOLDEN_FRACTION: f64 = 0.381_966_011_250_105_1; // 2 - golden ratio

impl BoundarySequence {
    pub fn new(seed: u64, dim: usize) -> Self {
        BoundarySequence { seed, dim }
    }

    /// Euclidean unit direction `u_n`.
    pub fn direction(&self, n: u64) -> Vec<f64> {
        match self.dim {
            1 => vec![if n % 2 == 1 { 1.0 } else { -1.0 }],
            2 => {
                let offset = (splitmix(self.seed) >> 11) as f64 / (1u64 << 53) as f64;
                let frac = (offset + n as f64 * GOLDEN_FRACTION).fract();
                let theta = std::f64::consts::TAU * frac;
                vec![theta.cos(), theta.sin()]
            }
            d => {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(n)));
                loop {
                    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let r = l2(&v);
                    if r > 1e-9 {
                        return v.into_iter().map(|x| x / r).collect();
                    }
                }
            }
        }
    }

    /// `b_n = u_n / Phi(u_n)`.
    pub fn point(&self, norm: &Norm, n: u64) -> Vec<f64> {
        let u = self.direction(n);
        let s = norm.phi(&u);
        u.into_iter().map(|x| x / s).collect()
    }
}

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Round to nearest, halves toward zero.
pub fn round_half_to_zero(x: f64) -> i64 {
    let f = x.floor();
    let diff = x - f;
    let r = if diff > 0.5 {
        f + 1.0
    } else if diff < 0.5 {
        f
    } else {
        x.trunc()
    };
    r as i64
}

/// Nearest lattice point to `2^n b / ||b||_2`.
pub fn lattice_target(b: &[f64], n: u32) -> IVec {
    let r = l2(b);
    let scale = (2f64).powi(n as i32) / r;
    let mut z = [0i64; 3];
    for (i, x) in b.iter().enumerate() {
        z[i] = round_half_to_zero(scale * x);
    }
    z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Invariance {
    Accept,
    Reject {
        q: u8,
        v: Vec<f64>,
        phi_v: f64,
        phi_qv: f64,
    },
}

impl Invariance {
    pub fn accepted(&self) -> bool {
        matches!(self, Invariance::Accept)
    }
}

/// Checks `Phi(v^{phi(q)}) = Phi(v)` for all `q` on facet normals, small
/// lattice vectors and seeded random directions.
pub fn check_conjugation_invariance(norm: &Norm, quotient: &Quotient) -> Result<Invariance> {
    let d = norm.dim();
    if d != quotient.dim() {
        return Err(NilError::Dimension {
            expected: quotient.dim(),
            got: d,
        });
    }
    if quotient.is_trivial() {
        return Ok(Invariance::Accept);
    }
    let mut probes: Vec<Vec<f64>> = Vec::new();
    if let NormSpec::Polytope { normals } = norm.spec() {
        probes.extend(normals.iter().cloned());
    }
    let mut z = vec![-3i64; d];
    loop {
        probes.push(z.iter().map(|&c| c as f64).collect());
        let mut i = 0;
        while i < d && z[i] == 3 {
            z[i] = -3;
            i += 1;
        }
        if i == d {
            break;
        }
        z[i] += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2b_3c4d);
    for _ in 0..1000 {
        probes.push((0..d).map(|_| StandardNormal.sample(&mut rng)).collect());
    }
    for v in probes {
        let phi_v = norm.phi(&v);
        for q in 1..quotient.order() as u8 {
            let qv = act_real(quotient, q, &v);
            let phi_qv = norm.phi(&qv);
            if (phi_v - phi_qv).abs() > PHI_TOL {
                return Ok(Invariance::Reject { q, v, phi_v, phi_qv });
            }
        }
    }
    Ok(Invariance::Accept)
}

/// `v^{phi(q)}` for a real vector.
pub fn act_real(quotient: &Quotient, q: u8, v: &[f64]) -> Vec<f64> {
    let m = quotient.matrix(q);
    (0..v.len())
        .map(|i| (0..v.len()).map(|j| m[i][j] as f64 * v[j]).sum())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexVerdict {
    /// `Phi(sum x_i / sum alpha_i)`.
    pub phi: f64,
    /// Whether every `alpha_i^{-1} x_i` lies in `B`.
    pub premises_hold: bool,
    pub member: bool,
}

/// If each `x_i / alpha_i` lies in `B`, so does `sum x_i / sum alpha_i`.
pub fn convex_combination_membership(norm: &Norm, pairs: &[(Vec<f64>, f64)]) -> Result<ConvexVerdict> {
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if pairs.iter().any(|p| p.1 < 0.0) {
        return Err(NilError::Precondition("negative weight".into()));
    }
    if total <= 0.0 {
        return Err(NilError::Domain("all weights are zero".into()));
    }
    let d = norm.dim();
    let mut sum = vec![0.0; d];
    let mut premises_hold = true;
    for (x, a) in pairs {
        if x.len() != d {
            return Err(NilError::Dimension {
                expected: d,
                got: x.len(),
            });
        }
        for i in 0..d {
            sum[i] += x[i];
        }
        let phi_x = norm.phi(x);
        premises_hold &= if *a == 0.0 { phi_x == 0.0 } else { phi_x / a <= 1.0 + PHI_TOL };
    }
    let phi = norm.phi(&sum) / total;
    Ok(ConvexVerdict {
        phi,
        premises_hold,
        member: phi <= 1.0 + PHI_TOL,
    })
}
