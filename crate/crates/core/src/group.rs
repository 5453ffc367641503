//! Exact arithmetic for the exemplar groups: `Z^d`, the integer Heisenberg
//! group and the quarter-turn extension `<rho> x| Z[i]`.
//!
//! Every model exposes the same surface: multiplication, inverses, canonical
//! encodings, the projection onto the almost-abelianization `Q x Z^d`, the
//! right conjugation action of `Q` on `Z^d` and the section cocycle.

use std::collections::VecDeque;
use std::fmt;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{NilError, Result};

/// Largest supported rank of `N^ab_free` (and of `Z^d` models).
pub const MAX_DIM: usize = 3;

/// Integer vector in `Z^d`, padded with zeros up to [`MAX_DIM`].
pub type IVec = [i64; MAX_DIM];

pub fn vadd(a: &IVec, b: &IVec) -> IVec {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn vsub(a: &IVec, b: &IVec) -> IVec {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn vneg(a: &IVec) -> IVec {
    [-a[0], -a[1], -a[2]]
}

pub fn to_real(v: &IVec, dim: usize) -> Vec<f64> {
    v[..dim].iter().map(|&x| x as f64).collect()
}

pub fn euclid(v: &IVec) -> f64 {
    let s: i64 = v.iter().map(|x| x * x).sum();
    (s as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// `Z^d` with `1 <= d <= MAX_DIM`.
    Abelian(u8),
    /// Upper unitriangular integer matrices, coordinates `(a, b, c)` for the
    /// matrix with rows `(1, a, b)`, `(0, 1, c)`, `(0, 0, 1)`.
    Heisenberg,
    /// `Z/4 x| Z[i]`, coordinates `(k, x, y)` for `(rho^k, x + iy)`.
    SemidirectZi,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Abelian(d) => 0x10 + d,
            ModelKind::Heisenberg => 0x20,
            ModelKind::SemidirectZi => 0x30,
        }
    }

    /// Rank of `N^ab_free`.
    pub fn dim(self) -> usize {
        match self {
            ModelKind::Abelian(d) => d as usize,
            ModelKind::Heisenberg | ModelKind::SemidirectZi => 2,
        }
    }

    /// Number of stored coordinates per element.
    pub fn coord_len(self) -> usize {
        match self {
            ModelKind::Abelian(d) => d as usize,
            ModelKind::Heisenberg | ModelKind::SemidirectZi => 3,
        }
    }
}

/// A group element: model tag plus coordinates (unused slots are zero).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupElement {
    tag: u8,
    coords: [i64; 3],
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{:x}{:?}", self.tag, self.coords)
    }
}

impl GroupElement {
    pub fn new(kind: ModelKind, coords: [i64; 3]) -> Self {
        GroupElement {
            tag: kind.tag(),
            coords,
        }
    }

    pub fn tag(&self) -> u8 {
        self.tag
    }

    pub fn coords(&self) -> &[i64; 3] {
        &self.coords
    }

    pub fn is_identity(&self) -> bool {
        self.coords == [0; 3]
    }

    /// Canonical byte encoding: tag byte followed by fixed-width little-endian
    /// coordinates. Injective across all models.
    pub fn encode(&self) -> Vec<u8> {
        let n = self.coord_len();
        let mut out = Vec::with_capacity(1 + 8 * n);
        out.push(self.tag);
        for c in &self.coords[..n] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Same content as [`encode`](Self::encode), as 64-bit words for hashing.
    pub fn words(&self) -> [u64; 4] {
        [
            self.tag as u64,
            self.coords[0] as u64,
            self.coords[1] as u64,
            self.coords[2] as u64,
        ]
    }

    fn coord_len(&self) -> usize {
        match self.tag {
            t if (0x11..=0x13).contains(&t) => (t - 0x10) as usize,
            _ => 3,
        }
    }
}

/// Signed generator: `2 * index` is the generator, `2 * index + 1` its inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Letter(pub u8);

impl Letter {
    pub fn forward(generator: usize) -> Self {
        Letter((2 * generator) as u8)
    }

    pub fn backward(generator: usize) -> Self {
        Letter((2 * generator + 1) as u8)
    }

    pub fn generator(self) -> usize {
        (self.0 / 2) as usize
    }

    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    pub fn inverse(self) -> Self {
        Letter(self.0 ^ 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generator {
    pub label: String,
    pub element: GroupElement,
}

/// Point of `Gamma / [N,N]~` in the `Q x N^ab_free` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlmostAbelianPoint {
    pub q: u8,
    pub n: IVec,
}

/// Finite quotient `Q` with its right action on `Z^d` and the cocycle of the
/// chosen coset section. Matrices act on column vectors, so
/// `v^{phi(q)} = M_q v` and `M_{q1 q2} = M_{q2} M_{q1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quotient {
    order: u8,
    dim: usize,
    mul: Vec<u8>,
    inv: Vec<u8>,
    phi: Vec<[[i64; 3]; 3]>,
    eta: Vec<IVec>,
}

const IDENTITY_MATRIX: [[i64; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

impl Quotient {
    pub fn trivial(dim: usize) -> Self {
        Quotient {
            order: 1,
            dim,
            mul: vec![0],
            inv: vec![0],
            phi: vec![IDENTITY_MATRIX],
            eta: vec![[0; 3]],
        }
    }

    /// `Z/4` acting on `Z^2 = Z[i]` by multiplication with `i`, with the
    /// section `k -> (rho^k, 0)` (so the cocycle vanishes).
    pub fn quarter_turn() -> Self {
        let mut mul = vec![0u8; 16];
        for a in 0..4u8 {
            for b in 0..4u8 {
                mul[(a * 4 + b) as usize] = (a + b) % 4;
            }
        }
        let rot = |k: usize| -> [[i64; 3]; 3] {
            match k % 4 {
                0 => IDENTITY_MATRIX,
                1 => [[0, -1, 0], [1, 0, 0], [0, 0, 1]],
                2 => [[-1, 0, 0], [0, -1, 0], [0, 0, 1]],
                _ => [[0, 1, 0], [-1, 0, 0], [0, 0, 1]],
            }
        };
        Quotient {
            order: 4,
            dim: 2,
            mul,
            inv: vec![0, 3, 2, 1],
            phi: (0..4).map(rot).collect(),
            eta: vec![[0; 3]; 16],
        }
    }

    /// Arbitrary finite extension data. `mul` is the Cayley table of `Q`
    /// (row-major, identity at index 0), `phi` one matrix per element and
    /// `eta` the row-major cocycle table.
    pub fn from_tables(
        dim: usize,
        mul: Vec<u8>,
        phi: Vec<[[i64; 3]; 3]>,
        eta: Vec<IVec>,
    ) -> Result<Self> {
        let order = phi.len();
        if order == 0 || order > 255 || mul.len() != order * order || eta.len() != order * order
        {
            return Err(NilError::Precondition("inconsistent quotient tables".into()));
        }
        let mut inv = vec![u8::MAX; order];
        for a in 0..order {
            for b in 0..order {
                if mul[a * order + b] == 0 {
                    inv[a] = b as u8;
                }
            }
        }
        if inv.contains(&u8::MAX) {
            return Err(NilError::Precondition("quotient table has no inverses".into()));
        }
        Ok(Quotient {
            order: order as u8,
            dim,
            mul,
            inv,
            phi,
            eta,
        })
    }

    pub fn order(&self) -> usize {
        self.order as usize
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_trivial(&self) -> bool {
        self.order == 1
    }

    pub fn mul(&self, a: u8, b: u8) -> u8 {
        self.mul[a as usize * self.order as usize + b as usize]
    }

    pub fn inv(&self, a: u8) -> u8 {
        self.inv[a as usize]
    }

    pub fn matrix(&self, q: u8) -> &[[i64; 3]; 3] {
        &self.phi[q as usize]
    }

    pub fn eta(&self, a: u8, b: u8) -> IVec {
        self.eta[a as usize * self.order as usize + b as usize]
    }

    /// `v^{phi(q)}`.
    pub fn act(&self, q: u8, v: &IVec) -> IVec {
        let m = &self.phi[q as usize];
        let mut out = [0i64; 3];
        for (i, row) in m.iter().enumerate() {
            out[i] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
        }
        out
    }

    /// `v^{phi(q)^{-1}}`.
    pub fn act_inv(&self, q: u8, v: &IVec) -> IVec {
        self.act(self.inv(q), v)
    }

    /// Twisted product `(q1 q2, eta(q1, q2) + n1^{phi(q2)} + n2)`.
    pub fn twisted_mul(&self, x: &AlmostAbelianPoint, y: &AlmostAbelianPoint) -> AlmostAbelianPoint {
        let n = vadd(&vadd(&self.eta(x.q, y.q), &self.act(y.q, &x.n)), &y.n);
        AlmostAbelianPoint {
            q: self.mul(x.q, y.q),
            n,
        }
    }

    pub fn twisted_inv(&self, x: &AlmostAbelianPoint) -> AlmostAbelianPoint {
        // (q, n)(q^-1, m) = (1, eta(q, q^-1) + n^{phi(q^-1)} + m)
        let qi = self.inv(x.q);
        let m = vneg(&vadd(&self.eta(x.q, qi), &self.act(qi, &x.n)));
        AlmostAbelianPoint { q: qi, n: m }
    }

    pub fn identity_point(&self) -> AlmostAbelianPoint {
        AlmostAbelianPoint { q: 0, n: [0; 3] }
    }

    /// `D = n^{phi(q)^{-1}}` for `D~ = (q, n)`.
    pub fn untwist(&self, p: &AlmostAbelianPoint) -> IVec {
        self.act_inv(p.q, &p.n)
    }

    pub fn matrix_product(a: &[[i64; 3]; 3], b: &[[i64; 3]; 3]) -> [[i64; 3]; 3] {
        let mut out = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        out
    }

    /// Largest `||eta(q1,q2)^{phi(q3)}||_2` over all triples.
    pub fn max_eta_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for a in 0..self.order {
            for b in 0..self.order {
                for c in 0..self.order {
                    best = best.max(euclid(&self.act(c, &self.eta(a, b))));
                }
            }
        }
        best
    }
}

/// An edge path given by its start vertex and the signed generators it uses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgePath {
    pub start: GroupElement,
    pub letters: Vec<Letter>,
}

impl EdgePath {
    pub fn new(start: GroupElement, letters: Vec<Letter>) -> Self {
        EdgePath { start, letters }
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn endpoint(&self, model: &GroupModel) -> Result<GroupElement> {
        let mut x = self.start;
        for &l in &self.letters {
            x = model.apply(&x, l)?;
        }
        Ok(x)
    }

    /// All `len + 1` vertices in order.
    pub fn vertices(&self, model: &GroupModel) -> Result<Vec<GroupElement>> {
        let mut out = Vec::with_capacity(self.letters.len() + 1);
        let mut x = self.start;
        out.push(x);
        for &l in &self.letters {
            x = model.apply(&x, l)?;
            out.push(x);
        }
        Ok(out)
    }

    /// Same edges traversed backwards, starting at the old endpoint.
    pub fn reversed(&self, model: &GroupModel) -> Result<EdgePath> {
        let end = self.endpoint(model)?;
        Ok(EdgePath {
            start: end,
            letters: self.letters.iter().rev().map(|l| l.inverse()).collect(),
        })
    }

    /// Left translate `z * gamma`.
    pub fn translated(&self, model: &GroupModel, z: &GroupElement) -> Result<EdgePath> {
        Ok(EdgePath {
            start: model.multiply(z, &self.start)?,
            letters: self.letters.clone(),
        })
    }

    pub fn subpath(&self, model: &GroupModel, from: usize, to: usize) -> Result<EdgePath> {
        let mut x = self.start;
        for &l in &self.letters[..from] {
            x = model.apply(&x, l)?;
        }
        Ok(EdgePath {
            start: x,
            letters: self.letters[from..to].to_vec(),
        })
    }
}

/// A group model: the group, a generating set, and its almost-abelian data.
#[derive(Clone, Debug)]
pub struct GroupModel {
    kind: ModelKind,
    name: String,
    generators: Vec<Generator>,
    letter_elements: Vec<GroupElement>,
    quotient: Quotient,
}

impl GroupModel {
    /// Parse `"zd:<d>"`, `"heisenberg:XY"`, `"heisenberg:XYZ"` or `"semidirect-zi"`.
    pub fn from_name(name: &str) -> Result<Self> {
        let lower = name.trim().to_ascii_lowercase();
        if let Some(d) = lower.strip_prefix("zd:") {
            let d: usize = d
                .parse()
                .map_err(|_| NilError::Config(format!("bad dimension in {name:?}")))?;
            return Self::abelian(d);
        }
        match lower.as_str() {
            "heisenberg:xy" => Self::heisenberg(false),
            "heisenberg:xyz" => Self::heisenberg(true),
            "semidirect-zi" => Self::semidirect_zi(),
            _ => Err(NilError::Config(format!("unknown group {name:?}"))),
        }
    }

    /// `Z^d` with the standard basis.
    pub fn abelian(d: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(NilError::Config(format!("Z^d needs 1 <= d <= {MAX_DIM}")));
        }
        let kind = ModelKind::Abelian(d as u8);
        let gens = (0..d)
            .map(|i| {
                let mut c = [0i64; 3];
                c[i] = 1;
                Generator {
                    label: format!("e{}", i + 1),
                    element: GroupElement::new(kind, c),
                }
            })
            .collect();
        Self::build(kind, format!("zd:{d}"), gens)
    }

    pub fn heisenberg(with_center: bool) -> Result<Self> {
        let kind = ModelKind::Heisenberg;
        let mut gens = vec![
            Generator {
                label: "X".into(),
                element: GroupElement::new(kind, [1, 0, 0]),
            },
            Generator {
                label: "Y".into(),
                element: GroupElement::new(kind, [0, 0, 1]),
            },
        ];
        if with_center {
            gens.push(Generator {
                label: "Z".into(),
                element: GroupElement::new(kind, [0, 1, 0]),
            });
        }
        let name = if with_center { "heisenberg:XYZ" } else { "heisenberg:XY" };
        Self::build(kind, name.into(), gens)
    }

    /// `<rho> x| Z[i]` with generators `{rho, 1}`.
    pub fn semidirect_zi() -> Result<Self> {
        let kind = ModelKind::SemidirectZi;
        let gens = vec![
            Generator {
                label: "rho".into(),
                element: GroupElement::new(kind, [1, 0, 0]),
            },
            Generator {
                label: "1".into(),
                element: GroupElement::new(kind, [0, 1, 0]),
            },
        ];
        Self::build(kind, "semidirect-zi".into(), gens)
    }

    /// A model with a user-supplied generating list (coordinates in the
    /// model's native layout).
    pub fn with_generators(kind: ModelKind, gens: Vec<(String, [i64; 3])>) -> Result<Self> {
        let name = match kind {
            ModelKind::Abelian(d) => format!("zd:{d}"),
            ModelKind::Heisenberg => "heisenberg:custom".into(),
            ModelKind::SemidirectZi => "semidirect-zi:custom".into(),
        };
        let gens = gens
            .into_iter()
            .map(|(label, c)| Generator {
                label,
                element: GroupElement::new(kind, c),
            })
            .collect();
        Self::build(kind, name, gens)
    }

    fn build(kind: ModelKind, name: String, generators: Vec<Generator>) -> Result<Self> {
        if generators.is_empty() || generators.len() > 64 {
            return Err(NilError::Config("need between 1 and 64 generators".into()));
        }
        let quotient = match kind {
            ModelKind::SemidirectZi => Quotient::quarter_turn(),
            k => Quotient::trivial(k.dim()),
        };
        let mut model = GroupModel {
            kind,
            name,
            generators,
            letter_elements: Vec::new(),
            quotient,
        };
        for g in &model.generators {
            model.check_shape(&g.element)?;
        }
        let mut letters = Vec::with_capacity(2 * model.generators.len());
        for g in &model.generators {
            letters.push(g.element);
            letters.push(model.inverse(&g.element)?);
        }
        // The Cayley graph must be simple: no trivial, involutive or
        // duplicated generators.
        for (i, a) in letters.iter().enumerate() {
            if a.is_identity() {
                return Err(NilError::Config("identity is not a valid generator".into()));
            }
            for b in &letters[i + 1..] {
                if a == b {
                    return Err(NilError::Config(
                        "generators must be distinct, non-involutive and not mutually inverse"
                            .into(),
                    ));
                }
            }
        }
        model.letter_elements = letters;
        Ok(model)
    }

    fn check_shape(&self, x: &GroupElement) -> Result<()> {
        if x.tag != self.kind.tag() {
            return Err(NilError::ModelMismatch(
                format!("{:#x}", self.kind.tag()),
                format!("{:#x}", x.tag),
            ));
        }
        let ok = match self.kind {
            ModelKind::Abelian(d) => x.coords[d as usize..].iter().all(|&c| c == 0),
            ModelKind::Heisenberg => true,
            ModelKind::SemidirectZi => (0..4).contains(&x.coords[0]),
        };
        if ok {
            Ok(())
        } else {
            Err(NilError::Precondition(format!("malformed element {x:?}")))
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    /// Rank `d` of `N^ab_free`.
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn quotient(&self) -> &Quotient {
        &self.quotient
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement::new(self.kind, [0; 3])
    }

    pub fn element(&self, coords: [i64; 3]) -> Result<GroupElement> {
        let x = GroupElement::new(self.kind, coords);
        self.check_shape(&x)?;
        Ok(x)
    }

    /// Element represented by a signed generator.
    pub fn letter_element(&self, l: Letter) -> &GroupElement {
        &self.letter_elements[l.0 as usize]
    }

    pub fn letters(&self) -> impl Iterator<Item = Letter> {
        (0..self.letter_elements.len() as u8).map(Letter)
    }

    pub fn multiply(&self, x: &GroupElement, y: &GroupElement) -> Result<GroupElement> {
        if x.tag != self.kind.tag() || y.tag != self.kind.tag() {
            return Err(NilError::ModelMismatch(
                format!("{:#x}", x.tag),
                format!("{:#x}", y.tag),
            ));
        }
        let (a, b) = (&x.coords, &y.coords);
        let ov = || NilError::Overflow;
        let coords = match self.kind {
            ModelKind::Abelian(_) => [
                a[0].checked_add(b[0]).ok_or_else(ov)?,
                a[1].checked_add(b[1]).ok_or_else(ov)?,
                a[2].checked_add(b[2]).ok_or_else(ov)?,
            ],
            ModelKind::Heisenberg => {
                // (a,b,c)(a',b',c') = (a+a', b+b'+a c', c+c')
                let cross = a[0].checked_mul(b[2]).ok_or_else(ov)?;
                [
                    a[0].checked_add(b[0]).ok_or_else(ov)?,
                    a[1].checked_add(b[1])
                        .and_then(|s| s.checked_add(cross))
                        .ok_or_else(ov)?,
                    a[2].checked_add(b[2]).ok_or_else(ov)?,
                ]
            }
            ModelKind::SemidirectZi => {
                // (k,v)(k',v') = (k+k', i^{k'} v + v')
                let (rx, ry) = rotate(a[1], a[2], b[0]);
                [
                    (a[0] + b[0]) % 4,
                    rx.checked_add(b[1]).ok_or_else(ov)?,
                    ry.checked_add(b[2]).ok_or_else(ov)?,
                ]
            }
        };
        Ok(GroupElement {
            tag: x.tag,
            coords,
        })
    }

    pub fn inverse(&self, x: &GroupElement) -> Result<GroupElement> {
        if x.tag != self.kind.tag() {
            return Err(NilError::ModelMismatch(
                format!("{:#x}", self.kind.tag()),
                format!("{:#x}", x.tag),
            ));
        }
        let a = &x.coords;
        let ov = || NilError::Overflow;
        let coords = match self.kind {
            ModelKind::Abelian(_) => [
                a[0].checked_neg().ok_or_else(ov)?,
                a[1].checked_neg().ok_or_else(ov)?,
                a[2].checked_neg().ok_or_else(ov)?,
            ],
            ModelKind::Heisenberg => {
                let ac = a[0].checked_mul(a[2]).ok_or_else(ov)?;
                [-a[0], ac.checked_sub(a[1]).ok_or_else(ov)?, -a[2]]
            }
            ModelKind::SemidirectZi => {
                let k = (4 - a[0]) % 4;
                let (rx, ry) = rotate(a[1], a[2], k);
                [k, -rx, -ry]
            }
        };
        Ok(GroupElement {
            tag: x.tag,
            coords,
        })
    }

    /// `x * letter`.
    #[inline]
    pub fn apply(&self, x: &GroupElement, l: Letter) -> Result<GroupElement> {
        self.multiply(x, &self.letter_elements[l.0 as usize])
    }

    /// Image in `Q x N^ab_free` under `Gamma -> Gamma/[N,N]~`.
    pub fn project(&self, x: &GroupElement) -> AlmostAbelianPoint {
        let c = &x.coords;
        match self.kind {
            ModelKind::Abelian(_) => AlmostAbelianPoint { q: 0, n: *c },
            ModelKind::Heisenberg => AlmostAbelianPoint {
                q: 0,
                n: [c[0], c[2], 0],
            },
            // s(q) = (q, 0) and (q, 0)(0, n) = (q, n)
            ModelKind::SemidirectZi => AlmostAbelianPoint {
                q: c[0] as u8,
                n: [c[1], c[2], 0],
            },
        }
    }

    /// Coset representatives `s(q)`, indexed by `q`.
    pub fn coset_representatives(&self) -> Vec<GroupElement> {
        (0..self.quotient.order())
            .map(|q| GroupElement::new(self.kind, [q as i64, 0, 0]))
            .map(|x| if self.quotient.is_trivial() { self.identity() } else { x })
            .collect()
    }

    /// Membership in the finite-index normal subgroup `N`.
    pub fn in_normal_subgroup(&self, x: &GroupElement) -> bool {
        match self.kind {
            ModelKind::SemidirectZi => x.coords[0] == 0,
            _ => true,
        }
    }

    /// `x^ab_free` for `x` in `N`.
    pub fn abelianize(&self, x: &GroupElement) -> Option<IVec> {
        if self.in_normal_subgroup(x) {
            Some(self.project(x).n)
        } else {
            None
        }
    }

    /// All elements `x` of `N` with `x^ab_free = z` form the fiber over `z`;
    /// this returns whether the model's fiber is infinite (Heisenberg).
    pub fn has_infinite_fibers(&self) -> bool {
        self.kind == ModelKind::Heisenberg
    }

    /// Center membership (used by the center-growth census).
    pub fn is_central(&self, x: &GroupElement) -> bool {
        match self.kind {
            ModelKind::Abelian(_) => true,
            ModelKind::Heisenberg => x.coords[0] == 0 && x.coords[2] == 0,
            ModelKind::SemidirectZi => x.coords == [0, 0, 0],
        }
    }

    /// `(D~, D)` of the path from `x` to `y`.
    pub fn displacement_between(
        &self,
        x: &GroupElement,
        y: &GroupElement,
    ) -> Result<(AlmostAbelianPoint, IVec)> {
        let g = self.multiply(&self.inverse(x)?, y)?;
        let p = self.project(&g);
        Ok((p, self.quotient.untwist(&p)))
    }

    pub fn displacement(&self, path: &EdgePath) -> Result<(AlmostAbelianPoint, IVec)> {
        let end = path.endpoint(self)?;
        self.displacement_between(&path.start, &end)
    }

    /// Displacement of a concatenation evaluated term by term:
    /// `D(a1) + sum_i (D(a_{i+1}) + eta(P_i, a_{i+1})^{phi(a_{i+1})^-1})^{phi(P_i)^-1}`
    /// with `P_i = a1 ... ai`.
    pub fn displacement_expand(&self, paths: &[EdgePath]) -> Result<IVec> {
        let Some(first) = paths.first() else {
            return Ok([0; 3]);
        };
        let quo = &self.quotient;
        let mut end = first.endpoint(self)?;
        let (p0, d0) = self.displacement(first)?;
        let mut total = d0;
        let mut prefix_q = p0.q;
        for next in &paths[1..] {
            if next.start != end {
                return Err(NilError::Precondition(
                    "paths are not concatenable".into(),
                ));
            }
            end = next.endpoint(self)?;
            let (p, d) = self.displacement(next)?;
            let twisted_eta = quo.act_inv(p.q, &quo.eta(prefix_q, p.q));
            total = vadd(&total, &quo.act_inv(prefix_q, &vadd(&d, &twisted_eta)));
            prefix_q = quo.mul(prefix_q, p.q);
        }
        Ok(total)
    }

    /// Exact BFS ball `{x : |x| <= radius}` with word lengths, in BFS order.
    pub fn word_ball(&self, radius: u32, budget: usize) -> Result<Vec<(GroupElement, u32)>> {
        let mut seen: FxHashMap<GroupElement, u32> = FxHashMap::default();
        let mut order = Vec::new();
        let mut queue = VecDeque::new();
        let id = self.identity();
        seen.insert(id, 0);
        queue.push_back(id);
        while let Some(x) = queue.pop_front() {
            let r = seen[&x];
            order.push((x, r));
            if r == radius {
                continue;
            }
            for l in self.letters() {
                let y = self.apply(&x, l)?;
                if !seen.contains_key(&y) {
                    if seen.len() >= budget {
                        return Err(NilError::Resource {
                            what: format!("word ball of radius {radius}"),
                            budget,
                        });
                    }
                    seen.insert(y, r + 1);
                    queue.push_back(y);
                }
            }
        }
        Ok(order)
    }

    /// Empirical generation check: the model's basic elements must all lie in
    /// the word ball of the given radius.
    pub fn verify_generation(&self, radius: u32) -> Result<bool> {
        let ball = self.word_ball(radius, 5_000_000)?;
        let set: rustc_hash::FxHashSet<GroupElement> = ball.iter().map(|(x, _)| *x).collect();
        let basics: Vec<[i64; 3]> = match self.kind {
            ModelKind::Abelian(d) => (0..d as usize)
                .map(|i| {
                    let mut c = [0; 3];
                    c[i] = 1;
                    c
                })
                .collect(),
            ModelKind::Heisenberg => vec![[1, 0, 0], [0, 1, 0], [0, 0, 1]],
            ModelKind::SemidirectZi => vec![[1, 0, 0], [0, 1, 0]],
        };
        Ok(basics
            .into_iter()
            .all(|c| set.contains(&GroupElement::new(self.kind, c))))
    }
}

/// `i^k (x + iy)`.
#[inline]
pub fn rotate(x: i64, y: i64, k: i64) -> (i64, i64) {
    match k.rem_euclid(4) {
        0 => (x, y),
        1 => (-y, x),
        2 => (-x, -y),
        _ => (y, -x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn models() -> Vec<GroupModel> {
        vec![
            GroupModel::abelian(2).unwrap(),
            GroupModel::heisenberg(false).unwrap(),
            GroupModel::heisenberg(true).unwrap(),
            GroupModel::semidirect_zi().unwrap(),
        ]
    }

    fn random_path(model: &GroupModel, rng: &mut ChaCha8Rng, len: usize) -> EdgePath {
        let n = 2 * model.num_generators() as u8;
        let letters = (0..len).map(|_| Letter(rng.random_range(0..n))).collect();
        EdgePath::new(model.identity(), letters)
    }

    #[test]
    fn heisenberg_commutator_is_central_generator() {
        let h = GroupModel::heisenberg(false).unwrap();
        let x = h.element([1, 0, 0]).unwrap();
        let y = h.element([0, 0, 1]).unwrap();
        let xy = h.multiply(&x, &y).unwrap();
        let yx = h.multiply(&y, &x).unwrap();
        assert_eq!(xy.coords(), &[1, 1, 1]);
        assert_eq!(yx.coords(), &[1, 0, 1]);
        let comm = h.multiply(&h.inverse(&yx).unwrap(), &xy).unwrap();
        assert_eq!(comm.coords(), &[0, 1, 0]);
    }

    #[test]
    fn conjugation_by_rho_is_multiplication_by_i() {
        let g = GroupModel::semidirect_zi().unwrap();
        let rho = g.element([1, 0, 0]).unwrap();
        let v = g.element([0, 2, 5]).unwrap();
        let conj = g
            .multiply(&g.multiply(&g.inverse(&rho).unwrap(), &v).unwrap(), &rho)
            .unwrap();
        // i (2 + 5i) = -5 + 2i
        assert_eq!(conj.coords(), &[0, -5, 2]);
    }

    #[test]
    fn identity_is_neutral() {
        for m in models() {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..50 {
                let x = random_path(&m, &mut rng, 7).endpoint(&m).unwrap();
                assert_eq!(m.multiply(&x, &m.identity()).unwrap(), x);
                assert_eq!(m.multiply(&m.identity(), &x).unwrap(), x);
            }
        }
    }

    #[test]
    fn group_laws_on_radius_two_ball() {
        for m in models() {
            let ball: Vec<_> = m.word_ball(2, 10_000).unwrap().into_iter().map(|p| p.0).collect();
            for x in &ball {
                let xi = m.inverse(x).unwrap();
                assert!(m.multiply(&xi, x).unwrap().is_identity());
                for y in &ball {
                    let xy = m.multiply(x, y).unwrap();
                    for z in &ball {
                        assert_eq!(
                            m.multiply(&xy, z).unwrap(),
                            m.multiply(x, &m.multiply(y, z).unwrap()).unwrap()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn projection_is_homomorphism() {
        for m in models() {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let quo = m.quotient();
            for _ in 0..1000 {
                let x = random_path(&m, &mut rng, 9).endpoint(&m).unwrap();
                let y = random_path(&m, &mut rng, 9).endpoint(&m).unwrap();
                let lhs = m.project(&m.multiply(&x, &y).unwrap());
                let rhs = quo.twisted_mul(&m.project(&x), &m.project(&y));
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn phi_is_anti_homomorphism_and_isometric() {
        let q = Quotient::quarter_turn();
        for a in 0..4u8 {
            for b in 0..4u8 {
                let lhs = *q.matrix(q.mul(a, b));
                let rhs = Quotient::matrix_product(q.matrix(b), q.matrix(a));
                assert_eq!(lhs, rhs);
            }
            let prod = Quotient::matrix_product(q.matrix(a), q.matrix(q.inv(a)));
            assert_eq!(prod, IDENTITY_MATRIX);
            let v = [3, -7, 0];
            assert_eq!(euclid(&q.act(a, &v)), euclid(&v));
        }
    }

    #[test]
    fn projection_examples() {
        let h = GroupModel::heisenberg(false).unwrap();
        let p = h.project(&h.element([2, 7, 3]).unwrap());
        assert_eq!(p, AlmostAbelianPoint { q: 0, n: [2, 3, 0] });
        let p = h.project(&h.element([0, 1, 0]).unwrap());
        assert_eq!(p.n, [0, 0, 0]);

        // (1, 2+3i): brute-force the normal form s(q) n with n in N.
        let g = GroupModel::semidirect_zi().unwrap();
        let x = g.element([1, 2, 3]).unwrap();
        let p = g.project(&x);
        assert_eq!(p.q, 1);
        let s = g.coset_representatives()[1];
        let n_elem = g.multiply(&g.inverse(&s).unwrap(), &x).unwrap();
        assert!(g.in_normal_subgroup(&n_elem));
        assert_eq!(p.n, [n_elem.coords()[1], n_elem.coords()[2], 0]);
    }

    #[test]
    fn displacement_examples() {
        let z2 = GroupModel::abelian(2).unwrap();
        let path = EdgePath::new(z2.identity(), vec![Letter(0), Letter(2), Letter(0)]);
        assert_eq!(z2.displacement(&path).unwrap().1, [2, 1, 0]);

        let h = GroupModel::heisenberg(false).unwrap();
        // X Y X^-1 Y^-1
        let path = EdgePath::new(h.identity(), vec![Letter(0), Letter(2), Letter(1), Letter(3)]);
        assert_eq!(path.endpoint(&h).unwrap().coords(), &[0, 1, 0]);
        assert_eq!(h.displacement(&path).unwrap().1, [0, 0, 0]);
    }

    #[test]
    fn displacement_is_left_invariant() {
        for m in models() {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..200 {
                let g = random_path(&m, &mut rng, 6).endpoint(&m).unwrap();
                let z = random_path(&m, &mut rng, 6).endpoint(&m).unwrap();
                let path = EdgePath::new(g, random_path(&m, &mut rng, 8).letters);
                let moved = path.translated(&m, &z).unwrap();
                assert_eq!(m.displacement(&path).unwrap(), m.displacement(&moved).unwrap());
            }
        }
    }

    #[test]
    fn concatenation_law_matches_endpoints() {
        let m = GroupModel::semidirect_zi().unwrap();
        let quo = m.quotient();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let a = { let len = rng.random_range(0..12); random_path(&m, &mut rng, len) };
            let b_start = a.endpoint(&m).unwrap();
            let b = EdgePath::new(b_start, { let len = rng.random_range(0..12); random_path(&m, &mut rng, len) }.letters);
            let mut ab = a.clone();
            ab.letters.extend_from_slice(&b.letters);
            let (pa, da) = m.displacement(&a).unwrap();
            let (pb, db) = m.displacement(&b).unwrap();
            let (pab, dab) = m.displacement(&ab).unwrap();
            let predicted = vadd(
                &vadd(&da, &quo.act_inv(pa.q, &db)),
                &quo.act_inv(pab.q, &quo.eta(pa.q, pb.q)),
            );
            assert_eq!(predicted, dab);
        }
    }

    #[test]
    fn expansion_matches_concatenation() {
        for m in models() {
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            for _ in 0..50 {
                let mut pieces = Vec::new();
                let mut start = m.identity();
                for _ in 0..5 {
                    let p = EdgePath::new(start, { let len = rng.random_range(0..9); random_path(&m, &mut rng, len) }.letters);
                    start = p.endpoint(&m).unwrap();
                    pieces.push(p);
                }
                let whole = EdgePath::new(
                    m.identity(),
                    pieces.iter().flat_map(|p| p.letters.clone()).collect(),
                );
                assert_eq!(
                    m.displacement_expand(&pieces).unwrap(),
                    m.displacement(&whole).unwrap().1
                );
                assert_eq!(
                    m.displacement_expand(&pieces[..1]).unwrap(),
                    m.displacement(&pieces[0]).unwrap().1
                );
            }
        }
    }

    #[test]
    fn expansion_rejects_gaps() {
        let m = GroupModel::abelian(2).unwrap();
        let a = EdgePath::new(m.identity(), vec![Letter(0)]);
        let b = EdgePath::new(m.identity(), vec![Letter(0)]);
        assert!(matches!(
            m.displacement_expand(&[a, b]),
            Err(NilError::Precondition(_))
        ));
    }

    #[test]
    fn reversed_path_displacement() {
        for m in models() {
            let quo = m.quotient();
            let mut rng = ChaCha8Rng::seed_from_u64(29);
            for _ in 0..200 {
                let p = { let len = rng.random_range(0..15); random_path(&m, &mut rng, len) };
                let (tw, d) = m.displacement(&p).unwrap();
                let (_, dr) = m.displacement(&p.reversed(&m).unwrap()).unwrap();
                // D(reverse) = -D^{phi(q)}; reduces to -D when q is trivial.
                assert_eq!(dr, vneg(&quo.act(tw.q, &d)));
                if tw.q == 0 {
                    assert_eq!(dr, vneg(&d));
                }
            }
        }
    }

    /// `Z` viewed as an extension of `N = 2Z` by `Z/2`, section `{0, 1}`:
    /// `s(1) s(1) = 2 = s(0) + 1`, so `eta(1,1) = 1`.
    fn doubled_integers() -> Quotient {
        Quotient::from_tables(
            1,
            vec![0, 1, 1, 0],
            vec![IDENTITY_MATRIX; 2],
            vec![[0; 3], [0; 3], [0; 3], [1, 0, 0]],
        )
        .unwrap()
    }

    fn doubled_point(m: i64) -> AlmostAbelianPoint {
        AlmostAbelianPoint {
            q: m.rem_euclid(2) as u8,
            n: [m.div_euclid(2), 0, 0],
        }
    }

    #[test]
    fn nonzero_cocycle_arithmetic() {
        let quo = doubled_integers();
        for a in -6..6i64 {
            for b in -6..6i64 {
                let prod = quo.twisted_mul(&doubled_point(a), &doubled_point(b));
                assert_eq!(prod, doubled_point(a + b));
                for c in -3..3i64 {
                    let l = quo.twisted_mul(&prod, &doubled_point(c));
                    let r = quo.twisted_mul(&doubled_point(a), &quo.twisted_mul(&doubled_point(b), &doubled_point(c)));
                    assert_eq!(l, r);
                }
            }
            let p = doubled_point(a);
            assert_eq!(quo.twisted_mul(&quo.twisted_inv(&p), &p), quo.identity_point());
        }
        // D(ab) = D(a) + D(b) + eta(a, b): both odd picks up the carry.
        let (a, b) = (3i64, 5i64);
        let (pa, pb) = (doubled_point(a), doubled_point(b));
        let lhs = quo.untwist(&doubled_point(a + b));
        let rhs = vadd(
            &vadd(&quo.untwist(&pa), &quo.act_inv(pa.q, &quo.untwist(&pb))),
            &quo.act_inv(quo.mul(pa.q, pb.q), &quo.eta(pa.q, pb.q)),
        );
        assert_eq!(lhs, rhs);
        assert_eq!(quo.max_eta_norm(), 1.0);
    }

    #[test]
    fn word_ball_sizes() {
        let z2 = GroupModel::abelian(2).unwrap();
        assert_eq!(z2.word_ball(1, 100).unwrap().len(), 5);
        assert_eq!(z2.word_ball(2, 100).unwrap().len(), 13);
        let h = GroupModel::heisenberg(true).unwrap();
        assert_eq!(h.word_ball(1, 100).unwrap().len(), 7);
        assert!(matches!(
            h.word_ball(6, 50),
            Err(NilError::Resource { .. })
        ));
    }

    #[test]
    fn heisenberg_growth_is_quartic() {
        let h = GroupModel::heisenberg(false).unwrap();
        let ball = h.word_ball(24, 2_000_000).unwrap();
        let mut counts = vec![0usize; 25];
        for (_, r) in &ball {
            counts[*r as usize] += 1;
        }
        let mut cum = 0usize;
        let mut pts = Vec::new();
        for (r, c) in counts.iter().enumerate() {
            cum += c;
            if r >= 8 {
                pts.push(((r as f64).ln(), (cum as f64).ln()));
            }
        }
        let slope = crate::stats::ls_slope(&pts);
        assert!((3.5..=4.5).contains(&slope), "slope {slope}");
    }

    #[test]
    fn generation_and_validation() {
        for m in models() {
            assert!(m.verify_generation(4).unwrap());
        }
        let bad = GroupModel::with_generators(
            ModelKind::Abelian(2),
            vec![("a".into(), [1, 0, 0]), ("b".into(), [-1, 0, 0])],
        );
        assert!(bad.is_err());
        let partial = GroupModel::with_generators(
            ModelKind::Abelian(2),
            vec![("a".into(), [2, 0, 0]), ("b".into(), [0, 1, 0])],
        )
        .unwrap();
        assert!(!partial.verify_generation(3).unwrap());
    }

    #[test]
    fn encodings_are_injective_across_models() {
        let mut seen = std::collections::HashSet::new();
        for m in models() {
            for (x, _) in m.word_ball(3, 10_000).unwrap() {
                assert!(seen.insert((m.name().to_string(), x.encode())));
            }
        }
        let a = GroupModel::abelian(2).unwrap().identity().encode();
        let b = GroupModel::heisenberg(false).unwrap().identity().encode();
        assert_ne!(a, b);
    }

    #[test]
    fn model_mismatch_is_an_error() {
        let a = GroupModel::abelian(2).unwrap();
        let h = GroupModel::heisenberg(false).unwrap();
        assert!(matches!(
            a.multiply(&a.identity(), &h.identity()),
            Err(NilError::ModelMismatch(..))
        ));
    }

    #[test]
    fn overflow_is_an_error() {
        let h = GroupModel::heisenberg(false).unwrap();
        let x = h.element([i64::MAX / 2, 0, 0]).unwrap();
        let y = h.element([0, 0, 4]).unwrap();
        assert!(matches!(h.multiply(&x, &y), Err(NilError::Overflow)));
    }

    #[test]
    fn names_parse() {
        assert_eq!(GroupModel::from_name("zd:2").unwrap().dim(), 2);
        assert_eq!(GroupModel::from_name("heisenberg:XYZ").unwrap().num_generators(), 3);
        assert_eq!(GroupModel::from_name("semidirect-zi").unwrap().quotient().order(), 4);
        assert!(GroupModel::from_name("zd:9").is_err());
        assert!(GroupModel::from_name("free:2").is_err());
    }
}
