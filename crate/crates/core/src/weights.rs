//! Resolution of edge weights from the site marks.
//!
//! Every site `x` of level `n >= 1` places the translate `x gamma_n` with
//! its table. An edge meeting several translates takes the table entry of
//! the one with the highest level, ties broken by `Z_x` and then by the
//! element encoding; an edge meeting none gets the slow weight `K`.

use std::cmp::Ordering;

use rustc_hash::FxHashMap;

use crate::error::{NilError, Result};
use crate::group::{rotate, GroupElement, Letter, ModelKind};
use crate::highway::{Construction, Highway};
use crate::marks::{FieldBox, MarkField};
use crate::region::BallRegion;

/// How one edge was resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeResolution {
    pub weight: f64,
    /// Level of the winning configuration, 0 when no configuration claims it.
    pub level: u32,
    pub winner: Option<GroupElement>,
    pub claimants: usize,
}

/// Weights of every edge slot of a region (see [`BallRegion::edge_index`]).
#[derive(Clone, Debug)]
pub struct RegionWeights {
    pub weights: Vec<f64>,
    pub levels: Vec<u8>,
    /// Number of configurations claiming each edge, when requested.
    pub claimants: Option<Vec<u32>>,
}

impl RegionWeights {
    /// Every edge gets weight `w` (the deterministic oracle mode).
    pub fn uniform(region: &BallRegion, w: f64) -> Self {
        RegionWeights {
            weights: vec![w; region.num_edge_slots()],
            levels: vec![0; region.num_edge_slots()],
            claimants: None,
        }
    }

    #[inline]
    pub fn weight(&self, edge: usize) -> f64 {
        self.weights[edge]
    }

    /// Fraction of in-region edges resolved by a configuration of each level.
    pub fn level_census(&self, region: &BallRegion) -> Vec<usize> {
        let mut out = vec![0usize; 64];
        for (e, ..) in region.edges() {
            out[self.levels[e] as usize] += 1;
        }
        while out.len() > 1 && *out.last().unwrap() == 0 {
            out.pop();
        }
        out
    }
}

fn compare_claims(n1: u32, z1: u64, x1: &GroupElement, n2: u32, z2: u64, x2: &GroupElement) -> Ordering {
    n1.cmp(&n2)
        .then(z1.cmp(&z2))
        .then_with(|| x1.encode().cmp(&x2.encode()))
}

fn check_level(cons: &Construction, n_max: u32) -> Result<()> {
    if n_max < 1 || n_max > cons.n_max {
        return Err(NilError::Config(format!(
            "resolution depth {n_max} outside 1..={}",
            cons.n_max
        )));
    }
    Ok(())
}

/// Whether the configuration at `p_t` claims the edge leaving along `s`,
/// and with which weight. Each edge of the shell is claimed from exactly
/// one `(t, s)`: the path edge from its tail, chords from the later vertex.
#[inline]
fn claim_weight(hw: &Highway, t: usize, s: Letter, slow: f64) -> Option<f64> {
    if t > 0 && s == hw.letters[t - 1].inverse() {
        return None;
    }
    if hw.is_chord(t, s) {
        return None;
    }
    if t < hw.len() && s == hw.letters[t] {
        Some(hw.fast_weight(t))
    } else {
        Some(slow)
    }
}

/// Resolves the single edge `(from, from * s)` by testing every
/// `x = u p_t^-1` for both endpoints `u` and every path index `t`.
pub fn resolve_edge(
    cons: &Construction,
    marks: &dyn MarkField,
    from: &GroupElement,
    s: Letter,
    n_max: u32,
) -> Result<EdgeResolution> {
    check_level(cons, n_max)?;
    let model = &cons.model;
    let to = model.apply(from, s)?;
    let slow = cons.constants.k;
    let mut best: Option<(u32, u64, GroupElement, f64)> = None;
    let mut claimants = 0;
    for n in 1..=n_max {
        let hw = cons.highway(n);
        let mut seen: FxHashMap<GroupElement, f64> = FxHashMap::default();
        let mut p = model.identity();
        for t in 0..=hw.len() {
            let p_inv = model.inverse(&p)?;
            for (u, su) in [(from, s), (&to, s.inverse())] {
                let Some(w) = claim_weight(hw, t, su, slow) else {
                    continue;
                };
                let x = model.multiply(u, &p_inv)?;
                if !marks.confirm(&x, n) {
                    continue;
                }
                if let Some(prev) = seen.insert(x, w) {
                    return Err(NilError::Integrity(format!(
                        "configuration {x:?} claims the edge twice ({prev}, {w})"
                    )));
                }
                claimants += 1;
                let z = marks.tiebreak(&x);
                let better = match &best {
                    None => true,
                    Some((bn, bz, bx, _)) => compare_claims(n, z, &x, *bn, *bz, bx) == Ordering::Greater,
                };
                if better {
                    best = Some((n, z, x, w));
                }
            }
            if t < hw.len() {
                p = model.apply(&p, hw.letters[t])?;
            }
        }
    }
    Ok(match best {
        Some((n, _, x, w)) => EdgeResolution {
            weight: w,
            level: n,
            winner: Some(x),
            claimants,
        },
        None => EdgeResolution {
            weight: slow,
            level: 0,
            winner: None,
            claimants,
        },
    })
}

/// Field boxes that together contain every `x` with `x p in R` for some
/// `p` among `ps`, where `R` is the box `[rlo, rhi]`.
fn candidate_boxes(
    kind: ModelKind,
    rlo: &[i64; 3],
    rhi: &[i64; 3],
    ps: &[GroupElement],
    column: i64,
    out: &mut Vec<FieldBox>,
) {
    out.clear();
    let bbox = |it: &mut dyn Iterator<Item = &GroupElement>| -> Option<([i64; 3], [i64; 3])> {
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        let mut any = false;
        for p in it {
            any = true;
            for i in 0..3 {
                lo[i] = lo[i].min(p.coords()[i]);
                hi[i] = hi[i].max(p.coords()[i]);
            }
        }
        any.then_some((lo, hi))
    };
    match kind {
        ModelKind::Abelian(_) => {
            let (plo, phi) = bbox(&mut ps.iter()).expect("nonempty chunk");
            out.push(FieldBox {
                lo: [rlo[0] - phi[0], rlo[1] - phi[1], rlo[2] - phi[2]],
                hi: [rhi[0] - plo[0], rhi[1] - plo[1], rhi[2] - plo[2]],
            });
        }
        ModelKind::Heisenberg => {
            // x p = (x_a + p_a, x_b + p_b + x_a p_c, x_c + p_c); field order (a, c, b)
            let (plo, phi) = bbox(&mut ps.iter()).expect("nonempty chunk");
            let (alo, ahi) = (rlo[0] - phi[0], rhi[0] - plo[0]);
            let (clo, chi) = (rlo[2] - phi[2], rhi[2] - plo[2]);
            let w = column.max(1);
            let mut a1 = alo;
            while a1 <= ahi {
                let a2 = ((a1.div_euclid(w) + 1) * w - 1).min(ahi);
                let prods = [a1 * plo[2], a1 * phi[2], a2 * plo[2], a2 * phi[2]];
                let pmin = *prods.iter().min().unwrap();
                let pmax = *prods.iter().max().unwrap();
                out.push(FieldBox {
                    lo: [a1, clo, rlo[1] - phi[1] - pmax],
                    hi: [a2, chi, rhi[1] - plo[1] - pmin],
                });
                a1 = a2 + 1;
            }
        }
        ModelKind::SemidirectZi => {
            // u p^-1 = (k_u - k_p, i^-k_p (v_u - v_p)); field order (x, y, k)
            for k in 0..4 {
                let Some((plo, phi)) = bbox(&mut ps.iter().filter(|p| p.coords()[0] == k)) else {
                    continue;
                };
                let (x1, y1) = rotate(rlo[1] - phi[1], rlo[2] - phi[2], -k);
                let (x2, y2) = rotate(rhi[1] - plo[1], rhi[2] - plo[2], -k);
                out.push(FieldBox {
                    lo: [x1.min(x2), y1.min(y2), 0],
                    hi: [x1.max(x2), y1.max(y2), 3],
                });
            }
        }
    }
}

struct Slots {
    level: Vec<u8>,
    z: Vec<u64>,
    weight: Vec<f64>,
    src: Vec<(u32, u32)>,
    claimants: Option<Vec<u32>>,
}

/// Resolves every edge of `region` with configurations up to level `n_max`.
/// Sweeps each highway in chunks, lists the sites of the right level whose
/// translate can reach the region, and lets each claim compete.
pub fn resolve_region(
    cons: &Construction,
    marks: &dyn MarkField,
    region: &BallRegion,
    n_max: u32,
    count_claimants: bool,
) -> Result<RegionWeights> {
    check_level(cons, n_max)?;
    let model = &cons.model;
    let slots = region.num_edge_slots();
    let mut st = Slots {
        level: vec![0; slots],
        z: vec![0; slots],
        weight: vec![cons.constants.k; slots],
        src: vec![(0, 0); slots],
        claimants: count_claimants.then(|| vec![0; slots]),
    };
    let (rlo, rhi) = region.bounds();
    let mut ps = Vec::with_capacity(crate::highway::CHUNK);
    let mut boxes = Vec::new();
    let mut cands = Vec::new();
    for n in 1..=n_max {
        let hw = cons.highway(n);
        for k in 0..hw.num_chunks() {
            let start = hw.chunk_vertices(model, k, &mut ps)?;
            candidate_boxes(model.kind(), &rlo, &rhi, &ps, marks.column_width(n), &mut boxes);
            cands.clear();
            for bx in &boxes {
                marks.candidates(n, bx, &mut cands);
            }
            if boxes.len() > 1 {
                cands.sort_unstable_by_key(|x| *x.coords());
                cands.dedup();
            }
            for x in &cands {
                let mut confirmed = None;
                for (j, p) in ps.iter().enumerate() {
                    let u = model.multiply(x, p)?;
                    let Some(v) = region.index_of(&u) else {
                        continue;
                    };
                    if !*confirmed.get_or_insert_with(|| marks.confirm(x, n)) {
                        break;
                    }
                    let z = marks.tiebreak(x);
                    let t = start + j;
                    for s in model.letters() {
                        let Some(w) = claim_weight(hw, t, s, cons.constants.k) else {
                            continue;
                        };
                        let Some(e) = region.edge_index(v, s) else {
                            continue;
                        };
                        offer(cons, region, &mut st, e, n, z, x, w, (v, t as u32))?;
                    }
                }
            }
        }
    }
    Ok(RegionWeights {
        weights: st.weight,
        levels: st.level,
        claimants: st.claimants,
    })
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn offer(
    cons: &Construction,
    region: &BallRegion,
    st: &mut Slots,
    e: usize,
    n: u32,
    z: u64,
    x: &GroupElement,
    w: f64,
    src: (u32, u32),
) -> Result<()> {
    if let Some(c) = st.claimants.as_mut() {
        c[e] += 1;
    }
    let cur = st.level[e] as u32;
    let wins = if cur < n {
        true
    } else if cur > n {
        false
    } else {
        match z.cmp(&st.z[e]) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => {
                // recover the incumbent site from its claim
                let model = &cons.model;
                let (v0, t0) = st.src[e];
                let p0 = cons.highway(cur).vertex(model, t0 as usize)?;
                let x0 = model.multiply(region.vertex(v0), &model.inverse(&p0)?)?;
                x.encode() > x0.encode()
            }
        }
    };
    if wins {
        st.level[e] = n as u8;
        st.z[e] = z;
        st.weight[e] = w;
        st.src[e] = src;
    }
    Ok(())
}
