//! Finite word balls of the Cayley graph with explicit adjacency.

use std::collections::VecDeque;

use rustc_hash::FxHashMap;

use crate::error::{NilError, Result};
use crate::group::{GroupElement, GroupModel, Letter};

pub const NONE: u32 = u32::MAX;

/// The ball `{x : |x| <= radius}` with word lengths and neighbour indices.
/// Undirected edges are indexed by `vertex * |S| + generator` for the
/// forward orientation `(x, x s)`.
#[derive(Clone, Debug)]
pub struct BallRegion {
    pub radius: u32,
    vertices: Vec<GroupElement>,
    lengths: Vec<u32>,
    index: FxHashMap<GroupElement, u32>,
    nbr: Vec<u32>,
    degree: usize,
    gens: usize,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl BallRegion {
    /// BFS enumeration; fails with a resource error beyond `budget` vertices.
    pub fn grow(model: &GroupModel, radius: u32, budget: usize) -> Result<Self> {
        let degree = 2 * model.num_generators();
        let mut vertices = Vec::new();
        let mut lengths = Vec::new();
        let mut index: FxHashMap<GroupElement, u32> = FxHashMap::default();
        let id = model.identity();
        index.insert(id, 0);
        vertices.push(id);
        lengths.push(0);
        let mut queue = VecDeque::from([0u32]);
        while let Some(v) = queue.pop_front() {
            let r = lengths[v as usize];
            if r == radius {
                continue;
            }
            let x = vertices[v as usize];
            for l in model.letters() {
                let y = model.apply(&x, l)?;
                if !index.contains_key(&y) {
                    if vertices.len() >= budget {
                        return Err(NilError::Resource {
                            what: format!("ball of radius {radius}"),
                            budget,
                        });
                    }
                    let i = vertices.len() as u32;
                    index.insert(y, i);
                    vertices.push(y);
                    lengths.push(r + 1);
                    queue.push_back(i);
                }
            }
        }
        let mut nbr = vec![NONE; vertices.len() * degree];
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (v, x) in vertices.iter().enumerate() {
            for (i, &c) in x.coords().iter().enumerate() {
                lo[i] = lo[i].min(c);
                hi[i] = hi[i].max(c);
            }
            for l in model.letters() {
                let y = model.apply(x, l)?;
                if let Some(&j) = index.get(&y) {
                    nbr[v * degree + l.0 as usize] = j;
                }
            }
        }
        Ok(BallRegion {
            radius,
            vertices,
            lengths,
            index,
            nbr,
            degree,
            gens: degree / 2,
            lo,
            hi,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_generators(&self) -> usize {
        self.gens
    }

    pub fn vertex(&self, v: u32) -> &GroupElement {
        &self.vertices[v as usize]
    }

    pub fn vertices(&self) -> &[GroupElement] {
        &self.vertices
    }

    pub fn length(&self, v: u32) -> u32 {
        self.lengths[v as usize]
    }

    pub fn is_boundary(&self, v: u32) -> bool {
        self.lengths[v as usize] == self.radius
    }

    /// Coordinate bounding box of the region.
    pub fn bounds(&self) -> ([i64; 3], [i64; 3]) {
        (self.lo, self.hi)
    }

    #[inline]
    pub fn in_bounds(&self, x: &GroupElement) -> bool {
        let c = x.coords();
        (0..3).all(|i| self.lo[i] <= c[i] && c[i] <= self.hi[i])
    }

    #[inline]
    pub fn index_of(&self, x: &GroupElement) -> Option<u32> {
        if !self.in_bounds(x) {
            return None;
        }
        self.index.get(x).copied()
    }

    /// Neighbour of `v` across `letter`, if it lies in the region.
    #[inline]
    pub fn neighbor(&self, v: u32, l: Letter) -> Option<u32> {
        let j = self.nbr[v as usize * self.degree + l.0 as usize];
        (j != NONE).then_some(j)
    }

    /// Index of the undirected edge `(v, v l)` or `None` if it leaves the region.
    #[inline]
    pub fn edge_index(&self, v: u32, l: Letter) -> Option<usize> {
        let w = self.neighbor(v, l)?;
        let start = if l.is_inverse() { w } else { v };
        Some(start as usize * self.gens + l.generator())
    }

    pub fn num_edge_slots(&self) -> usize {
        self.vertices.len() * self.gens
    }

    /// Iterates `(edge index, from, to, generator)` over all edges inside
    /// the region.
    pub fn edges(&self) -> impl Iterator<Item = (usize, u32, u32, usize)> + '_ {
        (0..self.vertices.len() as u32).flat_map(move |v| {
            (0..self.gens).filter_map(move |g| {
                let w = self.neighbor(v, Letter::forward(g))?;
                Some((v as usize * self.gens + g, v, w, g))
            })
        })
    }
}
