//! Lattices on the probability simplex for N in {1, 2, 3} types.
//!
//! The conditional law of the inside information lives on the open simplex;
//! grid solvers discretize it with a uniform lattice of spacing `h = 1/(m+1)`
//! that includes the closed boundary. Interior nodes carry the PDE dynamics;
//! faces and vertices carry the degenerate (frozen-coordinate) dynamics and
//! double as ghost values for central stencils.

use crate::scalar::Real;

/// Normalize `x` to exact unit mass: divide by the sum, then replace the
/// last component by the complement of the left-to-right prefix sum. The
/// prefix lies in [0, 1], so re-summing in index order yields exactly one;
/// the adjustment itself is below one ulp of the total.
pub(crate) fn pin_unit_mass<F: Real>(x: &mut [F]) {
    let n = x.len();
    if n == 1 {
        x[0] = F::one();
        return;
    }
    let sum: F = x.iter().copied().sum();
    let mut prefix = F::zero();
    for v in x.iter_mut().take(n - 1) {
        *v = *v / sum;
        prefix += *v;
    }
    let complement = F::one() - prefix;
    // Positivity guard for the pathological case of a sub-ulp component.
    x[n - 1] = if complement > F::zero() {
        complement
    } else {
        F::min_positive_value()
    };
}

/// Classification of a lattice node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    /// Exactly one coordinate vanishes; the payload is that coordinate.
    Face(usize),
    /// All mass on one type; the payload is that type.
    Vertex(usize),
}

/// Uniform lattice on the simplex with `m` interior nodes per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexGrid<F> {
    pub n_types: usize,
    pub interior_per_dim: usize,
    /// Lattice spacing `1/(m+1)`; zero for the degenerate N=1 grid.
    pub h: F,
    coords: Vec<Vec<F>>,
    kinds: Vec<NodeKind>,
    /// For N=3: flat index offsets per lattice row.
    row_offsets: Vec<usize>,
}

impl<F: Real> SimplexGrid<F> {
    pub fn new(n_types: usize, interior_per_dim: usize) -> Self {
        assert!(
            (1..=3).contains(&n_types),
            "simplex grid supports N in {{1,2,3}}"
        );
        let m = interior_per_dim;
        match n_types {
            1 => Self {
                n_types,
                interior_per_dim: 1,
                h: F::zero(),
                coords: vec![vec![F::one()]],
                kinds: vec![NodeKind::Vertex(0)],
                row_offsets: vec![],
            },
            2 => {
                assert!(m >= 2, "need at least 2 interior nodes");
                let h = F::one() / F::from_usize(m + 1).unwrap();
                let mut coords = Vec::with_capacity(m + 2);
                let mut kinds = Vec::with_capacity(m + 2);
                for j in 0..=m + 1 {
                    let x1 = F::from_usize(j).unwrap() * h;
                    coords.push(vec![x1, F::one() - x1]);
                    kinds.push(if j == 0 {
                        NodeKind::Vertex(1)
                    } else if j == m + 1 {
                        NodeKind::Vertex(0)
                    } else {
                        NodeKind::Interior
                    });
                }
                Self {
                    n_types,
                    interior_per_dim: m,
                    h,
                    coords,
                    kinds,
                    row_offsets: vec![],
                }
            }
            3 => {
                assert!(m >= 2, "need at least 2 interior nodes");
                let h = F::one() / F::from_usize(m + 1).unwrap();
                let mut coords = Vec::new();
                let mut kinds = Vec::new();
                let mut row_offsets = Vec::with_capacity(m + 2);
                for j in 0..=m + 1 {
                    row_offsets.push(coords.len());
                    for i in 0..=(m + 1 - j) {
                        let x1 = F::from_usize(i).unwrap() * h;
                        let x2 = F::from_usize(j).unwrap() * h;
                        let x3 = F::one() - x1 - x2;
                        coords.push(vec![x1, x2, x3]);
                        let zero1 = i == 0;
                        let zero2 = j == 0;
                        let zero3 = i + j == m + 1;
                        kinds.push(match (zero1, zero2, zero3) {
                            (false, false, false) => NodeKind::Interior,
                            (true, true, false) => NodeKind::Vertex(2),
                            (true, false, true) => NodeKind::Vertex(1),
                            (false, true, true) => NodeKind::Vertex(0),
                            (true, false, false) => NodeKind::Face(0),
                            (false, true, false) => NodeKind::Face(1),
                            (false, false, true) => NodeKind::Face(2),
                            (true, true, true) => unreachable!(),
                        });
                    }
                }
                Self {
                    n_types,
                    interior_per_dim: m,
                    h,
                    coords,
                    kinds,
                    row_offsets,
                }
            }
            _ => unreachable!(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self, idx: usize) -> &[F] {
        &self.coords[idx]
    }

    pub fn kind(&self, idx: usize) -> NodeKind {
        self.kinds[idx]
    }

    /// Flat index of N=3 lattice point `(i, j)`.
    pub fn flat3(&self, i: usize, j: usize) -> usize {
        self.row_offsets[j] + i
    }

    /// Lattice coordinates of an N=3 node.
    pub fn lattice3(&self, idx: usize) -> (usize, usize) {
        let j = match self.row_offsets.binary_search(&idx) {
            Ok(j) => j,
            Err(j) => j - 1,
        };
        (idx - self.row_offsets[j], j)
    }

    /// Multilinear (N=2) / piecewise-barycentric (N=3) interpolation of a
    /// per-node table at a simplex point. Coordinates are clamped onto the
    /// closed simplex first.
    pub fn interp(&self, values: &[F], x: &[F]) -> F {
        debug_assert_eq!(values.len(), self.num_nodes());
        match self.n_types {
            1 => values[0],
            2 => {
                let m = self.interior_per_dim;
                let x1 = x[0].max(F::zero()).min(F::one());
                let u = x1 / self.h;
                let j0 = u
                    .floor()
                    .to_usize()
                    .unwrap_or(0)
                    .min(m);
                let a = u - F::from_usize(j0).unwrap();
                values[j0] * (F::one() - a) + values[j0 + 1] * a
            }
            3 => {
                let m = self.interior_per_dim;
                let mut x1 = x[0].max(F::zero());
                let mut x2 = x[1].max(F::zero());
                let s = x1 + x2;
                if s > F::one() {
                    x1 = x1 / s;
                    x2 = x2 / s;
                }
                let u = x1 / self.h;
                let v = x2 / self.h;
                let mut i0 = u.floor().to_usize().unwrap_or(0);
                let mut j0 = v.floor().to_usize().unwrap_or(0);
                if i0 + j0 > m + 1 {
                    // Rounding pushed the cell past the hypotenuse.
                    let over = i0 + j0 - (m + 1);
                    i0 = i0.saturating_sub(over);
                }
                if i0 + j0 == m + 1 {
                    return values[self.flat3(i0, j0)];
                }
                i0 = i0.min(m);
                j0 = j0.min(m - i0.min(m));
                let a = u - F::from_usize(i0).unwrap();
                let b = v - F::from_usize(j0).unwrap();
                if a + b <= F::one() || i0 + j0 + 2 > m + 1 {
                    values[self.flat3(i0, j0)] * (F::one() - a - b)
                        + values[self.flat3(i0 + 1, j0)] * a
                        + values[self.flat3(i0, j0 + 1)] * b
                } else {
                    values[self.flat3(i0 + 1, j0 + 1)] * (a + b - F::one())
                        + values[self.flat3(i0 + 1, j0)] * (F::one() - b)
                        + values[self.flat3(i0, j0 + 1)] * (F::one() - a)
                }
            }
            _ => unreachable!(),
        }
    }
}
