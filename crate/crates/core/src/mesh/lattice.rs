use crate::error::{Error, Result};

use super::{AffineMap, Point};

/// Number of lattice points of a macro-element at level `m`: `(2^m+1)(2^m+2)/2`.
pub fn num_lattice_points(level: u32) -> usize {
    let n = 1usize << level;
    (n + 1) * (n + 2) / 2
}

/// Number of macro-interior lattice points: `(2^m-1)(2^m-2)/2`, zero for `m < 2`.
pub fn num_interior_points(level: u32) -> usize {
    if level < 2 {
        return 0;
    }
    let n = 1usize << level;
    (n - 1) * (n - 2) / 2
}

/// Row-major (in `j`, then `i`) indexing of the lattice `{(i, j) : i + j <= n}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeIndex {
    pub level: u32,
    /// Points per edge minus one, `2^level`.
    pub n: usize,
}

impl LatticeIndex {
    pub fn new(level: u32) -> Self {
        Self {
            level,
            n: 1 << level,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.n + 1) * (self.n + 2) / 2
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn row_offset(&self, j: usize) -> usize {
        j * (self.n + 1) - j * j.saturating_sub(1) / 2
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + j <= self.n);
        self.row_offset(j) + i
    }

    pub fn checked_index(&self, i: usize, j: usize) -> Result<usize> {
        if i + j > self.n {
            return Err(Error::LatticeIndex {
                level: self.level,
                i,
                j,
            });
        }
        Ok(self.index(i, j))
    }

    /// Inverse of [`LatticeIndex::index`].
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        let mut j = 0;
        while self.row_offset(j + 1) <= idx {
            j += 1;
        }
        (idx - self.row_offset(j), j)
    }

    /// Flat-index offset of the neighbour in direction `d` for a point in row `j`.
    #[inline]
    pub fn neighbor_offset(&self, d: Direction, j: usize) -> isize {
        let n = self.n as isize;
        let j = j as isize;
        match d {
            Direction::C => 0,
            Direction::E => 1,
            Direction::W => -1,
            Direction::N => n + 1 - j,
            Direction::S => -(n + 2 - j),
            Direction::NW => n - j,
            Direction::SE => -(n + 1 - j),
        }
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i >= 1 && j >= 1 && i + j < self.n
    }

    /// `(i, j)` pairs in storage order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..=self.n).flat_map(move |j| (0..=self.n - j).map(move |i| (i, j)))
    }

    /// Macro-interior `(i, j)` pairs in storage order.
    pub fn interior_points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (1..n.saturating_sub(1)).flat_map(move |j| (1..n - j).map(move |i| (i, j)))
    }
}

/// Position of a lattice point relative to its macro-element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointClass {
    MacroInterior,
    MacroEdge,
    MacroVertex,
}

pub fn classify_point(level: u32, i: usize, j: usize) -> Result<PointClass> {
    let lattice = LatticeIndex::new(level);
    lattice.checked_index(i, j)?;
    let n = lattice.n;
    Ok(if lattice.is_interior(i, j) {
        PointClass::MacroInterior
    } else if (i, j) == (0, 0) || (i, j) == (n, 0) || (i, j) == (0, n) {
        PointClass::MacroVertex
    } else {
        PointClass::MacroEdge
    })
}

/// Physical coordinates `A (i, j) / 2^m + b` of a lattice point.
pub fn lattice_coords(map: &AffineMap, level: u32, i: usize, j: usize) -> Result<Point> {
    let lattice = LatticeIndex::new(level);
    lattice.checked_index(i, j)?;
    let h = 1.0 / lattice.n as f64;
    Ok(map.apply([i as f64 * h, j as f64 * h]))
}

/// The seven-point neighbourhood of a macro-interior lattice point. The six
/// nonzero offsets are the edge directions of the once-refined triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    C,
    E,
    W,
    N,
    S,
    NW,
    SE,
}

impl Direction {
    pub const ALL: [Direction; 7] = [
        Direction::C,
        Direction::E,
        Direction::W,
        Direction::N,
        Direction::S,
        Direction::NW,
        Direction::SE,
    ];

    pub const OFF_DIAGONAL: [Direction; 6] = [
        Direction::E,
        Direction::W,
        Direction::N,
        Direction::S,
        Direction::NW,
        Direction::SE,
    ];

    /// One representative of each `{δ, -δ}` pair.
    pub const FORWARD: [Direction; 3] = [Direction::E, Direction::N, Direction::NW];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn offset(self) -> (i64, i64) {
        match self {
            Direction::C => (0, 0),
            Direction::E => (1, 0),
            Direction::W => (-1, 0),
            Direction::N => (0, 1),
            Direction::S => (0, -1),
            Direction::NW => (-1, 1),
            Direction::SE => (1, -1),
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::C => Direction::C,
            Direction::E => Direction::W,
            Direction::W => Direction::E,
            Direction::N => Direction::S,
            Direction::S => Direction::N,
            Direction::NW => Direction::SE,
            Direction::SE => Direction::NW,
        }
    }

    pub fn from_offset(di: i64, dj: i64) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.offset() == (di, dj))
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::C => "C",
            Direction::E => "E",
            Direction::W => "W",
            Direction::N => "N",
            Direction::S => "S",
            Direction::NW => "NW",
            Direction::SE => "SE",
        }
    }

    /// Neighbour index, if it stays inside the closed lattice.
    #[inline]
    pub fn step(self, n: usize, i: usize, j: usize) -> Option<(usize, usize)> {
        let (di, dj) = self.offset();
        let (ni, nj) = (i as i64 + di, j as i64 + dj);
        if ni < 0 || nj < 0 || (ni + nj) as usize > n {
            None
        } else {
            Some((ni as usize, nj as usize))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_counts() {
        for m in 0..8 {
            let lattice = LatticeIndex::new(m);
            assert_eq!(lattice.points().count(), num_lattice_points(m));
            assert_eq!(lattice.interior_points().count(), num_interior_points(m));
            let boundary = lattice.points().filter(|&(i, j)| !lattice.is_interior(i, j)).count();
            assert_eq!(num_interior_points(m) + boundary, num_lattice_points(m));
        }
        assert_eq!(num_interior_points(1), 0);
        assert_eq!(num_interior_points(2), 3);
    }

    #[test]
    fn storage_order_is_row_major() {
        let lattice = LatticeIndex::new(3);
        for (k, (i, j)) in lattice.points().enumerate() {
            assert_eq!(lattice.index(i, j), k);
            assert_eq!(lattice.coords(k), (i, j));
        }
        for (i, j) in lattice.interior_points() {
            let idx = lattice.index(i, j) as isize;
            for d in Direction::ALL {
                let (ni, nj) = d.step(lattice.n, i, j).unwrap();
                assert_eq!(idx + lattice.neighbor_offset(d, j), lattice.index(ni, nj) as isize);
            }
        }
    }

    #[test]
    fn lattice_coordinates() {
        let id = AffineMap::identity();
        assert_eq!(lattice_coords(&id, 1, 1, 0).unwrap(), [0.5, 0.0]);
        assert_eq!(lattice_coords(&id, 2, 1, 1).unwrap(), [0.25, 0.25]);
        let scaled = AffineMap {
            a: [[2.0, 0.0], [0.0, 2.0]],
            b: [1.0, 1.0],
        };
        assert_eq!(lattice_coords(&scaled, 1, 0, 1).unwrap(), [1.0, 2.0]);
        assert!(lattice_coords(&id, 1, 2, 1).is_err());
    }

    #[test]
    fn point_classes() {
        assert_eq!(classify_point(3, 1, 1).unwrap(), PointClass::MacroInterior);
        assert_eq!(classify_point(3, 0, 5).unwrap(), PointClass::MacroEdge);
        assert_eq!(classify_point(3, 8, 0).unwrap(), PointClass::MacroVertex);
        assert!(classify_point(3, 5, 5).is_err());
        // No interior points below level 2.
        assert_eq!(classify_point(1, 1, 0).unwrap(), PointClass::MacroEdge);
    }

    #[test]
    fn directions_close_under_negation() {
        for d in Direction::ALL {
            let (di, dj) = d.offset();
            assert_eq!(d.opposite().offset(), (-di, -dj));
            assert_eq!(Direction::from_offset(di, dj), Some(d));
        }
        // Edge directions of the once-refined reference triangle.
        let mut edge_dirs = std::collections::BTreeSet::new();
        let subtriangles = [
            [(0, 0), (1, 0), (0, 1)],
            [(1, 0), (2, 0), (1, 1)],
            [(0, 1), (1, 1), (0, 2)],
            [(1, 0), (1, 1), (0, 1)],
        ];
        for tri in subtriangles {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b {
                        let (pa, pb): ((i64, i64), (i64, i64)) = (tri[a], tri[b]);
                        edge_dirs.insert(Direction::from_offset(pb.0 - pa.0, pb.1 - pa.1).unwrap());
                    }
                }
            }
        }
        assert_eq!(edge_dirs, Direction::OFF_DIAGONAL.into_iter().collect());
    }

    proptest! {
        #[test]
        fn coords_are_injective(level in 0u32..6, a in 0.5f64..2.0, c in -1.0f64..1.0, d in 0.5f64..2.0) {
            let map = AffineMap { a: [[a, c], [0.0, d]], b: [0.3, -0.1] };
            let lattice = LatticeIndex::new(level);
            let mut seen = std::collections::HashSet::new();
            for (i, j) in lattice.points() {
                let p = lattice_coords(&map, level, i, j).unwrap();
                prop_assert!(seen.insert((p[0].to_bits(), p[1].to_bits())));
            }
        }
    }
}
