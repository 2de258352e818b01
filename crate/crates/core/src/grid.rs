//! Nodal values on the union of macro-element lattices.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{LevelTopology, Point};

/// Values stored per macro-element block (see [`LevelTopology`]). Interface
/// points exist once per incident macro-element; after [`GridFunction::sync`]
/// all copies hold the owner's value.
#[derive(Debug, Clone)]
pub struct GridFunction {
    topo: Arc<LevelTopology>,
    data: Vec<f64>,
    synced: bool,
}

impl GridFunction {
    pub fn zeros(topo: &Arc<LevelTopology>) -> Self {
        Self {
            topo: topo.clone(),
            data: vec![0.0; topo.num_flat()],
            synced: true,
        }
    }

    pub fn constant(topo: &Arc<LevelTopology>, c: f64) -> Self {
        Self {
            topo: topo.clone(),
            data: vec![c; topo.num_flat()],
            synced: true,
        }
    }

    /// Nodal interpolant of `f`.
    pub fn from_fn(topo: &Arc<LevelTopology>, f: impl Fn(Point) -> f64 + Sync) -> Self {
        let block = topo.block_len();
        let lattice = topo.lattice();
        let mut data = vec![0.0; topo.num_flat()];
        data.par_chunks_mut(block).enumerate().for_each(|(t, chunk)| {
            for (k, (i, j)) in lattice.points().enumerate() {
                chunk[k] = f(topo.point(t, i, j));
            }
        });
        let mut u = Self {
            topo: topo.clone(),
            data,
            synced: false,
        };
        u.sync();
        u
    }

    /// Builds from one value per global DoF.
    pub fn from_global(topo: &Arc<LevelTopology>, values: &[f64]) -> Result<Self> {
        if values.len() != topo.num_global() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} global DoFs",
                values.len(),
                topo.num_global()
            )));
        }
        let data = (0..topo.num_flat()).map(|f| values[topo.global_of(f)]).collect();
        Ok(Self {
            topo: topo.clone(),
            data,
            synced: true,
        })
    }

    pub fn topology(&self) -> &Arc<LevelTopology> {
        &self.topo
    }

    pub fn level(&self) -> u32 {
        self.topo.level()
    }

    pub fn is_synced(&self) -> bool {
        self.synced
    }

    pub fn ensure_synced(&self) -> Result<()> {
        if self.synced {
            Ok(())
        } else {
            Err(Error::Unsynchronized)
        }
    }

    pub fn ensure_level(&self, level: u32) -> Result<()> {
        if self.level() == level {
            Ok(())
        } else {
            Err(Error::LevelMismatch {
                expected: level,
                found: self.level(),
            })
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; marks the function as unsynchronized.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.synced = false;
        &mut self.data
    }

    /// Block of macro-element `t`.
    pub fn block(&self, t: usize) -> &[f64] {
        let b = self.topo.block_len();
        &self.data[t * b..(t + 1) * b]
    }

    pub fn sync(&mut self) {
        self.topo.sync(&mut self.data);
        self.synced = true;
    }

    /// Marks the function synchronized without copying; for callers that
    /// wrote every alias consistently.
    pub fn assume_synced(&mut self) {
        self.synced = true;
    }

    /// Value at global DoF `g` (owner copy).
    pub fn global_value(&self, g: usize) -> f64 {
        self.data[self.topo.owner_flat(g)]
    }

    /// One value per global DoF.
    pub fn to_global(&self) -> Vec<f64> {
        (0..self.topo.num_global()).map(|g| self.global_value(g)).collect()
    }

    /// Euclidean inner product over global DoFs (owners only).
    pub fn dot(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .enumerate()
            .filter(|(f, _)| self.topo.is_owned(*f))
            .map(|(_, (a, b))| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Euclidean norm over non-Dirichlet global DoFs.
    pub fn free_norm(&self) -> f64 {
        let topo = &self.topo;
        self.data
            .iter()
            .enumerate()
            .filter(|(f, _)| topo.is_owned(*f) && !topo.is_dirichlet_flat(*f))
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Maximum over global DoFs of `|self - other|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        let synced = self.synced && x.synced;
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
        self.synced = synced;
    }

    pub fn scale(&mut self, a: f64) {
        for s in &mut self.data {
            *s *= a;
        }
    }

    pub fn fill(&mut self, c: f64) {
        self.data.fill(c);
        self.synced = true;
    }

    /// Zeroes Dirichlet DoFs.
    pub fn zero_dirichlet(&mut self) {
        let topo = self.topo.clone();
        for (f, v) in self.data.iter_mut().enumerate() {
            if topo.is_dirichlet_flat(f) {
                *v = 0.0;
            }
        }
    }

    /// Sets Dirichlet DoFs to `g(x)`, other DoFs untouched.
    pub fn set_dirichlet(&mut self, g: impl Fn(Point) -> f64) {
        let topo = self.topo.clone();
        for f in 0..self.data.len() {
            if topo.is_dirichlet_flat(f) {
                self.data[f] = g(topo.coords(f));
            }
        }
    }

    /// Copies Dirichlet DoFs from `other`.
    pub fn copy_dirichlet(&mut self, other: &Self) {
        let topo = self.topo.clone();
        for f in 0..self.data.len() {
            if topo.is_dirichlet_flat(f) {
                self.data[f] = other.data[f];
            }
        }
    }

    /// Plain-text dump with one `x y value` line per global DoF.
    pub fn to_point_dump(&self) -> String {
        let mut out = String::new();
        for g in 0..self.topo.num_global() {
            let p = self.topo.coords(self.topo.owner_flat(g));
            out.push_str(&format!("{:.12e} {:.12e} {:.12e}\n", p[0], p[1], self.global_value(g)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MacroMesh;

    fn topo(level: u32) -> Arc<LevelTopology> {
        let mesh = MacroMesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        Arc::new(LevelTopology::new(Arc::new(mesh), level).unwrap())
    }

    #[test]
    fn block_length_matches_lattice() {
        let t = topo(3);
        let u = GridFunction::zeros(&t);
        assert_eq!(u.block(1).len(), 45);
        assert_eq!(u.values().len(), 90);
    }

    #[test]
    fn sync_makes_aliases_identical() {
        let t = topo(3);
        let mut u = GridFunction::zeros(&t);
        for (k, v) in u.values_mut().iter_mut().enumerate() {
            *v = k as f64;
        }
        assert!(u.ensure_synced().is_err());
        u.sync();
        for g in 0..t.num_global() {
            let vals: Vec<f64> = t.aliases(g).iter().map(|&f| u.values()[f]).collect();
            assert!(vals.iter().all(|&v| v == vals[0]));
        }
    }

    #[test]
    fn interpolant_and_global_roundtrip() {
        let t = topo(2);
        let u = GridFunction::from_fn(&t, |p| p[0] + 2.0 * p[1]);
        let back = GridFunction::from_global(&t, &u.to_global()).unwrap();
        assert_eq!(u.values(), back.values());
        assert_eq!(u.dot(&GridFunction::constant(&t, 1.0)), u.to_global().iter().sum::<f64>());
    }
}
