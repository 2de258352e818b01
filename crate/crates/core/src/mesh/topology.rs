use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{LatticeIndex, MacroMesh, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum SharedKey {
    Vertex(usize),
    /// Edge `(a, b)` with `a < b`, position `k` counted from `a`.
    Edge(usize, usize, usize),
}

/// Degree-of-freedom bookkeeping for one refinement level of a macro-mesh.
///
/// Values are stored per macro-element ("flat" storage: block `t` holds the
/// full lattice of triangle `t`), so points on macro edges and vertices exist
/// once per incident macro-element. Every flat slot maps to a global DoF; the
/// copy in the lowest-numbered triangle is the owner.
#[derive(Debug)]
pub struct LevelTopology {
    mesh: Arc<MacroMesh>,
    lattice: LatticeIndex,
    global_of: Vec<usize>,
    alias_start: Vec<usize>,
    alias_flat: Vec<usize>,
    dirichlet: Vec<bool>,
    on_macro_boundary: Vec<bool>,
    interface: Vec<usize>,
    owned: Vec<bool>,
}

impl LevelTopology {
    pub fn new(mesh: Arc<MacroMesh>, level: u32) -> Result<Self> {
        let lattice = LatticeIndex::new(level);
        let n = lattice.n;
        let block = lattice.len();
        let ntri = mesh.num_triangles();
        let mut global_of = vec![usize::MAX; ntri * block];
        let mut shared: HashMap<SharedKey, usize> = HashMap::new();
        let mut aliases: Vec<Vec<usize>> = Vec::new();
        let mut dirichlet = Vec::new();
        let mut on_macro_boundary = Vec::new();

        for t in 0..ntri {
            let tri = mesh.triangle(t);
            for (i, j) in lattice.points() {
                let flat = t * block + lattice.index(i, j);
                let key = shared_key(tri, n, i, j);
                let boundary_edge = match key {
                    None => false,
                    Some(_) => local_edges(n, i, j)
                        .into_iter()
                        .flatten()
                        .any(|k| mesh.is_boundary_edge(t, k)),
                };
                let g = match key.and_then(|k| shared.get(&k).copied()) {
                    Some(g) => g,
                    None => {
                        let g = aliases.len();
                        aliases.push(Vec::new());
                        dirichlet.push(false);
                        on_macro_boundary.push(key.is_some());
                        if let Some(k) = key {
                            shared.insert(k, g);
                        }
                        g
                    }
                };
                aliases[g].push(flat);
                dirichlet[g] |= boundary_edge;
                global_of[flat] = g;
            }
        }

        let mut alias_start = Vec::with_capacity(aliases.len() + 1);
        let mut alias_flat = Vec::with_capacity(global_of.len());
        let mut owned = vec![false; global_of.len()];
        alias_start.push(0);
        for group in &aliases {
            owned[group[0]] = true;
            alias_flat.extend_from_slice(group);
            alias_start.push(alias_flat.len());
        }
        let interface = (0..aliases.len()).filter(|&g| on_macro_boundary[g]).collect();

        let topo = Self {
            mesh,
            lattice,
            global_of,
            alias_start,
            alias_flat,
            dirichlet,
            on_macro_boundary,
            interface,
            owned,
        };
        topo.check_alias_coordinates()?;
        Ok(topo)
    }

    fn check_alias_coordinates(&self) -> Result<()> {
        let h = self.mesh.mesh_size();
        for g in 0..self.num_global() {
            let group = self.aliases(g);
            let a = self.coords(group[0]);
            for &f in &group[1..] {
                let b = self.coords(f);
                let distance = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                let scale = a[0].abs().max(a[1].abs());
                if distance > 1e-14 * h + 8.0 * f64::EPSILON * scale {
                    return Err(Error::AliasMismatch { a, b, distance });
                }
            }
        }
        Ok(())
    }

    pub fn mesh(&self) -> &Arc<MacroMesh> {
        &self.mesh
    }

    pub fn level(&self) -> u32 {
        self.lattice.level
    }

    pub fn lattice(&self) -> LatticeIndex {
        self.lattice
    }

    pub fn num_triangles(&self) -> usize {
        self.mesh.num_triangles()
    }

    /// Length of one macro-element block.
    pub fn block_len(&self) -> usize {
        self.lattice.len()
    }

    pub fn num_flat(&self) -> usize {
        self.global_of.len()
    }

    pub fn num_global(&self) -> usize {
        self.alias_start.len() - 1
    }

    pub fn num_dirichlet(&self) -> usize {
        self.dirichlet.iter().filter(|&&d| d).count()
    }

    #[inline]
    pub fn flat(&self, t: usize, i: usize, j: usize) -> usize {
        t * self.block_len() + self.lattice.index(i, j)
    }

    #[inline]
    pub fn global_of(&self, flat: usize) -> usize {
        self.global_of[flat]
    }

    /// All flat slots holding global DoF `g`, owner first.
    #[inline]
    pub fn aliases(&self, g: usize) -> &[usize] {
        &self.alias_flat[self.alias_start[g]..self.alias_start[g + 1]]
    }

    #[inline]
    pub fn owner_flat(&self, g: usize) -> usize {
        self.alias_flat[self.alias_start[g]]
    }

    #[inline]
    pub fn is_owned(&self, flat: usize) -> bool {
        self.owned[flat]
    }

    #[inline]
    pub fn is_dirichlet(&self, g: usize) -> bool {
        self.dirichlet[g]
    }

    #[inline]
    pub fn is_dirichlet_flat(&self, flat: usize) -> bool {
        self.dirichlet[self.global_of[flat]]
    }

    /// Whether global DoF `g` lies on some macro-element boundary.
    pub fn is_macro_boundary(&self, g: usize) -> bool {
        self.on_macro_boundary[g]
    }

    /// Global DoFs on macro-element boundaries (interfaces and the domain boundary).
    pub fn interface_globals(&self) -> &[usize] {
        &self.interface
    }

    /// Global DoFs shared by more than one macro-element.
    pub fn shared_globals(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_global()).filter(|&g| self.alias_start[g + 1] - self.alias_start[g] > 1)
    }

    /// `(t, i, j)` of a flat slot.
    pub fn locate(&self, flat: usize) -> (usize, usize, usize) {
        let t = flat / self.block_len();
        let (i, j) = self.lattice.coords(flat % self.block_len());
        (t, i, j)
    }

    pub fn coords(&self, flat: usize) -> Point {
        let (t, i, j) = self.locate(flat);
        self.point(t, i, j)
    }

    #[inline]
    pub fn point(&self, t: usize, i: usize, j: usize) -> Point {
        let h = 1.0 / self.lattice.n as f64;
        self.mesh.map(t).apply([i as f64 * h, j as f64 * h])
    }

    /// Copies owner values into every alias slot.
    pub fn sync(&self, data: &mut [f64]) {
        for g in self.shared_globals() {
            let group = self.aliases(g);
            let v = data[group[0]];
            for &f in &group[1..] {
                data[f] = v;
            }
        }
    }

    /// Sums partial contributions held by the alias slots and writes the total
    /// to all of them (owner-ordered, hence deterministic).
    pub fn sum_aliases(&self, data: &mut [f64]) {
        for g in self.shared_globals() {
            let group = self.aliases(g);
            let total: f64 = group.iter().map(|&f| data[f]).sum();
            for &f in group {
                data[f] = total;
            }
        }
    }
}

fn shared_key(tri: [usize; 3], n: usize, i: usize, j: usize) -> Option<SharedKey> {
    let edge = |a: usize, b: usize, k: usize| {
        if a < b {
            SharedKey::Edge(a, b, k)
        } else {
            SharedKey::Edge(b, a, n - k)
        }
    };
    match (i, j) {
        (0, 0) => Some(SharedKey::Vertex(tri[0])),
        (i, 0) if i == n => Some(SharedKey::Vertex(tri[1])),
        (0, j) if j == n => Some(SharedKey::Vertex(tri[2])),
        (i, 0) => Some(edge(tri[0], tri[1], i)),
        (0, j) => Some(edge(tri[2], tri[0], n - j)),
        (i, j) if i + j == n => Some(edge(tri[1], tri[2], j)),
        _ => None,
    }
}

/// Local macro edges containing lattice point `(i, j)`.
fn local_edges(n: usize, i: usize, j: usize) -> [Option<usize>; 2] {
    let mut out = [None, None];
    let mut k = 0;
    if j == 0 {
        out[k] = Some(0);
        k += 1;
    }
    if i + j == n {
        out[k] = Some(1);
        k += 1;
    }
    if i == 0 && k < 2 {
        out[k] = Some(2);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Arc<MacroMesh> {
        Arc::new(
            MacroMesh::new(
                vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
                vec![[0, 1, 2], [0, 2, 3]],
            )
            .unwrap(),
        )
    }

    /// Brute-force DoF count by hashing rounded coordinates.
    fn dedup_count(mesh: &MacroMesh, level: u32) -> usize {
        let lattice = LatticeIndex::new(level);
        let mut seen = std::collections::HashSet::new();
        for t in 0..mesh.num_triangles() {
            for (i, j) in lattice.points() {
                let p = super::super::lattice_coords(mesh.map(t), level, i, j).unwrap();
                seen.insert(((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64));
            }
        }
        seen.len()
    }

    #[test]
    fn shared_diagonal_midpoint_has_two_aliases() {
        let topo = LevelTopology::new(unit_square(), 1).unwrap();
        let mid = (0..topo.num_global())
            .find(|&g| {
                let p = topo.coords(topo.owner_flat(g));
                (p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15
            })
            .unwrap();
        assert_eq!(topo.aliases(mid).len(), 2);
        assert!(!topo.is_dirichlet(mid));
        assert_eq!(topo.num_global(), 9);
    }

    #[test]
    fn macro_vertex_aliases_match_valence() {
        let mesh = Arc::new(unit_square().refine_times(1));
        let topo = LevelTopology::new(mesh.clone(), 2).unwrap();
        let mut valence = vec![0usize; mesh.num_vertices()];
        for tri in mesh.triangles() {
            for &v in tri {
                valence[v] += 1;
            }
        }
        for (v, p) in mesh.vertices().iter().enumerate() {
            let g = (0..topo.num_global())
                .find(|&g| topo.coords(topo.owner_flat(g)) == *p)
                .unwrap();
            assert_eq!(topo.aliases(g).len(), valence[v]);
        }
    }

    #[test]
    fn alias_merging_matches_coordinate_dedup() {
        for base_refinements in 0..3 {
            let mesh = Arc::new(unit_square().refine_times(base_refinements));
            for level in 0..=5 {
                let topo = LevelTopology::new(mesh.clone(), level).unwrap();
                assert_eq!(topo.num_global(), dedup_count(&mesh, level));
            }
        }
        // Two-triangle square at level 4 is the 17 x 17 grid.
        let topo = LevelTopology::new(unit_square(), 4).unwrap();
        assert_eq!(topo.num_global(), 289);
        assert_eq!(topo.num_dirichlet(), 64);
    }

    #[test]
    fn owner_is_lowest_triangle() {
        let mesh = Arc::new(unit_square().refine_times(2));
        let topo = LevelTopology::new(mesh, 3).unwrap();
        for g in 0..topo.num_global() {
            let owner_t = topo.locate(topo.owner_flat(g)).0;
            assert!(topo.aliases(g).iter().all(|&f| topo.locate(f).0 >= owner_t));
        }
    }

    #[test]
    fn sync_and_sum() {
        let topo = LevelTopology::new(unit_square(), 2).unwrap();
        let mut data: Vec<f64> = (0..topo.num_flat()).map(|k| k as f64).collect();
        topo.sync(&mut data);
        for g in 0..topo.num_global() {
            let group = topo.aliases(g);
            assert!(group.iter().all(|&f| data[f] == data[group[0]]));
        }
        let mut ones = vec![1.0; topo.num_flat()];
        topo.sum_aliases(&mut ones);
        for g in 0..topo.num_global() {
            assert_eq!(ones[topo.owner_flat(g)], topo.aliases(g).len() as f64);
        }
    }
}
