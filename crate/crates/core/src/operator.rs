//! Matrix-free operators on a [`LevelTopology`].
//!
//! Rows of macro-interior points are seven-point stencils produced one
//! lattice row at a time. Rows of points on macro-element boundaries are kept
//! as explicit sparse rows in global numbering. Dirichlet rows are the
//! identity, so a solve with homogeneous boundary data is a plain linear
//! system in the free DoFs.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::mesh::{Direction, LevelTopology, Point};
use crate::quadrature::QuadratureRule;
use crate::sparse::CsrMatrix;
use crate::stencil::{incident_triangles, FineGeometry, FineTriangles, Stencil, StencilComputer};
use crate::surrogate::{InterfaceMode, SurrogateConfig, SurrogateStencilSet};

/// Levels above this are never assembled into a sparse matrix.
pub const ASSEMBLY_CAP: u32 = 7;

/// Where a coupling to a macro-interior point comes from: the stencil of the
/// row point seen from macro-element `t` in direction `dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    pub t: usize,
    pub dir: Direction,
    /// Reference coordinates of the row point in `t`.
    pub xi: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceEntry {
    pub col: usize,
    /// Owner slot of `col`.
    pub col_flat: usize,
    pub value: f64,
    /// Set when `col` is macro-interior.
    pub source: Option<Coupling>,
}

/// Row of a non-Dirichlet point on a macro-element boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceRow {
    pub global: usize,
    pub flat: usize,
    pub diag: f64,
    pub entries: Vec<InterfaceEntry>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterfaceRows {
    pub rows: Vec<InterfaceRow>,
    /// Owner slots of the Dirichlet DoFs.
    pub dirichlet_flats: Vec<usize>,
}

impl InterfaceRows {
    /// Exact rows assembled from the element matrices of all incident fine
    /// triangles.
    pub fn exact(topo: &LevelTopology, comp: &StencilComputer) -> Self {
        let mesh = topo.mesh();
        let n = topo.lattice().n;
        let h = 1.0 / n as f64;
        let geoms: Vec<FineGeometry> = (0..topo.num_triangles())
            .map(|t| FineGeometry::new(mesh.map(t), topo.level()))
            .collect();
        let free: Vec<usize> = topo
            .interface_globals()
            .iter()
            .copied()
            .filter(|&g| !topo.is_dirichlet(g))
            .collect();
        let rows = free
            .par_iter()
            .map(|&g| {
                let mut diag = 0.0;
                let mut entries: Vec<InterfaceEntry> = Vec::with_capacity(8);
                let mut slot: HashMap<usize, usize> = HashMap::new();
                for &f in topo.aliases(g) {
                    let (t, i, j) = topo.locate(f);
                    for (tri, local) in incident_triangles(n, i, j) {
                        let e = comp.element_matrix(&geoms[t], t, tri);
                        for (b, &(ci, cj)) in tri.vertices().iter().enumerate() {
                            if b == local {
                                diag += e[local][b];
                                continue;
                            }
                            let col = topo.global_of(topo.flat(t, ci, cj));
                            let source = topo.lattice().is_interior(ci, cj).then(|| Coupling {
                                t,
                                dir: Direction::from_offset(ci as i64 - i as i64, cj as i64 - j as i64)
                                    .expect("fine triangle neighbours are stencil directions"),
                                xi: [i as f64 * h, j as f64 * h],
                            });
                            let k = *slot.entry(col).or_insert_with(|| {
                                entries.push(InterfaceEntry {
                                    col,
                                    col_flat: topo.owner_flat(col),
                                    value: 0.0,
                                    source,
                                });
                                entries.len() - 1
                            });
                            entries[k].value += e[local][b];
                        }
                    }
                }
                InterfaceRow {
                    global: g,
                    flat: topo.owner_flat(g),
                    diag,
                    entries,
                }
            })
            .collect();
        Self {
            rows,
            dirichlet_flats: (0..topo.num_global())
                .filter(|&g| topo.is_dirichlet(g))
                .map(|g| topo.owner_flat(g))
                .collect(),
        }
    }

    /// Replaces every coupling to a macro-interior point by the surrogate of
    /// its macro-element, evaluated at the row point. With zero-row-sum
    /// closure the diagonal absorbs the change so that `A - Ã` keeps zero
    /// row sums on these rows too.
    pub fn with_surrogate_couplings(mut self, set: &SurrogateStencilSet) -> Self {
        let close = set.config().zero_row_sum;
        for row in &mut self.rows {
            for e in &mut row.entries {
                if let Some(c) = e.source {
                    let value = set.eval_direction(c.t, c.dir, c.xi);
                    if close {
                        row.diag += e.value - value;
                    }
                    e.value = value;
                }
            }
        }
        self
    }

    /// `alpha * a + beta * b` on the union pattern. Both must belong to the
    /// same topology.
    pub fn combine(a: &Self, b: &Self, alpha: f64, beta: f64) -> Self {
        let rows = a
            .rows
            .iter()
            .zip(&b.rows)
            .map(|(ra, rb)| {
                assert_eq!(ra.global, rb.global, "interface rows of different topologies");
                let mut entries: Vec<InterfaceEntry> = ra
                    .entries
                    .iter()
                    .map(|e| InterfaceEntry {
                        value: alpha * e.value,
                        ..e.clone()
                    })
                    .collect();
                for e in &rb.entries {
                    match entries.iter_mut().find(|x| x.col == e.col) {
                        Some(x) => x.value += beta * e.value,
                        None => entries.push(InterfaceEntry {
                            value: beta * e.value,
                            ..e.clone()
                        }),
                    }
                }
                InterfaceRow {
                    global: ra.global,
                    flat: ra.flat,
                    diag: alpha * ra.diag + beta * rb.diag,
                    entries,
                }
            })
            .collect();
        Self {
            rows,
            dirichlet_flats: a.dirichlet_flats.clone(),
        }
    }
}

/// A linear operator on the grid functions of one level.
pub trait Operator: Send + Sync {
    fn topology(&self) -> &Arc<LevelTopology>;

    /// Stencils of the interior points `i = 1..n-1-j` of lattice row `j` of
    /// macro-element `t`. `buf` is scratch space the result may live in.
    fn row_stencils<'a>(&'a self, t: usize, j: usize, buf: &'a mut Vec<Stencil>) -> &'a [Stencil];

    fn interface(&self) -> &InterfaceRows;

    fn level(&self) -> u32 {
        self.topology().level()
    }
}

/// Offset of the first interior point of row `j` within the interior storage
/// order of a lattice with `n` intervals.
fn interior_row_start(n: usize, j: usize) -> usize {
    (j - 1) * (n - 1) - (j - 1) * j / 2
}

enum TrueStorage {
    Cached(Vec<Vec<Stencil>>),
    OnTheFly(Vec<FineGeometry>),
}

/// The Galerkin operator with stencils from quadrature.
pub struct TrueOperator {
    topo: Arc<LevelTopology>,
    comp: Arc<StencilComputer>,
    storage: TrueStorage,
    interface: InterfaceRows,
}

impl TrueOperator {
    /// Precomputes and stores all interior stencils.
    pub fn new(topo: &Arc<LevelTopology>, comp: Arc<StencilComputer>) -> Self {
        let mesh = topo.mesh();
        let level = topo.level();
        let cache = (0..topo.num_triangles())
            .into_par_iter()
            .map(|t| comp.macro_stencils(mesh, level, t))
            .collect();
        Self {
            interface: InterfaceRows::exact(topo, &comp),
            topo: topo.clone(),
            comp,
            storage: TrueStorage::Cached(cache),
        }
    }

    /// Integrates the coefficient again on every application.
    pub fn on_the_fly(topo: &Arc<LevelTopology>, comp: Arc<StencilComputer>) -> Self {
        let geoms = (0..topo.num_triangles())
            .map(|t| FineGeometry::new(topo.mesh().map(t), topo.level()))
            .collect();
        Self {
            interface: InterfaceRows::exact(topo, &comp),
            topo: topo.clone(),
            comp,
            storage: TrueStorage::OnTheFly(geoms),
        }
    }

    pub fn computer(&self) -> &Arc<StencilComputer> {
        &self.comp
    }
}

impl Operator for TrueOperator {
    fn topology(&self) -> &Arc<LevelTopology> {
        &self.topo
    }

    fn row_stencils<'a>(&'a self, t: usize, j: usize, buf: &'a mut Vec<Stencil>) -> &'a [Stencil] {
        let n = self.topo.lattice().n;
        let len = n - 1 - j;
        match &self.storage {
            TrueStorage::Cached(cache) => {
                let start = interior_row_start(n, j);
                &cache[t][start..start + len]
            }
            TrueStorage::OnTheFly(geoms) => {
                buf.resize(len.max(buf.len()), [0.0; 7]);
                for (k, s) in buf[..len].iter_mut().enumerate() {
                    *s = self.comp.stencil(&geoms[t], t, k + 1, j);
                }
                &buf[..len]
            }
        }
    }

    fn interface(&self) -> &InterfaceRows {
        &self.interface
    }
}

/// The surrogate operator: interior stencils from fitted polynomials.
pub struct SurrogateOperator {
    topo: Arc<LevelTopology>,
    set: Arc<SurrogateStencilSet>,
    interface: InterfaceRows,
}

impl SurrogateOperator {
    pub fn new(topo: &Arc<LevelTopology>, comp: &StencilComputer, config: &SurrogateConfig) -> Result<Self> {
        let set = SurrogateStencilSet::fit(comp, topo.mesh(), topo.level(), config)?;
        Ok(Self::from_set(topo, comp, Arc::new(set)))
    }

    pub fn from_set(topo: &Arc<LevelTopology>, comp: &StencilComputer, set: Arc<SurrogateStencilSet>) -> Self {
        assert_eq!(set.level(), topo.level());
        let exact = InterfaceRows::exact(topo, comp);
        let interface = match set.config().interface_mode {
            InterfaceMode::SurrogateCoupling => exact.with_surrogate_couplings(&set),
            InterfaceMode::ExactOnMacroBoundary => exact,
        };
        Self {
            topo: topo.clone(),
            set,
            interface,
        }
    }

    pub fn stencil_set(&self) -> &Arc<SurrogateStencilSet> {
        &self.set
    }
}

impl Operator for SurrogateOperator {
    fn topology(&self) -> &Arc<LevelTopology> {
        &self.topo
    }

    fn row_stencils<'a>(&'a self, t: usize, j: usize, buf: &'a mut Vec<Stencil>) -> &'a [Stencil] {
        let len = self.topo.lattice().n - 1 - j;
        buf.resize(len.max(buf.len()), [0.0; 7]);
        self.set.row_stencils(t, j, &mut buf[..len]);
        &buf[..len]
    }

    fn interface(&self) -> &InterfaceRows {
        &self.interface
    }
}

/// `alpha A + beta B`, e.g. `M + dt A` in a time step.
pub struct CombinedOperator {
    a: Arc<dyn Operator>,
    b: Arc<dyn Operator>,
    alpha: f64,
    beta: f64,
    interface: InterfaceRows,
}

impl CombinedOperator {
    pub fn new(a: Arc<dyn Operator>, alpha: f64, b: Arc<dyn Operator>, beta: f64) -> Result<Self> {
        if !Arc::ptr_eq(a.topology(), b.topology()) {
            return Err(Error::LevelMismatch {
                expected: a.level(),
                found: b.level(),
            });
        }
        let interface = InterfaceRows::combine(a.interface(), b.interface(), alpha, beta);
        Ok(Self {
            a,
            b,
            alpha,
            beta,
            interface,
        })
    }
}

impl Operator for CombinedOperator {
    fn topology(&self) -> &Arc<LevelTopology> {
        self.a.topology()
    }

    fn row_stencils<'a>(&'a self, t: usize, j: usize, buf: &'a mut Vec<Stencil>) -> &'a [Stencil] {
        let mut scratch_a = Vec::new();
        let mut scratch_b = Vec::new();
        let ra = self.a.row_stencils(t, j, &mut scratch_a);
        let rb = self.b.row_stencils(t, j, &mut scratch_b);
        buf.clear();
        buf.extend(ra.iter().zip(rb).map(|(sa, sb)| {
            let mut s = [0.0; 7];
            for k in 0..7 {
                s[k] = self.alpha * sa[k] + self.beta * sb[k];
            }
            s
        }));
        &buf[..]
    }

    fn interface(&self) -> &InterfaceRows {
        &self.interface
    }
}

/// Flat-index offsets of the seven stencil neighbours in row `j`.
#[inline]
pub(crate) fn stencil_offsets(n: usize, j: usize) -> [isize; 7] {
    let (n, j) = (n as isize, j as isize);
    [0, 1, -1, n + 1 - j, -(n + 2 - j), n - j, -(n + 1 - j)]
}

fn check_operand(op: &dyn Operator, u: &GridFunction) -> Result<()> {
    u.ensure_level(op.level())?;
    u.ensure_synced()?;
    if !Arc::ptr_eq(u.topology(), op.topology()) {
        return Err(Error::DimensionMismatch("grid function of a different mesh".into()));
    }
    Ok(())
}

/// `v = A u`. `u` must be synchronized; `v` is returned synchronized.
pub fn apply(op: &dyn Operator, u: &GridFunction, v: &mut GridFunction) -> Result<()> {
    check_operand(op, u)?;
    v.ensure_level(op.level())?;
    let topo = op.topology().clone();
    let lattice = topo.lattice();
    let n = lattice.n;
    let block = topo.block_len();
    let out = v.values_mut();
    out.par_chunks_mut(block).enumerate().for_each(|(t, vb)| {
        let ub = u.block(t);
        let mut buf = Vec::new();
        for j in 1..n.saturating_sub(1) {
            let row = op.row_stencils(t, j, &mut buf);
            let off = stencil_offsets(n, j);
            let base = lattice.row_offset(j) + 1;
            for (k, s) in row.iter().enumerate() {
                let idx = (base + k) as isize;
                let mut acc = 0.0;
                for d in 0..7 {
                    acc += s[d] * ub[(idx + off[d]) as usize];
                }
                vb[idx as usize] = acc;
            }
        }
    });
    let uv = u.values();
    let iface = op.interface();
    for row in &iface.rows {
        let mut acc = row.diag * uv[row.flat];
        for e in &row.entries {
            acc += e.value * uv[e.col_flat];
        }
        out[row.flat] = acc;
    }
    for &f in &iface.dirichlet_flats {
        out[f] = uv[f];
    }
    v.sync();
    Ok(())
}

pub fn apply_new(op: &dyn Operator, u: &GridFunction) -> Result<GridFunction> {
    let mut v = GridFunction::zeros(op.topology());
    apply(op, u, &mut v)?;
    Ok(v)
}

/// `r = f - A u` on free DoFs, zero on Dirichlet DoFs.
pub fn residual(op: &dyn Operator, u: &GridFunction, f: &GridFunction) -> Result<GridFunction> {
    let mut r = apply_new(op, u)?;
    r.scale(-1.0);
    r.axpy(1.0, f);
    r.zero_dirichlet();
    Ok(r)
}

/// Diagonal of the operator per flat slot (synchronized).
pub fn diagonal(op: &dyn Operator) -> GridFunction {
    let topo = op.topology().clone();
    let lattice = topo.lattice();
    let n = lattice.n;
    let mut d = GridFunction::zeros(&topo);
    let out = d.values_mut();
    out.par_chunks_mut(topo.block_len()).enumerate().for_each(|(t, db)| {
        let mut buf = Vec::new();
        for j in 1..n.saturating_sub(1) {
            let base = lattice.row_offset(j) + 1;
            for (k, s) in op.row_stencils(t, j, &mut buf).iter().enumerate() {
                db[base + k] = s[0];
            }
        }
    });
    for row in &op.interface().rows {
        out[row.flat] = row.diag;
    }
    for &f in &op.interface().dirichlet_flats {
        out[f] = 1.0;
    }
    d.sync();
    d
}

/// Sparse matrix in global numbering, including the identity Dirichlet rows
/// and explicit zeros of the stencil pattern.
pub fn assemble(op: &dyn Operator) -> Result<CsrMatrix> {
    let topo = op.topology();
    if topo.level() > ASSEMBLY_CAP {
        return Err(Error::AssemblyCap {
            level: topo.level(),
            cap: ASSEMBLY_CAP,
        });
    }
    let lattice = topo.lattice();
    let n = lattice.n;
    let mut triplets = Vec::new();
    let mut buf = Vec::new();
    for t in 0..topo.num_triangles() {
        for j in 1..n.saturating_sub(1) {
            let off = stencil_offsets(n, j);
            let base = lattice.row_offset(j) + 1;
            for (k, s) in op.row_stencils(t, j, &mut buf).iter().enumerate() {
                let flat = t * topo.block_len() + base + k;
                let g = topo.global_of(flat);
                for d in 0..7 {
                    triplets.push((g, topo.global_of((flat as isize + off[d]) as usize), s[d]));
                }
            }
        }
    }
    for row in &op.interface().rows {
        triplets.push((row.global, row.global, row.diag));
        triplets.extend(row.entries.iter().map(|e| (row.global, e.col, e.value)));
    }
    for &f in &op.interface().dirichlet_flats {
        let g = topo.global_of(f);
        triplets.push((g, g, 1.0));
    }
    let size = topo.num_global();
    Ok(CsrMatrix::from_triplets(size, size, &triplets))
}

/// Classical element-by-element assembly over all fine triangles, with
/// Dirichlet rows replaced by the identity.
pub fn assemble_elementwise(topo: &LevelTopology, comp: &StencilComputer) -> Result<CsrMatrix> {
    if topo.level() > ASSEMBLY_CAP {
        return Err(Error::AssemblyCap {
            level: topo.level(),
            cap: ASSEMBLY_CAP,
        });
    }
    let tris = FineTriangles::new(topo.level());
    let mut triplets = Vec::new();
    for t in 0..topo.num_triangles() {
        let geom = FineGeometry::new(topo.mesh().map(t), topo.level());
        for tri in tris.iter() {
            let e = comp.element_matrix(&geom, t, tri);
            let gl = tri.vertices().map(|(i, j)| topo.global_of(topo.flat(t, i, j)));
            for a in 0..3 {
                if topo.is_dirichlet(gl[a]) {
                    continue;
                }
                for b in 0..3 {
                    triplets.push((gl[a], gl[b], e[a][b]));
                }
            }
        }
    }
    for g in (0..topo.num_global()).filter(|&g| topo.is_dirichlet(g)) {
        triplets.push((g, g, 1.0));
    }
    let size = topo.num_global();
    Ok(CsrMatrix::from_triplets(size, size, &triplets))
}

/// `b_i = ∫ f φ_i` with a quadrature rule of the given degree on every fine
/// triangle. Synchronized.
pub fn load_vector(topo: &Arc<LevelTopology>, f: impl Fn(Point) -> f64 + Sync, quad_degree: usize) -> GridFunction {
    let quad = QuadratureRule::with_degree(quad_degree);
    let lattice = topo.lattice();
    let tris = FineTriangles::new(topo.level());
    let mut b = GridFunction::zeros(topo);
    let data = b.values_mut();
    data.par_chunks_mut(topo.block_len()).enumerate().for_each(|(t, block)| {
        let geom = FineGeometry::new(topo.mesh().map(t), topo.level());
        for tri in tris.iter() {
            let verts = tri.vertices();
            for (k, (xi, w)) in quad.points.iter().zip(&quad.weights).enumerate() {
                let fx = f(geom.tri_point(tri, *xi)) * w * 2.0 * geom.area;
                let bary = quad.barycentric(k);
                for (a, &(i, j)) in verts.iter().enumerate() {
                    block[lattice.index(i, j)] += fx * bary[a];
                }
            }
        }
    });
    topo.sum_aliases(data);
    b.assume_synced();
    b
}

/// Grid function equal to `g` on Dirichlet DoFs and zero elsewhere.
pub fn dirichlet_lift(topo: &Arc<LevelTopology>, g: impl Fn(Point) -> f64) -> GridFunction {
    let mut u = GridFunction::zeros(topo);
    u.set_dirichlet(g);
    u.assume_synced();
    u
}

/// Right-hand side `b - A lift` of the homogeneous problem for `w = u - lift`.
pub fn homogeneous_rhs(op: &dyn Operator, b: &GridFunction, lift: &GridFunction) -> Result<GridFunction> {
    residual(op, lift, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientField;
    use crate::mesh::MacroMesh;
    use crate::stencil::Form;

    fn square(level: u32) -> Arc<LevelTopology> {
        let mesh = MacroMesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        Arc::new(LevelTopology::new(Arc::new(mesh), level).unwrap())
    }

    #[test]
    fn row_start_matches_storage_order() {
        let lattice = crate::mesh::LatticeIndex::new(4);
        for (k, (i, j)) in lattice.interior_points().enumerate() {
            assert_eq!(interior_row_start(16, j) + i - 1, k);
        }
    }

    #[test]
    fn offsets_match_lattice() {
        let lattice = crate::mesh::LatticeIndex::new(3);
        for (i, j) in lattice.interior_points() {
            let off = stencil_offsets(8, j);
            for d in Direction::ALL {
                let (a, b) = d.step(8, i, j).unwrap();
                assert_eq!(lattice.index(i, j) as isize + off[d.index()], lattice.index(a, b) as isize);
            }
        }
    }

    #[test]
    fn matrix_free_equals_assembled() {
        let topo = square(4);
        let comp = Arc::new(StencilComputer::new(CoefficientField::benchmark_scalar(), Form::Stiffness, 4));
        let op = TrueOperator::new(&topo, comp.clone());
        let a = assemble(&op).unwrap();
        let classical = assemble_elementwise(&topo, &comp).unwrap();
        assert!(a.sub(&classical).unwrap().max_abs() < 1e-12 * a.max_abs());
        let u = GridFunction::from_fn(&topo, |p| (3.0 * p[0]).sin() + p[1] * p[1]);
        let v = apply_new(&op, &u).unwrap();
        let reference = a.matvec(&u.to_global());
        for (g, r) in reference.iter().enumerate() {
            assert!((v.global_value(g) - r).abs() < 1e-12 * (1.0 + r.abs()));
        }
        let fly = TrueOperator::on_the_fly(&topo, comp);
        assert_eq!(assemble(&fly).unwrap().sub(&a).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn assembly_cap() {
        let topo = square(8);
        let comp = Arc::new(StencilComputer::new(CoefficientField::constant(1.0), Form::Mass, 1));
        let op = TrueOperator::on_the_fly(&topo, comp);
        assert!(matches!(assemble(&op), Err(Error::AssemblyCap { level: 8, cap: 7 })));
    }

    #[test]
    fn load_vector_of_one_sums_to_area() {
        let topo = square(3);
        let b = load_vector(&topo, |_| 1.0, 2);
        let total: f64 = (0..topo.num_global()).map(|g| b.global_value(g)).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn combined_is_linear_combination() {
        let topo = square(3);
        let k = Arc::new(StencilComputer::new(CoefficientField::benchmark_scalar(), Form::Stiffness, 4));
        let m = Arc::new(StencilComputer::new(CoefficientField::constant(1.0), Form::Mass, 1));
        let a: Arc<dyn Operator> = Arc::new(TrueOperator::new(&topo, k));
        let b: Arc<dyn Operator> = Arc::new(TrueOperator::new(&topo, m));
        let c = CombinedOperator::new(b.clone(), 1.0, a.clone(), 0.25).unwrap();
        let ac = assemble(&c).unwrap();
        let aa = assemble(a.as_ref()).unwrap();
        let ab = assemble(b.as_ref()).unwrap();
        for g in 0..topo.num_global() {
            for (col, v) in ac.row(g) {
                let expect = if topo.is_dirichlet(g) {
                    ab.get(g, col)
                } else {
                    ab.get(g, col) + 0.25 * aa.get(g, col)
                };
                let expect = if topo.is_dirichlet(g) && col == g { 1.0 } else { expect };
                assert!((v - expect).abs() < 1e-14, "{g} {col} {v} {expect}");
            }
        }
    }
}
