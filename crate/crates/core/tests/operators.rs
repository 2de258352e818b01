use std::sync::Arc;

use surrogate_fem::coefficients::{CoefficientField, ElementwiseField};
use surrogate_fem::grid::GridFunction;
use surrogate_fem::mesh::{LevelTopology, MacroMesh};
use surrogate_fem::operator::{apply_new, assemble, assemble_elementwise, Operator, SurrogateOperator, TrueOperator};
use surrogate_fem::problems::{unit_disk, unit_square};
use surrogate_fem::stencil::{Form, StencilComputer};
use surrogate_fem::surrogate::{InterfaceMode, SurrogateConfig};

fn topology(mesh: MacroMesh, level: u32) -> Arc<LevelTopology> {
    Arc::new(LevelTopology::new(Arc::new(mesh), level).unwrap())
}

/// An L-shaped macro-mesh with a vertex of valence six and mixed orientations.
fn l_shape() -> MacroMesh {
    MacroMesh::parse(
        "v 0 0\nv 1 0\nv 2 0\nv 0 1\nv 1 1\nv 2 1\nv 0 2\nv 1 2\n\
         t 0 1 4\nt 0 4 3\nt 1 2 5\nt 1 5 4\nt 3 4 7\nt 3 7 6\n",
    )
    .unwrap()
}

/// Largest difference between `op` applied to each unit vector and the
/// corresponding column of `reference`, relative to `max |reference|`.
fn probe(op: &dyn Operator, reference: &surrogate_fem::sparse::CsrMatrix) -> f64 {
    let topo = op.topology().clone();
    let n = topo.num_global();
    let dense = reference.to_dense();
    let scale = reference.max_abs();
    let mut e = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for j in 0..n {
        e[j] = 1.0;
        let v = apply_new(op, &GridFunction::from_global(&topo, &e).unwrap()).unwrap().to_global();
        e[j] = 0.0;
        for (r, x) in v.iter().enumerate() {
            worst = worst.max((x - dense[(r, j)]).abs() / scale);
        }
    }
    worst
}

fn fields() -> Vec<CoefficientField> {
    vec![
        CoefficientField::benchmark_scalar(),
        CoefficientField::benchmark_tensor(),
        CoefficientField::polynomial_tensor(vec![(0, 0, 2.0), (1, 0, 0.5)], vec![(0, 1, 0.3)], vec![(0, 0, 1.5)]),
    ]
}

#[test]
fn true_operator_matches_classical_assembly_on_unit_vectors() {
    for mesh in [unit_square(), l_shape(), unit_disk(0)] {
        let topo = topology(mesh, 3);
        for field in fields() {
            let comp = Arc::new(StencilComputer::new(field, Form::Stiffness, 4));
            let classical = assemble_elementwise(&topo, &comp).unwrap();
            let cached = TrueOperator::new(&topo, comp.clone());
            let on_the_fly = TrueOperator::on_the_fly(&topo, comp.clone());
            assert!(probe(&cached, &classical) < 1e-13);
            assert!(probe(&on_the_fly, &classical) < 1e-13);
        }
    }
}

#[test]
fn elementwise_field_matches_classical_assembly() {
    let mesh = l_shape();
    let level = 3;
    let per_macro = 4usize.pow(level);
    let values = (0..mesh.num_triangles() * per_macro).map(|k| 1.0 + (k % 7) as f64 * 0.25).collect();
    let field = CoefficientField::elementwise(ElementwiseField::new(level, values).unwrap());
    let topo = topology(mesh, level);
    let comp = Arc::new(StencilComputer::new(field, Form::Stiffness, 2));
    let classical = assemble_elementwise(&topo, &comp).unwrap();
    assert!(probe(&TrueOperator::new(&topo, comp), &classical) < 1e-13);
}

#[test]
fn surrogate_apply_matches_its_assembly_in_both_interface_modes() {
    for mode in [InterfaceMode::SurrogateCoupling, InterfaceMode::ExactOnMacroBoundary] {
        for pairing in [true, false] {
            let topo = topology(l_shape(), 4);
            let comp = StencilComputer::new(CoefficientField::benchmark_scalar(), Form::Stiffness, 4);
            let config = SurrogateConfig {
                interface_mode: mode,
                symmetric_pairing: pairing,
                ..SurrogateConfig::new(3, 4)
            };
            let op = SurrogateOperator::new(&topo, &comp, &config).unwrap();
            assert!(probe(&op, &assemble(&op).unwrap()) < 1e-13, "{mode:?} pairing {pairing}");
        }
    }
}

#[test]
fn exact_macro_boundary_rows_equal_true_rows() {
    let topo = topology(unit_disk(0), 4);
    let comp = Arc::new(StencilComputer::new(CoefficientField::benchmark_scalar(), Form::Stiffness, 4));
    let config = SurrogateConfig {
        interface_mode: InterfaceMode::ExactOnMacroBoundary,
        ..SurrogateConfig::new(2, 4)
    };
    let exact = assemble(&TrueOperator::new(&topo, comp.clone())).unwrap();
    let sur = assemble(&SurrogateOperator::new(&topo, &comp, &config).unwrap()).unwrap();
    for g in 0..topo.num_global() {
        if topo.is_macro_boundary(g) {
            for (c, v) in exact.row(g) {
                assert!((sur.get(g, c) - v).abs() < 1e-14, "row {g}, column {c}");
            }
        }
    }
}

#[test]
fn apply_is_independent_of_the_thread_count() {
    let topo = topology(unit_disk(1), 5);
    let comp = StencilComputer::new(CoefficientField::benchmark_scalar(), Form::Stiffness, 4);
    let op = SurrogateOperator::new(&topo, &comp, &SurrogateConfig::new(2, 5)).unwrap();
    let u = GridFunction::from_fn(&topo, |p| (5.0 * p[0]).sin() * p[1].exp());
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| apply_new(&op, &u).unwrap())
    };
    let serial = run(1);
    for threads in [2, 4] {
        assert_eq!(serial.values(), run(threads).values());
    }
}

#[test]
fn mass_form_matches_classical_assembly() {
    let topo = topology(l_shape(), 3);
    let comp = Arc::new(StencilComputer::new(CoefficientField::constant(1.0), Form::Mass, 2));
    let classical = assemble_elementwise(&topo, &comp).unwrap();
    assert!(probe(&TrueOperator::new(&topo, comp), &classical) < 1e-13);
}
