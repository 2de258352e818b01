use std::sync::Arc;

use nalgebra::DVector;

use surrogate_fem::analysis::{eoc, error_norms};
use surrogate_fem::coefficients::CoefficientField;
use surrogate_fem::grid::GridFunction;
use surrogate_fem::mesh::{LevelTopology, MacroMesh};
use surrogate_fem::multigrid::{check_diagonal, Multigrid, MultigridConfig};
use surrogate_fem::operator::{assemble, dirichlet_lift, load_vector, Operator, SurrogateOperator, TrueOperator};
use surrogate_fem::problems::{
    build_operators, build_topologies, solve_poisson, unit_disk, unit_square, Method, PoissonBenchmark, SolveParams,
};
use surrogate_fem::stencil::{Form, StencilComputer};
use surrogate_fem::surrogate::SurrogateConfig;
use surrogate_fem::Error;

#[test]
fn multigrid_matches_a_dense_solve() {
    let bench = PoissonBenchmark::scalar();
    let mesh = Arc::new(unit_square());
    let params = SolveParams::new(4);
    for method in [Method::Standard, Method::Surrogate(SurrogateConfig::new(2, 4))] {
        let sol = solve_poisson(&bench, &mesh, &params, method).unwrap();
        let topo = sol.u.topology().clone();
        let comp = Arc::new(StencilComputer::new(bench.field.clone(), Form::Stiffness, params.quad_degree));
        let op: Box<dyn Operator> = match method {
            Method::Surrogate(cfg) => Box::new(SurrogateOperator::new(&topo, &comp, &cfg).unwrap()),
            _ => Box::new(TrueOperator::new(&topo, comp)),
        };
        let a = assemble(op.as_ref()).unwrap().to_dense();
        let mut b = load_vector(&topo, |p| (bench.f)(p), 6).to_global();
        let lift = dirichlet_lift(&topo, |p| (bench.u)(p)).to_global();
        for g in 0..topo.num_global() {
            if topo.is_dirichlet(g) {
                b[g] = lift[g];
            }
        }
        let dense = a.lu().solve(&DVector::from_vec(b)).unwrap();
        let mg = DVector::from_vec(sol.u.to_global());
        let rel = (&mg - &dense).amax() / dense.amax();
        assert!(rel < 1e-9, "{method:?}: {rel:e}");
    }
}

#[test]
fn surrogate_multigrid_contracts_fast_at_level_six() {
    let bench = PoissonBenchmark::scalar();
    let sol = solve_poisson(
        &bench,
        &Arc::new(unit_square().refine_times(1)),
        &SolveParams::new(6),
        Method::Surrogate(SurrogateConfig::new(2, 6)),
    )
    .unwrap();
    assert!(sol.stats.converged);
    let rho = sol.stats.mean_contraction();
    assert!(rho <= 0.2, "mean contraction {rho}");
}

#[test]
fn cg_coarse_solver_agrees_with_lu() {
    let bench = PoissonBenchmark::tensor(0.1);
    let mesh = Arc::new(unit_disk(0));
    let mut params = SolveParams::new(5);
    let lu = solve_poisson(&bench, &mesh, &params, Method::Standard).unwrap();
    params.mg.coarse = surrogate_fem::multigrid::CoarseSolver::Cg {
        tol: 1e-14,
        max_iter: 500,
    };
    let cg = solve_poisson(&bench, &mesh, &params, Method::Standard).unwrap();
    assert!(lu.u.max_abs_diff(&cg.u) < 1e-9);
}

#[test]
fn zero_diagonal_is_reported_before_smoothing() {
    let topo = Arc::new(LevelTopology::new(Arc::new(unit_square()), 3).unwrap());
    let comp = Arc::new(StencilComputer::new(CoefficientField::constant(0.0), Form::Stiffness, 2));
    let op: Arc<dyn Operator> = Arc::new(TrueOperator::new(&topo, comp));
    assert!(matches!(check_diagonal(op.as_ref()), Err(Error::ZeroDiagonal { .. })));
    assert!(matches!(
        Multigrid::new(vec![op], MultigridConfig::default()),
        Err(Error::ZeroDiagonal { .. })
    ));
}

#[test]
fn classical_fem_converges_at_optimal_rates() {
    // u = sin(x) sinh(y) with k = 1.
    let bench = PoissonBenchmark::polynomial_scalar(vec![(0, 0, 1.0)]);
    let mesh = Arc::new(unit_square());
    let (mut l2, mut h1, mut h) = (Vec::new(), Vec::new(), Vec::new());
    for m in 4..=6 {
        let sol = solve_poisson(&bench, &mesh, &SolveParams::new(m), Method::Standard).unwrap();
        l2.push(sol.errors.rel_l2);
        h1.push(sol.errors.rel_h1);
        h.push(0.5f64.powi(m as i32));
    }
    let (rl2, rh1) = (eoc(&l2, &h).unwrap(), eoc(&h1, &h).unwrap());
    assert!((rl2[1] - 2.0).abs() <= 0.2, "{rl2:?}");
    assert!((rh1[1] - 1.0).abs() <= 0.2, "{rh1:?}");
}

#[test]
fn surrogate_of_a_polynomial_coefficient_is_exact() {
    let bench = PoissonBenchmark::polynomial_scalar(vec![(0, 0, 1.0), (1, 1, 0.5), (2, 0, 0.25)]);
    let mesh = Arc::new(unit_square().refine_times(1));
    let params = SolveParams::new(5);
    let std = solve_poisson(&bench, &mesh, &params, Method::Standard).unwrap();
    for q in [2, 3] {
        let sur = solve_poisson(&bench, &mesh, &params, Method::Surrogate(SurrogateConfig::new(q, 3))).unwrap();
        let rel = (sur.errors.rel_l2 - std.errors.rel_l2).abs() / std.errors.rel_l2;
        assert!(rel < 1e-9, "q = {q}: {rel:e}");
        let rel = (sur.errors.rel_h1 - std.errors.rel_h1).abs() / std.errors.rel_h1;
        assert!(rel < 1e-9, "q = {q}: {rel:e}");
    }
}

#[test]
fn error_norms_vanish_for_linear_interpolants() {
    let topo = Arc::new(LevelTopology::new(Arc::new(unit_disk(1)), 3).unwrap());
    let u = |p: [f64; 2]| 1.0 + 2.0 * p[0] - 0.5 * p[1];
    let uh = GridFunction::from_fn(&topo, u);
    let e = error_norms(&uh, u, |_| [2.0, -0.5]).unwrap();
    assert!(e.rel_l2 <= 1e-14 && e.rel_h1 <= 1e-14, "{e:?}");
}

#[test]
fn coarse_levels_fall_back_but_the_finest_does_not() {
    let mesh = Arc::new(MacroMesh::parse("v 0 0\nv 1 0\nv 0 1\nt 0 1 2\n").unwrap());
    let comp = Arc::new(StencilComputer::new(CoefficientField::benchmark_scalar(), Form::Stiffness, 4));
    // Degree 6 needs 28 samples; level 2 has 3 interior points.
    let topos = build_topologies(&mesh, 2, 5).unwrap();
    let ops = build_operators(&topos, &comp, Method::Surrogate(SurrogateConfig::new(6, 5))).unwrap();
    assert_eq!(ops.len(), 4);
    let finest_only = build_topologies(&mesh, 2, 2).unwrap();
    let err = build_operators(&finest_only, &comp, Method::Surrogate(SurrogateConfig::new(6, 2)));
    assert!(matches!(err, Err(Error::Underdetermined { .. })));
}
