//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criteria can be selected by number:
//! `cargo test --test acceptance -- 4 10`.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use surrogate_fem::analysis::{
    assemble_free, random_symmetric_pair, spectral_bound_check, spectral_bound_check_sparse, time_applies,
};
use surrogate_fem::coefficients::CoefficientField;
use surrogate_fem::grid::GridFunction;
use surrogate_fem::mesh::{LevelTopology, MacroMesh};
use surrogate_fem::operator::{apply_new, assemble, assemble_elementwise, Operator, SurrogateOperator, TrueOperator};
use surrogate_fem::problems::{
    convergence_study, plaplacian_run, relative_l2_difference, sampling_level_study, solve_poisson, unit_disk,
    unit_square, ConvergenceParams, ConvergenceStudy, Method, PLaplacianParams, PoissonBenchmark, SolveParams,
};
use surrogate_fem::sparse::CsrMatrix;
use surrogate_fem::stencil::{Form, StencilComputer};
use surrogate_fem::surrogate::SurrogateConfig;
use surrogate_fem::Result;

/// Outcome of one criterion: pass flag and a one-line summary of the measured values.
type Outcome = Result<(bool, String)>;

fn topology(mesh: MacroMesh, level: u32) -> Arc<LevelTopology> {
    Arc::new(LevelTopology::new(Arc::new(mesh), level).unwrap())
}

fn stiffness(field: CoefficientField, quad_degree: usize) -> Arc<StencilComputer> {
    Arc::new(StencilComputer::new(field, Form::Stiffness, quad_degree))
}

fn max_abs_diff(a: &CsrMatrix, b: &CsrMatrix) -> Result<f64> {
    Ok(a.sub(b)?.max_abs())
}

/// Least-squares slope of `log2 y` against `log2 x`.
fn log2_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.log2()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.log2()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn within(x: f64, centre: f64, tol: f64) -> bool {
    (x - centre).abs() <= tol
}

/// Polynomial coefficients of degree `q` that stay positive on the unit square.
fn polynomial_fields(q: u32) -> Vec<CoefficientField> {
    let mut terms = vec![(0, 0, 2.0)];
    for d in 1..=q {
        for a in 0..=d {
            terms.push((a, d - a, 0.3 / (1 + a) as f64));
        }
    }
    let diag = terms.clone();
    let off: Vec<_> = terms.iter().map(|&(a, b, c)| (a, b, 0.1 * c)).collect();
    vec![
        CoefficientField::polynomial(terms),
        CoefficientField::polynomial_tensor(diag.clone(), off, diag.iter().map(|&(a, b, c)| (b, a, c)).collect()),
    ]
}

fn reproduction() -> Outcome {
    let topo = topology(unit_square(), 5);
    let mut worst: f64 = 0.0;
    for q in 1..=3u32 {
        for field in polynomial_fields(q) {
            let comp = stiffness(field, (q as usize).max(2));
            let exact = assemble(&TrueOperator::new(&topo, comp.clone()))?;
            let sur = assemble(&SurrogateOperator::new(&topo, &comp, &SurrogateConfig::new(q as usize, 3))?)?;
            worst = worst.max(max_abs_diff(&exact, &sur)? / exact.max_abs());
        }
    }
    Ok((worst <= 1e-11, format!("max relative |A - Ã| over q = 1..3 = {worst:.2e} (limit 1e-11)")))
}

/// Applies `op` to every unit vector and compares with the columns of `reference`.
fn probe(op: &dyn Operator, reference: &CsrMatrix) -> Result<f64> {
    let topo = op.topology().clone();
    let n = topo.num_global();
    let columns = reference.transpose();
    let scale = reference.max_abs();
    let mut e = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for j in 0..n {
        e[j] = 1.0;
        let v = apply_new(op, &GridFunction::from_global(&topo, &e)?)?.to_global();
        e[j] = 0.0;
        let mut col = vec![0.0; n];
        for (r, x) in columns.row(j) {
            col[r] = x;
        }
        worst = worst.max(v.iter().zip(&col).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale);
    }
    Ok(worst)
}

fn oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    for (mesh, level) in [(unit_square(), 3), (unit_square(), 4), (unit_disk(1), 4)] {
        let topo = topology(mesh, level);
        let comp = stiffness(CoefficientField::benchmark_scalar(), 4);
        let classical = assemble_elementwise(&topo, &comp)?;
        worst = worst.max(probe(&TrueOperator::new(&topo, comp.clone()), &classical)?);
        worst = worst.max(probe(&TrueOperator::on_the_fly(&topo, comp.clone()), &classical)?);
        let sur = SurrogateOperator::new(&topo, &comp, &SurrogateConfig::new(2, level))?;
        worst = worst.max(probe(&sur, &assemble(&sur)?)?);
        probed += topo.num_global();
    }
    Ok((worst <= 1e-13, format!("{probed} unit vectors per operator, max relative deviation {worst:.2e} (limit 1e-13)")))
}

fn spectral_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    for _ in 0..1000 {
        let dim = rand::Rng::gen_range(&mut rng, 2..=20);
        let (m, n) = random_symmetric_pair(&mut rng, dim);
        if !spectral_bound_check(&m, &n)?.passes() {
            failures += 1;
        }
    }
    let topo = topology(unit_square(), 4);
    let comp = stiffness(CoefficientField::benchmark_scalar(), 4);
    let a = assemble_free(&TrueOperator::new(&topo, comp.clone()))?;
    let s = assemble_free(&SurrogateOperator::new(&topo, &comp, &SurrogateConfig::new(2, 4))?)?;
    let bench = spectral_bound_check_sparse(&a, &s)?;
    Ok((
        failures == 0 && bench.passes(),
        format!(
            "{failures} of 1000 random pairs fail; benchmark pair: max gap {:.2e} <= inf-norm {:.2e}, <= {} x max-norm {:.2e}",
            bench.max_gap(),
            bench.inf_norm_diff,
            bench.ell,
            bench.max_norm_diff
        ),
    ))
}

fn consistency_decay() -> Outcome {
    // H0 is the two-triangle square refined four times; see the README.
    let level = 4;
    let comp = stiffness(CoefficientField::benchmark_scalar(), 4);
    let sizes = [1.0, 0.5, 0.25];
    let mut ok = true;
    let mut summary = Vec::new();
    for q in [1usize, 2] {
        let diffs: Vec<f64> = (4..=6)
            .map(|k| {
                let topo = topology(unit_square().refine_times(k), level);
                let exact = assemble(&TrueOperator::new(&topo, comp.clone()))?;
                let sur = assemble(&SurrogateOperator::new(&topo, &comp, &SurrogateConfig::new(q, level))?)?;
                max_abs_diff(&exact, &sur)
            })
            .collect::<Result<_>>()?;
        let slope = log2_slope(&sizes, &diffs);
        ok &= slope >= q as f64 + 0.6 && slope <= q as f64 + 1.4;
        let shown: Vec<String> = diffs.iter().map(|d| format!("{d:.2e}")).collect();
        summary.push(format!(
            "q = {q}: |A - Ã|max [{}], slope {slope:.2} (band [{}, {}])",
            shown.join(", "),
            q as f64 + 0.6,
            q as f64 + 1.4
        ));
    }
    Ok((ok, summary.join("; ")))
}

/// Scalar-type study on H0/2, H0/4, H0/8 at fine level 8 with `m_LS = m`.
fn study(bench: &PoissonBenchmark, q: usize) -> Result<ConvergenceStudy> {
    let mut params = ConvergenceParams::new(3, SolveParams::new(8), SurrogateConfig::new(q, 8));
    params.base_h_ratio = 0.5;
    convergence_study(bench, &unit_square().refine_times(1), &params)
}

fn finest_eoc(study: &ConvergenceStudy) -> (f64, f64) {
    let last = study.rows.last().unwrap();
    (last.eoc_l2.unwrap(), last.eoc_h1.unwrap())
}

fn h_convergence() -> Outcome {
    let bench = PoissonBenchmark::scalar();
    let (l2_1, h1_1) = finest_eoc(&study(&bench, 1)?);
    let (_, h1_2) = finest_eoc(&study(&bench, 2)?);
    let ok = within(h1_1, 2.0, 0.3) && within(l2_1, 3.0, 0.3) && within(h1_2, 3.0, 0.4);
    Ok((
        ok,
        format!("q = 1: H1 eoc {h1_1:.2} (2 ± 0.3), L2 eoc {l2_1:.2} (3 ± 0.3); q = 2: H1 eoc {h1_2:.2} (3 ± 0.4)"),
    ))
}

fn sampling_regime() -> Outcome {
    let offsets = [0, 2, 4, 6];
    let mut params = ConvergenceParams::new(3, SolveParams::new(8), SurrogateConfig::new(1, 8));
    params.base_h_ratio = 0.5;
    let rows = sampling_level_study(&PoissonBenchmark::scalar(), &unit_square().refine_times(1), &params, &offsets)?;
    let eocs: Vec<f64> = offsets
        .iter()
        .map(|&off| {
            rows.iter()
                .filter(|r| r.h_ls_ratio == (1u64 << off) as f64)
                .last()
                .and_then(|r| r.eoc_l2)
                .unwrap()
        })
        .collect();
    let monotone = eocs.windows(2).all(|w| w[1] <= w[0] + 0.05);
    let never_better = rows.iter().all(|r| r.rel_l2 >= 0.99 * r.rel_l2_standard);
    let ok = eocs[0] >= 2.7 && eocs[3] >= 1.7 && monotone && never_better;
    Ok((
        ok,
        format!(
            "L2 eoc at H_LS = h, 4h, 16h, 64h: {eocs:.2?} (first >= 2.7, last >= 1.7, non-increasing); surrogate >= classical error: {never_better}"
        ),
    ))
}

fn tensor_pullback() -> Outcome {
    let mut params = ConvergenceParams::new(2, SolveParams::new(5), SurrogateConfig::new(2, 5));
    params.base_h_ratio = 1.0;
    let base = unit_square();
    let flat = convergence_study(&PoissonBenchmark::tensor(0.0), &base, &params)?;
    let plain = convergence_study(&PoissonBenchmark::plain_tensor(), &base, &params)?;
    let mut dev: f64 = 0.0;
    for (a, b) in flat.surrogate.iter().chain(&flat.standard).zip(plain.surrogate.iter().chain(&plain.standard)) {
        dev = dev.max(((a.rel_l2 - b.rel_l2) / b.rel_l2).abs());
        dev = dev.max(((a.rel_h1 - b.rel_h1) / b.rel_h1).abs());
    }
    let (_, h1) = finest_eoc(&study(&PoissonBenchmark::tensor(0.1), 1)?);
    let ok = dev <= 1e-12 && within(h1, 2.0, 0.4);
    Ok((ok, format!("a = 0 vs plain tensor: max relative error deviation {dev:.1e} (limit 1e-12); a = 0.1, q = 1: H1 eoc {h1:.2} (2 ± 0.4)")))
}

fn multigrid_robustness() -> Outcome {
    let bench = PoissonBenchmark::scalar();
    let mesh = Arc::new(unit_square().refine_times(2));
    let (mut standard, mut surrogate) = (Vec::new(), Vec::new());
    for m in 5..=7 {
        let params = SolveParams::new(m);
        let a = solve_poisson(&bench, &mesh, &params, Method::Standard)?;
        let s = solve_poisson(&bench, &mesh, &params, Method::Surrogate(SurrogateConfig::new(2, m)))?;
        if !(a.stats.converged && s.stats.converged) {
            return Ok((false, format!("solver did not converge at m = {m}")));
        }
        standard.push(a.stats.cycles() as i64);
        surrogate.push(s.stats.cycles() as i64);
    }
    let spread = |v: &[i64]| v.iter().max().unwrap() - v.iter().min().unwrap();
    let gap = standard.iter().zip(&surrogate).map(|(a, b)| (a - b).abs()).max().unwrap();
    let ok = gap <= 3 && spread(&standard) <= 3 && spread(&surrogate) <= 3;
    Ok((ok, format!("cycles to 1e-11 at m = 5, 6, 7: true {standard:?}, surrogate {surrogate:?}")))
}

fn row_sums_and_symmetry() -> Outcome {
    let comp = stiffness(CoefficientField::benchmark_scalar(), 4);
    let (mut row_sum, mut asym): (f64, f64) = (0.0, 0.0);
    for (mesh, q) in [(unit_square(), 1), (unit_square(), 2), (unit_square().refine_times(2), 3), (unit_disk(1), 4)] {
        let topo = topology(mesh, 5);
        let sur = SurrogateOperator::new(&topo, &comp, &SurrogateConfig::new(q, 5))?;
        let a = assemble(&sur)?;
        let scale = a.max_abs();
        let ones = a.matvec(&vec![1.0; a.nrows()]);
        for (g, s) in ones.iter().enumerate() {
            if !topo.is_dirichlet(g) {
                row_sum = row_sum.max(s.abs() / scale);
            }
        }
        // Dirichlet rows are identity rows, so symmetry is a property of the free block.
        asym = asym.max(assemble_free(&sur)?.asymmetry() / scale);
    }
    Ok((
        row_sum <= 1e-12 && asym <= 1e-12,
        format!("max |Ã 1| = {row_sum:.1e}, max |Ã - Ãᵀ| = {asym:.1e} relative to |Ã|max (limit 1e-12)"),
    ))
}

fn plaplacian() -> Outcome {
    let mut params = PLaplacianParams::new(6);
    params.surrogate = Some(SurrogateConfig::new(6, 4));
    let (standard, surrogate) = plaplacian_run(&Arc::new(unit_disk(1)), &params)?;
    let surrogate = surrogate.unwrap();
    let mut ok = true;
    let mut summary = Vec::new();
    for run in [&standard, &surrogate] {
        let max_inc = run.max_increment();
        let centre = run.center_values();
        let monotone = centre.windows(2).all(|w| w[1] >= w[0]);
        let last = *centre.last().unwrap();
        ok &= max_inc <= 1e-3 && monotone && (0.9..=1.05).contains(&last);
        summary.push(format!(
            "{}: max increment {max_inc:.2e}, centre monotone {monotone}, final centre {last:.4}",
            run.label
        ));
    }
    let diff = relative_l2_difference(&surrogate.u, &standard.u)?;
    ok &= diff <= 1e-2;
    summary.push(format!("relative L2 difference {diff:.2e} (limit 1e-2)"));
    Ok((ok, summary.join("; ")))
}

fn mvp_throughput() -> Outcome {
    let topo = topology(unit_square().refine_times(1), 7);
    let comp = stiffness(CoefficientField::benchmark_scalar(), 4);
    let u = GridFunction::from_fn(&topo, |p| (3.0 * p[0]).sin() + p[1]);
    let baseline = time_applies(&TrueOperator::on_the_fly(&topo, comp.clone()), &u, 1, 5)?.median();
    let mut ratios = Vec::new();
    for q in 1..=4 {
        let sur = SurrogateOperator::new(&topo, &comp, &SurrogateConfig::new(q, 7))?;
        ratios.push(baseline / time_applies(&sur, &u, 1, 5)?.median());
    }
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((worst >= 2.0, format!("m = 7, surrogate over on-the-fly throughput for q = 1..4: {ratios:.1?} (>= 2)")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("polynomial reproduction", reproduction),
        ("matrix-free vs assembled oracle", oracle_equivalence),
        ("eigenvalue perturbation bound", spectral_bound),
        ("consistency decay", consistency_decay),
        ("H-convergence rates", h_convergence),
        ("sampling-level regime", sampling_regime),
        ("tensor pullback benchmark", tensor_pullback),
        ("multigrid robustness", multigrid_robustness),
        ("zero row sum and symmetry", row_sums_and_symmetry),
        ("p-Laplacian", plaplacian),
        ("MVP throughput", mvp_throughput),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let n = k + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict} [{name}, {:.1} s] {detail}", start.elapsed().as_secs_f64());
        if !pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
