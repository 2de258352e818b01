use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use surrogate_fem::analysis::{
    assemble_free, convergence_rows, random_symmetric_pair, spectral_bound_check, spectral_bound_check_sparse,
    time_applies, write_convergence_csv, ConvergenceRow, SpectralReport,
};
use surrogate_fem::grid::GridFunction;
use surrogate_fem::mesh::{LevelTopology, MacroMesh};
use surrogate_fem::operator::{apply_new, assemble, Operator, SurrogateOperator, TrueOperator};
use surrogate_fem::problems::{
    convergence_study, plaplacian_run, relative_l2_difference, sampling_level_study, solve_poisson, unit_disk,
    unit_square, ConvergenceParams, Method, PLaplacianRun,
};
use surrogate_fem::stencil::{Form, StencilComputer};

use crate::config::{MeshSource, RunConfig, Task, MVP_CHECK_LEVEL};
use crate::error::{CliError, CliResult};

/// Relative tolerance of the matrix-free versus assembled apply check.
const APPLY_TOLERANCE: f64 = 1e-13;

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    match cfg.task {
        Task::Solve => solve(cfg),
        Task::Convergence => convergence(cfg),
        Task::SamplingStudy => sampling_study(cfg),
        Task::PLaplacian => plaplacian(cfg),
        Task::SpectrumCheck => spectrum_check(cfg),
        Task::BenchMvp => bench_mvp(cfg),
    }
}

fn csv_writer(dir: &Path, name: &str) -> CliResult<csv::Writer<File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> CliResult<()> {
    let mut w = csv_writer(dir, name)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_text(path: PathBuf, text: &str) -> CliResult<()> {
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// The base macro-mesh after `macro_refinements` uniform refinements.
fn base_mesh(cfg: &RunConfig) -> CliResult<MacroMesh> {
    let r = cfg.macro_refinements;
    Ok(match &cfg.mesh {
        MeshSource::Square => unit_square().refine_times(r),
        MeshSource::Disk => unit_disk(r),
        MeshSource::File(path) => MacroMesh::from_file(path)
            .map_err(|e| match e {
                surrogate_fem::Error::Io(e) => CliError::Io(format!("{}: {e}", path.display())),
                e => CliError::field("mesh", e),
            })?
            .refine_times(r),
    })
}

/// Size of the base mesh relative to the unrefined mesh.
fn base_h_ratio(cfg: &RunConfig) -> f64 {
    0.5f64.powi(cfg.macro_refinements as i32)
}

fn method_name(method: Method) -> &'static str {
    match method {
        Method::Standard => "standard",
        Method::StandardOnTheFly => "standard-on-the-fly",
        Method::Surrogate(_) => "surrogate",
    }
}

#[derive(Serialize)]
struct SolveTiming {
    method: &'static str,
    #[serde(rename = "H_ratio")]
    h_ratio: f64,
    dofs: usize,
    setup_secs: f64,
    solve_secs: f64,
    cycles: usize,
    secs_per_cycle: f64,
    rtts: Option<f64>,
}

impl SolveTiming {
    fn new(method: &'static str, h_ratio: f64, dofs: usize, secs: (f64, f64), cycles: usize) -> Self {
        Self {
            method,
            h_ratio,
            dofs,
            setup_secs: secs.0,
            solve_secs: secs.1,
            cycles,
            secs_per_cycle: secs.1 / cycles.max(1) as f64,
            rtts: None,
        }
    }
}

fn log_rows(label: &str, rows: &[ConvergenceRow]) {
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
    for r in rows {
        info!(
            "{label}: H/H0 = {:<9} rel L2 {:.3e} (eoc {}), rel H1 {:.3e} (eoc {}), {} DoFs",
            r.h_ratio,
            r.rel_l2,
            fmt(r.eoc_l2),
            r.rel_h1,
            fmt(r.eoc_h1),
            r.dofs
        );
    }
}

fn solve(cfg: &RunConfig) -> CliResult<()> {
    let bench = cfg.benchmark();
    let base = base_mesh(cfg)?;
    let method = cfg.method();
    let params = cfg.solve_params();
    let (mut h, mut errors, mut dofs, mut timing) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut unconverged = Vec::new();
    for k in 0..cfg.macro_levels {
        let mesh = Arc::new(base.refine_times(k));
        let sol = solve_poisson(&bench, &mesh, &params, method)?;
        let h_ratio = base_h_ratio(cfg) * 0.5f64.powi(k as i32);
        if !sol.stats.converged {
            unconverged.push(h_ratio);
        }
        timing.push(SolveTiming::new(
            method_name(method),
            h_ratio,
            sol.dofs,
            (sol.setup_secs, sol.solve_secs),
            sol.stats.cycles(),
        ));
        h.push(h_ratio);
        errors.push(sol.errors);
        dofs.push(sol.dofs);
        if cfg.dump {
            write_text(cfg.out.join(format!("solution_{k}.dat")), &sol.u.to_point_dump())?;
        }
    }
    let rows = convergence_rows(&h, &errors, &dofs, &vec![None; h.len()])?;
    log_rows(method_name(method), &rows);
    write_convergence_csv(File::create(cfg.out.join("results.csv"))?, &rows)?;
    write_rows(&cfg.out, "timing.csv", &timing)?;
    if !unconverged.is_empty() {
        return Err(CliError::Solver(format!(
            "multigrid did not reach rel_tol within {} cycles at H/H0 = {unconverged:?}",
            cfg.max_cycles
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct DifferenceRow {
    #[serde(rename = "H_ratio")]
    h_ratio: f64,
    rel_l2: f64,
    rel_h1: f64,
}

fn convergence(cfg: &RunConfig) -> CliResult<()> {
    let bench = cfg.benchmark();
    let base = base_mesh(cfg)?;
    let mut params = ConvergenceParams::new(cfg.macro_levels, cfg.solve_params(), cfg.surrogate_config(cfg.q));
    params.standard = cfg.standard_method();
    params.base_h_ratio = base_h_ratio(cfg);
    let study = convergence_study(&bench, &base, &params)?;

    let mut rows = study.rows.clone();
    if cfg.deterministic {
        rows.iter_mut().for_each(|r| r.rtts = None);
    }
    log_rows("surrogate", &study.rows);
    log_rows("standard", &study.standard_rows);
    write_convergence_csv(File::create(cfg.out.join("results.csv"))?, &rows)?;
    write_convergence_csv(File::create(cfg.out.join("standard.csv"))?, &study.standard_rows)?;
    let diffs: Vec<DifferenceRow> = study
        .h_ratios
        .iter()
        .zip(&study.discrete_difference)
        .map(|(&h_ratio, &(rel_l2, rel_h1))| DifferenceRow { h_ratio, rel_l2, rel_h1 })
        .collect();
    write_rows(&cfg.out, "difference.csv", &diffs)?;

    let mut timing = Vec::new();
    for k in 0..study.h_ratios.len() {
        let (h, dofs) = (study.h_ratios[k], study.dofs[k]);
        let mut sur = SolveTiming::new("surrogate", h, dofs, study.surrogate_secs[k], study.surrogate_cycles[k]);
        sur.rtts = study.rows[k].rtts;
        timing.push(sur);
        let name = method_name(params.standard);
        timing.push(SolveTiming::new(name, h, dofs, study.standard_secs[k], study.standard_cycles[k]));
    }
    write_rows(&cfg.out, "timing.csv", &timing)?;
    Ok(())
}

#[derive(Serialize)]
struct PhaseTiming {
    phase: &'static str,
    secs: f64,
}

fn sampling_study(cfg: &RunConfig) -> CliResult<()> {
    let bench = cfg.benchmark();
    let base = base_mesh(cfg)?;
    let mut params = ConvergenceParams::new(cfg.macro_levels, cfg.solve_params(), cfg.surrogate_config(cfg.q));
    params.standard = cfg.standard_method();
    params.base_h_ratio = base_h_ratio(cfg);
    let start = Instant::now();
    let rows = sampling_level_study(&bench, &base, &params, &cfg.ls_offsets)?;
    let secs = start.elapsed().as_secs_f64();
    for r in &rows {
        info!(
            "H_LS = {}h, H/H0 = {}: rel L2 {:.3e} (standard {:.3e}), eoc {}",
            r.h_ls_ratio,
            r.h_ratio,
            r.rel_l2,
            r.rel_l2_standard,
            r.eoc_l2.map(|e| format!("{e:.2}")).unwrap_or_else(|| "-".into())
        );
        if r.rel_l2 < 0.99 * r.rel_l2_standard {
            warn!("surrogate error below the classical error at H_LS = {}h, H/H0 = {}", r.h_ls_ratio, r.h_ratio);
        }
    }
    write_rows(&cfg.out, "results.csv", &rows)?;
    write_rows(&cfg.out, "timing.csv", &[PhaseTiming { phase: "study", secs }])?;
    Ok(())
}

#[derive(Serialize)]
struct StepRow<'a> {
    method: &'a str,
    step: usize,
    time: f64,
    picard_iterations: usize,
    last_increment: f64,
    center_value: f64,
    l2_norm: f64,
}

#[derive(Serialize)]
struct TrajectoryTiming<'a> {
    method: &'a str,
    secs: f64,
    steps: usize,
    picard_iterations: usize,
}

fn plaplacian(cfg: &RunConfig) -> CliResult<()> {
    let mesh = Arc::new(base_mesh(cfg)?);
    let params = cfg.plaplacian_params(Some(cfg.out.clone()));
    info!(
        "p-Laplacian p = {} on {} macro-elements at level {}, {} steps of {}",
        params.p,
        mesh.num_triangles(),
        params.level,
        params.num_steps(),
        params.dt
    );
    let (standard, surrogate) = plaplacian_run(&mesh, &params)?;
    let runs: Vec<&PLaplacianRun> = std::iter::once(&standard).chain(surrogate.as_ref()).collect();

    let mut steps = Vec::new();
    let mut timing = Vec::new();
    for run in &runs {
        steps.extend(run.steps.iter().enumerate().map(|(k, s)| StepRow {
            method: &run.label,
            step: k + 1,
            time: s.time,
            picard_iterations: s.picard_iterations,
            last_increment: s.last_increment,
            center_value: s.center_value,
            l2_norm: s.l2_norm,
        }));
        timing.push(TrajectoryTiming {
            method: &run.label,
            secs: run.secs,
            steps: run.steps.len(),
            picard_iterations: run.steps.iter().map(|s| s.picard_iterations).sum(),
        });
        if let Some(last) = run.steps.last() {
            info!("{}: centre value {:.6} at t = {}", run.label, last.center_value, last.time);
        }
        if cfg.dump {
            write_text(cfg.out.join(format!("{}.dat", run.label)), &run.u.to_point_dump())?;
        }
    }
    write_rows(&cfg.out, "results.csv", &steps)?;
    write_rows(&cfg.out, "timing.csv", &timing)?;

    if let Some(sur) = &surrogate {
        let rel = relative_l2_difference(&sur.u, &standard.u)?;
        info!("relative L2 difference surrogate vs standard at t = {}: {rel:.3e}", params.t_end);
        #[derive(Serialize)]
        struct Diff {
            time: f64,
            rel_l2_difference: f64,
        }
        write_rows(&cfg.out, "difference.csv", &[Diff { time: params.t_end, rel_l2_difference: rel }])?;
        if cfg.dump {
            let mut d = sur.u.clone();
            d.axpy(-1.0, &standard.u);
            write_text(cfg.out.join("difference.dat"), &d.to_point_dump())?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SpectrumRow {
    case: String,
    dim: usize,
    max_gap: f64,
    inf_norm_diff: f64,
    max_norm_diff: f64,
    ell: usize,
    pass: bool,
}

impl SpectrumRow {
    fn new(case: String, r: &SpectralReport) -> Self {
        Self {
            case,
            dim: r.eig_m.len(),
            max_gap: r.max_gap(),
            inf_norm_diff: r.inf_norm_diff,
            max_norm_diff: r.max_norm_diff,
            ell: r.ell,
            pass: r.passes(),
        }
    }
}

fn spectrum_check(cfg: &RunConfig) -> CliResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.trials + 1);
    for trial in 0..cfg.trials {
        let dim = rng.gen_range(2..=cfg.dim);
        let (m, n) = random_symmetric_pair(&mut rng, dim);
        rows.push(SpectrumRow::new(format!("random-{trial}"), &spectral_bound_check(&m, &n)?));
    }

    let bench = cfg.benchmark();
    let topo = Arc::new(LevelTopology::new(Arc::new(base_mesh(cfg)?), cfg.m)?);
    let comp = Arc::new(StencilComputer::new(bench.field.clone(), Form::Stiffness, cfg.quad_degree));
    let exact = TrueOperator::new(&topo, comp.clone());
    let sur = SurrogateOperator::new(&topo, &comp, &cfg.surrogate_config(cfg.q))?;
    let report = spectral_bound_check_sparse(&assemble_free(&exact)?, &assemble_free(&sur)?)?;
    rows.push(SpectrumRow::new(format!("{}-m{}-q{}", bench.name, cfg.m, cfg.q), &report));

    write_rows(&cfg.out, "results.csv", &rows)?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.case.as_str()).collect();
    info!("spectrum-check: {} of {} cases pass", rows.len() - failed.len(), rows.len());
    if failed.is_empty() {
        info!("PASS");
        Ok(())
    } else {
        Err(CliError::Check(format!("eigenvalue bounds violated for {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct CheckRow {
    check: &'static str,
    m: u32,
    q: usize,
    value: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct MvpTiming {
    operator: &'static str,
    q: Option<usize>,
    m: u32,
    dofs: usize,
    setup_secs: f64,
    median_secs: f64,
    min_secs: f64,
    max_secs: f64,
    throughput_dofs_per_sec: f64,
    speedup_vs_on_the_fly: f64,
}

fn random_function(topo: &Arc<LevelTopology>, seed: u64) -> CliResult<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..topo.num_global()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Ok(GridFunction::from_global(topo, &values)?)
}

/// `max |A u - v| / max |v|` with `v` the assembled matrix times `u`.
fn apply_vs_assembled(op: &dyn Operator, u: &GridFunction) -> CliResult<f64> {
    let reference = assemble(op)?.matvec(&u.to_global());
    let v = apply_new(op, u)?.to_global();
    let scale = reference.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let diff = v.iter().zip(&reference).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    Ok(diff / scale.max(f64::MIN_POSITIVE))
}

fn bench_mvp(cfg: &RunConfig) -> CliResult<()> {
    let bench = cfg.benchmark();
    let mesh = Arc::new(base_mesh(cfg)?);
    let comp = Arc::new(StencilComputer::new(bench.field.clone(), Form::Stiffness, cfg.quad_degree));

    let check_topo = Arc::new(LevelTopology::new(mesh.clone(), MVP_CHECK_LEVEL)?);
    let u = random_function(&check_topo, cfg.seed)?;
    let mut checks = Vec::new();
    let mut check = |name, q, op: &dyn Operator| -> CliResult<()> {
        let value = apply_vs_assembled(op, &u)?;
        checks.push(CheckRow {
            check: name,
            m: MVP_CHECK_LEVEL,
            q,
            value,
            tolerance: APPLY_TOLERANCE,
            pass: value <= APPLY_TOLERANCE,
        });
        Ok(())
    };
    check("true-apply-vs-assembled", 0, &TrueOperator::new(&check_topo, comp.clone()))?;
    for &q in &cfg.degrees {
        let op = SurrogateOperator::new(&check_topo, &comp, &cfg.surrogate_config(q))?;
        check("surrogate-apply-vs-assembled", q, &op)?;
    }
    write_rows(&cfg.out, "results.csv", &checks)?;

    let topo = Arc::new(LevelTopology::new(mesh, cfg.m)?);
    let u = random_function(&topo, cfg.seed)?;
    let mut ops: Vec<(&'static str, Option<usize>, f64, Box<dyn Operator>)> = Vec::new();
    let start = Instant::now();
    let op = TrueOperator::on_the_fly(&topo, comp.clone());
    ops.push(("standard-on-the-fly", None, start.elapsed().as_secs_f64(), Box::new(op)));
    let start = Instant::now();
    let op = TrueOperator::new(&topo, comp.clone());
    ops.push(("standard-cached", None, start.elapsed().as_secs_f64(), Box::new(op)));
    for &q in &cfg.degrees {
        let start = Instant::now();
        let op = SurrogateOperator::new(&topo, &comp, &cfg.surrogate_config(q))?;
        ops.push(("surrogate", Some(q), start.elapsed().as_secs_f64(), Box::new(op)));
    }

    let mut timing = Vec::new();
    let mut baseline = None;
    for (name, q, setup_secs, op) in &ops {
        let t = time_applies(op.as_ref(), &u, cfg.warmup, cfg.reps)?;
        let median = t.median();
        let base = *baseline.get_or_insert(median);
        if median < 0.05 {
            warn!("{name}: median apply time {median:.3e} s is below 50 ms; timings are noisy");
        }
        let q_label = q.map(|q| format!(" q = {q}")).unwrap_or_default();
        info!(
            "{name}{q_label}: median {median:.3e} s, {:.3e} DoF/s, speedup {:.1}x over on-the-fly",
            t.throughput(),
            base / median
        );
        timing.push(MvpTiming {
            operator: name,
            q: *q,
            m: cfg.m,
            dofs: t.dofs,
            setup_secs: *setup_secs,
            median_secs: median,
            min_secs: t.samples.iter().copied().fold(f64::INFINITY, f64::min),
            max_secs: t.samples.iter().copied().fold(0.0, f64::max),
            throughput_dofs_per_sec: t.throughput(),
            speedup_vs_on_the_fly: base / median,
        });
    }
    write_rows(&cfg.out, "timing.csv", &timing)?;

    let failed: Vec<String> =
        checks.iter().filter(|c| !c.pass).map(|c| format!("{} (q = {}): {:.3e}", c.check, c.q, c.value)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("matrix-free apply differs from the assembled matrix: {}", failed.join("; "))))
    }
}
