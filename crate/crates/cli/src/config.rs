//! Flat `key = value` run configuration. Values come from built-in defaults
//! (which depend on the subcommand), then an optional config file, then
//! command-line flags; the resolved configuration is echoed in the same format.

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use surrogate_fem::multigrid::{CoarseSolver, MultigridConfig};
use surrogate_fem::problems::{
    default_relaxation, stationary_rhs, Method, PLaplacianParams, PoissonBenchmark, SolveParams,
};
use surrogate_fem::surrogate::{InterfaceMode, SurrogateConfig};

use crate::error::{CliError, CliResult};

/// Largest fine level accepted for solves.
const MAX_LEVEL: u32 = 10;
/// Largest level whose free-DoF block still fits the dense eigensolver on the
/// two-triangle square.
const MAX_SPECTRUM_LEVEL: u32 = 5;
/// Level at which `bench-mvp` checks the matrix-free apply against the
/// assembled matrix.
pub const MVP_CHECK_LEVEL: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Solve,
    Convergence,
    SamplingStudy,
    PLaplacian,
    SpectrumCheck,
    BenchMvp,
}

macro_rules! config_keys {
    ($($key:ident: $help:literal),* $(,)?) => {
        /// Command-line overrides, one optional flag per config key.
        #[derive(Debug, Default, Clone, clap::Args)]
        pub struct Overrides {
            $(
                #[arg(long, value_name = "VALUE", help = $help)]
                pub $key: Option<String>,
            )*
        }

        impl Overrides {
            pub fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(if let Some(v) = &self.$key { out.push((stringify!($key), v.as_str())); })*
                out
            }
        }

        /// Every config key, in echo order.
        pub const KEYS: &[&str] = &[$(stringify!($key)),*];
    };
}

config_keys! {
    benchmark: "scalar, tensor, plain-tensor or polynomial",
    poly: "polynomial coefficient terms `i:j:c` (c x^i y^j), comma separated",
    amplitude: "amplitude of the tensor benchmark's domain map",
    mesh: "square, disk, or a macro-mesh file",
    macro_refinements: "uniform refinements of the base macro-mesh",
    macro_levels: "number of macro-mesh levels in a study",
    m: "fine lattice level inside each macro-element",
    m_ls: "sampling level of the surrogate fit (empty: the command default)",
    q: "surrogate polynomial degree, 1 to 8",
    degrees: "surrogate degrees timed by bench-mvp (empty: q)",
    zero_row_sum: "derive the centre stencil entry from the off-diagonals",
    symmetric_pairing: "fit E, N, NW only and pair the opposite directions",
    interface_mode: "surrogate-coupling or exact-on-macro-boundary",
    method: "operator of `solve`: surrogate, standard or standard-on-the-fly",
    standard: "baseline of studies: cached or on-the-fly",
    quad_degree: "exactness degree of the coefficient quadrature",
    nu1: "pre-smoothing steps",
    nu2: "post-smoothing steps",
    m_coarse: "coarsest multigrid level",
    coarse_solver: "lu or cg",
    rel_tol: "relative residual reduction that stops the solver",
    max_cycles: "V-cycle cap",
    ls_offsets: "sampling-study offsets m - m_ls, comma separated",
    p: "p-Laplacian exponent",
    dt: "time step",
    t_end: "final time",
    relaxation: "Picard relaxation in (0, 1] (empty: min(1, 1/(p-1)))",
    increment_tol: "Picard increment tolerance",
    max_picard: "Picard iteration cap per time step",
    cycles_per_solve: "V-cycles per Picard iteration",
    surrogate: "also run the surrogate p-Laplacian trajectory",
    dump: "write point-value dumps (x, y, value per line)",
    dim: "largest random matrix dimension",
    trials: "number of random matrix pairs",
    reps: "timed repetitions per operator (at least 5)",
    warmup: "untimed applications before timing",
    threads: "worker threads (empty: RAYON_NUM_THREADS or all cores)",
    deterministic: "omit timing-derived columns from results.csv",
    seed: "random seed",
    out: "output directory",
}

fn default_value(task: Task, key: &str) -> &'static str {
    use Task::*;
    match (task, key) {
        (PLaplacian, "mesh") => "disk",
        (PLaplacian, "macro_refinements") => "1",
        (PLaplacian, "m") => "6",
        (PLaplacian, "q") => "6",
        (PLaplacian, "quad_degree") => "2",
        (PLaplacian, "interface_mode") => "exact-on-macro-boundary",
        (Solve, "macro_levels") => "1",
        (SamplingStudy, "m") => "7",
        (BenchMvp, "m") => "7",
        (BenchMvp, "q") => "4",
        (SpectrumCheck, "m") => "4",
        (_, "benchmark") => "scalar",
        (_, "poly") => "0:0:1",
        (_, "amplitude") => "0.1",
        (_, "mesh") => "square",
        (_, "macro_refinements") => "0",
        (_, "macro_levels") => "3",
        (_, "m") => "5",
        (_, "q") => "2",
        (_, "zero_row_sum") => "true",
        (_, "symmetric_pairing") => "true",
        (_, "interface_mode") => "surrogate-coupling",
        (_, "method") => "surrogate",
        (_, "standard") => "cached",
        (_, "quad_degree") => "4",
        (_, "nu1") => "2",
        (_, "nu2") => "2",
        (_, "m_coarse") => "2",
        (_, "coarse_solver") => "lu",
        (_, "rel_tol") => "1e-11",
        (_, "max_cycles") => "60",
        (_, "ls_offsets") => "0,2,4",
        (_, "p") => "3",
        (_, "dt") => "0.01",
        (_, "t_end") => "1",
        (_, "increment_tol") => "0.001",
        (_, "max_picard") => "50",
        (_, "cycles_per_solve") => "5",
        (_, "surrogate") => "true",
        (_, "dump") => "false",
        (_, "dim") => "20",
        (_, "trials") => "1000",
        (_, "reps") => "5",
        (_, "warmup") => "2",
        (_, "deterministic") => "false",
        (_, "seed") => "0",
        (_, "out") => "out",
        _ => "",
    }
}

/// Explicitly set keys, before defaults are applied.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut raw = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            raw.set(key.trim(), value.trim())?;
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if !KEYS.contains(&key) {
            return Err(CliError::field(key, "unknown config key"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn apply(&mut self, overrides: &Overrides) -> CliResult<()> {
        for (k, v) in overrides.pairs() {
            self.set(k, v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkKind {
    Scalar,
    Tensor,
    PlainTensor,
    Polynomial,
}

impl FromStr for BenchmarkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "scalar" => Self::Scalar,
            "tensor" => Self::Tensor,
            "plain-tensor" => Self::PlainTensor,
            "polynomial" => Self::Polynomial,
            _ => return Err(format!("unknown benchmark `{s}`")),
        })
    }
}

impl Display for BenchmarkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Scalar => "scalar",
            Self::Tensor => "tensor",
            Self::PlainTensor => "plain-tensor",
            Self::Polynomial => "polynomial",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    Square,
    Disk,
    File(PathBuf),
}

impl Display for MeshSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Square => f.write_str("square"),
            Self::Disk => f.write_str("disk"),
            Self::File(p) => write!(f, "{}", p.display()),
        }
    }
}

/// A polynomial coefficient term `c x^i y^j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term(pub u32, pub u32, pub f64);

impl FromStr for Term {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let [i, j, c] = parts[..] else {
            return Err(format!("term `{s}` is not `i:j:c`"));
        };
        let bad = |e: &dyn Display| format!("term `{s}`: {e}");
        Ok(Self(
            i.parse().map_err(|e| bad(&e))?,
            j.parse().map_err(|e| bad(&e))?,
            c.parse().map_err(|e| bad(&e))?,
        ))
    }
}

impl Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.0, self.1, self.2)
    }
}

/// The resolved, validated configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub benchmark: BenchmarkKind,
    pub poly: Vec<Term>,
    pub amplitude: f64,
    pub mesh: MeshSource,
    pub macro_refinements: u32,
    pub macro_levels: u32,
    pub m: u32,
    pub m_ls: u32,
    pub q: usize,
    pub degrees: Vec<usize>,
    pub zero_row_sum: bool,
    pub symmetric_pairing: bool,
    pub interface_mode: InterfaceMode,
    pub method: String,
    pub standard: String,
    pub quad_degree: usize,
    pub nu1: usize,
    pub nu2: usize,
    pub m_coarse: u32,
    pub coarse_solver: String,
    pub rel_tol: f64,
    pub max_cycles: usize,
    pub ls_offsets: Vec<u32>,
    pub p: f64,
    pub dt: f64,
    pub t_end: f64,
    pub relaxation: f64,
    pub increment_tol: f64,
    pub max_picard: usize,
    pub cycles_per_solve: usize,
    pub surrogate: bool,
    pub dump: bool,
    pub dim: usize,
    pub trials: usize,
    pub reps: usize,
    pub warmup: usize,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub seed: u64,
    pub out: PathBuf,
}

struct Lookup<'a> {
    task: Task,
    raw: &'a RawConfig,
}

impl Lookup<'_> {
    fn text(&self, key: &str) -> &str {
        debug_assert!(KEYS.contains(&key), "{key}");
        self.raw.values.get(key).map(String::as_str).unwrap_or_else(|| default_value(self.task, key))
    }

    fn opt<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let s = self.text(key);
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|e| CliError::field(key, format!("cannot parse `{s}`: {e}")))
    }

    fn req<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.opt(key)?.ok_or_else(|| CliError::field(key, "a value is required"))
    }

    fn flag(&self, key: &str) -> CliResult<bool> {
        match self.text(key) {
            "true" | "yes" | "on" | "1" => Ok(true),
            "false" | "no" | "off" | "0" => Ok(false),
            s => Err(CliError::field(key, format!("expected true or false, got `{s}`"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>>
    where
        T::Err: Display,
    {
        self.text(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::field(key, format!("cannot parse `{s}`: {e}"))))
            .collect()
    }

    fn choice(&self, key: &str, allowed: &[&str]) -> CliResult<String> {
        let s = self.text(key);
        if allowed.contains(&s) {
            Ok(s.to_string())
        } else {
            Err(CliError::field(key, format!("expected one of {}, got `{s}`", allowed.join(", "))))
        }
    }
}

fn check(ok: bool, key: &str, message: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::field(key, message()))
    }
}

impl RunConfig {
    pub fn resolve(task: Task, raw: &RawConfig) -> CliResult<Self> {
        let l = Lookup { task, raw };
        let mesh = match l.text("mesh") {
            "square" => MeshSource::Square,
            "disk" => MeshSource::Disk,
            "" => return Err(CliError::field("mesh", "a value is required")),
            path => MeshSource::File(PathBuf::from(path)),
        };
        let m: u32 = l.req("m")?;
        let q: usize = l.req("q")?;
        let m_ls = match l.opt("m_ls")? {
            Some(v) => v,
            None if task == Task::PLaplacian => m.saturating_sub(2).max(2),
            None => m,
        };
        let p: f64 = l.req("p")?;
        let degrees = l.list("degrees")?;
        let cfg = Self {
            task,
            benchmark: l.req("benchmark")?,
            poly: l.list("poly")?,
            amplitude: l.req("amplitude")?,
            mesh,
            macro_refinements: l.req("macro_refinements")?,
            macro_levels: l.req("macro_levels")?,
            m,
            m_ls,
            q,
            degrees: if degrees.is_empty() { vec![q] } else { degrees },
            zero_row_sum: l.flag("zero_row_sum")?,
            symmetric_pairing: l.flag("symmetric_pairing")?,
            interface_mode: l.req("interface_mode")?,
            method: l.choice("method", &["surrogate", "standard", "standard-on-the-fly"])?,
            standard: l.choice("standard", &["cached", "on-the-fly"])?,
            quad_degree: l.req("quad_degree")?,
            nu1: l.req("nu1")?,
            nu2: l.req("nu2")?,
            m_coarse: l.req("m_coarse")?,
            coarse_solver: l.choice("coarse_solver", &["lu", "cg"])?,
            rel_tol: l.req("rel_tol")?,
            max_cycles: l.req("max_cycles")?,
            ls_offsets: l.list("ls_offsets")?,
            p,
            dt: l.req("dt")?,
            t_end: l.req("t_end")?,
            relaxation: l.opt("relaxation")?.unwrap_or_else(|| default_relaxation(p)),
            increment_tol: l.req("increment_tol")?,
            max_picard: l.req("max_picard")?,
            cycles_per_solve: l.req("cycles_per_solve")?,
            surrogate: l.flag("surrogate")?,
            dump: l.flag("dump")?,
            dim: l.req("dim")?,
            trials: l.req("trials")?,
            reps: l.req("reps")?,
            warmup: l.req("warmup")?,
            threads: l.opt("threads")?,
            deterministic: l.flag("deterministic")?,
            seed: l.req("seed")?,
            out: PathBuf::from(l.req::<String>("out")?),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let q = self.q;
        check((1..=8).contains(&q), "q", || format!("must be in 1..=8, got {q}"))?;
        for &d in &self.degrees {
            check((1..=8).contains(&d), "degrees", || format!("must be in 1..=8, got {d}"))?;
        }
        let (m, m_ls, mc) = (self.m, self.m_ls, self.m_coarse);
        check(m_ls >= 2 && m_ls <= m, "m_ls", || format!("need 2 <= m_ls <= m = {m}, got {m_ls}"))?;
        check(mc >= 2 && mc <= m, "m_coarse", || format!("need 2 <= m_coarse <= m = {m}, got {mc}"))?;
        check(m <= MAX_LEVEL, "m", || format!("must be at most {MAX_LEVEL}, got {m}"))?;
        match self.task {
            Task::SpectrumCheck => check(m <= MAX_SPECTRUM_LEVEL, "m", || {
                format!("spectrum-check assembles dense matrices; need m <= {MAX_SPECTRUM_LEVEL}, got {m}")
            })?,
            Task::BenchMvp => check(m >= MVP_CHECK_LEVEL, "m", || {
                format!("bench-mvp needs m >= {MVP_CHECK_LEVEL}, got {m}")
            })?,
            _ => {}
        }
        check(self.macro_levels >= 1, "macro_levels", || "must be at least 1".into())?;
        check(self.nu1 + self.nu2 >= 1, "nu1", || "nu1 + nu2 must be positive".into())?;
        check(self.rel_tol > 0.0 && self.rel_tol < 1.0, "rel_tol", || {
            format!("must be in (0, 1), got {}", self.rel_tol)
        })?;
        check(self.max_cycles >= 1, "max_cycles", || "must be positive".into())?;
        check((1..=12).contains(&self.quad_degree), "quad_degree", || {
            format!("must be in 1..=12, got {}", self.quad_degree)
        })?;
        check(self.amplitude.abs() < 0.5, "amplitude", || {
            format!("the domain map folds for |amplitude| >= 0.5, got {}", self.amplitude)
        })?;
        check(!self.poly.is_empty(), "poly", || "at least one term is required".into())?;
        if self.task == Task::SamplingStudy {
            check(!self.ls_offsets.is_empty(), "ls_offsets", || "at least one offset is required".into())?;
            for &off in &self.ls_offsets {
                check(off + 2 <= m, "ls_offsets", || format!("offset {off} needs m >= {}, got m = {m}", off + 2))?;
            }
        }
        check(self.dim >= 2, "dim", || format!("must be at least 2, got {}", self.dim))?;
        check(self.trials >= 1, "trials", || "must be positive".into())?;
        check(self.reps >= 5, "reps", || format!("timings use the median of at least 5 runs, got {}", self.reps))?;
        if let Some(t) = self.threads {
            check(t >= 1, "threads", || "must be positive".into())?;
        }
        if self.task == Task::PLaplacian {
            self.plaplacian_params(None).validate()?;
        }
        self.surrogate_config(q).validate()?;
        self.solve_params().validate()?;
        Ok(())
    }

    pub fn benchmark(&self) -> PoissonBenchmark {
        match self.benchmark {
            BenchmarkKind::Scalar => PoissonBenchmark::scalar(),
            BenchmarkKind::Tensor => PoissonBenchmark::tensor(self.amplitude),
            BenchmarkKind::PlainTensor => PoissonBenchmark::plain_tensor(),
            BenchmarkKind::Polynomial => {
                PoissonBenchmark::polynomial_scalar(self.poly.iter().map(|t| (t.0, t.1, t.2)).collect())
            }
        }
    }

    pub fn surrogate_config(&self, q: usize) -> SurrogateConfig {
        SurrogateConfig {
            q,
            m_ls: self.m_ls,
            zero_row_sum: self.zero_row_sum,
            symmetric_pairing: self.symmetric_pairing,
            interface_mode: self.interface_mode,
        }
    }

    pub fn multigrid(&self) -> MultigridConfig {
        MultigridConfig {
            pre_smooth: self.nu1,
            post_smooth: self.nu2,
            coarse: match self.coarse_solver.as_str() {
                "cg" => CoarseSolver::Cg {
                    tol: 1e-14,
                    max_iter: 10_000,
                },
                _ => CoarseSolver::DenseLu,
            },
            rel_tol: self.rel_tol,
            max_cycles: self.max_cycles,
        }
    }

    pub fn solve_params(&self) -> SolveParams {
        SolveParams {
            level: self.m,
            m_coarse: self.m_coarse,
            quad_degree: self.quad_degree,
            mg: self.multigrid(),
        }
    }

    /// The operator `solve` uses.
    pub fn method(&self) -> Method {
        match self.method.as_str() {
            "standard" => Method::Standard,
            "standard-on-the-fly" => Method::StandardOnTheFly,
            _ => Method::Surrogate(self.surrogate_config(self.q)),
        }
    }

    /// The baseline of convergence and sampling studies.
    pub fn standard_method(&self) -> Method {
        match self.standard.as_str() {
            "on-the-fly" => Method::StandardOnTheFly,
            _ => Method::Standard,
        }
    }

    pub fn plaplacian_params(&self, dump_dir: Option<PathBuf>) -> PLaplacianParams {
        let mut params = PLaplacianParams::new(self.m);
        params.p = self.p;
        params.f = stationary_rhs(self.p);
        params.dt = self.dt;
        params.t_end = self.t_end;
        params.m_coarse = self.m_coarse;
        params.cycles_per_solve = self.cycles_per_solve;
        params.increment_tol = self.increment_tol;
        params.relaxation = self.relaxation;
        params.max_picard = self.max_picard;
        params.mg = self.multigrid();
        params.quad_degree = self.quad_degree;
        params.surrogate = self.surrogate.then(|| self.surrogate_config(self.q));
        params.dump_dir = dump_dir;
        params
    }

    /// Resolved configuration in the config-file format; reading it back
    /// with [`RawConfig::parse`] reproduces this configuration.
    pub fn echo(&self) -> String {
        fn join<T: Display>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        }
        let value = |key: &str| -> String {
            match key {
                "benchmark" => self.benchmark.to_string(),
                "poly" => join(&self.poly),
                "amplitude" => self.amplitude.to_string(),
                "mesh" => self.mesh.to_string(),
                "macro_refinements" => self.macro_refinements.to_string(),
                "macro_levels" => self.macro_levels.to_string(),
                "m" => self.m.to_string(),
                "m_ls" => self.m_ls.to_string(),
                "q" => self.q.to_string(),
                "degrees" => join(&self.degrees),
                "zero_row_sum" => self.zero_row_sum.to_string(),
                "symmetric_pairing" => self.symmetric_pairing.to_string(),
                "interface_mode" => self.interface_mode.as_str().to_string(),
                "method" => self.method.clone(),
                "standard" => self.standard.clone(),
                "quad_degree" => self.quad_degree.to_string(),
                "nu1" => self.nu1.to_string(),
                "nu2" => self.nu2.to_string(),
                "m_coarse" => self.m_coarse.to_string(),
                "coarse_solver" => self.coarse_solver.clone(),
                "rel_tol" => self.rel_tol.to_string(),
                "max_cycles" => self.max_cycles.to_string(),
                "ls_offsets" => join(&self.ls_offsets),
                "p" => self.p.to_string(),
                "dt" => self.dt.to_string(),
                "t_end" => self.t_end.to_string(),
                "relaxation" => self.relaxation.to_string(),
                "increment_tol" => self.increment_tol.to_string(),
                "max_picard" => self.max_picard.to_string(),
                "cycles_per_solve" => self.cycles_per_solve.to_string(),
                "surrogate" => self.surrogate.to_string(),
                "dump" => self.dump.to_string(),
                "dim" => self.dim.to_string(),
                "trials" => self.trials.to_string(),
                "reps" => self.reps.to_string(),
                "warmup" => self.warmup.to_string(),
                "threads" => self.threads.map(|t| t.to_string()).unwrap_or_default(),
                "deterministic" => self.deterministic.to_string(),
                "seed" => self.seed.to_string(),
                "out" => self.out.display().to_string(),
                _ => unreachable!("unhandled config key {key}"),
            }
        };
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", value(key));
        }
        s
    }
}
