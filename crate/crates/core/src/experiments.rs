//! Benchmark harness: the generalized-eigenvalue trace problem, CSV logging,
//! SVG convergence plots, config files, parameter sweeps and the oracle
//! verification table behind `ist-opt verify`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{ensure_symmetric, random_orthogonal, random_spd, skew_part, sym_eig, sym_part, Mat};
use crate::manifold::{random_point, ManifoldSpec, Metric, PointWorkspace};
use crate::oracles;
use crate::second_order::{self, EuclideanDerivatives, HessianOperator, Objective};
use crate::solvers::{self, Method, Phase, Problem, SolverConfig, SolverTrace, Status};

/// Metrics selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricChoice {
    G1,
    G2,
}

impl MetricChoice {
    pub fn name(self) -> &'static str {
        match self {
            MetricChoice::G1 => "g1",
            MetricChoice::G2 => "g2",
        }
    }

    pub fn metric(self) -> Metric {
        match self {
            MetricChoice::G1 => Metric::Canonical1,
            MetricChoice::G2 => Metric::Canonical2,
        }
    }
}

impl std::str::FromStr for MetricChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g1" => Ok(MetricChoice::G1),
            "g2" => Ok(MetricChoice::G2),
            other => Err(Error::Config(format!("unknown metric '{other}' (expected g1 or g2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: usize,
    pub p_plus: usize,
    pub p_minus: usize,
    pub seed: u64,
    pub metric: MetricChoice,
    pub rho: f64,
    pub method: Method,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub switch_tol: f64,
    pub max_outer: usize,
    pub max_inner: Option<usize>,
    pub out_dir: PathBuf,
    /// Write wall-clock milliseconds into the `time_ms` column. Off by default
    /// so that repeated runs produce identical files.
    pub record_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 10,
            p: 4,
            p_plus: 2,
            p_minus: 2,
            seed: 42,
            metric: MetricChoice::G1,
            rho: 1.0,
            method: Method::Hybrid,
            outer_tol: 1e-10,
            inner_tol: 1e-10,
            switch_tol: 1e-6,
            max_outer: 500,
            max_inner: None,
            out_dir: PathBuf::from("out"),
            record_time: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_plus + self.p_minus != self.p {
            return Err(Error::Config(format!(
                "pplus + pminus must equal p ({} + {} != {})",
                self.p_plus, self.p_minus, self.p
            )));
        }
        if self.p == 0 || self.p > self.n {
            return Err(Error::Config(format!("need 1 <= p <= n, got p={}, n={}", self.p, self.n)));
        }
        let (pos, neg) = benchmark_inertia(self.n);
        if self.p_plus > pos || self.p_minus > neg {
            return Err(Error::Config(format!(
                "A has {pos} positive and {neg} negative eigenvalues; cannot host pplus={} pminus={}",
                self.p_plus, self.p_minus
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        self.solver_config().validate()
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            method: self.method,
            outer_tol: self.outer_tol,
            max_outer: self.max_outer,
            inner_tol: self.inner_tol,
            max_inner: self.max_inner,
            switch_tol: self.switch_tol,
            ..SolverConfig::default()
        }
    }

    /// File stem shared by the CSV of this run, e.g. `g1_rho0.5_hybrid`.
    pub fn run_name(&self) -> String {
        format!("{}_rho{}_{}", self.metric.name(), self.rho, self.method.name())
    }

    pub fn csv_path(&self) -> PathBuf {
        self.out_dir.join(format!("{}.csv", self.run_name()))
    }

    /// Applies one `key=value` setting. Keys match the long CLI flags; `_`
    /// and `-` are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid value '{value}' for {what}"));
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "n" => self.n = value.parse().map_err(|_| bad("n"))?,
            "p" => {
                self.p = value.parse().map_err(|_| bad("p"))?;
                self.p_minus = self.p.saturating_sub(self.p_plus);
            }
            "pplus" | "p-plus" => {
                self.p_plus = value.parse().map_err(|_| bad("pplus"))?;
                self.p_minus = self.p.saturating_sub(self.p_plus);
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "metric" => self.metric = value.parse()?,
            "rho" => self.rho = value.parse().map_err(|_| bad("rho"))?,
            "method" => self.method = value.parse()?,
            "outer-tol" => self.outer_tol = value.parse().map_err(|_| bad("outer-tol"))?,
            "inner-tol" => self.inner_tol = value.parse().map_err(|_| bad("inner-tol"))?,
            "switch-tol" => self.switch_tol = value.parse().map_err(|_| bad("switch-tol"))?,
            "max-outer" => self.max_outer = value.parse().map_err(|_| bad("max-outer"))?,
            "max-inner" => self.max_inner = Some(value.parse().map_err(|_| bad("max-inner"))?),
            "out" | "out-dir" => self.out_dir = PathBuf::from(value),
            "record-time" => self.record_time = parse_bool(value).ok_or_else(|| bad("record-time"))?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// Parses a flat `key=value` file. Blank lines and lines starting with `#`
/// are skipped; later keys override earlier ones.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config_text(&fs::read_to_string(path)?)
}

/// Trace objective `f(X) = tr(XᵀMX)` with `egrad = 2MX` and `ehess[ξ] = 2Mξ`.
#[derive(Debug, Clone)]
pub struct TraceObjective {
    m: Mat,
}

impl TraceObjective {
    pub fn new(m: Mat) -> Result<Self> {
        ensure_symmetric(&m)?;
        Ok(TraceObjective { m: sym_part(&m) })
    }

    pub fn m(&self) -> &Mat {
        &self.m
    }
}

impl Objective for TraceObjective {
    fn value(&self, x: &Mat) -> f64 {
        x.dot(&(&self.m * x))
    }

    fn egrad(&self, x: &Mat) -> Mat {
        &self.m * x * 2.0
    }

    fn ehess(&self, _x: &Mat, xi: &Mat) -> Mat {
        &self.m * xi * 2.0
    }
}

/// Trace-objective problem on `spec`.
pub fn trace_objective(spec: Arc<ManifoldSpec>, m: Mat) -> Result<Problem> {
    Problem::new(spec, Arc::new(TraceObjective::new(m)?))
}

#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    pub spec: Arc<ManifoldSpec>,
    pub m: Mat,
    pub x0: Mat,
    pub problem: Problem,
}

fn benchmark_inertia(n: usize) -> (usize, usize) {
    (n.div_ceil(2), n / 2)
}

/// Spectrum `1, …, ⌈n/2⌉, −1, …, −⌊n/2⌋` of the benchmark `A`.
pub fn benchmark_spectrum(n: usize) -> Vec<f64> {
    let (pos, neg) = benchmark_inertia(n);
    (1..=pos)
        .map(|k| k as f64)
        .chain((1..=neg).map(|k| -(k as f64)))
        .collect()
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn benchmark_matrices(n: usize, p_plus: usize, p_minus: usize, seed: u64) -> (Mat, Mat, Mat) {
    let q = random_orthogonal(n, derive_seed(seed, 1));
    let d = Mat::from_diagonal(&DVector::from_vec(benchmark_spectrum(n)));
    let a = sym_part(&(&q * d * q.transpose()));
    let j = Mat::from_diagonal(&DVector::from_iterator(
        p_plus + p_minus,
        (0..p_plus).map(|_| 1.0).chain((0..p_minus).map(|_| -1.0)),
    ));
    let m = random_spd(n, derive_seed(seed, 2));
    (a, j, m)
}

/// Benchmark instance for `cfg`. The starting point depends only on the seed
/// and the dimensions, so every metric, `ρ` and method starts from the same `x0`.
pub fn build_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkProblem> {
    cfg.validate()?;
    let (a, j, m) = benchmark_matrices(cfg.n, cfg.p_plus, cfg.p_minus, cfg.seed);
    let start_spec = Arc::new(ManifoldSpec::new(a.clone(), j.clone(), Metric::Canonical1, 1.0)?);
    let x0 = random_point(&start_spec, derive_seed(cfg.seed, 3))?.x().clone();
    let spec = Arc::new(start_spec.with_metric(cfg.metric.metric(), cfg.rho)?);
    let problem = trace_objective(spec.clone(), m.clone())?;
    Ok(BenchmarkProblem { spec, m, x0, problem })
}

/// `(‖MX − AXJXᵀMX‖_F, ‖skew(JXᵀMX)‖_F)`: both vanish exactly at stationary points.
pub fn stationarity_check(spec: &ManifoldSpec, m: &Mat, x: &Mat) -> (f64, f64) {
    let w = spec.j() * (x.transpose() * m * x);
    let residual = (m * x - spec.a() * x * &w).norm();
    (residual, skew_part(&w).norm())
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub iter: usize,
    pub phase: Phase,
    pub f: f64,
    pub gradnorm: f64,
    pub step: f64,
    pub inner_iters: usize,
    pub time_ms: Option<f64>,
}

/// A convergence history as written to or read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub label: String,
    pub rows: Vec<CsvRow>,
}

pub const CSV_HEADER: &str = "iter,phase,f,gradnorm,step,inner_iters,time_ms";

impl ConvergenceRecord {
    pub fn from_trace(label: impl Into<String>, trace: &SolverTrace, record_time: bool) -> Self {
        ConvergenceRecord {
            label: label.into(),
            rows: trace
                .records
                .iter()
                .map(|r| CsvRow {
                    iter: r.index,
                    phase: r.phase,
                    f: r.f,
                    gradnorm: r.gradnorm,
                    step: r.step,
                    inner_iters: r.inner_iters,
                    time_ms: record_time.then_some(r.time_ms),
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{},",
                r.iter,
                r.phase.name(),
                r.f,
                r.gradnorm,
                r.step,
                r.inner_iters
            );
            if let Some(t) = r.time_ms {
                let _ = write!(out, "{t:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(label: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::Config(format!("missing CSV header '{CSV_HEADER}'"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("malformed CSV row {}: '{line}'", i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            rows.push(CsvRow {
                iter: fields[0].parse().map_err(|_| bad())?,
                phase: fields[1].parse().map_err(|_| bad())?,
                f: num(fields[2])?,
                gradnorm: num(fields[3])?,
                step: num(fields[4])?,
                inner_iters: fields[5].parse().map_err(|_| bad())?,
                time_ms: if fields[6].is_empty() { None } else { Some(num(fields[6])?) },
            });
        }
        Ok(ConvergenceRecord {
            label: label.into(),
            rows,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse_csv(label, &fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub trace: SolverTrace,
    pub record: ConvergenceRecord,
    pub csv_path: PathBuf,
    /// Stationarity residual and symmetry defect at the final iterate.
    pub stationarity: (f64, f64),
}

impl ExperimentOutcome {
    pub fn exit_code(&self) -> i32 {
        exit_code(self.trace.status)
    }
}

pub fn exit_code(status: Status) -> i32 {
    match status {
        Status::Converged => 0,
        Status::MaxIter => 2,
        Status::InnerFailure => 3,
    }
}

/// Builds the benchmark, runs the configured method and writes the CSV.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let bench = build_benchmark(cfg)?;
    let trace = solvers::solve(&bench.problem, &bench.x0, &cfg.solver_config())?;
    let record = ConvergenceRecord::from_trace(cfg.run_name(), &trace, cfg.record_time);
    fs::create_dir_all(&cfg.out_dir)?;
    let csv_path = cfg.csv_path();
    fs::write(&csv_path, record.to_csv())?;
    let stationarity = stationarity_check(&bench.spec, &bench.m, trace.final_point.x());
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        trace,
        record,
        csv_path,
        stationarity,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub metrics: Vec<MetricChoice>,
    pub rhos: Vec<f64>,
    pub methods: Vec<Method>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            base: ExperimentConfig::default(),
            metrics: vec![MetricChoice::G1, MetricChoice::G2],
            rhos: vec![0.5, 1.0, 2.0],
            methods: vec![Method::SteepestDescent, Method::NonlinearCg, Method::Hybrid],
        }
    }
}

fn parse_list<T>(value: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("empty list '{value}'")));
    }
    Ok(items)
}

impl SweepConfig {
    /// Accepts every single-run key plus the lists `metrics`, `rhos` and
    /// `methods` (comma separated).
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut sweep = SweepConfig::default();
        for (k, v) in map {
            match k.as_str() {
                "metrics" => sweep.metrics = parse_list(v, |s| s.parse())?,
                "rhos" => {
                    sweep.rhos = parse_list(v, |s| {
                        s.parse()
                            .map_err(|_| Error::Config(format!("invalid rho '{s}'")))
                    })?
                }
                "methods" => sweep.methods = parse_list(v, |s| s.parse())?,
                _ => sweep.base.set(k, v)?,
            }
        }
        Ok(sweep)
    }

    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let mut cells = Vec::new();
        for &metric in &self.metrics {
            for &rho in &self.rhos {
                for &method in &self.methods {
                    cells.push(ExperimentConfig {
                        metric,
                        rho,
                        method,
                        ..self.base.clone()
                    });
                }
            }
        }
        cells
    }
}

/// Runs every cell of the grid in parallel; results keep the grid order.
pub fn run_sweep(sweep: &SweepConfig) -> Vec<Result<ExperimentOutcome>> {
    sweep.cells().par_iter().map(run_experiment).collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders gradient norm against iteration on a log₁₀ scale, one polyline per
/// record, and writes the SVG to `path`.
pub fn emit_plot(records: &[ConvergenceRecord], path: &Path) -> Result<()> {
    let svg = render_plot(records)?;
    fs::write(path, svg)?;
    Ok(())
}

pub fn render_plot(records: &[ConvergenceRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let logs: Vec<Vec<(f64, f64)>> = records
        .iter()
        .map(|r| {
            r.rows
                .iter()
                .filter(|row| row.gradnorm > 0.0 && row.gradnorm.is_finite())
                .map(|row| (row.iter as f64, row.gradnorm.log10()))
                .collect()
        })
        .collect();
    let all = logs.iter().flatten();
    let max_iter = all.clone().map(|p| p.0).fold(1.0_f64, f64::max);
    let (mut ylo, mut yhi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if !ylo.is_finite() {
        ylo = -1.0;
        yhi = 1.0;
    }
    let (ylo, mut yhi) = (ylo.floor(), yhi.ceil());
    if yhi <= ylo {
        yhi = ylo + 1.0;
    }

    let (width, height) = (800.0, 500.0);
    let (left, right, top, bottom) = (70.0, 190.0, 30.0, 50.0);
    let pw = width - left - right;
    let ph = height - top - bottom;
    let sx = |i: f64| left + pw * i / max_iter;
    let sy = |v: f64| top + ph * (yhi - v) / (yhi - ylo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let ystep = ((yhi - ylo) / 10.0).ceil().max(1.0);
    let mut tick = ylo;
    while tick <= yhi + 1e-9 {
        let y = fmt_coord(sy(tick));
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd"/>"##,
            left + pw
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" text-anchor="end" dominant-baseline="middle">1e{}</text>"#,
            left - 6.0,
            tick as i64
        );
        tick += ystep;
    }
    let xstep = nice_step(max_iter);
    let mut xt = 0.0;
    while xt <= max_iter + 1e-9 {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt_coord(sx(xt)),
            top + ph + 18.0,
            xt as i64
        );
        xt += xstep;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#,
        left + pw / 2.0,
        height - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">gradient norm (log10)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );

    for (k, (record, pts)) in records.iter().zip(&logs).enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = pts
            .iter()
            .map(|&(i, v)| format!("{},{}", fmt_coord(sx(i)), fmt_coord(sy(v))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 10.0 + 18.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" dominant-baseline="middle">{}</text>"#,
            lx + 30.0,
            xml_escape(&record.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 8.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
        .max(1.0)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Reads every `*.csv` in `dir` (sorted by file name).
pub fn read_records_dir(dir: &Path) -> Result<Vec<ConvergenceRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| ConvergenceRecord::read_csv(p)).collect()
}

/// One line of the verification table.
#[derive(Debug, Clone)]
pub struct VerifyCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerifyCheck {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        VerifyCheck {
            name: name.into(),
            value,
            tolerance,
            passed: value.is_finite() && value < tolerance,
        }
    }
}

fn rel(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Compares every analytic formula against its oracle on the benchmark
/// geometry for both metrics and `ρ ∈ {0.5, 1, 2}`, then solves the benchmark
/// with the hybrid method and checks the solution against the dense
/// generalized eigensolver.
pub fn verify_suite(seed: u64) -> Result<Vec<VerifyCheck>> {
    let base = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    let mut checks = Vec::new();
    for metric in [MetricChoice::G1, MetricChoice::G2] {
        for rho in [0.5, 1.0, 2.0] {
            let cfg = ExperimentConfig {
                metric,
                rho,
                ..base.clone()
            };
            let bench = build_benchmark(&cfg)?;
            let tag = format!("{} rho={rho}", metric.name());
            let ws = random_point(&bench.spec, derive_seed(seed, 10))?;
            checks.extend(verify_point(&ws, &bench, &tag)?);

            let trace = solvers::hybrid(&bench.problem, &bench.x0, &cfg.solver_config())?;
            let last = trace.last();
            checks.push(VerifyCheck::new(format!("{tag}: hybrid final gradnorm"), last.gradnorm, 1e-10));
            let (res, defect) = stationarity_check(&bench.spec, &bench.m, trace.final_point.x());
            checks.push(VerifyCheck::new(format!("{tag}: stationarity residual"), res, 1e-7));
            checks.push(VerifyCheck::new(format!("{tag}: stationarity symmetry defect"), defect, 1e-7));
            let target = eigen_solution_basis(&bench.m, bench.spec.a(), cfg.p_plus, cfg.p_minus)?;
            let angle = oracles::max_principal_angle_sin(trace.final_point.x(), &target);
            checks.push(VerifyCheck::new(format!("{tag}: principal angle to eigenvectors"), angle, 1e-5_f64.sin()));
        }
    }
    Ok(checks)
}

fn verify_point(ws: &PointWorkspace, bench: &BenchmarkProblem, tag: &str) -> Result<Vec<VerifyCheck>> {
    let mut checks = Vec::new();
    let spec = ws.spec();
    let comp = oracles::null_complement(ws);
    checks.push(VerifyCheck::new(
        format!("{tag}: complement identity"),
        oracles::check_identity_eq(ws, &comp)?,
        1e-9,
    ));
    let n = spec.n();
    let closed = ws.metric_inverse_apply(&Mat::identity(n, n))?;
    checks.push(VerifyCheck::new(
        format!("{tag}: metric inverse vs complement form"),
        rel(&closed, &oracles::complement_metric_inverse(ws, &comp)?),
        1e-9,
    ));

    let xi = ws.random_tangent(1);
    let eta = ws.random_tangent(2);
    let dg = second_order::dmetric(ws, xi.mat())?;
    let fd = oracles::fd_dmetric(spec, ws.x(), xi.mat(), 1e-5)?;
    checks.push(VerifyCheck::new(format!("{tag}: DG vs finite differences"), rel(&dg, &fd), 1e-6));

    let h = sym_part(&(xi.mat() * eta.mat().transpose()));
    let adj = second_order::dmetric_adjoint(ws, &h)?;
    let adj_fd = oracles::fd_adjoint_assembly(ws, &h, 1e-5)?;
    checks.push(VerifyCheck::new(format!("{tag}: DG* vs assembled adjoint"), rel(&adj, &adj_fd), 1e-6));

    let amb = second_order::christoffel_ambient(ws, xi.mat(), eta.mat())?;
    let fast = second_order::christoffel_projected(ws, &xi, &eta)?;
    let slow = ws.project(&amb)?;
    checks.push(VerifyCheck::new(
        format!("{tag}: projected Christoffel fast vs Koszul"),
        rel(fast.mat(), slow.mat()),
        1e-9,
    ));
    let fd_gamma = oracles::fd_christoffel(ws, xi.mat(), eta.mat(), 1e-5)?;
    checks.push(VerifyCheck::new(
        format!("{tag}: Christoffel vs finite differences"),
        rel(&amb, &fd_gamma),
        1e-6,
    ));

    let objective = bench.problem.objective();
    let derivs = EuclideanDerivatives::from_objective(objective, ws.x());
    let hess = HessianOperator::new(ws, &derivs)?;
    let hx = hess.apply(&xi)?;
    let oracle = oracles::oracle_hessian(ws, objective, &xi, 1e-5)?;
    checks.push(VerifyCheck::new(format!("{tag}: Hessian vs oracle"), rel(hx.mat(), oracle.mat()), 1e-6));
    let he = hess.apply(&eta)?;
    let lhs = ws.inner(&hx, &eta)?;
    let rhs = ws.inner(&xi, &he)?;
    checks.push(VerifyCheck::new(
        format!("{tag}: Hessian self-adjointness"),
        (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0),
        1e-8,
    ));
    Ok(checks)
}

/// Columns spanning the generalized eigenvectors of `Mv = λAv` belonging to the
/// `p₊` smallest positive and the `p₋` negative eigenvalues closest to zero:
/// the minimizer of `tr(XᵀMX)` on the manifold spans exactly these.
pub fn eigen_solution_basis(m: &Mat, a: &Mat, p_plus: usize, p_minus: usize) -> Result<Mat> {
    let pairs = oracles::dense_generalized_eig(m, a)?;
    let mut pos: Vec<_> = pairs.iter().filter(|p| p.lambda > 0.0).collect();
    let mut neg: Vec<_> = pairs.iter().filter(|p| p.lambda < 0.0).collect();
    pos.sort_by(|x, y| x.lambda.total_cmp(&y.lambda));
    neg.sort_by(|x, y| y.lambda.total_cmp(&x.lambda));
    if pos.len() < p_plus || neg.len() < p_minus {
        return Err(Error::InvalidSpec("not enough generalized eigenvalues of each sign".into()));
    }
    let chosen: Vec<_> = pos.iter().take(p_plus).chain(neg.iter().take(p_minus)).collect();
    let n = m.nrows();
    let mut basis = Mat::zeros(n, chosen.len());
    for (c, pair) in chosen.iter().enumerate() {
        basis.set_column(c, &pair.vector);
    }
    Ok(basis)
}

/// Sorted spectrum of the symmetric matrix `A`, used to confirm the benchmark construction.
pub fn spectrum(a: &Mat) -> Result<Vec<f64>> {
    Ok(sym_eig(a)?.eigenvalues.iter().copied().collect())
}
