//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! failure status if any criterion fails.

use std::fs;
use std::time::Instant;

use ist_core::experiments::{
    build_benchmark, eigen_solution_basis, run_sweep, stationarity_check, BenchmarkProblem, ExperimentConfig,
    MetricChoice, SweepConfig,
};
use ist_core::kernels::{random_normal, sym_eig};
use ist_core::manifold::random_point;
use ist_core::oracles::{fd_dmetric, max_principal_angle_sin, oracle_hessian};
use ist_core::second_order::{
    christoffel_ambient, christoffel_projected, dmetric, dmetric_adjoint, EuclideanDerivatives, HessianOperator,
};
use ist_core::solvers::{Method, Phase, Status};
use ist_core::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const METRICS: [MetricChoice; 2] = [MetricChoice::G1, MetricChoice::G2];
const RHOS: [f64; 3] = [0.5, 1.0, 2.0];

/// Largest observed value of a quantity that must stay below `tol`.
struct Worst {
    label: &'static str,
    value: f64,
    tol: f64,
}

impl Worst {
    fn new(label: &'static str, tol: f64) -> Self {
        Worst { label, value: 0.0, tol }
    }

    fn see(&mut self, v: f64) {
        if v.is_nan() || v > self.value {
            self.value = if v.is_nan() { f64::INFINITY } else { v };
        }
    }

    fn ok(&self) -> bool {
        self.value < self.tol
    }

    fn describe(&self) -> String {
        format!("{} {:.2e} (< {:.0e})", self.label, self.value, self.tol)
    }
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn summarize(checks: &[Worst], extra: &[(bool, String)]) -> Outcome {
    let mut parts: Vec<String> = checks.iter().map(Worst::describe).collect();
    parts.extend(extra.iter().map(|(_, s)| s.clone()));
    Outcome {
        passed: checks.iter().all(Worst::ok) && extra.iter().all(|(ok, _)| *ok),
        detail: parts.join("; "),
    }
}

fn bench(metric: MetricChoice, rho: f64) -> BenchmarkProblem {
    build_benchmark(&ExperimentConfig {
        metric,
        rho,
        ..ExperimentConfig::default()
    })
    .expect("benchmark builds")
}

fn rel(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn rel_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn geometry_invariants() -> Outcome {
    let started = Instant::now();
    let spec = bench(MetricChoice::G1, 1.0).spec;
    let mut checks = [
        Worst::new("|Pi X|", 1e-10),
        Worst::new("|S X|", 1e-10),
        Worst::new("|Pi^2 - Pi|", 1e-10),
        Worst::new("|Q^2 - Q|", 1e-10),
        Worst::new("|X^T A X - J|", 1e-10),
    ];
    for seed in 0..100 {
        let ws = random_point(&spec, seed).expect("random point");
        checks[0].see((ws.pi() * ws.x()).norm());
        checks[1].see((ws.s() * ws.x()).norm());
        checks[2].see((ws.pi() * ws.pi() - ws.pi()).norm());
        checks[3].see((ws.q() * ws.q() - ws.q()).norm());
        checks[4].see(ws.feasibility_residual());
    }
    let secs = started.elapsed().as_secs_f64();
    summarize(&checks, &[(secs < 5.0, format!("runtime {secs:.2} s (< 5 s)"))])
}

fn metric_correctness() -> Outcome {
    let mut min_eig = f64::INFINITY;
    let mut checks = [
        Worst::new("|G G^-1 - I|", 1e-10),
        Worst::new("identity X^T A G^-1 K = rho J X^T K", 1e-10),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for metric in METRICS {
        for rho in RHOS {
            let spec = bench(metric, rho).spec;
            let n = spec.n();
            for seed in 0..10 {
                let ws = random_point(&spec, 100 + seed).expect("random point");
                let g = ws.metric_matrix();
                min_eig = min_eig.min(sym_eig(&g).expect("symmetric").eigenvalues[0]);
                let ginv = ws.metric_inverse_apply(&Mat::identity(n, n)).expect("canonical");
                checks[0].see((&g * &ginv - Mat::identity(n, n)).norm());
                for _ in 0..10 {
                    let k = random_normal(n, 3, &mut rng);
                    let lhs = ws.ax().transpose() * ws.metric_inverse_apply(&k).expect("canonical");
                    let rhs = spec.j() * (ws.x().transpose() * &k) * rho;
                    checks[1].see(rel(&lhs, &rhs));
                }
            }
        }
    }
    summarize(&checks, &[(min_eig > 0.0, format!("min eigenvalue of G {min_eig:.3e} (> 0)"))])
}

fn projection_equivalence() -> Outcome {
    let mut checks = [
        Worst::new("|P_lyap - P_closed|", 1e-10),
        Worst::new("|P(P(Y)) - P(Y)|", 1e-10),
        Worst::new("<Y - P(Y), eta>", 1e-10),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for metric in METRICS {
        let spec = bench(metric, 1.0).spec;
        let field_spec = spec.clone();
        let g = move |x: &Mat| field_spec.metric_matrix_at(x).expect("open set");
        for seed in 0..100 {
            let ws = random_point(&spec, 200 + seed).expect("random point");
            let y = random_normal(spec.n(), spec.p(), &mut rng);
            let closed = ws.project_closed_form(&y).expect("shape");
            let lyap = ws.project_lyapunov(&y, &g).expect("lyapunov");
            let scale = y.norm().max(1.0);
            checks[0].see((closed.mat() - lyap.mat()).norm() / scale);
            let twice = ws.project(closed.mat()).expect("shape");
            checks[1].see((twice.mat() - closed.mat()).norm() / scale);
            let eta = ws.random_tangent(seed);
            let normal = &y - closed.mat();
            checks[2].see(ws.inner_ambient(&normal, eta.mat()).abs() / scale);
        }
    }
    summarize(&checks, &[])
}

fn connection_correctness() -> Outcome {
    let mut checks = [
        Worst::new("DG vs FD", 1e-6),
        Worst::new("adjoint pairing", 1e-9),
        Worst::new("Christoffel symmetry", 1e-9),
        Worst::new("metric compatibility vs FD", 1e-6),
        Worst::new("projected Christoffel fast vs Koszul", 1e-9),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    for metric in METRICS {
        for rho in RHOS {
            let spec = bench(metric, rho).spec;
            let (n, p) = (spec.n(), spec.p());
            for k in 0..20 {
                let ws = random_point(&spec, 300 + k).expect("random point");
                let xi = ws.random_tangent(1000 + k);
                let eta = ws.random_tangent(2000 + k);
                let zeta = random_normal(n, p, &mut rng);

                let dg = dmetric(&ws, &zeta).expect("dmetric");
                checks[0].see(rel(&dg, &fd_dmetric(&spec, ws.x(), &zeta, h).expect("fd")));

                let hm = random_normal(n, n, &mut rng);
                let hm = (&hm + hm.transpose()) * 0.5;
                let adj = dmetric_adjoint(&ws, &hm).expect("adjoint");
                let lhs = ws.inner_ambient(&adj, &zeta);
                let rhs = (&hm * &dg).trace();
                checks[1].see(rel_scalar(lhs, rhs));

                let u = random_normal(n, p, &mut rng);
                let v = random_normal(n, p, &mut rng);
                let g_uv = christoffel_ambient(&ws, &u, &v).expect("gamma");
                let g_vu = christoffel_ambient(&ws, &v, &u).expect("gamma");
                checks[2].see(rel(&g_uv, &g_vu));

                let w = random_normal(n, p, &mut rng);
                let at = |x: &Mat| -> f64 {
                    let g = spec.metric_matrix_at(x).expect("open set");
                    v.dot(&(g * &w))
                };
                let fd = (at(&(ws.x() + xi.mat() * h)) - at(&(ws.x() - xi.mat() * h))) / (2.0 * h);
                let gv = christoffel_ambient(&ws, xi.mat(), &v).expect("gamma");
                let gw = christoffel_ambient(&ws, xi.mat(), &w).expect("gamma");
                let analytic = ws.inner_ambient(&gv, &w) + ws.inner_ambient(&v, &gw);
                checks[3].see(rel_scalar(fd, analytic));

                let fast = christoffel_projected(&ws, &xi, &eta).expect("fast");
                let slow = ws
                    .project(&christoffel_ambient(&ws, xi.mat(), eta.mat()).expect("gamma"))
                    .expect("project");
                checks[4].see(rel(fast.mat(), slow.mat()));
            }
        }
    }
    summarize(&checks, &[])
}

fn hessian_correctness() -> Outcome {
    let mut checks = [
        Worst::new("Hessian vs oracle", 1e-6),
        Worst::new("self-adjointness", 1e-8),
    ];
    for metric in METRICS {
        for rho in RHOS {
            let b = bench(metric, rho);
            let objective = b.problem.objective();
            let ws = random_point(&b.spec, 400).expect("random point");
            let derivs = EuclideanDerivatives::from_objective(objective, ws.x());
            let hess = HessianOperator::new(&ws, &derivs).expect("canonical");
            for k in 0..50 {
                let xi = ws.random_tangent(5000 + 2 * k);
                let eta = ws.random_tangent(5001 + 2 * k);
                let hx = hess.apply(&xi).expect("anchor");
                let oracle = oracle_hessian(&ws, objective, &xi, 1e-5).expect("oracle");
                checks[0].see((hx.mat() - oracle.mat()).norm() / oracle.mat().norm().max(1e-300));
                let he = hess.apply(&eta).expect("anchor");
                let a = ws.inner(&hx, &eta).expect("anchor");
                let c = ws.inner(&xi, &he).expect("anchor");
                checks[1].see(rel_scalar(a, c));
            }
        }
    }
    summarize(&checks, &[])
}

fn full_sweep(dir: &std::path::Path) -> (SweepConfig, Vec<ist_core::experiments::ExperimentOutcome>, f64) {
    let sweep = SweepConfig {
        base: ExperimentConfig {
            out_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        },
        ..SweepConfig::default()
    };
    let started = Instant::now();
    let outcomes = run_sweep(&sweep)
        .into_iter()
        .map(|r| r.expect("sweep cell runs"))
        .collect();
    (sweep, outcomes, started.elapsed().as_secs_f64())
}

fn newton_reproduction(outcomes: &[ist_core::experiments::ExperimentOutcome], secs: f64) -> Outcome {
    let mut checks = [
        Worst::new("final gradnorm", 1e-10),
        Worst::new("Newton steps after switch", 5.5),
        Worst::new("inner residual", 1e-10),
        Worst::new("inner iterations", 60.5),
    ];
    let mut extra = Vec::new();
    for o in outcomes.iter().filter(|o| o.config.method == Method::Hybrid) {
        let t = &o.trace;
        if t.status != Status::Converged {
            extra.push((false, format!("{} ended {}", o.config.run_name(), t.status.name())));
        }
        checks[0].see(t.last().gradnorm);
        let switch = t.switch_iter.unwrap_or(0);
        if t.records[switch].gradnorm >= 1e-6 {
            extra.push((false, format!("{} switched at gradnorm {:.2e}", o.config.run_name(), t.records[switch].gradnorm)));
        }
        checks[1].see(t.newton_steps() as f64);
        for r in t.records.iter().filter(|r| r.phase == Phase::Newton && r.index > 0) {
            checks[2].see(r.inner_residual.unwrap_or(f64::INFINITY));
            checks[3].see(r.inner_iters as f64);
        }
    }
    extra.push((secs < 60.0, format!("sweep wall-clock {secs:.2} s (< 60 s)")));
    summarize(&checks, &extra)
}

fn stationarity(outcomes: &[ist_core::experiments::ExperimentOutcome]) -> Outcome {
    let mut checks = [
        Worst::new("|MX - AXJX^TMX|", 1e-7),
        Worst::new("|skew(JX^TMX)|", 1e-7),
        Worst::new("sin principal angle", 1e-5_f64.sin()),
    ];
    for o in outcomes.iter().filter(|o| o.config.method == Method::Hybrid) {
        let b = build_benchmark(&o.config).expect("benchmark");
        let x = o.trace.final_point.x();
        let (res, defect) = stationarity_check(&b.spec, &b.m, x);
        checks[0].see(res);
        checks[1].see(defect);
        let target = eigen_solution_basis(&b.m, b.spec.a(), o.config.p_plus, o.config.p_minus).expect("eig");
        checks[2].see(max_principal_angle_sin(x, &target));
    }
    summarize(&checks, &[])
}

fn determinism(first: &[ist_core::experiments::ExperimentOutcome]) -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let (_, second, _) = full_sweep(dir.path());
    let mut identical = 0;
    let mut differing = Vec::new();
    for (a, b) in first.iter().zip(&second) {
        let x = fs::read(&a.csv_path).expect("csv");
        let y = fs::read(&b.csv_path).expect("csv");
        if x == y {
            identical += 1;
        } else {
            differing.push(a.config.run_name());
        }
    }
    Outcome {
        passed: differing.is_empty() && identical == first.len(),
        detail: if differing.is_empty() {
            format!("{identical}/{} CSV files byte-identical", first.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    }
}

fn main() {
    let sweep_dir = tempfile::tempdir().expect("tempdir");
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "geometry invariants", geometry_invariants()),
        (2, "metric correctness", metric_correctness()),
        (3, "projection equivalence", projection_equivalence()),
        (4, "connection correctness", connection_correctness()),
        (5, "Hessian correctness", hessian_correctness()),
    ];
    let (_, outcomes, secs) = full_sweep(sweep_dir.path());
    results.push((6, "Newton reproduction", newton_reproduction(&outcomes, secs)));
    results.push((7, "stationarity diagnostic", stationarity(&outcomes)));
    results.push((8, "determinism", determinism(&outcomes)));

    println!();
    for (k, name, o) in &results {
        println!(
            "criterion {k} {:<24} {}  {}",
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed = results.iter().filter(|r| !r.2.passed).count();
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
