//! Acceptance suite. Prints one line per criterion and exits nonzero when any
//! criterion fails. Tolerances and time limits are pinned below.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use kawarada_core::adapt::positivity_cap;
use kawarada_core::guard::check_regularity;
use kawarada_core::harness::{self, Perturbation, StabilityStatus, TauSchedule};
use kawarada_core::mesh::eval_degeneracy;
use kawarada_core::spectral::dense::DenseMatrix;
use kawarada_core::spectral::eigen::{log_norm, spectral_norm};
use kawarada_core::spectral::oracle::{second_difference, DenseOracle};
use kawarada_core::spectral::{
    factor_positivity, gersgorin_t_bound, gersgorin_t_bound_stated, matrix_exp_bound_check, ones_vector_margin,
    OracleCap,
};
use kawarada_core::stepper::{lod_step, step_defect};
use kawarada_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BENCH_T: f64 = 0.780266;
const BENCH_T_REL: f64 = 0.01;
const BENCH_MIN_DERIVATIVE: f64 = 600.0;
const ORACLE_REL: f64 = 1e-11;
const DEFECT_RATIO: (f64, f64) = (3.0, 5.0);
const NORM_REL: f64 = 1e-10;
const ONES_TOL: f64 = -1e-13;
const LOG_NORM_REL: f64 = 1e-10;
const FLAT_GROWTH: f64 = 1.0 + 1e-6;
const LIVE_SLACK: f64 = 1.1;
const LIVE_CAP: f64 = 0.5;

type Check = fn() -> Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    check: Check,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "quench_benchmark_1d", limit: Duration::from_secs(60), check: quench_benchmark_1d },
        Criterion {
            id: 2,
            name: "dense_oracle_equivalence",
            limit: Duration::from_secs(10),
            check: dense_oracle_equivalence,
        },
        Criterion {
            id: 3,
            name: "splitting_defect_order",
            limit: Duration::from_secs(10),
            check: splitting_defect_order,
        },
        Criterion {
            id: 4,
            name: "second_difference_norm",
            limit: Duration::from_secs(30),
            check: second_difference_norm,
        },
        Criterion { id: 5, name: "factor_sign_pattern", limit: Duration::from_secs(30), check: factor_sign_pattern },
        Criterion { id: 6, name: "backward_factor_ones", limit: Duration::from_secs(10), check: backward_factor_ones },
        Criterion {
            id: 7,
            name: "monotone_from_rest_3d",
            limit: Duration::from_secs(60),
            check: monotone_from_rest_3d,
        },
        Criterion { id: 8, name: "log_norm_regularity", limit: Duration::from_secs(30), check: log_norm_regularity },
        Criterion { id: 9, name: "exp_log_norm_bound", limit: Duration::from_secs(30), check: exp_log_norm_bound },
        Criterion {
            id: 10,
            name: "frozen_twin_stability",
            limit: Duration::from_secs(30),
            check: frozen_twin_stability,
        },
        Criterion { id: 11, name: "live_twin_stability", limit: Duration::from_secs(60), check: live_twin_stability },
        Criterion {
            id: 12,
            name: "deterministic_outputs",
            limit: Duration::from_secs(60),
            check: deterministic_outputs,
        },
    ];

    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(d) if elapsed <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; over time limit")),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<26} {} [{:.2}s / {}s] {}",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            detail
        );
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

fn reciprocal() -> Arc<dyn Source> {
    Arc::new(PowerSource::reciprocal())
}

fn random_axis(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> AxisGrid {
    let weights: Vec<f64> = (0..=n).map(|_| spread.powf(rng.random_range(0.0..1.0))).collect();
    AxisGrid::from_spacing_weights(&weights).unwrap()
}

fn strongly_graded_axis(rng: &mut ChaCha8Rng, n: usize) -> AxisGrid {
    let gamma = rng.random_range(1.5f64..4.0).min(1e6f64.powf(1.0 / n as f64));
    let mut weights: Vec<f64> = (0..=n).map(|j| gamma.powi(j as i32)).collect();
    if rng.random_bool(0.5) {
        weights.reverse();
    }
    AxisGrid::from_spacing_weights(&weights).unwrap()
}

fn random_mesh(rng: &mut ChaCha8Rng, n: std::ops::RangeInclusive<usize>, spread: f64) -> Mesh {
    let mut axis = || {
        let k = rng.random_range(n.clone());
        Some(random_axis(rng, k, spread))
    };
    Mesh::new(axis(), axis(), axis()).unwrap()
}

fn random_edges(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

fn power_spec(edges: [f64; 3], q: f64) -> ProblemSpec {
    ProblemSpec::new(edges, Degeneracy::PowerLaw { q }, reciprocal())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn quench_benchmark_1d() -> Result<String, String> {
    let p = (5f64.sqrt() - 1.0) / 2.0;
    let mesh = Mesh::line(AxisGrid::uniform(200).map_err(err)?);
    let spec = ProblemSpec::new([PI, 1.0, 1.0], Degeneracy::Beta { p }, reciprocal())
        .with_initial(InitialField::Sine { amplitude: 0.001 })
        .with_horizon(0.0, 2.0);
    let setup = RunSetup::new(mesh, spec).with_steps(1e-4, 1e-9);
    let trace = harness::run(&setup).map_err(err)?;
    let Some(t) = trace.outcome.quench_time() else {
        return Err(format!("no quench: {:?}", trace.outcome));
    };
    let rel = (t - BENCH_T).abs() / BENCH_T;
    let d = trace.last_accepted_derivative();
    ensure(
        rel <= BENCH_T_REL && d > BENCH_MIN_DERIVATIVE,
        format!(
            "T={t:.6} rel_err={rel:.2e} (tol {BENCH_T_REL}) max_vt={d:.1} (> {BENCH_MIN_DERIVATIVE}) steps={}",
            trace.records.len() - 1
        ),
    )
}

fn dense_oracle_equivalence() -> Result<String, String> {
    let orders = [[Axis::X, Axis::Y, Axis::Z], [Axis::Z, Axis::X, Axis::Y], [Axis::Y, Axis::Z, Axis::X]];
    let mut worst = 0.0f64;
    let mut cases = 0;
    for seed in 0..20u64 {
        for q in [0.0, 1.0, 2.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mesh = random_mesh(&mut rng, 3..=3, 4.0);
            let spec = power_spec(random_edges(&mut rng, 0.5, 3.0), q);
            let phi = eval_degeneracy(&mesh, spec.edges, &spec.degeneracy).map_err(err)?;
            let ops = OperatorSet::build(&mesh, &phi, spec.edges).map_err(err)?;
            let oracle = DenseOracle::build(&mesh, &phi, spec.edges, OracleCap::default()).map_err(err)?;
            let state = StateVector::new((0..mesh.len()).map(|_| rng.random_range(0.0..0.5)).collect(), 0.0);
            let tau = 0.5 * positivity_cap(&mesh, &phi, &spec);
            let cfg = StepConfig { sweep_order: orders[seed as usize % 3], ..StepConfig::default() };
            let fast = lod_step(&state, tau, &ops, &spec, &phi, &cfg).map_err(err)?.state.values;
            let dense = oracle.lod_step(&state, tau, &spec, &phi, &cfg).map_err(err)?;
            let scale = dense.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            worst = worst.max(max_abs_diff(&fast, &dense) / scale);
            cases += 1;
        }
    }
    ensure(worst <= ORACLE_REL, format!("{cases} cases, max rel diff {worst:.2e} (tol {ORACLE_REL:.0e})"))
}

fn smooth_state(mesh: &Mesh, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let c: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    (0..mesh.len())
        .map(|idx| {
            let x = mesh.node_coords(idx);
            let mut v = 0.0;
            for (m, cm) in c.iter().enumerate() {
                let k = [1 + (m & 1), 1 + ((m >> 1) & 1), 1 + ((m >> 2) & 1)];
                v += cm * (0..3).map(|a| (k[a] as f64 * PI * x[a]).sin()).product::<f64>();
            }
            0.05 * v
        })
        .collect()
}

fn splitting_defect_order() -> Result<String, String> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mesh = Mesh::cube(AxisGrid::uniform(3).map_err(err)?);
        let spec = power_spec([1.0; 3], 1.0);
        let phi = eval_degeneracy(&mesh, spec.edges, &spec.degeneracy).map_err(err)?;
        let ops = OperatorSet::build(&mesh, &phi, spec.edges).map_err(err)?;
        let state = StateVector::new(smooth_state(&mesh, &mut rng), 0.0);
        let cfg = StepConfig::default();
        let coarse = step_defect(&state, 2e-4, &mesh, &ops, &spec, &phi, &cfg, OracleCap::default()).map_err(err)?;
        let fine = step_defect(&state, 1e-4, &mesh, &ops, &spec, &phi, &cfg, OracleCap::default()).map_err(err)?;
        let r = coarse / fine;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    ensure(
        lo >= DEFECT_RATIO.0 && hi <= DEFECT_RATIO.1,
        format!("10 states, defect ratio in [{lo:.3}, {hi:.3}] (required [{}, {}])", DEFECT_RATIO.0, DEFECT_RATIO.1),
    )
}

fn second_difference_norm() -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut discrepancies = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..50 {
        let n = rng.random_range(2..=40);
        let axis = if i % 2 == 0 { random_axis(&mut rng, n, 10.0) } else { strongly_graded_axis(&mut rng, n) };
        let norm = spectral_norm(&second_difference(&axis)).map_err(err)?;
        let bound = gersgorin_t_bound(axis.spacings());
        worst = worst.max(norm / bound);
        if norm > gersgorin_t_bound_stated(axis.spacings()) * (1.0 + NORM_REL) {
            discrepancies += 1;
        }
    }
    ensure(
        worst <= 1.0 + NORM_REL,
        format!("50 axes, max ||T||/bound {worst:.6}; bound without last spacing exceeded on {discrepancies} axes"),
    )
}

fn factor_sign_pattern() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut min_inverse = f64::INFINITY;
    let mut min_forward = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..20 {
        let mesh = random_mesh(&mut rng, 2..=5, 8.0);
        let spec = power_spec(random_edges(&mut rng, 0.5, 3.0), rng.random_range(0.0..2.0));
        let phi = eval_degeneracy(&mesh, spec.edges, &spec.degeneracy).map_err(err)?;
        let oracle = DenseOracle::build(&mesh, &phi, spec.edges, OracleCap::default()).map_err(err)?;
        let tau = rng.random_range(0.1..1.0) * positivity_cap(&mesh, &phi, &spec);
        for axis in Axis::ALL {
            let fp = factor_positivity(&oracle, axis, tau).map_err(err)?;
            min_inverse = min_inverse.min(fp.min_inverse);
            min_forward = min_forward.min(fp.min_forward);
            failures += usize::from(!fp.holds);
        }
    }
    ensure(
        failures == 0,
        format!(
            "60 factors, min inverse entry {min_inverse:.2e}, min forward entry {min_forward:.2e}, {failures} failures"
        ),
    )
}

fn backward_factor_ones() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = f64::INFINITY;
    for i in 0..50 {
        let axis = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(2..=6);
            Some(if i % 2 == 0 { random_axis(rng, n, 6.0) } else { strongly_graded_axis(rng, n) })
        };
        let mesh = Mesh::new(axis(&mut rng), axis(&mut rng), axis(&mut rng)).unwrap();
        let spec = power_spec(random_edges(&mut rng, 0.5, 3.0), rng.random_range(0.0..2.0));
        let phi = eval_degeneracy(&mesh, spec.edges, &spec.degeneracy).map_err(err)?;
        let oracle = DenseOracle::build(&mesh, &phi, spec.edges, OracleCap::default()).map_err(err)?;
        let tau = rng.random_range(0.01..1.0) * positivity_cap(&mesh, &phi, &spec);
        for axis in Axis::ALL {
            worst = worst.min(ones_vector_margin(&oracle, axis, tau).map_err(err)?);
        }
    }
    ensure(worst >= ONES_TOL, format!("50 grids, min ((I - tau/2 M) 1 - 1) = {worst:.2e} (tol {ONES_TOL:.0e})"))
}

fn monotone_from_rest_3d() -> Result<String, String> {
    let configs: [(f64, usize, Option<f64>, f64); 5] = [
        (2.0, 6, None, 3.0),
        (4.0, 8, None, 5.0),
        (5.0, 9, None, 5.0),
        (6.0, 10, None, 5.0),
        (5.0, 10, Some(1.15), 5.0),
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    let mut adaptive_nonmonotone = 0;
    for (e, n, gamma, t_max) in configs {
        let grid = match gamma {
            Some(g) => AxisGrid::graded(n, g),
            None => AxisGrid::uniform(n),
        }
        .map_err(err)?;
        let mesh = Mesh::cube(grid);
        let spec = power_spec([e; 3], 1.0).with_horizon(0.0, t_max);
        let phi = eval_degeneracy(&mesh, spec.edges, &spec.degeneracy).map_err(err)?;
        let cap = positivity_cap(&mesh, &phi, &spec);

        let fixed = RunSetup::new(mesh.clone(), spec.clone()).fixed_step(cap);
        let trace = harness::run(&fixed).map_err(err)?;
        let c = &trace.header.criteria;
        let guards = c.cfl.passed && c.mesh.passed && c.monotone_start.passed;
        let monotone = trace.records.iter().all(|r| r.monotone);
        let positive = trace.records[1..].iter().all(|r| r.min_v > 0.0);
        ok &= guards && monotone && positive && !trace.outcome.is_error();
        notes.push(format!(
            "e={e} n={n}: T={} guards={guards} monotone={monotone} positive={positive}",
            trace.outcome.quench_time().map_or("-".into(), |t| format!("{t:.4}")),
        ));

        let adaptive = RunSetup::new(mesh, spec).with_steps(1e-3f64.min(0.5 * cap), 1e-9);
        let trace = harness::run(&adaptive).map_err(err)?;
        adaptive_nonmonotone += trace.records.iter().filter(|r| !r.monotone).count();
    }
    ensure(
        ok,
        format!(
            "fixed steps at the positivity cap: {}; adaptive default cap (diagnostic): {adaptive_nonmonotone} non-monotone steps",
            notes.join(", ")
        ),
    )
}

fn log_norm_regularity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::NEG_INFINITY;
    let mut k_range = (f64::INFINITY, 0.0f64);
    for _ in 0..20 {
        let mesh = random_mesh(&mut rng, 2..=5, 4.0);
        let spec = power_spec(random_edges(&mut rng, 0.5, 3.0), rng.random_range(0.0..2.0));
        let phi = eval_degeneracy(&mesh, spec.edges, &spec.degeneracy).map_err(err)?;
        let oracle = DenseOracle::build(&mesh, &phi, spec.edges, OracleCap::default()).map_err(err)?;
        let k = check_regularity(&mesh, &phi, spec.edges).k;
        k_range = (k_range.0.min(k), k_range.1.max(k));
        for axis in Axis::ALL {
            let m = oracle.m(axis).expect("all axes active");
            let mu = log_norm(m).map_err(err)?;
            worst = worst.max((mu - k) / m.norm_inf());
        }
    }
    ensure(
        worst <= LOG_NORM_REL,
        format!(
            "20 grids, K in [{:.3e}, {:.3e}], max (mu(M) - K)/||M|| = {worst:.2e} (tol {LOG_NORM_REL:.0e})",
            k_range.0, k_range.1
        ),
    )
}

fn exp_log_norm_bound() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = 0;
    let mut min_margin = f64::INFINITY;
    for i in 0..100 {
        let scale = if i % 2 == 0 { 1.0 } else { 5.0 };
        let entries: Vec<f64> = (0..400).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let a = DenseMatrix::from_fn(20, |r, c| entries[20 * r + c]);
        for alpha in [0.1, 1.0] {
            let b = matrix_exp_bound_check(&a, alpha, OracleCap::default()).map_err(err)?;
            failures += usize::from(!b.holds);
            min_margin = min_margin.min(b.margin);
        }
    }
    ensure(failures == 0, format!("200 checks, min margin {min_margin:.3e}, {failures} failures"))
}

fn frozen_twin_stability() -> Result<String, String> {
    let mut flat_worst = 0.0f64;
    let mut ok = true;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
        let mesh = Mesh::cube(AxisGrid::uniform(4 + seed as usize).map_err(err)?);
        let v0: Vec<f64> = (0..mesh.len()).map(|_| rng.random_range(0.0..0.5)).collect();
        let spec = power_spec(random_edges(&mut rng, 0.5, 3.0), 0.0).with_initial(InitialField::Nodal(v0));
        let phi = eval_degeneracy(&mesh, spec.edges, &spec.degeneracy).map_err(err)?;
        let cap = positivity_cap(&mesh, &phi, &spec);
        let setup = RunSetup::new(mesh, spec).with_steps(cap, 1e-9);
        for tau in [0.9 * cap, 50.0 * cap] {
            let r = harness::stability_run(
                &setup,
                &TauSchedule::Fixed { tau, steps: 40 },
                StabilityMode::Frozen,
                Perturbation { seed, ..Perturbation::default() },
                1.0,
                OracleCap::default(),
            )
            .map_err(err)?;
            let c = r.c_emp.unwrap_or(f64::INFINITY);
            flat_worst = flat_worst.max(c);
            ok &= r.within_envelope && c <= FLAT_GROWTH;
        }
    }

    let mut graded_worst = 0.0f64;
    let mut graded_k = 0.0f64;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
        let mesh = Mesh::cube(AxisGrid::graded(4, rng.random_range(1.1..1.5)).map_err(err)?);
        let spec =
            power_spec(random_edges(&mut rng, 1.0, 3.0), 1.0).with_initial(InitialField::Sine { amplitude: 0.3 });
        let phi = eval_degeneracy(&mesh, spec.edges, &spec.degeneracy).map_err(err)?;
        let cap = positivity_cap(&mesh, &phi, &spec);
        let taus: Vec<f64> = (0..40).map(|_| rng.random_range(0.1..1.0) * cap).collect();
        let setup = RunSetup::new(mesh, spec).with_steps(cap, 1e-9);
        let r = harness::stability_run(
            &setup,
            &TauSchedule::List(taus),
            StabilityMode::Frozen,
            Perturbation { seed, ..Perturbation::default() },
            1.0,
            OracleCap::default(),
        )
        .map_err(err)?;
        ok &= r.within_envelope;
        graded_k = graded_k.max(r.k);
        let slack = r.ratios().iter().zip(&r.envelope).fold(0.0f64, |m, (c, e)| m.max(c / e));
        graded_worst = graded_worst.max(slack);
    }
    ensure(
        ok,
        format!(
            "K=0 grids: max ||z||/||z0|| = {flat_worst:.9} (tol {FLAT_GROWTH}); graded grids (K up to {graded_k:.3}): max ratio/envelope {graded_worst:.4}"
        ),
    )
}

fn live_twin_stability() -> Result<String, String> {
    let configs: [(f64, usize, Option<f64>, f64); 3] =
        [(5.0, 6, None, 1.0), (3.0, 5, None, 0.0), (4.0, 6, Some(1.2), 1.0)];
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, (e, n, gamma, q)) in configs.into_iter().enumerate() {
        let grid = match gamma {
            Some(g) => AxisGrid::graded(n, g),
            None => AxisGrid::uniform(n),
        }
        .map_err(err)?;
        let mesh = Mesh::cube(grid);
        let spec = power_spec([e; 3], q);
        let setup = RunSetup::new(mesh, spec).with_steps(1e-3, 1e-9);
        let r = harness::stability_run(
            &setup,
            &TauSchedule::Fixed { tau: 1e-3, steps: 100_000 },
            StabilityMode::Live,
            Perturbation { seed: i as u64, ..Perturbation::default() },
            LIVE_CAP,
            OracleCap::default(),
        )
        .map_err(err)?;
        let c = r.c_emp.unwrap_or(f64::INFINITY);
        let env = *r.envelope.last().unwrap();
        let pass = r.status == StabilityStatus::Capped && c <= LIVE_SLACK * env;
        ok &= pass;
        notes.push(format!("e={e} q={q}: t={:.3} c_emp={c:.4} envelope={env:.4}", r.elapsed()));
    }
    ensure(ok, format!("{} (slack {LIVE_SLACK})", notes.join(", ")))
}

const DETERMINISM_CONFIG: &str = r#"
seed = 7

[problem]
edges = [4.0, 4.0, 4.0]
t_max = 5.0
source = { kind = "power" }
initial = { kind = "zero" }

[problem.degeneracy]
kind = "power"
q = 1.0

[grid.x]
kind = "graded"
n = 6
gamma = 1.2

[grid.y]
kind = "uniform"
n = 5

[grid.z]
kind = "uniform"
n = 4

[stepping]
tau0 = 1e-3
"#;

fn run_outputs(dir: &std::path::Path) -> Result<Vec<Vec<u8>>, String> {
    let config = RunConfig::parse(DETERMINISM_CONFIG).map_err(err)?;
    let setup = config.setup().map_err(err)?;
    let trace = harness::run(&setup).map_err(err)?;
    let paths = [dir.join("trace.jsonl"), dir.join("trace.csv"), dir.join("state.json")];
    trace.save_jsonl(&paths[0]).map_err(err)?;
    trace.save_csv(&paths[1]).map_err(err)?;
    trace.checkpoint().save(&paths[2]).map_err(err)?;
    let stability = harness::stability_run(
        &setup,
        &TauSchedule::Fixed { tau: 1e-3, steps: 50 },
        StabilityMode::Live,
        Perturbation { seed: config.seed, ..Perturbation::default() },
        LIVE_CAP,
        OracleCap::default(),
    )
    .map_err(err)?;
    let mut out = Vec::new();
    for p in &paths {
        out.push(std::fs::read(p).map_err(|e| e.to_string())?);
    }
    out.push(serde_json::to_vec(&stability).map_err(|e| e.to_string())?);
    Ok(out)
}

fn deterministic_outputs() -> Result<String, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_outputs(a.path())?;
    let second = run_outputs(b.path())?;
    let names = ["trace.jsonl", "trace.csv", "checkpoint", "stability"];
    let differing: Vec<&str> =
        names.iter().zip(first.iter().zip(&second)).filter(|(_, (x, y))| x != y).map(|(n, _)| *n).collect();
    let bytes: usize = first.iter().map(Vec::len).sum();
    ensure(
        differing.is_empty(),
        if differing.is_empty() {
            format!("2 runs, {bytes} bytes across 4 outputs identical")
        } else {
            format!("outputs differ: {}", differing.join(", "))
        },
    )
}
