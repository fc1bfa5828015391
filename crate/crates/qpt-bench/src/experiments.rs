//! Experiment drivers.
//!
//! Every recovery experiment enumerates grid points and runs `trials`
//! independent trials per point. Trial `t` of grid point `g` draws all its
//! randomness from the sub-stream `(seed, [experiment, g, t])`, so any trial can
//! be replayed in isolation. Trials run on a thread pool; results are assembled
//! in `(grid point, trial)` order, which keeps the output independent of
//! scheduling.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use qpt_core::channels::{depolarizing_channel, mix, random_rank_r_channel, toffoli_channel, unitary_channel, QuantumChannel};
use qpt_core::linalg::{haar_unitary, random_hermitian, schatten_norm_herm, HermitianOperator, Schatten};
use qpt_core::measurements::{
    add_noise, default_a0, gen_circuit_ensemble, gen_generic_ensemble, gen_pauli_ensemble, measure, sample_expectation,
    EnsembleKind, MeasurementEnsemble, MeasurementVector,
};
use qpt_core::reconstruct::{default_eta, reconstruction_error, Method, PreparedEnsemble};
use qpt_core::rng::{substream, substream_seed, QptRng};
use qpt_core::channels::HermPreservingMap;
use qpt_core::verify::diagnostics::random_trace_annihilating;
use qpt_core::verify::moments::{moment2_exact, moment4_exact, moments_mc, MomentEstimates};
use qpt_core::verify::s4::s4_projectors;
use qpt_core::verify::tensor_network::{contract_network, random_network, tn_bound};

use crate::error::{spec_error, BenchError};
use crate::output::{Cell, ExperimentResult, Row};
use crate::spec::{ExperimentKind, ExperimentSpec, Protocol, Target};
use crate::stats::{mean, median, std_dev};

/// Sub-stream index reserved for the fixed ensembles of the uniform protocol.
const UNIFORM_STREAM: u64 = u64::MAX;

/// Random instances per second-moment check.
pub const MOMENT2_INSTANCES: usize = 20;

/// Random instances per fourth-moment check (`n ∈ {2, 3}` alternating).
pub const MOMENT4_INSTANCES: usize = 10;

/// Standard errors tolerated between Monte Carlo and exact moments.
pub const MOMENT_Z_TOL: f64 = 3.0;

/// Frobenius tolerance of the S₄ projector identities.
pub const S4_TOL: f64 = 1e-9;

/// Relative slack of the tensor-network bound against rounding.
pub const TN_BOUND_SLACK: f64 = 1e-12;

/// Runs the experiment described by `spec`.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentResult, BenchError> {
    spec.validate()?;
    let rows = match spec.experiment {
        ExperimentKind::VerifyMoments => run_verify_moments_rows(spec)?,
        _ => run_recovery(spec, &grid_points(spec))?,
    };
    Ok(ExperimentResult::new(spec.clone(), rows))
}

macro_rules! entry_point {
    ($(#[$doc:meta])* $name:ident, $kind:expr) => {
        $(#[$doc])*
        pub fn $name(spec: &ExperimentSpec) -> Result<ExperimentResult, BenchError> {
            if spec.experiment != $kind {
                return Err(spec_error(format!("expected a {} spec, got {}", $kind, spec.experiment)));
            }
            run(spec)
        }
    };
}

entry_point!(
    /// Recovery rate over the number of settings.
    run_success_rate, ExperimentKind::SuccessRate);
entry_point!(
    /// Recovery rate over Kraus rank and number of settings.
    run_rank_phase, ExperimentKind::RankPhase);
entry_point!(
    /// Reconstruction error over the noise strength.
    run_noise_sweep, ExperimentKind::NoiseSweep);
entry_point!(
    /// Reconstruction error over the depolarizing admixture `λ`.
    run_mismatch_sweep, ExperimentKind::MismatchSweep);
entry_point!(
    /// Reconstruction error over the rank of the observable.
    run_observable_rank, ExperimentKind::ObservableRank);
entry_point!(
    /// Generic versus Pauli ensembles.
    run_pauli_compare, ExperimentKind::PauliCompare);
entry_point!(
    /// Reconstruction from finitely many shots per setting.
    run_sample_complexity, ExperimentKind::SampleComplexity);
entry_point!(
    /// Pass/fail table of the moment, S₄ and tensor-network checks.
    run_verify_moments, ExperimentKind::VerifyMoments);

/// Parameters of one grid point of a recovery experiment.
#[derive(Clone, Debug)]
struct Point {
    labels: Row,
    rank: usize,
    m: usize,
    noise: f64,
    lambda: f64,
    rank_a: usize,
    ensemble: EnsembleKind,
    target: Target,
    shots: Option<usize>,
}

fn grid_points(spec: &ExperimentSpec) -> Vec<Point> {
    let base = Point {
        labels: vec![],
        rank: spec.rank,
        m: 0,
        noise: spec.noise_grid[0],
        lambda: spec.mismatch_grid[0],
        rank_a: spec.rank_a(),
        ensemble: spec.ensemble,
        target: spec.targets[0],
        shots: None,
    };
    let mut points = Vec::new();
    let mut push = |p: Point| points.push(p);
    match spec.experiment {
        ExperimentKind::SuccessRate => {
            for &target in &spec.targets {
                for &m in &spec.m_grid {
                    let labels = vec![("target".into(), target.name().into()), ("m".into(), m.into())];
                    push(Point { labels, m, target, ..base.clone() });
                }
            }
        }
        ExperimentKind::RankPhase => {
            for &rank in &spec.rank_grid {
                for &m in &spec.m_grid {
                    let labels = vec![("rank".into(), rank.into()), ("m".into(), m.into())];
                    push(Point { labels, rank, m, ..base.clone() });
                }
            }
        }
        ExperimentKind::NoiseSweep => {
            for &m in &spec.m_grid {
                for &noise in &spec.noise_grid {
                    let labels = vec![("m".into(), m.into()), ("noise".into(), noise.into())];
                    push(Point { labels, m, noise, ..base.clone() });
                }
            }
        }
        ExperimentKind::MismatchSweep => {
            for &m in &spec.m_grid {
                for &lambda in &spec.mismatch_grid {
                    let labels = vec![("m".into(), m.into()), ("lambda".into(), lambda.into())];
                    push(Point { labels, m, lambda, noise: 0.0, ..base.clone() });
                }
            }
        }
        ExperimentKind::ObservableRank => {
            for &rank_a in &spec.rank_a_grid {
                let fro = default_a0(spec.n, rank_a).map(|a| a.frobenius_norm()).unwrap_or(f64::NAN);
                for &m in &spec.m_grid {
                    for &noise in &spec.noise_grid {
                        let labels = vec![
                            ("rank_a".into(), rank_a.into()),
                            ("a0_frobenius".into(), fro.into()),
                            ("m".into(), m.into()),
                            ("noise".into(), noise.into()),
                        ];
                        push(Point { labels, m, noise, rank_a, ..base.clone() });
                    }
                }
            }
        }
        ExperimentKind::PauliCompare => {
            for &target in &spec.targets {
                for ensemble in [EnsembleKind::Generic, EnsembleKind::Pauli] {
                    for &m in &spec.m_grid {
                        let labels = vec![
                            ("target".into(), target.name().into()),
                            ("ensemble".into(), ensemble.to_string().into()),
                            ("m".into(), m.into()),
                        ];
                        push(Point { labels, m, target, ensemble, ..base.clone() });
                    }
                }
            }
        }
        ExperimentKind::SampleComplexity => {
            for &m in &spec.m_grid {
                for &shots in &spec.shots_grid {
                    let labels = vec![
                        ("m".into(), m.into()),
                        ("shots".into(), shots.into()),
                        ("total_samples".into(), (m * shots).into()),
                    ];
                    push(Point { labels, m, shots: Some(shots), noise: 0.0, ..base.clone() });
                }
            }
        }
        ExperimentKind::VerifyMoments => {}
    }
    points
}

/// Maps `f` over `0..count` on up to `available_parallelism` threads,
/// returning results in index order.
pub fn par_map<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(count.max(1));
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let v = f(i);
                slots.lock().expect("no worker panicked")[i] = Some(v);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|v| v.expect("every index ran")).collect()
}

fn ensemble_index(kind: EnsembleKind) -> u64 {
    match kind {
        EnsembleKind::Generic => 0,
        EnsembleKind::Pauli => 1,
        EnsembleKind::Circuit => 2,
    }
}

fn draw_ensemble(
    spec: &ExperimentSpec,
    kind: EnsembleKind,
    m: usize,
    rank_a: usize,
    seed: u64,
    rng: &mut QptRng,
) -> Result<MeasurementEnsemble, BenchError> {
    let n = spec.n;
    Ok(match kind {
        EnsembleKind::Generic => gen_generic_ensemble(n, m, &default_a0(n, rank_a)?, Some(seed), rng)?,
        EnsembleKind::Pauli => gen_pauli_ensemble(n.trailing_zeros() as usize, m, Some(seed), rng)?,
        EnsembleKind::Circuit => gen_circuit_ensemble(n, m, spec.circuit_depth, &default_a0(n, rank_a)?, Some(seed), rng)?,
    })
}

fn draw_target(spec: &ExperimentSpec, p: &Point, rng: &mut QptRng) -> Result<QuantumChannel, BenchError> {
    let t = match p.target {
        Target::Random => random_rank_r_channel(spec.n, p.rank, rng)?,
        Target::RandomUnitary => unitary_channel(&haar_unitary(spec.n, rng))?,
        Target::Toffoli => toffoli_channel(),
    };
    if p.lambda > 0.0 {
        Ok(mix(&t, &depolarizing_channel(spec.n), p.lambda)?)
    } else {
        Ok(t)
    }
}

/// Fixed ensembles of the uniform protocol, keyed by `(ensemble, rank_a, m)`.
type UniformCache = BTreeMap<(u64, usize, usize), PreparedEnsemble>;

fn uniform_ensembles(spec: &ExperimentSpec, points: &[Point]) -> Result<UniformCache, BenchError> {
    let mut cache = UniformCache::new();
    if spec.protocol != Protocol::Uniform {
        return Ok(cache);
    }
    let m_max = *spec.m_grid.iter().max().expect("validated nonempty");
    let mut full: BTreeMap<(u64, usize), MeasurementEnsemble> = BTreeMap::new();
    for p in points {
        let key = (ensemble_index(p.ensemble), p.rank_a);
        if !full.contains_key(&key) {
            let path = [spec.experiment.stream_id(), UNIFORM_STREAM, key.0, key.1 as u64];
            let seed = substream_seed(spec.seed, &path);
            let e = draw_ensemble(spec, p.ensemble, m_max, p.rank_a, seed, &mut substream(spec.seed, &path))?;
            full.insert(key, e);
        }
        if !cache.contains_key(&(key.0, key.1, p.m)) {
            let e = full[&key].prefix(p.m)?;
            cache.insert((key.0, key.1, p.m), PreparedEnsemble::new(&e));
        }
    }
    Ok(cache)
}

/// Outcome of one method in one trial.
#[derive(Clone, Debug)]
struct MethodOutcome {
    error: Option<f64>,
    residual: f64,
    iterations: usize,
    wall_ms: f64,
}

/// Outcome of one trial.
#[derive(Clone, Debug)]
struct TrialOutcome {
    noise_norm: f64,
    methods: Vec<MethodOutcome>,
}

fn failed() -> MethodOutcome {
    MethodOutcome { error: None, residual: f64::NAN, iterations: 0, wall_ms: 0.0 }
}

fn run_trial(
    spec: &ExperimentSpec,
    p: &Point,
    path: &[u64],
    uniform: &UniformCache,
) -> Result<TrialOutcome, BenchError> {
    let mut rng = substream(spec.seed, path);
    let truth = draw_target(spec, p, &mut rng)?;
    let fresh;
    let prepared = match uniform.get(&(ensemble_index(p.ensemble), p.rank_a, p.m)) {
        Some(prep) => prep,
        None => {
            let e = draw_ensemble(spec, p.ensemble, p.m, p.rank_a, substream_seed(spec.seed, path), &mut rng)?;
            fresh = PreparedEnsemble::new(&e);
            &fresh
        }
    };
    let exact = measure(truth.as_map(), prepared.ensemble())?;
    let y = match p.shots {
        Some(shots) => {
            let values = prepared
                .ensemble()
                .settings
                .iter()
                .map(|s| sample_expectation(&truth, s, shots, &mut rng))
                .collect::<Result<Vec<f64>, _>>()?;
            let e: f64 = values.iter().zip(&exact.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            MeasurementVector { values, noise_strength: e }
        }
        None => add_noise(&exact, p.noise, &mut rng)?,
    };
    let noise_norm = y.values.iter().zip(&exact.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let eta = spec.eta.unwrap_or_else(|| default_eta(noise_norm));
    let methods = spec
        .methods
        .iter()
        .map(|&method| match prepared.reconstruct(&y, method, eta, &spec.solver) {
            Ok(r) => match reconstruction_error(&r.estimate, truth.as_map(), 2.0) {
                Ok(err) => MethodOutcome { error: Some(err), residual: r.residual, iterations: r.iterations, wall_ms: r.wall_ms },
                Err(e) => {
                    log_failure(spec, path, method, &e.to_string());
                    failed()
                }
            },
            Err(e) => {
                log_failure(spec, path, method, &e.to_string());
                failed()
            }
        })
        .collect();
    Ok(TrialOutcome { noise_norm, methods })
}

fn log_failure(spec: &ExperimentSpec, path: &[u64], method: Method, msg: &str) {
    eprintln!("warning: {} trial {} ({method}) failed: {msg}", spec.experiment, seed_path(spec.seed, path));
}

fn seed_path(seed: u64, path: &[u64]) -> String {
    std::iter::once(seed).chain(path.iter().copied()).map(|v| v.to_string()).collect::<Vec<_>>().join("/")
}

fn run_recovery(spec: &ExperimentSpec, points: &[Point]) -> Result<Vec<Row>, BenchError> {
    let uniform = uniform_ensembles(spec, points)?;
    let exp = spec.experiment.stream_id();
    let mut rows = Vec::new();
    for (g, p) in points.iter().enumerate() {
        let outcomes = par_map(spec.trials, |t| run_trial(spec, p, &[exp, g as u64, t as u64], &uniform));
        let outcomes: Vec<TrialOutcome> = outcomes.into_iter().collect::<Result<_, _>>()?;
        let noise: Vec<f64> = outcomes.iter().map(|o| o.noise_norm).collect();
        for (k, &method) in spec.methods.iter().enumerate() {
            let per: Vec<&MethodOutcome> = outcomes.iter().map(|o| &o.methods[k]).collect();
            let errors: Vec<f64> = per.iter().filter_map(|o| o.error).collect();
            let failures = per.len() - errors.len();
            let successes = errors.iter().filter(|&&e| e <= spec.threshold).count();
            let ok: Vec<&&MethodOutcome> = per.iter().filter(|o| o.error.is_some()).collect();
            let residuals: Vec<f64> = ok.iter().map(|o| o.residual).collect();
            let iterations: Vec<f64> = ok.iter().map(|o| o.iterations as f64).collect();
            let walls: Vec<f64> = ok.iter().map(|o| o.wall_ms).collect();
            let mut row = p.labels.clone();
            row.extend([
                ("method".to_string(), Cell::from(method.name())),
                ("trials".into(), spec.trials.into()),
                ("successes".into(), successes.into()),
                ("success_rate".into(), (successes as f64 / spec.trials as f64).into()),
                ("failures".into(), failures.into()),
                ("mean_error".into(), mean(&errors).into()),
                ("median_error".into(), median(&errors).into()),
                ("std_error".into(), std_dev(&errors).into()),
                ("max_error".into(), errors.iter().copied().fold(f64::NAN, f64::max).into()),
                ("mean_residual".into(), mean(&residuals).into()),
                ("mean_noise_norm".into(), mean(&noise).into()),
                ("mean_iterations".into(), mean(&iterations).into()),
                ("seed_path".into(), format!("{}/{exp}/{g}/0..{}", spec.seed, spec.trials).into()),
                ("mean_wall_ms".into(), mean(&walls).into()),
            ]);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// `(failures, solves)` summed over the rows of a recovery result.
pub fn failure_counts(result: &ExperimentResult) -> (usize, usize) {
    let mut failures = 0;
    let mut solves = 0;
    for i in 0..result.rows.len() {
        if let (Some(f), Some(t)) = (result.get(i, "failures"), result.get(i, "trials")) {
            failures += f.as_f64().unwrap_or(0.0) as usize;
            solves += t.as_f64().unwrap_or(0.0) as usize;
        }
    }
    (failures, solves)
}

/// Errors when the failed-solve fraction exceeds `spec.failure_cap`.
pub fn check_failure_cap(result: &ExperimentResult) -> Result<(), BenchError> {
    let (failures, solves) = failure_counts(result);
    let cap = result.spec.failure_cap;
    if solves > 0 && failures as f64 > cap * solves as f64 {
        return Err(BenchError::FailureCap { failures, solves, cap });
    }
    Ok(())
}

/// Random traceless observable with `‖A‖∞ = 1` and random trace-annihilating
/// map used by moment instance `k`; `n` cycles through 2, 3, 4.
pub fn moment2_instance(seed: u64, k: usize) -> (HermitianOperator, HermPreservingMap) {
    moment_instance(seed, 0, 2 + k % 3, k)
}

/// Instance `k` of the fourth-moment check; `n` alternates between 2 and 3.
pub fn moment4_instance(seed: u64, k: usize) -> (HermitianOperator, HermPreservingMap) {
    moment_instance(seed, 1, 2 + k % 2, k)
}

fn moment_instance(seed: u64, family: u64, n: usize, k: usize) -> (HermitianOperator, HermPreservingMap) {
    let mut rng = substream(seed, &[ExperimentKind::VerifyMoments.stream_id(), family, k as u64, 0]);
    let h = random_hermitian(n, &mut rng);
    let h = h.sub(&HermitianOperator::identity(n).scale(h.trace() / n as f64));
    let a = h.scale(1.0 / schatten_norm_herm(&h, Schatten::Inf).expect("finite Hermitian"));
    let m = random_trace_annihilating(n, 1 + k % (n * n), &mut rng);
    (a, m)
}

/// Monte Carlo moments of instance `(family, k)` from its own sub-stream.
fn instance_mc(
    seed: u64,
    family: u64,
    k: usize,
    a: &HermitianOperator,
    m: &HermPreservingMap,
    samples: usize,
) -> Result<MomentEstimates, BenchError> {
    let mut rng = substream(seed, &[ExperimentKind::VerifyMoments.stream_id(), family, k as u64, 1]);
    Ok(moments_mc(a, m, samples, &mut rng)?)
}

/// Wrong coefficient injected into the second-moment formula as a negative
/// control: `(n+1)²` replaced by `(n+1)(n+2)`.
pub fn moment2_mutant(a: &HermitianOperator, m: &HermPreservingMap) -> Result<f64, BenchError> {
    let n = a.dim() as f64;
    Ok(moment2_exact(a, m)? * (n + 1.0) / (n + 2.0))
}

fn check_row(check: &str, n: usize, instance: usize, estimate: f64, reference: f64, stderr: f64, tol: f64, statistic: f64, expect_pass: bool) -> Row {
    let passed = statistic <= tol;
    vec![
        ("check".into(), check.into()),
        ("n".into(), n.into()),
        ("instance".into(), instance.into()),
        ("estimate".into(), estimate.into()),
        ("reference".into(), reference.into()),
        ("stderr".into(), stderr.into()),
        ("statistic".into(), statistic.into()),
        ("tolerance".into(), tol.into()),
        ("passed".into(), passed.into()),
        ("expected_pass".into(), expect_pass.into()),
        ("ok".into(), (passed == expect_pass).into()),
    ]
}

fn run_verify_moments_rows(spec: &ExperimentSpec) -> Result<Vec<Row>, BenchError> {
    let has = |c: &str| spec.checks.iter().any(|x| x == c);
    let mut rows = Vec::new();
    if has("s4") {
        for n in 2..=4 {
            let s = s4_projectors(n)?;
            let (cross, idem) = s.orthogonality_defects();
            let traces = s.traces();
            let trace_defect = (0..5)
                .map(|i| (traces[i] - (s.degrees[i] * s.dims[i]) as f64).abs())
                .fold(0.0, f64::max);
            let total: u64 = (0..5).map(|i| s.degrees[i] * s.dims[i]).sum();
            let dim_defect = (total as f64 - (n as f64).powi(4)).abs();
            let worst = s.completeness_defect().max(cross).max(idem).max(trace_defect).max(dim_defect);
            rows.push(check_row("s4", n, 0, worst, 0.0, 0.0, S4_TOL, worst, true));
        }
    }
    if has("tn_bound") {
        let exp = ExperimentKind::VerifyMoments.stream_id();
        let ratios = par_map(spec.trials, |k| -> Result<f64, BenchError> {
            let tn = random_network(&mut substream(spec.seed, &[exp, 2, k as u64]));
            Ok(contract_network(&tn)?.frobenius_norm() / tn_bound(&tn)?)
        });
        let ratios: Vec<f64> = ratios.into_iter().collect::<Result<_, _>>()?;
        let worst = ratios.iter().copied().fold(0.0, f64::max);
        let violations = ratios.iter().filter(|&&r| r > 1.0 + TN_BOUND_SLACK).count();
        let mut row = check_row("tn_bound", 0, ratios.len(), worst, 1.0, 0.0, 1.0 + TN_BOUND_SLACK, worst, true);
        row.push(("violations".into(), violations.into()));
        rows.push(row);
    }
    if has("moment2") || has("moment2_mutant") {
        let estimates = par_map(MOMENT2_INSTANCES, |k| -> Result<_, BenchError> {
            let (a, m) = moment2_instance(spec.seed, k);
            let mc = instance_mc(spec.seed, 0, k, &a, &m, spec.samples)?;
            Ok((a.dim(), mc, moment2_exact(&a, &m)?, moment2_mutant(&a, &m)?))
        });
        let estimates: Vec<_> = estimates.into_iter().collect::<Result<_, _>>()?;
        for (check, mutant) in [("moment2", false), ("moment2_mutant", true)] {
            if !has(check) {
                continue;
            }
            for (k, (n, mc, exact, wrong)) in estimates.iter().enumerate() {
                let reference = if mutant { *wrong } else { *exact };
                let z = (mc.second - reference).abs() / mc.second_stderr;
                rows.push(check_row(check, *n, k, mc.second, reference, mc.second_stderr, MOMENT_Z_TOL, z, !mutant));
            }
        }
    }
    if has("moment4") {
        let estimates = par_map(MOMENT4_INSTANCES, |k| -> Result<_, BenchError> {
            let (a, m) = moment4_instance(spec.seed, k);
            let mc = instance_mc(spec.seed, 1, k, &a, &m, spec.samples)?;
            Ok((a.dim(), mc, moment4_exact(&a, &m)?))
        });
        for (k, r) in estimates.into_iter().enumerate() {
            let (n, mc, exact) = r?;
            let z = (mc.fourth - exact).abs() / mc.fourth_stderr;
            rows.push(check_row("moment4", n, k, mc.fourth, exact, mc.fourth_stderr, MOMENT_Z_TOL, z, true));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentSpec {
        let mut s = ExperimentSpec::defaults(kind);
        s.n = 2;
        s.rank = 1;
        s.trials = 3;
        s.targets = vec![Target::Random];
        s.m_grid = vec![4, 20];
        s.rank_a_grid = vec![2];
        s.methods = vec![Method::CptFit, Method::TraceNormConstrained];
        s
    }

    #[test]
    fn par_map_keeps_order() {
        assert_eq!(par_map(7, |i| i * i), vec![0, 1, 4, 9, 16, 25, 36]);
        assert!(par_map(0, |i| i).is_empty());
    }

    #[test]
    fn success_rate_has_one_row_per_point_and_method() {
        let r = run(&small(ExperimentKind::SuccessRate)).unwrap();
        assert_eq!(r.rows.len(), 4);
        for i in 0..4 {
            let rate = r.get(i, "success_rate").unwrap().as_f64().unwrap();
            assert!((0.0..=1.0).contains(&rate));
        }
        // Twenty settings determine a qubit channel; four do not.
        assert_eq!(r.get(2, "success_rate").unwrap().as_f64(), Some(1.0));
        assert!(r.get(0, "success_rate").unwrap().as_f64().unwrap() < 1.0);
    }

    #[test]
    fn uniform_protocol_reuses_prefixes() {
        let mut s = small(ExperimentKind::MismatchSweep);
        s.methods = vec![Method::CptFit];
        s.mismatch_grid = vec![0.0, 0.2];
        s.m_grid = vec![20];
        s.trials = 2;
        let r = run(&s).unwrap();
        assert_eq!(r.rows.len(), 2);
        for i in 0..2 {
            assert!(r.get(i, "max_error").unwrap().as_f64().unwrap() <= 1e-5);
        }
        let mut iid = s.clone();
        iid.protocol = Protocol::Iid;
        let cache = uniform_ensembles(&s, &grid_points(&s)).unwrap();
        assert_eq!(cache.len(), 1);
        assert!(uniform_ensembles(&iid, &grid_points(&iid)).unwrap().is_empty());
    }

    #[test]
    fn mismatched_experiment_is_rejected() {
        assert!(run_noise_sweep(&small(ExperimentKind::SuccessRate)).is_err());
    }

    #[test]
    fn moment_mutant_is_caught() {
        let mut s = ExperimentSpec::defaults(ExperimentKind::VerifyMoments);
        s.checks = vec!["moment2".into(), "moment2_mutant".into()];
        s.samples = 20_000;
        let r = run(&s).unwrap();
        let mutant_passes = r.filter("check", "moment2_mutant").filter(|row| row.iter().any(|(k, v)| k == "passed" && *v == Cell::Bool(true))).count();
        assert!(mutant_passes < MOMENT2_INSTANCES / 2);
        let exact_fails = r.filter("check", "moment2").filter(|row| row.iter().any(|(k, v)| k == "passed" && *v == Cell::Bool(false))).count();
        assert!(exact_fails <= 2);
    }

    #[test]
    fn failure_cap_counts_failures() {
        let spec = ExperimentSpec { failure_cap: 0.1, ..ExperimentSpec::defaults(ExperimentKind::SuccessRate) };
        let row = |f: usize| vec![("trials".to_string(), Cell::from(10usize)), ("failures".to_string(), Cell::from(f))];
        assert!(check_failure_cap(&ExperimentResult::new(spec.clone(), vec![row(1), row(1)])).is_ok());
        assert!(matches!(
            check_failure_cap(&ExperimentResult::new(spec, vec![row(3), row(0)])),
            Err(BenchError::FailureCap { failures: 3, solves: 20, .. })
        ));
    }
}
