use qpt_core::channels::{random_rank_r_channel, QuantumChannel};
use qpt_core::conic::SolverConfig;
use qpt_core::linalg::HermitianOperator;
use qpt_core::measurements::{add_noise, default_a0, gen_generic_ensemble, measure, MeasurementEnsemble, MeasurementVector};
use qpt_core::reconstruct::{default_eta, reconstruction_error, Method, PreparedEnsemble};
use qpt_core::rng::{seeded, QptRng};

fn instance(n: usize, r: usize, m: usize, seed: u64) -> (QuantumChannel, MeasurementEnsemble, QptRng) {
    let mut rng = seeded(seed);
    let t = random_rank_r_channel(n, r, &mut rng).unwrap();
    let e = gen_generic_ensemble(n, m, &default_a0(n, n).unwrap(), Some(seed), &mut rng).unwrap();
    (t, e, rng)
}

fn shifted(y: &MeasurementVector, c: f64) -> MeasurementVector {
    MeasurementVector { values: y.values.iter().map(|v| v + c).collect(), noise_strength: y.noise_strength }
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let k = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / k, y.iter().sum::<f64>() / k);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

/// Noisy data for CPT-fit, whose argmin is unique once `m ≥ n⁴ − n²`; noiseless
/// data for the constrained norm methods, which are minimized by every channel
/// inside the data ball.
fn invariance_cases(y: &MeasurementVector, y0: &MeasurementVector) -> Vec<(Method, MeasurementVector, f64)> {
    vec![
        (Method::CptFit, y.clone(), 0.0),
        (Method::TraceNorm, y.clone(), 0.05),
        (Method::TraceNormConstrained, y0.clone(), default_eta(0.0)),
        (Method::DiamondNormConstrained, y0.clone(), default_eta(0.0)),
    ]
}

#[test]
fn uncentered_observables_give_the_same_reconstruction() {
    let (t, e, mut rng) = instance(2, 1, 16, 300);
    let c = 0.4;
    let y0 = measure(t.as_map(), &e).unwrap();
    let y = add_noise(&y0, 0.05, &mut rng).unwrap();
    let uncentered = e.map_observables(|a| a.add(&HermitianOperator::identity(2).scale(c)));
    let cfg = SolverConfig::default();
    let a = PreparedEnsemble::new(&e);
    let b = PreparedEnsemble::new(&uncentered);
    for (method, data, eta) in invariance_cases(&y, &y0) {
        if method == Method::TraceNorm {
            // The shift by Tr[Aⱼ]/n only matches for trace-preserving maps.
            continue;
        }
        let ra = a.reconstruct(&data, method, eta, &cfg).unwrap();
        let rb = b.reconstruct(&shifted(&data, c), method, eta, &cfg).unwrap();
        let ea = reconstruction_error(&ra.estimate, t.as_map(), 2.0).unwrap();
        let eb = reconstruction_error(&rb.estimate, t.as_map(), 2.0).unwrap();
        assert!((ea - eb).abs() <= 1e-5, "{method}: {ea} vs {eb}");
    }
}

#[test]
fn rescaled_observables_give_the_same_reconstruction() {
    let (t, e, mut rng) = instance(2, 1, 16, 301);
    let c = 3.0;
    let y0 = measure(t.as_map(), &e).unwrap();
    let y = add_noise(&y0, 0.05, &mut rng).unwrap();
    let scaled = e.map_observables(|a| a.scale(c));
    let cfg = SolverConfig::default();
    let a = PreparedEnsemble::new(&e);
    let b = PreparedEnsemble::new(&scaled);
    for (method, data, eta) in invariance_cases(&y, &y0) {
        let data_scaled = MeasurementVector { values: data.values.iter().map(|v| c * v).collect(), noise_strength: 0.0 };
        let ra = a.reconstruct(&data, method, eta, &cfg).unwrap();
        let rb = b.reconstruct(&data_scaled, method, c * eta, &cfg).unwrap();
        let diff = reconstruction_error(&ra.estimate, &rb.estimate, 2.0).unwrap();
        assert!(diff <= 1e-5, "{method}: {diff}");
    }
}

#[test]
fn residual_respects_eta() {
    let (t, e, mut rng) = instance(2, 2, 12, 302);
    let noise = 0.08;
    let y = add_noise(&measure(t.as_map(), &e).unwrap(), noise, &mut rng).unwrap();
    let eta = default_eta(noise);
    let prep = PreparedEnsemble::new(&e);
    for method in Method::ALL {
        let r = prep.reconstruct(&y, method, eta, &SolverConfig::default()).unwrap();
        assert!(r.residual <= eta + 1e-6, "{method}: residual {} > {eta}", r.residual);
    }
}

#[test]
fn cpt_fit_output_is_a_channel() {
    let (t, e, mut rng) = instance(3, 2, 30, 303);
    let y = add_noise(&measure(t.as_map(), &e).unwrap(), 0.1, &mut rng).unwrap();
    let r = PreparedEnsemble::new(&e).cpt_fit(&y, &SolverConfig::default()).unwrap();
    let min_eig = *qpt_core::linalg::herm_eig(r.estimate.choi()).unwrap().values.last().unwrap();
    assert!(min_eig >= -1e-7);
    assert!(r.estimate.trace_preservation_defect() <= 1e-7);
    assert!(r.channel.is_some());
}

#[test]
fn full_dimension_regime_recovers_any_channel() {
    // m ≥ n⁴ − n² settings determine a trace-preserving map.
    let (t, e, _) = instance(2, 4, 14, 304);
    let y = measure(t.as_map(), &e).unwrap();
    let r = PreparedEnsemble::new(&e).cpt_fit(&y, &SolverConfig::default()).unwrap();
    assert!(reconstruction_error(&r.estimate, t.as_map(), 2.0).unwrap() <= 1e-5);
}

#[test]
fn zero_settings_are_rejected() {
    let mut rng = seeded(305);
    assert!(gen_generic_ensemble(2, 0, &default_a0(2, 2).unwrap(), None, &mut rng).is_err());
}

#[test]
fn error_grows_linearly_with_noise() {
    let (t, e, mut rng) = instance(2, 1, 20, 306);
    let y0 = measure(t.as_map(), &e).unwrap();
    let prep = PreparedEnsemble::new(&e);
    let levels: Vec<f64> = (1..=8).map(|k| 0.02 * k as f64).collect();
    let mut means = Vec::new();
    for &noise in &levels {
        let mut total = 0.0;
        for _ in 0..6 {
            let y = add_noise(&y0, noise, &mut rng).unwrap();
            let r = prep.cpt_fit(&y, &SolverConfig::default()).unwrap();
            total += reconstruction_error(&r.estimate, t.as_map(), 2.0).unwrap();
        }
        means.push(total / 6.0);
    }
    let r2 = r_squared(&levels, &means);
    assert!(r2 >= 0.9, "R² = {r2}, means {means:?}");
}

/// The unconstrained diamond-norm objective falls below 1 as the error grows.
#[test]
fn diamond_objective_trends_down_with_error() {
    let (t, e, mut rng) = instance(2, 1, 16, 307);
    let y0 = measure(t.as_map(), &e).unwrap();
    let prep = PreparedEnsemble::new(&e);
    let mut pairs = Vec::new();
    for k in 0..8 {
        let noise = 0.05 * k as f64;
        let y = add_noise(&y0, noise, &mut rng).unwrap();
        let r = prep.diamond_norm_min(&y, default_eta(noise), false, &SolverConfig::default()).unwrap();
        pairs.push((reconstruction_error(&r.estimate, t.as_map(), 2.0).unwrap(), r.objective));
    }
    assert!((pairs[0].1 - 1.0).abs() < 1e-5);
    let objectives: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let errors: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mx = errors.iter().sum::<f64>() / 8.0;
    let my = objectives.iter().sum::<f64>() / 8.0;
    let cov: f64 = errors.iter().zip(&objectives).map(|(a, b)| (a - mx) * (b - my)).sum();
    assert!(cov < 0.0, "{pairs:?}");
    assert!(objectives[7] < 1.0);
}
