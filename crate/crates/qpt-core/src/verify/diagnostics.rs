//! Monte Carlo estimates of the conic singular value, the marginal tail
//! function and the mean empirical width over the cone of effectively
//! low-rank trace-annihilating maps.

use rand::Rng;

use crate::channels::HermPreservingMap;
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    complex_gaussian, partial_trace_first, schatten_norm_herm, tensor_product_herm, ComplexMatrix, HermitianOperator,
    Schatten, C64,
};
use crate::measurements::MeasurementSetting;
use crate::verify::moments::sample_s;

/// Rejection-sampling budget for [`sample_cone`].
pub const MAX_CONE_TRIES: usize = 10_000;

/// Projected-ascent steps used by [`empirical_width_mc`].
pub const ASCENT_STEPS: usize = 100;

/// A Monte Carlo estimate. `stderr` is `None` for extremal statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub samples: usize,
}

/// Orthogonal projection `X ↦ X − 𝟙 ⊗ Tr₁X / n` onto `{Tr₁X = 0}`.
pub fn project_trace_annihilating(x: &HermitianOperator, n: usize) -> Result<HermitianOperator> {
    if x.dim() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, found: x.dim() });
    }
    let lambda = partial_trace_first(x, n, n)?;
    Ok(x.sub(&tensor_product_herm(&HermitianOperator::identity(n), &lambda).scale(1.0 / n as f64)))
}

/// Random Hermitian `X = Σ_{k<rank} ±g_k g_k†` (alternating signs, Gaussian
/// `g_k`) projected onto the trace-annihilating subspace.
pub fn random_trace_annihilating<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> HermPreservingMap {
    let d = n * n;
    let mut x = ComplexMatrix::zeros(d, d);
    for k in 0..rank.max(1) {
        let g: Vec<C64> = (0..d).map(|_| complex_gaussian(rng)).collect();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        for i in 0..d {
            for j in 0..d {
                x[(i, j)] += g[i] * g[j].conj() * sign;
            }
        }
    }
    let x = HermitianOperator::hermitian_part(&x);
    let projected = project_trace_annihilating(&x, n).expect("dimensions agree");
    HermPreservingMap::from_choi(projected).expect("square Choi dimension")
}

/// Whether `‖J(M)‖₁ ≤ c_μ √r ‖J(M)‖₂`.
pub fn in_cone(m: &HermPreservingMap, r: usize, c_mu: f64) -> Result<bool> {
    let one = schatten_norm_herm(m.choi(), Schatten::One)?;
    Ok(one <= c_mu * (r as f64).sqrt() * m.choi().frobenius_norm())
}

/// A Frobenius-normalized element of the cone, drawn as a projected rank-`2r`
/// difference and accepted by the norm-ratio test.
pub fn sample_cone<R: Rng + ?Sized>(n: usize, r: usize, c_mu: f64, rng: &mut R) -> Result<HermPreservingMap> {
    if n < 2 || r == 0 || !(c_mu > 0.0) {
        return Err(invalid("cone sampling needs n >= 2, r >= 1 and c_mu > 0"));
    }
    for _ in 0..MAX_CONE_TRIES {
        let m = random_trace_annihilating(n, 2 * r, rng);
        let norm = m.choi().frobenius_norm();
        if norm == 0.0 {
            continue;
        }
        let m = m.scale(1.0 / norm);
        if in_cone(&m, r, c_mu)? {
            return Ok(m);
        }
    }
    Err(invalid(format!("no cone sample accepted in {MAX_CONE_TRIES} draws; c_mu = {c_mu} is too small")))
}

/// `Tr[Aᵢ M(ψᵢψᵢ†)]` for each setting.
pub fn measurement_values(settings: &[MeasurementSetting], m: &HermPreservingMap) -> Result<Vec<f64>> {
    settings
        .iter()
        .map(|s| {
            let out = m.apply(&HermitianOperator::projector(&s.psi))?;
            Ok(s.observable.inner(&out))
        })
        .collect()
}

fn lq_norm(v: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        v.iter().fold(0.0, |a, x| a.max(x.abs()))
    } else {
        v.iter().map(|x| x.abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Smallest `‖𝒜(M)‖_q / ‖J(M)‖₂` over `samples` cone draws. This is an upper
/// estimate of the infimum over the cone. An empty settings list gives 0.
pub fn empirical_min_conic_sv<R: Rng + ?Sized>(
    n: usize,
    settings: &[MeasurementSetting],
    r: usize,
    c_mu: f64,
    samples: usize,
    q: f64,
    rng: &mut R,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(invalid("empirical_min_conic_sv needs at least one sample"));
    }
    if !(q >= 1.0) {
        return Err(invalid(format!("q must be at least 1, got {q}")));
    }
    if settings.is_empty() {
        return Ok(McEstimate { estimate: 0.0, stderr: None, samples });
    }
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let m = sample_cone(n, r, c_mu, rng)?;
        let ratio = lq_norm(&measurement_values(settings, &m)?, q) / m.choi().frobenius_norm();
        best = best.min(ratio);
    }
    Ok(McEstimate { estimate: best, stderr: None, samples })
}

/// Fraction of draws with `|Tr[UA₀U† M(ψψ†)]| ≥ ξ`, Haar `U` and `ψ`.
pub fn marginal_tail_mc<R: Rng + ?Sized>(
    a0: &HermitianOperator,
    m: &HermPreservingMap,
    xi: f64,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if !(xi >= 0.0) {
        return Err(invalid(format!("xi must be non-negative, got {xi}")));
    }
    if samples == 0 {
        return Err(invalid("marginal_tail_mc needs at least one sample"));
    }
    let mut hits = 0usize;
    for _ in 0..samples {
        if sample_s(a0, m, rng)?.abs() >= xi {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    Ok(McEstimate { estimate: p, stderr: Some((p * (1.0 - p) / samples as f64).sqrt()), samples })
}

/// `sup ⟨H, J⟩` over the unit-Frobenius cone slice, approximated from below by
/// the best of `candidates` cone samples followed by projected ascent.
fn width_sup<R: Rng + ?Sized>(
    h: &HermitianOperator,
    n: usize,
    r: usize,
    c_mu: f64,
    candidates: usize,
    rng: &mut R,
) -> Result<f64> {
    let h = project_trace_annihilating(h, n)?;
    let mut best = sample_cone(n, r, c_mu, rng)?.into_choi();
    let mut value = h.inner(&best);
    for _ in 1..candidates {
        let c = sample_cone(n, r, c_mu, rng)?.into_choi();
        let v = h.inner(&c);
        if v > value {
            best = c;
            value = v;
        }
    }
    let mut step = 1.0 / h.frobenius_norm().max(f64::MIN_POSITIVE);
    for _ in 0..ASCENT_STEPS {
        let mut accepted = false;
        for _ in 0..20 {
            let trial = best.add(&h.scale(step));
            let trial = trial.scale(1.0 / trial.frobenius_norm());
            let v = h.inner(&trial);
            let map = HermPreservingMap::from_choi(trial.clone())?;
            if v > value && in_cone(&map, r, c_mu)? {
                best = trial;
                value = v;
                accepted = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(value)
}

/// Mean over `sign_samples` Rademacher draws of
/// `sup_{M ∈ slice} m^{-1/2} Σ εᵢ Tr[Aᵢ M(ψᵢψᵢ†)]`, each supremum estimated
/// from below with `inner_samples` candidates plus projected ascent.
pub fn empirical_width_mc<R: Rng + ?Sized>(
    n: usize,
    settings: &[MeasurementSetting],
    r: usize,
    c_mu: f64,
    sign_samples: usize,
    inner_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if sign_samples == 0 || inner_samples == 0 {
        return Err(invalid("empirical_width_mc needs positive sample counts"));
    }
    if settings.is_empty() {
        return Ok(McEstimate { estimate: 0.0, stderr: Some(0.0), samples: sign_samples });
    }
    let rows: Vec<HermitianOperator> = settings.iter().map(MeasurementSetting::measurement_matrix).collect();
    let scale = 1.0 / (settings.len() as f64).sqrt();
    let mut values = Vec::with_capacity(sign_samples);
    for _ in 0..sign_samples {
        let mut h = HermitianOperator::zeros(n * n);
        for row in &rows {
            let sign = if rng.random_bool(0.5) { scale } else { -scale };
            h = h.combine(1.0, row, sign);
        }
        values.push(width_sup(&h, n, r, c_mu, inner_samples, rng)?);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    Ok(McEstimate { estimate: mean, stderr: Some((var / k).sqrt()), samples: sign_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::{default_a0, gen_generic_ensemble};
    use crate::rng::seeded;
    use crate::verify::moments::moments_mc;

    #[test]
    fn trace_annihilating_samples() {
        let mut rng = seeded(60);
        let m = random_trace_annihilating(3, 4, &mut rng);
        assert!(m.trace_annihilation_defect() < 1e-10);
        let c = sample_cone(3, 1, 3.0, &mut rng).unwrap();
        assert!((c.choi().frobenius_norm() - 1.0).abs() < 1e-12);
        assert!(in_cone(&c, 1, 3.0).unwrap());
        assert!(c.trace_annihilation_defect() < 1e-10);
    }

    #[test]
    fn empty_settings_give_zero() {
        let mut rng = seeded(61);
        let e = empirical_min_conic_sv(3, &[], 1, 3.0, 5, 1.0, &mut rng).unwrap();
        assert_eq!(e.estimate, 0.0);
    }

    #[test]
    fn conic_sv_positive_at_recovery_count() {
        let mut rng = seeded(62);
        let n = 3;
        let a0 = default_a0(n, n).unwrap();
        let ens = gen_generic_ensemble(n, 5 * n * n, &a0, None, &mut rng).unwrap();
        let e = empirical_min_conic_sv(n, &ens.settings, 1, 3.0, 200, 2.0, &mut rng).unwrap();
        assert!(e.estimate > 0.0 && e.estimate.is_finite());
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let mut rng = seeded(63);
        let n = 2;
        let a0 = default_a0(n, n).unwrap();
        let ens = gen_generic_ensemble(n, 8, &a0, None, &mut rng).unwrap();
        let m = random_trace_annihilating(n, 2, &mut rng);
        let base = lq_norm(&measurement_values(&ens.settings, &m).unwrap(), 2.0) / m.choi().frobenius_norm();
        let m3 = m.scale(3.0);
        let scaled = lq_norm(&measurement_values(&ens.settings, &m3).unwrap(), 2.0) / m3.choi().frobenius_norm();
        assert!((base - scaled).abs() < 1e-12 * base);
    }

    #[test]
    fn tail_limits_and_paley_zygmund() {
        let mut rng = seeded(64);
        let n = 2;
        let a0 = default_a0(n, n).unwrap();
        let m = random_trace_annihilating(n, 2, &mut rng);
        assert_eq!(marginal_tail_mc(&a0, &m, 0.0, 200, &mut rng).unwrap().estimate, 1.0);
        assert_eq!(marginal_tail_mc(&a0, &m, 1e6, 200, &mut rng).unwrap().estimate, 0.0);
        let mom = moments_mc(&a0, &m, 20_000, &mut rng).unwrap();
        let tail = marginal_tail_mc(&a0, &m, (mom.second / 2.0).sqrt(), 20_000, &mut rng).unwrap();
        let floor = 0.25 * mom.second * mom.second / mom.fourth;
        assert!(tail.estimate + 3.0 * tail.stderr.unwrap() >= floor, "{} < {floor}", tail.estimate);
    }

    #[test]
    fn width_is_positive_and_bounded() {
        let mut rng = seeded(65);
        let n = 2;
        let a0 = default_a0(n, n).unwrap();
        let ens = gen_generic_ensemble(n, 12, &a0, None, &mut rng).unwrap();
        let w = empirical_width_mc(n, &ens.settings, 1, 3.0, 8, 4, &mut rng).unwrap();
        assert!(w.estimate > 0.0);
        // Cauchy-Schwarz: the supremum never exceeds ‖Π H‖₂.
        let rows: Vec<HermitianOperator> = ens.settings.iter().map(MeasurementSetting::measurement_matrix).collect();
        let max_h: f64 = rows.iter().map(|r| r.frobenius_norm()).sum::<f64>() / (rows.len() as f64).sqrt();
        assert!(w.estimate <= max_h);
    }
}
