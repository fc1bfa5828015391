//! Haar moments and the moments of `S = Tr[UAU† M(ψψ†)]`.

use rand::Rng;

use crate::channels::HermPreservingMap;
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    flip_operator, haar_state, haar_unitary, schatten_norm_herm, sym_projector, ComplexMatrix, HermitianOperator,
    Schatten, C64,
};
use crate::verify::s4::{projector_coefficient, projector_trace, s4_projectors, schur_dims, CycleType};

/// Tolerance for the trace-annihilation precondition, relative to `‖J(M)‖_F`.
pub const TRACE_ANNIHILATION_TOL: f64 = 1e-9;

/// `E[(ψψ†)^{⊗k}]` for Haar-random `ψ ∈ ℂⁿ`, `k ∈ {1, 2, 4}`.
pub fn psi_moment_analytic(k: usize, n: usize) -> Result<HermitianOperator> {
    if n == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    match k {
        1 => Ok(HermitianOperator::identity(n).scale(1.0 / n as f64)),
        2 => Ok(HermitianOperator::identity(n * n)
            .add(&flip_operator(n))
            .scale(1.0 / (n * (n + 1)) as f64)),
        4 => Ok(sym_projector(4, n)?.scale(1.0 / schur_dims(n)[0] as f64)),
        _ => Err(invalid(format!("psi moments are available for k in {{1, 2, 4}}, got {k}"))),
    }
}

/// `E[(UAU†)^{⊗2}] = (Tr(A)² + ‖A‖₂²)/(n(n+1)) P_Sym + (Tr(A)² − ‖A‖₂²)/(n(n−1)) P_∧`.
pub fn u_moment2_analytic(a: &HermitianOperator) -> Result<HermitianOperator> {
    let n = a.dim();
    if n == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    let tr = a.trace();
    let q = a.frobenius_norm().powi(2);
    let id = HermitianOperator::identity(n * n);
    let f = flip_operator(n);
    let sym = id.add(&f).scale(0.5);
    let mut out = sym.scale((tr * tr + q) / (n * (n + 1)) as f64);
    if n > 1 {
        let anti = id.sub(&f).scale(0.5);
        out = out.add(&anti.scale((tr * tr - q) / (n * (n - 1)) as f64));
    }
    Ok(out)
}

fn check_trace_annihilating(m: &HermPreservingMap) -> Result<()> {
    let deviation = m.trace_annihilation_defect();
    if deviation > TRACE_ANNIHILATION_TOL * m.choi().frobenius_norm().max(1.0) {
        return Err(Error::NotTraceAnnihilating { deviation });
    }
    Ok(())
}

fn check_dims(a: &HermitianOperator, m: &HermPreservingMap) -> Result<usize> {
    if a.dim() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: a.dim() });
    }
    if m.dim() < 2 {
        return Err(invalid("moments need n >= 2"));
    }
    Ok(m.dim())
}

/// `‖M(𝟙)‖₂² + ‖J(M)‖₂²`.
pub fn map_weight(m: &HermPreservingMap) -> f64 {
    m.image_of_identity().frobenius_norm().powi(2) + m.choi().frobenius_norm().powi(2)
}

/// Closed-form second moment as stated in the literature:
/// `(2‖A‖₂²n − 2Tr[A]²)/((n−1)n²(n+1)²) · (‖M(𝟙)‖₂² + ‖J(M)‖₂²)`.
///
/// This is twice the exact value [`moment2_exact`].
pub fn moment2_analytic(a: &HermitianOperator, m: &HermPreservingMap) -> Result<f64> {
    Ok(2.0 * moment2_exact(a, m)?)
}

/// Exact `E|S|²` for Haar `U`, `ψ` and trace-annihilating `M`:
/// `(‖A‖₂²n − Tr[A]²)/((n−1)n²(n+1)²) · (‖M(𝟙)‖₂² + ‖J(M)‖₂²)`.
pub fn moment2_exact(a: &HermitianOperator, m: &HermPreservingMap) -> Result<f64> {
    let n = check_dims(a, m)? as f64;
    check_trace_annihilating(m)?;
    let q = a.frobenius_norm().powi(2);
    let tr = a.trace();
    Ok((q * n - tr * tr) / ((n - 1.0) * n * n * (n + 1.0) * (n + 1.0)) * map_weight(m))
}

/// Structural factor of the fourth-moment bound and the bound with `c₃ = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moment4Bound {
    /// `‖A‖₂⁴ (‖M(𝟙)‖₂² + ‖J(M)‖₂²)² / ((n−1)² n² (n+1)² (n+2)(n+3))`.
    pub structural_factor: f64,
    /// The bound evaluated with the unknown absolute constant set to 1.
    pub bound: f64,
}

/// Fourth-moment bound for traceless `A` with `‖A‖∞ = 1`.
pub fn moment4_bound(a: &HermitianOperator, m: &HermPreservingMap) -> Result<Moment4Bound> {
    let n = check_dims(a, m)? as f64;
    check_trace_annihilating(m)?;
    if a.trace().abs() > 1e-9 * a.frobenius_norm().max(1.0) {
        return Err(invalid("the fourth-moment bound needs a traceless observable"));
    }
    let spec = schatten_norm_herm(a, Schatten::Inf)?;
    if (spec - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("the fourth-moment bound needs ||A||_inf = 1, got {spec}")));
    }
    let q = a.frobenius_norm().powi(2);
    let w = map_weight(m);
    let s = q * q * w * w / ((n - 1.0).powi(2) * n * n * (n + 1.0).powi(2) * (n + 2.0) * (n + 3.0));
    Ok(Moment4Bound { structural_factor: s, bound: s })
}

/// `Tr[A^{⊗4} R(σ)] = Π_cycles Tr[A^{len}]` for `σ` of the given class.
pub fn class_overlap(a: &HermitianOperator, class: CycleType) -> f64 {
    let a2 = a.matrix().matmul(a.matrix());
    let a3 = a2.matmul(a.matrix());
    let powers = [a.trace(), a2.trace().re, a3.trace().re, a2.matmul(&a2).trace().re];
    class.cycle_lengths().iter().map(|&l| powers[l - 1]).product()
}

/// Coefficients `aᵢ` in `E[(UAU†)^{⊗4}] = Σ aᵢ Pᵢ`, i.e. `Tr[A^{⊗4}Pᵢ] / Tr[Pᵢ]`
/// (zero when `Pᵢ = 0`).
pub fn conjugation_coefficients(a: &HermitianOperator) -> [f64; 5] {
    let n = a.dim();
    let mut out = [0.0; 5];
    for (i, o) in out.iter_mut().enumerate() {
        let tr_p = projector_trace(i, n);
        if tr_p.abs() < 0.5 {
            continue;
        }
        let overlap: f64 = CycleType::ALL
            .iter()
            .map(|&c| c.size() as f64 * projector_coefficient(i, c) * class_overlap(a, c))
            .sum();
        *o = overlap / tr_p;
    }
    out
}

/// Applies `M` to tensor factor `f` of an operator on `(ℂⁿ)^{⊗k}`.
fn apply_on_factor(j: &ComplexMatrix, n: usize, x: &ComplexMatrix, k: usize, f: usize) -> ComplexMatrix {
    let dim = x.rows();
    let stride = n.pow((k - 1 - f) as u32);
    let mut y = ComplexMatrix::zeros(dim, dim);
    for r in 0..dim {
        let o = (r / stride) % n;
        let r0 = r - o * stride;
        for q in 0..dim {
            let p = (q / stride) % n;
            let q0 = q - p * stride;
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..n {
                for a in 0..n {
                    let jv = j[(o * n + c, p * n + a)];
                    if jv != C64::new(0.0, 0.0) {
                        acc += jv * x[(r0 + c * stride, q0 + a * stride)];
                    }
                }
            }
            y[(r, q)] = acc;
        }
    }
    y
}

/// `M^{⊗k}(X)` for an operator `X` on `(ℂⁿ)^{⊗k}`.
pub fn apply_tensor_power(m: &HermPreservingMap, x: &ComplexMatrix, k: usize) -> Result<ComplexMatrix> {
    let n = m.dim();
    if x.rows() != n.pow(k as u32) || !x.is_square() {
        return Err(Error::DimensionMismatch { expected: n.pow(k as u32), found: x.rows() });
    }
    let mut y = x.clone();
    for f in 0..k {
        y = apply_on_factor(m.choi().matrix(), n, &y, k, f);
    }
    Ok(y)
}

/// Exact `E|S|⁴ = Σᵢ aᵢ Tr[Pᵢ M^{⊗4}(P₁)] / d₁(n)` with `aᵢ` from
/// [`conjugation_coefficients`], for `2 ≤ n ≤ 4`.
pub fn moment4_exact(a: &HermitianOperator, m: &HermPreservingMap) -> Result<f64> {
    let n = check_dims(a, m)?;
    let s4 = s4_projectors(n)?;
    let coeffs = conjugation_coefficients(a);
    let image = apply_tensor_power(m, s4.projectors[0].matrix(), 4)?;
    let d1 = s4.dims[0] as f64;
    Ok(s4
        .projectors
        .iter()
        .zip(coeffs)
        .map(|(p, c)| if c == 0.0 { 0.0 } else { c * p.matrix().trace_product(&image).re / d1 })
        .sum())
}

/// One sample of `S = Tr[UAU† M(ψψ†)]`.
pub fn sample_s<R: Rng + ?Sized>(a: &HermitianOperator, m: &HermPreservingMap, rng: &mut R) -> Result<f64> {
    let n = m.dim();
    let psi = haar_state(n, rng);
    let u = haar_unitary(n, rng);
    let out = m.apply(&HermitianOperator::projector(&psi))?;
    let rotated = u.adjoint().matmul(out.matrix()).matmul(&u);
    Ok(a.matrix().trace_product(&rotated).re)
}

/// Monte Carlo estimates of `E|S|²` and `E|S|⁴` with standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentEstimates {
    pub second: f64,
    pub second_stderr: f64,
    pub fourth: f64,
    pub fourth_stderr: f64,
    pub samples: usize,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    (mean, (var / k).sqrt())
}

/// Monte Carlo moments of `S` over `samples` independent draws.
pub fn moments_mc<R: Rng + ?Sized>(
    a: &HermitianOperator,
    m: &HermPreservingMap,
    samples: usize,
    rng: &mut R,
) -> Result<MomentEstimates> {
    check_dims(a, m)?;
    if samples < 2 {
        return Err(invalid("Monte Carlo moments need at least 2 samples"));
    }
    let s: Vec<f64> = (0..samples).map(|_| sample_s(a, m, rng)).collect::<Result<_>>()?;
    let s2: Vec<f64> = s.iter().map(|v| v * v).collect();
    let s4: Vec<f64> = s2.iter().map(|v| v * v).collect();
    let (second, second_stderr) = mean_and_stderr(&s2);
    let (fourth, fourth_stderr) = mean_and_stderr(&s4);
    Ok(MomentEstimates { second, second_stderr, fourth, fourth_stderr, samples })
}

/// Monte Carlo `E|S|⁴` with its standard error.
pub fn moment4_mc<R: Rng + ?Sized>(
    a: &HermitianOperator,
    m: &HermPreservingMap,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let e = moments_mc(a, m, samples, rng)?;
    Ok((e.fourth, e.fourth_stderr))
}
