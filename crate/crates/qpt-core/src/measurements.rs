//! Measurement ensembles, the measurement map and simulated data.
//!
//! A setting `(ψ, A)` yields `y = Tr[A T(ψψ†)] = Tr[M J(T)]` with the measurement
//! matrix `M = A ⊗ (ψψ†)ᵀ`.

use std::io::Write as _;
use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channels::{HermPreservingMap, QuantumChannel};
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    haar_state, haar_unitary, herm_eig, svec_pack, tensor_product, ComplexMatrix, HermitianOperator, StateVector, C64,
};
use crate::verify::moments::{psi_moment_analytic, u_moment2_analytic};

/// Input state and observable of one measurement setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub psi: StateVector,
    pub observable: HermitianOperator,
}

impl MeasurementSetting {
    pub fn new(psi: StateVector, observable: HermitianOperator) -> Result<Self> {
        if psi.dim() != observable.dim() {
            return Err(Error::DimensionMismatch { expected: observable.dim(), found: psi.dim() });
        }
        Ok(Self { psi, observable })
    }

    /// Measurement matrix `A ⊗ (ψψ†)ᵀ`.
    pub fn measurement_matrix(&self) -> HermitianOperator {
        let rho_t = HermitianOperator::projector(&self.psi).transpose();
        HermitianOperator::hermitian_part(&tensor_product(self.observable.matrix(), rho_t.matrix()))
    }

    /// `svec` of the measurement matrix, written into `out` (length `n⁴`).
    fn svec_into(&self, out: &mut [f64]) {
        let n = self.psi.dim();
        let a = self.observable.matrix();
        let psi = self.psi.amplitudes();
        // (ψψ†)ᵀ[k, l] = ψ_l conj(ψ_k)
        svec_pack(n * n, |r, c| a[(r / n, c / n)] * psi[c % n] * psi[r % n].conj(), out);
    }
}

/// Ensemble family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Generic,
    Pauli,
    Circuit,
}

impl std::fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnsembleKind::Generic => "generic",
            EnsembleKind::Pauli => "pauli",
            EnsembleKind::Circuit => "circuit",
        })
    }
}

impl std::str::FromStr for EnsembleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(Self::Generic),
            "pauli" => Ok(Self::Pauli),
            "circuit" => Ok(Self::Circuit),
            _ => Err(invalid(format!("unknown ensemble kind '{s}'"))),
        }
    }
}

/// Ordered list of measurement settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementEnsemble {
    pub n: usize,
    pub kind: EnsembleKind,
    pub seed: Option<u64>,
    #[serde(rename = "A0")]
    pub a0: HermitianOperator,
    pub settings: Vec<MeasurementSetting>,
}

impl MeasurementEnsemble {
    /// Validates shared dimensions and `m ≥ 1`.
    pub fn new(
        n: usize,
        kind: EnsembleKind,
        seed: Option<u64>,
        a0: HermitianOperator,
        settings: Vec<MeasurementSetting>,
    ) -> Result<Self> {
        if settings.is_empty() {
            return Err(invalid("an ensemble needs at least one setting"));
        }
        if a0.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: a0.dim() });
        }
        for s in &settings {
            if s.psi.dim() != n || s.observable.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, found: s.psi.dim().max(s.observable.dim()) });
            }
        }
        Ok(Self { n, kind, seed, a0, settings })
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    /// The first `m` settings.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.len() {
            return Err(invalid(format!("prefix length {m} outside [1, {}]", self.len())));
        }
        Ok(Self { settings: self.settings[..m].to_vec(), ..self.clone() })
    }

    /// Copy with every observable replaced by `f(observable)`, and `A₀` by `f(A₀)`.
    pub fn map_observables(&self, f: impl Fn(&HermitianOperator) -> HermitianOperator) -> Self {
        Self {
            a0: f(&self.a0),
            settings: self
                .settings
                .iter()
                .map(|s| MeasurementSetting { psi: s.psi.clone(), observable: f(&s.observable) })
                .collect(),
            ..self.clone()
        }
    }

    /// Real measurement matrix with rows `svec(Mᵢ)`.
    pub fn measurement_matrix(&self) -> MeasurementMatrix {
        let n = self.n;
        let cols = n.pow(4);
        let mut buf = vec![0.0; cols];
        let mut data = Mat::<f64>::zeros(self.len(), cols);
        for (i, s) in self.settings.iter().enumerate() {
            s.svec_into(&mut buf);
            for (c, &v) in buf.iter().enumerate() {
                data[(i, c)] = v;
            }
        }
        MeasurementMatrix { n, data }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let e: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(e.n, e.kind, e.seed, e.a0, e.settings)
    }
}

/// The measurement map in real coordinates: `𝒜(J)ᵢ = ⟨svec Mᵢ, svec J⟩`.
#[derive(Clone, Debug)]
pub struct MeasurementMatrix {
    n: usize,
    data: Mat<f64>,
}

impl MeasurementMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of settings.
    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    /// Length of `svec J`, `n⁴`.
    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn as_mat(&self) -> &Mat<f64> {
        &self.data
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { n: self.n, data: &self.data * faer::Scale(c) }
    }

    /// `𝒜 x` for `x = svec J`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        let mut out = Mat::<f64>::zeros(self.m(), 1);
        let rhs = faer::MatRef::from_column_major_slice(x, x.len(), 1);
        matmul(out.as_mut(), Accum::Replace, self.data.as_ref(), rhs, 1.0, Par::Seq);
        (0..self.m()).map(|i| out[(i, 0)]).collect()
    }

    /// `𝒜ᵀ z`.
    pub fn apply_adjoint(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.m());
        let mut out = Mat::<f64>::zeros(self.cols(), 1);
        let rhs = faer::MatRef::from_column_major_slice(z, z.len(), 1);
        matmul(out.as_mut(), Accum::Replace, self.data.transpose(), rhs, 1.0, Par::Seq);
        (0..self.cols()).map(|i| out[(i, 0)]).collect()
    }

    /// `𝒜(T)`.
    pub fn evaluate(&self, t: &HermPreservingMap) -> Result<Vec<f64>> {
        if t.dim() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: t.dim() });
        }
        Ok(self.apply(&t.choi().svec()))
    }
}

/// Measured values `y = 𝒜(T) + e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    /// `‖e‖₂` of the injected noise, 0 if none.
    pub noise_strength: f64,
}

impl MeasurementVector {
    pub fn noiseless(values: Vec<f64>) -> Self {
        Self { values, noise_strength: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The first `m` values.
    pub fn prefix(&self, m: usize) -> Self {
        Self { values: self.values[..m].to_vec(), noise_strength: self.noise_strength }
    }

    /// Writes `index,value` rows and a JSON sidecar `{noise_strength, seed}` next
    /// to `path` (extension replaced by `.json`).
    pub fn save(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "index,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(f, "{i},{v:e}")?;
        }
        f.flush()?;
        let sidecar = MeasurementSidecar { noise_strength: self.noise_strength, seed };
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<u64>)> {
        let text = std::fs::read_to_string(path)?;
        let mut values = Vec::new();
        for (k, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let (i, v) = line.split_once(',').ok_or_else(|| invalid(format!("malformed line {}", k + 1)))?;
            let i: usize = i.trim().parse().map_err(|_| invalid(format!("bad index on line {}", k + 1)))?;
            if i != values.len() {
                return Err(invalid(format!("index {i} out of order on line {}", k + 1)));
            }
            values.push(v.trim().parse().map_err(|_| invalid(format!("bad value on line {}", k + 1)))?);
        }
        let sidecar: MeasurementSidecar = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
        Ok((Self { values, noise_strength: sidecar.noise_strength }, sidecar.seed))
    }
}

#[derive(Serialize, Deserialize)]
struct MeasurementSidecar {
    noise_strength: f64,
    seed: Option<u64>,
}

/// Diagonal observable with `rank_a` nonzero eigenvalues spread evenly over
/// `[−1, 1]`, spectral norm 1.
///
/// For even `rank_a` the eigenvalues are `linspace(−1, 1, rank_a)`. For odd
/// `rank_a ≥ 3` that grid would contain 0, so the grid `linspace(−1, 1, rank_a + 1)`
/// is used with its negative point closest to 0 removed. `rank_a = 1` gives `+1`.
pub fn default_a0(n: usize, rank_a: usize) -> Result<HermitianOperator> {
    if rank_a == 0 || rank_a > n {
        return Err(invalid(format!("observable rank {rank_a} outside [1, {n}]")));
    }
    let grid = |k: usize| -> Vec<f64> { (0..k).map(|i| -1.0 + 2.0 * i as f64 / (k - 1) as f64).collect() };
    let mut eig = match rank_a {
        1 => vec![1.0],
        r if r % 2 == 0 => grid(r),
        r => {
            let mut g = grid(r + 1);
            g.remove((r + 1) / 2 - 1);
            g
        }
    };
    eig.resize(n, 0.0);
    Ok(HermitianOperator::from_diag(&eig))
}

/// `U A U†`.
fn conjugate(u: &ComplexMatrix, a: &HermitianOperator) -> HermitianOperator {
    HermitianOperator::hermitian_part(&u.matmul(a.matrix()).matmul(&u.adjoint()))
}

/// Haar-random states and observables `UᵢA₀Uᵢ†` with Haar-random `Uᵢ`.
pub fn gen_generic_ensemble<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    a0: &HermitianOperator,
    seed: Option<u64>,
    rng: &mut R,
) -> Result<MeasurementEnsemble> {
    if a0.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: a0.dim() });
    }
    let settings = (0..m)
        .map(|_| {
            let psi = haar_state(n, rng);
            let u = haar_unitary(n, rng);
            MeasurementSetting { psi, observable: conjugate(&u, a0) }
        })
        .collect();
    MeasurementEnsemble::new(n, EnsembleKind::Generic, seed, a0.clone(), settings)
}

/// Single-qubit Pauli matrices `[𝟙, σx, σy, σz]`.
pub fn pauli_matrices() -> [ComplexMatrix; 4] {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    [
        ComplexMatrix::identity(2),
        ComplexMatrix::from_vec(2, 2, vec![z, o, o, z]).expect("2x2"),
        ComplexMatrix::from_vec(2, 2, vec![z, -i, i, z]).expect("2x2"),
        ComplexMatrix::from_vec(2, 2, vec![o, z, z, -o]).expect("2x2"),
    ]
}

/// Pauli string `σ_{codes[0]} ⊗ … ⊗ σ_{codes[L−1]}` with codes in `0..4`.
pub fn pauli_string(codes: &[usize]) -> HermitianOperator {
    let p = pauli_matrices();
    let m = codes.iter().fold(ComplexMatrix::identity(1), |acc, &c| tensor_product(&acc, &p[c]));
    HermitianOperator::hermitian_part(&m)
}

/// Eigenvector of `σ_axis` (axis 1, 2, 3 for x, y, z) with eigenvalue `sign`.
pub fn pauli_eigenstate(axis: usize, positive: bool) -> StateVector {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let s = if positive { 1.0 } else { -1.0 };
    let amps = match axis {
        1 => vec![C64::new(h, 0.0), C64::new(s * h, 0.0)],
        2 => vec![C64::new(h, 0.0), C64::new(0.0, s * h)],
        3 if positive => vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        3 => vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        _ => panic!("axis must be 1, 2 or 3"),
    };
    StateVector::new(amps).expect("nonzero")
}

/// Product of uniformly chosen single-qubit Pauli eigenstates.
pub fn random_pauli_product_state<R: Rng + ?Sized>(qubits: usize, rng: &mut R) -> StateVector {
    let mut psi = StateVector::basis(1, 0);
    for _ in 0..qubits {
        let axis = rng.random_range(1..=3);
        let positive = rng.random_bool(0.5);
        psi = psi.tensor(&pauli_eigenstate(axis, positive));
    }
    psi
}

fn qubit_count(n: usize) -> Result<usize> {
    if n == 0 || !n.is_power_of_two() {
        return Err(invalid(format!("dimension {n} is not a power of two")));
    }
    Ok(n.trailing_zeros() as usize)
}

/// Uniform Pauli strings (identity factors allowed) measured on random Pauli
/// product states. `A₀` is recorded as `σz^{⊗L}`.
pub fn gen_pauli_ensemble<R: Rng + ?Sized>(
    qubits: usize,
    m: usize,
    seed: Option<u64>,
    rng: &mut R,
) -> Result<MeasurementEnsemble> {
    if qubits == 0 {
        return Err(invalid("Pauli ensembles need at least one qubit"));
    }
    let n = 1usize << qubits;
    let settings = (0..m)
        .map(|_| {
            let codes: Vec<usize> = (0..qubits).map(|_| rng.random_range(0..4)).collect();
            let psi = random_pauli_product_state(qubits, rng);
            MeasurementSetting { psi, observable: pauli_string(&codes) }
        })
        .collect();
    MeasurementEnsemble::new(n, EnsembleKind::Pauli, seed, pauli_string(&vec![3; qubits]), settings)
}

/// Brickwork circuit of `depth` layers of Haar-random two-qubit gates on a line
/// (layer `ℓ` acts on pairs starting at qubit `ℓ mod 2`). A single qubit gets a
/// Haar-random one-qubit gate per layer.
pub fn random_circuit<R: Rng + ?Sized>(qubits: usize, depth: usize, rng: &mut R) -> ComplexMatrix {
    let n = 1usize << qubits;
    let mut u = ComplexMatrix::identity(n);
    for layer in 0..depth {
        if qubits == 1 {
            u = haar_unitary(2, rng).matmul(&u);
            continue;
        }
        let mut q = layer % 2;
        while q + 1 < qubits {
            let g = haar_unitary(4, rng);
            let left = ComplexMatrix::identity(1 << q);
            let right = ComplexMatrix::identity(1 << (qubits - q - 2));
            let full = tensor_product(&tensor_product(&left, &g), &right);
            u = full.matmul(&u);
            q += 2;
        }
    }
    u
}

/// Observables `UᵢA₀Uᵢ†` and states `Uᵢ'|0…0⟩` from independent random circuits.
pub fn gen_circuit_ensemble<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    depth: usize,
    a0: &HermitianOperator,
    seed: Option<u64>,
    rng: &mut R,
) -> Result<MeasurementEnsemble> {
    let qubits = qubit_count(n)?;
    if depth == 0 {
        return Err(invalid("circuit depth must be at least 1"));
    }
    if a0.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: a0.dim() });
    }
    let settings = (0..m)
        .map(|_| {
            let u = random_circuit(qubits, depth, rng);
            let v = random_circuit(qubits, depth, rng);
            let psi = StateVector::new((0..n).map(|i| v[(i, 0)]).collect()).expect("unitary column");
            MeasurementSetting { psi, observable: conjugate(&u, a0) }
        })
        .collect();
    MeasurementEnsemble::new(n, EnsembleKind::Circuit, seed, a0.clone(), settings)
}

/// `yᵢ = Tr[Aᵢ T(ψᵢψᵢ†)]`.
pub fn measure(t: &HermPreservingMap, e: &MeasurementEnsemble) -> Result<MeasurementVector> {
    if t.dim() != e.n {
        return Err(Error::DimensionMismatch { expected: e.n, found: t.dim() });
    }
    let values = e
        .settings
        .iter()
        .map(|s| {
            let out = t.apply(&HermitianOperator::projector(&s.psi))?;
            Ok(s.observable.inner(&out))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MeasurementVector::noiseless(values))
}

/// Adds Gaussian noise rescaled to `‖e‖₂ = strength` exactly.
///
/// The recorded `noise_strength` accumulates additively over repeated calls,
/// which bounds the total injected norm.
pub fn add_noise<R: Rng + ?Sized>(y: &MeasurementVector, strength: f64, rng: &mut R) -> Result<MeasurementVector> {
    if !(strength >= 0.0) || !strength.is_finite() {
        return Err(invalid(format!("noise strength {strength} must be finite and nonnegative")));
    }
    if strength == 0.0 || y.is_empty() {
        return Ok(y.clone());
    }
    let e: Vec<f64> = loop {
        let e: Vec<f64> = (0..y.len()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            break e.iter().map(|v| v * strength / norm).collect();
        }
    };
    Ok(MeasurementVector {
        values: y.values.iter().zip(&e).map(|(a, b)| a + b).collect(),
        noise_strength: y.noise_strength + strength,
    })
}

/// Tolerance on outcome probabilities before clipping.
pub const PROBABILITY_TOL: f64 = 1e-8;

/// Born-rule outcome distribution `(eigenvalue, probability)` of measuring the
/// observable of `s` on `T(ψψ†)`.
pub fn outcome_distribution(t: &HermPreservingMap, s: &MeasurementSetting) -> Result<Vec<(f64, f64)>> {
    let rho = t.apply(&HermitianOperator::projector(&s.psi))?;
    let e = herm_eig(&s.observable)?;
    let mut out = Vec::with_capacity(e.values.len());
    for (k, &lam) in e.values.iter().enumerate() {
        let v = e.vector(k);
        let rv = rho.matrix().apply(&v);
        let p: f64 = v.iter().zip(&rv).map(|(a, b)| (a.conj() * b).re).sum();
        if !(-PROBABILITY_TOL..=1.0 + PROBABILITY_TOL).contains(&p) {
            return Err(Error::NotAState { probability: p });
        }
        out.push((lam, p.clamp(0.0, 1.0)));
    }
    let total: f64 = out.iter().map(|o| o.1).sum();
    if total <= 0.0 {
        return Err(Error::NotAState { probability: total });
    }
    out.iter_mut().for_each(|o| o.1 /= total);
    Ok(out)
}

/// Empirical mean of `shots` Born-rule samples of the observable.
pub fn sample_expectation<R: Rng + ?Sized>(
    t: &QuantumChannel,
    s: &MeasurementSetting,
    shots: usize,
    rng: &mut R,
) -> Result<f64> {
    if shots == 0 {
        return Err(invalid("shots must be at least 1"));
    }
    let dist = outcome_distribution(t.as_map(), s)?;
    // Multinomial draw as a chain of conditional binomials.
    let mut remaining = shots as u64;
    let mut mass = 1.0;
    let mut acc = 0.0;
    for (k, &(lam, p)) in dist.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let count = if k + 1 == dist.len() || p >= mass {
            remaining
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        acc += lam * count as f64;
        remaining -= count;
        mass -= p;
    }
    Ok(acc / shots as f64)
}

/// Source of random operators whose `k`-th tensor moment is compared to Haar.
pub trait DesignSampler {
    /// Dimension of the sampled operators.
    fn dim(&self) -> usize;
    /// One sample: `ψψ†` for state samplers, `UAU†` for unitary samplers.
    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> HermitianOperator;
    /// Exact Haar value of `E[X^{⊗k}]`.
    fn haar_moment(&self, k: usize) -> Result<HermitianOperator>;
}

/// Haar-random pure states.
pub struct HaarStates(pub usize);

impl DesignSampler for HaarStates {
    fn dim(&self) -> usize {
        self.0
    }
    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> HermitianOperator {
        HermitianOperator::projector(&haar_state(self.0, rng))
    }
    fn haar_moment(&self, k: usize) -> Result<HermitianOperator> {
        psi_moment_analytic(k, self.0)
    }
}

/// Random products of single-qubit Pauli eigenstates.
pub struct PauliStates(pub usize);

impl DesignSampler for PauliStates {
    fn dim(&self) -> usize {
        1 << self.0
    }
    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> HermitianOperator {
        HermitianOperator::projector(&random_pauli_product_state(self.0, rng))
    }
    fn haar_moment(&self, k: usize) -> Result<HermitianOperator> {
        psi_moment_analytic(k, self.dim())
    }
}

/// A single fixed state.
pub struct FixedState(pub StateVector);

impl DesignSampler for FixedState {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn sample(&mut self, _rng: &mut dyn rand::RngCore) -> HermitianOperator {
        HermitianOperator::projector(&self.0)
    }
    fn haar_moment(&self, k: usize) -> Result<HermitianOperator> {
        psi_moment_analytic(k, self.dim())
    }
}

/// States `U|0…0⟩` from brickwork circuits.
pub struct CircuitStates {
    pub qubits: usize,
    pub depth: usize,
}

impl DesignSampler for CircuitStates {
    fn dim(&self) -> usize {
        1 << self.qubits
    }
    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> HermitianOperator {
        let u = random_circuit(self.qubits, self.depth, rng);
        let psi = StateVector::new((0..self.dim()).map(|i| u[(i, 0)]).collect()).expect("unitary column");
        HermitianOperator::projector(&psi)
    }
    fn haar_moment(&self, k: usize) -> Result<HermitianOperator> {
        psi_moment_analytic(k, self.dim())
    }
}

/// Conjugations `UAU†` with Haar-random `U`.
pub struct HaarConjugations(pub HermitianOperator);

impl DesignSampler for HaarConjugations {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> HermitianOperator {
        conjugate(&haar_unitary(self.dim(), rng), &self.0)
    }
    fn haar_moment(&self, k: usize) -> Result<HermitianOperator> {
        unitary_haar_moment(&self.0, k)
    }
}

/// Conjugations `UAU†` with brickwork circuits `U`.
pub struct CircuitConjugations {
    pub observable: HermitianOperator,
    pub depth: usize,
}

impl DesignSampler for CircuitConjugations {
    fn dim(&self) -> usize {
        self.observable.dim()
    }
    fn sample(&mut self, rng: &mut dyn rand::RngCore) -> HermitianOperator {
        let qubits = self.dim().trailing_zeros() as usize;
        conjugate(&random_circuit(qubits, self.depth, rng), &self.observable)
    }
    fn haar_moment(&self, k: usize) -> Result<HermitianOperator> {
        unitary_haar_moment(&self.observable, k)
    }
}

fn unitary_haar_moment(a: &HermitianOperator, k: usize) -> Result<HermitianOperator> {
    match k {
        1 => Ok(HermitianOperator::identity(a.dim()).scale(a.trace() / a.dim() as f64)),
        2 => u_moment2_analytic(a),
        _ => Err(invalid(format!("design deviation supports k in {{1, 2}}, got {k}"))),
    }
}

fn tensor_power(x: &HermitianOperator, k: usize) -> HermitianOperator {
    match k {
        1 => x.clone(),
        _ => HermitianOperator::hermitian_part(&tensor_product(x.matrix(), x.matrix())),
    }
}

/// `‖E_emp[X^{⊗k}] − E_Haar[X^{⊗k}]‖∞ / ‖E_Haar[X^{⊗k}]‖∞` for points with
/// uniform weights.
pub fn moment_deviation(points: &[HermitianOperator], k: usize, haar: &HermitianOperator) -> Result<f64> {
    if !(1..=2).contains(&k) {
        return Err(invalid(format!("design deviation supports k in {{1, 2}}, got {k}")));
    }
    if points.is_empty() {
        return Err(invalid("no sample points"));
    }
    let mut acc = HermitianOperator::zeros(haar.dim());
    for p in points {
        acc = acc.add(&tensor_power(p, k));
    }
    let mean = acc.scale(1.0 / points.len() as f64);
    let dev = crate::linalg::schatten_norm_herm(&mean.sub(haar), crate::linalg::Schatten::Inf)?;
    let base = crate::linalg::schatten_norm_herm(haar, crate::linalg::Schatten::Inf)?;
    Ok(dev / base)
}

/// Relative spectral-norm deviation of the empirical `k`-th moment of `sampler`
/// from the Haar value, `k ∈ {1, 2}`.
pub fn design_deviation<S: DesignSampler + ?Sized, R: rand::RngCore>(
    sampler: &mut S,
    k: usize,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(1..=2).contains(&k) {
        return Err(invalid(format!("design deviation supports k in {{1, 2}}, got {k}")));
    }
    let haar = sampler.haar_moment(k)?;
    let points: Vec<HermitianOperator> = (0..samples).map(|_| sampler.sample(rng)).collect();
    moment_deviation(&points, k, &haar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{depolarizing_channel, identity_channel, random_rank_r_channel, unitary_channel};
    use crate::linalg::random_hermitian;
    use crate::rng::seeded;

    #[test]
    fn default_observables() {
        let a = default_a0(4, 4).unwrap();
        let expect = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
        for (i, e) in expect.iter().enumerate() {
            assert!((a.matrix()[(i, i)].re - e).abs() < 1e-15);
        }
        assert!((a.frobenius_norm().powi(2) - 20.0 / 9.0).abs() < 1e-12);
        assert!((default_a0(4, 1).unwrap().frobenius_norm() - 1.0).abs() < 1e-15);
        assert!(default_a0(4, 0).is_err() && default_a0(4, 5).is_err());
        let mut last = 0.0;
        for r in 1..=8 {
            let a = default_a0(8, r).unwrap();
            let e = herm_eig(&a).unwrap();
            assert_eq!(e.values.iter().filter(|v| v.abs() > 1e-12).count(), r);
            assert!((e.values[0].abs().max(e.values[7].abs()) - 1.0).abs() < 1e-15);
            let f = a.frobenius_norm();
            assert!((1.0..=2.0).contains(&f) && f > last, "rank {r}");
            last = f;
        }
    }

    #[test]
    fn generic_ensemble_properties() {
        let a0 = default_a0(3, 3).unwrap();
        let e = gen_generic_ensemble(3, 10, &a0, Some(1), &mut seeded(1)).unwrap();
        let spec = herm_eig(&a0).unwrap().values;
        for s in &e.settings {
            let v = herm_eig(&s.observable).unwrap().values;
            for (x, y) in v.iter().zip(&spec) {
                assert!((x - y).abs() < 1e-9);
            }
            assert!((s.observable.trace() - a0.trace()).abs() < 1e-12);
            assert!((s.measurement_matrix().frobenius_norm() - a0.frobenius_norm()).abs() < 1e-12);
        }
        let again = gen_generic_ensemble(3, 10, &a0, Some(1), &mut seeded(1)).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn pauli_ensemble_properties() {
        let e = gen_pauli_ensemble(2, 20, None, &mut seeded(2)).unwrap();
        for s in &e.settings {
            let sq = s.observable.matrix().matmul(s.observable.matrix());
            assert!(sq.max_abs_diff(&ComplexMatrix::identity(4)) < 1e-15);
            // Product state: the reduced state of the first qubit is pure.
            let rho = HermitianOperator::projector(&s.psi);
            let red = crate::linalg::partial_trace_second(&rho, 2, 2).unwrap();
            assert!((red.inner(&red) - 1.0).abs() < 1e-12);
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut rng = seeded(3);
        for _ in 0..1000 {
            let psi = random_pauli_product_state(1, &mut rng);
            let key: Vec<i64> = psi.amplitudes().iter().flat_map(|z| [(z.re * 1e6) as i64, (z.im * 1e6) as i64]).collect();
            seen.insert(key);
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn circuit_ensemble_checks() {
        let a0 = default_a0(4, 4).unwrap();
        assert!(gen_circuit_ensemble(4, 3, 0, &a0, None, &mut seeded(4)).is_err());
        assert!(gen_circuit_ensemble(3, 3, 1, &default_a0(3, 3).unwrap(), None, &mut seeded(4)).is_err());
        let a = gen_circuit_ensemble(4, 3, 2, &a0, Some(4), &mut seeded(4)).unwrap();
        let b = gen_circuit_ensemble(4, 3, 2, &a0, Some(4), &mut seeded(4)).unwrap();
        assert_eq!(a, b);
        let u = random_circuit(3, 4, &mut seeded(5));
        assert!((&u.adjoint().matmul(&u) - &ComplexMatrix::identity(8)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn measure_standard_cases() {
        let n = 3;
        let mut rng = seeded(6);
        let a0 = default_a0(n, n).unwrap();
        let mut e = gen_generic_ensemble(n, 8, &a0, None, &mut rng).unwrap();
        for s in &mut e.settings {
            s.observable = HermitianOperator::projector(&s.psi);
        }
        let y = measure(identity_channel(n).as_map(), &e).unwrap();
        assert!(y.values.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let e = gen_generic_ensemble(n, 8, &default_a0(n, 2).unwrap(), None, &mut rng).unwrap();
        let y = measure(depolarizing_channel(n).as_map(), &e).unwrap();
        assert!(y.values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn measure_agrees_with_choi_form() {
        let n = 3;
        let mut rng = seeded(7);
        let e = gen_generic_ensemble(n, 100, &default_a0(n, n).unwrap(), None, &mut rng).unwrap();
        let t = HermPreservingMap::from_choi(random_hermitian(n * n, &mut rng)).unwrap();
        let y = measure(&t, &e).unwrap();
        let fast = e.measurement_matrix().evaluate(&t).unwrap();
        for (i, s) in e.settings.iter().enumerate() {
            let oracle = s.measurement_matrix().inner(t.choi());
            assert!((y.values[i] - oracle).abs() < 1e-10);
            assert!((fast[i] - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn measurement_matrix_adjoint() {
        let mut rng = seeded(8);
        let e = gen_generic_ensemble(2, 5, &default_a0(2, 2).unwrap(), None, &mut rng).unwrap();
        let a = e.measurement_matrix();
        let x: Vec<f64> = (0..a.cols()).map(|i| (i as f64 * 0.37).sin()).collect();
        let z: Vec<f64> = (0..a.m()).map(|i| (i as f64 * 1.3).cos()).collect();
        let lhs: f64 = a.apply(&x).iter().zip(&z).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.apply_adjoint(&z).iter().zip(&x).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn noise_has_exact_norm() {
        let y = MeasurementVector::noiseless(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(add_noise(&y, 0.0, &mut seeded(9)).unwrap(), y);
        let z = add_noise(&y, 0.25, &mut seeded(9)).unwrap();
        let norm: f64 = z.values.iter().zip(&y.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 0.25).abs() < 1e-14);
        assert_eq!(z, add_noise(&y, 0.25, &mut seeded(9)).unwrap());
        assert!(add_noise(&y, -1.0, &mut seeded(9)).is_err());
    }

    #[test]
    fn finite_shot_sampling() {
        let mut rng = seeded(10);
        let n = 3;
        let t = random_rank_r_channel(n, 2, &mut rng).unwrap();
        let e = gen_generic_ensemble(n, 1, &default_a0(n, n).unwrap(), None, &mut rng).unwrap();
        let s = &e.settings[0];
        let exact = measure(t.as_map(), &e).unwrap().values[0];
        let shots = 10_000;
        let est = sample_expectation(&t, s, shots, &mut rng).unwrap();
        let dist = outcome_distribution(t.as_map(), s).unwrap();
        let var: f64 = dist.iter().map(|(l, p)| p * (l - exact).powi(2)).sum();
        assert!((est - exact).abs() <= 5.0 * (var / shots as f64).sqrt());

        let id_obs = MeasurementSetting { psi: s.psi.clone(), observable: HermitianOperator::identity(n) };
        assert!((sample_expectation(&t, &id_obs, 7, &mut rng).unwrap() - 1.0).abs() < 1e-15);

        let x = unitary_channel(&ComplexMatrix::identity(2)).unwrap();
        let eig = MeasurementSetting { psi: pauli_eigenstate(1, false), observable: pauli_string(&[1]) };
        assert_eq!(sample_expectation(&x, &eig, 13, &mut rng).unwrap(), -1.0);
        assert!(sample_expectation(&x, &eig, 0, &mut rng).is_err());
    }

    #[test]
    fn design_deviations() {
        let six: Vec<HermitianOperator> = (1..=3)
            .flat_map(|a| [true, false].map(|s| HermitianOperator::projector(&pauli_eigenstate(a, s))))
            .collect();
        let haar1 = psi_moment_analytic(1, 2).unwrap();
        assert!(moment_deviation(&six, 1, &haar1).unwrap() < 1e-15);

        let mut fixed = FixedState(StateVector::basis(2, 0));
        assert!((design_deviation(&mut fixed, 1, 10, &mut seeded(11)).unwrap() - 1.0).abs() < 1e-12);

        let mut haar = HaarStates(2);
        assert!(design_deviation(&mut haar, 2, 20_000, &mut seeded(12)).unwrap() < 0.05);
        assert!(design_deviation(&mut haar, 3, 10, &mut seeded(12)).is_err());

        // On two qubits a single layer is already one Haar gate.
        let a = default_a0(8, 8).unwrap();
        let mut deep = CircuitConjugations { observable: a.clone(), depth: 12 };
        let mut shallow = CircuitConjugations { observable: a, depth: 1 };
        let d_deep = design_deviation(&mut deep, 2, 2000, &mut seeded(13)).unwrap();
        let d_shallow = design_deviation(&mut shallow, 2, 2000, &mut seeded(13)).unwrap();
        assert!(d_deep < d_shallow, "{d_deep} vs {d_shallow}");
    }

    #[test]
    fn file_round_trips() {
        let dir = std::env::temp_dir().join(format!("qpt-meas-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let e = gen_generic_ensemble(2, 3, &default_a0(2, 2).unwrap(), Some(5), &mut seeded(5)).unwrap();
        e.save(&dir.join("ens.json")).unwrap();
        let back = MeasurementEnsemble::load(&dir.join("ens.json")).unwrap();
        assert_eq!(back.len(), 3);
        assert!(back.settings[1].observable.matrix().max_abs_diff(e.settings[1].observable.matrix()) < 1e-15);

        let y = MeasurementVector { values: vec![0.5, -1.25e-3], noise_strength: 0.1 };
        y.save(&dir.join("y.csv"), Some(5)).unwrap();
        let (z, seed) = MeasurementVector::load(&dir.join("y.csv")).unwrap();
        assert_eq!((z, seed), (y, Some(5)));
        std::fs::remove_dir_all(&dir).ok();
    }
}
