//! Channels stored as Choi matrices, Kraus decompositions and standard channels.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    haar_unitary, herm_eig, partial_trace_first, partial_trace_second, ComplexMatrix, HermitianOperator, C64,
};

/// Tolerance for the CPT invariants of [`QuantumChannel`].
pub const CPT_TOL: f64 = 1e-9;

/// Default rank tolerance, relative to the largest Choi eigenvalue.
pub const RANK_TOL: f64 = 1e-9;

/// Hermiticity-preserving linear map on `𝓛(ℂⁿ)` given by its Choi matrix
/// (not necessarily positive or trace preserving).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapRepr", into = "MapRepr")]
pub struct HermPreservingMap {
    dim: usize,
    choi: HermitianOperator,
}

#[derive(Serialize, Deserialize)]
struct MapRepr {
    dim: usize,
    choi: HermitianOperator,
}

impl TryFrom<MapRepr> for HermPreservingMap {
    type Error = Error;
    fn try_from(r: MapRepr) -> Result<Self> {
        let m = HermPreservingMap::from_choi(r.choi)?;
        if m.dim != r.dim {
            return Err(Error::DimensionMismatch { expected: r.dim, found: m.dim });
        }
        Ok(m)
    }
}

impl From<HermPreservingMap> for MapRepr {
    fn from(m: HermPreservingMap) -> Self {
        MapRepr { dim: m.dim, choi: m.choi }
    }
}

fn isqrt_exact(d: usize) -> Option<usize> {
    let n = (d as f64).sqrt().round() as usize;
    (n * n == d).then_some(n)
}

impl HermPreservingMap {
    /// Wraps a Choi matrix of dimension `n²`.
    pub fn from_choi(choi: HermitianOperator) -> Result<Self> {
        let dim = isqrt_exact(choi.dim()).ok_or_else(|| invalid("Choi dimension is not a perfect square"))?;
        Ok(Self { dim, choi })
    }

    pub fn zero(n: usize) -> Self {
        Self { dim: n, choi: HermitianOperator::zeros(n * n) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn choi(&self) -> &HermitianOperator {
        &self.choi
    }

    pub fn into_choi(self) -> HermitianOperator {
        self.choi
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        Ok(())
    }

    /// `a·self + b·other` on Choi matrices.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self { dim: self.dim, choi: self.choi.combine(a, &other.choi, b) })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(1.0, other, -1.0)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { dim: self.dim, choi: self.choi.scale(c) }
    }

    /// `T(ρ) = Tr₂[(𝟙 ⊗ ρᵀ) J(T)]`.
    pub fn apply(&self, rho: &HermitianOperator) -> Result<HermitianOperator> {
        let n = self.dim;
        if rho.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: rho.dim() });
        }
        let j = self.choi.matrix();
        let r = rho.matrix();
        let out = ComplexMatrix::from_fn(n, n, |o, p| {
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..n {
                for a in 0..n {
                    acc += r[(c, a)] * j[(o * n + c, p * n + a)];
                }
            }
            acc
        });
        Ok(HermitianOperator::hermitian_part(&out))
    }

    /// `Tr₁ J(T)`, the operator dual to the trace functional `ρ ↦ Tr T(ρ)`.
    pub fn trace_dual(&self) -> HermitianOperator {
        partial_trace_first(&self.choi, self.dim, self.dim).expect("Choi dimension is n²")
    }

    /// `T(𝟙) = Tr₂ J(T)`.
    pub fn image_of_identity(&self) -> HermitianOperator {
        partial_trace_second(&self.choi, self.dim, self.dim).expect("Choi dimension is n²")
    }

    /// `‖Tr₁ J(T) − 𝟙‖_F`, zero for trace-preserving maps.
    pub fn trace_preservation_defect(&self) -> f64 {
        self.trace_dual().sub(&HermitianOperator::identity(self.dim)).frobenius_norm()
    }

    /// `‖Tr₁ J(T)‖_F`, zero for trace-annihilating maps.
    pub fn trace_annihilation_defect(&self) -> f64 {
        self.trace_dual().frobenius_norm()
    }

    /// Number of Choi eigenvalues above `tol · max|λ|`.
    pub fn kraus_rank(&self, tol: f64) -> Result<usize> {
        let e = herm_eig(&self.choi)?;
        let top = e.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if top == 0.0 {
            return Ok(0);
        }
        Ok(e.values.iter().filter(|&&v| v > tol * top).count())
    }
}

/// Completely positive trace-preserving map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapRepr", into = "MapRepr")]
pub struct QuantumChannel {
    map: HermPreservingMap,
}

impl TryFrom<MapRepr> for QuantumChannel {
    type Error = Error;
    fn try_from(r: MapRepr) -> Result<Self> {
        QuantumChannel::from_map(HermPreservingMap::try_from(r)?)
    }
}

impl From<QuantumChannel> for MapRepr {
    fn from(c: QuantumChannel) -> Self {
        c.map.into()
    }
}

impl QuantumChannel {
    /// Validates the CPT invariants within [`CPT_TOL`].
    pub fn from_map(map: HermPreservingMap) -> Result<Self> {
        let e = herm_eig(map.choi())?;
        let min = e.values.last().copied().unwrap_or(0.0);
        if min < -CPT_TOL {
            return Err(Error::NotCompletelyPositive { min_eigenvalue: min });
        }
        let defect = map.trace_preservation_defect();
        if defect > CPT_TOL {
            return Err(invalid(format!("map is not trace preserving (||Tr_1 J - 1||_F = {defect:e})")));
        }
        Ok(Self { map })
    }

    pub fn from_choi(choi: HermitianOperator) -> Result<Self> {
        Self::from_map(HermPreservingMap::from_choi(choi)?)
    }

    pub(crate) fn from_map_unchecked(map: HermPreservingMap) -> Self {
        Self { map }
    }

    pub fn dim(&self) -> usize {
        self.map.dim
    }

    pub fn choi(&self) -> &HermitianOperator {
        &self.map.choi
    }

    pub fn as_map(&self) -> &HermPreservingMap {
        &self.map
    }

    pub fn into_map(self) -> HermPreservingMap {
        self.map
    }

    pub fn apply(&self, rho: &HermitianOperator) -> Result<HermitianOperator> {
        self.map.apply(rho)
    }

    pub fn kraus_rank(&self, tol: f64) -> Result<usize> {
        self.map.kraus_rank(tol)
    }
}

/// Kraus operators `{Kₖ}` with `T(ρ) = Σ Kₖ ρ Kₖ†`.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausSet {
    dim: usize,
    operators: Vec<ComplexMatrix>,
}

impl KrausSet {
    pub fn new(dim: usize, operators: Vec<ComplexMatrix>) -> Result<Self> {
        if let Some(k) = operators.iter().find(|k| k.rows() != dim || k.cols() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: k.rows().max(k.cols()) });
        }
        Ok(Self { dim, operators })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }

    /// `‖Σ K†K − 𝟙‖_F`.
    pub fn completeness_defect(&self) -> f64 {
        let mut s = ComplexMatrix::identity(self.dim).scale_real(-1.0);
        for k in &self.operators {
            s.add_scaled(C64::new(1.0, 0.0), &k.adjoint().matmul(k));
        }
        s.frobenius_norm()
    }

    /// Choi matrix `Σₖ |vec Kₖ⟩⟨vec Kₖ|` with row-major vectorization.
    pub fn choi(&self) -> HermitianOperator {
        let d = self.dim * self.dim;
        let mut j = ComplexMatrix::zeros(d, d);
        for k in &self.operators {
            let v = k.as_slice();
            for a in 0..d {
                if v[a] == C64::new(0.0, 0.0) {
                    continue;
                }
                for b in 0..d {
                    j[(a, b)] += v[a] * v[b].conj();
                }
            }
        }
        HermitianOperator::hermitian_part(&j)
    }
}

/// Channel with the given Kraus operators; fails unless `Σ K†K = 𝟙` within [`CPT_TOL`].
pub fn choi_from_kraus(k: &KrausSet) -> Result<QuantumChannel> {
    let defect = k.completeness_defect();
    if defect > CPT_TOL {
        return Err(invalid(format!("Kraus operators are not complete (defect {defect:e})")));
    }
    Ok(QuantumChannel::from_map_unchecked(HermPreservingMap { dim: k.dim, choi: k.choi() }))
}

/// Kraus operators from the Choi eigendecomposition, discarding eigenvalues
/// below `RANK_TOL · λ_max`.
pub fn kraus_from_choi(t: &HermPreservingMap) -> Result<KrausSet> {
    let n = t.dim;
    let e = herm_eig(t.choi())?;
    let top = e.values.first().copied().unwrap_or(0.0).max(0.0);
    let min = e.values.last().copied().unwrap_or(0.0);
    if min < -CPT_TOL * top.max(1.0) {
        return Err(Error::NotCompletelyPositive { min_eigenvalue: min });
    }
    let mut operators = Vec::new();
    for (j, &lam) in e.values.iter().enumerate() {
        if lam <= RANK_TOL * top {
            break;
        }
        let s = lam.sqrt();
        let v = e.vector(j);
        operators.push(ComplexMatrix::from_fn(n, n, |o, i| v[o * n + i] * s));
    }
    KrausSet::new(n, operators)
}

/// Unitary channel `ρ ↦ UρU†`.
pub fn unitary_channel(u: &ComplexMatrix) -> Result<QuantumChannel> {
    if !u.is_square() {
        return Err(Error::NotSquare { rows: u.rows(), cols: u.cols() });
    }
    choi_from_kraus(&KrausSet::new(u.rows(), vec![u.clone()])?)
}

pub fn identity_channel(n: usize) -> QuantumChannel {
    unitary_channel(&ComplexMatrix::identity(n)).expect("identity is unitary")
}

/// Completely depolarizing channel `ρ ↦ Tr(ρ) 𝟙/n`, with `J = 𝟙_{n²}/n`.
pub fn depolarizing_channel(n: usize) -> QuantumChannel {
    let choi = HermitianOperator::identity(n * n).scale(1.0 / n as f64);
    QuantumChannel::from_map_unchecked(HermPreservingMap { dim: n, choi })
}

/// Three-qubit Toffoli gate as a unitary channel (first two qubits control).
pub fn toffoli_channel() -> QuantumChannel {
    let mut u = ComplexMatrix::identity(8);
    u[(6, 6)] = C64::new(0.0, 0.0);
    u[(7, 7)] = C64::new(0.0, 0.0);
    u[(6, 7)] = C64::new(1.0, 0.0);
    u[(7, 6)] = C64::new(1.0, 0.0);
    unitary_channel(&u).expect("Toffoli is unitary")
}

/// `(1 − λ) T₁ + λ T₂` on Choi matrices.
pub fn mix(t1: &QuantumChannel, t2: &QuantumChannel, lambda: f64) -> Result<QuantumChannel> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("mixing weight {lambda} outside [0, 1]")));
    }
    Ok(QuantumChannel::from_map_unchecked(t1.map.combine(1.0 - lambda, &t2.map, lambda)?))
}

/// Random channel of Kraus rank `r`: the first `n` columns of a Haar unitary on
/// `ℂⁿ ⊗ ℂʳ` form a Stinespring isometry, and the environment is traced out.
pub fn random_rank_r_channel<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> Result<QuantumChannel> {
    if n == 0 || r == 0 || r > n * n {
        return Err(invalid(format!("Kraus rank {r} outside [1, n^2] for n = {n}")));
    }
    let w = haar_unitary(n * r, rng);
    let operators = (0..r)
        .map(|e| ComplexMatrix::from_fn(n, n, |s, i| w[(s * r + e, i)]))
        .collect();
    let k = KrausSet::new(n, operators)?;
    Ok(QuantumChannel::from_map_unchecked(HermPreservingMap { dim: n, choi: k.choi() }))
}

/// Splits `T` into the `r` largest-magnitude Choi eigen-components `T_r` and the
/// remainder `T_c = T − T_r`. Ties are broken by eigenvector index.
pub fn truncate_rank(t: &HermPreservingMap, r: usize) -> Result<(HermPreservingMap, HermPreservingMap)> {
    let e = herm_eig(t.choi())?;
    let mut order: Vec<usize> = (0..e.values.len()).collect();
    order.sort_by(|&a, &b| e.values[b].abs().total_cmp(&e.values[a].abs()).then(a.cmp(&b)));
    let d = t.choi().dim();
    let mut jr = ComplexMatrix::zeros(d, d);
    for &k in order.iter().take(r) {
        let v = e.vector(k);
        let lam = e.values[k];
        for a in 0..d {
            for b in 0..d {
                jr[(a, b)] += v[a] * v[b].conj() * lam;
            }
        }
    }
    let tr = HermPreservingMap { dim: t.dim, choi: HermitianOperator::hermitian_part(&jr) };
    let tc = HermPreservingMap { dim: t.dim, choi: t.choi().sub(tr.choi()) };
    Ok((tr, tc))
}

/// Real dimension of the set of trace-preserving Hermiticity-preserving maps on
/// `ℂⁿ`, `n⁴ − n²`.
pub fn cpt_parameter_count(n: usize) -> usize {
    n.pow(4) - n * n
}

/// Provenance stored alongside a channel on disk.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelMeta {
    pub kind: String,
    pub seed: Option<u64>,
    pub rank: Option<usize>,
}

/// On-disk channel record `{dim, choi, meta}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelFile {
    pub dim: usize,
    pub choi: HermitianOperator,
    pub meta: ChannelMeta,
}

impl ChannelFile {
    pub fn new(map: &HermPreservingMap, meta: ChannelMeta) -> Self {
        Self { dim: map.dim(), choi: map.choi().clone(), meta }
    }

    pub fn to_map(&self) -> Result<HermPreservingMap> {
        HermPreservingMap::try_from(MapRepr { dim: self.dim, choi: self.choi.clone() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
