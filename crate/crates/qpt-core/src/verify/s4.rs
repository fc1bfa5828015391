//! Isotypic projectors of `S₄` acting on `(ℂⁿ)^{⊗4}` by permuting factors.

use crate::error::{invalid, Result};
use crate::linalg::{permutations, permute_index, ComplexMatrix, HermitianOperator, C64};

/// Conjugacy classes of `S₄` by cycle type, in the column order
/// `1⁴, 2², 2¹, 4¹, 3¹`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CycleType {
    Identity,
    DoubleTransposition,
    Transposition,
    FourCycle,
    ThreeCycle,
}

impl CycleType {
    pub const ALL: [CycleType; 5] = [
        CycleType::Identity,
        CycleType::DoubleTransposition,
        CycleType::Transposition,
        CycleType::FourCycle,
        CycleType::ThreeCycle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Cycle lengths including fixed points.
    pub fn cycle_lengths(self) -> &'static [usize] {
        match self {
            CycleType::Identity => &[1, 1, 1, 1],
            CycleType::DoubleTransposition => &[2, 2],
            CycleType::Transposition => &[2, 1, 1],
            CycleType::FourCycle => &[4],
            CycleType::ThreeCycle => &[3, 1],
        }
    }

    /// Number of elements in the class.
    pub fn size(self) -> usize {
        CLASS_SIZES[self.index()]
    }
}

/// Class sizes in [`CycleType::ALL`] order.
pub const CLASS_SIZES: [usize; 5] = [1, 3, 6, 6, 8];

/// Irreducible characters `χ₁ … χ₅` (trivial, sign, `[2,2]`, standard, standard ⊗ sign)
/// on the classes in [`CycleType::ALL`] order.
pub const CHARACTERS: [[i32; 5]; 5] = [
    [1, 1, 1, 1, 1],
    [1, 1, -1, -1, 1],
    [2, 2, 0, 0, -1],
    [3, -1, 1, -1, 0],
    [3, -1, -1, 1, 0],
];

/// Cycle lengths of a permutation of `0..perm.len()`, descending.
pub fn cycle_lengths(perm: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; perm.len()];
    let mut out = Vec::new();
    for s in 0..perm.len() {
        if seen[s] {
            continue;
        }
        let mut len = 0;
        let mut i = s;
        while !seen[i] {
            seen[i] = true;
            i = perm[i];
            len += 1;
        }
        out.push(len);
    }
    out.sort_unstable_by(|a, b| b.cmp(a));
    out
}

/// Cycle type of a permutation of four elements.
pub fn cycle_type(perm: &[usize]) -> CycleType {
    assert_eq!(perm.len(), 4, "S4 permutations act on four elements");
    match cycle_lengths(perm).as_slice() {
        [1, 1, 1, 1] => CycleType::Identity,
        [2, 2] => CycleType::DoubleTransposition,
        [2, 1, 1] => CycleType::Transposition,
        [4] => CycleType::FourCycle,
        [3, 1] => CycleType::ThreeCycle,
        other => unreachable!("cycle type {other:?}"),
    }
}

/// Coefficient of `σ` in the central idempotent `pᵢ = χᵢ(1)/24 · Σ_σ χᵢ(σ) σ`.
pub fn projector_coefficient(i: usize, class: CycleType) -> f64 {
    let chi = CHARACTERS[i];
    chi[0] as f64 * chi[class.index()] as f64 / 24.0
}

/// Degrees `χᵢ(1)` of the irreducible representations.
pub fn degrees() -> [u64; 5] {
    CHARACTERS.map(|c| c[0] as u64)
}

/// Schur-functor dimensions `d₁(n) … d₅(n)`.
pub fn schur_dims(n: usize) -> [u64; 5] {
    let n = n as i64;
    let d = [
        n * (n + 1) * (n + 2) * (n + 3) / 24,
        (n - 3) * (n - 2) * (n - 1) * n / 24,
        (n - 1) * n * n * (n + 1) / 12,
        (n - 1) * n * (n + 1) * (n + 2) / 8,
        (n - 2) * (n - 1) * n * (n + 1) / 8,
    ];
    d.map(|v| v.max(0) as u64)
}

/// `Tr Pᵢ = Σ_σ coeff · n^{#cycles(σ)}`, evaluated from class data alone.
pub fn projector_trace(i: usize, n: usize) -> f64 {
    CycleType::ALL
        .iter()
        .map(|&c| c.size() as f64 * projector_coefficient(i, c) * (n as f64).powi(c.cycle_lengths().len() as i32))
        .sum()
}

/// The five projectors `Pᵢ = R(pᵢ)` on `(ℂⁿ)^{⊗4}` with their dimension data.
#[derive(Clone, Debug)]
pub struct S4ProjectorSet {
    pub n: usize,
    pub projectors: Vec<HermitianOperator>,
    /// Schur-functor dimensions `dᵢ(n)`.
    pub dims: [u64; 5],
    /// Irrep degrees `χᵢ(1)`; `Tr Pᵢ = χᵢ(1) · dᵢ(n)`.
    pub degrees: [u64; 5],
}

/// Largest supported local dimension (`n⁴ ≤ 256`).
pub const S4_MAX_N: usize = 4;

/// Builds the projectors for `2 ≤ n ≤ 4`.
pub fn s4_projectors(n: usize) -> Result<S4ProjectorSet> {
    if !(2..=S4_MAX_N).contains(&n) {
        return Err(invalid(format!("s4_projectors supports 2 <= n <= {S4_MAX_N}, got {n}")));
    }
    let dim = n.pow(4);
    let perms = permutations(4);
    let mut mats = vec![ComplexMatrix::zeros(dim, dim); 5];
    for p in &perms {
        let class = cycle_type(p);
        for col in 0..dim {
            let row = permute_index(col, p, n);
            for (i, m) in mats.iter_mut().enumerate() {
                m[(row, col)] += C64::new(projector_coefficient(i, class), 0.0);
            }
        }
    }
    let projectors = mats.iter().map(HermitianOperator::hermitian_part).collect();
    Ok(S4ProjectorSet { n, projectors, dims: schur_dims(n), degrees: degrees() })
}

impl S4ProjectorSet {
    /// `‖Σ Pᵢ − 𝟙‖_F`.
    pub fn completeness_defect(&self) -> f64 {
        let dim = self.n.pow(4);
        let mut s = ComplexMatrix::identity(dim).scale_real(-1.0);
        for p in &self.projectors {
            s.add_scaled(C64::new(1.0, 0.0), p.matrix());
        }
        s.frobenius_norm()
    }

    /// `max_{i≠j} ‖PᵢPⱼ‖_F` and `max_i ‖Pᵢ² − Pᵢ‖_F`.
    pub fn orthogonality_defects(&self) -> (f64, f64) {
        let mut cross: f64 = 0.0;
        let mut idem: f64 = 0.0;
        for (i, a) in self.projectors.iter().enumerate() {
            for (j, b) in self.projectors.iter().enumerate() {
                let prod = a.matrix().matmul(b.matrix());
                if i == j {
                    idem = idem.max((&prod - a.matrix()).frobenius_norm());
                } else {
                    cross = cross.max(prod.frobenius_norm());
                }
            }
        }
        (cross, idem)
    }

    /// `Tr Pᵢ`.
    pub fn traces(&self) -> [f64; 5] {
        let mut t = [0.0; 5];
        for (i, p) in self.projectors.iter().enumerate() {
            t[i] = p.trace();
        }
        t
    }
}
