//! First-order solver for conic programs
//! `min cᵀx  s.t.  Lx = b,  x ∈ 𝒦`,
//! where `𝒦` is a product of Hermitian PSD blocks (in `svec` coordinates),
//! Euclidean balls, nonnegative orthants and second-order cones, with the
//! remaining coordinates free.
//!
//! The iteration is over-relaxed ADMM on the splitting `x ∈ {Lx = b}`,
//! `z ∈ 𝒦`, `x = z`, with a cached pseudo-inverse of `LLᵀ` for the affine
//! projection and residual-balancing updates of the penalty `ρ`.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{eigh, svec_pack, svec_unpack, HermitianOperator, C64};

/// Relative eigenvalue cutoff for the pseudo-inverse of `LLᵀ`.
pub const PINV_TOL: f64 = 1e-12;

/// Iterations between penalty updates and convergence bookkeeping.
const ADAPT_INTERVAL: usize = 25;

/// Residual ratio that triggers a penalty update.
const ADAPT_RATIO: f64 = 10.0;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

/// Dense real operator shared between constraint blocks, with a lazily
/// computed Gram matrix `AAᵀ`.
#[derive(Debug)]
pub struct DenseOperator {
    mat: Mat<f64>,
    gram: OnceLock<Mat<f64>>,
}

impl DenseOperator {
    pub fn new(mat: Mat<f64>) -> Self {
        Self { mat, gram: OnceLock::new() }
    }

    pub fn mat(&self) -> MatRef<'_, f64> {
        self.mat.as_ref()
    }

    pub fn rows(&self) -> usize {
        self.mat.nrows()
    }

    pub fn cols(&self) -> usize {
        self.mat.ncols()
    }

    /// `AAᵀ`, computed on first use.
    pub fn gram(&self) -> &Mat<f64> {
        self.gram.get_or_init(|| {
            let mut g = Mat::<f64>::zeros(self.rows(), self.rows());
            matmul(g.as_mut(), Accum::Replace, self.mat.as_ref(), self.mat.transpose(), 1.0, Par::Seq);
            g
        })
    }
}

/// One block of the constraint operator `L`.
#[derive(Clone, Debug)]
pub enum LinearBlock {
    /// `scale · A` for a shared dense `A`.
    Dense { op: Arc<DenseOperator>, scale: f64 },
    /// Triplets `(row, col, value)` local to the block.
    Sparse { rows: usize, cols: usize, entries: Vec<(usize, usize, f64)> },
}

impl LinearBlock {
    pub fn rows(&self) -> usize {
        match self {
            LinearBlock::Dense { op, .. } => op.rows(),
            LinearBlock::Sparse { rows, .. } => *rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            LinearBlock::Dense { op, .. } => op.cols(),
            LinearBlock::Sparse { cols, .. } => *cols,
        }
    }

    /// `scale · 𝟙` of the given size.
    pub fn identity(size: usize, scale: f64) -> Self {
        LinearBlock::Sparse { rows: size, cols: size, entries: (0..size).map(|i| (i, i, scale)).collect() }
    }
}

/// A block placed at `(row, col)` in `L`.
#[derive(Clone, Debug)]
pub struct PlacedBlock {
    pub row: usize,
    pub col: usize,
    pub block: LinearBlock,
}

/// Cone constraint on a slice of the variable.
#[derive(Clone, Debug, PartialEq)]
pub enum Cone {
    /// `svec` of a `dim × dim` Hermitian PSD matrix at `offset`, length `dim²`.
    Psd { offset: usize, dim: usize },
    /// `‖x − center‖₂ ≤ radius` on `x[offset..offset + center.len()]`.
    L2Ball { offset: usize, center: Vec<f64>, radius: f64 },
    /// `x ≥ 0` elementwise.
    Nonnegative { offset: usize, len: usize },
    /// `x[offset] ≥ ‖x[offset + 1..offset + len]‖₂`.
    SecondOrder { offset: usize, len: usize },
}

impl Cone {
    pub fn offset(&self) -> usize {
        match self {
            Cone::Psd { offset, .. }
            | Cone::L2Ball { offset, .. }
            | Cone::Nonnegative { offset, .. }
            | Cone::SecondOrder { offset, .. } => *offset,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Cone::Psd { dim, .. } => dim * dim,
            Cone::L2Ball { center, .. } => center.len(),
            Cone::Nonnegative { len, .. } | Cone::SecondOrder { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Euclidean projection of the cone's slice of `x`, in place.
    pub fn project(&self, x: &mut [f64]) -> Result<()> {
        let s = &mut x[self.offset()..self.offset() + self.len()];
        match self {
            Cone::Psd { dim, .. } => project_psd_svec(*dim, s)?,
            Cone::L2Ball { center, radius, .. } => {
                let p = project_l2_ball(s, center, *radius);
                s.copy_from_slice(&p);
            }
            Cone::Nonnegative { .. } => s.iter_mut().for_each(|v| *v = v.max(0.0)),
            Cone::SecondOrder { .. } => project_second_order(s),
        }
        Ok(())
    }
}

/// `min cᵀx s.t. Lx = b, x ∈ 𝒦` over `x ∈ ℝ^dim`.
#[derive(Clone, Debug)]
pub struct ConicProblem {
    dim: usize,
    objective: Vec<f64>,
    rhs: Vec<f64>,
    blocks: Vec<PlacedBlock>,
    cones: Vec<Cone>,
}

impl ConicProblem {
    pub fn new(dim: usize) -> Self {
        Self { dim, objective: vec![0.0; dim], rhs: Vec::new(), blocks: Vec::new(), cones: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn objective_mut(&mut self) -> &mut [f64] {
        &mut self.objective
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    pub fn blocks(&self) -> &[PlacedBlock] {
        &self.blocks
    }

    /// Appends equality rows with the given right-hand side; returns the first row index.
    pub fn add_rows(&mut self, rhs: &[f64]) -> usize {
        let start = self.rhs.len();
        self.rhs.extend_from_slice(rhs);
        start
    }

    pub fn add_block(&mut self, row: usize, col: usize, block: LinearBlock) {
        self.blocks.push(PlacedBlock { row, col, block });
    }

    pub fn add_cone(&mut self, cone: Cone) {
        self.cones.push(cone);
    }

    /// Checks ranges, disjointness of cone slices, radii, and that blocks
    /// sharing columns cover identical column ranges.
    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.dim || self.objective.iter().any(|v| !v.is_finite()) {
            return Err(invalid("objective must be finite with one entry per variable"));
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut owner = vec![false; self.dim];
        for cone in &self.cones {
            let (o, l) = (cone.offset(), cone.len());
            if o + l > self.dim {
                return Err(invalid(format!("cone slice {o}..{} exceeds dimension {}", o + l, self.dim)));
            }
            if owner[o..o + l].iter().any(|&b| b) {
                return Err(invalid("cone slices overlap"));
            }
            owner[o..o + l].iter_mut().for_each(|b| *b = true);
            match cone {
                Cone::L2Ball { radius, center, .. } => {
                    if !(*radius >= 0.0) || center.iter().any(|v| !v.is_finite()) {
                        return Err(invalid("ball radius must be non-negative and the center finite"));
                    }
                }
                Cone::SecondOrder { len, .. } if *len == 0 => return Err(invalid("empty second-order cone")),
                _ => {}
            }
        }
        for b in &self.blocks {
            if b.row + b.block.rows() > self.rows() || b.col + b.block.cols() > self.dim {
                return Err(invalid("constraint block exceeds problem bounds"));
            }
            if let LinearBlock::Sparse { rows, cols, entries } = &b.block {
                if entries.iter().any(|&(r, c, v)| r >= *rows || c >= *cols || !v.is_finite()) {
                    return Err(invalid("sparse entry outside its block"));
                }
            }
            if let LinearBlock::Dense { scale, .. } = &b.block {
                if !scale.is_finite() {
                    return Err(Error::NonFinite);
                }
            }
        }
        for (i, a) in self.blocks.iter().enumerate() {
            for b in &self.blocks[i + 1..] {
                let (a0, a1) = (a.col, a.col + a.block.cols());
                let (b0, b1) = (b.col, b.col + b.block.cols());
                if a0 < b1 && b0 < a1 && (a0, a1) != (b0, b1) {
                    return Err(invalid("blocks sharing columns must cover identical column ranges"));
                }
            }
        }
        Ok(())
    }

    /// `Lx`.
    pub fn apply_constraints(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        for b in &self.blocks {
            let seg = &x[b.col..b.col + b.block.cols()];
            let dst = &mut out[b.row..b.row + b.block.rows()];
            match &b.block {
                LinearBlock::Dense { op, scale } => dense_apply(op.mat(), seg, *scale, dst),
                LinearBlock::Sparse { entries, .. } => {
                    for &(r, c, v) in entries {
                        dst[r] += v * seg[c];
                    }
                }
            }
        }
        out
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `dst += scale · A x`.
fn dense_apply(a: MatRef<'_, f64>, x: &[f64], scale: f64, dst: &mut [f64]) {
    let rhs = MatRef::from_column_major_slice(x, x.len(), 1);
    let mut out = Mat::<f64>::zeros(a.nrows(), 1);
    matmul(out.as_mut(), Accum::Replace, a, rhs, scale, Par::Seq);
    for (d, i) in dst.iter_mut().zip(0..a.nrows()) {
        *d += out[(i, 0)];
    }
}

/// `dst += scale · Aᵀ z`.
fn dense_apply_t(a: MatRef<'_, f64>, z: &[f64], scale: f64, dst: &mut [f64]) {
    let rhs = MatRef::from_column_major_slice(z, z.len(), 1);
    let mut out = Mat::<f64>::zeros(a.ncols(), 1);
    matmul(out.as_mut(), Accum::Replace, a.transpose(), rhs, scale, Par::Seq);
    for (d, i) in dst.iter_mut().zip(0..a.ncols()) {
        *d += out[(i, 0)];
    }
}

/// Dense blocks with the same operator and row offset, applied with one product.
#[derive(Debug)]
struct DenseGroup {
    row: usize,
    op: Arc<DenseOperator>,
    members: Vec<(usize, f64)>,
}

/// Euclidean projector onto `{x : Lx = b}` with a cached pseudo-inverse of `LLᵀ`.
#[derive(Debug)]
pub struct AffineProjector {
    dim: usize,
    rhs: Vec<f64>,
    groups: Vec<DenseGroup>,
    sparse: Vec<PlacedBlock>,
    gram_pinv: Mat<f64>,
    rank: usize,
}

impl AffineProjector {
    pub fn new(problem: &ConicProblem) -> Result<Self> {
        problem.validate()?;
        let mut groups: Vec<DenseGroup> = Vec::new();
        let mut sparse = Vec::new();
        for b in &problem.blocks {
            match &b.block {
                LinearBlock::Dense { op, scale } => {
                    match groups.iter_mut().find(|g| g.row == b.row && Arc::ptr_eq(&g.op, op)) {
                        Some(g) => g.members.push((b.col, *scale)),
                        None => groups.push(DenseGroup { row: b.row, op: op.clone(), members: vec![(b.col, *scale)] }),
                    }
                }
                LinearBlock::Sparse { .. } => sparse.push(b.clone()),
            }
        }
        let gram = build_gram(problem);
        let (gram_pinv, rank) = pseudo_inverse(&gram)?;
        Ok(Self { dim: problem.dim, rhs: problem.rhs.clone(), groups, sparse, gram_pinv, rank })
    }

    /// Numerical rank of `L`.
    pub fn rank(&self) -> usize {
        self.rank
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rhs.len()];
        for g in &self.groups {
            let cols = g.op.cols();
            let mut combined = vec![0.0; cols];
            for &(col, s) in &g.members {
                for (c, v) in combined.iter_mut().zip(&x[col..col + cols]) {
                    *c += s * v;
                }
            }
            dense_apply(g.op.mat(), &combined, 1.0, &mut out[g.row..g.row + g.op.rows()]);
        }
        for b in &self.sparse {
            if let LinearBlock::Sparse { entries, .. } = &b.block {
                for &(r, c, v) in entries {
                    out[b.row + r] += v * x[b.col + c];
                }
            }
        }
        out
    }

    fn apply_t(&self, z: &[f64], dst: &mut [f64]) {
        for g in &self.groups {
            let mut back = vec![0.0; g.op.cols()];
            dense_apply_t(g.op.mat(), &z[g.row..g.row + g.op.rows()], 1.0, &mut back);
            for &(col, s) in &g.members {
                for (d, v) in dst[col..col + back.len()].iter_mut().zip(&back) {
                    *d += s * v;
                }
            }
        }
        for b in &self.sparse {
            if let LinearBlock::Sparse { entries, .. } = &b.block {
                for &(r, c, v) in entries {
                    dst[b.col + c] += v * z[b.row + r];
                }
            }
        }
    }

    /// `Lx − b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.apply(x);
        for (ri, bi) in r.iter_mut().zip(&self.rhs) {
            *ri -= bi;
        }
        r
    }

    /// In-place projection `x ← x − Lᵀ(LLᵀ)⁺(Lx − b)`.
    pub fn project_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        let r = self.residual(x);
        let m = r.len();
        if m == 0 {
            return;
        }
        let rhs = MatRef::from_column_major_slice(&r, m, 1);
        let mut y = Mat::<f64>::zeros(m, 1);
        matmul(y.as_mut(), Accum::Replace, self.gram_pinv.as_ref(), rhs, -1.0, Par::Seq);
        let y: Vec<f64> = (0..m).map(|i| y[(i, 0)]).collect();
        self.apply_t(&y, x);
    }

    /// Projection with one step of iterative refinement.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project_in_place(&mut out);
        self.project_in_place(&mut out);
        out
    }
}

/// `LLᵀ` assembled block by block.
fn build_gram(problem: &ConicProblem) -> Mat<f64> {
    let m = problem.rows();
    let mut g = Mat::<f64>::zeros(m, m);
    let mut cross_cache: HashMap<(usize, usize), Mat<f64>> = HashMap::new();
    for a in &problem.blocks {
        for b in &problem.blocks {
            if a.col != b.col || a.block.cols() != b.block.cols() {
                continue;
            }
            let (ra, rb) = (a.row, b.row);
            match (&a.block, &b.block) {
                (LinearBlock::Dense { op: oa, scale: sa }, LinearBlock::Dense { op: ob, scale: sb }) => {
                    let s = sa * sb;
                    let prod: &Mat<f64> = if Arc::ptr_eq(oa, ob) {
                        oa.gram()
                    } else {
                        let key = (Arc::as_ptr(oa) as usize, Arc::as_ptr(ob) as usize);
                        cross_cache.entry(key).or_insert_with(|| {
                            let mut p = Mat::<f64>::zeros(oa.rows(), ob.rows());
                            matmul(p.as_mut(), Accum::Replace, oa.mat(), ob.mat().transpose(), 1.0, Par::Seq);
                            p
                        })
                    };
                    for i in 0..prod.nrows() {
                        for j in 0..prod.ncols() {
                            g[(ra + i, rb + j)] += s * prod[(i, j)];
                        }
                    }
                }
                (LinearBlock::Dense { op, scale }, LinearBlock::Sparse { entries, .. }) => {
                    let mat = op.mat();
                    for &(r, c, v) in entries {
                        for i in 0..mat.nrows() {
                            g[(ra + i, rb + r)] += scale * v * mat[(i, c)];
                        }
                    }
                }
                (LinearBlock::Sparse { entries, .. }, LinearBlock::Dense { op, scale }) => {
                    let mat = op.mat();
                    for &(r, c, v) in entries {
                        for j in 0..mat.nrows() {
                            g[(ra + r, rb + j)] += scale * v * mat[(j, c)];
                        }
                    }
                }
                (LinearBlock::Sparse { entries: ea, .. }, LinearBlock::Sparse { entries: eb, .. }) => {
                    let mut by_col: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
                    for &(r, c, v) in eb {
                        by_col.entry(c).or_default().push((r, v));
                    }
                    for &(r, c, v) in ea {
                        if let Some(list) = by_col.get(&c) {
                            for &(r2, v2) in list {
                                g[(ra + r, rb + r2)] += v * v2;
                            }
                        }
                    }
                }
            }
        }
    }
    g
}

/// Pseudo-inverse of a symmetric PSD matrix and its numerical rank.
fn pseudo_inverse(g: &Mat<f64>) -> Result<(Mat<f64>, usize)> {
    let m = g.nrows();
    if m == 0 {
        return Ok((Mat::zeros(0, 0), 0));
    }
    let evd = g.self_adjoint_eigen(Side::Lower).map_err(|_| Error::EigenNoConvergence { dim: m })?;
    let s = evd.S();
    let u = evd.U();
    let lmax = (0..m).map(|i| s[i].abs()).fold(0.0, f64::max);
    let cutoff = PINV_TOL * lmax.max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..m).filter(|&i| s[i] > cutoff).collect();
    let mut w = Mat::<f64>::zeros(m, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        let scale = 1.0 / s[i].sqrt();
        for r in 0..m {
            w[(r, k)] = u[(r, i)] * scale;
        }
    }
    let mut pinv = Mat::<f64>::zeros(m, m);
    matmul(pinv.as_mut(), Accum::Replace, w.as_ref(), w.transpose(), 1.0, Par::Seq);
    Ok((pinv, keep.len()))
}

/// Euclidean projection onto `{x : Lx = b}` using a prepared projector.
pub fn project_affine(x: &[f64], projector: &AffineProjector) -> Vec<f64> {
    projector.project(x)
}

/// Euclidean projection onto the ball `‖v − center‖₂ ≤ radius`.
pub fn project_l2_ball(v: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let d: Vec<f64> = v.iter().zip(center).map(|(a, b)| a - b).collect();
    let dn = norm(&d);
    if dn <= radius {
        return v.to_vec();
    }
    let s = radius / dn;
    center.iter().zip(&d).map(|(c, x)| c + s * x).collect()
}

/// Projection onto `{(t, x) : t ≥ ‖x‖₂}` in place.
fn project_second_order(s: &mut [f64]) {
    let t = s[0];
    let xn = norm(&s[1..]);
    if xn <= t {
        return;
    }
    if xn <= -t {
        s.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let a = 0.5 * (t + xn);
    s[0] = a;
    let f = a / xn;
    s[1..].iter_mut().for_each(|v| *v *= f);
}

/// Frobenius-nearest PSD matrix, in `svec` coordinates, in place.
pub(crate) fn project_psd_svec(d: usize, v: &mut [f64]) -> Result<()> {
    let mut h = Mat::<C64>::zeros(d, d);
    svec_unpack(d, v, |i, j, z| h[(i, j)] = z);
    let (vals, vecs) = eigh(h.as_ref())?;
    let pos = vals.iter().filter(|&&l| l > 0.0).count();
    if pos == d {
        return Ok(());
    }
    if pos == 0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return Ok(());
    }
    // Reassemble from the smaller eigenvalue set.
    let use_pos = pos <= d - pos;
    let idx: Vec<usize> = (0..d).filter(|&k| (vals[k] > 0.0) == use_pos).collect();
    let mut w = Mat::<C64>::zeros(d, idx.len());
    for (c, &k) in idx.iter().enumerate() {
        let s = vals[k].abs().sqrt();
        for r in 0..d {
            w[(r, c)] = vecs[(r, k)] * s;
        }
    }
    let mut ww = Mat::<C64>::zeros(d, d);
    matmul(ww.as_mut(), Accum::Replace, w.as_ref(), w.adjoint(), C64::new(1.0, 0.0), Par::Seq);
    if use_pos {
        svec_pack(d, |i, j| ww[(i, j)], v);
    } else {
        svec_pack(d, |i, j| h[(i, j)] + ww[(i, j)], v);
    }
    Ok(())
}

/// Frobenius-nearest PSD operator: negative eigenvalues clipped to zero.
pub fn project_psd(h: &HermitianOperator) -> Result<HermitianOperator> {
    let d = h.dim();
    let mut v = h.svec();
    project_psd_svec(d, &mut v)?;
    HermitianOperator::from_svec(d, &v)
}

/// Solver parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Relative primal tolerance.
    pub eps_primal: f64,
    /// Relative dual tolerance.
    pub eps_dual: f64,
    /// Initial penalty.
    pub rho: f64,
    /// Adapt `ρ` by residual balancing.
    pub adaptive_rho: bool,
    /// Over-relaxation parameter in `(1, 2)`.
    pub alpha: f64,
    /// Record per-iteration residuals.
    pub trace: bool,
    /// Relative iterate-change tolerance of the CPT-fit gradient method.
    #[serde(default = "default_cpt_fit_tol")]
    pub cpt_fit_tol: f64,
}

fn default_cpt_fit_tol() -> f64 {
    1e-10
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iter: 50_000, eps_primal: 1e-8, eps_dual: 1e-8, rho: 1.0, adaptive_rho: true, alpha: 1.6, trace: false, cpt_fit_tol: default_cpt_fit_tol() }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.max_iter > 0
            && self.eps_primal > 0.0
            && self.eps_dual > 0.0
            && self.rho > 0.0
            && self.cpt_fit_tol > 0.0;
        if !positive || !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(invalid("solver parameters must be positive with alpha in (1, 2)"));
        }
        Ok(())
    }
}

/// Termination status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::MaxIter => "max_iter",
            SolverStatus::Infeasible => "infeasible",
        })
    }
}

/// One row of the iteration trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub objective: f64,
}

/// Solver output. `solution` lies in the cone; `affine_solution` satisfies
/// the equality constraints.
#[derive(Clone, Debug)]
pub struct SolverResult {
    pub solution: Vec<f64>,
    pub affine_solution: Vec<f64>,
    pub objective: f64,
    pub status: SolverStatus,
    /// `‖x − z‖₂`.
    pub primal_residual: f64,
    /// `ρ‖z − z_prev‖₂`.
    pub dual_residual: f64,
    /// `‖Lz − b‖₂`.
    pub constraint_residual: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub trace: Option<Vec<TraceRow>>,
}

impl SolverResult {
    /// Writes the iteration trace as CSV `iter,primal_res,dual_res,objective`.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let rows = self.trace.as_ref().ok_or_else(|| invalid("no trace was recorded"))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iter,primal_res,dual_res,objective")?;
        for r in rows {
            writeln!(f, "{},{:e},{:e},{:e}", r.iter, r.primal_res, r.dual_res, r.objective)?;
        }
        Ok(())
    }
}

/// Solves the problem from a zero start.
pub fn solve(problem: &ConicProblem, config: &SolverConfig) -> Result<SolverResult> {
    let projector = AffineProjector::new(problem)?;
    solve_with(problem, &projector, config)
}

/// Solves with a prepared affine projector.
pub fn solve_with(problem: &ConicProblem, projector: &AffineProjector, config: &SolverConfig) -> Result<SolverResult> {
    config.validate()?;
    let start = Instant::now();
    let n = problem.dim;
    let c = &problem.objective;
    let c_norm = norm(c);

    // An inconsistent affine system is infeasible regardless of the cone.
    let origin = projector.project(&vec![0.0; n]);
    let b_norm = norm(&problem.rhs);
    let affine_gap = norm(&projector.residual(&origin));
    if affine_gap > 1e-6 * (1.0 + b_norm) {
        return Ok(SolverResult {
            objective: problem.objective_value(&origin),
            solution: origin.clone(),
            affine_solution: origin,
            status: SolverStatus::Infeasible,
            primal_residual: affine_gap,
            dual_residual: 0.0,
            constraint_residual: affine_gap,
            iterations: 0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            trace: None,
        });
    }

    let mut rho = config.rho;
    let alpha = config.alpha;
    let mut z = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut z_prev = vec![0.0; n];
    let mut trace = config.trace.then(Vec::new);
    let mut status = SolverStatus::MaxIter;
    let mut rp = f64::INFINITY;
    let mut rd = f64::INFINITY;
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, f64, f64)> = None;

    for k in 1..=config.max_iter {
        iterations = k;
        for i in 0..n {
            x[i] = z[i] - u[i] - c[i] / rho;
        }
        projector.project_in_place(&mut x);
        z_prev.copy_from_slice(&z);
        for i in 0..n {
            let xh = alpha * x[i] + (1.0 - alpha) * z_prev[i];
            z[i] = xh + u[i];
        }
        for cone in &problem.cones {
            cone.project(&mut z)?;
        }
        for i in 0..n {
            let xh = alpha * x[i] + (1.0 - alpha) * z_prev[i];
            u[i] += xh - z[i];
        }

        let check = k % ADAPT_INTERVAL == 0 || k == config.max_iter || trace.is_some();
        if !check {
            continue;
        }
        rp = x.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        rd = rho * z.iter().zip(&z_prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let p_scale = 1f64.max(norm(&x)).max(norm(&z));
        let d_scale = 1f64.max(rho * norm(&u)).max(c_norm);
        let rp_rel = rp / p_scale;
        let rd_rel = rd / d_scale;
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow { iter: k, primal_res: rp, dual_res: rd, objective: problem.objective_value(&z) });
        }
        let merit = rp_rel.max(rd_rel);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, x.clone(), z.clone(), rp, rd));
        }
        if rp_rel <= config.eps_primal && rd_rel <= config.eps_dual {
            status = SolverStatus::Optimal;
            break;
        }
        if config.adaptive_rho && k % ADAPT_INTERVAL == 0 {
            let scale = if rp_rel > ADAPT_RATIO * rd_rel {
                2.0
            } else if rd_rel > ADAPT_RATIO * rp_rel {
                0.5
            } else {
                1.0
            };
            let new_rho = (rho * scale).clamp(RHO_MIN, RHO_MAX);
            if new_rho != rho {
                let f = rho / new_rho;
                u.iter_mut().for_each(|v| *v *= f);
                rho = new_rho;
            }
        }
    }

    if status == SolverStatus::MaxIter {
        if let Some((_, bx, bz, brp, brd)) = best.take() {
            x = bx;
            z = bz;
            rp = brp;
            rd = brd;
        }
        // A persistent gap between the affine set and the cone with a
        // stalled dual sequence indicates an empty intersection.
        let p_scale = 1f64.max(norm(&x)).max(norm(&z));
        let d_scale = 1f64.max(c_norm);
        if rp / p_scale > 1e-3 && rd / d_scale <= 1e-6 {
            status = SolverStatus::Infeasible;
        }
    }
    let constraint_residual = norm(&projector.residual(&z));
    Ok(SolverResult {
        objective: problem.objective_value(&z),
        solution: z,
        affine_solution: x,
        status,
        primal_residual: rp,
        dual_residual: rd,
        constraint_residual,
        iterations,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_hermitian, schatten_norm_herm, Schatten};
    use crate::rng::seeded;
    use faer::linalg::solvers::Solve;
    use rand::Rng;

    fn tight() -> SolverConfig {
        SolverConfig { eps_primal: 1e-10, eps_dual: 1e-10, ..SolverConfig::default() }
    }

    #[test]
    fn psd_projection_examples() {
        let h = HermitianOperator::from_diag(&[1.0, -2.0]);
        let p = project_psd(&h).unwrap();
        assert!(p.matrix().max_abs_diff(HermitianOperator::from_diag(&[1.0, 0.0]).matrix()) < 1e-14);
        let mut rng = seeded(70);
        let a = random_hermitian(4, &mut rng);
        let psd = HermitianOperator::hermitian_part(&a.matrix().matmul(a.matrix()));
        assert!(project_psd(&psd).unwrap().matrix().max_abs_diff(psd.matrix()) < 1e-10);
        for _ in 0..5 {
            let h = random_hermitian(5, &mut rng);
            let p = project_psd(&h).unwrap();
            let pp = project_psd(&p).unwrap();
            assert!(pp.matrix().max_abs_diff(p.matrix()) < 1e-10);
        }
    }

    /// Grid search over 2×2 PSD matrices `[[a, b + ic], [b − ic, d]]`.
    #[test]
    fn psd_projection_against_grid() {
        let mut rng = seeded(71);
        let h = random_hermitian(2, &mut rng);
        let p = project_psd(&h).unwrap();
        let best_dist = h.sub(&p).frobenius_norm();
        let steps = 40;
        let range = 3.0;
        for ia in 0..=steps {
            for id in 0..=steps {
                let a = range * ia as f64 / steps as f64;
                let d = range * id as f64 / steps as f64;
                for ib in -steps / 2..=steps / 2 {
                    for ic in -steps / 2..=steps / 2 {
                        let b = range * ib as f64 / steps as f64;
                        let c = range * ic as f64 / steps as f64;
                        if a * d < b * b + c * c {
                            continue;
                        }
                        let x = HermitianOperator::new(crate::linalg::ComplexMatrix::from_vec(
                            2,
                            2,
                            vec![C64::new(a, 0.0), C64::new(b, c), C64::new(b, -c), C64::new(d, 0.0)],
                        )
                        .unwrap())
                        .unwrap();
                        assert!(h.sub(&x).frobenius_norm() >= best_dist - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn ball_projection_examples() {
        let c = [1.0, -1.0];
        assert_eq!(project_l2_ball(&[1.2, -1.1], &c, 1.0), vec![1.2, -1.1]);
        assert_eq!(project_l2_ball(&[5.0, 5.0], &c, 0.0), c.to_vec());
        let p = project_l2_ball(&[4.0, 3.0], &c, 1.0);
        assert!((p[0] - 1.6).abs() < 1e-15 && (p[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn affine_projection_examples() {
        let mut prob = ConicProblem::new(2);
        let r = prob.add_rows(&[1.0]);
        prob.add_block(r, 0, LinearBlock::Sparse { rows: 1, cols: 2, entries: vec![(0, 0, 1.0), (0, 1, 1.0)] });
        let proj = AffineProjector::new(&prob).unwrap();
        let p = project_affine(&[0.0, 0.0], &proj);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let q = project_affine(&[0.3, 0.7], &proj);
        assert!((q[0] - 0.3).abs() < 1e-15 && (q[1] - 0.7).abs() < 1e-15);
    }

    /// Random dense instance against the normal-equation solution.
    #[test]
    fn affine_projection_against_normal_equations() {
        let mut rng = seeded(72);
        let (m, n) = (4, 9);
        let a = Mat::<f64>::from_fn(m, n, |_, _| rng.random::<f64>() - 0.5);
        let b: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let x0: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let op = Arc::new(DenseOperator::new(a.clone()));
        let mut prob = ConicProblem::new(n);
        let r = prob.add_rows(&b);
        prob.add_block(r, 0, LinearBlock::Dense { op, scale: 1.0 });
        let proj = AffineProjector::new(&prob).unwrap();
        let p = project_affine(&x0, &proj);
        let res = norm(&proj.residual(&p));
        assert!(res <= 1e-10 * (1.0 + norm(&b)));
        // The displacement lies in the row space of A: p − x0 = Aᵀλ.
        let g = {
            let mut g = Mat::<f64>::zeros(m, m);
            matmul(g.as_mut(), Accum::Replace, a.as_ref(), a.transpose(), 1.0, Par::Seq);
            g
        };
        let rhs: Vec<f64> = (0..m).map(|i| b[i] - (0..n).map(|j| a[(i, j)] * x0[j]).sum::<f64>()).collect();
        let lam = g.partial_piv_lu().solve(Mat::<f64>::from_fn(m, 1, |i, _| rhs[i]));
        for j in 0..n {
            let expect = x0[j] + (0..m).map(|i| a[(i, j)] * lam[(i, 0)]).sum::<f64>();
            assert!((p[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_constraints() {
        let mut prob = ConicProblem::new(2);
        let r = prob.add_rows(&[1.0, 2.0]);
        prob.add_block(r, 0, LinearBlock::Sparse { rows: 2, cols: 2, entries: vec![(0, 0, 1.0), (1, 0, 2.0)] });
        let proj = AffineProjector::new(&prob).unwrap();
        assert_eq!(proj.rank(), 1);
        let p = project_affine(&[0.0, 3.0], &proj);
        assert!((p[0] - 1.0).abs() < 1e-14 && (p[1] - 3.0).abs() < 1e-14);
    }

    /// `min Tr X s.t. X ⪰ 0, X₁₁ = 1` over 2×2 Hermitian `X`.
    #[test]
    fn decoupled_trace_minimization() {
        let mut prob = ConicProblem::new(4);
        prob.objective_mut()[0] = 1.0;
        prob.objective_mut()[3] = 1.0;
        let r = prob.add_rows(&[1.0]);
        prob.add_block(r, 0, LinearBlock::Sparse { rows: 1, cols: 4, entries: vec![(0, 0, 1.0)] });
        prob.add_cone(Cone::Psd { offset: 0, dim: 2 });
        let res = solve(&prob, &tight()).unwrap();
        assert_eq!(res.status, SolverStatus::Optimal);
        assert!((res.objective - 1.0).abs() < 1e-7);
        let x = HermitianOperator::from_svec(2, &res.solution).unwrap();
        assert!(x.matrix().max_abs_diff(HermitianOperator::from_diag(&[1.0, 0.0]).matrix()) < 1e-6);
    }

    /// Block form `min ½(Tr X + Tr Y) s.t. [[X, B], [B†, Y]] ⪰ 0` for `B = diag(3, −4)`.
    fn trace_norm_block_problem(b: &HermitianOperator) -> ConicProblem {
        let d = b.dim();
        let big = 2 * d;
        let mut prob = ConicProblem::new(big * big);
        for i in 0..big {
            prob.objective_mut()[i * big + i] = 0.5;
        }
        // Fix the off-diagonal block: entries (i, d + j) of the big matrix.
        let mut entries = Vec::new();
        let mut rhs = Vec::new();
        let s2 = std::f64::consts::SQRT_2;
        for i in 0..d {
            for j in 0..d {
                let (r, c) = (i, d + j);
                let z = b.matrix()[(i, j)];
                entries.push((rhs.len(), r * big + c, 1.0));
                rhs.push(s2 * z.re);
                entries.push((rhs.len(), c * big + r, 1.0));
                rhs.push(s2 * z.im);
            }
        }
        let row = prob.add_rows(&rhs);
        prob.add_block(row, 0, LinearBlock::Sparse { rows: rhs.len(), cols: big * big, entries });
        prob.add_cone(Cone::Psd { offset: 0, dim: big });
        prob
    }

    #[test]
    fn trace_norm_block_form() {
        let b = HermitianOperator::from_diag(&[3.0, -4.0]);
        let res = solve(&trace_norm_block_problem(&b), &tight()).unwrap();
        assert_eq!(res.status, SolverStatus::Optimal);
        assert!((res.objective - 7.0).abs() < 1e-6, "{}", res.objective);
        let mut rng = seeded(73);
        let h = random_hermitian(3, &mut rng);
        let res = solve(&trace_norm_block_problem(&h), &tight()).unwrap();
        let exact = schatten_norm_herm(&h, Schatten::One).unwrap();
        assert!((res.objective - exact).abs() < 1e-6 * (1.0 + exact));
    }

    #[test]
    fn homogeneity_in_the_objective() {
        let b = HermitianOperator::from_diag(&[3.0, -4.0]);
        let mut prob = trace_norm_block_problem(&b);
        prob.objective_mut().iter_mut().for_each(|v| *v *= 2.5);
        let res = solve(&prob, &tight()).unwrap();
        assert!((res.objective - 17.5).abs() < 1e-6 * 17.5);
    }

    #[test]
    fn deterministic_and_traced() {
        let b = HermitianOperator::from_diag(&[1.0, -0.5]);
        let cfg = SolverConfig { trace: true, ..tight() };
        let r1 = solve(&trace_norm_block_problem(&b), &cfg).unwrap();
        let r2 = solve(&trace_norm_block_problem(&b), &cfg).unwrap();
        assert_eq!(r1.solution, r2.solution);
        assert_eq!(r1.trace.as_ref().unwrap().len(), r1.iterations);
        let path = std::env::temp_dir().join(format!("qpt-trace-{}.csv", std::process::id()));
        r1.write_trace_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iter,primal_res,dual_res,objective\n"));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn second_order_and_nonnegative_cones() {
        // min t s.t. t ≥ ‖(x₁ − 3, x₂ − 4)‖, x ≥ 0 with x₁ + x₂ = 0 ⇒ x = 0, t = 5.
        let mut prob = ConicProblem::new(5);
        prob.objective_mut()[0] = 1.0;
        let r = prob.add_rows(&[-3.0, -4.0, 0.0]);
        prob.add_block(
            r,
            0,
            LinearBlock::Sparse {
                rows: 3,
                cols: 5,
                entries: vec![(0, 1, 1.0), (0, 3, -1.0), (1, 2, 1.0), (1, 4, -1.0), (2, 3, 1.0), (2, 4, 1.0)],
            },
        );
        prob.add_cone(Cone::SecondOrder { offset: 0, len: 3 });
        prob.add_cone(Cone::Nonnegative { offset: 3, len: 2 });
        let res = solve(&prob, &tight()).unwrap();
        assert_eq!(res.status, SolverStatus::Optimal);
        assert!((res.objective - 5.0).abs() < 1e-6);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut prob = ConicProblem::new(1);
        let r = prob.add_rows(&[1.0, 2.0]);
        prob.add_block(r, 0, LinearBlock::Sparse { rows: 2, cols: 1, entries: vec![(0, 0, 1.0), (1, 0, 1.0)] });
        let res = solve(&prob, &SolverConfig::default()).unwrap();
        assert_eq!(res.status, SolverStatus::Infeasible);
    }

    #[test]
    fn validation() {
        let mut prob = ConicProblem::new(4);
        prob.add_cone(Cone::Nonnegative { offset: 0, len: 3 });
        prob.add_cone(Cone::Nonnegative { offset: 2, len: 2 });
        assert!(prob.validate().is_err());
        let mut prob = ConicProblem::new(2);
        prob.add_cone(Cone::L2Ball { offset: 0, center: vec![0.0, 0.0], radius: -1.0 });
        assert!(prob.validate().is_err());
        assert!(SolverConfig { alpha: 2.0, ..SolverConfig::default() }.validate().is_err());
    }
}
