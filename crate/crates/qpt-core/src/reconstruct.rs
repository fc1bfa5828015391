//! Channel estimators from measurement data and error metrics.
//!
//! The norm-minimization programs are posed over Hermitian Choi matrices: the
//! data `y` are real and every measurement matrix is Hermitian, so if `J` is
//! feasible then so is `(J + J†)/2`, whose trace and diamond norms are no
//! larger. The split form writes `J = P − N` with `P, N ⪰ 0`:
//!
//! * trace norm: `min Tr P + Tr N`;
//! * diamond norm: `min t` with `t𝟙 − Tr₁(P + N) ⪰ 0`;
//!
//! subject to `‖𝒜(P − N) − y‖₂ ≤ η` and, for the constrained variants,
//! `Tr₁(P − N) = 𝟙`. The block forms embed a general `J` as the off-diagonal
//! block of one PSD matrix and serve as a cross-check at small `n`.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use serde::{Deserialize, Serialize};

use crate::channels::{HermPreservingMap, QuantumChannel};
use crate::conic::{
    project_psd_svec, solve, solve_with, AffineProjector, Cone, ConicProblem, DenseOperator, LinearBlock,
    SolverConfig, SolverResult, SolverStatus,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::{HermitianOperator, C64};
use crate::measurements::{MeasurementEnsemble, MeasurementVector};

/// Safety factor on the power-iteration estimate of `‖𝒜‖²`.
pub const LIPSCHITZ_SAFETY: f64 = 1.02;

/// Power iterations for the Lipschitz constant.
pub const POWER_ITERATIONS: usize = 50;

/// Inner iteration cap and tolerance of the CPT projection.
pub const CPT_INNER_MAX_ITER: usize = 500;
pub const CPT_INNER_TOL: f64 = 1e-10;

/// Loosest inner tolerance used by the CPT-fit while far from convergence;
/// the inner tolerance tracks `0.01·‖xₖ − xₖ₋₁‖` down to [`CPT_INNER_TOL`].
pub const CPT_INNER_TOL_MAX: f64 = 1e-4;

/// Slack on `η` in the infeasibility pre-check, relative to `1 + ‖y‖₂`,
/// covering rounding in the least-squares residual.
pub const FEASIBILITY_SLACK: f64 = 1e-10;

/// `η = ‖e‖₂ + 10·ε_machine`.
pub fn default_eta(noise_norm: f64) -> f64 {
    noise_norm + 10.0 * f64::EPSILON
}

/// Reconstruction program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "cpt-fit")]
    CptFit,
    #[serde(rename = "tn")]
    TraceNorm,
    #[serde(rename = "tn-c")]
    TraceNormConstrained,
    #[serde(rename = "dn")]
    DiamondNorm,
    #[serde(rename = "dn-c")]
    DiamondNormConstrained,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::CptFit,
        Method::TraceNorm,
        Method::TraceNormConstrained,
        Method::DiamondNorm,
        Method::DiamondNormConstrained,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::CptFit => "cpt-fit",
            Method::TraceNorm => "tn",
            Method::TraceNormConstrained => "tn-c",
            Method::DiamondNorm => "dn",
            Method::DiamondNormConstrained => "dn-c",
        }
    }

    /// Whether trace preservation is imposed.
    pub fn is_constrained(self) -> bool {
        !matches!(self, Method::TraceNorm | Method::DiamondNorm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}' (expected cpt-fit, tn, tn-c, dn or dn-c)")))
    }
}

/// Which SDP encoding the norm methods use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Formulation {
    /// `J = P − N` over Hermitian `J`.
    #[default]
    Split,
    /// `J` as the off-diagonal block of a single PSD matrix.
    Block,
}

/// Regularizer minimized by the norm methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Regularizer {
    Trace,
    Diamond,
}

/// Inputs of a reconstruction.
#[derive(Clone, Debug)]
pub struct ReconstructionRequest {
    pub ensemble: MeasurementEnsemble,
    pub y: MeasurementVector,
    pub method: Method,
    /// Radius of the data-fidelity ball; ignored by CPT-fit.
    pub eta: f64,
    pub config: SolverConfig,
}

/// Output of a reconstruction.
#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub method: Method,
    pub eta: Option<f64>,
    pub estimate: HermPreservingMap,
    /// The estimate as a validated channel (CPT-fit only).
    pub channel: Option<QuantumChannel>,
    /// Regularizer value for norm methods, `‖𝒜(T̂) − y‖₂` for CPT-fit.
    pub objective: f64,
    pub status: SolverStatus,
    /// `‖𝒜(T̂) − y‖₂`.
    pub residual: f64,
    pub iterations: usize,
    pub wall_ms: f64,
}

impl ReconstructionResult {
    /// Result record `{method, eta, status, objective, residual,
    /// error_vs_truth, wall_ms, channel}`.
    pub fn to_json(&self, truth: Option<&HermPreservingMap>) -> Result<serde_json::Value> {
        let error = truth.map(|t| reconstruction_error(&self.estimate, t, 2.0)).transpose()?;
        Ok(serde_json::json!({
            "method": self.method,
            "eta": self.eta,
            "status": self.status.to_string(),
            "objective": self.objective,
            "residual": self.residual,
            "error_vs_truth": error,
            "wall_ms": self.wall_ms,
            "channel": serde_json::to_value(self.estimate.choi())?,
        }))
    }
}

/// Row/column entries of the partial trace over the output factor in `svec`
/// coordinates: `svec(Tr₁X)[a·n + b] = Σ_o svec(X)[(o·n + a)·n² + (o·n + b)]`.
fn partial_trace_entries(n: usize, scale: f64) -> Vec<(usize, usize, f64)> {
    let d = n * n;
    let mut out = Vec::with_capacity(n * d);
    for a in 0..n {
        for b in 0..n {
            for o in 0..n {
                out.push((a * n + b, (o * n + a) * d + (o * n + b), scale));
            }
        }
    }
    out
}

/// `svec(𝟙ₙ)`.
fn svec_identity(n: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = scale;
    }
    v
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual_norm(a: &[f64], y: &[f64]) -> f64 {
    a.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Symmetric PSD pseudo-inverse data `(V, λ)` restricted to `λ > tol·λ_max`.
fn range_basis(g: &Mat<f64>) -> Result<Mat<f64>> {
    let m = g.nrows();
    let evd = g.self_adjoint_eigen(Side::Lower).map_err(|_| Error::EigenNoConvergence { dim: m })?;
    let s = evd.S();
    let u = evd.U();
    let lmax = (0..m).map(|i| s[i].abs()).fold(0.0, f64::max);
    let keep: Vec<usize> = (0..m).filter(|&i| s[i] > 1e-12 * lmax.max(f64::MIN_POSITIVE)).collect();
    Ok(Mat::from_fn(m, keep.len(), |r, c| u[(r, keep[c])]))
}

/// `‖(𝟙 − UUᵀ) v‖₂` for orthonormal columns `U`.
fn out_of_range(u: &Mat<f64>, v: &[f64]) -> f64 {
    let m = v.len();
    let vm = MatRef::from_column_major_slice(v, m, 1);
    let mut c = Mat::<f64>::zeros(u.ncols(), 1);
    matmul(c.as_mut(), Accum::Replace, u.transpose(), vm, 1.0, Par::Seq);
    let mut p = Mat::<f64>::zeros(m, 1);
    matmul(p.as_mut(), Accum::Replace, u.as_ref(), c.as_ref(), 1.0, Par::Seq);
    (0..m).map(|i| (v[i] - p[(i, 0)]).powi(2)).sum::<f64>().sqrt()
}

/// A measurement ensemble with its real measurement operator prepared for
/// repeated reconstructions.
#[derive(Debug)]
pub struct PreparedEnsemble {
    ensemble: MeasurementEnsemble,
    op: Arc<DenseOperator>,
    lipschitz: OnceLock<f64>,
    range_free: OnceLock<Mat<f64>>,
    range_tp: OnceLock<Mat<f64>>,
}

impl PreparedEnsemble {
    pub fn new(ensemble: &MeasurementEnsemble) -> Self {
        let mat = ensemble.measurement_matrix().as_mat().clone();
        Self {
            ensemble: ensemble.clone(),
            op: Arc::new(DenseOperator::new(mat)),
            lipschitz: OnceLock::new(),
            range_free: OnceLock::new(),
            range_tp: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.ensemble.n
    }

    pub fn m(&self) -> usize {
        self.ensemble.len()
    }

    pub fn ensemble(&self) -> &MeasurementEnsemble {
        &self.ensemble
    }

    /// `𝒜x` for `x = svec J`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Mat::<f64>::zeros(self.m(), 1);
        matmul(
            out.as_mut(),
            Accum::Replace,
            self.op.mat(),
            MatRef::from_column_major_slice(x, x.len(), 1),
            1.0,
            Par::Seq,
        );
        (0..self.m()).map(|i| out[(i, 0)]).collect()
    }

    /// `𝒜ᵀz`.
    pub fn apply_adjoint(&self, z: &[f64]) -> Vec<f64> {
        let cols = self.op.cols();
        let mut out = Mat::<f64>::zeros(cols, 1);
        matmul(
            out.as_mut(),
            Accum::Replace,
            self.op.mat().transpose(),
            MatRef::from_column_major_slice(z, z.len(), 1),
            1.0,
            Par::Seq,
        );
        (0..cols).map(|i| out[(i, 0)]).collect()
    }

    /// `‖𝒜(T) − y‖₂`.
    pub fn residual(&self, t: &HermPreservingMap, y: &MeasurementVector) -> Result<f64> {
        self.check(y)?;
        Ok(residual_norm(&self.apply(&t.choi().svec()), &y.values))
    }

    fn check(&self, y: &MeasurementVector) -> Result<()> {
        if y.len() != self.m() {
            return Err(Error::DimensionMismatch { expected: self.m(), found: y.len() });
        }
        if y.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// `λ_max(𝒜ᵀ𝒜)` from power iteration, times [`LIPSCHITZ_SAFETY`].
    pub fn lipschitz(&self) -> f64 {
        *self.lipschitz.get_or_init(|| {
            let cols = self.op.cols();
            // Deterministic start with support on every coordinate.
            let mut v: Vec<f64> = (0..cols).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
            let mut lambda = 0.0;
            for _ in 0..POWER_ITERATIONS {
                let nv = norm(&v);
                v.iter_mut().for_each(|x| *x /= nv);
                let w = self.apply_adjoint(&self.apply(&v));
                lambda = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
                v = w;
            }
            lambda * LIPSCHITZ_SAFETY
        })
    }

    /// Smallest `‖𝒜(J) − y‖₂` over Hermitian `J`, with `Tr₁J = 𝟙` when
    /// `trace_preserving`.
    pub fn min_residual(&self, y: &MeasurementVector, trace_preserving: bool) -> Result<f64> {
        self.check(y)?;
        let n = self.n();
        if !trace_preserving {
            let u = match self.range_free.get() {
                Some(u) => u,
                None => {
                    let u = range_basis(self.op.gram())?;
                    self.range_free.get_or_init(|| u)
                }
            };
            return Ok(out_of_range(u, &y.values));
        }
        // J = 𝟙⊗𝟙/n + K with Tr₁K = 0; the range of 𝒜 on that subspace has
        // Gram 𝒜𝒜ᵀ − BBᵀ/n with B = 𝒜 ∘ (𝟙 ⊗ ·).
        let u = match self.range_tp.get() {
            Some(u) => u,
            None => {
                let mat = self.op.mat();
                let m = self.m();
                let d = n * n;
                let mut b = Mat::<f64>::zeros(m, d);
                for (row, col, _) in partial_trace_entries(n, 1.0) {
                    for i in 0..m {
                        b[(i, row)] += mat[(i, col)];
                    }
                }
                let mut g = self.op.gram().clone();
                matmul(g.as_mut(), Accum::Add, b.as_ref(), b.transpose(), -1.0 / n as f64, Par::Seq);
                let u = range_basis(&g)?;
                self.range_tp.get_or_init(|| u)
            }
        };
        let j0 = HermitianOperator::identity(n * n).scale(1.0 / n as f64);
        let shifted: Vec<f64> = self.apply(&j0.svec()).iter().zip(&y.values).map(|(a, b)| b - a).collect();
        Ok(out_of_range(u, &shifted))
    }

    fn precheck(&self, y: &MeasurementVector, eta: f64, trace_preserving: bool) -> Result<()> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(invalid(format!("eta must be finite and non-negative, got {eta}")));
        }
        let min_residual = self.min_residual(y, trace_preserving)?;
        if min_residual > eta + FEASIBILITY_SLACK * (1.0 + norm(&y.values)) {
            return Err(Error::Infeasible { min_residual, eta });
        }
        Ok(())
    }

    /// Dispatches on `method`.
    pub fn reconstruct(
        &self,
        y: &MeasurementVector,
        method: Method,
        eta: f64,
        config: &SolverConfig,
    ) -> Result<ReconstructionResult> {
        match method {
            Method::CptFit => self.cpt_fit(y, config),
            Method::TraceNorm => self.trace_norm_min(y, eta, false, config),
            Method::TraceNormConstrained => self.trace_norm_min(y, eta, true, config),
            Method::DiamondNorm => self.diamond_norm_min(y, eta, false, config),
            Method::DiamondNormConstrained => self.diamond_norm_min(y, eta, true, config),
        }
    }

    /// Least-squares fit over CPT maps by accelerated projected gradient with
    /// function-value restarts.
    pub fn cpt_fit(&self, y: &MeasurementVector, config: &SolverConfig) -> Result<ReconstructionResult> {
        config.validate()?;
        self.check(y)?;
        let start = Instant::now();
        let n = self.n();
        let step = 1.0 / self.lipschitz();
        let mut projector = CptProjector::new(n);
        let f = |x: &[f64]| -> (f64, Vec<f64>) {
            let r: Vec<f64> = self.apply(x).iter().zip(&y.values).map(|(a, b)| a - b).collect();
            (0.5 * r.iter().map(|v| v * v).sum::<f64>(), r)
        };

        let mut x = HermitianOperator::identity(n * n).scale(1.0 / n as f64).svec();
        let (mut fx, _) = f(&x);
        let mut v = x.clone();
        let mut t = 1.0f64;
        let mut best = (fx, x.clone());
        let mut status = SolverStatus::MaxIter;
        let mut iterations = 0;
        let mut restarted = false;
        let mut inner_tol = CPT_INNER_TOL_MAX;
        for k in 1..=config.max_iter {
            iterations = k;
            let (_, r) = f(&v);
            let grad = self.apply_adjoint(&r);
            let g: Vec<f64> = v.iter().zip(&grad).map(|(a, b)| a - step * b).collect();
            let x_new = projector.project_with_tol(&g, inner_tol)?;
            let (f_new, _) = f(&x_new);
            let change = residual_norm(&x_new, &x);
            let scale = norm(&x_new).max(1.0);
            if f_new > fx {
                // A plain gradient step from the current iterate that fails to
                // descend means no progress is possible at the precision of
                // the projection.
                let exact = inner_tol <= CPT_INNER_TOL;
                if exact && (restarted || change <= config.cpt_fit_tol * scale) {
                    status = SolverStatus::Optimal;
                    break;
                }
                inner_tol = CPT_INNER_TOL;
                t = 1.0;
                v = x.clone();
                restarted = true;
                continue;
            }
            restarted = false;
            inner_tol = inner_tol.min((0.01 * change).max(CPT_INNER_TOL));
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_new;
            v = x_new.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
            t = t_new;
            x = x_new;
            fx = f_new;
            if fx < best.0 {
                best = (fx, x.clone());
            }
            if change <= config.cpt_fit_tol * scale && inner_tol <= CPT_INNER_TOL {
                status = SolverStatus::Optimal;
                break;
            }
        }
        let choi = HermitianOperator::from_svec(n * n, &best.1)?;
        let estimate = HermPreservingMap::from_choi(choi)?;
        let residual = (2.0 * best.0).sqrt();
        let channel = QuantumChannel::from_map(estimate.clone()).ok();
        Ok(ReconstructionResult {
            method: Method::CptFit,
            eta: None,
            estimate,
            channel,
            objective: residual,
            status,
            residual,
            iterations,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// The CPT least-squares fit posed for the conic solver:
    /// `min s` with `s ≥ ‖𝒜J − y‖₂`, `J ⪰ 0`, `Tr₁J = 𝟙`.
    pub fn cpt_fit_conic(&self, y: &MeasurementVector, config: &SolverConfig) -> Result<ReconstructionResult> {
        self.check(y)?;
        let start = Instant::now();
        let n = self.n();
        let (d2, m) = (n.pow(4), self.m());
        let (oj, os, or) = (0, d2, d2 + 1);
        let mut prob = ConicProblem::new(d2 + 1 + m);
        prob.objective_mut()[os] = 1.0;
        let row = prob.add_rows(&y.values);
        prob.add_block(row, oj, LinearBlock::Dense { op: self.op.clone(), scale: 1.0 });
        prob.add_block(row, or, LinearBlock::identity(m, -1.0));
        let row = prob.add_rows(&svec_identity(n, 1.0));
        prob.add_block(row, oj, LinearBlock::Sparse { rows: n * n, cols: d2, entries: partial_trace_entries(n, 1.0) });
        prob.add_cone(Cone::Psd { offset: oj, dim: n * n });
        prob.add_cone(Cone::SecondOrder { offset: os, len: m + 1 });
        let res = solve(&prob, config)?;
        let choi = HermitianOperator::from_svec(n * n, &res.solution[oj..oj + d2])?;
        let estimate = HermPreservingMap::from_choi(choi)?;
        let residual = self.residual(&estimate, y)?;
        Ok(ReconstructionResult {
            method: Method::CptFit,
            eta: None,
            channel: QuantumChannel::from_map(estimate.clone()).ok(),
            estimate,
            objective: residual,
            status: res.status,
            residual,
            iterations: res.iterations,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Trace-norm minimization in the split form.
    pub fn trace_norm_min(
        &self,
        y: &MeasurementVector,
        eta: f64,
        constrained: bool,
        config: &SolverConfig,
    ) -> Result<ReconstructionResult> {
        self.norm_min(y, eta, constrained, Regularizer::Trace, Formulation::Split, config)
    }

    /// Diamond-norm minimization in the split form.
    pub fn diamond_norm_min(
        &self,
        y: &MeasurementVector,
        eta: f64,
        constrained: bool,
        config: &SolverConfig,
    ) -> Result<ReconstructionResult> {
        self.norm_min(y, eta, constrained, Regularizer::Diamond, Formulation::Split, config)
    }

    /// Norm minimization in the chosen formulation.
    pub fn norm_min_with(
        &self,
        y: &MeasurementVector,
        eta: f64,
        method: Method,
        formulation: Formulation,
        config: &SolverConfig,
    ) -> Result<ReconstructionResult> {
        let reg = match method {
            Method::CptFit => return Err(invalid("CPT-fit is not a norm-minimization program")),
            Method::TraceNorm | Method::TraceNormConstrained => Regularizer::Trace,
            Method::DiamondNorm | Method::DiamondNormConstrained => Regularizer::Diamond,
        };
        self.norm_min(y, eta, method.is_constrained(), reg, formulation, config)
    }

    fn norm_min(
        &self,
        y: &MeasurementVector,
        eta: f64,
        constrained: bool,
        reg: Regularizer,
        formulation: Formulation,
        config: &SolverConfig,
    ) -> Result<ReconstructionResult> {
        config.validate()?;
        self.check(y)?;
        self.precheck(y, eta, constrained)?;
        let start = Instant::now();
        let method = match (reg, constrained) {
            (Regularizer::Trace, false) => Method::TraceNorm,
            (Regularizer::Trace, true) => Method::TraceNormConstrained,
            (Regularizer::Diamond, false) => Method::DiamondNorm,
            (Regularizer::Diamond, true) => Method::DiamondNormConstrained,
        };
        let (res, choi) = match formulation {
            Formulation::Split => {
                let (prob, layout) = self.split_problem(y, eta, constrained, reg);
                let res = solve(&prob, config)?;
                let choi = layout.choi(&res)?;
                (res, choi)
            }
            Formulation::Block => {
                let (prob, layout) = self.block_problem(y, eta, constrained, reg);
                let res = solve(&prob, config)?;
                let choi = layout.choi(&res)?;
                (res, choi)
            }
        };
        let estimate = HermPreservingMap::from_choi(choi)?;
        let residual = self.residual(&estimate, y)?;
        Ok(ReconstructionResult {
            method,
            eta: Some(eta),
            estimate,
            channel: None,
            objective: res.objective,
            status: res.status,
            residual,
            iterations: res.iterations,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Variables `[P | N | w | S | t]` (`S`, `t` for the diamond norm).
    fn split_problem(
        &self,
        y: &MeasurementVector,
        eta: f64,
        constrained: bool,
        reg: Regularizer,
    ) -> (ConicProblem, SplitLayout) {
        let n = self.n();
        let (d, d2, m) = (n * n, n.pow(4), self.m());
        let (op, on, ow) = (0, d2, 2 * d2);
        let (os, ot) = (2 * d2 + m, 2 * d2 + m + d);
        let dim = match reg {
            Regularizer::Trace => 2 * d2 + m,
            Regularizer::Diamond => 2 * d2 + m + d + 1,
        };
        let mut prob = ConicProblem::new(dim);
        match reg {
            Regularizer::Trace => {
                for i in 0..d {
                    prob.objective_mut()[op + i * d + i] = 1.0;
                    prob.objective_mut()[on + i * d + i] = 1.0;
                }
            }
            Regularizer::Diamond => prob.objective_mut()[ot] = 1.0,
        }
        let row = prob.add_rows(&vec![0.0; m]);
        prob.add_block(row, op, LinearBlock::Dense { op: self.op.clone(), scale: 1.0 });
        prob.add_block(row, on, LinearBlock::Dense { op: self.op.clone(), scale: -1.0 });
        prob.add_block(row, ow, LinearBlock::identity(m, -1.0));
        if constrained {
            let row = prob.add_rows(&svec_identity(n, 1.0));
            prob.add_block(row, op, LinearBlock::Sparse { rows: d, cols: d2, entries: partial_trace_entries(n, 1.0) });
            prob.add_block(row, on, LinearBlock::Sparse { rows: d, cols: d2, entries: partial_trace_entries(n, -1.0) });
        }
        if reg == Regularizer::Diamond {
            // S + Tr₁(P + N) − t𝟙 = 0.
            let row = prob.add_rows(&vec![0.0; d]);
            prob.add_block(row, op, LinearBlock::Sparse { rows: d, cols: d2, entries: partial_trace_entries(n, 1.0) });
            prob.add_block(row, on, LinearBlock::Sparse { rows: d, cols: d2, entries: partial_trace_entries(n, 1.0) });
            prob.add_block(row, os, LinearBlock::identity(d, 1.0));
            let t_col = (0..n).map(|i| (i * n + i, 0, -1.0)).collect();
            prob.add_block(row, ot, LinearBlock::Sparse { rows: d, cols: 1, entries: t_col });
            prob.add_cone(Cone::Psd { offset: os, dim: n });
        }
        prob.add_cone(Cone::Psd { offset: op, dim: d });
        prob.add_cone(Cone::Psd { offset: on, dim: d });
        prob.add_cone(Cone::L2Ball { offset: ow, center: y.values.clone(), radius: eta });
        (prob, SplitLayout { d, d2 })
    }

    /// Variables `[svec Z | w_re | w_im | S₀ | S₁ | t₀ | t₁]` with
    /// `Z = [[X, ±J], [±J†, Y]] ⪰ 0` (sign `−` for the diamond norm).
    fn block_problem(
        &self,
        y: &MeasurementVector,
        eta: f64,
        constrained: bool,
        reg: Regularizer,
    ) -> (ConicProblem, BlockLayout) {
        let n = self.n();
        let d = n * n;
        let big = 2 * d;
        let zlen = big * big;
        let m = self.m();
        let sign = match reg {
            Regularizer::Trace => 1.0,
            Regularizer::Diamond => -1.0,
        };
        let layout = BlockLayout { d, sign };
        let (ow, os0, os1) = (zlen, zlen + 2 * m, zlen + 2 * m + n * n);
        let (ot0, ot1) = (os1 + n * n, os1 + n * n + 1);
        let dim = match reg {
            Regularizer::Trace => zlen + 2 * m,
            Regularizer::Diamond => ot1 + 1,
        };
        let mut prob = ConicProblem::new(dim);
        match reg {
            Regularizer::Trace => {
                for i in 0..big {
                    prob.objective_mut()[i * big + i] = 0.5;
                }
            }
            Regularizer::Diamond => {
                prob.objective_mut()[ot0] = 0.5;
                prob.objective_mut()[ot1] = 0.5;
            }
        }

        // Re/Im of Tr[MᵢJ] − w = 0.
        let rows: Vec<HermitianOperator> =
            self.ensemble.settings.iter().map(|s| s.measurement_matrix()).collect();
        let mut link = Mat::<f64>::zeros(2 * m, zlen);
        for (i, mi) in rows.iter().enumerate() {
            for k in 0..d {
                for l in 0..d {
                    let c = mi.matrix()[(l, k)];
                    for &(idx, re, im) in &layout.j_entry(k, l) {
                        // (c_re + i c_im)(re + i im) · v
                        link[(i, idx)] += c.re * re - c.im * im;
                        link[(m + i, idx)] += c.re * im + c.im * re;
                    }
                }
            }
        }
        let row = prob.add_rows(&vec![0.0; 2 * m]);
        prob.add_block(row, 0, LinearBlock::Dense { op: Arc::new(DenseOperator::new(link)), scale: 1.0 });
        prob.add_block(row, ow, LinearBlock::identity(2 * m, -1.0));

        if constrained {
            let mut entries = Vec::new();
            let mut rhs = Vec::new();
            // J = J†.
            for k in 0..d {
                for l in k..d {
                    for part in 0..2 {
                        let r = rhs.len();
                        for &(idx, re, im) in &layout.j_entry(k, l) {
                            entries.push((r, idx, if part == 0 { re } else { im }));
                        }
                        for &(idx, re, im) in &layout.j_entry(l, k) {
                            entries.push((r, idx, if part == 0 { -re } else { im }));
                        }
                        rhs.push(0.0);
                    }
                }
            }
            // Tr₁J = 𝟙.
            for a in 0..n {
                for b in 0..n {
                    for part in 0..2 {
                        let r = rhs.len();
                        for o in 0..n {
                            for &(idx, re, im) in &layout.j_entry(o * n + a, o * n + b) {
                                entries.push((r, idx, if part == 0 { re } else { im }));
                            }
                        }
                        rhs.push(if part == 0 && a == b { 1.0 } else { 0.0 });
                    }
                }
            }
            let row = prob.add_rows(&rhs);
            prob.add_block(row, 0, LinearBlock::Sparse { rows: rhs.len(), cols: zlen, entries });
        }

        if reg == Regularizer::Diamond {
            // Sⱼ + Tr₁(Zⱼⱼ) − tⱼ𝟙 = 0 for the two diagonal blocks.
            for (block, os, ot) in [(0, os0, ot0), (1, os1, ot1)] {
                let off = block * d;
                let entries = (0..n)
                    .flat_map(|a| (0..n).flat_map(move |b| (0..n).map(move |o| (a, b, o))))
                    .map(|(a, b, o)| (a * n + b, (off + o * n + a) * big + (off + o * n + b), 1.0))
                    .collect();
                let row = prob.add_rows(&vec![0.0; n * n]);
                prob.add_block(row, 0, LinearBlock::Sparse { rows: n * n, cols: zlen, entries });
                prob.add_block(row, os, LinearBlock::identity(n * n, 1.0));
                let t_col = (0..n).map(|i| (i * n + i, 0, -1.0)).collect();
                prob.add_block(row, ot, LinearBlock::Sparse { rows: n * n, cols: 1, entries: t_col });
                prob.add_cone(Cone::Psd { offset: os, dim: n });
            }
        }
        prob.add_cone(Cone::Psd { offset: 0, dim: big });
        let mut center = y.values.clone();
        center.resize(2 * m, 0.0);
        prob.add_cone(Cone::L2Ball { offset: ow, center, radius: eta });
        (prob, layout)
    }
}

/// Extracts `J = P − N` from the affine iterate of the split form.
struct SplitLayout {
    d: usize,
    d2: usize,
}

impl SplitLayout {
    fn choi(&self, res: &SolverResult) -> Result<HermitianOperator> {
        let x = &res.affine_solution;
        let diff: Vec<f64> = (0..self.d2).map(|i| x[i] - x[self.d2 + i]).collect();
        HermitianOperator::from_svec(self.d, &diff)
    }
}

/// Coordinates of `J` inside `svec Z` for the block form.
struct BlockLayout {
    d: usize,
    sign: f64,
}

impl BlockLayout {
    /// `J[k, l] = sign · Z[k, d + l]` as `Σ (re + i·im) v[idx]`.
    fn j_entry(&self, k: usize, l: usize) -> [(usize, f64, f64); 2] {
        let big = 2 * self.d;
        let s = self.sign / std::f64::consts::SQRT_2;
        let (r, c) = (k, self.d + l);
        [(r * big + c, s, 0.0), (c * big + r, 0.0, s)]
    }

    fn choi(&self, res: &SolverResult) -> Result<HermitianOperator> {
        let x = &res.affine_solution;
        let mut j = crate::linalg::ComplexMatrix::zeros(self.d, self.d);
        for k in 0..self.d {
            for l in 0..self.d {
                let mut z = C64::new(0.0, 0.0);
                for (idx, re, im) in self.j_entry(k, l) {
                    z += C64::new(re, im) * x[idx];
                }
                j[(k, l)] = z;
            }
        }
        Ok(HermitianOperator::hermitian_part(&j))
    }
}

/// Projection onto `{J ⪰ 0, Tr₁J = 𝟙}`, the Dykstra alternation between the
/// PSD cone and the affine set written in its dual form: with `Λ` the
/// multiplier of the affine constraint, `J(Λ) = Π₊(G − 𝟙 ⊗ Λ)` and
/// `Λ ← Λ + (Tr₁J(Λ) − 𝟙)/n`, accelerated with momentum and restarts. The
/// multiplier is kept between calls as a warm start.
pub struct CptProjector {
    n: usize,
    lambda: Vec<f64>,
    pub last_inner_iterations: usize,
}

impl CptProjector {
    pub fn new(n: usize) -> Self {
        Self { n, lambda: vec![0.0; n * n], last_inner_iterations: 0 }
    }

    /// Projects `g = svec G` (length `n⁴`) to within [`CPT_INNER_TOL`].
    pub fn project(&mut self, g: &[f64]) -> Result<Vec<f64>> {
        self.project_with_tol(g, CPT_INNER_TOL)
    }

    /// Projects with `‖Tr₁J − 𝟙‖_F ≤ tol` on exit (or at the iteration cap).
    pub fn project_with_tol(&mut self, g: &[f64], tol: f64) -> Result<Vec<f64>> {
        let n = self.n;
        let d = n * n;
        let entries = partial_trace_entries(n, 1.0);
        let target = svec_identity(n, 1.0);
        let mut j = g.to_vec();
        let mut mu = self.lambda.clone();
        let mut t = 1.0f64;
        for it in 1..=CPT_INNER_MAX_ITER {
            j.copy_from_slice(g);
            for &(r, c, _) in &entries {
                j[c] -= mu[r];
            }
            project_psd_svec(d, &mut j)?;
            let mut defect: Vec<f64> = target.iter().map(|t| -t).collect();
            for &(r, c, _) in &entries {
                defect[r] += j[c];
            }
            self.last_inner_iterations = it;
            if norm(&defect) <= tol {
                self.lambda = mu;
                break;
            }
            let next: Vec<f64> = mu.iter().zip(&defect).map(|(m, dv)| m + dv / n as f64).collect();
            // Restart the momentum once the ascent direction turns.
            let step: f64 = next.iter().zip(&self.lambda).zip(&defect).map(|((a, b), dv)| (a - b) * dv).sum();
            if step < 0.0 {
                t = 1.0;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            mu = next.iter().zip(&self.lambda).map(|(a, b)| a + beta * (a - b)).collect();
            self.lambda = next;
            t = t_next;
        }
        Ok(j)
    }
}

/// Projection of `G` onto the Choi matrices of CPT maps.
pub fn project_cpt(g: &HermitianOperator, n: usize) -> Result<HermitianOperator> {
    if g.dim() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, found: g.dim() });
    }
    let mut p = CptProjector::new(n);
    HermitianOperator::from_svec(n * n, &p.project(&g.svec())?)
}

/// Runs a request end to end.
pub fn reconstruct(request: &ReconstructionRequest) -> Result<ReconstructionResult> {
    let prepared = PreparedEnsemble::new(&request.ensemble);
    prepared.reconstruct(&request.y, request.method, request.eta, &request.config)
}

/// CPT-fit for a single ensemble.
pub fn cpt_fit(ensemble: &MeasurementEnsemble, y: &MeasurementVector, config: &SolverConfig) -> Result<ReconstructionResult> {
    PreparedEnsemble::new(ensemble).cpt_fit(y, config)
}

/// Trace-norm minimization for a single ensemble.
pub fn trace_norm_min(
    ensemble: &MeasurementEnsemble,
    y: &MeasurementVector,
    eta: f64,
    constrained: bool,
    config: &SolverConfig,
) -> Result<ReconstructionResult> {
    PreparedEnsemble::new(ensemble).trace_norm_min(y, eta, constrained, config)
}

/// Diamond-norm minimization for a single ensemble.
pub fn diamond_norm_min(
    ensemble: &MeasurementEnsemble,
    y: &MeasurementVector,
    eta: f64,
    constrained: bool,
    config: &SolverConfig,
) -> Result<ReconstructionResult> {
    PreparedEnsemble::new(ensemble).diamond_norm_min(y, eta, constrained, config)
}

/// Diamond norm with the solver status of the underlying program.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiamondNormValue {
    pub value: f64,
    pub status: SolverStatus,
    pub iterations: usize,
}

/// `‖T‖⋄ = min ‖Tr₁(P + N)‖∞` over `P − N = J(T)`, `P, N ⪰ 0`.
pub fn diamond_norm(t: &HermPreservingMap, config: &SolverConfig) -> Result<DiamondNormValue> {
    let n = t.dim();
    let (d, d2) = (n * n, n.pow(4));
    let (op, on, os, ot) = (0, d2, 2 * d2, 2 * d2 + d);
    let mut prob = ConicProblem::new(2 * d2 + d + 1);
    prob.objective_mut()[ot] = 1.0;
    let row = prob.add_rows(&t.choi().svec());
    prob.add_block(row, op, LinearBlock::identity(d2, 1.0));
    prob.add_block(row, on, LinearBlock::identity(d2, -1.0));
    let row = prob.add_rows(&vec![0.0; d]);
    prob.add_block(row, op, LinearBlock::Sparse { rows: d, cols: d2, entries: partial_trace_entries(n, 1.0) });
    prob.add_block(row, on, LinearBlock::Sparse { rows: d, cols: d2, entries: partial_trace_entries(n, 1.0) });
    prob.add_block(row, os, LinearBlock::identity(d, 1.0));
    let t_col = (0..n).map(|i| (i * n + i, 0, -1.0)).collect();
    prob.add_block(row, ot, LinearBlock::Sparse { rows: d, cols: 1, entries: t_col });
    prob.add_cone(Cone::Psd { offset: op, dim: d });
    prob.add_cone(Cone::Psd { offset: on, dim: d });
    prob.add_cone(Cone::Psd { offset: os, dim: n });
    let projector = AffineProjector::new(&prob)?;
    let res = solve_with(&prob, &projector, config)?;
    Ok(DiamondNormValue { value: res.objective, status: res.status, iterations: res.iterations })
}

/// `‖J(T̂) − J(T₀)‖_p` for `p ∈ [1, 2]`.
pub fn reconstruction_error(estimate: &HermPreservingMap, truth: &HermPreservingMap, p: f64) -> Result<f64> {
    if !(1.0..=2.0).contains(&p) {
        return Err(invalid(format!("p must lie in [1, 2], got {p}")));
    }
    if estimate.dim() != truth.dim() {
        return Err(Error::DimensionMismatch { expected: truth.dim(), found: estimate.dim() });
    }
    let diff = estimate.choi().sub(truth.choi());
    if p == 2.0 {
        return Ok(diff.frobenius_norm());
    }
    let eig = crate::linalg::herm_eig(&diff)?;
    Ok(eig.values.iter().map(|l| l.abs().powf(p)).sum::<f64>().powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{depolarizing_channel, identity_channel, random_rank_r_channel, unitary_channel};
    use crate::linalg::{schatten_norm_herm, ComplexMatrix, Schatten};
    use crate::measurements::{add_noise, default_a0, gen_generic_ensemble, measure};
    use crate::rng::seeded;

    fn setup(n: usize, r: usize, m: usize, seed: u64) -> (PreparedEnsemble, QuantumChannel, MeasurementVector) {
        let mut rng = seeded(seed);
        let t = random_rank_r_channel(n, r, &mut rng).unwrap();
        let a0 = default_a0(n, n).unwrap();
        let e = gen_generic_ensemble(n, m, &a0, Some(seed), &mut rng).unwrap();
        let y = measure(t.as_map(), &e).unwrap();
        (PreparedEnsemble::new(&e), t, y)
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("foo".parse::<Method>().is_err());
    }

    #[test]
    fn cpt_projection_is_cpt_and_idempotent() {
        let mut rng = seeded(80);
        let n = 2;
        let g = crate::linalg::random_hermitian(n * n, &mut rng);
        let p = project_cpt(&g, n).unwrap();
        let map = HermPreservingMap::from_choi(p.clone()).unwrap();
        assert!(map.trace_preservation_defect() < 1e-9);
        assert!(crate::linalg::herm_eig(&p).unwrap().values.last().unwrap() >= &-1e-12);
        let pp = project_cpt(&p, n).unwrap();
        assert!(pp.matrix().max_abs_diff(p.matrix()) < 1e-8);
        // Variational inequality ⟨G − P, Q − P⟩ ≤ 0 against CPT points Q.
        for q in [identity_channel(2), depolarizing_channel(2), random_rank_r_channel(2, 2, &mut rng).unwrap()] {
            let lhs = g.sub(&p).inner(&q.choi().sub(&p));
            assert!(lhs <= 1e-7, "{lhs}");
        }
    }

    #[test]
    fn cpt_fit_noiseless_recovery() {
        let (prep, t, y) = setup(2, 1, 20, 81);
        let res = prep.cpt_fit(&y, &SolverConfig::default()).unwrap();
        let err = reconstruction_error(&res.estimate, t.as_map(), 2.0).unwrap();
        assert!(err <= 1e-5, "error {err}");
        let ch = res.channel.expect("CPT output");
        assert!(ch.as_map().trace_preservation_defect() <= 1e-7);
    }

    #[test]
    fn cpt_fit_conic_agrees() {
        let mut rng = seeded(82);
        let (prep, _, y) = setup(2, 2, 8, 82);
        let y = add_noise(&y, 0.05, &mut rng).unwrap();
        let fast = prep.cpt_fit(&y, &SolverConfig::default()).unwrap();
        let conic = prep.cpt_fit_conic(&y, &SolverConfig::default()).unwrap();
        assert!((fast.residual - conic.residual).abs() < 1e-5, "{} vs {}", fast.residual, conic.residual);
    }

    #[test]
    fn trace_norm_constrained_recovers_rank_one() {
        let (prep, t, y) = setup(2, 1, 20, 83);
        let res = prep.trace_norm_min(&y, default_eta(0.0), true, &SolverConfig::default()).unwrap();
        let err = reconstruction_error(&res.estimate, t.as_map(), 2.0).unwrap();
        assert!(err <= 1e-5, "error {err}");
        assert!((res.objective - 2.0).abs() < 1e-6);
    }

    #[test]
    fn diamond_norm_constrained_recovers_rank_one() {
        let (prep, t, y) = setup(2, 1, 20, 84);
        let res = prep.diamond_norm_min(&y, default_eta(0.0), true, &SolverConfig::default()).unwrap();
        let err = reconstruction_error(&res.estimate, t.as_map(), 2.0).unwrap();
        assert!(err <= 1e-5, "error {err}");
        assert!((res.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn huge_eta_gives_zero() {
        let (prep, _, y) = setup(2, 1, 6, 85);
        let eta = norm(&y.values) * 1.01;
        let res = prep.trace_norm_min(&y, eta, false, &SolverConfig::default()).unwrap();
        assert!(res.objective.abs() < 1e-6);
        assert!(res.estimate.choi().frobenius_norm() < 1e-6);
    }

    #[test]
    fn infeasible_eta_is_rejected() {
        // Overdetermined for trace-preserving maps: 13 > n⁴ − n² = 12.
        let mut rng = seeded(86);
        let (prep, _, y) = setup(2, 1, 13, 86);
        let noisy = add_noise(&y, 0.1, &mut rng).unwrap();
        let err = prep.trace_norm_min(&noisy, 1e-6, true, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }), "{err:?}");
        assert!(prep.min_residual(&y, true).unwrap() < 1e-12);
    }

    #[test]
    fn block_and_split_forms_agree() {
        let mut rng = seeded(87);
        let (prep, _, y) = setup(2, 2, 10, 87);
        let y = add_noise(&y, 0.02, &mut rng).unwrap();
        let cfg = SolverConfig::default();
        for method in [Method::TraceNorm, Method::TraceNormConstrained, Method::DiamondNorm, Method::DiamondNormConstrained] {
            let a = prep.norm_min_with(&y, 0.02, method, Formulation::Split, &cfg).unwrap();
            let b = prep.norm_min_with(&y, 0.02, method, Formulation::Block, &cfg).unwrap();
            assert!((a.objective - b.objective).abs() < 1e-5 * (1.0 + a.objective), "{method}: {} vs {}", a.objective, b.objective);
        }
    }

    #[test]
    fn diamond_norm_of_channels() {
        let mut rng = seeded(88);
        for (n, r) in [(2, 1), (2, 4), (3, 2)] {
            let t = random_rank_r_channel(n, r, &mut rng).unwrap();
            let v = diamond_norm(t.as_map(), &SolverConfig::default()).unwrap();
            assert!((v.value - 1.0).abs() < 1e-6, "n={n} r={r}: {}", v.value);
            let v2 = diamond_norm(&t.as_map().scale(2.0), &SolverConfig::default()).unwrap();
            assert!((v2.value - 2.0).abs() < 2e-6);
        }
    }

    /// `id − U_θ` with `U_θ = exp(−iθσ_z/2)`, against a grid over the Bloch
    /// ball of input states purified by one ancilla qubit.
    #[test]
    fn diamond_norm_against_grid() {
        let theta = 0.9f64;
        let u = ComplexMatrix::from_fn(2, 2, |i, j| {
            if i != j {
                C64::new(0.0, 0.0)
            } else {
                C64::from_polar(1.0, if i == 0 { -theta / 2.0 } else { theta / 2.0 })
            }
        });
        let delta = identity_channel(2).as_map().sub(unitary_channel(&u).unwrap().as_map()).unwrap();
        let value = diamond_norm(&delta, &SolverConfig::default()).unwrap().value;
        let j = delta.choi().matrix();
        let mut best: f64 = 0.0;
        let steps = 60;
        for it in 0..=steps {
            let th = std::f64::consts::PI * it as f64 / steps as f64;
            for ip in 0..steps {
                let ph = 2.0 * std::f64::consts::PI * ip as f64 / steps as f64;
                for ir in 0..=10 {
                    let r = ir as f64 / 10.0;
                    let bloch = [r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()];
                    let rho = HermitianOperator::new(ComplexMatrix::from_vec(
                        2,
                        2,
                        vec![
                            C64::new(0.5 * (1.0 + bloch[2]), 0.0),
                            C64::new(0.5 * bloch[0], -0.5 * bloch[1]),
                            C64::new(0.5 * bloch[0], 0.5 * bloch[1]),
                            C64::new(0.5 * (1.0 - bloch[2]), 0.0),
                        ],
                    )
                    .unwrap())
                    .unwrap();
                    let sq = crate::linalg::herm_eig(&rho).unwrap().reassemble(|l| l.max(0.0).sqrt());
                    let k = crate::linalg::tensor_product(&ComplexMatrix::identity(2), &sq.matrix().transpose());
                    let out = HermitianOperator::hermitian_part(&k.matmul(j).matmul(&k));
                    best = best.max(schatten_norm_herm(&out, Schatten::One).unwrap());
                }
            }
        }
        assert!((value - best).abs() < 1e-3, "{value} vs grid {best}");
        assert!((value - 2.0 * (theta / 2.0).sin()).abs() < 1e-5);
    }

    #[test]
    fn error_metric() {
        let mut rng = seeded(89);
        let a = random_rank_r_channel(2, 2, &mut rng).unwrap();
        let b = random_rank_r_channel(2, 2, &mut rng).unwrap();
        assert_eq!(reconstruction_error(a.as_map(), a.as_map(), 2.0).unwrap(), 0.0);
        let e1 = reconstruction_error(a.as_map(), b.as_map(), 1.0).unwrap();
        let e2 = reconstruction_error(a.as_map(), b.as_map(), 2.0).unwrap();
        assert!(e1 >= e2);
        assert!(reconstruction_error(a.as_map(), b.as_map(), 3.0).is_err());
    }

    #[test]
    fn result_json_fields() {
        let (prep, t, y) = setup(2, 1, 12, 90);
        let res = prep.cpt_fit(&y, &SolverConfig::default()).unwrap();
        let v = res.to_json(Some(t.as_map())).unwrap();
        for key in ["method", "eta", "status", "objective", "residual", "error_vs_truth", "wall_ms", "channel"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["method"], "cpt-fit");
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let (prep, _, y) = setup(2, 1, 6, 91);
        let short = y.prefix(3);
        assert!(prep.cpt_fit(&short, &SolverConfig::default()).is_err());
    }
}
