//! Experiment specifications: per-experiment defaults, JSON config overlay and
//! validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qpt_core::conic::SolverConfig;
use qpt_core::measurements::EnsembleKind;
use qpt_core::reconstruct::Method;
use serde::{Deserialize, Serialize};

use crate::error::{spec_error, BenchError};

/// Experiment families of the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SuccessRate,
    RankPhase,
    NoiseSweep,
    MismatchSweep,
    ObservableRank,
    PauliCompare,
    SampleComplexity,
    VerifyMoments,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::SuccessRate,
        ExperimentKind::RankPhase,
        ExperimentKind::NoiseSweep,
        ExperimentKind::MismatchSweep,
        ExperimentKind::ObservableRank,
        ExperimentKind::PauliCompare,
        ExperimentKind::SampleComplexity,
        ExperimentKind::VerifyMoments,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SuccessRate => "success_rate",
            ExperimentKind::RankPhase => "rank_phase",
            ExperimentKind::NoiseSweep => "noise_sweep",
            ExperimentKind::MismatchSweep => "mismatch_sweep",
            ExperimentKind::ObservableRank => "observable_rank",
            ExperimentKind::PauliCompare => "pauli_compare",
            ExperimentKind::SampleComplexity => "sample_complexity",
            ExperimentKind::VerifyMoments => "verify_moments",
        }
    }

    /// Stable index used as the first seed sub-stream coordinate.
    pub fn stream_id(self) -> u64 {
        Self::ALL.iter().position(|&k| k == self).expect("listed") as u64
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| spec_error(format!("unknown experiment '{s}'")))
    }
}

/// Whether each trial draws a fresh ensemble or one ensemble serves all trials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Fresh ensemble per trial.
    Iid,
    /// One ensemble drawn once; smaller `m` use its first `m` settings.
    Uniform,
}

/// Target channel family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// Random channel of Kraus rank `rank`.
    Random,
    /// Haar-random unitary channel.
    RandomUnitary,
    /// Three-qubit Toffoli gate (`n = 8`).
    Toffoli,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Random => "random",
            Target::RandomUnitary => "random-unitary",
            Target::Toffoli => "toffoli",
        }
    }
}

/// Output encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(spec_error(format!("unknown format '{s}' (expected csv or json)"))),
        }
    }
}

/// Checks available to `verify_moments`.
pub const MOMENT_CHECKS: [&str; 5] = ["s4", "tn_bound", "moment2", "moment4", "moment2_mutant"];

/// Full description of one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    /// Hilbert-space dimension.
    pub n: usize,
    /// Kraus rank of random targets.
    pub rank: usize,
    pub m_grid: Vec<usize>,
    /// Kraus ranks swept by `rank_phase`.
    pub rank_grid: Vec<usize>,
    /// Observable ranks; the first entry is used outside `observable_rank`.
    pub rank_a_grid: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<Method>,
    /// Noise strengths `‖e‖₂`.
    pub noise_grid: Vec<f64>,
    /// Depolarizing mixture weights `λ`.
    pub mismatch_grid: Vec<f64>,
    pub ensemble: EnsembleKind,
    /// Layers of the random circuits of the `circuit` ensemble.
    pub circuit_depth: usize,
    /// Shots per setting for `sample_complexity`.
    pub shots_grid: Vec<usize>,
    pub seed: u64,
    /// Success means `‖J(T̂) − J(T₀)‖_F ≤ threshold`.
    pub threshold: f64,
    /// Fixed `η`; by default `‖e‖₂ + 10·ε`.
    pub eta: Option<f64>,
    pub protocol: Protocol,
    pub targets: Vec<Target>,
    /// Checks run by `verify_moments`.
    pub checks: Vec<String>,
    /// Monte Carlo samples per moment check.
    pub samples: usize,
    /// Largest tolerated fraction of failed solves before exit code 3.
    pub failure_cap: f64,
    pub solver: SolverConfig,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

fn grid(start: f64, step: f64, count: usize) -> Vec<f64> {
    // Rounded so that grid values print exactly as written.
    (0..count).map(|k| ((start + step * k as f64) * 1e9).round() / 1e9).collect()
}

impl ExperimentSpec {
    /// Defaults reproducing the protocol of each experiment.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            n: 4,
            rank: 2,
            m_grid: vec![],
            rank_grid: vec![],
            rank_a_grid: vec![],
            trials: 10,
            methods: vec![Method::CptFit],
            noise_grid: vec![0.0],
            mismatch_grid: vec![0.0],
            ensemble: EnsembleKind::Generic,
            circuit_depth: 4,
            shots_grid: vec![100, 1000, 10_000],
            seed: 0,
            threshold: 1e-5,
            eta: None,
            protocol: Protocol::Iid,
            targets: vec![Target::Random],
            checks: vec![],
            samples: 100_000,
            failure_cap: 0.2,
            solver: SolverConfig::default(),
            output: None,
            format: OutputFormat::Csv,
        };
        match kind {
            ExperimentKind::SuccessRate => Self {
                m_grid: vec![16, 40, 80, 120, 160, 200, 252],
                trials: 50,
                methods: vec![Method::CptFit, Method::TraceNormConstrained, Method::DiamondNormConstrained],
                ..base
            },
            ExperimentKind::RankPhase => Self {
                rank_grid: vec![1, 2, 4, 8, 16],
                m_grid: (1..=9).map(|k| 28 * k).collect(),
                trials: 20,
                ..base
            },
            ExperimentKind::NoiseSweep => Self {
                n: 8,
                m_grid: vec![320],
                noise_grid: grid(0.01, 0.01, 10),
                methods: vec![Method::CptFit, Method::TraceNormConstrained, Method::DiamondNormConstrained],
                protocol: Protocol::Uniform,
                targets: vec![Target::Toffoli],
                ..base
            },
            ExperimentKind::MismatchSweep => Self {
                n: 8,
                m_grid: vec![320],
                mismatch_grid: grid(0.0, 0.05, 11),
                trials: 1,
                methods: vec![Method::CptFit, Method::TraceNormConstrained],
                protocol: Protocol::Uniform,
                targets: vec![Target::Toffoli],
                ..base
            },
            ExperimentKind::ObservableRank => Self {
                n: 8,
                m_grid: vec![320],
                rank_a_grid: (1..=8).collect(),
                noise_grid: vec![0.1],
                trials: 20,
                targets: vec![Target::Toffoli],
                ..base
            },
            ExperimentKind::PauliCompare => Self {
                n: 8,
                m_grid: vec![160, 200, 240, 280, 320],
                trials: 30,
                methods: vec![Method::TraceNorm, Method::TraceNormConstrained],
                targets: vec![Target::RandomUnitary, Target::Toffoli],
                ..base
            },
            ExperimentKind::SampleComplexity => Self { n: 2, rank: 1, m_grid: vec![20], ..base },
            ExperimentKind::VerifyMoments => Self {
                n: 2,
                trials: 1000,
                checks: MOMENT_CHECKS.iter().take(4).map(|s| s.to_string()).collect(),
                ..base
            },
        }
    }

    /// Defaults for `kind` overlaid with the fields of a JSON object.
    pub fn from_json_overlay(kind: ExperimentKind, overlay: &serde_json::Value) -> Result<Self, BenchError> {
        let obj = overlay.as_object().ok_or_else(|| spec_error("config must be a JSON object"))?;
        let kind = match obj.get("experiment") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| spec_error(format!("experiment: {e}")))?,
            None => kind,
        };
        let mut merged = serde_json::to_value(Self::defaults(kind)).expect("spec serializes");
        let target = merged.as_object_mut().expect("object");
        for (k, v) in obj {
            if k == "solver" {
                let solver = target.get_mut("solver").and_then(|s| s.as_object_mut()).expect("solver object");
                let fields = v.as_object().ok_or_else(|| spec_error("solver must be a JSON object"))?;
                for (sk, sv) in fields {
                    solver.insert(sk.clone(), sv.clone());
                }
            } else {
                target.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(merged).map_err(|e| spec_error(format!("invalid config: {e}")))
    }

    /// Reads a JSON config file on top of the defaults of `kind`.
    pub fn load(kind: ExperimentKind, path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| spec_error(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| spec_error(format!("{}: {e}", path.display())))?;
        Self::from_json_overlay(kind, &value)
    }

    /// Observable rank used outside `observable_rank`.
    pub fn rank_a(&self) -> usize {
        self.rank_a_grid.first().copied().unwrap_or(self.n)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let kind = self.experiment;
        if self.n < 2 {
            return Err(spec_error("n must be at least 2"));
        }
        if self.trials == 0 {
            return Err(spec_error("trials must be at least 1"));
        }
        if !(self.threshold > 0.0) {
            return Err(spec_error("threshold must be positive"));
        }
        if !(0.0..=1.0).contains(&self.failure_cap) {
            return Err(spec_error("failure_cap must lie in [0, 1]"));
        }
        if let Some(eta) = self.eta {
            if !(eta >= 0.0) {
                return Err(spec_error("eta must be non-negative"));
            }
        }
        self.solver.validate().map_err(|e| spec_error(e.to_string()))?;
        if kind == ExperimentKind::VerifyMoments {
            if self.checks.is_empty() {
                return Err(spec_error("verify_moments needs at least one check"));
            }
            if let Some(c) = self.checks.iter().find(|c| !MOMENT_CHECKS.contains(&c.as_str())) {
                return Err(spec_error(format!("unknown check '{c}' (expected one of {MOMENT_CHECKS:?})")));
            }
            if self.samples < 2 {
                return Err(spec_error("samples must be at least 2"));
            }
            return Ok(());
        }
        if self.m_grid.is_empty() || self.m_grid.contains(&0) {
            return Err(spec_error("m_grid must be nonempty with positive entries"));
        }
        if self.methods.is_empty() {
            return Err(spec_error("methods must be nonempty"));
        }
        if self.targets.is_empty() {
            return Err(spec_error("targets must be nonempty"));
        }
        let needs_rank = kind == ExperimentKind::RankPhase || self.targets.contains(&Target::Random);
        let ranks: Vec<usize> = if kind == ExperimentKind::RankPhase { self.rank_grid.clone() } else { vec![self.rank] };
        if needs_rank && (ranks.is_empty() || ranks.iter().any(|&r| r == 0 || r > self.n * self.n)) {
            return Err(spec_error(format!("Kraus ranks must be nonempty and lie in [1, {}]", self.n * self.n)));
        }
        if self.targets.contains(&Target::Toffoli) && self.n != 8 {
            return Err(spec_error("the Toffoli target needs n = 8"));
        }
        let pauli = kind == ExperimentKind::PauliCompare
            || matches!(self.ensemble, EnsembleKind::Pauli | EnsembleKind::Circuit);
        if pauli && !self.n.is_power_of_two() {
            return Err(spec_error("Pauli and circuit ensembles need n to be a power of two"));
        }
        if self.ensemble == EnsembleKind::Circuit && self.circuit_depth == 0 {
            return Err(spec_error("circuit_depth must be at least 1"));
        }
        let rank_as = if kind == ExperimentKind::ObservableRank { self.rank_a_grid.clone() } else { vec![self.rank_a()] };
        if rank_as.is_empty() || rank_as.iter().any(|&r| r == 0 || r > self.n) {
            return Err(spec_error(format!("observable ranks must be nonempty and lie in [1, {}]", self.n)));
        }
        if self.noise_grid.is_empty() || self.noise_grid.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(spec_error("noise_grid must be nonempty and non-negative"));
        }
        if self.mismatch_grid.is_empty() || self.mismatch_grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(spec_error("mismatch_grid must be nonempty with entries in [0, 1]"));
        }
        if kind == ExperimentKind::SampleComplexity && (self.shots_grid.is_empty() || self.shots_grid.contains(&0)) {
            return Err(spec_error("shots_grid must be nonempty with positive entries"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        for kind in ExperimentKind::ALL {
            ExperimentSpec::defaults(kind).validate().unwrap_or_else(|e| panic!("{kind}: {e}"));
            assert_eq!(kind.name().parse::<ExperimentKind>().unwrap(), kind);
        }
    }

    #[test]
    fn overlay_replaces_fields() {
        let v = serde_json::json!({"n": 3, "trials": 2, "methods": ["tn-c"], "solver": {"max_iter": 10}});
        let s = ExperimentSpec::from_json_overlay(ExperimentKind::SuccessRate, &v).unwrap();
        assert_eq!((s.n, s.trials), (3, 2));
        assert_eq!(s.methods, vec![Method::TraceNormConstrained]);
        assert_eq!(s.solver.max_iter, 10);
        assert_eq!(s.solver.alpha, SolverConfig::default().alpha);
    }

    #[test]
    fn bad_specs_are_rejected() {
        let bad = [
            serde_json::json!({"unknown_field": 1}),
            serde_json::json!({"m_grid": []}),
            serde_json::json!({"trials": 0}),
            serde_json::json!({"threshold": 0.0}),
            serde_json::json!({"methods": ["nope"]}),
        ];
        for v in bad {
            let r = ExperimentSpec::from_json_overlay(ExperimentKind::SuccessRate, &v).and_then(|s| s.validate());
            assert!(r.is_err(), "{v}");
        }
        let mut s = ExperimentSpec::defaults(ExperimentKind::VerifyMoments);
        s.checks.clear();
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::defaults(ExperimentKind::RankPhase);
        s.rank_grid.clear();
        assert!(s.validate().is_err());
    }
}
