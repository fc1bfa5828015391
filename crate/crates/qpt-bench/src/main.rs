use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qpt_bench::experiments::{check_failure_cap, run};
use qpt_bench::spec::{ExperimentKind, ExperimentSpec, OutputFormat, Protocol, Target};
use qpt_bench::BenchError;
use qpt_core::measurements::EnsembleKind;
use qpt_core::reconstruct::Method;

/// Runs a process-tomography experiment and writes its result table.
#[derive(Debug, Parser)]
#[command(name = "qpt", version)]
struct Cli {
    /// success_rate, rank_phase, noise_sweep, mismatch_sweep, observable_rank,
    /// pauli_compare, sample_complexity or verify_moments.
    experiment: String,
    /// JSON file overriding the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Kraus rank of random targets; a list sets the rank_phase grid.
    #[arg(long, value_delimiter = ',')]
    rank: Option<Vec<usize>>,
    /// Single number of settings.
    #[arg(long, conflicts_with = "m_grid")]
    m: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    m_grid: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    /// cpt-fit, tn, tn-c, dn or dn-c (comma separated).
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// generic, pauli or circuit.
    #[arg(long)]
    ensemble: Option<String>,
    /// Noise strengths ‖e‖₂.
    #[arg(long, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    /// Depolarizing weights λ.
    #[arg(long, value_delimiter = ',')]
    mismatch: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    rank_a: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// iid or uniform.
    #[arg(long)]
    protocol: Option<String>,
    /// random, random-unitary or toffoli (comma separated).
    #[arg(long, value_delimiter = ',')]
    target: Option<Vec<String>>,
    /// Output file; standard output by default.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, BenchError> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| BenchError::Spec(format!("invalid {what} '{s}'")))
}

fn build_spec(cli: Cli) -> Result<ExperimentSpec, BenchError> {
    let kind: ExperimentKind = cli.experiment.parse()?;
    let mut spec = match &cli.config {
        Some(path) => ExperimentSpec::load(kind, path)?,
        None => ExperimentSpec::defaults(kind),
    };
    if spec.experiment != kind {
        return Err(BenchError::Spec(format!("config is for {}, not {kind}", spec.experiment)));
    }
    if let Some(n) = cli.n {
        spec.n = n;
    }
    if let Some(r) = cli.rank {
        if kind == ExperimentKind::RankPhase {
            spec.rank_grid = r;
        } else if let [one] = r[..] {
            spec.rank = one;
        } else {
            return Err(BenchError::Spec("--rank takes a single value outside rank_phase".into()));
        }
    }
    if let Some(m) = cli.m {
        spec.m_grid = vec![m];
    }
    if let Some(g) = cli.m_grid {
        spec.m_grid = g;
    }
    if let Some(t) = cli.trials {
        spec.trials = t;
    }
    if let Some(ms) = cli.method {
        spec.methods = ms.iter().map(|s| s.parse::<Method>()).collect::<Result<_, _>>().map_err(|e| BenchError::Spec(e.to_string()))?;
    }
    if let Some(e) = cli.ensemble {
        spec.ensemble = e.parse::<EnsembleKind>().map_err(|e| BenchError::Spec(e.to_string()))?;
    }
    if let Some(v) = cli.noise {
        spec.noise_grid = v;
    }
    if let Some(v) = cli.mismatch {
        spec.mismatch_grid = v;
    }
    if let Some(v) = cli.rank_a {
        spec.rank_a_grid = v;
    }
    if let Some(v) = cli.shots {
        spec.shots_grid = v;
    }
    if cli.eta.is_some() {
        spec.eta = cli.eta;
    }
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(t) = cli.threshold {
        spec.threshold = t;
    }
    if let Some(p) = cli.protocol {
        spec.protocol = parse_json::<Protocol>("protocol", &p)?;
    }
    if let Some(ts) = cli.target {
        spec.targets = ts.iter().map(|t| parse_json::<Target>("target", t)).collect::<Result<_, _>>()?;
    }
    if cli.out.is_some() {
        spec.output = cli.out;
    }
    if let Some(f) = cli.format {
        spec.format = f.parse::<OutputFormat>()?;
    }
    spec.validate()?;
    Ok(spec)
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    let spec = build_spec(cli)?;
    let result = run(&spec)?;
    let text = result.render(spec.format)?;
    match &spec.output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    check_failure_cap(&result)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
