//! Experiment commands behind the `aspis` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aspis_core::analysis::{
    brute_force_cmax, check_brute_force_bound, epsilon_aspis_optimal, epsilon_aspis_weak, epsilon_baseline, epsilon_detox,
    measure_epsilon, EpsilonRecord,
};
use aspis_core::attacks::{default_disagreement_set, optimal_plan, weak_plan};
use aspis_core::detection::enumerate_maximum_cliques;
use aspis_core::training::{run_training, TrainingConfig, TrainingOutcome};
use aspis_core::{AggregatorKind, AttackMode, AttackSpec, ClusterParams, DistortionMethod, WorkerSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] aspis_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    /// A verification found a disagreement; the report was still written.
    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    /// 1 for verification mismatches, 2 for usage and configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Mismatch(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(CliError::Usage(format!("unknown format `{other}`, expected csv or json"))),
        }
    }
}

/// Serializes rows as CSV (header included even with no rows) or a JSON array.
pub fn render<T: Serialize>(rows: &[T], header: &[&str], format: Format) -> Result<String> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(rows)?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(header)?;
            for row in rows {
                w.serialize(row)?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

/// Writes to `out`, or stdout when absent.
pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
    }
}

/// One line of the distortion-fraction tables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    #[serde(rename = "K")]
    pub workers: usize,
    pub r: usize,
    pub q: usize,
    pub scheme: String,
    pub mode: String,
    pub corrupted: u64,
    pub epsilon: String,
}

pub const TABLE_HEADER: [&str; 7] = ["K", "r", "q", "scheme", "mode", "corrupted", "epsilon"];

impl From<EpsilonRecord> for TableRow {
    fn from(rec: EpsilonRecord) -> Self {
        TableRow {
            workers: rec.workers,
            r: rec.r,
            q: rec.q,
            scheme: rec.scheme.as_str().to_string(),
            mode: rec.mode.as_str().to_string(),
            corrupted: rec.corrupted,
            epsilon: rec.rounded(),
        }
    }
}

/// Cluster shapes of the reference comparison tables.
pub const DEFAULT_TABLE_CONFIGS: [(usize, usize); 3] = [(15, 3), (21, 3), (24, 3)];

/// Closed-form rows for every `(K, r)` and every `q` in `qs` (default
/// `2..=(K-1)/2`). Per `q`: the subset scheme under both attacks, the
/// baseline once, and the group scheme under both attacks when `r | K`.
pub fn table_rows(configs: &[(usize, usize)], qs: Option<&[usize]>) -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    for &(k, r) in configs {
        let default: Vec<usize> = (2..=k.saturating_sub(1) / 2).collect();
        for &q in qs.unwrap_or(&default) {
            let params = ClusterParams::new(k, r, q)?;
            rows.push(epsilon_aspis_optimal(params).into());
            rows.push(epsilon_aspis_weak(params).into());
            rows.push(epsilon_baseline(params, AttackMode::Optimal).into());
            if k % r == 0 {
                rows.push(epsilon_detox(params, AttackMode::Optimal)?.into());
                rows.push(epsilon_detox(params, AttackMode::Weak)?.into());
            }
        }
    }
    Ok(rows)
}

/// Oracle versus closed form for one `(K, q)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmaxRow {
    #[serde(rename = "K")]
    pub workers: usize,
    pub r: usize,
    pub q: usize,
    pub oracle: u64,
    pub formula: u64,
    pub status: String,
}

pub const CMAX_HEADER: [&str; 6] = ["K", "r", "q", "oracle", "formula", "status"];

/// Runs the exhaustive oracle for every `K` in `r..=max_k` and every
/// admissible `q`. Instances beyond the oracle's bound abort the command.
pub fn verify_cmax_rows(max_k: usize, r: usize) -> Result<Vec<CmaxRow>> {
    for k in r..=max_k {
        for q in 0..=(k - 1) / 2 {
            check_brute_force_bound(ClusterParams::new(k, r, q)?)?;
        }
    }
    let mut rows = Vec::new();
    for k in r..=max_k {
        for q in 0..=(k - 1) / 2 {
            let params = ClusterParams::new(k, r, q)?;
            let oracle = brute_force_cmax(params)?;
            let formula = epsilon_aspis_optimal(params).corrupted;
            rows.push(CmaxRow {
                workers: k,
                r,
                q,
                oracle,
                formula,
                status: if oracle == formula { "match" } else { "MISMATCH" }.to_string(),
            });
        }
    }
    Ok(rows)
}

/// Default adversaries: the first `q` workers.
pub fn attack_spec(mode: AttackMode) -> AttackSpec {
    AttackSpec::new(mode, DistortionMethod::default())
}

pub fn measure(params: ClusterParams, mode: AttackMode, aggregator: AggregatorKind, seed: u64) -> Result<TableRow> {
    Ok(measure_epsilon(params, &attack_spec(mode), aggregator, seed)?.into())
}

/// Timing of the maximum-clique search on one attack-induced graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "K")]
    pub workers: usize,
    pub r: usize,
    pub q: usize,
    pub mode: String,
    pub trials: usize,
    pub cliques: usize,
    pub clique_size: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
}

pub const BENCH_HEADER: [&str; 10] = [
    "K", "r", "q", "mode", "trials", "cliques", "clique_size", "min_ms", "median_ms", "max_ms",
];

/// Builds the agreement graph the attack induces (first `q` workers as
/// adversaries) and times `trials` maximum-clique enumerations. No row is
/// produced for zero trials.
pub fn clique_bench(params: ClusterParams, mode: AttackMode, trials: usize) -> Result<Vec<BenchRow>> {
    if trials == 0 {
        return Ok(Vec::new());
    }
    let adversaries = WorkerSet::first(params.adversaries());
    let method = DistortionMethod::default();
    let plan = match mode {
        AttackMode::Weak => weak_plan(params, adversaries, method)?,
        AttackMode::Optimal => {
            optimal_plan(params, adversaries, default_disagreement_set(params, adversaries), method)?
        }
    };
    let graph = plan.induced_agreement_graph(params);
    let mut times = Vec::with_capacity(trials);
    let mut cliques = Vec::new();
    for _ in 0..trials {
        let start = Instant::now();
        cliques = enumerate_maximum_cliques(&graph, params.adversaries());
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let median = if trials % 2 == 1 {
        times[trials / 2]
    } else {
        (times[trials / 2 - 1] + times[trials / 2]) / 2.0
    };
    Ok(vec![BenchRow {
        workers: params.workers(),
        r: params.redundancy(),
        q: params.adversaries(),
        mode: mode.as_str().to_string(),
        trials,
        cliques: cliques.len(),
        clique_size: cliques.first().map_or(0, |c| c.len()),
        min_ms: times[0],
        median_ms: median,
        max_ms: times[trials - 1],
    }])
}

pub const SUMMARY_HEADER: [&str; 14] = [
    "aggregator",
    "scheme",
    "mode",
    "K",
    "r",
    "q",
    "iterations",
    "initial_loss",
    "final_loss",
    "max_corrupted",
    "files",
    "detected_rounds",
    "ambiguous_rounds",
    "seed",
];

pub fn load_training_config(path: &Path) -> Result<TrainingConfig> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config: TrainingConfig = serde_json::from_str(&text).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })?;
    config.validate()?;
    Ok(config)
}

/// Runs training and writes `history.jsonl` and `summary.csv` into `out_dir`.
pub fn train(config: &TrainingConfig, out_dir: &Path) -> Result<TrainingOutcome> {
    let outcome = run_training(config)?;
    fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let history = out_dir.join("history.jsonl");
    fs::write(&history, outcome.history.to_jsonl()).map_err(|source| CliError::Io { path: history, source })?;
    let summary = summary_csv(&outcome, config.seed)?;
    let path = out_dir.join("summary.csv");
    fs::write(&path, summary).map_err(|source| CliError::Io { path, source })?;
    Ok(outcome)
}

pub fn summary_csv(outcome: &TrainingOutcome, seed: u64) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    let s = &outcome.summary;
    w.write_record([
        s.aggregator.as_str().to_string(),
        s.scheme.as_str().to_string(),
        s.mode.as_str().to_string(),
        s.workers.to_string(),
        s.r.to_string(),
        s.q.to_string(),
        s.iterations.to_string(),
        s.initial_loss.to_string(),
        s.final_loss.to_string(),
        s.max_corrupted.to_string(),
        s.files.to_string(),
        s.detected_rounds.to_string(),
        s.ambiguous_rounds.to_string(),
        seed.to_string(),
    ])?;
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
