use std::path::PathBuf;
use std::process::ExitCode;

use aspis_tools::*;
use aspis_core::{AggregatorKind, AttackMode, ClusterParams};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aspis", about = "Redundant-assignment Byzantine resilience experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form distortion fractions for every scheme.
    Tables {
        /// Cluster size; with --r, replaces the three default configurations.
        #[arg(long = "K", requires = "r")]
        k: Option<usize>,
        #[arg(long, requires = "k")]
        r: Option<usize>,
        /// Only this number of adversaries.
        #[arg(long)]
        q: Option<usize>,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive c_max oracle against the closed form, for every K up to --K.
    VerifyCmax {
        #[arg(long = "K", default_value_t = 9)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        r: usize,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corrupted files after one simulated round.
    Measure {
        #[arg(long = "K")]
        k: usize,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        q: usize,
        #[arg(long, default_value = "optimal")]
        attack: AttackMode,
        #[arg(long, default_value = "aspis")]
        aggregator: AggregatorKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a training config; writes history.jsonl and summary.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "train_out")]
        out: PathBuf,
        /// Overrides the config's sampler seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Times maximum-clique enumeration on an attack-induced agreement graph.
    CliqueBench {
        #[arg(long = "K", default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        r: usize,
        #[arg(long)]
        q: usize,
        #[arg(long, default_value = "weak")]
        attack: AttackMode,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tables { k, r, q, format, out } => {
            let configs = match (k, r) {
                (Some(k), Some(r)) => vec![(k, r)],
                _ => DEFAULT_TABLE_CONFIGS.to_vec(),
            };
            let qs = q.map(|q| vec![q]);
            let rows = table_rows(&configs, qs.as_deref())?;
            emit(&render(&rows, &TABLE_HEADER, format)?, out.as_deref())
        }
        Command::VerifyCmax { k, r, format, out } => {
            let rows = verify_cmax_rows(k, r)?;
            emit(&render(&rows, &CMAX_HEADER, format)?, out.as_deref())?;
            let bad = rows.iter().filter(|row| row.status != "match").count();
            if bad > 0 {
                return Err(CliError::Mismatch(format!("{bad} oracle mismatches")));
            }
            Ok(())
        }
        Command::Measure { k, r, q, attack, aggregator, seed, format, out } => {
            let row = measure(ClusterParams::new(k, r, q)?, attack, aggregator, seed)?;
            emit(&render(&[row], &TABLE_HEADER, format)?, out.as_deref())
        }
        Command::Train { config, out, seed } => {
            let mut cfg = load_training_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let outcome = train(&cfg, &out)?;
            eprintln!(
                "{} iterations, final held-out loss {}",
                outcome.summary.iterations, outcome.summary.final_loss
            );
            Ok(())
        }
        Command::CliqueBench { k, r, q, attack, trials, format, out } => {
            let rows = clique_bench(ClusterParams::new(k, r, q)?, attack, trials)?;
            emit(&render(&rows, &BENCH_HEADER, format)?, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn root() -> &'static Path {
        Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
    }

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("aspis-{name}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    /// Exit code the binary would return for these arguments.
    fn exit_code(args: &[&str]) -> i32 {
        let argv = std::iter::once("aspis").chain(args.iter().copied());
        match Cli::try_parse_from(argv) {
            Err(e) => e.exit_code(),
            Ok(cli) => run(cli).map_or_else(|e| e.exit_code(), |()| 0),
        }
    }

    fn run_to_file(name: &str, args: &[&str]) -> String {
        let path = scratch(name).join("out");
        let mut all: Vec<&str> = args.to_vec();
        let p = path.to_str().unwrap().to_string();
        all.extend(["--out", &p]);
        assert_eq!(exit_code(&all), 0);
        std::fs::read_to_string(path).unwrap()
    }

    #[test]
    fn default_tables_have_every_row() {
        let text = run_to_file("tables", &["tables"]);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("K,r,q,scheme,mode,corrupted,epsilon"));
        // q = 2..7, 2..10, 2..11 with five rows each
        assert_eq!(lines.count(), (6 + 9 + 10) * 5);
        assert!(text.contains("24,3,11,aspis,optimal,770,0.38\n"));
        assert!(text.contains("21,3,10,detox,weak,3,0.429\n"));
    }

    #[test]
    fn sample_config_reproduces_golden_summary() {
        let dir = scratch("golden");
        let config = root().join("configs/sample_train.json");
        assert_eq!(exit_code(&["train", "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()]), 0);
        let got = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
        let golden = std::fs::read_to_string(root().join("configs/sample_train.summary.csv")).unwrap();
        assert_eq!(got, golden);
        let history = std::fs::read_to_string(dir.join("history.jsonl")).unwrap();
        assert_eq!(history.lines().count(), 90);
    }

    #[test]
    fn missing_config_exits_with_two() {
        assert_eq!(exit_code(&["train", "--config", "/nonexistent/config.json"]), 2);
    }

    #[test]
    fn adversary_bound_is_named() {
        let dir = scratch("bound");
        let config = dir.join("bad.json");
        std::fs::write(&config, r#"{"params":{"K":10,"r":3,"q":5},"batch":200,"epochs":1}"#).unwrap();
        let err = load_training_config(&config).unwrap_err();
        assert!(err.to_string().contains("q < K/2"), "{err}");
        assert_eq!(exit_code(&["train", "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()]), 2);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(exit_code(&["measure", "--K", "15"]), 2);
        assert_eq!(exit_code(&["measure", "--K", "15", "--r", "3", "--q", "2", "--attack", "bogus"]), 2);
        assert_eq!(exit_code(&["tables", "--K", "15", "--r", "4"]), 2);
        assert_eq!(exit_code(&["tables", "--format", "xml"]), 2);
    }

    #[test]
    fn oracle_refusal_exits_with_two() {
        assert_eq!(exit_code(&["verify-cmax", "--K", "13"]), 2);
    }

    #[test]
    fn verify_cmax_small_range_matches() {
        let text = run_to_file("cmax", &["verify-cmax", "--K", "7"]);
        assert!(text.lines().skip(1).all(|l| l.ends_with(",match")));
        assert!(text.contains("7,3,3,10,10,match"));
    }

    #[test]
    fn clique_bench_zero_trials_is_header_only() {
        let text = run_to_file("bench", &["clique-bench", "--q", "5", "--trials", "0"]);
        assert_eq!(text, "K,r,q,mode,trials,cliques,clique_size,min_ms,median_ms,max_ms\n");
    }

    #[test]
    fn measure_reports_closed_form_count() {
        let text = run_to_file("measure", &["measure", "--K", "21", "--r", "3", "--q", "6", "--attack", "weak"]);
        assert_eq!(text, "K,r,q,scheme,mode,corrupted,epsilon\n21,3,6,aspis,weak,20,0.015\n");
    }
}
