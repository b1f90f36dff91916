//! Command-line front end for the experiment pipelines.
//!
//! Every subcommand writes its table to stdout in the selected format. With
//! `--out DIR` it also writes `DIR/<command>.csv` (the table) and
//! `DIR/<command>.json` (a summary echoing the config, seed and version).
//! Nothing time- or host-dependent is ever written, so a fixed seed gives
//! byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dfsmem::experiments::pipelines::{
    read_binomial_csv, write_calibration_csv, write_fidelity_matrix_csv, write_parity_csv, write_storage_csv,
};
use dfsmem::experiments::{
    load_config, mle_fit_exponential, run_detection_calibration, run_gate_design, run_parity_scan, run_prep_fidelity,
    run_storage_scan, ExperimentConfig,
};
use dfsmem::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "dfsmem", version, about = "Trapped-ion DFS quantum-memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for `<command>.csv` and `<command>.json`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Format written to stdout.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Prepare the target logical Bell state with gate noise and estimate its fidelity.
    PrepFidelity,
    /// Storage-lifetime scan over the configured schedule.
    Storage,
    /// Parity oscillation of a first- or second-order DFS state.
    Parity,
    /// Phase-modulated gate design and pairwise fidelity matrix.
    GateDesign,
    /// Exponential MLE fit of a storage CSV.
    Fit {
        /// CSV with `time_s`, `successes` and `trials` columns.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Monte-Carlo assignment accuracies of the detection protocol.
    DetectCalib,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::PrepFidelity => "prep-fidelity",
            Command::Storage => "storage",
            Command::Parity => "parity",
            Command::GateDesign => "gate-design",
            Command::Fit { .. } => "fit",
            Command::DetectCalib => "detect-calib",
        }
    }
}

/// Rendered output of one run.
struct Output {
    csv: String,
    result: Value,
}

fn csv_string(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

fn key_value_csv(pairs: &[(&str, String)]) -> Result<String> {
    csv_string(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(pairs.iter().map(|p| p.0))?;
        w.write_record(pairs.iter().map(|p| p.1.as_str()))?;
        w.flush()?;
        Ok(())
    })
}

fn run_command(cmd: &Command, cfg: &ExperimentConfig) -> Result<Output> {
    match cmd {
        Command::PrepFidelity => {
            let r = run_prep_fidelity(cfg)?;
            let e = &r.estimate;
            let csv = key_value_csv(&[
                ("target", r.target.clone()),
                ("p1", r.p1.to_string()),
                ("p2", r.p2.to_string()),
                ("shots", cfg.run.prep_shots.to_string()),
                ("fidelity", e.fidelity.value.to_string()),
                ("fidelity_stderr", e.fidelity.stderr.to_string()),
                ("o1", e.o1.value.to_string()),
                ("o2", e.o2.value.to_string()),
                ("o3", e.o3.value.to_string()),
                ("exact_fidelity", r.exact_fidelity.to_string()),
            ])?;
            Ok(Output { csv, result: serde_json::to_value(&r)? })
        }
        Command::Storage => {
            let rows = run_storage_scan(cfg)?;
            let csv = csv_string(|b| write_storage_csv(b, &rows))?;
            let data: Vec<_> = rows.iter().map(|r| r.binomial()).collect();
            let fit = match mle_fit_exponential(&data) {
                Ok(f) => json!({ "fit": f }),
                Err(e) => json!({ "fit_error": e.to_string() }),
            };
            Ok(Output { csv, result: json!({ "rows": rows, "lifetime": fit }) })
        }
        Command::Parity => {
            let scan = run_parity_scan(cfg)?;
            let csv = csv_string(|b| write_parity_csv(b, &scan.rows))?;
            Ok(Output { csv, result: serde_json::to_value(&scan)? })
        }
        Command::GateDesign => {
            let report = run_gate_design(cfg)?;
            let csv = csv_string(|b| write_fidelity_matrix_csv(b, &cfg.gate.ions, &report.fidelities))?;
            Ok(Output { csv, result: serde_json::to_value(&report)? })
        }
        Command::Fit { input } => {
            let file = fs::File::open(input)?;
            let data = read_binomial_csv(file)?;
            let f = mle_fit_exponential(&data)?;
            let csv = key_value_csv(&[
                ("a", f.a.to_string()),
                ("tau", f.tau.to_string()),
                ("tau_lower", f.ci68.0.to_string()),
                ("tau_upper", f.ci68.1.to_string()),
                ("loglik", f.loglik.to_string()),
                ("n_points", f.n_points.to_string()),
                ("upper_unbounded", f.upper_unbounded.to_string()),
            ])?;
            Ok(Output { csv, result: serde_json::to_value(&f)? })
        }
        Command::DetectCalib => {
            let rows = run_detection_calibration(cfg)?;
            let csv = csv_string(|b| write_calibration_csv(b, &rows))?;
            Ok(Output { csv, result: serde_json::to_value(&rows)? })
        }
    }
}

fn summary(cmd: &Command, cfg: &ExperimentConfig, result: Value) -> Result<String> {
    let mut meta = json!({
        "tool": "dfsmem",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cmd.name(),
        "seed": cfg.run.seed,
    });
    if let Command::Fit { input } = cmd {
        meta["input"] = json!(input.display().to_string());
    }
    let doc = json!({ "run": meta, "config": serde_json::to_value(cfg)?, "result": result });
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let cfg = load(cli.config.as_deref(), cli.seed)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if cfg.run.threads > 0 {
        pool = pool.num_threads(cfg.run.threads);
    }
    let pool = pool.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let out = pool.install(|| run_command(&cli.command, &cfg))?;
    let json_text = summary(&cli.command, &cfg, out.result)?;
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        let name = cli.command.name();
        fs::write(dir.join(format!("{name}.csv")), &out.csv)?;
        fs::write(dir.join(format!("{name}.json")), &json_text)?;
    }
    let text = match cli.format {
        Format::Csv => &out.csv,
        Format::Json => &json_text,
    };
    stdout.write_all(text.as_bytes())?;
    Ok(())
}

/// Exit code for a failed run: 2 for solver and fit failures, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
