use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coordbf_harness::oracles::{infeasible_fixtures, scalar_cases, socp_suite, two_cell_cases};
use coordbf_harness::records::write_csv;
use coordbf_harness::validation::{run_all, Profile};
use coordbf_harness::{run_experiment, Experiment, ExperimentConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const EXIT_VALIDATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "coordbf",
    version,
    about = "Coordinated beamforming experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write CSV rows.
    Run {
        /// TOML configuration; the `custom` preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        drops: Option<u64>,
        /// CSV output path; stdout when neither this nor the config sets one.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON summary path.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the acceptance checks; exit 1 if any fails.
    Validate {
        #[arg(long)]
        seed: Option<u64>,
        /// Drops for the Monte-Carlo checks (default 50).
        #[arg(long)]
        drops: Option<u64>,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print the brute-force and closed-form oracle values as JSON lines.
    Oracle {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Number of two-cell grid instances.
        #[arg(long, default_value_t = 20)]
        drops: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open_out(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_CONFIG)
}

fn cmd_run(
    config: Option<PathBuf>,
    seed: Option<u64>,
    drops: Option<u64>,
    out: Option<PathBuf>,
    summary: Option<PathBuf>,
    jobs: usize,
) -> ExitCode {
    let mut cfg = match &config {
        Some(path) => match ExperimentConfig::from_path(path) {
            Ok(c) => c,
            Err(e) => return config_error(e),
        },
        None => ExperimentConfig::preset(Experiment::Custom),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = drops {
        cfg.drops = d;
    }
    if out.is_some() {
        cfg.csv_path = out;
    }
    if summary.is_some() {
        cfg.summary_path = summary;
    }
    if let Err(e) = cfg.validate() {
        return config_error(e);
    }
    if jobs == 0 {
        return config_error("--jobs must be >= 1");
    }
    let output = match run_experiment(&cfg, jobs) {
        Ok(o) => o,
        Err(e) => return config_error(e),
    };
    let written = open_out(cfg.csv_path.as_deref())
        .map_err(|e| e.to_string())
        .and_then(|w| write_csv(&output.records, w).map_err(|e| e.to_string()));
    if let Err(e) = written {
        return config_error(format!("writing CSV: {e}"));
    }
    if let Some(path) = &cfg.summary_path {
        let text = serde_json::to_string_pretty(&output.summary).expect("summary serializes");
        if let Err(e) = std::fs::write(path, text + "\n") {
            return config_error(format!("writing summary: {e}"));
        }
    }
    let s = &output.summary;
    eprintln!(
        "{}: {} rows, {} of {} scheme runs failed",
        s.experiment,
        output.records.len(),
        s.failures,
        s.attempts
    );
    if output.too_many_failures() {
        eprintln!(
            "error: failure fraction {:.1}% exceeds 20%",
            100.0 * s.failure_fraction()
        );
        return ExitCode::from(EXIT_VALIDATION);
    }
    ExitCode::SUCCESS
}

fn cmd_validate(
    seed: Option<u64>,
    drops: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
) -> ExitCode {
    let mut profile = Profile::default();
    if let Some(s) = seed {
        profile.seed = s;
    }
    if drops == Some(0) || jobs == Some(0) {
        return config_error("--drops and --jobs must be >= 1");
    }
    profile.mc_drops = drops;
    if let Some(j) = jobs {
        profile.jobs = j;
    }
    let reports = run_all(&profile, |r| println!("{}", r.line()));
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} criteria passed",
        reports.len() - failed,
        reports.len()
    );
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&json!({
            "seed": profile.seed,
            "drops": profile.mc_drops.unwrap_or(50),
            "passed": failed == 0,
            "criteria": reports,
        }))
        .expect("report serializes");
        if let Err(e) = std::fs::write(&path, text + "\n") {
            return config_error(format!("writing report: {e}"));
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VALIDATION)
    }
}

fn cmd_oracle(seed: u64, drops: u64, out: Option<PathBuf>) -> ExitCode {
    let mut w = match open_out(out.as_deref()) {
        Ok(w) => w,
        Err(e) => return config_error(e),
    };
    let mut lines = Vec::new();
    for (k, c) in scalar_cases(seed, 100).iter().enumerate() {
        lines.push(json!({"kind": "scalar", "index": k, "case": c}));
    }
    for (k, c) in two_cell_cases(seed, drops as usize).iter().enumerate() {
        lines.push(json!({"kind": "two_cell_grid", "index": k, "grid": 2000, "case": c}));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC10);
    for f in socp_suite(&mut rng) {
        lines.push(json!({"kind": "socp", "name": f.name, "optimum": f.optimum}));
    }
    for (name, _) in infeasible_fixtures() {
        lines.push(json!({"kind": "socp_infeasible", "name": name}));
    }
    for l in lines {
        if writeln!(w, "{l}").is_err() {
            return config_error("writing oracle values");
        }
    }
    if w.flush().is_err() {
        return config_error("writing oracle values");
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            drops,
            out,
            summary,
            jobs,
        } => cmd_run(config, seed, drops, out, summary, jobs),
        Command::Validate {
            seed,
            drops,
            out,
            jobs,
        } => cmd_validate(seed, drops, out, jobs),
        Command::Oracle { seed, drops, out } => cmd_oracle(seed, drops, out),
    }
}
