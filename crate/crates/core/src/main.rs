use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tfqkd::comb::simulate_locking;
use tfqkd::config::ExperimentConfig;
use tfqkd::harness::{emit_plotdata, read_reports_csv, run_keyrate, run_simulate, write_reports_csv};
use tfqkd::ledger::LedgerTable;
use tfqkd::validate::run_validate;
use tfqkd::{Error, Result};

/// Twin-field QKD simulation and key-rate analysis.
#[derive(Parser)]
#[command(name = "tfqkd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every configured channel and write ledgers.csv and reports.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Key rates for every column of a ledger CSV, printed as a reports CSV.
    Keyrate {
        #[arg(long)]
        counts: PathBuf,
        /// Source intensities and finite-key settings (default: bundled config).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate the comb locks and write pump/rep offset traces.
    CombLock {
        #[arg(long)]
        config: PathBuf,
        /// Simulated time in seconds.
        #[arg(long)]
        duration: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run without feedback.
        #[arg(long)]
        unlocked: bool,
    },
    /// Run the acceptance suite on the bundled data.
    Validate,
    /// Write qber.csv, skr.csv and distance.csv from a reports CSV.
    Plotdata {
        #[arg(long)]
        reports: PathBuf,
        /// Link and sweep settings for the distance curve (default: bundled config).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_path(p),
        None => Ok(ExperimentConfig::bundled()),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let sim = run_simulate(&cfg)?;
            sim.write(&out)?;
            for r in sim.reports() {
                eprintln!(
                    "{}: Z error {:.2}%, R {:.4e}, R_bps {:.1}",
                    r.channel,
                    100.0 * r.z_error,
                    r.r_per_pulse,
                    r.r_bps
                );
            }
        }
        Command::Keyrate { counts, config } => {
            let cfg = load_config(config.as_deref())?;
            let table = LedgerTable::from_path(&counts)?;
            let rows = run_keyrate(&table, &cfg.sources, &cfg.finite_key, cfg.layout.effective_rate())?;
            write_reports_csv(&rows, std::io::stdout().lock())?;
        }
        Command::CombLock {
            config,
            duration,
            out,
            unlocked,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let mut lock = cfg.lock.clone();
            if unlocked {
                lock.pump_lock_gain = 0.0;
                lock.rep_lock_gain = 0.0;
            }
            let run = simulate_locking(&cfg.comb_a, &cfg.comb_b, &lock, duration, cfg.seed)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let create = |name: &str| {
                let p = out.join(name);
                std::fs::File::create(&p).map_err(|e| Error::io(p, e))
            };
            let trace = if unlocked { &run.free_running } else { &run.locked };
            trace.write_pump_csv(create("pump_offset.csv")?)?;
            trace.write_rep_csv(create("rep_offset.csv")?)?;
            let s = run.summary;
            let mut o = std::io::stdout().lock();
            writeln!(o, "pump_offset_mean,pump_offset_std,rep_offset_mean,rep_offset_std").map_err(stdout_err)?;
            writeln!(o, "{},{},{},{}", s.pump_offset_mean, s.pump_offset_std, s.rep_offset_mean, s.rep_offset_std)
                .map_err(stdout_err)?;
        }
        Command::Validate => {
            let summary = run_validate()?;
            summary.write_csv(std::io::stdout().lock())?;
            for r in &summary.results {
                eprintln!("{r}");
            }
            if !summary.all_hard_pass() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Plotdata { reports, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let f = std::fs::File::open(&reports).map_err(|e| Error::io(&reports, e))?;
            let rows = read_reports_csv(f)?;
            emit_plotdata(&rows, &cfg, &out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
