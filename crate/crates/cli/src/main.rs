use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use fwave_rank::config::BenchConfig;
use fwave_rank::features::read_feature_table;
use fwave_rank::pipeline::{self, PipelineError};
use fwave_rank::sim::{self, DatasetSpec};
use fwave_rank::{load_record, Method};
use log::info;

/// Rank single-lead f-wave extraction methods by AF classification AUROC.
#[derive(Parser)]
#[command(name = "fwrank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated AF/NSR dataset with ground-truth f-waves.
    Simulate {
        #[arg(long, default_value_t = 100)]
        n_records: usize,
        /// Additive noise RMS in µV.
        #[arg(long, default_value_t = 100.0, allow_hyphen_values = true)]
        noise_rms: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Record duration in seconds.
        #[arg(long, default_value_t = 300.0)]
        duration: f64,
        #[arg(long, default_value_t = 200)]
        fs: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full benchmark described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sex and age analysis of AF feature rows.
    Stats {
        /// A `features.csv` written by `run`.
        #[arg(long)]
        features: PathBuf,
        /// Dataset directory holding each record's `meta.json`.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the filtered ECG and extracted f-waves of one window as CSV.
    Extract {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        lead: String,
        #[arg(long)]
        window: usize,
        #[arg(long, value_delimiter = ',', default_values_t = Method::ALL.to_vec())]
        methods: Vec<Method>,
        /// Optional config for filter and extraction parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate {
            n_records,
            noise_rms,
            seed,
            duration,
            fs,
            out,
        } => simulate(
            &DatasetSpec {
                n_records,
                noise_rms,
                master_seed: seed,
                duration,
                fs,
            },
            &out,
        ),
        Command::Run { config, out } => {
            let mut cfg = BenchConfig::from_file(&config).map_err(PipelineError::from)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let outputs = pipeline::run_and_write(&cfg)?;
            let overall = &outputs.report.ranking.overall;
            for (method, mean_rank) in &overall.order {
                info!("{method}: mean rank {mean_rank}");
            }
            match overall.winner {
                Some(m) => info!("winner {m} ({})", overall.rule),
                None => info!("no single winner"),
            }
            info!("outputs in {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Stats { features, dataset, out } => {
            let file = fs::File::open(&features).map_err(|e| PipelineError::Dataset {
                path: features.clone(),
                reason: e.to_string(),
            })?;
            let rows = read_feature_table(file).map_err(|e| PipelineError::Dataset {
                path: features.clone(),
                reason: e.to_string(),
            })?;
            let meta = pipeline::load_metadata(&dataset)?;
            let report = pipeline::compute_stats(&rows, &meta);
            for w in &report.warnings {
                log::warn!("{w}");
            }
            pipeline::write_stats(&report, &out)?;
            info!("{} sex tests, {} box rows in {}", report.sex.len(), report.boxes.len(), out.display());
            Ok(())
        }
        Command::Extract {
            record,
            lead,
            window,
            methods,
            config,
            out,
        } => {
            let cfg = match config {
                Some(p) => BenchConfig::from_file(&p).map_err(PipelineError::from)?,
                None => BenchConfig::default(),
            };
            let id = record.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let rec = load_record(&record).map_err(|source| PipelineError::LoadRecord { record_id: id, source })?;
            let csv = pipeline::dump_window(&rec, &lead, window, &methods, &cfg)?;
            match out {
                Some(p) => write(&p, &csv)?,
                None => {
                    if let Err(e) = std::io::stdout().lock().write_all(csv.as_bytes()) {
                        if e.kind() != std::io::ErrorKind::BrokenPipe {
                            return Err(e.into());
                        }
                    }
                }
            }
            Ok(())
        }
    }
}

fn simulate(spec: &DatasetSpec, out: &Path) -> Result<()> {
    let records = sim::generate_dataset(spec).map_err(PipelineError::from)?;
    sim::write_dataset(spec, &records, out).map_err(PipelineError::from)?;
    info!("{} records written to {}", records.len(), out.display());
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    })
}
