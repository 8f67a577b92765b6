//! `fedrc`: generate synthetic jammer datasets, train federated reservoir
//! readouts, evaluate saved models and export client partitions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fedrc::experiment::{evaluate, features_from_dir, read_model, run_experiment, ExperimentConfig};
use fedrc::features::{resize_bilinear, spectrogram, write_pgm};
use fedrc::partition::{partition_dirichlet, partition_iid};
use fedrc::signal::{entry_path, read_manifest, read_record_file, write_dataset, DatasetSpec};
use fedrc::{init_reservoir, Error, Result};

#[derive(Parser)]
#[command(name = "fedrc", version, about = "Federated reservoir computing for GNSS jammer classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Iid,
    Dirichlet,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled dataset directory (manifest.tsv plus one file per record).
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Take signal settings from this config file (its seed is overridden by --seed).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a federated training experiment and write per-round metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        /// Also save the final readout (overrides model_out from the config).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score a saved readout on every record of a dataset directory.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Reservoir settings and seed the model was trained with (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Partition a dataset's records (by manifest row) across clients and write a TSV.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        scheme: SchemeArg,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long)]
        clients: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump the spectrogram of one record as a binary PGM image.
    Spectrogram {
        #[arg(long)]
        data: PathBuf,
        /// Manifest row of the record.
        #[arg(long)]
        record: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write the 256x256 downsized image instead of the native 512x512 one.
        #[arg(long)]
        resized: bool,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { out, per_class, seed, config } => {
            let mut params = load_config(config.as_ref())?.signal;
            params.seed = seed;
            let spec = DatasetSpec::new(params, per_class)?;
            let entries = write_dataset(&out, &spec, Default::default())?;
            println!("wrote {} records to {}", entries.len(), out.display());
        }
        Command::Train { config, metrics, model } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            cfg.metrics_out = Some(metrics);
            if model.is_some() {
                cfg.model_out = model;
            }
            let report = run_experiment(&cfg)?;
            for m in &report.metrics {
                println!(
                    "round {:>3}  loss {:.6}  accuracy {:.4}  participants {}  samples {}",
                    m.round, m.loss, m.accuracy, m.participants, m.cumulative_samples
                );
            }
        }
        Command::Evaluate { model, data, config } => {
            let mut cfg = load_config(config.as_ref())?;
            cfg.sync_seeds();
            let theta = read_model(&model)?;
            if theta.features() != cfg.reservoir.units + 1 {
                return Err(Error::Config(format!(
                    "model has {} features but the reservoir produces {}; pass the training config",
                    theta.features(),
                    cfg.reservoir.units + 1
                )));
            }
            let weights = init_reservoir(&cfg.reservoir)?;
            let (phi, labels) = features_from_dir(&data, &weights, cfg.execution)?;
            let (loss, accuracy) = evaluate(&theta, &phi, &labels)?;
            println!("records {}  loss {loss:.6}  accuracy {accuracy:.6}", labels.len());
        }
        Command::Partition { data, scheme, alpha, clients, out, seed } => {
            let entries = read_manifest(&data)?;
            let labels: Vec<usize> = entries.iter().map(|e| e.label.label()).collect();
            let indices: Vec<usize> = (0..labels.len()).collect();
            let partition = match scheme {
                SchemeArg::Iid => partition_iid(&indices, &labels, clients, seed)?,
                SchemeArg::Dirichlet => partition_dirichlet(&indices, &labels, clients, alpha, seed)?,
            };
            partition.write_tsv(&out)?;
            println!(
                "{} records over {clients} clients, mean max-class share {:.3}",
                labels.len(),
                partition.max_class_share(&labels, fedrc::JammerClass::COUNT)
            );
        }
        Command::Spectrogram { data, record, out, resized } => {
            let entries = read_manifest(&data)?;
            let entry = entries.get(record).ok_or_else(|| {
                Error::Config(format!("record {record} out of range (dataset has {})", entries.len()))
            })?;
            let image = spectrogram(&read_record_file(&entry_path(&data, entry))?)?;
            let image = if resized {
                resize_bilinear(&image, image.rows() / 2, image.cols() / 2)?
            } else {
                image
            };
            write_pgm(&image, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_configuration() { 2 } else { 3 })
        }
    }
}
