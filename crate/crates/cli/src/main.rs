use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use pan_core::ablation::{run_ablation, Variant, ABLATION_FILE};
use pan_core::config::{help_table, parse_dhw, TrainingConfig};
use pan_core::data::{generate_dataset, read_volume_file, Dataset, GeneratorConfig};
use pan_core::eval::evaluate;
use pan_core::projection::{project_prediction_stack, project_volume, Projection};
use pan_core::report::{eval_csv, fixed};
use pan_core::training::{load_segmentor, train, Checkpoint};
use pan_core::PanError;

const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Projective adversarial segmentation lab.
#[derive(Parser, Debug)]
#[command(name = "pan", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        volumes: usize,
        /// Volume size as D,H,W.
        #[arg(long, value_parser = parse_dhw, default_value = "16,32,32")]
        dhw: (usize, usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes a checkpoint, metrics CSV and charts.
    Train {
        /// Flat `key = value` config file; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in --out if there is one.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the checkpoint's eval.threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write the per-volume table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every model variant for every seed.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated seeds, at least three.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a volume's mask, or a model's stacked predictions, along the
    /// axial direction; writes PREFIX.csv and PREFIX.pgm.
    Project {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn read_config(path: Option<&Path>) -> Result<TrainingConfig, PanError> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| PanError::Io {
            path: p.to_path_buf(),
            source: e,
        })?,
        None => String::new(),
    };
    let cfg = TrainingConfig::parse(&text)?;
    print!("{}", cfg.banner());
    Ok(cfg)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PanError> {
    fs::write(path, bytes).map_err(|e| PanError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn projection_csv(p: &Projection) -> String {
    let w = p.image.shape()[1];
    let mut out = String::new();
    for row in p.image.data().chunks(w) {
        let cells: Vec<String> = row.iter().map(|&v| fixed(v)).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Binary greyscale PGM; projection values lie in [0, 1).
fn projection_pgm(p: &Projection) -> Vec<u8> {
    let (h, w) = (p.image.shape()[0], p.image.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(p.image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

fn run(command: Command) -> Result<(), PanError> {
    match command {
        Command::GenData { out, volumes, dhw, seed } => {
            let manifest = generate_dataset(&out, volumes, &GeneratorConfig::for_dims(dhw), seed)?;
            println!("{} volumes written to {}", manifest.entries.len(), out.display());
        }
        Command::Train { config, data, out, resume } => {
            let cfg = read_config(config.as_deref())?;
            let outcome = train(&cfg, &data, &out, resume)?;
            if let Some(last) = outcome.trainer.history().last() {
                println!("epoch {}: test DSC {}", last.epoch, fixed(last.test_dsc_mean));
            }
            println!("checkpoint: {}", outcome.checkpoint.display());
            println!("metrics: {}", outcome.metrics.display());
        }
        Command::Eval {
            checkpoint,
            data,
            threshold,
            out,
        } => {
            let (cfg, seg) = load_segmentor(&Checkpoint::read(&checkpoint)?)?;
            let dataset = Dataset::load(&data)?;
            let record = evaluate(&seg, &dataset.test, threshold.unwrap_or(cfg.threshold))?;
            let table = eval_csv(&record);
            print!("{table}");
            if let Some(path) = out {
                write(&path, table)?;
            }
        }
        Command::Ablate { config, data, seeds, out } => {
            let cfg = read_config(config.as_deref())?;
            let result = run_ablation(&cfg, &seeds, &data, &out)?;
            for v in Variant::ALL {
                match result.aggregate(v) {
                    Some(a) => println!("{:<10} mean DSC {} (std {}, {} runs)", v.name(), fixed(a.mean), fixed(a.std), a.runs),
                    None => println!("{:<10} all runs failed", v.name()),
                }
            }
            println!("table: {}", out.join(ABLATION_FILE).display());
        }
        Command::Project { volume, out, checkpoint } => {
            let sample = read_volume_file(&volume)?;
            let proj = match checkpoint {
                Some(c) => project_prediction_stack(&load_segmentor(&Checkpoint::read(&c)?)?.1, &sample.volume)?,
                None => project_volume(sample.mask())?,
            };
            let prefix = out.to_string_lossy();
            write(Path::new(&format!("{prefix}.csv")), projection_csv(&proj))?;
            write(Path::new(&format!("{prefix}.pgm")), projection_pgm(&proj))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let table = help_table();
    let command = Cli::command()
        .after_long_help(table.clone())
        .mut_subcommand("train", |c| c.after_help(table.clone()))
        .mut_subcommand("ablate", |c| c.after_help(table.clone()));
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                PanError::Numerical(_) => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            })
        }
    }
}
