//! `tactile-sdf`: corpus generation, training, reconstruction and evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tactile_sdf::geometry::{load_mesh, load_watertight_mesh, write_sdf_dataset, MeshIndex};
use tactile_sdf::metrics::{evaluate, write_report_csv, ReportRow, DEFAULT_EVAL_POINTS};
use tactile_sdf::pipeline::{
    run_gen_corpus, run_reconstruction, run_touch_dataset, run_train_chart, run_train_sdf, run_trend,
    sdf_dataset, write_summary_csv, ExperimentConfig,
};
use tactile_sdf::Result;

#[derive(Parser)]
#[command(name = "tactile-sdf", version, about = "Shape reconstruction from simulated touches")]
struct Cli {
    /// Experiment configuration (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration with every key.
    Config,
    /// Generate the procedural shape corpus.
    GenCorpus,
    /// Simulate touches on the training and validation shapes.
    GenTouches,
    /// Train the chart predictor on the touch archives.
    TrainChart,
    /// Train the signed-distance decoder and per-shape latents.
    TrainSdf,
    /// Reconstruct one corpus shape from fresh touches.
    Reconstruct {
        #[arg(long)]
        shape: u64,
        #[arg(long, default_value_t = 20)]
        touches: usize,
        /// Reconstruction seed (independent of the master seed).
        #[arg(long = "run", default_value_t = 0)]
        run: u64,
    },
    /// Reconstruct every test shape for every touch count and seed.
    Trend,
    /// Compare a predicted mesh with a ground-truth mesh.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EVAL_POINTS)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
    },
    /// Write the signed-distance dataset of a watertight mesh.
    MeshSdf {
        mesh: PathBuf,
        output: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Config => print!("{}", cfg.to_toml()?),
        Command::GenCorpus => {
            let m = run_gen_corpus(&cfg)?;
            println!("wrote {} shapes to {}", m.shapes.len(), cfg.output_dir.join("corpus").display());
        }
        Command::GenTouches => {
            for (split, n) in run_touch_dataset(&cfg)? {
                println!("{split:?}: {n} touches");
            }
        }
        Command::TrainChart => {
            let t = run_train_chart(&cfg)?;
            println!(
                "validation Chamfer {:.6e} (untrained {:.6e})",
                t.val_chamfer, t.untrained_val_chamfer
            );
        }
        Command::TrainSdf => {
            let (ckpt, history) = run_train_sdf(&cfg)?;
            println!(
                "trained on {} shapes, final loss {:.6e}",
                ckpt.latents.len(),
                history.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Reconstruct { shape, touches, run } => {
            let (mesh, r) = run_reconstruction(&cfg, *shape, *touches, *run)?;
            println!(
                "{}: cd {:.6e} emd {:.6e} surface error {:.2}%",
                mesh.display(),
                r.cd,
                r.emd,
                r.surface_error_pct
            );
        }
        Command::Trend => print!("{}", write_summary_csv(&run_trend(&cfg)?.summary)),
        Command::Eval {
            pred,
            gt,
            points,
            sample_seed,
        } => {
            let report = evaluate(&load_mesh(pred)?, &load_mesh(gt)?, *points, *sample_seed)?;
            let row = ReportRow {
                shape_id: 0,
                touches: 0,
                seed: *sample_seed,
                report,
            };
            write_report_csv(&[row], std::io::stdout().lock())?;
        }
        Command::MeshSdf { mesh, output } => {
            let index = MeshIndex::new(&load_watertight_mesh(mesh)?);
            let samples = sdf_dataset(&index, &cfg.sdf_data, cfg.seed)?;
            write_sdf_dataset(&samples, output)?;
            println!("wrote {} samples to {}", samples.len(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
