use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pointseg::synth::{read_pgm16, write_pgm16};
use pointseg::Error;
use pointseg_cli::config::ExperimentConfig;
use pointseg_cli::run;

#[derive(Parser)]
#[command(name = "pointseg", about = "Point-supervised small-target segmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured scenes and dump images, GT masks, and
    /// point labels.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the configured scenes, with or without label evolution.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's evolution switch.
        #[arg(long, value_parser = ["on", "off"])]
        lesps: Option<String>,
    },
    /// Run the experiment once per value of a single config axis.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Dotted config field, e.g. scene.radius or evolution.f.
        #[arg(long)]
        axis: String,
        /// Comma-separated numeric values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Train on fixed intensity-threshold pseudo labels (no evolution).
    PseudoBaseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: f64,
    },
    /// Compare a prediction PGM against a GT PGM (both binarized at 0.5).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn exec(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = load_config(&config)?;
            cfg.validate()?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            std::fs::write(out.join("config.resolved.toml"), cfg.to_resolved_toml())
                .map_err(|e| Error::io(out.display().to_string(), e))?;
            for i in 0..cfg.scene.count {
                let scene = run::build_scene(&cfg, i)?;
                let points = pointseg::synth::scene_point_labels(
                    &scene,
                    &cfg.point_spec(cfg.seed.wrapping_add(1000 + i as u64)),
                )?;
                write_pgm16(&scene.image, &out.join(format!("scene_{i:02}_input.pgm")))?;
                write_pgm16(&scene.gt_mask.to_grid(), &out.join(format!("scene_{i:02}_gt.pgm")))?;
                write_pgm16(&points, &out.join(format!("scene_{i:02}_points.pgm")))?;
            }
            println!("wrote {} scenes to {}", cfg.scene.count, out.display());
        }
        Command::Train { config, out, lesps } => {
            let mut cfg = load_config(&config)?;
            if let Some(sw) = lesps {
                cfg.evolution.enabled = sw == "on";
            }
            let summary = run::run_experiment(&cfg, Some(&out))?;
            let ious = summary.final_label_ious();
            let mean = ious.iter().sum::<f64>() / ious.len() as f64;
            println!(
                "trained {} scenes (lesps {}); mean final label IoU {mean:.4}",
                summary.runs.len(),
                if cfg.evolution.enabled { "on" } else { "off" },
            );
        }
        Command::Sweep { config, out, axis, values } => {
            let cfg = load_config(&config)?;
            let results = run::sweep(&cfg, &axis, &values, Some(&out))?;
            println!("swept {} over {} values; summary in {}", axis, results.len(), out.display());
        }
        Command::PseudoBaseline { config, out, tau } => {
            let cfg = load_config(&config)?;
            let summary = run::pseudo_baseline(&cfg, tau, Some(&out))?;
            let ious = summary.final_pred_ious();
            let mean = ious.iter().sum::<f64>() / ious.len() as f64;
            println!("pseudo baseline tau {tau}: mean final prediction IoU {mean:.4}");
        }
        Command::Eval { pred, gt } => {
            let p = read_pgm16(&pred)?.threshold(0.5);
            let g = read_pgm16(&gt)?.threshold(0.5);
            let (iou, pa) = run::eval_masks(&p, &g)?;
            println!("iou,pa");
            println!("{iou},{pa}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match exec(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Exit-code categories: 2 usage/config, 3 I/O or format,
            // 4 numeric failure, 1 anything else.
            let code = match e {
                Error::InvalidArgument(_) => 2,
                Error::Io { .. } | Error::Format { .. } => 3,
                Error::NonFinite(_)
                | Error::NonFiniteGradient(_)
                | Error::NonFiniteLoss { .. } => 4,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
