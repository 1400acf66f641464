use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maskdiff::experiment::{self, ExperimentConfig, ExperimentError, KvConfig};

#[derive(Parser)]
#[command(
    name = "maskdiff",
    version,
    about = "Mask diffusion, toy synthesis and group-balanced training"
)]
struct Cli {
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mask PNGs to boundary point clouds.
    Encode {
        masks: PathBuf,
        #[arg(long, default_value_t = 512)]
        points: usize,
        #[arg(long, default_value_t = 0.3)]
        z0: f64,
    },
    /// Point clouds back to mask PNGs.
    Decode {
        clouds: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        /// Directory of same-named masks to score the decodes against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Per-group point-cloud diffusion models from a manifest.
    TrainDiffusion {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "group")]
        attribute: String,
    },
    /// Masks sampled from one group's diffusion model.
    SampleMasks {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "group")]
        attribute: String,
        #[arg(long)]
        group: String,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Mask-conditioned image synthesizer from a manifest.
    TrainControl {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Equal-scale rebalancing with synthetic samples.
    Combine {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "group")]
        attribute: String,
        /// Per-group target count, or `auto` for the largest group.
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// Toy segmenter on a manifest's training split.
    TrainSeg {
        #[arg(long)]
        manifest: PathBuf,
        /// Ignore synthetic training rows.
        #[arg(long)]
        real_only: bool,
    },
    /// Group-wise Dice/IoU, equity-scaled scores and fairness on the test split.
    Evaluate {
        #[arg(long)]
        segmenter: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated; all manifest attributes when omitted.
        #[arg(long, value_delimiter = ',')]
        attributes: Vec<String>,
    },
    /// Real-only versus equal-scale comparison over several seeds.
    FairnessExperiment,
    /// Imbalanced two-family toy dataset.
    MakeToyData,
}

fn config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut kv = match &cli.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    if let Some(s) = cli.seed {
        kv.set("seed", s);
    }
    ExperimentConfig::from_kv(&kv)
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ExperimentError::Validation(format!("--threads: {e}")))?;
    }
    let mut cfg = config(&cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Encode { masks, points, z0 } => {
            let s = experiment::cmd_encode(masks, out, *points, *z0)?;
            print!("{}", s.render());
            s.into_result()?;
        }
        Command::Decode {
            clouds,
            width,
            height,
            reference,
        } => {
            let s = experiment::cmd_decode(clouds, out, *width, *height, reference.as_deref())?;
            print!("{}", s.render());
            s.into_result()?;
        }
        Command::TrainDiffusion {
            manifest,
            attribute,
        } => {
            for g in experiment::cmd_train_diffusion(manifest, attribute, &cfg, out)? {
                println!("trained {attribute}={g}");
            }
        }
        Command::SampleMasks {
            models,
            attribute,
            group,
            count,
            size,
        } => {
            let written = experiment::cmd_sample_masks(
                models,
                attribute,
                group,
                *count,
                (*size, *size),
                cfg.seed,
                out,
            )?;
            println!(
                "{} masks written to {}",
                written.len(),
                out.join("masks").display()
            );
        }
        Command::TrainControl { manifest } => {
            let p = experiment::cmd_train_control(manifest, &cfg, out)?;
            println!("control block written to {}", p.display());
        }
        Command::Combine {
            manifest,
            attribute,
            target,
            models,
            control,
        } => {
            if let Some(t) = target {
                cfg.target = experiment::parse_target(t)?;
            }
            let s = experiment::cmd_combine(
                manifest,
                attribute,
                models.as_deref(),
                control.as_deref(),
                &cfg,
            )?;
            print!("{}", s.render(attribute));
        }
        Command::TrainSeg {
            manifest,
            real_only,
        } => {
            let d = experiment::cmd_train_segmenter(manifest, *real_only, &cfg, out)?;
            println!(
                "training Dice {d:.4}; segmenter written to {}",
                out.join("segmenter.fdnn").display()
            );
        }
        Command::Evaluate {
            segmenter,
            manifest,
            attributes,
        } => {
            let e = experiment::cmd_evaluate(segmenter, manifest, attributes, out)?;
            for r in &e.reports {
                println!(
                    "{}: Dice {:.4} ES-Dice {:.4} IoU {:.4} ES-IoU {:.4} fairness {:.6}",
                    r.attribute, r.dice.overall, r.dice.essp, r.iou.overall, r.iou.essp, r.fairness
                );
            }
            println!(
                "{} rows scored, {} exclusions",
                e.samples.len(),
                e.excluded.len()
            );
        }
        Command::FairnessExperiment => {
            let s = experiment::run_experiment(&cfg, out)?;
            print!("{}", s.to_csv());
            println!(
                "variance decreased in {}/{} seeds; fairness increased in {}/{}",
                s.variance_decreased(),
                s.outcomes.len(),
                s.fairness_increased(),
                s.outcomes.len()
            );
        }
        Command::MakeToyData => {
            let m = experiment::cmd_make_toy_data(&cfg, out)?;
            println!(
                "{} rows written to {}",
                m.rows.len(),
                out.join("manifests/manifest.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
