use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use softprop::model::DecoderVariant;
use softprop::synthdata::Body;
use softprop_cli::commands::{
    self, BenchArgs, EvalArgs, GenArgs, PredictArgs, SplitSel, SweepArgs, SweepAxis, TrainArgs, BENCH_RESOLUTIONS,
};
use softprop_cli::{CliError, Overrides, EXIT_OK, EXIT_USAGE};

/// Vision-based shape estimation for soft bodies.
///
/// The number of evaluation worker threads is read from SOFTPROP_THREADS
/// (default 1).
#[derive(Parser)]
#[command(name = "softprop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic deformable-body dataset.
    Gen {
        /// number of samples
        #[arg(long)]
        n: usize,
        /// cameras per sample (1 or 2)
        #[arg(long, default_value_t = 1)]
        views: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// body kind: sphere or sheet
        #[arg(long, default_value = "sphere")]
        body: Body,
        /// image side in pixels
        #[arg(long, default_value_t = 32)]
        res: usize,
        /// ground-truth points per view
        #[arg(long, default_value_t = 1024)]
        points: usize,
        /// surface dots in the rendered pattern
        #[arg(long, default_value_t = 300)]
        dots: usize,
    },
    /// Train a model on a dataset's training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        out: PathBuf,
        /// continue from a checkpoint written by an earlier run
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with the Hausdorff protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train, test or all
        #[arg(long, default_value = "test")]
        split: SplitSel,
        /// decoding grid resolution: side for square grids, point count for
        /// sampled prototypes (default: training grid)
        #[arg(long)]
        grid_side: Option<usize>,
        /// also evaluate the KNN+PCA baseline
        #[arg(long)]
        baseline: bool,
        /// report directory (report.json, per_sample.csv, ply/)
        #[arg(long)]
        out: Option<PathBuf>,
        /// number of samples exported as error-colored PLY files
        #[arg(long, default_value_t = 8)]
        export: usize,
    },
    /// Measure end-to-end prediction rate per resolution.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        /// predicted point counts
        #[arg(long, value_delimiter = ',', default_values_t = BENCH_RESOLUTIONS)]
        resolutions: Vec<usize>,
        /// timed runs per resolution (median reported)
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// dataset to take the input image from (default: blank image)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate one model per value of an axis.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// image-res or latent-dim
        #[arg(long)]
        axis: SweepAxis,
        /// values to sweep (default 16,32,64,128,224 or 32,64,128,256,512)
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Option<Vec<usize>>,
        #[command(flatten)]
        run: RunFlags,
        /// evaluation grid resolution, as for `eval --grid-side`
        #[arg(long)]
        eval_side: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict point clouds from camera images and write PLY files.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// one PPM per camera, in camera order
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        /// views to decode (default: all)
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
        /// decoding grid resolution, as for `eval --grid-side`
        #[arg(long)]
        grid_side: Option<usize>,
        /// dataset whose normalization maps the output to meters
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunFlags {
    /// run config (TOML); defaults are derived from the dataset
    #[arg(long)]
    config: Option<PathBuf>,
    /// original or improved
    #[arg(long)]
    decoder: Option<DecoderVariant>,
    /// side of the square training grid
    #[arg(long)]
    grid_side: Option<usize>,
    /// resample input images to this side
    #[arg(long)]
    image_res: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// training and initialization seed
    #[arg(long)]
    seed: Option<u64>,
}

impl RunFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            decoder: self.decoder,
            grid_side: self.grid_side,
            image_res: self.image_res,
            latent_dim: self.latent_dim,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen {
            n,
            views,
            seed,
            out,
            body,
            res,
            points,
            dots,
        } => {
            let s = commands::gen(&GenArgs {
                n,
                views,
                seed,
                out,
                body,
                res,
                points,
                dots,
            })?;
            println!("manifest {}", s.manifest.display());
            println!("samples {} (train {}, test {}) seed {seed}", s.samples, s.train, s.test);
            println!("checksum {}", s.checksum);
        }
        Command::Train { data, run, out, resume } => {
            let s = commands::train(&TrainArgs {
                data,
                config: run.config.clone(),
                out,
                overrides: run.overrides(),
                resume,
                threads: None,
            })?;
            println!("# resolved config (seed {})", s.config.train.seed);
            print!("{}", s.config.to_toml());
            println!("epochs run {}, final train loss {:.6}", s.epochs_run, s.final_loss);
            if let Some(r) = &s.last_eval {
                println!("test dH mm: mean {:.3} median {:.3} max {:.3}", r.mean, r.median, r.max);
            }
            println!("loss {}", s.loss_csv.display());
            println!("checkpoint {}", s.final_checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            grid_side,
            baseline,
            out,
            export,
        } => {
            let s = commands::eval(&EvalArgs {
                checkpoint,
                data,
                split,
                grid_side,
                out,
                baseline,
                export,
                threads: None,
            })?;
            println!("{:<10} {:>10} {:>10} {:>10}  (dH, mm; {} points)", "", "mean", "median", "max", s.grid_points);
            let r = &s.model;
            println!("{:<10} {:>10.3} {:>10.3} {:>10.3}", "model", r.mean, r.median, r.max);
            if let Some(r) = &s.baseline {
                println!("{:<10} {:>10.3} {:>10.3} {:>10.3}", "knn+pca", r.mean, r.median, r.max);
            }
        }
        Command::Bench {
            checkpoint,
            resolutions,
            runs,
            warmup,
            data,
        } => {
            let rows = commands::bench(&BenchArgs {
                checkpoint,
                resolutions,
                runs,
                warmup,
                data,
            })?;
            println!("{:>10} {:>12} {:>10}", "points", "median_s", "hz");
            for r in rows {
                println!("{:>10} {:>12.6} {:>10.2}", r.points, r.median_seconds, r.hz);
            }
        }
        Command::Sweep {
            data,
            axis,
            values,
            run,
            eval_side,
            out,
        } => {
            let values = values.unwrap_or_else(|| axis.default_values());
            let rows = commands::sweep(&SweepArgs {
                data,
                config: run.config.clone(),
                axis,
                values,
                out,
                overrides: run.overrides(),
                eval_side,
                threads: None,
            })?;
            print!("{}", commands::sweep_csv(axis, &rows));
        }
        Command::Predict {
            checkpoint,
            images,
            views,
            grid_side,
            data,
            out,
        } => {
            for p in commands::predict(&PredictArgs {
                checkpoint,
                images,
                views,
                grid_side,
                data,
                out,
            })? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("softprop: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
