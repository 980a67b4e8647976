//! `pageseg`: page segmentation for handwritten historical documents.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pageseg::commands::{self, RunConfig, SweepArgs, SweepKind};
use pageseg_core::imageio::Palette;
use pageseg_core::nn::TrainConfig;

/// Pixel-level page segmentation of handwritten historical documents.
///
/// Pages are partitioned into superpixels and a small convolutional network
/// classifies the 28x28 patch around each superpixel center; the predicted
/// class is painted over the whole superpixel.
#[derive(Parser)]
#[command(name = "pageseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a page into superpixels and write diagnostic PNGs.
    Superpixels {
        /// Input page image (PNG).
        input: PathBuf,
        /// Output path for the 16-bit superpixel id map.
        #[arg(long, default_value = "assignment.png")]
        assignment: PathBuf,
        /// Output path for the red boundary overlay.
        #[arg(long, default_value = "overlay.png")]
        overlay: PathBuf,
        /// Requested superpixel count.
        #[arg(long, default_value_t = 3000)]
        superpixels: usize,
        /// Shrink the page by 2^k first.
        #[arg(long, default_value_t = 3)]
        scale_exp: u32,
    },
    /// Train a patch classifier from parallel image/ground-truth folders.
    Train {
        /// Directory of page images.
        images: PathBuf,
        /// Directory of color-coded ground truth with matching file names.
        labels: PathBuf,
        /// Output model path.
        #[arg(long, default_value = "model.hseg")]
        model: PathBuf,
        /// Training-log CSV path (defaults to the model path with .csv).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Segment a page with a trained model.
    Segment {
        /// Model produced by `train`.
        model: PathBuf,
        /// Input page image (PNG).
        input: PathBuf,
        /// Output color-coded label map (PNG).
        output: PathBuf,
        /// Shrink the page by 2^k first (match the training setting).
        #[arg(long, default_value_t = 3)]
        scale_exp: u32,
        /// Requested superpixel count.
        #[arg(long, default_value_t = 3000)]
        superpixels: usize,
    },
    /// Score predicted label maps against ground truth.
    Eval {
        /// Directory of predicted label maps.
        pred: PathBuf,
        /// Directory of ground-truth label maps with matching file names.
        truth: PathBuf,
        /// Palette file (name=R,G,B per line); built-in 5 classes if omitted.
        #[arg(long)]
        palette: Option<PathBuf>,
        /// Also write the four metrics to this CSV at full precision.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train and evaluate across a hyperparameter sweep; write a CSV.
    Sweep {
        /// Which knob to sweep.
        kind: KindArg,
        /// Directory of training page images.
        train_images: PathBuf,
        /// Directory of training ground truth.
        train_labels: PathBuf,
        /// Directory of held-out page images.
        test_images: PathBuf,
        /// Directory of held-out ground truth.
        test_labels: PathBuf,
        /// Output CSV path.
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        /// Largest depth tried by the layers sweep.
        #[arg(long, default_value_t = 3)]
        max_depth: usize,
        /// Run sweep points on worker threads (same results, more memory).
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Kernels,
    Layers,
    #[value(name = "train_images", alias = "train-images")]
    TrainImages,
}

impl From<KindArg> for SweepKind {
    fn from(kind: KindArg) -> SweepKind {
        match kind {
            KindArg::Kernels => SweepKind::Kernels,
            KindArg::Layers => SweepKind::Layers,
            KindArg::TrainImages => SweepKind::TrainImages,
        }
    }
}

/// Pipeline knobs shared by `train` and `sweep`.
#[derive(Args)]
struct RunArgs {
    /// Shrink pages by 2^k before any other processing.
    #[arg(long, default_value_t = 3)]
    scale_exp: u32,
    /// Requested superpixels per page.
    #[arg(long, default_value_t = 3000)]
    superpixels: usize,
    /// Kernel count of the convolutional layer.
    #[arg(long, default_value_t = 4)]
    kernels: usize,
    /// Apply 2x2 max pooling after each convolutional layer.
    #[arg(long)]
    max_pool: bool,
    /// Width of the hidden dense layer.
    #[arg(long, default_value_t = 100)]
    dense: usize,
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Patches per training batch.
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Number of training batches.
    #[arg(long, default_value_t = 5000)]
    batches: usize,
    /// Dropout probability on the hidden layer during training.
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Seed for weight init, batch sampling, and dropout.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Palette file (name=R,G,B per line); built-in 5 classes if omitted.
    #[arg(long)]
    palette: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let palette = match &self.palette {
            Some(path) => Palette::from_file(path)?,
            None => Palette::document_default(),
        };
        Ok(RunConfig {
            scale_exp: self.scale_exp,
            superpixels: self.superpixels,
            conv_kernel_counts: vec![self.kernels],
            use_max_pool: self.max_pool,
            dense_width: self.dense,
            train: TrainConfig {
                learning_rate: self.lr,
                batch_size: self.batch_size,
                num_batches: self.batches,
                dropout_p: self.dropout,
                seed: self.seed,
            },
            palette,
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Superpixels {
            input,
            assignment,
            overlay,
            superpixels,
            scale_exp,
        } => commands::cmd_superpixels(&input, superpixels, scale_exp, &assignment, &overlay),
        Command::Train {
            images,
            labels,
            model,
            log,
            run,
        } => {
            let cfg = run.into_config()?;
            commands::cmd_train(&images, &labels, &cfg, &model, log.as_deref())?;
            Ok(())
        }
        Command::Segment {
            model,
            input,
            output,
            scale_exp,
            superpixels,
        } => commands::cmd_segment(&model, &input, &output, scale_exp, superpixels),
        Command::Eval {
            pred,
            truth,
            palette,
            csv,
        } => {
            let palette = match &palette {
                Some(path) => Palette::from_file(path)?,
                None => Palette::document_default(),
            };
            commands::cmd_eval(&pred, &truth, &palette, csv.as_deref())?;
            Ok(())
        }
        Command::Sweep {
            kind,
            train_images,
            train_labels,
            test_images,
            test_labels,
            out,
            max_depth,
            parallel,
            run,
        } => {
            let cfg = run.into_config()?;
            let args = SweepArgs {
                kind: kind.into(),
                train_images: &train_images,
                train_labels: &train_labels,
                test_images: &test_images,
                test_labels: &test_labels,
                max_depth,
                parallel,
                csv_out: &out,
            };
            commands::cmd_sweep(&args, &cfg)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
