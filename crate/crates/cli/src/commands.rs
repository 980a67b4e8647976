//! Implementations of the five subcommands.
//!
//! Each `cmd_*` function is the whole command minus argument parsing, so
//! tests can call them directly and the binary stays a thin clap wrapper.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use pageseg_core::dataset::{self, Patch, PatchSet};
use pageseg_core::imageio::{self, GrayImage, LabelImage, Palette};
use pageseg_core::metrics::ConfusionMatrix;
use pageseg_core::nn::{self, Network, NetworkConfig, TrainConfig};
use pageseg_core::superpixel::{
    self, SuperpixelMap, DEFAULT_COMPACTNESS, DEFAULT_ITERATIONS,
};
use pageseg_core::tensor::SplitMix64;

use crate::model;

/// Everything a pipeline run needs besides input paths.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Pages are shrunk by `2^scale_exp` before any other processing.
    pub scale_exp: u32,
    /// Requested superpixels per page.
    pub superpixels: usize,
    pub conv_kernel_counts: Vec<usize>,
    pub use_max_pool: bool,
    pub dense_width: usize,
    pub train: TrainConfig,
    pub palette: Palette,
}

impl RunConfig {
    /// The documented defaults: scale 2^-3, 3000 superpixels, one conv
    /// layer of 4 kernels, dense width 100, and the stock trainer settings.
    pub fn new(palette: Palette) -> RunConfig {
        RunConfig {
            scale_exp: 3,
            superpixels: 3000,
            conv_kernel_counts: vec![4],
            use_max_pool: false,
            dense_width: 100,
            train: TrainConfig::default(),
            palette,
        }
    }

    fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            conv_kernel_counts: self.conv_kernel_counts.clone(),
            use_max_pool: self.use_max_pool,
            dense_width: self.dense_width,
            num_classes: self.palette.len(),
            input_side: dataset::PATCH_SIDE,
        }
    }
}

/// An image and its ground truth, matched by filename stem.
#[derive(Debug, Clone)]
pub struct PairedFiles {
    pub stem: String,
    pub image: PathBuf,
    pub labels: PathBuf,
}

/// Lists PNG files in `dir` as (stem, path), sorted by stem.
fn png_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries =
        fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Pairs images with ground truth by stem. Files present on only one side
/// are skipped; it is an error if nothing matches at all.
pub fn pair_by_stem(images_dir: &Path, labels_dir: &Path) -> Result<Vec<PairedFiles>> {
    let labels = png_files(labels_dir)?;
    let mut pairs = Vec::new();
    for (stem, image) in png_files(images_dir)? {
        if let Some((_, label)) = labels.iter().find(|(s, _)| *s == stem) {
            pairs.push(PairedFiles {
                stem,
                image,
                labels: label.clone(),
            });
        }
    }
    if pairs.is_empty() {
        bail!(
            "no image/label pairs share a filename stem between {} and {}",
            images_dir.display(),
            labels_dir.display()
        );
    }
    Ok(pairs)
}

/// Like [`pair_by_stem`] but strict: every file on either side must have a
/// partner. Used by `eval`, where a silently dropped page would skew scores.
fn pair_all_by_stem(pred_dir: &Path, truth_dir: &Path) -> Result<Vec<PairedFiles>> {
    let preds = png_files(pred_dir)?;
    let truths = png_files(truth_dir)?;
    for (stem, _) in &preds {
        if !truths.iter().any(|(s, _)| s == stem) {
            bail!("{stem}.png has no ground truth in {}", truth_dir.display());
        }
    }
    for (stem, _) in &truths {
        if !preds.iter().any(|(s, _)| s == stem) {
            bail!("{stem}.png has no prediction in {}", pred_dir.display());
        }
    }
    if preds.is_empty() {
        bail!("no PNG files in {}", pred_dir.display());
    }
    if preds.len() != truths.len() {
        // Same stem set on both sides but different counts: a stem appears
        // twice (e.g. a.png next to a.PNG) and pairing would be ambiguous.
        bail!("duplicate filename stems between the two directories");
    }
    Ok(preds
        .into_iter()
        .zip(truths)
        .map(|((stem, image), (_, labels))| PairedFiles {
            stem,
            image,
            labels,
        })
        .collect())
}

/// Loads one pair and brings both sides to working resolution. Ground truth
/// may be provided at the original resolution (it is downscaled to match)
/// or already at the working resolution.
fn load_pair(pair: &PairedFiles, cfg: &RunConfig) -> Result<(GrayImage, LabelImage)> {
    let full = imageio::load_gray(&pair.image)
        .with_context(|| format!("loading image for {}", pair.stem))?;
    let img = imageio::downscale(&full, cfg.scale_exp)?;
    let labels = imageio::load_labels(&pair.labels, &cfg.palette)
        .with_context(|| format!("loading ground truth for {}", pair.stem))?;
    let labels = if (labels.width(), labels.height()) == (img.width(), img.height()) {
        labels
    } else if (labels.width(), labels.height()) == (full.width(), full.height()) {
        imageio::downscale_labels(&labels, cfg.scale_exp)?
    } else {
        bail!(
            "{}: ground truth is {}x{}, expected {}x{} (original) or {}x{} (downscaled)",
            pair.stem,
            labels.width(),
            labels.height(),
            full.width(),
            full.height(),
            img.width(),
            img.height()
        );
    };
    Ok((img, labels))
}

/// Turns one training pair into a labeled patch per superpixel.
fn patches_for_pair(pair: &PairedFiles, cfg: &RunConfig) -> Result<PatchSet> {
    let (img, labels) = load_pair(pair, cfg)?;
    let map = superpixel::slic(&img, cfg.superpixels, DEFAULT_COMPACTNESS, DEFAULT_ITERATIONS)
        .with_context(|| format!("computing superpixels for {}", pair.stem))?;
    let set = dataset::build_training_set(
        std::slice::from_ref(&img),
        std::slice::from_ref(&labels),
        std::slice::from_ref(&map),
        cfg.palette.len(),
    )?;
    Ok(set)
}

fn merge_sets(sets: &[PatchSet], classes: usize) -> Result<PatchSet> {
    let mut all = PatchSet::new(classes);
    for set in sets {
        for patch in set.patches() {
            all.push(patch.clone())?;
        }
    }
    Ok(all)
}

pub fn cmd_superpixels(
    input: &Path,
    k: usize,
    scale_exp: u32,
    assignment_out: &Path,
    overlay_out: &Path,
) -> Result<()> {
    let img = imageio::load_gray(input).with_context(|| format!("loading {}", input.display()))?;
    let img = imageio::downscale(&img, scale_exp)?;
    let map = superpixel::slic(&img, k, DEFAULT_COMPACTNESS, DEFAULT_ITERATIONS)?;
    superpixel::write_assignment_png(&map, assignment_out)?;
    superpixel::write_boundary_overlay(&map, &img, overlay_out)?;
    println!(
        "{}: {} superpixels over {}x{}; wrote {} and {}",
        input.display(),
        map.len(),
        img.width(),
        img.height(),
        assignment_out.display(),
        overlay_out.display()
    );
    Ok(())
}

/// Per-command result summary, mostly for tests.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub pairs: usize,
    pub patches: usize,
    pub final_loss: Option<f64>,
}

pub fn cmd_train(
    images_dir: &Path,
    labels_dir: &Path,
    cfg: &RunConfig,
    model_out: &Path,
    log_out: Option<&Path>,
) -> Result<TrainOutcome> {
    let pairs = pair_by_stem(images_dir, labels_dir)?;
    let set = {
        let mut sets = Vec::with_capacity(pairs.len());
        for pair in &pairs {
            sets.push(patches_for_pair(pair, cfg)?);
        }
        merge_sets(&sets, cfg.palette.len())?
    };
    let histogram = set.class_histogram();

    let mut net = Network::new(cfg.network_config(), cfg.train.seed)?;
    let log = nn::train(&mut net, &set, &cfg.train, None)?;
    net.quantize_f32();
    model::save(model_out, &net, &cfg.palette)?;

    let log_path = match log_out {
        Some(p) => p.to_path_buf(),
        None => model_out.with_extension("csv"),
    };
    fs::write(&log_path, log.to_csv())
        .with_context(|| format!("writing training log {}", log_path.display()))?;

    let counts: Vec<String> = histogram
        .iter()
        .enumerate()
        .map(|(c, n)| format!("{}={n}", cfg.palette.name(c)))
        .collect();
    println!(
        "trained on {} page(s), {} patches ({}); wrote {} and {}",
        pairs.len(),
        set.len(),
        counts.join(", "),
        model_out.display(),
        log_path.display()
    );
    Ok(TrainOutcome {
        pairs: pairs.len(),
        patches: set.len(),
        final_loss: log.entries.last().map(|e| e.mean_loss),
    })
}

/// Classifies each superpixel of a working-resolution page and paints its
/// members with the predicted class.
pub fn segment_image(net: &Network, img: &GrayImage, superpixels: usize) -> Result<LabelImage> {
    let map = superpixel::slic(img, superpixels, DEFAULT_COMPACTNESS, DEFAULT_ITERATIONS)?;
    let labels = classify_superpixels(net, img, &map)?;
    Ok(dataset::project_labels(&map, &labels)?)
}

fn classify_superpixels(
    net: &Network,
    img: &GrayImage,
    map: &SuperpixelMap,
) -> Result<Vec<u8>> {
    superpixel::centroids(map)
        .into_iter()
        .map(|center| {
            let patch = dataset::extract_patch(img, center)?;
            let (label, _) = net.predict(&patch.values)?;
            Ok(label as u8)
        })
        .collect()
}

pub fn cmd_segment(
    model_path: &Path,
    input: &Path,
    output: &Path,
    scale_exp: u32,
    superpixels: usize,
) -> Result<()> {
    let (net, palette) = model::load(model_path)?;
    let img = imageio::load_gray(input).with_context(|| format!("loading {}", input.display()))?;
    let img = imageio::downscale(&img, scale_exp)?;
    let labels = segment_image(&net, &img, superpixels)?;
    imageio::write_labels(&labels, &palette, output)?;
    println!(
        "segmented {} -> {} ({}x{})",
        input.display(),
        output.display(),
        labels.width(),
        labels.height()
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub matrix: ConfusionMatrix,
    pub pixel_acc: f64,
    pub mean_acc: f64,
    pub mean_iu: f64,
    pub fw_iu: f64,
}

impl EvalResult {
    fn from_matrix(matrix: ConfusionMatrix) -> Result<EvalResult> {
        Ok(EvalResult {
            pixel_acc: matrix.pixel_accuracy()?,
            mean_acc: matrix.mean_accuracy()?,
            mean_iu: matrix.mean_iu()?,
            fw_iu: matrix.fw_iu()?,
            matrix,
        })
    }

    /// The four metrics as integer percentages, rounded half away from zero.
    pub fn rounded(&self) -> [i64; 4] {
        [self.pixel_acc, self.mean_acc, self.mean_iu, self.fw_iu]
            .map(|v| (v * 100.0).round() as i64)
    }
}

pub fn cmd_eval(
    pred_dir: &Path,
    truth_dir: &Path,
    palette: &Palette,
    csv_out: Option<&Path>,
) -> Result<EvalResult> {
    let pairs = pair_all_by_stem(pred_dir, truth_dir)?;
    let mut matrix = ConfusionMatrix::new(palette.len())?;
    for pair in &pairs {
        let pred = imageio::load_labels(&pair.image, palette)
            .with_context(|| format!("loading prediction for {}", pair.stem))?;
        let truth = imageio::load_labels(&pair.labels, palette)
            .with_context(|| format!("loading ground truth for {}", pair.stem))?;
        matrix
            .accumulate(&pred, &truth)
            .with_context(|| format!("scoring {}", pair.stem))?;
    }
    let result = EvalResult::from_matrix(matrix)?;

    let [pa, ma, miu, fw] = result.rounded();
    println!(
        "scored {} page(s), {} classes, {} pixels",
        pairs.len(),
        palette.len(),
        result.matrix.total()
    );
    println!("metric           %    exact");
    println!("pixel accuracy {pa:>3}    {}", result.pixel_acc);
    println!("mean accuracy  {ma:>3}    {}", result.mean_acc);
    println!("mean IU        {miu:>3}    {}", result.mean_iu);
    println!("f.w. IU        {fw:>3}    {}", result.fw_iu);

    if let Some(path) = csv_out {
        let csv = format!(
            "pixel_acc,mean_acc,mean_iu,fw_iu\n{},{},{},{}\n",
            result.pixel_acc, result.mean_acc, result.mean_iu, result.fw_iu
        );
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Kernels,
    Layers,
    TrainImages,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::Kernels => "kernels",
            SweepKind::Layers => "layers",
            SweepKind::TrainImages => "train_images",
        }
    }
}

/// Kernel counts tried by the kernels sweep.
pub const KERNEL_SWEEP: [usize; 8] = [1, 2, 4, 6, 8, 10, 12, 14];
/// Training-set sizes tried by the train_images sweep; values beyond the
/// available pair count are skipped.
pub const TRAIN_IMAGE_SWEEP: [usize; 10] = [1, 2, 4, 8, 10, 12, 14, 16, 18, 20];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub pixel_acc: f64,
    pub mean_acc: f64,
    pub mean_iu: f64,
    pub fw_iu: f64,
}

pub struct SweepArgs<'a> {
    pub kind: SweepKind,
    pub train_images: &'a Path,
    pub train_labels: &'a Path,
    pub test_images: &'a Path,
    pub test_labels: &'a Path,
    /// Largest depth tried by the layers sweep.
    pub max_depth: usize,
    /// Run sweep points on worker threads. Results are identical to a
    /// sequential run; per-point seeds are fixed up front.
    pub parallel: bool,
    pub csv_out: &'a Path,
}

/// A held-out page prepared once and scored by every sweep point.
struct TestFixture {
    map: SuperpixelMap,
    patches: Vec<Patch>,
    truth: LabelImage,
}

fn test_fixture(pair: &PairedFiles, cfg: &RunConfig) -> Result<TestFixture> {
    let (img, truth) = load_pair(pair, cfg)?;
    let map = superpixel::slic(&img, cfg.superpixels, DEFAULT_COMPACTNESS, DEFAULT_ITERATIONS)
        .with_context(|| format!("computing superpixels for {}", pair.stem))?;
    let mut patches = Vec::with_capacity(map.len());
    for center in superpixel::centroids(&map) {
        patches.push(dataset::extract_patch(&img, center)?);
    }
    Ok(TestFixture {
        map,
        patches,
        truth,
    })
}

struct SweepJob {
    value: usize,
    config: NetworkConfig,
    seed: u64,
    /// How many training pages (in stem order) this point trains on.
    n_train: usize,
}

pub fn cmd_sweep(args: &SweepArgs, cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let classes = cfg.palette.len();
    let train_pairs = pair_by_stem(args.train_images, args.train_labels)?;
    let test_pairs = pair_by_stem(args.test_images, args.test_labels)?;

    // Superpixels and patch extraction do not depend on the swept knobs,
    // so prepare them once and share across points.
    let mut train_sets = Vec::with_capacity(train_pairs.len());
    for pair in &train_pairs {
        train_sets.push(patches_for_pair(pair, cfg)?);
    }
    let mut fixtures = Vec::with_capacity(test_pairs.len());
    for pair in &test_pairs {
        fixtures.push(test_fixture(pair, cfg)?);
    }

    let base = cfg.network_config();
    let points: Vec<(usize, NetworkConfig, usize)> = match args.kind {
        SweepKind::Kernels => KERNEL_SWEEP
            .iter()
            .map(|&k| {
                let mut nc = base.clone();
                nc.conv_kernel_counts = vec![k];
                (k, nc, train_sets.len())
            })
            .collect(),
        SweepKind::Layers => {
            if args.max_depth == 0 {
                bail!("layer sweep needs a maximum depth of at least 1");
            }
            (1..=args.max_depth)
                .map(|d| {
                    let mut nc = NetworkConfig::for_depth(d, classes);
                    nc.use_max_pool = cfg.use_max_pool;
                    nc.dense_width = cfg.dense_width;
                    (d, nc, train_sets.len())
                })
                .collect()
        }
        SweepKind::TrainImages => TRAIN_IMAGE_SWEEP
            .iter()
            .filter(|&&n| n <= train_sets.len())
            .map(|&n| (n, base.clone(), n))
            .collect(),
    };

    // One child seed per point, drawn before dispatch so parallel and
    // sequential runs see the same seeds.
    let mut master = SplitMix64::new(cfg.train.seed);
    let jobs: Vec<SweepJob> = points
        .into_iter()
        .map(|(value, config, n_train)| SweepJob {
            value,
            config,
            seed: master.next_u64(),
            n_train,
        })
        .collect();

    let run_point = |job: &SweepJob| -> Result<SweepRow> {
        let set = merge_sets(&train_sets[..job.n_train], classes)?;
        let mut net = Network::new(job.config.clone(), job.seed)?;
        let mut tc = cfg.train.clone();
        tc.seed = job.seed;
        nn::train(&mut net, &set, &tc, None)?;
        net.quantize_f32();

        let mut matrix = ConfusionMatrix::new(classes)?;
        for fx in &fixtures {
            let mut labels = Vec::with_capacity(fx.patches.len());
            for patch in &fx.patches {
                labels.push(net.predict(&patch.values)?.0 as u8);
            }
            let pred = dataset::project_labels(&fx.map, &labels)?;
            matrix.accumulate(&pred, &fx.truth)?;
        }
        Ok(SweepRow {
            value: job.value,
            pixel_acc: matrix.pixel_accuracy()?,
            mean_acc: matrix.mean_accuracy()?,
            mean_iu: matrix.mean_iu()?,
            fw_iu: matrix.fw_iu()?,
        })
    };

    let rows: Vec<SweepRow> = if args.parallel {
        jobs.par_iter().map(run_point).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run_point).collect::<Result<_>>()?
    };

    let mut csv = String::from("sweep_value,pixel_acc,mean_acc,mean_iu,fw_iu\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.value, row.pixel_acc, row.mean_acc, row.mean_iu, row.fw_iu
        ));
    }
    fs::write(args.csv_out, csv)
        .with_context(|| format!("writing {}", args.csv_out.display()))?;

    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{} sweep: {} point(s), {} batches each; wrote {}",
        args.kind.name(),
        rows.len(),
        cfg.train.num_batches,
        args.csv_out.display()
    )?;
    writeln!(out, "value  pixel_acc  mean_acc  mean_iu  fw_iu")?;
    for row in &rows {
        writeln!(
            out,
            "{:>5}  {:>9.4}  {:>8.4}  {:>7.4}  {:>6.4}",
            row.value, row.pixel_acc, row.mean_acc, row.mean_iu, row.fw_iu
        )?;
    }
    Ok(rows)
}
