//! Command-line surface: `train`, `eval`, `predict`, `split-ls`,
//! `analyze-weights` and `gradcheck`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use prnet_core::io::{
    self, load_image, load_image_resized, load_mask_native, load_pairs, load_sample,
    read_config_file, save_checkpoint, write_pgm, RngState, StatsCollector,
};
use prnet_core::layers::Mode;
use prnet_core::metrics::{evaluate, size_class, GtMask, SaliencyMap, SizeClass};
use prnet_core::network::PrNet;
use prnet_core::training::{train_loop, Sample, TraceRow};
use prnet_core::{gradcheck, ops, Tensor};

#[derive(Parser)]
#[command(name = "prnet", version, about = "Salient-object detection: training, evaluation and weight analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train from scratch, checkpointing after every epoch.
    Train {
        /// key=value run configuration (see README for the keys)
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// Checkpoint file, overwritten after each epoch.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-iteration loss trace (CSV).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a checkpoint against a labelled directory pair.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// Metrics report (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Write saliency maps as PGM files, one per input image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Partition masks into large / medium / small objects (38% / 3% coverage).
    SplitLs {
        #[arg(long)]
        masks: PathBuf,
        /// Listing file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect the regulation weights over a dataset and export statistics.
    AnalyzeWeights {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = GroupBy::Size)]
        group_by: GroupBy,
    },
    /// Run the 64-bit central finite-difference gradient suite.
    Gradcheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupBy {
    /// One group per object-size class of the ground truth.
    Size,
    /// Everything in a single group.
    All,
}

/// Entry point shared by the binary and the tests. Returns the process exit
/// code: 0 on success, 2 on usage errors, 1 on runtime failures.
pub fn run_cli(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train { config, images, masks, out, trace } => train(&config, &images, &masks, &out, trace.as_deref()),
        Cmd::Eval { checkpoint, images, masks, out } => eval(&checkpoint, &images, &masks, &out),
        Cmd::Predict { checkpoint, images, out_dir } => predict(&checkpoint, &images, &out_dir),
        Cmd::SplitLs { masks, out } => split_ls(&masks, out.as_deref()),
        Cmd::AnalyzeWeights { checkpoint, images, masks, csv, json, group_by } => {
            analyze_weights(&checkpoint, &images, &masks, &csv, json.as_deref(), group_by)
        }
        Cmd::Gradcheck => run_gradcheck(),
    }
}

fn train(config: &Path, images: &Path, masks: &Path, out: &Path, trace_path: Option<&Path>) -> Result<()> {
    let (mcfg, tcfg) = read_config_file(config).with_context(|| format!("reading {}", config.display()))?;
    let listing = load_pairs(images, masks)?;
    if listing.images_without_mask + listing.masks_without_image > 0 {
        eprintln!(
            "skipping {} images without mask, {} masks without image",
            listing.images_without_mask, listing.masks_without_image
        );
    }
    let samples: Vec<Sample> = listing
        .pairs
        .iter()
        .map(|(i, m)| load_sample(i, m, mcfg.input_size))
        .collect::<prnet_core::Result<_>>()?;
    let net = PrNet::<f32>::new(mcfg)?;
    let seed = tcfg.seed;
    let trace = train_loop(&net, &samples, &tcfg, |epoch, _, word_pos| {
        save_checkpoint(out, &net, epoch as u32, &RngState { seed, word_pos })
    })?;
    if let Some(path) = trace_path {
        write_trace(path, &trace)?;
    }
    let last = trace.last().expect("schedule ran at least one step");
    println!(
        "trained {} samples for {} iterations; final loss {:.6}; checkpoint {}",
        samples.len(),
        trace.len(),
        last.total,
        out.display()
    );
    Ok(())
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut text = String::from("# loss-trace/1\niter,lr,bce,cel,total\n");
    for r in trace {
        writeln!(text, "{},{},{},{},{}", r.iter, r.lr, r.bce, r.cel, r.total)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_net(checkpoint: &Path) -> Result<PrNet<f32>> {
    let cfg = io::peek_config(checkpoint)?;
    let net = PrNet::<f32>::new(cfg)?;
    io::load_checkpoint(checkpoint, &net)?;
    Ok(net)
}

/// Forward one image and return the saliency map at the model's extent.
fn predict_map(net: &PrNet<f32>, image: &Path) -> Result<Tensor<f32>> {
    let input = load_image_resized(image, net.cfg.input_size)?;
    let (pred, _) = net.forward(&input, Mode::Eval)?;
    Ok(pred)
}

/// Resize a `1x1xSxS` prediction to `w x h` and clamp into [0,1].
fn to_map(pred: &Tensor<f32>, w: usize, h: usize) -> Result<SaliencyMap> {
    let resized = ops::resize_bilinear(pred, h, w)?;
    let data = resized.data().iter().map(|&v| f64::from(v).clamp(0.0, 1.0)).collect();
    Ok(SaliencyMap::new(w, h, data)?)
}

fn eval(checkpoint: &Path, images: &Path, masks: &Path, out: &Path) -> Result<()> {
    let net = load_net(checkpoint)?;
    let listing = load_pairs(images, masks)?;
    let mut pairs: Vec<(SaliencyMap, GtMask)> = Vec::with_capacity(listing.pairs.len());
    for (image, mask) in &listing.pairs {
        let gt = load_mask_native(mask)?;
        let pred = predict_map(&net, image)?;
        pairs.push((to_map(&pred, gt.w, gt.h)?, gt));
    }
    let report = evaluate(&pairs)?;
    std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "evaluated {} images ({} empty masks excluded from F/S/E): MAE {:.4}, maxF {:.4}, S {:.4}, E {:.4} -> {}",
        report.evaluated + report.empty_gt_excluded,
        report.empty_gt_excluded,
        report.mae,
        report.max_f,
        report.s_measure,
        report.e_measure,
        out.display()
    );
    Ok(())
}

/// Supported image files in a directory, sorted by name.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| ["pgm", "ppm", "pnm", "png"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no images in {}", dir.display());
    }
    Ok(files)
}

fn predict(checkpoint: &Path, images: &Path, out_dir: &Path) -> Result<()> {
    let net = load_net(checkpoint)?;
    std::fs::create_dir_all(out_dir)?;
    let files = list_images(images)?;
    for path in &files {
        let native = load_image(path)?;
        let pred = predict_map(&net, path)?;
        let map = to_map(&pred, native.w, native.h)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
        write_pgm(&out_dir.join(format!("{stem}.pgm")), map.w, map.h, &map.data)?;
    }
    println!("wrote {} saliency maps to {}", files.len(), out_dir.display());
    Ok(())
}

fn class_label(c: SizeClass) -> &'static str {
    match c {
        SizeClass::Large => "large",
        SizeClass::Medium => "medium",
        SizeClass::Small => "small",
    }
}

fn split_ls(masks: &Path, out: Option<&Path>) -> Result<()> {
    let files = list_images(masks)?;
    let mut lines = String::new();
    let (mut large, mut medium, mut small) = (0usize, 0usize, 0usize);
    for path in &files {
        let gt = load_mask_native(path)?;
        let class = size_class(&gt);
        match class {
            SizeClass::Large => large += 1,
            SizeClass::Medium => medium += 1,
            SizeClass::Small => small += 1,
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
        writeln!(lines, "{}\t{}", class_label(class), stem)?;
    }
    match out {
        Some(path) => std::fs::write(path, &lines)?,
        None => print!("{lines}"),
    }
    println!("large {large} medium {medium} small {small}");
    Ok(())
}

fn analyze_weights(
    checkpoint: &Path,
    images: &Path,
    masks: &Path,
    csv: &Path,
    json: Option<&Path>,
    group_by: GroupBy,
) -> Result<()> {
    let net = load_net(checkpoint)?;
    let listing = load_pairs(images, masks)?;
    let mut collector = StatsCollector::new();
    for (image, mask) in &listing.pairs {
        let input = load_image_resized(image, net.cfg.input_size)?;
        let (_, diag) = net.forward(&input, Mode::Eval)?;
        let group = match group_by {
            GroupBy::All => "all",
            GroupBy::Size => class_label(size_class(&load_mask_native(mask)?)),
        };
        collector.add(group, &diag);
    }
    let stats = collector.finish();
    if stats.is_empty() {
        bail!("the model reports no regulation weights");
    }
    io::write_csv(csv, &stats)?;
    if let Some(path) = json {
        io::write_json(path, &stats)?;
    }
    println!(
        "collected weights of {} images into {} stat rows -> {}",
        listing.pairs.len(),
        stats.len(),
        csv.display()
    );
    Ok(())
}

fn run_gradcheck() -> Result<()> {
    let outcomes = gradcheck::run_standard_suite()?;
    let mut failed = 0;
    for o in &outcomes {
        let status = if o.passed() { "ok  " } else { "FAIL" };
        println!(
            "{status} {:<32} max rel err {:.3e} over {} entries",
            o.name, o.max_rel_err, o.entries
        );
        if !o.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", outcomes.len());
    }
    println!("all {} gradient checks passed (tolerance {:.0e})", outcomes.len(), gradcheck::TOLERANCE);
    Ok(())
}
