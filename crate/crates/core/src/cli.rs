//! Command-line surface.
//!
//! Settings resolve field by field: command-line flag, then the TOML file
//! given with `--config`, then the built-in default. Results go to files in
//! the output directory, progress to stderr, and a one-line summary to
//! stdout.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::calibration::{self, Calibration, Strategy, DEFAULT_BINS};
use crate::filter::{self, FilterConfig, OutputMode, ReductionStats, DEFAULT_TAU};
use crate::imaging::{ScaleFactor, SsimParams, SsimWindow};
use crate::manifest::{make_lopo_splits, write_split_plans, DatasetManifest};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "vifi",
    version,
    about = "Near-duplicate frame filtering for video datasets"
)]
pub struct Cli {
    /// TOML file with default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score labeled pairs, build histogram and ROC, pick a threshold.
    Calibrate {
        /// CSV of reference,candidate,label rows; paths relative to the file.
        #[arg(long)]
        pairs: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        /// Downscale factor as "32" or "1/32" [default: 1/32].
        #[arg(long)]
        scale: Option<ScaleFactor>,
        /// target_fnr, target_fpr or youden [default: target_fnr].
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Rate bound for the target strategies [default: 0.1].
        #[arg(long)]
        target: Option<f64>,
        /// Histogram bins [default: 20].
        #[arg(long)]
        bins: Option<usize>,
        #[command(flatten)]
        ssim: SsimFlags,
    },
    /// Compare the AUC of several downscale factors.
    SweepScales {
        /// CSV of reference,candidate,label rows; paths relative to the file.
        #[arg(long)]
        pairs: PathBuf,
        /// Comma-separated inverse factors, e.g. "1,2,4,8,16,32,64".
        #[arg(long)]
        scales: String,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        ssim: SsimFlags,
    },
    /// Drop near-duplicate frames from every sequence of a manifest.
    Filter {
        /// Dataset manifest (JSONL).
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        /// Novelty threshold; frames scoring below it are kept [default: 0.411].
        #[arg(long)]
        tau: Option<f64>,
        /// Downscale factor as "32" or "1/32" [default: 1/32].
        #[arg(long)]
        scale: Option<ScaleFactor>,
        /// manifest_only, copy or link.
        #[arg(long)]
        mode: Option<OutputMode>,
        #[command(flatten)]
        ssim: SsimFlags,
    },
    /// Print frame counts, optionally against a filtered manifest.
    Stats {
        /// Dataset manifest (JSONL).
        #[arg(long)]
        manifest: PathBuf,
        /// Filtered manifest to compare against.
        #[arg(long)]
        filtered: Option<PathBuf>,
    },
    /// Leave-one-patient-out folds with a train/val split.
    Split {
        /// Dataset manifest (JSONL).
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        /// Share of the non-test pool used for validation [default: 0.2].
        #[arg(long)]
        val_fraction: Option<f64>,
    },
    /// Write a synthetic corpus with known scene boundaries.
    Synth {
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        synth: SynthFlags,
    },
}

#[derive(Debug, Args, Default)]
pub struct SsimFlags {
    /// global, gaussian11 or uniform7.
    #[arg(long)]
    pub window: Option<SsimWindow>,
    /// SSIM luminance constant [default: 0.01].
    #[arg(long)]
    pub k1: Option<f64>,
    /// SSIM contrast constant [default: 0.03].
    #[arg(long)]
    pub k2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthFlags {
    /// Square frame edge in pixels.
    #[arg(long, default_value_t = 256)]
    pub frame_size: u32,
    /// Scenes per sequence.
    #[arg(long, default_value_t = 3)]
    pub scenes: usize,
    /// Fewest frames per scene.
    #[arg(long, default_value_t = 5)]
    pub min_frames: usize,
    /// Most frames per scene.
    #[arg(long, default_value_t = 5)]
    pub max_frames: usize,
    /// Average frames per scene; overrides --min-frames/--max-frames.
    #[arg(long)]
    pub redundancy: Option<f64>,
    /// Number of sequences.
    #[arg(long, default_value_t = 1)]
    pub sequences: usize,
    /// Patients the sequences are spread over.
    #[arg(long, default_value_t = 1)]
    pub patients: usize,
    /// Per-pixel Gaussian noise standard deviation.
    #[arg(long, default_value_t = 10.0)]
    pub noise_sigma: f64,
    /// Horizontal roll in pixels between consecutive frames.
    #[arg(long, default_value_t = 0)]
    pub drift_step: u32,
    /// Texture feature size in pixels.
    #[arg(long, default_value_t = 32)]
    pub grain: u32,
    /// Fraction of the gray range spanned by textures.
    #[arg(long, default_value_t = 1.0)]
    pub contrast: f64,
}

/// Contents of the `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub tau: Option<f64>,
    pub scale: Option<u32>,
    pub mode: Option<OutputMode>,
    pub window: Option<SsimWindow>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub dynamic_range: Option<f64>,
    pub strategy: Option<Strategy>,
    pub target: Option<f64>,
    pub bins: Option<usize>,
    pub val_fraction: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub filter: FilterConfig,
    pub mode: OutputMode,
    pub strategy: Strategy,
    pub target: f64,
    pub bins: usize,
    pub val_fraction: f64,
}

impl RunConfig {
    pub fn resolve(cli: &Cli, file: &FileConfig) -> Result<Self> {
        let empty = SsimFlags::default();
        let (tau, scale, mode, ssim_flags, strategy, target, bins, val_fraction) = match &cli
            .command
        {
            Command::Calibrate {
                scale,
                strategy,
                target,
                bins,
                ssim,
                ..
            } => (None, *scale, None, ssim, *strategy, *target, *bins, None),
            Command::SweepScales { ssim, .. } => (None, None, None, ssim, None, None, None, None),
            Command::Filter {
                tau,
                scale,
                mode,
                ssim,
                ..
            } => (*tau, *scale, *mode, ssim, None, None, None, None),
            Command::Split { val_fraction, .. } => {
                (None, None, None, &empty, None, None, None, *val_fraction)
            }
            Command::Stats { .. } | Command::Synth { .. } => {
                (None, None, None, &empty, None, None, None, None)
            }
        };
        let defaults = SsimParams::default();
        let ssim = SsimParams {
            dynamic_range: file.dynamic_range.unwrap_or(defaults.dynamic_range),
            k1: ssim_flags.k1.or(file.k1).unwrap_or(defaults.k1),
            k2: ssim_flags.k2.or(file.k2).unwrap_or(defaults.k2),
            window: ssim_flags.window.or(file.window).unwrap_or(defaults.window),
        };
        ssim.validate()?;
        let file_scale = file.scale.map(ScaleFactor::new).transpose()?;
        let workers = cli.workers.or(file.workers).unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        Ok(Self {
            seed: cli.seed.or(file.seed).unwrap_or(0),
            workers,
            filter: FilterConfig {
                tau: tau.or(file.tau).unwrap_or(DEFAULT_TAU),
                scale: scale.or(file_scale).unwrap_or(ScaleFactor::DEFAULT),
                ssim,
            },
            mode: mode.or(file.mode).unwrap_or_default(),
            strategy: strategy.or(file.strategy).unwrap_or(Strategy::TargetFnr),
            target: target.or(file.target).unwrap_or(0.1),
            bins: bins.or(file.bins).unwrap_or(DEFAULT_BINS),
            val_fraction: val_fraction.or(file.val_fraction).unwrap_or(0.2),
        })
    }
}

/// Creates `dir`, refusing a non-empty one unless `force` is set.
fn prepare_output(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!(
                "output directory {} is not empty (use --force to write anyway)",
                dir.display()
            );
        }
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")
}

pub fn parse_scales(text: &str) -> Result<Vec<ScaleFactor>> {
    let scales = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<ScaleFactor>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    if scales.is_empty() {
        bail!("no scales given");
    }
    Ok(scales)
}

/// Runs one command and returns the stdout summary line.
pub fn run(cli: &Cli) -> Result<String> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig::resolve(cli, &file)?;
    match &cli.command {
        Command::Calibrate { pairs, output, .. } => {
            let pairs = calibration::load_pairs(pairs)?;
            prepare_output(output, cli.force)?;
            log::info!(
                "scoring {} pairs at scale {}",
                pairs.len(),
                cfg.filter.scale
            );
            let result = pool(cfg.workers)?.install(|| {
                let frames = calibration::load_pair_frames(&pairs)?;
                Calibration::run(
                    &frames,
                    cfg.filter.scale,
                    &cfg.filter.ssim,
                    cfg.strategy,
                    cfg.target,
                    cfg.bins,
                )
            })?;
            result
                .write(output)
                .with_context(|| format!("writing results to {}", output.display()))?;
            let op = result.operating_point;
            Ok(format!(
                "auc={} tau={} fnr={} fpr={} strategy={}",
                result.curve.auc, op.tau, op.fnr, op.fpr, op.strategy
            ))
        }
        Command::SweepScales {
            pairs,
            scales,
            output,
            ..
        } => {
            let scales = parse_scales(scales)?;
            let pairs = calibration::load_pairs(pairs)?;
            prepare_output(output, cli.force)?;
            let sweep = pool(cfg.workers)?.install(|| {
                let frames = calibration::load_pair_frames(&pairs)?;
                calibration::sweep_scales(&frames, &scales, &cfg.filter.ssim)
            })?;
            for (scale, auc) in &sweep.entries {
                log::info!("scale {scale}: auc {auc}");
            }
            sweep
                .write_csv(&output.join("sweep.csv"))
                .with_context(|| format!("writing {}", output.display()))?;
            let best_auc = sweep
                .entries
                .iter()
                .find(|e| e.0 == sweep.best)
                .map(|e| e.1)
                .unwrap_or(f64::NAN);
            Ok(format!(
                "best_scale={} auc={}",
                sweep.best.inverse(),
                best_auc
            ))
        }
        Command::Filter {
            manifest, output, ..
        } => {
            let source = DatasetManifest::load(manifest)?;
            prepare_output(output, cli.force)?;
            log::info!(
                "filtering {} sequences ({} frames), tau {} at scale {}, {} workers",
                source.sequences().len(),
                source.frame_count(),
                cfg.filter.tau,
                cfg.filter.scale,
                cfg.workers
            );
            let (mut report, filtered) = filter::filter_dataset(&source, &cfg.filter, cfg.workers)?;
            filter::write_filtered_output(&mut report, &filtered, cfg.mode, output)?;
            report.write(output)?;
            let s = &report.stats;
            Ok(format!(
                "frames_in={} frames_out={} kept_fraction={} reduction_factor={}",
                s.frames_in, s.frames_out, s.kept_fraction, s.reduction_factor
            ))
        }
        Command::Stats { manifest, filtered } => {
            let source = DatasetManifest::load(manifest)?;
            let mut line = format!(
                "sequences={} patients={} frames={}",
                source.sequences().len(),
                source.patients().len(),
                source.frame_count()
            );
            if let Some(path) = filtered {
                let out = DatasetManifest::load(path)?;
                let s = ReductionStats::from_counts(source.frame_count(), out.frame_count());
                line.push_str(&format!(
                    " frames_out={} kept_fraction={} reduction_factor={}",
                    s.frames_out, s.kept_fraction, s.reduction_factor
                ));
            }
            Ok(line)
        }
        Command::Split {
            manifest, output, ..
        } => {
            let source = DatasetManifest::load(manifest)?;
            let plans = make_lopo_splits(&source, cfg.seed, cfg.val_fraction)?;
            prepare_output(output, cli.force)?;
            write_split_plans(&plans, output)?;
            Ok(format!("folds={} seed={}", plans.len(), cfg.seed))
        }
        Command::Synth {
            output,
            synth: flags,
        } => {
            let config = SynthConfig {
                frame_size: flags.frame_size,
                num_scenes: flags.scenes,
                min_frames_per_scene: flags.min_frames,
                max_frames_per_scene: flags.max_frames,
                noise_sigma: flags.noise_sigma,
                drift_step: flags.drift_step,
                texture_grain: flags.grain,
                texture_contrast: flags.contrast,
                seed: cfg.seed,
            };
            config.validate()?;
            let corpus = match flags.redundancy {
                Some(r) => {
                    synth::plant_redundancy_corpus(&config, r, flags.sequences, flags.patients)?
                }
                None => synth::generate_corpus(&config, flags.sequences, flags.patients)?,
            };
            prepare_output(output, cli.force)?;
            synth::write_corpus(&corpus, output)?;
            let scenes: usize = corpus
                .sequences
                .iter()
                .map(|s| s.truth.scene_start_indices.len())
                .sum();
            Ok(format!(
                "sequences={} frames={} scenes={}",
                corpus.sequences.len(),
                corpus.frame_count(),
                scenes
            ))
        }
    }
}
