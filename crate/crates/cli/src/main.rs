//! `progan` command line: preprocessing, training, sampling, latent walks,
//! evaluation and diagnostics export.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use progan_core::dataio::{
    load_images_from_dir, preprocess, save_image, DirDataset, GrayImage, PhantomDataset,
};
use progan_core::metrics::{msssim_diversity_report, swd_multiscale, MetricReport};
use progan_core::sampling::{image_grid, latent_walk, sample_batch, to_gray_images};
use progan_core::trainer::{
    self, generator_from_checkpoint, list_checkpoints, load_checkpoint, read_diagnostics,
    select_checkpoint, SelectConfig,
};
use progan_core::View;

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "progan", version, about = "Progressive GAN training engine for grayscale image synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resize-and-pad images to a target resolution.
    Preprocess {
        /// Directory of input images (.pgm/.png).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target_h: usize,
        #[arg(long)]
        target_w: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the progressive training schedule from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value = "cc")]
        view: View,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a grid composite of the samples.
        #[arg(long)]
        grid: bool,
    },
    /// Spherically interpolated random walk through latent space.
    Walk {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value = "cc")]
        view: View,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-scale sliced Wasserstein distance between two image sets.
    EvalSwd {
        #[arg(long)]
        dir_a: PathBuf,
        #[arg(long)]
        dir_b: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional config file supplying metric parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Randomized-pairing MS-SSIM diversity report between two image sets.
    EvalMsssim {
        #[arg(long)]
        dir_a: PathBuf,
        #[arg(long)]
        dir_b: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize a run's diagnostics CSV and rank its checkpoints by SWD.
    Diagnose {
        /// Run directory containing diagnostics.csv and checkpoints.
        #[arg(long)]
        run: PathBuf,
        /// Directory of real images for checkpoint ranking (optional).
        #[arg(long)]
        eval_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional config file supplying metric parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        })*
    };
}

runtime_from!(
    std::io::Error,
    progan_core::dataio::DataError,
    progan_core::metrics::MetricError,
    progan_core::nets::NetError,
    progan_core::tensor::TensorError,
    progan_core::trainer::TrainError
);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Preprocess { input, target_h, target_w, out } => {
            cmd_preprocess(&input, target_h, target_w, &out)
        }
        Command::Train { config, out, seed, resume } => {
            cmd_train(&config, out, seed, resume.as_deref())
        }
        Command::Sample { ckpt, count, view, seed, out, grid } => {
            cmd_sample(&ckpt, count, view, seed, &out, grid)
        }
        Command::Walk { ckpt, frames, view, seed, out } => {
            cmd_walk(&ckpt, frames, view, seed, &out)
        }
        Command::EvalSwd { dir_a, dir_b, seed, out, config } => {
            cmd_eval(&dir_a, &dir_b, seed, &out, config.as_deref(), EvalKind::Swd)
        }
        Command::EvalMsssim { dir_a, dir_b, seed, out, config } => {
            cmd_eval(&dir_a, &dir_b, seed, &out, config.as_deref(), EvalKind::Msssim)
        }
        Command::Diagnose { run, eval_dir, seed, config } => {
            cmd_diagnose(&run, eval_dir.as_deref(), seed, config.as_deref())
        }
    }
}

fn cmd_preprocess(input: &Path, target_h: usize, target_w: usize, out: &Path) -> Result<(), CliError> {
    if target_h == 0 || target_w == 0 {
        return Err(CliError::Usage("target dimensions must be positive".into()));
    }
    if !input.is_dir() {
        return Err(CliError::Usage(format!("input directory {} not found", input.display())));
    }
    std::fs::create_dir_all(out)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("pgm") | Some("png")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no images in {}", input.display())));
    }
    for path in &paths {
        let img = progan_core::dataio::load_image(path)?;
        let processed = preprocess(&img, target_h, target_w)?;
        let dest = out.join(path.file_name().unwrap());
        save_image(&processed, &dest)?;
    }
    println!("preprocessed {} images to {}x{} in {}", paths.len(), target_h, target_w, out.display());
    Ok(())
}

fn cmd_train(
    config_path: &Path,
    out_override: Option<PathBuf>,
    seed_override: Option<u64>,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.check_mode("train")?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let out = out_override
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Usage("no output directory (set `out` or pass --out)".into()))?;
    let plan = cfg.stage_plan()?;
    let train_cfg = cfg.train_config();

    let report = if let Some((phantom_cfg, count)) = cfg.phantom_config() {
        let dataset = PhantomDataset::new(&phantom_cfg, count)?;
        trainer::run(&plan, &train_cfg, &dataset, &out, resume)?
    } else if let Some(config::DataSection::Dir { manifest }) = &cfg.data {
        let manifest = if manifest.is_absolute() {
            manifest.clone()
        } else {
            config_path.parent().unwrap_or(Path::new(".")).join(manifest)
        };
        let dataset = DirDataset::from_manifest(&manifest, None)?;
        trainer::run(&plan, &train_cfg, &dataset, &out, resume)?
    } else {
        return Err(CliError::Usage("config has no [data] source".into()));
    };

    println!(
        "trained on {} images (stage {}, alpha {:.3}), {} restarts, {:.1}s",
        report.images_seen,
        report.final_fade.stage(),
        report.final_fade.alpha(),
        report.restarts,
        report.wall_seconds
    );
    for ckpt in &report.checkpoints {
        println!("checkpoint {}", ckpt.display());
    }
    Ok(())
}

fn load_generator(ckpt: &Path) -> Result<(progan_core::nets::Generator, progan_core::nets::FadeState), CliError> {
    if !ckpt.join(trainer::MANIFEST_NAME).is_file() {
        return Err(CliError::Usage(format!("{} is not a checkpoint directory", ckpt.display())));
    }
    let loaded = load_checkpoint(ckpt)?;
    Ok(generator_from_checkpoint(&loaded)?)
}

fn cmd_sample(
    ckpt: &Path,
    count: usize,
    view: View,
    seed: u64,
    out: &Path,
    grid: bool,
) -> Result<(), CliError> {
    let (gen, fade) = load_generator(ckpt)?;
    std::fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images: Vec<GrayImage> = Vec::with_capacity(count);
    let mut remaining = count;
    while remaining > 0 {
        let n = remaining.min(32);
        let labels = vec![view; n];
        let batch = sample_batch(&gen, fade, &labels, progan_core::objectives::LatentKind::Normal, &mut rng)?;
        images.extend(to_gray_images(&batch));
        remaining -= n;
    }
    for (i, img) in images.iter().enumerate() {
        save_image(img, &out.join(format!("sample_{}_{i:04}.png", view.as_str())))?;
    }
    if grid && !images.is_empty() {
        let cols = 6usize.min(images.len());
        let rows = images.len().div_ceil(cols);
        save_image(&image_grid(&images, cols, rows), &out.join(format!("grid_{}.png", view.as_str())))?;
    }
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn cmd_walk(ckpt: &Path, frames: usize, view: View, seed: u64, out: &Path) -> Result<(), CliError> {
    if frames < 2 {
        return Err(CliError::Usage("a walk needs at least 2 frames".into()));
    }
    let (gen, fade) = load_generator(ckpt)?;
    std::fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = latent_walk(&gen, fade, view, frames, progan_core::objectives::LatentKind::Normal, &mut rng)?;
    for (i, img) in images.iter().enumerate() {
        save_image(img, &out.join(format!("frame_{i:04}.png")))?;
    }
    println!("wrote {frames} walk frames to {}", out.display());
    Ok(())
}

enum EvalKind {
    Swd,
    Msssim,
}

fn cmd_eval(
    dir_a: &Path,
    dir_b: &Path,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
    kind: EvalKind,
) -> Result<(), CliError> {
    let cfg = match config {
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    let set_a = load_images_from_dir(dir_a)?;
    let set_b = load_images_from_dir(dir_b)?;
    let report: MetricReport = match kind {
        EvalKind::Swd => {
            let swd_cfg = cfg.as_ref().map(|c| c.swd_config()).unwrap_or_default();
            swd_multiscale(&set_a, &set_b, &swd_cfg, seed)?
        }
        EvalKind::Msssim => {
            let pairs = cfg.as_ref().map(|c| c.metrics.msssim_pairs).unwrap_or(100);
            msssim_diversity_report(&set_a, &set_b, pairs, seed)?
        }
    };
    print!("{report}");
    std::fs::create_dir_all(out)?;
    let name = match kind {
        EvalKind::Swd => "swd_report.csv",
        EvalKind::Msssim => "msssim_report.csv",
    };
    std::fs::write(out.join(name), report.to_csv())?;
    println!("report written to {}", out.join(name).display());
    Ok(())
}

fn cmd_diagnose(
    run: &Path,
    eval_dir: Option<&Path>,
    seed: u64,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let diag = run.join("diagnostics.csv");
    let rows = read_diagnostics(&diag)?;
    if rows.is_empty() {
        println!("no diagnostics rows in {}", diag.display());
        return Ok(());
    }
    let flagged = rows.iter().filter(|r| r.is_flagged()).count();
    let last = rows.last().unwrap();
    println!("rows: {} ({} flagged)", rows.len(), flagged);
    println!("images seen: {}", last.images_seen);
    let col = |name: &str, f: &dyn Fn(&trainer::DiagnosticsRow) -> f64| {
        let values: Vec<f64> = rows.iter().map(f).collect();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("{name}: last {:.4}  min {min:.4}  max {max:.4}", f(last));
    };
    col("critic_loss", &|r| r.critic_loss);
    col("d_bce", &|r| r.d_bce);
    col("grad_mag", &|r| r.grad_mag);
    col("label_ce_real", &|r| r.label_ce_real);
    col("label_ce_fake", &|r| r.label_ce_fake);

    if let Some(eval_dir) = eval_dir {
        let eval = load_images_from_dir(eval_dir)?;
        let ckpts = list_checkpoints(run)?;
        if ckpts.is_empty() {
            println!("no checkpoints under {}", run.display());
        } else {
            let sel = match config {
                Some(p) => {
                    let cfg = RunConfig::load(p)?;
                    SelectConfig {
                        seed,
                        sample_count: cfg.metrics.select_samples,
                        swd: cfg.swd_config(),
                        ..Default::default()
                    }
                }
                None => SelectConfig { seed, ..Default::default() },
            };
            let outcome = select_checkpoint(&ckpts, &eval, &sel)?;
            for (path, score) in ckpts.iter().zip(&outcome.scores) {
                println!("{}  swd_mean {:.6}", path.display(), score);
            }
            println!("best checkpoint: {}", outcome.best_path.display());
        }
    }
    Ok(())
}
