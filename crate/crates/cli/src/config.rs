//! Declarative run configuration (TOML) mirroring the trainer schedule,
//! model plan, data source and metric parameters.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use progan_core::dataio::PhantomConfig;
use progan_core::metrics::SwdConfig;
use progan_core::nets::{StagePlan, StageSpec};
use progan_core::objectives::{GradientPenaltyConfig, LatentKind};
use progan_core::trainer::{StagePhase, TrainConfig, TrainSchedule};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional mode tag; when present it must match the subcommand.
    pub mode: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub logging: LoggingSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase", tag = "source")]
pub enum DataSection {
    Phantom {
        count: usize,
        #[serde(default = "default_resolution")]
        resolution: [usize; 2],
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "default_texture")]
        texture_strength: f32,
        #[serde(default = "default_calc_prob")]
        calc_prob: f64,
        #[serde(default = "default_marker_prob")]
        marker_prob: f64,
        #[serde(default = "default_wedge")]
        wedge_intensity: f32,
    },
    Dir {
        manifest: PathBuf,
    },
}

fn default_resolution() -> [usize; 2] {
    [64, 64]
}
fn default_texture() -> f32 {
    PhantomConfig::default().texture_strength
}
fn default_calc_prob() -> f64 {
    PhantomConfig::default().calc_prob
}
fn default_marker_prob() -> f64 {
    PhantomConfig::default().marker_prob
}
fn default_wedge() -> f32 {
    PhantomConfig::default().wedge_intensity
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: usize,
    /// Channel count per stage, coarsest first.
    pub channels: Vec<usize>,
    /// Base (coarsest) resolution as `[height, width]`.
    pub base: [usize; 2],
    pub use_mbstd: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { latent_dim: 128, channels: vec![128, 128, 64, 32], base: [8, 8], use_mbstd: true }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub learning_rate: f32,
    pub stages: Vec<StageSection>,
    /// `[stage, n_critic]` pairs.
    pub n_critic_ramp: Vec<[usize; 2]>,
    pub total_images_target: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub images_fade: u64,
    pub images_stable: u64,
    pub batch_size: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let desk = TrainSchedule::desk_default();
        ScheduleSection {
            learning_rate: desk.learning_rate,
            stages: desk
                .stages
                .iter()
                .map(|s| StageSection {
                    images_fade: s.images_fade,
                    images_stable: s.images_stable,
                    batch_size: s.batch_size,
                })
                .collect(),
            n_critic_ramp: desk.n_critic_ramp.iter().map(|&(s, n)| [s, n as usize]).collect(),
            total_images_target: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f32,
    pub beta: f32,
    pub drift_eps: f32,
    pub label_weight: f32,
    pub latent_prior: LatentKind,
}

impl Default for LossSection {
    fn default() -> Self {
        let gp = GradientPenaltyConfig::default();
        LossSection {
            lambda: gp.lambda,
            beta: gp.beta,
            drift_eps: 0.001,
            label_weight: 1.0,
            latent_prior: LatentKind::Normal,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggingSection {
    pub log_interval_images: u64,
    pub grid_interval_images: u64,
    pub ckpt_interval_images: u64,
    pub max_restarts: u32,
}

impl Default for LoggingSection {
    fn default() -> Self {
        let d = TrainConfig::desk_default();
        LoggingSection {
            log_interval_images: d.log_interval_images,
            grid_interval_images: d.grid_interval_images,
            ckpt_interval_images: d.ckpt_interval_images,
            max_restarts: d.max_restarts,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub n_projections: usize,
    pub levels: Option<usize>,
    pub msssim_pairs: usize,
    pub select_samples: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let swd = SwdConfig::default();
        MetricsSection {
            patch_size: swd.patch_size,
            patches_per_image: swd.patches_per_image,
            n_projections: swd.n_projections,
            levels: swd.levels,
            msssim_pairs: 100,
            select_samples: 64,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn check_mode(&self, expected: &str) -> Result<(), ConfigError> {
        match &self.mode {
            Some(m) if m != expected => Err(ConfigError(format!(
                "config declares mode '{m}' but the '{expected}' subcommand was invoked"
            ))),
            _ => Ok(()),
        }
    }

    pub fn stage_plan(&self) -> Result<StagePlan, ConfigError> {
        let specs: Vec<StageSpec> = self
            .model
            .channels
            .iter()
            .enumerate()
            .map(|(i, &channels)| StageSpec {
                height: self.model.base[0] << i,
                width: self.model.base[1] << i,
                channels,
            })
            .collect();
        StagePlan::new(specs, self.model.latent_dim).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: TrainSchedule {
                stages: self
                    .schedule
                    .stages
                    .iter()
                    .map(|s| StagePhase {
                        images_fade: s.images_fade,
                        images_stable: s.images_stable,
                        batch_size: s.batch_size,
                    })
                    .collect(),
                learning_rate: self.schedule.learning_rate,
                n_critic_ramp: self
                    .schedule
                    .n_critic_ramp
                    .iter()
                    .map(|&[s, n]| (s, n as u32))
                    .collect(),
                total_images_target: self.schedule.total_images_target,
                seed: self.seed,
            },
            penalty: GradientPenaltyConfig { lambda: self.loss.lambda, beta: self.loss.beta },
            drift_eps: self.loss.drift_eps,
            label_weight: self.loss.label_weight,
            latent: self.loss.latent_prior,
            use_mbstd: self.model.use_mbstd,
            log_interval_images: self.logging.log_interval_images,
            grid_interval_images: self.logging.grid_interval_images,
            ckpt_interval_images: self.logging.ckpt_interval_images,
            max_restarts: self.logging.max_restarts,
        }
    }

    pub fn swd_config(&self) -> SwdConfig {
        SwdConfig {
            patch_size: self.metrics.patch_size,
            patches_per_image: self.metrics.patches_per_image,
            n_projections: self.metrics.n_projections,
            levels: self.metrics.levels,
        }
    }

    pub fn phantom_config(&self) -> Option<(PhantomConfig, usize)> {
        match &self.data {
            Some(DataSection::Phantom {
                count,
                resolution,
                seed,
                texture_strength,
                calc_prob,
                marker_prob,
                wedge_intensity,
            }) => Some((
                PhantomConfig {
                    height: resolution[0],
                    width: resolution[1],
                    seed: seed.unwrap_or(self.seed),
                    texture_strength: *texture_strength,
                    calc_prob: *calc_prob,
                    marker_prob: *marker_prob,
                    wedge_intensity: *wedge_intensity,
                },
                *count,
            )),
            _ => None,
        }
    }
}
