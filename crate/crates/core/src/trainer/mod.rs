//! Progressive training loop: phase scheduling, fade-in ramping,
//! alternating critic/generator updates with the n_critic ramp,
//! diagnostics, checkpointing and SWD-based checkpoint selection.

mod checkpoint;
mod diagnostics;
mod select;

pub use checkpoint::{
    list_checkpoints, load_checkpoint, save_checkpoint, Checkpoint, Manifest, SaveState,
    MANIFEST_NAME,
};
pub use diagnostics::{
    monitored_bce, read_diagnostics, DiagnosticsRow, DiagnosticsWriter, DIAG_HEADER,
};
pub use select::{generate_eval_samples, select_checkpoint, SelectConfig, SelectionReport};

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{DataError, Dataset, EpochStream};
use crate::metrics::MetricError;
use crate::nets::{init_weights, Critic, FadeState, Generator, NetError, StagePlan};
use crate::objectives::{
    drift_penalty, gradient_penalty, label_ce, sample_interpolates, wgan_losses,
    GradientPenaltyConfig, LatentKind, LatentSampler, ObjectiveError,
};
use crate::sampling::{image_grid, sample_batch, to_gray_images, to_signed};
use crate::tensor::{AdamConfig, GradMode, Tape, Tensor, TensorError};
use crate::View;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("training failed after {restarts} restarts: {last}")]
    TooManyRestarts { restarts: u32, last: String },
}

impl TrainError {
    /// Numeric blow-ups abort the step but the run recovers by rolling
    /// back to the last checkpoint with a fresh RNG stream.
    pub fn is_recoverable(&self) -> bool {
        matches!(
            self,
            TrainError::Tensor(TensorError::NonFinite { .. })
                | TrainError::Net(NetError::Tensor(TensorError::NonFinite { .. }))
                | TrainError::Objective(ObjectiveError::Tensor(TensorError::NonFinite { .. }))
        )
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Image budget and batch size of one progressive stage.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct StagePhase {
    pub images_fade: u64,
    pub images_stable: u64,
    pub batch_size: usize,
}

/// The per-resolution phase plan.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainSchedule {
    pub stages: Vec<StagePhase>,
    pub learning_rate: f32,
    /// Stage-bound critic-updates-per-generator-update ramp, as
    /// `(stage_index, n_critic)` entries.
    pub n_critic_ramp: Vec<(usize, u32)>,
    /// Stop after this many real images; defaults to the phase sum.
    pub total_images_target: Option<u64>,
    pub seed: u64,
}

impl TrainSchedule {
    /// Workstation-scale defaults: 20k fade + 20k stable images per
    /// stage, batch 16/16/8/4,
    /// learning rate 0.0015, n_critic ramp 1/1/3/5.
    pub fn desk_default() -> TrainSchedule {
        TrainSchedule {
            stages: vec![
                StagePhase { images_fade: 20_000, images_stable: 20_000, batch_size: 16 },
                StagePhase { images_fade: 20_000, images_stable: 20_000, batch_size: 16 },
                StagePhase { images_fade: 20_000, images_stable: 20_000, batch_size: 8 },
                StagePhase { images_fade: 20_000, images_stable: 20_000, batch_size: 4 },
            ],
            learning_rate: 0.0015,
            n_critic_ramp: vec![(0, 1), (1, 1), (2, 3), (3, 5)],
            total_images_target: None,
            seed: 0,
        }
    }

    pub fn validate(&self, plan: &StagePlan) -> Result<()> {
        if self.stages.len() != plan.num_stages() {
            return Err(TrainError::InvalidSchedule(format!(
                "{} stage phases for a {}-stage plan",
                self.stages.len(),
                plan.num_stages()
            )));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.batch_size == 0 {
                return Err(TrainError::InvalidSchedule(format!("stage {i} batch size 0")));
            }
        }
        let mut prev = 0u32;
        for &(stage, n) in &self.n_critic_ramp {
            if !(1..=5).contains(&n) {
                return Err(TrainError::InvalidSchedule(format!("n_critic {n} outside [1, 5]")));
            }
            if n < prev {
                return Err(TrainError::InvalidSchedule(
                    "n_critic ramp must be non-decreasing".into(),
                ));
            }
            if stage >= plan.num_stages() {
                return Err(TrainError::InvalidSchedule(format!(
                    "ramp stage {stage} beyond plan"
                )));
            }
            prev = n;
        }
        Ok(())
    }

    /// Active n_critic: the last ramp entry at or before `stage` (1 when
    /// none applies).
    pub fn n_critic_for(&self, stage: usize) -> u32 {
        let mut n = 1u32;
        for &(s, v) in &self.n_critic_ramp {
            if s <= stage {
                n = v;
            }
        }
        n
    }

    pub fn phase_total(&self, stage: usize) -> u64 {
        self.stages[stage].images_fade + self.stages[stage].images_stable
    }

    pub fn planned_total(&self) -> u64 {
        self.total_images_target
            .unwrap_or_else(|| self.stages.iter().map(|s| s.images_fade + s.images_stable).sum())
    }
}

/// Everything the trainer needs besides the plan and the data.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub schedule: TrainSchedule,
    pub penalty: GradientPenaltyConfig,
    /// Score anchor weight; 0 disables.
    pub drift_eps: f32,
    /// Auxiliary label cross-entropy weight on both networks.
    pub label_weight: f32,
    pub latent: LatentKind,
    pub use_mbstd: bool,
    pub log_interval_images: u64,
    pub grid_interval_images: u64,
    pub ckpt_interval_images: u64,
    pub max_restarts: u32,
}

impl TrainConfig {
    pub fn desk_default() -> TrainConfig {
        TrainConfig {
            schedule: TrainSchedule::desk_default(),
            penalty: GradientPenaltyConfig::default(),
            drift_eps: 0.001,
            label_weight: 1.0,
            latent: LatentKind::Normal,
            use_mbstd: true,
            log_interval_images: 1_000,
            grid_interval_images: 10_000,
            ckpt_interval_images: 20_000,
            max_restarts: 10,
        }
    }
}

/// Mutable training state: both networks, fade position, counters and the
/// update RNG stream.
pub struct Trainer {
    plan: StagePlan,
    config: TrainConfig,
    adam: AdamConfig,
    gen: Generator,
    critic: Critic,
    fade: FadeState,
    images_seen: u64,
    images_in_stage: u64,
    restarts: u32,
    rng: ChaCha8Rng,
    critic_updates: u64,
    gen_updates: u64,
}

fn stream_rng(seed: u64, restarts: u32) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..12].copy_from_slice(&restarts.to_le_bytes());
    bytes[16] = 0x7e;
    ChaCha8Rng::from_seed(bytes)
}

impl Trainer {
    pub fn new(plan: StagePlan, config: TrainConfig) -> Result<Trainer> {
        config.schedule.validate(&plan)?;
        let (gen, critic) = init_weights(&plan, config.schedule.seed, config.use_mbstd);
        let adam = AdamConfig { lr: config.schedule.learning_rate, ..AdamConfig::default() };
        let rng = stream_rng(config.schedule.seed, 0);
        Ok(Trainer {
            plan,
            config,
            adam,
            gen,
            critic,
            fade: FadeState::new(0, 1.0),
            images_seen: 0,
            images_in_stage: 0,
            restarts: 0,
            rng,
            critic_updates: 0,
            gen_updates: 0,
        })
    }

    /// Rebuild a trainer in the exact state captured by a checkpoint.
    /// Returns the data-stream position alongside.
    pub fn from_checkpoint(
        config: TrainConfig,
        ckpt: &Checkpoint,
    ) -> Result<(Trainer, (u64, usize))> {
        let m = &ckpt.manifest;
        config.schedule.validate(&m.plan)?;
        if m.seed != config.schedule.seed {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint seed {} differs from configured seed {}",
                m.seed, config.schedule.seed
            )));
        }
        let mut trainer = Trainer::new(m.plan.clone(), config)?;
        for (name, t) in &ckpt.gen_params {
            *trainer.gen.params_mut().get_mut(name)? = t.clone();
        }
        for (name, m_t, v_t) in &ckpt.gen_moments {
            trainer.gen.params_mut().set_state(name, m_t.clone(), v_t.clone(), m.gen_step)?;
        }
        for (name, t) in &ckpt.critic_params {
            *trainer.critic.params_mut().get_mut(name)? = t.clone();
        }
        for (name, m_t, v_t) in &ckpt.critic_moments {
            trainer
                .critic
                .params_mut()
                .set_state(name, m_t.clone(), v_t.clone(), m.critic_step)?;
        }
        trainer.fade = m.fade;
        trainer.images_seen = m.images_seen;
        trainer.images_in_stage = m.images_in_stage;
        trainer.restarts = m.restarts;
        trainer.gen_updates = m.gen_step;
        trainer.critic_updates = m.critic_step;
        trainer.rng = stream_rng(m.seed, m.restarts);
        trainer
            .rng
            .set_word_pos(((m.rng_word_pos_hi as u128) << 64) | m.rng_word_pos_lo as u128);
        Ok((trainer, (m.data_epoch, m.data_cursor as usize)))
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn fade(&self) -> FadeState {
        self.fade
    }

    pub fn images_seen(&self) -> u64 {
        self.images_seen
    }

    pub fn update_counts(&self) -> (u64, u64) {
        (self.critic_updates, self.gen_updates)
    }

    pub fn restarts(&self) -> u32 {
        self.restarts
    }

    fn alpha_now(&self) -> f32 {
        let stage = self.fade.stage();
        if stage == 0 {
            return 1.0;
        }
        let fade_images = self.config.schedule.stages[stage].images_fade;
        if fade_images == 0 {
            return 1.0;
        }
        (self.images_in_stage as f32 / fade_images as f32).clamp(0.0, 1.0)
    }

    /// One training step: `n_critic` critic updates, each on a fresh real
    /// batch and fresh latents, then one generator update. Real and
    /// generated images are never mixed within a discrimination batch.
    pub fn train_step(&mut self, stream: &mut EpochStream) -> Result<DiagnosticsRow> {
        let stage = self.fade.stage();
        let batch = self.config.schedule.stages[stage].batch_size;
        let n_critic = self.config.schedule.n_critic_for(stage);
        let res = self.plan.resolution(stage);
        let sampler = LatentSampler { kind: self.config.latent, dim: self.plan.latent_dim() };

        let mut critic_loss = 0.0;
        let mut d_bce = 0.0;
        let mut grad_mag = 0.0;
        let mut ce_real = 0.0;
        for _ in 0..n_critic {
            self.fade = self.fade.with_alpha(self.alpha_now());
            let (batch01, views) = stream.next_batch(batch, res)?;
            let real = to_signed(&batch01);
            let z = sampler.sample(&mut self.rng, batch);
            let fake_views: Vec<View> = (0..batch)
                .map(|_| if self.rng.gen::<bool>() { View::Mlo } else { View::Cc })
                .collect();
            let out = self.critic_update(&real, &views, &z, &fake_views)?;
            critic_loss = out.0;
            d_bce = out.1;
            grad_mag = out.2;
            ce_real = out.3;
            self.critic_updates += 1;
            self.images_seen += batch as u64;
            self.images_in_stage += batch as u64;
        }

        self.fade = self.fade.with_alpha(self.alpha_now());
        let z = sampler.sample(&mut self.rng, batch);
        let gen_views: Vec<View> = (0..batch)
            .map(|_| if self.rng.gen::<bool>() { View::Mlo } else { View::Cc })
            .collect();
        let ce_fake = self.gen_update(&z, &gen_views)?;
        self.gen_updates += 1;

        // stage transition once this stage's image budget is exhausted
        while self.images_in_stage >= self.config.schedule.phase_total(self.fade.stage())
            && self.fade.stage() + 1 < self.plan.num_stages()
        {
            self.images_in_stage -= self.config.schedule.phase_total(self.fade.stage());
            self.fade = self.fade.grow(&self.plan)?;
            self.fade = self.fade.with_alpha(self.alpha_now());
        }

        Ok(DiagnosticsRow {
            images_seen: self.images_seen,
            critic_loss,
            d_bce,
            grad_mag,
            label_ce_real: ce_real,
            label_ce_fake: ce_fake,
        })
    }

    fn critic_update(
        &mut self,
        real: &Tensor,
        real_views: &[View],
        z: &Tensor,
        fake_views: &[View],
    ) -> Result<(f64, f64, f64, f64)> {
        let fade = self.fade;
        // generated batch, detached from the generator
        let fake = {
            let tape = Tape::new();
            let gb = self.gen.bind(&tape, GradMode::Freeze, fade)?;
            let zv = tape.constant(z.clone());
            self.gen.forward(&gb, &zv, fake_views, fade)?.value()
        };

        let tape = Tape::new();
        let cb = self.critic.bind(&tape, GradMode::Track, fade)?;
        let real_v = tape.constant(real.clone());
        let (s_real, logits_real) = self.critic.forward(&cb, &real_v, fade)?;
        let fake_v = tape.constant(fake.clone());
        let (s_fake, _) = self.critic.forward(&cb, &fake_v, fade)?;
        let (wgan, _) = wgan_losses(&s_real, &s_fake)?;

        let x_hat = sample_interpolates(real, &fake, &mut self.rng)?;
        let (penalty, mean_norm) =
            gradient_penalty::<_, TrainError>(&tape, x_hat, &self.config.penalty, |x| {
                Ok(self.critic.forward(&cb, x, fade)?.0)
            })?;

        let mut loss = wgan.add(&penalty)?;
        if self.config.drift_eps > 0.0 {
            loss = loss.add(&drift_penalty(&s_real, self.config.drift_eps)?)?;
        }
        let ce = label_ce(&logits_real, real_views)?;
        if self.config.label_weight > 0.0 {
            loss = loss.add(&ce.scale(self.config.label_weight)?)?;
        }

        let wrt: Vec<_> = cb.entries().iter().map(|(_, v)| v.clone()).collect();
        let grads = tape.grad(&loss, &wrt, false)?;
        let named: Vec<(String, Tensor)> = cb
            .entries()
            .iter()
            .zip(&grads)
            .map(|((name, _), g)| (name.clone(), g.value()))
            .collect();
        self.critic.params_mut().adam_step(&named, &self.adam)?;

        let bce = monitored_bce(s_real.value().data(), s_fake.value().data());
        Ok((wgan.item() as f64, bce, mean_norm.item() as f64, ce.item() as f64))
    }

    fn gen_update(&mut self, z: &Tensor, views: &[View]) -> Result<f64> {
        let fade = self.fade;
        let tape = Tape::new();
        let gb = self.gen.bind(&tape, GradMode::Track, fade)?;
        let cb = self.critic.bind(&tape, GradMode::Freeze, fade)?;
        let zv = tape.constant(z.clone());
        let fake = self.gen.forward(&gb, &zv, views, fade)?;
        let (s_fake, logits_fake) = self.critic.forward(&cb, &fake, fade)?;
        // generator side of the Wasserstein pair: -mean f_fake
        let (_, mut loss) = wgan_losses(&s_fake, &s_fake)?;
        let ce = label_ce(&logits_fake, views)?;
        if self.config.label_weight > 0.0 {
            loss = loss.add(&ce.scale(self.config.label_weight)?)?;
        }

        let wrt: Vec<_> = gb.entries().iter().map(|(_, v)| v.clone()).collect();
        let grads = tape.grad(&loss, &wrt, false)?;
        let named: Vec<(String, Tensor)> = gb
            .entries()
            .iter()
            .zip(&grads)
            .map(|((name, _), g)| (name.clone(), g.value()))
            .collect();
        self.gen.params_mut().adam_step(&named, &self.adam)?;
        Ok(ce.item() as f64)
    }

    pub fn save_to(&self, dir: &Path, data_pos: (u64, usize)) -> Result<()> {
        save_checkpoint(
            dir,
            &SaveState {
                plan: &self.plan,
                use_mbstd: self.config.use_mbstd,
                seed: self.config.schedule.seed,
                fade: self.fade,
                images_seen: self.images_seen,
                images_in_stage: self.images_in_stage,
                restarts: self.restarts,
                rng_word_pos: self.rng.get_word_pos(),
                data_epoch: data_pos.0,
                data_cursor: data_pos.1 as u64,
                gen_store: self.gen.params(),
                critic_store: self.critic.params(),
            },
        )
    }
}

/// Rebuild just the generator stored in a checkpoint (for sampling and
/// checkpoint selection).
pub fn generator_from_checkpoint(ckpt: &Checkpoint) -> Result<(Generator, FadeState)> {
    let (mut gen, _) =
        init_weights(&ckpt.manifest.plan, ckpt.manifest.seed, ckpt.manifest.use_mbstd);
    for (name, t) in &ckpt.gen_params {
        *gen.params_mut().get_mut(name)? = t.clone();
    }
    Ok((gen, ckpt.manifest.fade))
}

/// Rebuild the critic stored in a checkpoint (for label-head evaluation).
pub fn critic_from_checkpoint(ckpt: &Checkpoint) -> Result<(Critic, FadeState)> {
    let (_, mut critic) =
        init_weights(&ckpt.manifest.plan, ckpt.manifest.seed, ckpt.manifest.use_mbstd);
    for (name, t) in &ckpt.critic_params {
        *critic.params_mut().get_mut(name)? = t.clone();
    }
    Ok((critic, ckpt.manifest.fade))
}

/// Summary of a completed [`run`].
#[derive(Debug)]
pub struct RunReport {
    pub images_seen: u64,
    pub restarts: u32,
    pub checkpoints: Vec<PathBuf>,
    pub final_fade: FadeState,
    pub wall_seconds: f64,
}

/// Execute the progressive schedule over a dataset: fade and stable phases
/// per stage, periodic diagnostics rows, sample grids and checkpoints.
/// With `resume`, continues bit-exactly from the given checkpoint
/// directory, appending to the run directory's diagnostics.
pub fn run(
    plan: &StagePlan,
    config: &TrainConfig,
    dataset: &dyn Dataset,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunReport> {
    let started = std::time::Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let diag_path = out_dir.join("diagnostics.csv");
    let samples_dir = out_dir.join("samples");
    std::fs::create_dir_all(&samples_dir)?;

    let (mut trainer, mut stream, mut diag) = match resume {
        Some(ckpt_dir) => {
            let ckpt = load_checkpoint(ckpt_dir)?;
            let (trainer, (epoch, cursor)) = Trainer::from_checkpoint(config.clone(), &ckpt)?;
            let stream = EpochStream::restore(dataset, config.schedule.seed, epoch, cursor)?;
            let diag = if diag_path.is_file() {
                DiagnosticsWriter::append(&diag_path)?
            } else {
                DiagnosticsWriter::create(&diag_path)?
            };
            (trainer, stream, diag)
        }
        None => {
            let trainer = Trainer::new(plan.clone(), config.clone())?;
            let stream = EpochStream::new(dataset, config.schedule.seed)?;
            let diag = DiagnosticsWriter::create(&diag_path)?;
            (trainer, stream, diag)
        }
    };

    let total = config.schedule.planned_total();
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    let mut last_saved_images = None;

    if resume.is_none() {
        let dir = out_dir.join(format!("ckpt_{}", trainer.images_seen));
        trainer.save_to(&dir, stream.position())?;
        checkpoints.push(dir);
        last_saved_images = Some(trainer.images_seen);
    }
    let mut last_ckpt_dir = checkpoints.last().cloned().or_else(|| resume.map(Path::to_path_buf));

    let log_iv = config.log_interval_images.max(1);
    let grid_iv = config.grid_interval_images.max(1);
    let ckpt_iv = config.ckpt_interval_images.max(1);
    let mut log_bucket = trainer.images_seen / log_iv;
    let mut grid_bucket = trainer.images_seen / grid_iv;
    let mut ckpt_bucket = trainer.images_seen / ckpt_iv;

    while trainer.images_seen < total {
        match trainer.train_step(&mut stream) {
            Ok(row) => {
                if trainer.images_seen / log_iv > log_bucket {
                    log_bucket = trainer.images_seen / log_iv;
                    diag.write_row(&row)?;
                }
                if trainer.images_seen / grid_iv > grid_bucket {
                    grid_bucket = trainer.images_seen / grid_iv;
                    write_sample_grids(&trainer, &samples_dir)?;
                }
                if trainer.images_seen / ckpt_iv > ckpt_bucket {
                    ckpt_bucket = trainer.images_seen / ckpt_iv;
                    let dir = out_dir.join(format!("ckpt_{}", trainer.images_seen));
                    trainer.save_to(&dir, stream.position())?;
                    checkpoints.push(dir.clone());
                    last_saved_images = Some(trainer.images_seen);
                    last_ckpt_dir = Some(dir);
                }
            }
            Err(e) if e.is_recoverable() => {
                // roll back to the last checkpoint and re-draw the RNG
                // stream, then continue
                let source = last_ckpt_dir.clone().ok_or_else(|| TrainError::TooManyRestarts {
                    restarts: 0,
                    last: e.to_string(),
                })?;
                let new_restarts = trainer.restarts + 1;
                if new_restarts > config.max_restarts {
                    return Err(TrainError::TooManyRestarts {
                        restarts: new_restarts,
                        last: e.to_string(),
                    });
                }
                let ckpt = load_checkpoint(&source)?;
                let (mut restored, (epoch, cursor)) =
                    Trainer::from_checkpoint(config.clone(), &ckpt)?;
                restored.restarts = new_restarts;
                restored.rng = stream_rng(config.schedule.seed, new_restarts);
                trainer = restored;
                stream = EpochStream::restore(dataset, config.schedule.seed, epoch, cursor)?;
            }
            Err(e) => return Err(e),
        }
    }

    if last_saved_images != Some(trainer.images_seen) {
        let dir = out_dir.join(format!("ckpt_{}", trainer.images_seen));
        trainer.save_to(&dir, stream.position())?;
        checkpoints.push(dir);
    }

    Ok(RunReport {
        images_seen: trainer.images_seen,
        restarts: trainer.restarts,
        checkpoints,
        final_fade: trainer.fade,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// 6x5 sample grid per view for visual review.
fn write_sample_grids(trainer: &Trainer, samples_dir: &Path) -> Result<()> {
    const COLS: usize = 6;
    const ROWS: usize = 5;
    for view in [View::Cc, View::Mlo] {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&trainer.config.schedule.seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&trainer.images_seen.to_le_bytes());
        bytes[16] = 0x9d + view.index() as u8;
        let mut rng = ChaCha8Rng::from_seed(bytes);
        let labels = vec![view; COLS * ROWS];
        let batch =
            sample_batch(&trainer.gen, trainer.fade, &labels, trainer.config.latent, &mut rng)?;
        let grid = image_grid(&to_gray_images(&batch), COLS, ROWS);
        let path =
            samples_dir.join(format!("grid_{}_{:08}.png", view.as_str(), trainer.images_seen));
        crate::dataio::save_image(&grid, &path)?;
    }
    Ok(())
}
