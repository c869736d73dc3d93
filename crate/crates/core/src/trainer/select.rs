//! SWD-based checkpoint selection.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::GrayImage;
use crate::metrics::{swd_multiscale, SwdConfig};
use crate::sampling::{sample_batch, to_gray_images, upsample_batch_to};
use crate::objectives::LatentKind;
use crate::View;

use super::{generator_from_checkpoint, load_checkpoint, Result, TrainError};

#[derive(Debug, Clone)]
pub struct SelectConfig {
    /// How many images to generate per checkpoint.
    pub sample_count: usize,
    pub seed: u64,
    pub latent: LatentKind,
    pub swd: SwdConfig,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            sample_count: 64,
            seed: 0,
            latent: LatentKind::Normal,
            swd: SwdConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct SelectionReport {
    pub best_index: usize,
    pub best_path: PathBuf,
    /// Mean multi-scale SWD per candidate, in input order.
    pub scores: Vec<f64>,
}

/// Evaluate each checkpoint's generator against a held-out real set and
/// return the argmin of the mean multi-scale SWD. Samples are generated
/// with a fixed count and seed, upsampled to the evaluation resolution
/// when the checkpoint is at an earlier stage; ties go to the checkpoint
/// with the most images seen.
pub fn select_checkpoint(
    checkpoints: &[PathBuf],
    eval_set: &[GrayImage],
    cfg: &SelectConfig,
) -> Result<SelectionReport> {
    if checkpoints.is_empty() {
        return Err(TrainError::Checkpoint("no checkpoints to select from".into()));
    }
    if eval_set.is_empty() {
        return Err(TrainError::Checkpoint("empty evaluation set".into()));
    }
    let target = (eval_set[0].height(), eval_set[0].width());

    let mut scores = Vec::with_capacity(checkpoints.len());
    let mut best: Option<(usize, f64, u64)> = None;
    for (i, path) in checkpoints.iter().enumerate() {
        let ckpt = load_checkpoint(path)?;
        let samples = generate_eval_samples(path, cfg, target)?;
        let report = swd_multiscale(eval_set, &samples, &cfg.swd, cfg.seed)?;
        let score = report.swd_mean.unwrap_or(f64::INFINITY);
        scores.push(score);
        let images = ckpt.manifest.images_seen;
        let better = match best {
            None => true,
            Some((_, s, imgs)) => score < s || (score == s && images >= imgs),
        };
        if better {
            best = Some((i, score, images));
        }
    }
    let (best_index, _, _) = best.unwrap();
    Ok(SelectionReport { best_index, best_path: checkpoints[best_index].clone(), scores })
}

/// Deterministic sample set for one checkpoint, at the evaluation
/// resolution, with labels alternating CC/MLO.
pub fn generate_eval_samples(
    ckpt_path: &Path,
    cfg: &SelectConfig,
    target: (usize, usize),
) -> Result<Vec<GrayImage>> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let (gen, fade) = generator_from_checkpoint(&ckpt)?;
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&cfg.seed.to_le_bytes());
    bytes[16] = 0x41;
    let mut rng = ChaCha8Rng::from_seed(bytes);

    let mut out = Vec::with_capacity(cfg.sample_count);
    let mut remaining = cfg.sample_count;
    let mut offset = 0usize;
    while remaining > 0 {
        let n = remaining.min(16);
        let labels: Vec<View> = (0..n)
            .map(|j| if (offset + j) % 2 == 0 { View::Cc } else { View::Mlo })
            .collect();
        let batch = sample_batch(&gen, fade, &labels, cfg.latent, &mut rng)?;
        let batch = upsample_batch_to(batch, target)?;
        out.extend(to_gray_images(&batch));
        offset += n;
        remaining -= n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::PhantomConfig;
    use crate::nets::{StagePlan, StageSpec};
    use crate::trainer::{Trainer, TrainConfig, TrainSchedule, StagePhase};
    use crate::objectives::GradientPenaltyConfig;

    fn plan() -> StagePlan {
        StagePlan::new(
            vec![
                StageSpec { height: 8, width: 8, channels: 8 },
                StageSpec { height: 16, width: 16, channels: 8 },
            ],
            8,
        )
        .unwrap()
    }

    fn config(seed: u64) -> TrainConfig {
        TrainConfig {
            schedule: TrainSchedule {
                stages: vec![
                    StagePhase { images_fade: 0, images_stable: 32, batch_size: 4 },
                    StagePhase { images_fade: 32, images_stable: 32, batch_size: 4 },
                ],
                learning_rate: 0.001,
                n_critic_ramp: vec![(0, 1)],
                total_images_target: None,
                seed,
            },
            penalty: GradientPenaltyConfig::default(),
            drift_eps: 0.001,
            label_weight: 1.0,
            latent: LatentKind::Normal,
            use_mbstd: true,
            log_interval_images: 1000,
            grid_interval_images: 1 << 40,
            ckpt_interval_images: 1 << 40,
            max_restarts: 1,
        }
    }

    #[test]
    fn single_checkpoint_returned_trivially() {
        let dir = tempfile::tempdir().unwrap();
        let trainer = Trainer::new(plan(), config(0)).unwrap();
        let ck = dir.path().join("ckpt_0");
        trainer.save_to(&ck, (0, 0)).unwrap();

        let phantoms = PhantomConfig { height: 16, width: 16, ..Default::default() };
        let eval: Vec<GrayImage> = (0..6u64).map(|i| phantoms.generate(i).image).collect();
        let cfg = SelectConfig {
            sample_count: 6,
            swd: SwdConfig { patches_per_image: 16, n_projections: 16, ..Default::default() },
            ..Default::default()
        };
        let report = select_checkpoint(std::slice::from_ref(&ck), &eval, &cfg).unwrap();
        assert_eq!(report.best_index, 0);
        assert_eq!(report.best_path, ck);
        assert_eq!(report.scores.len(), 1);
    }

    #[test]
    fn equal_scores_prefer_later_checkpoint() {
        // identical weights saved under two labels: tie resolves to the
        // one with more images seen
        let dir = tempfile::tempdir().unwrap();
        let mut trainer = Trainer::new(plan(), config(1)).unwrap();
        let a = dir.path().join("ckpt_0");
        trainer.save_to(&a, (0, 0)).unwrap();
        // pretend images advanced without weight changes
        let b = dir.path().join("ckpt_100");
        trainer_force_images(&mut trainer, 100);
        trainer.save_to(&b, (0, 0)).unwrap();

        let phantoms = PhantomConfig { height: 16, width: 16, ..Default::default() };
        let eval: Vec<GrayImage> = (0..4u64).map(|i| phantoms.generate(i).image).collect();
        let cfg = SelectConfig {
            sample_count: 4,
            swd: SwdConfig { patches_per_image: 8, n_projections: 8, ..Default::default() },
            ..Default::default()
        };
        let report = select_checkpoint(&[a, b.clone()], &eval, &cfg).unwrap();
        assert_eq!(report.scores[0], report.scores[1]);
        assert_eq!(report.best_path, b);
    }

    fn trainer_force_images(t: &mut Trainer, images: u64) {
        t.images_seen = images;
    }

    #[test]
    fn empty_candidate_list_errors() {
        let cfg = SelectConfig::default();
        let eval = vec![GrayImage::zeros(16, 16)];
        assert!(select_checkpoint(&[], &eval, &cfg).is_err());
    }
}
