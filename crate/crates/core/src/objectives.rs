//! Loss functions: the original GAN value, the non-saturating generator
//! loss, Wasserstein critic/generator losses, the gradient penalty with its
//! interpolate sampler, the auxiliary label cross-entropy, and the latent
//! prior sampler.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{one_hot, Tape, Tensor, TensorError, Var};
use crate::View;

/// Epsilon inside the gradient-norm square root; keeps the norm
/// differentiable at zero without noticeably shifting unit-norm gradients.
pub const NORM_EPS: f32 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f32),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// Weight and target of the gradient penalty term. `beta` is the target
/// gradient magnitude; `lambda` scales the penalty.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GradientPenaltyConfig {
    pub lambda: f32,
    pub beta: f32,
}

impl Default for GradientPenaltyConfig {
    fn default() -> Self {
        GradientPenaltyConfig { lambda: 10.0, beta: 1.0 }
    }
}

/// Shape of the latent prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentKind {
    Normal,
    Uniform,
}

/// Seedable latent prior: standard normal by default, uniform on [-1, 1]
/// as an option.
#[derive(Debug, Clone, Copy)]
pub struct LatentSampler {
    pub kind: LatentKind,
    pub dim: usize,
}

impl LatentSampler {
    pub fn normal(dim: usize) -> LatentSampler {
        LatentSampler { kind: LatentKind::Normal, dim }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        let data: Vec<f32> = match self.kind {
            LatentKind::Normal => (0..n * self.dim).map(|_| StandardNormal.sample(rng)).collect(),
            LatentKind::Uniform => (0..n * self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        Tensor::from_parts(vec![n, self.dim], data)
    }
}

fn check_probs(v: &Var) -> Result<()> {
    for &p in v.value().data() {
        if !(p > 0.0 && p < 1.0) {
            return Err(ObjectiveError::InvalidProbability(p));
        }
    }
    Ok(())
}

/// Original GAN value: `mean log d_real + mean log(1 - d_fake)`. The
/// discriminator ascends this, the generator descends it.
pub fn gan_value(d_real: &Var, d_fake: &Var) -> Result<Var> {
    check_probs(d_real)?;
    check_probs(d_fake)?;
    let real_term = d_real.log()?.mean_all()?;
    let fake_term = d_fake.neg()?.add_scalar(1.0)?.log()?.mean_all()?;
    Ok(real_term.add(&fake_term)?)
}

/// Non-saturating generator loss `-mean log d_fake`; its gradient stays
/// useful even when the discriminator is confident.
pub fn g_loss_nonsaturating(d_fake: &Var) -> Result<Var> {
    check_probs(d_fake)?;
    Ok(d_fake.log()?.mean_all()?.neg()?)
}

/// Wasserstein losses from raw critic scores:
/// `critic_loss = mean f_fake - mean f_real` (minimized by the critic) and
/// `gen_loss = -mean f_fake` (minimized by the generator).
pub fn wgan_losses(f_real: &Var, f_fake: &Var) -> Result<(Var, Var)> {
    let mean_fake = f_fake.mean_all()?;
    let critic_loss = mean_fake.sub(&f_real.mean_all()?)?;
    let gen_loss = mean_fake.neg()?;
    Ok((critic_loss, gen_loss))
}

/// Per-item convex combinations with the given mixing coefficients:
/// `out_i = gamma_i * real_i + (1 - gamma_i) * fake_i`.
pub fn interpolates_with_gammas(
    x_real: &Tensor,
    x_fake: &Tensor,
    gammas: &[f32],
) -> Result<Tensor> {
    if x_real.shape() != x_fake.shape() {
        return Err(ObjectiveError::Tensor(TensorError::ShapeMismatch {
            op: "sample_interpolates",
            detail: format!("{:?} vs {:?}", x_real.shape(), x_fake.shape()),
        }));
    }
    let n = x_real.shape()[0];
    if gammas.len() != n {
        return Err(ObjectiveError::Tensor(TensorError::ShapeMismatch {
            op: "sample_interpolates",
            detail: format!("{} gammas for batch of {n}", gammas.len()),
        }));
    }
    let item = x_real.numel() / n;
    let mut data = Vec::with_capacity(x_real.numel());
    for (i, &g) in gammas.iter().enumerate() {
        for j in 0..item {
            let idx = i * item + j;
            data.push(g * x_real.data()[idx] + (1.0 - g) * x_fake.data()[idx]);
        }
    }
    Ok(Tensor::from_parts(x_real.shape().to_vec(), data))
}

/// Random interpolation between real and generated batches with one
/// `gamma ~ U(0,1)` per item. The result is intended to be placed on a
/// tape as a grad-enabled leaf (see [`gradient_penalty`]).
pub fn sample_interpolates(
    x_real: &Tensor,
    x_fake: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let n = x_real.shape()[0];
    let gammas: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    interpolates_with_gammas(x_real, x_fake, &gammas)
}

/// Gradient penalty on critic input gradients: the per-item L2 norm of the
/// critic's input gradient over all pixels is pushed toward `beta`, averaged over
/// the batch, scaled by `lambda`.
///
/// `critic_scores` runs the critic on the grad-enabled interpolate leaf
/// this function creates, and must return per-item scores `[N]`. Returns
/// `(penalty, mean gradient norm)`; both are tape variables, and the
/// penalty is differentiable with respect to critic parameters because the
/// inner backward pass is itself recorded.
pub fn gradient_penalty<F, E>(
    tape: &Tape,
    x_hat: Tensor,
    cfg: &GradientPenaltyConfig,
    critic_scores: F,
) -> std::result::Result<(Var, Var), E>
where
    F: FnOnce(&Var) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    let x = tape.leaf(x_hat, true);
    let scores = critic_scores(&x)?;
    let total = scores.sum_all()?;
    let grad = tape.grad(&total, std::slice::from_ref(&x), true)?.remove(0);
    let norms = grad.square()?.item_sum()?.add_scalar(NORM_EPS)?.sqrt()?;
    let penalty = norms
        .add_scalar(-cfg.beta)?
        .square()?
        .mean_all()?
        .scale(cfg.lambda)?;
    let mean_norm = norms.mean_all()?;
    Ok((penalty, mean_norm))
}

/// Mean softmax cross-entropy of the critic's label head against view
/// labels.
pub fn label_ce(logits: &Var, labels: &[View]) -> Result<Var> {
    let idx: Vec<usize> = labels.iter().map(|v| v.index()).collect();
    let targets = logits.tape().constant(one_hot(&idx, 2));
    Ok(logits.softmax_cross_entropy(&targets)?)
}

/// Small score anchor `eps * mean(f_real^2)` that keeps critic outputs from
/// drifting without bound.
pub fn drift_penalty(f_real: &Var, eps: f32) -> Result<Var> {
    Ok(f_real.square()?.mean_all()?.scale(eps)?)
}
