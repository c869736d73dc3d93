//! Sample generation, latent-space walks and grid composition.
//!
//! Training and the networks operate in the signed range [-1, 1]; files
//! and metrics use [0, 1]. The conversions live here.

use rand_chacha::ChaCha8Rng;

use crate::dataio::GrayImage;
use crate::nets::{FadeState, Generator, NetError};
use crate::objectives::{LatentKind, LatentSampler};
use crate::tensor::{kernels, GradMode, Tape, Tensor};
use crate::View;

/// Map a [0,1] image batch into the network's signed range.
pub fn to_signed(batch: &Tensor) -> Tensor {
    let data: Vec<f32> = batch.data().iter().map(|&v| v * 2.0 - 1.0).collect();
    Tensor::from_parts(batch.shape().to_vec(), data)
}

/// Map generator output `[N,1,H,W]` back to [0,1] images, clamping.
pub fn to_gray_images(batch: &Tensor) -> Vec<GrayImage> {
    let (n, h, w) = (batch.shape()[0], batch.shape()[2], batch.shape()[3]);
    let item = h * w;
    (0..n)
        .map(|i| {
            let data: Vec<f32> = batch.data()[i * item..(i + 1) * item]
                .iter()
                .map(|&v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
                .collect();
            GrayImage::from_parts(h, w, data)
        })
        .collect()
}

/// Draw latents from `rng` and run the generator; returns the raw signed
/// batch `[N,1,H,W]`.
pub fn sample_batch(
    gen: &Generator,
    fade: FadeState,
    labels: &[View],
    latent: LatentKind,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, NetError> {
    let sampler = LatentSampler { kind: latent, dim: gen.plan().latent_dim() };
    let z = sampler.sample(rng, labels.len());
    sample_from_latents(gen, fade, labels, &z)
}

/// Run the generator on explicit latents.
pub fn sample_from_latents(
    gen: &Generator,
    fade: FadeState,
    labels: &[View],
    z: &Tensor,
) -> Result<Tensor, NetError> {
    let tape = Tape::new();
    let binding = gen.bind(&tape, GradMode::Freeze, fade)?;
    let zv = tape.constant(z.clone());
    let out = gen.forward(&binding, &zv, labels, fade)?;
    Ok(out.value())
}

/// Nearest-neighbor upsample a batch by factors of two until it reaches
/// `target` extents (used to compare checkpoints at different stages on a
/// common resolution).
pub fn upsample_batch_to(batch: Tensor, target: (usize, usize)) -> Result<Tensor, NetError> {
    let mut cur = batch;
    loop {
        let (h, w) = (cur.shape()[2], cur.shape()[3]);
        if (h, w) == target {
            return Ok(cur);
        }
        if h > target.0 || w > target.1 || target.0 % h != 0 || target.1 % w != 0 {
            return Err(NetError::ResolutionMismatch { expected: target, got: (h, w) });
        }
        cur = kernels::up2(&cur);
    }
}

/// Spherical interpolation between two latent vectors. At `t = 0` and
/// `t = 1` the endpoints are reproduced bit-exactly.
pub fn slerp(a: &[f32], b: &[f32], t: f32) -> Vec<f32> {
    assert_eq!(a.len(), b.len());
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|v| v * v).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|v| v * v).sum::<f32>().sqrt();
    let cos = (dot / (na * nb).max(1e-12)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    if omega.sin().abs() < 1e-6 {
        // nearly collinear: fall back to linear interpolation
        return a.iter().zip(b).map(|(x, y)| x * (1.0 - t) + y * t).collect();
    }
    let sin_omega = omega.sin();
    let ca = ((1.0 - t) * omega).sin() / sin_omega;
    let cb = (t * omega).sin() / sin_omega;
    a.iter().zip(b).map(|(x, y)| ca * x + cb * y).collect()
}

/// Frames per interpolation segment of a latent walk.
pub const WALK_FRAMES_PER_SEGMENT: usize = 10;

/// Random walk through latent space: waypoints are drawn from the prior
/// and consecutive waypoints are spherically interpolated. The first and
/// last frames equal direct samples of the endpoint latents.
pub fn latent_walk(
    gen: &Generator,
    fade: FadeState,
    view: View,
    n_frames: usize,
    latent: LatentKind,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GrayImage>, NetError> {
    assert!(n_frames >= 2, "a walk needs at least two frames");
    let segments = (n_frames - 1).div_ceil(WALK_FRAMES_PER_SEGMENT).max(1);
    let sampler = LatentSampler { kind: latent, dim: gen.plan().latent_dim() };
    let waypoints: Vec<Vec<f32>> =
        (0..=segments).map(|_| sampler.sample(rng, 1).data().to_vec()).collect();

    let mut frames = Vec::with_capacity(n_frames);
    for j in 0..n_frames {
        let u = j as f64 * segments as f64 / (n_frames - 1) as f64;
        let s = (u.floor() as usize).min(segments - 1);
        let t = (u - s as f64) as f32;
        let z = slerp(&waypoints[s], &waypoints[s + 1], t);
        let zt = Tensor::from_parts(vec![1, z.len()], z);
        let batch = sample_from_latents(gen, fade, &[view], &zt)?;
        frames.push(to_gray_images(&batch).remove(0));
    }
    Ok(frames)
}

/// Compose images into a `cols x rows` grid, row-major; missing cells stay
/// black. All images must share one resolution.
pub fn image_grid(images: &[GrayImage], cols: usize, rows: usize) -> GrayImage {
    assert!(!images.is_empty());
    let (h, w) = (images[0].height(), images[0].width());
    let mut out = GrayImage::zeros(rows * h, cols * w);
    for (i, img) in images.iter().take(cols * rows).enumerate() {
        assert_eq!((img.height(), img.width()), (h, w));
        let (r, c) = (i / cols, i % cols);
        for y in 0..h {
            let src = &img.data()[y * w..(y + 1) * w];
            let dst_base = (r * h + y) * (cols * w) + c * w;
            out.data_mut()[dst_base..dst_base + w].copy_from_slice(src);
        }
    }
    out
}
