//! Quantitative evaluation: SSIM / MS-SSIM diversity statistics and the
//! multi-scale sliced Wasserstein distance.

mod ssim;
mod swd;

pub use ssim::{max_scales, mean_msssim_pairs, ms_ssim, ssim, MSSSIM_WEIGHTS};
pub use swd::{
    extract_descriptors, laplacian_pyramid, reconstruct, sliced_wasserstein,
    sliced_wasserstein_with_dirs, Band, PatchDescriptorSet,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::GrayImage;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("image shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("image extent {extent} below required {required}")]
    ImageTooSmall { extent: usize, required: usize },
    #[error("invalid scale count {0}")]
    InvalidScales(usize),
    #[error("extents {extents:?} not divisible by {divisor}")]
    IndivisibleExtents { extents: (usize, usize), divisor: usize },
    #[error("image set of {len} below required {required}")]
    SetTooSmall { len: usize, required: usize },
    #[error("descriptor lengths differ: {a} vs {b}")]
    DescriptorMismatch { a: usize, b: usize },
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Hook for metrics built on learned image features (Inception-style
/// scores, feature-space distances). No extractor ships with this crate;
/// implement the trait to plug a model in.
pub trait FeatureExtractor {
    fn feature_dim(&self) -> usize;
    fn extract(&self, image: &GrayImage) -> Vec<f64>;
}

/// Mean feature vectors of two sets under an extractor and the L2 distance
/// between them — the building block a feature-space metric starts from.
pub fn feature_mean_distance(
    extractor: &dyn FeatureExtractor,
    a: &[GrayImage],
    b: &[GrayImage],
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::SetTooSmall { len: 0, required: 1 });
    }
    let mean = |set: &[GrayImage]| -> Vec<f64> {
        let mut acc = vec![0.0; extractor.feature_dim()];
        for img in set {
            for (slot, v) in acc.iter_mut().zip(extractor.extract(img)) {
                *slot += v;
            }
        }
        acc.iter_mut().for_each(|v| *v /= set.len() as f64);
        acc
    };
    let (ma, mb) = (mean(a), mean(b));
    Ok(ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Knobs of the multi-scale sliced Wasserstein metric.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SwdConfig {
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub n_projections: usize,
    /// Pyramid depth; `None` picks the deepest whose coarsest level still
    /// holds a patch comfortably (coarsest extent >= 16).
    pub levels: Option<usize>,
}

impl Default for SwdConfig {
    fn default() -> Self {
        SwdConfig { patch_size: 7, patches_per_image: 128, n_projections: 512, levels: None }
    }
}

/// Evaluation summary used for checkpoint selection and reporting.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub swd_per_scale: Vec<f64>,
    pub swd_mean: Option<f64>,
    pub msssim_cross: Option<f64>,
    pub msssim_within_real: Option<f64>,
    pub msssim_within_fake: Option<f64>,
}

impl MetricReport {
    /// Merge the populated fields of `other` into `self`.
    pub fn merge(mut self, other: MetricReport) -> MetricReport {
        if !other.swd_per_scale.is_empty() {
            self.swd_per_scale = other.swd_per_scale;
        }
        self.swd_mean = other.swd_mean.or(self.swd_mean);
        self.msssim_cross = other.msssim_cross.or(self.msssim_cross);
        self.msssim_within_real = other.msssim_within_real.or(self.msssim_within_real);
        self.msssim_within_fake = other.msssim_within_fake.or(self.msssim_within_fake);
        self
    }

    /// Two-line CSV: header and values, columns in field order.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> =
            (0..self.swd_per_scale.len()).map(|i| format!("swd_scale{i}")).collect();
        header.extend(
            ["swd_mean", "msssim_cross", "msssim_within_real", "msssim_within_fake"]
                .map(String::from),
        );
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut values: Vec<String> =
            self.swd_per_scale.iter().map(|v| format!("{v:.6}")).collect();
        values.push(fmt(self.swd_mean));
        values.push(fmt(self.msssim_cross));
        values.push(fmt(self.msssim_within_real));
        values.push(fmt(self.msssim_within_fake));
        format!("{}\n{}\n", header.join(","), values.join(","))
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(mean) = self.swd_mean {
            for (i, v) in self.swd_per_scale.iter().enumerate() {
                writeln!(f, "swd scale {i}: {v:.6}")?;
            }
            writeln!(f, "swd mean: {mean:.6}")?;
        }
        if let Some(v) = self.msssim_cross {
            writeln!(f, "ms-ssim cross-set mean: {v:.6}")?;
        }
        if let Some(v) = self.msssim_within_real {
            writeln!(f, "ms-ssim within real: {v:.6}")?;
        }
        if let Some(v) = self.msssim_within_fake {
            writeln!(f, "ms-ssim within fake: {v:.6}")?;
        }
        Ok(())
    }
}

fn check_set_resolutions(images: &[GrayImage]) -> Result<(usize, usize)> {
    let first = images.first().ok_or(MetricError::SetTooSmall { len: 0, required: 1 })?;
    let res = (first.height(), first.width());
    for img in images {
        if (img.height(), img.width()) != res {
            return Err(MetricError::ShapeMismatch { a: res, b: (img.height(), img.width()) });
        }
    }
    Ok(res)
}

/// Pyramid depth so the coarsest level keeps an extent of at least 16.
fn auto_levels(res: (usize, usize)) -> usize {
    let mut levels = 1usize;
    let mut extent = res.0.min(res.1);
    while extent >= 32 && extent % 2 == 0 {
        extent /= 2;
        levels += 1;
    }
    levels
}

/// Multi-scale sliced Wasserstein distance between two image sets at equal
/// resolution: Laplacian pyramids per image, patch descriptors per scale,
/// per-scale SWD and the mean over scales.
pub fn swd_multiscale(
    real: &[GrayImage],
    fake: &[GrayImage],
    cfg: &SwdConfig,
    seed: u64,
) -> Result<MetricReport> {
    let res_r = check_set_resolutions(real)?;
    let res_f = check_set_resolutions(fake)?;
    if res_r != res_f {
        return Err(MetricError::ShapeMismatch { a: res_r, b: res_f });
    }
    let levels = cfg.levels.unwrap_or_else(|| auto_levels(res_r));

    let pyramids_r: Vec<Vec<Band>> =
        real.iter().map(|img| laplacian_pyramid(img, levels)).collect::<Result<_>>()?;
    let pyramids_f: Vec<Vec<Band>> =
        fake.iter().map(|img| laplacian_pyramid(img, levels)).collect::<Result<_>>()?;

    let mut per_scale = Vec::with_capacity(levels);
    for scale in 0..levels {
        let bands_r: Vec<Band> = pyramids_r.iter().map(|p| p[scale].clone()).collect();
        let bands_f: Vec<Band> = pyramids_f.iter().map(|p| p[scale].clone()).collect();
        // paired sampling: both sets use the same patch-location stream, so
        // identical sets give exactly zero and variance stays low
        let mut rng_r = derive_rng(seed, scale as u64, 0x5d);
        let mut rng_f = derive_rng(seed, scale as u64, 0x5d);
        let desc_r =
            extract_descriptors(&bands_r, scale, cfg.patches_per_image, cfg.patch_size, &mut rng_r)?;
        let desc_f =
            extract_descriptors(&bands_f, scale, cfg.patches_per_image, cfg.patch_size, &mut rng_f)?;
        let mut rng_p = derive_rng(seed, scale as u64, 0x5e);
        let d = sliced_wasserstein(&desc_r, &desc_f, cfg.n_projections, &mut rng_p)?;
        per_scale.push(d);
    }
    let mean = per_scale.iter().sum::<f64>() / per_scale.len() as f64;
    Ok(MetricReport {
        swd_per_scale: per_scale,
        swd_mean: Some(mean),
        ..MetricReport::default()
    })
}

/// Randomized-pairing MS-SSIM protocol: mean over random cross-set pairs
/// plus mean within-set self-similarities of each set. A within-set mean
/// near one is the mode-collapse signature; lower means higher diversity.
pub fn msssim_diversity_report(
    real: &[GrayImage],
    fake: &[GrayImage],
    n_pairs: usize,
    seed: u64,
) -> Result<MetricReport> {
    if real.len() < 2 || fake.len() < 2 {
        return Err(MetricError::SetTooSmall { len: real.len().min(fake.len()), required: 2 });
    }
    let res_r = check_set_resolutions(real)?;
    let res_f = check_set_resolutions(fake)?;
    if res_r != res_f {
        return Err(MetricError::ShapeMismatch { a: res_r, b: res_f });
    }
    let scales = max_scales(res_r.0, res_r.1).max(1);
    let mut rng = derive_rng(seed, 0, 0x33);

    let cross: Vec<(usize, usize)> = (0..n_pairs)
        .map(|_| (rng.gen_range(0..real.len()), rng.gen_range(0..fake.len())))
        .collect();
    let within = |len: usize, rng: &mut ChaCha8Rng| -> Vec<(usize, usize)> {
        (0..n_pairs)
            .map(|_| {
                let i = rng.gen_range(0..len);
                let mut j = rng.gen_range(0..len - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect()
    };
    let within_real = within(real.len(), &mut rng);
    let within_fake = within(fake.len(), &mut rng);

    Ok(MetricReport {
        msssim_cross: Some(mean_msssim_pairs(real, fake, &cross, scales)?),
        msssim_within_real: Some(mean_msssim_pairs(real, real, &within_real, scales)?),
        msssim_within_fake: Some(mean_msssim_pairs(fake, fake, &within_fake, scales)?),
        ..MetricReport::default()
    })
}

fn derive_rng(seed: u64, salt: u64, tag: u8) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&salt.to_le_bytes());
    bytes[16] = tag;
    ChaCha8Rng::from_seed(bytes)
}
