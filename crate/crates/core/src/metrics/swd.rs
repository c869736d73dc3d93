//! Laplacian pyramids, patch descriptors and the sliced Wasserstein
//! distance, all in f64.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::GrayImage;

use super::{MetricError, Result};

const DESCRIPTOR_EPS: f64 = 1e-8;

/// One pyramid level held as an f64 plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Band {
    pub fn from_image(img: &GrayImage) -> Band {
        Band {
            height: img.height(),
            width: img.width(),
            data: img.data().iter().map(|&v| v as f64).collect(),
        }
    }
}

fn down2(b: &Band) -> Band {
    let (oh, ow) = (b.height / 2, b.width / 2);
    let mut data = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let base = 2 * y * b.width + 2 * x;
            data[y * ow + x] = 0.25
                * (b.data[base] + b.data[base + 1] + b.data[base + b.width] + b.data[base + b.width + 1]);
        }
    }
    Band { height: oh, width: ow, data }
}

fn up2(b: &Band) -> Band {
    let (oh, ow) = (b.height * 2, b.width * 2);
    let mut data = vec![0.0; oh * ow];
    for y in 0..b.height {
        for x in 0..b.width {
            let v = b.data[y * b.width + x];
            let base = 2 * y * ow + 2 * x;
            data[base] = v;
            data[base + 1] = v;
            data[base + ow] = v;
            data[base + ow + 1] = v;
        }
    }
    Band { height: oh, width: ow, data }
}

/// Laplacian analysis: `levels - 1` difference bands followed by the
/// residual low-pass. Extents must be divisible by `2^(levels-1)`;
/// synthesis ([`reconstruct`]) inverts the analysis exactly.
pub fn laplacian_pyramid(img: &GrayImage, levels: usize) -> Result<Vec<Band>> {
    if levels == 0 {
        return Err(MetricError::InvalidScales(0));
    }
    let div = 1usize << (levels - 1);
    if img.height() % div != 0 || img.width() % div != 0 {
        return Err(MetricError::IndivisibleExtents {
            extents: (img.height(), img.width()),
            divisor: div,
        });
    }
    let mut out = Vec::with_capacity(levels);
    let mut cur = Band::from_image(img);
    for _ in 0..levels - 1 {
        let low = down2(&cur);
        let blurred = up2(&low);
        let band = Band {
            height: cur.height,
            width: cur.width,
            data: cur.data.iter().zip(&blurred.data).map(|(a, b)| a - b).collect(),
        };
        out.push(band);
        cur = low;
    }
    out.push(cur);
    Ok(out)
}

/// Invert [`laplacian_pyramid`].
pub fn reconstruct(levels: &[Band]) -> Band {
    assert!(!levels.is_empty());
    let mut cur = levels[levels.len() - 1].clone();
    for band in levels[..levels.len() - 1].iter().rev() {
        let upped = up2(&cur);
        cur = Band {
            height: band.height,
            width: band.width,
            data: upped.data.iter().zip(&band.data).map(|(a, b)| a + b).collect(),
        };
    }
    cur
}

/// Flattened k*k patch descriptors drawn from one pyramid scale across a
/// set of images, each normalized to zero mean and unit standard deviation.
#[derive(Debug, Clone)]
pub struct PatchDescriptorSet {
    k: usize,
    scale: usize,
    rows: Vec<f64>,
}

impl PatchDescriptorSet {
    pub fn len(&self) -> usize {
        self.rows.len() / (self.k * self.k)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn descriptor_len(&self) -> usize {
        self.k * self.k
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.descriptor_len();
        &self.rows[i * d..(i + 1) * d]
    }
}

/// Uniformly random k*k patches from each band; reproducible under a seed.
pub fn extract_descriptors(
    bands: &[Band],
    scale: usize,
    patches_per_image: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PatchDescriptorSet> {
    if bands.is_empty() {
        return Err(MetricError::SetTooSmall { len: 0, required: 1 });
    }
    let d = k * k;
    let mut rows = Vec::with_capacity(bands.len() * patches_per_image * d);
    for band in bands {
        if band.height < k || band.width < k {
            return Err(MetricError::ImageTooSmall {
                extent: band.height.min(band.width),
                required: k,
            });
        }
        for _ in 0..patches_per_image {
            let y = rng.gen_range(0..=band.height - k);
            let x = rng.gen_range(0..=band.width - k);
            let start = rows.len();
            for dy in 0..k {
                for dx in 0..k {
                    rows.push(band.data[(y + dy) * band.width + x + dx]);
                }
            }
            // zero-mean, unit-std normalization of this descriptor
            let patch = &mut rows[start..start + d];
            let mean = patch.iter().sum::<f64>() / d as f64;
            let var = patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var.sqrt() + DESCRIPTOR_EPS);
            for v in patch.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
    }
    Ok(PatchDescriptorSet { k, scale, rows })
}

/// Average over random unit projection directions of the exact 1-D
/// Wasserstein-1 distance between the projected descriptor sets.
pub fn sliced_wasserstein(
    a: &PatchDescriptorSet,
    b: &PatchDescriptorSet,
    n_projections: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let d = check_sets(a, b)?;
    let dirs: Vec<Vec<f64>> = (0..n_projections)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect();
    sliced_wasserstein_with_dirs(a, b, &dirs, rng)
}

/// Sliced Wasserstein distance restricted to the supplied directions. Used
/// directly by oracle tests; [`sliced_wasserstein`] samples directions.
pub fn sliced_wasserstein_with_dirs(
    a: &PatchDescriptorSet,
    b: &PatchDescriptorSet,
    dirs: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let d = check_sets(a, b)?;
    if dirs.is_empty() {
        return Err(MetricError::SetTooSmall { len: 0, required: 1 });
    }
    // subsample the larger set to match the smaller, without replacement
    let n = a.len().min(b.len());
    let idx_a = subsample_indices(a.len(), n, rng);
    let idx_b = subsample_indices(b.len(), n, rng);

    let mut total = 0.0;
    let mut pa = vec![0.0f64; n];
    let mut pb = vec![0.0f64; n];
    for dir in dirs {
        assert_eq!(dir.len(), d, "projection dimension mismatch");
        for (slot, &i) in pa.iter_mut().zip(&idx_a) {
            *slot = dot(a.row(i), dir);
        }
        for (slot, &i) in pb.iter_mut().zip(&idx_b) {
            *slot = dot(b.row(i), dir);
        }
        pa.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let w1: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
        total += w1;
    }
    Ok(total / dirs.len() as f64)
}

fn check_sets(a: &PatchDescriptorSet, b: &PatchDescriptorSet) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::SetTooSmall { len: 0, required: 1 });
    }
    if a.descriptor_len() != b.descriptor_len() {
        return Err(MetricError::DescriptorMismatch {
            a: a.descriptor_len(),
            b: b.descriptor_len(),
        });
    }
    Ok(a.descriptor_len())
}

fn subsample_indices(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n == len {
        return (0..len).collect();
    }
    // partial Fisher-Yates: first n entries of a seeded permutation
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = rng.gen_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
