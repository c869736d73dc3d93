//! SSIM and multi-scale SSIM, computed in f64.
//!
//! 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range
//! L = 1, valid-position sliding. The multi-scale variant multiplies the
//! contrast/structure term across dyadic scales with luminance applied at
//! the coarsest, using the standard five-scale exponents.

use crate::dataio::GrayImage;

use super::{MetricError, Result};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_image(img: &GrayImage) -> Plane {
        Plane {
            h: img.height(),
            w: img.width(),
            data: img.data().iter().map(|&v| v as f64).collect(),
        }
    }

    /// 2x2 mean pooling; an odd trailing row/column is dropped.
    fn half(&self) -> Plane {
        let (oh, ow) = (self.h / 2, self.w / 2);
        let mut data = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let base = 2 * y * self.w + 2 * x;
                data[y * ow + x] = 0.25
                    * (self.data[base]
                        + self.data[base + 1]
                        + self.data[base + self.w]
                        + self.data[base + self.w + 1]);
            }
        }
        Plane { h: oh, w: ow, data }
    }
}

fn gaussian_taps() -> Vec<f64> {
    let mid = (WINDOW / 2) as f64;
    let mut taps: Vec<f64> = (0..WINDOW)
        .map(|i| {
            let d = i as f64 - mid;
            (-d * d / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable valid-mode correlation with the same 1-D taps on both axes.
fn window_filter(p: &Plane, taps: &[f64]) -> Plane {
    let k = taps.len();
    let (h, w) = (p.h, p.w);
    let ow = w + 1 - k;
    // horizontal pass
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &t) in taps.iter().enumerate() {
                acc += t * p.data[y * w + x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    // vertical pass
    let oh = h + 1 - k;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &t) in taps.iter().enumerate() {
                acc += t * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    Plane { h: oh, w: ow, data: out }
}

fn check_pair(x: &GrayImage, y: &GrayImage, min_extent: usize) -> Result<()> {
    if x.height() != y.height() || x.width() != y.width() {
        return Err(MetricError::ShapeMismatch {
            a: (x.height(), x.width()),
            b: (y.height(), y.width()),
        });
    }
    if x.height() < min_extent || x.width() < min_extent {
        return Err(MetricError::ImageTooSmall {
            extent: x.height().min(x.width()),
            required: min_extent,
        });
    }
    Ok(())
}

/// Mean luminance*contrast-structure and mean contrast-structure over all
/// valid window positions.
fn components(x: &Plane, y: &Plane) -> (f64, f64) {
    let taps = gaussian_taps();
    let mu_x = window_filter(x, &taps);
    let mu_y = window_filter(y, &taps);

    let sq = |p: &Plane| Plane { h: p.h, w: p.w, data: p.data.iter().map(|v| v * v).collect() };
    let prod = Plane {
        h: x.h,
        w: x.w,
        data: x.data.iter().zip(&y.data).map(|(a, b)| a * b).collect(),
    };
    let e_xx = window_filter(&sq(x), &taps);
    let e_yy = window_filter(&sq(y), &taps);
    let e_xy = window_filter(&prod, &taps);

    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mut sum_lcs = 0.0;
    let mut sum_cs = 0.0;
    let n = mu_x.data.len();
    for i in 0..n {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let var_x = e_xx.data[i] - mx * mx;
        let var_y = e_yy.data[i] - my * my;
        let cov = e_xy.data[i] - mx * my;
        let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        let cs = (2.0 * cov + c2) / (var_x + var_y + c2);
        sum_lcs += l * cs;
        sum_cs += cs;
    }
    (sum_lcs / n as f64, sum_cs / n as f64)
}

/// Windowed structural similarity; 1.0 for identical images.
pub fn ssim(x: &GrayImage, y: &GrayImage) -> Result<f64> {
    check_pair(x, y, WINDOW)?;
    let (lcs, _) = components(&Plane::from_image(x), &Plane::from_image(y));
    Ok(lcs)
}

/// Multi-scale SSIM across `scales` dyadic scales. Both extents must be at
/// least `2^(scales-1) * 11`. For scale counts other than five, the leading
/// standard weights are renormalized to sum to one. Contrast/structure
/// terms are clamped at zero before exponentiation, keeping the result in
/// `[0, 1]`.
pub fn ms_ssim(x: &GrayImage, y: &GrayImage, scales: usize) -> Result<f64> {
    if scales == 0 || scales > MSSSIM_WEIGHTS.len() {
        return Err(MetricError::InvalidScales(scales));
    }
    check_pair(x, y, WINDOW << (scales - 1))?;
    let mut weights: Vec<f64> = MSSSIM_WEIGHTS[..scales].to_vec();
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= wsum);

    let mut px = Plane::from_image(x);
    let mut py = Plane::from_image(y);
    let mut result = 1.0f64;
    for (j, &wj) in weights.iter().enumerate() {
        let (lcs, cs) = components(&px, &py);
        if j + 1 < scales {
            result *= cs.max(0.0).powf(wj);
            px = px.half();
            py = py.half();
        } else {
            result *= lcs.max(0.0).powf(wj);
        }
    }
    Ok(result)
}

/// Largest usable MS-SSIM scale count for a resolution, capped at five.
pub fn max_scales(height: usize, width: usize) -> usize {
    let mut s = 0usize;
    while s < MSSSIM_WEIGHTS.len() && (WINDOW << s) <= height.min(width) {
        s += 1;
    }
    s
}

/// Mean MS-SSIM over explicit index pairs `(i into a, j into b)`.
pub fn mean_msssim_pairs(
    a: &[GrayImage],
    b: &[GrayImage],
    pairs: &[(usize, usize)],
    scales: usize,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(MetricError::SetTooSmall { len: 0, required: 1 });
    }
    let mut total = 0.0;
    for &(i, j) in pairs {
        total += ms_ssim(&a[i], &b[j], scales)?;
    }
    Ok(total / pairs.len() as f64)
}
