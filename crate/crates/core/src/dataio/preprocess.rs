//! Aspect-preserving resize-and-pad preprocessing.
//!
//! The image is resized by the single factor that maps its larger relative
//! dimension exactly onto the target (area averaging when shrinking,
//! nearest replication when enlarging); the other dimension is then padded
//! with zeros on the trailing side.

use super::{DataError, GrayImage, Result};

pub fn preprocess(img: &GrayImage, target_h: usize, target_w: usize) -> Result<GrayImage> {
    if target_h == 0 || target_w == 0 {
        return Err(DataError::ZeroSized);
    }
    let (h, w) = (img.height(), img.width());
    let ratio_h = h as f64 / target_h as f64;
    let ratio_w = w as f64 / target_w as f64;
    let s = ratio_h.max(ratio_w);

    // The dimension that attains the max ratio lands exactly on target;
    // the other is rounded to nearest.
    let out_h = if ratio_h >= ratio_w {
        target_h
    } else {
        ((h as f64 / s).round() as usize).clamp(1, target_h)
    };
    let out_w = if ratio_w >= ratio_h {
        target_w
    } else {
        ((w as f64 / s).round() as usize).clamp(1, target_w)
    };

    let resized = if s > 1.0 {
        area_downscale(img, out_h, out_w)
    } else if s < 1.0 {
        nearest_upscale(img, out_h, out_w)
    } else {
        img.clone()
    };

    if out_h == target_h && out_w == target_w {
        return Ok(resized);
    }
    let mut out = GrayImage::zeros(target_h, target_w);
    for y in 0..out_h {
        let src = &resized.data()[y * out_w..(y + 1) * out_w];
        out.data_mut()[y * target_w..y * target_w + out_w].copy_from_slice(src);
    }
    Ok(out)
}

/// Exact box-filter downscale: each output pixel averages the fractional
/// source rectangle it covers. Accumulation in f64.
fn area_downscale(img: &GrayImage, out_h: usize, out_w: usize) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    let fy = h as f64 / out_h as f64;
    let fx = w as f64 / out_w as f64;
    let mut data = vec![0.0f32; out_h * out_w];
    for oy in 0..out_h {
        let y0 = oy as f64 * fy;
        let y1 = (oy + 1) as f64 * fy;
        let iy0 = y0.floor() as usize;
        let iy1 = (y1.ceil() as usize).min(h);
        for ox in 0..out_w {
            let x0 = ox as f64 * fx;
            let x1 = (ox + 1) as f64 * fx;
            let ix0 = x0.floor() as usize;
            let ix1 = (x1.ceil() as usize).min(w);
            let mut acc = 0.0f64;
            let mut area = 0.0f64;
            for iy in iy0..iy1 {
                let wy = (y1.min((iy + 1) as f64) - y0.max(iy as f64)).max(0.0);
                for ix in ix0..ix1 {
                    let wx = (x1.min((ix + 1) as f64) - x0.max(ix as f64)).max(0.0);
                    acc += img.get(iy, ix) as f64 * wy * wx;
                    area += wy * wx;
                }
            }
            data[oy * out_w + ox] = (acc / area) as f32;
        }
    }
    GrayImage::from_parts(out_h, out_w, data)
}

fn nearest_upscale(img: &GrayImage, out_h: usize, out_w: usize) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    let fy = h as f64 / out_h as f64;
    let fx = w as f64 / out_w as f64;
    let mut data = vec![0.0f32; out_h * out_w];
    for oy in 0..out_h {
        let sy = ((oy as f64 * fy).floor() as usize).min(h - 1);
        for ox in 0..out_w {
            let sx = ((ox as f64 * fx).floor() as usize).min(w - 1);
            data[oy * out_w + ox] = img.get(sy, sx);
        }
    }
    GrayImage::from_parts(out_h, out_w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> GrayImage {
        let data: Vec<f32> = (0..h * w).map(|i| (i % 97) as f32 / 96.0).collect();
        GrayImage::new(h, w, data).unwrap()
    }

    #[test]
    fn resize_rule_example_2000x1500() {
        // s = max(2000/1280, 1500/1024) = 1.5625; resized to 1280x960 and
        // padded on the width to 1024, zeros trailing.
        let img = ramp(2000, 1500);
        let out = preprocess(&img, 1280, 1024).unwrap();
        assert_eq!((out.height(), out.width()), (1280, 1024));
        // content occupies columns [0, 960); the rest is exactly zero
        for y in 0..1280 {
            for x in 960..1024 {
                assert_eq!(out.get(y, x), 0.0);
            }
        }
        assert!(out.data()[..960].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn already_at_target_is_unchanged() {
        let img = ramp(64, 48);
        let out = preprocess(&img, 64, 48).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn upscale_path_640x512() {
        // s = 0.5 for both dimensions: plain 2x nearest replication without
        // padding.
        let img = ramp(640, 512);
        let out = preprocess(&img, 1280, 1024).unwrap();
        assert_eq!((out.height(), out.width()), (1280, 1024));
        for y in 0..1280 {
            for x in 0..1024 {
                assert_eq!(out.get(y, x), img.get(y / 2, x / 2));
            }
        }
    }

    #[test]
    fn integer_downscale_is_block_mean() {
        let img = GrayImage::new(2, 4, vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.25, 0.75]).unwrap();
        let out = preprocess(&img, 1, 2).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() < 1e-6);
        assert!((out.get(0, 1) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn aspect_ratio_within_one_pixel() {
        for (h, w, th, tw) in [(300, 200, 64, 64), (123, 77, 80, 64), (50, 400, 64, 80)] {
            let img = ramp(h, w);
            let out = preprocess(&img, th, tw).unwrap();
            // measure the content (non-padded) region
            let mut ch = 0;
            let mut cw = 0;
            for y in 0..out.height() {
                if (0..out.width()).any(|x| out.get(y, x) != 0.0) {
                    ch = ch.max(y + 1);
                }
            }
            for x in 0..out.width() {
                if (0..out.height()).any(|y| out.get(y, x) != 0.0) {
                    cw = cw.max(x + 1);
                }
            }
            let s = (h as f64 / th as f64).max(w as f64 / tw as f64);
            let expect_h = (h as f64 / s).round();
            let expect_w = (w as f64 / s).round();
            assert!((ch as f64 - expect_h).abs() <= 1.0, "{h}x{w}: content h {ch} vs {expect_h}");
            assert!((cw as f64 - expect_w).abs() <= 1.0, "{h}x{w}: content w {cw} vs {expect_w}");
        }
    }

    #[test]
    fn zero_target_rejected() {
        assert!(preprocess(&ramp(4, 4), 0, 4).is_err());
    }
}
