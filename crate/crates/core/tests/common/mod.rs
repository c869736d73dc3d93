//! Shared test oracles: independent 64-bit reference implementations and
//! finite-difference helpers. Everything here is deliberately written as
//! plain nested loops, separate from the library's compute path.

#![allow(dead_code)]

use rand::Rng;

/// Central finite difference of a scalar function of a flat input vector.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Infinity-norm relative error between an engine gradient (f32) and the
/// oracle gradient (f64).
pub fn rel_err(ad: &[f32], fd: &[f64]) -> f64 {
    assert_eq!(ad.len(), fd.len());
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for (&a, &b) in ad.iter().zip(fd) {
        num = num.max((a as f64 - b).abs());
        den = den.max(b.abs());
    }
    num / den.max(1e-8)
}

pub fn uniform_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

// ---- 64-bit reference operations ------------------------------------

pub fn ref_leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect()
}

pub fn ref_sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

pub fn ref_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[l * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Stride-1 cross-correlation with zero padding, nested-loop form.
#[allow(clippy::too_many_arguments)]
pub fn ref_conv2d(
    x: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    kern: &[f64],
    cout: usize,
    k: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    let mut out = vec![0.0; n * cout * oh * ow];
    for i in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy + ky;
                                let ix = ox + kx;
                                if iy < pad || ix < pad || iy >= h + pad || ix >= w + pad {
                                    continue;
                                }
                                let xv = x[((i * cin + ci) * h + iy - pad) * w + ix - pad];
                                let kv = kern[((co * cin + ci) * k + ky) * k + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((i * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn ref_up2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; planes * 4 * h * w];
    for p in 0..planes {
        for y in 0..h {
            for xx in 0..w {
                let v = x[(p * h + y) * w + xx];
                for dy in 0..2 {
                    for dx in 0..2 {
                        out[(p * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx] = v;
                    }
                }
            }
        }
    }
    out
}

pub fn ref_down2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += x[(p * h + 2 * y + dy) * w + 2 * xx + dx];
                    }
                }
                out[(p * oh + y) * ow + xx] = 0.25 * acc;
            }
        }
    }
    out
}

pub fn ref_pixelnorm(x: &[f64], n: usize, c: usize, h: usize, w: usize, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let mut ms = 0.0;
                for ch in 0..c {
                    let v = x[((i * c + ch) * h + y) * w + xx];
                    ms += v * v;
                }
                let norm = (ms / c as f64 + eps).sqrt();
                for ch in 0..c {
                    let idx = ((i * c + ch) * h + y) * w + xx;
                    out[idx] = x[idx] / norm;
                }
            }
        }
    }
    out
}

/// Appends the constant feature map with the mean across-batch population
/// standard deviation: `[n,c,h,w] -> [n,c+1,h,w]`.
pub fn ref_minibatch_stddev(x: &[f64], n: usize, c: usize, h: usize, w: usize, eps: f64) -> Vec<f64> {
    let chw = c * h * w;
    let mut stat = 0.0;
    for pos in 0..chw {
        let mut mean = 0.0;
        for i in 0..n {
            mean += x[i * chw + pos];
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let d = x[i * chw + pos] - mean;
            var += d * d;
        }
        var /= n as f64;
        stat += (var + eps).sqrt();
    }
    stat /= chw as f64;
    let mut out = vec![0.0; n * (c + 1) * h * w];
    for i in 0..n {
        out[i * (c + 1) * h * w..i * (c + 1) * h * w + chw]
            .copy_from_slice(&x[i * chw..(i + 1) * chw]);
        out[i * (c + 1) * h * w + chw..(i + 1) * (c + 1) * h * w].fill(stat);
    }
    out
}

/// Scatter-form adjoint of [`ref_conv2d`] with respect to its input.
#[allow(clippy::too_many_arguments)]
pub fn ref_conv_input_grad(
    g: &[f64],
    n: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    kern: &[f64],
    cin: usize,
    k: usize,
    pad: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut gx = vec![0.0; n * cin * h * w];
    for i in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = g[((i * cout + co) * oh + oy) * ow + ox];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy + ky;
                                let ix = ox + kx;
                                if iy < pad || ix < pad || iy >= h + pad || ix >= w + pad {
                                    continue;
                                }
                                gx[((i * cin + ci) * h + iy - pad) * w + ix - pad] +=
                                    gv * kern[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Mean softmax cross-entropy of `[n,k]` logits against class indices.
pub fn ref_softmax_ce(logits: &[f64], n: usize, k: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln() + m;
        total += lse - row[labels[i]];
    }
    total / n as f64
}
