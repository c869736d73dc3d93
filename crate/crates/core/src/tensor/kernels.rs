//! Raw `f32` compute kernels behind the tape primitives.
//!
//! Convolution runs as im2col + sgemm; everything here is deterministic:
//! parallelism only splits work across disjoint output regions (or reduces
//! partial results in a fixed order), so results are bit-identical across
//! runs and thread counts.

use rayon::prelude::*;

use super::Tensor;

/// Row-major sgemm wrapper: `c = alpha * a(m,k) * b(k,n) + beta * c`.
fn sgemm_rowmajor(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0f32; m * n];
    sgemm_rowmajor(m, k, n, 1.0, a.data(), b.data(), 0.0, &mut out);
    Tensor::from_parts(vec![m, n], out)
}

pub fn transpose2(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let src = a.data();
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

/// Output spatial extent of a stride-1 correlation with padding `pad`.
pub fn conv_out_extent(input: usize, k: usize, pad: usize) -> usize {
    input + 2 * pad + 1 - k
}

/// Fill the im2col matrix `[cin*k*k, oh*ow]` for one image `[cin, h, w]`.
fn im2col(img: &[f32], cin: usize, h: usize, w: usize, k: usize, pad: usize, oh: usize, ow: usize, col: &mut [f32]) {
    debug_assert_eq!(col.len(), cin * k * k * oh * ow);
    let mut row = 0usize;
    for c in 0..cin {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy + ki;
                    let base = oy * ow;
                    if iy < pad || iy >= h + pad {
                        dst[base..base + ow].fill(0.0);
                        continue;
                    }
                    let sy = iy - pad;
                    for ox in 0..ow {
                        let ix = ox + kj;
                        dst[base + ox] = if ix < pad || ix >= w + pad {
                            0.0
                        } else {
                            plane[sy * w + ix - pad]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation of `input [n,cin,h,w]` with `kernel [cout,cin,k,k]`,
/// stride 1, zero padding `pad`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, pad: usize) -> Tensor {
    let (n, cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (cout, k) = (kernel.shape()[0], kernel.shape()[2]);
    let oh = conv_out_extent(h, k, pad);
    let ow = conv_out_extent(w, k, pad);
    let mut out = vec![0.0f32; n * cout * oh * ow];
    let in_item = cin * h * w;
    let out_item = cout * oh * ow;
    out.par_chunks_mut(out_item).enumerate().for_each(|(i, dst)| {
        let mut col = vec![0.0f32; cin * k * k * oh * ow];
        im2col(&input.data()[i * in_item..(i + 1) * in_item], cin, h, w, k, pad, oh, ow, &mut col);
        sgemm_rowmajor(cout, cin * k * k, oh * ow, 1.0, kernel.data(), &col, 0.0, dst);
    });
    Tensor::from_parts(vec![n, cout, oh, ow], out)
}

/// Kernel with swapped in/out channels and spatially rotated taps:
/// `p[ci][co][i][j] = w[co][ci][k-1-i][k-1-j]`.
fn permute_kernel(kernel: &Tensor) -> Tensor {
    let (cout, cin, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let src = kernel.data();
    let mut out = vec![0.0f32; src.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for i in 0..k {
                for j in 0..k {
                    out[((ci * cout + co) * k + i) * k + j] =
                        src[((co * cin + ci) * k + (k - 1 - i)) * k + (k - 1 - j)];
                }
            }
        }
    }
    Tensor::from_parts(vec![cin, cout, k, k], out)
}

/// Adjoint of [`conv2d`] with respect to the input: maps an output-shaped
/// cotangent back to input shape. Equals correlating the cotangent with the
/// channel-swapped, rotated kernel at padding `k-1-pad`.
pub fn conv2d_input_grad(gout: &Tensor, kernel: &Tensor, pad: usize) -> Tensor {
    let k = kernel.shape()[2];
    conv2d(gout, &permute_kernel(kernel), k - 1 - pad)
}

/// Adjoint of [`conv2d`] with respect to the kernel.
pub fn conv2d_kernel_grad(input: &Tensor, gout: &Tensor, pad: usize, k: usize) -> Tensor {
    let (n, cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (cout, oh, ow) = (gout.shape()[1], gout.shape()[2], gout.shape()[3]);
    let in_item = cin * h * w;
    let gout_item = cout * oh * ow;
    let kl = cout * cin * k * k;
    // Per-item contributions computed in parallel, reduced in index order.
    let partials: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut col = vec![0.0f32; cin * k * k * oh * ow];
            im2col(&input.data()[i * in_item..(i + 1) * in_item], cin, h, w, k, pad, oh, ow, &mut col);
            // g_item [cout, oh*ow] * col^T [oh*ow, cin*k*k]
            let g = &gout.data()[i * gout_item..(i + 1) * gout_item];
            let mut acc = vec![0.0f32; kl];
            if !col.is_empty() {
                unsafe {
                    matrixmultiply::sgemm(
                        cout,
                        oh * ow,
                        cin * k * k,
                        1.0,
                        g.as_ptr(),
                        (oh * ow) as isize,
                        1,
                        col.as_ptr(),
                        1,
                        (oh * ow) as isize,
                        0.0,
                        acc.as_mut_ptr(),
                        (cin * k * k) as isize,
                        1,
                    );
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0f32; kl];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![cout, cin, k, k], out)
}

/// Nearest-neighbor 2x upsample of an NCHW tensor.
pub fn up2(a: &Tensor) -> Tensor {
    let (n, c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    let src = a.data();
    let mut out = vec![0.0f32; n * c * 4 * h * w];
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..n * c {
        let sp = &src[p * h * w..(p + 1) * h * w];
        let dp = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            for x in 0..w {
                let v = sp[y * w + x];
                let base = 2 * y * ow + 2 * x;
                dp[base] = v;
                dp[base + 1] = v;
                dp[base + ow] = v;
                dp[base + ow + 1] = v;
            }
        }
    }
    Tensor::from_parts(vec![n, c, oh, ow], out)
}

/// 2x2 mean pooling of an NCHW tensor. Extents must be even.
pub fn down2(a: &Tensor) -> Tensor {
    let (n, c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let src = a.data();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; n * c * oh * ow];
    for p in 0..n * c {
        let sp = &src[p * h * w..(p + 1) * h * w];
        let dp = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let base = 2 * y * w + 2 * x;
                dp[y * ow + x] = 0.25 * (sp[base] + sp[base + 1] + sp[base + w] + sp[base + w + 1]);
            }
        }
    }
    Tensor::from_parts(vec![n, c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_oracle() {
        // [[1,2],[3,4]] * [[1],[1]] = [[3],[7]]
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(matmul(&a, &b).data(), &[3.0, 7.0]);
    }

    #[test]
    fn conv_same_pad_ones_oracle() {
        // all-ones 3x3 input and kernel, same padding: center 9, corners 4.
        let x = t(&[1, 1, 3, 3], &[1.0; 9]);
        let w = t(&[1, 1, 3, 3], &[1.0; 9]);
        let y = conv2d(&x, &w, 1);
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.at4(0, 0, 1, 1), 9.0);
        assert_eq!(y.at4(0, 0, 0, 0), 4.0);
        assert_eq!(y.at4(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let x = t(&[1, 1, 4, 4], &(0..16).map(|v| v as f32).collect::<Vec<_>>());
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0;
        let w = t(&[1, 1, 3, 3], &kd);
        assert_eq!(conv2d(&x, &w, 1).data(), x.data());
    }

    #[test]
    fn down2_up2_inverse() {
        let x = t(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.5]);
        assert_eq!(down2(&up2(&x)).data(), x.data());
    }
}
