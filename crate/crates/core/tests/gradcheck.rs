//! Finite-difference verification of every differentiable operation.
//!
//! The oracle side lives in `common`: independent 64-bit nested-loop
//! implementations, differentiated by central differences. The engine side
//! is the f32 tape. Gradients must agree to a relative error below 1e-4.

mod common;

use common::*;
use progan_core::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 8;

fn leaf(tape: &Tape, shape: &[usize], data: &[f64]) -> Var {
    tape.leaf(Tensor::from_vec(shape.to_vec(), to_f32(data)).unwrap(), true)
}

fn weighted_sum(out: &Var, w: &[f64]) -> Var {
    let shape = out.shape();
    let wt = out
        .tape()
        .constant(Tensor::from_vec(shape.clone(), to_f32(w)).unwrap());
    out.mul(&wt).unwrap().sum_all().unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Check engine gradients of a scalar loss against central differences of
/// the f64 reference, for every input.
fn check(
    name: &str,
    inputs: &[(Vec<usize>, Vec<f64>)],
    engine: &dyn Fn(&Tape, &[Var]) -> Var,
    reference: &dyn Fn(&[Vec<f64>]) -> f64,
) {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(s, d)| leaf(&tape, s, d)).collect();
    let loss = engine(&tape, &vars);
    let grads = tape.grad(&loss, &vars, false).unwrap();

    let master: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    // Sanity: the engine's value should match the reference closely.
    let ref_val = reference(&master);
    assert!(
        (loss.item() as f64 - ref_val).abs() <= 1e-4 * ref_val.abs().max(1.0),
        "{name}: value mismatch engine={} ref={}",
        loss.item(),
        ref_val
    );

    for (i, g) in grads.iter().enumerate() {
        let f = |x: &[f64]| {
            let mut ins = master.clone();
            ins[i] = x.to_vec();
            reference(&ins)
        };
        let fd = central_diff(&f, &master[i], H);
        let err = rel_err(g.value().data(), &fd);
        assert!(err < TOL, "{name}: input {i} gradient rel err {err:.3e} >= {TOL:.0e}");
    }
}

fn away_from_zero(v: f64) -> f64 {
    v + 0.1 * v.signum()
}

#[test]
fn elementwise_binary_ops() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let a = uniform_vec(&mut rng, n, -1.0, 1.0);
        let b = uniform_vec(&mut rng, n, -1.0, 1.0);
        let w = uniform_vec(&mut rng, n, -1.0, 1.0);
        let inputs = [(vec![n], a.clone()), (vec![n], b.clone())];
        let wc = w.clone();
        check(
            "add",
            &inputs,
            &|_, v| weighted_sum(&v[0].add(&v[1]).unwrap(), &wc),
            &|ins| dot(&ins[0].iter().zip(&ins[1]).map(|(x, y)| x + y).collect::<Vec<_>>(), &wc),
        );
        let wc = w.clone();
        check(
            "sub",
            &inputs,
            &|_, v| weighted_sum(&v[0].sub(&v[1]).unwrap(), &wc),
            &|ins| dot(&ins[0].iter().zip(&ins[1]).map(|(x, y)| x - y).collect::<Vec<_>>(), &wc),
        );
        let wc = w.clone();
        check(
            "mul",
            &inputs,
            &|_, v| weighted_sum(&v[0].mul(&v[1]).unwrap(), &wc),
            &|ins| dot(&ins[0].iter().zip(&ins[1]).map(|(x, y)| x * y).collect::<Vec<_>>(), &wc),
        );
    }
}

#[test]
fn elementwise_unary_ops() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = 12;
        let w = uniform_vec(&mut rng, n, -1.0, 1.0);

        let x: Vec<f64> = uniform_vec(&mut rng, n, -1.0, 1.0).into_iter().map(away_from_zero).collect();
        let wc = w.clone();
        check(
            "leaky_relu",
            &[(vec![n], x)],
            &|_, v| weighted_sum(&v[0].leaky_relu(0.2).unwrap(), &wc),
            &|ins| dot(&ref_leaky_relu(&ins[0], 0.2), &wc),
        );

        let x = uniform_vec(&mut rng, n, -2.0, 2.0);
        let wc = w.clone();
        check(
            "sigmoid",
            &[(vec![n], x)],
            &|_, v| weighted_sum(&v[0].sigmoid().unwrap(), &wc),
            &|ins| dot(&ref_sigmoid(&ins[0]), &wc),
        );

        let x = uniform_vec(&mut rng, n, 0.2, 2.0);
        let wc = w.clone();
        check(
            "log",
            &[(vec![n], x)],
            &|_, v| weighted_sum(&v[0].log().unwrap(), &wc),
            &|ins| dot(&ins[0].iter().map(|v| v.ln()).collect::<Vec<_>>(), &wc),
        );

        let x = uniform_vec(&mut rng, n, -1.5, 1.5);
        let wc = w.clone();
        check(
            "exp",
            &[(vec![n], x)],
            &|_, v| weighted_sum(&v[0].exp().unwrap(), &wc),
            &|ins| dot(&ins[0].iter().map(|v| v.exp()).collect::<Vec<_>>(), &wc),
        );

        let x = uniform_vec(&mut rng, n, -1.0, 1.0);
        let wc = w.clone();
        check(
            "square",
            &[(vec![n], x)],
            &|_, v| weighted_sum(&v[0].square().unwrap(), &wc),
            &|ins| dot(&ins[0].iter().map(|v| v * v).collect::<Vec<_>>(), &wc),
        );

        let x = uniform_vec(&mut rng, n, 0.2, 2.0);
        let wc = w.clone();
        check(
            "sqrt",
            &[(vec![n], x)],
            &|_, v| weighted_sum(&v[0].sqrt().unwrap(), &wc),
            &|ins| dot(&ins[0].iter().map(|v| v.sqrt()).collect::<Vec<_>>(), &wc),
        );

        let x = uniform_vec(&mut rng, n, 0.5, 2.0);
        let wc = w.clone();
        check(
            "recip",
            &[(vec![n], x)],
            &|_, v| weighted_sum(&v[0].recip().unwrap(), &wc),
            &|ins| dot(&ins[0].iter().map(|v| 1.0 / v).collect::<Vec<_>>(), &wc),
        );

        let x = uniform_vec(&mut rng, n, -1.0, 1.0);
        let wc = w.clone();
        check(
            "scale_add_scalar",
            &[(vec![n], x)],
            &|_, v| weighted_sum(&v[0].scale(1.7).unwrap().add_scalar(0.3).unwrap(), &wc),
            &|ins| dot(&ins[0].iter().map(|v| v * 1.7 + 0.3).collect::<Vec<_>>(), &wc),
        );
    }
}

#[test]
fn matmul_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (m, k, n) = (3, 4, 2);
        let a = uniform_vec(&mut rng, m * k, -1.0, 1.0);
        let b = uniform_vec(&mut rng, k * n, -1.0, 1.0);
        let w = uniform_vec(&mut rng, m * n, -1.0, 1.0);
        let wc = w.clone();
        check(
            "matmul",
            &[(vec![m, k], a), (vec![k, n], b)],
            &|_, v| weighted_sum(&v[0].matmul(&v[1]).unwrap(), &wc),
            &|ins| dot(&ref_matmul(&ins[0], &ins[1], m, k, n), &wc),
        );
    }
}

#[test]
fn conv2d_gradients_same_and_valid() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (n, cin, h, w, cout, k) = (2, 2, 5, 4, 3, 3);
        let x = uniform_vec(&mut rng, n * cin * h * w, -1.0, 1.0);
        let kern = uniform_vec(&mut rng, cout * cin * k * k, -1.0, 1.0);
        for pad in [1usize, 0] {
            let (oh, ow) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
            let wv = uniform_vec(&mut rng, n * cout * oh * ow, -1.0, 1.0);
            let wc = wv.clone();
            check(
                if pad == 1 { "conv2d_same" } else { "conv2d_valid" },
                &[
                    (vec![n, cin, h, w], x.clone()),
                    (vec![cout, cin, k, k], kern.clone()),
                ],
                &|_, v| weighted_sum(&v[0].conv2d(&v[1], pad).unwrap(), &wc),
                &|ins| dot(&ref_conv2d(&ins[0], n, cin, h, w, &ins[1], cout, k, pad), &wc),
            );
        }
    }
}

#[test]
fn resample_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (n, c, h, w) = (2, 2, 3, 2);
        let x = uniform_vec(&mut rng, n * c * h * w, -1.0, 1.0);
        let wv = uniform_vec(&mut rng, n * c * 4 * h * w, -1.0, 1.0);
        let wc = wv.clone();
        check(
            "up2",
            &[(vec![n, c, h, w], x)],
            &|_, v| weighted_sum(&v[0].up2().unwrap(), &wc),
            &|ins| dot(&ref_up2(&ins[0], n * c, h, w), &wc),
        );

        let (h2, w2) = (4, 6);
        let x = uniform_vec(&mut rng, n * c * h2 * w2, -1.0, 1.0);
        let wv = uniform_vec(&mut rng, n * c * h2 * w2 / 4, -1.0, 1.0);
        let wc = wv.clone();
        check(
            "down2",
            &[(vec![n, c, h2, w2], x)],
            &|_, v| weighted_sum(&v[0].down2().unwrap(), &wc),
            &|ins| dot(&ref_down2(&ins[0], n * c, h2, w2), &wc),
        );
    }
}

#[test]
fn concat_slice_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = 3;
        let (ca, cb) = (2, 3);
        let a = uniform_vec(&mut rng, n * ca, -1.0, 1.0);
        let b = uniform_vec(&mut rng, n * cb, -1.0, 1.0);
        let wv = uniform_vec(&mut rng, n * 3, -1.0, 1.0);
        let wc = wv.clone();
        check(
            "concat_then_slice",
            &[(vec![n, ca], a), (vec![n, cb], b)],
            &|_, v| {
                let cat = v[0].concat_axis1(&v[1]).unwrap();
                weighted_sum(&cat.slice_axis1(1, 3).unwrap(), &wc)
            },
            &|ins| {
                let mut sliced = Vec::new();
                for i in 0..n {
                    let row: Vec<f64> = ins[0][i * ca..(i + 1) * ca]
                        .iter()
                        .chain(&ins[1][i * cb..(i + 1) * cb])
                        .cloned()
                        .collect();
                    sliced.extend_from_slice(&row[1..4]);
                }
                dot(&sliced, &wc)
            },
        );
    }
}

#[test]
fn reduction_broadcast_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let (n, c) = (3, 4);
        let x = uniform_vec(&mut rng, n * c, -1.0, 1.0);
        let wv = uniform_vec(&mut rng, n * c, -1.0, 1.0);
        let wc = wv.clone();
        // centered = x - row_mean(x), a sum/broadcast composite
        check(
            "sum_broadcast_centering",
            &[(vec![n, c], x)],
            &|_, v| {
                let mean = v[0].sum_axes_keep(&[1]).unwrap().scale(1.0 / c as f32).unwrap();
                let centered = v[0].sub(&mean.broadcast_to(&[n, c]).unwrap()).unwrap();
                weighted_sum(&centered, &wc)
            },
            &|ins| {
                let mut out = vec![0.0; n * c];
                for i in 0..n {
                    let mean: f64 = ins[0][i * c..(i + 1) * c].iter().sum::<f64>() / c as f64;
                    for j in 0..c {
                        out[i * c + j] = ins[0][i * c + j] - mean;
                    }
                }
                dot(&out, &wc)
            },
        );
    }
}

#[test]
fn pixelnorm_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let (n, c, h, w) = (2, 3, 2, 2);
        let x = uniform_vec(&mut rng, n * c * h * w, -1.0, 1.0);
        let wv = uniform_vec(&mut rng, n * c * h * w, -1.0, 1.0);
        let wc = wv.clone();
        check(
            "pixelnorm",
            &[(vec![n, c, h, w], x)],
            &|_, v| weighted_sum(&v[0].pixelnorm(1e-8).unwrap(), &wc),
            &|ins| dot(&ref_pixelnorm(&ins[0], n, c, h, w, 1e-8), &wc),
        );
    }
}

#[test]
fn minibatch_stddev_gradients() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let (n, c, h, w) = (3, 2, 2, 2);
        let x = uniform_vec(&mut rng, n * c * h * w, -1.0, 1.0);
        let wv = uniform_vec(&mut rng, n * (c + 1) * h * w, -1.0, 1.0);
        let wc = wv.clone();
        check(
            "minibatch_stddev",
            &[(vec![n, c, h, w], x)],
            &|_, v| weighted_sum(&v[0].minibatch_stddev(1e-8).unwrap(), &wc),
            &|ins| dot(&ref_minibatch_stddev(&ins[0], n, c, h, w, 1e-8), &wc),
        );
    }
}

#[test]
fn softmax_ce_gradients() {
    use progan_core::tensor::one_hot;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let (n, k) = (4, 2);
        let logits = uniform_vec(&mut rng, n * k, -2.0, 2.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let lc = labels.clone();
        check(
            "softmax_ce",
            &[(vec![n, k], logits)],
            &|t, v| {
                let targets = t.constant(one_hot(&lc, k));
                v[0].softmax_cross_entropy(&targets).unwrap()
            },
            &|ins| ref_softmax_ce(&ins[0], n, k, &lc),
        );
    }
}

#[test]
fn composite_critic_style_chain() {
    // conv -> leaky_relu -> down2 -> weighted sum, the shape of computation
    // the critic path is made of.
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (n, cin, h, w, cout, k) = (2, 1, 4, 4, 2, 3);
        let x = uniform_vec(&mut rng, n * cin * h * w, -1.0, 1.0);
        let kern = uniform_vec(&mut rng, cout * cin * k * k, -1.0, 1.0);
        let wv = uniform_vec(&mut rng, n * cout * (h / 2) * (w / 2), -1.0, 1.0);
        let wc = wv.clone();
        check(
            "conv_lrelu_down2",
            &[(vec![n, cin, h, w], x), (vec![cout, cin, k, k], kern)],
            &|_, v| {
                let y = v[0]
                    .conv2d(&v[1], 1)
                    .unwrap()
                    .leaky_relu(0.2)
                    .unwrap()
                    .down2()
                    .unwrap();
                weighted_sum(&y, &wc)
            },
            &|ins| {
                let conv = ref_conv2d(&ins[0], n, cin, h, w, &ins[1], cout, k, 1);
                let act = ref_leaky_relu(&conv, 0.2);
                dot(&ref_down2(&act, n * cout, h, w), &wc)
            },
        );
    }
}

#[test]
fn double_backprop_penalty_matches_finite_differences() {
    // Two-layer critic f(x) = sum_c head[c] * sum_hw lrelu(conv(x, w1))[c].
    // The penalty P(theta) = mean_i (||grad_x f_i|| - 1)^2 is differentiated
    // w.r.t. theta by the engine's double backprop and checked against
    // central differences of an analytic f64 oracle.
    let slope = 0.2f64;
    let eps_norm = 1e-12f64;
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + seed);
        let (n, h, w, c1, k) = (2usize, 4usize, 4usize, 2usize, 3usize);
        let x = uniform_vec(&mut rng, n * h * w, -1.0, 1.0);
        let w1 = uniform_vec(&mut rng, c1 * k * k, -0.7, 0.7);
        let head = uniform_vec(&mut rng, c1, -1.0, 1.0);

        // f64 oracle for the penalty scalar as a function of (w1, head).
        let xo = x.clone();
        let penalty_ref = move |w1v: &[f64], headv: &[f64]| -> f64 {
            let mut total = 0.0;
            for i in 0..n {
                let xi = &xo[i * h * w..(i + 1) * h * w];
                let a = ref_conv2d(xi, 1, 1, h, w, w1v, c1, k, 1);
                // dz/da for the leaky relu, combined with the head weight
                let mut m = vec![0.0; a.len()];
                for ci in 0..c1 {
                    for p in 0..h * w {
                        let idx = ci * h * w + p;
                        let d = if a[idx] >= 0.0 { 1.0 } else { slope };
                        m[idx] = headv[ci] * d;
                    }
                }
                let gx = ref_conv_input_grad(&m, 1, c1, h, w, w1v, 1, k, 1, h, w);
                let norm = (gx.iter().map(|v| v * v).sum::<f64>() + eps_norm).sqrt();
                total += (norm - 1.0) * (norm - 1.0);
            }
            total / n as f64
        };

        // Engine: penalty via grad-of-grad.
        let tape = Tape::new();
        let xv = tape.leaf(Tensor::from_vec(vec![n, 1, h, w], to_f32(&x)).unwrap(), true);
        let w1v = leaf(&tape, &[c1, 1, k, k], &w1);
        let headv = leaf(&tape, &[c1], &head);
        let z = xv.conv2d(&w1v, 1).unwrap().leaky_relu(0.2).unwrap();
        // per-item score: sum over h,w then weighted over channels
        let pooled = z.sum_axes_keep(&[2, 3]).unwrap().reshape(&[n, c1]).unwrap();
        let hb = headv.reshape(&[1, c1]).unwrap().broadcast_to(&[n, c1]).unwrap();
        let scores = pooled.mul(&hb).unwrap().item_sum().unwrap();
        let total_score = scores.sum_all().unwrap();
        let gx = tape.grad(&total_score, &[xv], true).unwrap().remove(0);
        let norms = gx
            .square()
            .unwrap()
            .item_sum()
            .unwrap()
            .add_scalar(1e-12)
            .unwrap()
            .sqrt()
            .unwrap();
        let penalty = norms.add_scalar(-1.0).unwrap().square().unwrap().mean_all().unwrap();
        let grads = tape.grad(&penalty, &[w1v, headv], false).unwrap();

        let hstep = 1e-4;
        let fd_w1 = central_diff(
            &|v: &[f64]| penalty_ref(v, &head),
            &w1,
            hstep,
        );
        let err = rel_err(grads[0].value().data(), &fd_w1);
        assert!(err < 1e-3, "seed {seed}: w1 double-backprop rel err {err:.3e}");

        let fd_head = central_diff(
            &|v: &[f64]| penalty_ref(&w1, v),
            &head,
            hstep,
        );
        let err = rel_err(grads[1].value().data(), &fd_head);
        assert!(err < 1e-3, "seed {seed}: head double-backprop rel err {err:.3e}");
    }
}

#[test]
fn conv_is_deterministic_across_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = uniform_vec(&mut rng, 2 * 3 * 8 * 8, -1.0, 1.0);
    let kern = uniform_vec(&mut rng, 4 * 3 * 3 * 3, -1.0, 1.0);
    let run = || {
        let tape = Tape::new();
        let xv = tape.constant(Tensor::from_vec(vec![2, 3, 8, 8], to_f32(&x)).unwrap());
        let kv = tape.constant(Tensor::from_vec(vec![4, 3, 3, 3], to_f32(&kern)).unwrap());
        xv.conv2d(&kv, 1).unwrap().value().data().to_vec()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
