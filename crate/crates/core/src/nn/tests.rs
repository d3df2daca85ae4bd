use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::error::Result;
use crate::kernels::{PiecewiseKernel, C64};
use crate::linalg::CMatrix;
use crate::rng::substream;
use crate::spectral::soft_threshold;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = substream(seed, 3);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar `Σ y ∘ r` with a fixed random r, so every output entry is probed.
fn probe(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let r = tape.constant(random(tape.shape(y), seed ^ 0xabc));
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    gradient_check(inputs, f).unwrap()
}

#[test]
fn relu_of_negative_is_zero_with_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::from_vec(vec![0.5, 2.0, 0.0]));
    let nx = tape.scale(x, -1.0);
    let y = tape.relu(nx);
    assert_eq!(tape.value(y).data, vec![0.0, 0.0, 0.0]);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.tensor(x).data, vec![0.0, 0.0, 0.0]);
}

#[test]
fn dense_identity_passthrough() {
    let mut tape = Tape::new();
    let x = tape.param(random(&[2, 3], 1));
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data[i * 4] = 1.0;
    }
    let w = tape.constant(eye);
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = tape.dense(x, w, b).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.tensor(x).data, vec![1.0; 6]);
}

#[test]
fn conv1d_shift_kernel() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![1, 5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    let w = tape.constant(Tensor::new(vec![3, 1, 1], vec![1.0, 0.0, 0.0]).unwrap());
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv1d(x, w, b).unwrap();
    assert_eq!(tape.value(y).data, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    let err = check(&[random(&[1, 5, 1], 2)], |t, v| {
        let w = t.constant(Tensor::new(vec![3, 1, 1], vec![1.0, 0.0, 0.0]).unwrap());
        let b = t.constant(Tensor::zeros(&[1]));
        let y = t.conv1d(v[0], w, b)?;
        probe(t, y, 2)
    });
    assert!(err < 1e-8, "{err}");
}

#[test]
fn shape_mismatch_errors() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::zeros(&[2, 3]));
    let b = tape.param(Tensor::zeros(&[3, 2]));
    assert!(tape.add(a, b).is_err());
    let bias = tape.param(Tensor::zeros(&[3]));
    assert!(tape.dense(a, a, bias).is_err());
    assert!(tape.cmatmul(a, b).is_err());
}

#[test]
fn quadratic_form_is_exact() {
    let q = random(&[4, 4], 5);
    let err = check(&[random(&[1, 4], 6)], |t, v| {
        let w = t.constant(q.clone());
        let b = t.constant(Tensor::zeros(&[4]));
        let qx = t.dense(v[0], w, b)?;
        let p = t.mul(qx, v[0])?;
        Ok(t.sum(p))
    });
    assert!(err < 1e-7, "{err}");
}

#[test]
fn three_layer_relu_net() {
    let inputs = [
        random(&[3, 5], 10),
        random(&[5, 8], 11),
        random(&[8], 12),
        random(&[8, 6], 13),
        random(&[6], 14),
        random(&[6, 2], 15),
        random(&[2], 16),
    ];
    let err = check(&inputs, |t, v| {
        let h = t.dense(v[0], v[1], v[2])?;
        let h = t.relu(h);
        let h = t.dense(h, v[3], v[4])?;
        let h = t.relu(h);
        let y = t.dense(h, v[5], v[6])?;
        probe(t, y, 17)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn every_elementwise_primitive() {
    let a = random(&[2, 3], 20);
    let b = random(&[2, 3], 21);
    let err = check(&[a.clone(), b.clone()], |t, v| {
        let s = t.sigmoid(v[0]);
        let e = t.exp(v[1]);
        let p = t.mul(s, e)?;
        let q = t.sub(p, v[0])?;
        let r = t.add(q, v[1])?;
        let r = t.scale(r, 0.7);
        let r = t.reshape(r, &[3, 2])?;
        let f = t.frob_sq(r);
        let w = t.sq_err(v[0], v[1])?;
        t.add(f, w)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn conv_stack_gradients() {
    let inputs = [random(&[2, 7, 3], 30), random(&[3, 3, 4], 31), random(&[4], 32)];
    let err = check(&inputs, |t, v| {
        let y = t.conv1d(v[0], v[1], v[2])?;
        probe(t, y, 33)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn complex_matmul_gradients_and_real_pair_consistency() {
    let a = random(&[3, 4, 2], 40);
    let b = random(&[4, 2, 2], 41);
    let err = check(&[a.clone(), b.clone()], |t, v| {
        let y = t.cmatmul(v[0], v[1])?;
        probe(t, y, 42)
    });
    assert!(err < 1e-6, "{err}");

    // The same product written with real blocks [[Ar, -Ai], [Ai, Ar]].
    let ma = tensor_to_cmatrix(&a).unwrap();
    let mb = tensor_to_cmatrix(&b).unwrap();
    let block = |m: &CMatrix| {
        let (r, c) = m.shape();
        let mut t = Tensor::zeros(&[2 * r, 2 * c]);
        for i in 0..r {
            for j in 0..c {
                let z = m[(i, j)];
                t.data[i * 2 * c + j] = z.re;
                t.data[i * 2 * c + c + j] = -z.im;
                t.data[(r + i) * 2 * c + j] = z.im;
                t.data[(r + i) * 2 * c + c + j] = z.re;
            }
        }
        t
    };
    let mut tape = Tape::new();
    let va = tape.param(a.clone());
    let vb = tape.constant(b.clone());
    let y = tape.cmatmul(va, vb).unwrap();
    let l = tape.frob_sq(y);
    let gc = tensor_to_cmatrix(&tape.backward(l).unwrap().tensor(va)).unwrap();

    let mut tape = Tape::new();
    let ra = tape.param(block(&ma));
    let bb = block(&mb);
    let cols = bb.shape[1];
    let rb = tape.constant(bb);
    let zero = tape.constant(Tensor::zeros(&[cols]));
    let y = tape.dense(ra, rb, zero).unwrap();
    let l = tape.frob_sq(y);
    let gr = tape.backward(l).unwrap().tensor(ra);
    // Real gradient of a block-structured input, folded back: each complex
    // entry appears twice, so the pair gradient is half the block sum.
    let (r, c) = ma.shape();
    for i in 0..r {
        for j in 0..c {
            let re = 0.5 * (gr.data[i * 2 * c + j] + gr.data[(r + i) * 2 * c + c + j]);
            let im = 0.5 * (gr.data[(r + i) * 2 * c + j] - gr.data[i * 2 * c + c + j]);
            assert!((gc[(i, j)] - C64::new(re, im)).norm() < 1e-12);
        }
    }
}

fn diag3(vals: [f64; 3]) -> Tensor {
    let m = CMatrix::from_fn(3, 3, |i, j| if i == j { C64::new(vals[i], 0.0) } else { C64::new(0.0, 0.0) });
    cmatrix_to_tensor(&m)
}

#[test]
fn svd_soft_threshold_diagonal_example() {
    let mut tape = Tape::new();
    let x = tape.constant(diag3([3.0, 2.0, 1.0]));
    let mu = tape.constant(Tensor::scalar(1.0));
    let y = tape.svd_soft_threshold(x, mu, 2).unwrap();
    let expected = diag3([2.0, 1.0, 0.0]);
    for (a, b) in tape.value(y).data.iter().zip(&expected.data) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn svd_soft_threshold_limits() {
    let x = random(&[4, 5, 2], 50);
    let mut tape = Tape::new();
    let vx = tape.constant(x.clone());
    let mu = tape.constant(Tensor::scalar(1e-14));
    let y = tape.svd_soft_threshold(vx, mu, 2).unwrap();
    for (a, b) in tape.value(y).data.iter().zip(&x.data) {
        assert!((a - b).abs() < 1e-12);
    }
    // rank 2 input, K = 2: σ₃ = 0, so nothing moves for any μ
    let low = tensor_to_cmatrix(&random(&[4, 2, 2], 51)).unwrap() * tensor_to_cmatrix(&random(&[2, 5, 2], 52)).unwrap();
    let lt = cmatrix_to_tensor(&low);
    let vx = tape.constant(lt.clone());
    let mu = tape.constant(Tensor::scalar(0.9));
    let y = tape.svd_soft_threshold(vx, mu, 2).unwrap();
    for (a, b) in tape.value(y).data.iter().zip(&lt.data) {
        assert!((a - b).abs() < 1e-10);
    }
    let vx = tape.constant(x);
    assert!(tape.svd_soft_threshold(vx, mu, 4).is_err());
}

#[test]
fn svd_soft_threshold_matches_spectral_version() {
    for (shape, seed) in [([4usize, 6usize], 60u64), ([6, 4], 61), ([5, 5], 62)] {
        let x = random(&[shape[0], shape[1], 2], seed);
        let mut tape = Tape::new();
        let vx = tape.constant(x.clone());
        let mu = tape.constant(Tensor::scalar(0.4));
        let y = tape.svd_soft_threshold(vx, mu, 1).unwrap();
        let reference = soft_threshold(&tensor_to_cmatrix(&x).unwrap(), 1, 0.4).unwrap();
        let got = tensor_to_cmatrix(tape.value(y)).unwrap();
        assert!((got - reference).norm() < 1e-12);
    }
}

#[test]
fn svd_soft_threshold_gradients() {
    for (shape, k, seed) in [([4usize, 6usize], 1usize, 70u64), ([6, 4], 2, 71), ([5, 5], 1, 72), ([3, 3], 0, 73)] {
        let x = random(&[shape[0], shape[1], 2], seed);
        let err = check(&[x, Tensor::scalar(0.35)], |t, v| {
            let y = t.svd_soft_threshold(v[0], v[1], k)?;
            probe(t, y, seed)
        });
        assert!(err < 1e-4, "shape {shape:?}: {err}");
    }
}

#[test]
fn svd_soft_threshold_gradient_with_repeated_singular_values() {
    // X = Q diag(2, 2, 0.5) with Q unitary: the top pair is degenerate.
    let q = crate::linalg::svd(&tensor_to_cmatrix(&random(&[3, 3, 2], 80)).unwrap()).unwrap().u;
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        C64::new(2.0, 0.0),
        C64::new(2.0, 0.0),
        C64::new(0.5, 0.0),
    ]));
    let x = cmatrix_to_tensor(&(q * d));
    let err = check(&[x, Tensor::scalar(0.6)], |t, v| {
        let y = t.svd_soft_threshold(v[0], v[1], 2)?;
        Ok(t.frob_sq(y))
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn toeplitz_ops_gradients() {
    let x = random(&[3, 5, 2], 90);
    let err = check(&[x.clone()], |t, v| {
        let y = t.toeplitz_project(v[0])?;
        probe(t, y, 91)
    });
    assert!(err < 1e-6, "{err}");
    let err = check(&[x], |t, v| {
        let y = t.toeplitz_reshape(v[0], 6, 2)?;
        probe(t, y, 92)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn toeplitz_reshape_of_toeplitz_keeps_the_sequence() {
    let s: Vec<C64> = (0..7).map(|i| C64::new(i as f64, -(i as f64) * 0.5)).collect();
    let a = crate::spectral::ToeplitzMatrix::from_moments(&s, 3).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(cmatrix_to_tensor(a.entries()));
    let y = tape.toeplitz_reshape(x, 5, 3).unwrap();
    let b = crate::spectral::ToeplitzMatrix::from_moments(&s, 2).unwrap();
    assert_eq!(tensor_to_cmatrix(tape.value(y)).unwrap(), *b.entries());
}

fn geometry(periodic: bool) -> PiecewiseGeometry {
    PiecewiseGeometry { samples: 7, sampling_period: 1.0 / 7.0, delta: 0.25, anchor: 1.5, periodic }
}

/// The decoder spelled out layer by layer.
fn decoder_pipeline(t: &mut Tape, loc: Var, amp: Var, d: Var, g: &PiecewiseGeometry) -> Result<Var> {
    let knots = t.shape(d)[0];
    let support = knots as f64 * g.delta;
    let offsets: Vec<f64> = (0..g.samples).map(|n| g.anchor - n as f64).collect();
    let wrap = g.periodic.then_some(g.samples as f64);
    let z = t.affine_expand(loc, 1.0 / g.sampling_period, &offsets, wrap);
    let z = t.gate(z, 0.0, support);
    let knot_offsets: Vec<f64> = (0..knots).map(|i| -(i as f64) * g.delta).collect();
    let r = t.affine_expand(z, 1.0, &knot_offsets, None);
    let r = t.relu(r);
    let phi = t.contract_last(r, d)?;
    t.weighted_sum(amp, phi)
}

#[test]
fn fused_decoder_matches_layer_pipeline() {
    for periodic in [true, false] {
        let g = geometry(periodic);
        let loc = Tensor::new(vec![2, 2], vec![0.11, 0.53, 0.87, 0.3]).unwrap();
        let amp = random(&[2, 2], 100);
        let d = random(&[10], 101);
        let mut tape = Tape::new();
        let (vl, va, vd) = (tape.param(loc.clone()), tape.param(amp.clone()), tape.param(d.clone()));
        let fused = tape.piecewise_synth(vl, va, vd, g).unwrap();
        let piped = decoder_pipeline(&mut tape, vl, va, vd, &g).unwrap();
        for (a, b) in tape.value(fused).data.iter().zip(&tape.value(piped).data) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let lf = probe(&mut tape, fused, 102).unwrap();
        let gf = tape.backward(lf).unwrap();
        let lp = probe(&mut tape, piped, 102).unwrap();
        let gp = tape.backward(lp).unwrap();
        for v in [vl, va, vd] {
            for (a, b) in gf.tensor(v).data.iter().zip(&gp.tensor(v).data) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
        let kernel = PiecewiseKernel::new(d.data.clone(), g.delta, g.anchor).unwrap();
        let x = loc.data[0] / g.sampling_period - 2.0;
        let direct: f64 = if periodic {
            (-2..=2).map(|l| kernel.eval(x + 7.0 * l as f64)).sum()
        } else {
            kernel.eval(x)
        };
        let y = tape.value(fused).data[2] - amp.data[1] * {
            let x1 = loc.data[1] / g.sampling_period - 2.0;
            if periodic {
                (-2..=2).map(|l| kernel.eval(x1 + 7.0 * l as f64)).sum::<f64>()
            } else {
                kernel.eval(x1)
            }
        };
        assert!((y - amp.data[0] * direct).abs() < 1e-12);
    }
}

#[test]
fn decoder_gradients_away_from_knots() {
    let g = geometry(true);
    let inputs = [
        Tensor::new(vec![1, 2], vec![0.1234, 0.6061]).unwrap(),
        random(&[1, 2], 110),
        random(&[10], 111),
    ];
    let err = check(&inputs, |t, v| {
        let y = t.piecewise_synth(v[0], v[1], v[2], g)?;
        probe(t, y, 112)
    });
    assert!(err < 1e-6, "{err}");
    let err = check(&inputs, |t, v| {
        let y = decoder_pipeline(t, v[0], v[1], v[2], &g)?;
        probe(t, y, 112)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn zero_coefficients_give_zero_output() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::new(vec![1, 1], vec![0.3]).unwrap());
    let a = tape.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
    let d = tape.constant(Tensor::zeros(&[10]));
    let y = tape.piecewise_synth(l, a, d, geometry(true)).unwrap();
    assert!(tape.value(y).data.iter().all(|&v| v == 0.0));
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2]));
    assert!(tape.backward(x).is_err());
}

fn trajectory(seed: u64) -> Vec<u64> {
    let mut params = vec![random(&[3, 4], seed), random(&[4], seed + 1)];
    let x = random(&[5, 3], seed + 2);
    let mut adam = AdamState::new(1e-2);
    for _ in 0..10 {
        let mut tape = Tape::new();
        let w = tape.param(params[0].clone());
        let b = tape.param(params[1].clone());
        let xi = tape.constant(x.clone());
        let y = tape.dense(xi, w, b).unwrap();
        let y = tape.relu(y);
        let l = tape.frob_sq(y);
        let g = tape.backward(l).unwrap();
        adam.update(&mut params, &[g.tensor(w), g.tensor(b)]).unwrap();
    }
    params.iter().flat_map(|t| t.data.iter().map(|v| v.to_bits())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replay_is_bit_identical(seed in 0u64..10_000) {
        prop_assert_eq!(trajectory(seed), trajectory(seed));
    }

    #[test]
    fn random_primitives_pass_gradient_check(seed in 0u64..10_000) {
        let inputs = [random(&[2, 4], seed), random(&[4, 3], seed + 1), random(&[3], seed + 2)];
        let err = check(&inputs, |t, v| {
            let h = t.dense(v[0], v[1], v[2])?;
            let s = t.sigmoid(h);
            let e = t.exp(s);
            probe(t, e, seed)
        });
        prop_assert!(err < 1e-4, "{}", err);
        let x = random(&[3, 4, 2], seed + 3);
        let err = check(&[x, Tensor::scalar(0.3)], |t, v| {
            let y = t.svd_soft_threshold(v[0], v[1], 1)?;
            let y = t.toeplitz_project(y)?;
            probe(t, y, seed)
        });
        prop_assert!(err < 1e-4, "{}", err);
    }
}
