//! Tape gradients against central finite differences for the singular-value
//! soft threshold, a full unfolded network and the piecewise-linear decoder.

use fri_core::friednet::Decoder;
use fri_core::kernels::{Kernel, C64};
use fri_core::nn::{cmatrix_to_tensor, gradient_check, Tensor};
use fri_core::rng::substream;
use fri_core::signal_model::SamplingConfig;
use fri_core::spectral::{AnnihilatingFilter, ToeplitzMatrix};
use fri_core::unfolded::{UnfoldedInit, UnfoldedNetwork, ZeroEigLossConfig};
use rand::Rng;

fn main() -> fri_core::Result<()> {
    let mut rng = substream(3, 0);
    let mut c = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));

    let x = cmatrix_to_tensor(&fri_core::linalg::CMatrix::from_fn(4, 5, |_, _| c()));
    let err = gradient_check(&[x, Tensor::scalar(0.3)], |tape, v| {
        let y = tape.svd_soft_threshold(v[0], v[1], 2)?;
        Ok(tape.frob_sq(y))
    })?;
    println!("svd soft threshold  rel err {err:.2e}");

    let s: Vec<C64> = (0..6).map(|_| c()).collect();
    let net = UnfoldedNetwork::init(5, 3, 1, &UnfoldedInit { layers: 2, ..Default::default() })?;
    let noisy = cmatrix_to_tensor(ToeplitzMatrix::from_moments(&s, 3)?.entries());
    let filter = AnnihilatingFilter::from_locations(&[0.3], std::f64::consts::PI / 3.0, 1.0 / 6.0).unit_normalized();
    let loss = ZeroEigLossConfig { alpha: 10.0, beta: 0.5 };
    let err = gradient_check(&net.params.tensors, |tape, vars| {
        let xv = tape.constant(noisy.clone());
        let out = *net.forward_tape(tape, vars, xv)?.last().expect("two layers");
        net.loss_tape(tape, out, &filter, &loss)
    })?;
    println!("unfolded network    rel err {err:.2e}");

    let dec = Decoder::fixed(&Kernel::emoms(20)?, 1.0 / 16.0, SamplingConfig::periodic(21, 1.0))?;
    let target = Tensor::new(vec![1, 21], (0..21).map(|i| (i as f64 * 0.3).sin()).collect())?;
    let inputs = [
        Tensor::new(vec![1, 2], vec![0.0123, -0.3171])?,
        Tensor::new(vec![1, 2], vec![1.3, 0.7])?,
        dec.coefficients(),
    ];
    let err = gradient_check(&inputs, |tape, v| {
        let y = dec.forward_tape(tape, v[0], v[1], v[2])?;
        let t = tape.constant(target.clone());
        tape.sq_err(y, t)
    })?;
    println!("decoder             rel err {err:.2e}");
    Ok(())
}
