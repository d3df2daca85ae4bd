//! Noiseless round trip: two Diracs sampled by an eMOMS kernel, recovered by
//! the annihilating filter.

use fri_core::kernels::{emoms_frequencies, exp_repro_coeffs, Kernel};
use fri_core::rng::stream;
use fri_core::signal_model::{synthesize, DiracStream, SamplingConfig};
use fri_core::spectral::{reconstruct_classical, Denoiser};

fn main() -> fri_core::Result<()> {
    let (p, n, k) = (20, 21, 2);
    let kernel = Kernel::emoms(p)?;
    let (omega0, lambda) = emoms_frequencies(p);
    let coeffs = exp_repro_coeffs(&kernel, p, omega0, lambda, n)?;
    let config = SamplingConfig::periodic(n, 1.0);

    let truth = DiracStream::random(&mut stream(2024), k, 1.0, (0.5, 10.0))?;
    let samples = synthesize(&truth, &kernel, &config)?;
    let est = reconstruct_classical(&samples, &coeffs, &kernel, k, Denoiser::None)?;

    println!("{:>12} {:>12} {:>10} {:>10}", "t", "t_hat", "a", "a_hat");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| est.locations[i].total_cmp(&est.locations[j]));
    for (i, &j) in order.iter().enumerate() {
        println!(
            "{:>12.9} {:>12.9} {:>10.6} {:>10.6}",
            truth.locations()[i],
            est.locations[j],
            truth.amplitudes()[i],
            est.amplitudes[j]
        );
    }
    Ok(())
}
