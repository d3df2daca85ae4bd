//! Cadzow and relaxed PWGD denoising on the same noisy realizations, for a
//! close pair of Diracs at several noise levels.

use fri_core::kernels::{emoms_frequencies, exp_repro_coeffs, Kernel};
use fri_core::rng::substream;
use fri_core::signal_model::{
    add_noise_sigma, align_estimates, sd_metric_aligned, synthesize, DiracStream, SamplingConfig,
};
use fri_core::spectral::{reconstruct_classical, Denoiser};
use rand::Rng;

fn main() -> fri_core::Result<()> {
    let (p, n, k) = (20, 21, 2);
    let kernel = Kernel::emoms(p)?;
    let (omega0, lambda) = emoms_frequencies(p);
    let coeffs = exp_repro_coeffs(&kernel, p, omega0, lambda, n)?;
    let config = SamplingConfig::periodic(n, 1.0);
    let dt0 = 0.05;

    let denoisers = [
        ("none", Denoiser::None),
        ("cadzow", Denoiser::Cadzow { iterations: 10 }),
        ("pwgd", Denoiser::Pwgd { delta1: 0.9999, delta2: 0.9999, iterations: 10 }),
    ];
    println!("dt0 = {dt0}, mean SD over 200 realizations");
    println!("{:>6} {:>10} {:>10} {:>10}", "psnr", "none", "cadzow", "pwgd");
    for psnr in [10.0, 20.0, 30.0, 40.0] {
        let mut row = format!("{psnr:>6}");
        for (_, d) in denoisers {
            let mut aligned = Vec::new();
            for j in 0..200 {
                let mut rng = substream(7, j);
                let first = rng.random_range(-0.5..0.5 - dt0);
                let truth = DiracStream::new(1.0, vec![first, first + dt0], vec![1.0, 1.0])?;
                let clean = synthesize(&truth, &kernel, &config)?;
                let noisy = add_noise_sigma(&clean, clean.peak() * 10f64.powf(-psnr / 20.0), &mut rng)?;
                if let Ok(est) = reconstruct_classical(&noisy, &coeffs, &kernel, k, d) {
                    aligned.push(align_estimates(&est, &truth)?);
                }
            }
            row += &format!(" {:>10.2e}", sd_metric_aligned(&aligned)?.mean);
        }
        println!("{row}");
    }
    Ok(())
}
