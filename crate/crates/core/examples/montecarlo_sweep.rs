//! A small Monte Carlo sweep of Prony with Cadzow denoising over a PSNR by
//! separation grid; writes `sd_mean.csv` and `summary.json`.
//!
//! `cargo run --release --example montecarlo_sweep -- [output_dir]`

use fri_core::experiment::{load_json, run_experiment, ExperimentConfig};

fn main() -> fri_core::Result<()> {
    env_logger::init();
    let out = std::env::args().nth(1).unwrap_or_else(|| "sweep_out".into());
    let cfg: ExperimentConfig = load_json(
        r#"{"method": "prony-cadzow", "psnr": [null, 40, 30, 20, 10],
            "dt0": [0.003, 0.01, 0.03, 0.1], "realizations": 200, "seed": 9, "output_dir": "x"}"#,
        &[format!("output_dir={out}")],
    )?;
    let summary = run_experiment(&cfg)?;
    print!("{:>6}", "psnr");
    for d in &cfg.dt0 {
        print!(" {d:>9}");
    }
    println!();
    for psnr in &cfg.psnr {
        print!("{:>6}", psnr.map(|p| p.to_string()).unwrap_or_else(|| "inf".into()));
        for &d in &cfg.dt0 {
            print!(" {:>9.2e}", summary.cell(*psnr, d).and_then(|c| c.sd_mean).unwrap_or(f64::NAN));
        }
        println!();
    }
    println!("results in {out}/");
    Ok(())
}
