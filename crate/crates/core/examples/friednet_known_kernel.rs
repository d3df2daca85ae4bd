//! FRIED-Net with the sampling kernel known: encoder warm start, then joint
//! training through the fixed piecewise-linear decoder, then per-datum
//! fine-tuning at inference.
//!
//! `cargo run --release --example friednet_known_kernel -- [train_size] [epochs]`

use fri_core::experiment::{evaluate_cell, load_json, train_cell, ExperimentConfig, Problem, TrainedModel};
use fri_core::signal_model::Method;

fn main() -> fri_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let train_size: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);

    let cfg: ExperimentConfig = load_json(
        r#"{"method": "friednet", "psnr": [20], "dt0": [0.01], "seed": 1, "output_dir": "unused",
            "friednet": {"stage2_epochs": 1, "finetune": {"steps": 30, "lr": 1e-5}}}"#,
        &[format!("train_size={train_size}"), format!("friednet.stage1_epochs={epochs}")],
    )?;
    let mut problem = Problem::new(&cfg)?;
    let cell = problem.cells()[0];
    let (model, _) = train_cell(&problem, cell, None)?;
    let TrainedModel::Fried(net) = &model else { unreachable!() };
    println!("encoder parameters: {}", net.encoder.parameter_count());

    println!("PSNR 20 dB, dt0 = 0.01, {} realizations", cfg.realizations);
    for method in [Method::PronyCadzow, Method::FriedNet, Method::FriedNetFinetuned] {
        problem.cfg.method = method;
        let report = evaluate_cell(&problem, cell, &model)?;
        println!("{:<18} mean SD {:.4}", method.as_str(), report.mean);
    }
    Ok(())
}
