//! Learns the sampling kernel together with the encoder from samples and
//! locations only, then compares the normalized learned kernel with the true
//! one. Writes `learned_kernel.csv` (`t,phi`) to the working directory.
//!
//! `cargo run --release --example friednet_unknown_kernel -- [train_size] [stage1] [stage2]`

use fri_core::experiment::{load_json, train_cell, ExperimentConfig, Problem, TrainedModel};
use fri_core::friednet::kernel_correlation;

fn main() -> fri_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (train_size, stage1, stage2) = (arg(1, 4000), arg(2, 10), arg(3, 5));

    let cfg: ExperimentConfig = load_json(
        r#"{"method": "friednet", "psnr": [70], "dt0": [0.01], "layout": "uniform", "seed": 3,
            "output_dir": "unused",
            "friednet": {"known_kernel": false, "gamma": 100, "delta": 0.0625, "lr_decoder": 3e-3,
                         "stage3_epochs": 0}}"#,
        &[
            format!("train_size={train_size}"),
            format!("friednet.stage1_epochs={stage1}"),
            format!("friednet.stage2_epochs={stage2}"),
        ],
    )?;
    let problem = Problem::new(&cfg)?;
    let (model, _) = train_cell(&problem, problem.cells()[0], None)?;
    let TrainedModel::Fried(net) = model else { unreachable!() };

    let corr = kernel_correlation(&net.decoder.as_kernel(), &problem.kernel, 1e-3);
    println!("correlation with the true kernel: {corr:.4}");
    net.decoder.write_csv("learned_kernel.csv".as_ref(), 1.0 / 64.0)?;
    println!("wrote learned_kernel.csv");
    Ok(())
}
