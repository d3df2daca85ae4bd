//! Trains the unfolded PWGD denoiser on a small set of close Dirac pairs and
//! compares it with Cadzow on the same held-out realizations.
//!
//! `cargo run --release --example unfolded_training -- [train_size] [epochs]`

use fri_core::experiment::{evaluate_cell, load_json, train_cell, ExperimentConfig, Problem, TrainedModel};
use fri_core::signal_model::Method;

fn main() -> fri_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let train_size: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);

    let cfg: ExperimentConfig = load_json(
        r#"{"method": "unfolded", "psnr": [20], "dt0": [0.01], "seed": 1, "output_dir": "unused"}"#,
        &[format!("train_size={train_size}"), format!("unfolded.epochs={epochs}")],
    )?;
    let problem = Problem::new(&cfg)?;
    let cell = problem.cells()[0];

    let untrained = TrainedModel::Unfolded(fri_core::unfolded::UnfoldedNetwork::init(
        20,
        fri_core::spectral::default_split(20),
        2,
        &cfg.unfolded.init,
    )?);
    let before = evaluate_cell(&problem, cell, &untrained)?;
    let (model, _) = train_cell(&problem, cell, None)?;
    let after = evaluate_cell(&problem, cell, &model)?;

    let mut classical = problem;
    classical.cfg.method = Method::PronyCadzow;
    let cadzow = evaluate_cell(&classical, cell, &TrainedModel::Classical)?;

    println!("PSNR 20 dB, dt0 = 0.01, {} realizations", cfg.realizations);
    println!("cadzow             mean SD {:.4}", cadzow.mean);
    println!("unfolded untrained mean SD {:.4}", before.mean);
    println!("unfolded trained   mean SD {:.4}", after.mean);
    Ok(())
}
