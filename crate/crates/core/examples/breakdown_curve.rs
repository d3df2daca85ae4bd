//! Predicted breakdown PSNR against the separation of two Diracs, printed as
//! CSV (pass a path to write a file instead).

use fri_core::experiment::{breakdown_map, log_grid, write_breakdown_csv};
use fri_core::kernels::emoms_frequencies;

fn main() -> fri_core::Result<()> {
    let (p, n) = (20, 21);
    let (_, lambda) = emoms_frequencies(p);
    let grid = log_grid(1e-3, 10f64.powf(-0.5), 25)?;
    let curve = breakdown_map(p, lambda, 1.0 / n as f64, &grid)?;
    if let Some(path) = std::env::args().nth(1) {
        write_breakdown_csv(path.as_ref(), &curve)?;
        println!("wrote {path}");
        return Ok(());
    }
    println!("dt0,dt0_over_t,breakdown_psnr");
    for pt in &curve {
        match pt.psnr {
            Some(v) => println!("{:.5},{:.5},{v:.3}", pt.dt0, pt.dt0_over_t),
            None => println!("{:.5},{:.5},", pt.dt0, pt.dt0_over_t),
        }
    }
    Ok(())
}
