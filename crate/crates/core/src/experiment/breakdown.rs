use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FriError, Result};
use crate::signal_model::breakdown_psnr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownPoint {
    pub dt0: f64,
    pub dt0_over_t: f64,
    /// `None` when the formula is undefined at this separation.
    pub psnr: Option<f64>,
    pub error: Option<String>,
}

/// `count` points spaced logarithmically on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || count < 2 {
        return Err(FriError::InvalidArgument(format!("log grid needs 0 < lo < hi and 2+ points, got [{lo}, {hi}] x {count}")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect())
}

/// Breakdown PSNR at each Δt₀ of the grid, for sampling period `t_s`.
pub fn breakdown_map(p: usize, lambda: f64, t_s: f64, grid: &[f64]) -> Result<Vec<BreakdownPoint>> {
    if grid.is_empty() {
        return Err(FriError::EmptyInput("breakdown grid is empty"));
    }
    if let Some(d) = grid.iter().find(|d| !(**d > 0.0)) {
        return Err(FriError::InvalidArgument(format!("grid values must be positive, got {d}")));
    }
    Ok(grid
        .iter()
        .map(|&dt0| {
            let x = dt0 / t_s;
            match breakdown_psnr(p, lambda, x) {
                Ok(v) => BreakdownPoint { dt0, dt0_over_t: x, psnr: Some(v), error: None },
                Err(e) => BreakdownPoint { dt0, dt0_over_t: x, psnr: None, error: Some(e.to_string()) },
            }
        })
        .collect())
}

pub fn write_breakdown_csv(path: &Path, points: &[BreakdownPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dt0", "dt0_over_t", "breakdown_psnr", "error"])?;
    for p in points {
        w.write_record([
            format!("{}", p.dt0),
            format!("{}", p.dt0_over_t),
            p.psnr.map(|v| format!("{v}")).unwrap_or_default(),
            p.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
