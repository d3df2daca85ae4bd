//! One-sided Jacobi SVD for small complex matrices.
//!
//! nalgebra's bidiagonal SVD returns inconsistent factors on rank-deficient
//! input, which is exactly the regime Cadzow and Prony live in, so the
//! decompositions used by this crate go through here instead.

use nalgebra::DMatrix;

use crate::error::{FriError, Result};
use crate::kernels::C64;

pub type CMatrix = DMatrix<C64>;

/// `A = U diag(σ) Vᴴ` with σ descending and r = min(m, n) columns in U and V.
///
/// The factor on the smaller side is square and unitary. On the larger side,
/// a column whose singular value is exactly zero is left as zero.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `Σ_i f(i, σ_i) u_i v_iᴴ`.
    pub fn rebuild(&self, f: impl Fn(usize, f64) -> f64) -> CMatrix {
        let mut scaled = self.u.clone();
        for (j, &s) in self.sigma.iter().enumerate() {
            scaled.column_mut(j).scale_mut(f(j, s));
        }
        scaled * self.v.adjoint()
    }
}

const MAX_SWEEPS: usize = 80;

/// Orthogonalizes the columns of a tall matrix in place; returns the
/// accumulated unitary V.
fn hestenes(w: &mut CMatrix) -> Result<CMatrix> {
    let (m, n) = w.shape();
    let mut v = CMatrix::identity(n, n);
    let tol = f64::EPSILON * (m as f64).sqrt().max(1.0);
    // a column at rounding level of the whole matrix has no reliable
    // direction; rotating it against a large column only stirs the noise
    let negligible = f64::EPSILON * f64::EPSILON * w.norm_squared();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = C64::new(0.0, 0.0);
                for i in 0..m {
                    let a = w[(i, p)];
                    let b = w[(i, q)];
                    alpha += a.norm_sqr();
                    beta += b.norm_sqr();
                    gamma += a.conj() * b;
                }
                let g = gamma.norm();
                if g == 0.0 || g <= tol * (alpha * beta).sqrt() || alpha.min(beta) <= negligible {
                    continue;
                }
                rotated = true;
                let phase = (gamma / g).conj();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = if zeta == 0.0 { 1.0 } else { zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt()) };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let a = w[(i, p)];
                    let b = w[(i, q)] * phase;
                    w[(i, p)] = a * c - b * s;
                    w[(i, q)] = a * s + b * c;
                }
                for i in 0..n {
                    let a = v[(i, p)];
                    let b = v[(i, q)] * phase;
                    v[(i, p)] = a * c - b * s;
                    v[(i, q)] = a * s + b * c;
                }
            }
        }
        if !rotated {
            return Ok(v);
        }
    }
    Err(FriError::Numerical("Jacobi SVD did not converge".into()))
}

fn tall_svd(a: &CMatrix) -> Result<Svd> {
    let mut w = a.clone();
    let v = hestenes(&mut w)?;
    let n = w.ncols();
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = CMatrix::zeros(w.nrows(), n);
    let mut vs = CMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s);
        if s > 0.0 {
            u.set_column(dst, &w.column(src).unscale(s));
        }
        vs.set_column(dst, &v.column(src));
    }
    Ok(Svd { u, sigma, v: vs })
}

/// Singular value decomposition of any complex matrix.
pub fn svd(a: &CMatrix) -> Result<Svd> {
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(FriError::Numerical("non-finite entry passed to SVD".into()));
    }
    if a.nrows() >= a.ncols() {
        tall_svd(a)
    } else {
        let t = tall_svd(&a.adjoint())?;
        Ok(Svd { u: t.v, sigma: t.sigma, v: t.u })
    }
}

/// SVD of a wide (or square) matrix whose U is guaranteed square and unitary.
pub fn svd_full_left(a: &CMatrix) -> Result<Svd> {
    if a.nrows() > a.ncols() {
        return Err(FriError::DimensionMismatch("svd_full_left expects rows <= cols".into()));
    }
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(FriError::Numerical("non-finite entry passed to SVD".into()));
    }
    let t = tall_svd(&a.adjoint())?;
    Ok(Svd { u: t.v, sigma: t.sigma, v: t.u })
}

/// Real least squares through the complex SVD; singular values at or below
/// `rel_tol · σ_max` are dropped (least-norm solution).
pub fn real_lstsq(a: &DMatrix<f64>, y: &[f64], rel_tol: f64) -> Result<(Vec<f64>, bool)> {
    let ac = a.map(|v| C64::new(v, 0.0));
    let d = svd(&ac)?;
    let smax = d.sigma.first().cloned().unwrap_or(0.0);
    let cutoff = smax * rel_tol;
    let deficient = smax == 0.0 || d.sigma.iter().any(|&s| s <= cutoff);
    let n = a.ncols();
    let mut x = vec![0.0; n];
    for (j, &s) in d.sigma.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let coef: C64 = (0..a.nrows()).map(|i| d.u[(i, j)].conj() * y[i]).sum::<C64>() / s;
        for (r, xr) in x.iter_mut().enumerate() {
            *xr += (d.v[(r, j)] * coef).re;
        }
    }
    Ok((x, deficient))
}
