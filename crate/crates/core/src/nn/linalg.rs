//! Row-major dense products on top of `matrixmultiply`.

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `C = op(A) op(B) + beta·C` with op(A) m×k and op(B) k×n, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: Trans, b: &[f64], tb: Trans, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Trans::No => (k as isize, 1),
        Trans::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (n as isize, 1),
        Trans::Yes => (1, k as isize),
    };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}
