//! Thin safe wrapper over the dgemm kernel used by the convolution paths.

/// C[m,n] = A·B + beta·C with optional transposition of either operand.
///
/// `a` is `m×k` row-major (or `k×m` when `a_trans`), `b` is `k×n` row-major
/// (or `n×k` when `b_trans`). Panics on length mismatches; callers pass
/// buffers they sized themselves.
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: A buffer length");
    assert_eq!(b.len(), k * n, "gemm: B buffer length");
    assert_eq!(c.len(), m * n, "gemm: C buffer length");
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
