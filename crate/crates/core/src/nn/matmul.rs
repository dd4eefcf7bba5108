use ndarray::{Array2, ArrayView2, ArrayViewMut2};

/// `a · b` for arbitrarily strided views.
///
/// Uses the `gemm` kernels, which pick AVX-512 or AVX2 code at run time and
/// are close to twice as fast as the default ndarray product on AVX-512
/// hardware.
pub fn matmul(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Array2<f32> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ");
    if m == 0 || n == 0 || k == 0 {
        return Array2::zeros((m, n));
    }
    let mut c = Array2::<f32>::uninit((m, n));
    // SAFETY: every pointer addresses a live array whose extents and element
    // strides are passed alongside it. With `read_dst = false` the kernel
    // writes each of the m×n destination elements without reading them, so
    // the uninitialized buffer is fully initialized afterwards.
    unsafe {
        raw(c.as_mut_ptr() as *mut f32, [1, n as isize], false, a, b);
        c.assume_init()
    }
}

/// `c = a · b`, or `c += a · b` when `accumulate` is set.
pub fn matmul_into(
    a: ArrayView2<f32>,
    b: ArrayView2<f32>,
    mut c: ArrayViewMut2<f32>,
    accumulate: bool,
) {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(c.dim(), (m, n), "destination shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rs, cs) = (c.strides()[0], c.strides()[1]);
    // SAFETY: `c` is a live, initialized, exclusively borrowed view whose
    // extents and strides are passed alongside its pointer.
    unsafe { raw(c.as_mut_ptr(), [cs, rs], accumulate, a, b) }
}

/// # Safety
/// `dst` must address an `a.rows × b.cols` matrix with the given column and
/// row strides, initialized when `read_dst` is set.
unsafe fn raw(
    dst: *mut f32,
    [dst_cs, dst_rs]: [isize; 2],
    read_dst: bool,
    a: ArrayView2<f32>,
    b: ArrayView2<f32>,
) {
    let (m, k) = a.dim();
    let n = b.dim().1;
    let (a_rs, a_cs) = (a.strides()[0], a.strides()[1]);
    let (b_rs, b_cs) = (b.strides()[0], b.strides()[1]);
    gemm::gemm(
        m,
        n,
        k,
        dst,
        dst_cs,
        dst_rs,
        read_dst,
        a.as_ptr(),
        a_cs,
        a_rs,
        b.as_ptr(),
        b_cs,
        b_rs,
        1.0,
        1.0,
        false,
        false,
        false,
        gemm::Parallelism::None,
    );
}
