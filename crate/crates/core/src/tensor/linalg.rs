use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Strides of a row-major `rows × cols` matrix, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatView {
    pub rs: isize,
    pub cs: isize,
}

impl MatView {
    pub fn row_major(cols: usize) -> Self {
        MatView {
            rs: cols as isize,
            cs: 1,
        }
    }

    /// View of a row-major `cols × rows` buffer as its transpose.
    pub fn transposed(rows_of_storage_cols: usize) -> Self {
        MatView {
            rs: 1,
            cs: rows_of_storage_cols as isize,
        }
    }
}

/// `c = a·b + beta·c` for `a: m×k`, `b: k×n`, `c: m×n` (row-major `c`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    av: MatView,
    b: &[T],
    bv: MatView,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices are at least as long as the strided extents they
    // are read/written through, checked above; views only permute strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            av.rs,
            av.cs,
            b.as_ptr(),
            bv.rs,
            bv.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

impl<T: Element> Tensor<T> {
    /// Matrix product of `m×k` and `k×n` tensors.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        super::elementwise::with_pair(self, other, |a, b| {
            gemm(
                m,
                k,
                n,
                a,
                MatView::row_major(k),
                b,
                MatView::row_major(n),
                T::zero(),
                &mut out,
            )
        });
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            move |args| {
                let g = args.grad;
                super::elementwise::with_pair(&args.inputs[0], &args.inputs[1], |a, b| {
                    // dA = dC·Bᵀ
                    let ga = args.needs[0].then(|| {
                        let mut ga = vec![T::zero(); m * k];
                        gemm(
                            m,
                            n,
                            k,
                            g,
                            MatView::row_major(n),
                            b,
                            MatView::transposed(n),
                            T::zero(),
                            &mut ga,
                        );
                        ga
                    });
                    // dB = Aᵀ·dC
                    let gb = args.needs[1].then(|| {
                        let mut gb = vec![T::zero(); k * n];
                        gemm(
                            k,
                            m,
                            n,
                            a,
                            MatView::transposed(k),
                            g,
                            MatView::row_major(n),
                            T::zero(),
                            &mut gb,
                        );
                        gb
                    });
                    vec![ga, gb]
                })
            },
        ))
    }

    /// Batched matrix product of `B×m×k` and `B×k×n` tensors.
    pub fn bmm(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("bmm", sa, sb));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); batch * m * n];
        super::elementwise::with_pair(self, other, |a, b| {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a[i * m * k..],
                    MatView::row_major(k),
                    &b[i * k * n..],
                    MatView::row_major(n),
                    T::zero(),
                    &mut out[i * m * n..],
                );
            }
        });
        Ok(Tensor::from_op(
            "bmm",
            vec![batch, m, n],
            out,
            vec![self.clone(), other.clone()],
            move |args| {
                let g = args.grad;
                super::elementwise::with_pair(&args.inputs[0], &args.inputs[1], |a, b| {
                    let ga = args.needs[0].then(|| {
                        let mut ga = vec![T::zero(); batch * m * k];
                        for i in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[i * m * n..],
                                MatView::row_major(n),
                                &b[i * k * n..],
                                MatView::transposed(n),
                                T::zero(),
                                &mut ga[i * m * k..],
                            );
                        }
                        ga
                    });
                    let gb = args.needs[1].then(|| {
                        let mut gb = vec![T::zero(); batch * k * n];
                        for i in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &a[i * m * k..],
                                MatView::transposed(k),
                                &g[i * m * n..],
                                MatView::row_major(n),
                                T::zero(),
                                &mut gb[i * k * n..],
                            );
                        }
                        gb
                    });
                    vec![ga, gb]
                })
            },
        ))
    }
}
