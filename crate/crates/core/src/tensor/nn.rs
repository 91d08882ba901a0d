use super::{Element, Tensor};
use crate::error::{Error, Result};

impl<T: Element> Tensor<T> {
    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", shape, &[axis]));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |j: usize| base + j * inner;
                let max = (0..len).map(|j| out[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        Ok(Tensor::from_op(
            "softmax",
            shape.to_vec(),
            out,
            vec![self.clone()],
            move |args| {
                let (g, y) = (args.grad, args.out);
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: T = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let k = base + j * inner;
                            gx[k] = y[k] * (g[k] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Standardises each row along the last axis to zero mean and unit
    /// (population) variance: `(x - mean) / sqrt(var + eps)`.
    pub fn normalize_rows(&self, eps: f64) -> Result<Tensor<T>> {
        let shape = self.shape();
        let d = *shape.last().ok_or_else(|| Error::shape("normalize_rows", shape, &[]))?;
        let rows = self.numel() / d;
        let eps = T::lit(eps);
        let dn = T::lit(d as f64);
        let mut out = self.to_vec();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &mut out[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        Ok(Tensor::from_op(
            "normalize_rows",
            shape.to_vec(),
            out,
            vec![self.clone()],
            move |args| {
                let (g, y) = (args.grad, args.out);
                let mut gx = vec![T::zero(); g.len()];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let yr = &y[r * d..(r + 1) * d];
                    let mean_g = gr.iter().copied().sum::<T>() / dn;
                    let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                    for j in 0..d {
                        gx[r * d + j] = inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let y = Tensor::<f64>::from_f64(&[3], &[0., 0., 0.])
            .unwrap()
            .softmax(0)
            .unwrap();
        for v in y.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let y = Tensor::<f64>::from_f64(&[2], &[1000., 0.]).unwrap().softmax(0).unwrap();
        let v = y.to_vec();
        assert_eq!(v[0], 1.0);
        assert!(v[1] >= 0.0 && v[1] < 1e-300);
    }

    #[test]
    fn softmax_inner_axis_rows_sum_to_one() {
        let v: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let y = Tensor::<f64>::from_f64(&[2, 3, 4], &v)
            .unwrap()
            .softmax(1)
            .unwrap()
            .to_vec();
        for o in 0..2 {
            for i in 0..4 {
                let s: f64 = (0..3).map(|j| y[o * 12 + j * 4 + i]).sum();
                assert!((s - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn normalize_constant_row_is_zero() {
        let y = Tensor::<f64>::from_f64(&[1, 4], &[3.; 4])
            .unwrap()
            .normalize_rows(1e-6)
            .unwrap();
        assert_eq!(y.to_vec(), vec![0.0; 4]);
    }
}
