//! Reductions and data-movement operations.

use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// `out[j] = src[map[j]]` where `map` is the source index of every output
/// element; the backward is the matching scatter-add.
fn gather<T: Element>(src: &Tensor<T>, name: &'static str, shape: Vec<usize>, map: Vec<usize>) -> Tensor<T> {
    let data = {
        let s = src.data();
        map.iter().map(|&i| s[i]).collect()
    };
    let n_in = src.numel();
    Tensor::from_op(name, shape, data, vec![src.clone()], move |args| {
        let mut g = vec![T::zero(); n_in];
        for (&i, &gv) in map.iter().zip(args.grad) {
            g[i] += gv;
        }
        vec![Some(g)]
    })
}

impl<T: Element> Tensor<T> {
    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op("sum", Vec::new(), vec![s], vec![self.clone()], move |args| {
            vec![Some(vec![args.grad[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |args| vec![Some(args.grad.to_vec())],
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let shape = self.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", shape, axes));
        }
        let in_strides = row_major_strides(shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let n = self.numel();
        let mut map = Vec::with_capacity(n);
        let mut counter = vec![0usize; rank];
        let mut flat = 0usize;
        for _ in 0..n {
            map.push(flat);
            for ax in (0..rank).rev() {
                counter[ax] += 1;
                flat += strides[ax];
                if counter[ax] < out_shape[ax] {
                    break;
                }
                flat -= strides[ax] * counter[ax];
                counter[ax] = 0;
            }
        }
        Ok(gather(self, "permute", out_shape, map))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::shape("transpose", self.shape(), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// The sub-tensor `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("narrow", shape, &[axis, start, len]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner + start * inner;
            map.extend(base..base + len * inner);
        }
        Ok(gather(self, "narrow", out_shape, map))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", &[], &[]))?
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        for p in parts {
            let s = p.shape();
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &first, s));
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out_shape = first.clone();
        out_shape[axis] = total / inner;
        let mut data = Vec::with_capacity(outer * total);
        {
            let guards: Vec<_> = parts.iter().map(|p| p.to_vec()).collect();
            for o in 0..outer {
                for (g, &w) in guards.iter().zip(&widths) {
                    data.extend_from_slice(&g[o * w..(o + 1) * w]);
                }
            }
        }
        Ok(Tensor::from_op(
            "concat",
            out_shape,
            data,
            parts.to_vec(),
            move |args| {
                let mut grads: Vec<Option<Vec<T>>> = widths
                    .iter()
                    .zip(args.needs)
                    .map(|(&w, &need)| need.then(|| Vec::with_capacity(outer * w)))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (g, &w) in grads.iter_mut().zip(&widths) {
                        if let Some(g) = g {
                            g.extend_from_slice(&args.grad[off..off + w]);
                        }
                        off += w;
                    }
                }
                grads
            },
        ))
    }
}
