//! Broadcasting binary arithmetic and pointwise nonlinearities.
//!
//! Broadcasting follows the trailing-dimension rule: shapes are aligned on
//! their last axis, the shorter one is prefixed with 1s, and each pair of
//! extents must match or contain a 1.

use std::sync::Arc;

use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each element of a tensor of shape `out`, the flat index of the
/// corresponding element of a tensor of shape `src` broadcast to it.
fn broadcast_index(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let n = numel(out);
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        idx.push(flat);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            flat += strides[ax];
            if counter[ax] < out[ax] {
                break;
            }
            flat -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    idx
}

/// Reads two tensors' data, taking a single lock when both are the same node.
pub(crate) fn with_pair<T: Element, R>(a: &Tensor<T>, b: &Tensor<T>, f: impl FnOnce(&[T], &[T]) -> R) -> R {
    let da = a.data();
    if a.id() == b.id() {
        f(&da, &da)
    } else {
        let db = b.data();
        f(&da, &db)
    }
}

enum Layout {
    Same,
    Indexed(Arc<(Vec<usize>, Vec<usize>)>),
}

type Pointwise2<T> = fn(T, T) -> T;

impl<T: Element> Tensor<T> {
    fn binary(
        &self,
        other: &Tensor<T>,
        name: &'static str,
        f: Pointwise2<T>,
        dfa: Pointwise2<T>,
        dfb: Pointwise2<T>,
    ) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::shape(name, sa, sb))?;
        let layout = if sa == sb {
            Layout::Same
        } else {
            Layout::Indexed(Arc::new((
                broadcast_index(sa, &out_shape),
                broadcast_index(sb, &out_shape),
            )))
        };
        let data = with_pair(self, other, |a, b| match &layout {
            Layout::Same => a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
            Layout::Indexed(ix) => ix.0.iter().zip(&ix.1).map(|(&i, &j)| f(a[i], b[j])).collect(),
        });
        let na = self.numel();
        let nb = other.numel();
        Ok(Tensor::from_op(
            name,
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |args| {
                let g = args.grad;
                with_pair(&args.inputs[0], &args.inputs[1], |a, b| match &layout {
                    Layout::Same => {
                        let ga = args.needs[0].then(|| (0..na).map(|i| g[i] * dfa(a[i], b[i])).collect::<Vec<_>>());
                        let gb = args.needs[1].then(|| (0..nb).map(|i| g[i] * dfb(a[i], b[i])).collect::<Vec<_>>());
                        vec![ga, gb]
                    }
                    Layout::Indexed(ix) => {
                        let (ia, ib) = (&ix.0, &ix.1);
                        let ga = args.needs[0].then(|| {
                            let mut ga = vec![T::zero(); na];
                            for (k, (&i, &j)) in ia.iter().zip(ib).enumerate() {
                                ga[i] += g[k] * dfa(a[i], b[j]);
                            }
                            ga
                        });
                        let gb = args.needs[1].then(|| {
                            let mut gb = vec![T::zero(); nb];
                            for (k, (&i, &j)) in ia.iter().zip(ib).enumerate() {
                                gb[j] += g[k] * dfb(a[i], b[j]);
                            }
                            gb
                        });
                        vec![ga, gb]
                    }
                })
            },
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "add", |x, y| x + y, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "sub", |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "div", |x, y| x / y, |_, y| T::one() / y, |x, y| -x / (y * y))
    }

    /// Pointwise map whose derivative may depend on both input and output.
    pub(crate) fn unary(
        &self,
        name: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(name, self.shape().to_vec(), data, vec![self.clone()], move |args| {
            let x = args.inputs[0].data();
            let g = args
                .grad
                .iter()
                .zip(x.iter().zip(args.out))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(g)]
        })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c = T::lit(c);
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::lit(c);
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn relu(&self) -> Tensor<T> {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::lit(slope);
        self.unary(
            "leaky_relu",
            move |x| if x > T::zero() { x } else { x * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    /// Natural log; negative inputs are a domain error.
    pub fn log(&self) -> Result<Tensor<T>> {
        self.check_nonnegative("log")?;
        Ok(self.unary("log", |x| x.ln(), |x, _| T::one() / x))
    }

    /// Square root; negative inputs are a domain error.
    pub fn sqrt(&self) -> Result<Tensor<T>> {
        self.check_nonnegative("sqrt")?;
        Ok(self.unary("sqrt", |x| x.sqrt(), |_, y| T::lit(0.5) / y))
    }

    fn check_nonnegative(&self, op: &'static str) -> Result<()> {
        match self.data().iter().position(|&x| x < T::zero() || x.is_nan()) {
            Some(i) => Err(Error::Domain {
                op,
                detail: format!("input[{i}] = {} is outside the domain", self.data()[i]),
            }),
            None => Ok(()),
        }
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            "sigmoid",
            |x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
        let c = T::lit(0.044715);
        let half = T::lit(0.5);
        self.unary(
            "gelu",
            move |x| half * x * (T::one() + (k * (x + c * x * x * x)).tanh()),
            move |x, _| {
                let u = k * (x + c * x * x * x);
                let th = u.tanh();
                let du = k * (T::one() + T::lit(3.0) * c * x * x);
                half * (T::one() + th) + half * x * (T::one() - th * th) * du
            },
        )
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        self.unary(
            "clamp",
            move |x| x.max(lo).min(hi),
            move |x, _| if x < lo || x > hi { T::zero() } else { T::one() },
        )
    }
}
