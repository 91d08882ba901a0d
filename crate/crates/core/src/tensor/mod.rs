//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) to a node holding row-major data,
//! an optional gradient buffer and, for results of recorded operations, the
//! rule that propagates gradients to the operation's inputs. The graph is
//! rebuilt on every forward pass; calling [`Tensor::backward`] on a scalar
//! linearises it into a [`Tape`] and walks it once in reverse.
//!
//! Element type is generic over [`Element`] (`f32` or `f64`). Gradient checks
//! run in `f64`; training may use `f32`.

mod autograd;
pub mod checkpoint;
mod elementwise;
mod linalg;
mod nn;
mod shape;

use std::cell::Cell;
use std::fmt;
use std::iter::Sum;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;

pub use autograd::Tape;
#[allow(unused_imports)]
pub(crate) use linalg::gemm;

use crate::error::{Error, Result};

/// Scalar types a [`Tensor`] can hold.
pub trait Element:
    Float + FromPrimitive + NumAssign + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a·b + beta * c` with arbitrary row/column strides.
    ///
    /// # Safety
    /// Pointers must be valid for the extents and strides given.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operations on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Everything a backward rule may look at.
pub struct BackwardArgs<'a, T: Element> {
    /// Gradient of the loss with respect to this operation's output.
    pub grad: &'a [T],
    /// The operation's forward output.
    pub out: &'a [T],
    pub inputs: &'a [Tensor<T>],
    /// `needs[i]` is false when input `i` does not require a gradient; rules
    /// may return `None` for it.
    pub needs: &'a [bool],
}

type BackwardFn<T> = dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync;

pub(crate) struct GradFn<T: Element> {
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: Box<BackwardFn<T>>,
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

pub struct Tensor<T: Element> {
    node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<_> = data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn from_node(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// A constant (no gradient) tensor.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape("from_vec", shape, &[data.len()]));
        }
        if shape.contains(&0) {
            return Err(Error::shape("from_vec", shape, &[]));
        }
        Ok(Self::from_node(shape.to_vec(), data, false, None))
    }

    /// A trainable leaf.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(t.into_param())
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn scalar(v: T) -> Self {
        Self::from_node(Vec::new(), vec![v], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_node(shape.to_vec(), vec![v; numel(shape)], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Uniform samples in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.gen_range(-bound..bound)))
            .collect();
        Self::from_node(shape.to_vec(), data, false, None)
    }

    /// Standard normal samples (Box-Muller), scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = numel(shape);
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            let r = (-2.0 * u1.ln()).sqrt();
            let th = std::f64::consts::TAU * u2;
            data.push(T::lit(std * r * th.cos()));
            if data.len() < n {
                data.push(T::lit(std * r * th.sin()));
            }
        }
        Self::from_node(shape.to_vec(), data, false, None)
    }

    /// Turns a freshly built constant into a trainable leaf.
    pub fn into_param(self) -> Self {
        let data = self.to_vec();
        Self::from_node(self.node.shape.clone(), data, true, None)
    }

    /// Records the result of a custom differentiable operation.
    ///
    /// `backward` receives the output gradient and must return one entry per
    /// input, each either `None` or a gradient buffer with the input's length.
    pub fn from_op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        backward: impl Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            let grad_fn = GradFn {
                name,
                inputs,
                backward: Box::new(backward),
            };
            Self::from_node(shape, data, true, Some(grad_fn))
        } else {
            Self::from_node(shape, data, false, None)
        }
    }

    /// Same data, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::from_node(self.node.shape.clone(), self.to_vec(), false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn op_name(&self) -> &'static str {
        self.node.grad_fn.as_ref().map_or("leaf", |g| g.name)
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.node.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.as_f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.node.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// In-place update of a leaf's values, used by optimizers and loaders.
    ///
    /// Panics if called on the output of a recorded operation.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        assert!(self.is_leaf(), "in-place update of a non-leaf tensor");
        let mut d = self.node.data.write().expect("tensor data lock poisoned");
        f(&mut d);
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn<T>> {
        self.node.grad_fn.as_ref()
    }

    /// Copies this tensor's values into a tensor of another element type.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::lit(v.as_f64())).collect();
        Tensor::from_node(self.node.shape.clone(), data, false, None)
    }
}
