//! Parameterised building blocks shared by the transformer and the CNNs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::patching::{soft_composite, soft_split, PatchGeometry, PatchSet};
use crate::tensor::{Element, Tensor};

/// Anything that owns trainable tensors.
pub trait Params<T: Element> {
    /// Calls `f` on every parameter with a dotted name under `prefix`.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    fn zero_grad(&self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `y = x·W + b` on row vectors; `W` is `(in, out)`.
#[derive(Clone, Debug)]
pub struct Linear<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    /// Uniform `±1/sqrt(in)` weights, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[inputs, outputs], bound, rng).into_param(),
            bias: Tensor::zeros(&[outputs]).into_param(),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[inputs, outputs]).into_param(),
            bias: Tensor::zeros(&[outputs]).into_param(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

impl<T: Element> Params<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct LayerNorm<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Element> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Tensor::ones(&[d]).into_param(),
            beta: Tensor::zeros(&[d]).into_param(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        layer_norm(x, &self.gamma, &self.beta)
    }
}

/// Row-wise standardisation over the last axis followed by `gamma·x + beta`.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    let d = x.shape().last().copied().unwrap_or(0);
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    x.normalize_rows(LAYER_NORM_EPS)?.mul(gamma)?.add(beta)
}

impl<T: Element> Params<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }
}

/// Square-kernel 2D convolution over `(t, h, w, c)` frames, implemented as
/// soft split followed by a matrix product.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Element> {
    pub linear: Linear<T>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Conv2d {
            linear: Linear::new(kernel * kernel * cin, cout, rng),
            kernel,
            stride,
            padding,
        }
    }

    pub fn cin(&self) -> usize {
        self.linear.inputs() / (self.kernel * self.kernel)
    }

    pub fn cout(&self) -> usize {
        self.linear.outputs()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [t, h, w, c] = *x.shape() else {
            return Err(Error::shape("conv2d", x.shape(), &[0, 0, 0, self.cin()]));
        };
        if c != self.cin() {
            return Err(Error::shape("conv2d", x.shape(), &[t, h, w, self.cin()]));
        }
        let g = PatchGeometry::new(h, w, c, self.kernel, self.stride, self.padding)?;
        let (nh, nw) = g.grid();
        let cols = soft_split(x, &g)?.patches;
        self.linear.forward(&cols)?.reshape(&[t, nh, nw, self.cout()])
    }
}

impl<T: Element> Params<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.linear.visit(prefix, f)
    }
}

/// Transposed convolution: a matrix product into patches, then a soft
/// composite. With kernel 4, stride 2, padding 1 it exactly doubles `h, w`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T: Element> {
    pub linear: Linear<T>,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        // Each output pixel receives about (k/s)^2 contributions.
        let fan_in = cin * (kernel * kernel) / (stride * stride);
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        ConvTranspose2d {
            linear: Linear {
                weight: Tensor::uniform(&[cin, kernel * kernel * cout], bound, rng).into_param(),
                bias: Tensor::zeros(&[cout]).into_param(),
            },
            cout,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_extent(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel - 2 * self.padding
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [t, h, w, c] = *x.shape() else {
            return Err(Error::shape(
                "conv_transpose2d",
                x.shape(),
                &[0, 0, 0, self.linear.inputs()],
            ));
        };
        if c != self.linear.inputs() {
            return Err(Error::shape(
                "conv_transpose2d",
                x.shape(),
                &[t, h, w, self.linear.inputs()],
            ));
        }
        let g = PatchGeometry::new(
            self.output_extent(h),
            self.output_extent(w),
            self.cout,
            self.kernel,
            self.stride,
            self.padding,
        )?;
        debug_assert_eq!(g.grid(), (h, w));
        let rows = x.reshape(&[t * h * w, c])?.matmul(&self.linear.weight)?;
        let map = soft_composite(&PatchSet::new(rows, g, Some(t))?)?;
        map.add(&self.linear.bias)
    }
}

impl<T: Element> Params<T> for ConvTranspose2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.linear.visit(prefix, f)
    }
}

/// Zero-padded temporal window: `(t, n, f)` → `(t, n, width·f)` where slot
/// `j` of frame `i` holds frame `i + j - width/2`.
pub fn temporal_unfold<T: Element>(x: &Tensor<T>, width: usize) -> Result<Tensor<T>> {
    let [t, n, f] = *x.shape() else {
        return Err(Error::shape("temporal_unfold", x.shape(), &[0, 0, 0]));
    };
    if width.is_multiple_of(2) {
        return Err(Error::shape("temporal_unfold", x.shape(), &[width]));
    }
    let half = width / 2;
    let src_of = move |i: usize, j: usize| (i + j).checked_sub(half).filter(|&s| s < t);
    let mut out = vec![T::zero(); t * n * width * f];
    {
        let d = x.data();
        for i in 0..t {
            for j in 0..width {
                let Some(s) = src_of(i, j) else { continue };
                for r in 0..n {
                    let dst = ((i * n + r) * width + j) * f;
                    let src = (s * n + r) * f;
                    out[dst..dst + f].copy_from_slice(&d[src..src + f]);
                }
            }
        }
    }
    Ok(Tensor::from_op(
        "temporal_unfold",
        vec![t, n, width * f],
        out,
        vec![x.clone()],
        move |args| {
            let mut g = vec![T::zero(); t * n * f];
            for i in 0..t {
                for j in 0..width {
                    let Some(s) = src_of(i, j) else { continue };
                    for r in 0..n {
                        let src = ((i * n + r) * width + j) * f;
                        let dst = (s * n + r) * f;
                        for q in 0..f {
                            g[dst + q] += args.grad[src + q];
                        }
                    }
                }
            }
            vec![Some(g)]
        },
    ))
}

/// Spatiotemporal convolution: spatial window via soft split, temporal window
/// of 3 frames (zero padded).
#[derive(Clone, Debug)]
pub struct Conv3d<T: Element> {
    pub linear: Linear<T>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

pub const TEMPORAL_KERNEL: usize = 3;

impl<T: Element> Conv3d<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Conv3d {
            linear: Linear::new(TEMPORAL_KERNEL * kernel * kernel * cin, cout, rng),
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [t, h, w, c] = *x.shape() else {
            return Err(Error::shape("conv3d", x.shape(), &[0, 0, 0, 0]));
        };
        let g = PatchGeometry::new(h, w, c, self.kernel, self.stride, self.padding)?;
        let (nh, nw) = g.grid();
        let n = nh * nw;
        let cols = soft_split(x, &g)?.patches.reshape(&[t, n, g.patch_len()])?;
        let cols = temporal_unfold(&cols, TEMPORAL_KERNEL)?.reshape(&[t * n, TEMPORAL_KERNEL * g.patch_len()])?;
        self.linear.forward(&cols)?.reshape(&[t, nh, nw, self.linear.outputs()])
    }
}

impl<T: Element> Params<T> for Conv3d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.linear.visit(prefix, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct 4-loop convolution used as an oracle.
    fn conv_oracle(x: &[f64], (t, h, w, c): (usize, usize, usize, usize), conv: &Conv2d<f64>) -> Vec<f64> {
        let (k, s, p) = (conv.kernel, conv.stride, conv.padding);
        let wt = conv.linear.weight.to_vec();
        let b = conv.linear.bias.to_vec();
        let co = conv.cout();
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let mut out = vec![0.0; t * oh * ow * co];
        for f in 0..t {
            for i in 0..oh {
                for j in 0..ow {
                    for o in 0..co {
                        let mut acc = b[o];
                        for ch in 0..c {
                            for dy in 0..k {
                                for dx in 0..k {
                                    let y = (i * s + dy) as i64 - p as i64;
                                    let xx = (j * s + dx) as i64 - p as i64;
                                    if y < 0 || xx < 0 || y >= h as i64 || xx >= w as i64 {
                                        continue;
                                    }
                                    let xi = ((f * h + y as usize) * w + xx as usize) * c + ch;
                                    let wi = (ch * k * k + dy * k + dx) * co + o;
                                    acc += x[xi] * wt[wi];
                                }
                            }
                        }
                        out[((f * oh + i) * ow + j) * co + o] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let conv = Conv2d::<f64>::new(3, 4, 3, 2, 1, &mut rng);
        let x = Tensor::<f64>::uniform(&[2, 7, 6, 3], 1.0, &mut rng);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 4]);
        let want = conv_oracle(&x.to_vec(), (2, 7, 6, 3), &conv);
        for (a, b) in y.to_vec().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_doubles_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let up = ConvTranspose2d::<f64>::new(3, 2, 4, 2, 1, &mut rng);
        let x = Tensor::<f64>::uniform(&[2, 4, 5, 3], 1.0, &mut rng);
        assert_eq!(up.forward(&x).unwrap().shape(), &[2, 8, 10, 2]);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // Without bias, <conv(x), y> == <x, conv^T(y)> when both share weights.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let down = Conv2d::<f64>::new(2, 3, 4, 2, 1, &mut rng);
        let up = ConvTranspose2d {
            linear: Linear {
                weight: down.linear.weight.transpose().unwrap(),
                bias: Tensor::zeros(&[2]),
            },
            cout: 2,
            kernel: 4,
            stride: 2,
            padding: 1,
        };
        let x = Tensor::<f64>::uniform(&[1, 8, 6, 2], 1.0, &mut rng);
        let y = Tensor::<f64>::uniform(&[1, 4, 3, 3], 1.0, &mut rng);
        let cx = down.forward(&x).unwrap().sub(&down.linear.bias).unwrap();
        let lhs: f64 = cx.to_vec().iter().zip(y.to_vec()).map(|(a, b)| a * b).sum();
        let uy = up.forward(&y).unwrap();
        let rhs: f64 = x.to_vec().iter().zip(uy.to_vec()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn temporal_unfold_shifts_frames() {
        let x = Tensor::<f64>::from_f64(&[3, 1, 2], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let y = temporal_unfold(&x, 3).unwrap();
        assert_eq!(y.shape(), &[3, 1, 6]);
        assert_eq!(
            y.to_vec(),
            vec![0., 0., 1., 2., 3., 4., 1., 2., 3., 4., 5., 6., 3., 4., 5., 6., 0., 0.]
        );
    }

    #[test]
    fn layer_norm_examples() {
        let g = Tensor::<f64>::ones(&[2]);
        let b = Tensor::<f64>::zeros(&[2]);
        let x = Tensor::<f64>::from_f64(&[1, 2], &[1.0, -1.0]).unwrap();
        let y = layer_norm(&x, &g, &b).unwrap().to_vec();
        let expect = 1.0 / (1.0f64 + LAYER_NORM_EPS).sqrt();
        assert!((y[0] - expect).abs() < 1e-15 && (y[1] + expect).abs() < 1e-15);
        assert!((y[0] - 1.0).abs() < 1e-6);
        let c = Tensor::<f64>::from_f64(&[1, 2], &[5.0, 5.0]).unwrap();
        assert_eq!(layer_norm(&c, &g, &b).unwrap().to_vec(), vec![0.0, 0.0]);
    }
}
