use std::collections::{HashMap, HashSet};

use super::{BackwardArgs, Element, Tensor};
use crate::error::{Error, Result};

/// The recorded operations reachable from a loss, in topological order
/// (every operation appears after all operations producing its inputs).
pub struct Tape<T: Element> {
    ops: Vec<Tensor<T>>,
}

impl<T: Element> Tape<T> {
    /// Linearises the graph that produced `root`.
    pub fn record(root: &Tensor<T>) -> Self {
        let mut ops = Vec::new();
        let mut seen = HashSet::new();
        // Iterative post-order DFS; graphs can be deep enough to overflow the
        // stack recursively.
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            let Some(gf) = t.grad_fn() else { continue };
            if expanded {
                ops.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for input in gf.inputs.iter().rev() {
                if input.grad_fn().is_some() && !seen.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        Tape { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn op_names(&self) -> Vec<&'static str> {
        self.ops.iter().map(|t| t.op_name()).collect()
    }

    /// Propagates `seed` (the gradient of the final output) backwards,
    /// accumulating into every gradient-requiring leaf.
    fn run(&self, root: &Tensor<T>, seed: Vec<T>) {
        if root.is_leaf() {
            if root.requires_grad() {
                root.accumulate_grad(&seed);
            }
            return;
        }
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(root.id(), seed);
        for t in self.ops.iter().rev() {
            let Some(grad) = pending.remove(&t.id()) else {
                continue;
            };
            let gf = t.grad_fn().expect("tape holds only recorded ops");
            let needs: Vec<bool> = gf.inputs.iter().map(|i| i.requires_grad()).collect();
            let out = t.data();
            let grads = (gf.backward)(&BackwardArgs {
                grad: &grad,
                out: &out,
                inputs: &gf.inputs,
                needs: &needs,
            });
            drop(out);
            debug_assert_eq!(grads.len(), gf.inputs.len(), "backward of {}", gf.name);
            for (input, g) in gf.inputs.iter().zip(grads) {
                let Some(g) = g else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.len(), input.numel(), "gradient length in {}", gf.name);
                if input.is_leaf() {
                    input.accumulate_grad(&g);
                } else {
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                        None => {
                            pending.insert(input.id(), g);
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Accumulates `d self / d leaf` into every gradient-requiring leaf.
    /// Calling it twice without [`Tensor::zero_grad`] adds the gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        Tape::record(self).run(self, vec![T::one()]);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::<f64>::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn square_sum_gradient() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.scale(2.0).backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn diamond_visits_each_op_once() {
        // y = x*2 feeds both branches; its gradient must be the sum of both.
        let x = Tensor::<f64>::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let y = x.scale(2.0);
        let a = y.exp();
        let b = y.mul(&y).unwrap();
        let loss = a.add(&b).unwrap().sum();
        let tape = Tape::record(&loss);
        assert_eq!(tape.len(), 5);
        let names = tape.op_names();
        let pos = |n: &str| names.iter().position(|&m| m == n).unwrap();
        assert!(pos("scale") < pos("exp") && pos("scale") < pos("mul"));
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, xi) in g.iter().zip([1.0f64, -2.0, 0.5]) {
            let expect = 2.0 * (2.0 * xi).exp() + 8.0 * xi;
            assert!((gi - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = crate::tensor::no_grad(|| x.scale(3.0));
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
        assert!(x.scale(3.0).requires_grad());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let c = Tensor::<f64>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        x.mul(&c).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 4.0]);
        assert!(c.grad().is_none());
    }
}
