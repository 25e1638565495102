//! Reverse-mode differentiation over an append-only operation tape.
//!
//! Every primitive appends one node holding its output value and the ids of
//! its inputs. [`GradTape::backward`] walks the nodes in reverse order and
//! accumulates vector-Jacobian products, so any node recorded before the root
//! (parameters included) receives its gradient.

use crate::error::{Error, Result};
use crate::tensor::{self, layer_norm_backward, layer_norm_forward, Real, Tensor};

/// Handle to a node on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatVec(Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Scale(Var, T),
    Sum(Var),
    Row { matrix: Var, index: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor<T>, inv_std: T },
    /// `-log softmax(logits)[target]`; saves the probabilities.
    NegLogLikelihood { logits: Var, target: usize, probs: Vec<T> },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Clone, Debug, Default)]
pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> GradTape<T> {
    pub fn new() -> Self {
        GradTape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let y = self.value(m).matvec(self.value(x))?;
        Ok(self.push(y, Op::MatVec(m, x)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul(self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).sub(self.value(b))?;
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).mul(self.value(b))?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).sigmoid();
        self.push(y, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).tanh();
        self.push(y, Op::Tanh(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let y = Tensor::new(x.shape(), tensor::softmax(x.data())?)?;
        Ok(self.push(y, Op::Softmax(a)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let y = self.value(a).scale(c);
        self.push(y, Op::Scale(a, c))
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::filled(&[1], s), Op::Sum(a))
    }

    /// Row `index` of a matrix (embedding lookup).
    pub fn row(&mut self, matrix: Var, index: usize) -> Result<Var> {
        let y = self.value(matrix).row(index)?;
        Ok(self.push(y, Op::Row { matrix, index }))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (y, xhat, inv_std) = layer_norm_forward(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Cross entropy of one token: `-log softmax(logits)[target]`.
    pub fn neg_log_likelihood(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rank() != 1 || target >= z.len() {
            return Err(Error::Vocabulary {
                id: target,
                size: z.len(),
            });
        }
        let logp = tensor::log_softmax(z.data())?;
        let probs = logp.iter().map(|l| l.exp()).collect();
        let loss = -logp[target];
        Ok(self.push(
            Tensor::filled(&[1], loss),
            Op::NegLogLikelihood { logits, target, probs },
        ))
    }

    /// Back-propagates from a one-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::dim("backward", self.value(root).shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(&[1], T::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatVec(m, x) => {
                    let dx = self.value(*m).t_matvec(&g)?;
                    accumulate_outer(&mut grads, *m, &g, self.value(*x))?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose()?)?;
                    let db = self.value(*a).transpose()?.matmul(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.scale(-T::one()))?;
                }
                Op::Mul(a, b) => {
                    let da = g.mul(self.value(*b))?;
                    let db = g.mul(self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = g.mul(&y.map(|s| s * (T::one() - s)))?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = g.mul(&y.map(|t| T::one() - t * t))?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = g.dot(y)?;
                    let d = y.mul(&g.map(|gi| gi - gy))?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.scale(*c))?;
                }
                Op::Sum(a) => {
                    let d = Tensor::filled(self.value(*a).shape(), g.data()[0]);
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Row { matrix, index } => {
                    let m = self.value(*matrix);
                    let cols = m.cols();
                    let slot = grads[matrix.0].get_or_insert_with(|| Tensor::zeros(m.shape()));
                    let row = &mut slot.data_mut()[index * cols..(index + 1) * cols];
                    for (r, &gi) in row.iter_mut().zip(g.data()) {
                        *r = *r + gi;
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (dx, dg, db) = layer_norm_backward(&g, xhat, *inv_std, self.value(*gain))?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *gain, dg)?;
                    accumulate(&mut grads, *bias, db)?;
                }
                Op::NegLogLikelihood { logits, target, probs } => {
                    let scale = g.data()[0];
                    let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    d[*target] = d[*target] - scale;
                    accumulate(&mut grads, *logits, Tensor::vector(d)?)?;
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, d: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.accumulate(&d),
        slot @ None => {
            *slot = Some(d);
            Ok(())
        }
    }
}

fn accumulate_outer<T: Real>(grads: &mut [Option<Tensor<T>>], m: Var, g: &Tensor<T>, x: &Tensor<T>) -> Result<()> {
    match &mut grads[m.0] {
        Some(existing) => existing.add_outer(g, x),
        slot @ None => {
            *slot = Some(Tensor::outer(g, x)?);
            Ok(())
        }
    }
}

/// Gradients of the root with respect to the tape's leaves.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like its value when `v` did not
    /// influence the root.
    pub fn take_or_zeros(&mut self, tape: &GradTape<T>, v: Var) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Builds a scalar from two inputs, checks analytic gradients of both.
    fn check_binary(
        seed: u64,
        sa: &[usize],
        sb: &[usize],
        build: impl Fn(&mut GradTape<f64>, Var, Var) -> Result<Var>,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, sa);
        let b = rand_tensor(&mut rng, sb);
        // random projection so the scalar depends on every output entry
        let eval = |a: &Tensor<f64>, b: &Tensor<f64>, w_seed: u64| -> (f64, Tensor<f64>, Tensor<f64>) {
            let mut t = GradTape::new();
            let va = t.leaf(a.clone());
            let vb = t.leaf(b.clone());
            let y = build(&mut t, va, vb).unwrap();
            let mut wrng = ChaCha8Rng::seed_from_u64(w_seed);
            let w = rand_tensor(&mut wrng, t.value(y).shape());
            let vw = t.leaf(w);
            let p = t.mul(y, vw).unwrap();
            let s = t.sum(p);
            let mut g = t.backward(s).unwrap();
            (t.scalar(s), g.take_or_zeros(&t, va), g.take_or_zeros(&t, vb))
        };
        let (_, ga, gb) = eval(&a, &b, seed + 1000);
        let theta: Vec<f64> = a.data().iter().chain(b.data()).copied().collect();
        let analytic: Vec<f64> = ga.data().iter().chain(gb.data()).copied().collect();
        let na = a.len();
        finite_diff_check(
            |th: &[f64]| {
                let a2 = Tensor::new(sa, th[..na].to_vec()).unwrap();
                let b2 = Tensor::new(sb, th[na..].to_vec()).unwrap();
                Ok(eval(&a2, &b2, seed + 1000).0)
            },
            &theta,
            &analytic,
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rng.gen_range(1..=8);
            let c = rng.gen_range(1..=8);
            let k = rng.gen_range(1..=8);
            let n = rng.gen_range(2..=8);
            let tol = 1e-4;
            assert!(check_binary(seed, &[r, c], &[c], |t, a, b| t.matvec(a, b)) < tol);
            assert!(check_binary(seed, &[r, k], &[k, c], |t, a, b| t.matmul(a, b)) < tol);
            assert!(check_binary(seed, &[n], &[n], |t, a, b| t.add(a, b)) < tol);
            assert!(check_binary(seed, &[n], &[n], |t, a, b| t.sub(a, b)) < tol);
            assert!(check_binary(seed, &[n], &[n], |t, a, b| t.mul(a, b)) < tol);
            assert!(check_binary(seed, &[n], &[n], |t, a, _| Ok(t.sigmoid(a))) < tol);
            assert!(check_binary(seed, &[n], &[n], |t, a, _| Ok(t.tanh(a))) < tol);
            assert!(check_binary(seed, &[n], &[n], |t, a, _| t.softmax(a)) < tol);
            assert!(check_binary(seed, &[n], &[n], |t, a, _| Ok(t.scale(a, 1.7))) < tol);
            assert!(check_binary(seed, &[r, c], &[c], |t, a, _| t.row(a, r - 1)) < tol);
            assert!(
                check_binary(seed, &[n], &[n], |t, a, b| {
                    let gain = t.mul(b, b)?;
                    t.layer_norm(a, gain, b, 1e-5)
                }) < tol
            );
            assert!(check_binary(seed, &[n], &[n], |t, a, _| t.neg_log_likelihood(a, n / 2)) < tol);
        }
    }

    #[test]
    fn reused_leaf_accumulates() {
        let mut t = GradTape::new();
        let x = t.leaf(Tensor::vector(vec![2.0f64, -3.0]).unwrap());
        let y = t.mul(x, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, -6.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut t = GradTape::new();
        let x = t.leaf(Tensor::<f64>::zeros(&[3]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn nll_rejects_out_of_range_target() {
        let mut t = GradTape::new();
        let x = t.leaf(Tensor::<f64>::zeros(&[3]));
        assert!(matches!(t.neg_log_likelihood(x, 3), Err(Error::Vocabulary { .. })));
    }
}
