//! Dense row-major tensors and the forward/backward rules of every primitive
//! the recurrent cells are built from.
//!
//! Shapes are checked explicitly on every call. There is no broadcasting: a
//! vector is a rank-1 tensor and a matrix a rank-2 tensor, and the only
//! mixed-rank primitive is [`Tensor::matvec`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Default layer-normalization epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Scalar element type. Tests run in `f64`, training runs in `f32`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable as f64")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Domain(format!(
                "tensor shape must be non-empty with positive extents, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Domain("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&x| T::of(x))).collect();
        Self::matrix(rows.len(), cols, data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.rank() < 2 {
            1
        } else {
            self.shape[1]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn row(&self, i: usize) -> Result<Tensor<T>> {
        if self.rank() != 2 || i >= self.rows() {
            return Err(Error::dim("row", &self.shape, &[i]));
        }
        let c = self.cols();
        Tensor::vector(self.data[i * c..(i + 1) * c].to_vec())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.map(|x| x * c)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.map(|x| x.tanh())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Tensor<T>) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::dim("dot", &self.shape, &other.shape));
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm_sq(&self) -> T {
        dot(&self.data, &self.data)
    }

    /// In-place `self += other`.
    pub fn accumulate(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("accumulate", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Transposed copy of a matrix.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::dim("transpose", &self.shape, &[2]));
        }
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || other.rank() != 2 || self.cols() != other.rows() {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let (n, k, m) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Tensor::matrix(n, m, out)
    }

    /// `self · x` for a matrix `self` and a vector `x`.
    pub fn matvec(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || x.rank() != 1 || self.cols() != x.len() {
            return Err(Error::dim("matvec", &self.shape, &x.shape));
        }
        let c = self.cols();
        let data = self
            .data
            .chunks_exact(c)
            .map(|row| dot(row, &x.data))
            .collect();
        Tensor::vector(data)
    }

    /// `selfᵀ · g` for a matrix `self` and a vector `g` of length `rows`.
    pub fn t_matvec(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || g.rank() != 1 || self.rows() != g.len() {
            return Err(Error::dim("t_matvec", &self.shape, &g.shape));
        }
        let c = self.cols();
        let mut out = vec![T::zero(); c];
        for (row, &gi) in self.data.chunks_exact(c).zip(&g.data) {
            if gi == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + w * gi;
            }
        }
        Tensor::vector(out)
    }

    /// Outer product `g xᵀ`, the weight gradient of a matrix-vector product.
    pub fn outer(g: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if g.rank() != 1 || x.rank() != 1 {
            return Err(Error::dim("outer", &g.shape, &x.shape));
        }
        let mut out = Vec::with_capacity(g.len() * x.len());
        for &gi in &g.data {
            out.extend(x.data.iter().map(|&xj| gi * xj));
        }
        Tensor::matrix(g.len(), x.len(), out)
    }

    /// In-place `self += g xᵀ`.
    pub fn add_outer(&mut self, g: &Tensor<T>, x: &Tensor<T>) -> Result<()> {
        if self.rank() != 2 || self.rows() != g.len() || self.cols() != x.len() {
            return Err(Error::dim("add_outer", &self.shape, &[g.len(), x.len()]));
        }
        let c = self.cols();
        for (row, &gi) in self.data.chunks_exact_mut(c).zip(&g.data) {
            if gi == T::zero() {
                continue;
            }
            for (w, &xj) in row.iter_mut().zip(&x.data) {
                *w = *w + gi * xj;
            }
        }
        Ok(())
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log(softmax(x))` evaluated without forming the probabilities.
pub fn log_softmax<T: Real>(x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::Domain("log-softmax of an empty vector".into()));
    }
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    Ok(x.iter().map(|&v| v - lse).collect())
}

/// Forward pass of layer normalization. Returns the output together with the
/// normalized input and `1/sqrt(var + eps)`, which the backward pass reuses.
pub fn layer_norm_forward<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Tensor<T>, T)> {
    if x.rank() != 1 || gain.shape() != x.shape() || bias.shape() != x.shape() {
        return Err(Error::dim("layer_norm", x.shape(), gain.shape()));
    }
    if x.len() < 2 {
        return Err(Error::dim("layer_norm", x.shape(), &[2]));
    }
    let n = T::of(x.len() as f64);
    let mean = x.sum() / n;
    let var = x.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv_std = T::one() / (var + eps).sqrt();
    let xhat = x.map(|v| (v - mean) * inv_std);
    let out = xhat
        .data()
        .iter()
        .zip(gain.data())
        .zip(bias.data())
        .map(|((&xh, &g), &b)| g * xh + b)
        .collect();
    Ok((Tensor::vector(out)?, xhat, inv_std))
}

/// Backward pass of layer normalization: returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<T: Real>(
    grad: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: T,
    gain: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let n = T::of(xhat.len() as f64);
    let dxhat = grad.mul(gain)?;
    let sum_d = dxhat.sum();
    let sum_dx = dxhat.dot(xhat)?;
    let dx = dxhat
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(&d, &xh)| (n * d - sum_d - xh * sum_dx) * inv_std / n)
        .collect();
    Ok((Tensor::vector(dx)?, grad.mul(xhat)?, grad.clone()))
}

/// `layer_norm` on plain tensors.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    layer_norm_forward(x, gain, bias, eps).map(|(y, _, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Tensor<f64> {
        Tensor::vector(xs.to_vec()).unwrap()
    }

    #[test]
    fn identity_matvec() {
        let i2 = Tensor::<f64>::identity(2);
        let x = Tensor::from_rows(&[&[5.0], &[6.0]]).unwrap();
        assert_eq!(i2.matmul(&x).unwrap().data(), &[5.0, 6.0]);
    }

    #[test]
    fn matmul_two_by_two() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap();
        // 1*5+2*7, 1*6+2*8, 3*5+4*7, 3*6+4*8
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let err = a.matmul(&a).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::<f64>::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(&[0], vec![]).is_err());
    }

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let x = v(&[3.0; 5]);
        let y = layer_norm(&x, &v(&[1.0; 5]), &v(&[0.0; 5]), LN_EPS).unwrap();
        assert!(y.data().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn layer_norm_two_point() {
        let y = layer_norm(&v(&[1.0, 3.0]), &v(&[1.0, 1.0]), &v(&[0.0, 0.0]), 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn layer_norm_gain_and_bias_against_scalar_loop() {
        let x = [0.3, -1.2, 2.5, 0.7, -0.4, 1.1];
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let expect: Vec<f64> = x
            .iter()
            .map(|a| 2.0 * (a - mean) / (var + LN_EPS).sqrt() + 0.5)
            .collect();
        let y = layer_norm(&v(&x), &v(&[2.0; 6]), &v(&[0.5; 6]), LN_EPS).unwrap();
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((y.sum() / n - 0.5).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_rejects_mismatch() {
        assert!(layer_norm(&v(&[1.0, 2.0]), &v(&[1.0; 3]), &v(&[0.0; 2]), LN_EPS).is_err());
        assert!(layer_norm(&v(&[1.0]), &v(&[1.0]), &v(&[0.0]), LN_EPS).is_err());
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&[0.0f64, 0.0, 0.0]).unwrap();
        assert!(u.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));

        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        let p = softmax(&[-1.0f64, -2.0]).unwrap();
        assert!((p[0] - e1 / (e1 + e2)).abs() < 1e-15);
        assert!((p[0] - 0.73106).abs() < 1e-5 && (p[1] - 0.26894).abs() < 1e-5);

        let big = softmax(&[1000.0f64, 0.0]).unwrap();
        assert_eq!(big[0], 1.0);
        assert!(big[1] < 1e-300);

        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn elementwise_basics() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(0.0f64.tanh(), 0.0);
        assert_eq!(v(&[1.0, 2.0]).mul(&v(&[3.0, 4.0])).unwrap().data(), &[3.0, 8.0]);
        assert!(v(&[1.0, 2.0]).add(&v(&[1.0])).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0f64), 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
        assert!(sigmoid(-30.0f64) > 0.0);
    }
}
