//! Column-wise nonlinearities and normalization with their backward passes.
//!
//! Matrices are `features × tokens`, row-major; every function here treats
//! each column independently.

use crate::params::{join, ParamRef, Parameters};
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// Softmax down each column, after subtracting the column max.
pub fn softmax_cols<T: Scalar>(x: &DenseTensor<T>) -> DenseTensor<T> {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let mut out = x.clone();
    let d = out.data_mut();
    for j in 0..c {
        let mut mx = T::neg_infinity();
        for i in 0..r {
            mx = mx.max(d[i * c + j]);
        }
        let mut sum = T::zero();
        for i in 0..r {
            let e = (d[i * c + j] - mx).exp();
            d[i * c + j] = e;
            sum += e;
        }
        for i in 0..r {
            d[i * c + j] = d[i * c + j] / sum;
        }
    }
    out
}

/// Given `y = softmax(x)` and `dy`, returns `dx = y ⊙ (dy − Σ y⊙dy)` per column.
pub fn softmax_cols_backward<T: Scalar>(y: &DenseTensor<T>, dy: &DenseTensor<T>) -> DenseTensor<T> {
    let (r, c) = (y.shape()[0], y.shape()[1]);
    let (yd, gd) = (y.data(), dy.data());
    let mut out = DenseTensor::zeros(&[r, c]);
    let od = out.data_mut();
    for j in 0..c {
        let mut dot = T::zero();
        for i in 0..r {
            dot += yd[i * c + j] * gd[i * c + j];
        }
        for i in 0..r {
            od[i * c + j] = yd[i * c + j] * (gd[i * c + j] - dot);
        }
    }
    out
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::cast(GELU_C);
    let a = T::cast(GELU_A);
    let half = T::cast(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::cast(GELU_C);
    let a = T::cast(GELU_A);
    let half = T::cast(0.5);
    let three = T::cast(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

pub fn tanh_grad_from_output<T: Scalar>(y: T) -> T {
    T::one() - y * y
}

/// Per-column statistics saved for the backward pass.
#[derive(Debug, Clone)]
pub struct LnCache<T> {
    xhat: DenseTensor<T>,
    inv_std: Vec<T>,
}

/// LayerNorm over the feature axis with learned gain and offset.
#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
    cache: Option<LnCache<T>>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        LayerNorm {
            gamma: vec![T::one(); width],
            beta: vec![T::zero(); width],
            dgamma: vec![T::zero(); width],
            dbeta: vec![T::zero(); width],
            cache: None,
        }
    }

    /// Normalized but not yet scaled or shifted.
    pub fn normalize(x: &DenseTensor<T>) -> (DenseTensor<T>, Vec<T>) {
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let xd = x.data();
        let mut xhat = DenseTensor::zeros(&[r, c]);
        let mut inv_std = Vec::with_capacity(c);
        let n = T::cast(r as f64);
        let eps = T::cast(LN_EPS);
        for j in 0..c {
            let mut mean = T::zero();
            for i in 0..r {
                mean += xd[i * c + j];
            }
            mean = mean / n;
            let mut var = T::zero();
            for i in 0..r {
                let dv = xd[i * c + j] - mean;
                var += dv * dv;
            }
            var = var / n;
            let is = T::one() / (var + eps).sqrt();
            for i in 0..r {
                xhat.data_mut()[i * c + j] = (xd[i * c + j] - mean) * is;
            }
            inv_std.push(is);
        }
        (xhat, inv_std)
    }

    pub fn forward(&mut self, x: &DenseTensor<T>, train: bool) -> DenseTensor<T> {
        let c = x.shape()[1];
        let (xhat, inv_std) = Self::normalize(x);
        let mut y = xhat.clone();
        for (i, row) in y.data_mut().chunks_exact_mut(c).enumerate() {
            for v in row {
                *v = self.gamma[i] * *v + self.beta[i];
            }
        }
        self.cache = train.then_some(LnCache { xhat, inv_std });
        y
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Accumulates `dgamma`, `dbeta` and returns `dx`. Panics without a
    /// training-mode forward; callers check [`has_cache`](Self::has_cache).
    pub fn backward(&mut self, dy: &DenseTensor<T>) -> DenseTensor<T> {
        let cache = self.cache.take().expect("layernorm backward without forward cache");
        let (r, c) = (dy.shape()[0], dy.shape()[1]);
        let (xh, g) = (cache.xhat.data(), dy.data());
        for i in 0..r {
            for j in 0..c {
                self.dgamma[i] += g[i * c + j] * xh[i * c + j];
                self.dbeta[i] += g[i * c + j];
            }
        }
        let n = T::cast(r as f64);
        let mut dx = DenseTensor::zeros(&[r, c]);
        for j in 0..c {
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for i in 0..r {
                let dxh = g[i * c + j] * self.gamma[i];
                m1 += dxh;
                m2 += dxh * xh[i * c + j];
            }
            m1 = m1 / n;
            m2 = m2 / n;
            for i in 0..r {
                let dxh = g[i * c + j] * self.gamma[i];
                dx.data_mut()[i * c + j] = cache.inv_std[j] * (dxh - m1 - xh[i * c + j] * m2);
            }
        }
        dx
    }
}

impl<T: Scalar> Parameters<T> for LayerNorm<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        let w = self.gamma.len();
        f(ParamRef {
            name: join(prefix, "gamma"),
            shape: vec![w],
            value: &mut self.gamma,
            grad: &mut self.dgamma,
        });
        f(ParamRef {
            name: join(prefix, "beta"),
            shape: vec![w],
            value: &mut self.beta,
            grad: &mut self.dbeta,
        });
    }
}

/// Mean cross-entropy of each column of `logits` against `labels`, and its
/// gradient `(softmax − onehot)/count`.
pub fn cross_entropy<T: Scalar>(logits: &DenseTensor<T>, labels: &[usize]) -> crate::Result<(f64, DenseTensor<T>)> {
    let (r, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != c {
        return Err(crate::Error::shape(
            "cross_entropy",
            format!("{c} logit columns but {} labels", labels.len()),
        ));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= r) {
        return Err(crate::Error::IndexOutOfRange { index: l, size: r });
    }
    let p = softmax_cols(logits);
    let mut loss = 0.0;
    let mut grad = p.clone();
    let scale = T::cast(1.0 / c as f64);
    let ld = logits.data();
    for (j, &l) in labels.iter().enumerate() {
        // log-sum-exp in f64 for a stable loss value
        let mx = (0..r).map(|i| ld[i * c + j].as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + (0..r).map(|i| (ld[i * c + j].as_f64() - mx).exp()).sum::<f64>().ln();
        loss += lse - ld[l * c + j].as_f64();
        grad.data_mut()[l * c + j] -= T::one();
    }
    for v in grad.data_mut() {
        *v *= scale;
    }
    Ok((loss / c as f64, grad))
}

/// Argmax of each column.
pub fn argmax_cols<T: Scalar>(x: &DenseTensor<T>) -> Vec<usize> {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    (0..c)
        .map(|j| {
            let mut best = 0;
            for i in 1..r {
                if x.data()[i * c + j] > x.data()[best * c + j] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DenseTensor<f64> {
        DenseTensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_equal_logits() {
        let p = softmax_cols(&col(&[3.0; 4]));
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let p = softmax_cols(&col(&[1000.0, 1000.0]));
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert_eq!(0.0f64.tanh(), 0.0);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layernorm_reference_values() {
        let mut ln = LayerNorm::<f64>::new(4);
        let y = ln.forward(&col(&[1.0, 2.0, 3.0, 4.0]), false);
        let want = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn layernorm_backward_matches_differences() {
        let x = DenseTensor::new(vec![3, 2], vec![0.3, -1.0, 2.0, 0.5, -0.7, 0.1]).unwrap();
        let dy = DenseTensor::new(vec![3, 2], vec![1.0, -0.5, 0.2, 0.3, -1.2, 0.8]).unwrap();
        let mut ln = LayerNorm::<f64>::new(3);
        ln.gamma = vec![1.5, -0.5, 0.8];
        ln.forward(&x, true);
        let dx = ln.backward(&dy);
        let probe = |x: &DenseTensor<f64>| {
            let mut l = ln.clone();
            let y = l.forward(x, false);
            y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in 0..6 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (probe(&xp) - probe(&xm)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let (l, _) = cross_entropy(&col(&[0.0, 0.0, 0.0]), &[1]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        let (l, _) = cross_entropy(&col(&[0.0, 1.0]), &[0]).unwrap();
        assert!((l - 1.3133).abs() < 1e-4);
        let (l, _) = cross_entropy(&col(&[1e4, 0.0]), &[0]).unwrap();
        assert!(l < 1e-12);
        assert!(cross_entropy(&col(&[0.0, 1.0]), &[2]).is_err());
    }
}
