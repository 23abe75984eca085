use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{gemm_acc, matmul_nt, matmul_tn};
use crate::params::{join, ParamRef, Parameters};
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

/// Uncompressed `Y = W·X + b`, used for the task heads.
#[derive(Debug, Clone)]
pub struct DenseLinear<T> {
    pub weight: DenseTensor<T>,
    pub bias: Vec<T>,
    pub dweight: DenseTensor<T>,
    pub dbias: Vec<T>,
    cache: Option<DenseTensor<T>>,
}

impl<T: Scalar> DenseLinear<T> {
    pub fn new(weight: DenseTensor<T>, bias: Vec<T>) -> Result<Self> {
        if weight.order() != 2 || weight.shape()[0] != bias.len() {
            return Err(Error::shape("DenseLinear::new", format!("weight {:?} with bias {}", weight.shape(), bias.len())));
        }
        let dweight = DenseTensor::zeros(weight.shape());
        let dbias = vec![T::zero(); bias.len()];
        Ok(DenseLinear {
            weight,
            bias,
            dweight,
            dbias,
            cache: None,
        })
    }

    /// Uniform in `±1/√in`, zero bias.
    pub fn random<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Self {
        let a = 1.0 / (inp as f64).sqrt();
        let w = DenseTensor::from_fn(&[out, inp], |_| T::cast(rng.gen_range(-a..=a)));
        Self::new(w, vec![T::zero(); out]).expect("consistent shapes")
    }

    pub fn rows(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&mut self, x: &DenseTensor<T>, train: bool) -> Result<DenseTensor<T>> {
        let (n, k) = match x.shape() {
            [n, k] if *n == self.cols() => (*n, *k),
            s => return Err(Error::shape("DenseLinear::forward", format!("expected {}×K input, got {s:?}", self.cols()))),
        };
        let m = self.rows();
        let mut y = vec![T::zero(); m * k];
        gemm_acc(self.weight.data(), x.data(), &mut y, m, n, k);
        for (row, &b) in y.chunks_exact_mut(k).zip(&self.bias) {
            for v in row {
                *v += b;
            }
        }
        self.cache = train.then(|| x.clone());
        DenseTensor::new(vec![m, k], y)
    }

    pub fn backward(&mut self, dy: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let x = self.cache.take().ok_or(Error::MissingCache("DenseLinear::backward"))?;
        let (m, n, k) = (self.rows(), self.cols(), x.shape()[1]);
        if dy.shape() != [m, k] {
            return Err(Error::shape("DenseLinear::backward", format!("expected {m}×{k}, got {:?}", dy.shape())));
        }
        let dw = matmul_nt(dy.data(), x.data(), m, k, n);
        for (a, b) in self.dweight.data_mut().iter_mut().zip(&dw) {
            *a += *b;
        }
        for (i, db) in self.dbias.iter_mut().enumerate() {
            for &g in &dy.data()[i * k..(i + 1) * k] {
                *db += g;
            }
        }
        DenseTensor::new(vec![n, k], matmul_tn(self.weight.data(), dy.data(), m, n, k))
    }
}

impl<T: Scalar> Parameters<T> for DenseLinear<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        let shape = self.weight.shape().to_vec();
        f(ParamRef {
            name: join(prefix, "weight"),
            shape,
            value: self.weight.data_mut(),
            grad: self.dweight.data_mut(),
        });
        let n = self.bias.len();
        f(ParamRef {
            name: join(prefix, "bias"),
            shape: vec![n],
            value: &mut self.bias,
            grad: &mut self.dbias,
        });
    }
}
