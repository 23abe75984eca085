use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// An order-k real array stored row-major (last index fastest).
///
/// The empty shape denotes a scalar holding a single element.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if let Some(k) = shape.iter().position(|&s| s == 0) {
            return Err(Error::shape("DenseTensor::new", format!("mode {k} has size 0")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(
                "DenseTensor::new",
                format!("shape {shape:?} needs {len} elements, got {}", data.len()),
            ));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let len: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        DenseTensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: T) -> Self {
        DenseTensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for k in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.shape[k + 1];
        }
        strides
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Reorders modes: output mode `k` is input mode `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let order = self.order();
        let mut seen = vec![false; order];
        if perm.len() != order || perm.iter().any(|&p| p >= order || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument(format!(
                "{perm:?} is not a permutation of {order} modes"
            )));
        }
        let strides = self.strides();
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        Ok(DenseTensor::from_fn(&new_shape, |idx| {
            let o: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            self.data[o]
        }))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn cast<U: Scalar>(&self) -> DenseTensor<U> {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::cast(v.as_f64())).collect(),
        }
    }
}

/// Contracts mode `s` of `a` with mode `t` of `b`.
///
/// The result carries `a`'s remaining modes followed by `b`'s remaining
/// modes; each entry is the sum over the shared index.
pub fn contract<T: Scalar>(
    a: &DenseTensor<T>,
    b: &DenseTensor<T>,
    s: usize,
    t: usize,
) -> Result<DenseTensor<T>> {
    if s >= a.order() || t >= b.order() {
        return Err(Error::InvalidArgument(format!(
            "contract: mode {s} of order-{} and mode {t} of order-{}",
            a.order(),
            b.order()
        )));
    }
    if a.shape[s] != b.shape[t] {
        return Err(Error::shape(
            "contract",
            format!(
                "mode {s} of A has size {} but mode {t} of B has size {}",
                a.shape[s], b.shape[t]
            ),
        ));
    }
    let shared = a.shape[s];
    let mut perm_a: Vec<usize> = (0..a.order()).filter(|&k| k != s).collect();
    perm_a.push(s);
    let mut perm_b = vec![t];
    perm_b.extend((0..b.order()).filter(|&k| k != t));
    let a2 = if s + 1 == a.order() { a.clone() } else { a.permute(&perm_a)? };
    let b2 = if t == 0 { b.clone() } else { b.permute(&perm_b)? };
    let rows = a.len() / shared;
    let cols = b.len() / shared;
    let data = linalg::matmul(&a2.data, &b2.data, rows, shared, cols);
    let shape: Vec<usize> = perm_a[..perm_a.len() - 1]
        .iter()
        .map(|&k| a.shape[k])
        .chain(perm_b[1..].iter().map(|&k| b.shape[k]))
        .collect();
    DenseTensor::new(shape, data)
}
