//! Uniform access to trainable parameters and their gradients.

use crate::scalar::Scalar;

/// One parameter tensor and its gradient buffer.
pub struct ParamRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: &'a mut [T],
    pub grad: &'a mut [T],
}

pub trait Parameters<T: Scalar> {
    /// Calls `f` once per parameter tensor, in a fixed order. Names are
    /// prefixed with `prefix`.
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>));

    fn zero_grads(&mut self) {
        self.visit_params("", &mut |p| p.grad.fill(T::zero()));
    }

    /// `θ ← θ − lr·θ'` for every parameter.
    fn sgd_step(&mut self, lr: T) {
        self.visit_params("", &mut |p| {
            for (v, g) in p.value.iter_mut().zip(p.grad.iter()) {
                *v -= lr * *g;
            }
        });
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |p| n += p.value.len());
        n
    }

    fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params("", &mut |p| names.push(p.name));
        names
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
