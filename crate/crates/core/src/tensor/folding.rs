//! Row-major (last index fastest) mapping between flat indices and
//! multi-indices over a mode factorization.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

/// Factorization of an `M × N` matrix into row modes and column modes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldingMap {
    row_modes: Vec<usize>,
    col_modes: Vec<usize>,
}

impl FoldingMap {
    pub fn new(row_modes: Vec<usize>, col_modes: Vec<usize>) -> Result<Self> {
        if row_modes.is_empty() || col_modes.is_empty() {
            return Err(Error::InvalidArgument("folding needs at least one mode per side".into()));
        }
        if row_modes.iter().chain(&col_modes).any(|&m| m == 0) {
            return Err(Error::InvalidArgument("mode sizes must be positive".into()));
        }
        Ok(FoldingMap { row_modes, col_modes })
    }

    /// Checks that the modes multiply to the declared matrix size.
    pub fn for_matrix(rows: usize, cols: usize, row_modes: Vec<usize>, col_modes: Vec<usize>) -> Result<Self> {
        let map = FoldingMap::new(row_modes, col_modes)?;
        if map.rows() != rows || map.cols() != cols {
            return Err(Error::shape(
                "FoldingMap",
                format!(
                    "modes {:?}×{:?} give {}×{}, expected {rows}×{cols}",
                    map.row_modes,
                    map.col_modes,
                    map.rows(),
                    map.cols()
                ),
            ));
        }
        Ok(map)
    }

    pub fn rows(&self) -> usize {
        self.row_modes.iter().product()
    }

    pub fn cols(&self) -> usize {
        self.col_modes.iter().product()
    }

    pub fn row_modes(&self) -> &[usize] {
        &self.row_modes
    }

    pub fn col_modes(&self) -> &[usize] {
        &self.col_modes
    }

    /// Shape of the folded order-2d tensor (row modes then column modes).
    pub fn tensor_shape(&self) -> Vec<usize> {
        self.row_modes.iter().chain(&self.col_modes).copied().collect()
    }

    /// Folds an `M × N` row-major matrix into the order-2d tensor.
    pub fn fold_matrix<T: Scalar>(&self, m: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        if m.shape() != [self.rows(), self.cols()] {
            return Err(Error::shape("fold_matrix", format!("expected {}×{}, got {:?}", self.rows(), self.cols(), m.shape())));
        }
        m.clone().reshape(&self.tensor_shape())
    }

    /// Inverse of [`fold_matrix`](Self::fold_matrix).
    pub fn unfold_matrix<T: Scalar>(&self, t: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        if t.shape() != self.tensor_shape().as_slice() {
            return Err(Error::shape("unfold_matrix", format!("expected {:?}, got {:?}", self.tensor_shape(), t.shape())));
        }
        t.clone().reshape(&[self.rows(), self.cols()])
    }
}

pub fn multi_index(mut flat: usize, modes: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; modes.len()];
    for k in (0..modes.len()).rev() {
        idx[k] = flat % modes[k];
        flat /= modes[k];
    }
    idx
}

pub fn flat_index(idx: &[usize], modes: &[usize]) -> usize {
    idx.iter().zip(modes).fold(0, |acc, (&i, &n)| acc * n + i)
}

pub fn fold<T: Scalar>(v: &[T], modes: &[usize]) -> Result<DenseTensor<T>> {
    let n: usize = modes.iter().product();
    if v.len() != n {
        return Err(Error::shape("fold", format!("vector of length {} cannot fold into {modes:?}", v.len())));
    }
    DenseTensor::new(modes.to_vec(), v.to_vec())
}

pub fn unfold<T: Scalar>(t: &DenseTensor<T>) -> Vec<T> {
    t.data().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicographic_convention() {
        let v: Vec<f64> = (0..6).map(|x| x as f64).collect();
        let t = fold(&v, &[2, 3]).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(t.get(&[i, j]), (3 * i + j) as f64);
            }
        }
    }

    #[test]
    fn enumerated_mapping_three_by_two() {
        let v: Vec<f64> = (0..6).map(|x| x as f64).collect();
        let t = fold(&v, &[3, 2]).unwrap();
        assert_eq!(t.get(&[2, 1]), 5.0);
        assert_eq!(multi_index(5, &[3, 2]), vec![2, 1]);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(fold(&[1.0f32; 5], &[2, 3]).is_err());
    }

    #[test]
    fn matrix_dims_must_match_modes() {
        assert!(FoldingMap::for_matrix(6, 4, vec![2, 3], vec![2, 2]).is_ok());
        assert!(FoldingMap::for_matrix(6, 5, vec![2, 3], vec![2, 2]).is_err());
    }

    #[test]
    fn multi_index_is_bijective() {
        let modes = [3, 1, 4, 2];
        let n: usize = modes.iter().product();
        for flat in 0..n {
            assert_eq!(flat_index(&multi_index(flat, &modes), &modes), flat);
        }
    }
}
