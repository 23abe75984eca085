use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{contract, DenseTensor};

/// A matrix stored as d order-4 TTM cores `(r_{k-1}, m_k, n_k, r_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TtmTable<T> {
    row_modes: Vec<usize>,
    col_modes: Vec<usize>,
    cores: Vec<DenseTensor<T>>,
}

impl<T: Scalar> TtmTable<T> {
    pub fn new(row_modes: Vec<usize>, col_modes: Vec<usize>, cores: Vec<DenseTensor<T>>) -> Result<Self> {
        let d = row_modes.len();
        if d == 0 || col_modes.len() != d || cores.len() != d {
            return Err(Error::InvalidArgument(format!(
                "TTM table needs d row modes, d column modes and d cores (got {}, {}, {})",
                d,
                col_modes.len(),
                cores.len()
            )));
        }
        let mut prev = 1;
        for (k, core) in cores.iter().enumerate() {
            let sh = core.shape();
            if sh.len() != 4 {
                return Err(Error::shape("TtmTable", format!("core {k} has order {}, expected 4", sh.len())));
            }
            if sh[0] != prev || sh[1] != row_modes[k] || sh[2] != col_modes[k] {
                return Err(Error::shape(
                    "TtmTable",
                    format!(
                        "core {k} has shape {sh:?}, expected ({prev}, {}, {}, _)",
                        row_modes[k], col_modes[k]
                    ),
                ));
            }
            prev = sh[3];
        }
        if prev != 1 {
            return Err(Error::shape("TtmTable", format!("last core trailing rank is {prev}, must be 1")));
        }
        Ok(TtmTable {
            row_modes,
            col_modes,
            cores,
        })
    }

    pub fn from_fn(
        row_modes: Vec<usize>,
        col_modes: Vec<usize>,
        ranks: &[usize],
        mut f: impl FnMut(usize, &[usize]) -> T,
    ) -> Result<Self> {
        let d = row_modes.len();
        if ranks.len() != d + 1 || ranks[0] != 1 || ranks[d] != 1 || ranks.contains(&0) || col_modes.len() != d {
            return Err(Error::InvalidArgument(format!(
                "TTM rank vector {ranks:?} must have {} positive entries with unit boundaries",
                d + 1
            )));
        }
        let cores = (0..d)
            .map(|k| {
                DenseTensor::from_fn(&[ranks[k], row_modes[k], col_modes[k], ranks[k + 1]], |idx| f(k, idx))
            })
            .collect();
        Self::new(row_modes, col_modes, cores)
    }

    /// Uniform initialization with reconstructed entry variance `target_var`.
    pub fn random<R: Rng + ?Sized>(
        row_modes: Vec<usize>,
        col_modes: Vec<usize>,
        ranks: &[usize],
        target_var: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let d = row_modes.len();
        let paths: f64 = ranks.iter().map(|&r| r as f64).product();
        let var = (target_var / paths).powf(1.0 / d as f64);
        let sigma = (3.0 * var).sqrt();
        Self::from_fn(row_modes, col_modes, ranks, |_, _| T::cast(rng.gen_range(-sigma..=sigma)))
    }

    pub fn d(&self) -> usize {
        self.row_modes.len()
    }

    pub fn row_modes(&self) -> &[usize] {
        &self.row_modes
    }

    pub fn col_modes(&self) -> &[usize] {
        &self.col_modes
    }

    pub fn rows(&self) -> usize {
        self.row_modes.iter().product()
    }

    pub fn cols(&self) -> usize {
        self.col_modes.iter().product()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape()[0]).collect();
        r.push(1);
        r
    }

    pub fn cores(&self) -> &[DenseTensor<T>] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [DenseTensor<T>] {
        &mut self.cores
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(DenseTensor::len).sum()
    }

    /// The `M × N` matrix with entry `(i, j) = Π_k F_k[i_k, j_k]`.
    pub fn reconstruct(&self) -> DenseTensor<T> {
        let d = self.d();
        let mut acc = self.cores[0].clone();
        for core in &self.cores[1..] {
            let last = acc.order() - 1;
            acc = contract(&acc, core, last, 0).expect("validated ranks");
        }
        // acc: (1, m1, n1, m2, n2, ..., md, nd, 1)
        let interleaved: Vec<usize> = acc.shape()[1..acc.order() - 1].to_vec();
        let acc = acc.reshape(&interleaved).expect("unit boundary ranks");
        let perm: Vec<usize> = (0..d).map(|k| 2 * k).chain((0..d).map(|k| 2 * k + 1)).collect();
        acc.permute(&perm)
            .expect("valid permutation")
            .reshape(&[self.rows(), self.cols()])
            .expect("row/column products")
    }

    pub fn cast<U: Scalar>(&self) -> TtmTable<U> {
        TtmTable {
            row_modes: self.row_modes.clone(),
            col_modes: self.col_modes.clone(),
            cores: self.cores.iter().map(DenseTensor::cast).collect(),
        }
    }
}
