use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{contract, DenseTensor, FoldingMap};

/// A weight matrix `W ∈ R^{M×N}` folded into an order-2d tensor and stored
/// as 2d TT cores.
///
/// Cores `0..d` carry the output modes `m_1..m_d`, cores `d..2d` the input
/// modes `n_1..n_d`; core `k` has shape `(r_k, s_k, r_{k+1})` with the
/// boundary ranks fixed to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TtWeight<T> {
    out_modes: Vec<usize>,
    in_modes: Vec<usize>,
    cores: Vec<DenseTensor<T>>,
}

impl<T: Scalar> TtWeight<T> {
    pub fn new(out_modes: Vec<usize>, in_modes: Vec<usize>, cores: Vec<DenseTensor<T>>) -> Result<Self> {
        let d = out_modes.len();
        if d == 0 || in_modes.len() != d {
            return Err(Error::InvalidArgument(format!(
                "TT weight needs equal, nonzero numbers of output and input modes (got {} and {})",
                d,
                in_modes.len()
            )));
        }
        if cores.len() != 2 * d {
            return Err(Error::shape("TtWeight", format!("expected {} cores, got {}", 2 * d, cores.len())));
        }
        let modes: Vec<usize> = out_modes.iter().chain(&in_modes).copied().collect();
        let mut prev_rank = 1;
        for (k, (core, &s)) in cores.iter().zip(&modes).enumerate() {
            let sh = core.shape();
            if sh.len() != 3 {
                return Err(Error::shape("TtWeight", format!("core {k} has order {}, expected 3", sh.len())));
            }
            if sh[0] != prev_rank {
                return Err(Error::shape(
                    "TtWeight",
                    format!("core {k} leading rank {} does not match previous trailing rank {prev_rank}", sh[0]),
                ));
            }
            if sh[1] != s {
                return Err(Error::shape("TtWeight", format!("core {k} mode size {} but expected {s}", sh[1])));
            }
            prev_rank = sh[2];
        }
        if prev_rank != 1 {
            return Err(Error::shape("TtWeight", format!("last core trailing rank is {prev_rank}, must be 1")));
        }
        Ok(TtWeight {
            out_modes,
            in_modes,
            cores,
        })
    }

    fn check_ranks(d: usize, ranks: &[usize]) -> Result<()> {
        if ranks.len() != 2 * d + 1 || ranks[0] != 1 || ranks[2 * d] != 1 || ranks.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "rank vector {ranks:?} must have {} positive entries with unit boundaries",
                2 * d + 1
            )));
        }
        Ok(())
    }

    /// Builds cores from `f(k, idx)` evaluated over every core index.
    pub fn from_fn(
        out_modes: Vec<usize>,
        in_modes: Vec<usize>,
        ranks: &[usize],
        mut f: impl FnMut(usize, &[usize]) -> T,
    ) -> Result<Self> {
        let d = out_modes.len();
        Self::check_ranks(d, ranks)?;
        if in_modes.len() != d {
            return Err(Error::InvalidArgument("output and input mode counts differ".into()));
        }
        let modes: Vec<usize> = out_modes.iter().chain(&in_modes).copied().collect();
        let cores = (0..2 * d)
            .map(|k| DenseTensor::from_fn(&[ranks[k], modes[k], ranks[k + 1]], |idx| f(k, idx)))
            .collect();
        Self::new(out_modes, in_modes, cores)
    }

    /// Uniform initialization in `[-σ, σ]` scaled so that reconstructed
    /// entries have variance `1/N`.
    pub fn random<R: Rng + ?Sized>(
        out_modes: Vec<usize>,
        in_modes: Vec<usize>,
        ranks: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let d = out_modes.len();
        Self::check_ranks(d, ranks)?;
        let n: f64 = in_modes.iter().product::<usize>() as f64;
        let paths: f64 = ranks[1..2 * d].iter().map(|&r| r as f64).product();
        let var = (n * paths).powf(-1.0 / (2 * d) as f64);
        let sigma = (3.0 * var).sqrt();
        Self::from_fn(out_modes, in_modes, ranks, |_, _| T::cast(rng.gen_range(-sigma..=sigma)))
    }

    pub fn d(&self) -> usize {
        self.out_modes.len()
    }

    pub fn out_modes(&self) -> &[usize] {
        &self.out_modes
    }

    pub fn in_modes(&self) -> &[usize] {
        &self.in_modes
    }

    /// `M = Π m_i`.
    pub fn rows(&self) -> usize {
        self.out_modes.iter().product()
    }

    /// `N = Π n_i`.
    pub fn cols(&self) -> usize {
        self.in_modes.iter().product()
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

    pub fn folding(&self) -> FoldingMap {
        FoldingMap::new(self.out_modes.clone(), self.in_modes.clone()).expect("validated modes")
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(DenseTensor::len).sum()
    }

    /// All core entries in core order.
    pub fn flatten(&self) -> Vec<T> {
        self.cores.iter().flat_map(|c| c.data().iter().copied()).collect()
    }

    /// The order-2d tensor `(m_1..m_d, n_1..n_d)`.
    pub fn reconstruct(&self) -> DenseTensor<T> {
        let mut acc = self.cores[0].clone();
        for core in &self.cores[1..] {
            let last = acc.order() - 1;
            acc = contract(&acc, core, last, 0).expect("validated ranks");
        }
        let mut shape = self.out_modes.clone();
        shape.extend(&self.in_modes);
        // leading and trailing unit ranks drop out
        acc.reshape(&shape).expect("unit boundary ranks")
    }

    /// The `M × N` matrix.
    pub fn as_matrix(&self) -> DenseTensor<T> {
        self.folding()
            .unfold_matrix(&self.reconstruct())
            .expect("consistent folding")
    }

    pub fn cast<U: Scalar>(&self) -> TtWeight<U> {
        TtWeight {
            out_modes: self.out_modes.clone(),
            in_modes: self.in_modes.clone(),
            cores: self.cores.iter().map(DenseTensor::cast).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_ones_reconstruct_to_ones() {
        let w = TtWeight::<f64>::from_fn(vec![2, 3], vec![2, 2], &[1, 1, 1, 1, 1], |_, _| 1.0).unwrap();
        let m = w.as_matrix();
        assert_eq!(m.shape(), &[6, 4]);
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_pair_is_matrix_product() {
        // d = 1: G1 (1,2,2), G2 (2,3,1)
        let g1 = DenseTensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g2 = DenseTensor::new(vec![2, 3, 1], vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.5]).unwrap();
        let w = TtWeight::new(vec![2], vec![3], vec![g1, g2]).unwrap();
        // A = [[1,2],[3,4]], B = [[1,0,-1],[2,1,0.5]]
        let expect = [5.0, 2.0, 0.0, 11.0, 4.0, -1.0];
        assert_eq!(w.as_matrix().data(), &expect);
    }

    #[test]
    fn invariants_are_checked() {
        let g1 = DenseTensor::<f64>::zeros(&[1, 2, 2]);
        let bad = DenseTensor::<f64>::zeros(&[3, 3, 1]);
        assert!(TtWeight::new(vec![2], vec![3], vec![g1.clone(), bad]).is_err());
        let bad_mode = DenseTensor::<f64>::zeros(&[2, 4, 1]);
        assert!(TtWeight::new(vec![2], vec![3], vec![g1, bad_mode]).is_err());
        assert!(TtWeight::<f64>::from_fn(vec![2], vec![3], &[2, 2, 1], |_, _| 0.0).is_err());
    }

    #[test]
    fn table_two_attention_layer_parameter_count() {
        let ranks = [1, 12, 12, 12, 12, 12, 1];
        let w = TtWeight::<f32>::from_fn(vec![12, 8, 8], vec![8, 8, 12], &ranks, |_, _| 0.0).unwrap();
        assert_eq!(w.param_count(), 4896);
        assert_eq!(w.flatten().len(), 4896);
        assert_eq!(w.rows() * w.cols(), 589_824);
    }

    #[test]
    fn rank_one_count_is_mode_sum() {
        let w = TtWeight::<f32>::from_fn(vec![3, 5], vec![2, 7], &[1; 5], |_, _| 0.0).unwrap();
        assert_eq!(w.param_count(), 3 + 5 + 2 + 7);
    }
}
