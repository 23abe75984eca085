//! TTM-compressed embedding tables.
//!
//! The vocabulary axis is factored as `(v_1,…,v_d)` and the embedding axis
//! as `(e_1,…,e_d)`; core `k` has shape `(r_{k-1}, v_k, e_k, r_k)`. A token
//! id maps to its vocabulary multi-index by mixed-radix decomposition with
//! `j_1` the most significant digit.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::gemm_acc;
use crate::params::{join, ParamRef, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{DenseTensor, TtmTable};

/// Mixed-radix digits of `id`, most significant first.
pub fn decode(id: usize, radices: &[usize]) -> Vec<usize> {
    let mut digits = vec![0; radices.len()];
    let mut rem = id;
    for (d, &r) in digits.iter_mut().zip(radices).rev() {
        *d = rem % r;
        rem /= r;
    }
    digits
}

pub fn encode(digits: &[usize], radices: &[usize]) -> usize {
    digits.iter().zip(radices).fold(0, |acc, (&d, &r)| acc * r + d)
}

#[derive(Debug, Clone)]
pub struct TtmEmbedding<T> {
    table: TtmTable<T>,
    grads: Vec<DenseTensor<T>>,
    saved: Option<Vec<usize>>,
}

impl<T: Scalar> TtmEmbedding<T> {
    pub fn new(table: TtmTable<T>) -> Self {
        let grads = table.cores().iter().map(|c| DenseTensor::zeros(c.shape())).collect();
        TtmEmbedding {
            table,
            grads,
            saved: None,
        }
    }

    /// Random table whose reconstructed entries have variance `1/E`.
    pub fn random<R: Rng + ?Sized>(
        vocab_modes: Vec<usize>,
        embed_modes: Vec<usize>,
        ranks: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let e: usize = embed_modes.iter().product();
        Ok(Self::new(TtmTable::random(vocab_modes, embed_modes, ranks, 1.0 / e as f64, rng)?))
    }

    pub fn table(&self) -> &TtmTable<T> {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut TtmTable<T> {
        &mut self.table
    }

    pub fn grads(&self) -> &[DenseTensor<T>] {
        &self.grads
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.table.cols()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        let v = self.vocab_size();
        match ids.iter().find(|&&id| id >= v) {
            Some(&id) => Err(Error::IndexOutOfRange { index: id, size: v }),
            None => Ok(()),
        }
    }

    /// `F_k[:, j, :, :]` as an `r_{k-1} × (e_k·r_k)` matrix.
    fn slice(&self, k: usize, j: usize) -> Vec<T> {
        let core = &self.table.cores()[k];
        let (ra, v, e, rb) = (core.shape()[0], core.shape()[1], core.shape()[2], core.shape()[3]);
        let w = e * rb;
        let mut out = Vec::with_capacity(ra * w);
        for a in 0..ra {
            let start = (a * v + j) * w;
            out.extend_from_slice(&core.data()[start..start + w]);
        }
        out
    }

    /// Prefix products for one token: entry `k` has shape
    /// `(e_1⋯e_{k+1}) × r_{k+1}`.
    fn prefixes(&self, digits: &[usize]) -> Vec<Vec<T>> {
        let d = self.table.d();
        let mut out: Vec<Vec<T>> = Vec::with_capacity(d);
        for (k, &j) in digits.iter().enumerate() {
            let s = self.slice(k, j);
            let ranks_a = self.table.cores()[k].shape()[0];
            match out.last() {
                None => out.push(s),
                Some(prev) => {
                    let p = prev.len() / ranks_a;
                    let w = s.len() / ranks_a;
                    let mut next = vec![T::zero(); p * w];
                    gemm_acc(prev, &s, &mut next, p, ranks_a, w);
                    out.push(next);
                }
            }
        }
        out
    }

    /// Embedding columns for `ids`, as an `E × T` matrix.
    pub fn lookup(&self, ids: &[usize]) -> Result<DenseTensor<T>> {
        self.check_ids(ids)?;
        let e = self.embed_dim();
        let t = ids.len();
        if t == 0 {
            return Err(Error::InvalidArgument("lookup needs at least one token".into()));
        }
        let mut out = DenseTensor::zeros(&[e, t]);
        let radices = self.table.row_modes().to_vec();
        for (col, &id) in ids.iter().enumerate() {
            let pre = self.prefixes(&decode(id, &radices));
            let v = pre.last().expect("d ≥ 1");
            let data = out.data_mut();
            for (row, &val) in v.iter().enumerate() {
                data[row * t + col] = val;
            }
        }
        Ok(out)
    }

    /// Like [`lookup`](Self::lookup) and additionally remembers `ids` for
    /// [`backward`](Self::backward).
    pub fn lookup_train(&mut self, ids: &[usize]) -> Result<DenseTensor<T>> {
        let out = self.lookup(ids)?;
        self.saved = Some(ids.to_vec());
        Ok(out)
    }

    pub fn has_cache(&self) -> bool {
        self.saved.is_some()
    }

    fn table_grads_into(&self, ids: &[usize], dz: &DenseTensor<T>, grads: &mut [DenseTensor<T>]) -> Result<()> {
        let e = self.embed_dim();
        let t = ids.len();
        if dz.shape() != [e, t] {
            return Err(Error::shape("backward_table", format!("expected {e}×{t} gradient, got {:?}", dz.shape())));
        }
        let d = self.table.d();
        let radices = self.table.row_modes().to_vec();
        let emodes = self.table.col_modes().to_vec();
        let ranks = self.table.ranks();
        for (col, &id) in ids.iter().enumerate() {
            let digits = decode(id, &radices);
            let pre = self.prefixes(&digits);
            let g: Vec<T> = (0..e).map(|row| dz.data()[row * t + col]).collect();
            // suffix[k]: product of cores k+1..d as r_{k+1} × (e_{k+2}⋯e_d)
            let mut suffix: Vec<Vec<T>> = vec![Vec::new(); d];
            suffix[d - 1] = vec![T::one()];
            for k in (0..d - 1).rev() {
                let s = self.slice(k + 1, digits[k + 1]);
                let (ra, rb) = (ranks[k + 1], ranks[k + 2]);
                let w = emodes[k + 1];
                let q = suffix[k + 1].len() / rb;
                let mut next = vec![T::zero(); ra * w * q];
                gemm_acc(&s, &suffix[k + 1], &mut next, ra * w, rb, q);
                suffix[k] = next;
            }
            for k in 0..d {
                let (ra, ek, rb) = (ranks[k], emodes[k], ranks[k + 1]);
                let p: usize = emodes[..k].iter().product();
                let q: usize = emodes[k + 1..].iter().product();
                // tmp = Pᵀ·g  (r_{k-1} × e_k·q)
                let mut tmp = vec![T::zero(); ra * ek * q];
                if k == 0 {
                    tmp.copy_from_slice(&g);
                } else {
                    let prev = &pre[k - 1];
                    for pi in 0..p {
                        let grow = &g[pi * ek * q..(pi + 1) * ek * q];
                        for a in 0..ra {
                            let pa = prev[pi * ra + a];
                            for (o, &gv) in tmp[a * ek * q..(a + 1) * ek * q].iter_mut().zip(grow) {
                                *o += pa * gv;
                            }
                        }
                    }
                }
                // dF[a, j, e, b] += Σ_q tmp[a, e, q]·S[b, q]
                let gk = grads[k].data_mut();
                let v = radices[k];
                let j = digits[k];
                let s = &suffix[k];
                for a in 0..ra {
                    for ei in 0..ek {
                        let trow = &tmp[(a * ek + ei) * q..(a * ek + ei + 1) * q];
                        let base = ((a * v + j) * ek + ei) * rb;
                        for b in 0..rb {
                            let mut acc = T::zero();
                            for (&tv, &sv) in trow.iter().zip(&s[b * q..(b + 1) * q]) {
                                acc += tv * sv;
                            }
                            gk[base + b] += acc;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Core gradients of `⟨dZ, lookup(ids)⟩` for the ids of the last
    /// training lookup. Only slices touched by those ids are nonzero.
    pub fn backward_table(&self, dz: &DenseTensor<T>) -> Result<Vec<DenseTensor<T>>> {
        let ids = self.saved.as_ref().ok_or(Error::MissingCache("backward_table"))?;
        let mut grads: Vec<DenseTensor<T>> =
            self.table.cores().iter().map(|c| DenseTensor::zeros(c.shape())).collect();
        self.table_grads_into(ids, dz, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates the table gradient into the layer's buffers and drops the
    /// saved ids.
    pub fn backward(&mut self, dz: &DenseTensor<T>) -> Result<()> {
        let ids = self.saved.take().ok_or(Error::MissingCache("backward"))?;
        let mut grads = std::mem::take(&mut self.grads);
        let r = self.table_grads_into(&ids, dz, &mut grads);
        self.grads = grads;
        r
    }
}

impl<T: Scalar> Parameters<T> for TtmEmbedding<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        for (k, (c, g)) in self.table.cores_mut().iter_mut().zip(self.grads.iter_mut()).enumerate() {
            let shape = c.shape().to_vec();
            f(ParamRef {
                name: join(prefix, &format!("core{k}")),
                shape,
                value: c.data_mut(),
                grad: g.data_mut(),
            });
        }
    }
}

/// `E_tok(ids) + E_pos(positions) + E_seg(segments)`.
pub fn embed_sum<T: Scalar>(
    tok: &mut TtmEmbedding<T>,
    pos: &mut TtmEmbedding<T>,
    seg: &mut TtmEmbedding<T>,
    ids: &[usize],
    positions: &[usize],
    segments: &[usize],
    train: bool,
) -> Result<DenseTensor<T>> {
    if ids.len() != positions.len() || ids.len() != segments.len() {
        return Err(Error::shape(
            "embed_sum",
            format!(
                "token, position and segment streams have lengths {}, {}, {}",
                ids.len(),
                positions.len(),
                segments.len()
            ),
        ));
    }
    if tok.embed_dim() != pos.embed_dim() || tok.embed_dim() != seg.embed_dim() {
        return Err(Error::shape("embed_sum", "tables have different embedding widths"));
    }
    let (mut z, p, s) = if train {
        (tok.lookup_train(ids)?, pos.lookup_train(positions)?, seg.lookup_train(segments)?)
    } else {
        (tok.lookup(ids)?, pos.lookup(positions)?, seg.lookup(segments)?)
    };
    for ((o, &a), &b) in z.data_mut().iter_mut().zip(p.data()).zip(s.data()) {
        *o += a + b;
    }
    Ok(z)
}

/// Distributes `dz` unchanged to the three tables.
pub fn embed_sum_backward<T: Scalar>(
    tok: &mut TtmEmbedding<T>,
    pos: &mut TtmEmbedding<T>,
    seg: &mut TtmEmbedding<T>,
    dz: &DenseTensor<T>,
) -> Result<()> {
    tok.backward(dz)?;
    pos.backward(dz)?;
    seg.backward(dz)
}
