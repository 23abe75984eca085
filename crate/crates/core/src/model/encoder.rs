use std::path::Path;

use rand::Rng;

use super::nn::{gelu, gelu_grad, softmax_cols, softmax_cols_backward, LayerNorm};
use crate::error::{Error, Result};
use crate::params::{join, ParamRef, Parameters};
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;
use crate::tt_linear::{Mode, TtLinear};

#[derive(Debug)]
struct BlockCache<T> {
    q: DenseTensor<T>,
    k: DenseTensor<T>,
    v: DenseTensor<T>,
    /// Attention weights per head, `keys × queries`, columns sum to 1.
    probs: Vec<DenseTensor<T>>,
    f1: DenseTensor<T>,
}

/// Post-norm encoder block: self-attention and a feed-forward pair, each
/// followed by a residual add and LayerNorm.
#[derive(Debug)]
pub struct EncoderBlock<T> {
    pub q: TtLinear<T>,
    pub k: TtLinear<T>,
    pub v: TtLinear<T>,
    pub o: TtLinear<T>,
    pub ffn1: TtLinear<T>,
    pub ffn2: TtLinear<T>,
    pub ln1: LayerNorm<T>,
    pub ln2: LayerNorm<T>,
    heads: usize,
    cache: Option<BlockCache<T>>,
}

fn add<T: Scalar>(a: &DenseTensor<T>, b: &DenseTensor<T>) -> DenseTensor<T> {
    let mut out = a.clone();
    for (x, &y) in out.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    out
}

fn add_into<T: Scalar>(acc: &mut DenseTensor<T>, b: &DenseTensor<T>) {
    for (x, &y) in acc.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

impl<T: Scalar> EncoderBlock<T> {
    pub fn random<R: Rng + ?Sized>(
        out_modes: &[usize],
        in_modes: &[usize],
        ranks: &[usize],
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden: usize = out_modes.iter().product();
        if hidden != in_modes.iter().product::<usize>() {
            return Err(Error::InvalidArgument("encoder layers must be square".into()));
        }
        if heads == 0 || !hidden.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("{heads} heads do not divide hidden width {hidden}")));
        }
        let mut lin = || TtLinear::random(out_modes.to_vec(), in_modes.to_vec(), ranks, true, rng);
        Ok(EncoderBlock {
            q: lin()?,
            k: lin()?,
            v: lin()?,
            o: lin()?,
            ffn1: lin()?,
            ffn2: lin()?,
            ln1: LayerNorm::new(hidden),
            ln2: LayerNorm::new(hidden),
            heads,
            cache: None,
        })
    }

    pub fn hidden(&self) -> usize {
        self.q.rows()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn linears_mut(&mut self) -> [&mut TtLinear<T>; 6] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o, &mut self.ffn1, &mut self.ffn2]
    }

    pub fn linears(&self) -> [&TtLinear<T>; 6] {
        [&self.q, &self.k, &self.v, &self.o, &self.ffn1, &self.ffn2]
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for l in self.linears_mut() {
            l.set_mode(mode);
        }
    }

    pub fn set_spill(&mut self, dir: Option<&Path>, prefix: &str) {
        for (name, l) in ["q", "k", "v", "o", "ffn1", "ffn2"].iter().zip(self.linears_mut()) {
            l.set_spill(dir.map(|d| (d.to_path_buf(), format!("{prefix}.{name}"))));
        }
    }

    /// Self-attention on `hidden × T` input, through the output projection.
    fn attention(&mut self, q: &DenseTensor<T>, k: &DenseTensor<T>, v: &DenseTensor<T>) -> (DenseTensor<T>, Vec<DenseTensor<T>>) {
        let (h, t) = (q.shape()[0], q.shape()[1]);
        let dh = h / self.heads;
        let scale = T::cast(1.0 / (dh as f64).sqrt());
        let mut out = DenseTensor::zeros(&[h, t]);
        let mut probs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let rows = head * dh..(head + 1) * dh;
            // scores[j, i] = k_j · q_i
            let mut s = DenseTensor::zeros(&[t, t]);
            for r in rows.clone() {
                let kr = &k.data()[r * t..(r + 1) * t];
                let qr = &q.data()[r * t..(r + 1) * t];
                for (j, &kv) in kr.iter().enumerate() {
                    for (sv, &qv) in s.data_mut()[j * t..(j + 1) * t].iter_mut().zip(qr) {
                        *sv += kv * qv;
                    }
                }
            }
            let s = s.map(|x| x * scale);
            let p = softmax_cols(&s);
            for r in rows {
                let vr = &v.data()[r * t..(r + 1) * t];
                let orow = &mut out.data_mut()[r * t..(r + 1) * t];
                for (j, &vv) in vr.iter().enumerate() {
                    for (o, &pv) in orow.iter_mut().zip(&p.data()[j * t..(j + 1) * t]) {
                        *o += vv * pv;
                    }
                }
            }
            probs.push(p);
        }
        (out, probs)
    }

    pub fn forward(&mut self, x: &DenseTensor<T>, train: bool) -> Result<DenseTensor<T>> {
        if x.order() != 2 || x.shape()[0] != self.hidden() {
            return Err(Error::shape("EncoderBlock::forward", format!("expected {}×T input, got {:?}", self.hidden(), x.shape())));
        }
        let q = self.q.forward(x, train)?;
        let k = self.k.forward(x, train)?;
        let v = self.v.forward(x, train)?;
        let (attn, probs) = self.attention(&q, &k, &v);
        let o = self.o.forward(&attn, train)?;
        let y1 = self.ln1.forward(&add(&o, x), train);
        let f1 = self.ffn1.forward(&y1, train)?;
        let g = f1.map(gelu);
        let f2 = self.ffn2.forward(&g, train)?;
        let y2 = self.ln2.forward(&add(&f2, &y1), train);
        self.cache = train.then_some(BlockCache { q, k, v, probs, f1 });
        Ok(y2)
    }

    pub fn backward(&mut self, dy: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let cache = self.cache.take().ok_or(Error::MissingCache("EncoderBlock::backward"))?;
        let dr2 = self.ln2.backward(dy);
        let mut dy1 = dr2.clone();
        let dg = self.ffn2.backward(&dr2)?;
        let mut df1 = dg;
        for (g, &f) in df1.data_mut().iter_mut().zip(cache.f1.data()) {
            *g *= gelu_grad(f);
        }
        add_into(&mut dy1, &self.ffn1.backward(&df1)?);
        let dr1 = self.ln1.backward(&dy1);
        let mut dx = dr1.clone();
        let dattn = self.o.backward(&dr1)?;

        let (h, t) = (dattn.shape()[0], dattn.shape()[1]);
        let dh = h / self.heads;
        let scale = T::cast(1.0 / (dh as f64).sqrt());
        let mut dq = DenseTensor::zeros(&[h, t]);
        let mut dk = DenseTensor::zeros(&[h, t]);
        let mut dv = DenseTensor::zeros(&[h, t]);
        for (head, p) in cache.probs.iter().enumerate() {
            let rows = head * dh..(head + 1) * dh;
            let mut dp = DenseTensor::zeros(&[t, t]);
            for r in rows.clone() {
                let gr = &dattn.data()[r * t..(r + 1) * t];
                let vr = &cache.v.data()[r * t..(r + 1) * t];
                for j in 0..t {
                    let prow = &p.data()[j * t..(j + 1) * t];
                    let mut acc = T::zero();
                    for (&g, &pv) in gr.iter().zip(prow) {
                        acc += g * pv;
                    }
                    dv.data_mut()[r * t + j] = acc;
                    for (d, &g) in dp.data_mut()[j * t..(j + 1) * t].iter_mut().zip(gr) {
                        *d += vr[j] * g;
                    }
                }
            }
            let ds = softmax_cols_backward(p, &dp).map(|x| x * scale);
            for r in rows {
                let kr = &cache.k.data()[r * t..(r + 1) * t];
                let qr = &cache.q.data()[r * t..(r + 1) * t];
                for j in 0..t {
                    let srow = &ds.data()[j * t..(j + 1) * t];
                    let mut acc = T::zero();
                    for (&sv, &qv) in srow.iter().zip(qr) {
                        acc += sv * qv;
                    }
                    dk.data_mut()[r * t + j] = acc;
                    for (d, &sv) in dq.data_mut()[r * t..(r + 1) * t].iter_mut().zip(srow) {
                        *d += kr[j] * sv;
                    }
                }
            }
        }
        add_into(&mut dx, &self.q.backward(&dq)?);
        add_into(&mut dx, &self.k.backward(&dk)?);
        add_into(&mut dx, &self.v.backward(&dv)?);
        Ok(dx)
    }
}

impl<T: Scalar> Parameters<T> for EncoderBlock<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.q.visit_params(&join(prefix, "q"), f);
        self.k.visit_params(&join(prefix, "k"), f);
        self.v.visit_params(&join(prefix, "v"), f);
        self.o.visit_params(&join(prefix, "o"), f);
        self.ffn1.visit_params(&join(prefix, "ffn1"), f);
        self.ffn2.visit_params(&join(prefix, "ffn2"), f);
        self.ln1.visit_params(&join(prefix, "ln1"), f);
        self.ln2.visit_params(&join(prefix, "ln2"), f);
    }
}
