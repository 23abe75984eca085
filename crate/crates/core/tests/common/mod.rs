#![allow(dead_code)]

use std::collections::BTreeMap;

use bttrain::bram::{BlockSpec, FactorArray, Strategy};
use bttrain::model::{EncoderBlock, TrainConfig, Transformer};
use bttrain::{DenseTensor, Scalar, TtLinear, TtmEmbedding};

pub fn config(name: &str) -> TrainConfig {
    TrainConfig::load(format!("{}/../../configs/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// Row-major f64 matrix.
#[derive(Debug, Clone)]
pub struct Mat {
    pub r: usize,
    pub c: usize,
    pub d: Vec<f64>,
}

impl Mat {
    pub fn zeros(r: usize, c: usize) -> Self {
        Mat { r, c, d: vec![0.0; r * c] }
    }

    pub fn from_tensor<T: Scalar>(t: &DenseTensor<T>) -> Self {
        Mat {
            r: t.shape()[0],
            c: t.shape()[1],
            d: t.data().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.c + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.d[i * self.c + j]
    }

    /// Naive triple loop.
    pub fn mul(&self, b: &Mat) -> Mat {
        assert_eq!(self.c, b.r);
        let mut out = Mat::zeros(self.r, b.c);
        for i in 0..self.r {
            for j in 0..b.c {
                let mut s = 0.0;
                for k in 0..self.c {
                    s += self.at(i, k) * b.at(k, j);
                }
                *out.at_mut(i, j) = s;
            }
        }
        out
    }

    pub fn add(&self, b: &Mat) -> Mat {
        Mat {
            r: self.r,
            c: self.c,
            d: self.d.iter().zip(&b.d).map(|(x, y)| x + y).collect(),
        }
    }

    pub fn add_col(&self, bias: &[f64]) -> Mat {
        let mut out = self.clone();
        for i in 0..self.r {
            for j in 0..self.c {
                *out.at_mut(i, j) += bias[i];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            r: self.r,
            c: self.c,
            d: self.d.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn col(&self, j: usize) -> Mat {
        Mat {
            r: self.r,
            c: 1,
            d: (0..self.r).map(|i| self.at(i, j)).collect(),
        }
    }
}

pub fn rel_diff(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-30);
    got.iter().zip(want).fold(0.0f64, |m, (g, w)| m.max((g - w).abs())) / scale
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64]) -> Mat {
    let mut out = x.clone();
    for j in 0..x.c {
        let mean = (0..x.r).map(|i| x.at(i, j)).sum::<f64>() / x.r as f64;
        let var = (0..x.r).map(|i| (x.at(i, j) - mean).powi(2)).sum::<f64>() / x.r as f64;
        for i in 0..x.r {
            *out.at_mut(i, j) = (x.at(i, j) - mean) / (var + 1e-5).sqrt() * gamma[i] + beta[i];
        }
    }
    out
}

pub struct DenseLayer {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl DenseLayer {
    pub fn from_tt<T: Scalar>(l: &TtLinear<T>) -> Self {
        DenseLayer {
            w: Mat::from_tensor(&l.weight().as_matrix()),
            b: l.bias().map_or(vec![0.0; l.rows()], |b| b.iter().map(|v| v.as_f64()).collect()),
        }
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        self.w.mul(x).add_col(&self.b)
    }
}

struct DenseBlock {
    q: DenseLayer,
    k: DenseLayer,
    v: DenseLayer,
    o: DenseLayer,
    f1: DenseLayer,
    f2: DenseLayer,
    ln1: (Vec<f64>, Vec<f64>),
    ln2: (Vec<f64>, Vec<f64>),
    heads: usize,
}

fn f64s<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

impl DenseBlock {
    fn from_block<T: Scalar>(b: &EncoderBlock<T>) -> Self {
        DenseBlock {
            q: DenseLayer::from_tt(&b.q),
            k: DenseLayer::from_tt(&b.k),
            v: DenseLayer::from_tt(&b.v),
            o: DenseLayer::from_tt(&b.o),
            f1: DenseLayer::from_tt(&b.ffn1),
            f2: DenseLayer::from_tt(&b.ffn2),
            ln1: (f64s(&b.ln1.gamma), f64s(&b.ln1.beta)),
            ln2: (f64s(&b.ln2.gamma), f64s(&b.ln2.beta)),
            heads: b.heads(),
        }
    }

    fn forward(&self, x: &Mat) -> Mat {
        let (q, k, v) = (self.q.apply(x), self.k.apply(x), self.v.apply(x));
        let (h, t) = (x.r, x.c);
        let dh = h / self.heads;
        let mut attn = Mat::zeros(h, t);
        for head in 0..self.heads {
            let rows = head * dh..(head + 1) * dh;
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| rows.clone().map(|r| k.at(r, j) * q.at(r, i)).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for r in rows.clone() {
                    *attn.at_mut(r, i) = (0..t).map(|j| v.at(r, j) * e[j] / z).sum();
                }
            }
        }
        let y1 = layer_norm(&self.o.apply(&attn).add(x), &self.ln1.0, &self.ln1.1);
        let f = self.f2.apply(&self.f1.apply(&y1).map(gelu));
        layer_norm(&f.add(&y1), &self.ln2.0, &self.ln2.1)
    }
}

/// The same network with every factorized layer expanded to a dense matrix.
pub struct DenseModel {
    tok: Mat,
    pos: Mat,
    seg: Mat,
    blocks: Vec<DenseBlock>,
    pool: DenseLayer,
    intent: DenseLayer,
    slot: Option<DenseLayer>,
}

fn table<T: Scalar>(e: &TtmEmbedding<T>) -> Mat {
    Mat::from_tensor(&e.table().reconstruct())
}

fn dense_head<T: Scalar>(l: &bttrain::model::DenseLinear<T>) -> DenseLayer {
    DenseLayer {
        w: Mat::from_tensor(&l.weight),
        b: f64s(&l.bias),
    }
}

impl DenseModel {
    pub fn from_model<T: Scalar>(m: &Transformer<T>) -> Self {
        DenseModel {
            tok: table(&m.tok),
            pos: table(&m.pos),
            seg: table(&m.seg),
            blocks: m.blocks.iter().map(DenseBlock::from_block).collect(),
            pool: DenseLayer::from_tt(&m.pool),
            intent: dense_head(&m.intent_head),
            slot: m.slot_head.as_ref().map(dense_head),
        }
    }

    /// Intent logits and optional slot logits.
    pub fn forward(&self, ids: &[usize]) -> (Mat, Option<Mat>) {
        let e = self.tok.c;
        let mut z = Mat::zeros(e, ids.len());
        for (p, &id) in ids.iter().enumerate() {
            for i in 0..e {
                *z.at_mut(i, p) = self.tok.at(id, i) + self.pos.at(p, i) + self.seg.at(0, i);
            }
        }
        for b in &self.blocks {
            z = b.forward(&z);
        }
        let pooled = self.pool.apply(&z.col(0)).map(f64::tanh);
        (self.intent.apply(&pooled), self.slot.as_ref().map(|s| s.apply(&z)))
    }
}


fn width_blocks(a: &FactorArray, s: Strategy, w: u64) -> u64 {
    match s {
        Strategy::Partition => a.rank * a.bits.div_ceil(w),
        Strategy::Reshape => (a.bits * a.rank).div_ceil(w),
    }
}

fn group_blocks(arrays: &[FactorArray], members: &[usize], s: Strategy, w: u64, d: u64) -> u64 {
    let nw = members.iter().map(|&i| width_blocks(&arrays[i], s, w)).max().unwrap();
    let depth: u64 = members.iter().map(|&i| arrays[i].depth).sum();
    nw * depth.div_ceil(d)
}

fn partitions(n: usize) -> Vec<Vec<usize>> {
    // restricted growth strings
    let mut out = Vec::new();
    let mut a = vec![0usize; n];
    fn rec(i: usize, max: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == a.len() {
            out.push(a.clone());
            return;
        }
        for v in 0..=max + 1 {
            a[i] = v;
            rec(i + 1, max.max(v), a, out);
        }
    }
    if n > 0 {
        rec(1, 0, &mut a, &mut out);
    }
    out
}

/// Fewest blocks over every set partition of the arrays, every block
/// configuration and both layouts.
pub fn brute_force_blocks(arrays: &[FactorArray], spec: &BlockSpec, g_max: usize) -> u64 {
    let mut best = u64::MAX;
    for labels in partitions(arrays.len()) {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        let size = groups.values().map(Vec::len).max().unwrap();
        if size > g_max {
            continue;
        }
        let legal = groups.values().all(|g| {
            g.iter().enumerate().all(|(x, &i)| {
                g[x + 1..].iter().all(|&j| match (&arrays[i].co_access, &arrays[j].co_access) {
                    (Some(p), Some(q)) => p != q,
                    _ => true,
                })
            })
        });
        if !legal {
            continue;
        }
        for &(w, d) in &spec.configs {
            for s in [Strategy::Partition, Strategy::Reshape] {
                let total: u64 = groups.values().map(|g| group_blocks(arrays, g, s, w, d)).sum();
                best = best.min(total);
            }
        }
    }
    best
}

