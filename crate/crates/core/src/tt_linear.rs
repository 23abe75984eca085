//! TT-format linear layer: `Y = W·X + b` computed on the cores.
//!
//! Two contraction orders are provided. Right-to-left runs 2d stages that
//! all scale with the workload K. Bi-directional (BTT) contracts the left
//! and right halves of the chain independently into `Z_left (M×r_d)` and
//! `Z_right (r_d×N)` and only then touches X, so d−1 of its d+1 stages are
//! independent of K.

use std::path::PathBuf;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::gemm_acc;
use crate::meter::BufferMeter;
use crate::params::{join, ParamRef, Parameters};
use crate::scalar::Scalar;
use crate::spill::Spilled;
use crate::tensor::{DenseTensor, TtWeight};

/// Contraction order for [`TtLinear::forward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Right-to-left; inference and cost measurement only.
    Rtl,
    /// Bi-directional, left and right chains run one after the other.
    #[default]
    Btt,
    /// Bi-directional with the two chains on separate threads.
    BttParallel,
}

/// Gradients for every core and the optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct TtGrads<T> {
    pub cores: Vec<DenseTensor<T>>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> TtGrads<T> {
    pub fn zeros_like(w: &TtWeight<T>, bias: bool) -> Self {
        TtGrads {
            cores: w.cores().iter().map(|c| DenseTensor::zeros(c.shape())).collect(),
            bias: bias.then(|| vec![T::zero(); w.rows()]),
        }
    }

    pub fn add_assign(&mut self, other: &TtGrads<T>) {
        for (a, b) in self.cores.iter_mut().zip(&other.cores) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
        if let (Some(a), Some(b)) = (self.bias.as_mut(), other.bias.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn clear(&mut self) {
        for c in &mut self.cores {
            c.data_mut().fill(T::zero());
        }
        if let Some(b) = self.bias.as_mut() {
            b.fill(T::zero());
        }
    }
}

#[derive(Debug)]
enum Stash<T> {
    Mem(Vec<T>),
    File(Spilled),
}

/// Training-mode forward cache.
#[derive(Debug)]
struct Cache<T> {
    x: Stash<T>,
    k: usize,
    /// `left[j]`: product of cores 1..=j+1, shape `(m_1⋯m_{j+1}) × r_{j+1}`.
    left: Vec<Vec<T>>,
    /// `right[j]`: product of the last j+1 cores, shape
    /// `r_{2d-j-1} × (n_{d-j}⋯n_d)`.
    right: Vec<Vec<T>>,
    /// `Z_right·X`, shape `r_d × K`.
    z2: Vec<T>,
}

#[derive(Debug)]
pub struct TtLinear<T> {
    weight: TtWeight<T>,
    bias: Option<Vec<T>>,
    grads: TtGrads<T>,
    mode: Mode,
    cache: Option<Cache<T>>,
    spill: Option<(PathBuf, String)>,
}

type Chain<T> = (Vec<Vec<T>>, Vec<u64>);

impl<T: Scalar> TtLinear<T> {
    pub fn new(weight: TtWeight<T>, bias: Option<Vec<T>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weight.rows() {
                return Err(Error::shape(
                    "TtLinear::new",
                    format!("bias length {} but layer has {} outputs", b.len(), weight.rows()),
                ));
            }
        }
        let grads = TtGrads::zeros_like(&weight, bias.is_some());
        Ok(TtLinear {
            weight,
            bias,
            grads,
            mode: Mode::default(),
            cache: None,
            spill: None,
        })
    }

    /// Random cores and a zero bias.
    pub fn random<R: Rng + ?Sized>(
        out_modes: Vec<usize>,
        in_modes: Vec<usize>,
        ranks: &[usize],
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = TtWeight::random(out_modes, in_modes, ranks, rng)?;
        let b = bias.then(|| vec![T::zero(); w.rows()]);
        Self::new(w, b)
    }

    pub fn weight(&self) -> &TtWeight<T> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut TtWeight<T> {
        &mut self.weight
    }

    pub fn bias(&self) -> Option<&[T]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [T]> {
        self.bias.as_deref_mut()
    }

    pub fn grads(&self) -> &TtGrads<T> {
        &self.grads
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Stage the cached input in `dir/<name>.bin` between forward and
    /// backward. `None` keeps it in memory.
    pub fn set_spill(&mut self, spill: Option<(PathBuf, String)>) {
        self.spill = spill;
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn rows(&self) -> usize {
        self.weight.rows()
    }

    pub fn cols(&self) -> usize {
        self.weight.cols()
    }

    fn check_input(&self, op: &'static str, x: &DenseTensor<T>) -> Result<usize> {
        match x.shape() {
            [n, k] if *n == self.cols() => Ok(*k),
            s => Err(Error::shape(op, format!("expected {}×K input, got {s:?}", self.cols()))),
        }
    }

    fn add_bias(&self, y: &mut [T], k: usize) {
        if let Some(b) = &self.bias {
            for (row, &bi) in y.chunks_exact_mut(k).zip(b) {
                for v in row {
                    *v += bi;
                }
            }
        }
    }

    /// Dispatches on the layer's [`Mode`]. `train` keeps the cache needed by
    /// [`backward`](Self::backward).
    pub fn forward(&mut self, x: &DenseTensor<T>, train: bool) -> Result<DenseTensor<T>> {
        let mut meter = BufferMeter::new();
        match self.mode {
            Mode::Rtl if train => Err(Error::InvalidArgument(
                "right-to-left contraction is not supported for training".into(),
            )),
            Mode::Rtl => {
                self.cache = None;
                self.forward_rtl(x, &mut meter)
            }
            Mode::Btt | Mode::BttParallel => self.forward_btt(x, train, &mut meter),
        }
    }

    /// Right-to-left contraction: 2d stages, each scaling with K.
    pub fn forward_rtl(&self, x: &DenseTensor<T>, meter: &mut BufferMeter) -> Result<DenseTensor<T>> {
        let k = self.check_input("forward_rtl", x)?;
        let d = self.weight.d();
        let cores = self.weight.cores();
        let in_modes = self.weight.in_modes();

        // (p, n, r_b, K) → (p, r_a, K)
        let mut t = x.data().to_vec();
        for step in 0..d {
            let core = &cores[2 * d - 1 - step];
            let (ra, n, rb) = (core.shape()[0], core.shape()[1], core.shape()[2]);
            let p: usize = in_modes[..d - step - 1].iter().product();
            let mut out = vec![T::zero(); p * ra * k];
            let mut muls = 0;
            for pi in 0..p {
                muls += gemm_acc(
                    core.data(),
                    &t[pi * n * rb * k..(pi + 1) * n * rb * k],
                    &mut out[pi * ra * k..(pi + 1) * ra * k],
                    ra,
                    n * rb,
                    k,
                );
            }
            meter.stage(format!("right{step}"), muls, out.len() as u64);
            t = out;
        }
        // (r_b, Q, K) → (r_a, m, Q, K)
        for step in 0..d {
            let core = &cores[d - 1 - step];
            let (ra, m, rb) = (core.shape()[0], core.shape()[1], core.shape()[2]);
            let qk = t.len() / rb;
            let mut out = vec![T::zero(); ra * m * qk];
            let muls = gemm_acc(core.data(), &t, &mut out, ra * m, rb, qk);
            let produced = if step + 1 == d { 0 } else { out.len() as u64 };
            meter.stage(format!("left{step}"), muls, produced);
            t = out;
        }
        self.add_bias(&mut t, k);
        DenseTensor::new(vec![self.rows(), k], t)
    }

    fn left_chain(w: &TtWeight<T>) -> Chain<T> {
        let d = w.d();
        let cores = w.cores();
        let mut chain = vec![cores[0].data().to_vec()];
        let mut muls = Vec::with_capacity(d - 1);
        for j in 1..d {
            let core = &cores[j];
            let (ra, m, rb) = (core.shape()[0], core.shape()[1], core.shape()[2]);
            let prev = &chain[j - 1];
            let p = prev.len() / ra;
            let mut out = vec![T::zero(); p * m * rb];
            muls.push(gemm_acc(prev, core.data(), &mut out, p, ra, m * rb));
            chain.push(out);
        }
        (chain, muls)
    }

    fn right_chain(w: &TtWeight<T>) -> Chain<T> {
        let d = w.d();
        let cores = w.cores();
        let mut chain = vec![cores[2 * d - 1].data().to_vec()];
        let mut muls = Vec::with_capacity(d - 1);
        for j in 1..d {
            let core = &cores[2 * d - 1 - j];
            let (ra, n, rb) = (core.shape()[0], core.shape()[1], core.shape()[2]);
            let prev = &chain[j - 1];
            let q = prev.len() / rb;
            let mut out = vec![T::zero(); ra * n * q];
            muls.push(gemm_acc(core.data(), prev, &mut out, ra * n, rb, q));
            chain.push(out);
        }
        (chain, muls)
    }

    /// Bi-directional contraction: d−1 K-independent chain stages, then
    /// `Z2 = Z_right·X` and `Y = Z_left·Z2`.
    pub fn forward_btt(&mut self, x: &DenseTensor<T>, train: bool, meter: &mut BufferMeter) -> Result<DenseTensor<T>> {
        let k = self.check_input("forward_btt", x)?;
        self.cache = None;
        let d = self.weight.d();
        let rd = self.weight.ranks()[d];
        let (m, n) = (self.rows(), self.cols());

        let w = &self.weight;
        let ((left, lmuls), (right, rmuls)) = if self.mode == Mode::BttParallel {
            rayon::join(|| Self::left_chain(w), || Self::right_chain(w))
        } else {
            (Self::left_chain(w), Self::right_chain(w))
        };
        for j in 0..d - 1 {
            let produced = (left[j + 1].len() + right[j + 1].len()) as u64;
            meter.stage(format!("chain{j}"), lmuls[j] + rmuls[j], produced);
        }

        let mut z2 = vec![T::zero(); rd * k];
        let muls = gemm_acc(&right[d - 1], x.data(), &mut z2, rd, n, k);
        meter.stage("z2", muls, z2.len() as u64);
        let mut y = vec![T::zero(); m * k];
        let muls = gemm_acc(&left[d - 1], &z2, &mut y, m, rd, k);
        meter.stage("y", muls, 0);
        self.add_bias(&mut y, k);

        if train {
            let x = match &self.spill {
                Some((dir, name)) => Stash::File(Spilled::store(dir, name, x.data())?),
                None => Stash::Mem(x.data().to_vec()),
            };
            self.cache = Some(Cache { x, k, left, right, z2 });
        }
        DenseTensor::new(vec![m, k], y)
    }

    fn cache(&self, op: &'static str) -> Result<&Cache<T>> {
        self.cache.as_ref().ok_or(Error::MissingCache(op))
    }

    fn check_dy(&self, op: &'static str, dy: &DenseTensor<T>, k: usize) -> Result<()> {
        if dy.shape() != [self.rows(), k] {
            return Err(Error::shape(
                op,
                format!("expected {}×{k} output gradient, got {:?}", self.rows(), dy.shape()),
            ));
        }
        Ok(())
    }

    /// `W_g = Z_leftᵀ·dY`, shape `r_d × K`.
    fn wg(&self, cache: &Cache<T>, dy: &[T]) -> Vec<T> {
        let d = self.weight.d();
        let rd = self.weight.ranks()[d];
        let m = self.rows();
        let k = cache.k;
        let zl = &cache.left[d - 1];
        let mut wg = vec![T::zero(); rd * k];
        for i in 0..m {
            let dyr = &dy[i * k..(i + 1) * k];
            for a in 0..rd {
                let za = zl[i * rd + a];
                for (o, &g) in wg[a * k..(a + 1) * k].iter_mut().zip(dyr) {
                    *o += za * g;
                }
            }
        }
        wg
    }

    fn activation_from_wg(&self, cache: &Cache<T>, wg: &[T]) -> Vec<T> {
        let d = self.weight.d();
        let rd = self.weight.ranks()[d];
        let n = self.cols();
        let k = cache.k;
        let zr = &cache.right[d - 1];
        let mut dx = vec![T::zero(); n * k];
        for j in 0..n {
            let row = &mut dx[j * k..(j + 1) * k];
            for a in 0..rd {
                let za = zr[a * n + j];
                for (o, &g) in row.iter_mut().zip(&wg[a * k..(a + 1) * k]) {
                    *o += za * g;
                }
            }
        }
        dx
    }

    /// `dX = Wᵀ·dY` via `Z_rightᵀ·(Z_leftᵀ·dY)`.
    pub fn backward_activation(&self, dy: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let cache = self.cache("backward_activation")?;
        self.check_dy("backward_activation", dy, cache.k)?;
        let wg = self.wg(cache, dy.data());
        DenseTensor::new(vec![self.cols(), cache.k], self.activation_from_wg(cache, &wg))
    }

    fn restore_x(&mut self) -> Result<()> {
        if let Some(cache) = self.cache.as_mut() {
            if let Stash::File(_) = cache.x {
                let Stash::File(s) = std::mem::replace(&mut cache.x, Stash::Mem(Vec::new())) else {
                    unreachable!()
                };
                cache.x = Stash::Mem(s.restore()?);
            }
        }
        Ok(())
    }

    /// Core (and bias) gradients of `⟨dY, W·X + b⟩`.
    ///
    /// Each output row of the left half and each input column of the right
    /// half is pushed through the chain one slice at a time, so apart from
    /// the cached tensors only two rank-sized vectors are live. `meter`
    /// tracks that scratch.
    pub fn backward_cores(&mut self, dy: &DenseTensor<T>, meter: &mut BufferMeter) -> Result<TtGrads<T>> {
        self.restore_x()?;
        let cache = self.cache("backward_cores")?;
        self.check_dy("backward_cores", dy, cache.k)?;
        let wg = self.wg(cache, dy.data());
        let mut grads = TtGrads::zeros_like(&self.weight, self.bias.is_some());
        self.core_grads_into(cache, dy.data(), &wg, &mut grads, meter);
        Ok(grads)
    }

    fn core_grads_into(&self, cache: &Cache<T>, dy: &[T], wg: &[T], grads: &mut TtGrads<T>, meter: &mut BufferMeter) {
        let w = &self.weight;
        let d = w.d();
        let ranks = w.ranks();
        let rd = ranks[d];
        let cores = w.cores();
        let (m_modes, n_modes) = (w.out_modes(), w.in_modes());
        let (m, n, k) = (self.rows(), self.cols(), cache.k);
        let Stash::Mem(x) = &cache.x else {
            unreachable!("input restored before core gradients")
        };

        // Left half: row i of dZ_left = dY[i,:]·Z2ᵀ, pushed from core d down to core 1.
        let mut digits = vec![0usize; d];
        for i in 0..m {
            let mut rem = i;
            for t in (0..d).rev() {
                digits[t] = rem % m_modes[t];
                rem /= m_modes[t];
            }
            let dyr = &dy[i * k..(i + 1) * k];
            meter.alloc(rd as u64);
            let mut s: Vec<T> = (0..rd)
                .map(|a| {
                    let z2a = &cache.z2[a * k..(a + 1) * k];
                    let mut acc = T::zero();
                    for (g, z) in dyr.iter().zip(z2a) {
                        acc += *g * *z;
                    }
                    acc
                })
                .collect();
            let mut suffix = 1usize;
            for c in (0..d).rev() {
                let (ra, mc, rb) = (ranks[c], m_modes[c], ranks[c + 1]);
                let ic = digits[c];
                suffix *= mc;
                let g = grads.cores[c].data_mut();
                if c == 0 {
                    for (b, &sb) in s.iter().enumerate() {
                        g[ic * rb + b] += sb;
                    }
                } else {
                    let p = i / suffix;
                    let prefix = &cache.left[c - 1][p * ra..(p + 1) * ra];
                    for (a, &pa) in prefix.iter().enumerate() {
                        let row = &mut g[(a * mc + ic) * rb..(a * mc + ic + 1) * rb];
                        for (gv, &sb) in row.iter_mut().zip(&s) {
                            *gv += pa * sb;
                        }
                    }
                    meter.alloc(ra as u64);
                    let core = cores[c].data();
                    let next: Vec<T> = (0..ra)
                        .map(|a| {
                            let slice = &core[(a * mc + ic) * rb..(a * mc + ic + 1) * rb];
                            let mut acc = T::zero();
                            for (gv, &sb) in slice.iter().zip(&s) {
                                acc += *gv * sb;
                            }
                            acc
                        })
                        .collect();
                    meter.free(rb as u64);
                    s = next;
                }
            }
            meter.free(s.len() as u64);
        }

        // Right half: column j of dZ_right = W_g·X[j,:]ᵀ, pushed from core d+1 up to core 2d.
        let mut digits = vec![0usize; d];
        for j in 0..n {
            let mut rem = j;
            for t in (0..d).rev() {
                digits[t] = rem % n_modes[t];
                rem /= n_modes[t];
            }
            let xr = &x[j * k..(j + 1) * k];
            meter.alloc(rd as u64);
            let mut s: Vec<T> = (0..rd)
                .map(|a| {
                    let wa = &wg[a * k..(a + 1) * k];
                    let mut acc = T::zero();
                    for (g, xv) in wa.iter().zip(xr) {
                        acc += *g * *xv;
                    }
                    acc
                })
                .collect();
            let mut suffix_len: usize = n;
            for t in 0..d {
                let c = d + t;
                let (ra, nc, rb) = (ranks[c], n_modes[t], ranks[c + 1]);
                let jc = digits[t];
                suffix_len /= nc;
                let g = grads.cores[c].data_mut();
                if t + 1 == d {
                    for (a, &sa) in s.iter().enumerate() {
                        g[a * nc + jc] += sa;
                    }
                } else {
                    let q = j % suffix_len;
                    let rpart = &cache.right[d - t - 2];
                    for (a, &sa) in s.iter().enumerate() {
                        let row = &mut g[(a * nc + jc) * rb..(a * nc + jc + 1) * rb];
                        for (b, gv) in row.iter_mut().enumerate() {
                            *gv += sa * rpart[b * suffix_len + q];
                        }
                    }
                    meter.alloc(rb as u64);
                    let core = cores[c].data();
                    let mut next = vec![T::zero(); rb];
                    for (a, &sa) in s.iter().enumerate() {
                        let slice = &core[(a * nc + jc) * rb..(a * nc + jc + 1) * rb];
                        for (o, &gv) in next.iter_mut().zip(slice) {
                            *o += sa * gv;
                        }
                    }
                    meter.free(ra as u64);
                    s = next;
                }
            }
            meter.free(s.len() as u64);
        }

        if let Some(db) = grads.bias.as_mut() {
            for (i, b) in db.iter_mut().enumerate() {
                for &g in &dy[i * k..(i + 1) * k] {
                    *b += g;
                }
            }
        }
    }

    /// Full backward step: accumulates core and bias gradients into the
    /// layer's buffers, drops the cache, and returns `dX`.
    pub fn backward(&mut self, dy: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        self.restore_x()?;
        let cache = self.cache.take().ok_or(Error::MissingCache("backward"))?;
        self.check_dy("backward", dy, cache.k)?;
        let wg = self.wg(&cache, dy.data());
        let dx = self.activation_from_wg(&cache, &wg);
        let mut grads = std::mem::replace(&mut self.grads, TtGrads { cores: Vec::new(), bias: None });
        self.core_grads_into(&cache, dy.data(), &wg, &mut grads, &mut BufferMeter::new());
        self.grads = grads;
        DenseTensor::new(vec![self.cols(), cache.k], dx)
    }

    /// `G_k ← G_k − α·G'_k` and likewise for the bias.
    pub fn sgd_update(&mut self, grads: &TtGrads<T>, lr: T) -> Result<()> {
        if grads.cores.len() != self.weight.cores().len()
            || grads
                .cores
                .iter()
                .zip(self.weight.cores())
                .any(|(g, c)| g.shape() != c.shape())
        {
            return Err(Error::shape("sgd_update", "gradient shapes do not match the cores"));
        }
        match (&grads.bias, &self.bias) {
            (Some(g), Some(b)) if g.len() != b.len() => {
                return Err(Error::shape("sgd_update", "bias gradient length mismatch"))
            }
            (Some(_), None) => return Err(Error::shape("sgd_update", "bias gradient for a layer without bias")),
            _ => {}
        }
        for (c, g) in self.weight.cores_mut().iter_mut().zip(&grads.cores) {
            for (v, gv) in c.data_mut().iter_mut().zip(g.data()) {
                *v -= lr * *gv;
            }
        }
        if let (Some(b), Some(g)) = (self.bias.as_mut(), grads.bias.as_ref()) {
            for (v, gv) in b.iter_mut().zip(g) {
                *v -= lr * *gv;
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Parameters<T> for TtLinear<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        for (k, (c, g)) in self.weight.cores_mut().iter_mut().zip(self.grads.cores.iter_mut()).enumerate() {
            let shape = c.shape().to_vec();
            f(ParamRef {
                name: join(prefix, &format!("core{k}")),
                shape,
                value: c.data_mut(),
                grad: g.data_mut(),
            });
        }
        if let (Some(b), Some(g)) = (self.bias.as_mut(), self.grads.bias.as_mut()) {
            f(ParamRef {
                name: join(prefix, "bias"),
                shape: vec![b.len()],
                value: b,
                grad: g,
            });
        }
    }
}
