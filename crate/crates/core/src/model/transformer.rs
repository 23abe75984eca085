use std::path::Path;

use rand::Rng;

use super::config::{EmbeddingConfig, TrainConfig};
use super::dense::DenseLinear;
use super::encoder::EncoderBlock;
use super::nn::{argmax_cols, cross_entropy, tanh_grad_from_output};
use crate::error::{Error, Result};
use crate::params::{join, ParamRef, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{Checkpoint, DenseTensor};
use crate::tt_linear::{Mode, TtLinear};
use crate::ttm_embedding::{embed_sum, embed_sum_backward, TtmEmbedding};

/// Logits for one sequence.
#[derive(Debug, Clone)]
pub struct Output<T> {
    /// `intents × 1`.
    pub intent_logits: DenseTensor<T>,
    /// `slots × T`, present when slot filling is enabled.
    pub slot_logits: Option<DenseTensor<T>>,
}

/// Loss and accuracy counts for one sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub intent_correct: bool,
    pub slot_correct: usize,
    pub slot_total: usize,
}

#[derive(Debug)]
struct HeadCache<T> {
    pooled: DenseTensor<T>,
    tokens: usize,
}

/// Embedding sum, encoder stack, and classifier (TT projection and tanh on
/// the first token, then a dense intent head; optional dense per-token slot
/// head).
#[derive(Debug)]
pub struct Transformer<T> {
    pub tok: TtmEmbedding<T>,
    pub pos: TtmEmbedding<T>,
    pub seg: TtmEmbedding<T>,
    pub blocks: Vec<EncoderBlock<T>>,
    pub pool: TtLinear<T>,
    pub intent_head: DenseLinear<T>,
    pub slot_head: Option<DenseLinear<T>>,
    cache: Option<HeadCache<T>>,
}

fn embedding<T: Scalar, R: Rng + ?Sized>(e: &EmbeddingConfig, rng: &mut R) -> Result<TtmEmbedding<T>> {
    TtmEmbedding::random(e.vocab_modes.clone(), e.embed_modes.clone(), &e.ranks(), rng)
}

fn column<T: Scalar>(x: &DenseTensor<T>, j: usize) -> DenseTensor<T> {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    DenseTensor::from_fn(&[r, 1], |i| x.data()[i[0] * c + j])
}

impl<T: Scalar> Transformer<T> {
    pub fn from_config<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (om, im) = (&cfg.hidden_out_modes, &cfg.hidden_in_modes);
        let h = cfg.hidden();
        let tok = embedding(&cfg.token_embedding, rng)?;
        let pos = embedding(&cfg.position_embedding, rng)?;
        let seg = embedding(&cfg.segment_embedding, rng)?;
        let mut blocks = Vec::with_capacity(cfg.num_encoders);
        for _ in 0..cfg.num_encoders {
            let mut b = EncoderBlock::random(om, im, &cfg.tt_ranks(cfg.attention_rank), cfg.heads, rng)?;
            if cfg.ffn_rank != cfg.attention_rank {
                let r = cfg.tt_ranks(cfg.ffn_rank);
                b.ffn1 = TtLinear::random(om.clone(), im.clone(), &r, true, rng)?;
                b.ffn2 = TtLinear::random(om.clone(), im.clone(), &r, true, rng)?;
            }
            blocks.push(b);
        }
        let pool = TtLinear::random(om.clone(), im.clone(), &cfg.tt_ranks(cfg.classifier_rank), true, rng)?;
        let intent_head = DenseLinear::random(cfg.num_intents, h, rng);
        let slot_head = (cfg.num_slots > 0).then(|| DenseLinear::random(cfg.num_slots, h, rng));
        Ok(Transformer {
            tok,
            pos,
            seg,
            blocks,
            pool,
            intent_head,
            slot_head,
            cache: None,
        })
    }

    pub fn hidden(&self) -> usize {
        self.pool.rows()
    }

    pub fn tt_layers_mut(&mut self) -> Vec<&mut TtLinear<T>> {
        let mut v: Vec<&mut TtLinear<T>> = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.linears_mut());
        }
        v.push(&mut self.pool);
        v
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for l in self.tt_layers_mut() {
            l.set_mode(mode);
        }
    }

    /// Stage every TT layer's cached input under `dir`, or keep it in memory.
    pub fn set_spill(&mut self, dir: Option<&Path>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.set_spill(dir, &format!("enc{i}"));
        }
        self.pool.set_spill(dir.map(|d| (d.to_path_buf(), "pool".into())));
    }

    pub fn forward(&mut self, ids: &[usize], train: bool) -> Result<Output<T>> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let t = ids.len();
        let positions: Vec<usize> = (0..t).collect();
        let segments = vec![0; t];
        let mut z = embed_sum(&mut self.tok, &mut self.pos, &mut self.seg, ids, &positions, &segments, train)?;
        for b in &mut self.blocks {
            z = b.forward(&z, train)?;
        }
        let pooled = self.pool.forward(&column(&z, 0), train)?.map(|v| v.tanh());
        let intent_logits = self.intent_head.forward(&pooled, train)?;
        let slot_logits = match &mut self.slot_head {
            Some(h) => Some(h.forward(&z, train)?),
            None => None,
        };
        self.cache = train.then_some(HeadCache { pooled, tokens: t });
        Ok(Output {
            intent_logits,
            slot_logits,
        })
    }

    /// Backpropagates logit gradients through the whole model, accumulating
    /// into every parameter's gradient buffer.
    pub fn backward(&mut self, d_intent: &DenseTensor<T>, d_slot: Option<&DenseTensor<T>>) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::MissingCache("Transformer::backward"))?;
        let mut dp = self.intent_head.backward(d_intent)?;
        for (g, &y) in dp.data_mut().iter_mut().zip(cache.pooled.data()) {
            *g *= tanh_grad_from_output(y);
        }
        let dh0 = self.pool.backward(&dp)?;
        let h = self.hidden();
        let mut dz = match (&mut self.slot_head, d_slot) {
            (Some(head), Some(ds)) => head.backward(ds)?,
            (None, None) => DenseTensor::zeros(&[h, cache.tokens]),
            _ => return Err(Error::InvalidArgument("slot gradient does not match the slot head".into())),
        };
        let t = cache.tokens;
        for i in 0..h {
            dz.data_mut()[i * t] += dh0.data()[i];
        }
        for b in self.blocks.iter_mut().rev() {
            dz = b.backward(&dz)?;
        }
        embed_sum_backward(&mut self.tok, &mut self.pos, &mut self.seg, &dz)
    }

    /// Intent cross-entropy plus mean per-token slot cross-entropy, with
    /// logit gradients.
    pub fn loss(
        out: &Output<T>,
        intent: usize,
        slots: Option<&[usize]>,
    ) -> Result<(StepStats, DenseTensor<T>, Option<DenseTensor<T>>)> {
        let (il, dint) = cross_entropy(&out.intent_logits, &[intent])?;
        let mut stats = StepStats {
            loss: il,
            intent_correct: argmax_cols(&out.intent_logits)[0] == intent,
            ..Default::default()
        };
        let dslot = match (&out.slot_logits, slots) {
            (Some(logits), Some(labels)) => {
                let (sl, ds) = cross_entropy(logits, labels)?;
                stats.loss += sl;
                stats.slot_total = labels.len();
                stats.slot_correct = argmax_cols(logits).iter().zip(labels).filter(|(a, b)| a == b).count();
                Some(ds)
            }
            (Some(_), None) => return Err(Error::InvalidArgument("slot labels required for slot filling".into())),
            _ => None,
        };
        Ok((stats, dint, dslot))
    }

    /// Forward, loss and backward for one example; gradients are scaled by
    /// `scale` (1/batch) before accumulation.
    pub fn accumulate(&mut self, ids: &[usize], intent: usize, slots: Option<&[usize]>, scale: T) -> Result<StepStats> {
        let out = self.forward(ids, true)?;
        let slots = if self.slot_head.is_some() { slots } else { None };
        let (stats, dint, dslot) = Self::loss(&out, intent, slots)?;
        let dint = dint.scale(scale);
        let dslot = dslot.map(|d| d.scale(scale));
        self.backward(&dint, dslot.as_ref())?;
        Ok(stats)
    }

    /// Loss without touching caches or gradients.
    pub fn eval(&mut self, ids: &[usize], intent: usize, slots: Option<&[usize]>) -> Result<StepStats> {
        let out = self.forward(ids, false)?;
        let slots = if self.slot_head.is_some() { slots } else { None };
        Ok(Self::loss(&out, intent, slots)?.0)
    }

    /// Parameters of the same architecture with every compressed layer
    /// stored densely.
    pub fn dense_param_count(&self) -> usize {
        let emb = |e: &TtmEmbedding<T>| e.vocab_size() * e.embed_dim();
        let tt = |l: &TtLinear<T>| l.rows() * l.cols() + l.bias().map_or(0, <[T]>::len);
        let mut n = emb(&self.tok) + emb(&self.pos) + emb(&self.seg);
        for b in &self.blocks {
            n += b.linears().iter().map(|l| tt(l)).sum::<usize>();
            n += 4 * b.hidden();
        }
        n += tt(&self.pool);
        n += self.intent_head.rows() * (self.intent_head.cols() + 1);
        if let Some(s) = &self.slot_head {
            n += s.rows() * (s.cols() + 1);
        }
        n
    }

    pub fn to_checkpoint(&mut self, metadata: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new(metadata);
        self.visit_params("", &mut |p| {
            let data: Vec<f32> = p.value.iter().map(|v| v.as_f64() as f32).collect();
            ck.push(p.name, DenseTensor::new(p.shape, data).expect("parameter shape"));
        });
        ck
    }

    /// Overwrites every parameter from `ck`; names and shapes must match.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let mut err = None;
        let mut seen = 0;
        self.visit_params("", &mut |p| {
            if err.is_some() {
                return;
            }
            match ck.get(&p.name) {
                Some(t) if t.shape() == p.shape.as_slice() => {
                    for (v, &s) in p.value.iter_mut().zip(t.data()) {
                        *v = T::cast(s as f64);
                    }
                    seen += 1;
                }
                Some(t) => err = Some(Error::Format(format!("{}: checkpoint shape {:?}, model {:?}", p.name, t.shape(), p.shape))),
                None => err = Some(Error::Format(format!("checkpoint has no tensor {}", p.name))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != ck.tensors.len() {
            return Err(Error::Format("checkpoint holds tensors the model does not have".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> Parameters<T> for Transformer<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
        self.tok.visit_params(&join(prefix, "tok"), f);
        self.pos.visit_params(&join(prefix, "pos"), f);
        self.seg.visit_params(&join(prefix, "seg"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&join(prefix, &format!("enc{i}")), f);
        }
        self.pool.visit_params(&join(prefix, "pool"), f);
        self.intent_head.visit_params(&join(prefix, "intent_head"), f);
        if let Some(s) = &mut self.slot_head {
            s.visit_params(&join(prefix, "slot_head"), f);
        }
    }
}
