use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::TrainConfig;
use super::data::Example;
use super::transformer::Transformer;
use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::rng::{stream, substream, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub intent_acc: f64,
    pub slot_acc: f64,
    pub wall_time: f64,
}

pub const METRICS_HEADER: &str = "epoch,loss,intent_acc,slot_acc,wall_time";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in rows {
        writeln!(out, "{},{:.9},{:.6},{:.6},{:.3}", m.epoch, m.loss, m.intent_acc, m.slot_acc, m.wall_time)
            .expect("write to string");
    }
    out
}

/// One pass over `data` in a seeded shuffled order: forward, loss and
/// backward per example, then an SGD update after every `batch_size`
/// examples. Loss and accuracy are measured before each update.
pub fn train_epoch<T: Scalar>(
    model: &mut Transformer<T>,
    data: &[Example],
    cfg: &TrainConfig,
    epoch: usize,
    record_time: bool,
) -> Result<EpochMetrics> {
    let start = Instant::now();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut substream(cfg.seed, Stream::Shuffle, epoch as u64));
    let lr = T::cast(cfg.learning_rate);
    let (mut loss, mut intent_ok, mut slot_ok, mut slot_n) = (0.0, 0usize, 0usize, 0usize);
    model.zero_grads();
    for batch in order.chunks(cfg.batch_size) {
        let scale = T::cast(1.0 / batch.len() as f64);
        for &i in batch {
            let ex = &data[i];
            let s = model.accumulate(&ex.token_ids, ex.intent_label, ex.slot_labels.as_deref(), scale)?;
            loss += s.loss;
            intent_ok += s.intent_correct as usize;
            slot_ok += s.slot_correct;
            slot_n += s.slot_total;
        }
        model.sgd_step(lr);
        model.zero_grads();
    }
    let n = data.len().max(1) as f64;
    Ok(EpochMetrics {
        epoch,
        loss: loss / n,
        intent_acc: intent_ok as f64 / n,
        slot_acc: if slot_n == 0 { 0.0 } else { slot_ok as f64 / slot_n as f64 },
        wall_time: if record_time { start.elapsed().as_secs_f64() } else { 0.0 },
    })
}

/// The configured dataset: the JSON-Lines file when set, otherwise the
/// seeded synthetic task. Either way it is validated against the model.
pub fn load_dataset(cfg: &TrainConfig) -> Result<Vec<Example>> {
    let data = match (&cfg.dataset, &cfg.synthetic) {
        (Some(path), _) => super::data::read_jsonl(path)?,
        (None, Some(s)) => {
            let spec = super::data::SynthSpec {
                count: s.count,
                classes: s.classes,
                length: cfg.seq_len,
                vocab: cfg.token_embedding.vocab(),
                band: s.band,
                signal: s.signal,
            };
            super::data::synthesize(&spec, &mut stream(cfg.seed, Stream::Data))?
        }
        (None, None) => return Err(Error::InvalidArgument("no dataset configured".into())),
    };
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    super::data::validate(&data, cfg.token_embedding.vocab(), cfg.seq_len, cfg.num_intents, cfg.num_slots)?;
    Ok(data)
}

/// A freshly initialized model drawn from the config's init stream.
pub fn build_model<T: Scalar>(cfg: &TrainConfig) -> Result<Transformer<T>> {
    Transformer::from_config(cfg, &mut stream(cfg.seed, Stream::Init))
}
