use bttrain::gradcheck::{check_params, DEFAULT_STEP};
use bttrain::model::{build_model, load_dataset, EncoderBlock, TrainConfig, Transformer};
use bttrain::params::Parameters;
use bttrain::rng::{stream, Stream};
use bttrain::{DenseTensor, TtLinear, TtmEmbedding};
use rand::Rng;

fn tiny() -> TrainConfig {
    TrainConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.json")).unwrap()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseTensor<f64> {
    let mut rng = stream(seed, Stream::Data);
    DenseTensor::from_fn(&[rows, cols], |_| rng.gen_range(-1.0..1.0))
}

fn dot(a: &DenseTensor<f64>, b: &DenseTensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn tt_linear_every_parameter() {
    let mut rng = stream(3, Stream::Init);
    let mut layer = TtLinear::<f64>::random(vec![3, 4], vec![4, 2], &[1, 3, 3, 3, 1], true, &mut rng).unwrap();
    assert!(layer.param_count() <= 500);
    let x = random_matrix(8, 5, 1);
    let probe = random_matrix(12, 5, 2);
    let report = check_params(
        &mut layer,
        |l: &mut TtLinear<f64>, grad| {
            let y = l.forward(&x, grad)?;
            if grad {
                l.backward(&probe)?;
            }
            Ok(dot(&y, &probe))
        },
        DEFAULT_STEP,
    )
    .unwrap();
    assert_eq!(report.len(), layer.param_count());
    assert!(report.max_rel() <= 1e-4, "{:?}", report.worst());
}

#[test]
fn ttm_embedding_every_parameter() {
    let mut rng = stream(4, Stream::Init);
    let mut emb = TtmEmbedding::<f64>::random(vec![4, 5], vec![3, 4], &[1, 3, 1], &mut rng).unwrap();
    assert!(emb.param_count() <= 500);
    let ids = [0, 7, 19, 7, 3, 12];
    let probe = random_matrix(12, ids.len(), 5);
    let report = check_params(
        &mut emb,
        |e: &mut TtmEmbedding<f64>, grad| {
            let z = if grad { e.lookup_train(&ids)? } else { e.lookup(&ids)? };
            if grad {
                e.backward(&probe)?;
            }
            Ok(dot(&z, &probe))
        },
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel() <= 1e-4, "{:?}", report.worst());
}

#[test]
fn encoder_block_every_parameter() {
    let mut rng = stream(5, Stream::Init);
    let mut block = EncoderBlock::<f64>::random(&[2, 3], &[3, 2], &[1, 2, 2, 2, 1], 2, &mut rng).unwrap();
    let x = random_matrix(6, 4, 6);
    let probe = random_matrix(6, 4, 7);
    let report = check_params(
        &mut block,
        |b: &mut EncoderBlock<f64>, grad| {
            let y = b.forward(&x, grad)?;
            if grad {
                b.backward(&probe)?;
            }
            Ok(dot(&y, &probe))
        },
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(report.max_rel() <= 1e-3, "{:?}", report.worst());
}

#[test]
fn tiny_transformer_every_parameter() {
    let cfg = tiny();
    let data = load_dataset(&cfg).unwrap();
    let mut model: Transformer<f64> = build_model(&cfg).unwrap();
    let batch = &data[..2];
    let report = check_params(
        &mut model,
        |m: &mut Transformer<f64>, grad| {
            let mut loss = 0.0;
            for ex in batch {
                let s = if grad {
                    m.accumulate(&ex.token_ids, ex.intent_label, ex.slot_labels.as_deref(), 1.0)?
                } else {
                    m.eval(&ex.token_ids, ex.intent_label, ex.slot_labels.as_deref())?
                };
                loss += s.loss;
            }
            Ok(loss)
        },
        DEFAULT_STEP,
    )
    .unwrap();
    assert_eq!(report.len(), model.param_count());
    assert!(report.max_rel() <= 1e-3, "{:?}", report.worst());
}
