mod common;

use bttrain::model::{build_model, load_dataset, train_epoch, Transformer};
use bttrain::params::Parameters;
use bttrain::Mode;

fn snapshot(m: &mut Transformer<f32>) -> Vec<f32> {
    let mut v = Vec::new();
    m.visit_params("", &mut |p| v.extend_from_slice(p.value));
    v
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise() {
    let mut cfg = common::config("tiny");
    cfg.learning_rate = 0.0;
    let data = load_dataset(&cfg).unwrap();
    let mut model: Transformer<f32> = build_model(&cfg).unwrap();
    let before = snapshot(&mut model);
    train_epoch(&mut model, &data, &cfg, 0, false).unwrap();
    let after = snapshot(&mut model);
    assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn same_seed_same_trajectory_in_every_mode() {
    let cfg = common::config("tiny");
    let data = load_dataset(&cfg).unwrap();
    let mut runs = Vec::new();
    for mode in [Mode::Btt, Mode::Btt, Mode::BttParallel] {
        let mut model: Transformer<f32> = build_model(&cfg).unwrap();
        model.set_mode(mode);
        let losses: Vec<u64> = (0..3)
            .map(|e| train_epoch(&mut model, &data, &cfg, e, false).unwrap().loss.to_bits())
            .collect();
        runs.push((losses, snapshot(&mut model)));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn tiny_model_learns() {
    let mut cfg = common::config("tiny");
    cfg.learning_rate = 0.05;
    let data = load_dataset(&cfg).unwrap();
    let mut model: Transformer<f32> = build_model(&cfg).unwrap();
    let first = train_epoch(&mut model, &data, &cfg, 0, false).unwrap().loss;
    let mut last = first;
    for e in 1..30 {
        last = train_epoch(&mut model, &data, &cfg, e, false).unwrap().loss;
    }
    assert!(last < first);
}
