mod common;

use bttrain::bram::{self, BlockSpec, FactorArray};
use bttrain::costmodel::{mem_btt, mem_tt_rtl, mul_btt, mul_tt_rtl, LayerConfig};
use bttrain::model::nn::{softmax_cols, LayerNorm};
use bttrain::rng::{stream, Stream};
use bttrain::tensor::{fold, unfold};
use bttrain::tensor::Checkpoint;
use bttrain::ttm_embedding::{decode, encode};
use bttrain::{BufferMeter, DenseTensor, FoldingMap, TtLinear, TtWeight, TtmEmbedding};
use proptest::prelude::*;
use rand::Rng;

/// (out_modes, in_modes, ranks, k)
fn layer_shape() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>, usize)> {
    (1usize..=3).prop_flat_map(|d| {
        (
            prop::collection::vec(1usize..=5, d),
            prop::collection::vec(1usize..=5, d),
            prop::collection::vec(1usize..=4, 2 * d - 1),
            1usize..=6,
        )
            .prop_map(|(m, n, inner, k)| {
                let mut r = vec![1];
                r.extend(inner);
                r.push(1);
                (m, n, r, k)
            })
    })
}

fn random_input(rows: usize, k: usize, seed: u64) -> DenseTensor<f64> {
    let mut rng = stream(seed, Stream::Data);
    DenseTensor::from_fn(&[rows, k], |_| rng.gen_range(-1.0..1.0))
}

/// W[i, j] = G_0[i_0] ⋯ G_{2d-1}[j_{d-1}], evaluated entry by entry.
fn entry_oracle(w: &TtWeight<f64>, i: usize, j: usize) -> f64 {
    let (om, im) = (w.out_modes(), w.in_modes());
    let mut idx = Vec::new();
    let mut rest = i;
    let mut digits = vec![0; om.len()];
    for (t, &m) in om.iter().enumerate().rev() {
        digits[t] = rest % m;
        rest /= m;
    }
    idx.extend(digits);
    let mut rest = j;
    let mut digits = vec![0; im.len()];
    for (t, &n) in im.iter().enumerate().rev() {
        digits[t] = rest % n;
        rest /= n;
    }
    idx.extend(digits);
    let mut row = vec![1.0];
    for (core, &s) in w.cores().iter().zip(&idx) {
        let (ra, sz, rb) = (core.shape()[0], core.shape()[1], core.shape()[2]);
        let mut next = vec![0.0; rb];
        for (a, &ra_v) in row.iter().enumerate().take(ra) {
            for (b, nb) in next.iter_mut().enumerate() {
                *nb += ra_v * core.data()[(a * sz + s) * rb + b];
            }
        }
        row = next;
    }
    row[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn meters_equal_closed_forms((m, n, r, k) in layer_shape(), seed in 0u64..1000) {
        let cfg = LayerConfig::new(m.clone(), n.clone(), r.clone(), k).unwrap();
        let mut layer = TtLinear::<f64>::random(m, n, &r, false, &mut stream(seed, Stream::Init)).unwrap();
        let x = random_input(layer.cols(), k, seed);
        let mut meter = BufferMeter::new();
        layer.forward_rtl(&x, &mut meter).unwrap();
        prop_assert_eq!(meter.muls(), mul_tt_rtl(&cfg));
        prop_assert_eq!(meter.peak(), mem_tt_rtl(&cfg));
        let mut meter = BufferMeter::new();
        layer.forward_btt(&x, false, &mut meter).unwrap();
        prop_assert_eq!(meter.muls(), mul_btt(&cfg));
        prop_assert_eq!(meter.peak(), mem_btt(&cfg));
    }

    #[test]
    fn reconstruction_matches_entry_oracle((m, n, r, _k) in layer_shape(), seed in 0u64..1000) {
        let w = TtWeight::<f64>::random(m, n, &r, &mut stream(seed, Stream::Init)).unwrap();
        let mat = w.as_matrix();
        let cols = w.cols();
        for i in 0..w.rows() {
            for j in 0..cols {
                let want = entry_oracle(&w, i, j);
                prop_assert!((mat.data()[i * cols + j] - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn both_orders_are_bilinear((m, n, r, k) in layer_shape(), seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut layer = TtLinear::<f64>::random(m, n, &r, false, &mut stream(seed, Stream::Init)).unwrap();
        let x1 = random_input(layer.cols(), k, seed);
        let x2 = random_input(layer.cols(), k, seed + 1);
        let mix = DenseTensor::new(
            x1.shape().to_vec(),
            x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        for rtl in [false, true] {
            let mut run = |x: &DenseTensor<f64>| {
                let mut meter = BufferMeter::new();
                if rtl { layer.forward_rtl(x, &mut meter).unwrap() } else { layer.forward_btt(x, false, &mut meter).unwrap() }
            };
            let (y1, y2, ym) = (run(&x1), run(&x2), run(&mix));
            for ((p, q), z) in y1.data().iter().zip(y2.data()).zip(ym.data()) {
                prop_assert!((a * p + b * q - z).abs() <= 1e-10 * (1.0 + z.abs()));
            }
        }
        // Linear in each core as well.
        let x = random_input(layer.cols(), k, seed + 2);
        let base = layer.forward_btt(&x, false, &mut BufferMeter::new()).unwrap();
        let c = (seed as usize) % layer.weight().cores().len();
        for v in layer.weight_mut().cores_mut()[c].data_mut() {
            *v *= a;
        }
        let scaled = layer.forward_btt(&x, false, &mut BufferMeter::new()).unwrap();
        for (p, z) in base.data().iter().zip(scaled.data()) {
            prop_assert!((a * p - z).abs() <= 1e-10 * (1.0 + z.abs()));
        }
    }

    #[test]
    fn fold_round_trips(modes in prop::collection::vec(1usize..=5, 1..=4), split in 0usize..4) {
        let total: usize = modes.iter().product();
        let v: Vec<f64> = (0..total).map(|i| i as f64).collect();
        let t = fold(&v, &modes).unwrap();
        prop_assert_eq!(unfold(&t), v.clone());
        prop_assume!(modes.len() >= 2);
        let s = split.clamp(1, modes.len() - 1);
        let map = FoldingMap::new(modes[..s].to_vec(), modes[s..].to_vec()).unwrap();
        let mat = DenseTensor::new(vec![map.rows(), map.cols()], v.clone()).unwrap();
        let back = map.unfold_matrix(&map.fold_matrix(&mat).unwrap()).unwrap();
        prop_assert_eq!(back.data(), mat.data());
    }

    #[test]
    fn ttm_lookup_selects_reconstructed_rows(
        vm in prop::collection::vec(1usize..=4, 1..=3),
        seed in 0u64..1000,
        picks in prop::collection::vec(0usize..1000, 1..6),
    ) {
        let d = vm.len();
        let em: Vec<usize> = (0..d).map(|k| 1 + (seed as usize + k) % 3).collect();
        let mut ranks = vec![2; d + 1];
        ranks[0] = 1;
        ranks[d] = 1;
        let e = TtmEmbedding::<f64>::random(vm.clone(), em, &ranks, &mut stream(seed, Stream::Init)).unwrap();
        let table = e.table().reconstruct();
        let v = e.vocab_size();
        let ids: Vec<usize> = picks.iter().map(|p| p % v).collect();
        let z = e.lookup(&ids).unwrap();
        let (dim, t) = (e.embed_dim(), ids.len());
        for (col, &id) in ids.iter().enumerate() {
            prop_assert_eq!(encode(&decode(id, &vm), &vm), id);
            for i in 0..dim {
                let want = table.data()[id * dim + i];
                prop_assert!((z.data()[i * t + col] - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn softmax_and_layernorm_invariants(rows in 2usize..8, cols in 1usize..6, seed in 0u64..1000) {
        let x = random_input(rows, cols, seed).map(|v| v * 20.0);
        let p = softmax_cols(&x);
        for j in 0..cols {
            let s: f64 = (0..rows).map(|i| p.data()[i * cols + j]).sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
        let mut ln = LayerNorm::<f64>::new(rows);
        let y = ln.forward(&x, false);
        for j in 0..cols {
            let mean: f64 = (0..rows).map(|i| y.data()[i * cols + j]).sum::<f64>() / rows as f64;
            prop_assert!(mean.abs() <= 1e-6);
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..3), 1..5), seed in 0u64..100) {
        let mut rng = stream(seed, Stream::Data);
        let mut ck = Checkpoint::new(serde_json::json!({ "seed": seed }));
        for (i, s) in shapes.iter().enumerate() {
            ck.push(format!("t{i}"), DenseTensor::<f32>::from_fn(s, |_| rng.gen_range(-1.0..1.0)));
        }
        let bytes = ck.to_bytes().unwrap();
        let again = Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap();
        prop_assert_eq!(bytes, again);
    }
}

fn arrays_strategy() -> impl proptest::strategy::Strategy<Value = Vec<FactorArray>> {
    prop::collection::vec((prop_oneof![Just(16u64), Just(32)], 1u64..=16, 1u64..=3000, prop::option::of(0u8..3)), 1..=6)
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (bits, rank, depth, key))| {
                    let mut a = FactorArray::new(format!("a{i}"), bits, rank, depth);
                    a.co_access = key.map(|k| format!("k{k}"));
                    a
                })
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn bram_matches_brute_force(arrays in arrays_strategy(), g in 1usize..=6) {
        let spec = BlockSpec::bram36();
        let plan = bram::optimize(&arrays, &spec, g).unwrap();
        prop_assert_eq!(plan.total_blocks, common::brute_force_blocks(&arrays, &spec, g));
        let placed: usize = plan.groups.iter().map(|p| p.members.len()).sum();
        prop_assert_eq!(placed, arrays.len());
        prop_assert!(plan.total_blocks >= plan.min_blocks);
    }
}
