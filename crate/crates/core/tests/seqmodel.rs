use std::collections::BTreeSet;

use flowmine::seqmodel::{
    load_bytes, mask_window, next_score, save_bytes, train, AttentionModel, LoadedScorer, ModelConfig,
    NGramScorer, Scorer, Vocab, MASK_ID,
};
use flowmine::slice::Slicing;
use flowmine::{Catalog, Error, Message, Trace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        dim: 8,
        window: 6,
        seed,
        ..ModelConfig::default()
    }
}

fn abc_catalog() -> Catalog {
    Catalog::new(
        vec![
            Message::new(1, "A", "B", "req"),
            Message::new(2, "B", "C", "fwd"),
            Message::new(3, "C", "A", "rsp"),
        ],
        BTreeSet::from([1]),
        BTreeSet::from([3]),
    )
    .unwrap()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let vocab = Vocab::from_ids(vec![1, 2, 3, 4]).unwrap();
    let mut model: AttentionModel<f64> = AttentionModel::new(tiny_config(5), vocab);
    // Perturb gains/biases away from their init so every term is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in &mut model.params.tensors {
        t.mapv_inplace(|v| v + 0.3 * (rand::Rng::random::<f64>(&mut rng) - 0.5));
    }
    let tokens = vec![1, 5, 2, 3, 5, 0];
    let targets = vec![(1, 4), (4, 2)];
    let batch = vec![(tokens.clone(), targets.clone())];
    let (_, grads) = model.loss_and_grad(&batch);
    let names = model.tensor_names();
    let h = 1e-5;
    for (ti, name) in names.iter().enumerate() {
        let (mut diff2, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
        for idx in 0..model.params.tensors[ti].len() {
            let orig = model.params.tensors[ti].as_slice().unwrap()[idx];
            model.params.tensors[ti].as_slice_mut().unwrap()[idx] = orig + h;
            let up = model.loss(&tokens, &targets);
            model.params.tensors[ti].as_slice_mut().unwrap()[idx] = orig - h;
            let down = model.loss(&tokens, &targets);
            model.params.tensors[ti].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (up - down) / (2.0 * h) / targets.len() as f64;
            let analytic = grads.tensors[ti].as_slice().unwrap()[idx];
            diff2 += (numeric - analytic).powi(2);
            norm_a += analytic * analytic;
            norm_n += numeric * numeric;
        }
        let denom = norm_a.sqrt() + norm_n.sqrt();
        // Key biases cancel inside the softmax, so their true gradient is zero.
        let rel = if denom < 1e-8 { diff2.sqrt() } else { diff2.sqrt() / denom };
        assert!(rel <= 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn zeroed_embedding_and_bias_give_uniform_prediction() {
    let vocab = Vocab::from_ids(vec![1, 2, 3]).unwrap();
    let mut model: AttentionModel<f64> = AttentionModel::new(tiny_config(1), vocab);
    model.params.tensors[0].fill(0.0);
    model.params.tensors.last_mut().unwrap().fill(0.0);
    let dist = model.score(&[1, 2, MASK_ID], 2);
    let u = 1.0 / dist.len() as f64;
    assert!(dist.iter().all(|p| (p - u).abs() < 1e-9));
}

#[test]
fn attention_sees_right_context() {
    let vocab = Vocab::from_ids(vec![1, 2, 3]).unwrap();
    let model: AttentionModel<f64> = AttentionModel::new(tiny_config(9), vocab);
    let a = model.score(&[MASK_ID, 1, 2], 0);
    let b = model.score(&[MASK_ID, 1, 3], 0);
    let moved: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!(moved > 1e-9);
}

#[test]
fn learns_a_deterministic_successor() {
    let catalog = abc_catalog();
    let traces: Vec<Trace> = (0..40).map(|_| Trace::new([1, 2, 3].repeat(4))).collect();
    let cfg = ModelConfig {
        layers: 1,
        heads: 2,
        dim: 16,
        window: 12,
        epochs: 40,
        learning_rate: 1e-2,
        batch_size: 8,
        ..ModelConfig::default()
    };
    let (model, report) = train::<f64>(&traces, &catalog, &Slicing::default(), &cfg).unwrap();
    assert!(report.final_loss().unwrap() < report.epoch_losses[0]);
    let slices = Slicing::default().apply(&traces, &catalog);
    let p = next_score(&model, &slices, 1, 2, 32).unwrap();
    assert!(p >= 0.9, "P(2 | 1) = {p}");
}

#[test]
fn training_on_nothing_fails() {
    let err = train::<f64>(&[], &abc_catalog(), &Slicing::default(), &ModelConfig::default()).unwrap_err();
    assert!(matches!(err, Error::EmptyCorpus));
}

#[test]
fn masking_always_masks_something() {
    let vocab = Vocab::from_ids(vec![1, 2, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let (tokens, targets) = mask_window(&[1, 2, 3], &vocab, 0.01, &mut rng);
        assert!(!targets.is_empty());
        for (pos, tgt) in targets {
            assert_eq!(tokens[pos], vocab.mask());
            assert_eq!(vocab.id(tgt), Some([1, 2, 3][pos]));
        }
    }
}

#[test]
fn ngram_counts_successors() {
    let traces = vec![Trace::new(vec![1, 2, 3, 1, 2, 3])];
    let m = NGramScorer::fit_sliced(&abc_catalog(), &Slicing::default(), 2, 0.01, &traces).unwrap();
    assert!(next_score(&m, &traces, 1, 2, 16).unwrap() > 0.95);
    assert!(next_score(&m, &traces, 1, 3, 16).unwrap() < 0.05);
}

#[test]
fn model_files_round_trip() {
    let vocab = Vocab::from_ids(vec![1, 2, 3]).unwrap();
    let model: AttentionModel<f64> = AttentionModel::new(tiny_config(4), vocab.clone());
    let bytes = save_bytes(&LoadedScorer::from(model.clone()));
    match load_bytes(&bytes).unwrap() {
        LoadedScorer::Attention(m) => {
            assert_eq!(m.params, model.params);
            assert_eq!(m.config, model.config);
        }
        other => panic!("loaded {}", other.kind()),
    }

    let ng = NGramScorer::fit(vocab, 3, 0.5, &[Trace::new(vec![1, 2, 3, 2])]).unwrap();
    match load_bytes(&save_bytes(&ng.clone().into())).unwrap() {
        LoadedScorer::NGram(m) => assert_eq!(m, ng),
        other => panic!("loaded {}", other.kind()),
    }
}

#[test]
fn damaged_model_files_are_rejected() {
    let vocab = Vocab::from_ids(vec![1, 2]).unwrap();
    let model: AttentionModel<f64> = AttentionModel::new(tiny_config(4), vocab);
    let bytes = save_bytes(&model.into());

    let mut flipped = bytes.clone();
    flipped[40] ^= 0x10;
    assert!(matches!(load_bytes(&flipped), Err(Error::CorruptFile(_))));

    let mut newer = bytes.clone();
    newer[4] = 99;
    assert!(matches!(load_bytes(&newer), Err(Error::VersionMismatch(_))));

    assert!(matches!(load_bytes(&bytes[..bytes.len() / 2]), Err(Error::CorruptFile(_))));

    let mut foreign = bytes.clone();
    foreign[..4].copy_from_slice(b"GGUF");
    assert!(matches!(load_bytes(&foreign), Err(Error::VersionMismatch(_))));
}

#[test]
fn f32_and_f64_models_agree() {
    let vocab = Vocab::from_ids(vec![1, 2, 3]).unwrap();
    let m64: AttentionModel<f64> = AttentionModel::new(tiny_config(8), vocab);
    let m32: AttentionModel<f32> = m64.cast();
    let a = m64.score(&[1, MASK_ID, 3], 1);
    let b = m32.score(&[1, MASK_ID, 3], 1);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn unsmoothed_bigram_is_the_empirical_frequency() {
    let vocab = || Vocab::from_ids(vec![1, 2, 3]).unwrap();
    let m = NGramScorer::fit(vocab(), 2, 0.0, &[Trace::new(vec![1, 2, 1, 2])]).unwrap();
    assert_eq!(m.vocab().prob(&m.score(&[1, MASK_ID], 1), 2), 1.0);
    let m = NGramScorer::fit(vocab(), 2, 0.0, &[Trace::new(vec![1, 2, 1, 3])]).unwrap();
    assert_eq!(m.vocab().prob(&m.score(&[1, MASK_ID], 1), 2), 0.5);
    assert_eq!(m.vocab().prob(&m.score(&[1, MASK_ID], 1), 3), 0.5);
}

#[test]
fn pairs_never_seen_together_score_below_uniform() {
    let vocab = Vocab::from_ids(vec![1, 2, 3, 4]).unwrap();
    let traces: Vec<Trace> = (0..20).map(|i| Trace::new(if i % 2 == 0 { vec![1, 2] } else { vec![3, 4] })).collect();
    let m = NGramScorer::fit(vocab, 2, 0.1, &traces).unwrap();
    let p = next_score(&m, &traces, 1, 4, 32).unwrap();
    assert!(p < 0.25 + 1e-9, "P(4 | 1) = {p}");
}

fn fork_catalog() -> Catalog {
    Catalog::new(
        vec![
            Message::new(1, "A", "B", "req"),
            Message::new(2, "B", "C", "fwd"),
            Message::new(3, "C", "A", "rsp"),
            Message::new(4, "B", "D", "alt"),
            Message::new(5, "D", "A", "ack"),
        ],
        BTreeSet::from([1]),
        BTreeSet::from([3, 5]),
    )
    .unwrap()
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        dim: 16,
        window: 3,
        epochs: 60,
        learning_rate: 1e-2,
        batch_size: 16,
        ..ModelConfig::default()
    }
}

#[test]
fn masked_middle_of_a_repeated_triple_is_recovered() {
    let traces: Vec<Trace> = (0..200).map(|_| Trace::new(vec![1, 2, 3])).collect();
    let (model, _) = train::<f64>(&traces, &abc_catalog(), &Slicing::default(), &toy_config()).unwrap();
    let p = model.vocab().prob(&model.score(&[1, MASK_ID, 3], 1), 2);
    assert!(p >= 0.9, "P(2 | 1 _ 3) = {p}");
}

#[test]
fn the_right_context_decides_the_masked_token() {
    // Both continuations of 1 are equally likely; only the following message
    // tells them apart, so a left-to-right model could not exceed 0.5 here.
    let traces: Vec<Trace> = (0..200)
        .map(|i| Trace::new(if i % 2 == 0 { vec![1, 2, 3] } else { vec![1, 4, 5] }))
        .collect();
    let (model, _) = train::<f64>(&traces, &fork_catalog(), &Slicing::default(), &toy_config()).unwrap();
    let v = model.vocab();
    let via3 = v.prob(&model.score(&[1, MASK_ID, 3], 1), 2);
    let via5 = v.prob(&model.score(&[1, MASK_ID, 5], 1), 4);
    assert!(via3 > 0.8 && via5 > 0.8, "P(2 | 1 _ 3) = {via3}, P(4 | 1 _ 5) = {via5}");
}
