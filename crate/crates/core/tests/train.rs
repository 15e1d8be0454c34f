mod common;

use common::{random_batch, rng, small_task, toy_config, toy_twin};
use jtcse::cross::TwinModel;
use jtcse::data::Batch;
use jtcse::infer::{infer_embed, Model};
use jtcse::model::{forward, EncoderConfig, EncoderWeights};
use jtcse::train::{
    distill, distill_step, macs_and_eta, smooth, tower_macs, train, train_step, Adam, AdamConfig,
    CheckpointBundle, DistillConfig, TrainConfig, MAGIC,
};
use jtcse::Error;

fn short_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 8,
        eval_every: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let task = small_task();
    let mut model = TwinModel::init(&task.config, 1, 4).unwrap();
    let before = model.clone();
    let mut cfg = short_config(3);
    cfg.optimizer.learning_rate = 0.0;
    cfg.optimizer.weight_decay = 0.01;
    let mut opt = Adam::new(cfg.optimizer);
    let refs: Vec<&str> = task.corpus.train[..8].iter().map(String::as_str).collect();
    let batch = Batch::encode(&task.vocab, &refs, 16).unwrap();
    for step in 0..3 {
        let rep = train_step(&mut model, &mut opt, &batch, &cfg, step).unwrap();
        assert!(rep.total.is_finite());
    }
    assert_eq!(model, before);
}

#[test]
fn training_is_deterministic_per_seed() {
    let task = small_task();
    let run = |seed| {
        let cfg = TrainConfig {
            seed,
            ..short_config(6)
        };
        let init = TwinModel::init(&task.config, 2, 9).unwrap();
        train(init, &task.vocab, &task.corpus.train, &task.corpus.dev, &cfg).unwrap()
    };
    let (a, b) = (run(1), run(1));
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.final_model, b.final_model);
    assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    // step 0, 3, 6
    assert_eq!(a.trace.iter().filter(|r| r.dev_spearman.is_some()).count(), 3);
    assert_ne!(a.trace, run(2).trace);
}

#[test]
fn best_checkpoint_holds_the_highest_dev_score() {
    let task = small_task();
    let init = TwinModel::init(&task.config, 2, 1).unwrap();
    let out = train(init, &task.vocab, &task.corpus.train, &task.corpus.dev, &short_config(6)).unwrap();
    let best = out
        .trace
        .iter()
        .filter_map(|r| r.dev_spearman)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best.best_spearman, best);
    assert_eq!(out.initial_spearman, out.trace[0].dev_spearman.unwrap());
}

#[test]
fn checkpoint_round_trips_bytes_and_files() {
    let task = small_task();
    let bundle = CheckpointBundle {
        model: Model::Twin(TwinModel::init(&task.config, 2, 5).unwrap()),
        vocab: task.vocab.clone(),
        best_spearman: 0.123456789,
        step: 42,
    };
    let bytes = bundle.to_bytes().unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    bundle.save(&path).unwrap();
    let loaded = CheckpointBundle::load(&path).unwrap();
    assert_eq!(loaded, bundle);
    assert_eq!(loaded.to_bytes().unwrap(), bytes);

    let single = CheckpointBundle {
        model: Model::Single(EncoderWeights::init(&task.config, 1).unwrap()),
        ..bundle
    };
    let again = CheckpointBundle::from_bytes(&single.to_bytes().unwrap(), &path).unwrap();
    assert_eq!(again, single);
}

#[test]
fn malformed_checkpoints_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.ckpt");
    let err = CheckpointBundle::load(&missing).unwrap_err();
    assert_eq!(err.class().exit_code(), 3);
    assert!(err.to_string().contains("absent.ckpt"));
    let bundle = CheckpointBundle {
        model: Model::Twin(toy_twin(1)),
        vocab: common::toy_vocab(),
        best_spearman: 0.5,
        step: 1,
    };
    let mut bytes = bundle.to_bytes().unwrap();
    for cut in [4, 12, bytes.len() - 3] {
        assert!(CheckpointBundle::from_bytes(&bytes[..cut], &missing).is_err());
    }
    bytes[0] ^= 1;
    assert!(matches!(CheckpointBundle::from_bytes(&bytes, &missing), Err(Error::Checkpoint { .. })));
}

#[test]
fn inference_embedding_decomposes_over_towers() {
    let model = toy_twin(3);
    let batch = random_batch(4, 8, 12, &mut rng(1));
    let emb = infer_embed(&model, &batch).unwrap();
    let a = forward(&model.encoder_i, &batch, 0, false).unwrap().cls_pool;
    let b = forward(&model.encoder_ii, &batch, 0, false).unwrap().cls_pool;
    for ((e, x), y) in emb.values().iter().zip(a.values()).zip(b.values()) {
        assert!((e - (x + y)).abs() < 1e-12);
    }
    let twin = TwinModel::new(model.encoder_i.clone(), model.encoder_i.clone(), 2).unwrap();
    let doubled = infer_embed(&twin, &batch).unwrap();
    for (e, x) in doubled.values().iter().zip(a.values()) {
        assert_eq!(*e, 2.0 * x);
    }
}

#[test]
fn inference_embedding_ignores_batch_composition() {
    let model = toy_twin(6);
    let mut r = rng(2);
    let batch = random_batch(5, 8, 12, &mut r);
    let together = infer_embed(&model, &batch).unwrap();
    for i in 0..5 {
        let ids: Vec<u32> = batch.row_ids(i)[..batch.lengths()[i]].to_vec();
        let alone = infer_embed(&model, &Batch::from_sequences(&[ids]).unwrap()).unwrap();
        for (a, b) in alone.values().iter().zip(together.row(i)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// A student that reproduces `2 · CLS` of a teacher with identical towers.
fn fixed_point_pair() -> (TwinModel, EncoderWeights) {
    let w = EncoderWeights::init(&toy_config(), 11).unwrap();
    let teacher = TwinModel::new(w.clone(), w.clone(), 1).unwrap();
    let mut student = w;
    let last = student.layers.last_mut().unwrap();
    for v in last.ln2_gain.values_mut().iter_mut().chain(last.ln2_bias.values_mut()) {
        *v *= 2.0;
    }
    (teacher, student)
}

#[test]
fn distillation_fixed_point_is_stationary() {
    let (teacher, student) = fixed_point_pair();
    let mut moved = student.clone();
    let cfg = AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    let mut opt = Adam::new(cfg);
    let batch = random_batch(4, 8, 12, &mut rng(3));
    for _ in 0..3 {
        assert_eq!(distill_step(&teacher, &mut moved, &mut opt, &batch, None).unwrap(), 0.0);
    }
    assert_eq!(moved, student);
}

#[test]
fn distillation_improves_agreement_and_keeps_the_teacher() {
    let task = small_task();
    let teacher = TwinModel::init(&task.config, 2, 4).unwrap();
    let snapshot = teacher.clone();
    let student = EncoderWeights::init(&task.config, 99).unwrap();
    let cfg = DistillConfig {
        steps: 30,
        batch_size: 8,
        eval_every: 10,
        ..DistillConfig::default()
    };
    let out = distill(&teacher, student, &task.vocab, &task.corpus.train, &task.corpus.dev, &cfg).unwrap();
    assert_eq!(teacher, snapshot);
    let mse: Vec<f64> = out.trace.iter().filter_map(|r| r.mse).collect();
    assert_eq!(mse.len(), 30);
    let s = smooth(&mse, 10);
    assert!(s[29] < s[9], "{s:?}");
    assert!(out.heldout_cosine_final > out.heldout_cosine_initial, "{} -> {}", out.heldout_cosine_initial, out.heldout_cosine_final);
}

#[test]
fn distillation_rejects_width_mismatch() {
    let task = small_task();
    let teacher = TwinModel::init(&task.config, 2, 4).unwrap();
    let narrow = EncoderConfig {
        d: 8,
        ..task.config
    };
    let student = EncoderWeights::init(&narrow, 1).unwrap();
    let err = distill(&teacher, student, &task.vocab, &task.corpus.train, &task.corpus.dev, &DistillConfig::default());
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn mac_counts_scale_with_towers() {
    let base = EncoderConfig {
        n_layers: 12,
        d: 768,
        n_heads: 12,
        d_ffn: 3072,
        vocab_size: 30522,
        max_seq_len: 512,
        dropout_p: 0.1,
    };
    let single = tower_macs(&base, 128) / 1e9;
    let (twin, eta) = macs_and_eta(&base, 2, 128, 79.7).unwrap();
    let (six, _) = macs_and_eta(&base, 6, 128, 79.7).unwrap();
    assert_eq!(twin, 2.0 * single);
    assert_eq!(six, 6.0 * single);
    assert_eq!(eta, 79.7 / twin);
    // per layer: 4nd² + 2n²d + 2nd·d_ffn at n = 128
    let per_layer = 4.0 * 128.0 * 768.0 * 768.0 + 2.0 * 128.0 * 128.0 * 768.0 + 2.0 * 128.0 * 768.0 * 3072.0;
    assert_eq!(tower_macs(&base, 128), 12.0 * per_layer);
    assert!(macs_and_eta(&base, 2, 128, 101.0).is_err());
    assert!(macs_and_eta(&base, 0, 128, 50.0).is_err());
}

#[test]
fn smoothing_is_a_trailing_mean() {
    assert_eq!(smooth(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 1.5, 2.5, 3.5]);
    assert_eq!(smooth(&[5.0], 20), vec![5.0]);
}
