mod common;

use motiongait::backbone::NetworkConfig;
use motiongait::checkpoint::Checkpoint;
use motiongait::data::synth::sequence_frames;
use motiongait::data::{ConditionIndex, SequenceLabel, SilhouetteSequence, SynthConfig};
use motiongait::training::{
    adam_step, adam_step_reference, sample_window, train_loop, AdamConfig, AdamState, BaSampler, LossRecord,
    TrainConfig, TrainData, Trainer,
};
use motiongait::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn vectorized_adam_matches_reference_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let shapes: Vec<Vec<usize>> = vec![vec![7], vec![3, 4], vec![2, 2, 5]];
    let init: Vec<Tensor<f64>> = shapes.iter().map(|s| common::random(s, &mut rng)).collect();
    let cfg = AdamConfig {
        lr: 1e-2,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let (mut fast, mut slow) = (init.clone(), init);
    let (mut fs, mut ss) = (AdamState::<f64>::new(&refs), AdamState::<f64>::new(&refs));
    for _ in 0..200 {
        let grads: Vec<Tensor<f64>> = shapes.iter().map(|s| common::random(s, &mut rng)).collect();
        let mut a: Vec<&mut Tensor<f64>> = fast.iter_mut().collect();
        adam_step(&mut a, &grads, &mut fs, &cfg).unwrap();
        let mut b: Vec<&mut Tensor<f64>> = slow.iter_mut().collect();
        adam_step_reference(&mut b, &grads, &mut ss, &cfg).unwrap();
    }
    for (x, y) in fast.iter().zip(&slow) {
        assert!(x.max_abs_diff(y) < 1e-7, "{}", x.max_abs_diff(y));
    }
}

#[test]
fn sampler_stream_is_reproducible_and_balanced() {
    let groups: Vec<Vec<usize>> = (0..10).map(|s| (s * 3..s * 3 + 3).collect()).collect();
    let sampler = BaSampler::new(groups.clone(), 4, 5).unwrap();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20).map(|_| sampler.sample(&mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    for batch in run(3) {
        assert_eq!(batch.len(), 20);
        let mut classes: Vec<usize> = batch.iter().map(|b| b.1).collect();
        classes.dedup();
        assert_eq!(classes.len(), 4, "K consecutive samples per subject");
        for (sid, class) in batch {
            assert!(groups[class].contains(&sid));
        }
    }
    let all = BaSampler::new(groups, 10, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cls: Vec<usize> = all.sample(&mut rng).iter().map(|b| b.1).collect();
    cls.sort();
    cls.dedup();
    assert_eq!(cls.len(), 10);
}

#[test]
fn window_is_contiguous_and_cyclic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert_eq!(sample_window(30, 30, &mut rng).unwrap(), (0..30).collect::<Vec<_>>());
    let w = sample_window(10, 30, &mut rng).unwrap();
    assert_eq!(w, (0..30).map(|i| i % 10).collect::<Vec<_>>());
    for _ in 0..50 {
        let w = sample_window(50, 30, &mut rng).unwrap();
        assert!(w.windows(2).all(|p| p[1] == p[0] + 1) && w[29] < 50);
    }
    let a = sample_window(50, 30, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = sample_window(50, 30, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn joint_loss_terms_are_non_negative(seed in any::<u64>(), margin in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::<f64>::new();
        let emb = g.constant(common::random(&[4, 3, 5], &mut rng));
        let logits = g.constant(common::random(&[4, 3, 6], &mut rng));
        let l = motiongait::training::joint_loss(&mut g, emb, logits, &[0, 0, 5, 5], margin).unwrap();
        prop_assert!(g.value(l.triplet).item() >= 0.0);
        prop_assert!(g.value(l.ce).item() >= 0.0);
        prop_assert!(g.value(l.joint).item() >= 0.0);
    }

    #[test]
    fn scaling_keeps_the_active_set_at_zero_margin(seed in any::<u64>(), scale in 0.1f64..10.0) {
        // At margin 0 the hinge scales with the embeddings, so the loss scales too.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = common::random(&[2, 6, 3], &mut rng);
        let labels = [0, 0, 1, 1, 2, 2];
        let mut g = Graph::<f64>::new();
        let a = g.constant(e.clone());
        let b = g.constant(Tensor::from_fn(e.shape(), |i| e.data()[i] * scale));
        let la = g.batch_all_triplet(a, &labels, 0.0).unwrap();
        let lb = g.batch_all_triplet(b, &labels, 0.0).unwrap();
        let (la, lb) = (g.value(la).item(), g.value(lb).item());
        prop_assert!((lb - scale * la).abs() <= 1e-9 * (1.0 + lb.abs()));
    }
}

fn tiny_data() -> TrainData {
    let cfg = SynthConfig {
        frames_per_seq: 12,
        ..SynthConfig::new(3, 3)
    };
    let mut sequences = Vec::new();
    let mut classes = Vec::new();
    for s in 0..3 {
        for c in ["nm-01", "nm-02", "bg-01"] {
            let condition: ConditionIndex = c.parse().unwrap();
            let frames = sequence_frames(&cfg, s, condition, 90);
            sequences.push(SilhouetteSequence {
                label: SequenceLabel {
                    subject: format!("{:03}", s + 1),
                    condition,
                    view: 90,
                },
                frames: frames.concat(),
            });
            classes.push(s);
        }
    }
    TrainData::new(sequences, classes, 3).unwrap()
}

fn tiny_net() -> NetworkConfig {
    NetworkConfig {
        stage_channels: vec![2, 2, 2],
        num_parts: 4,
        embed_dim: 4,
        num_classes: 3,
        ..NetworkConfig::desk()
    }
}

fn tiny_train(iterations: usize) -> TrainConfig {
    TrainConfig {
        p: 2,
        k: 2,
        iterations,
        frames_per_sample: 9,
        seed: 17,
        checkpoint_every: 3,
        ..TrainConfig::desk()
    }
}

#[test]
fn two_runs_give_bit_identical_loss_traces() {
    let data = tiny_data();
    let run = || {
        let mut t = Trainer::new(&tiny_net(), tiny_train(4), String::new()).unwrap();
        let mut log: Vec<LossRecord> = Vec::new();
        let mut ck: Vec<Checkpoint> = Vec::new();
        let last = train_loop(&mut t, &data, &mut ck, &mut log).unwrap();
        (log, last)
    };
    let (a, ca) = run();
    let (b, cb) = run();
    let bits = |l: &[LossRecord]| l.iter().map(|r| (r.triplet.to_bits(), r.ce.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ca.encode(), cb.encode());
}

#[test]
fn resume_reproduces_the_remaining_trace() {
    let data = tiny_data();
    let mut full = Trainer::new(&tiny_net(), tiny_train(6), "cfg".into()).unwrap();
    let mut log: Vec<LossRecord> = Vec::new();
    let mut ckpts: Vec<Checkpoint> = Vec::new();
    let final_full = train_loop(&mut full, &data, &mut ckpts, &mut log).unwrap();
    let mid = ckpts.iter().find(|c| c.iteration == 3).expect("checkpoint at 3");
    // Through the byte format, as a real resume would.
    let mid = Checkpoint::decode(&mid.encode()).unwrap();
    assert_eq!(mid.config, "cfg");

    let mut resumed = Trainer::resume(&mid, &tiny_net(), tiny_train(6), "cfg".into()).unwrap();
    let mut tail: Vec<LossRecord> = Vec::new();
    let final_resumed = train_loop(&mut resumed, &data, &mut Vec::<Checkpoint>::new(), &mut tail).unwrap();
    assert_eq!(tail.len(), 3);
    for (a, b) in log[3..].iter().zip(&tail) {
        assert_eq!(a.iteration, b.iteration);
        assert_eq!(a.joint.to_bits(), b.joint.to_bits(), "iteration {}", a.iteration);
    }
    assert_eq!(final_full.encode(), final_resumed.encode());
}

#[test]
fn class_count_mismatch_is_a_config_error() {
    let data = tiny_data();
    let mut net = tiny_net();
    net.num_classes = 5;
    let mut t = Trainer::new(&net, tiny_train(1), String::new()).unwrap();
    let err = train_loop(&mut t, &data, &mut Vec::<Checkpoint>::new(), &mut Vec::<LossRecord>::new());
    assert!(matches!(err, Err(motiongait::Error::Config(_))));
}

#[test]
fn non_finite_loss_aborts_with_a_dump() {
    let data = tiny_data();
    let mut t = Trainer::new(&tiny_net(), tiny_train(2), String::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.dump_dir = Some(dir.path().to_path_buf());
    t.net.fc = Tensor::full(t.net.fc.shape(), f32::NAN);
    let err = train_loop(&mut t, &data, &mut Vec::<Checkpoint>::new(), &mut Vec::<LossRecord>::new());
    assert!(matches!(err, Err(motiongait::Error::Numeric(_))));
    let dump: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("nan_dump.json")).unwrap()).unwrap();
    assert_eq!(dump["batch"].as_array().unwrap().len(), 4);
    assert_eq!(dump["iteration"], 1);
}

#[test]
fn a_few_steps_reduce_the_loss_on_a_fixed_batch() {
    let data = tiny_data();
    let mut t = Trainer::new(&tiny_net(), tiny_train(40), String::new()).unwrap();
    let mut log: Vec<LossRecord> = Vec::new();
    train_loop(&mut t, &data, &mut Vec::<Checkpoint>::new(), &mut log).unwrap();
    let head: f64 = log[..5].iter().map(|r| r.joint).sum::<f64>() / 5.0;
    let tail: f64 = log[35..].iter().map(|r| r.joint).sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");
}
