use detnas_core::nn::{conv2d, Shape, Sgd, Tensor};
use detnas_core::searchspace::random_architecture;
use detnas_core::supernet::{
    evaluate_path, train_step, train_supernet, BnMode, HeadKind, Layer, PathNet, PathSampler,
    Phase, PhaseSchedule, SupernetWeights, TrainPhase,
};
use detnas_core::tasks::{
    generate_classification_data, generate_localization_data, ClassificationConfig, DatasetSplit,
    LocalizationConfig, TaskSpec,
};
use detnas_core::{Architecture, ChoiceKind, Error, SearchSpace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ALL: [ChoiceKind; 4] = ChoiceKind::ALL;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fresh(seed: u64) -> SupernetWeights {
    SupernetWeights::new(&SearchSpace::tiny(), 4, seed, &mut rng(seed)).unwrap()
}

fn cls_data(count: usize, seed: u64) -> DatasetSplit {
    let cfg = ClassificationConfig {
        classes: 4,
        count,
        resolution: 32,
        noise: 0.1,
    };
    generate_classification_data(&cfg, seed, &mut rng(seed)).unwrap()
}

fn loc_data(count: usize, seed: u64) -> DatasetSplit {
    let cfg = LocalizationConfig {
        count,
        resolution: 32,
        noise: 0.1,
    };
    generate_localization_data(&cfg, seed, &mut rng(seed)).unwrap()
}

fn arch(choices: &[usize]) -> Architecture {
    Architecture::new(choices.iter().map(|&c| ChoiceKind::from_index(c).unwrap()).collect())
}

fn all_checksums(w: &SupernetWeights) -> Vec<Vec<u64>> {
    (0..w.blocks.len())
        .map(|i| ALL.iter().map(|&c| w.bundle_checksum(i, c)).collect())
        .collect()
}

fn head_checksums(w: &SupernetWeights, kind: HeadKind) -> Vec<u64> {
    w.head_param_ids(kind).iter().map(|&id| w.store.checksum(id)).collect()
}

#[test]
fn one_step_leaves_off_path_bundles_bit_identical() {
    let data = cls_data(64, 3);
    let task = TaskSpec::classification(4, 32);
    let (x, y) = data.batch(&(0..16).collect::<Vec<_>>());
    for seed in 0..5 {
        let mut w = fresh(seed);
        let a = random_architecture(&w.space, &mut rng(100 + seed));
        let before = all_checksums(&w);
        let loc_before = head_checksums(&w, HeadKind::Localization);
        let mut sgd = Sgd::new(PhaseSchedule::pretrain(10, 16, 0.1).sgd);
        train_step(&mut w, &mut sgd, &a, HeadKind::Classification, &task, &x, &y, 0, 10).unwrap();
        let after = all_checksums(&w);
        for i in 0..w.blocks.len() {
            for (c, &choice) in ALL.iter().enumerate() {
                if a.choices()[i] == choice {
                    assert_ne!(before[i][c], after[i][c], "on-path bundle {i}/{c} must train");
                } else {
                    assert_eq!(before[i][c], after[i][c], "off-path bundle {i}/{c} changed");
                }
            }
        }
        assert_eq!(loc_before, head_checksums(&w, HeadKind::Localization));
    }
}

#[test]
fn finetune_never_touches_the_classification_head() {
    let mut w = fresh(1);
    w.phase = Phase::Pretrained;
    let cls_before = head_checksums(&w, HeadKind::Classification);
    let loc_before = head_checksums(&w, HeadKind::Localization);
    let data = loc_data(64, 2);
    let sched = PhaseSchedule::finetune(4, 16, 0.5);
    train_supernet(
        &mut w,
        &sched,
        TrainPhase::Finetune { from_scratch: false },
        &TaskSpec::localization(32),
        &data,
        &PathSampler::Uniform,
        &mut rng(5),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(w.phase, Phase::Finetuned);
    assert_eq!(cls_before, head_checksums(&w, HeadKind::Classification));
    assert_ne!(loc_before, head_checksums(&w, HeadKind::Localization));
}

#[test]
fn instances_share_parameter_bundles() {
    let w = fresh(2);
    let a = arch(&[0, 1, 2, 3, 0, 1, 2, 3]);
    let b = arch(&[0, 1, 0, 3, 0, 1, 2, 3]);
    let na = PathNet::new(&w, &a, HeadKind::Classification).unwrap();
    let na2 = PathNet::new(&w, &a, HeadKind::Classification).unwrap();
    let nb = PathNet::new(&w, &b, HeadKind::Classification).unwrap();
    for i in 0..8 {
        assert!(std::ptr::eq(na.bundle(i), na2.bundle(i)));
        assert_eq!(std::ptr::eq(na.bundle(i), nb.bundle(i)), i != 2, "block {i}");
        assert!(std::ptr::eq(na.bundle(i), w.bundle(i, a.choices()[i])));
    }
}

#[test]
fn running_statistics_are_private_to_an_instance() {
    let w = fresh(3);
    let a = arch(&[0; 8]);
    let mut first = PathNet::new(&w, &a, HeadKind::Classification).unwrap();
    let second = PathNet::new(&w, &a, HeadKind::Classification).unwrap();
    let snapshot = second.bn_stats().clone();
    for stats in first.bn_stats_mut().values_mut() {
        stats.mean.iter_mut().for_each(|m| *m += 1.0);
    }
    assert_eq!(&snapshot, second.bn_stats());
    assert_ne!(&snapshot, first.bn_stats());
    let stored = w.stem.norms().next().unwrap().running_mean;
    assert!(w.store.get(stored).iter().all(|&m| m == 0.0));
}

#[test]
fn unknown_head_and_wrong_length_are_rejected() {
    assert!(matches!(HeadKind::from_name("seg"), Err(Error::UnknownHead(_))));
    let w = fresh(4);
    let short = arch(&[0; 7]);
    assert!(matches!(
        PathNet::new(&w, &short, HeadKind::Classification),
        Err(Error::InvalidArchitecture(_))
    ));
}

#[test]
fn identical_seeds_give_bit_identical_weights() {
    let data = cls_data(128, 9);
    let run = || {
        let mut w = fresh(11);
        train_supernet(
            &mut w,
            &PhaseSchedule::pretrain(6, 16, 0.1),
            TrainPhase::Pretrain,
            &TaskSpec::classification(4, 32),
            &data,
            &PathSampler::Uniform,
            &mut rng(12),
            &mut |_| {},
        )
        .unwrap();
        w
    };
    let a = run();
    let b = run();
    assert!(a == b);
    assert_eq!(a.step, 6);
}

#[test]
fn phase_order_is_enforced() {
    let data = loc_data(32, 1);
    let loc = TaskSpec::localization(32);
    let sched = PhaseSchedule::finetune(2, 8, 0.5);
    let mut w = fresh(5);
    let err = train_supernet(
        &mut w,
        &sched,
        TrainPhase::Finetune { from_scratch: false },
        &loc,
        &data,
        &PathSampler::Uniform,
        &mut rng(1),
        &mut |_| {},
    )
    .unwrap_err();
    assert!(matches!(err, Error::PhaseOrder { .. }));

    w.phase = Phase::Finetuned;
    let err = train_supernet(
        &mut w,
        &PhaseSchedule::pretrain(2, 8, 0.1),
        TrainPhase::Pretrain,
        &TaskSpec::classification(4, 32),
        &cls_data(32, 1),
        &PathSampler::Uniform,
        &mut rng(1),
        &mut |_| {},
    )
    .unwrap_err();
    assert!(matches!(err, Error::PhaseOrder { .. }));

    let mut scratch = fresh(5);
    train_supernet(
        &mut scratch,
        &sched,
        TrainPhase::Finetune { from_scratch: true },
        &loc,
        &data,
        &PathSampler::Uniform,
        &mut rng(1),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(scratch.phase, Phase::Finetuned);
}

#[test]
fn non_finite_loss_names_iteration_and_path() {
    let mut data = cls_data(16, 1);
    data.images.data_mut()[5] = f32::NAN;
    let a = arch(&[1; 8]);
    let err = train_supernet(
        &mut fresh(6),
        &PhaseSchedule::pretrain(3, 16, 0.1),
        TrainPhase::Pretrain,
        &TaskSpec::classification(4, 32),
        &data,
        &PathSampler::Fixed(a.clone()),
        &mut rng(1),
        &mut |_| {},
    )
    .unwrap_err();
    let Error::NonFinite(msg) = err else {
        panic!("expected non-finite error, got {err:?}")
    };
    assert!(msg.contains("iteration 0"), "{msg}");
    assert!(msg.contains(&a.to_string()), "{msg}");
}

#[test]
fn constant_probe_gives_zero_variance_statistics() {
    let w = fresh(7);
    let a = arch(&[0, 3, 1, 2, 3, 0, 2, 1]);
    let mut net = PathNet::new(&w, &a, HeadKind::Localization).unwrap();
    let zeros = Tensor::zeros(Shape::new(4, 3, 32, 32));
    net.recompute_bn_statistics([&zeros, &zeros]).unwrap();
    assert!(!net.bn_stats().is_empty());
    for stats in net.bn_stats().values() {
        assert!(stats.mean.iter().all(|m| m.abs() < 1e-6));
        assert!(stats.var.iter().all(|v| v.abs() < 1e-6));
    }
}

#[test]
fn recalibrated_stem_statistics_match_its_convolution_output() {
    let w = fresh(8);
    let a = arch(&[2; 8]);
    let data = loc_data(24, 3);
    let batch: Vec<usize> = (0..24).collect();
    let (x, _) = data.batch(&batch);
    let mut net = PathNet::new(&w, &a, HeadKind::Localization).unwrap();
    net.recompute_bn_statistics([&x]).unwrap();

    let Layer::Conv(conv) = &w.stem.layers[0] else {
        panic!("stem starts with a convolution")
    };
    let y = conv2d(&x, w.store.get(conv.weight), &conv.spec).unwrap();
    let s = y.shape();
    let norm = w.stem.norms().next().unwrap();
    let got = &net.bn_stats()[&norm.running_mean];
    for c in 0..s.c {
        let vals: Vec<f64> = (0..s.n).flat_map(|n| y.plane(n, c).iter().map(|&v| v as f64)).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((got.mean[c] as f64 - mean).abs() < 1e-5, "channel {c}");
        assert!((got.var[c] as f64 - var).abs() < 1e-5 * var.max(1.0), "channel {c}");
    }
}

#[test]
fn paths_differing_at_the_first_block_recalibrate_differently() {
    let w = fresh(9);
    let data = loc_data(32, 4);
    let (x, _) = data.batch(&(0..32).collect::<Vec<_>>());
    let a = arch(&[0, 1, 1, 1, 1, 1, 1, 1]);
    let b = arch(&[3, 1, 1, 1, 1, 1, 1, 1]);
    let calibrate = |p: &Architecture| {
        let mut n = PathNet::new(&w, p, HeadKind::Localization).unwrap();
        n.recompute_bn_statistics([&x]).unwrap();
        n.into_bn_stats()
    };
    let alone_b = calibrate(&b);
    let sa = calibrate(&a);
    let sb = calibrate(&b);
    assert_eq!(alone_b, sb, "calibrating another path first must not matter");
    let shared = w.bundle(1, ChoiceKind::Shuffle5x5).branches().next().unwrap();
    let id = shared.norms().next().unwrap().running_mean;
    assert_ne!(sa[&id], sb[&id]);
    let mut uncal = PathNet::new(&w, &b, HeadKind::Localization).unwrap();
    uncal.forward(&x, BnMode::Eval).unwrap();
    assert_ne!(uncal.bn_stats()[&id], sb[&id]);
}

#[test]
fn empty_calibration_set_is_an_error() {
    let w = fresh(10);
    let mut net = PathNet::new(&w, &arch(&[0; 8]), HeadKind::Localization).unwrap();
    let none: [&Tensor; 0] = [];
    assert!(matches!(net.recompute_bn_statistics(none), Err(Error::Empty(_))));
}

#[test]
fn evaluate_path_is_pure_and_chance_level_on_random_weights() {
    let w = fresh(12);
    let before = w.clone();
    let task = TaskSpec::classification(4, 32);
    let cal = cls_data(100, 21);
    let val = cls_data(400, 22);
    for seed in 0..3 {
        let a = random_architecture(&w.space, &mut rng(seed));
        let f1 = evaluate_path(&w, &a, &task, &cal, &val, 100).unwrap();
        let f2 = evaluate_path(&w, &a, &task, &cal, &val, 100).unwrap();
        assert_eq!(f1, f2);
        assert!((f1 - 0.25).abs() <= 0.1, "fitness {f1}");
    }
    assert!(w == before);
    let empty = val.slice(0..0, val.role).unwrap();
    assert!(matches!(
        evaluate_path(&w, &arch(&[0; 8]), &task, &cal, &empty, 100),
        Err(Error::Empty(_))
    ));
}

#[test]
fn desk_pretraining_beats_the_uniform_loss_floor() {
    let data = cls_data(8000, 30);
    let mut w = fresh(31);
    let report = train_supernet(
        &mut w,
        &PhaseSchedule::pretrain(2000, 64, 0.1),
        TrainPhase::Pretrain,
        &TaskSpec::classification(4, 32),
        &data,
        &PathSampler::Uniform,
        &mut rng(32),
        &mut |_| {},
    )
    .unwrap();
    assert!(report.tail_loss(0.05) < 4f32.ln(), "loss {}", report.tail_loss(0.05));
}
