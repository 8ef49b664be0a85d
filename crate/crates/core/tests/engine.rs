use petal_core::autodiff::{finite_diff_gradient, softmax, BnMode, Graph};
use petal_core::bench::{make_source_dataset, CorruptionKind, CorruptionSpec, Segment, StreamSchedule, UnlabeledBatch};
use petal_core::engine::*;
use petal_core::model::{FlatParams, MlpClassifier};
use petal_core::swag::SwagDiagPosterior;
use petal_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn random_targets(rows: usize, classes: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    for _ in 0..rows {
        let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    Tensor::new(vec![rows, classes], data).unwrap()
}

fn posterior_around(model: &MlpClassifier, seed: u64) -> SwagDiagPosterior {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu: Vec<f64> = model.params().values().iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
    let s2 = (0..model.dim()).map(|_| rng.random_range(0.01..0.1)).collect();
    SwagDiagPosterior::new(model.params().with_values(mu).unwrap(), s2, 5).unwrap()
}

/// A small image model with a posterior centered on its own weights.
fn setup(seed: u64) -> (MlpClassifier, SwagDiagPosterior) {
    let model = MlpClassifier::init(seed, &[64, 12, 8]).unwrap();
    let post = SwagDiagPosterior::new(model.flatten(), vec![0.05; model.dim()], 5).unwrap();
    (model, post)
}

fn noisy_batch(seed: u64) -> UnlabeledBatch {
    let d = make_source_dataset(seed, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 3).unwrap();
    let mut data = Vec::new();
    for i in 0..d.len() {
        data.extend(petal_core::bench::apply_corruption(d.image(i), 8, spec, &mut rng));
    }
    UnlabeledBatch::new(Tensor::new(vec![d.len(), 64], data).unwrap())
}

fn quick_cfg() -> PetalConfig {
    PetalConfig { k_aug: 4, ..PetalConfig::default() }
}

#[test]
fn petal_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..20u64 {
        let sizes = [rng.random_range(2..=8), rng.random_range(2..=16), rng.random_range(2..=8)];
        let mut model = MlpClassifier::init(case, &sizes).unwrap();
        let post = posterior_around(&model, case + 100);
        let x = random_batch(5, sizes[0], case + 200);
        let y = random_targets(5, sizes[2], case + 300);
        let alpha = rng.random_range(0.0..1.0);
        let auto = petal_loss(&mut model.clone(), &x, &y, &post, alpha).unwrap().grad;
        let theta0 = model.params().values().to_vec();
        let numeric = finite_diff_gradient(
            |theta| {
                model.load(&auto.with_values(theta.to_vec()).unwrap()).unwrap();
                petal_loss(&mut model.clone(), &x, &y, &post, alpha).unwrap().loss
            },
            &theta0,
            1e-6,
        );
        for (i, (a, n)) in auto.values().iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            assert!(rel < 1e-4, "case {case} sizes {sizes:?} coord {i}: {a} vs {n}");
        }
    }
}

#[test]
fn petal_loss_without_prior_is_plain_cross_entropy() {
    let (mut model, post) = setup(1);
    let x = noisy_batch(1);
    let y = random_targets(x.len(), 8, 5);
    let with = petal_loss(&mut model.clone(), x.inputs(), &y, &post, 0.0).unwrap();
    let mut g = Graph::new();
    let xi = g.constant(x.inputs().clone());
    let fwd = model.forward_on(&mut g, xi, BnMode::Train, true).unwrap();
    let ce = g.soft_cross_entropy(&y, fwd.logits).unwrap();
    let grads = g.backward(ce).unwrap();
    assert_eq!(with.loss, g.value(ce).item());
    assert_eq!(with.grad, model.collect_grads(&g, &fwd, &grads));
}

#[test]
fn petal_loss_at_posterior_mean_with_unit_alpha() {
    let (model, _) = setup(2);
    let s2: Vec<f64> = (0..model.dim()).map(|i| 0.01 + (i % 7) as f64 * 0.003).collect();
    let post = SwagDiagPosterior::new(model.flatten(), s2.clone(), 3).unwrap();
    let x = noisy_batch(2);
    let y = random_targets(x.len(), 8, 6);
    let out = petal_loss(&mut model.clone(), x.inputs(), &y, &post, 1.0).unwrap();
    let ce = petal_loss(&mut model.clone(), x.inputs(), &y, &post, 0.0).unwrap().loss;
    // oracle: log N(mu; mu, s2) = -0.5 ln(2π s2) per coordinate
    let log_q: f64 = s2.iter().map(|s| -0.5 * (2.0 * std::f64::consts::PI * s).ln()).sum();
    let objective = log_q - ce;
    assert!((-out.loss - objective).abs() < 1e-9 * objective.abs().max(1.0));
}

#[test]
fn self_target_cross_entropy_has_zero_logit_gradient() {
    let logits = random_batch(6, 5, 3);
    let target = softmax(&logits).unwrap();
    let mut g = Graph::new();
    let z = g.param(logits);
    let ce = g.soft_cross_entropy(&target, z).unwrap();
    let grads = g.backward(ce).unwrap();
    assert!(grads.get(z).unwrap().data().iter().all(|v| v.abs() < 1e-8));
}

#[test]
fn petal_loss_rejects_foreign_posterior() {
    let (mut model, _) = setup(3);
    let other = MlpClassifier::init(0, &[64, 10, 8]).unwrap();
    let post = SwagDiagPosterior::new(other.flatten(), vec![1.0; other.dim()], 1).unwrap();
    let x = noisy_batch(3);
    let y = random_targets(x.len(), 8, 1);
    assert!(petal_loss(&mut model, x.inputs(), &y, &post, 1.0).is_err());
}

#[test]
fn gate_extremes() {
    let (model, post) = setup(4);
    let x = noisy_batch(4);
    let direct = softmax(&model.forward_frozen(x.inputs(), BnMode::Batch).unwrap()).unwrap();

    let cfg = PetalConfig { tau: 0.0, ..quick_cfg() };
    let mut st = AdaptState::new(&model, &post, &cfg, 0).unwrap();
    let before = st.augment_rng.clone();
    let pl = teacher_pseudo_label(&mut st, x.inputs(), &cfg).unwrap();
    assert_eq!(pl.probs, direct);
    assert_eq!(pl.augmented, 0);
    assert_eq!(st.augment_rng, before);

    let cfg = PetalConfig { tau: 1.5, ..quick_cfg() };
    let mut st = AdaptState::new(&model, &post, &cfg, 0).unwrap();
    let pl = teacher_pseudo_label(&mut st, x.inputs(), &cfg).unwrap();
    assert_eq!(pl.augmented, x.len());
    assert_ne!(pl.probs, direct);
    // oracle: replay the same augmentation draws and average by hand
    let mut rng = AdaptState::new(&model, &post, &cfg, 0).unwrap().augment_rng;
    let mut mean = vec![0.0; direct.len()];
    for _ in 0..cfg.k_aug {
        let xa = augment(x.inputs(), 8, &cfg.augment, &mut rng);
        let p = softmax(&model.forward_frozen(&xa, BnMode::Batch).unwrap()).unwrap();
        mean.iter_mut().zip(p.data()).for_each(|(m, v)| *m += v);
    }
    for (a, m) in pl.probs.data().iter().zip(&mean) {
        assert!((a - m / cfg.k_aug as f64).abs() < 1e-15);
    }
}

#[test]
fn identity_augmentations_average_to_the_direct_prediction() {
    let (model, post) = setup(5);
    let x = noisy_batch(5);
    let cfg = PetalConfig { tau: 2.0, k_aug: 2, augment: AugmentParams::identity(), ..PetalConfig::default() };
    let mut st = AdaptState::new(&model, &post, &cfg, 0).unwrap();
    let pl = teacher_pseudo_label(&mut st, x.inputs(), &cfg).unwrap();
    let direct = softmax(&model.forward_frozen(x.inputs(), BnMode::Batch).unwrap()).unwrap();
    assert_eq!(pl.probs, direct);
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let (model, post) = setup(6);
    let cfg = PetalConfig { eta: 0.0, restore: Restore::None, tau: 0.0, ..quick_cfg() };
    let mut st = AdaptState::new(&model, &post, &cfg, 1).unwrap();
    let x = noisy_batch(6);
    let rep = adapt_step(&mut st, &x, &post, &cfg).unwrap();
    assert_eq!(st.student.params(), model.params());
    assert_eq!(st.teacher.params(), model.params());
    assert_eq!(rep.predictions, softmax(&model.forward_frozen(x.inputs(), BnMode::Batch).unwrap()).unwrap());
    assert_eq!(rep.restored, 0);
    assert_eq!(st.t, 1);
}

#[test]
fn predictions_do_not_depend_on_the_current_update() {
    let (model, post) = setup(7);
    let cfg = quick_cfg();
    let mut st = AdaptState::new(&model, &post, &cfg, 2).unwrap();
    for seed in 0..3 {
        let x = noisy_batch(10 + seed);
        // pseudo-labels from a copy of the pre-step state
        let mut probe = st.clone();
        let expected = teacher_pseudo_label(&mut probe, x.inputs(), &cfg).unwrap().probs;
        let params_before = st.student.params().clone();
        let rep = adapt_step(&mut st, &x, &post, &cfg).unwrap();
        assert_eq!(rep.predictions, expected);
        assert_ne!(st.student.params(), &params_before);
    }
}

#[test]
fn fim_restore_count_is_exact_every_step() {
    let (model, post) = setup(8);
    let cfg = PetalConfig { restore: Restore::Fim { delta: 0.03 }, ..quick_cfg() };
    let mut st = AdaptState::new(&model, &post, &cfg, 3).unwrap();
    let expect = (0.03 * model.dim() as f64).floor() as usize;
    for s in 0..5 {
        let rep = adapt_step(&mut st, &noisy_batch(20 + s), &post, &cfg).unwrap();
        assert_eq!(rep.restored, expect);
    }
}

#[test]
fn full_restore_returns_to_source() {
    let (model, post) = setup(9);
    let cfg = PetalConfig { restore: Restore::Fim { delta: 1.0 }, ..quick_cfg() };
    let mut st = AdaptState::new(&model, &post, &cfg, 4).unwrap();
    adapt_step(&mut st, &noisy_batch(30), &post, &cfg).unwrap();
    assert_eq!(st.student.params(), st.theta0());
}

#[test]
fn cotta_is_petal_without_prior() {
    let (model, post) = setup(10);
    let petal = PetalConfig { alpha: 0.0, restore: Restore::Stochastic { rho: 0.01 }, ..quick_cfg() };
    let cotta = PetalConfig { method: Method::Cotta, ..petal.clone() };
    let mut a = AdaptState::new(&model, &post, &petal, 5).unwrap();
    let mut b = AdaptState::new(&model, &post, &cotta, 5).unwrap();
    for s in 0..10 {
        let x = noisy_batch(40 + s);
        let ra = step(&mut a, &x, &post, &petal).unwrap();
        let rb = step(&mut b, &x, &post, &cotta).unwrap();
        assert_eq!(a.student.params(), b.student.params());
        assert_eq!(a.teacher.params(), b.teacher.params());
        assert_eq!(ra, rb);
    }
}

#[test]
fn teacher_contracts_toward_a_frozen_student() {
    let (mut teacher, _) = setup(11);
    let (student, _) = setup(12);
    let pi = 0.9;
    let dist = |t: &MlpClassifier| -> Vec<f64> {
        t.params().values().iter().zip(student.params().values()).map(|(a, b)| a - b).collect()
    };
    let mut prev = dist(&teacher);
    for _ in 0..10 {
        ema_update(&mut teacher, &student, pi).unwrap();
        let now = dist(&teacher);
        for (n, p) in now.iter().zip(&prev) {
            assert!((n - pi * p).abs() <= 1e-12 * p.abs().max(1e-300) + 1e-15);
        }
        prev = now;
    }
}

#[test]
fn source_baseline_is_pure_evaluation() {
    let (model, post) = setup(13);
    let cfg = PetalConfig { method: Method::Source, ..PetalConfig::default() };
    let mut st = AdaptState::new(&model, &post, &cfg, 0).unwrap();
    let d = make_source_dataset(13, 4);
    let rep = baseline_step(&mut st, &UnlabeledBatch::new(d.images().clone()), &cfg).unwrap();
    let clean = evaluate(&model, d.images(), d.labels(), BnMode::Eval).unwrap();
    let mut acc = petal_core::metrics::MetricAccumulator::new();
    assert_eq!(acc.add_batch(0, &rep.predictions, d.labels()).unwrap(), clean);
    assert_eq!(st.student, model);
}

#[test]
fn tent_without_steps_matches_bn_adapt() {
    let (model, post) = setup(14);
    let tent = PetalConfig { method: Method::Tent, eta: 0.0, ..PetalConfig::default() };
    let bn = PetalConfig { method: Method::BnAdapt, ..PetalConfig::default() };
    let mut a = AdaptState::new(&model, &post, &tent, 0).unwrap();
    let mut b = AdaptState::new(&model, &post, &bn, 0).unwrap();
    for s in 0..3 {
        let x = noisy_batch(50 + s);
        let ra = baseline_step(&mut a, &x, &tent).unwrap();
        let rb = baseline_step(&mut b, &x, &bn).unwrap();
        assert_eq!(ra.predictions, rb.predictions);
    }
    assert_eq!(a.student.running_stats(), b.student.running_stats());
}

#[test]
fn tent_and_pseudo_label_only_touch_bn_affines() {
    let (model, post) = setup(15);
    for method in [Method::Tent, Method::PseudoLabel] {
        let cfg = PetalConfig { method, ..PetalConfig::default() };
        let mut st = AdaptState::new(&model, &post, &cfg, 0).unwrap();
        baseline_step(&mut st, &noisy_batch(60), &cfg).unwrap();
        for e in model.layout().entries() {
            let moved = st.student.params().values()[e.range()] != model.params().values()[e.range()];
            assert_eq!(moved, e.name.contains(".bn."), "{method} {}", e.name);
        }
    }
}

#[test]
fn baseline_step_rejects_adaptive_methods() {
    let (model, post) = setup(16);
    let cfg = PetalConfig::default();
    let mut st = AdaptState::new(&model, &post, &cfg, 0).unwrap();
    assert!(baseline_step(&mut st, &noisy_batch(1), &cfg).is_err());
}

#[test]
fn empty_schedule_gives_empty_report() {
    let (model, post) = setup(17);
    let cfg = quick_cfg();
    let mut st = AdaptState::new(&model, &post, &cfg, 0).unwrap();
    let d = make_source_dataset(1, 2);
    let r = run_lifelong(&mut st, &StreamSchedule::empty(4), &d, &post, &cfg, 0).unwrap();
    assert!(r.is_empty());
    assert!(r.overall.is_none() && r.segments.is_empty());
    assert_eq!(st.t, 0);
    assert_eq!(st.student, model);
}

#[test]
fn single_batch_run_equals_one_step() {
    let (model, post) = setup(18);
    let cfg = quick_cfg();
    let d = make_source_dataset(2, 4);
    let spec = CorruptionSpec::new(CorruptionKind::Contrast, 4).unwrap();
    let sched = StreamSchedule::new(vec![Segment { spec, batches: 1 }], 16).unwrap();

    let mut a = AdaptState::new(&model, &post, &cfg, 7).unwrap();
    let report = run_lifelong(&mut a, &sched, &d, &post, &cfg, 3).unwrap();

    let item = petal_core::bench::stream_batches(&sched, &d, ChaCha8Rng::seed_from_u64(3)).unwrap().next().unwrap();
    let mut b = AdaptState::new(&model, &post, &cfg, 7).unwrap();
    let rep = adapt_step(&mut b, &item.batch, &post, &cfg).unwrap();
    assert_eq!(a.student.params(), b.student.params());
    let mut acc = petal_core::metrics::MetricAccumulator::new();
    let m = acc.add_batch(0, &rep.predictions, item.labels.as_slice()).unwrap();
    assert_eq!(report.batches.len(), 1);
    assert_eq!(report.batches[0].error, m.error);
    assert_eq!(report.batches[0].nll, m.nll);
    assert_eq!(report.batches[0].restored, rep.restored);
}

#[test]
fn tent_online_resets_at_boundaries_only() {
    let (model, post) = setup(19);
    let cfg = PetalConfig { method: Method::Tent, tent_online: true, ..PetalConfig::default() };
    let d = make_source_dataset(2, 4);
    let seg = |k| Segment { spec: CorruptionSpec::new(k, 3).unwrap(), batches: 2 };
    let sched = StreamSchedule::new(vec![seg(CorruptionKind::Contrast), seg(CorruptionKind::BoxBlur)], 16).unwrap();
    let mut st = AdaptState::new(&model, &post, &cfg, 0).unwrap();
    let online = run_lifelong(&mut st, &sched, &d, &post, &cfg, 1).unwrap();
    let mut st2 = AdaptState::new(&model, &post, &PetalConfig { tent_online: false, ..cfg.clone() }, 0).unwrap();
    let continual = run_lifelong(&mut st2, &sched, &d, &post, &PetalConfig { tent_online: false, ..cfg.clone() }, 1).unwrap();
    assert_eq!(online.batches[..2], continual.batches[..2]);
    assert_ne!(online.batches[2], continual.batches[2]);
}

#[test]
fn threaded_augmentation_is_bit_identical() {
    let (model, post) = setup(20);
    let cfg = PetalConfig { tau: 2.0, k_aug: 7, ..PetalConfig::default() };
    let x = noisy_batch(70);
    let mut one = AdaptState::new(&model, &post, &cfg, 0).unwrap();
    let mut many = AdaptState::new(&model, &post, &cfg, 0).unwrap().with_threads(3);
    assert_eq!(
        teacher_pseudo_label(&mut one, x.inputs(), &cfg).unwrap(),
        teacher_pseudo_label(&mut many, x.inputs(), &cfg).unwrap()
    );
}

#[test]
fn posterior_mean_initializes_all_three_models() {
    let (model, _) = setup(21);
    let post = posterior_around(&model, 1);
    let st = AdaptState::new(&model, &post, &quick_cfg(), 0).unwrap();
    let mu: &FlatParams = post.mu();
    assert_eq!(st.student.params(), mu);
    assert_eq!(st.teacher.params(), mu);
    assert_eq!(st.theta0(), mu);
}
