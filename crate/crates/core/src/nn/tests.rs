use super::*;
use crate::dataset::{Dataset, LabeledExample};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> ModelSpec {
    ModelSpec::scaled(36, 8)
}

fn random_batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0))
}

/// Central-difference gradient of the loss with respect to every parameter,
/// compared component-wise against the analytic gradient.
fn max_rel_error(model: &PolicyModel<f64>, x: &Array2<f64>, labels: &[i8], mode: Mode) -> f64 {
    let (_, grads) = model.loss_and_gradients(x.view(), labels, None, mode).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    let n_tensors = analytic.len();
    for t in 0..n_tensors {
        for i in 0..analytic[t].len() {
            let orig = probe.params_mut()[t][i];
            probe.params_mut()[t][i] = orig + h;
            let up = probe.loss_and_gradients(x.view(), labels, None, mode).unwrap().0;
            probe.params_mut()[t][i] = orig - h;
            let down = probe.loss_and_gradients(x.view(), labels, None, mode).unwrap().0;
            probe.params_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn init_shapes_and_determinism() {
    let spec = ModelSpec::standard(360);
    assert_eq!(spec.hidden_layers(), 8);
    let a = PolicyModel::<f32>::init(spec.clone(), 7).unwrap();
    let b = PolicyModel::<f32>::init(spec, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.units[0].dense.w.dim(), (360, 512));
    assert_eq!(a.output.w.dim(), (64, 10));
    assert!(a.units.iter().all(|u| u.bn.gamma.iter().all(|&g| g == 1.0)));
    let c = PolicyModel::<f32>::init(ModelSpec::standard(360), 8).unwrap();
    assert_ne!(a, c);
}

#[test]
fn spec_validation() {
    let mut s = ModelSpec::standard(10);
    s.block_width = 128;
    assert!(s.validate().is_err());
    let mut s = ModelSpec::standard(10);
    s.output_dim = 9;
    assert!(s.validate().is_err());
    assert!(ModelSpec::standard(0).validate().is_err());
}

#[test]
fn softmax_rows_sum_to_one() {
    let m = PolicyModel::<f64>::init(small_spec(), 1).unwrap();
    let x = random_batch(5, 36, 2) * 50.0;
    for mode in [Mode::Train, Mode::Eval] {
        let p = m.forward(x.view(), mode).unwrap();
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
    let zeros = Array2::<f64>::zeros((1, 36));
    let p = m.forward(zeros.view(), Mode::Eval).unwrap();
    assert_eq!(p.dim(), (1, 10));
    assert!((p.sum() - 1.0).abs() < 1e-6);
}

#[test]
fn forward_errors_and_eval_determinism() {
    let m = PolicyModel::<f32>::init(small_spec(), 1).unwrap();
    let x = Array2::<f32>::zeros((1, 36));
    assert!(m.forward(x.view(), Mode::Train).is_err());
    let bad = Array2::<f32>::zeros((3, 35));
    assert!(matches!(m.forward(bad.view(), Mode::Eval), Err(Error::ShapeMismatch { .. })));
    let x = random_batch(4, 36, 3).mapv(|v| v as f32);
    assert_eq!(m.forward(x.view(), Mode::Eval).unwrap(), m.forward(x.view(), Mode::Eval).unwrap());
}

#[test]
fn uniform_output_loss_is_ln10() {
    let mut m = PolicyModel::<f64>::init(small_spec(), 1).unwrap();
    m.output.w.fill(0.0);
    m.output.b.fill(0.0);
    let x = random_batch(4, 36, 4);
    let (loss, _) = m.loss_and_gradients(x.view(), &[-1, 0, 5, 8], None, Mode::Train).unwrap();
    assert!((loss - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn zero_class_weight_drops_example() {
    let m = PolicyModel::<f64>::init(small_spec(), 1).unwrap();
    let x = random_batch(2, 36, 5);
    let mut w = [1.0; 10];
    w[3] = 0.0; // label 2
    let (both, _) = m.loss_and_gradients(x.view(), &[2, 7], Some(&w), Mode::Eval).unwrap();
    let single = x.slice(ndarray::s![1..2, ..]).to_owned();
    let (only, _) = m.loss_and_gradients(single.view(), &[7], None, Mode::Eval).unwrap();
    assert!((both - only).abs() < 1e-12);
    assert!(matches!(
        m.loss_and_gradients(x.view(), &[2, 9], None, Mode::Eval),
        Err(Error::LabelOutOfRange(9))
    ));
}

/// Moves BN scale/shift off their initial values so no pre-activation sits
/// exactly on a ReLU kink.
fn generic_point(m: &mut PolicyModel<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for u in &mut m.units {
        u.bn.gamma.mapv_inplace(|_| rng.gen_range(0.5..1.5));
        u.bn.beta.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    }
    m.output.b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
}

#[test]
fn gradients_match_finite_differences_frozen_bn() {
    let mut m = PolicyModel::<f64>::init(small_spec(), 11).unwrap();
    generic_point(&mut m, 1);
    m.freeze_bn_to_batch(random_batch(16, 36, 15).view()).unwrap();
    let x = random_batch(3, 36, 12);
    let err = max_rel_error(&m, &x, &[3, -1, 6], Mode::Eval);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradients_match_finite_differences_batch_stats() {
    let mut m = PolicyModel::<f64>::init(small_spec(), 13).unwrap();
    generic_point(&mut m, 2);
    let x = random_batch(6, 36, 14);
    let err = max_rel_error(&m, &x, &[0, 1, 2, 3, 8, -1], Mode::Train);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn identity_shortcut_passes_input() {
    let mut m = PolicyModel::<f64>::init(small_spec(), 3).unwrap();
    let k1 = m.spec.stem_widths.len();
    for k in [k1, k1 + 1] {
        m.units[k].dense.w.fill(0.0);
        m.units[k].dense.b.fill(0.0);
    }
    let x = random_batch(3, 36, 6);
    let cache = m.forward_cached(x.view(), Mode::Eval);
    let block_in = relu(&cache.units[k1 - 1].pre_act);
    let block_out = relu(&cache.units[k1 + 1].pre_act);
    assert_eq!(block_in, block_out);
}

fn separable(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|t| {
            let (level, label) = if t % 2 == 0 { (-92.0, 8) } else { (-62.0, -1) };
            LabeledExample {
                window: (0..d).map(|_| level + rng.gen_range(-1.5f32..1.5)).collect(),
                label,
                t,
            }
        })
        .collect();
    Dataset::from_examples(examples, d / 3).unwrap()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 32,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn learns_separable_fixture() {
    let train_ds = separable(256, 36, 1);
    let val_ds = separable(200, 36, 2);
    let init = PolicyModel::<f32>::init(small_spec(), 9).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        adam: AdamConfig {
            lr: 5e-3,
            ..AdamConfig::default()
        },
        ..quick_config()
    };
    let (model, hist) = train(&init, &train_ds, &val_ds, &cfg).unwrap();
    assert_eq!(hist.epochs.len(), 40);
    let best = hist.best().unwrap();
    assert!(best.val_acc >= 0.99, "{hist:?}");
    let (_, acc) = evaluate(&model, &train_ds, None).unwrap();
    assert!(acc >= 0.99, "train acc {acc}");

    let net = InferenceNet::new(&model);
    let held = separable(100, 36, 3);
    let hits = (0..held.len())
        .filter(|&i| class_to_label_ok(net.predict_class(held.window(i)).unwrap(), held.labels()[i]))
        .count();
    assert!(hits >= 99, "{hits}");
}

fn class_to_label_ok(class: usize, label: i8) -> bool {
    crate::dataset::class_to_label(class) == label
}

#[test]
fn training_is_deterministic_and_zero_epochs_is_identity() {
    let train_ds = separable(64, 36, 1);
    let val_ds = separable(16, 36, 2);
    let init = PolicyModel::<f32>::init(small_spec(), 9).unwrap();
    let mut cfg = quick_config();
    cfg.epochs = 3;
    let (a, ha) = train(&init, &train_ds, &val_ds, &cfg).unwrap();
    let (b, hb) = train(&init, &train_ds, &val_ds, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);

    cfg.epochs = 0;
    let (c, hc) = train(&init, &train_ds, &val_ds, &cfg).unwrap();
    assert_eq!(c, init);
    assert!(hc.epochs.is_empty());

    let wrong = separable(16, 39, 2);
    assert!(train(&init, &wrong, &val_ds, &quick_config()).is_err());
}

#[test]
fn inference_net_matches_eval_forward() {
    let train_ds = separable(64, 36, 1);
    let val_ds = separable(16, 36, 2);
    let init = PolicyModel::<f32>::init(small_spec(), 4).unwrap();
    let mut cfg = quick_config();
    cfg.epochs = 2;
    let (model, _) = train(&init, &train_ds, &val_ds, &cfg).unwrap();
    let net = InferenceNet::new(&model);
    let probs = model.predict_windows((0..val_ds.len()).map(|i| val_ds.window(i))).unwrap();
    for i in 0..val_ds.len() {
        let logits = net.logits(val_ds.window(i)).unwrap();
        let mut p: Vec<f64> = logits.iter().map(|&v| (v as f64).exp()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        for (a, b) in p.iter().zip(probs.row(i)) {
            assert!((a - *b as f64).abs() < 1e-4);
        }
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dlm");
    let train_ds = separable(64, 36, 1);
    let init = PolicyModel::<f32>::init(small_spec(), 4).unwrap();
    let mut cfg = quick_config();
    cfg.epochs = 1;
    let (model, _) = train(&init, &train_ds, &separable(8, 36, 2), &cfg).unwrap();
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    let x = model.normalize_windows((0..8).map(|i| train_ds.window(i))).unwrap();
    assert_eq!(
        model.forward(x.view(), Mode::Eval).unwrap(),
        back.forward(x.view(), Mode::Eval).unwrap()
    );

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[1] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Format(_))));

    let good = io::model_to_bytes(&model);
    assert!(matches!(
        io::model_from_bytes(&good[..good.len() - 4]),
        Err(Error::Format(_))
    ));

    let other = separable(16, 39, 3);
    assert!(matches!(evaluate(&back, &other, None), Err(Error::ShapeMismatch { .. })));
}
