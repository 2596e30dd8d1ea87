use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::{grad_check, Eager, Graph, Ops, ParamStore, Shape, Tensor};
use crate::keying::{generate_schedule, BlockKey, KeySchedule};
use crate::pipeline::{ImageU8, PreprocessMode};

fn random<T: crate::diffcore::Element>(shape: Shape, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
}

fn config(n_blocks: usize, r: f64, hidden: usize, patch: usize) -> ModelConfig {
    ModelConfig {
        n_blocks,
        decay_rate: r,
        hidden,
        patch_size: patch,
        ..ModelConfig::default()
    }
}

fn random_model(n_blocks: usize, r: f64, seed: u64) -> Model {
    Model::new(config(n_blocks, r, 8, 2), Init::Random { output_std: 0.05 }, seed).unwrap()
}

const ITEM: (usize, usize, usize) = (12, 8, 8);

fn shape() -> Shape {
    Shape::new(2, ITEM.0, ITEM.1, ITEM.2)
}

fn key(seed: &[u8]) -> BlockKey {
    KeySchedule::from_passphrase(seed, 1, ITEM, 2).unwrap().blocks()[0].clone()
}

#[test]
fn decay_weight_examples() {
    assert_eq!(decay_weight(0, 0.3).unwrap(), 1.0);
    assert!((decay_weight(1, 0.6).unwrap() - 0.6).abs() < 1e-15);
    assert!((decay_weight(15, 0.6).unwrap() - 4.70185e-4).abs() < 1e-9);
    assert!(matches!(decay_weight(2, 0.0), Err(crate::Error::Config(_))));
    assert!(matches!(decay_weight(2, 1.5), Err(crate::Error::Config(_))));
}

#[test]
fn zero_block_with_identity_key_scales_secret() {
    let model = Model::new(config(1, 0.6, 8, 2), Init::Standard, 0).unwrap();
    let block = &model.blocks()[0];
    let (xh, xs) = (random::<f32>(shape(), 1), random::<f32>(shape(), 2));
    let id = BlockKey::identity(ITEM, 2).unwrap();
    let (h2, s2) = block
        .forward(&mut Eager, model.params(), &xh, &xs, Some(&id), 1.0, ScaleMode::Sigmoid)
        .unwrap();
    assert_eq!(h2, xh);
    let expected = xs.map(|v| v * 0.5f32.exp());
    assert!(s2.max_abs_diff(&expected).unwrap() < 1e-6);

    let (h0, s0) = block
        .inverse(&mut Eager, model.params(), &xh, &xs, Some(&id), 1.0, ScaleMode::Sigmoid)
        .unwrap();
    assert_eq!(h0, xh);
    let expected = xs.map(|v| v * (-0.5f32).exp());
    assert!(s0.max_abs_diff(&expected).unwrap() < 1e-6);
}

#[test]
fn block_round_trip_and_zero_weight() {
    let model = random_model(1, 1.0, 3);
    let block = &model.blocks()[0];
    let (xh, xs) = (random::<f32>(shape(), 4), random::<f32>(shape(), 5));
    let k = key(b"block");
    for scale in [ScaleMode::Sigmoid, ScaleMode::Centered { alpha: 1.0 }] {
        let (h2, s2) = block.forward(&mut Eager, model.params(), &xh, &xs, Some(&k), 0.7, scale).unwrap();
        let (h0, s0) = block.inverse(&mut Eager, model.params(), &h2, &s2, Some(&k), 0.7, scale).unwrap();
        assert!(h0.max_abs_diff(&xh).unwrap() < 1e-4);
        assert!(s0.max_abs_diff(&xs).unwrap() < 1e-4);
    }
    let (h2, _) = block
        .forward(&mut Eager, model.params(), &xh, &xs, Some(&k), 0.0, ScaleMode::Sigmoid)
        .unwrap();
    assert_eq!(h2, xh);
}

#[test]
fn wrong_block_key_breaks_recovery() {
    let model = random_model(1, 1.0, 6);
    let block = &model.blocks()[0];
    let (good, bad) = (key(b"right"), key(b"wrong"));
    let mut total = 0.0;
    let trials = 5;
    for t in 0..trials {
        let (xh, xs) = (random::<f32>(shape(), 10 + t), random::<f32>(shape(), 20 + t));
        let (h2, s2) = block
            .forward(&mut Eager, model.params(), &xh, &xs, Some(&good), 1.0, ScaleMode::Sigmoid)
            .unwrap();
        let (_, s0) = block
            .inverse(&mut Eager, model.params(), &h2, &s2, Some(&bad), 1.0, ScaleMode::Sigmoid)
            .unwrap();
        let d = s0.zip_map(&xs, |a, b| (a - b).abs()).unwrap().sum_f64() / xs.len() as f64;
        total += d;
    }
    assert!(total / trials as f64 > 0.1, "{}", total / trials as f64);
}

#[test]
fn stack_round_trip_eight_blocks() {
    for r in [1.0, 0.6] {
        let model = random_model(8, r, 7);
        let (xh, xs) = (random::<f32>(shape(), 8), random::<f32>(shape(), 9));
        let sched = generate_schedule(&crate::keying::derive_seed(b"k"), 8, ITEM, 2).unwrap();
        let (c, m) = model_forward(&xh, &xs, &sched, &model).unwrap();
        assert_eq!(c.shape(), xh.shape());
        assert_eq!(m.shape(), xs.shape());
        let (h0, s0) = model_inverse(&c, &m, &sched, &model).unwrap();
        assert!(h0.max_abs_diff(&xh).unwrap() < 1e-3);
        assert!(s0.max_abs_diff(&xs).unwrap() < 1e-3);
    }
}

#[test]
fn single_block_stack_is_block_forward() {
    let model = random_model(1, 0.6, 11);
    let (xh, xs) = (random::<f32>(shape(), 1), random::<f32>(shape(), 2));
    let sched = KeySchedule::from_passphrase(b"one", 1, ITEM, 2).unwrap();
    let (c, m) = model_forward(&xh, &xs, &sched, &model).unwrap();
    let (h2, s2) = model.blocks()[0]
        .forward(&mut Eager, model.params(), &xh, &xs, Some(&sched.blocks()[0]), 1.0, ScaleMode::Sigmoid)
        .unwrap();
    assert_eq!(c, h2);
    assert_eq!(m, s2);
}

#[test]
fn schedule_and_shape_are_checked() {
    let model = random_model(2, 0.6, 1);
    let x = random::<f32>(shape(), 1);
    let sched = KeySchedule::from_passphrase(b"k", 3, ITEM, 2).unwrap();
    assert!(matches!(model_forward(&x, &x, &sched, &model), Err(crate::Error::Config(_))));
    let sched = KeySchedule::from_passphrase(b"k", 2, ITEM, 2).unwrap();
    let y = random::<f32>(Shape::new(2, 12, 8, 4), 1);
    assert!(matches!(model_forward(&x, &y, &sched, &model), Err(crate::Error::Shape(_))));
}

#[test]
fn states_are_exported() {
    let model = random_model(3, 0.6, 1);
    let (xh, xs) = (random::<f32>(shape(), 1), random::<f32>(shape(), 2));
    let sched = KeySchedule::from_passphrase(b"k", 3, ITEM, 2).unwrap();
    let out = model.forward_with(&mut Eager, model.params(), &xh, &xs, &sched, true).unwrap();
    assert_eq!(out.secret_states.len(), 4);
    assert_eq!(out.secret_states[0], xs);
    assert_eq!(out.secret_states[3], out.missing);
}

#[test]
fn flipping_a_passphrase_byte_changes_the_secret() {
    let model = random_model(4, 0.6, 12);
    let (xh, xs) = (random::<f32>(shape(), 3), random::<f32>(shape(), 4));
    let good = KeySchedule::from_passphrase(b"passphrase", 4, ITEM, 2).unwrap();
    let bad = KeySchedule::from_passphrase(b"passphrasf", 4, ITEM, 2).unwrap();
    let (c, m) = model_forward(&xh, &xs, &good, &model).unwrap();
    let (_, s0) = model_inverse(&c, &m, &bad, &model).unwrap();
    let d = s0.zip_map(&xs, |a, b| (a - b).abs()).unwrap().sum_f64() / xs.len() as f64;
    assert!(d > 0.05, "{d}");
}

fn small_model() -> (Model, ParamStore<f64>, KeySchedule, Tensor<f64>, Tensor<f64>) {
    let model = Model::new(config(1, 0.6, 4, 2), Init::Random { output_std: 0.3 }, 13).unwrap();
    let store = model.params().cast::<f64>();
    let item = (12, 4, 4);
    let sched = KeySchedule::from_passphrase(b"grad", 1, item, 2).unwrap();
    let s = Shape::new(1, 12, 4, 4);
    (model, store, sched, random(s, 30), random(s, 31))
}

#[test]
fn subnet_gradients_match_differences() {
    let (model, store, _, x, _) = small_model();
    let block = &model.blocks()[0];
    let probe = random::<f64>(x.shape(), 40);
    for sub in block.subnets() {
        let scalar = |g: &mut Graph<f64>, input| -> crate::Result<_> {
            let y = sub.forward(g, &store, &input)?;
            let p = g.constant(probe.clone());
            let y = g.mul(&y, &p)?;
            g.sum(&y)
        };
        assert!(grad_check(scalar, &x, 1e-5).unwrap() < 1e-3);
        for id in sub.param_ids() {
            let err = grad_check(
                |g, v| {
                    g.bind_param(id, v);
                    let xc = g.constant(x.clone());
                    scalar(g, xc)
                },
                store.value(id),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-3, "{}: {err}", store.name(id));
        }
    }
}

#[test]
fn block_gradients_match_differences() {
    let (model, store, sched, xh, xs) = small_model();
    let block = &model.blocks()[0];
    let (p1, p2) = (random::<f64>(xh.shape(), 41), random::<f64>(xh.shape(), 42));
    let key = &sched.blocks()[0];
    let scalar = |g: &mut Graph<f64>, h, s| -> crate::Result<_> {
        let (h2, s2) = block.forward(g, &store, &h, &s, Some(key), 0.6, ScaleMode::Sigmoid)?;
        let (a, b) = (g.constant(p1.clone()), g.constant(p2.clone()));
        let h2 = g.mul(&h2, &a)?;
        let s2 = g.mul(&s2, &b)?;
        let t = g.add(&h2, &s2)?;
        g.sum(&t)
    };
    let err = grad_check(|g, h| { let s = g.constant(xs.clone()); scalar(g, h, s) }, &xh, 1e-5).unwrap();
    assert!(err < 1e-3, "host: {err}");
    let err = grad_check(|g, s| { let h = g.constant(xh.clone()); scalar(g, h, s) }, &xs, 1e-5).unwrap();
    assert!(err < 1e-3, "secret: {err}");
    for id in store.ids() {
        let err = grad_check(
            |g, v| {
                g.bind_param(id, v);
                let h = g.constant(xh.clone());
                let s = g.constant(xs.clone());
                scalar(g, h, s)
            },
            store.value(id),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "{}: {err}", store.name(id));
    }
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let mut model = random_model(2, 0.7, 14);
    model
        .set_preprocess(PreprocessMode::standardize([0.4123456789012345, 0.1, 0.3], [0.2718281828459045, 0.24462101657185878, 0.1]).unwrap())
        .unwrap();
    model.params_mut().set_step(37);
    let bytes = model.to_bytes().unwrap();
    let back = Model::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.config(), model.config());
    assert_eq!(back.steps(), 37);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(Model::load(&path).unwrap().to_bytes().unwrap(), bytes);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = random_model(1, 0.7, 1).to_bytes().unwrap();
    assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Model::from_bytes(&bad).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(Model::from_bytes(&long).is_err());
}

#[test]
fn key_free_model_ignores_passphrase() {
    let cfg = ModelConfig { keyed: false, ..config(2, 0.6, 4, 2) };
    let model = Model::new(cfg, Init::Random { output_std: 0.05 }, 2).unwrap();
    let a = model.schedule(b"one", 16, 16).unwrap();
    assert!(a.blocks().iter().all(|k| k.is_identity()));
}

#[test]
fn divergence_report_starts_at_the_secret() {
    let model = Model::new(ModelConfig::desk(), Init::Random { output_std: 0.05 }, 5).unwrap();
    let host = ImageU8::from_fn(16, 16, |x, y, c| (x * 9 + y * 4 + c * 30) as u8);
    let secret = ImageU8::from_fn(16, 16, |x, y, c| ((x * y + c * 70) % 256) as u8);
    let report = secret_divergence_report(&model, &host, &secret, b"k").unwrap();
    assert_eq!(report.rows.len(), 5);
    assert_eq!(report.rows[0].aligned.apd, 0.0);
    assert!((report.rows[0].aligned.ssim - 1.0).abs() < 1e-9);
    assert!(report.to_csv().unwrap().lines().count() == 6);
    assert!(!report.trend().is_empty());
}
