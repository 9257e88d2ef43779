use std::sync::Arc;

use parvo_core::autodiff::{grad_check, Activation};
use parvo_core::model::{
    logits, loss, loss_grad, EncoderKind, EncoderStructure, Linear, ModelConfig, ModelError, PeftMode, PeftParams,
    TextEncoder,
};
use parvo_core::{Model64, Tensor64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(mode: PeftMode, kind: EncoderKind, seed: u64) -> ModelConfig {
    ModelConfig {
        channels: 1,
        height: 4,
        width: 4,
        encoder: EncoderStructure { kind, feature_dim: 8 },
        conv_channels: 2,
        embed_dim: 6,
        prompt_len: 2,
        text_hidden: 5,
        text_layers: 2,
        peft_mode: mode,
        adapter_activation: if mode == PeftMode::DoubleAdapter {
            Activation::Softplus
        } else {
            Activation::Relu
        },
        class_names: vec!["cat".into(), "dog".into(), "sea lion".into()],
        seed,
        ..ModelConfig::default()
    }
}

fn image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor64 {
    Tensor64::uniform(&[1, h, w], 0.0, 1.0, rng)
}

fn fd_peft(model: &Model64, x: &Tensor64, label: usize, h: f64) -> PeftParams<f64> {
    let base = model.peft().clone();
    let mut out = base.zeros_like();
    let n = base.tensors().len();
    for k in 0..n {
        let len = base.tensors()[k].len();
        for i in 0..len {
            let mut up = base.clone();
            up.tensors_mut()[k].data_mut()[i] += h;
            let mut down = base.clone();
            down.tensors_mut()[k].data_mut()[i] -= h;
            let d = (model.loss_with(x, label, &up).unwrap() - model.loss_with(x, label, &down).unwrap()) / (2.0 * h);
            out.tensors_mut()[k].data_mut()[i] = d;
        }
    }
    out
}

fn max_rel(ad: &PeftParams<f64>, cd: &PeftParams<f64>) -> f64 {
    ad.tensors()
        .iter()
        .zip(cd.tensors())
        .flat_map(|(a, c)| a.data().iter().zip(c.data()).map(|(&a, &c)| (a - c).abs() / (c.abs() + 1e-8)))
        .fold(0.0, f64::max)
}

#[test]
fn image_features_are_unit_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [EncoderKind::Mlp, EncoderKind::Conv2, EncoderKind::Res1, EncoderKind::Res3] {
        let m = Model64::new(tiny(PeftMode::SoftPrompt, kind, 4)).unwrap();
        let f = m.encode_image(&image(&mut rng, 4, 4)).unwrap();
        assert_eq!(f.shape(), &[8]);
        assert!((f.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn identity_mlp_encoder_passes_normalized_pixels_through() {
    let cfg = ModelConfig {
        height: 2,
        width: 2,
        encoder: EncoderStructure {
            kind: EncoderKind::Mlp,
            feature_dim: 4,
        },
        ..tiny(PeftMode::SoftPrompt, EncoderKind::Mlp, 0)
    };
    let mut m = Model64::new(cfg).unwrap();
    let eye = Tensor64::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
    *m.frozen_mut().image.head_mut() = Linear::new(eye, Tensor64::zeros(&[4]));
    let x = Tensor64::new(vec![2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
    assert_eq!(m.encode_image(&x).unwrap().data(), &[0.5, 0.5, 0.5, 0.5]);
}

#[test]
fn image_feature_jacobian_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = Model64::new(tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 7)).unwrap();
    for _ in 0..8 {
        let x = image(&mut rng, 4, 4);
        let w = Tensor64::from_fn(&[1, 8], |_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
        let err = grad_check(
            |g, leaf| {
                let f = m.image_feature_node(g, leaf, None).map_err(|e| match e {
                    ModelError::Graph(e) => e,
                    other => panic!("{other}"),
                })?;
                let wn = g.constant(w.clone());
                let p = g.mul(f, wn)?;
                g.sum(p)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "{err:e}");
    }
}

#[test]
fn wrong_image_size_is_rejected() {
    let m = Model64::new(tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 0)).unwrap();
    let err = m.encode_image(&Tensor64::zeros(&[1, 5, 4])).unwrap_err();
    assert!(matches!(err, ModelError::ImageShape { .. }), "{err}");
}

#[test]
fn text_features_are_unit_rows() {
    for mode in PeftMode::ALL {
        let mut cfg = tiny(mode, EncoderKind::Conv2, 3);
        cfg.adapter_activation = Activation::Softplus;
        let m = Model64::new(cfg).unwrap();
        let tf = m.encode_text().unwrap();
        assert_eq!(tf.shape(), &[3, 8]);
        for i in 0..3 {
            let n: f64 = tf.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn permuting_classes_permutes_text_rows() {
    let m = Model64::new(tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 5)).unwrap();
    let tf = m.encode_text().unwrap();
    let perm = [2, 0, 1];
    let names = perm.iter().map(|&i| m.class_names()[i].clone()).collect();
    let pm = m.with_class_names(names).unwrap();
    let ptf = pm.encode_text().unwrap();
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(ptf.row(row), tf.row(src));
    }
}

#[test]
fn zero_prompt_differs_from_absent_prompt() {
    // Zero prompt tokens dilute the mean pool; no prompt does not.
    let mut with = tiny(PeftMode::TextAdapter, EncoderKind::Conv2, 9);
    with.prompt_len = 2;
    let mut m = Model64::new(with.clone()).unwrap();
    m.frozen_mut().context = Some(Arc::new(Tensor64::zeros(&[2, 6])));
    let mut without = m.clone();
    without.frozen_mut().context = None;
    let a = m.encode_text().unwrap();
    let b = without.encode_text().unwrap();
    assert!(a.max_abs_diff(&b).unwrap() > 1e-3);
    // regression snapshot from the first verified build
    let snap_a = [0.0, 0.18114777109721822, 0.0];
    let snap_b = [0.0, 0.21038591471934323, 0.0];
    for (k, &i) in [0usize, 9, 23].iter().enumerate() {
        assert!((a.data()[i] - snap_a[k]).abs() < 1e-12);
        assert!((b.data()[i] - snap_b[k]).abs() < 1e-12);
    }
}

#[test]
fn logits_of_orthonormal_features() {
    let imf = Tensor64::from_vec(vec![1.0, 0.0, 0.0]);
    let tf = Tensor64::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    assert_eq!(logits(&imf, &tf, 100.0).unwrap().data(), &[100.0, 0.0, 0.0]);
    assert_eq!(logits(&imf, &tf, 200.0).unwrap().data(), &[200.0, 0.0, 0.0]);
}

#[test]
fn logits_are_bounded_by_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let unit = |rng: &mut ChaCha8Rng, n: usize| {
        let v = Tensor64::uniform(&[n], -1.0, 1.0, rng);
        v.scale(1.0 / v.norm())
    };
    for _ in 0..1000 {
        let imf = unit(&mut rng, 6);
        let rows: Vec<Vec<f64>> = (0..4).map(|_| unit(&mut rng, 6).into_data()).collect();
        let tf = Tensor64::from_rows(&rows);
        let y = logits(&imf, &tf, 100.0).unwrap();
        assert!(y.max_abs() <= 100.0 + 1e-12);
    }
}

#[test]
fn cross_entropy_of_uniform_logits() {
    let y = Tensor64::full(&[10], 1.5);
    assert!((loss(&y, 4).unwrap() - 10f64.ln()).abs() < 1e-15);
    assert!(matches!(loss(&y, 10), Err(ModelError::Label { .. })));
}

#[test]
fn loss_gradient_signs_follow_the_label() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let c = rng.gen_range(2..=10);
        let y = Tensor64::uniform(&[c], -100.0, 100.0, &mut rng);
        let gt = rng.gen_range(0..c);
        let d = loss_grad(&y, gt).unwrap();
        for (j, &v) in d.data().iter().enumerate() {
            if j == gt {
                assert!(v < 0.0, "{d:?}");
            } else {
                assert!(v >= 0.0, "{d:?}");
            }
        }
        assert!(d.sum().abs() < 1e-15);
    }
}

#[test]
fn peft_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for mode in PeftMode::ALL {
        for seed in 0..3 {
            let m = Model64::new(tiny(mode, EncoderKind::Conv2, seed)).unwrap();
            let x = image(&mut rng, 4, 4);
            let label = rng.gen_range(0..3);
            let (ad, _) = m.peft_grads(&x, label).unwrap();
            let cd = fd_peft(&m, &x, label, 1e-3);
            let err = max_rel(&ad, &cd);
            assert!(err < 1e-4, "{mode}: {err:e}");
        }
    }
}

#[test]
fn small_step_against_gradient_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..20 {
        let mode = PeftMode::ALL[i % 3];
        let mut cfg = tiny(mode, EncoderKind::Conv2, 100 + i as u64);
        // narrow relu adapter bottlenecks can die completely
        cfg.encoder.feature_dim = 32;
        let m = Model64::new(cfg).unwrap();
        let x = image(&mut rng, 4, 4);
        let label = rng.gen_range(0..3);
        let (g, l0) = m.peft_grads(&x, label).unwrap();
        assert!(g.norm() > 0.0);
        let stepped = m.peft().sgd_step(&g, 1e-4).unwrap();
        assert!(m.loss_with(&x, label, &stepped).unwrap() < l0);
    }
}

#[test]
fn soft_prompt_mode_leaks_only_the_prompt() {
    let m = Model64::new(tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 1)).unwrap();
    let (g, _) = m.peft_grads(&Tensor64::full(&[4, 4], 0.5), 0).unwrap();
    assert!(g.prompt.is_some());
    assert!(g.text_adapter.is_none() && g.image_adapter.is_none());
    assert_eq!(g.prompt.unwrap().shape(), &[2, 6]);
}

#[test]
fn hot_and_frozen_parameters_partition_the_model() {
    for mode in PeftMode::ALL {
        let mut cfg = tiny(mode, EncoderKind::Res1, 2);
        cfg.adapter_activation = Activation::Softplus;
        let m = Model64::new(cfg).unwrap();
        let (hot, frozen) = m.parameter_partition();
        assert!(!hot.is_empty());
        assert!(hot.iter().all(|h| !frozen.contains(h)));
        match mode {
            PeftMode::SoftPrompt => assert_eq!(hot, vec!["prompt"]),
            PeftMode::TextAdapter => assert!(hot.iter().all(|h| h.starts_with("text_adapter"))),
            PeftMode::DoubleAdapter => assert_eq!(hot.len(), 8),
        }
        assert_eq!(frozen.contains(&"context".to_string()), mode != PeftMode::SoftPrompt);
    }
}

#[test]
fn double_adapter_requires_softplus() {
    let mut cfg = tiny(PeftMode::DoubleAdapter, EncoderKind::Conv2, 0);
    cfg.adapter_activation = Activation::Relu;
    let m = Model64::new(cfg).unwrap();
    let err = m.peft_grads(&Tensor64::full(&[4, 4], 0.5), 0).unwrap_err();
    assert!(matches!(err, ModelError::NotTwiceDifferentiable("relu")), "{err}");
}

#[test]
fn class_names_are_validated() {
    let mut cfg = tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 0);
    cfg.class_names = vec!["cat".into(), "".into()];
    assert!(matches!(Model64::new(cfg.clone()), Err(ModelError::EmptyClassName(1))));
    cfg.class_names = vec!["cat".into(), "cat".into()];
    assert!(matches!(Model64::new(cfg.clone()), Err(ModelError::DuplicateClass(_))));
    cfg.class_names = vec![];
    assert!(Model64::new(cfg).is_err());
}

#[test]
fn text_features_ignore_the_image_and_image_features_ignore_class_names() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = Model64::new(tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 3)).unwrap();
    let x = image(&mut rng, 4, 4);
    let f = m.encode_image(&x).unwrap();
    let renamed = m.with_class_names(vec!["ant".into(), "bee".into()]).unwrap();
    assert_eq!(renamed.encode_image(&x).unwrap(), f);
    // text features are computed without any image
    let tf = m.encode_text().unwrap();
    let _ = m.predict(&image(&mut rng, 4, 4)).unwrap();
    assert_eq!(m.encode_text().unwrap(), tf);
}

#[test]
fn json_round_trip_is_bit_exact() {
    for mode in PeftMode::ALL {
        let mut cfg = tiny(mode, EncoderKind::Res1, 21);
        cfg.adapter_activation = Activation::Softplus;
        let m = Model64::new(cfg).unwrap();
        let back = Model64::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.frozen(), m.frozen());
        assert_eq!(back.peft(), m.peft());
        assert_eq!(back.fingerprint(), m.fingerprint());
    }
}

#[test]
fn model_version_is_checked() {
    let m = Model64::new(tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 0)).unwrap();
    let json = m.to_json().unwrap().replacen("\"version\":1", "\"version\":7", 1);
    assert!(matches!(Model64::from_json(&json), Err(ModelError::Version { found: 7, .. })));
}

#[test]
fn fingerprint_tracks_frozen_weights_only() {
    let m = Model64::new(tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 0)).unwrap();
    let mut hot = m.clone();
    hot.set_peft(m.peft().scale(2.0)).unwrap();
    assert_eq!(hot.fingerprint(), m.fingerprint());
    let other = Model64::new(tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 1)).unwrap();
    assert_ne!(other.fingerprint(), m.fingerprint());
}

#[test]
fn deeper_text_encoder_can_be_swapped_in() {
    let m = Model64::new(tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 0)).unwrap();
    let mut cfg = m.config().clone();
    cfg.text_layers = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let table = m.tokenizer().table_size();
    let deep = TextEncoder::init(&cfg, table, &mut rng);
    let m4 = m.with_text_encoder(deep).unwrap();
    assert_eq!(m4.frozen().text.layers.len(), 4);
    assert_eq!(m4.encode_text().unwrap().shape(), &[3, 8]);
}

#[test]
fn f32_models_build() {
    let m = parvo_core::Model32::new(tiny(PeftMode::SoftPrompt, EncoderKind::Conv2, 0)).unwrap();
    let f = m.encode_image(&parvo_core::Tensor32::full(&[4, 4], 0.5)).unwrap();
    assert!((f.norm() - 1.0).abs() < 1e-5);
}

proptest! {
    #[test]
    fn argmax_is_invariant_to_the_logit_scale(
        imf in prop::collection::vec(-1.0f64..1.0, 5),
        tf in prop::collection::vec(-1.0f64..1.0, 20),
        ls in 1e-3f64..1e3,
    ) {
        let imf = Tensor64::from_vec(imf);
        let tf = Tensor64::new(vec![4, 5], tf).unwrap();
        let argmax = |y: &Tensor64| y.data().iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0;
        let a = argmax(&logits(&imf, &tf, 1.0).unwrap());
        let b = argmax(&logits(&imf, &tf, ls).unwrap());
        prop_assert_eq!(a, b);
    }
}

#[test]
fn names_parse_back_from_display() {
    for k in [EncoderKind::Mlp].into_iter().chain(EncoderKind::SWEEP) {
        assert_eq!(k.to_string().parse::<EncoderKind>().unwrap(), k);
    }
    for m in PeftMode::ALL {
        assert_eq!(m.to_string().parse::<PeftMode>().unwrap(), m);
    }
    assert_eq!("double-adapter".parse::<PeftMode>().unwrap(), PeftMode::DoubleAdapter);
    assert!("lora".parse::<PeftMode>().is_err());
}
