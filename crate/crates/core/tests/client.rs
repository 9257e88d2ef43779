use parvo_core::autodiff::Activation;
use parvo_core::client::{LEAK_FORMAT_VERSION, LEAK_MAGIC};
use parvo_core::model::{EncoderKind, EncoderStructure, ModelConfig, PeftMode};
use parvo_core::{client_step, ClientError, Leak64, Model64, Tensor64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(mode: PeftMode, seed: u64) -> Model64 {
    Model64::new(ModelConfig {
        height: 6,
        width: 6,
        encoder: EncoderStructure {
            kind: EncoderKind::Conv2,
            feature_dim: 8,
        },
        conv_channels: 2,
        embed_dim: 6,
        prompt_len: 2,
        text_hidden: 5,
        peft_mode: mode,
        adapter_activation: Activation::Softplus,
        class_names: vec!["zero".into(), "one".into(), "two".into()],
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn private_image(seed: u64) -> Tensor64 {
    Tensor64::uniform(&[1, 6, 6], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn step_is_consistent_in_every_mode() {
    for mode in PeftMode::ALL {
        let m = model(mode, 1);
        let leak = client_step(&m, &private_image(2), 1, 0.05).unwrap();
        assert!(leak.consistency_error(m.peft()).unwrap() < 1e-12, "{mode}");
        let (g, _) = m.peft_grads(&private_image(2), 1).unwrap();
        assert_eq!(leak.gradients.as_ref().unwrap(), &g);
        assert_eq!(leak.peft_mode, mode);
        assert_eq!((leak.channels, leak.image_height, leak.image_width), (1, 6, 6));
    }
}

#[test]
fn gradient_recovered_from_updated_params() {
    let m = model(PeftMode::SoftPrompt, 3);
    let mut leak = client_step(&m, &private_image(4), 0, 0.1).unwrap();
    let g = leak.gradients.take().unwrap();
    let rec = leak.gradient(m.peft()).unwrap();
    assert!(rec.max_abs_diff(&g).unwrap() < 1e-10);
}

#[test]
fn bad_inputs_rejected() {
    let m = model(PeftMode::SoftPrompt, 5);
    assert!(matches!(client_step(&m, &private_image(1), 0, 0.0), Err(ClientError::Eta(_))));
    assert!(matches!(client_step(&m, &private_image(1), 0, -1.0), Err(ClientError::Eta(_))));
    let mut x = private_image(1);
    x.data_mut()[3] = 1.5;
    assert!(matches!(client_step(&m, &x, 0, 0.1), Err(ClientError::PixelRange)));
    assert!(client_step(&m, &private_image(1), 3, 0.1).is_err());
    let wrong = Tensor64::zeros(&[1, 5, 6]);
    assert!(client_step(&m, &wrong, 0, 0.1).is_err());
}

#[test]
fn file_round_trip_is_exact() {
    let m = model(PeftMode::DoubleAdapter, 6);
    let leak = client_step(&m, &private_image(7), 2, 0.01).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.leak");
    leak.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], LEAK_MAGIC);
    let (back, warning) = Leak64::load(&path, Some(&m)).unwrap();
    assert_eq!(back, leak);
    assert!(warning.is_none());
}

#[test]
fn corrupt_files_give_distinct_errors() {
    let m = model(PeftMode::SoftPrompt, 8);
    let bytes = client_step(&m, &private_image(9), 1, 0.01).unwrap().to_bytes().unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let e = Leak64::from_bytes(&bad_magic).unwrap_err();
    assert!(matches!(e, ClientError::NotLeakFile));
    assert!(e.to_string().contains("not a leaked-update file"));
    assert!(matches!(Leak64::from_bytes(b"{}"), Err(ClientError::NotLeakFile)));

    for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Leak64::from_bytes(&bytes[..cut]), Err(ClientError::Truncated)), "cut {cut}");
    }

    let text = String::from_utf8(bytes[8..].to_vec()).unwrap();
    let bumped = text.replacen(
        &format!("\"version\":{LEAK_FORMAT_VERSION}"),
        &format!("\"version\":{}", LEAK_FORMAT_VERSION + 1),
        1,
    );
    assert_ne!(bumped, text);
    let mut v2 = LEAK_MAGIC.to_vec();
    v2.extend(bumped.as_bytes());
    assert!(matches!(Leak64::from_bytes(&v2), Err(ClientError::Version { found: 2, expected: 1 })));
}

#[test]
fn fingerprint_mismatch_warns_but_loads() {
    let m = model(PeftMode::SoftPrompt, 10);
    let other = model(PeftMode::SoftPrompt, 11);
    let leak = client_step(&m, &private_image(12), 0, 0.01).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.leak");
    leak.save(&path).unwrap();
    let (back, warning) = Leak64::load(&path, Some(&other)).unwrap();
    assert_eq!(back, leak);
    assert!(warning.unwrap().contains("frozen-weight mismatch"));
}

#[test]
fn f32_step_tracks_f64() {
    let m = model(PeftMode::TextAdapter, 13);
    let m32 = parvo_core::Model32::from_json(&m.to_json().unwrap()).unwrap();
    let x = private_image(14);
    let a = client_step(&m, &x, 1, 0.1).unwrap();
    let b = client_step(&m32, &x.cast(), 1, 0.1f32).unwrap();
    let d = a.gradients.unwrap().cast::<f32>().max_abs_diff(&b.gradients.unwrap()).unwrap();
    assert!(d < 1e-4, "{d}");
}
