//! Attack objectives and instances shared by the attack tests and the
//! acceptance run.

use parvo_core::attack::{AttackError, LabelSource, MatchingLoss, MatchingObjective};
use parvo_core::autodiff::GraphError;
use parvo_core::model::{EncoderKind, EncoderStructure, Linear, ModelConfig, PeftMode};
use parvo_core::{client_step, Model64, Tensor64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{exact_text_feature_grad, small_config};

pub fn graph_err(e: AttackError) -> GraphError {
    match e {
        AttackError::Graph(e) => e,
        other => panic!("{other}"),
    }
}

pub fn objectives<'m>(m: &'m Model64, x: &Tensor64) -> Vec<(String, MatchingObjective<'m, f64>)> {
    let leak = client_step(m, x, 1, 1e-3).unwrap();
    let grad = leak.gradient(m.peft()).unwrap();
    let tf = m.encode_text().unwrap();
    let target = exact_text_feature_grad(m, x, 1).map(|v| v * 0.9);
    let mut out = Vec::new();
    for kind in [MatchingLoss::SquaredL2, MatchingLoss::Cosine] {
        for label in [LabelSource::Fixed(1), LabelSource::Joint] {
            let mut f = MatchingObjective::features(m, tf.clone(), target.clone(), label, kind).unwrap();
            let mut p = MatchingObjective::params(m, &grad, label, kind).unwrap();
            if m.mode() == PeftMode::DoubleAdapter {
                let img = grad.image_adapter.as_ref().unwrap().clone();
                f = f.with_image_target(&img).unwrap();
                p = p.with_image_target(&img).unwrap();
            }
            out.push((format!("features {kind:?} {label:?}"), f));
            out.push((format!("params {kind:?} {label:?}"), p));
        }
    }
    out
}

/// Linear pipeline: `IF = W x + b`, no normalization, unit logit scale.
pub fn convex_instance(seed: u64) -> (Model64, Tensor64) {
    let cfg = ModelConfig {
        logit_scale: 1.0,
        normalize_features: false,
        encoder: EncoderStructure {
            kind: EncoderKind::Mlp,
            feature_dim: 9,
        },
        ..small_config(PeftMode::SoftPrompt, EncoderKind::Mlp, 2, 3, seed)
    };
    let mut m = Model64::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor64::from_fn(&[9, 9], |i| if i / 9 == i % 9 { 1.0 } else { 0.0 } + rng.gen_range(-0.2..0.2));
    let b = Tensor64::from_fn(&[9], |_| rng.gen_range(-0.5..0.5));
    *m.frozen_mut().image.head_mut() = Linear::new(w, b);
    let x = Tensor64::uniform(&[1, 3, 3], 0.1, 0.9, &mut rng);
    (m, x)
}
