#![allow(dead_code)]

pub mod instances;
pub mod primitives;

use parvo_core::autodiff::{Activation, Graph};
use parvo_core::model::{EncoderKind, EncoderStructure, ModelConfig, PeftMode};
use parvo_core::{Model64, Tensor64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Small model: `size x size` grayscale, 8-dim features, softplus adapters.
pub fn small_config(mode: PeftMode, kind: EncoderKind, classes: usize, size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        height: size,
        width: size,
        encoder: EncoderStructure { kind, feature_dim: 8 },
        conv_channels: 2,
        embed_dim: 6,
        prompt_len: 2,
        text_hidden: 5,
        peft_mode: mode,
        adapter_activation: Activation::Softplus,
        class_names: (0..classes).map(|i| format!("class {i}")).collect(),
        seed,
        ..ModelConfig::default()
    }
}

pub fn small_model(mode: PeftMode, classes: usize, size: usize, seed: u64) -> Model64 {
    Model64::new(small_config(mode, EncoderKind::Conv2, classes, size, seed)).unwrap()
}

pub fn image(size: usize, seed: u64) -> Tensor64 {
    Tensor64::uniform(&[1, size, size], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `dL/dTF` by reverse mode on `Y = LS * IF * TF^T` with the text
/// features as a leaf; independent of any attack code.
pub fn exact_text_feature_grad(model: &Model64, x: &Tensor64, label: usize) -> Tensor64 {
    let tf = model.encode_text().unwrap();
    let imf = model.encode_image(x).unwrap();
    let d = imf.len();
    let mut g = Graph::new();
    let t = g.leaf(tf);
    let i = g.constant(imf.reshape(&[1, d]).unwrap());
    let tt = g.transpose(t).unwrap();
    let y = g.matmul(i, tt).unwrap();
    let y = g.as_vector(y).unwrap();
    let y = g.scale(y, model.logit_scale()).unwrap();
    let l = g.cross_entropy(y, label).unwrap();
    g.backward(l, None).unwrap().wrt(t).clone()
}

/// Direct 2-D evaluation of every 11x11 window, no separability.
pub fn ssim_oracle(a: &Tensor64, b: &Tensor64) -> f64 {
    let [c, h, w] = [a.shape()[0], a.shape()[1], a.shape()[2]];
    let plane = |t: &Tensor64, y: usize, x: usize| (0..c).map(|ch| t.data()[ch * h * w + y * w + x]).sum::<f64>() / c as f64;
    let mut win = [[0.0; 11]; 11];
    let mut s = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j] / s;
                    let (p, q) = (plane(a, y0 + i, x0 + j), plane(b, y0 + i, x0 + j));
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
