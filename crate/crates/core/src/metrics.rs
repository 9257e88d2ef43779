//! Reconstruction quality: PSNR, SSIM and the evaluation-side convergence
//! rule. Images are `[C, H, W]` tensors in `[0, 1]`; scores are always f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PSNR_CAP: f64 = 100.0;
/// Below this MSE the PSNR is reported as [`PSNR_CAP`].
pub const MSE_FLOOR: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// A reconstruction counts as non-random when it beats noise by this margin.
pub const CONVERGENCE_MARGIN_DB: f64 = 2.0;
pub const NOISE_SEED: u64 = 0x6e_6f69_7365;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("expected a [channels, height, width] image, got shape {0:?}")]
    NotAnImage(Vec<usize>),
    #[error("image is {h}x{w}; SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}")]
    TooSmall { h: usize, w: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub psnr_db: f64,
    pub ssim: f64,
    pub converged_eval: bool,
}

impl QualityScore {
    pub fn evaluate<T: Scalar>(x_star: &Tensor<T>, target: &Tensor<T>) -> Result<Self, MetricsError> {
        let psnr_db = psnr(x_star, target)?;
        Ok(Self {
            psnr_db,
            ssim: ssim(x_star, target)?,
            converged_eval: psnr_db >= noise_psnr(target, NOISE_SEED)? + CONVERGENCE_MARGIN_DB,
        })
    }
}

fn dims<T: Scalar>(a: &Tensor<T>) -> Result<[usize; 3], MetricsError> {
    match *a.shape() {
        [c, h, w] => Ok([c, h, w]),
        [h, w] => Ok([1, h, w]),
        _ => Err(MetricsError::NotAnImage(a.shape().to_vec())),
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<[usize; 3], MetricsError> {
    if a.shape() != b.shape() {
        return Err(MetricsError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    dims(a)
}

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, MetricsError> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, MetricsError> {
    let m = mse(a, b)?;
    if m < MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Channel average as an `[H, W]` plane in f64.
fn luma_plane<T: Scalar>(a: &Tensor<T>) -> Result<(Vec<f64>, usize, usize), MetricsError> {
    let [c, h, w] = dims(a)?;
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&a.data()[ch * h * w..(ch + 1) * h * w]) {
            *o += v.as_f64();
        }
    }
    out.iter_mut().for_each(|v| *v /= c as f64);
    Ok((out, h, w))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable valid-mode filtering with the SSIM window.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over every full window position, dynamic range 1.
/// RGB inputs are channel-averaged first.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, MetricsError> {
    same_shape(a, b)?;
    let (pa, h, w) = luma_plane(a)?;
    let (pb, _, _) = luma_plane(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::TooSmall { h, w });
    }
    let k = gaussian_kernel();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter(&pa, h, w, &k);
    let mu_b = filter(&pb, h, w, &k);
    let e_aa = filter(&prod(&pa, &pa), h, w, &k);
    let e_bb = filter(&prod(&pb, &pb), h, w, &k);
    let e_ab = filter(&prod(&pa, &pb), h, w, &k);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Uniform `[0, 1]` noise shaped like `like`, from its own seeded stream.
pub fn seeded_noise<T: Scalar>(like: &Tensor<T>, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(like.shape(), |_| T::of(rng.gen::<f64>()))
}

/// PSNR of seeded uniform noise against `target`: the "random outcome" level.
pub fn noise_psnr<T: Scalar>(target: &Tensor<T>, seed: u64) -> Result<f64, MetricsError> {
    psnr(&seeded_noise(target, seed), target)
}

/// True iff `x_star` beats seeded noise by [`CONVERGENCE_MARGIN_DB`].
pub fn eval_convergence<T: Scalar>(x_star: &Tensor<T>, target: &Tensor<T>) -> Result<bool, MetricsError> {
    Ok(psnr(x_star, target)? >= noise_psnr(target, NOISE_SEED)? + CONVERGENCE_MARGIN_DB)
}
