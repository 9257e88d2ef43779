//! Stroke-rendered digits standing in for MNIST when no IDX files are at
//! hand. Each digit is a fixed polyline skeleton, randomly rotated,
//! sheared, scaled, shifted and thickened, then drawn with an antialiased
//! distance ramp.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{digit_class_names, Dataset};

type Stroke = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Stroke {
    (0..=20)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 20.0;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Skeletons in a unit box, y pointing down.
fn skeleton(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.3, 0.45)],
        1 => vec![vec![(0.35, 0.2), (0.55, 0.05), (0.5, 0.95)]],
        2 => vec![vec![(0.2, 0.25), (0.3, 0.1), (0.5, 0.05), (0.7, 0.1), (0.78, 0.28), (0.7, 0.45), (0.2, 0.95), (0.85, 0.95)]],
        3 => vec![vec![(0.2, 0.1), (0.5, 0.05), (0.75, 0.15), (0.75, 0.35), (0.45, 0.5), (0.75, 0.62), (0.8, 0.8), (0.55, 0.95), (0.2, 0.9)]],
        4 => vec![vec![(0.65, 0.95), (0.65, 0.05), (0.15, 0.65), (0.85, 0.65)]],
        5 => vec![vec![(0.8, 0.05), (0.25, 0.05), (0.2, 0.45), (0.5, 0.4), (0.75, 0.5), (0.8, 0.72), (0.6, 0.93), (0.2, 0.9)]],
        6 => vec![vec![(0.7, 0.05), (0.4, 0.25), (0.22, 0.55), (0.25, 0.85), (0.5, 0.95), (0.75, 0.8), (0.72, 0.58), (0.5, 0.5), (0.25, 0.6)]],
        7 => vec![vec![(0.15, 0.05), (0.85, 0.05), (0.4, 0.95)]],
        8 => vec![ellipse(0.5, 0.28, 0.22, 0.22), ellipse(0.5, 0.7, 0.27, 0.25)],
        _ => vec![ellipse(0.5, 0.3, 0.25, 0.25), vec![(0.75, 0.3), (0.7, 0.6), (0.5, 0.95)]],
    }
}

/// One `[1, size, size]` digit; geometry is scaled from a 28-pixel canvas.
pub fn render_digit<T: Scalar, R: Rng + ?Sized>(digit: usize, size: usize, rng: &mut R) -> Tensor<T> {
    let unit = size as f64 / 28.0;
    let angle = rng.gen_range(-0.2..0.2);
    let scale = rng.gen_range(0.85..1.05);
    let shear = rng.gen_range(-0.2..0.2);
    let width = rng.gen_range(2.2..3.4) * unit;
    let dx = rng.gen_range(-1.5..1.5) * unit;
    let dy = rng.gen_range(-1.5..1.5) * unit;
    let bx = 20.0 * scale * unit;
    let (sin, cos) = f64::sin_cos(angle);
    let centre = size as f64 / 2.0 - 0.5;
    let mut segments = Vec::new();
    for stroke in skeleton(digit % 10) {
        let pts: Vec<(f64, f64)> = stroke
            .iter()
            .map(|&(x, y)| {
                let (x, y) = ((x - 0.5) * bx * 0.8, (y - 0.5) * bx);
                let x = x + shear * y;
                (x * cos - y * sin + centre + dx, x * sin + y * cos + centre + dy)
            })
            .collect();
        segments.extend(pts.windows(2).map(|w| (w[0], w[1])));
    }
    Tensor::from_fn(&[1, size, size], |i| {
        let (py, px) = ((i / size) as f64, (i % size) as f64);
        let d = segments
            .iter()
            .map(|&((x0, y0), (x1, y1))| {
                let (vx, vy) = (x1 - x0, y1 - y0);
                let t = (((px - x0) * vx + (py - y0) * vy) / (vx * vx + vy * vy + 1e-12)).clamp(0.0, 1.0);
                (px - x0 - t * vx).hypot(py - y0 - t * vy)
            })
            .fold(f64::INFINITY, f64::min);
        T::of((width / 2.0 + 0.5 - d).clamp(0.0, 1.0))
    })
}

/// `n` digits with uniformly drawn labels, reproducible from `seed`.
pub fn synthetic_digits<T: Scalar>(n: usize, size: usize, seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.gen_range(0..10);
        images.push(render_digit(label, size, &mut rng));
        labels.push(label);
    }
    Dataset {
        images,
        labels,
        class_names: digit_class_names(),
        native_size: Some([1, size, size]),
    }
}
