//! Per-primitive finite-difference fixtures.

use parvo_core::autodiff::grad_check;
use parvo_core::{Graph64, GraphError, NodeId, Tensor64};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Build = fn(&mut Graph64, &[NodeId]) -> Result<NodeId, GraphError>;

pub fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
    Tensor64::uniform(shape, lo, hi, rng)
}

/// Values with magnitude in `[lo, hi]` and random sign.
pub fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
    Tensor64::from_fn(shape, |_| {
        let m = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Checks each input of `build` against central differences after a
/// random linear scalarization of the output.
pub fn fd_primitive(name: &str, build: Build, inputs: &[Tensor64], rng: &mut ChaCha8Rng) -> f64 {
    let mut probe = Graph64::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| probe.constant(x.clone())).collect();
    let out = build(&mut probe, &ids).unwrap();
    let w = rand_away_from_zero(rng, probe.value(out).shape(), 0.5, 1.5);
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        let err = grad_check(
            |g, leaf| {
                let ids: Vec<NodeId> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| if i == k { leaf } else { g.constant(x.clone()) })
                    .collect();
                let y = build(g, &ids)?;
                let wn = g.constant(w.clone());
                let p = g.mul(y, wn)?;
                g.sum(p)
            },
            &inputs[k],
            1e-4,
        )
        .unwrap_or_else(|e| panic!("{name}: {e}"));
        worst = worst.max(err);
    }
    worst
}

pub struct Case {
    pub name: &'static str,
    pub build: Build,
    pub gen: fn(&mut ChaCha8Rng) -> Vec<Tensor64>,
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            build: |g, x| g.matmul(x[0], x[1]),
            gen: |r| vec![rand_t(r, &[3, 4], -1.0, 1.0), rand_t(r, &[4, 2], -1.0, 1.0)],
        },
        Case {
            name: "add",
            build: |g, x| g.add(x[0], x[1]),
            gen: |r| vec![rand_t(r, &[3, 4], -1.0, 1.0), rand_t(r, &[3, 4], -1.0, 1.0)],
        },
        Case {
            name: "add_broadcast",
            build: |g, x| g.add(x[0], x[1]),
            gen: |r| vec![rand_t(r, &[3, 4], -1.0, 1.0), rand_t(r, &[4], -1.0, 1.0)],
        },
        Case {
            name: "sub",
            build: |g, x| g.sub(x[0], x[1]),
            gen: |r| vec![rand_t(r, &[5], -1.0, 1.0), rand_t(r, &[5], -1.0, 1.0)],
        },
        Case {
            name: "mul",
            build: |g, x| g.mul(x[0], x[1]),
            gen: |r| vec![rand_t(r, &[2, 3], -1.0, 1.0), rand_t(r, &[2, 3], -1.0, 1.0)],
        },
        Case {
            name: "scale",
            build: |g, x| g.scale(x[0], 1.7),
            gen: |r| vec![rand_t(r, &[6], -1.0, 1.0)],
        },
        Case {
            name: "scale_by",
            build: |g, x| g.scale_by(x[0], x[1]),
            gen: |r| vec![rand_t(r, &[3, 4], -1.0, 1.0), rand_away_from_zero(r, &[1], 0.2, 2.0)],
        },
        Case {
            name: "recip",
            build: |g, x| g.recip(x[0]),
            gen: |r| vec![rand_away_from_zero(r, &[6], 0.5, 2.0)],
        },
        Case {
            name: "sum",
            build: |g, x| g.sum(x[0]),
            gen: |r| vec![rand_t(r, &[3, 3], -1.0, 1.0)],
        },
        Case {
            name: "reshape",
            build: |g, x| g.reshape(x[0], &[2, 6]),
            gen: |r| vec![rand_t(r, &[3, 4], -1.0, 1.0)],
        },
        Case {
            name: "transpose",
            build: |g, x| g.transpose(x[0]),
            gen: |r| vec![rand_t(r, &[3, 4], -1.0, 1.0)],
        },
        Case {
            name: "concat_rows",
            build: |g, x| g.concat_rows(x[0], x[1]),
            gen: |r| vec![rand_t(r, &[2, 3], -1.0, 1.0), rand_t(r, &[3, 3], -1.0, 1.0)],
        },
        Case {
            name: "conv2d",
            build: |g, x| g.conv2d(x[0], x[1], x[2]),
            gen: |r| {
                vec![
                    rand_t(r, &[2, 6, 6], 0.0, 1.0),
                    rand_t(r, &[3, 2, 3, 3], -1.0, 1.0),
                    rand_t(r, &[3], -1.0, 1.0),
                ]
            },
        },
        Case {
            name: "relu",
            build: |g, x| g.relu(x[0]),
            gen: |r| vec![rand_away_from_zero(r, &[8], 0.01, 2.0)],
        },
        Case {
            name: "softplus",
            build: |g, x| g.softplus(x[0]),
            gen: |r| vec![rand_t(r, &[8], -4.0, 4.0)],
        },
        Case {
            name: "softplus_prime",
            build: |g, x| g.softplus_prime(x[0]),
            gen: |r| vec![rand_t(r, &[8], -4.0, 4.0)],
        },
        Case {
            name: "l2_normalize",
            build: |g, x| g.l2_normalize(x[0]),
            gen: |r| vec![rand_away_from_zero(r, &[3, 5], 0.1, 1.0)],
        },
        Case {
            name: "softmax",
            build: |g, x| g.softmax(x[0]),
            gen: |r| vec![rand_t(r, &[2, 5], -2.0, 2.0)],
        },
        Case {
            name: "cross_entropy",
            build: |g, x| g.cross_entropy(x[0], 3),
            gen: |r| vec![rand_t(r, &[7], -3.0, 3.0)],
        },
        Case {
            name: "mean_pool",
            build: |g, x| g.mean_pool(x[0]),
            gen: |r| vec![rand_t(r, &[4, 5], -1.0, 1.0)],
        },
        Case {
            name: "squared_l2",
            build: |g, x| g.squared_l2(x[0], x[1]),
            gen: |r| vec![rand_t(r, &[6], -1.0, 1.0), rand_t(r, &[6], -1.0, 1.0)],
        },
        Case {
            name: "total_variation",
            build: |g, x| g.total_variation(x[0]),
            gen: |r| vec![rand_t(r, &[5, 5], 0.0, 1.0)],
        },
        Case {
            name: "total_variation_rgb",
            build: |g, x| g.total_variation(x[0]),
            gen: |r| vec![rand_t(r, &[2, 4, 5], 0.0, 1.0)],
        },
    ]
}
