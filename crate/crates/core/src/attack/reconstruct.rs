use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::client::LeakedUpdate;
use crate::model::{MultimodalModel, PeftMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::estimate::{check_compatible, estimate_text_feature_grad, estimate_tf_update, predict_label_with_prior};
use super::objective::{LabelSource, MatchingObjective};
use super::{AttackConfig, AttackError, InitDistribution, LabelPrediction, Optimizer};

/// Loss ratio below which a run counts as converged.
pub const CONVERGED_RATIO: f64 = 1e-3;
/// Loss ratio above which a run is stopped as diverged.
pub const DIVERGED_RATIO: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReconstructionResult<T> {
    pub x_star: Tensor<T>,
    pub predicted_label: usize,
    /// False when the label came from the fallback rule or a soft label.
    pub label_confident: bool,
    /// `softmax(z)` at the end of a joint-label run.
    pub soft_label: Option<Vec<T>>,
    /// Objective before every step, then once more at the final image.
    pub loss_curve: Vec<T>,
    pub converged: bool,
    pub diverged: bool,
    pub iterations_run: usize,
}

/// Starting image (and soft label) for `config.seed`. The image is drawn
/// first, so every attack variant starts from the same pixels.
pub fn initial_state<T: Scalar>(model: &MultimodalModel<T>, config: &AttackConfig, with_soft_label: bool) -> (Tensor<T>, Option<Tensor<T>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shape = model.config().image_shape();
    let mut x = match config.init_distribution {
        InitDistribution::Uniform01 => Tensor::uniform(&shape, 0.0, 1.0, &mut rng),
        InitDistribution::Gaussian => {
            let n = Normal::new(0.5, 0.25).expect("valid normal");
            Tensor::from_fn(&shape, |_| T::of(n.sample(&mut rng)))
        }
    };
    if config.box_project {
        x = x.clamp(T::zero(), T::one());
    }
    let z = with_soft_label.then(|| {
        let n = Normal::new(0.0, 1.0).expect("valid normal");
        Tensor::from_fn(&[model.num_classes()], |_| T::of(n.sample(&mut rng)))
    });
    (x, z)
}

/// Image feature of a mid-gray image, the label tie-break prior.
pub fn reference_feature<T: Scalar>(model: &MultimodalModel<T>) -> Result<Tensor<T>, AttackError> {
    let gray = Tensor::full(&model.config().image_shape(), T::of(0.5));
    Ok(model.encode_image(&gray)?)
}

/// Reverse-estimated text-feature gradient and the label it implies.
pub fn estimate_target<T: Scalar>(
    leak: &LeakedUpdate<T>,
    model: &MultimodalModel<T>,
) -> Result<(Tensor<T>, Tensor<T>, LabelPrediction), AttackError> {
    let tf = model.encode_text()?;
    let tf_updated = estimate_tf_update(leak, model)?;
    let grad = estimate_text_feature_grad(&tf, &tf_updated, leak.eta)?;
    let reference = reference_feature(model)?;
    let label = predict_label_with_prior(&grad, Some(&reference))?;
    Ok((tf, grad, label))
}

/// Label prediction, then image optimization against the
/// reverse-estimated text-feature gradient (plus the leaked image-adapter
/// gradient in double-adapter mode).
pub fn reconstruct<T: Scalar>(
    leak: &LeakedUpdate<T>,
    model: &MultimodalModel<T>,
    config: &AttackConfig,
) -> Result<ReconstructionResult<T>, AttackError> {
    config.validate()?;
    let (tf, grad, label) = estimate_target(leak, model)?;
    let objective = feature_objective(leak, model, tf, grad, LabelSource::Fixed(label.label), config)?;
    let mut result = optimize(&objective, model, config)?;
    result.predicted_label = label.label;
    result.label_confident = label.confident;
    Ok(result)
}

/// As [`reconstruct`] but without label prediction: the label is a soft
/// distribution optimized jointly with the image.
pub fn reconstruct_without_label_prediction<T: Scalar>(
    leak: &LeakedUpdate<T>,
    model: &MultimodalModel<T>,
    config: &AttackConfig,
) -> Result<ReconstructionResult<T>, AttackError> {
    config.validate()?;
    let tf = model.encode_text()?;
    let tf_updated = estimate_tf_update(leak, model)?;
    let grad = estimate_text_feature_grad(&tf, &tf_updated, leak.eta)?;
    let objective = feature_objective(leak, model, tf, grad, LabelSource::Joint, config)?;
    optimize(&objective, model, config)
}

/// Raw transfer of gradient matching: image and soft label optimized to
/// reproduce the leaked hot-parameter gradients through both towers,
/// with no label prediction and no reverse estimation.
pub fn reconstruct_raw_dlg<T: Scalar>(
    leak: &LeakedUpdate<T>,
    model: &MultimodalModel<T>,
    config: &AttackConfig,
) -> Result<ReconstructionResult<T>, AttackError> {
    config.validate()?;
    check_compatible(leak, model)?;
    let target = leak.gradient(model.peft())?;
    let mut objective = MatchingObjective::params(model, &target, LabelSource::Joint, config.matching_loss)?;
    if model.mode() == PeftMode::DoubleAdapter {
        let img = target.image_adapter.as_ref().expect("same structure");
        objective = objective.with_image_target(img)?;
    }
    optimize(&objective, model, config)
}

fn feature_objective<'m, T: Scalar>(
    leak: &LeakedUpdate<T>,
    model: &'m MultimodalModel<T>,
    tf: Tensor<T>,
    grad: Tensor<T>,
    label: LabelSource,
    config: &AttackConfig,
) -> Result<MatchingObjective<'m, T>, AttackError> {
    let objective = MatchingObjective::features(model, tf, grad, label, config.matching_loss)?;
    if model.mode() == PeftMode::DoubleAdapter {
        let target = leak.gradient(model.peft())?;
        let img = target.image_adapter.as_ref().expect("double-adapter leak");
        return objective.with_image_target(img);
    }
    Ok(objective)
}

/// Runs the configured optimizer on `objective` from the seeded start.
pub fn optimize<T: Scalar>(
    objective: &MatchingObjective<'_, T>,
    model: &MultimodalModel<T>,
    config: &AttackConfig,
) -> Result<ReconstructionResult<T>, AttackError> {
    config.validate()?;
    let joint = objective.label() == LabelSource::Joint;
    let (x, z) = initial_state(model, config, joint);
    let mut state = State { x, z };
    let run = match config.optimizer {
        Optimizer::Adam => adam(objective, config, &mut state)?,
        Optimizer::LineSearch => line_search(objective, config, &mut state)?,
    };
    let first = run.curve[0];
    let last = *run.curve.last().expect("nonempty");
    let converged = !run.diverged && last.is_finite() && last <= T::of(CONVERGED_RATIO) * first;
    let (predicted_label, soft_label) = match (objective.label(), &state.z) {
        (LabelSource::Fixed(l), _) => (l, None),
        (LabelSource::Joint, Some(z)) => {
            let p = softmax(z.data());
            let arg = argmax(&p);
            (arg, Some(p))
        }
        (LabelSource::Joint, None) => unreachable!("joint runs carry a soft label"),
    };
    Ok(ReconstructionResult {
        x_star: state.x,
        predicted_label,
        label_confident: false,
        soft_label,
        loss_curve: run.curve,
        converged,
        diverged: run.diverged,
        iterations_run: run.steps,
    })
}

struct State<T> {
    x: Tensor<T>,
    z: Option<Tensor<T>>,
}

struct Run<T> {
    curve: Vec<T>,
    steps: usize,
    diverged: bool,
}

fn diverging<T: Scalar>(loss: T, first: Option<T>) -> bool {
    !loss.is_finite() || first.is_some_and(|f| loss > T::of(DIVERGED_RATIO) * f)
}

fn project<T: Scalar>(x: &mut Tensor<T>, config: &AttackConfig) {
    if config.box_project {
        for v in x.data_mut() {
            *v = v.max(T::zero()).min(T::one());
        }
    }
}

#[derive(Clone)]
struct AdamMoments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> AdamMoments<T> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    fn step(&mut self, p: &mut [T], g: &[T], lr: T, t: i32) {
        let (b1, b2, eps) = (T::of(Self::B1), T::of(Self::B2), T::of(Self::EPS));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

fn adam<T: Scalar>(objective: &MatchingObjective<'_, T>, config: &AttackConfig, state: &mut State<T>) -> Result<Run<T>, AttackError> {
    let mut mx = AdamMoments::new(state.x.len());
    let mut mz = state.z.as_ref().map(|z| AdamMoments::new(z.len()));
    let mut curve = Vec::with_capacity(config.iterations + 1);
    let mut steps = 0;
    for k in 0..config.iterations {
        let alpha = T::of(config.alpha_at(k));
        let (loss, gx, gz) = objective.loss_and_grad(&state.x, state.z.as_ref(), alpha)?;
        if diverging(loss, curve.first().copied()) {
            curve.push(loss);
            return Ok(Run { curve, steps, diverged: true });
        }
        curve.push(loss);
        let lr = T::of(config.step_at(k));
        let t = (k + 1) as i32;
        mx.step(state.x.data_mut(), gx.data(), lr, t);
        project(&mut state.x, config);
        if let (Some(z), Some(gz), Some(m)) = (state.z.as_mut(), gz, mz.as_mut()) {
            m.step(z.data_mut(), gz.data(), lr, t);
        }
        steps += 1;
    }
    let final_loss = objective.loss(&state.x, state.z.as_ref(), T::of(config.alpha_at(config.iterations - 1)))?;
    let diverged = diverging(final_loss, curve.first().copied());
    curve.push(final_loss);
    Ok(Run { curve, steps, diverged })
}

/// Projected gradient descent with Armijo backtracking. The step grows
/// after each accepted move and halves on rejection.
fn line_search<T: Scalar>(
    objective: &MatchingObjective<'_, T>,
    config: &AttackConfig,
    state: &mut State<T>,
) -> Result<Run<T>, AttackError> {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 60;
    let mut curve = Vec::with_capacity(config.iterations + 1);
    let mut steps = 0;
    let mut t = T::of(config.step_size);
    let mut alpha = T::of(config.alpha_at(0));
    for k in 0..config.iterations {
        alpha = T::of(config.alpha_at(k));
        let (loss, gx, gz) = objective.loss_and_grad(&state.x, state.z.as_ref(), alpha)?;
        if diverging(loss, curve.first().copied()) {
            curve.push(loss);
            return Ok(Run { curve, steps, diverged: true });
        }
        curve.push(loss);
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let mut x = state.x.sub_scaled(t, &gx)?;
            project(&mut x, config);
            let z = match (&state.z, &gz) {
                (Some(z), Some(g)) => Some(z.sub_scaled(t, g)?),
                _ => None,
            };
            let mut decrease = state.x.sub(&x)?.dot(&gx)?;
            if let (Some(z0), Some(z1), Some(g)) = (&state.z, &z, &gz) {
                decrease += z0.sub(z1)?.dot(g)?;
            }
            let cand = objective.loss(&x, z.as_ref(), alpha)?;
            if cand.is_finite() && cand <= loss - T::of(ARMIJO) * decrease {
                state.x = x;
                state.z = z;
                accepted = true;
                break;
            }
            t = t * T::of(0.5);
        }
        if !accepted {
            break;
        }
        t = t * T::of(2.0);
        steps += 1;
    }
    let final_loss = objective.loss(&state.x, state.z.as_ref(), alpha)?;
    curve.push(final_loss);
    Ok(Run { curve, steps, diverged: false })
}

fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    crate::autodiff::softmax(z)
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}
