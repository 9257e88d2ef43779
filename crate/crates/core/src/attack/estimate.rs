use serde::{Deserialize, Serialize};

use crate::autodiff::dot;
use crate::client::LeakedUpdate;
use crate::model::MultimodalModel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::AttackError;

/// Checks that a leak was produced by a model of the same shape; a
/// frozen-weight mismatch only warns.
pub fn check_compatible<T: Scalar>(leak: &LeakedUpdate<T>, model: &MultimodalModel<T>) -> Result<(), AttackError> {
    leak.validate()?;
    if leak.peft_mode != model.mode() {
        return Err(AttackError::ModeMismatch {
            leak: leak.peft_mode,
            model: model.mode(),
        });
    }
    if leak.class_names.len() != model.num_classes() {
        return Err(AttackError::Incompatible(format!(
            "leak has {} classes, model has {}",
            leak.class_names.len(),
            model.num_classes()
        )));
    }
    if [leak.channels, leak.image_height, leak.image_width] != model.config().image_shape() {
        return Err(AttackError::Incompatible("leak image size differs from the model's".into()));
    }
    for (name, p) in [("gradients", &leak.gradients), ("updated_params", &leak.updated_params)] {
        if p.as_ref().is_some_and(|p| !p.same_structure(model.peft())) {
            return Err(AttackError::Incompatible(format!("leaked {name} do not match the model's PEFT parameters")));
        }
    }
    if let Some(w) = leak.fingerprint_warning(model) {
        log::warn!("{w}");
    }
    Ok(())
}

/// Text features under the client's updated parameters, `TE(P - eta grad)`.
/// Forward only; nothing is differentiated through the text tower.
pub fn estimate_tf_update<T: Scalar>(leak: &LeakedUpdate<T>, model: &MultimodalModel<T>) -> Result<Tensor<T>, AttackError> {
    check_compatible(leak, model)?;
    let updated = leak.updated(model.peft())?;
    Ok(model.encode_text_with(&updated)?)
}

/// `(TF - TF') / eta`
pub fn estimate_text_feature_grad<T: Scalar>(tf: &Tensor<T>, tf_updated: &Tensor<T>, eta: T) -> Result<Tensor<T>, AttackError> {
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(AttackError::Eta(eta.as_f64()));
    }
    Ok(tf.sub(tf_updated)?.map(|v| v / eta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPrediction {
    pub label: usize,
    /// The strict sign rule singled out exactly one row.
    pub confident: bool,
}

/// Ground-truth label from the sign pattern of `grad` `[C, d]`: the row
/// anti-correlated with every other row.
pub fn predict_label<T: Scalar>(grad: &Tensor<T>) -> Result<LabelPrediction, AttackError> {
    predict_label_with_prior(grad, None)
}

/// As [`predict_label`]. Ties left by the fallback rule are broken with
/// `reference`, a typical image feature: label `i` implies an image
/// feature along `-grad[i]`, and the best-aligned hypothesis wins. With
/// two classes the sign pattern alone is symmetric, so this is the only
/// information that separates the labels.
pub fn predict_label_with_prior<T: Scalar>(grad: &Tensor<T>, reference: Option<&Tensor<T>>) -> Result<LabelPrediction, AttackError> {
    let (c, d) = match *grad.shape() {
        [c, d] => (c, d),
        _ => return Err(AttackError::Shape(format!("expected a [classes, dim] gradient, got {:?}", grad.shape()))),
    };
    if c < 2 {
        return Err(AttackError::TooFewClasses(c));
    }
    if grad.data().iter().all(|v| *v == T::zero()) {
        return Err(AttackError::ZeroGradient);
    }
    if let Some(r) = reference {
        if r.len() != d {
            return Err(AttackError::Shape(format!("reference feature has {} entries, expected {d}", r.len())));
        }
    }
    let gram: Vec<Vec<T>> = (0..c)
        .map(|i| (0..c).map(|j| dot(grad.row(i), grad.row(j))).collect())
        .collect();
    let strict: Vec<usize> = (0..c)
        .filter(|&i| (0..c).all(|j| j == i || gram[i][j] < T::zero()))
        .collect();
    if let [label] = strict[..] {
        return Ok(LabelPrediction { label, confident: true });
    }
    let score = |i: usize| -> i64 {
        (0..c)
            .filter(|&j| j != i)
            .map(|j| {
                let v = gram[i][j];
                if v > T::zero() {
                    1
                } else if v < T::zero() {
                    -1
                } else {
                    0
                }
            })
            .sum()
    };
    let best = (0..c).map(score).min().expect("c >= 2");
    let tied: Vec<usize> = (0..c).filter(|&i| score(i) == best).collect();
    let label = match reference {
        Some(r) if tied.len() > 1 => {
            let align = |i: usize| {
                let row = grad.row(i);
                let n = dot(row, row).sqrt();
                if n > T::zero() {
                    -dot(row, r.data()) / n
                } else {
                    T::neg_infinity()
                }
            };
            let mut best_i = tied[0];
            for &i in &tied[1..] {
                if align(i) > align(best_i) {
                    best_i = i;
                }
            }
            best_i
        }
        _ => tied[0],
    };
    Ok(LabelPrediction { label, confident: false })
}
