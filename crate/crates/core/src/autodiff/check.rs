use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Graph, GraphError, NodeId};

fn eval<T, F>(f: &F, x: &Tensor<T>) -> Result<T, GraphError>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, NodeId) -> Result<NodeId, GraphError>,
{
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone());
    let out = f(&mut g, leaf)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(GraphError::NonScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Central-difference gradient of the scalar graph builder `f` at `x`.
pub fn central_difference<T, F>(f: F, x: &Tensor<T>, step: T) -> Result<Tensor<T>, GraphError>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, NodeId) -> Result<NodeId, GraphError>,
{
    let two_h = step + step;
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / two_h;
    }
    Ok(out)
}

/// Max over coordinates of `|ad - cd| / (|cd| + 1e-8)` where `ad` is the
/// reverse-mode gradient and `cd` the central difference with `step`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, step: T) -> Result<T, GraphError>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, NodeId) -> Result<NodeId, GraphError>,
{
    assert!(step > T::zero(), "finite-difference step must be positive");
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone());
    let out = f(&mut g, leaf)?;
    if g.value(out).len() != 1 {
        return Err(GraphError::NonScalar(g.value(out).shape().to_vec()));
    }
    let ad = g.backward(out, None)?.take(leaf).expect("leaf gradient");
    let cd = central_difference(&f, x, step)?;
    let floor = T::of(1e-8);
    Ok(ad
        .data()
        .iter()
        .zip(cd.data())
        .map(|(&a, &c)| (a - c).abs() / (c.abs() + floor))
        .fold(T::zero(), T::max))
}
