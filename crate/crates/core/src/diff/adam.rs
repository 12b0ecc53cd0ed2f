use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates and per-parameter learning rates for [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    lr: Vec<f64>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments, one learning rate for every parameter.
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        Self::with_rates(params, |_| lr)
    }

    /// Zero moments, learning rate chosen per parameter name.
    pub fn with_rates(params: &ParamSet<T>, lr: impl Fn(&str) -> f64) -> Self {
        let zeros = || params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
        AdamState { m: zeros(), v: zeros(), lr: params.ids().map(|id| lr(params.name(id))).collect(), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn lr(&self, index: usize) -> f64 {
        self.lr[index]
    }
}

/// One bias-corrected Adam update. Frozen parameters are skipped, and so is
/// every element whose gradient is exactly zero (its moments are left as-is),
/// which makes an all-zero gradient the identity on parameters.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters, {} gradients, {} moment slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    for id in params.ids() {
        let i = id.index();
        if grads[i].shape() != params.get(id).shape() || state.m[i].shape() != params.get(id).shape() {
            return Err(Error::shape(
                "adam_step",
                format!("`{}` is {:?}, gradient {:?}", params.name(id), params.get(id).shape(), grads[i].shape()),
            ));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (T::of(BETA1), T::of(BETA2), T::of(EPSILON));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for id in params.ids() {
        if !params.is_trainable(id) {
            continue;
        }
        let i = id.index();
        let lr = T::of(state.lr[i]);
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let g = grads[i].data();
        let p = params.get_mut(id).data_mut();
        for j in 0..p.len() {
            if g[j] == T::zero() {
                continue;
            }
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
