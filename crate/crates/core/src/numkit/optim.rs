//! Adam with decoupled weight decay.

use std::collections::BTreeMap;

use crate::numkit::{NamedTensors, NumkitError, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
}

impl<T: Scalar> AdamWConfig<T> {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr: T::lit(lr),
            ..Self::default()
        }
    }
}

impl<T: Scalar> Default for AdamWConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            weight_decay: T::lit(0.01),
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    first: Tensor<T>,
    second: Tensor<T>,
    steps: u64,
}

/// Moment estimates are created lazily, the first time a parameter
/// receives a gradient, and each parameter keeps its own step count for
/// bias correction. Parameters without a gradient in a step are skipped
/// entirely: no moment decay, no weight decay.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig<T>,
    moments: BTreeMap<String, Moments<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamWConfig<T>) -> Self {
        Self {
            config,
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    /// Number of `adamw_step` calls applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn param_steps(&self, name: &str) -> u64 {
        self.moments.get(name).map_or(0, |m| m.steps)
    }
}

/// Applies one AdamW update to every parameter named in `grads`.
pub fn adamw_step<T: Scalar>(
    params: &mut NamedTensors<T>,
    grads: &NamedTensors<T>,
    state: &mut OptimizerState<T>,
) -> Result<(), NumkitError> {
    // validate before mutating anything
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| NumkitError::UnknownParam(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(NumkitError::ShapeMismatch {
                op: "adamw_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }

    let AdamWConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let one = T::one();
    let decay = one - lr * weight_decay;
    for (name, g) in grads {
        let p = params.get_mut(name).expect("validated");
        let moments = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| Moments {
                first: Tensor::zeros(g.shape()),
                second: Tensor::zeros(g.shape()),
                steps: 0,
            });
        moments.steps += 1;
        let t = i32::try_from(moments.steps).unwrap_or(i32::MAX);
        let correction1 = one - beta1.powi(t);
        let correction2 = one - beta2.powi(t);
        let (first, second) = (moments.first.data_mut(), moments.second.data_mut());
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            first[i] = beta1 * first[i] + (one - beta1) * gi;
            second[i] = beta2 * second[i] + (one - beta2) * gi * gi;
            let m_hat = first[i] / correction1;
            let v_hat = second[i] / correction2;
            *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step += 1;
    Ok(())
}
