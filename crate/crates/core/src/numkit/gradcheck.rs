//! Central finite differences, used as the oracle for analytic gradients.

use std::collections::BTreeMap;

use crate::numkit::{NamedTensors, NumkitError, Tensor};
use crate::scalar::Scalar;

fn eval<T: Scalar>(
    f: &mut impl FnMut(&NamedTensors<T>) -> Result<T, NumkitError>,
    params: &NamedTensors<T>,
) -> Result<T, NumkitError> {
    let v = f(params)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NumkitError::NonFiniteObjective)
    }
}

fn central<T: Scalar>(
    f: &mut impl FnMut(&NamedTensors<T>) -> Result<T, NumkitError>,
    params: &mut NamedTensors<T>,
    name: &str,
    index: usize,
    epsilon: T,
) -> Result<T, NumkitError> {
    let orig = params[name].data()[index];
    params.get_mut(name).unwrap().data_mut()[index] = orig + epsilon;
    let plus = eval(f, params);
    params.get_mut(name).unwrap().data_mut()[index] = orig - epsilon;
    let minus = eval(f, params);
    params.get_mut(name).unwrap().data_mut()[index] = orig;
    Ok((plus? - minus?) / (epsilon + epsilon))
}

/// Estimates `∂f/∂θ` for every coordinate of every tensor in `params`.
pub fn finite_diff_grad<T: Scalar>(
    mut f: impl FnMut(&NamedTensors<T>) -> Result<T, NumkitError>,
    params: &NamedTensors<T>,
    epsilon: T,
) -> Result<NamedTensors<T>, NumkitError> {
    if epsilon <= T::zero() {
        return Err(NumkitError::InvalidEpsilon);
    }
    let mut work = params.clone();
    let mut out = NamedTensors::new();
    for (name, tensor) in params {
        let mut grad = Tensor::zeros(tensor.shape());
        for i in 0..tensor.len() {
            grad.data_mut()[i] = central(&mut f, &mut work, name, i, epsilon)?;
        }
        out.insert(name.clone(), grad);
    }
    Ok(out)
}

/// Like [`finite_diff_grad`] but only at the listed flat coordinates.
/// Useful when the parameter count makes a full sweep too slow.
pub fn finite_diff_grad_at<T: Scalar>(
    mut f: impl FnMut(&NamedTensors<T>) -> Result<T, NumkitError>,
    params: &NamedTensors<T>,
    coords: &BTreeMap<String, Vec<usize>>,
    epsilon: T,
) -> Result<BTreeMap<String, Vec<T>>, NumkitError> {
    if epsilon <= T::zero() {
        return Err(NumkitError::InvalidEpsilon);
    }
    let mut work = params.clone();
    let mut out = BTreeMap::new();
    for (name, indices) in coords {
        let tensor = params
            .get(name)
            .ok_or_else(|| NumkitError::UnknownParam(name.clone()))?;
        let mut values = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= tensor.len() {
                return Err(NumkitError::IndexOutOfRange {
                    index: i,
                    bound: tensor.len(),
                });
            }
            values.push(central(&mut f, &mut work, name, i, epsilon)?);
        }
        out.insert(name.clone(), values);
    }
    Ok(out)
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps coordinates whose true
/// gradient is zero from dividing by rounding noise.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T, floor: T) -> T {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
