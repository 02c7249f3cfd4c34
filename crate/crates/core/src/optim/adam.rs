use super::{AdamState, HyperParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::warp::WarpMatrix;

pub(crate) fn power(beta: f64, t: u64) -> f64 {
    beta.powi(t.min(i32::MAX as u64) as i32)
}

/// Bias-corrected moments `m / (1 − β₁ᵗ)` and `v / (1 − β₂ᵗ)`.
pub fn bias_correct(
    m: &Tensor,
    v: &Tensor,
    t: u64,
    beta1: f64,
    beta2: f64,
) -> Result<(Tensor, Tensor)> {
    if t == 0 {
        return Err(Error::contract("bias correction needs t >= 1"));
    }
    let c1 = 1.0 - power(beta1, t);
    let c2 = 1.0 - power(beta2, t);
    Ok((m.map(|x| x / c1), v.map(|x| x / c2)))
}

/// `m̂ / √(v̂ + ε)` elementwise, zero where the denominator is zero.
pub fn update_ratio(m_hat: &Tensor, v_hat: &Tensor, epsilon: f64) -> Result<Tensor> {
    m_hat.zip_map(v_hat, |m, v| {
        let den = (v + epsilon).sqrt();
        if den == 0.0 {
            0.0
        } else {
            m / den
        }
    })
}

/// Moment update shared by every Adam-family rule. Returns the new state with
/// `t` advanced; `v_max` is carried over untouched.
pub(crate) fn accumulate(state: &AdamState, g: &Tensor, h: &HyperParams) -> Result<AdamState> {
    let (b1, b2) = (h.beta1, h.beta2);
    let m = state.m.zip_map(g, |m, g| b1 * m + (1.0 - b1) * g)?;
    let v = state.v.zip_map(g, |v, g| b2 * v + (1.0 - b2) * (g * g))?;
    Ok(AdamState {
        m,
        v,
        t: state.t + 1,
        v_max: state.v_max.clone(),
    })
}

pub(crate) fn descend(w: &Tensor, ratio: &Tensor, eta: f64) -> Result<Tensor> {
    w.zip_map(ratio, |w, r| w - eta * r)
}

/// One Adam step with `ε` inside the square root.
pub fn adam_step(
    state: &AdamState,
    w: &Tensor,
    g: &Tensor,
    h: &HyperParams,
) -> Result<(AdamState, Tensor)> {
    state.check(w, g)?;
    adam_core(state, w, g, h)
}

fn adam_core(
    state: &AdamState,
    w: &Tensor,
    g: &Tensor,
    h: &HyperParams,
) -> Result<(AdamState, Tensor)> {
    let next = accumulate(state, g, h)?;
    let (m_hat, v_hat) = bias_correct(&next.m, &next.v, next.t, h.beta1, h.beta2)?;
    let ratio = update_ratio(&m_hat, &v_hat, h.epsilon)?;
    let w_next = descend(w, &ratio, h.eta)?;
    Ok((next, w_next))
}

/// One WarpAdam step: Adam driven by the warped gradient `P·g`.
///
/// With `P` the identity this performs exactly the arithmetic of
/// [`adam_step`].
pub fn warpadam_step(
    state: &AdamState,
    w: &Tensor,
    g: &Tensor,
    warp: &WarpMatrix,
    h: &HyperParams,
) -> Result<(AdamState, Tensor)> {
    state.check(w, g)?;
    let pg = warp.apply(g)?;
    adam_core(state, w, &pg, h)
}

/// The alternative placement: moments track the raw gradient and the warp
/// acts on the finished update, `w' = w − P·(η·m̂/√(v̂+ε))`.
pub fn warpadam_update_step(
    state: &AdamState,
    w: &Tensor,
    g: &Tensor,
    warp: &WarpMatrix,
    h: &HyperParams,
) -> Result<(AdamState, Tensor)> {
    state.check(w, g)?;
    let next = accumulate(state, g, h)?;
    let (m_hat, v_hat) = bias_correct(&next.m, &next.v, next.t, h.beta1, h.beta2)?;
    let ratio = update_ratio(&m_hat, &v_hat, h.epsilon)?;
    let step = warp.apply(&ratio.map(|r| h.eta * r))?;
    let w_next = w.zip_map(&step, |w, s| w - s)?;
    Ok((next, w_next))
}
