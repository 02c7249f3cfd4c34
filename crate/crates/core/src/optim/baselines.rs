use super::adam::{accumulate, adam_step, bias_correct, descend, power, update_ratio};
use super::{AdamState, HyperParams, OptimizerKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `ρ∞ = 2 / (1 − β₂) − 1`.
pub fn radam_rho_inf(beta2: f64) -> f64 {
    2.0 / (1.0 - beta2) - 1.0
}

/// Length of the approximated simple moving average at step `t`:
/// `ρ_t = ρ∞ − 2tβ₂ᵗ / (1 − β₂ᵗ)`.
pub fn radam_rho(t: u64, beta2: f64) -> f64 {
    let bt = power(beta2, t);
    radam_rho_inf(beta2) - 2.0 * t as f64 * bt / (1.0 - bt)
}

/// Variance rectification term `r_t`. Only defined for `ρ_t > 4`.
pub fn radam_rectifier(rho_t: f64, rho_inf: f64) -> f64 {
    (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
}

/// One step of a comparison optimizer.
///
/// `Adam` is accepted and forwards to [`adam_step`]. `WarpAdam` is rejected
/// because it needs a warp matrix.
pub fn baseline_step(
    kind: OptimizerKind,
    state: &AdamState,
    w: &Tensor,
    g: &Tensor,
    h: &HyperParams,
) -> Result<(AdamState, Tensor)> {
    state.check(w, g)?;
    match kind {
        OptimizerKind::Sgd => {
            let w_next = w.zip_map(g, |w, g| w - h.eta * g)?;
            Ok((
                AdamState {
                    t: state.t + 1,
                    ..state.clone()
                },
                w_next,
            ))
        }
        OptimizerKind::Momentum => {
            let u = state.m.zip_map(g, |u, g| h.momentum * u + g)?;
            let w_next = descend(w, &u, h.eta)?;
            Ok((
                AdamState {
                    m: u,
                    t: state.t + 1,
                    ..state.clone()
                },
                w_next,
            ))
        }
        OptimizerKind::Adam => adam_step(state, w, g, h),
        OptimizerKind::AdamW => {
            let next = accumulate(state, g, h)?;
            let (m_hat, v_hat) = bias_correct(&next.m, &next.v, next.t, h.beta1, h.beta2)?;
            let ratio = update_ratio(&m_hat, &v_hat, h.epsilon)?;
            let w_next = w.zip_map(&ratio, |w, r| w - h.eta * r - h.eta * h.weight_decay * w)?;
            Ok((next, w_next))
        }
        OptimizerKind::AmsGrad => {
            let mut next = accumulate(state, g, h)?;
            let (m_hat, v_hat) = bias_correct(&next.m, &next.v, next.t, h.beta1, h.beta2)?;
            let v_max = match &state.v_max {
                Some(prev) => prev.zip_map(&v_hat, f64::max)?,
                None => v_hat,
            };
            let ratio = update_ratio(&m_hat, &v_max, h.epsilon)?;
            next.v_max = Some(v_max);
            let w_next = descend(w, &ratio, h.eta)?;
            Ok((next, w_next))
        }
        OptimizerKind::RAdam => {
            let next = accumulate(state, g, h)?;
            let (m_hat, v_hat) = bias_correct(&next.m, &next.v, next.t, h.beta1, h.beta2)?;
            let rho_inf = radam_rho_inf(h.beta2);
            let rho_t = radam_rho(next.t, h.beta2);
            let w_next = if rho_t > 4.0 {
                let r = radam_rectifier(rho_t, rho_inf);
                let ratio = update_ratio(&m_hat, &v_hat, h.epsilon)?;
                w.zip_map(&ratio, |w, q| w - h.eta * r * q)?
            } else {
                descend(w, &m_hat, h.eta)?
            };
            Ok((next, w_next))
        }
        OptimizerKind::WarpAdam => Err(Error::contract(
            "WarpAdam is not a baseline; call warpadam_step with a warp matrix",
        )),
    }
}
