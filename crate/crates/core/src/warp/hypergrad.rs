use crate::error::{Error, Result};
use crate::nn::InnerTask;
use crate::optim::{warpadam_step, warpadam_update_step, AdamState, HyperParams, WarpPlacement};
use crate::tensor::{Graph, Tensor, Var};

use super::matrix::{flatten_grads, WarpMatrix, WarpVars};

/// Inner/outer loop settings for learning warp matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    /// Inner WarpAdam steps `K` on each support set.
    pub inner_steps: usize,
    pub inner_hyper: HyperParams,
    /// Learning rate of the outer Adam on the warp entries.
    pub outer_eta: f64,
    /// Weight of the off-diagonal penalty.
    pub tod_lambda: f64,
    /// Differentiate only the last inner step, holding earlier state fixed.
    pub first_order: bool,
    pub tasks_per_outer_step: usize,
    /// Largest graph a full unroll may build.
    pub node_budget: usize,
    pub placement: WarpPlacement,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_steps: 5,
            inner_hyper: HyperParams::default(),
            outer_eta: 1e-3,
            tod_lambda: 1e-3,
            first_order: false,
            tasks_per_outer_step: 4,
            node_budget: 2_000_000,
            placement: WarpPlacement::Gradient,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        self.inner_hyper.validate()?;
        if self.inner_steps == 0 {
            return Err(Error::contract("inner_steps must be at least 1"));
        }
        if !(self.outer_eta > 0.0 && self.outer_eta.is_finite()) {
            return Err(Error::contract(format!(
                "outer_eta must be positive, got {}",
                self.outer_eta
            )));
        }
        if !(self.tod_lambda >= 0.0 && self.tod_lambda.is_finite()) {
            return Err(Error::contract(format!(
                "tod_lambda must be non-negative, got {}",
                self.tod_lambda
            )));
        }
        if self.tasks_per_outer_step == 0 {
            return Err(Error::contract("tasks_per_outer_step must be at least 1"));
        }
        Ok(())
    }
}

/// Query-loss gradient with respect to each warp's entries.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperGrad {
    /// One vector per warp, ordered like [`WarpMatrix::params`].
    pub grads: Vec<Vec<f64>>,
    /// Query loss after adaptation.
    pub query_loss: f64,
}

/// Moments of one parameter tensor as graph nodes.
struct Moments {
    m: Var,
    v: Var,
}

/// One inner step on the graph. Mirrors the value-path rules in `optim`.
#[allow(clippy::too_many_arguments)]
fn graph_step(
    g: &Graph,
    w: Var,
    grad: Var,
    state: &Moments,
    t: u64,
    warp: &WarpVars,
    h: &HyperParams,
    placement: WarpPlacement,
) -> Result<(Moments, Var)> {
    let driven = match placement {
        WarpPlacement::Gradient => warp.apply(g, grad)?,
        WarpPlacement::Update => grad,
    };
    let m = g.add(g.mul_scalar(state.m, h.beta1)?, g.mul_scalar(driven, 1.0 - h.beta1)?)?;
    let sq = g.mul(driven, driven)?;
    let v = g.add(g.mul_scalar(state.v, h.beta2)?, g.mul_scalar(sq, 1.0 - h.beta2)?)?;
    let c1 = 1.0 - h.beta1.powi(t as i32);
    let c2 = 1.0 - h.beta2.powi(t as i32);
    let m_hat = g.div_scalar(m, c1)?;
    let v_hat = g.div_scalar(v, c2)?;
    let den = g.sqrt(g.add_scalar(v_hat, h.epsilon)?)?;
    let ratio = g.div(m_hat, den)?;
    let step = g.mul_scalar(ratio, h.eta)?;
    let step = match placement {
        WarpPlacement::Gradient => step,
        WarpPlacement::Update => warp.apply(g, step)?,
    };
    Ok((Moments { m, v }, g.sub(w, step)?))
}

fn check_warps(w0: &[Tensor], warps: &[WarpMatrix]) -> Result<()> {
    if w0.len() != warps.len() {
        return Err(Error::shape(format!(
            "{} warps for {} parameter tensors",
            warps.len(),
            w0.len()
        )));
    }
    for (w, p) in w0.iter().zip(warps) {
        if w.numel() != p.dim() {
            return Err(Error::shape(format!(
                "warp of dim {} for a tensor of {} elements",
                p.dim(),
                w.numel()
            )));
        }
    }
    Ok(())
}

/// Value-path inner loop: `steps` WarpAdam steps from `w0` on the support loss.
pub fn adapt(
    task: &dyn InnerTask,
    w0: &[Tensor],
    warps: &[WarpMatrix],
    cfg: &MetaConfig,
    steps: usize,
) -> Result<(Vec<AdamState>, Vec<Tensor>)> {
    check_warps(w0, warps)?;
    let mut w = w0.to_vec();
    let mut states: Vec<AdamState> = w0.iter().map(|p| AdamState::new(p.shape())).collect();
    for _ in 0..steps {
        let grads = support_grads(task, &w)?;
        for i in 0..w.len() {
            let (s, nw) = match cfg.placement {
                WarpPlacement::Gradient => {
                    warpadam_step(&states[i], &w[i], &grads[i], &warps[i], &cfg.inner_hyper)?
                }
                WarpPlacement::Update => {
                    warpadam_update_step(&states[i], &w[i], &grads[i], &warps[i], &cfg.inner_hyper)?
                }
            };
            states[i] = s;
            w[i] = nw;
        }
    }
    Ok((states, w))
}

fn support_grads(task: &dyn InnerTask, w: &[Tensor]) -> Result<Vec<Tensor>> {
    let g = Graph::new();
    let vars = w.iter().map(|p| g.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
    let loss = task.support_loss(&g, &vars)?;
    g.grad_values(loss, &vars)
}

/// Query loss after `K` inner steps, computed without any graph over the
/// trajectory.
pub fn adapted_query_loss(
    task: &dyn InnerTask,
    w0: &[Tensor],
    warps: &[WarpMatrix],
    cfg: &MetaConfig,
) -> Result<f64> {
    let (_, w) = adapt(task, w0, warps, cfg, cfg.inner_steps)?;
    let g = Graph::new();
    let vars = w.into_iter().map(|p| g.constant(p)).collect::<Result<Vec<_>>>()?;
    let loss = task.query_loss(&g, &vars)?;
    let value = g.value(loss).item()?;
    Ok(value)
}

/// Derivative of the post-adaptation query loss with respect to every warp's
/// entries.
///
/// With `cfg.first_order` unset, the whole `K`-step trajectory is unrolled
/// on one graph, including the second-order terms through the support
/// gradients. With it set, steps `1..K` run on plain values and only the
/// last step's direct dependence on the warps is differentiated.
pub fn hypergrad(
    task: &dyn InnerTask,
    w0: &[Tensor],
    warps: &[WarpMatrix],
    cfg: &MetaConfig,
) -> Result<HyperGrad> {
    check_warps(w0, warps)?;
    if cfg.inner_steps == 0 {
        return Err(Error::contract("inner_steps must be at least 1"));
    }
    let g = Graph::with_node_budget(cfg.node_budget);
    let pv = warps
        .iter()
        .map(|p| WarpVars::place(&g, p, true))
        .collect::<Result<Vec<_>>>()?;

    let (mut states, mut w, unrolled, t0) = if cfg.first_order {
        let (states, w) = adapt(task, w0, warps, cfg, cfg.inner_steps - 1)?;
        let t0 = states[0].t;
        let moments = states
            .iter()
            .map(|s| {
                Ok(Moments {
                    m: g.constant(s.m.clone())?,
                    v: g.constant(s.v.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        // Weights enter as leaves so their support gradient can be taken,
        // but nothing upstream of them is differentiated.
        let w = w.into_iter().map(|p| g.leaf(p)).collect::<Result<Vec<_>>>()?;
        (moments, w, 1, t0)
    } else {
        let moments = w0
            .iter()
            .map(|p| {
                Ok(Moments {
                    m: g.constant(Tensor::zeros(p.shape()))?,
                    v: g.constant(Tensor::zeros(p.shape()))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let w = w0.iter().map(|p| g.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
        (moments, w, cfg.inner_steps, 0)
    };

    for k in 0..unrolled {
        let loss = task.support_loss(&g, &w)?;
        let mut grads = g.grad(loss, &w)?;
        if cfg.first_order {
            grads = grads.into_iter().map(|v| g.detach(v)).collect::<Result<_>>()?;
        }
        let t = t0 + k as u64 + 1;
        let mut next_w = Vec::with_capacity(w.len());
        let mut next_s = Vec::with_capacity(w.len());
        for i in 0..w.len() {
            let (s, nw) = graph_step(
                &g,
                w[i],
                grads[i],
                &states[i],
                t,
                &pv[i],
                &cfg.inner_hyper,
                cfg.placement,
            )?;
            next_s.push(s);
            next_w.push(nw);
        }
        states = next_s;
        w = next_w;
    }

    let q = task.query_loss(&g, &w)?;
    let query_loss = g.value(q).item()?;
    if !query_loss.is_finite() {
        return Err(Error::numeric(format!("query loss diverged to {query_loss}")));
    }
    let all: Vec<Var> = pv.iter().flat_map(|p| p.vars()).collect();
    let values = g.grad_values(q, &all)?;
    let mut grads = Vec::with_capacity(pv.len());
    let mut at = 0;
    for p in &pv {
        let n = p.vars().len();
        grads.push(flatten_grads(&values[at..at + n]));
        at += n;
    }
    Ok(HyperGrad { grads, query_loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Least squares `½‖w − a‖²` on support, `½‖w − b‖²` on query.
    struct Quad {
        a: Vec<f64>,
        b: Vec<f64>,
    }

    fn half_sq(g: &Graph, w: Var, target: &[f64]) -> Result<Var> {
        let t = g.constant(Tensor::vector(target.to_vec()))?;
        let d = g.sub(w, t)?;
        let s = g.sum(g.mul(d, d)?)?;
        g.mul_scalar(s, 0.5)
    }

    impl InnerTask for Quad {
        fn support_loss(&self, g: &Graph, p: &[Var]) -> Result<Var> {
            half_sq(g, p[0], &self.a)
        }
        fn query_loss(&self, g: &Graph, p: &[Var]) -> Result<Var> {
            half_sq(g, p[0], &self.b)
        }
    }

    fn cfg(k: usize) -> MetaConfig {
        MetaConfig {
            inner_steps: k,
            inner_hyper: HyperParams::default().with_eta(0.1),
            ..MetaConfig::default()
        }
    }

    #[test]
    fn graph_forward_matches_value_path() {
        let task = Quad {
            a: vec![1.0, -2.0],
            b: vec![0.5, 0.5],
        };
        let w0 = vec![Tensor::vector(vec![0.3, 0.1])];
        let p = WarpMatrix::dense(2, vec![1.2, 0.3, -0.1, 0.8]).unwrap();
        let c = cfg(4);
        let hg = hypergrad(&task, &w0, std::slice::from_ref(&p), &c).unwrap();
        let direct = adapted_query_loss(&task, &w0, &[p], &c).unwrap();
        assert!((hg.query_loss - direct).abs() < 1e-12);
    }

    #[test]
    fn no_support_gradient_means_no_hypergradient() {
        let task = Quad {
            a: vec![0.4, 0.4],
            b: vec![1.0, -1.0],
        };
        let w0 = vec![Tensor::vector(vec![0.4, 0.4])];
        let p = WarpMatrix::identity_in(super::super::WarpForm::Dense, &[2]);
        let hg = hypergrad(&task, &w0, &[p], &cfg(3)).unwrap();
        assert!(hg.grads[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn first_order_matches_full_for_one_step() {
        let task = Quad {
            a: vec![1.0, -2.0],
            b: vec![0.5, 0.5],
        };
        let w0 = vec![Tensor::vector(vec![0.3, 0.1])];
        let p = WarpMatrix::dense(2, vec![1.2, 0.3, -0.1, 0.8]).unwrap();
        let full = hypergrad(&task, &w0, std::slice::from_ref(&p), &cfg(1)).unwrap();
        let fo = hypergrad(
            &task,
            &w0,
            &[p],
            &MetaConfig {
                first_order: true,
                ..cfg(1)
            },
        )
        .unwrap();
        for (a, b) in full.grads[0].iter().zip(&fo.grads[0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn budget_exhaustion_is_a_resource_error() {
        let task = Quad {
            a: vec![1.0],
            b: vec![0.0],
        };
        let w0 = vec![Tensor::vector(vec![0.0])];
        let p = WarpMatrix::dense(1, vec![1.0]).unwrap();
        let c = MetaConfig {
            node_budget: 50,
            ..cfg(20)
        };
        match hypergrad(&task, &w0, &[p], &c) {
            Err(Error::Resource(msg)) => assert!(msg.contains("first-order")),
            other => panic!("expected a resource error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_warps_are_rejected() {
        let task = Quad {
            a: vec![1.0],
            b: vec![0.0],
        };
        let w0 = vec![Tensor::vector(vec![0.0])];
        assert!(hypergrad(&task, &w0, &[], &cfg(1)).is_err());
        assert!(hypergrad(&task, &w0, &[WarpMatrix::identity(2)], &cfg(1)).is_err());
    }
}
