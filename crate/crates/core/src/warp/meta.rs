use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{EpisodeTask, InnerTask, Mlp};
use crate::optim::{adam_step, AdamState, HyperParams};
use crate::tasks::{AlphabetPool, ClassTable};
use crate::tensor::Tensor;

use super::hypergrad::{adapted_query_loss, hypergrad, MetaConfig};
use super::matrix::{FormPolicy, WarpMatrix};
use super::tod::tod_gradient;
use super::tod::tod_penalty;

/// Warp matrices together with the outer optimizer's state for each.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaState {
    pub warps: Vec<WarpMatrix>,
    /// `None` for warps without learnable entries.
    pub outer: Vec<Option<AdamState>>,
}

impl MetaState {
    /// Identity warps in the forms `policy` picks, with fresh outer state.
    pub fn identity(policy: &FormPolicy, shapes: &[Vec<usize>]) -> Self {
        Self::from_warps(policy.init(shapes))
    }

    pub fn from_warps(warps: Vec<WarpMatrix>) -> Self {
        let outer = warps
            .iter()
            .map(|p| match p.param_count() {
                0 => None,
                n => Some(AdamState::new(&[n])),
            })
            .collect();
        Self { warps, outer }
    }
}

/// Summary of one outer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterStep {
    /// Mean post-adaptation query loss over the batch, before the update.
    pub query_loss: f64,
    pub tod_penalty: f64,
}

/// One outer update: mean hypergradient over `tasks` plus the off-diagonal
/// penalty gradient, then an Adam step on each warp's entries.
///
/// Hypergradients are computed in parallel and summed in task order, so the
/// result does not depend on scheduling.
pub fn meta_update<T: InnerTask>(
    state: &MetaState,
    tasks: &[T],
    w0: &[Tensor],
    cfg: &MetaConfig,
) -> Result<(MetaState, OuterStep)> {
    if tasks.is_empty() {
        return Err(Error::contract("meta_update needs at least one task"));
    }
    let per_task: Vec<_> = tasks
        .par_iter()
        .map(|t| hypergrad(t, w0, &state.warps, cfg))
        .collect::<Result<Vec<_>>>()?;

    let n = tasks.len() as f64;
    let query_loss = per_task.iter().map(|h| h.query_loss).sum::<f64>() / n;
    let outer_hyper = HyperParams {
        eta: cfg.outer_eta,
        ..HyperParams::default()
    };
    let mut next = state.clone();
    let mut penalty = 0.0;
    for (i, warp) in state.warps.iter().enumerate() {
        penalty += tod_penalty(warp, cfg.tod_lambda);
        let Some(outer) = &state.outer[i] else {
            continue;
        };
        let mut total = vec![0.0; warp.param_count()];
        for h in &per_task {
            for (acc, x) in total.iter_mut().zip(&h.grads[i]) {
                *acc += x;
            }
        }
        let reg = tod_gradient(warp, cfg.tod_lambda);
        let grad: Vec<f64> = total.iter().zip(&reg).map(|(s, r)| s / n + r).collect();
        let (s, entries) = adam_step(
            outer,
            &Tensor::vector(warp.params()),
            &Tensor::vector(grad),
            &outer_hyper,
        )?;
        next.warps[i] = warp.with_params(entries.data())?;
        next.outer[i] = Some(s);
    }
    Ok((
        next,
        OuterStep {
            query_loss,
            tod_penalty: penalty,
        },
    ))
}

/// Episode geometry shared by meta-training and benchmark runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_per_class: usize,
}

impl Default for EpisodeShape {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            query_per_class: 15,
        }
    }
}

/// One row of the meta-training curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaRecord {
    pub outer_step: usize,
    pub query_loss: f64,
    pub tod_penalty: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaOutcome {
    pub state: MetaState,
    pub curve: Vec<MetaRecord>,
}

/// Runs `outer_steps` outer updates on episodes drawn from `pool`, adapting
/// from the fixed starting weights `w0`.
#[allow(clippy::too_many_arguments)]
pub fn meta_train<R: Rng + ?Sized>(
    model: &Mlp,
    w0: &[Tensor],
    table: &ClassTable,
    pool: &AlphabetPool,
    shape: EpisodeShape,
    init: MetaState,
    cfg: &MetaConfig,
    outer_steps: usize,
    rng: &mut R,
) -> Result<MetaOutcome> {
    cfg.validate()?;
    let mut state = init;
    let mut curve = Vec::with_capacity(outer_steps);
    for step in 0..outer_steps {
        let episodes = (0..cfg.tasks_per_outer_step)
            .map(|_| {
                table.sample_episode(pool, shape.n_way, shape.k_shot, shape.query_per_class, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let tasks = episodes
            .iter()
            .map(|e| EpisodeTask::new(model, e))
            .collect::<Result<Vec<_>>>()?;
        let (next, info) = meta_update(&state, &tasks, w0, cfg)?;
        state = next;
        curve.push(MetaRecord {
            outer_step: step,
            query_loss: info.query_loss,
            tod_penalty: info.tod_penalty,
        });
    }
    Ok(MetaOutcome { state, curve })
}

/// Mean post-adaptation query loss of `warps` over `tasks`.
pub fn mean_adapted_loss<T: InnerTask>(
    tasks: &[T],
    w0: &[Tensor],
    warps: &[WarpMatrix],
    cfg: &MetaConfig,
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::contract("no tasks to evaluate"));
    }
    let losses = tasks
        .par_iter()
        .map(|t| adapted_query_loss(t, w0, warps, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Var};
    use crate::warp::WarpForm;

    struct Still;

    impl InnerTask for Still {
        fn support_loss(&self, g: &Graph, p: &[Var]) -> Result<Var> {
            let z = g.mul_scalar(p[0], 0.0)?;
            g.sum(z)
        }
        fn query_loss(&self, g: &Graph, p: &[Var]) -> Result<Var> {
            let s = g.mul(p[0], p[0])?;
            g.sum(s)
        }
    }

    #[test]
    fn zero_hypergradient_without_penalty_is_a_fixed_point() {
        let w0 = vec![Tensor::vector(vec![0.5, -0.5])];
        let p = WarpMatrix::dense(2, vec![1.0, 0.2, -0.3, 1.0]).unwrap();
        let state = MetaState::from_warps(vec![p.clone()]);
        let cfg = MetaConfig {
            tod_lambda: 0.0,
            inner_steps: 2,
            ..MetaConfig::default()
        };
        let (next, _) = meta_update(&state, &[Still, Still], &w0, &cfg).unwrap();
        assert_eq!(next.warps[0], p);
    }

    #[test]
    fn update_preserves_form_and_dim() {
        let w0 = vec![Tensor::matrix(2, 3, vec![0.1; 6]).unwrap()];
        for form in [WarpForm::Identity, WarpForm::Diagonal, WarpForm::Dense, WarpForm::Kronecker] {
            let state = MetaState::identity(&FormPolicy::Fixed(form), &[vec![2, 3]]);
            let cfg = MetaConfig {
                tod_lambda: 0.5,
                inner_steps: 1,
                ..MetaConfig::default()
            };
            let (next, _) = meta_update(&state, &[Still], &w0, &cfg).unwrap();
            assert_eq!(next.warps[0].form(), form);
            assert_eq!(next.warps[0].dim(), 6);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let state = MetaState::from_warps(vec![WarpMatrix::identity(1)]);
        let tasks: [Still; 0] = [];
        assert!(meta_update(&state, &tasks, &[Tensor::vector(vec![0.0])], &MetaConfig::default()).is_err());
    }
}
