//! Finite-difference verification suite behind the `check` command.
//!
//! Every check compares an analytic derivative (or a fast structured
//! product) against an independent slow reference and reports the worst
//! relative error seen over its trials.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{Activation, EpisodeTask, Mlp};
use crate::tasks::{Batch, Episode, Example, InstanceId};
use crate::tensor::{finite_diff_grad, rel_err, Graph, Primitive, Tensor, Var};
use crate::warp::{adapted_query_loss, hypergrad, kron, tod_gradient, tod_penalty, MetaConfig, WarpMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Random trials per autodiff primitive.
    pub primitive_trials: usize,
    /// Break one primitive's gradient rule, to confirm the suite notices.
    pub fault: Option<Primitive>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            primitive_trials: 6,
            fault: None,
        }
    }
}

pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const HYPERGRADIENT_TOLERANCE: f64 = 1e-4;
pub const KRONECKER_TOLERANCE: f64 = 1e-12;

fn graph(fault: Option<Primitive>) -> Graph {
    match fault {
        Some(p) => Graph::new().with_fault(p),
        None => Graph::new(),
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Uniform in `[−1, 1]` with `|x| ≥ gap`, keeping kinks and poles out of the
/// finite-difference stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    uniform(rng, shape, -1.0, 1.0).map(|x| if x.abs() < gap { x.signum() * gap + x } else { x })
}

type Build = Box<dyn Fn(&Graph, &[Var]) -> Result<Var>>;

/// Inputs and forward map exercising one primitive.
fn primitive_case(p: Primitive, rng: &mut ChaCha8Rng, trial: usize) -> (Vec<Tensor>, Build) {
    let m = |rng: &mut ChaCha8Rng| uniform(rng, &[3, 4], -1.0, 1.0);
    let c: f64 = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    match p {
        Primitive::Add => (vec![m(rng), m(rng)], Box::new(|g, x| g.add(x[0], x[1]))),
        Primitive::Sub => (vec![m(rng), m(rng)], Box::new(|g, x| g.sub(x[0], x[1]))),
        Primitive::Mul => (vec![m(rng), m(rng)], Box::new(|g, x| g.mul(x[0], x[1]))),
        Primitive::Div => (
            vec![m(rng), away_from_zero(rng, &[3, 4], 0.5)],
            Box::new(|g, x| g.div(x[0], x[1])),
        ),
        Primitive::Neg => (vec![m(rng)], Box::new(|g, x| g.neg(x[0]))),
        Primitive::MulScalar => (vec![m(rng)], Box::new(move |g, x| g.mul_scalar(x[0], c))),
        Primitive::DivScalar => (vec![m(rng)], Box::new(move |g, x| g.div_scalar(x[0], c))),
        Primitive::AddScalar => (vec![m(rng)], Box::new(move |g, x| g.add_scalar(x[0], c))),
        Primitive::MatMul => (
            vec![m(rng), uniform(rng, &[4, 2], -1.0, 1.0)],
            Box::new(|g, x| g.matmul(x[0], x[1])),
        ),
        Primitive::Transpose => (vec![m(rng)], Box::new(|g, x| g.transpose(x[0]))),
        Primitive::Tanh => (vec![m(rng)], Box::new(|g, x| g.tanh(x[0]))),
        Primitive::Relu => (vec![away_from_zero(rng, &[3, 4], 0.01)], Box::new(|g, x| g.relu(x[0]))),
        Primitive::Sqrt => (vec![uniform(rng, &[3, 4], 0.1, 1.0)], Box::new(|g, x| g.sqrt(x[0]))),
        Primitive::Reshape => (vec![m(rng)], Box::new(|g, x| g.reshape(x[0], &[2, 6]))),
        Primitive::Sum => (vec![m(rng)], Box::new(|g, x| g.sum(x[0]))),
        Primitive::Expand => (
            vec![uniform(rng, &[1], -1.0, 1.0)],
            Box::new(|g, x| g.expand(x[0], &[3, 4])),
        ),
        Primitive::SumAxis => {
            let axis = trial % 2;
            (vec![m(rng)], Box::new(move |g, x| g.sum_axis(x[0], axis)))
        }
        Primitive::BroadcastAxis => {
            if trial.is_multiple_of(2) {
                (
                    vec![uniform(rng, &[1, 4], -1.0, 1.0)],
                    Box::new(|g, x| g.broadcast_axis(x[0], 0, 3)),
                )
            } else {
                (
                    vec![uniform(rng, &[3, 1], -1.0, 1.0)],
                    Box::new(|g, x| g.broadcast_axis(x[0], 1, 4)),
                )
            }
        }
        Primitive::Softmax => (vec![m(rng)], Box::new(|g, x| g.softmax(x[0]))),
        Primitive::SoftmaxCrossEntropy => {
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
            (
                vec![m(rng)],
                Box::new(move |g, x| g.softmax_cross_entropy(x[0], &labels)),
            )
        }
    }
}

/// `Σ c ⊙ f(x)` for fixed random weights `c`, so every output element
/// contributes to the checked gradient.
fn weighted(g: &Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone())?;
    g.sum(g.mul(out, w)?)
}

/// Worst relative error of one primitive's gradient over `trials` random
/// inputs.
pub fn primitive_check(p: Primitive, trials: usize, seed: u64, fault: Option<Primitive>) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let (inputs, build) = primitive_case(p, &mut rng, trial);
        let probe = Graph::new();
        let xs = inputs
            .iter()
            .map(|t| probe.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let shape = probe.shape(build(&probe, &xs)?);
        let weights = uniform(&mut rng, &shape, 0.5, 1.5);

        let g = graph(fault);
        let vars = inputs.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let loss = weighted(&g, build(&g, &vars)?, &weights)?;
        let analytic = g.grad_values(loss, &vars)?;

        for (i, x) in inputs.iter().enumerate() {
            let fd = finite_diff_grad(
                |xi| {
                    let h = Graph::new();
                    let vs = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, t)| h.constant(if j == i { xi.clone() } else { t.clone() }))
                        .collect::<Result<Vec<_>>>()?;
                    let l = weighted(&h, build(&h, &vs)?, &weights)?;
                    h.value(l).item()
                },
                x,
                1e-5,
            )?;
            worst = worst.max(rel_err(&analytic[i], &fd));
        }
    }
    Ok(CheckResult {
        name: format!("grad/{}", p.name()),
        trials,
        max_rel_err: worst,
        tolerance: GRADIENT_TOLERANCE,
    })
}

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize, classes: usize) -> Batch {
    Batch {
        inputs: uniform(rng, &[rows, dim], -1.0, 1.0),
        labels: (0..rows).map(|i| i % classes).collect(),
    }
}

/// Full cross-entropy loss gradient of a two-layer MLP against finite
/// differences.
pub fn mlp_check(trials: usize, seed: u64, fault: Option<Primitive>) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x006d_6c70);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let act = if trial.is_multiple_of(2) { Activation::Tanh } else { Activation::Relu };
        let model = Mlp::new(vec![4, 6, 3], act)?;
        let mut params = model.init(&mut rng);
        params[1] = uniform(&mut rng, &[6], -0.5, 0.5);
        params[3] = uniform(&mut rng, &[3], -0.5, 0.5);
        let batch = random_batch(&mut rng, 5, 4, 3);

        let g = graph(fault);
        let vars = params.iter().map(|p| g.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
        let loss = model.loss(&g, &vars, &batch)?;
        let analytic = g.grad_values(loss, &vars)?;
        for i in 0..params.len() {
            let fd = finite_diff_grad(
                |x| {
                    let mut p = params.clone();
                    p[i] = x.clone();
                    Ok(model.score(&p, &batch)?.0)
                },
                &params[i],
                1e-5,
            )?;
            worst = worst.max(rel_err(&analytic[i], &fd));
        }
    }
    Ok(CheckResult {
        name: "grad/mlp".into(),
        trials,
        max_rel_err: worst,
        tolerance: GRADIENT_TOLERANCE,
    })
}

/// A small labelled episode with random inputs.
pub fn random_episode(rng: &mut ChaCha8Rng, dim: usize, n_way: usize, k_shot: usize, query: usize) -> Episode {
    let mut make = |count: usize, offset: usize| {
        (0..n_way * count)
            .map(|i| Example {
                input: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                label: i % n_way,
                instance: InstanceId {
                    alphabet: 0,
                    class: i % n_way,
                    index: offset + i / n_way,
                },
            })
            .collect::<Vec<_>>()
    };
    let support = make(k_shot, 0);
    let query = make(query, k_shot);
    Episode {
        support,
        query,
        n_way,
        k_shot,
        task_id: "random".into(),
    }
}

/// Dense warps near the identity for each parameter tensor.
pub fn perturbed_dense(rng: &mut ChaCha8Rng, shapes: &[Vec<usize>], scale: f64) -> Vec<WarpMatrix> {
    shapes
        .iter()
        .map(|s| {
            let d: usize = s.iter().product();
            let entries = (0..d * d)
                .map(|k| (if k / d == k % d { 1.0 } else { 0.0 }) + scale * rng.random_range(-1.0..1.0))
                .collect();
            WarpMatrix::dense(d, entries).expect("square")
        })
        .collect()
}

/// Full-unroll hypergradient of a 26-parameter MLP with dense warps against
/// finite differences over every warp entry.
pub fn hypergrad_check(trials: usize, seed: u64, inner_steps: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6879_7065);
    let mut worst = 0.0f64;
    let cfg = MetaConfig {
        inner_steps,
        inner_hyper: crate::optim::HyperParams::default().with_eta(0.05),
        first_order: false,
        ..MetaConfig::default()
    };
    for _ in 0..trials {
        let model = Mlp::new(vec![3, 4, 2], Activation::Tanh)?;
        let w0 = model.init(&mut rng);
        let episode = random_episode(&mut rng, 3, 2, 2, 3);
        let task = EpisodeTask::new(&model, &episode)?;
        let warps = perturbed_dense(&mut rng, &model.param_shapes(), 0.1);
        let hg = hypergrad(&task, &w0, &warps, &cfg)?;
        let analytic = Tensor::vector(hg.grads.concat());
        let flat: Vec<f64> = warps.iter().flat_map(|p| p.params()).collect();
        let fd = finite_diff_grad(
            |x| {
                let mut at = 0;
                let ws = warps
                    .iter()
                    .map(|p| {
                        let n = p.param_count();
                        let w = p.with_params(&x.data()[at..at + n]);
                        at += n;
                        w
                    })
                    .collect::<Result<Vec<_>>>()?;
                adapted_query_loss(&task, &w0, &ws, &cfg)
            },
            &Tensor::vector(flat),
            1e-4,
        )?;
        worst = worst.max(rel_err(&analytic, &fd));
    }
    Ok(CheckResult {
        name: format!("hypergrad/dense-k{inner_steps}"),
        trials,
        max_rel_err: worst,
        tolerance: HYPERGRADIENT_TOLERANCE,
    })
}

/// Factored Kronecker application against the explicit product.
pub fn kronecker_check(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b72_6f6e);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let a_dim = rng.random_range(1..=4);
        let b_dim = rng.random_range(1..=4);
        let r = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let a = r(a_dim * a_dim, &mut rng);
        let b = r(b_dim * b_dim, &mut rng);
        let g = Tensor::matrix(a_dim, b_dim, r(a_dim * b_dim, &mut rng))?;
        let fast = WarpMatrix::kronecker(a_dim, b_dim, a.clone(), b.clone())?.apply(&g)?;
        let slow = WarpMatrix::dense(a_dim * b_dim, kron(&a, a_dim, &b, b_dim).into_data())?.apply(&g)?;
        let diff = fast.zip_map(&slow, |x, y| (x - y).abs())?.max_abs();
        worst = worst.max(diff);
    }
    Ok(CheckResult {
        name: "warp/kronecker-vs-dense".into(),
        trials,
        max_rel_err: worst,
        tolerance: KRONECKER_TOLERANCE,
    })
}

/// Analytic off-diagonal penalty gradient against finite differences.
pub fn tod_check(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0074_6f64);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let warp = if trial.is_multiple_of(2) {
            let d = rng.random_range(2..=5);
            WarpMatrix::dense(d, (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect())?
        } else {
            let (a, b) = (rng.random_range(1..=3), rng.random_range(2..=3));
            WarpMatrix::kronecker(
                a,
                b,
                (0..a * a).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..b * b).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )?
        };
        let lambda = rng.random_range(0.1..2.0);
        let analytic = Tensor::vector(tod_gradient(&warp, lambda));
        let fd = finite_diff_grad(
            |x| Ok(tod_penalty(&warp.with_params(x.data())?, lambda)),
            &Tensor::vector(warp.params()),
            1e-5,
        )?;
        worst = worst.max(rel_err(&analytic, &fd));
    }
    Ok(CheckResult {
        name: "warp/tod-gradient".into(),
        trials,
        max_rel_err: worst,
        tolerance: GRADIENT_TOLERANCE,
    })
}

/// Builds the same graph twice and differentiates it twice; any bit
/// difference is reported as an error of 1.
pub fn replay_check(seed: u64, fault: Option<Primitive>) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7265_706c);
    let model = Mlp::new(vec![4, 6, 3], Activation::Tanh)?;
    let params = model.init(&mut rng);
    let batch = random_batch(&mut rng, 5, 4, 3);
    let run = || -> Result<(Tensor, Vec<Tensor>)> {
        let g = graph(fault);
        let vars = params.iter().map(|p| g.leaf(p.clone())).collect::<Result<Vec<_>>>()?;
        let loss = model.loss(&g, &vars, &batch)?;
        Ok(((*g.value(loss)).clone(), g.grad_values(loss, &vars)?))
    };
    let (a, b) = (run()?, run()?);
    let same = a.0.data()[0].to_bits() == b.0.data()[0].to_bits()
        && a.1.iter().zip(&b.1).all(|(x, y)| {
            x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        });
    Ok(CheckResult {
        name: "grad/replay-determinism".into(),
        trials: 2,
        max_rel_err: if same { 0.0 } else { 1.0 },
        tolerance: 0.0,
    })
}

/// The whole suite, in a fixed order.
pub fn run_checks(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for p in Primitive::ALL {
        out.push(primitive_check(p, opts.primitive_trials, opts.seed, opts.fault)?);
    }
    out.push(mlp_check(10, opts.seed, opts.fault)?);
    out.push(replay_check(opts.seed, opts.fault)?);
    out.push(hypergrad_check(2, opts.seed, 3)?);
    out.push(kronecker_check(100, opts.seed)?);
    out.push(tod_check(20, opts.seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for p in Primitive::ALL {
            let r = primitive_check(p, 3, 1, None).unwrap();
            assert!(r.passed(), "{} {}", r.name, r.max_rel_err);
        }
    }

    #[test]
    fn a_broken_rule_is_caught() {
        for p in [Primitive::MatMul, Primitive::Tanh, Primitive::SoftmaxCrossEntropy] {
            let r = primitive_check(p, 2, 1, Some(p)).unwrap();
            assert!(!r.passed(), "{}", r.name);
        }
        assert!(!mlp_check(1, 1, Some(Primitive::Tanh)).unwrap().passed());
    }
}
