use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::curve::CurveRecord;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::optim::{HyperParams, OptimizerKind, ParamOptimizer};
use crate::tasks::{AlphabetSplit, ClassTable};
use crate::tensor::Tensor;
use crate::warp::{load_warps, meta_train, EpisodeShape, FormPolicy, MetaConfig, MetaState, WarpMatrix};

/// Where a WarpAdam run gets its warp matrices.
#[derive(Clone, Debug, PartialEq)]
pub enum WarpSource {
    /// Plain identity, which makes the run reproduce Adam exactly.
    Identity,
    Checkpoint(PathBuf),
    /// Meta-train from identity on the training alphabets before the run.
    MetaTrain { outer_steps: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub optimizer: OptimizerKind,
    pub hyper: HyperParams,
    pub warp_source: WarpSource,
    pub form: FormPolicy,
    pub meta: MetaConfig,
    pub episode: EpisodeShape,
    pub hidden: usize,
    pub activation: Activation,
    pub n_tasks: usize,
    pub steps_per_task: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            hyper: HyperParams::default(),
            warp_source: WarpSource::MetaTrain { outer_steps: 50 },
            form: FormPolicy::default(),
            meta: MetaConfig::default(),
            episode: EpisodeShape::default(),
            hidden: 64,
            activation: Activation::Tanh,
            n_tasks: 10,
            steps_per_task: 30,
            eval_every: 10,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.n_tasks == 0 || self.steps_per_task == 0 || self.eval_every == 0 {
            return Err(Error::contract(
                "n_tasks, steps_per_task and eval_every must all be positive",
            ));
        }
        if self.hidden == 0 {
            return Err(Error::contract("hidden width must be positive"));
        }
        if self.optimizer == OptimizerKind::WarpAdam {
            if let WarpSource::MetaTrain { .. } = self.warp_source {
                self.meta.validate()?;
            }
        }
        Ok(())
    }
}

/// A class table with its alphabet split, under a display name.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub table: ClassTable,
    pub split: AlphabetSplit,
}

/// Where and why a run stopped early.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub task_index: usize,
    pub step: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<CurveRecord>,
    pub divergence: Option<Divergence>,
    /// Total wall time, including any meta-training.
    pub wall_ms: u64,
    /// The warps a WarpAdam run used.
    pub warps: Option<Vec<WarpMatrix>>,
}

/// Independent generator streams derived from one seed.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for the `index`-th synthetic task source of a run.
pub fn source_rng(seed: u64, index: usize) -> ChaCha8Rng {
    stream(seed, 16 + index as u64)
}

pub const MODEL_STREAM: u64 = 0;
pub const TASK_STREAM: u64 = 1;
pub const META_STREAM: u64 = 2;
/// Held-out episodes for judging learned warps.
pub const HOLDOUT_STREAM: u64 = 3;

pub fn model_for(cfg: &RunConfig, data: &TaskData) -> Result<Mlp> {
    Mlp::new(
        vec![data.table.input_dim, cfg.hidden, cfg.episode.n_way],
        cfg.activation,
    )
}

/// The run's starting weights; they depend only on the seed and the model.
pub fn initial_params(cfg: &RunConfig, model: &Mlp) -> Vec<Tensor> {
    model.init(&mut stream(cfg.seed, MODEL_STREAM))
}

/// Learns or loads the warps a WarpAdam run will use.
pub fn prepare_warps(cfg: &RunConfig, data: &TaskData, model: &Mlp, w0: &[Tensor]) -> Result<Vec<WarpMatrix>> {
    let shapes = model.param_shapes();
    let warps = match &cfg.warp_source {
        WarpSource::Identity => shapes
            .iter()
            .map(|s| WarpMatrix::identity(s.iter().product()))
            .collect(),
        WarpSource::Checkpoint(path) => load_warps(path)?,
        WarpSource::MetaTrain { outer_steps } => {
            let init = MetaState::identity(&cfg.form, &shapes);
            let mut rng = stream(cfg.seed, META_STREAM);
            meta_train(
                model,
                w0,
                &data.table,
                &data.split.train,
                cfg.episode,
                init,
                &cfg.meta,
                *outer_steps,
                &mut rng,
            )?
            .state
            .warps
        }
    };
    if warps.len() != shapes.len() {
        return Err(Error::shape(format!(
            "{} warps for a model with {} parameter tensors",
            warps.len(),
            shapes.len()
        )));
    }
    Ok(warps)
}

/// Trains one model through `cfg.n_tasks` episodes drawn from the evaluation
/// alphabets, in sequence, keeping weights and optimizer state across tasks.
///
/// Each step uses the current task's support set; every `eval_every` steps
/// and at the end of each task a record with support and query metrics is
/// taken. A non-finite loss or gradient stops the run with a flagged record.
pub fn run_sequential_tasks(cfg: &RunConfig, data: &TaskData) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let elapsed = || start.elapsed().as_millis() as u64;
    let model = model_for(cfg, data)?;
    let mut params = initial_params(cfg, &model);

    let (mut opt, warps) = if cfg.optimizer == OptimizerKind::WarpAdam {
        let warps = prepare_warps(cfg, data, &model, &params)?;
        let opt = ParamOptimizer::warped(cfg.hyper, &params, warps.clone(), cfg.meta.placement)?;
        (opt, Some(warps))
    } else {
        (ParamOptimizer::new(cfg.optimizer, cfg.hyper, &params)?, None)
    };

    let mut task_rng = stream(cfg.seed, TASK_STREAM);
    let mut records = Vec::new();
    let e = cfg.episode;
    for task_index in 0..cfg.n_tasks {
        let episode =
            data.table
                .sample_episode(&data.split.eval, e.n_way, e.k_shot, e.query_per_class, &mut task_rng)?;
        let support = episode.support_batch()?;
        let query = episode.query_batch()?;
        for step in 1..=cfg.steps_per_task {
            let ev = model.evaluate(&params, &support)?;
            let halt = |reason: String, records: &mut Vec<CurveRecord>, train_loss, val_loss| {
                records.push(CurveRecord {
                    task_index,
                    step,
                    train_loss,
                    train_acc: 0.0,
                    val_loss,
                    val_acc: 0.0,
                    wall_ms: elapsed(),
                    diverged: true,
                });
                Divergence {
                    task_index,
                    step,
                    reason,
                }
            };
            if !ev.loss.is_finite() {
                let d = halt(format!("support loss became {}", ev.loss), &mut records, ev.loss, f64::NAN);
                return Ok(finish(records, Some(d), elapsed(), warps));
            }
            match opt.step(&mut params, &ev.grads) {
                Ok(()) => {}
                Err(Error::Numeric(msg)) => {
                    let d = halt(msg, &mut records, ev.loss, f64::NAN);
                    return Ok(finish(records, Some(d), elapsed(), warps));
                }
                Err(other) => return Err(other),
            }
            if step % cfg.eval_every == 0 || step == cfg.steps_per_task {
                let (train_loss, train_acc) = model.score(&params, &support)?;
                let (val_loss, val_acc) = model.score(&params, &query)?;
                if !(train_loss.is_finite() && val_loss.is_finite()) {
                    let d = halt(
                        format!("losses became {train_loss} (support) and {val_loss} (query)"),
                        &mut records,
                        train_loss,
                        val_loss,
                    );
                    return Ok(finish(records, Some(d), elapsed(), warps));
                }
                records.push(CurveRecord {
                    task_index,
                    step,
                    train_loss,
                    train_acc,
                    val_loss,
                    val_acc,
                    wall_ms: elapsed(),
                    diverged: false,
                });
            }
        }
    }
    Ok(finish(records, None, elapsed(), warps))
}

fn finish(
    records: Vec<CurveRecord>,
    divergence: Option<Divergence>,
    wall_ms: u64,
    warps: Option<Vec<WarpMatrix>>,
) -> RunOutcome {
    RunOutcome {
        records,
        divergence,
        wall_ms,
        warps,
    }
}
