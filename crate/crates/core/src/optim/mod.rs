//! Step rules for Adam, WarpAdam and the comparison baselines.
//!
//! Every rule is a pure function from `(state, w, g)` to `(state', w')`.
//! [`ParamOptimizer`] wraps them for models with several parameter tensors.

mod adam;
mod baselines;

pub use adam::{adam_step, bias_correct, update_ratio, warpadam_step, warpadam_update_step};
pub use baselines::{baseline_step, radam_rectifier, radam_rho, radam_rho_inf};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::warp::WarpMatrix;

/// Optimizer constants. Fields a rule does not use are ignored by it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperParams {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay coefficient, AdamW only.
    pub weight_decay: f64,
    /// Velocity decay, Momentum only.
    pub momentum: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-2,
            momentum: 0.9,
        }
    }
}

impl HyperParams {
    pub fn with_eta(self, eta: f64) -> Self {
        Self { eta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::contract(format!("eta must be positive, got {}", self.eta)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::contract(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::contract("epsilon and weight_decay must be non-negative"));
        }
        if !unit(self.momentum) {
            return Err(Error::contract(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Per-tensor optimizer state.
///
/// `m` and `v` are the first and second moments. Momentum keeps its velocity
/// in `m`. `v_max` is only populated by AMSGrad.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub v_max: Option<Tensor>,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            v_max: None,
        }
    }

    pub(crate) fn check(&self, w: &Tensor, g: &Tensor) -> Result<()> {
        w.expect_same_shape(g)?;
        w.expect_same_shape(&self.m)?;
        w.expect_same_shape(&self.v)?;
        if !g.is_finite() {
            return Err(Error::numeric("gradient contains non-finite values"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
    AmsGrad,
    AdamW,
    RAdam,
    WarpAdam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Sgd,
        OptimizerKind::Momentum,
        OptimizerKind::Adam,
        OptimizerKind::AmsGrad,
        OptimizerKind::AdamW,
        OptimizerKind::RAdam,
        OptimizerKind::WarpAdam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AmsGrad => "amsgrad",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::RAdam => "radam",
            OptimizerKind::WarpAdam => "warpadam",
        }
    }

    /// Display label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::Momentum => "Momentum",
            OptimizerKind::Adam => "Adam",
            OptimizerKind::AmsGrad => "AMSGrad",
            OptimizerKind::AdamW => "AdamW",
            OptimizerKind::RAdam => "RAdam",
            OptimizerKind::WarpAdam => "WarpedAdam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let lower = match lower.as_str() {
            "warpedadam" | "warp-adam" => "warpadam",
            other => other,
        };
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::contract(format!("unknown optimizer kind {s:?}")))
    }
}

/// Where WarpAdam applies the warp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WarpPlacement {
    /// Warp the raw gradient before both moment updates.
    #[default]
    Gradient,
    /// Run a plain Adam step and warp the resulting update instead.
    Update,
}

impl FromStr for WarpPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gradient" => Ok(WarpPlacement::Gradient),
            "update" => Ok(WarpPlacement::Update),
            other => Err(Error::Config(format!("unknown warp placement {other:?}"))),
        }
    }
}

impl fmt::Display for WarpPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarpPlacement::Gradient => "gradient",
            WarpPlacement::Update => "update",
        })
    }
}

/// Applies one step rule to every tensor of a model.
#[derive(Clone, Debug)]
pub struct ParamOptimizer {
    kind: OptimizerKind,
    hyper: HyperParams,
    placement: WarpPlacement,
    warps: Vec<WarpMatrix>,
    states: Vec<AdamState>,
}

impl ParamOptimizer {
    pub fn new(kind: OptimizerKind, hyper: HyperParams, params: &[Tensor]) -> Result<Self> {
        hyper.validate()?;
        if kind == OptimizerKind::WarpAdam {
            return Err(Error::contract("WarpAdam needs warp matrices; use ParamOptimizer::warped"));
        }
        Ok(Self {
            kind,
            hyper,
            placement: WarpPlacement::Gradient,
            warps: Vec::new(),
            states: params.iter().map(|p| AdamState::new(p.shape())).collect(),
        })
    }

    pub fn warped(
        hyper: HyperParams,
        params: &[Tensor],
        warps: Vec<WarpMatrix>,
        placement: WarpPlacement,
    ) -> Result<Self> {
        hyper.validate()?;
        if warps.len() != params.len() {
            return Err(Error::shape(format!(
                "{} warp matrices for {} parameter tensors",
                warps.len(),
                params.len()
            )));
        }
        for (p, w) in params.iter().zip(&warps) {
            if p.numel() != w.dim() {
                return Err(Error::shape(format!(
                    "warp of dim {} for a tensor of {} elements",
                    w.dim(),
                    p.numel()
                )));
            }
        }
        Ok(Self {
            kind: OptimizerKind::WarpAdam,
            hyper,
            placement,
            warps,
            states: params.iter().map(|p| AdamState::new(p.shape())).collect(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != params.len() {
            return Err(Error::shape("parameter, gradient and state counts differ"));
        }
        for (i, (w, g)) in params.iter_mut().zip(grads).enumerate() {
            let state = &self.states[i];
            let (next, w_next) = match self.kind {
                OptimizerKind::Adam => adam_step(state, w, g, &self.hyper)?,
                OptimizerKind::WarpAdam => match self.placement {
                    WarpPlacement::Gradient => {
                        warpadam_step(state, w, g, &self.warps[i], &self.hyper)?
                    }
                    WarpPlacement::Update => {
                        warpadam_update_step(state, w, g, &self.warps[i], &self.hyper)?
                    }
                },
                kind => baseline_step(kind, state, w, g, &self.hyper)?,
            };
            self.states[i] = next;
            *w = w_next;
        }
        Ok(())
    }
}
