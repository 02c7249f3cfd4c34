//! Small multi-layer perceptrons and the task objectives built on them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tasks::{Batch, Episode};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

/// Fully connected network `sizes[0] → sizes[1] → … → sizes[n]` with the
/// hidden activation between layers and raw logits at the output.
///
/// Parameters are ordered `W₁, b₁, W₂, b₂, …` with `Wᵢ` of shape
/// `[in, out]` and `bᵢ` of shape `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::contract(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes, activation })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.sizes
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor> {
        self.param_shapes()
            .into_iter()
            .map(|shape| match shape.as_slice() {
                [fan_in, fan_out] => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let data = (0..fan_in * fan_out)
                        .map(|_| rng.random_range(-limit..limit))
                        .collect();
                    Tensor::new(shape, data).expect("weight shape")
                }
                _ => Tensor::zeros(&shape),
            })
            .collect()
    }

    /// Logits for a batch of row inputs.
    pub fn forward(&self, g: &Graph, params: &[Var], inputs: Var) -> Result<Var> {
        let layers = self.sizes.len() - 1;
        if params.len() != 2 * layers {
            return Err(Error::shape(format!(
                "{} parameter tensors for {layers} layers",
                params.len()
            )));
        }
        let rows = g.shape(inputs)[0];
        let mut h = inputs;
        for l in 0..layers {
            let z = g.matmul(h, params[2 * l])?;
            let b = g.reshape(params[2 * l + 1], &[1, self.sizes[l + 1]])?;
            let b = g.broadcast_axis(b, 0, rows)?;
            h = g.add(z, b)?;
            if l + 1 < layers {
                h = match self.activation {
                    Activation::Tanh => g.tanh(h)?,
                    Activation::Relu => g.relu(h)?,
                };
            }
        }
        Ok(h)
    }

    pub fn loss(&self, g: &Graph, params: &[Var], batch: &Batch) -> Result<Var> {
        let x = g.constant(batch.inputs.clone())?;
        let logits = self.forward(g, params, x)?;
        g.softmax_cross_entropy(logits, &batch.labels)
    }

    /// Loss value, accuracy and gradients at `params`.
    pub fn evaluate(&self, params: &[Tensor], batch: &Batch) -> Result<Evaluation> {
        let g = Graph::new();
        let vars = params
            .iter()
            .map(|p| g.leaf(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let x = g.constant(batch.inputs.clone())?;
        let logits = self.forward(&g, &vars, x)?;
        let loss = g.softmax_cross_entropy(logits, &batch.labels)?;
        let grads = g.grad_values(loss, &vars)?;
        Ok(Evaluation {
            loss: g.value(loss).item()?,
            accuracy: accuracy(&g.value(logits), &batch.labels),
            grads,
        })
    }

    /// Loss and accuracy only.
    pub fn score(&self, params: &[Tensor], batch: &Batch) -> Result<(f64, f64)> {
        let g = Graph::new();
        let vars = params
            .iter()
            .map(|p| g.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let x = g.constant(batch.inputs.clone())?;
        let logits = self.forward(&g, &vars, x)?;
        let loss = g.softmax_cross_entropy(logits, &batch.labels)?;
        Ok((g.value(loss).item()?, accuracy(&g.value(logits), &batch.labels)))
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: Vec<Tensor>,
}

/// Fraction of rows whose arg-max logit equals the label. Ties resolve to the
/// lowest index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let Ok((_, c)) = logits.dims2() else {
        return 0.0;
    };
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best == label
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// A task that can be adapted to on one data split and judged on another.
///
/// Losses are built on the caller's graph so that the caller decides what is
/// differentiable.
pub trait InnerTask: Sync {
    fn support_loss(&self, g: &Graph, params: &[Var]) -> Result<Var>;
    fn query_loss(&self, g: &Graph, params: &[Var]) -> Result<Var>;
}

/// An [`Episode`] scored by an [`Mlp`] with softmax cross-entropy.
pub struct EpisodeTask<'a> {
    pub model: &'a Mlp,
    support: Batch,
    query: Batch,
}

impl<'a> EpisodeTask<'a> {
    pub fn new(model: &'a Mlp, episode: &Episode) -> Result<Self> {
        if episode.support.is_empty() || episode.query.is_empty() {
            return Err(Error::contract("episode needs non-empty support and query sets"));
        }
        Ok(Self {
            model,
            support: episode.support_batch()?,
            query: episode.query_batch()?,
        })
    }

    pub fn support(&self) -> &Batch {
        &self.support
    }

    pub fn query(&self) -> &Batch {
        &self.query
    }
}

impl InnerTask for EpisodeTask<'_> {
    fn support_loss(&self, g: &Graph, params: &[Var]) -> Result<Var> {
        self.model.loss(g, params, &self.support)
    }

    fn query_loss(&self, g: &Graph, params: &[Var]) -> Result<Var> {
        self.model.loss(g, params, &self.query)
    }
}
