use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Structural form tag of a [`WarpMatrix`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WarpForm {
    Identity,
    Diagonal,
    Dense,
    Kronecker,
}

impl WarpForm {
    pub fn tag(self) -> u8 {
        match self {
            WarpForm::Identity => 0,
            WarpForm::Diagonal => 1,
            WarpForm::Dense => 2,
            WarpForm::Kronecker => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(WarpForm::Identity),
            1 => Some(WarpForm::Diagonal),
            2 => Some(WarpForm::Dense),
            3 => Some(WarpForm::Kronecker),
            _ => None,
        }
    }
}

impl fmt::Display for WarpForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarpForm::Identity => "identity",
            WarpForm::Diagonal => "diagonal",
            WarpForm::Dense => "dense",
            WarpForm::Kronecker => "kronecker",
        })
    }
}

/// The linear transform applied to one parameter tensor's flattened gradient.
#[derive(Clone, Debug, PartialEq)]
pub enum WarpMatrix {
    Identity { dim: usize },
    Diagonal { diag: Vec<f64> },
    /// Row-major `dim × dim` entries.
    Dense { dim: usize, entries: Vec<f64> },
    /// `A ⊗ B` for a gradient viewed as an `a × b` matrix `G`, applied as
    /// `A·G·Bᵀ`. Both factors are stored row-major.
    Kronecker {
        a_dim: usize,
        b_dim: usize,
        a: Vec<f64>,
        b: Vec<f64>,
    },
}

fn eye_entries(n: usize) -> Vec<f64> {
    Tensor::eye(n).into_data()
}

impl WarpMatrix {
    pub fn identity(dim: usize) -> Self {
        WarpMatrix::Identity { dim }
    }

    pub fn diagonal(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::shape("diagonal warp needs at least one entry"));
        }
        Ok(WarpMatrix::Diagonal { diag })
    }

    pub fn dense(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::shape(format!(
                "dense warp of dim {dim} needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Ok(WarpMatrix::Dense { dim, entries })
    }

    pub fn kronecker(a_dim: usize, b_dim: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a_dim == 0 || b_dim == 0 || a.len() != a_dim * a_dim || b.len() != b_dim * b_dim {
            return Err(Error::shape(format!(
                "kronecker factors must be {a_dim}x{a_dim} and {b_dim}x{b_dim}"
            )));
        }
        Ok(WarpMatrix::Kronecker { a_dim, b_dim, a, b })
    }

    /// The identity transform materialized in `form`. Kronecker factors are
    /// sized from `shape` (rows × remaining elements).
    pub fn identity_in(form: WarpForm, shape: &[usize]) -> Self {
        let dim: usize = shape.iter().product::<usize>().max(1);
        match form {
            WarpForm::Identity => WarpMatrix::Identity { dim },
            WarpForm::Diagonal => WarpMatrix::Diagonal {
                diag: vec![1.0; dim],
            },
            WarpForm::Dense => WarpMatrix::Dense {
                dim,
                entries: eye_entries(dim),
            },
            WarpForm::Kronecker => {
                let (a_dim, b_dim) = match shape {
                    [r, c] => (*r, *c),
                    _ => (dim, 1),
                };
                WarpMatrix::Kronecker {
                    a_dim,
                    b_dim,
                    a: eye_entries(a_dim),
                    b: eye_entries(b_dim),
                }
            }
        }
    }

    pub fn form(&self) -> WarpForm {
        match self {
            WarpMatrix::Identity { .. } => WarpForm::Identity,
            WarpMatrix::Diagonal { .. } => WarpForm::Diagonal,
            WarpMatrix::Dense { .. } => WarpForm::Dense,
            WarpMatrix::Kronecker { .. } => WarpForm::Kronecker,
        }
    }

    /// Length of the flattened gradient this matrix acts on.
    pub fn dim(&self) -> usize {
        match self {
            WarpMatrix::Identity { dim } | WarpMatrix::Dense { dim, .. } => *dim,
            WarpMatrix::Diagonal { diag } => diag.len(),
            WarpMatrix::Kronecker { a_dim, b_dim, .. } => a_dim * b_dim,
        }
    }

    /// Number of learnable entries.
    pub fn param_count(&self) -> usize {
        match self {
            WarpMatrix::Identity { .. } => 0,
            WarpMatrix::Diagonal { diag } => diag.len(),
            WarpMatrix::Dense { entries, .. } => entries.len(),
            WarpMatrix::Kronecker { a, b, .. } => a.len() + b.len(),
        }
    }

    /// Learnable entries in storage order (`A` before `B` for Kronecker).
    pub fn params(&self) -> Vec<f64> {
        match self {
            WarpMatrix::Identity { .. } => Vec::new(),
            WarpMatrix::Diagonal { diag } => diag.clone(),
            WarpMatrix::Dense { entries, .. } => entries.clone(),
            WarpMatrix::Kronecker { a, b, .. } => a.iter().chain(b).copied().collect(),
        }
    }

    /// Same form and dims, new entries.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} entries for a warp with {} parameters",
                params.len(),
                self.param_count()
            )));
        }
        Ok(match self {
            WarpMatrix::Identity { dim } => WarpMatrix::Identity { dim: *dim },
            WarpMatrix::Diagonal { .. } => WarpMatrix::Diagonal {
                diag: params.to_vec(),
            },
            WarpMatrix::Dense { dim, .. } => WarpMatrix::Dense {
                dim: *dim,
                entries: params.to_vec(),
            },
            WarpMatrix::Kronecker { a_dim, b_dim, a, .. } => WarpMatrix::Kronecker {
                a_dim: *a_dim,
                b_dim: *b_dim,
                a: params[..a.len()].to_vec(),
                b: params[a.len()..].to_vec(),
            },
        })
    }

    /// The full `dim × dim` matrix. Intended for tests and small dims.
    pub fn materialize(&self) -> Tensor {
        let d = self.dim();
        match self {
            WarpMatrix::Identity { .. } => Tensor::eye(d),
            WarpMatrix::Diagonal { diag } => {
                let mut t = Tensor::zeros(&[d, d]);
                for (i, x) in diag.iter().enumerate() {
                    t.data_mut()[i * d + i] = *x;
                }
                t
            }
            WarpMatrix::Dense { entries, .. } => Tensor::new(vec![d, d], entries.clone())
                .expect("dense warp entries match dim"),
            WarpMatrix::Kronecker { a_dim, b_dim, a, b } => kron(a, *a_dim, b, *b_dim),
        }
    }

    fn check_len(&self, g: &Tensor) -> Result<()> {
        if g.numel() != self.dim() {
            return Err(Error::shape(format!(
                "warp of dim {} applied to a gradient of {} elements",
                self.dim(),
                g.numel()
            )));
        }
        Ok(())
    }

    /// `P·g` on the flattened gradient; the output keeps `g`'s shape.
    pub fn apply(&self, g: &Tensor) -> Result<Tensor> {
        self.check_len(g)?;
        let x = g.data();
        let out = match self {
            WarpMatrix::Identity { .. } => return Ok(g.clone()),
            WarpMatrix::Diagonal { diag } => x.iter().zip(diag).map(|(x, d)| d * x).collect(),
            WarpMatrix::Dense { dim, entries } => entries
                .chunks(*dim)
                .map(|row| row.iter().zip(x).fold(0.0, |acc, (p, x)| acc + p * x))
                .collect(),
            WarpMatrix::Kronecker { a_dim, b_dim, a, b } => {
                let a = Tensor::new(vec![*a_dim, *a_dim], a.clone())?;
                let bt = Tensor::new(vec![*b_dim, *b_dim], b.clone())?.transpose()?;
                let gm = Tensor::new(vec![*a_dim, *b_dim], x.to_vec())?;
                a.matmul(&gm)?.matmul(&bt)?.into_data()
            }
        };
        Tensor::new(g.shape().to_vec(), out)
    }
}

/// Row-major Kronecker product of two square matrices.
pub fn kron(a: &[f64], a_dim: usize, b: &[f64], b_dim: usize) -> Tensor {
    let d = a_dim * b_dim;
    let mut out = vec![0.0; d * d];
    for i in 0..a_dim {
        for k in 0..a_dim {
            let aik = a[i * a_dim + k];
            for j in 0..b_dim {
                for l in 0..b_dim {
                    out[(i * b_dim + j) * d + (k * b_dim + l)] = aik * b[j * b_dim + l];
                }
            }
        }
    }
    Tensor::new(vec![d, d], out).expect("kron dims")
}

/// How to choose a warp form for each parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormPolicy {
    /// Dense up to `dense_max` elements, Kronecker for larger matrices,
    /// Diagonal for anything else.
    Auto { dense_max: usize },
    Fixed(WarpForm),
}

impl Default for FormPolicy {
    fn default() -> Self {
        FormPolicy::Auto { dense_max: 256 }
    }
}

impl FormPolicy {
    pub fn form_for(&self, shape: &[usize]) -> WarpForm {
        match *self {
            FormPolicy::Fixed(form) => form,
            FormPolicy::Auto { dense_max } => {
                let d: usize = shape.iter().product();
                if d <= dense_max {
                    WarpForm::Dense
                } else if shape.len() == 2 {
                    WarpForm::Kronecker
                } else {
                    WarpForm::Diagonal
                }
            }
        }
    }

    /// Identity warps for a model's parameter shapes.
    pub fn init(&self, shapes: &[Vec<usize>]) -> Vec<WarpMatrix> {
        shapes
            .iter()
            .map(|s| WarpMatrix::identity_in(self.form_for(s), s))
            .collect()
    }
}

impl fmt::Display for FormPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormPolicy::Auto { .. } => f.write_str("auto"),
            FormPolicy::Fixed(form) => form.fmt(f),
        }
    }
}

impl FromStr for FormPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "auto" => FormPolicy::default(),
            "identity" => FormPolicy::Fixed(WarpForm::Identity),
            "diagonal" => FormPolicy::Fixed(WarpForm::Diagonal),
            "dense" => FormPolicy::Fixed(WarpForm::Dense),
            "kronecker" => FormPolicy::Fixed(WarpForm::Kronecker),
            other => return Err(Error::Config(format!("unknown warp form {other:?}"))),
        })
    }
}

/// A warp matrix's learnable entries placed on a graph as leaves.
#[derive(Clone, Debug)]
pub enum WarpVars {
    Identity,
    Diagonal(Var),
    Dense(Var),
    Kronecker(Var, Var),
}

impl WarpVars {
    /// Creates leaves for `warp`'s entries. `leaf = false` makes constants.
    pub fn place(g: &Graph, warp: &WarpMatrix, leaf: bool) -> Result<Self> {
        let put = |t: Tensor| if leaf { g.leaf(t) } else { g.constant(t) };
        Ok(match warp {
            WarpMatrix::Identity { .. } => WarpVars::Identity,
            WarpMatrix::Diagonal { diag } => WarpVars::Diagonal(put(Tensor::vector(diag.clone()))?),
            WarpMatrix::Dense { dim, entries } => {
                WarpVars::Dense(put(Tensor::new(vec![*dim, *dim], entries.clone())?)?)
            }
            WarpMatrix::Kronecker { a_dim, b_dim, a, b } => WarpVars::Kronecker(
                put(Tensor::new(vec![*a_dim, *a_dim], a.clone())?)?,
                put(Tensor::new(vec![*b_dim, *b_dim], b.clone())?)?,
            ),
        })
    }

    /// The leaves, in the same order as [`WarpMatrix::params`].
    pub fn vars(&self) -> Vec<Var> {
        match *self {
            WarpVars::Identity => Vec::new(),
            WarpVars::Diagonal(v) | WarpVars::Dense(v) => vec![v],
            WarpVars::Kronecker(a, b) => vec![a, b],
        }
    }

    /// Differentiable `P·g`; the output keeps `g`'s shape.
    pub fn apply(&self, graph: &Graph, g: Var) -> Result<Var> {
        let shape = graph.shape(g);
        let d: usize = shape.iter().product();
        match *self {
            WarpVars::Identity => Ok(g),
            WarpVars::Diagonal(p) => {
                let flat = graph.reshape(g, &[d])?;
                let out = graph.mul(p, flat)?;
                graph.reshape(out, &shape)
            }
            WarpVars::Dense(p) => {
                let col = graph.reshape(g, &[d, 1])?;
                let out = graph.matmul(p, col)?;
                graph.reshape(out, &shape)
            }
            WarpVars::Kronecker(a, b) => {
                let rows = graph.shape(a)[0];
                let cols = graph.shape(b)[0];
                let gm = graph.reshape(g, &[rows, cols])?;
                let ag = graph.matmul(a, gm)?;
                let bt = graph.transpose(b)?;
                let out = graph.matmul(ag, bt)?;
                graph.reshape(out, &shape)
            }
        }
    }
}

/// Concatenates per-leaf gradient values into one entry vector.
pub(crate) fn flatten_grads(grads: &[Tensor]) -> Vec<f64> {
    grads.iter().flat_map(|t| t.data().iter().copied()).collect()
}
