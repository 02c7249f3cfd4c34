use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where an example came from in its [`ClassTable`](super::ClassTable).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InstanceId {
    pub alphabet: usize,
    pub class: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: usize,
    pub instance: InstanceId,
}

/// One few-shot task: a labeled support set to adapt on and a disjoint query
/// set to measure the adaptation.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub support: Vec<Example>,
    pub query: Vec<Example>,
    pub n_way: usize,
    pub k_shot: usize,
    pub task_id: String,
}

/// Inputs stacked row-wise with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_examples(examples: &[Example]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::contract("cannot batch an empty example set"))?;
        let dim = first.input.len();
        let mut data = Vec::with_capacity(examples.len() * dim);
        for ex in examples {
            if ex.input.len() != dim {
                return Err(Error::shape("examples have different input lengths"));
            }
            data.extend_from_slice(&ex.input);
        }
        Ok(Self {
            inputs: Tensor::matrix(examples.len(), dim, data)?,
            labels: examples.iter().map(|e| e.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Episode {
    pub fn support_batch(&self) -> Result<Batch> {
        Batch::from_examples(&self.support)
    }

    pub fn query_batch(&self) -> Result<Batch> {
        Batch::from_examples(&self.query)
    }

    /// Checks the structural invariants: `k_shot` support examples per class,
    /// query labels drawn from the support labels, and no shared instances.
    pub fn validate(&self) -> Result<()> {
        if self.support.len() != self.n_way * self.k_shot {
            return Err(Error::contract(format!(
                "support has {} examples, expected {}",
                self.support.len(),
                self.n_way * self.k_shot
            )));
        }
        let mut per_class = vec![0usize; self.n_way];
        for ex in &self.support {
            *per_class
                .get_mut(ex.label)
                .ok_or_else(|| Error::contract(format!("label {} >= n_way", ex.label)))? += 1;
        }
        if per_class.iter().any(|&c| c != self.k_shot) {
            return Err(Error::contract(format!("uneven support: {per_class:?}")));
        }
        if let Some(ex) = self.query.iter().find(|e| e.label >= self.n_way) {
            return Err(Error::contract(format!("query label {} >= n_way", ex.label)));
        }
        let support_ids: HashSet<_> = self.support.iter().map(|e| e.instance).collect();
        if self.query.iter().any(|e| support_ids.contains(&e.instance)) {
            return Err(Error::contract("support and query share an instance"));
        }
        Ok(())
    }

    /// Writes the episode as CSV rows: `task_id,split,label,x0,x1,...`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let dim = self.support.first().map_or(0, |e| e.input.len());
        write!(out, "task_id,split,label")?;
        for i in 0..dim {
            write!(out, ",x{i}")?;
        }
        writeln!(out)?;
        for (split, set) in [("support", &self.support), ("query", &self.query)] {
            for ex in set {
                write!(out, "{},{split},{}", self.task_id, ex.label)?;
                for x in &ex.input {
                    write!(out, ",{x:.16e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}
