use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;

use super::episode::{Episode, Example, InstanceId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CharClass {
    pub name: String,
    pub instances: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alphabet {
    pub name: String,
    pub classes: Vec<CharClass>,
}

/// Alphabets of character classes, each class holding flattened instances
/// of a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTable {
    pub alphabets: Vec<Alphabet>,
    pub input_dim: usize,
    /// Character directories that held no images and were left out.
    pub skipped_empty: usize,
}

/// Which alphabets an episode may draw from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlphabetPool(Vec<usize>);

impl AlphabetPool {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

/// Disjoint training and evaluation alphabet pools.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlphabetSplit {
    pub train: AlphabetPool,
    pub eval: AlphabetPool,
}

impl AlphabetSplit {
    pub fn new(table: &ClassTable, train: Vec<usize>, eval: Vec<usize>) -> Result<Self> {
        for &i in train.iter().chain(&eval) {
            if i >= table.alphabets.len() {
                return Err(Error::Config(format!(
                    "alphabet index {i} out of range for a table of {}",
                    table.alphabets.len()
                )));
            }
        }
        let t: HashSet<_> = train.iter().collect();
        if let Some(shared) = eval.iter().find(|i| t.contains(i)) {
            return Err(Error::Config(format!(
                "alphabet {shared} appears in both the train and eval split"
            )));
        }
        if train.is_empty() || eval.is_empty() {
            return Err(Error::Config("train and eval alphabet lists must be non-empty".into()));
        }
        Ok(Self {
            train: AlphabetPool(train),
            eval: AlphabetPool(eval),
        })
    }

    /// Resolves alphabet names to indices.
    pub fn by_name(table: &ClassTable, train: &[String], eval: &[String]) -> Result<Self> {
        let find = |name: &String| {
            table
                .alphabets
                .iter()
                .position(|a| &a.name == name)
                .ok_or_else(|| Error::Config(format!("no alphabet named {name:?} in the table")))
        };
        let train = train.iter().map(find).collect::<Result<Vec<_>>>()?;
        let eval = eval.iter().map(find).collect::<Result<Vec<_>>>()?;
        Self::new(table, train, eval)
    }
}

impl ClassTable {
    pub fn class_count(&self) -> usize {
        self.alphabets.iter().map(|a| a.classes.len()).sum()
    }

    /// Samples an `n_way`-way `k_shot`-shot episode.
    ///
    /// One alphabet is drawn uniformly from those in `pool` that have at least
    /// `n_way` classes with `k_shot + query_per_class` instances; then `n_way`
    /// of its eligible classes; then disjoint support and query instances per
    /// class. Labels are the class positions in draw order, `0..n_way`.
    pub fn sample_episode<R: Rng + ?Sized>(
        &self,
        pool: &AlphabetPool,
        n_way: usize,
        k_shot: usize,
        query_per_class: usize,
        rng: &mut R,
    ) -> Result<Episode> {
        if n_way == 0 || k_shot == 0 {
            return Err(Error::Sampling("n_way and k_shot must be positive".into()));
        }
        let need = k_shot + query_per_class;
        let mut best = 0usize;
        let mut candidates: Vec<(usize, Vec<usize>)> = Vec::new();
        for &ai in pool.indices() {
            let Some(alpha) = self.alphabets.get(ai) else {
                return Err(Error::Sampling(format!("alphabet index {ai} out of range")));
            };
            let eligible: Vec<usize> = alpha
                .classes
                .iter()
                .enumerate()
                .filter(|(_, c)| c.instances.len() >= need)
                .map(|(i, _)| i)
                .collect();
            best = best.max(eligible.len());
            if eligible.len() >= n_way {
                candidates.push((ai, eligible));
            }
        }
        if candidates.is_empty() {
            let most = self
                .alphabets
                .iter()
                .flat_map(|a| a.classes.iter().map(|c| c.instances.len()))
                .max()
                .unwrap_or(0);
            return Err(Error::Sampling(format!(
                "no alphabet in the pool has {n_way} classes with {need} instances \
                 (best alphabet has {best} eligible classes; largest class has {most} instances)"
            )));
        }

        let (ai, eligible) = &candidates[rng.random_range(0..candidates.len())];
        let picked = sample(rng, eligible.len(), n_way);
        let mut task_id = format!("a{ai}");
        let mut support = Vec::with_capacity(n_way * k_shot);
        let mut query = Vec::with_capacity(n_way * query_per_class);
        for (label, pos) in picked.iter().enumerate() {
            let ci = eligible[pos];
            let class = &self.alphabets[*ai].classes[ci];
            task_id.push_str(&format!("-c{ci}"));
            let order = sample(rng, class.instances.len(), need);
            for (j, ii) in order.iter().enumerate() {
                let ex = Example {
                    input: class.instances[ii].clone(),
                    label,
                    instance: InstanceId {
                        alphabet: *ai,
                        class: ci,
                        index: ii,
                    },
                };
                if j < k_shot {
                    support.push(ex);
                } else {
                    query.push(ex);
                }
            }
        }
        Ok(Episode {
            support,
            query,
            n_way,
            k_shot,
            task_id,
        })
    }
}
