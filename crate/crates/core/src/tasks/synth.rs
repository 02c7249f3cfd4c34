use rand::Rng;
use rand_distr::StandardNormal;

use super::table::{Alphabet, CharClass, ClassTable};
use crate::error::{Error, Result};

/// Shape of a synthetic alphabet/character family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_alphabets: usize,
    pub classes_per_alphabet: usize,
    pub instances_per_class: usize,
    pub input_dim: usize,
    pub noise_sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_alphabets: 10,
            classes_per_alphabet: 8,
            instances_per_class: 20,
            input_dim: 16,
            noise_sigma: 0.5,
        }
    }
}

fn gaussian_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Modified Gram-Schmidt on the rows, in place.
fn orthonormalize(rows: &mut [Vec<f64>]) {
    for i in 0..rows.len() {
        for j in 0..i {
            let (done, rest) = rows.split_at_mut(i);
            let dot: f64 = rest[0].iter().zip(&done[j]).map(|(a, b)| a * b).sum();
            for (a, b) in rest[0].iter_mut().zip(&done[j]) {
                *a -= dot * b;
            }
        }
        let norm = rows[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        for a in rows[i].iter_mut() {
            *a /= norm;
        }
    }
}

/// A random orthogonal `n × n` matrix, row-major.
pub fn random_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut rows = gaussian_rows(n, n, rng);
    orthonormalize(&mut rows);
    rows
}

/// Builds a synthetic stand-in for a handwritten-character corpus.
///
/// Each alphabet gets a random rotation `R` (its "style") and each class a
/// prototype `p`, drawn as orthonormal directions scaled by `√input_dim`.
/// Instances are `R·(p + σ·n)` with standard normal noise `n`, so characters
/// of one alphabet share a common transform.
pub fn synth_proto_tasks<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<ClassTable> {
    let s = spec;
    if s.n_alphabets == 0 || s.classes_per_alphabet == 0 || s.instances_per_class == 0 || s.input_dim == 0 {
        return Err(Error::contract("synthetic table counts must be positive"));
    }
    if !(s.noise_sigma >= 0.0) {
        return Err(Error::contract("noise_sigma must be non-negative"));
    }
    if s.input_dim < s.classes_per_alphabet {
        return Err(Error::contract(format!(
            "input_dim {} cannot hold {} orthogonal prototypes",
            s.input_dim, s.classes_per_alphabet
        )));
    }
    let scale = (s.input_dim as f64).sqrt();
    let mut alphabets = Vec::with_capacity(s.n_alphabets);
    for a in 0..s.n_alphabets {
        let rotation = random_rotation(s.input_dim, rng);
        let mut protos = gaussian_rows(s.classes_per_alphabet, s.input_dim, rng);
        orthonormalize(&mut protos);
        let classes = protos
            .iter()
            .enumerate()
            .map(|(c, proto)| {
                let instances = (0..s.instances_per_class)
                    .map(|_| {
                        let raw: Vec<f64> = proto
                            .iter()
                            .map(|p| {
                                let n: f64 = rng.sample(StandardNormal);
                                scale * p + s.noise_sigma * n
                            })
                            .collect();
                        rotation
                            .iter()
                            .map(|row| row.iter().zip(&raw).map(|(r, x)| r * x).sum())
                            .collect()
                    })
                    .collect();
                CharClass {
                    name: format!("class{c:02}"),
                    instances,
                }
            })
            .collect();
        alphabets.push(Alphabet {
            name: format!("synth{a:02}"),
            classes,
        });
    }
    Ok(ClassTable {
        alphabets,
        input_dim: s.input_dim,
        skipped_empty: 0,
    })
}
