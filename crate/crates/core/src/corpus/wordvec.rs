//! Simulated "pretrained" word vectors: the ground-truth latents plus
//! Gaussian noise, renormalized. The sampler's relevance term runs on these,
//! so it is informative but imperfect, like real pretrained embeddings.

use super::universe::{Universe, WordId};
use crate::error::{Error, Result};
use crate::rng::{next_gaussian, rng_from};

#[derive(Debug, Clone, PartialEq)]
pub struct WordVecTable {
    pub dim: usize,
    vectors: Vec<Vec<f32>>,
}

impl WordVecTable {
    pub fn vector(&self, word: WordId) -> &[f32] {
        &self.vectors[word.index()]
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Mean of the word vectors of a text, as f64.
    pub fn mean_vector(&self, words: &[WordId]) -> Result<Vec<f64>> {
        if words.is_empty() {
            return Err(Error::EmptyInput("mean vector of zero words".into()));
        }
        let mut mean = vec![0.0f64; self.dim];
        for w in words {
            for (m, v) in mean.iter_mut().zip(self.vector(*w)) {
                *m += f64::from(*v);
            }
        }
        let inv = 1.0 / words.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        Ok(mean)
    }
}

pub fn pretrained_word_vectors(
    universe: &Universe,
    noise_sigma: f64,
    seed: u64,
) -> Result<WordVecTable> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::config("noise_sigma", "must be >= 0"));
    }
    let mut rng = rng_from(seed, "wordvec");
    let mut vectors = Vec::with_capacity(universe.words.len());
    for word in &universe.words {
        // One vector per word: polysemous words collapse to their sense
        // mean, the way sense-blind pretrained embeddings do.
        let base: Vec<f64> = match &word.topic_alt {
            None => word.topic.iter().map(|t| f64::from(*t)).collect(),
            Some(alt) => {
                let mut mean: Vec<f64> = word
                    .topic
                    .iter()
                    .zip(alt)
                    .map(|(a, b)| 0.5 * (f64::from(*a) + f64::from(*b)))
                    .collect();
                let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    for x in &mut mean {
                        *x /= norm;
                    }
                }
                mean
            }
        };
        if noise_sigma == 0.0 && word.topic_alt.is_none() {
            vectors.push(word.topic.clone());
            continue;
        }
        let mut v: Vec<f64> = base
            .iter()
            .map(|t| t + noise_sigma * next_gaussian(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            v = base;
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        vectors.push(v.into_iter().map(|x| x as f32).collect());
    }
    Ok(WordVecTable {
        dim: universe.latent_dim,
        vectors,
    })
}
