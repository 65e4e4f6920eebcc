//! Identity-balanced batches and fixed-length frame windows.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Independent random stream for one training iteration, so that any
/// iteration can be replayed (e.g. after resuming) without the ones before.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// Draws `P` distinct subjects and `K` sequences for each.
#[derive(Clone, Debug)]
pub struct BaSampler {
    /// Sequence ids per class id.
    groups: Vec<Vec<usize>>,
    p: usize,
    k: usize,
}

impl BaSampler {
    /// `groups[c]` lists the sequence ids of class `c`. Classes without
    /// sequences are never drawn.
    pub fn new(groups: Vec<Vec<usize>>, p: usize, k: usize) -> Result<Self> {
        let usable = groups.iter().filter(|g| !g.is_empty()).count();
        if usable < p {
            return Err(Error::Config(format!(
                "batch needs P={p} subjects but only {usable} have sequences"
            )));
        }
        if k == 0 {
            return Err(Error::Config("train.k must be positive".into()));
        }
        Ok(BaSampler { groups, p, k })
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    /// `(sequence id, class id)` pairs, grouped by class. Sequences are
    /// drawn without replacement unless the class has fewer than `K`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<(usize, usize)> {
        let classes: Vec<usize> = (0..self.groups.len()).filter(|&c| !self.groups[c].is_empty()).collect();
        let chosen = index::sample(rng, classes.len(), self.p);
        let mut out = Vec::with_capacity(self.batch_size());
        for ci in chosen.iter() {
            let class = classes[ci];
            let seqs = &self.groups[class];
            if seqs.len() >= self.k {
                for j in index::sample(rng, seqs.len(), self.k).iter() {
                    out.push((seqs[j], class));
                }
            } else {
                for _ in 0..self.k {
                    out.push((seqs[rng.gen_range(0..seqs.len())], class));
                }
            }
        }
        out
    }
}

/// Frame indices of a random contiguous window of `target` frames out of
/// `len`. Shorter sequences are first extended by cyclic repetition.
pub fn sample_window<R: Rng>(len: usize, target: usize, rng: &mut R) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::Domain("cannot take a window of an empty sequence".into()));
    }
    let extended = if len >= target { len } else { target.div_ceil(len) * len };
    let start = rng.gen_range(0..=extended - target);
    Ok((start..start + target).map(|i| i % len).collect())
}
