//! Batch-all triplet loss.
//!
//! For every valid (anchor, positive, negative) triple the hinge
//! `max(0, d(a,p) - d(a,n) + margin)` is taken with Euclidean `d`. A strip's
//! loss is the mean over triples with strictly positive hinge (zero when
//! none are active); the returned loss is the mean over strips.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Views embeddings as `(strips, n, d)`.
fn layout<T: Real>(emb: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize, usize)> {
    let (s, n, d) = match *emb.shape() {
        [n, d] => (1, n, d),
        [s, n, d] => (s, n, d),
        _ => {
            return Err(Error::dim(
                "batch_all_triplet",
                "rank",
                format!("expected (n, d) or (strips, n, d), got {:?}", emb.shape()),
            ))
        }
    };
    if labels.len() != n {
        return Err(Error::dim(
            "batch_all_triplet",
            "n",
            format!("{} labels for {n} embeddings", labels.len()),
        ));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Contract(
            "batch-all triplet loss needs at least two identities in the batch".into(),
        ));
    }
    Ok((s, n, d))
}

fn distances<T: Real>(e: &[T], n: usize, d: usize) -> Vec<T> {
    let mut dist = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let mut acc = T::zero();
            for k in 0..d {
                let diff = e[i * d + k] - e[j * d + k];
                acc += diff * diff;
            }
            let v = acc.sqrt();
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    dist
}

/// Calls `f(anchor, positive, negative, hinge)` for each active triple.
fn for_each_active<T: Real>(
    dist: &[T],
    labels: &[usize],
    margin: T,
    mut f: impl FnMut(usize, usize, usize, T),
) {
    let n = labels.len();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for q in 0..n {
                if labels[q] == labels[a] {
                    continue;
                }
                let hinge = dist[a * n + p] - dist[a * n + q] + margin;
                if hinge > T::zero() {
                    f(a, p, q, hinge);
                }
            }
        }
    }
}

pub fn forward<T: Real>(emb: &Tensor<T>, labels: &[usize], margin: T) -> Result<T> {
    let (s, n, d) = layout(emb, labels)?;
    let mut total = T::zero();
    for strip in 0..s {
        let e = &emb.data()[strip * n * d..(strip + 1) * n * d];
        let dist = distances(e, n, d);
        let mut sum = T::zero();
        let mut count = 0usize;
        for_each_active(&dist, labels, margin, |_, _, _, h| {
            sum += h;
            count += 1;
        });
        if count > 0 {
            total += sum / T::from_f64(count as f64);
        }
    }
    Ok(total / T::from_f64(s as f64))
}

/// Gradient of [`forward`] scaled by `upstream`. Pairs at zero distance get
/// the zero subgradient.
pub fn backward<T: Real>(emb: &Tensor<T>, labels: &[usize], margin: T, upstream: T) -> Result<Tensor<T>> {
    let (s, n, d) = layout(emb, labels)?;
    let mut grad = vec![T::zero(); emb.len()];
    for strip in 0..s {
        let off = strip * n * d;
        let e = &emb.data()[off..off + n * d];
        let dist = distances(e, n, d);
        let mut count = 0usize;
        for_each_active(&dist, labels, margin, |_, _, _, _| count += 1);
        if count == 0 {
            continue;
        }
        // d(loss)/d(dist[i][j]) for ordered pairs.
        let mut dd = vec![T::zero(); n * n];
        let coef = upstream / T::from_f64((count * s) as f64);
        for_each_active(&dist, labels, margin, |a, p, q, _| {
            dd[a * n + p] += coef;
            dd[a * n + q] -= coef;
        });
        let g = &mut grad[off..off + n * d];
        for i in 0..n {
            for j in 0..n {
                let w = dd[i * n + j];
                let dij = dist[i * n + j];
                if w == T::zero() || dij == T::zero() {
                    continue;
                }
                let scale = w / dij;
                for k in 0..d {
                    let diff = (e[i * d + k] - e[j * d + k]) * scale;
                    g[i * d + k] += diff;
                    g[j * d + k] -= diff;
                }
            }
        }
    }
    Tensor::new(emb.shape(), grad)
}
