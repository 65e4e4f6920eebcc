//! Naive reference implementations, written independently of the crate's
//! kernels, plus small random-input helpers.

#![allow(dead_code)]

pub mod suites;

use motiongait::Tensor;
use rand::Rng;

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Direct seven-loop 3D convolution over `(c, s, h, w)` with zero padding.
pub fn conv3d(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<f64> {
    let xs = x.shape();
    let ks = k.shape();
    let (ci, s, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, kt, kh, kw) = (ks[0], ks[2], ks[3], ks[4]);
    assert_eq!(ks[1], ci);
    let out_len = |n: usize, kk: usize, st: usize, p: usize| (n + 2 * p - kk) / st + 1;
    let (so, ho, wo) = (
        out_len(s, kt, stride[0], pad[0]),
        out_len(h, kh, stride[1], pad[1]),
        out_len(w, kw, stride[2], pad[2]),
    );
    let at = |c: usize, t: i64, y: i64, z: i64| -> f64 {
        if t < 0 || y < 0 || z < 0 || t >= s as i64 || y >= h as i64 || z >= w as i64 {
            0.0
        } else {
            x.data()[((c * s + t as usize) * h + y as usize) * w + z as usize]
        }
    };
    let mut out = Vec::with_capacity(co * so * ho * wo);
    for o in 0..co {
        for t in 0..so {
            for y in 0..ho {
                for z in 0..wo {
                    let mut acc = bias.map_or(0.0, |b| b.data()[o]);
                    for c in 0..ci {
                        for a in 0..kt {
                            for b in 0..kh {
                                for d in 0..kw {
                                    let kv = k.data()[(((o * ci + c) * kt + a) * kh + b) * kw + d];
                                    let ti = (t * stride[0] + a) as i64 - pad[0] as i64;
                                    let yi = (y * stride[1] + b) as i64 - pad[1] as i64;
                                    let zi = (z * stride[2] + d) as i64 - pad[2] as i64;
                                    acc += kv * at(c, ti, yi, zi);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(&[co, so, ho, wo], out).unwrap()
}

/// Temporal aggregation written out directly: output frame `t` mixes input
/// frames `t*stride .. t*stride + kt` pointwise across channels.
pub fn lta(x: &Tensor<f64>, k: &Tensor<f64>, bias: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let (ci, s, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kt) = (k.shape()[0], k.shape()[2]);
    let so = (s - kt) / stride + 1;
    let mut out = vec![0.0; co * so * h * w];
    for o in 0..co {
        for t in 0..so {
            for p in 0..h * w {
                let mut acc = bias.data()[o];
                for c in 0..ci {
                    for a in 0..kt {
                        acc += k.data()[(o * ci + c) * kt + a] * x.data()[(c * s + t * stride + a) * h * w + p];
                    }
                }
                out[(o * so + t) * h * w + p] = acc;
            }
        }
    }
    Tensor::new(&[co, so, h, w], out).unwrap()
}

/// Mean or max along `axis` by index arithmetic over the full shape.
pub fn reduce(x: &Tensor<f64>, axis: usize, max: bool) -> Tensor<f64> {
    let shape = x.shape().to_vec();
    let mut out_shape = shape.clone();
    out_shape.remove(axis);
    let out_len: usize = out_shape.iter().product();
    let mut out = vec![if max { f64::NEG_INFINITY } else { 0.0 }; out_len];
    let mut idx = vec![0usize; shape.len()];
    for &v in x.data() {
        let mut flat = 0;
        for (d, &i) in idx.iter().enumerate() {
            if d != axis {
                flat = flat * shape[d] + i;
            }
        }
        if max {
            out[flat] = out[flat].max(v);
        } else {
            out[flat] += v / shape[axis] as f64;
        }
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out).unwrap()
}

/// Generalized mean over the last axis of `max(x, 0) + eps`.
pub fn gem(x: &Tensor<f64>, p: f64, eps: f64) -> Tensor<f64> {
    let w = *x.shape().last().unwrap();
    let out: Vec<f64> = x
        .data()
        .chunks(w)
        .map(|row| {
            let m = row.iter().map(|&v| (v.max(0.0) + eps).powf(p)).sum::<f64>() / w as f64;
            m.powf(1.0 / p)
        })
        .collect();
    let shape = &x.shape()[..x.shape().len() - 1];
    Tensor::new(shape, out).unwrap()
}

/// Batch-all triplet loss by enumerating every (a, p, n) per strip.
pub fn triplet(emb: &[Vec<Vec<f64>>], labels: &[usize], margin: f64) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for strip in emb {
        let mut active = Vec::new();
        for a in 0..labels.len() {
            for p in 0..labels.len() {
                for n in 0..labels.len() {
                    if a != p && labels[a] == labels[p] && labels[n] != labels[a] {
                        let l = dist(&strip[a], &strip[p]) - dist(&strip[a], &strip[n]) + margin;
                        if l > 0.0 {
                            active.push(l);
                        }
                    }
                }
            }
        }
        if !active.is_empty() {
            total += active.iter().sum::<f64>() / active.len() as f64;
        }
    }
    total / emb.len() as f64
}

/// Rank-1 cell by sorting the whole gallery view by distance (stable, so
/// equal distances keep gallery order).
pub fn rank1_cell(
    gallery: &[(usize, u16, Vec<f32>)],
    probes: &[(usize, u16, Vec<f32>)],
    probe_view: u16,
    gallery_view: u16,
) -> Option<f64> {
    let g: Vec<&(usize, u16, Vec<f32>)> = gallery.iter().filter(|r| r.1 == gallery_view).collect();
    let p: Vec<&(usize, u16, Vec<f32>)> = probes.iter().filter(|r| r.1 == probe_view).collect();
    if g.is_empty() || p.is_empty() {
        return None;
    }
    let mut correct = 0;
    for q in &p {
        let mut ranked: Vec<(f64, usize)> = g
            .iter()
            .map(|r| {
                let d: f64 = r.2.iter().zip(&q.2).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
                (d, r.0)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if ranked[0].1 == q.0 {
            correct += 1;
        }
    }
    Some(100.0 * correct as f64 / p.len() as f64)
}
