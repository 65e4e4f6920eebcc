//! Law and oracle checks shared by the unit test binaries and the
//! acceptance runner. Each panics on the first violation and otherwise
//! returns the number of cases it examined.

use motiongait::data::{ConditionIndex, SequenceLabel, VIEWS};
use motiongait::evalproto::{build_gallery_probe, evaluate, rank1_matrix, EmbeddingRecord, ProbeGroup};
use motiongait::ffe::{ffe_global, ffe_local, fuse, FfeParams, Fusion};
use motiongait::mem::MotionExcitation;
use motiongait::ops::{self, ReduceOp};
use motiongait::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{conv3d as naive_conv3d, gem, lta, max_rel_err, random, rank1_cell, reduce, triplet};

pub const TOL: f64 = 1e-6;

pub fn conv3d_oracle() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = 120;
    for case in 0..cases {
        let ci = rng.gen_range(1..=3);
        let co = rng.gen_range(1..=3);
        let kt = rng.gen_range(1..=3);
        let kh = rng.gen_range(1..=3);
        let kw = rng.gen_range(1..=3);
        let stride = [rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=2)];
        let pad = [rng.gen_range(0..=1), rng.gen_range(0..=1), rng.gen_range(0..=1)];
        let s = rng.gen_range(kt..=6);
        let h = rng.gen_range(kh..=7);
        let w = rng.gen_range(kw..=7);
        let x = random(&[ci, s, h, w], &mut rng);
        let k = random(&[co, ci, kt, kh, kw], &mut rng);
        let b = random(&[co], &mut rng);
        let bias = (case % 2 == 0).then_some(&b);
        let got = ops::conv3d(&x, &k, bias, stride, pad).unwrap();
        let want = naive_conv3d(&x, &k, bias, stride, pad);
        assert_eq!(got.shape(), want.shape(), "case {case}");
        let err = max_rel_err(got.data(), want.data());
        assert!(err < TOL, "case {case}: {err}");
    }
    cases
}

pub fn lta_oracle() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = 100;
    for case in 0..cases {
        let c = rng.gen_range(1..=4);
        let kt = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=4);
        let s = rng.gen_range(kt..=12);
        let x = random(&[c, s, rng.gen_range(1..=4), rng.gen_range(1..=4)], &mut rng);
        let k = random(&[c, c, kt, 1, 1], &mut rng);
        let b = random(&[c], &mut rng);
        let mut g = Graph::new();
        let (xv, kv, bv) = (g.constant(x.clone()), g.constant(k.clone()), g.constant(b.clone()));
        let y = motiongait::backbone::lta(&mut g, xv, kv, Some(bv), stride).unwrap();
        let want = lta(&x, &k, &b, stride);
        assert_eq!(g.shape(y), want.shape(), "case {case}");
        assert!(max_rel_err(g.value(y).data(), want.data()) < TOL, "case {case}");
    }
    cases
}

pub fn reductions_oracle() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = 150;
    for case in 0..cases {
        let rank = rng.gen_range(1..=4);
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=5)).collect();
        let axis = rng.gen_range(0..rank);
        let x = random(&shape, &mut rng);
        for (op, max) in [(ReduceOp::Mean, false), (ReduceOp::Max, true)] {
            let (got, _) = ops::reduce(op, &x, axis).unwrap();
            let want = reduce(&x, axis, max);
            assert_eq!(got.shape(), want.shape(), "case {case}");
            assert!(max_rel_err(got.data(), want.data()) < TOL, "case {case}");
        }
    }
    cases
}

pub fn gem_oracle() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases = 120;
    for case in 0..cases {
        let shape = [rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=12)];
        let x = random(&shape, &mut rng);
        let p = rng.gen_range(0.5..8.0);
        let got = ops::gem_pool(&x, p, 1e-6).unwrap();
        let want = gem(&x, p, 1e-6);
        assert_eq!(got.shape(), want.shape());
        assert!(max_rel_err(got.data(), want.data()) < TOL, "case {case}");
    }
    cases
}

/// Every identity-balanced batch with `P * K <= 16`.
pub fn triplet_oracle() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for p in 2..=8 {
        for k in 2..=8 {
            if p * k > 16 {
                continue;
            }
            for _ in 0..10 {
                let strips = rng.gen_range(1..=3);
                let d = rng.gen_range(1..=4);
                let n = p * k;
                let labels: Vec<usize> = (0..n).map(|i| i / k).collect();
                let emb = random(&[strips, n, d], &mut rng);
                let margin = rng.gen_range(0.05..1.0);
                let nested: Vec<Vec<Vec<f64>>> = emb
                    .data()
                    .chunks(n * d)
                    .map(|s| s.chunks(d).map(|r| r.to_vec()).collect())
                    .collect();
                let want = triplet(&nested, &labels, margin);
                let mut g = Graph::new();
                let e = g.constant(emb);
                let got = g.batch_all_triplet(e, &labels, margin).unwrap();
                assert!((g.value(got).item() - want).abs() < TOL, "P={p} K={k}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 100);
    checked
}

pub fn label(subject: usize, cond: &str, view: u16) -> SequenceLabel {
    SequenceLabel {
        subject: format!("{subject:03}"),
        condition: cond.parse::<ConditionIndex>().unwrap(),
        view,
    }
}

/// Rank-1 cells against a stable brute-force sort, on 200-record sets.
pub fn rank1_oracle() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cells = 0;
    for _ in 0..20 {
        let mut records = Vec::new();
        while records.len() < 200 {
            let subject = rng.gen_range(0..6);
            let cond = ["nm-01", "nm-02", "nm-03", "nm-04", "nm-05", "nm-06", "bg-01", "cl-02"][rng.gen_range(0..8)];
            let view = VIEWS[rng.gen_range(0..VIEWS.len())];
            // Coarse values make exact distance ties common.
            let descriptor = (0..3).map(|_| rng.gen_range(0..3) as f32).collect();
            records.push(EmbeddingRecord {
                label: label(subject, cond, view),
                descriptor,
            });
        }
        let gp = build_gallery_probe(&records);
        let simple = |rs: &[&EmbeddingRecord]| -> Vec<(usize, u16, Vec<f32>)> {
            rs.iter()
                .map(|r| (r.label.subject.parse().unwrap(), r.label.view, r.descriptor.clone()))
                .collect()
        };
        let gallery = simple(&gp.gallery);
        for (_, probes) in &gp.probes {
            let m = rank1_matrix(&gp.gallery, probes).unwrap();
            let probes = simple(probes);
            for (r, &pv) in VIEWS.iter().enumerate() {
                for (c, &gv) in VIEWS.iter().enumerate() {
                    assert_eq!(m[r][c], rank1_cell(&gallery, &probes, pv, gv));
                    cells += 1;
                }
            }
        }
    }
    cells
}

/// Random descriptors over `G` subjects score `100 / G` within five points.
pub fn chance_level() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let subjects = 10;
    let mut records = Vec::new();
    for s in 0..subjects {
        for cond in ["nm-01", "nm-05", "nm-06"] {
            for &v in &VIEWS {
                let descriptor = (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                records.push(EmbeddingRecord {
                    label: label(s, cond, v),
                    descriptor,
                });
            }
        }
    }
    let mut total = 0.0;
    let trials = 40;
    for _ in 0..trials {
        for r in records.iter_mut() {
            r.descriptor = (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        }
        total += evaluate(&records).unwrap().condition(ProbeGroup::Nm).unwrap().mean.unwrap();
    }
    let mean = total / trials as f64;
    let chance = 100.0 / subjects as f64;
    assert!((mean - chance).abs() <= 5.0, "mean {mean} vs chance {chance}");
    mean
}

fn apply_mem(x: &Tensor<f64>, l: usize) -> Tensor<f64> {
    MotionExcitation::new(l).unwrap().apply(x).unwrap()
}

pub fn mem_has_no_parameters() -> usize {
    for l in 2..=5 {
        let m = MotionExcitation::new(l).unwrap();
        assert_eq!(m.num_parameters(), 0);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2, 5, 3, 3], 0.3));
        let y = m.forward(&mut g, x).unwrap();
        assert!(!g.requires_grad(y));
    }
    4
}

pub fn mem_preserves_shape() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for s in 1..=7 {
        for l in 2..=5 {
            let x = random(&[3, s, 4, 2], &mut rng);
            assert_eq!(apply_mem(&x, l).shape(), x.shape(), "s={s} L={l}");
        }
    }
    28
}

pub fn mem_constant_sequence() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for s in 1..=7 {
        for l in 2..=5 {
            let (c, h, w) = (2, 3, 2);
            let frame: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x = Tensor::from_fn(&[c, s, h, w], |i| {
                let ci = i / (s * h * w);
                frame[ci * h * w + i % (h * w)]
            });
            let y = apply_mem(&x, l);
            for (a, b) in y.data().iter().zip(x.data()) {
                assert!((a - (b + 0.5)).abs() < 1e-6, "s={s} L={l}");
            }
        }
    }
    28
}

pub fn mem_bounded_residual() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cases = 1000;
    for _ in 0..cases {
        let s = rng.gen_range(1..=7);
        let l = rng.gen_range(2..=5);
        let x = Tensor::from_fn(&[2, s, 3, 2], |_| rng.gen_range(-4.0..4.0));
        let y = apply_mem(&x, l);
        for (a, b) in y.data().iter().zip(x.data()) {
            let r = a - b;
            assert!(r > 0.0 && r < 1.0, "residual {r}");
        }
    }
    cases
}

/// Permutes frames `[start, start + perm.len())` of a `(c, s, h, w)` tensor.
fn permute_frames(x: &Tensor<f64>, start: usize, perm: &[usize]) -> Tensor<f64> {
    let [c, s, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let hw = h * w;
    Tensor::from_fn(&[c, s, h, w], |i| {
        let ci = i / (s * hw);
        let t = (i / hw) % s;
        let src = if t >= start && t < start + perm.len() {
            start + perm[t - start]
        } else {
            t
        };
        x.data()[(ci * s + src) * hw + i % hw]
    })
}

pub fn mem_permutation_equivariance() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cases = 100;
    for case in 0..cases {
        let l = rng.gen_range(2..=5);
        let s = rng.gen_range(1..=12);
        let x = random(&[2, s, 2, 3], &mut rng);
        let clips = s.div_ceil(l);
        let j = rng.gen_range(0..clips);
        let start = j * l;
        let len = (s - start).min(l);
        let mut perm: Vec<usize> = (0..len).collect();
        for i in (1..len).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let lhs = apply_mem(&permute_frames(&x, start, &perm), l);
        let rhs = permute_frames(&apply_mem(&x, l), start, &perm);
        assert!(lhs.max_abs_diff(&rhs) < 1e-12, "case {case}");
    }
    cases
}

pub fn ffe_local_output(params: &FfeParams<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let xv = g.constant(x.clone());
    let y = ffe_local(&mut g, xv, &vars.parts).unwrap();
    g.value(y).clone()
}

pub fn ffe_part_locality() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let cases = 50;
    for case in 0..cases {
        let n = rng.gen_range(1..=4);
        let part_h = rng.gen_range(1..=3);
        let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (s, h, w) = (rng.gen_range(1..=4), n * part_h, rng.gen_range(1..=4));
        let params = FfeParams::<f64>::init(ci, co, n, Fusion::Add, true, &mut rng).unwrap();
        let x = random(&[ci, s, h, w], &mut rng);
        let k = rng.gen_range(0..n);
        let mut x2 = x.clone().into_data();
        for c in 0..ci {
            for t in 0..s {
                for y in k * part_h..(k + 1) * part_h {
                    for z in 0..w {
                        x2[((c * s + t) * h + y) * w + z] += rng.gen_range(0.5..2.0);
                    }
                }
            }
        }
        let x2 = Tensor::new(x.shape(), x2).unwrap();
        let (a, b) = (ffe_local_output(&params, &x), ffe_local_output(&params, &x2));
        for c in 0..co {
            for t in 0..s {
                for y in 0..h {
                    if y / part_h == k {
                        continue;
                    }
                    for z in 0..w {
                        let i = ((c * s + t) * h + y) * w + z;
                        assert_eq!(a.data()[i].to_bits(), b.data()[i].to_bits(), "case {case}");
                    }
                }
            }
        }
    }
    cases
}

pub fn ffe_fusion_heights() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cases = 20;
    for _ in 0..cases {
        let n = rng.gen_range(1..=4);
        let (ci, co, s, h, w) = (2, 3, rng.gen_range(1..=4), n * rng.gen_range(1..=3), rng.gen_range(1..=4));
        let x = random(&[ci, s, h, w], &mut rng);
        for (fusion, want_h) in [(Fusion::Add, h), (Fusion::ConcatH, 2 * h)] {
            let p = FfeParams::<f64>::init(ci, co, n, fusion, true, &mut rng).unwrap();
            let mut g = Graph::new();
            let vars = p.bind(&mut g);
            let xv = g.constant(x.clone());
            let gl = ffe_global(&mut g, xv, vars.global.0, vars.global.1).unwrap();
            let lo = ffe_local(&mut g, xv, &vars.parts).unwrap();
            let y = fuse(&mut g, gl, lo, fusion).unwrap();
            assert_eq!(g.shape(y), &[co, s, want_h, w]);
            if fusion == Fusion::ConcatH {
                // Global rows on top, local rows below.
                let v = g.value(y);
                let (gv, lv) = (g.value(gl), g.value(lo));
                for c in 0..co {
                    for t in 0..s {
                        let base = (c * s + t) * 2 * h * w;
                        let src = (c * s + t) * h * w;
                        assert_eq!(&v.data()[base..base + h * w], &gv.data()[src..src + h * w]);
                        assert_eq!(&v.data()[base + h * w..base + 2 * h * w], &lv.data()[src..src + h * w]);
                    }
                }
            }
        }
    }
    cases
}

pub fn ffe_single_part_is_global() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let cases = 20;
    for _ in 0..cases {
        let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let x = random(&[ci, rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(1..=5)], &mut rng);
        let p = FfeParams::<f64>::init(ci, co, 1, Fusion::Add, true, &mut rng).unwrap();
        let got = ffe_local_output(&p, &x);
        let want = ops::conv3d(&x, &p.part_kernels[0], Some(&p.part_biases[0]), [1; 3], [1; 3]).unwrap();
        assert_eq!(got, want);
        let naive = naive_conv3d(&x, &p.part_kernels[0], Some(&p.part_biases[0]), [1; 3], [1; 3]);
        assert!(max_rel_err(got.data(), naive.data()) < 1e-12);
    }
    cases
}
