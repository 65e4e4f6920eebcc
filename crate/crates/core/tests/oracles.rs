mod common;

use common::suites;
use motiongait::ops;
use motiongait::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = suites::TOL;

#[test]
fn conv3d_matches_naive_loops() {
    suites::conv3d_oracle();
}

#[test]
fn lta_matches_naive_loops() {
    suites::lta_oracle();
}

#[test]
fn reductions_match_naive_loops() {
    suites::reductions_oracle();
}

#[test]
fn gem_matches_naive_loops() {
    suites::gem_oracle();
}

#[test]
fn triplet_matches_enumeration_for_small_batches() {
    suites::triplet_oracle();
}

#[test]
fn rank1_matrix_matches_brute_force() {
    suites::rank1_oracle();
}

#[test]
fn random_descriptors_score_at_chance() {
    suites::chance_level();
}

#[test]
fn matmul_and_strip_matmul_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let (m, k, p) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6));
        let a = common::random(&[m, k], &mut rng);
        let b = common::random(&[k, p], &mut rng);
        let got = ops::matmul(&a, &b).unwrap();
        for i in 0..m {
            for j in 0..p {
                let want: f64 = (0..k).map(|t| a.data()[i * k + t] * b.data()[t * p + j]).sum();
                assert!((got.data()[i * p + j] - want).abs() < TOL);
            }
        }
        let s = rng.gen_range(1..4);
        let x = common::random(&[m, s, k], &mut rng);
        let w = common::random(&[s, k, p], &mut rng);
        let got: Tensor<f64> = ops::strip_matmul(&x, &w).unwrap();
        for n in 0..m {
            for st in 0..s {
                for j in 0..p {
                    let want: f64 = (0..k)
                        .map(|t| x.data()[(n * s + st) * k + t] * w.data()[(st * k + t) * p + j])
                        .sum();
                    assert!((got.data()[(n * s + st) * p + j] - want).abs() < TOL);
                }
            }
        }
    }
}
