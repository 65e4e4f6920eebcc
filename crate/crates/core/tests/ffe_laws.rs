mod common;

use common::suites;
use motiongait::ffe::{ffe_local, FfeParams, Fusion};
use motiongait::ops;
use motiongait::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn perturbing_one_part_leaves_other_parts_bit_identical() {
    suites::ffe_part_locality();
}

#[test]
fn variant_a_keeps_height_and_variant_b_doubles_it() {
    suites::ffe_fusion_heights();
}

#[test]
fn one_part_equals_a_global_convolution() {
    suites::ffe_single_part_is_global();
}

#[test]
fn indivisible_height_is_a_config_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let p = FfeParams::<f64>::init(1, 1, 3, Fusion::Add, true, &mut rng).unwrap();
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 2]));
    assert!(matches!(
        ffe_local(&mut g, x, &vars.parts),
        Err(motiongait::Error::Config(_))
    ));
}

proptest! {
    #[test]
    fn local_output_of_a_part_depends_only_on_that_part(
        seed in any::<u64>(),
        n in 1usize..4,
        part_h in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FfeParams::<f64>::init(1, 2, n, Fusion::Add, true, &mut rng).unwrap();
        let h = n * part_h;
        let x = common::random(&[1, 2, h, 3], &mut rng);
        let full = suites::ffe_local_output(&p, &x);
        // Convolving a part on its own reproduces its rows of the full output.
        for k in 0..n {
            let part = Tensor::from_fn(&[1, 2, part_h, 3], |i| {
                let t = i / (part_h * 3);
                let y = (i / 3) % part_h;
                x.data()[(t * h + k * part_h + y) * 3 + i % 3]
            });
            let alone = ops::conv3d(&part, &p.part_kernels[k], Some(&p.part_biases[k]), [1; 3], [1; 3]).unwrap();
            for c in 0..2 {
                for t in 0..2 {
                    for y in 0..part_h {
                        for z in 0..3 {
                            let a = alone.data()[((c * 2 + t) * part_h + y) * 3 + z];
                            let b = full.data()[((c * 2 + t) * h + k * part_h + y) * 3 + z];
                            prop_assert_eq!(a.to_bits(), b.to_bits());
                        }
                    }
                }
            }
        }
    }
}
