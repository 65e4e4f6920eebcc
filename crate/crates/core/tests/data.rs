use std::fs;

use motiongait::data::pgm::{self, GrayImage};
use motiongait::data::preprocess::{centroid_column, frame_to_image};
use motiongait::data::synth::{render_frame, sequence_frames, torso_region, WalkerParams};
use motiongait::data::{
    load_dataset, load_sequence, preprocess_frame, synth_generate, Condition, ConditionIndex, Manifest, Split,
    SplitConfig, SynthConfig, FRAME_HEIGHT, FRAME_WIDTH, MANIFEST_FILE, VIEWS,
};
use proptest::prelude::*;

fn count(img: &GrayImage) -> usize {
    img.data.iter().filter(|&&v| v > 0).count()
}

fn contains(outer: &GrayImage, inner: &GrayImage) -> bool {
    outer.data.iter().zip(&inner.data).all(|(&o, &i)| i == 0 || o > 0)
}

fn hamming(a: &GrayImage, b: &GrayImage) -> usize {
    a.data.iter().zip(&b.data).filter(|(x, y)| (**x > 0) != (**y > 0)).count()
}

/// Union of rectangles inside a box narrow enough to fit 44 columns
/// after scaling to height 64.
fn blob() -> impl Strategy<Value = GrayImage> {
    (20usize..60, 0usize..40, proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..5))
        .prop_map(|(bh, off, rects)| {
            let bw = (bh * 40 / 64).max(2);
            let (w, h) = (bw + off + 5, bh + 10);
            let mut img = GrayImage::blank(w, h);
            // Pin the vertical extent so the aspect bound holds.
            for r in 0..bh {
                img.set(5 + r, off + bw / 2, 255);
            }
            for (a, b, c, d) in rects {
                let (r0, c0) = ((a * bh as f64) as usize, (b * bw as f64) as usize);
                let r1 = (r0 + 1 + (c * (bh - r0) as f64) as usize).min(bh);
                let c1 = (c0 + 1 + (d * (bw - c0) as f64) as usize).min(bw);
                for r in r0..r1 {
                    for col in c0..c1 {
                        img.set(5 + r, off + col, 200);
                    }
                }
            }
            img
        })
}

proptest! {
    #[test]
    fn preprocessing_is_idempotent(img in blob()) {
        let once = preprocess_frame(&img).unwrap();
        prop_assert_eq!(once.len(), FRAME_HEIGHT * FRAME_WIDTH);
        prop_assert!(once.iter().all(|&v| v <= 1));
        let twice = preprocess_frame(&frame_to_image(&once)).unwrap();
        prop_assert_eq!(&once, &twice);
        // Centering is clamped so nothing is cropped; a clamped frame touches a side.
        let c = centroid_column(&once, FRAME_WIDTH).unwrap();
        let touches = (0..FRAME_HEIGHT)
            .any(|r| once[r * FRAME_WIDTH] == 1 || once[r * FRAME_WIDTH + FRAME_WIDTH - 1] == 1);
        prop_assert!(touches || (c - 22.0).abs() <= 0.5, "centroid {}", c);
        // Top and bottom rows are occupied.
        prop_assert!(once[..FRAME_WIDTH].contains(&1));
        prop_assert!(once[(FRAME_HEIGHT - 1) * FRAME_WIDTH..].contains(&1));
    }

    #[test]
    fn pgm_round_trips(w in 1usize..20, h in 1usize..20, seed in any::<u8>()) {
        let img = GrayImage::new(w, h, (0..w * h).map(|i| (i as u8).wrapping_mul(seed)).collect()).unwrap();
        prop_assert_eq!(pgm::decode(&pgm::encode(&img)).unwrap(), img);
    }
}

#[test]
fn gait_repeats_every_half_cycle_in_side_view() {
    for subject in 0..6 {
        let p = WalkerParams::for_subject(3, subject);
        let half = 0.5 / p.frequency;
        let mut quarter = 0;
        for k in 0..5 {
            let t = 3.7 * k as f64;
            let a = render_frame(&p, Condition::Nm, 90, t);
            let b = render_frame(&p, Condition::Nm, 90, t + half);
            let q = render_frame(&p, Condition::Nm, 90, t + half / 2.0);
            let same = hamming(&a, &b);
            assert!(same <= 4, "subject {subject}: {same} pixels differ after half a cycle");
            quarter += hamming(&a, &q);
        }
        assert!(quarter > 1000, "subject {subject}: quarter cycles differ by only {quarter}");
    }
}

#[test]
fn subjects_walk_at_different_frequencies() {
    let f: Vec<f64> = (0..8).map(|s| WalkerParams::for_subject(1, s).frequency).collect();
    for i in 0..f.len() {
        for j in i + 1..f.len() {
            assert_ne!(f[i], f[j]);
        }
    }
}

#[test]
fn coat_grows_the_torso_and_bag_only_adds_pixels() {
    // Near-frontal views can hide the bag behind the torso.
    for subject in 0..4 {
        let p = WalkerParams::for_subject(5, subject);
        for &v in &VIEWS {
            let t = 2.5;
            let nm = torso_region(&p, Condition::Nm, v, t);
            let cl = torso_region(&p, Condition::Cl, v, t);
            assert!(contains(&cl, &nm));
            assert!(count(&cl) > count(&nm) + 50, "view {v}");
            let body = render_frame(&p, Condition::Nm, v, t);
            let bag = render_frame(&p, Condition::Bg, v, t);
            assert!(contains(&bag, &body));
            if v >= 36 {
                assert!(count(&bag) > count(&body), "view {v}");
            }
        }
    }
}

#[test]
fn generation_is_deterministic_and_loadable() {
    let cfg = SynthConfig {
        views: vec![0, 90],
        conditions: ["nm-01", "nm-05", "cl-01"].iter().map(|c| c.parse().unwrap()).collect(),
        frames_per_seq: 6,
        ..SynthConfig::new(3, 7)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = synth_generate(&cfg, a.path()).unwrap();
    let mb = synth_generate(&cfg, b.path()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(ma.digest(), mb.digest());
    assert_eq!(ma.num_sequences, 3 * 3 * 2);
    assert_eq!(Manifest::load(&a.path().join(MANIFEST_FILE)).unwrap(), ma);
    let other = SynthConfig { seed: 8, ..cfg.clone() };
    let c = tempfile::tempdir().unwrap();
    assert_ne!(synth_generate(&other, c.path()).unwrap().digest(), ma.digest());

    let index = load_dataset(a.path(), SplitConfig { train_subjects: 2 }).unwrap();
    assert_eq!(index.entries(Split::All).len(), 18);
    assert_eq!(index.entries(Split::Train).len(), 12);
    assert_eq!(index.num_classes(), 2);
    let e = index.entries(Split::Test)[0];
    let seq = load_sequence(e).unwrap();
    assert_eq!(seq.num_frames(), 6);
    let want = sequence_frames(&cfg, 2, e.label.condition, e.label.view);
    assert_eq!(seq.frames, want.concat());
}

#[test]
fn loader_rejects_bad_names_and_skips_bad_frames() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("001/nm-01/090");
    fs::create_dir_all(&seq).unwrap();
    let mut img = GrayImage::blank(10, 20);
    for r in 2..18 {
        img.set(r, 5, 255);
    }
    pgm::write(&seq.join("0000.pgm"), &img).unwrap();
    fs::write(seq.join("0001.pgm"), b"P5 garbage").unwrap();
    pgm::write(&seq.join("0002.pgm"), &GrayImage::blank(10, 20)).unwrap();
    let index = load_dataset(dir.path(), SplitConfig::default()).unwrap();
    let s = load_sequence(index.entries(Split::All)[0]).unwrap();
    assert_eq!(s.num_frames(), 1);

    fs::create_dir_all(dir.path().join("001/xx-01/090")).unwrap();
    fs::create_dir_all(dir.path().join("001/nm-02/091")).unwrap();
    match load_dataset(dir.path(), SplitConfig::default()) {
        Err(motiongait::Error::Ingestion(m)) => assert!(m.contains("xx-01") && m.contains("091"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        load_dataset(&dir.path().join("missing"), SplitConfig::default()),
        Err(motiongait::Error::Io { .. })
    ));
}

#[test]
fn condition_labels_round_trip() {
    for c in ConditionIndex::all() {
        assert_eq!(c.to_string().parse::<ConditionIndex>().unwrap(), c);
    }
    assert!("nm-07".parse::<ConditionIndex>().is_err());
    assert!("bg-03".parse::<ConditionIndex>().is_err());
}
