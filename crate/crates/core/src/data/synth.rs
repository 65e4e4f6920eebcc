//! Procedural walkers for desk-scale experiments.
//!
//! Each subject is a stick figure (head, torso ellipse, two legs, two arms)
//! with its own gait frequency, phase, swing amplitudes and proportions.
//! Views squash the sagittal axis, project the lateral axis and shear the
//! figure. A carried bag is a fixed blob on the back; a coat dilates the
//! torso. Frames are rendered on a larger canvas and then normalized.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pgm::{self, GrayImage};
use super::preprocess::{frame_to_image, preprocess_frame};
use super::{view_dir, Condition, ConditionIndex, VIEWS};
use crate::error::{Error, Result};

pub const CANVAS_HEIGHT: usize = 128;
pub const CANVAS_WIDTH: usize = 96;
const GROUND: f64 = 122.0;
const BAG_RADIUS: f64 = 8.0;
const COAT_DILATION: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_subjects: usize,
    pub views: Vec<u16>,
    pub conditions: Vec<ConditionIndex>,
    pub frames_per_seq: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// All 11 views and all 10 condition sequences.
    pub fn new(num_subjects: usize, seed: u64) -> Self {
        SynthConfig {
            num_subjects,
            views: VIEWS.to_vec(),
            conditions: ConditionIndex::all(),
            frames_per_seq: 36,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_subjects == 0 || self.frames_per_seq == 0 {
            return Err(Error::Config("synth needs at least one subject and one frame".into()));
        }
        if self.views.is_empty() || self.conditions.is_empty() {
            return Err(Error::Config("synth needs at least one view and one condition".into()));
        }
        if let Some(v) = self.views.iter().find(|v| !VIEWS.contains(v)) {
            return Err(Error::Config(format!("synth view {v} is not one of {VIEWS:?}")));
        }
        Ok(())
    }
}

pub fn subject_id(i: usize) -> String {
    format!("{:03}", i + 1)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-subject body and gait parameters (lengths in canvas pixels).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WalkerParams {
    /// Gait cycles per frame.
    pub frequency: f64,
    pub phase: f64,
    pub leg_amplitude: f64,
    pub arm_amplitude: f64,
    pub leg_length: f64,
    pub arm_length: f64,
    pub torso_half_height: f64,
    /// Torso half extent seen from the front.
    pub torso_half_width: f64,
    /// Torso half extent seen from the side.
    pub torso_half_depth: f64,
    pub head_radius: f64,
    pub limb_radius: f64,
    pub hip_half_width: f64,
    pub bob: f64,
}

impl WalkerParams {
    pub fn for_subject(seed: u64, subject: usize) -> Self {
        let mut rng = stream_rng(seed, 1 + subject as u64);
        WalkerParams {
            frequency: rng.gen_range(0.045..0.085),
            phase: rng.gen_range(0.0..2.0 * PI),
            leg_amplitude: rng.gen_range(0.25..0.55),
            arm_amplitude: rng.gen_range(0.15..0.6),
            leg_length: rng.gen_range(38.0..52.0),
            arm_length: rng.gen_range(24.0..36.0),
            torso_half_height: rng.gen_range(13.0..20.0),
            torso_half_width: rng.gen_range(8.0..13.0),
            torso_half_depth: rng.gen_range(5.0..9.0),
            head_radius: rng.gen_range(5.5..8.5),
            limb_radius: rng.gen_range(2.0..4.0),
            hip_half_width: rng.gen_range(3.0..6.0),
            bob: rng.gen_range(0.0..3.0),
        }
    }

    /// Leg swing angle (radians) of the left leg at time `t` (frames).
    pub fn swing(&self, t: f64) -> f64 {
        self.leg_amplitude * (2.0 * PI * self.frequency * t + self.phase).sin()
    }

    /// Canvas row of the hip line at time `t`.
    pub fn hip_row(&self, t: f64) -> f64 {
        let cycle = (2.0 * PI * self.frequency * t + self.phase).cos().abs();
        GROUND - self.leg_length - self.bob * cycle
    }
}

/// Horizontal projection for one camera angle.
#[derive(Clone, Copy, Debug)]
struct ViewTransform {
    sagittal: f64,
    lateral: f64,
    shear: f64,
    center: f64,
    pivot: f64,
}

impl ViewTransform {
    fn new(view: u16, center: f64, pivot: f64) -> Self {
        let th = view as f64 * PI / 180.0;
        ViewTransform {
            sagittal: 0.3 + 0.7 * th.sin().abs(),
            lateral: th.cos(),
            shear: 0.18 * th.cos(),
            center,
            pivot,
        }
    }

    /// Image column of body point (forward `x`, lateral `z`, row `y`).
    fn col(&self, x: f64, z: f64, y: f64) -> f64 {
        self.center + x * self.sagittal + z * self.lateral + self.shear * (y - self.pivot)
    }
}

fn paint(img: &mut GrayImage, r0: f64, r1: f64, c0: f64, c1: f64, inside: impl Fn(f64, f64) -> bool) {
    let rows = (r0.floor().max(0.0) as usize)..(r1.ceil().max(0.0) as usize).min(img.height);
    let cols = (c0.floor().max(0.0) as usize)..(c1.ceil().max(0.0) as usize).min(img.width);
    for r in rows {
        for c in cols.clone() {
            if inside(r as f64 + 0.5, c as f64 + 0.5) {
                img.set(r, c, 255);
            }
        }
    }
}

fn capsule(img: &mut GrayImage, a: (f64, f64), b: (f64, f64), radius: f64) {
    let (ay, ax) = a;
    let (by, bx) = b;
    let (dy, dx) = (by - ay, bx - ax);
    let len2 = (dy * dy + dx * dx).max(1e-12);
    paint(
        img,
        ay.min(by) - radius,
        ay.max(by) + radius,
        ax.min(bx) - radius,
        ax.max(bx) + radius,
        |y, x| {
            let t = (((y - ay) * dy + (x - ax) * dx) / len2).clamp(0.0, 1.0);
            let (py, px) = (ay + t * dy - y, ax + t * dx - x);
            py * py + px * px <= radius * radius
        },
    );
}

/// Ellipse with horizontal shear `k`: `((x - cx - k (y - cy)) / rx)^2 + ((y - cy) / ry)^2 <= 1`.
fn ellipse(img: &mut GrayImage, cy: f64, cx: f64, ry: f64, rx: f64, k: f64) {
    let reach = rx + k.abs() * ry;
    paint(img, cy - ry, cy + ry, cx - reach, cx + reach, |y, x| {
        let u = (x - cx - k * (y - cy)) / rx;
        let v = (y - cy) / ry;
        u * u + v * v <= 1.0
    });
}

/// Nuisance differences between recordings of the same subject and view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SequenceJitter {
    pub t0: f64,
    pub speed: f64,
    pub dx: f64,
}

impl SequenceJitter {
    pub fn none() -> Self {
        SequenceJitter {
            t0: 0.0,
            speed: 1.0,
            dx: 0.0,
        }
    }

    pub fn sample(seed: u64, subject: usize, condition: ConditionIndex, view: u16) -> Self {
        let cond = Condition::ALL.iter().position(|&c| c == condition.condition).unwrap() as u64;
        let stream = (1 << 40) | ((subject as u64) << 16) | (cond << 12) | ((condition.index as u64) << 8) | view as u64;
        let mut rng = stream_rng(seed, stream);
        SequenceJitter {
            t0: rng.gen_range(0.0..40.0),
            speed: rng.gen_range(0.97..1.03),
            dx: rng.gen_range(-6.0..6.0),
        }
    }
}

struct Pose {
    view: ViewTransform,
    hip: f64,
    torso_cy: f64,
    torso_rx: f64,
    shoulder: f64,
    swing: f64,
}

fn pose(p: &WalkerParams, view: u16, t: f64, dx: f64) -> Pose {
    let hip = p.hip_row(t);
    let th = view as f64 * PI / 180.0;
    let torso_rx = ((p.torso_half_depth * th.sin()).powi(2) + (p.torso_half_width * th.cos()).powi(2)).sqrt();
    Pose {
        view: ViewTransform::new(view, CANVAS_WIDTH as f64 / 2.0 + dx, hip),
        hip,
        torso_cy: hip - p.torso_half_height,
        torso_rx,
        shoulder: hip - 2.0 * p.torso_half_height + 3.0,
        swing: p.swing(t),
    }
}

/// Only the torso ellipse (dilated for coats) of the frame at time `t`.
pub fn torso_region(p: &WalkerParams, condition: Condition, view: u16, t: f64) -> GrayImage {
    let mut img = GrayImage::blank(CANVAS_WIDTH, CANVAS_HEIGHT);
    let q = pose(p, view, t, 0.0);
    draw_torso(&mut img, p, &q, condition);
    img
}

fn draw_torso(img: &mut GrayImage, p: &WalkerParams, q: &Pose, condition: Condition) {
    let grow = if condition == Condition::Cl { COAT_DILATION } else { 0.0 };
    let cx = q.view.col(0.0, 0.0, q.torso_cy);
    ellipse(
        img,
        q.torso_cy,
        cx,
        p.torso_half_height + grow,
        q.torso_rx + grow,
        q.view.shear,
    );
}

/// Raw canvas frame at time `t` (frames), before normalization.
pub fn render_frame(p: &WalkerParams, condition: Condition, view: u16, t: f64) -> GrayImage {
    render_jittered(p, condition, view, t, 0.0)
}

fn render_jittered(p: &WalkerParams, condition: Condition, view: u16, t: f64, dx: f64) -> GrayImage {
    let mut img = GrayImage::blank(CANVAS_WIDTH, CANVAS_HEIGHT);
    let q = pose(p, view, t, dx);
    let v = q.view;

    for side in [1.0, -1.0] {
        let a = side * q.swing;
        let z = side * p.hip_half_width;
        let foot_y = q.hip + p.leg_length * a.cos();
        let hip_pt = (q.hip, v.col(0.0, z, q.hip));
        let foot = (foot_y, v.col(p.leg_length * a.sin(), z, foot_y));
        capsule(&mut img, hip_pt, foot, p.limb_radius);

        let b = -side * q.swing * p.arm_amplitude / p.leg_amplitude;
        let zs = side * (p.torso_half_width + 1.0);
        let hand_y = q.shoulder + p.arm_length * b.cos();
        let sh = (q.shoulder, v.col(0.0, zs, q.shoulder));
        let hand = (hand_y, v.col(p.arm_length * b.sin(), zs, hand_y));
        capsule(&mut img, sh, hand, p.limb_radius * 0.8);
    }
    draw_torso(&mut img, p, &q, condition);
    let head_y = q.shoulder - 3.0 - p.head_radius;
    let head_x = v.col(0.0, 0.0, head_y);
    ellipse(&mut img, head_y, head_x, p.head_radius, p.head_radius, 0.0);

    if condition == Condition::Bg {
        let y = q.torso_cy;
        let x = v.col(-(p.torso_half_depth + 4.0), 0.6 * p.torso_half_width, y);
        ellipse(&mut img, y, x, BAG_RADIUS, BAG_RADIUS, 0.0);
    }
    img
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: String,
    pub condition: ConditionIndex,
    pub view: u16,
    pub frames: usize,
    /// SHA-256 over the frame files' bytes in order.
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub frames_per_seq: usize,
    pub subjects: Vec<String>,
    pub num_sequences: usize,
    pub sequences: Vec<ManifestEntry>,
}

impl Manifest {
    /// SHA-256 over every sequence checksum in manifest order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.sequences {
            h.update(e.sha256.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Checksum of a sequence directory as recorded in the manifest.
pub fn sequence_checksum(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(std::fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Normalized frames of one synthetic sequence.
pub fn sequence_frames(cfg: &SynthConfig, subject: usize, condition: ConditionIndex, view: u16) -> Vec<Vec<u8>> {
    let p = WalkerParams::for_subject(cfg.seed, subject);
    let j = SequenceJitter::sample(cfg.seed, subject, condition, view);
    (0..cfg.frames_per_seq)
        .filter_map(|f| {
            let t = j.t0 + j.speed * f as f64;
            preprocess_frame(&render_jittered(&p, condition.condition, view, t, j.dx))
        })
        .collect()
}

/// Renders the whole grid of subjects x conditions x views under `root` and
/// writes a JSON manifest next to it.
pub fn synth_generate(cfg: &SynthConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut jobs = Vec::new();
    for s in 0..cfg.num_subjects {
        for &c in &cfg.conditions {
            for &v in &cfg.views {
                jobs.push((s, c, v));
            }
        }
    }
    let entries: Vec<Result<ManifestEntry>> = jobs
        .par_iter()
        .map(|&(s, c, v)| {
            let dir = root.join(subject_id(s)).join(c.to_string()).join(view_dir(v));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let frames = sequence_frames(cfg, s, c, v);
            let mut h = Sha256::new();
            for (i, f) in frames.iter().enumerate() {
                let bytes = pgm::encode(&frame_to_image(f));
                let path = dir.join(format!("{i:04}.pgm"));
                std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
                h.update(&bytes);
            }
            Ok(ManifestEntry {
                subject: subject_id(s),
                condition: c,
                view: v,
                frames: frames.len(),
                sha256: hex::encode(h.finalize()),
            })
        })
        .collect();
    let sequences = entries.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        seed: cfg.seed,
        frames_per_seq: cfg.frames_per_seq,
        subjects: (0..cfg.num_subjects).map(subject_id).collect(),
        num_sequences: sequences.len(),
        sequences,
    };
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
