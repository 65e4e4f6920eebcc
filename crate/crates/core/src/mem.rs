//! Motion excitation.
//!
//! The time axis of a `(c, s, h, w)` feature map is cut into clips of
//! `clip_len` frames. Each clip's mean frame is its static feature; a
//! frame's motion feature is its absolute deviation from the static feature
//! of its clip. The output is `x + sigmoid(x * motion)`, so the module adds
//! no parameters and accepts any sequence length.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

const TIME_AXIS: usize = 1;

/// Contiguous, non-overlapping clips covering `[0, s)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipPartition {
    clip_len: usize,
    boundaries: Vec<(usize, usize)>,
}

impl ClipPartition {
    pub fn clip_len(&self) -> usize {
        self.clip_len
    }

    /// Half-open `(start, end)` frame ranges.
    pub fn boundaries(&self) -> &[(usize, usize)] {
        &self.boundaries
    }

    pub fn num_clips(&self) -> usize {
        self.boundaries.len()
    }

    pub fn num_frames(&self) -> usize {
        self.boundaries.last().map_or(0, |b| b.1)
    }

    /// Clip index of 0-based frame `i`; equals `ceil((i + 1) / L) - 1`.
    pub fn clip_of(&self, frame: usize) -> usize {
        frame / self.clip_len
    }
}

/// Partitions `s` frames into `ceil(s / clip_len)` clips; only the last one
/// may be shorter.
pub fn partition_clips(s: usize, clip_len: usize) -> Result<ClipPartition> {
    if s == 0 {
        return Err(Error::Domain("cannot partition an empty sequence".into()));
    }
    if clip_len == 0 {
        return Err(Error::Config("mem.clip_len must be at least 1".into()));
    }
    let boundaries = (0..s.div_ceil(clip_len))
        .map(|j| (j * clip_len, ((j + 1) * clip_len).min(s)))
        .collect();
    Ok(ClipPartition {
        clip_len,
        boundaries,
    })
}

fn check_sequence<T: Real>(g: &Graph<T>, x: Var, partition: &ClipPartition) -> Result<()> {
    let shape = g.shape(x);
    if shape.len() != 4 {
        return Err(Error::dim("mem", "rank", format!("expected (c,s,h,w), got {shape:?}")));
    }
    if shape[TIME_AXIS] != partition.num_frames() {
        return Err(Error::dim(
            "mem",
            "s",
            format!(
                "partition covers {} frames, tensor has {}",
                partition.num_frames(),
                shape[TIME_AXIS]
            ),
        ));
    }
    Ok(())
}

/// Per-clip temporal mean, shape `(c, num_clips, h, w)`.
pub fn static_features<T: Real>(g: &mut Graph<T>, x: Var, partition: &ClipPartition) -> Result<Var> {
    check_sequence(g, x, partition)?;
    let mut clips = Vec::with_capacity(partition.num_clips());
    for &(start, end) in partition.boundaries() {
        let clip = g.slice(x, TIME_AXIS, start, end - start)?;
        let mean = g.mean(clip, TIME_AXIS)?;
        clips.push(g.repeat(mean, TIME_AXIS, 1)?);
    }
    g.concat(&clips, TIME_AXIS)
}

/// `|x_i - static_{clip(i)}|` for every frame, shape `(c, s, h, w)`.
pub fn motion_features<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    x_sta: Var,
    partition: &ClipPartition,
) -> Result<Var> {
    check_sequence(g, x, partition)?;
    if g.shape(x_sta).get(TIME_AXIS) != Some(&partition.num_clips()) {
        return Err(Error::dim(
            "motion_features",
            "s",
            format!(
                "static features {:?} do not match {} clips",
                g.shape(x_sta),
                partition.num_clips()
            ),
        ));
    }
    let mut expanded = Vec::with_capacity(partition.num_clips());
    for (j, &(start, end)) in partition.boundaries().iter().enumerate() {
        let sta = g.slice(x_sta, TIME_AXIS, j, 1)?;
        let frame = g.mean(sta, TIME_AXIS)?;
        expanded.push(g.repeat(frame, TIME_AXIS, end - start)?);
    }
    let sta_per_frame = g.concat(&expanded, TIME_AXIS)?;
    let diff = g.sub(x, sta_per_frame)?;
    Ok(g.abs(diff))
}

/// `x + sigmoid(x * motion)`.
pub fn excite<T: Real>(g: &mut Graph<T>, x: Var, x_motion: Var) -> Result<Var> {
    let gate = g.mul(x, x_motion)?;
    let gate = g.sigmoid(gate);
    g.add(x, gate)
}

/// Partition, static and motion features, then excitation.
pub fn mem_forward<T: Real>(g: &mut Graph<T>, x: Var, clip_len: usize) -> Result<Var> {
    let s = *g
        .shape(x)
        .get(TIME_AXIS)
        .ok_or_else(|| Error::dim("mem", "rank", "expected (c,s,h,w)"))?;
    let partition = partition_clips(s, clip_len)?;
    let x_sta = static_features(g, x, &partition)?;
    let x_motion = motion_features(g, x, x_sta, &partition)?;
    excite(g, x, x_motion)
}

/// The module as a network component. It owns no trainable tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MotionExcitation {
    pub clip_len: usize,
}

impl MotionExcitation {
    pub fn new(clip_len: usize) -> Result<Self> {
        if clip_len == 0 {
            return Err(Error::Config("mem.clip_len must be at least 1".into()));
        }
        Ok(MotionExcitation { clip_len })
    }

    pub fn num_parameters(&self) -> usize {
        0
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        mem_forward(g, x, self.clip_len)
    }

    /// Convenience evaluation outside of any training graph.
    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let y = self.forward(&mut g, v)?;
        Ok(g.value(y).clone())
    }
}
