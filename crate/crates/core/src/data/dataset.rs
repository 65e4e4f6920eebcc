//! Directory indexing and sequence loading.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::preprocess::{preprocess_frame, FRAME_HEIGHT, FRAME_WIDTH};
use super::{parse_view, pgm, ConditionIndex, SequenceLabel};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Subject split: the first `train_subjects` subjects in sorted order train,
/// the rest are held out for testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitConfig {
    pub train_subjects: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_subjects: 74 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(Error::Config(format!("unknown split {s:?} (train, test or all)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceEntry {
    pub label: SequenceLabel,
    pub dir: PathBuf,
    /// Frame files in lexicographic order.
    pub frames: Vec<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// Sorted by label.
    pub entries: Vec<SequenceEntry>,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

impl DatasetIndex {
    /// Class id of a training subject (its position in the sorted list).
    pub fn class_id(&self, subject: &str) -> Option<usize> {
        self.train_subjects.binary_search_by(|s| s.as_str().cmp(subject)).ok()
    }

    pub fn num_classes(&self) -> usize {
        self.train_subjects.len()
    }

    pub fn entries(&self, split: Split) -> Vec<&SequenceEntry> {
        self.entries
            .iter()
            .filter(|e| match split {
                Split::All => true,
                Split::Train => self.class_id(&e.label.subject).is_some(),
                Split::Test => self.class_id(&e.label.subject).is_none(),
            })
            .collect()
    }
}

fn sorted_dir(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        out.push((name, entry.path()));
    }
    out.sort();
    Ok(out)
}

fn subdirs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    Ok(sorted_dir(path)?.into_iter().filter(|(_, p)| p.is_dir()).collect())
}

/// Indexes every sequence under `root`. Malformed condition or view
/// directory names are reported together in one ingestion error; sequences
/// without frame files are skipped with a warning.
pub fn load_dataset(root: &Path, split: SplitConfig) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let mut entries = Vec::new();
    let mut offenders = Vec::new();
    let mut subjects = Vec::new();
    for (subject, sdir) in subdirs(root)? {
        let mut any = false;
        for (cond_name, cdir) in subdirs(&sdir)? {
            let condition = match cond_name.parse::<ConditionIndex>() {
                Ok(c) => c,
                Err(_) => {
                    offenders.push(cdir.display().to_string());
                    continue;
                }
            };
            for (view_name, vdir) in subdirs(&cdir)? {
                let view = match parse_view(&view_name) {
                    Ok(v) => v,
                    Err(_) => {
                        offenders.push(vdir.display().to_string());
                        continue;
                    }
                };
                let frames: Vec<PathBuf> = sorted_dir(&vdir)?
                    .into_iter()
                    .filter(|(_, p)| p.is_file())
                    .map(|(_, p)| p)
                    .collect();
                if frames.is_empty() {
                    log::warn!("skipping empty sequence {}", vdir.display());
                    continue;
                }
                any = true;
                entries.push(SequenceEntry {
                    label: SequenceLabel {
                        subject: subject.clone(),
                        condition,
                        view,
                    },
                    dir: vdir,
                    frames,
                });
            }
        }
        if any {
            subjects.push(subject);
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Ingestion(format!(
            "malformed condition/view directories: {}",
            offenders.join(", ")
        )));
    }
    entries.sort_by(|a, b| a.label.cmp(&b.label));
    let cut = split.train_subjects.min(subjects.len());
    let test_subjects = subjects.split_off(cut);
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
        train_subjects: subjects,
        test_subjects,
    })
}

/// One preprocessed sequence: binary `64 x 44` frames stored as 0/1 bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SilhouetteSequence {
    pub label: SequenceLabel,
    pub frames: Vec<u8>,
}

impl SilhouetteSequence {
    pub const FRAME_LEN: usize = FRAME_HEIGHT * FRAME_WIDTH;

    pub fn num_frames(&self) -> usize {
        self.frames.len() / Self::FRAME_LEN
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        &self.frames[i * Self::FRAME_LEN..(i + 1) * Self::FRAME_LEN]
    }

    /// `(1, n, 64, 44)` tensor of the given frames, or all frames.
    pub fn to_tensor<T: Real>(&self, indices: Option<&[usize]>) -> Tensor<T> {
        let all: Vec<usize>;
        let idx = match indices {
            Some(i) => i,
            None => {
                all = (0..self.num_frames()).collect();
                &all
            }
        };
        let mut data = Vec::with_capacity(idx.len() * Self::FRAME_LEN);
        for &i in idx {
            data.extend(self.frame(i).iter().map(|&v| T::from_f64(v as f64)));
        }
        Tensor::new(&[1, idx.len(), FRAME_HEIGHT, FRAME_WIDTH], data).expect("frame tensor")
    }
}

/// Reads and normalizes one sequence. Unreadable frames are skipped with a
/// warning; frames without foreground are dropped.
pub fn load_sequence(entry: &SequenceEntry) -> Result<SilhouetteSequence> {
    let mut frames = Vec::with_capacity(entry.frames.len() * SilhouetteSequence::FRAME_LEN);
    for path in &entry.frames {
        match pgm::read(path) {
            Ok(img) => {
                if let Some(f) = preprocess_frame(&img) {
                    frames.extend_from_slice(&f);
                }
            }
            Err(Error::Io { path, source }) => return Err(Error::Io { path, source }),
            Err(e) => log::warn!("skipping frame: {e}"),
        }
    }
    Ok(SilhouetteSequence {
        label: entry.label.clone(),
        frames,
    })
}

/// Loads sequences in parallel, keeping input order. Sequences left with
/// no usable frame are skipped with a warning.
pub fn load_sequences(entries: &[&SequenceEntry]) -> Result<Vec<SilhouetteSequence>> {
    let loaded: Vec<Result<SilhouetteSequence>> = entries.par_iter().map(|e| load_sequence(e)).collect();
    let mut out = Vec::with_capacity(loaded.len());
    for seq in loaded {
        let seq = seq?;
        if seq.num_frames() == 0 {
            log::warn!("skipping sequence {} with no usable frames", seq.label);
        } else {
            out.push(seq);
        }
    }
    Ok(out)
}
