//! Silhouette datasets: labels, on-disk layout, preprocessing and a
//! procedural walker generator.
//!
//! Layout: `root/<subject>/<condition>-<NN>/<view>/<frame>.pgm`, e.g.
//! `root/001/nm-01/090/0000.pgm`.

pub mod dataset;
pub mod pgm;
pub mod preprocess;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{load_dataset, load_sequence, load_sequences, DatasetIndex, SequenceEntry, SilhouetteSequence, Split, SplitConfig};
pub use preprocess::{preprocess_frame, FRAME_HEIGHT, FRAME_WIDTH};
pub use synth::{synth_generate, Manifest, SynthConfig, MANIFEST_FILE};

/// Camera angles in degrees.
pub const VIEWS: [u16; 11] = [0, 18, 36, 54, 72, 90, 108, 126, 144, 162, 180];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Normal walking.
    Nm,
    /// Carrying a bag.
    Bg,
    /// Wearing a coat.
    Cl,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Nm, Condition::Bg, Condition::Cl];

    pub fn prefix(self) -> &'static str {
        match self {
            Condition::Nm => "nm",
            Condition::Bg => "bg",
            Condition::Cl => "cl",
        }
    }

    /// Number of recorded sequences per subject and view.
    pub fn count(self) -> u8 {
        match self {
            Condition::Nm => 6,
            Condition::Bg | Condition::Cl => 2,
        }
    }
}

/// A condition together with its 1-based sequence number, e.g. `nm-05`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditionIndex {
    pub condition: Condition,
    pub index: u8,
}

impl ConditionIndex {
    pub fn new(condition: Condition, index: u8) -> Result<Self> {
        if index == 0 || index > condition.count() {
            return Err(Error::Ingestion(format!(
                "{}-{index:02} is outside {}-01..{}-{:02}",
                condition.prefix(),
                condition.prefix(),
                condition.prefix(),
                condition.count()
            )));
        }
        Ok(ConditionIndex { condition, index })
    }

    /// All ten sequences in canonical order.
    pub fn all() -> Vec<ConditionIndex> {
        Condition::ALL
            .iter()
            .flat_map(|&c| (1..=c.count()).map(move |i| ConditionIndex { condition: c, index: i }))
            .collect()
    }
}

impl fmt::Display for ConditionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{:02}", self.condition.prefix(), self.index)
    }
}

impl FromStr for ConditionIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Ingestion(format!("malformed condition {s:?}"));
        let (prefix, idx) = s.split_once('-').ok_or_else(bad)?;
        let condition = Condition::ALL
            .into_iter()
            .find(|c| c.prefix().eq_ignore_ascii_case(prefix))
            .ok_or_else(bad)?;
        if idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let index: u8 = idx.parse().map_err(|_| bad())?;
        ConditionIndex::new(condition, index)
    }
}

impl Serialize for ConditionIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConditionIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn parse_view(s: &str) -> Result<u16> {
    s.parse::<u16>()
        .ok()
        .filter(|v| VIEWS.contains(v) && s.bytes().all(|b| b.is_ascii_digit()))
        .ok_or_else(|| Error::Ingestion(format!("malformed view {s:?} (expected one of 000..180 in steps of 18)")))
}

pub fn view_dir(view: u16) -> String {
    format!("{view:03}")
}

/// Identity of one gait sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SequenceLabel {
    pub subject: String,
    pub condition: ConditionIndex,
    pub view: u16,
}

impl fmt::Display for SequenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.condition, view_dir(self.view))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_names_round_trip() {
        let all = ConditionIndex::all();
        assert_eq!(all.len(), 10);
        for c in all {
            assert_eq!(c.to_string().parse::<ConditionIndex>().unwrap(), c);
        }
        assert_eq!("nm-05".parse::<ConditionIndex>().unwrap().index, 5);
        assert!("nm-07".parse::<ConditionIndex>().is_err());
        assert!("bg-03".parse::<ConditionIndex>().is_err());
        assert!("xx-01".parse::<ConditionIndex>().is_err());
        assert!("nm01".parse::<ConditionIndex>().is_err());
    }

    #[test]
    fn views() {
        assert_eq!(parse_view("090").unwrap(), 90);
        assert_eq!(parse_view("000").unwrap(), 0);
        assert!(parse_view("091").is_err());
        assert!(parse_view("-18").is_err());
        assert_eq!(view_dir(18), "018");
    }
}
