//! Cross-view identification: NM#1-4 gallery against NM#5-6, BG#1-2 and
//! CL#1-2 probes, nearest neighbour by Euclidean distance, one rank-1
//! accuracy per (probe view, gallery view) cell. Identical-view cells are
//! computed but left out of every mean.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::backbone::Network;
use crate::data::{load_sequence, parse_view, view_dir, Condition, ConditionIndex, SequenceEntry, SequenceLabel, VIEWS};
use crate::error::{Error, Result};

/// One sequence's retrieval descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub label: SequenceLabel,
    pub descriptor: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProbeGroup {
    #[serde(rename = "NM#5-6")]
    Nm,
    #[serde(rename = "BG#1-2")]
    Bg,
    #[serde(rename = "CL#1-2")]
    Cl,
}

impl ProbeGroup {
    pub const ALL: [ProbeGroup; 3] = [ProbeGroup::Nm, ProbeGroup::Bg, ProbeGroup::Cl];

    pub fn name(self) -> &'static str {
        match self {
            ProbeGroup::Nm => "NM#5-6",
            ProbeGroup::Bg => "BG#1-2",
            ProbeGroup::Cl => "CL#1-2",
        }
    }

    pub fn contains(self, c: ConditionIndex) -> bool {
        match self {
            ProbeGroup::Nm => c.condition == Condition::Nm && c.index >= 5,
            ProbeGroup::Bg => c.condition == Condition::Bg,
            ProbeGroup::Cl => c.condition == Condition::Cl,
        }
    }
}

pub fn is_gallery(c: ConditionIndex) -> bool {
    c.condition == Condition::Nm && c.index <= 4
}

/// Gallery records and the three probe groups, each in input order.
#[derive(Clone, Debug)]
pub struct GalleryProbe<'a> {
    pub gallery: Vec<&'a EmbeddingRecord>,
    pub probes: Vec<(ProbeGroup, Vec<&'a EmbeddingRecord>)>,
}

pub fn build_gallery_probe(records: &[EmbeddingRecord]) -> GalleryProbe<'_> {
    let gallery: Vec<&EmbeddingRecord> = records.iter().filter(|r| is_gallery(r.label.condition)).collect();
    let probes: Vec<(ProbeGroup, Vec<&EmbeddingRecord>)> = ProbeGroup::ALL
        .iter()
        .map(|&g| (g, records.iter().filter(|r| g.contains(r.label.condition)).collect()))
        .collect();
    let mut missing = std::collections::BTreeSet::new();
    for (_, ps) in &probes {
        for p in ps {
            let has = gallery
                .iter()
                .any(|g| g.label.subject == p.label.subject && g.label.view == p.label.view);
            if !has {
                missing.insert((p.label.subject.clone(), p.label.view));
            }
        }
    }
    for (s, v) in missing {
        log::warn!("no gallery sequence for subject {s} at view {}; pair excluded", view_dir(v));
    }
    GalleryProbe { gallery, probes }
}

/// Loads and embeds every sequence (all frames, eval mode) in parallel.
/// Sequences too short for the network are skipped with a warning.
pub fn embed_entries(net: &Network<f32>, entries: &[&SequenceEntry]) -> Result<Vec<EmbeddingRecord>> {
    let out: Vec<Result<Option<EmbeddingRecord>>> = entries
        .par_iter()
        .map(|e| {
            let seq = load_sequence(e)?;
            if seq.num_frames() == 0 {
                log::warn!("{}: no readable frames, skipped", e.label);
                return Ok(None);
            }
            let emb = match net.embed(&seq.to_tensor::<f32>(None)) {
                Err(Error::SequenceTooShort { len, need }) => {
                    log::warn!("{}: {len} frames, need {need}; skipped", e.label);
                    return Ok(None);
                }
                other => other?,
            };
            Ok(Some(EmbeddingRecord {
                label: seq.label,
                descriptor: emb.descriptor(),
            }))
        })
        .collect();
    Ok(out.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn view_slot(v: u16) -> usize {
    VIEWS.iter().position(|&x| x == v).expect("view validated on load")
}

/// Rank-1 accuracies in percent, rows = probe view, columns = gallery view.
/// `None` where there is no gallery at that view or no probe at that view.
pub type Rank1Matrix = [[Option<f64>; 11]; 11];

pub fn rank1_matrix(gallery: &[&EmbeddingRecord], probes: &[&EmbeddingRecord]) -> Result<Rank1Matrix> {
    let dim = gallery.first().or(probes.first()).map_or(0, |r| r.descriptor.len());
    if let Some(r) = gallery.iter().chain(probes).find(|r| r.descriptor.len() != dim) {
        return Err(Error::dim(
            "rank1_matrix",
            "descriptor",
            format!("{} has length {}, expected {dim}", r.label, r.descriptor.len()),
        ));
    }
    // For each probe and gallery view: is the nearest gallery record
    // (lowest index on ties) of the same subject?
    let hits: Vec<[Option<bool>; 11]> = probes
        .par_iter()
        .map(|p| {
            let mut best: [Option<(f64, usize)>; 11] = [None; 11];
            for (i, g) in gallery.iter().enumerate() {
                let d = sq_dist(&p.descriptor, &g.descriptor);
                let slot = &mut best[view_slot(g.label.view)];
                if slot.map_or(true, |(bd, _)| d < bd) {
                    *slot = Some((d, i));
                }
            }
            best.map(|b| b.map(|(_, i)| gallery[i].label.subject == p.label.subject))
        })
        .collect();
    let mut correct = [[0usize; 11]; 11];
    let mut total = [[0usize; 11]; 11];
    for (p, h) in probes.iter().zip(&hits) {
        let row = view_slot(p.label.view);
        for (col, hit) in h.iter().enumerate() {
            if let Some(hit) = hit {
                total[row][col] += 1;
                correct[row][col] += *hit as usize;
            }
        }
    }
    let mut m = [[None; 11]; 11];
    for r in 0..11 {
        for c in 0..11 {
            if total[r][c] > 0 {
                m[r][c] = Some(100.0 * correct[r][c] as f64 / total[r][c] as f64);
            }
        }
    }
    Ok(m)
}

/// Mean of each row over present off-diagonal cells.
pub fn view_means(m: &Rank1Matrix) -> [Option<f64>; 11] {
    let mut out = [None; 11];
    for (r, row) in m.iter().enumerate() {
        let vals: Vec<f64> = row
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != r)
            .filter_map(|(_, v)| *v)
            .collect();
        if !vals.is_empty() {
            out[r] = Some(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    out
}

fn mean_of(vals: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = vals.iter().filter_map(|v| *v).collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: ProbeGroup,
    pub num_probes: usize,
    /// `matrix[probe_view][gallery_view]`, views in degrees order.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub view_means: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

impl ConditionReport {
    pub fn from_matrix(condition: ProbeGroup, num_probes: usize, m: &Rank1Matrix) -> Self {
        let means = view_means(m);
        ConditionReport {
            condition,
            num_probes,
            matrix: m.iter().map(|r| r.to_vec()).collect(),
            view_means: means.to_vec(),
            mean: mean_of(&means),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub views: Vec<u16>,
    pub descriptor_dim: usize,
    pub num_gallery: usize,
    pub conditions: Vec<ConditionReport>,
}

impl EvalReport {
    pub fn condition(&self, g: ProbeGroup) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.condition == g)
    }
}

pub fn evaluate(records: &[EmbeddingRecord]) -> Result<EvalReport> {
    let gp = build_gallery_probe(records);
    let mut conditions = Vec::new();
    for (group, probes) in &gp.probes {
        let m = rank1_matrix(&gp.gallery, probes)?;
        conditions.push(ConditionReport::from_matrix(*group, probes.len(), &m));
    }
    Ok(EvalReport {
        views: VIEWS.to_vec(),
        descriptor_dim: records.first().map_or(0, |r| r.descriptor.len()),
        num_gallery: gp.gallery.len(),
        conditions,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

/// Human-readable table (per-view means, then full matrices) and JSON.
pub fn summarize(report: &EvalReport) -> (String, String) {
    let mut t = String::new();
    let header: String = report.views.iter().map(|v| format!("{v:>7}")).collect();
    let _ = writeln!(t, "Rank-1 accuracy (%), identical views excluded");
    let _ = writeln!(t, "{:<8}{header}{:>8}", "probe", "Mean");
    for c in &report.conditions {
        let row: String = c.view_means.iter().map(|v| format!("{:>7}", cell(*v))).collect();
        let _ = writeln!(t, "{:<8}{row}{:>8}", c.condition.name(), cell(c.mean));
    }
    for c in &report.conditions {
        let _ = writeln!(t, "\n{} ({} probes): rows probe view, columns gallery view", c.condition.name(), c.num_probes);
        let _ = writeln!(t, "{:<8}{header}", "");
        for (r, row) in c.matrix.iter().enumerate() {
            let cells: String = row.iter().map(|v| format!("{:>7}", cell(*v))).collect();
            let _ = writeln!(t, "{:<8}{cells}", report.views[r]);
        }
    }
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    (t, json)
}

/// Writes `MGEMB1 <dim> <count>` and then, per record, a label line
/// followed by `dim` little-endian `f32`s.
pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.descriptor.len());
    let mut out = format!("MGEMB1 {dim} {}\n", records.len()).into_bytes();
    for r in records {
        if r.descriptor.len() != dim {
            return Err(Error::dim("write_embeddings", "descriptor", format!("{} differs in length", r.label)));
        }
        out.extend_from_slice(format!("{}\n", r.label).as_bytes());
        for v in &r.descriptor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes).map_err(|e| match e {
        Error::Ingestion(m) => Error::Ingestion(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Vec<EmbeddingRecord>> {
    let mut pos = 0;
    let line = |pos: &mut usize| -> Result<String> {
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Ingestion("embedding file truncated in a text line".into()))?;
        let s = std::str::from_utf8(&bytes[*pos..*pos + end])
            .map_err(|_| Error::Ingestion("embedding label is not UTF-8".into()))?
            .to_string();
        *pos += end + 1;
        Ok(s)
    };
    let header = line(&mut pos)?;
    let f: Vec<&str> = header.split_whitespace().collect();
    let (dim, count) = match f.as_slice() {
        ["MGEMB1", d, c] => (
            d.parse::<usize>().map_err(|_| Error::Ingestion(format!("bad dimension in {header:?}")))?,
            c.parse::<usize>().map_err(|_| Error::Ingestion(format!("bad count in {header:?}")))?,
        ),
        _ => return Err(Error::Ingestion(format!("not an embedding file (header {header:?})"))),
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let l = line(&mut pos)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        let label = match parts.as_slice() {
            [s, c, v] => SequenceLabel {
                subject: s.to_string(),
                condition: c.parse()?,
                view: parse_view(v)?,
            },
            _ => return Err(Error::Ingestion(format!("malformed record label {l:?}"))),
        };
        if bytes.len() < pos + 4 * dim {
            return Err(Error::Ingestion(format!("descriptor of {label} truncated")));
        }
        let descriptor = bytes[pos..pos + 4 * dim]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 4 * dim;
        out.push(EmbeddingRecord { label, descriptor });
    }
    if pos != bytes.len() {
        return Err(Error::Ingestion("trailing bytes after the last record".into()));
    }
    Ok(out)
}
