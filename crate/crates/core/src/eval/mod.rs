//! CMC and mAP over a query × gallery distance matrix, under the original
//! protocol and the revised one that also ignores declared same-camera
//! distractor duplicates.

mod corrections;
mod files;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use corrections::{apply_corrections, LabelCorrections};
pub use files::{format_metadata, parse_metadata, read_dataset, write_dataset, Role};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Identity 0 marks distractors.
pub const DISTRACTOR: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackletMeta {
    pub tid: u64,
    pub identity: u32,
    pub camera: u32,
    /// Further identities this tracklet may be matched as.
    pub ambiguous: BTreeSet<u32>,
}

impl TrackletMeta {
    pub fn new(tid: u64, identity: u32, camera: u32) -> Self {
        Self {
            tid,
            identity,
            camera,
            ambiguous: BTreeSet::new(),
        }
    }

    /// Non-distractor identities this tracklet answers to.
    pub fn acceptable(&self) -> impl Iterator<Item = u32> + '_ {
        std::iter::once(self.identity)
            .chain(self.ambiguous.iter().copied())
            .filter(|&id| id != DISTRACTOR)
    }

    /// True when the two tracklets share an acceptable identity.
    pub fn matches(&self, other: &TrackletMeta) -> bool {
        self.acceptable()
            .any(|a| other.acceptable().any(|b| a == b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalDataset {
    pub query: Vec<TrackletMeta>,
    pub gallery: Vec<TrackletMeta>,
    /// `[|Q|, |G|]`, smaller is more similar.
    pub distances: Tensor,
    /// Unordered tracklet pairs declared to be duplicates of each other,
    /// stored as `(min, max)`.
    pub duplicates: BTreeSet<(u64, u64)>,
}

fn check_role(metas: &[TrackletMeta], role: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for m in metas {
        if !seen.insert(m.tid) {
            return Err(Error::invalid(format!(
                "{role} tracklet {} listed twice",
                m.tid
            )));
        }
        if m.ambiguous.contains(&m.identity) {
            return Err(Error::invalid(format!(
                "{role} tracklet {}: ambiguous set repeats its identity {}",
                m.tid, m.identity
            )));
        }
    }
    Ok(())
}

impl EvalDataset {
    pub fn new(
        query: Vec<TrackletMeta>,
        gallery: Vec<TrackletMeta>,
        distances: Tensor,
    ) -> Result<Self> {
        let ds = Self {
            query,
            gallery,
            distances,
            duplicates: BTreeSet::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = [self.query.len(), self.gallery.len()];
        if self.distances.shape() != expected {
            return Err(Error::shape(
                "distance matrix",
                self.distances.shape(),
                &expected,
            ));
        }
        if !self.distances.is_finite() {
            return Err(Error::invalid("distance matrix has non-finite entries"));
        }
        check_role(&self.query, "query")?;
        check_role(&self.gallery, "gallery")
    }

    pub fn is_duplicate(&self, a: u64, b: u64) -> bool {
        self.duplicates.contains(&(a.min(b), a.max(b)))
    }

    /// Copy with the gallery reordered: new position `i` holds old entry
    /// `order[i]`.
    pub fn permute_gallery(&self, order: &[usize]) -> Result<Self> {
        let g = self.gallery.len();
        let mut seen = vec![false; g];
        if order.len() != g
            || order
                .iter()
                .any(|&i| i >= g || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::invalid("gallery order is not a permutation"));
        }
        let q = self.query.len();
        let mut d = Vec::with_capacity(q * g);
        for qi in 0..q {
            d.extend(order.iter().map(|&gi| self.distances.data()[qi * g + gi]));
        }
        Ok(Self {
            query: self.query.clone(),
            gallery: order.iter().map(|&i| self.gallery[i].clone()).collect(),
            distances: Tensor::from_vec(&[q, g], d)?,
            duplicates: self.duplicates.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    /// Ignores same-camera correct matches.
    Old,
    /// Also ignores same-camera distractors declared as duplicates of the
    /// query tracklet.
    New,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Old => "old",
            Protocol::New => "new",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "old" => Ok(Protocol::Old),
            "new" => Ok(Protocol::New),
            other => Err(Error::invalid(format!(
                "unknown protocol {other:?} (expected old or new)"
            ))),
        }
    }
}

/// What happens to gallery entry `g` when ranking for query `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgement {
    Ignored,
    Correct,
    Wrong,
}

pub fn judge(
    ds: &EvalDataset,
    q: &TrackletMeta,
    g: &TrackletMeta,
    protocol: Protocol,
) -> Judgement {
    let same_camera = q.camera == g.camera;
    let correct = q.matches(g);
    if same_camera && correct {
        return Judgement::Ignored;
    }
    if protocol == Protocol::New
        && same_camera
        && g.identity == DISTRACTOR
        && ds.is_duplicate(q.tid, g.tid)
    {
        return Judgement::Ignored;
    }
    if correct {
        Judgement::Correct
    } else {
        Judgement::Wrong
    }
}

/// Per-query outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// `None` when the query has no valid positive and is excluded.
    pub ap: Option<f64>,
    /// Zero-based rank of the first correct match among non-ignored entries.
    pub first_hit: Option<usize>,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub map: f64,
    /// `cmc[k]` is the fraction of scored queries with a correct match
    /// within the top `k + 1`.
    pub cmc: Vec<f64>,
    pub queries: Vec<QueryResult>,
    pub excluded: usize,
}

impl EvalResult {
    /// CMC at rank `k` (one-based), saturating past the gallery size.
    pub fn rank(&self, k: usize) -> f64 {
        assert!(k >= 1, "ranks are one-based");
        self.cmc
            .get(k - 1)
            .or(self.cmc.last())
            .copied()
            .unwrap_or(0.0)
    }
}

fn evaluate_query(ds: &EvalDataset, qi: usize, protocol: Protocol) -> QueryResult {
    let g = ds.gallery.len();
    let q = &ds.query[qi];
    let row = &ds.distances.data()[qi * g..(qi + 1) * g];
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let mut rank = 0;
    let mut hits = 0;
    let mut precision_sum = 0.0;
    let mut first_hit = None;
    for gi in order {
        match judge(ds, q, &ds.gallery[gi], protocol) {
            Judgement::Ignored => continue,
            Judgement::Correct => {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
                first_hit.get_or_insert(rank);
            }
            Judgement::Wrong => {}
        }
        rank += 1;
    }
    QueryResult {
        ap: (hits > 0).then(|| precision_sum / hits as f64),
        first_hit,
        positives: hits,
    }
}

/// Ranks the gallery for every query by ascending distance (ties by gallery
/// index), drops ignored entries and scores the rest.
pub fn evaluate(ds: &EvalDataset, protocol: Protocol) -> Result<EvalResult> {
    ds.validate()?;
    let queries: Vec<QueryResult> = (0..ds.query.len())
        .into_par_iter()
        .map(|qi| evaluate_query(ds, qi, protocol))
        .collect();
    let g = ds.gallery.len();
    let scored: Vec<&QueryResult> = queries.iter().filter(|r| r.ap.is_some()).collect();
    let excluded = queries.len() - scored.len();
    if excluded > 0 {
        log::info!("{excluded} queries have no valid positive and are excluded");
    }
    let n = scored.len();
    let (map, cmc) = if n == 0 {
        (0.0, vec![0.0; g])
    } else {
        let map = scored.iter().map(|r| r.ap.expect("scored")).sum::<f64>() / n as f64;
        let mut counts = vec![0usize; g];
        for r in &scored {
            if let Some(h) = r.first_hit {
                counts[h] += 1;
            }
        }
        let mut acc = 0;
        let cmc = counts
            .iter()
            .map(|c| {
                acc += c;
                acc as f64 / n as f64
            })
            .collect();
        (map, cmc)
    };
    Ok(EvalResult {
        map,
        cmc,
        queries,
        excluded,
    })
}

/// One evaluated configuration of a delta report.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaColumn {
    pub label: String,
    pub protocol: Protocol,
    pub corrected: bool,
    pub result: EvalResult,
}

/// Per-query AP change between two columns; `None` where either side
/// excluded the query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDelta {
    pub tid: u64,
    pub aps: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReport {
    pub columns: Vec<DeltaColumn>,
    pub queries: Vec<QueryDelta>,
}

impl DeltaReport {
    /// `mAP[to] - mAP[from]`.
    pub fn map_delta(&self, from: usize, to: usize) -> f64 {
        self.columns[to].result.map - self.columns[from].result.map
    }

    /// Per-query `AP[to] - AP[from]`.
    pub fn query_deltas(&self, from: usize, to: usize) -> Vec<(u64, Option<f64>)> {
        self.queries
            .iter()
            .map(|q| {
                let d = match (q.aps[from], q.aps[to]) {
                    (Some(a), Some(b)) => Some(b - a),
                    _ => None,
                };
                (q.tid, d)
            })
            .collect()
    }
}

/// Scores `(old, original labels)`, `(old, corrected)` and `(new, corrected)`.
pub fn protocol_delta_report(
    ds: &EvalDataset,
    corrections: &LabelCorrections,
) -> Result<DeltaReport> {
    let corrected = apply_corrections(ds, corrections)?;
    let configs = [
        ("old/original", Protocol::Old, false),
        ("old/corrected", Protocol::Old, true),
        ("new/corrected", Protocol::New, true),
    ];
    let mut columns = Vec::new();
    for (label, protocol, use_corrected) in configs {
        let data = if use_corrected { &corrected } else { ds };
        columns.push(DeltaColumn {
            label: label.to_string(),
            protocol,
            corrected: use_corrected,
            result: evaluate(data, protocol)?,
        });
    }
    let queries = ds
        .query
        .iter()
        .enumerate()
        .map(|(qi, q)| QueryDelta {
            tid: q.tid,
            aps: columns.iter().map(|c| c.result.queries[qi].ap).collect(),
        })
        .collect();
    Ok(DeltaReport { columns, queries })
}
