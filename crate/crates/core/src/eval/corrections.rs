//! Label corrections: a text file of append-only records
//!
//! ```text
//! VERSION 2
//! RELABEL 7 142      # tracklet 7 is identity 142
//! NEWID 12 lost-girl # tracklets sharing a tag get one fresh identity
//! AMBIG 3 322        # tracklet 3 also answers to 322
//! DUPDIST 40 41      # 40 and 41 show the same tracklet
//! ```
//!
//! `VERSION`, when present, must be the first record.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use super::{EvalDataset, DISTRACTOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelCorrections {
    pub version: Option<u32>,
    pub relabel: BTreeMap<u64, u32>,
    /// Tracklet to new-identity tag.
    pub new_identity: BTreeMap<u64, String>,
    /// Tags in order of first appearance; allocation order of fresh ids.
    pub new_tags: Vec<String>,
    pub ambiguous: BTreeMap<u64, BTreeSet<u32>>,
    /// Stored as `(min, max)`.
    pub duplicates: BTreeSet<(u64, u64)>,
}

fn number<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| {
        Error::parse(
            line,
            format!("{what} {tok:?} is not a non-negative integer"),
        )
    })
}

impl LabelCorrections {
    pub fn is_empty(&self) -> bool {
        self.relabel.is_empty()
            && self.new_identity.is_empty()
            && self.ambiguous.is_empty()
            && self.duplicates.is_empty()
    }

    /// Parses and validates a corrections file. Conflicting records are
    /// reported together.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut conflicts = Vec::new();
        let mut records = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut toks = content.split_whitespace();
            let kind = toks.next().expect("non-empty");
            match kind {
                "VERSION" => {
                    if records > 0 {
                        return Err(Error::parse(line, "VERSION must be the first record"));
                    }
                    c.version = Some(number(toks.next(), line, "version")?);
                }
                "RELABEL" => {
                    let tid: u64 = number(toks.next(), line, "tracklet id")?;
                    let id: u32 = number(toks.next(), line, "identity")?;
                    if id == DISTRACTOR {
                        return Err(Error::parse(line, "cannot relabel to the distractor identity 0"));
                    }
                    if let Some(prev) = c.relabel.insert(tid, id) {
                        if prev != id {
                            conflicts.push(format!("tracklet {tid} relabeled to both {prev} and {id}"));
                        }
                    }
                }
                "NEWID" => {
                    let tid: u64 = number(toks.next(), line, "tracklet id")?;
                    let tag = toks
                        .next()
                        .ok_or_else(|| Error::parse(line, "missing new-identity tag"))?
                        .to_string();
                    if !c.new_tags.contains(&tag) {
                        c.new_tags.push(tag.clone());
                    }
                    if let Some(prev) = c.new_identity.insert(tid, tag.clone()) {
                        if prev != tag {
                            conflicts.push(format!("tracklet {tid} assigned new identities {prev} and {tag}"));
                        }
                    }
                }
                "AMBIG" => {
                    let tid: u64 = number(toks.next(), line, "tracklet id")?;
                    let id: u32 = number(toks.next(), line, "identity")?;
                    if id == DISTRACTOR {
                        return Err(Error::parse(line, "the distractor identity 0 cannot be ambiguous"));
                    }
                    c.ambiguous.entry(tid).or_default().insert(id);
                }
                "DUPDIST" => {
                    let a: u64 = number(toks.next(), line, "tracklet id")?;
                    let b: u64 = number(toks.next(), line, "tracklet id")?;
                    if a == b {
                        return Err(Error::parse(line, "a tracklet cannot duplicate itself"));
                    }
                    c.duplicates.insert((a.min(b), a.max(b)));
                }
                other => {
                    return Err(Error::parse(
                        line,
                        format!("unknown record {other:?} (expected VERSION, RELABEL, NEWID, AMBIG or DUPDIST)"),
                    ))
                }
            }
            if let Some(extra) = toks.next() {
                return Err(Error::parse(
                    line,
                    format!("unexpected trailing field {extra:?}"),
                ));
            }
            records += 1;
        }
        for tid in c.relabel.keys() {
            if c.new_identity.contains_key(tid) {
                conflicts.push(format!("tracklet {tid} has both RELABEL and NEWID"));
            }
        }
        for (tid, ids) in &c.ambiguous {
            if let Some(target) = c.relabel.get(tid) {
                if ids.contains(target) {
                    conflicts.push(format!(
                        "tracklet {tid} relabeled to {target} and also ambiguous with it"
                    ));
                }
            }
        }
        if conflicts.is_empty() {
            Ok(c)
        } else {
            Err(Error::Conflict(conflicts))
        }
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for LabelCorrections {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(v) = self.version {
            writeln!(f, "VERSION {v}")?;
        }
        for (tid, id) in &self.relabel {
            writeln!(f, "RELABEL {tid} {id}")?;
        }
        for tag in &self.new_tags {
            for (tid, t) in &self.new_identity {
                if t == tag {
                    writeln!(f, "NEWID {tid} {tag}")?;
                }
            }
        }
        for (tid, ids) in &self.ambiguous {
            for id in ids {
                writeln!(f, "AMBIG {tid} {id}")?;
            }
        }
        for (a, b) in &self.duplicates {
            writeln!(f, "DUPDIST {a} {b}")?;
        }
        Ok(())
    }
}

/// Returns a corrected copy of `ds`. A correction naming a tracklet absent
/// from both query and gallery, or an ambiguity equal to the final
/// identity, is a conflict.
pub fn apply_corrections(ds: &EvalDataset, c: &LabelCorrections) -> Result<EvalDataset> {
    ds.validate()?;
    let known: HashSet<u64> = ds.query.iter().chain(&ds.gallery).map(|m| m.tid).collect();
    let mut conflicts = Vec::new();
    let mentioned = c
        .relabel
        .keys()
        .chain(c.new_identity.keys())
        .chain(c.ambiguous.keys())
        .chain(c.duplicates.iter().flat_map(|(a, b)| [a, b]));
    let unknown: BTreeSet<u64> = mentioned.filter(|t| !known.contains(t)).copied().collect();
    for tid in unknown {
        conflicts.push(format!("tracklet {tid} is not in the dataset"));
    }

    let base = ds
        .query
        .iter()
        .chain(&ds.gallery)
        .flat_map(|m| std::iter::once(m.identity).chain(m.ambiguous.iter().copied()))
        .chain(c.relabel.values().copied())
        .chain(c.ambiguous.values().flatten().copied())
        .max()
        .unwrap_or(0);
    let fresh: BTreeMap<&str, u32> = c
        .new_tags
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), base + 1 + i as u32))
        .collect();

    let mut out = ds.clone();
    for meta in out.query.iter_mut().chain(out.gallery.iter_mut()) {
        if let Some(&id) = c.relabel.get(&meta.tid) {
            meta.identity = id;
        }
        if let Some(tag) = c.new_identity.get(&meta.tid) {
            meta.identity = fresh[tag.as_str()];
        }
        if let Some(ids) = c.ambiguous.get(&meta.tid) {
            meta.ambiguous.extend(ids);
        }
        if meta.ambiguous.remove(&meta.identity) {
            conflicts.push(format!(
                "tracklet {} is ambiguous with its own identity {}",
                meta.tid, meta.identity
            ));
        }
    }
    conflicts.dedup();
    if !conflicts.is_empty() {
        return Err(Error::Conflict(conflicts));
    }
    out.duplicates.extend(c.duplicates.iter().copied());
    Ok(out)
}
