//! Tracklet metadata text format, one tab-separated record per line:
//!
//! ```text
//! # role    tid  identity  camera  ambiguous
//! query     1    374       2       -
//! gallery   10   318       1       322,401
//! ```
//!
//! `ambiguous` is a comma-separated identity list or `-`. Query and gallery
//! records may interleave; each role keeps file order.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{EvalDataset, TrackletMeta};
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    Gallery,
}

fn field<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| {
        Error::parse(
            line,
            format!("{what} {tok:?} is not a non-negative integer"),
        )
    })
}

pub fn parse_metadata(text: &str) -> Result<(Vec<TrackletMeta>, Vec<TrackletMeta>)> {
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim_end();
        if content.trim().is_empty() || content.trim_start().starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = content.split('\t').map(str::trim).collect();
        if toks.len() != 5 {
            return Err(Error::parse(
                line,
                format!("expected 5 tab-separated fields, found {}", toks.len()),
            ));
        }
        let role = match toks[0] {
            "query" => Role::Query,
            "gallery" => Role::Gallery,
            other => return Err(Error::parse(line, format!("unknown role {other:?}"))),
        };
        let mut meta = TrackletMeta::new(
            field(toks[1], line, "tracklet id")?,
            field(toks[2], line, "identity")?,
            field(toks[3], line, "camera")?,
        );
        if toks[4] != "-" {
            let mut set = BTreeSet::new();
            for id in toks[4].split(',') {
                set.insert(field(id.trim(), line, "ambiguous identity")?);
            }
            meta.ambiguous = set;
        }
        match role {
            Role::Query => query.push(meta),
            Role::Gallery => gallery.push(meta),
        }
    }
    Ok((query, gallery))
}

pub fn format_metadata(query: &[TrackletMeta], gallery: &[TrackletMeta]) -> String {
    let mut out = String::from("# role\ttid\tidentity\tcamera\tambiguous\n");
    for (role, metas) in [("query", query), ("gallery", gallery)] {
        for m in metas {
            let amb = if m.ambiguous.is_empty() {
                "-".to_string()
            } else {
                m.ambiguous
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            };
            writeln!(
                out,
                "{role}\t{}\t{}\t{}\t{amb}",
                m.tid, m.identity, m.camera
            )
            .expect("string write");
        }
    }
    out
}

/// Loads metadata and a `[|Q|, |G|]` distance container.
pub fn read_dataset(meta: impl AsRef<Path>, distances: impl AsRef<Path>) -> Result<EvalDataset> {
    let (query, gallery) = parse_metadata(&std::fs::read_to_string(meta)?)?;
    let d = read_tensor(distances)?;
    EvalDataset::new(query, gallery, d)
}

pub fn write_dataset(
    ds: &EvalDataset,
    meta: impl AsRef<Path>,
    distances: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(meta, format_metadata(&ds.query, &ds.gallery))?;
    write_tensor(distances, &ds.distances)
}
