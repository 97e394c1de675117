//! Candidate file and aligned-output layout.
//!
//! ```text
//! #candidates	D=4
//! 7	0	12.0	4.5	20.0	58.0	0.93	0.1	-0.3	0.8	0.0
//! ```
//!
//! Fields: tracklet id, frame index, x, y, w, h, confidence, then `D`
//! feature values. Frames are read from `<root>/<tid>/<frame>.aakt`; aligned
//! output goes to `<out>/<tid>/frame_<i>.img.aakt`, `frame_<i>.mask.aakt`
//! and `provenance.log`.

#![allow(clippy::tabs_in_doc_comments)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{AlignedTracklet, CandidateBox};
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::tensor::Tensor;

pub const PROVENANCE_FILE: &str = "provenance.log";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateFile {
    pub dim: usize,
    /// Tracklet id to frame index to candidates in file order.
    pub tracklets: BTreeMap<u64, BTreeMap<usize, Vec<CandidateBox>>>,
}

impl CandidateFile {
    /// Candidate lists for frames `0..n`, empty where the file has none.
    pub fn per_frame(&self, tid: u64, n: usize) -> Vec<Vec<CandidateBox>> {
        let frames = self.tracklets.get(&tid);
        (0..n)
            .map(|f| frames.and_then(|m| m.get(&f)).cloned().unwrap_or_default())
            .collect()
    }
}

fn num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("{what} {tok:?} is not a valid number")))
}

pub fn parse_candidates(text: &str) -> Result<CandidateFile> {
    let mut out = CandidateFile::default();
    let mut header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        if !header {
            let dim = content
                .strip_prefix("#candidates")
                .map(str::trim)
                .and_then(|r| r.strip_prefix("D="))
                .ok_or_else(|| Error::parse(line, "expected header `#candidates<TAB>D=<dim>`"))?;
            out.dim = num(dim, line, "feature dimension")?;
            header = true;
            continue;
        }
        if content.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = content.split('\t').map(str::trim).collect();
        if toks.len() != 7 + out.dim {
            return Err(Error::parse(
                line,
                format!("expected {} fields, found {}", 7 + out.dim, toks.len()),
            ));
        }
        let tid: u64 = num(toks[0], line, "tracklet id")?;
        let frame: usize = num(toks[1], line, "frame index")?;
        let mut vals = [0.0; 5];
        for (v, (tok, what)) in
            vals.iter_mut()
                .zip(toks[2..7].iter().zip(["x", "y", "w", "h", "confidence"]))
        {
            *v = num(tok, line, what)?;
        }
        let feature = toks[7..]
            .iter()
            .map(|t| num(t, line, "feature"))
            .collect::<Result<Vec<f64>>>()?;
        let cand = CandidateBox {
            frame,
            x: vals[0],
            y: vals[1],
            w: vals[2],
            h: vals[3],
            confidence: vals[4],
            feature,
        };
        cand.validate()
            .map_err(|e| Error::parse(line, e.to_string()))?;
        out.tracklets
            .entry(tid)
            .or_default()
            .entry(frame)
            .or_default()
            .push(cand);
    }
    if !header {
        return Err(Error::parse(1, "missing `#candidates` header"));
    }
    Ok(out)
}

pub fn format_candidates(file: &CandidateFile) -> String {
    let mut s = format!("#candidates\tD={}\n", file.dim);
    for (tid, frames) in &file.tracklets {
        for cands in frames.values() {
            for c in cands {
                write!(
                    s,
                    "{tid}\t{}\t{}\t{}\t{}\t{}\t{}",
                    c.frame, c.x, c.y, c.w, c.h, c.confidence
                )
                .expect("string write");
                for v in &c.feature {
                    write!(s, "\t{v}").expect("string write");
                }
                s.push('\n');
            }
        }
    }
    s
}

pub fn read_candidates(path: impl AsRef<Path>) -> Result<CandidateFile> {
    parse_candidates(&std::fs::read_to_string(path)?)
}

/// Frames of one tracklet ordered by index. Indices must run `0..n`.
pub fn load_frames(root: impl AsRef<Path>, tid: u64) -> Result<Vec<Tensor>> {
    let dir = root.as_ref().join(tid.to_string());
    let mut indexed = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        let Some(stem) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".aakt"))
        else {
            continue;
        };
        let idx: usize = stem.parse().map_err(|_| {
            Error::invalid(format!("frame file {} is not <index>.aakt", path.display()))
        })?;
        indexed.push((idx, path));
    }
    indexed.sort();
    for (expect, (idx, _)) in indexed.iter().enumerate() {
        if *idx != expect {
            return Err(Error::invalid(format!(
                "tracklet {tid}: frame indices must run from 0 without gaps (missing {expect})"
            )));
        }
    }
    if indexed.is_empty() {
        return Err(Error::invalid(format!(
            "tracklet {tid} has no frames in {}",
            dir.display()
        )));
    }
    indexed.into_iter().map(|(_, p)| read_tensor(p)).collect()
}

/// Writes images, masks and the provenance log under `<out>/<tid>/`.
pub fn write_aligned(out: impl AsRef<Path>, tid: u64, aligned: &AlignedTracklet) -> Result<()> {
    let dir = out.as_ref().join(tid.to_string());
    std::fs::create_dir_all(&dir)?;
    let mut log = String::new();
    for (i, f) in aligned.frames.iter().enumerate() {
        write_tensor(dir.join(format!("frame_{i}.img.aakt")), &f.image)?;
        write_tensor(
            dir.join(format!("frame_{i}.mask.aakt")),
            &f.mask.to_tensor(),
        )?;
        writeln!(log, "{}", f.provenance).expect("string write");
    }
    std::fs::write(dir.join(PROVENANCE_FILE), log)?;
    Ok(())
}
