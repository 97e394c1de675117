use std::path::PathBuf;

use axreid::detect_link::{
    load_frames, process_tracklet, read_candidates, write_aligned, AlignParams, FrameStatus,
    DEFAULT_ALPHA,
};
use clap::Args;

use crate::report::Report;
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Candidate detections file.
    #[arg(long, value_name = "FILE")]
    candidates: PathBuf,
    /// Directory holding `<tid>/<frame>.aakt` frame containers.
    #[arg(long, value_name = "DIR")]
    frames: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Only this tracklet; repeatable. Default: every tracklet in the file.
    #[arg(long = "tracklet", value_name = "TID")]
    tracklets: Vec<u64>,
    /// Output height.
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// Output width.
    #[arg(long, default_value_t = 128)]
    width: usize,
    /// Boxes with height/width above this are treated as slim.
    #[arg(long, default_value_t = 3.0)]
    slim_ratio: f64,
    /// Weight of the running global feature in the EMA update.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
}

pub fn run(a: &AlignArgs) -> CliResult<String> {
    let params = AlignParams {
        out_h: a.height,
        out_w: a.width,
        slim_ratio: a.slim_ratio,
        alpha: a.alpha,
        ..AlignParams::default()
    };
    params.validate()?;
    let file = read_candidates(&a.candidates)?;
    let tids: Vec<u64> = if a.tracklets.is_empty() {
        file.tracklets.keys().copied().collect()
    } else {
        for t in &a.tracklets {
            if !file.tracklets.contains_key(t) {
                return Err(CliError::Validation(format!(
                    "tracklet {t} is not in {}",
                    a.candidates.display()
                )));
            }
        }
        a.tracklets.clone()
    };
    if tids.is_empty() {
        return Err(CliError::Validation(
            "the candidate file lists no tracklets".into(),
        ));
    }
    let mut r = Report::new(&["tracklet", "frames", "linked", "no-detection", "first"]);
    let mut total_frames = 0;
    for &tid in &tids {
        let images = load_frames(&a.frames, tid)?;
        let cands = file.per_frame(tid, images.len());
        let aligned = process_tracklet(&images, &cands, &params)?;
        write_aligned(&a.out, tid, &aligned)?;
        let count = |s: FrameStatus| {
            aligned
                .frames
                .iter()
                .filter(|f| f.provenance.status == s)
                .count()
        };
        let first = aligned
            .frames
            .iter()
            .position(|f| f.provenance.status == FrameStatus::First)
            .map_or("-".to_string(), |i| i.to_string());
        r.row(vec![
            tid.to_string(),
            aligned.frames.len().to_string(),
            count(FrameStatus::Linked).to_string(),
            count(FrameStatus::NoDetection).to_string(),
            first,
        ]);
        total_frames += aligned.frames.len();
    }
    r.kv("tracklets", tids.len());
    r.kv("frames", total_frames);
    r.kv("out", a.out.display());
    Ok(r.to_string())
}
