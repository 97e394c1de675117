//! Re-detection and linking of a tracklet: pick the largest candidate in the
//! first frame, follow it through later frames by feature distance to an
//! exponential moving average, then crop, resize and pad every chosen box
//! to a fixed frame size with a validity mask.

mod files;
mod synthetic;

use std::fmt;

pub use files::{
    format_candidates, load_frames, parse_candidates, read_candidates, write_aligned,
    CandidateFile, PROVENANCE_FILE,
};
pub use synthetic::{
    interleaved_scenario, occluder_scenario, render_frames, synthetic_detector, SceneScript,
    ScriptedIdentity, SyntheticFrame,
};

use crate::aggregation::ValidityMask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One detector output with the appearance feature of its crop.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBox {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub feature: Vec<f64>,
}

impl CandidateBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h, self.confidence]
            .iter()
            .chain(&self.feature)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("candidate has non-finite values"));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!(
                "candidate box {}x{} is empty",
                self.w, self.h
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Index of the largest-area candidate; ties go to higher confidence, then
/// to the lower index.
pub fn select_first_frame(candidates: &[CandidateBox]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let cb = &candidates[b];
                let better =
                    c.area() > cb.area() || (c.area() == cb.area() && c.confidence > cb.confidence);
                Some(if better { i } else { b })
            }
        };
    }
    best.ok_or(Error::NoDetection)
}

/// Exponential moving average of the linked features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub global: Vec<f64>,
    pub alpha: f64,
    /// Coefficient of every feature folded into `global` so far, oldest
    /// first.
    pub weights: Vec<f64>,
}

pub const DEFAULT_ALPHA: f64 = 0.9;

impl LinkState {
    pub fn new(first: &[f64], alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(Self {
            global: first.to_vec(),
            alpha,
            weights: vec![1.0],
        })
    }

    /// `global <- alpha * global + (1 - alpha) * feature`.
    pub fn update(&self, feature: &[f64]) -> Self {
        let a = self.alpha;
        let mut weights: Vec<f64> = self.weights.iter().map(|w| w * a).collect();
        weights.push(1.0 - a);
        Self {
            global: self
                .global
                .iter()
                .zip(feature)
                .map(|(g, f)| a * g + (1.0 - a) * f)
                .collect(),
            alpha: a,
            weights,
        }
    }
}

/// Picks the candidate nearest to the global feature (ties: higher
/// confidence, then lower index) and folds it into the state. `None` when
/// there are no candidates.
pub fn link_frame(
    state: &LinkState,
    candidates: &[CandidateBox],
) -> Result<Option<(usize, LinkState)>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if c.feature.len() != state.global.len() {
            return Err(Error::shape(
                "link_frame",
                &[c.feature.len()],
                &[state.global.len()],
            ));
        }
        let d = distance(&c.feature, &state.global);
        let better = match best {
            None => true,
            Some((b, bd)) => d < bd || (d == bd && c.confidence > candidates[b].confidence),
        };
        if better {
            best = Some((i, d));
        }
    }
    Ok(best.map(|(i, _)| (i, state.update(&candidates[i].feature))))
}

/// Output geometry and normalisation of aligned frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignParams {
    pub out_h: usize,
    pub out_w: usize,
    /// Boxes with `h / w` above this are slim.
    pub slim_ratio: f64,
    pub alpha: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            out_h: 256,
            out_w: 128,
            slim_ratio: 3.0,
            alpha: DEFAULT_ALPHA,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl AlignParams {
    pub fn validate(&self) -> Result<()> {
        if self.out_h == 0 || self.out_w == 0 {
            return Err(Error::invalid("output size must be positive"));
        }
        if !(self.slim_ratio > 0.0 && self.slim_ratio.is_finite()) {
            return Err(Error::invalid("slim ratio must be positive"));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("normalisation std must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Horizontal placement applied to a slim box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shift {
    None,
    /// Box sat in the left third; content starts at the centre line.
    Right,
    /// Box sat in the right third; content ends at the centre line.
    Left,
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shift::None => "none",
            Shift::Right => "right",
            Shift::Left => "left",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    /// Largest candidate of the first frame with detections.
    First,
    Linked,
    /// No usable candidate; the whole frame was stretched.
    NoDetection,
}

impl fmt::Display for FrameStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameStatus::First => "first",
            FrameStatus::Linked => "linked",
            FrameStatus::NoDetection => "no-detection",
        })
    }
}

/// How an aligned frame was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub frame: usize,
    pub status: FrameStatus,
    pub candidate: Option<usize>,
    /// Clipped integer source box `(x0, y0, x1, y1)`.
    pub source: (usize, usize, usize, usize),
    pub scale: f64,
    /// Top-left corner of the content in the output.
    pub offset: (usize, usize),
    /// Content extent `(h, w)` in the output.
    pub content: (usize, usize),
    pub shift: Shift,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cand = self.candidate.map_or("-".to_string(), |c| c.to_string());
        let (x0, y0, x1, y1) = self.source;
        write!(
            f,
            "frame={} status={} candidate={cand} source={x0},{y0},{x1},{y1} scale={:.6} offset={},{} content={}x{} shift={}",
            self.frame,
            self.status,
            self.scale,
            self.offset.0,
            self.offset.1,
            self.content.0,
            self.content.1,
            self.shift
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFrame {
    /// `[3, out_h, out_w]`, normalised; padding is exactly zero.
    pub image: Tensor,
    /// One frame, `out_h × out_w`.
    pub mask: ValidityMask,
    pub provenance: Provenance,
}

fn frame_hw(frame: &Tensor) -> Result<(usize, usize)> {
    match *frame.shape() {
        [3, h, w] => Ok((h, w)),
        _ => Err(Error::invalid(format!(
            "frames must be [3, H, W], got {:?}",
            frame.shape()
        ))),
    }
}

/// Bilinear sample of the source region `[y0, y1) × [x0, x1)` into an
/// `rh × rw` block of `out` at `offset`, normalised per channel.
#[allow(clippy::too_many_arguments)]
fn resample(
    frame: &Tensor,
    src: (usize, usize, usize, usize),
    rh: usize,
    rw: usize,
    offset: (usize, usize),
    out: &mut [f64],
    out_hw: (usize, usize),
    params: &AlignParams,
) {
    let (_, fw) = (frame.shape()[1], frame.shape()[2]);
    let fh = frame.shape()[1];
    let (x0, y0, x1, y1) = src;
    let sy = (y1 - y0) as f64 / rh as f64;
    let sx = (x1 - x0) as f64 / rw as f64;
    let coord = |i: usize, s: f64, lo: usize, hi: usize| {
        let c = (lo as f64 + (i as f64 + 0.5) * s - 0.5).clamp(lo as f64, (hi - 1) as f64);
        let a = c.floor() as usize;
        let b = (a + 1).min(hi - 1);
        (a, b, c - a as f64)
    };
    for ch in 0..3 {
        let plane = &frame.data()[ch * fh * fw..(ch + 1) * fh * fw];
        for i in 0..rh {
            let (ya, yb, ty) = coord(i, sy, y0, y1);
            for j in 0..rw {
                let (xa, xb, tx) = coord(j, sx, x0, x1);
                let top = plane[ya * fw + xa] * (1.0 - tx) + plane[ya * fw + xb] * tx;
                let bottom = plane[yb * fw + xa] * (1.0 - tx) + plane[yb * fw + xb] * tx;
                let v = top * (1.0 - ty) + bottom * ty;
                let (oy, ox) = (offset.0 + i, offset.1 + j);
                out[(ch * out_hw.0 + oy) * out_hw.1 + ox] = (v - params.mean[ch]) / params.std[ch];
            }
        }
    }
}

fn assemble(
    frame: &Tensor,
    src: (usize, usize, usize, usize),
    content: (usize, usize),
    offset: (usize, usize),
    params: &AlignParams,
) -> (Tensor, ValidityMask) {
    let (oh, ow) = (params.out_h, params.out_w);
    let mut image = vec![0.0; 3 * oh * ow];
    resample(
        frame,
        src,
        content.0,
        content.1,
        offset,
        &mut image,
        (oh, ow),
        params,
    );
    let mut valid = vec![false; oh * ow];
    for y in offset.0..offset.0 + content.0 {
        valid[y * ow + offset.1..y * ow + offset.1 + content.1].fill(true);
    }
    (
        Tensor::from_parts(vec![3, oh, ow], image),
        ValidityMask::new(1, oh, ow, valid).expect("positive extents"),
    )
}

/// Stretches the whole frame to the output size with an all-valid mask.
pub fn pass_through(frame: &Tensor, index: usize, params: &AlignParams) -> Result<AlignedFrame> {
    params.validate()?;
    let (h, w) = frame_hw(frame)?;
    log::info!("frame {index}: no detection, passing the whole frame through");
    let (image, mask) = assemble(
        frame,
        (0, 0, w, h),
        (params.out_h, params.out_w),
        (0, 0),
        params,
    );
    Ok(AlignedFrame {
        image,
        mask,
        provenance: Provenance {
            frame: index,
            status: FrameStatus::NoDetection,
            candidate: None,
            source: (0, 0, w, h),
            scale: (params.out_h as f64 / h as f64).min(params.out_w as f64 / w as f64),
            offset: (0, 0),
            content: (params.out_h, params.out_w),
            shift: Shift::None,
        },
    })
}

/// Crops `bx` from `frame`, resizes it preserving aspect ratio to fit the
/// output, places it (centred, or shifted when slim and off-centre) and
/// zero-pads the rest. Fails with [`Error::NoDetection`] when the box does
/// not overlap the frame.
pub fn normalize_crop(
    frame: &Tensor,
    bx: &CandidateBox,
    params: &AlignParams,
) -> Result<AlignedFrame> {
    params.validate()?;
    bx.validate()?;
    let (fh, fw) = frame_hw(frame)?;
    let x0 = bx.x.floor().max(0.0) as usize;
    let y0 = bx.y.floor().max(0.0) as usize;
    let x1 = ((bx.x + bx.w).ceil().max(0.0) as usize).min(fw);
    let y1 = ((bx.y + bx.h).ceil().max(0.0) as usize).min(fh);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::NoDetection);
    }
    let (h, w) = ((y1 - y0) as f64, (x1 - x0) as f64);
    let (oh, ow) = (params.out_h, params.out_w);
    let scale = (oh as f64 / h).min(ow as f64 / w);
    let rh = ((h * scale).round() as usize).clamp(1, oh);
    let rw = ((w * scale).round() as usize).clamp(1, ow);

    let centre = (x0 + x1) as f64 / 2.0;
    let shift = if h / w > params.slim_ratio {
        if centre < fw as f64 / 3.0 {
            Shift::Right
        } else if centre > 2.0 * fw as f64 / 3.0 {
            Shift::Left
        } else {
            Shift::None
        }
    } else {
        Shift::None
    };
    let ox = match shift {
        Shift::None => (ow - rw) / 2,
        Shift::Right => (ow / 2).min(ow - rw),
        Shift::Left => (ow / 2).saturating_sub(rw),
    };
    let oy = (oh - rh) / 2;
    let (image, mask) = assemble(frame, (x0, y0, x1, y1), (rh, rw), (oy, ox), params);
    Ok(AlignedFrame {
        image,
        mask,
        provenance: Provenance {
            frame: bx.frame,
            status: FrameStatus::Linked,
            candidate: None,
            source: (x0, y0, x1, y1),
            scale,
            offset: (oy, ox),
            content: (rh, rw),
            shift,
        },
    })
}

/// Aligned frames plus the final linking state.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTracklet {
    pub frames: Vec<AlignedFrame>,
    pub state: Option<LinkState>,
}

impl AlignedTracklet {
    pub fn chosen(&self) -> Vec<Option<usize>> {
        self.frames.iter().map(|f| f.provenance.candidate).collect()
    }

    /// `[T, 3, H, W]` image stack and its `T × H × W` mask.
    pub fn stacked(&self) -> Result<(Tensor, ValidityMask)> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::invalid("empty tracklet"))?;
        let mut shape = vec![self.frames.len()];
        shape.extend_from_slice(first.image.shape());
        let data = self
            .frames
            .iter()
            .flat_map(|f| f.image.data().iter().copied())
            .collect();
        let masks: Vec<ValidityMask> = self.frames.iter().map(|f| f.mask.clone()).collect();
        Ok((
            Tensor::from_vec(&shape, data)?,
            ValidityMask::stack(&masks)?,
        ))
    }
}

fn crop_or_pass(
    frame: &Tensor,
    index: usize,
    cand: &CandidateBox,
    ci: usize,
    status: FrameStatus,
    params: &AlignParams,
) -> Result<AlignedFrame> {
    match normalize_crop(frame, cand, params) {
        Ok(mut a) => {
            a.provenance.frame = index;
            a.provenance.candidate = Some(ci);
            a.provenance.status = status;
            Ok(a)
        }
        Err(Error::NoDetection) => pass_through(frame, index, params),
        Err(e) => Err(e),
    }
}

/// Runs selection, linking and normalisation over `N` frames. Always
/// returns `N` aligned frames. The link state starts at the first frame
/// that has candidates.
pub fn process_tracklet(
    frames: &[Tensor],
    candidates: &[Vec<CandidateBox>],
    params: &AlignParams,
) -> Result<AlignedTracklet> {
    params.validate()?;
    if frames.is_empty() {
        return Err(Error::invalid("a tracklet needs at least one frame"));
    }
    if frames.len() != candidates.len() {
        return Err(Error::invalid(format!(
            "{} frames but {} candidate lists",
            frames.len(),
            candidates.len()
        )));
    }
    let mut state: Option<LinkState> = None;
    let mut out = Vec::with_capacity(frames.len());
    for (i, (frame, cands)) in frames.iter().zip(candidates).enumerate() {
        for c in cands {
            c.validate()?;
        }
        let aligned = match &state {
            None => match select_first_frame(cands) {
                Ok(ci) => {
                    state = Some(LinkState::new(&cands[ci].feature, params.alpha)?);
                    crop_or_pass(frame, i, &cands[ci], ci, FrameStatus::First, params)?
                }
                Err(Error::NoDetection) => pass_through(frame, i, params)?,
                Err(e) => return Err(e),
            },
            Some(s) => match link_frame(s, cands)? {
                Some((ci, next)) => {
                    state = Some(next);
                    crop_or_pass(frame, i, &cands[ci], ci, FrameStatus::Linked, params)?
                }
                None => pass_through(frame, i, params)?,
            },
        };
        out.push(aligned);
    }
    Ok(AlignedTracklet { frames: out, state })
}
