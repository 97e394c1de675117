use super::CandidateBox;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Box as `(x, y, w, h)`.
pub type Box4 = (f64, f64, f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedIdentity {
    pub label: usize,
    pub centroid: Vec<f64>,
    /// One entry per frame; `None` where the identity is absent.
    pub boxes: Vec<Option<Box4>>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScript {
    pub frames: usize,
    /// Source frame `(h, w)`.
    pub frame_hw: (usize, usize),
    pub identities: Vec<ScriptedIdentity>,
    /// Standard deviation of the per-dimension feature noise.
    pub noise: f64,
}

/// Candidates of one frame with the scripted identity of each.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub candidates: Vec<CandidateBox>,
    pub truth: Vec<usize>,
}

/// Emits every scripted box with `centroid + noise` as its feature, in a
/// seeded random order per frame.
pub fn synthetic_detector(script: &SceneScript, rng: &mut SeededRng) -> Vec<SyntheticFrame> {
    (0..script.frames)
        .map(|f| {
            let mut present: Vec<&ScriptedIdentity> = script
                .identities
                .iter()
                .filter(|id| matches!(id.boxes.get(f), Some(Some(_))))
                .collect();
            rng.shuffle(&mut present);
            let mut frame = SyntheticFrame {
                candidates: Vec::new(),
                truth: Vec::new(),
            };
            for id in present {
                let (x, y, w, h) = id.boxes[f].expect("filtered");
                let feature = id
                    .centroid
                    .iter()
                    .map(|c| c + script.noise * rng.normal())
                    .collect();
                frame.candidates.push(CandidateBox {
                    frame: f,
                    x,
                    y,
                    w,
                    h,
                    confidence: id.confidence,
                    feature,
                });
                frame.truth.push(id.label);
            }
            frame
        })
        .collect()
}

fn centroid(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.normal()).collect()
}

/// Two identities present in all four frames; identity 0 has the larger
/// box in frame 0 only, identity 1 is larger afterwards.
pub fn interleaved_scenario(rng: &mut SeededRng) -> SceneScript {
    let dim = 16;
    let a = centroid(rng, dim);
    let b = centroid(rng, dim);
    let jitter = |rng: &mut SeededRng, base: Box4| {
        let d = rng.uniform(-2.0, 2.0);
        Some((base.0 + d, base.1, base.2, base.3))
    };
    let boxes_a = (0..4)
        .map(|f| {
            jitter(
                rng,
                if f == 0 {
                    (4.0, 4.0, 20.0, 50.0)
                } else {
                    (4.0, 4.0, 16.0, 40.0)
                },
            )
        })
        .collect();
    let boxes_b = (0..4)
        .map(|f| {
            jitter(
                rng,
                if f == 0 {
                    (34.0, 8.0, 14.0, 36.0)
                } else {
                    (30.0, 2.0, 22.0, 56.0)
                },
            )
        })
        .collect();
    SceneScript {
        frames: 4,
        frame_hw: (64, 64),
        identities: vec![
            ScriptedIdentity {
                label: 0,
                centroid: a,
                boxes: boxes_a,
                confidence: 0.8,
            },
            ScriptedIdentity {
                label: 1,
                centroid: b,
                boxes: boxes_b,
                confidence: 0.9,
            },
        ],
        noise: 0.3,
    }
}

/// Six frames of one target; an occluder with larger boxes enters in
/// frames 2 to 4 (zero-based).
pub fn occluder_scenario(rng: &mut SeededRng) -> SceneScript {
    let dim = 16;
    let target = centroid(rng, dim);
    let occluder = centroid(rng, dim);
    let target_boxes = (0..6)
        .map(|f| Some((10.0 + 2.0 * f as f64, 6.0, 14.0, 40.0)))
        .collect();
    let occluder_boxes = (0..6)
        .map(|f| (2..5).contains(&f).then_some((20.0, 2.0, 24.0, 58.0)))
        .collect();
    SceneScript {
        frames: 6,
        frame_hw: (64, 48),
        identities: vec![
            ScriptedIdentity {
                label: 0,
                centroid: target,
                boxes: target_boxes,
                confidence: 0.7,
            },
            ScriptedIdentity {
                label: 1,
                centroid: occluder,
                boxes: occluder_boxes,
                confidence: 0.95,
            },
        ],
        noise: 0.3,
    }
}

/// `[3, H, W]` frames with low-level noise and each scripted box filled
/// with a colour derived from its label.
pub fn render_frames(script: &SceneScript, rng: &mut SeededRng) -> Vec<Tensor> {
    let (h, w) = script.frame_hw;
    (0..script.frames)
        .map(|f| {
            let mut t = rng.uniform_tensor(&[3, h, w], 0.1).map(|v| v + 0.1);
            let data = t.data_mut();
            for id in &script.identities {
                let Some(Some((bx, by, bw, bh))) = id.boxes.get(f) else {
                    continue;
                };
                let colour = [
                    0.2 + 0.6 * ((id.label * 37) % 11) as f64 / 10.0,
                    0.2 + 0.6 * ((id.label * 53 + 3) % 11) as f64 / 10.0,
                    0.2 + 0.6 * ((id.label * 71 + 7) % 11) as f64 / 10.0,
                ];
                let x0 = bx.floor().max(0.0) as usize;
                let y0 = by.floor().max(0.0) as usize;
                let x1 = ((bx + bw).ceil().max(0.0) as usize).min(w);
                let y1 = ((by + bh).ceil().max(0.0) as usize).min(h);
                for (c, value) in colour.iter().enumerate() {
                    for y in y0..y1 {
                        for x in x0..x1 {
                            data[(c * h + y) * w + x] = *value;
                        }
                    }
                }
            }
            t
        })
        .collect()
}
