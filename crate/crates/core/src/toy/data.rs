//! Seeded synthetic video-identity data: each identity is a two-colour
//! figure of characteristic width on a per-tracklet textured background,
//! with positional jitter, camera-dependent illumination, random occluders
//! and padded side columns.

use crate::aggregation::ValidityMask;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.75, 0.2],
    [0.15, 0.3, 0.85],
    [0.9, 0.85, 0.2],
    [0.8, 0.3, 0.8],
    [0.2, 0.8, 0.8],
    [0.95, 0.95, 0.95],
    [0.1, 0.1, 0.1],
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataConfig {
    pub identities: usize,
    /// Training tracklets per identity.
    pub train_tracklets: usize,
    /// Frames per tracklet.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Probability that a frame carries an occluding block.
    pub occlusion: f64,
    /// Probability that a tracklet has padded side columns.
    pub padding: f64,
}

impl Default for ToyDataConfig {
    fn default() -> Self {
        Self {
            identities: 20,
            train_tracklets: 8,
            frames: 12,
            height: 32,
            width: 16,
            occlusion: 0.2,
            padding: 0.3,
        }
    }
}

/// Fixed look of one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    pub upper: [f64; 3],
    pub lower: [f64; 3],
    pub body_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTracklet {
    pub tid: u64,
    /// Zero-based identity index.
    pub identity: usize,
    pub camera: u32,
    /// `[3, H, W]` each.
    pub frames: Vec<Tensor>,
    pub mask: ValidityMask,
}

impl ToyTracklet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames `start..start + len` with their mask.
    pub fn clip(&self, start: usize, len: usize) -> Result<(Vec<Tensor>, ValidityMask)> {
        if len == 0 || start + len > self.len() {
            return Err(Error::invalid(format!(
                "clip {start}+{len} outside a tracklet of {} frames",
                self.len()
            )));
        }
        Ok((
            self.frames[start..start + len].to_vec(),
            self.mask.slice_frames(start, len)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticIdentityDataset {
    pub config: ToyDataConfig,
    pub appearances: Vec<Appearance>,
    /// `train_tracklets` per identity, alternating between the two cameras.
    pub train: Vec<ToyTracklet>,
    /// One per identity, camera 0.
    pub query: Vec<ToyTracklet>,
    /// One per identity, camera 1.
    pub gallery: Vec<ToyTracklet>,
}

/// Horizontal mirror of a `[C, H, W]` frame.
pub fn flip_frame(frame: &Tensor) -> Tensor {
    let [c, h, w] = *frame.shape() else {
        panic!("flip_frame expects [C, H, W]");
    };
    let mut out = frame.clone();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.data_mut()[(ch * h + y) * w + x] = frame.data()[(ch * h + y) * w + (w - 1 - x)];
            }
        }
    }
    out
}

/// Flips every frame and the mask together with probability 1/2. Returns
/// whether the flip happened.
pub fn augment_clip(frames: &mut [Tensor], mask: &mut ValidityMask, rng: &mut SeededRng) -> bool {
    let flip = rng.chance(0.5);
    if flip {
        for f in frames.iter_mut() {
            *f = flip_frame(f);
        }
        *mask = mask.flip_horizontal();
    }
    flip
}

fn appearances(n: usize, rng: &mut SeededRng) -> Result<Vec<Appearance>> {
    let mut pairs: Vec<(usize, usize)> = (0..PALETTE.len())
        .flat_map(|a| {
            (0..PALETTE.len())
                .filter(move |&b| b != a)
                .map(move |b| (a, b))
        })
        .collect();
    if n > pairs.len() {
        return Err(Error::invalid(format!(
            "at most {} distinct identities are available",
            pairs.len()
        )));
    }
    rng.shuffle(&mut pairs);
    Ok(pairs[..n]
        .iter()
        .map(|&(a, b)| Appearance {
            upper: PALETTE[a],
            lower: PALETTE[b],
            body_width: 5 + rng.below(4),
        })
        .collect())
}

struct TrackletStyle {
    background: [f64; 3],
    stripe: usize,
    gain: f64,
    tint: [f64; 3],
    pad_left: usize,
    pad_right: usize,
}

fn render(
    app: &Appearance,
    style: &TrackletStyle,
    cfg: &ToyDataConfig,
    rng: &mut SeededRng,
) -> (Tensor, Vec<bool>) {
    let (h, w) = (cfg.height, cfg.width);
    let mut img = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let stripe = if (x + y) % style.stripe < style.stripe / 2 {
                0.12
            } else {
                -0.12
            };
            for c in 0..3 {
                img[(c * h + y) * w + x] = style.background[c] + stripe + rng.uniform(-0.08, 0.08);
            }
        }
    }
    let bw = app.body_width.min(w);
    let cx = (w as isize - bw as isize) / 2 + rng.below(5) as isize - 2;
    let top = 2 + rng.below(3);
    let body_h = h.saturating_sub(top + 2);
    let head = 4.min(body_h);
    for y in top..top + body_h {
        for dx in 0..bw as isize {
            let x = cx + dx;
            if x < 0 || x >= w as isize {
                continue;
            }
            let x = x as usize;
            let colour = if y < top + head {
                if dx == 0 || dx == bw as isize - 1 {
                    continue;
                }
                [0.9, 0.7, 0.55]
            } else if y < top + head + (body_h - head) / 2 {
                app.upper
            } else {
                app.lower
            };
            for c in 0..3 {
                img[(c * h + y) * w + x] = colour[c] + rng.uniform(-0.04, 0.04);
            }
        }
    }
    if rng.chance(cfg.occlusion) {
        let (oh, ow) = (h / 4, w / 2);
        let oy = rng.below(h - oh + 1);
        let ox = rng.below(w - ow + 1);
        let grey = rng.uniform(0.3, 0.6);
        for c in 0..3 {
            for y in oy..oy + oh {
                for x in ox..ox + ow {
                    img[(c * h + y) * w + x] = grey;
                }
            }
        }
    }
    for c in 0..3 {
        for v in &mut img[c * h * w..(c + 1) * h * w] {
            *v = (*v * style.gain + style.tint[c]).clamp(0.0, 1.0);
        }
    }
    let mut valid = vec![true; h * w];
    for y in 0..h {
        for x in (0..style.pad_left).chain(w - style.pad_right..w) {
            valid[y * w + x] = false;
            for c in 0..3 {
                img[(c * h + y) * w + x] = 0.0;
            }
        }
    }
    (Tensor::from_parts(vec![3, h, w], img), valid)
}

fn tracklet(
    tid: u64,
    identity: usize,
    camera: u32,
    app: &Appearance,
    cfg: &ToyDataConfig,
    rng: &mut SeededRng,
) -> ToyTracklet {
    let (gain, tint) = match camera {
        0 => (1.0, [0.0, 0.0, 0.0]),
        _ => (0.85, [0.05, 0.02, -0.03]),
    };
    let (pad_left, pad_right) = if rng.chance(cfg.padding) {
        let k = 1 + rng.below(cfg.width / 4);
        if rng.chance(0.5) {
            (k, 0)
        } else {
            (0, k)
        }
    } else {
        (0, 0)
    };
    let style = TrackletStyle {
        background: [
            rng.uniform(0.1, 0.9),
            rng.uniform(0.1, 0.9),
            rng.uniform(0.1, 0.9),
        ],
        stripe: 2 + 2 * rng.below(4),
        gain,
        tint,
        pad_left,
        pad_right,
    };
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut valid = Vec::with_capacity(cfg.frames * cfg.height * cfg.width);
    for _ in 0..cfg.frames {
        let (img, v) = render(app, &style, cfg, rng);
        frames.push(img);
        valid.extend(v);
    }
    ToyTracklet {
        tid,
        identity,
        camera,
        frames,
        mask: ValidityMask::new(cfg.frames, cfg.height, cfg.width, valid).expect("sizes match"),
    }
}

impl SyntheticIdentityDataset {
    pub fn generate(config: &ToyDataConfig, seed: u64) -> Result<Self> {
        if config.identities == 0 || config.train_tracklets == 0 || config.frames == 0 {
            return Err(Error::invalid(
                "identities, tracklets and frames must be positive",
            ));
        }
        if config.height < 12 || config.width < 8 {
            return Err(Error::invalid("frames must be at least 12x8"));
        }
        let mut rng = SeededRng::new(seed);
        let apps = appearances(config.identities, &mut rng)?;
        let mut tid = 0u64;
        let mut next = || {
            tid += 1;
            tid
        };
        let mut train = Vec::new();
        for (i, app) in apps.iter().enumerate() {
            for j in 0..config.train_tracklets {
                train.push(tracklet(next(), i, (j % 2) as u32, app, config, &mut rng));
            }
        }
        let query = apps
            .iter()
            .enumerate()
            .map(|(i, app)| tracklet(next(), i, 0, app, config, &mut rng))
            .collect();
        let gallery = apps
            .iter()
            .enumerate()
            .map(|(i, app)| tracklet(next(), i, 1, app, config, &mut rng))
            .collect();
        Ok(Self {
            config: config.clone(),
            appearances: apps,
            train,
            query,
            gallery,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_padded_pixels_are_zero() {
        let cfg = ToyDataConfig {
            identities: 5,
            padding: 1.0,
            ..ToyDataConfig::default()
        };
        let a = SyntheticIdentityDataset::generate(&cfg, 3).unwrap();
        assert_eq!(a, SyntheticIdentityDataset::generate(&cfg, 3).unwrap());
        assert_ne!(
            a.train[0].frames,
            SyntheticIdentityDataset::generate(&cfg, 4).unwrap().train[0].frames
        );
        for t in a.train.iter().chain(&a.query).chain(&a.gallery) {
            assert!(t.mask.as_slice().iter().any(|v| !v));
            let hw = cfg.height * cfg.width;
            for (f, frame) in t.frames.iter().enumerate() {
                for (i, &valid) in t.mask.frame(f).iter().enumerate() {
                    if !valid {
                        assert!((0..3).all(|c| frame.data()[c * hw + i] == 0.0));
                    }
                }
            }
        }
        assert_eq!(a.train.len(), 5 * cfg.train_tracklets);
        assert!(a.gallery.iter().all(|t| t.camera == 1));
    }

    #[test]
    fn flip_is_synchronous() {
        let cfg = ToyDataConfig {
            identities: 2,
            padding: 1.0,
            ..ToyDataConfig::default()
        };
        let ds = SyntheticIdentityDataset::generate(&cfg, 1).unwrap();
        let mut rng = SeededRng::new(0);
        let mut seen = [false; 2];
        for _ in 0..16 {
            let (mut frames, mut mask) = ds.train[0].clip(0, 6).unwrap();
            let flipped = augment_clip(&mut frames, &mut mask, &mut rng);
            seen[flipped as usize] = true;
            for (i, f) in frames.iter().enumerate() {
                let orig = &ds.train[0].frames[i];
                let expect = if flipped {
                    flip_frame(orig)
                } else {
                    orig.clone()
                };
                assert_eq!(f, &expect);
            }
            let m0 = ds.train[0].mask.slice_frames(0, 6).unwrap();
            assert_eq!(mask, if flipped { m0.flip_horizontal() } else { m0 });
        }
        assert!(seen[0] && seen[1]);
    }
}
