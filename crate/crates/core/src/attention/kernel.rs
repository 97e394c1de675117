//! Line attention: softmax attention restricted to groups of positions
//! ("lines") that share every coordinate except one. The 3D non-local case is
//! the degenerate grouping where a single line holds every position.
//!
//! All buffers here are position-major: row `n` of a `[N, C]` buffer holds
//! the channel vector of position `n`.

use super::counter::OpCounts;
use super::{Axis, Extents};

/// A family of lines over `T×H×W` positions.
#[derive(Debug, Clone)]
pub(crate) struct Lines {
    pub len: usize,
    pub stride: usize,
    pub starts: Vec<usize>,
}

impl Lines {
    /// Every position in one line, in row-major order.
    pub fn all(extents: Extents) -> Self {
        Self {
            len: extents.positions(),
            stride: 1,
            starts: vec![0],
        }
    }

    pub fn along(axis: Axis, e: Extents) -> Self {
        let (t, h, w) = (e.t, e.h, e.w);
        let mut starts = Vec::new();
        match axis {
            Axis::H => {
                for ti in 0..t {
                    for wi in 0..w {
                        starts.push(ti * h * w + wi);
                    }
                }
                Self {
                    len: h,
                    stride: w,
                    starts,
                }
            }
            Axis::W => {
                for ti in 0..t {
                    for hi in 0..h {
                        starts.push((ti * h + hi) * w);
                    }
                }
                Self {
                    len: w,
                    stride: 1,
                    starts,
                }
            }
            Axis::T => {
                for hi in 0..h {
                    for wi in 0..w {
                        starts.push(hi * w + wi);
                    }
                }
                Self {
                    len: t,
                    stride: h * w,
                    starts,
                }
            }
        }
    }

    #[inline]
    fn node(&self, start: usize, i: usize) -> usize {
        start + i * self.stride
    }
}

/// Positional term attached to the logits and values.
#[derive(Clone, Copy)]
pub(crate) enum Positional<'a> {
    None,
    /// `[L, dq]` fixed table added to each head's queries and keys.
    Sinusoidal(&'a [f64]),
    /// `[2L-1, dq]`, `[2L-1, dq]` and `[2L-1, dv]` offset tables, indexed by
    /// `p - o + L - 1` and shared by every head.
    Relative {
        r_q: &'a [f64],
        r_k: &'a [f64],
        r_v: &'a [f64],
    },
}

/// Shapes of one attention call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub n: usize,
    pub cq: usize,
    pub cv: usize,
    pub heads: usize,
}

impl Dims {
    fn dq(&self) -> usize {
        self.cq / self.heads
    }
    fn dv(&self) -> usize {
        self.cv / self.heads
    }
}

/// What the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub(crate) struct AttendCache {
    /// Queries and keys as they entered the logits (after any sinusoidal add).
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Softmax weights, `[line][head][o][p]`.
    pub weights: Vec<f64>,
}

/// Gradients produced by [`attend_backward`].
pub(crate) struct AttendGrads {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub r_q: Vec<f64>,
    pub r_k: Vec<f64>,
    pub r_v: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn attend_forward(
    mut q: Vec<f64>,
    mut k: Vec<f64>,
    v: Vec<f64>,
    dims: Dims,
    lines: &Lines,
    pos: Positional<'_>,
    counts: &mut OpCounts,
) -> (Vec<f64>, AttendCache) {
    let Dims { n, cq, cv, heads } = dims;
    let (dq, dv, len) = (dims.dq(), dims.dv(), lines.len);
    debug_assert_eq!(q.len(), n * cq);
    debug_assert_eq!(v.len(), n * cv);

    if let Positional::Sinusoidal(table) = pos {
        for &start in &lines.starts {
            for i in 0..len {
                let node = lines.node(start, i);
                let pe = &table[i * dq..(i + 1) * dq];
                for m in 0..heads {
                    let base = node * cq + m * dq;
                    for c in 0..dq {
                        q[base + c] += pe[c];
                        k[base + c] += pe[c];
                    }
                }
            }
        }
        counts.encoding_adds += 2 * (n * cq) as u64;
    }

    let mut y = vec![0.0; n * cv];
    let mut weights = vec![0.0; lines.starts.len() * heads * len * len];
    let mut row = vec![0.0; len];
    let mut shifted = vec![0.0; dv];
    for (li, &start) in lines.starts.iter().enumerate() {
        for m in 0..heads {
            let wbase = (li * heads + m) * len * len;
            for o in 0..len {
                let no = lines.node(start, o);
                let qo = &q[no * cq + m * dq..no * cq + (m + 1) * dq];
                for (p, logit) in row.iter_mut().enumerate() {
                    let np = lines.node(start, p);
                    let kp = &k[np * cq + m * dq..np * cq + (m + 1) * dq];
                    let mut s = dot(qo, kp);
                    if let Positional::Relative { r_q, r_k, .. } = pos {
                        let d = p + len - 1 - o;
                        s += dot(qo, &r_q[d * dq..(d + 1) * dq]);
                        s += dot(kp, &r_k[d * dq..(d + 1) * dq]);
                    }
                    *logit = s;
                }
                counts.score_macs += (len * dq) as u64;
                counts.softmax_exps += len as u64;
                if let Positional::Relative { .. } = pos {
                    counts.positional_macs += (2 * len * dq) as u64;
                    counts.encoding_adds += (2 * len) as u64;
                }
                crate::tensor::softmax_in_place(&mut row);
                weights[wbase + o * len..wbase + (o + 1) * len].copy_from_slice(&row);

                let yo = &mut y[no * cv + m * dv..no * cv + (m + 1) * dv];
                for (p, &a) in row.iter().enumerate() {
                    let np = lines.node(start, p);
                    let vp = &v[np * cv + m * dv..np * cv + (m + 1) * dv];
                    match pos {
                        Positional::Relative { r_v, .. } => {
                            let d = p + len - 1 - o;
                            let rv = &r_v[d * dv..(d + 1) * dv];
                            for ((s, &a1), &b1) in shifted.iter_mut().zip(vp).zip(rv) {
                                *s = a1 + b1;
                            }
                            for (acc, &s) in yo.iter_mut().zip(&shifted) {
                                *acc += a * s;
                            }
                        }
                        _ => {
                            for (acc, &s) in yo.iter_mut().zip(vp) {
                                *acc += a * s;
                            }
                        }
                    }
                }
                counts.value_macs += (len * dv) as u64;
                if let Positional::Relative { .. } = pos {
                    counts.encoding_adds += (len * dv) as u64;
                }
            }
        }
    }
    (y, AttendCache { q, k, v, weights })
}

pub(crate) fn attend_backward(
    cache: &AttendCache,
    gy: &[f64],
    dims: Dims,
    lines: &Lines,
    pos: Positional<'_>,
) -> AttendGrads {
    let Dims { n, cq, cv, heads } = dims;
    let (dq, dv, len) = (dims.dq(), dims.dv(), lines.len);
    let table_rows = 2 * len - 1;
    let relative = matches!(pos, Positional::Relative { .. });
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);

    let mut gq = vec![0.0; n * cq];
    let mut gk = vec![0.0; n * cq];
    let mut gv = vec![0.0; n * cv];
    let (mut grq, mut grk, mut grv) = if relative {
        (
            vec![0.0; table_rows * dq],
            vec![0.0; table_rows * dq],
            vec![0.0; table_rows * dv],
        )
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };

    let mut ga = vec![0.0; len];
    for (li, &start) in lines.starts.iter().enumerate() {
        for m in 0..heads {
            let wbase = (li * heads + m) * len * len;
            for o in 0..len {
                let no = lines.node(start, o);
                let a = &cache.weights[wbase + o * len..wbase + (o + 1) * len];
                let gyo = &gy[no * cv + m * dv..no * cv + (m + 1) * dv];

                for (p, g) in ga.iter_mut().enumerate() {
                    let np = lines.node(start, p);
                    let vp = &v[np * cv + m * dv..np * cv + (m + 1) * dv];
                    let mut s = dot(gyo, vp);
                    if let Positional::Relative { r_v, .. } = pos {
                        let d = p + len - 1 - o;
                        s += dot(gyo, &r_v[d * dv..(d + 1) * dv]);
                        let grv_d = &mut grv[d * dv..(d + 1) * dv];
                        for (acc, &gj) in grv_d.iter_mut().zip(gyo) {
                            *acc += a[p] * gj;
                        }
                    }
                    let gvp = &mut gv[np * cv + m * dv..np * cv + (m + 1) * dv];
                    for (acc, &gj) in gvp.iter_mut().zip(gyo) {
                        *acc += a[p] * gj;
                    }
                    *g = s;
                }

                let mean: f64 = a.iter().zip(&ga).map(|(x, y)| x * y).sum();
                for p in 0..len {
                    let gs = a[p] * (ga[p] - mean);
                    if gs == 0.0 {
                        continue;
                    }
                    let np = lines.node(start, p);
                    let qo = no * cq + m * dq;
                    let kp = np * cq + m * dq;
                    for c in 0..dq {
                        gq[qo + c] += gs * k[kp + c];
                        gk[kp + c] += gs * q[qo + c];
                    }
                    if let Positional::Relative { r_q, r_k, .. } = pos {
                        let d = p + len - 1 - o;
                        for c in 0..dq {
                            gq[qo + c] += gs * r_q[d * dq + c];
                            gk[kp + c] += gs * r_k[d * dq + c];
                            grq[d * dq + c] += gs * q[qo + c];
                            grk[d * dq + c] += gs * k[kp + c];
                        }
                    }
                }
            }
        }
    }
    AttendGrads {
        q: gq,
        k: gk,
        v: gv,
        r_q: grq,
        r_k: grk,
        r_v: grv,
    }
}
