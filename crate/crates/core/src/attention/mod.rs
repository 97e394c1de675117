//! Self-attention blocks over `C×T×H×W` feature maps.
//!
//! Four forward variants share one engine:
//!
//! * [`nonlocal_3d_forward`]: every position attends to every other.
//! * [`axial_forward`]: attention along one axis, optionally with a fixed
//!   sinusoidal encoding on queries and keys.
//! * [`axial_ps_forward`]: one-axis attention with learned relative
//!   embeddings on queries, keys and values.
//! * [`cfaa_forward`]: channels split into `S` scales; scale `s` is pooled by
//!   `2^s`, passed through height, width and time attention in turn, then
//!   upsampled and concatenated.
//!
//! Each variant projects its attention output back to the input width and
//! adds it to the input, so every forward preserves the input shape. Every
//! forward has an analytic backward returning a [`GradientBundle`].

mod block;
mod counter;
mod kernel;
mod sinusoidal;

use std::fmt;
use std::str::FromStr;

pub use block::{
    axial_backward, axial_forward, axial_forward_counted, axial_ps_backward, axial_ps_forward,
    cfaa_backward, cfaa_backward_cached, cfaa_forward, cfaa_forward_cached, cfaa_forward_counted,
    nonlocal_3d_backward, nonlocal_3d_forward, nonlocal_3d_forward_counted, CfaaCache,
};
pub use counter::OpCounts;
pub use sinusoidal::sinusoidal_encode;

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// One of the three axes of a `T×H×W` feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    T,
    H,
    W,
}

impl Axis {
    pub fn length(self, e: Extents) -> usize {
        match self {
            Axis::T => e.t,
            Axis::H => e.h,
            Axis::W => e.w,
        }
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" => Ok(Axis::T),
            "h" => Ok(Axis::H),
            "w" => Ok(Axis::W),
            other => Err(Error::invalid(format!("unknown axis {other:?}"))),
        }
    }
}

/// Positional encoding used inside the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Encoding {
    None,
    Sinusoidal,
    Relative,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::None => "none",
            Encoding::Sinusoidal => "sinusoidal",
            Encoding::Relative => "relative",
        })
    }
}

/// Temporal and spatial extents of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Extents {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Extents {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        Self { t, h, w }
    }

    pub fn positions(&self) -> usize {
        self.t * self.h * self.w
    }

    /// Extents after pooling the spatial axes by `factor` (ceiling division).
    pub fn pooled(&self, factor: usize) -> Self {
        Self {
            t: self.t,
            h: self.h.div_ceil(factor),
            w: self.w.div_ceil(factor),
        }
    }
}

/// Hyper-parameters of one attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub c_in: usize,
    pub c_qk: usize,
    pub c_out: usize,
    /// Heads per scale.
    pub heads: usize,
    pub scales: usize,
    pub encoding: Encoding,
    pub extents: Extents,
}

impl AttentionConfig {
    /// Bottleneck defaults: `c_qk = c_out = c_in / 2`, one head, one scale,
    /// relative encoding.
    pub fn bottleneck(c_in: usize, extents: Extents) -> Self {
        Self {
            c_in,
            c_qk: (c_in / 2).max(1),
            c_out: (c_in / 2).max(1),
            heads: 1,
            scales: 1,
            encoding: Encoding::Relative,
            extents,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Extents { t, h, w } = self.extents;
        if [
            self.c_in,
            self.c_qk,
            self.c_out,
            self.heads,
            self.scales,
            t,
            h,
            w,
        ]
        .contains(&0)
        {
            return Err(Error::config(format!(
                "all sizes must be positive: {self:?}"
            )));
        }
        let groups = self.scales * self.heads;
        if self.c_qk % groups != 0 || self.c_out % groups != 0 {
            return Err(Error::config(format!(
                "c_qk={} and c_out={} must be divisible by scales*heads={groups}",
                self.c_qk, self.c_out
            )));
        }
        if self.c_in % self.scales != 0 {
            return Err(Error::config(format!(
                "c_in={} must be divisible by scales={}",
                self.c_in, self.scales
            )));
        }
        let min = 1usize << (self.scales - 1);
        if h < min || w < min {
            return Err(Error::config(format!(
                "H={h} and W={w} must be at least 2^(S-1)={min}"
            )));
        }
        if self.encoding == Encoding::Sinusoidal && self.head_qk() % 2 != 0 {
            return Err(Error::config(format!(
                "sinusoidal encoding needs an even per-head query width, got {}",
                self.head_qk()
            )));
        }
        Ok(())
    }

    /// Query/key width of one head within one scale.
    pub fn head_qk(&self) -> usize {
        self.c_qk / (self.scales * self.heads)
    }

    /// Value width of one head within one scale.
    pub fn head_out(&self) -> usize {
        self.c_out / (self.scales * self.heads)
    }

    /// Pooling factor of scale `s` (zero-based).
    pub fn scale_factor(s: usize) -> usize {
        1 << s
    }

    pub fn scale_extents(&self, s: usize) -> Extents {
        self.extents.pooled(Self::scale_factor(s))
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.c_in, self.extents.t, self.extents.h, self.extents.w]
    }
}

/// Relative-offset tables for one axis of length `L`: `2L-1` rows, row
/// `p - o + L - 1` holding the embedding of offset `p - o`. Shared by every
/// head of the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeTables {
    /// `[2L-1, c_qk/M]`
    pub r_q: Tensor,
    /// `[2L-1, c_qk/M]`
    pub r_k: Tensor,
    /// `[2L-1, c_out/M]`
    pub r_v: Tensor,
}

impl RelativeTables {
    pub fn init(len: usize, dq: usize, dv: usize, rng: &mut SeededRng) -> Self {
        let rows = 2 * len - 1;
        Self {
            r_q: rng.init_weight(&[rows, dq], dq),
            r_k: rng.init_weight(&[rows, dq], dq),
            r_v: rng.init_weight(&[rows, dv], dv),
        }
    }

    pub fn zeros(len: usize, dq: usize, dv: usize) -> Self {
        let rows = 2 * len - 1;
        Self {
            r_q: Tensor::zeros(&[rows, dq]),
            r_k: Tensor::zeros(&[rows, dq]),
            r_v: Tensor::zeros(&[rows, dv]),
        }
    }

    /// Axis length these tables were built for.
    pub fn axis_length(&self) -> usize {
        self.r_q.shape()[0].div_ceil(2)
    }
}

/// Projections (bias-free 1×1×1 convolutions) of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    /// `[c_qk, c_in]`
    pub w_q: Tensor,
    /// `[c_qk, c_in]`
    pub w_k: Tensor,
    /// `[c_out, c_in]`
    pub w_v: Tensor,
    pub relative: Option<RelativeTables>,
}

impl AttentionLayer {
    pub fn init(
        c_in: usize,
        c_qk: usize,
        c_out: usize,
        heads: usize,
        relative_len: Option<usize>,
        rng: &mut SeededRng,
    ) -> Self {
        Self {
            w_q: rng.init_weight(&[c_qk, c_in], c_in),
            w_k: rng.init_weight(&[c_qk, c_in], c_in),
            w_v: rng.init_weight(&[c_out, c_in], c_in),
            relative: relative_len
                .map(|len| RelativeTables::init(len, c_qk / heads, c_out / heads, rng)),
        }
    }

    pub fn c_in(&self) -> usize {
        self.w_q.shape()[1]
    }
}

impl Parameters for AttentionLayer {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}w_q"), &self.w_q));
        out.push((format!("{prefix}w_k"), &self.w_k));
        out.push((format!("{prefix}w_v"), &self.w_v));
        if let Some(r) = &self.relative {
            out.push((format!("{prefix}r_q"), &r.r_q));
            out.push((format!("{prefix}r_k"), &r.r_k));
            out.push((format!("{prefix}r_v"), &r.r_v));
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}w_q"), &mut self.w_q));
        out.push((format!("{prefix}w_k"), &mut self.w_k));
        out.push((format!("{prefix}w_v"), &mut self.w_v));
        if let Some(r) = &mut self.relative {
            out.push((format!("{prefix}r_q"), &mut r.r_q));
            out.push((format!("{prefix}r_k"), &mut r.r_k));
            out.push((format!("{prefix}r_v"), &mut r.r_v));
        }
    }
}

/// Parameters of a single-layer block (non-local or one axial layer).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub layer: AttentionLayer,
    /// `[c_in, c_out]` projection back to the input width.
    pub w_o: Tensor,
}

impl AttentionParams {
    /// Random parameters for `config`. Relative tables are created when the
    /// config asks for relative encoding, sized for `axis`.
    pub fn init(config: &AttentionConfig, axis: Option<Axis>, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let relative_len = match (config.encoding, axis) {
            (Encoding::Relative, Some(a)) => Some(a.length(config.extents)),
            (Encoding::Relative, None) => {
                return Err(Error::config("relative encoding needs an axis"))
            }
            _ => None,
        };
        let layer = AttentionLayer::init(
            config.c_in,
            config.c_qk,
            config.c_out,
            config.heads,
            relative_len,
            rng,
        );
        Ok(Self {
            layer,
            w_o: rng.init_weight(&[config.c_in, config.c_out], config.c_out),
        })
    }
}

impl Parameters for AttentionParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.layer.collect(prefix, out);
        out.push((format!("{prefix}w_o"), &self.w_o));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.layer.collect_mut(prefix, out);
        out.push((format!("{prefix}w_o"), &mut self.w_o));
    }
}

/// Height, width and time layers applied in that order within one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct AxialStack {
    pub h: AttentionLayer,
    pub w: AttentionLayer,
    pub t: AttentionLayer,
}

impl AxialStack {
    pub const ORDER: [Axis; 3] = [Axis::H, Axis::W, Axis::T];

    pub fn layer(&self, axis: Axis) -> &AttentionLayer {
        match axis {
            Axis::H => &self.h,
            Axis::W => &self.w,
            Axis::T => &self.t,
        }
    }

    pub fn layer_mut(&mut self, axis: Axis) -> &mut AttentionLayer {
        match axis {
            Axis::H => &mut self.h,
            Axis::W => &mut self.w,
            Axis::T => &mut self.t,
        }
    }
}

/// Parameters of a coarse-to-fine axial attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct CfaaParams {
    pub scales: Vec<AxialStack>,
    /// `[c_in, c_out]` projection shared by all scales.
    pub w_o: Tensor,
}

impl CfaaParams {
    pub fn init(config: &AttentionConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let s_count = config.scales;
        let (cin, cq, cv) = (
            config.c_in / s_count,
            config.c_qk / s_count,
            config.c_out / s_count,
        );
        let mut scales = Vec::with_capacity(s_count);
        for s in 0..s_count {
            let e = config.scale_extents(s);
            let rel = |axis: Axis| (config.encoding == Encoding::Relative).then(|| axis.length(e));
            scales.push(AxialStack {
                h: AttentionLayer::init(cin, cq, cv, config.heads, rel(Axis::H), rng),
                w: AttentionLayer::init(cv, cq, cv, config.heads, rel(Axis::W), rng),
                t: AttentionLayer::init(cv, cq, cv, config.heads, rel(Axis::T), rng),
            });
        }
        Ok(Self {
            scales,
            w_o: rng.init_weight(&[config.c_in, config.c_out], config.c_out),
        })
    }
}

impl Parameters for CfaaParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (s, stack) in self.scales.iter().enumerate() {
            stack.h.collect(&format!("{prefix}s{s}.h."), out);
            stack.w.collect(&format!("{prefix}s{s}.w."), out);
            stack.t.collect(&format!("{prefix}s{s}.t."), out);
        }
        out.push((format!("{prefix}w_o"), &self.w_o));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (s, stack) in self.scales.iter_mut().enumerate() {
            stack.h.collect_mut(&format!("{prefix}s{s}.h."), out);
            stack.w.collect_mut(&format!("{prefix}s{s}.w."), out);
            stack.t.collect_mut(&format!("{prefix}s{s}.t."), out);
        }
        out.push((format!("{prefix}w_o"), &mut self.w_o));
    }
}

/// Gradient of a scalar loss with respect to a block input and every
/// parameter, laid out exactly like the parameter set `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<P> {
    pub input: Tensor,
    pub params: P,
}

impl<P: Parameters> Parameters for GradientBundle<P> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}input"), &self.input));
        self.params.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}input"), &mut self.input));
        self.params.collect_mut(prefix, out);
    }
}
