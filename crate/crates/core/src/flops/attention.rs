use std::fmt;
use std::str::FromStr;

use super::{CountingConvention, FlopReport, LayerKind, LayerSpec};
use crate::attention::{
    cfaa_forward_counted, nonlocal_3d_forward_counted, AttentionConfig, AttentionParams,
    AxialStack, Axis, CfaaParams, Encoding, Extents, OpCounts,
};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Heads per module, divided evenly among scales.
pub const TOTAL_HEADS: usize = 8;

/// Attention module kinds with a cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionVariant {
    NonLocal3d,
    /// Height, width and time layers without positional encoding.
    Axial,
    AxialSinusoidal,
    AxialRelative,
    /// Coarse-to-fine axial attention with relative encoding.
    Cfaa {
        scales: usize,
    },
}

impl AttentionVariant {
    pub fn encoding(self) -> Encoding {
        match self {
            Self::NonLocal3d | Self::Axial => Encoding::None,
            Self::AxialSinusoidal => Encoding::Sinusoidal,
            Self::AxialRelative | Self::Cfaa { .. } => Encoding::Relative,
        }
    }

    pub fn scales(self) -> usize {
        match self {
            Self::Cfaa { scales } => scales,
            _ => 1,
        }
    }

    /// Heads per scale: one for non-local, otherwise [`TOTAL_HEADS`] split
    /// over the scales.
    pub fn heads(self) -> usize {
        match self {
            Self::NonLocal3d => 1,
            v => (TOTAL_HEADS / v.scales()).max(1),
        }
    }

    /// Module config at one insertion point: `c_qk = C/2`, `c_out = C`.
    pub fn config(self, channels: usize, extents: Extents) -> AttentionConfig {
        AttentionConfig {
            c_in: channels,
            c_qk: channels / 2,
            c_out: channels,
            heads: self.heads(),
            scales: self.scales(),
            encoding: self.encoding(),
            extents,
        }
    }

    fn check(self, config: &AttentionConfig) -> Result<()> {
        config.validate()?;
        if config.encoding != self.encoding() || config.scales != self.scales() {
            return Err(Error::config(format!(
                "variant {self} needs encoding {} and {} scale(s), config has {} and {}",
                self.encoding(),
                self.scales(),
                config.encoding,
                config.scales
            )));
        }
        if self == Self::NonLocal3d && config.heads != 1 {
            return Err(Error::config("non-local attention uses a single head"));
        }
        Ok(())
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonLocal3d => f.write_str("nonlocal3d"),
            Self::Axial => f.write_str("axial"),
            Self::AxialSinusoidal => f.write_str("axial-sinusoidal"),
            Self::AxialRelative => f.write_str("axial-relative"),
            Self::Cfaa { scales } => write!(f, "cfaa:{scales}"),
        }
    }
}

/// Accepts the display names; bare `cfaa` means four scales.
impl FromStr for AttentionVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nonlocal3d" | "non-local" | "nonlocal" => Self::NonLocal3d,
            "axial" => Self::Axial,
            "axial-sinusoidal" => Self::AxialSinusoidal,
            "axial-relative" => Self::AxialRelative,
            "cfaa" => Self::Cfaa { scales: 4 },
            other => match other.strip_prefix("cfaa:").map(str::parse::<usize>) {
                Some(Ok(scales)) if scales >= 1 => Self::Cfaa { scales },
                _ => {
                    return Err(Error::invalid(format!(
                        "unknown attention variant {other:?} (expected nonlocal3d, axial, axial-sinusoidal, axial-relative, cfaa or cfaa:<S>)"
                    )))
                }
            },
        })
    }
}

/// Where a module sits in the backbone and the map it sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertionPoint {
    pub after: String,
    pub channels: usize,
    pub extents: Extents,
}

#[allow(clippy::too_many_arguments)]
fn layer_counts(
    counts: &mut OpCounts,
    n: u64,
    len: u64,
    c_in: u64,
    cq: u64,
    cv: u64,
    heads: u64,
    encoding: Encoding,
) {
    counts.projection_macs += n * c_in * (2 * cq + cv);
    counts.score_macs += n * len * cq;
    counts.value_macs += n * len * cv;
    counts.softmax_exps += n * len * heads;
    match encoding {
        Encoding::None => {}
        Encoding::Sinusoidal => counts.encoding_adds += 2 * n * cq,
        Encoding::Relative => {
            counts.positional_macs += 2 * n * len * cq;
            counts.encoding_adds += n * len * (2 * heads + cv);
        }
    }
}

/// Closed-form tallies of one module, identical to what the kernels count
/// when executed on the same config.
pub fn analytic_counts(variant: AttentionVariant, config: &AttentionConfig) -> Result<OpCounts> {
    variant.check(config)?;
    let mut c = OpCounts::default();
    let heads = config.heads as u64;
    let n_full = config.extents.positions() as u64;
    match variant {
        AttentionVariant::NonLocal3d => layer_counts(
            &mut c,
            n_full,
            n_full,
            config.c_in as u64,
            config.c_qk as u64,
            config.c_out as u64,
            heads,
            Encoding::None,
        ),
        _ => {
            let s_count = config.scales;
            let cin = (config.c_in / s_count) as u64;
            let cq = (config.c_qk / s_count) as u64;
            let cv = (config.c_out / s_count) as u64;
            for s in 0..s_count {
                let e = config.scale_extents(s);
                let n = e.positions() as u64;
                for (i, axis) in AxialStack::ORDER.into_iter().enumerate() {
                    let layer_in = if i == 0 { cin } else { cv };
                    let len = axis.length(e) as u64;
                    layer_counts(&mut c, n, len, layer_in, cq, cv, heads, config.encoding);
                }
            }
        }
    }
    c.projection_macs += n_full * (config.c_in * config.c_out) as u64;
    Ok(c)
}

/// Runs the kernels on seeded random data and returns what they tallied.
/// Limited to extents of at most 4 per axis.
pub fn count_oracle_multiplies(
    variant: AttentionVariant,
    config: &AttentionConfig,
    seed: u64,
) -> Result<OpCounts> {
    variant.check(config)?;
    let Extents { t, h, w } = config.extents;
    if t.max(h).max(w) > 4 {
        return Err(Error::invalid(format!(
            "instrumented counting is limited to extents <= 4, got {t}x{h}x{w}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let x = rng.uniform_tensor(&config.input_shape(), 1.0);
    let mut counts = OpCounts::default();
    match variant {
        AttentionVariant::NonLocal3d => {
            let params = AttentionParams::init(config, None::<Axis>, &mut rng)?;
            nonlocal_3d_forward_counted(&x, &params, config, &mut counts)?;
        }
        _ => {
            let params = CfaaParams::init(config, &mut rng)?;
            cfaa_forward_counted(&x, &params, config, &mut counts)?;
        }
    }
    Ok(counts)
}

/// Cost of `variant` summed over `points`, one row per insertion point.
pub fn attention_flops(
    variant: AttentionVariant,
    points: &[InsertionPoint],
    convention: &CountingConvention,
) -> Result<FlopReport> {
    convention.validate()?;
    let specs: Vec<LayerSpec> = points
        .iter()
        .map(|p| LayerSpec {
            name: format!("{variant}@{}", p.after),
            kind: LayerKind::Attention {
                variant,
                config: variant.config(p.channels, p.extents),
            },
            frames: p.extents.t,
            height: p.extents.h,
            width: p.extents.w,
        })
        .collect();
    FlopReport::from_layers(format!("{variant} x{}", points.len()), *convention, &specs)
}
