//! Analytic operation counts for a residual backbone with inserted
//! attention modules. Counts are exact integers; GFLOP values are derived
//! only for display.

mod attention;
mod backbone;
mod presets;

use std::fmt;
use std::str::FromStr;

pub use attention::{
    analytic_counts, attention_flops, count_oracle_multiplies, AttentionVariant, InsertionPoint,
    TOTAL_HEADS,
};
pub use backbone::{backbone_flops, backbone_layers, insertion_points, BackboneSpec};
pub use presets::{
    calibrate, check_ordering, model_table, table2, CalibrationEntry, CalibrationReport,
    ModelPreset, ReferenceValue, Table2Row, REFERENCE_TABLE2, REFERENCE_TABLE4,
};

use crate::attention::{AttentionConfig, OpCounts};
use crate::error::{Error, Result};

/// Which operations are counted and how a multiply-accumulate converts to
/// FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CountingConvention {
    /// FLOPs charged per multiply-accumulate: 1 or 2.
    pub macs_per_flop: u64,
    pub include_softmax_exp: bool,
    pub include_bn_relu: bool,
    /// Charge the 1×1×1 q/k/v/output projections of attention modules.
    pub include_projections: bool,
    /// Charge element-wise additions of positional encodings.
    pub include_encoding_adds: bool,
}

impl Default for CountingConvention {
    fn default() -> Self {
        Self {
            macs_per_flop: 1,
            include_softmax_exp: false,
            include_bn_relu: false,
            include_projections: false,
            include_encoding_adds: false,
        }
    }
}

impl CountingConvention {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.macs_per_flop, 1 | 2) {
            return Err(Error::invalid(format!(
                "macs_per_flop must be 1 or 2, got {}",
                self.macs_per_flop
            )));
        }
        Ok(())
    }

    /// Every combination of the five switches.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::with_capacity(32);
        for macs_per_flop in [1, 2] {
            for bits in 0..16u8 {
                out.push(Self {
                    macs_per_flop,
                    include_softmax_exp: bits & 1 != 0,
                    include_bn_relu: bits & 2 != 0,
                    include_projections: bits & 4 != 0,
                    include_encoding_adds: bits & 8 != 0,
                });
            }
        }
        out
    }

    pub fn macs(&self, macs: u64) -> u64 {
        macs * self.macs_per_flop
    }

    /// FLOPs charged for the tallies of one attention module.
    pub fn attention(&self, c: &OpCounts) -> u64 {
        let mut macs = c.score_macs + c.positional_macs + c.value_macs;
        if self.include_projections {
            macs += c.projection_macs;
        }
        let mut total = self.macs(macs);
        if self.include_softmax_exp {
            total += c.softmax_exps;
        }
        if self.include_encoding_adds {
            total += c.encoding_adds;
        }
        total
    }
}

/// `mac=1` followed by the enabled switches, e.g. `mac=2,softmax,bn-relu`.
impl fmt::Display for CountingConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mac={}", self.macs_per_flop)?;
        for (on, name) in [
            (self.include_softmax_exp, "softmax"),
            (self.include_bn_relu, "bn-relu"),
            (self.include_projections, "projections"),
            (self.include_encoding_adds, "encoding-adds"),
        ] {
            if on {
                write!(f, ",{name}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for CountingConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut c = Self::default();
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token {
                "default" => {}
                "mac=1" => c.macs_per_flop = 1,
                "mac=2" => c.macs_per_flop = 2,
                "softmax" => c.include_softmax_exp = true,
                "bn-relu" => c.include_bn_relu = true,
                "projections" => c.include_projections = true,
                "encoding-adds" => c.include_encoding_adds = true,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown convention token {other:?} (expected mac=1, mac=2, softmax, bn-relu, projections, encoding-adds)"
                    )))
                }
            }
        }
        Ok(c)
    }
}

/// Geometry of one counted layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu {
        channels: usize,
    },
    MaxPool {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Attention {
        variant: AttentionVariant,
        config: AttentionConfig,
    },
}

/// One layer applied to `frames` independent `height × width` maps.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

fn conv_out(n: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (n + 2 * padding - kernel) / stride + 1
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid(format!(
                "{}: extents must be positive",
                self.name
            )));
        }
        match self.kind {
            LayerKind::Conv {
                kernel,
                stride,
                padding,
                ..
            }
            | LayerKind::MaxPool {
                kernel,
                stride,
                padding,
                ..
            } => {
                if stride == 0 || kernel == 0 {
                    return Err(Error::invalid(format!(
                        "{}: stride and kernel must be >= 1",
                        self.name
                    )));
                }
                if self.height + 2 * padding < kernel || self.width + 2 * padding < kernel {
                    return Err(Error::invalid(format!(
                        "{}: kernel larger than padded input",
                        self.name
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Spatial extents after the layer.
    pub fn output_hw(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv {
                kernel,
                stride,
                padding,
                ..
            }
            | LayerKind::MaxPool {
                kernel,
                stride,
                padding,
                ..
            } => (
                conv_out(self.height, kernel, stride, padding),
                conv_out(self.width, kernel, stride, padding),
            ),
            _ => (self.height, self.width),
        }
    }

    /// Operations charged for this layer under `convention`.
    pub fn count(&self, convention: &CountingConvention) -> Result<u64> {
        self.validate()?;
        let (oh, ow) = self.output_hw();
        let out_positions = (self.frames * oh * ow) as u64;
        let in_positions = (self.frames * self.height * self.width) as u64;
        Ok(match &self.kind {
            LayerKind::Conv {
                c_in,
                c_out,
                kernel,
                ..
            } => convention.macs((c_in * c_out * kernel * kernel) as u64 * out_positions),
            LayerKind::BatchNorm { channels } | LayerKind::Relu { channels } => {
                if convention.include_bn_relu {
                    *channels as u64 * in_positions
                } else {
                    0
                }
            }
            LayerKind::MaxPool { .. } => 0,
            LayerKind::Attention { variant, config } => {
                convention.attention(&analytic_counts(*variant, config)?)
            }
        })
    }
}

/// Count of one named layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub count: u64,
}

/// Per-layer counts with their exact total, optionally relative to a
/// baseline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    pub title: String,
    pub convention: CountingConvention,
    pub layers: Vec<LayerCount>,
    pub total: u64,
    pub baseline: Option<(String, u64)>,
}

impl FlopReport {
    pub fn from_layers(
        title: impl Into<String>,
        convention: CountingConvention,
        specs: &[LayerSpec],
    ) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|s| {
                Ok(LayerCount {
                    name: s.name.clone(),
                    count: s.count(&convention)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(title, convention, layers))
    }

    pub fn new(
        title: impl Into<String>,
        convention: CountingConvention,
        layers: Vec<LayerCount>,
    ) -> Self {
        let total = layers.iter().map(|l| l.count).sum();
        Self {
            title: title.into(),
            convention,
            layers,
            total,
            baseline: None,
        }
    }

    pub fn with_baseline(mut self, name: impl Into<String>, total: u64) -> Self {
        self.baseline = Some((name.into(), total));
        self
    }

    /// `total - baseline`, or the total when there is no baseline.
    pub fn delta(&self) -> i128 {
        self.total as i128 - self.baseline.as_ref().map_or(0, |(_, b)| *b as i128)
    }

    pub fn gflops(&self) -> f64 {
        to_gflops(self.total)
    }
}

pub fn to_gflops(count: u64) -> f64 {
    count as f64 / 1e9
}
