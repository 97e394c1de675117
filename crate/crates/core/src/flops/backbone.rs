use super::{CountingConvention, FlopReport, InsertionPoint, LayerKind, LayerSpec};
use crate::attention::Extents;
use crate::error::{Error, Result};

/// A 50-layer bottleneck residual network applied frame by frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Stride of the first block of the last stage: 1 or 2.
    pub last_stride: usize,
    pub stem_width: usize,
    /// Bottleneck widths of the four stages.
    pub widths: [usize; 4],
    pub blocks: [usize; 4],
    pub expansion: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            frames: 6,
            height: 256,
            width: 128,
            last_stride: 1,
            stem_width: 64,
            widths: [64, 128, 256, 512],
            blocks: [3, 4, 6, 3],
            expansion: 4,
        }
    }
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.last_stride, 1 | 2) {
            return Err(Error::invalid(format!(
                "last_stride must be 1 or 2, got {}",
                self.last_stride
            )));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("backbone extents must be positive"));
        }
        if self.widths.contains(&0)
            || self.blocks.contains(&0)
            || self.stem_width == 0
            || self.expansion == 0
        {
            return Err(Error::invalid(
                "stage widths and block counts must be positive",
            ));
        }
        Ok(())
    }

    fn stage_stride(&self, stage: usize) -> usize {
        match stage {
            0 => 1,
            3 => self.last_stride,
            _ => 2,
        }
    }
}

struct Builder {
    frames: usize,
    h: usize,
    w: usize,
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn push(&mut self, name: String, kind: LayerKind) -> Result<(usize, usize)> {
        let spec = LayerSpec {
            name,
            kind,
            frames: self.frames,
            height: self.h,
            width: self.w,
        };
        spec.validate()?;
        let out = spec.output_hw();
        self.layers.push(spec);
        Ok(out)
    }

    fn conv(
        &mut self,
        name: String,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<()> {
        let (h, w) = self.push(
            name,
            LayerKind::Conv {
                c_in,
                c_out,
                kernel,
                stride,
                padding: kernel / 2,
            },
        )?;
        self.h = h;
        self.w = w;
        Ok(())
    }

    fn bn_relu(&mut self, name: &str, channels: usize, relu: bool) -> Result<()> {
        self.push(format!("{name}.bn"), LayerKind::BatchNorm { channels })?;
        if relu {
            self.push(format!("{name}.relu"), LayerKind::Relu { channels })?;
        }
        Ok(())
    }
}

/// Every counted layer in execution order, named `conv1`, `conv3_2.b`, ...
pub fn backbone_layers(spec: &BackboneSpec) -> Result<Vec<LayerSpec>> {
    Ok(build(spec)?.0)
}

/// Block name with its `(channels, h, w)` output.
type BlockOutput = (String, usize, usize, usize);

/// Layers plus the output of every residual block.
fn build(spec: &BackboneSpec) -> Result<(Vec<LayerSpec>, Vec<BlockOutput>)> {
    spec.validate()?;
    let mut b = Builder {
        frames: spec.frames,
        h: spec.height,
        w: spec.width,
        layers: Vec::new(),
    };
    b.conv("conv1".into(), 3, spec.stem_width, 7, 2)?;
    b.bn_relu("conv1", spec.stem_width, true)?;
    let (h, w) = b.push(
        "maxpool".into(),
        LayerKind::MaxPool {
            channels: spec.stem_width,
            kernel: 3,
            stride: 2,
            padding: 1,
        },
    )?;
    b.h = h;
    b.w = w;

    let mut blocks = Vec::new();
    let mut c_in = spec.stem_width;
    for stage in 0..4 {
        let width = spec.widths[stage];
        let c_out = width * spec.expansion;
        for i in 0..spec.blocks[stage] {
            let name = format!("conv{}_{}", stage + 2, i + 1);
            let stride = if i == 0 { spec.stage_stride(stage) } else { 1 };
            let (h0, w0) = (b.h, b.w);
            b.conv(format!("{name}.a"), c_in, width, 1, 1)?;
            b.bn_relu(&format!("{name}.a"), width, true)?;
            b.conv(format!("{name}.b"), width, width, 3, stride)?;
            b.bn_relu(&format!("{name}.b"), width, true)?;
            b.conv(format!("{name}.c"), width, c_out, 1, 1)?;
            b.bn_relu(&format!("{name}.c"), c_out, false)?;
            if i == 0 {
                let (h1, w1) = (b.h, b.w);
                b.h = h0;
                b.w = w0;
                b.conv(format!("{name}.down"), c_in, c_out, 1, stride)?;
                b.bn_relu(&format!("{name}.down"), c_out, false)?;
                debug_assert_eq!((b.h, b.w), (h1, w1));
            }
            b.push(format!("{name}.relu"), LayerKind::Relu { channels: c_out })?;
            blocks.push((name, c_out, b.h, b.w));
            c_in = c_out;
        }
    }
    Ok((b.layers, blocks))
}

/// Per-frame backbone cost over `spec.frames` frames.
pub fn backbone_flops(spec: &BackboneSpec, convention: &CountingConvention) -> Result<FlopReport> {
    convention.validate()?;
    FlopReport::from_layers(
        format!(
            "backbone T={} {}x{} last_stride={}",
            spec.frames, spec.height, spec.width, spec.last_stride
        ),
        *convention,
        &backbone_layers(spec)?,
    )
}

/// The five attention insertion points: after blocks conv3_3, conv3_4,
/// conv4_4, conv4_5 and conv4_6.
pub fn insertion_points(spec: &BackboneSpec) -> Result<Vec<InsertionPoint>> {
    let (_, blocks) = build(spec)?;
    ["conv3_3", "conv3_4", "conv4_4", "conv4_5", "conv4_6"]
        .iter()
        .map(|&after| {
            let (_, c, h, w) = blocks
                .iter()
                .find(|(n, ..)| n == after)
                .ok_or_else(|| Error::invalid(format!("backbone has no block {after}")))?;
            Ok(InsertionPoint {
                after: after.to_string(),
                channels: *c,
                extents: Extents::new(spec.frames, *h, *w),
            })
        })
        .collect()
}
