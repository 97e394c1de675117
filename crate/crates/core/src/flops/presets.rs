use std::fmt;
use std::str::FromStr;

use super::{
    attention_flops, backbone_flops, insertion_points, AttentionVariant, BackboneSpec,
    CountingConvention, FlopReport, LayerCount,
};
use crate::error::{Error, Result};

/// A published cost figure and the relative tolerance it is checked at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceValue {
    pub name: &'static str,
    pub gflops: f64,
    pub tolerance: f64,
}

impl ReferenceValue {
    pub fn rel_error(&self, model_gflops: f64) -> f64 {
        (model_gflops - self.gflops) / self.gflops
    }

    pub fn within(&self, model_gflops: f64) -> bool {
        self.rel_error(model_gflops).abs() <= self.tolerance
    }
}

const fn reference(name: &'static str, gflops: f64, tolerance: f64) -> ReferenceValue {
    ReferenceValue {
        name,
        gflops,
        tolerance,
    }
}

/// Backbone total followed by the cost added by each attention variant at
/// the five insertion points.
pub const REFERENCE_TABLE2: [ReferenceValue; 7] = [
    reference("baseline", 24.520, 0.05),
    reference("nonlocal3d", 17.213, 0.10),
    reference("axial", 0.361, 0.10),
    reference("axial-sinusoidal", 0.377, 0.10),
    reference("axial-relative", 0.424, 0.10),
    reference("cfaa:2", 0.245, 0.10),
    reference("cfaa:4", 0.126, 0.10),
];

/// Whole-model totals.
pub const REFERENCE_TABLE4: [ReferenceValue; 3] = [
    reference("c2d", 24.520, 0.05),
    reference("non-local", 41.733, 0.10),
    reference("cf-aan", 24.646, 0.05),
];

const TABLE2_VARIANTS: [AttentionVariant; 6] = [
    AttentionVariant::NonLocal3d,
    AttentionVariant::Axial,
    AttentionVariant::AxialSinusoidal,
    AttentionVariant::AxialRelative,
    AttentionVariant::Cfaa { scales: 2 },
    AttentionVariant::Cfaa { scales: 4 },
];

/// One row of the variant comparison: the backbone alone (`variant = None`)
/// or the cost one variant adds to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table2Row {
    pub name: String,
    pub variant: Option<AttentionVariant>,
    pub report: FlopReport,
}

pub fn table2(spec: &BackboneSpec, convention: &CountingConvention) -> Result<Vec<Table2Row>> {
    let base = backbone_flops(spec, convention)?;
    let points = insertion_points(spec)?;
    let mut rows = vec![Table2Row {
        name: "baseline".into(),
        variant: None,
        report: base.clone(),
    }];
    for v in TABLE2_VARIANTS {
        let report = attention_flops(v, &points, convention)?;
        rows.push(Table2Row {
            name: v.to_string(),
            variant: Some(v),
            report,
        });
    }
    Ok(rows)
}

/// Named whole-model architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelPreset {
    C2d,
    NonLocal,
    CfAan,
}

impl ModelPreset {
    pub const ALL: [ModelPreset; 3] = [ModelPreset::C2d, ModelPreset::NonLocal, ModelPreset::CfAan];

    pub fn attention(self) -> Option<AttentionVariant> {
        match self {
            Self::C2d => None,
            Self::NonLocal => Some(AttentionVariant::NonLocal3d),
            Self::CfAan => Some(AttentionVariant::Cfaa { scales: 4 }),
        }
    }
}

impl fmt::Display for ModelPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::C2d => "c2d",
            Self::NonLocal => "non-local",
            Self::CfAan => "cf-aan",
        })
    }
}

impl FromStr for ModelPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown model preset {s:?} (expected c2d, non-local or cf-aan)"
                ))
            })
    }
}

/// Full-model reports: backbone layers followed by any attention modules,
/// each relative to the plain backbone.
pub fn model_table(
    presets: &[ModelPreset],
    spec: &BackboneSpec,
    convention: &CountingConvention,
) -> Result<Vec<FlopReport>> {
    let base = backbone_flops(spec, convention)?;
    let points = insertion_points(spec)?;
    presets
        .iter()
        .map(|&p| {
            let mut layers: Vec<LayerCount> = base.layers.clone();
            if let Some(v) = p.attention() {
                layers.extend(attention_flops(v, &points, convention)?.layers);
            }
            Ok(
                FlopReport::new(p.to_string(), *convention, layers)
                    .with_baseline("c2d", base.total),
            )
        })
        .collect()
}

/// Model values of [`REFERENCE_TABLE2`] under one convention.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationEntry {
    pub convention: CountingConvention,
    pub gflops: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub within: usize,
    pub max_abs_error: f64,
}

/// Every convention ranked by how many reference values it meets, then by
/// its largest relative error.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationReport {
    pub fn best(&self) -> &CalibrationEntry {
        &self.entries[0]
    }

    pub fn all_within(&self) -> bool {
        self.best().within == REFERENCE_TABLE2.len()
    }
}

pub fn calibrate(spec: &BackboneSpec) -> Result<CalibrationReport> {
    let mut entries = Vec::new();
    for convention in CountingConvention::all() {
        let rows = table2(spec, &convention)?;
        let gflops: Vec<f64> = rows.iter().map(|r| r.report.gflops()).collect();
        let rel_errors: Vec<f64> = REFERENCE_TABLE2
            .iter()
            .zip(&gflops)
            .map(|(r, &g)| r.rel_error(g))
            .collect();
        let within = REFERENCE_TABLE2
            .iter()
            .zip(&gflops)
            .filter(|(r, &g)| r.within(g))
            .count();
        let max_abs_error = rel_errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        entries.push(CalibrationEntry {
            convention,
            gflops,
            rel_errors,
            within,
            max_abs_error,
        });
    }
    entries.sort_by(|a, b| {
        b.within
            .cmp(&a.within)
            .then(a.max_abs_error.total_cmp(&b.max_abs_error))
    });
    Ok(CalibrationReport { entries })
}

/// Added cost of `cfaa:4`, `cfaa:2`, `axial-relative` and `nonlocal3d`, in
/// that order, and whether it is strictly increasing.
pub fn check_ordering(
    spec: &BackboneSpec,
    convention: &CountingConvention,
) -> Result<([u64; 4], bool)> {
    let points = insertion_points(spec)?;
    let mut totals = [0u64; 4];
    for (slot, v) in totals.iter_mut().zip([
        AttentionVariant::Cfaa { scales: 4 },
        AttentionVariant::Cfaa { scales: 2 },
        AttentionVariant::AxialRelative,
        AttentionVariant::NonLocal3d,
    ]) {
        *slot = attention_flops(v, &points, convention)?.total;
    }
    let ordered = totals.windows(2).all(|w| w[0] < w[1]);
    Ok((totals, ordered))
}
