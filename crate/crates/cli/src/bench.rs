use axreid::flops::{
    attention_flops, backbone_flops, calibrate, check_ordering, insertion_points, model_table,
    table2, AttentionVariant, BackboneSpec, CountingConvention, ModelPreset, REFERENCE_TABLE2,
    REFERENCE_TABLE4,
};
use clap::{Args, ValueEnum};

use crate::report::{fmt_g, fmt_pct, Report};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Backbone plus the cost each attention variant adds.
    Table2,
    /// Whole-model totals of the three architectures.
    Table4,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Reference table to reproduce.
    #[arg(long, value_enum, conflicts_with = "variant")]
    preset: Option<Preset>,
    /// Single attention variant: nonlocal3d, axial, axial-sinusoidal,
    /// axial-relative, cfaa or cfaa:<S>.
    #[arg(long)]
    variant: Option<String>,
    /// Scale count for `--variant cfaa`.
    #[arg(long, requires = "variant")]
    scales: Option<usize>,
    /// Frames per tracklet.
    #[arg(long, default_value_t = 6)]
    frames: usize,
    /// Input height in pixels.
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// Input width in pixels.
    #[arg(long, default_value_t = 128)]
    width: usize,
    /// Stride of the last backbone stage (1 or 2).
    #[arg(long, default_value_t = 1)]
    last_stride: usize,
    /// Counting convention, e.g. `mac=2,softmax,projections`.
    #[arg(long, default_value = "default")]
    convention: String,
    /// Sweep every convention against the reference figures.
    #[arg(long, conflicts_with_all = ["variant", "preset"])]
    calibrate: bool,
}

fn spec(a: &BenchArgs) -> CliResult<BackboneSpec> {
    let s = BackboneSpec {
        frames: a.frames,
        height: a.height,
        width: a.width,
        last_stride: a.last_stride,
        ..BackboneSpec::default()
    };
    s.validate()?;
    Ok(s)
}

pub fn run(a: &BenchArgs) -> CliResult<String> {
    let conv: CountingConvention = a.convention.parse()?;
    conv.validate()?;
    let spec = spec(a)?;
    if a.calibrate {
        return calibration(&spec);
    }
    if let Some(v) = &a.variant {
        let mut variant: AttentionVariant = v.parse()?;
        if let Some(s) = a.scales {
            match variant {
                AttentionVariant::Cfaa { .. } if s >= 1 => {
                    variant = AttentionVariant::Cfaa { scales: s }
                }
                AttentionVariant::Cfaa { .. } => {
                    return Err(CliError::Validation("--scales must be at least 1".into()))
                }
                _ => {
                    return Err(CliError::Validation(
                        "--scales only applies to --variant cfaa".into(),
                    ))
                }
            }
        }
        return single(variant, &spec, &conv);
    }
    match a.preset.unwrap_or(Preset::Table2) {
        Preset::Table2 => preset_table2(&spec, &conv),
        Preset::Table4 => preset_table4(&spec, &conv),
    }
}

fn single(
    variant: AttentionVariant,
    spec: &BackboneSpec,
    conv: &CountingConvention,
) -> CliResult<String> {
    let base = backbone_flops(spec, conv)?;
    let attn = attention_flops(variant, &insertion_points(spec)?, conv)?;
    let mut r = Report::new(&["layer", "count", "GFLOPs"]);
    r.row(vec![
        "backbone".into(),
        base.total.to_string(),
        fmt_g(base.gflops()),
    ]);
    for l in &attn.layers {
        r.row(vec![
            l.name.clone(),
            l.count.to_string(),
            fmt_g(l.count as f64 / 1e9),
        ]);
    }
    let total = base.total + attn.total;
    r.row(vec![
        "total".into(),
        total.to_string(),
        fmt_g(total as f64 / 1e9),
    ]);
    r.kv("variant", variant);
    r.kv("convention", conv);
    r.kv("frames", spec.frames);
    r.kv("backbone", base.total);
    r.kv("attention", attn.total);
    r.kv("total", total);
    Ok(r.to_string())
}

fn preset_table2(spec: &BackboneSpec, conv: &CountingConvention) -> CliResult<String> {
    let rows = table2(spec, conv)?;
    let mut r = Report::new(&["row", "GFLOPs", "reference", "rel.err", "within"]);
    let mut within = 0;
    for (row, reference) in rows.iter().zip(REFERENCE_TABLE2) {
        let g = row.report.gflops();
        let ok = reference.within(g);
        within += ok as usize;
        let shown = if row.variant.is_some() {
            format!("+{}", fmt_g(g))
        } else {
            fmt_g(g)
        };
        r.row(vec![
            row.name.clone(),
            shown,
            format!("{:.3}", reference.gflops),
            fmt_pct(reference.rel_error(g)),
            if ok { "yes" } else { "no" }.into(),
        ]);
        r.kv(format!("gflops.{}", row.name), fmt_g(g));
    }
    let (totals, ordered) = check_ordering(spec, conv)?;
    r.note(format!(
        "ordering cfaa:4 < cfaa:2 < axial-relative < nonlocal3d: {} ({totals:?})",
        if ordered { "holds" } else { "VIOLATED" }
    ));
    r.kv("convention", conv);
    r.kv("within", format!("{within}/{}", REFERENCE_TABLE2.len()));
    r.kv("ordering", if ordered { "ok" } else { "violated" });
    Ok(r.to_string())
}

fn preset_table4(spec: &BackboneSpec, conv: &CountingConvention) -> CliResult<String> {
    let reports = model_table(&ModelPreset::ALL, spec, conv)?;
    let mut r = Report::new(&["model", "GFLOPs", "delta", "reference", "rel.err", "within"]);
    for (rep, reference) in reports.iter().zip(REFERENCE_TABLE4) {
        let g = rep.gflops();
        r.row(vec![
            rep.title.clone(),
            fmt_g(g),
            format!("{:+.4}", rep.delta() as f64 / 1e9),
            format!("{:.3}", reference.gflops),
            fmt_pct(reference.rel_error(g)),
            if reference.within(g) { "yes" } else { "no" }.into(),
        ]);
        r.kv(format!("gflops.{}", rep.title), fmt_g(g));
    }
    r.kv("convention", conv);
    Ok(r.to_string())
}

fn calibration(spec: &BackboneSpec) -> CliResult<String> {
    let report = calibrate(spec)?;
    let mut header = vec!["convention", "within", "max|err|"];
    header.extend(REFERENCE_TABLE2.iter().map(|r| r.name));
    let mut r = Report::new(&header);
    for e in &report.entries {
        let mut cells = vec![
            e.convention.to_string(),
            format!("{}/{}", e.within, REFERENCE_TABLE2.len()),
            fmt_pct(e.max_abs_error),
        ];
        cells.extend(e.rel_errors.iter().map(|&x| fmt_pct(x)));
        r.row(cells);
    }
    let best = report.best();
    let (_, ordered) = check_ordering(spec, &best.convention)?;
    r.kv("best", best.convention);
    r.kv(
        "best.within",
        format!("{}/{}", best.within, REFERENCE_TABLE2.len()),
    );
    r.kv("best.max_rel_error", format!("{:.4}", best.max_abs_error));
    for (reference, err) in REFERENCE_TABLE2.iter().zip(&best.rel_errors) {
        r.kv(format!("best.err.{}", reference.name), format!("{err:+.4}"));
    }
    r.kv("all_within", report.all_within());
    r.kv("ordering", if ordered { "ok" } else { "violated" });
    Ok(r.to_string())
}
