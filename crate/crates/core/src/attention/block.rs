use super::kernel::{attend_backward, attend_forward, AttendCache, Dims, Lines, Positional};
use super::{
    sinusoidal_encode, AttentionConfig, AttentionLayer, AttentionParams, AxialStack, Axis,
    CfaaParams, Encoding, Extents, GradientBundle, OpCounts, RelativeTables,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
enum Route {
    All,
    Along(Axis),
}

struct Stage<'a> {
    route: Route,
    layer: &'a AttentionLayer,
}

struct ScalePlan<'a> {
    in_start: usize,
    in_len: usize,
    out_len: usize,
    factor: usize,
    extents: Extents,
    stages: Vec<Stage<'a>>,
}

struct Plan<'a> {
    config: AttentionConfig,
    scales: Vec<ScalePlan<'a>>,
    w_o: &'a Tensor,
}

struct LayerCache {
    input: Tensor,
    attend: AttendCache,
    lines: Lines,
    sin_table: Option<Tensor>,
}

/// Intermediate values kept by [`cfaa_forward_cached`] for the backward pass.
pub struct CfaaCache {
    input: Tensor,
    concat: Tensor,
    layers: Vec<Vec<LayerCache>>,
}

fn expect_shape(op: &'static str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(op, t.shape(), shape));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn check_layer(
    layer: &AttentionLayer,
    c_in: usize,
    cq: usize,
    cv: usize,
    heads: usize,
    route: Route,
    encoding: Encoding,
    extents: Extents,
) -> Result<()> {
    expect_shape("w_q", &layer.w_q, &[cq, c_in])?;
    expect_shape("w_k", &layer.w_k, &[cq, c_in])?;
    expect_shape("w_v", &layer.w_v, &[cv, c_in])?;
    match (encoding, route, &layer.relative) {
        (Encoding::Relative, Route::Along(axis), Some(r)) => {
            let rows = 2 * axis.length(extents) - 1;
            let (dq, dv) = (cq / heads, cv / heads);
            if r.r_q.shape() != [rows, dq]
                || r.r_k.shape() != [rows, dq]
                || r.r_v.shape() != [rows, dv]
            {
                return Err(Error::config(format!(
                    "relative tables for axis {axis:?} must have {rows} rows of widths {dq}/{dv}, got {:?} {:?} {:?}",
                    r.r_q.shape(),
                    r.r_k.shape(),
                    r.r_v.shape()
                )));
            }
        }
        (Encoding::Relative, _, None) => {
            return Err(Error::config("relative encoding requires relative tables"))
        }
        (Encoding::Relative, Route::All, Some(_)) => {
            return Err(Error::config(
                "relative tables are only defined along an axis",
            ))
        }
        (_, _, Some(_)) => {
            return Err(Error::config(format!(
                "relative tables supplied but encoding is {encoding}"
            )))
        }
        _ => {}
    }
    Ok(())
}

impl<'a> Plan<'a> {
    fn single(config: &AttentionConfig, params: &'a AttentionParams, route: Route) -> Result<Self> {
        config.validate()?;
        if config.scales != 1 {
            return Err(Error::config("single-layer attention needs scales = 1"));
        }
        check_layer(
            &params.layer,
            config.c_in,
            config.c_qk,
            config.c_out,
            config.heads,
            route,
            config.encoding,
            config.extents,
        )?;
        expect_shape("w_o", &params.w_o, &[config.c_in, config.c_out])?;
        Ok(Self {
            config: *config,
            scales: vec![ScalePlan {
                in_start: 0,
                in_len: config.c_in,
                out_len: config.c_out,
                factor: 1,
                extents: config.extents,
                stages: vec![Stage {
                    route,
                    layer: &params.layer,
                }],
            }],
            w_o: &params.w_o,
        })
    }

    fn cfaa(config: &AttentionConfig, params: &'a CfaaParams) -> Result<Self> {
        config.validate()?;
        if params.scales.len() != config.scales {
            return Err(Error::config(format!(
                "config has {} scales, parameters have {}",
                config.scales,
                params.scales.len()
            )));
        }
        let s_count = config.scales;
        let (cin, cq, cv) = (
            config.c_in / s_count,
            config.c_qk / s_count,
            config.c_out / s_count,
        );
        let mut scales = Vec::with_capacity(s_count);
        for (s, stack) in params.scales.iter().enumerate() {
            let extents = config.scale_extents(s);
            let mut stages = Vec::with_capacity(3);
            for (i, axis) in AxialStack::ORDER.into_iter().enumerate() {
                let layer = stack.layer(axis);
                let layer_in = if i == 0 { cin } else { cv };
                check_layer(
                    layer,
                    layer_in,
                    cq,
                    cv,
                    config.heads,
                    Route::Along(axis),
                    config.encoding,
                    extents,
                )?;
                stages.push(Stage {
                    route: Route::Along(axis),
                    layer,
                });
            }
            scales.push(ScalePlan {
                in_start: s * cin,
                in_len: cin,
                out_len: cv,
                factor: AttentionConfig::scale_factor(s),
                extents,
                stages,
            });
        }
        expect_shape("w_o", &params.w_o, &[config.c_in, config.c_out])?;
        Ok(Self {
            config: *config,
            scales,
            w_o: &params.w_o,
        })
    }
}

fn counted_matmul(a: &Tensor, b: &Tensor, counts: &mut OpCounts) -> Result<Tensor> {
    let out = a.matmul(b)?;
    counts.projection_macs += (a.shape()[0] * a.shape()[1] * b.shape()[1]) as u64;
    Ok(out)
}

/// `[C, N]` channel-major into a position-major flat buffer.
fn to_position_major(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.transpose2()?.into_vec())
}

fn from_position_major(data: Vec<f64>, n: usize, c: usize) -> Result<Tensor> {
    Tensor::from_parts(vec![n, c], data).transpose2()
}

fn positional<'t>(
    encoding: Encoding,
    layer: &'t AttentionLayer,
    sin_table: Option<&'t Tensor>,
) -> Positional<'t> {
    match (encoding, &layer.relative, sin_table) {
        (Encoding::Relative, Some(RelativeTables { r_q, r_k, r_v }), _) => Positional::Relative {
            r_q: r_q.data(),
            r_k: r_k.data(),
            r_v: r_v.data(),
        },
        (Encoding::Sinusoidal, _, Some(t)) => Positional::Sinusoidal(t.data()),
        _ => Positional::None,
    }
}

fn layer_forward(
    x: &Tensor,
    stage: &Stage<'_>,
    config: &AttentionConfig,
    extents: Extents,
    counts: &mut OpCounts,
) -> Result<(Tensor, LayerCache)> {
    let layer = stage.layer;
    let n = extents.positions();
    let c_in = layer.c_in();
    let cq = layer.w_q.shape()[0];
    let cv = layer.w_v.shape()[0];
    let x2 = x.reshape(&[c_in, n])?;
    let q = to_position_major(&counted_matmul(&layer.w_q, &x2, counts)?)?;
    let k = to_position_major(&counted_matmul(&layer.w_k, &x2, counts)?)?;
    let v = to_position_major(&counted_matmul(&layer.w_v, &x2, counts)?)?;

    let lines = match stage.route {
        Route::All => Lines::all(extents),
        Route::Along(axis) => Lines::along(axis, extents),
    };
    let sin_table = match (config.encoding, stage.route) {
        (Encoding::Sinusoidal, Route::Along(_)) => {
            Some(sinusoidal_encode(lines.len, cq / config.heads)?)
        }
        (Encoding::Sinusoidal, Route::All) => {
            return Err(Error::config(
                "sinusoidal encoding is only defined along an axis",
            ))
        }
        _ => None,
    };
    let dims = Dims {
        n,
        cq,
        cv,
        heads: config.heads,
    };
    let pos = positional(config.encoding, layer, sin_table.as_ref());
    let (y, attend) = attend_forward(q, k, v, dims, &lines, pos, counts);
    let y = from_position_major(y, n, cv)?.reshape(&[cv, extents.t, extents.h, extents.w])?;
    Ok((
        y,
        LayerCache {
            input: x2,
            attend,
            lines,
            sin_table,
        },
    ))
}

fn layer_backward(
    cache: &LayerCache,
    stage: &Stage<'_>,
    config: &AttentionConfig,
    extents: Extents,
    gy: &Tensor,
) -> Result<(Tensor, AttentionLayer)> {
    let layer = stage.layer;
    let n = extents.positions();
    let c_in = layer.c_in();
    let cq = layer.w_q.shape()[0];
    let cv = layer.w_v.shape()[0];
    let gy_pm = to_position_major(&gy.reshape(&[cv, n])?)?;
    let dims = Dims {
        n,
        cq,
        cv,
        heads: config.heads,
    };
    let pos = positional(config.encoding, layer, cache.sin_table.as_ref());
    let g = attend_backward(&cache.attend, &gy_pm, dims, &cache.lines, pos);

    let gq = from_position_major(g.q, n, cq)?;
    let gk = from_position_major(g.k, n, cq)?;
    let gv = from_position_major(g.v, n, cv)?;
    let xt = cache.input.transpose2()?;
    let grads = AttentionLayer {
        w_q: gq.matmul(&xt)?,
        w_k: gk.matmul(&xt)?,
        w_v: gv.matmul(&xt)?,
        relative: match &layer.relative {
            Some(r) if config.encoding == Encoding::Relative => Some(RelativeTables {
                r_q: Tensor::from_parts(r.r_q.shape().to_vec(), g.r_q),
                r_k: Tensor::from_parts(r.r_k.shape().to_vec(), g.r_k),
                r_v: Tensor::from_parts(r.r_v.shape().to_vec(), g.r_v),
            }),
            Some(r) => Some(RelativeTables {
                r_q: Tensor::zeros(r.r_q.shape()),
                r_k: Tensor::zeros(r.r_k.shape()),
                r_v: Tensor::zeros(r.r_v.shape()),
            }),
            None => None,
        },
    };
    let mut gx = layer.w_q.transpose2()?.matmul(&gq)?;
    gx.add_assign(&layer.w_k.transpose2()?.matmul(&gk)?)?;
    gx.add_assign(&layer.w_v.transpose2()?.matmul(&gv)?)?;
    let gx = gx.reshape(&[c_in, extents.t, extents.h, extents.w])?;
    Ok((gx, grads))
}

fn block_forward(
    x: &Tensor,
    plan: &Plan<'_>,
    counts: &mut OpCounts,
) -> Result<(Tensor, CfaaCache)> {
    let config = &plan.config;
    expect_shape("attention input", x, &config.input_shape())?;
    let Extents { h, w, .. } = config.extents;
    let n = config.extents.positions();

    let mut outs = Vec::with_capacity(plan.scales.len());
    let mut caches = Vec::with_capacity(plan.scales.len());
    for scale in &plan.scales {
        let xs = x.narrow0(scale.in_start, scale.in_len)?;
        let mut hcur = xs.avg_pool_2d(scale.factor)?;
        let mut layer_caches = Vec::with_capacity(scale.stages.len());
        for stage in &scale.stages {
            let (y, c) = layer_forward(&hcur, stage, config, scale.extents, counts)?;
            hcur = y;
            layer_caches.push(c);
        }
        outs.push(hcur.upsample_nearest_2d(scale.factor, (h, w))?);
        caches.push(layer_caches);
    }
    let concat = Tensor::concat0(&outs)?;
    let proj = counted_matmul(plan.w_o, &concat.reshape(&[config.c_out, n])?, counts)?;
    let out = x.add(&proj.reshape(x.shape())?)?;
    Ok((
        out,
        CfaaCache {
            input: x.clone(),
            concat,
            layers: caches,
        },
    ))
}

/// Returns the input gradient, per-stage layer gradients and the `w_o` gradient.
fn block_backward(
    plan: &Plan<'_>,
    cache: &CfaaCache,
    upstream: &Tensor,
) -> Result<(Tensor, Vec<Vec<AttentionLayer>>, Tensor)> {
    let config = &plan.config;
    expect_shape("upstream gradient", upstream, &config.input_shape())?;
    let Extents { t, h, w } = config.extents;
    let n = config.extents.positions();

    let g2 = upstream.reshape(&[config.c_in, n])?;
    let z2 = cache.concat.reshape(&[config.c_out, n])?;
    let g_wo = g2.matmul(&z2.transpose2()?)?;
    let gz = plan.w_o.transpose2()?.matmul(&g2)?;

    let mut gx = upstream.clone();
    let mut layer_grads = Vec::with_capacity(plan.scales.len());
    let mut out_start = 0;
    for (scale, caches) in plan.scales.iter().zip(&cache.layers) {
        let gzs = gz
            .narrow0(out_start, scale.out_len)?
            .reshape(&[scale.out_len, t, h, w])?;
        out_start += scale.out_len;
        let mut gh =
            gzs.upsample_nearest_2d_backward(scale.factor, (scale.extents.h, scale.extents.w))?;
        let mut grads = Vec::with_capacity(scale.stages.len());
        for (stage, lc) in scale.stages.iter().zip(caches).rev() {
            let (g_in, lg) = layer_backward(lc, stage, config, scale.extents, &gh)?;
            gh = g_in;
            grads.push(lg);
        }
        grads.reverse();
        let gxs = gh.avg_pool_2d_backward(scale.factor, (h, w))?;
        let inner = t * h * w;
        let dst =
            &mut gx.data_mut()[scale.in_start * inner..(scale.in_start + scale.in_len) * inner];
        for (d, s) in dst.iter_mut().zip(gxs.data()) {
            *d += s;
        }
        layer_grads.push(grads);
    }
    Ok((gx, layer_grads, g_wo))
}

fn single_grads(
    plan: &Plan<'_>,
    cache: &CfaaCache,
    upstream: &Tensor,
) -> Result<GradientBundle<AttentionParams>> {
    let (input, mut layers, w_o) = block_backward(plan, cache, upstream)?;
    let layer = layers.pop().and_then(|mut s| s.pop()).expect("one stage");
    Ok(GradientBundle {
        input,
        params: AttentionParams { layer, w_o },
    })
}

/// Three-dimensional non-local attention over all `T·H·W` positions,
/// followed by the output projection and the residual add.
pub fn nonlocal_3d_forward(
    x: &Tensor,
    params: &AttentionParams,
    config: &AttentionConfig,
) -> Result<Tensor> {
    nonlocal_3d_forward_counted(x, params, config, &mut OpCounts::default())
}

pub fn nonlocal_3d_forward_counted(
    x: &Tensor,
    params: &AttentionParams,
    config: &AttentionConfig,
    counts: &mut OpCounts,
) -> Result<Tensor> {
    let plan = nonlocal_plan(config, params)?;
    Ok(block_forward(x, &plan, counts)?.0)
}

fn nonlocal_plan<'a>(config: &AttentionConfig, params: &'a AttentionParams) -> Result<Plan<'a>> {
    if config.encoding != Encoding::None {
        return Err(Error::config(
            "non-local attention takes no positional encoding",
        ));
    }
    if config.heads != 1 {
        return Err(Error::config("non-local attention uses a single head"));
    }
    Plan::single(config, params, Route::All)
}

pub fn nonlocal_3d_backward(
    x: &Tensor,
    params: &AttentionParams,
    config: &AttentionConfig,
    upstream: &Tensor,
) -> Result<GradientBundle<AttentionParams>> {
    let plan = nonlocal_plan(config, params)?;
    let (_, cache) = block_forward(x, &plan, &mut OpCounts::default())?;
    single_grads(&plan, &cache, upstream)
}

fn axial_plan<'a>(
    config: &AttentionConfig,
    params: &'a AttentionParams,
    axis: Axis,
    relative: bool,
) -> Result<Plan<'a>> {
    match (relative, config.encoding) {
        (false, Encoding::None | Encoding::Sinusoidal) | (true, Encoding::Relative) => {}
        (false, e) => {
            return Err(Error::config(format!(
                "axial attention takes none or sinusoidal encoding, got {e}"
            )))
        }
        (true, e) => {
            return Err(Error::config(format!(
                "position-sensitive axial attention needs relative encoding, got {e}"
            )))
        }
    }
    Plan::single(config, params, Route::Along(axis))
}

/// Attention along one axis; every other coordinate indexes an independent
/// line.
pub fn axial_forward(
    x: &Tensor,
    params: &AttentionParams,
    config: &AttentionConfig,
    axis: Axis,
) -> Result<Tensor> {
    let plan = axial_plan(config, params, axis, false)?;
    Ok(block_forward(x, &plan, &mut OpCounts::default())?.0)
}

pub fn axial_backward(
    x: &Tensor,
    params: &AttentionParams,
    config: &AttentionConfig,
    axis: Axis,
    upstream: &Tensor,
) -> Result<GradientBundle<AttentionParams>> {
    let plan = axial_plan(config, params, axis, false)?;
    let (_, cache) = block_forward(x, &plan, &mut OpCounts::default())?;
    single_grads(&plan, &cache, upstream)
}

/// Axial attention with learned relative embeddings: logits
/// `q_o·k_p + q_o·r_q[p-o] + k_p·r_k[p-o]`, values `v_p + r_v[p-o]`.
pub fn axial_ps_forward(
    x: &Tensor,
    params: &AttentionParams,
    config: &AttentionConfig,
    axis: Axis,
) -> Result<Tensor> {
    let plan = axial_plan(config, params, axis, true)?;
    Ok(block_forward(x, &plan, &mut OpCounts::default())?.0)
}

pub fn axial_ps_backward(
    x: &Tensor,
    params: &AttentionParams,
    config: &AttentionConfig,
    axis: Axis,
    upstream: &Tensor,
) -> Result<GradientBundle<AttentionParams>> {
    let plan = axial_plan(config, params, axis, true)?;
    let (_, cache) = block_forward(x, &plan, &mut OpCounts::default())?;
    single_grads(&plan, &cache, upstream)
}

/// Either axial variant, chosen by `config.encoding`, with operation counts.
pub fn axial_forward_counted(
    x: &Tensor,
    params: &AttentionParams,
    config: &AttentionConfig,
    axis: Axis,
    counts: &mut OpCounts,
) -> Result<Tensor> {
    let relative = config.encoding == Encoding::Relative;
    let plan = axial_plan(config, params, axis, relative)?;
    Ok(block_forward(x, &plan, counts)?.0)
}

/// Coarse-to-fine axial attention. With one scale this is the plain
/// height→width→time axial composition with a residual projection.
pub fn cfaa_forward(x: &Tensor, params: &CfaaParams, config: &AttentionConfig) -> Result<Tensor> {
    cfaa_forward_counted(x, params, config, &mut OpCounts::default())
}

pub fn cfaa_forward_counted(
    x: &Tensor,
    params: &CfaaParams,
    config: &AttentionConfig,
    counts: &mut OpCounts,
) -> Result<Tensor> {
    let plan = Plan::cfaa(config, params)?;
    Ok(block_forward(x, &plan, counts)?.0)
}

/// Forward pass that also returns what [`cfaa_backward_cached`] needs.
pub fn cfaa_forward_cached(
    x: &Tensor,
    params: &CfaaParams,
    config: &AttentionConfig,
) -> Result<(Tensor, CfaaCache)> {
    let plan = Plan::cfaa(config, params)?;
    block_forward(x, &plan, &mut OpCounts::default())
}

pub fn cfaa_backward_cached(
    cache: &CfaaCache,
    params: &CfaaParams,
    config: &AttentionConfig,
    upstream: &Tensor,
) -> Result<GradientBundle<CfaaParams>> {
    let plan = Plan::cfaa(config, params)?;
    expect_shape("cached input", &cache.input, &config.input_shape())?;
    let (input, layers, w_o) = block_backward(&plan, cache, upstream)?;
    let scales = layers
        .into_iter()
        .map(|mut v| {
            let t = v.pop().expect("t layer");
            let w = v.pop().expect("w layer");
            let h = v.pop().expect("h layer");
            AxialStack { h, w, t }
        })
        .collect();
    Ok(GradientBundle {
        input,
        params: CfaaParams { scales, w_o },
    })
}

pub fn cfaa_backward(
    x: &Tensor,
    params: &CfaaParams,
    config: &AttentionConfig,
    upstream: &Tensor,
) -> Result<GradientBundle<CfaaParams>> {
    let (_, cache) = cfaa_forward_cached(x, params, config)?;
    cfaa_backward_cached(&cache, params, config, upstream)
}
