//! Central finite-difference verification of analytic gradients.
//!
//! Every scalar of the input and of every parameter is perturbed by `±step`
//! and the numeric slope is compared with the analytic one using
//! `|a - n| / max(|a|, |n|, floor)`.

use std::fmt;

use crate::attention::{
    axial_backward, axial_forward, axial_ps_backward, axial_ps_forward, cfaa_backward,
    cfaa_forward, nonlocal_3d_backward, nonlocal_3d_forward, AttentionConfig, AttentionParams,
    Axis, CfaaParams, Encoding, Extents, GradientBundle,
};
use crate::error::{Error, Result};
use crate::losses::{batch_hard_triplet, cross_entropy, BatchLabels, DEFAULT_MARGIN};
use crate::params::Parameters;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error. Central differences at
/// `step = 1e-5` carry absolute noise near `1e-11`, so slopes smaller than
/// this are compared on an absolute scale instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// The scalar with the largest relative error in one comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Worst {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub checked: usize,
    pub worst: Worst,
}

/// Compares `analytic` (laid out like `state`) against central differences of
/// `loss` around `state`.
pub fn compare<S, F>(state: &S, analytic: &S, loss: F, step: f64) -> Result<Comparison>
where
    S: Parameters + Clone,
    F: Fn(&S) -> Result<f64>,
{
    let grads = analytic.named();
    let layout: Vec<(String, usize)> = state
        .named()
        .iter()
        .map(|(n, t)| (n.clone(), t.len()))
        .collect();
    if grads.len() != layout.len() {
        return Err(Error::invalid(
            "gradient layout differs from parameter layout",
        ));
    }
    let mut work = state.clone();
    let mut worst = None::<Worst>;
    let mut checked = 0;
    for (ti, (name, len)) in layout.iter().enumerate() {
        if grads[ti].1.len() != *len {
            return Err(Error::shape("compare", grads[ti].1.shape(), &[*len]));
        }
        for idx in 0..*len {
            let orig = work.named()[ti].1.data()[idx];
            set(&mut work, ti, idx, orig + step);
            let plus = loss(&work)?;
            set(&mut work, ti, idx, orig - step);
            let minus = loss(&work)?;
            set(&mut work, ti, idx, orig);
            let numeric = (plus - minus) / (2.0 * step);
            let a = grads[ti].1.data()[idx];
            let rel_error = relative_error(a, numeric);
            checked += 1;
            if worst.as_ref().map_or(true, |w| rel_error > w.rel_error) {
                worst = Some(Worst {
                    name: name.clone(),
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_error,
                });
            }
        }
    }
    let worst = worst.ok_or_else(|| Error::invalid("nothing to check"))?;
    Ok(Comparison { checked, worst })
}

fn set<S: Parameters>(s: &mut S, tensor: usize, idx: usize, value: f64) {
    s.named_mut()[tensor].1.data_mut()[idx] = value;
}

/// Scales the largest-magnitude analytic entry by 1.01. Used to confirm the
/// checker catches a wrong gradient.
pub fn inject_fault<S: Parameters>(analytic: &mut S) {
    let mut best = (0, 0, 0.0f64);
    for (ti, (_, t)) in analytic.named().iter().enumerate() {
        for (i, v) in t.data().iter().enumerate() {
            if v.abs() > best.2 {
                best = (ti, i, v.abs());
            }
        }
    }
    let (ti, i, _) = best;
    let mut slots = analytic.named_mut();
    let v = &mut slots[ti].1.data_mut()[i];
    *v = if *v == 0.0 { 1e-3 } else { *v * 1.01 };
}

/// Operators covered by [`run_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Nonlocal3d,
    Axial,
    AxialPs,
    Cfaa,
    Triplet,
    CrossEntropy,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Nonlocal3d,
        Suite::Axial,
        Suite::AxialPs,
        Suite::Cfaa,
        Suite::Triplet,
        Suite::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Nonlocal3d => "nonlocal3d",
            Suite::Axial => "axial",
            Suite::AxialPs => "axial_ps",
            Suite::Cfaa => "cfaa",
            Suite::Triplet => "triplet",
            Suite::CrossEntropy => "cross_entropy",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown gradcheck suite {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub configs: usize,
    pub step: f64,
    pub tolerance: f64,
    pub perturb_analytic: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            configs: 5,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            perturb_analytic: false,
        }
    }
}

/// Outcome for one seeded configuration of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub suite: Suite,
    pub case: usize,
    pub description: String,
    pub comparison: Comparison,
    pub passed: bool,
}

fn finish<S: Parameters + Clone>(
    suite: Suite,
    case: usize,
    description: String,
    state: &S,
    mut analytic: S,
    loss: impl Fn(&S) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<CaseReport> {
    if opts.perturb_analytic {
        inject_fault(&mut analytic);
    }
    let comparison = compare(state, &analytic, loss, opts.step)?;
    let passed = comparison.worst.rel_error < opts.tolerance;
    Ok(CaseReport {
        suite,
        case,
        description,
        comparison,
        passed,
    })
}

fn pick<T: Copy>(rng: &mut SeededRng, items: &[T]) -> T {
    items[rng.below(items.len())]
}

fn describe(c: &AttentionConfig) -> String {
    format!(
        "c_in={} c_qk={} c_out={} heads={} scales={} enc={} T={} H={} W={}",
        c.c_in,
        c.c_qk,
        c.c_out,
        c.heads,
        c.scales,
        c.encoding,
        c.extents.t,
        c.extents.h,
        c.extents.w
    )
}

/// Random small config. `case == 0` is the fixed `2×3×4×2` input.
fn attention_config(
    rng: &mut SeededRng,
    case: usize,
    scales: usize,
    heads: usize,
    encoding: Encoding,
) -> AttentionConfig {
    let min = 1 << (scales - 1);
    let extents = if case == 0 {
        Extents::new(3, 4.max(min), 2.max(min))
    } else {
        Extents::new(
            1 + rng.below(3),
            min.max(1) + rng.below(3),
            min.max(1) + rng.below(3),
        )
    };
    let qk_unit = if encoding == Encoding::Sinusoidal {
        2
    } else {
        1
    };
    let groups = scales * heads;
    AttentionConfig {
        c_in: scales * if case == 0 { 2 } else { 1 + rng.below(3) },
        c_qk: groups * qk_unit * (1 + rng.below(2)),
        c_out: groups * (1 + rng.below(2)),
        heads,
        scales,
        encoding,
        extents,
    }
}

fn block_loss(out: Tensor, upstream: &Tensor) -> Result<f64> {
    out.dot(upstream)
}

fn single_case(
    suite: Suite,
    case: usize,
    rng: &mut SeededRng,
    opts: &GradCheckOptions,
) -> Result<CaseReport> {
    let heads = if suite == Suite::Nonlocal3d {
        1
    } else {
        pick(rng, &[1, 2])
    };
    let encoding = match suite {
        Suite::Nonlocal3d => Encoding::None,
        Suite::Axial => pick(rng, &[Encoding::None, Encoding::Sinusoidal]),
        _ => Encoding::Relative,
    };
    let config = attention_config(rng, case, 1, heads, encoding);
    let axis = pick(rng, &[Axis::T, Axis::H, Axis::W]);
    let params = AttentionParams::init(&config, (suite != Suite::Nonlocal3d).then_some(axis), rng)?;
    let x = rng.uniform_tensor(&config.input_shape(), 2.0);
    let upstream = rng.uniform_tensor(&config.input_shape(), 1.0);
    let forward = |s: &GradientBundle<AttentionParams>| -> Result<Tensor> {
        match suite {
            Suite::Nonlocal3d => nonlocal_3d_forward(&s.input, &s.params, &config),
            Suite::Axial => axial_forward(&s.input, &s.params, &config, axis),
            _ => axial_ps_forward(&s.input, &s.params, &config, axis),
        }
    };
    let analytic = match suite {
        Suite::Nonlocal3d => nonlocal_3d_backward(&x, &params, &config, &upstream)?,
        Suite::Axial => axial_backward(&x, &params, &config, axis, &upstream)?,
        _ => axial_ps_backward(&x, &params, &config, axis, &upstream)?,
    };
    let state = GradientBundle { input: x, params };
    let mut description = describe(&config);
    if suite != Suite::Nonlocal3d {
        description.push_str(&format!(" axis={axis:?}"));
    }
    finish(
        suite,
        case,
        description,
        &state,
        analytic,
        |s| block_loss(forward(s)?, &upstream),
        opts,
    )
}

fn cfaa_case(case: usize, rng: &mut SeededRng, opts: &GradCheckOptions) -> Result<CaseReport> {
    let scales = if case % 2 == 0 { 2 } else { pick(rng, &[1, 2]) };
    let heads = pick(rng, &[1, 2]);
    let encoding = if case < 3 {
        Encoding::Relative
    } else {
        pick(
            rng,
            &[Encoding::None, Encoding::Sinusoidal, Encoding::Relative],
        )
    };
    let config = attention_config(rng, case, scales, heads, encoding);
    let params = CfaaParams::init(&config, rng)?;
    let x = rng.uniform_tensor(&config.input_shape(), 2.0);
    let upstream = rng.uniform_tensor(&config.input_shape(), 1.0);
    let analytic = cfaa_backward(&x, &params, &config, &upstream)?;
    let state = GradientBundle { input: x, params };
    finish(
        Suite::Cfaa,
        case,
        describe(&config),
        &state,
        analytic,
        |s| block_loss(cfaa_forward(&s.input, &s.params, &config)?, &upstream),
        opts,
    )
}

fn triplet_case(case: usize, rng: &mut SeededRng, opts: &GradCheckOptions) -> Result<CaseReport> {
    let p = 2 + rng.below(3);
    let k = 2 + rng.below(2);
    let c = 2 + rng.below(4);
    let labels = BatchLabels::new((0..p).flat_map(|i| std::iter::repeat(i).take(k)).collect())?;
    let x = rng.uniform_tensor(&[p * k, c], 1.0);
    let analytic = batch_hard_triplet(&x, &labels, DEFAULT_MARGIN)?.grad;
    finish(
        Suite::Triplet,
        case,
        format!("P={p} K={k} C={c} margin={DEFAULT_MARGIN}"),
        &x,
        analytic,
        |s| Ok(batch_hard_triplet(s, &labels, DEFAULT_MARGIN)?.loss),
        opts,
    )
}

fn cross_entropy_case(
    case: usize,
    rng: &mut SeededRng,
    opts: &GradCheckOptions,
) -> Result<CaseReport> {
    let b = 1 + rng.below(5);
    let k = 2 + rng.below(6);
    let labels: Vec<usize> = (0..b).map(|_| rng.below(k)).collect();
    let x = rng.uniform_tensor(&[b, k], 3.0);
    let analytic = cross_entropy(&x, &labels)?.grad;
    finish(
        Suite::CrossEntropy,
        case,
        format!("B={b} classes={k}"),
        &x,
        analytic,
        |s| Ok(cross_entropy(s, &labels)?.loss),
        opts,
    )
}

/// Runs `opts.configs` seeded cases of one suite.
pub fn run_suite(suite: Suite, opts: &GradCheckOptions) -> Result<Vec<CaseReport>> {
    let mut rng = SeededRng::new(opts.seed ^ (0x9e37_79b9 * (suite as u64 + 1)));
    (0..opts.configs)
        .map(|case| {
            let mut case_rng = rng.fork();
            match suite {
                Suite::Nonlocal3d | Suite::Axial | Suite::AxialPs => {
                    single_case(suite, case, &mut case_rng, opts)
                }
                Suite::Cfaa => cfaa_case(case, &mut case_rng, opts),
                Suite::Triplet => triplet_case(case, &mut case_rng, opts),
                Suite::CrossEntropy => cross_entropy_case(case, &mut case_rng, opts),
            }
        })
        .collect()
}

pub fn run_all(opts: &GradCheckOptions) -> Result<Vec<CaseReport>> {
    let mut out = Vec::new();
    for suite in Suite::ALL {
        out.extend(run_suite(suite, opts)?);
    }
    Ok(out)
}
