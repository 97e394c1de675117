use axreid::gradcheck::{run_suite, GradCheckOptions, Suite, DEFAULT_STEP, DEFAULT_TOLERANCE};
use clap::Args;

use crate::report::Report;
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seeded configurations per suite.
    #[arg(long, default_value_t = 5)]
    configs: usize,
    /// Restrict to these suites (nonlocal3d, axial, axial_ps, cfaa,
    /// triplet, cross_entropy). Repeatable.
    #[arg(long = "suite", value_name = "NAME")]
    suites: Vec<String>,
    /// Central-difference step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Corrupt one analytic gradient entry per case; the run must fail.
    #[arg(long)]
    perturb_analytic: bool,
}

pub fn run(a: &GradcheckArgs) -> CliResult<String> {
    if a.configs == 0 {
        return Err(CliError::Validation("--configs must be at least 1".into()));
    }
    if !(a.step > 0.0 && a.tolerance > 0.0) {
        return Err(CliError::Validation(
            "--step and --tolerance must be positive".into(),
        ));
    }
    let suites: Vec<Suite> = if a.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.suites
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()?
    };
    let opts = GradCheckOptions {
        seed: a.seed,
        configs: a.configs,
        step: a.step,
        tolerance: a.tolerance,
        perturb_analytic: a.perturb_analytic,
    };
    let mut r = Report::new(&[
        "suite",
        "case",
        "checked",
        "max rel.err",
        "worst entry",
        "result",
    ]);
    let mut cases = Vec::new();
    for s in suites {
        cases.extend(run_suite(s, &opts)?);
    }
    for c in &cases {
        let w = &c.comparison.worst;
        r.row(vec![
            c.suite.to_string(),
            c.case.to_string(),
            c.comparison.checked.to_string(),
            format!("{:.3e}", w.rel_error),
            format!("{}[{}]", w.name, w.index),
            if c.passed { "PASS" } else { "FAIL" }.into(),
        ]);
    }
    let failed = cases.iter().filter(|c| !c.passed).count();
    let worst = cases
        .iter()
        .max_by(|x, y| {
            x.comparison
                .worst
                .rel_error
                .total_cmp(&y.comparison.worst.rel_error)
        })
        .expect("at least one case");
    let w = &worst.comparison.worst;
    r.kv("seed", a.seed);
    r.kv("cases", cases.len());
    r.kv("failed", failed);
    r.kv("tolerance", a.tolerance);
    r.kv("worst.suite", worst.suite);
    r.kv("worst.case", worst.case);
    r.kv("worst.entry", format!("{}[{}]", w.name, w.index));
    r.kv("worst.rel_error", format!("{:.6e}", w.rel_error));
    r.kv("result", if failed == 0 { "PASS" } else { "FAIL" });
    if failed == 0 {
        Ok(r.to_string())
    } else {
        Err(CliError::Assertion {
            report: r.to_string(),
            reason: format!(
                "{failed} case(s) failed; worst {} case {} at {}[{}]: analytic {:.6e} numeric {:.6e} rel.err {:.3e} ({})",
                worst.suite, worst.case, w.name, w.index, w.analytic, w.numeric, w.rel_error, worst.description
            ),
        })
    }
}
