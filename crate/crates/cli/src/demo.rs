use axreid::toy::{run_demo, ToyDataConfig, ToyModelSpec, TrainConfig};
use clap::Args;

use crate::report::Report;
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training epochs; 0 evaluates the untrained model.
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    /// Triplet margin.
    #[arg(long, default_value_t = TrainConfig::default().margin)]
    margin: f64,
    /// Identities in the synthetic dataset.
    #[arg(long, default_value_t = 20)]
    identities: usize,
    /// Drop the attention block (plain convolutional baseline).
    #[arg(long)]
    no_attention: bool,
}

pub fn run(a: &DemoArgs) -> CliResult<String> {
    if a.identities < 2 {
        return Err(CliError::Validation(
            "--identities must be at least 2".into(),
        ));
    }
    let data = ToyDataConfig {
        identities: a.identities,
        ..ToyDataConfig::default()
    };
    let mut spec = ToyModelSpec {
        classes: a.identities,
        ..ToyModelSpec::default()
    };
    if a.no_attention {
        spec = spec.baseline();
    }
    let train = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        margin: a.margin,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (_, rep) = run_demo(&data, &spec, &train)?;
    let losses = &rep.train.losses;
    let mut r = Report::new(&["epoch", "loss"]);
    let every = (losses.len() / 10).max(1);
    for (i, l) in losses.iter().enumerate() {
        if i % every == 0 || i + 1 == losses.len() {
            r.row(vec![(i + 1).to_string(), format!("{l:.4}")]);
        }
    }
    r.note(format!(
        "retrieval: rank-1 {:.3}  rank-5 {:.3}  mAP {:.3}  (chance: rank-1 {:.3}  mAP {:.3})",
        rep.eval.rank(1),
        rep.eval.rank(5),
        rep.eval.map,
        rep.chance.rank1,
        rep.chance.map
    ));
    r.kv("model", if a.no_attention { "baseline" } else { "cfaa" });
    r.kv("seed", a.seed);
    r.kv("epochs", a.epochs);
    r.kv("steps", rep.train.steps);
    if let (Some(f), Some(l)) = (losses.first(), losses.last()) {
        r.kv("loss_first", format!("{f:.6}"));
        r.kv("loss_last", format!("{l:.6}"));
        r.kv(
            "loss_decrease",
            format!("{:.4}", rep.train.relative_decrease()),
        );
    }
    r.kv("rank1", format!("{:.4}", rep.eval.rank(1)));
    r.kv("rank5", format!("{:.4}", rep.eval.rank(5)));
    r.kv("map", format!("{:.6}", rep.eval.map));
    r.kv("chance_rank1", format!("{:.4}", rep.chance.rank1));
    r.kv("chance_map", format!("{:.6}", rep.chance.map));
    r.kv("chance_draws", rep.chance.draws);
    Ok(r.to_string())
}
