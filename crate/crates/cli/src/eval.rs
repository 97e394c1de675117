use std::path::PathBuf;

use axreid::eval::{
    apply_corrections, evaluate, protocol_delta_report, read_dataset, EvalResult, LabelCorrections,
    Protocol,
};
use clap::Args;

use crate::report::Report;
use crate::CliResult;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Tracklet metadata (role, tid, identity, camera, ambiguous).
    #[arg(long, value_name = "FILE")]
    meta: PathBuf,
    /// `[queries, gallery]` distance container.
    #[arg(long, value_name = "FILE")]
    distances: PathBuf,
    /// Label corrections file.
    #[arg(long, value_name = "FILE")]
    corrections: Option<PathBuf>,
    /// Matching protocol: old or new.
    #[arg(long, default_value = "old")]
    protocol: String,
    /// Print the per-query delta report across protocols and labels.
    #[arg(long)]
    compare: bool,
}

const RANKS: [usize; 3] = [1, 5, 10];

fn metrics(r: &mut Report, prefix: &str, res: &EvalResult) {
    r.kv(format!("{prefix}map"), format!("{:.6}", res.map));
    for k in RANKS {
        r.kv(format!("{prefix}rank{k}"), format!("{:.6}", res.rank(k)));
    }
    r.kv(format!("{prefix}excluded"), res.excluded);
}

pub fn run(a: &EvalArgs) -> CliResult<String> {
    let protocol: Protocol = a.protocol.parse()?;
    let ds = read_dataset(&a.meta, &a.distances)?;
    let corrections = match &a.corrections {
        Some(p) => LabelCorrections::read(p)?,
        None => LabelCorrections::default(),
    };
    if a.compare {
        let d = protocol_delta_report(&ds, &corrections)?;
        let mut header = vec!["query".to_string()];
        header.extend(d.columns.iter().map(|c| format!("AP {}", c.label)));
        header.push("delta".into());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut r = Report::new(&header);
        let last = d.columns.len() - 1;
        for (q, (_, delta)) in d.queries.iter().zip(d.query_deltas(0, last)) {
            let mut cells = vec![q.tid.to_string()];
            cells.extend(
                q.aps
                    .iter()
                    .map(|ap| ap.map_or("excl".into(), |v| format!("{v:.4}"))),
            );
            cells.push(delta.map_or("-".into(), |v| format!("{v:+.4}")));
            r.row(cells);
        }
        for c in &d.columns {
            metrics(&mut r, &format!("{}.", c.label), &c.result);
        }
        r.kv("map_delta", format!("{:+.6}", d.map_delta(0, last)));
        return Ok(r.to_string());
    }
    let data = if corrections.is_empty() {
        ds
    } else {
        apply_corrections(&ds, &corrections)?
    };
    let res = evaluate(&data, protocol)?;
    let mut r = Report::new(&["metric", "value"]);
    r.row(vec!["mAP".into(), format!("{:.4}", res.map)]);
    for k in RANKS {
        r.row(vec![format!("rank-{k}"), format!("{:.4}", res.rank(k))]);
    }
    r.row(vec!["excluded queries".into(), res.excluded.to_string()]);
    r.kv("protocol", protocol);
    r.kv("queries", data.query.len());
    r.kv("gallery", data.gallery.len());
    r.kv("corrected", !corrections.is_empty());
    metrics(&mut r, "", &res);
    Ok(r.to_string())
}
