use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axreid::detect_link::{
    format_candidates, occluder_scenario, render_frames, synthetic_detector, CandidateFile,
    PROVENANCE_FILE,
};
use axreid::io::write_tensor;
use axreid::SeededRng;

fn axreid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_axreid"))
        .args(args)
        .output()
        .expect("spawn axreid")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = axreid(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

/// `key=value` lines of the machine-readable block.
fn kv(out: &str) -> BTreeMap<String, String> {
    let mut parts = out.split("\n---\n");
    parts.next();
    let block = parts.next().expect("key=value block");
    block
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn num(map: &BTreeMap<String, String>, key: &str) -> f64 {
    map.get(key)
        .unwrap_or_else(|| panic!("missing {key}"))
        .parse()
        .unwrap()
}

fn fixture(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
        .display()
        .to_string()
}

// Set UPDATE_SNAPSHOTS=1 to rewrite the stored help texts.
fn snapshot(name: &str, actual: &str) {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/snapshots")
        .join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing snapshot {}", path.display()));
    assert_eq!(actual, expected, "help text for {name} changed");
}

#[test]
fn help_snapshots() {
    snapshot("root", &ok(&["--help"]));
    for sub in ["bench", "gradcheck", "align", "eval", "demo"] {
        snapshot(sub, &ok(&[sub, "--help"]));
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = axreid(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("frobnicate"));
}

#[test]
fn zero_threads_rejected() {
    let o = axreid(&["--threads", "0", "bench"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_table2_rows() {
    let out = ok(&["bench", "--preset", "table2"]);
    let m = kv(&out);
    for name in [
        "baseline",
        "nonlocal3d",
        "axial",
        "axial-sinusoidal",
        "axial-relative",
        "cfaa:2",
        "cfaa:4",
    ] {
        assert!(
            m.contains_key(&format!("gflops.{name}")),
            "missing row {name}"
        );
        assert!(out.lines().any(|l| l.starts_with(name)), "table row {name}");
    }
    assert_eq!(m["ordering"], "ok");
    assert!((num(&m, "gflops.baseline") - 24.3196).abs() < 1e-4);
    assert!((num(&m, "gflops.nonlocal3d") - 17.2134).abs() < 1e-4);
}

#[test]
fn bench_single_scale_cfaa_is_axial_relative() {
    let a = kv(&ok(&["bench", "--variant", "cfaa", "--scales", "1"]));
    let b = kv(&ok(&["bench", "--variant", "axial-relative"]));
    assert_eq!(a["attention"], b["attention"]);
    assert_eq!(a["total"], b["total"]);
}

#[test]
fn bench_frames_scale_linearly() {
    let one = kv(&ok(&["bench", "--variant", "cfaa:2", "--frames", "1"]));
    let six = kv(&ok(&["bench", "--variant", "cfaa:2", "--frames", "6"]));
    let (b1, b6) = (num(&one, "backbone"), num(&six, "backbone"));
    assert_eq!(b1 * 6.0, b6);
}

#[test]
fn bench_table4_and_calibrate() {
    let m = kv(&ok(&["bench", "--preset", "table4"]));
    assert_eq!(m.len(), 4);
    let c = kv(&ok(&["bench", "--calibrate"]));
    assert_eq!(c["ordering"], "ok");
    assert!(c.contains_key("best.err.cfaa:4"));
}

#[test]
fn bench_bad_arguments() {
    assert_eq!(
        axreid(&["bench", "--preset", "table9"]).status.code(),
        Some(1)
    );
    assert_eq!(
        axreid(&["bench", "--variant", "axial", "--scales", "2"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        axreid(&["bench", "--variant", "cfaa", "--scales", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        axreid(&["bench", "--convention", "mac=7"]).status.code(),
        Some(1)
    );
    assert_eq!(axreid(&["bench", "--frames", "0"]).status.code(), Some(1));
}

#[test]
fn gradcheck_default_passes() {
    let m = kv(&ok(&["gradcheck"]));
    assert_eq!(m["result"], "PASS");
    assert_eq!(m["failed"], "0");
    assert!(num(&m, "worst.rel_error") <= 1e-4);
}

#[test]
fn gradcheck_perturbed_fails_with_exit_2() {
    let o = axreid(&["gradcheck", "--perturb-analytic"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("check failed"));
    assert_eq!(kv(&stdout(&o))["result"], "FAIL");
}

#[test]
fn gradcheck_is_deterministic() {
    let a = ok(&["gradcheck", "--seed", "7"]);
    let b = ok(&["gradcheck", "--seed", "7"]);
    assert_eq!(a, b);
    let only = kv(&ok(&["gradcheck", "--suite", "triplet", "--configs", "2"]));
    assert_eq!(only["cases"], "2");
    assert_eq!(
        axreid(&["gradcheck", "--suite", "nope"]).status.code(),
        Some(1)
    );
}

/// Frames and candidates of the occluder scenario under `root`, tracklet 7.
/// Returns the scripted identity behind each candidate, per frame.
fn align_fixture(root: &Path) -> Vec<Vec<usize>> {
    let mut rng = SeededRng::new(3);
    let script = occluder_scenario(&mut rng);
    let frames = render_frames(&script, &mut rng);
    let detections = synthetic_detector(&script, &mut rng);
    let dir = root.join("frames/7");
    std::fs::create_dir_all(&dir).unwrap();
    for (i, f) in frames.iter().enumerate() {
        write_tensor(dir.join(format!("{i}.aakt")), f).unwrap();
    }
    let mut file = CandidateFile {
        dim: detections[0].candidates[0].feature.len(),
        ..CandidateFile::default()
    };
    for (f, det) in detections.iter().enumerate() {
        file.tracklets
            .entry(7)
            .or_default()
            .insert(f, det.candidates.clone());
    }
    std::fs::write(root.join("cands.tsv"), format_candidates(&file)).unwrap();
    detections.into_iter().map(|d| d.truth).collect()
}

fn run_align(root: &Path, out: &str) -> Output {
    axreid(&[
        "align",
        "--candidates",
        &root.join("cands.tsv").display().to_string(),
        "--frames",
        &root.join("frames").display().to_string(),
        "--out",
        &root.join(out).display().to_string(),
        "--height",
        "32",
        "--width",
        "16",
    ])
}

#[test]
fn align_follows_the_target() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = align_fixture(tmp.path());
    let o = run_align(tmp.path(), "out");
    assert!(o.status.success(), "{}", stderr(&o));
    let m = kv(&stdout(&o));
    assert_eq!(m["frames"], truth.len().to_string());
    let dir = tmp.path().join("out/7");
    let log = std::fs::read_to_string(dir.join(PROVENANCE_FILE)).unwrap();
    assert_eq!(log.lines().count(), truth.len());
    for (f, line) in log.lines().enumerate() {
        let cand: usize = line
            .split_whitespace()
            .find_map(|t| t.strip_prefix("candidate="))
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(truth[f][cand], 0, "frame {f} followed the occluder: {line}");
        assert!(dir.join(format!("frame_{f}.img.aakt")).exists());
        assert!(dir.join(format!("frame_{f}.mask.aakt")).exists());
    }

    let again = run_align(tmp.path(), "out2");
    assert!(again.status.success());
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        let twin = tmp.path().join("out2/7").join(p.file_name().unwrap());
        assert_eq!(
            std::fs::read(&p).unwrap(),
            std::fs::read(twin).unwrap(),
            "{}",
            p.display()
        );
    }
}

#[test]
fn align_malformed_record_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    align_fixture(tmp.path());
    let path = tmp.path().join("cands.tsv");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("7\t0\t1\t2\n");
    let line = text.lines().count();
    std::fs::write(&path, text).unwrap();
    let o = run_align(tmp.path(), "out");
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains(&format!("line {line}")),
        "{}",
        stderr(&o)
    );
}

#[test]
fn align_unknown_tracklet_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    align_fixture(tmp.path());
    let mut args: Vec<String> = [
        "align",
        "--candidates",
        &tmp.path().join("cands.tsv").display().to_string(),
        "--frames",
        &tmp.path().join("frames").display().to_string(),
        "--out",
        &tmp.path().join("o").display().to_string(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(["--tracklet".into(), "99".into()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(axreid(&refs).status.code(), Some(1));
}

fn eval_args<'a>(meta: &'a str, dist: &'a str) -> Vec<&'a str> {
    vec!["eval", "--meta", meta, "--distances", dist]
}

#[test]
fn eval_bundled_fixture_matches_oracle() {
    let (meta, dist) = (
        fixture("eval_small/meta.tsv"),
        fixture("eval_small/distances.aakt"),
    );
    let m = kv(&ok(&eval_args(&meta, &dist)));
    let expected: BTreeMap<String, f64> =
        std::fs::read_to_string(fixture("eval_small/expected.txt"))
            .unwrap()
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.parse().unwrap()))
            .collect();
    for (k, v) in &expected {
        assert!((num(&m, k) - v).abs() < 1e-6, "{k}: {} vs {v}", m[k]);
    }
    assert_eq!(m["excluded"], "1");
}

#[test]
fn eval_duplicate_distractor_protocols() {
    let (meta, dist, corr) = (
        fixture("dup_distractor/meta.tsv"),
        fixture("dup_distractor/distances.aakt"),
        fixture("dup_distractor/corrections.txt"),
    );
    let mut args = eval_args(&meta, &dist);
    args.extend(["--corrections", &corr]);
    let old = kv(&ok(&args));
    let mut new_args = args.clone();
    new_args.extend(["--protocol", "new"]);
    let new = kv(&ok(&new_args));
    assert!((num(&old, "map") - 0.5).abs() < 1e-9);
    assert!((num(&new, "map") - 1.0).abs() < 1e-9);

    let mut cmp = args.clone();
    cmp.push("--compare");
    let c = kv(&ok(&cmp));
    assert!((num(&c, "map_delta") - 0.5).abs() < 1e-9);
    assert!(num(&c, "old/original.map") < num(&c, "new/corrected.map"));
}

#[test]
fn eval_empty_corrections_change_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.txt");
    std::fs::write(&empty, "VERSION 1\n").unwrap();
    let empty = empty.display().to_string();
    let (meta, dist) = (
        fixture("eval_small/meta.tsv"),
        fixture("eval_small/distances.aakt"),
    );
    let plain = ok(&eval_args(&meta, &dist));
    let mut args = eval_args(&meta, &dist);
    args.extend(["--corrections", &empty]);
    assert_eq!(ok(&args), plain);
}

#[test]
fn eval_shape_mismatch_rejected() {
    let meta = fixture("eval_small/meta.tsv");
    let dist = fixture("dup_distractor/distances.aakt");
    let o = axreid(&eval_args(&meta, &dist));
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
    let o = axreid(&[
        "eval",
        "--meta",
        &meta,
        "--distances",
        &fixture("eval_small/distances.aakt"),
        "--protocol",
        "newest",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn demo_untrained_is_near_chance() {
    let m = kv(&ok(&["demo", "--seed", "1", "--epochs", "0"]));
    assert_eq!(m["steps"], "0");
    assert!(
        (num(&m, "map") - num(&m, "chance_map")).abs() < 0.2,
        "{m:?}"
    );
    assert!(num(&m, "rank1") < 0.5);
}

#[test]
fn demo_is_deterministic() {
    let args = ["demo", "--seed", "3", "--epochs", "2", "--identities", "4"];
    assert_eq!(ok(&args), ok(&args));
    assert_eq!(
        axreid(&["demo", "--identities", "1"]).status.code(),
        Some(1)
    );
}

#[test]
fn demo_trains_to_high_rank1() {
    let m = kv(&ok(&["demo", "--seed", "1"]));
    assert!(num(&m, "rank1") >= 0.9, "{m:?}");
    assert!(num(&m, "loss_decrease") >= 0.5, "{m:?}");
    assert!(num(&m, "rank1") > num(&m, "chance_rank1"));
}
