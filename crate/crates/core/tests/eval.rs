use std::collections::BTreeSet;

use axreid::eval::{
    apply_corrections, evaluate, format_metadata, parse_metadata, protocol_delta_report,
    read_dataset, write_dataset, EvalDataset, LabelCorrections, Protocol, TrackletMeta,
};
use axreid::{Error, SeededRng, Tensor};
use proptest::prelude::*;

fn meta(tid: u64, id: u32, cam: u32) -> TrackletMeta {
    TrackletMeta::new(tid, id, cam)
}

/// Query 374 seen by camera 2; a distractor from the same camera that
/// duplicates the query ranks first.
fn duplicate_distractor_fixture() -> (EvalDataset, LabelCorrections) {
    let ds = EvalDataset::new(
        vec![meta(1, 374, 2)],
        vec![meta(10, 0, 2), meta(11, 374, 3), meta(12, 99, 1)],
        Tensor::from_vec(&[1, 3], vec![0.1, 0.2, 0.3]).unwrap(),
    )
    .unwrap();
    let c = LabelCorrections::parse("VERSION 1\nDUPDIST 1 10\n").unwrap();
    (ds, c)
}

/// Independent AP/first-hit computation written directly from the rules.
fn brute_force(ds: &EvalDataset, protocol: Protocol) -> (f64, Vec<f64>) {
    let g = ds.gallery.len();
    let mut aps = Vec::new();
    let mut firsts = Vec::new();
    for (qi, q) in ds.query.iter().enumerate() {
        let qset: BTreeSet<u32> = std::iter::once(q.identity)
            .chain(q.ambiguous.iter().copied())
            .filter(|&i| i != 0)
            .collect();
        let mut idx: Vec<usize> = (0..g).collect();
        idx.sort_by(|&a, &b| {
            let (da, db) = (
                ds.distances.data()[qi * g + a],
                ds.distances.data()[qi * g + b],
            );
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        let mut labels = Vec::new();
        for gi in idx {
            let m = &ds.gallery[gi];
            let gset: BTreeSet<u32> = std::iter::once(m.identity)
                .chain(m.ambiguous.iter().copied())
                .filter(|&i| i != 0)
                .collect();
            let correct = !qset.is_disjoint(&gset);
            let same_cam = m.camera == q.camera;
            let dup = ds
                .duplicates
                .contains(&(q.tid.min(m.tid), q.tid.max(m.tid)));
            let ignored = (same_cam && correct)
                || (protocol == Protocol::New && same_cam && m.identity == 0 && dup);
            if !ignored {
                labels.push(correct);
            }
        }
        let positives: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| i)
            .collect();
        if positives.is_empty() {
            continue;
        }
        let ap = positives
            .iter()
            .enumerate()
            .map(|(k, &r)| (k + 1) as f64 / (r + 1) as f64)
            .sum::<f64>()
            / positives.len() as f64;
        aps.push(ap);
        firsts.push(positives[0]);
    }
    let n = aps.len();
    if n == 0 {
        return (0.0, vec![0.0; g]);
    }
    let cmc = (0..g)
        .map(|k| firsts.iter().filter(|&&f| f <= k).count() as f64 / n as f64)
        .collect();
    (aps.iter().sum::<f64>() / n as f64, cmc)
}

fn random_dataset(seed: u64, q: usize, g: usize) -> EvalDataset {
    let mut rng = SeededRng::new(seed);
    let ids = 6;
    let make = |base: u64, n: usize, rng: &mut SeededRng| -> Vec<TrackletMeta> {
        (0..n)
            .map(|i| {
                let mut m = meta(base + i as u64, rng.below(ids) as u32, rng.below(3) as u32);
                if rng.chance(0.15) {
                    let extra = 1 + rng.below(ids - 1) as u32;
                    if extra != m.identity {
                        m.ambiguous.insert(extra);
                    }
                }
                m
            })
            .collect()
    };
    let query = make(0, q, &mut rng);
    let gallery = make(1000, g, &mut rng);
    // Coarse distances so ties occur.
    let d: Vec<f64> = (0..q * g).map(|_| rng.below(8) as f64 / 4.0).collect();
    let mut ds = EvalDataset::new(query, gallery, Tensor::from_vec(&[q, g], d).unwrap()).unwrap();
    for qi in 0..q {
        for gi in 0..g {
            if ds.gallery[gi].identity == 0 && rng.chance(0.3) {
                ds.duplicates.insert((qi as u64, 1000 + gi as u64));
            }
        }
    }
    ds
}

#[test]
fn ap_example() {
    let ds = EvalDataset::new(
        vec![meta(1, 5, 1)],
        vec![meta(2, 5, 2), meta(3, 6, 2), meta(4, 5, 3)],
        Tensor::from_vec(&[1, 3], vec![0.1, 0.2, 0.3]).unwrap(),
    )
    .unwrap();
    let r = evaluate(&ds, Protocol::Old).unwrap();
    assert!((r.map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    assert_eq!(r.rank(1), 1.0);
}

#[test]
fn duplicate_distractor_old_and_new() {
    let (ds, c) = duplicate_distractor_fixture();
    let corrected = apply_corrections(&ds, &c).unwrap();
    let old = evaluate(&corrected, Protocol::Old).unwrap();
    let new = evaluate(&corrected, Protocol::New).unwrap();
    assert!((old.map - 0.5).abs() < 1e-12);
    assert!((new.map - 1.0).abs() < 1e-12);
    assert!((brute_force(&corrected, Protocol::Old).0 - 0.5).abs() < 1e-12);
    assert!((brute_force(&corrected, Protocol::New).0 - 1.0).abs() < 1e-12);

    let report = protocol_delta_report(&ds, &c).unwrap();
    assert!((report.map_delta(1, 2) - 0.5).abs() < 1e-12);
    assert_eq!(report.query_deltas(1, 2), vec![(1, Some(0.5))]);
}

#[test]
fn delta_report_identities() {
    let ds = random_dataset(4, 8, 20);
    let report = protocol_delta_report(&ds, &LabelCorrections::default()).unwrap();
    assert_eq!(report.map_delta(0, 1), 0.0);
    assert!(report
        .query_deltas(0, 1)
        .iter()
        .all(|(_, d)| d.map_or(true, |d| d == 0.0)));
    for (a, b) in report
        .query_deltas(0, 2)
        .iter()
        .zip(report.query_deltas(2, 0))
    {
        assert_eq!(a.1.map(|v| -v), b.1);
    }
    assert_eq!(report.map_delta(0, 2), -report.map_delta(2, 0));
}

#[test]
fn brute_force_equivalence_8x20() {
    for seed in 0..20 {
        let ds = random_dataset(seed, 8, 20);
        for p in [Protocol::Old, Protocol::New] {
            let r = evaluate(&ds, p).unwrap();
            let (map, cmc) = brute_force(&ds, p);
            assert!((r.map - map).abs() < 1e-12, "seed {seed}");
            for (a, b) in r.cmc.iter().zip(&cmc) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn corrections_examples() {
    let ds = EvalDataset::new(
        vec![meta(1, 184, 1)],
        vec![meta(3, 318, 2), meta(7, 184, 2)],
        Tensor::from_vec(&[1, 2], vec![0.5, 0.6]).unwrap(),
    )
    .unwrap();
    assert_eq!(
        apply_corrections(&ds, &LabelCorrections::default()).unwrap(),
        ds
    );
    let c = LabelCorrections::parse("RELABEL 7 142\nAMBIG 3 322\n").unwrap();
    let out = apply_corrections(&ds, &c).unwrap();
    assert_eq!(out.gallery[1].identity, 142);
    assert_eq!(
        out.gallery[0].acceptable().collect::<Vec<_>>(),
        vec![318, 322]
    );
    assert_eq!(ds.gallery[1].identity, 184, "input untouched");
}

#[test]
fn new_identities_are_fresh() {
    let ds = EvalDataset::new(
        vec![meta(1, 5, 1)],
        vec![meta(2, 9, 2), meta(3, 7, 2), meta(4, 7, 1)],
        Tensor::zeros(&[1, 3]),
    )
    .unwrap();
    let c = LabelCorrections::parse("NEWID 3 a\nNEWID 4 a\nNEWID 2 b\n").unwrap();
    let out = apply_corrections(&ds, &c).unwrap();
    assert_eq!(out.gallery[1].identity, 10);
    assert_eq!(out.gallery[2].identity, 10);
    assert_eq!(out.gallery[0].identity, 11);
}

#[test]
fn corrections_conflicts_and_parse_errors() {
    match LabelCorrections::parse(
        "RELABEL 7 1\nRELABEL 7 2\nNEWID 8 x\nRELABEL 8 3\nAMBIG 9 4\nRELABEL 9 4\n",
    ) {
        Err(Error::Conflict(list)) => assert_eq!(list.len(), 3, "{list:?}"),
        other => panic!("expected conflicts, got {other:?}"),
    }
    for (text, line) in [
        ("RELABEL 1 0\n", 1),
        ("# c\nDUPDIST 4 4\n", 2),
        ("RELABEL 1 2 3\n", 1),
        ("FOO 1\n", 1),
        ("RELABEL 1 2\nVERSION 3\n", 2),
        ("AMBIG 1 x\n", 1),
    ] {
        assert!(
            matches!(LabelCorrections::parse(text), Err(Error::Parse { line: l, .. }) if l == line),
            "{text:?}"
        );
    }
    let (ds, _) = duplicate_distractor_fixture();
    let unknown = LabelCorrections::parse("RELABEL 99 5\n").unwrap();
    assert!(matches!(
        apply_corrections(&ds, &unknown),
        Err(Error::Conflict(_))
    ));
    let own = LabelCorrections::parse("AMBIG 11 374\n").unwrap();
    assert!(matches!(
        apply_corrections(&ds, &own),
        Err(Error::Conflict(_))
    ));
}

#[test]
fn corrections_round_trip() {
    let text =
        "VERSION 2\nRELABEL 7 142\nNEWID 12 lost\nNEWID 13 lost\nAMBIG 3 322\nDUPDIST 41 40\n";
    let c = LabelCorrections::parse(text).unwrap();
    assert_eq!(LabelCorrections::parse(&c.to_string()).unwrap(), c);
}

#[test]
fn files_round_trip() {
    let ds = random_dataset(2, 4, 6);
    let (q, g) = parse_metadata(&format_metadata(&ds.query, &ds.gallery)).unwrap();
    assert_eq!((q, g), (ds.query.clone(), ds.gallery.clone()));
    let dir = tempfile::tempdir().unwrap();
    let (m, d) = (dir.path().join("meta.tsv"), dir.path().join("dist.aakt"));
    write_dataset(&ds, &m, &d).unwrap();
    let back = read_dataset(&m, &d).unwrap();
    assert_eq!(back.distances, ds.distances);
    assert!(matches!(
        parse_metadata("query\t1\t2\n"),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn no_positive_queries_are_excluded() {
    let ds = EvalDataset::new(
        vec![meta(1, 5, 1), meta(2, 6, 1)],
        vec![meta(3, 5, 2), meta(4, 6, 1)],
        Tensor::from_vec(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
    )
    .unwrap();
    let r = evaluate(&ds, Protocol::Old).unwrap();
    assert_eq!(r.excluded, 1);
    assert_eq!(r.map, 1.0);
    assert!(r.queries[1].ap.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_brute_force(seed in 0u64..10_000, q in 1usize..=10, g in 1usize..=30) {
        let ds = random_dataset(seed, q, g);
        for p in [Protocol::Old, Protocol::New] {
            let r = evaluate(&ds, p).unwrap();
            let (map, cmc) = brute_force(&ds, p);
            prop_assert!((r.map - map).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.map));
            for (k, (a, b)) in r.cmc.iter().zip(&cmc).enumerate() {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
                if k > 0 {
                    prop_assert!(r.cmc[k - 1] <= *a);
                }
            }
        }
    }

    #[test]
    fn gallery_permutation_invariance(seed in 0u64..10_000, shuffle_seed in 0u64..100) {
        // Distinct distances: with ties the index tie-break is order dependent.
        let mut ds = random_dataset(seed, 5, 12);
        let n = ds.distances.len();
        let mut rng = SeededRng::new(seed ^ 0x5eed);
        let mut d: Vec<f64> = (0..n).map(|i| i as f64 + 0.0).collect();
        rng.shuffle(&mut d);
        ds.distances = Tensor::from_vec(&[5, 12], d).unwrap();
        let mut order: Vec<usize> = (0..12).collect();
        SeededRng::new(shuffle_seed).shuffle(&mut order);
        let permuted = ds.permute_gallery(&order).unwrap();
        for p in [Protocol::Old, Protocol::New] {
            let a = evaluate(&ds, p).unwrap();
            let b = evaluate(&permuted, p).unwrap();
            prop_assert!((a.map - b.map).abs() < 1e-12);
            prop_assert_eq!(a.cmc, b.cmc);
        }
    }

    #[test]
    fn ignored_entry_changes_nothing(seed in 0u64..10_000, qi in 0usize..4, dist in 0.0..3.0f64) {
        let ds = random_dataset(seed, 4, 10);
        let q = ds.query[qi].clone();
        let mut gallery = ds.gallery.clone();
        gallery.push(meta(9999, q.identity.max(1), q.camera));
        let mut query = ds.query.clone();
        if query[qi].identity == 0 {
            query[qi].identity = 1;
            query[qi].ambiguous.remove(&1);
        }
        let base = EvalDataset { query: query.clone(), ..ds.clone() };
        let mut d = Vec::new();
        for row in 0..4 {
            d.extend_from_slice(&ds.distances.data()[row * 10..(row + 1) * 10]);
            // Other queries see the new entry far away and never matching.
            d.push(if row == qi { dist } else { 1e9 });
        }
        let mut extended = EvalDataset::new(query.clone(), gallery, Tensor::from_vec(&[4, 11], d).unwrap()).unwrap();
        extended.duplicates = ds.duplicates.clone();
        for p in [Protocol::Old, Protocol::New] {
            let a = evaluate(&base, p).unwrap();
            let b = evaluate(&extended, p).unwrap();
            let qa = &a.queries[qi];
            let qb = &b.queries[qi];
            prop_assert_eq!(qa.ap, qb.ap);
            prop_assert_eq!(qa.first_hit, qb.first_hit);
        }
    }

    #[test]
    fn ambiguity_is_symmetric(seed in 0u64..10_000, extra in 1u32..6) {
        let mut base = random_dataset(seed, 1, 12);
        for m in base.query.iter_mut().chain(base.gallery.iter_mut()) {
            m.ambiguous.clear();
        }
        base.query[0].identity = base.query[0].identity.max(1);
        prop_assume!(extra != base.query[0].identity);
        let mut via_query = base.clone();
        via_query.query[0].ambiguous.insert(extra);
        let mut via_gallery = base.clone();
        let qid = base.query[0].identity;
        for g in via_gallery.gallery.iter_mut().filter(|g| g.identity == extra) {
            g.ambiguous.insert(qid);
        }
        for p in [Protocol::Old, Protocol::New] {
            prop_assert_eq!(evaluate(&via_query, p).unwrap(), evaluate(&via_gallery, p).unwrap());
        }
    }
}
