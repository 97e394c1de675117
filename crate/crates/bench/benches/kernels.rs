use axreid::attention::{
    axial_forward, cfaa_backward, cfaa_forward, nonlocal_3d_forward, AttentionConfig,
    AttentionParams, Axis, CfaaParams, Encoding, Extents,
};
use axreid::eval::{evaluate, EvalDataset, Protocol, TrackletMeta};
use axreid::flops::{calibrate, table2, BackboneSpec, CountingConvention};
use axreid::toy::{SyntheticIdentityDataset, ToyDataConfig, ToyModel, ToyModelSpec};
use axreid::SeededRng;
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn flops(c: &mut Criterion) {
    let spec = BackboneSpec::default();
    let conv = CountingConvention::default();
    c.bench_function("flops/table2", |b| {
        b.iter(|| table2(black_box(&spec), &conv).unwrap())
    });
    c.bench_function("flops/calibrate", |b| {
        b.iter(|| calibrate(black_box(&spec)).unwrap())
    });
}

fn attention(c: &mut Criterion) {
    let mut rng = SeededRng::new(0);
    let extents = Extents::new(4, 16, 8);
    let base = AttentionConfig {
        c_in: 32,
        c_qk: 16,
        c_out: 32,
        heads: 2,
        scales: 1,
        encoding: Encoding::None,
        extents,
    };
    let x = rng.normal_tensor(&base.input_shape(), 1.0);
    let nl_cfg = AttentionConfig { heads: 1, ..base };
    let nl = AttentionParams::init(&nl_cfg, None, &mut rng).unwrap();
    c.bench_function("attention/nonlocal3d", |b| {
        b.iter(|| nonlocal_3d_forward(black_box(&x), &nl, &nl_cfg).unwrap())
    });
    let ax = AttentionParams::init(&base, Some(Axis::H), &mut rng).unwrap();
    c.bench_function("attention/axial_h", |b| {
        b.iter(|| axial_forward(black_box(&x), &ax, &base, Axis::H).unwrap())
    });
    for scales in [1, 2, 4] {
        let cfg = AttentionConfig {
            scales,
            heads: 8 / scales / 2,
            encoding: Encoding::Relative,
            ..base
        };
        let p = CfaaParams::init(&cfg, &mut rng).unwrap();
        c.bench_function(&format!("attention/cfaa{scales}"), |b| {
            b.iter(|| cfaa_forward(black_box(&x), &p, &cfg).unwrap())
        });
        if scales == 4 {
            let up = rng.normal_tensor(&cfg.input_shape(), 1.0);
            c.bench_function("attention/cfaa4_backward", |b| {
                b.iter(|| cfaa_backward(black_box(&x), &p, &cfg, &up).unwrap())
            });
        }
    }
}

fn eval(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let (nq, ng) = (100, 1000);
    let query: Vec<TrackletMeta> = (0..nq)
        .map(|i| TrackletMeta::new(i as u64, 1 + (i % 50) as u32, 0))
        .collect();
    let gallery: Vec<TrackletMeta> = (0..ng)
        .map(|i| TrackletMeta::new(10_000 + i as u64, 1 + (i % 60) as u32, 1 + (i % 5) as u32))
        .collect();
    let ds = EvalDataset::new(query, gallery, rng.uniform_tensor(&[nq, ng], 1.0)).unwrap();
    c.bench_function("eval/100x1000", |b| {
        b.iter(|| evaluate(black_box(&ds), Protocol::New).unwrap())
    });
}

fn toy(c: &mut Criterion) {
    let data = SyntheticIdentityDataset::generate(
        &ToyDataConfig {
            identities: 2,
            ..ToyDataConfig::default()
        },
        0,
    )
    .unwrap();
    let (frames, mask) = data.query[0].clip(0, 6).unwrap();
    for (name, spec) in [
        ("toy/clip_cfaa", ToyModelSpec::default()),
        ("toy/clip_baseline", ToyModelSpec::default().baseline()),
    ] {
        let model = ToyModel::init(&spec, 0).unwrap();
        c.bench_function(name, |b| {
            b.iter(|| model.forward_clip(black_box(&frames), &mask).unwrap())
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = flops, attention, eval, toy
}
criterion_main!(benches);
