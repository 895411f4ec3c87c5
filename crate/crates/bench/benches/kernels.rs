//! Microbenchmarks for the numerical kernels the solver spends its time in:
//! the fast Walsh-Hadamard transform, closed-form tilted moments and one
//! full EP sweep on a denoising instance.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use eptv_core::{
    run_ep, EdgePartition, EpConfig, ForwardOp, LikelihoodModel, PriorSpec,
};

fn bench_fwht(c: &mut Criterion) {
    let mut group = c.benchmark_group("fwht");
    for &n in &[1usize << 10, 1 << 14] {
        let v: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut w = v.clone();
                eptv_core::forward::fwht_natural(black_box(&mut w));
                w
            })
        });
    }
    group.finish();
}

fn bench_tilted_moments(c: &mut Criterion) {
    let priors = [
        ("l1tv", PriorSpec::L1Tv { lambda: 0.032 }),
        (
            "mog2",
            PriorSpec::Mog2 {
                omega: 0.2,
                s1_sq: 3400.0,
                s2_sq: 11.0,
            },
        ),
        (
            "bg",
            PriorSpec::Bg {
                omega: 0.85,
                s_sq: 2800.0,
            },
        ),
    ];
    let mut group = c.benchmark_group("tilted_moments");
    for (name, prior) in &priors {
        group.bench_function(*name, |b| {
            b.iter(|| {
                let mut acc = 0.0;
                for i in 0..100 {
                    let m = -5.0 + 0.1 * i as f64;
                    let t = prior.tilted_moments(black_box(m), 2.5).unwrap();
                    acc += t.mean + t.variance + t.abs_mean;
                }
                acc
            })
        });
    }
    group.finish();
}

fn bench_ep_sweep(c: &mut Criterion) {
    let (h, w) = (64, 64);
    let y: Vec<f64> = (0..h * w)
        .map(|i| {
            let (r, cc) = (i / w, i % w);
            if (r / 16 + cc / 16) % 2 == 0 { 50.0 } else { 200.0 }
        })
        .collect();
    let model = LikelihoodModel::new(ForwardOp::identity(h, w), y, 100.0).unwrap();
    let partition = EdgePartition::build(h, w).unwrap();
    let prior = PriorSpec::L1Tv { lambda: 0.032 };
    let cfg = EpConfig {
        max_iter: 1,
        tol: 0.0,
        ..EpConfig::default()
    };
    c.bench_function("ep_sweep_64x64_l1tv", |b| {
        b.iter(|| run_ep(&model, &partition, &prior, black_box(&cfg), None).unwrap())
    });
}

criterion_group!(benches, bench_fwht, bench_tilted_moments, bench_ep_sweep);
criterion_main!(benches);
