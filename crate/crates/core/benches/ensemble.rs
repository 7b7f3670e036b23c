//! Parallel vs sequential execution of identical sweep and calibration
//! batches. With `--no-default-features` both arms run sequentially, which
//! gives the fallback's baseline.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cmlfactor::experiments::{
    run_calibration, run_record, run_tasks, CalibrationGrid, CalibrationOptions, SweepConfig, ValueGrid,
};
use cmlfactor::local_map::LocalMapParams;
use cmlfactor::simulator::{simulate_orbit, BoundaryPolicy};

fn sweep_batch(c: &mut Criterion) {
    let cfg = SweepConfig {
        m_values: vec![3, 6],
        epsilon_grid: ValueGrid::List(vec![0.45]),
        reps: 8,
        base_seed: 1,
        ..SweepConfig::default()
    };
    let tasks = cfg.tasks();
    let mut group = c.benchmark_group("sweep_16_records");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("par_map", cmlfactor::par::current_workers()), |b| {
        b.iter(|| black_box(run_tasks(&cfg, &tasks).unwrap()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(tasks.iter().map(|t| run_record(&cfg, t).unwrap()).collect::<Vec<_>>()))
    });
    group.finish();
}

fn calibration_batch(c: &mut Criterion) {
    let empirical = simulate_orbit(&LocalMapParams::default(), 251, 0, 9, BoundaryPolicy::Clamp)
        .unwrap()
        .column(0);
    let grid = CalibrationGrid {
        r0: ValueGrid::Range {
            start: -0.005,
            step: 0.001,
            count: 11,
        },
        gamma: ValueGrid::Range {
            start: 40.0,
            step: 5.0,
            count: 10,
        },
        delta: ValueGrid::List(vec![0.011, 0.012, 0.015]),
    };
    let opts = CalibrationOptions::default();
    let mut group = c.benchmark_group("calibration_330_points");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("par_map", cmlfactor::par::current_workers()), |b| {
        b.iter(|| black_box(run_calibration(&empirical, &grid, &opts).unwrap()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            black_box(
                grid.points()
                    .iter()
                    .map(|&(r0, gamma, delta)| {
                        let point = CalibrationGrid {
                            r0: ValueGrid::List(vec![r0]),
                            gamma: ValueGrid::List(vec![gamma]),
                            delta: ValueGrid::List(vec![delta]),
                        };
                        run_calibration(&empirical, &point, &opts).unwrap()
                    })
                    .collect::<Vec<_>>(),
            )
        })
    });
    group.finish();
}

criterion_group!(benches, sweep_batch, calibration_batch);
criterion_main!(benches);
