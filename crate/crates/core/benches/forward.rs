//! Forward rasterization benchmark (projection + tiled blending).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use budgetsplat::camera::Camera;
use budgetsplat::model::GaussianSet;
use budgetsplat::render::{project, render};

fn bench_scene(count: usize) -> (GaussianSet, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut set = GaussianSet::with_count(count);
    for i in 0..count {
        set.positions[3 * i] = rng.gen_range(-0.8..0.8);
        set.positions[3 * i + 1] = rng.gen_range(-0.8..0.8);
        set.positions[3 * i + 2] = rng.gen_range(2.0..4.0);
        for k in 0..3 {
            set.log_scales[3 * i + k] = rng.gen_range(0.01f64..0.08).ln();
        }
        set.raw_opacities[i] = rng.gen_range(-1.0..2.0);
    }
    let cam = Camera::look_at(
        128,
        128,
        120.0,
        nalgebra::Vector3::new(0.0, 0.0, -3.0),
        nalgebra::Vector3::zeros(),
        nalgebra::Vector3::y(),
    );
    (set, cam)
}

fn forward_pass(c: &mut Criterion) {
    let mut group = c.benchmark_group(if budgetsplat::parallel::is_parallel_build() {
        "forward_parallel"
    } else {
        "forward_sequential"
    });
    for count in [1_000usize, 10_000] {
        let (set, cam) = bench_scene(count);
        group.bench_with_input(BenchmarkId::new("project_render", count), &count, |b, _| {
            b.iter(|| {
                let splats = project(&set, &cam, 3);
                render(&splats, &cam, [0.0; 3])
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward_pass);
criterion_main!(benches);
