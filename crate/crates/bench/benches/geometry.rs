use criterion::{criterion_group, criterion_main, Criterion};
use raxelkit::decode::{decode_trajectory, ImageDims};
use raxelkit::eval::{cycle_consistency_run, Perturbation, PerturbationSpec};
use raxelkit::{encode_raxel, recover_focal, recover_pose, Pose};
use raxelkit_bench::{full_size_intrinsics, orbit, orbit_images};
use std::hint::black_box;

fn encode(c: &mut Criterion) {
    let t = orbit(2);
    let frame = t.frames()[1];
    c.bench_function("encode_raxel 240x416", |b| b.iter(|| encode_raxel(black_box(&frame), black_box(&frame.pose))));
}

fn decode(c: &mut Criterion) {
    let images = orbit_images(2);
    let dims = ImageDims::from(&full_size_intrinsics());
    c.bench_function("recover_pose 240x416", |b| {
        b.iter(|| recover_pose(black_box(&images[1]), black_box(&images[0])).unwrap())
    });
    c.bench_function("recover_focal 240x416", |b| {
        b.iter(|| recover_focal(black_box(&images[0]), &Pose::identity(), dims).unwrap())
    });
    let images = orbit_images(21);
    let mut group = c.benchmark_group("trajectory");
    group.sample_size(10);
    group.bench_function("decode 21 frames", |b| b.iter(|| decode_trajectory(black_box(&images), 0, dims).unwrap()));
    let t = orbit(21);
    let spec = PerturbationSpec::new(Perturbation::GaussianPerPixel { sigma: 0.01 }, 1).unwrap();
    group.bench_function("cycle 21 frames", |b| b.iter(|| cycle_consistency_run(black_box(&t), &spec).unwrap()));
    group.finish();
}

criterion_group!(benches, encode, decode);
criterion_main!(benches);
