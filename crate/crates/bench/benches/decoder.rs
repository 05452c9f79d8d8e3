use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use softprop::image::Image;
use softprop::model::{DecoderConfig, EncoderConfig, ModelConfig, ProprioModel};
use softprop::prototype::square_grid;

fn model(decoder: DecoderConfig) -> ProprioModel<f32> {
    ProprioModel::new(ModelConfig {
        encoder: EncoderConfig::for_resolution(32, 3, 512),
        decoder,
        views: 1,
        init_seed: 0,
    })
    .unwrap()
}

fn predict(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict");
    group.sample_size(10);
    let image = Image::zeros(32, 32, 3);
    for (name, cfg) in [("improved", DecoderConfig::improved(512)), ("original", DecoderConfig::original())] {
        let m = model(cfg);
        for side in [50, 100] {
            let grid = square_grid(side, m.grid_dim()).unwrap();
            group.bench_with_input(BenchmarkId::new(name, side * side), &side, |b, _| {
                b.iter(|| m.predict(&image, &grid, &[0]).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, predict);
criterion_main!(benches);
