use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softprop::geometry::{chamfer, hausdorff, Backend, Frame, PointCloud};
use softprop::model::{DecoderConfig, DecoderVariant, EncoderConfig, ModelConfig, ProprioModel};
use softprop::numcore::{Adam, AdamConfig, Graph, Real, Tensor};
use softprop::prototype::{square_grid, PrototypeGrid};
use softprop::synthdata::{sample_dataset, SceneConfig};
use softprop::training::{multiview_loss, train_step, ViewBatch};

pub fn cloud(seed: u64, n: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect();
    PointCloud::new(pts, Frame::Normalized).unwrap()
}

fn dist(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

fn nearest(p: &[f64; 3], y: &[[f64; 3]]) -> f64 {
    y.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)
}

/// Chamfer written straight from its definition.
pub fn chamfer_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let one_way = |x: &[[f64; 3]], y: &[[f64; 3]]| x.iter().map(|p| nearest(p, y)).sum::<f64>() / (2.0 * x.len() as f64);
    one_way(a, b) + one_way(b, a)
}

pub fn hausdorff_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let one_way = |x: &[[f64; 3]], y: &[[f64; 3]]| x.iter().map(|p| nearest(p, y)).fold(0.0, f64::max);
    one_way(a, b).max(one_way(b, a))
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Both backends against the definitions on `pairs` seeded pairs with
/// sizes up to 2048; returns the worst relative error.
pub fn metric_pairs(pairs: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3E7A);
        let (n, m) = (rng.gen_range(1..=2048), rng.gen_range(1..=2048));
        let a = cloud(seed * 2, n);
        let b = cloud(seed * 2 + 1, m);
        let c = chamfer_oracle(a.points(), b.points());
        let h = hausdorff_oracle(a.points(), b.points());
        for backend in [Backend::Brute, Backend::Indexed] {
            worst = worst.max(rel(chamfer(&a, &b, backend).unwrap(), c));
            worst = worst.max(rel(hausdorff(&a, &b, backend).unwrap(), h));
        }
    }
    worst
}

/// Identity, symmetry, chamfer <= hausdorff and the triangle inequality
/// on `triples` seeded triples; returns the number of violations.
pub fn metric_axioms(triples: u64) -> usize {
    let be = Backend::Indexed;
    let mut bad = 0;
    for seed in 0..triples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
        let a = cloud(seed * 3, rng.gen_range(1..300));
        let b = cloud(seed * 3 + 1, rng.gen_range(1..300));
        let c = cloud(seed * 3 + 2, rng.gen_range(1..300));
        let ok = chamfer(&a, &a, be).unwrap() == 0.0
            && hausdorff(&a, &a, be).unwrap() == 0.0
            && (chamfer(&a, &b, be).unwrap() - chamfer(&b, &a, be).unwrap()).abs() <= 1e-9
            && hausdorff(&a, &b, be).unwrap() == hausdorff(&b, &a, be).unwrap()
            && chamfer(&a, &b, be).unwrap() <= hausdorff(&a, &b, be).unwrap()
            && hausdorff(&a, &c, be).unwrap() <= hausdorff(&a, &b, be).unwrap() + hausdorff(&b, &c, be).unwrap() + 1e-12;
        bad += usize::from(!ok);
    }
    bad
}

/// Small improved-decoder model on 16x16 images.
pub fn small_config(views: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            height: 16,
            width: 16,
            channels: 3 * views,
            conv_channels: vec![4, 8],
            fc_hidden: vec![],
            latent_dim: 8,
        },
        decoder: DecoderConfig {
            variant: DecoderVariant::Improved,
            grid_dim: 3,
            f_widths: vec![16, 16, 3],
            l_widths: vec![8, 8],
        },
        views,
        init_seed: seed,
    }
}

pub struct RandomBatch<T> {
    pub images: Tensor<T>,
    pub views: Vec<usize>,
    pub targets: Vec<Vec<[T; 3]>>,
}

impl<T: Real> RandomBatch<T> {
    /// `b` random images with random views (or all `only`) and random
    /// target clouds of 5 to 39 points.
    pub fn new(seed: u64, views: usize, b: usize, only: Option<usize>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = Tensor::from_fn(vec![b, 3 * views, 16, 16], |_| T::of(rng.gen()));
        let views = (0..b).map(|_| only.unwrap_or_else(|| rng.gen_range(0..views))).collect();
        let targets = (0..b)
            .map(|_| {
                let n = rng.gen_range(5..40);
                (0..n).map(|_| [0; 3].map(|_| T::of(rng.gen_range(-1.0..1.0)))).collect()
            })
            .collect();
        RandomBatch { images, views, targets }
    }

    pub fn batch(&self) -> ViewBatch<'_, T> {
        ViewBatch::new(self.images.clone(), self.views.clone(), self.targets.iter().map(|t| t.as_slice()).collect()).unwrap()
    }
}

/// Per-sample reimplementation: encode and decode each sample on its own,
/// weight by the inverse count of its view.
pub fn loss_oracle(model: &ProprioModel<f64>, rb: &RandomBatch<f64>, grid: &PrototypeGrid) -> f64 {
    let b = rb.views.len();
    let per = rb.images.len() / b;
    let mut total = 0.0;
    for i in 0..b {
        let img = Tensor::new(
            vec![1, rb.images.shape()[1], 16, 16],
            rb.images.data()[i * per..(i + 1) * per].to_vec(),
        )
        .unwrap();
        let mut g = Graph::inference();
        let x = g.input(img).unwrap();
        let code = model.encode_graph(&mut g, x).unwrap();
        let code = g.value(code).clone();
        let pred = model.decode(rb.views[i], grid, &code).unwrap().remove(0);
        let count = rb.views.iter().filter(|&&v| v == rb.views[i]).count();
        total += chamfer_oracle(&pred, &rb.targets[i]) / count as f64;
    }
    total
}

/// Batched loss against the oracle on `batches` view-mixed batches, both
/// backends; returns the worst relative error.
pub fn loss_oracle_suite(batches: u64) -> f64 {
    let grid = square_grid(6, 3).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..batches {
        let model = ProprioModel::<f64>::new(small_config(2, seed)).unwrap();
        let rb = RandomBatch::<f64>::new(seed, 2, 1 + (seed as usize % 9), None);
        let want = loss_oracle(&model, &rb, &grid);
        for backend in [Backend::Brute, Backend::Indexed] {
            let got = multiview_loss(&model, &rb.batch(), &grid, backend).unwrap();
            worst = worst.max(rel(got, want));
        }
    }
    worst
}

/// One step on a single-view batch; panics unless the other decoder is
/// bitwise unchanged while the encoder and own decoder move.
pub fn isolation_trial(trial: u64) {
    let grid = square_grid(5, 3).unwrap();
    let mut model = ProprioModel::<f32>::new(small_config(2, trial)).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), model.store());
    let view = (trial % 2) as usize;
    let other = 1 - view;
    let before = model.store().clone();
    let rb = RandomBatch::<f32>::new(trial, 2, 4, Some(view));
    train_step(&mut model, &mut opt, &rb.batch(), &grid, Backend::Indexed).unwrap();
    for id in model.decoder_params(other).unwrap() {
        let (a, b) = (before.value(id).data(), model.store().value(id).data());
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "trial {trial}: other decoder moved");
    }
    let moved = |ids: Vec<_>| ids.iter().any(|&id| before.value(id) != model.store().value(id));
    assert!(moved(model.encoder_params()), "trial {trial}: encoder unchanged");
    assert!(moved(model.decoder_params(view).unwrap()), "trial {trial}: own decoder unchanged");
}

/// Loss before and after `steps` full-batch steps on 8 fixed samples.
pub fn overfit_eight(steps: usize) -> (f64, f64) {
    let scene = SceneConfig {
        image_height: 16,
        image_width: 16,
        points_per_view: 512,
        ..Default::default()
    };
    let data = sample_dataset(8, &scene, 3).unwrap();
    let mut cfg = small_config(1, 0);
    cfg.decoder.f_widths = vec![64, 64, 64, 3];
    cfg.decoder.l_widths = vec![32, 8];
    let mut model = ProprioModel::<f32>::new(cfg).unwrap();
    let mut opt = Adam::new(AdamConfig { lr: 1e-3, ..Default::default() }, model.store());
    let grid = square_grid(16, 3).unwrap();
    let targets: Vec<Vec<[f32; 3]>> = (0..8)
        .map(|i| data.normalized_cloud(i).unwrap().points().iter().map(|p| p.map(|c| c as f32)).collect())
        .collect();
    let imgs: Vec<_> = data.samples.iter().map(|s| &s.image).collect();
    let batch = ViewBatch::new(model.image_batch(&imgs).unwrap(), vec![0; 8], targets.iter().map(|t| t.as_slice()).collect()).unwrap();
    let first = multiview_loss(&model, &batch, &grid, Backend::Indexed).unwrap();
    for _ in 0..steps {
        train_step(&mut model, &mut opt, &batch, &grid, Backend::Indexed).unwrap();
    }
    let last = multiview_loss(&model, &batch, &grid, Backend::Indexed).unwrap();
    (first as f64, last as f64)
}
