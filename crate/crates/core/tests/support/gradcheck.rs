use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softprop::geometry::Backend;
use softprop::model::{DecoderConfig, DecoderVariant, EncoderConfig, ModelConfig, ProprioModel};
use softprop::numcore::{Conv2dSpec, Graph, ParamId, Real, Tensor, Var};
use softprop::prototype::square_grid;
use softprop::training::{multiview_loss_graph, ViewBatch};

pub const H: f64 = 1e-4;
pub const CONFIGS: usize = 20;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// `max_i |a_i - n_i| / max_i |n_i|`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs())) / scale
}

pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + H;
            let fp = f(&x);
            x[i] = x0 - H;
            let fm = f(&x);
            x[i] = x0;
            (fp - fm) / (2.0 * H)
        })
        .collect()
}

pub type Build = dyn Fn(&mut Graph<f64>, Var) -> Var;

/// Relative FD error of `build` at `x`, or `None` when the point sits
/// within `3 h` of a kink. Perturbing one input coordinate by `h` moves
/// any kink-defining gap of these single ops by at most `2 h`.
pub fn op_error(build: &Build, x: &Tensor<f64>) -> Option<f64> {
    let mut g = Graph::new();
    let v = g.variable(x.clone()).unwrap();
    let root = build(&mut g, v);
    if g.kink_margin() < 3.0 * H {
        return None;
    }
    let grads = g.backward(root).unwrap();
    let analytic = grads.wrt(v).map(|t| t.data().to_vec()).unwrap_or(vec![0.0; x.len()]);
    let shape = x.shape().to_vec();
    let numeric = central_diff(
        &mut |xs| {
            let mut g = Graph::inference();
            let v = g.input(Tensor::new(shape.clone(), xs.to_vec()).unwrap()).unwrap();
            let r = build(&mut g, v);
            g.value(r).item()
        },
        x.data(),
    );
    Some(rel_err(&analytic, &numeric))
}

/// Weighted sum with fixed random weights, so every output coordinate
/// contributes a distinct amount.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(y));
    let w = g.input(w).unwrap();
    let p = g.mul(y, w).unwrap();
    g.sum(p).unwrap()
}

/// Runs an op check on `CONFIGS` accepted configurations.
pub fn check_op(name: &str, shape: &[usize], make: impl Fn(u64) -> Box<Build>) {
    check_op_scaled(name, shape, 1.0, make)
}

pub fn check_op_scaled(name: &str, shape: &[usize], scale: f64, make: impl Fn(u64) -> Box<Build>) {
    let mut accepted = 0;
    let mut worst = 0.0f64;
    for seed in 0..(CONFIGS as u64 * 50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
        let mut x = rand_tensor(&mut rng, shape);
        x.data_mut().iter_mut().for_each(|v| *v *= scale);
        let build = make(seed);
        if let Some(e) = op_error(&*build, &x) {
            worst = worst.max(e);
            accepted += 1;
            if accepted == CONFIGS {
                break;
            }
        }
    }
    assert_eq!(accepted, CONFIGS, "{name}: too many configurations near a kink");
    assert!(worst <= 1e-6, "{name}: relative error {worst:e}");
}

pub fn constant(g: &mut Graph<f64>, seed: u64, shape: &[usize]) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31) + 7);
    let t = rand_tensor(&mut rng, shape);
    g.input(t).unwrap()
}



pub fn tiny_model<T: Real>(variant: DecoderVariant, views: usize, seed: u64) -> ProprioModel<T> {
    let decoder = match variant {
        DecoderVariant::Improved => DecoderConfig {
            variant,
            grid_dim: 3,
            f_widths: vec![6, 5, 3],
            l_widths: vec![5, 4],
        },
        DecoderVariant::Original => DecoderConfig {
            variant,
            grid_dim: 2,
            f_widths: vec![7, 6, 3],
            l_widths: vec![],
        },
    };
    let encoder = EncoderConfig {
        height: 8,
        width: 8,
        channels: 3 * views,
        conv_channels: vec![3, 4],
        fc_hidden: vec![6],
        latent_dim: 4,
    };
    let mut m = ProprioModel::new(ModelConfig {
        encoder,
        decoder,
        views,
        init_seed: seed,
    })
    .unwrap();
    // generic point: zero-initialized biases put grid points exactly on
    // ReLU kinks
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let ids: Vec<ParamId> = m.store().ids().collect();
    for id in ids {
        for v in m.store_mut().get_mut(id).value.data_mut() {
            *v = T::of(rng.gen_range(-0.6..0.6));
        }
    }
    m
}

pub struct Pipeline {
    pub images: Tensor<f64>,
    pub views: Vec<usize>,
    pub targets: Vec<Vec<[f64; 3]>>,
}

impl Pipeline {
    pub fn new(seed: u64, views: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBEEF);
        let b = 3;
        let images = Tensor::from_fn(vec![b, 3 * views, 8, 8], |_| rng.gen());
        let views = (0..b).map(|i| (i + seed as usize) % views).collect();
        let targets = (0..b)
            .map(|_| (0..12).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect())
            .collect();
        Pipeline { images, views, targets }
    }

    pub fn batch<'a, T: Real>(&self, targets: &'a [Vec<[T; 3]>]) -> ViewBatch<'a, T> {
        ViewBatch::new(
            self.images.cast(),
            self.views.clone(),
            targets.iter().map(|t| t.as_slice()).collect(),
        )
        .unwrap()
    }

    pub fn targets<T: Real>(&self) -> Vec<Vec<[T; 3]>> {
        self.targets.iter().map(|t| t.iter().map(|p| p.map(T::of)).collect()).collect()
    }
}

/// Analytic parameter gradient of the pipeline loss and its kink margin.
pub fn pipeline_grad<T: Real>(model: &ProprioModel<T>, p: &Pipeline, ids: &[ParamId]) -> (Vec<f64>, f64) {
    let grid = square_grid(3, model.grid_dim()).unwrap();
    let targets = p.targets::<T>();
    let batch = p.batch(&targets);
    let mut g = Graph::new();
    let lg = multiview_loss_graph(model, &mut g, &batch, &grid, Backend::Indexed).unwrap();
    let grads = g.backward(lg.loss).unwrap();
    let flat = ids
        .iter()
        .flat_map(|&id| match grads.param(id) {
            Some(t) => t.data().iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; model.store().value(id).len()],
        })
        .collect();
    (flat, g.kink_margin())
}

pub fn pipeline_fd(model: &ProprioModel<f64>, p: &Pipeline, ids: &[ParamId]) -> Vec<f64> {
    let grid = square_grid(3, model.grid_dim()).unwrap();
    let targets = p.targets::<f64>();
    let flat: Vec<f64> = ids.iter().flat_map(|&id| model.store().value(id).data().to_vec()).collect();
    let mut m = model.clone();
    central_diff(
        &mut |xs| {
            let mut off = 0;
            for &id in ids {
                let n = m.store().value(id).len();
                m.store_mut().get_mut(id).value.data_mut().copy_from_slice(&xs[off..off + n]);
                off += n;
            }
            let batch = p.batch(&targets);
            let mut g = Graph::inference();
            let lg = multiview_loss_graph(&m, &mut g, &batch, &grid, Backend::Indexed).unwrap();
            g.value(lg.loss).item()
        },
        &flat,
    )
}

pub fn all_params<T: Real>(m: &ProprioModel<T>) -> Vec<ParamId> {
    m.store().ids().collect()
}

pub fn matmul_both_operands() {
    check_op("matmul lhs", &[3, 4], |s| {
        Box::new(move |g, x| {
            let b = constant(g, s, &[4, 5]);
            let y = g.matmul(x, b).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("matmul rhs", &[4, 5], |s| {
        Box::new(move |g, x| {
            let a = constant(g, s, &[3, 4]);
            let y = g.matmul(a, x).unwrap();
            weighted_sum(g, y, s)
        })
    });
}

pub fn bias_add_both_operands() {
    check_op("bias_add x", &[3, 4], |s| {
        Box::new(move |g, x| {
            let b = constant(g, s, &[4]);
            let y = g.bias_add(x, b).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("bias_add b", &[4], |s| {
        Box::new(move |g, b| {
            let x = constant(g, s, &[3, 4]);
            let y = g.bias_add(x, b).unwrap();
            weighted_sum(g, y, s)
        })
    });
}

pub fn elementwise_ops() {
    check_op("add", &[2, 5], |s| {
        Box::new(move |g, x| {
            let c = constant(g, s, &[2, 5]);
            let y = g.add(x, c).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("mul", &[2, 5], |s| {
        Box::new(move |g, x| {
            let c = constant(g, s, &[2, 5]);
            let y = g.mul(c, x).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("mul self", &[7], |s| {
        Box::new(move |g, x| {
            let y = g.mul(x, x).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("scale", &[6], |s| {
        Box::new(move |g, x| {
            let y = g.scale(x, -1.7).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("relu", &[4, 6], |s| {
        Box::new(move |g, x| {
            let y = g.relu(x).unwrap();
            weighted_sum(g, y, s)
        })
    });
}

pub fn reductions_and_reshapes() {
    check_op("sum", &[3, 3], |_| {
        Box::new(|g, x| {
            let y = g.mul(x, x).unwrap();
            g.sum(y).unwrap()
        })
    });
    check_op("mean", &[3, 3], |_| {
        Box::new(|g, x| {
            let y = g.mul(x, x).unwrap();
            g.mean(y).unwrap()
        })
    });
    check_op("reshape", &[2, 6], |s| {
        Box::new(move |g, x| {
            let y = g.reshape(x, vec![3, 4]).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("flatten", &[2, 2, 3], |s| {
        Box::new(move |g, x| {
            let y = g.flatten(x).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("select_rows", &[4, 3], |s| {
        Box::new(move |g, x| {
            let y = g.select_rows(x, &[2, 0, 2, 3]).unwrap();
            weighted_sum(g, y, s)
        })
    });
}

pub fn broadcast_ops() {
    check_op("tile_add bias", &[5, 3], |s| {
        Box::new(move |g, b| {
            let c = constant(g, s, &[2, 3]);
            let y = g.tile_add(b, c).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("tile_add codes", &[2, 3], |s| {
        Box::new(move |g, c| {
            let b = constant(g, s, &[5, 3]);
            let y = g.tile_add(b, c).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("tile_concat grid", &[4, 2], |s| {
        Box::new(move |g, grid| {
            let c = constant(g, s, &[3, 3]);
            let y = g.tile_concat(grid, c).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("tile_concat codes", &[3, 3], |s| {
        Box::new(move |g, c| {
            let grid = constant(g, s, &[4, 2]);
            let y = g.tile_concat(grid, c).unwrap();
            weighted_sum(g, y, s)
        })
    });
}

pub fn convolution_operands() {
    let spec = Conv2dSpec { stride: 1, padding: 1 };
    check_op("conv2d input", &[2, 2, 5, 4], move |s| {
        Box::new(move |g, x| {
            let w = constant(g, s, &[3, 2, 3, 3]);
            let b = constant(g, s + 1, &[3]);
            let y = g.conv2d(x, w, b, spec).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("conv2d weight", &[3, 2, 3, 3], move |s| {
        Box::new(move |g, w| {
            let x = constant(g, s, &[2, 2, 5, 4]);
            let b = constant(g, s + 1, &[3]);
            let y = g.conv2d(x, w, b, spec).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("conv2d bias", &[3], move |s| {
        Box::new(move |g, b| {
            let x = constant(g, s, &[2, 2, 5, 4]);
            let w = constant(g, s + 1, &[3, 2, 3, 3]);
            let y = g.conv2d(x, w, b, Conv2dSpec { stride: 2, padding: 0 }).unwrap();
            weighted_sum(g, y, s)
        })
    });
    check_op("max_pool2", &[2, 3, 4, 5], |s| {
        Box::new(move |g, x| {
            let y = g.max_pool2(x).unwrap();
            weighted_sum(g, y, s)
        })
    });
}

pub fn chamfer_op() {
    // The central difference of |x - q| is off by about h^2 / (6 d^2)
    // relative, so the clouds live in a box wide enough to keep matched
    // distances well above 0.04.
    for backend in [Backend::Brute, Backend::Indexed] {
        check_op_scaled("chamfer", &[2 * 64, 3], 10.0, move |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s + 100);
            let t: Vec<Vec<[f64; 3]>> = (0..2)
                .map(|_| (0..80).map(|_| [0; 3].map(|_| rng.gen_range(-10.0..10.0))).collect())
                .collect();
            Box::new(move |g, x| {
                let targets: Vec<&[[f64; 3]]> = t.iter().map(|v| v.as_slice()).collect();
                g.chamfer(x, &targets, 0.5, backend).unwrap().0
            })
        });
    }
}

/// Checks the full loss gradient on `CONFIGS` accepted configurations and
/// returns the worst relative error.
pub fn pipeline_check(variant: DecoderVariant) -> f64 {
    let mut accepted = 0;
    let mut worst = 0.0f64;
    for seed in 0..2000u64 {
        let model = tiny_model::<f64>(variant, 2, seed);
        let p = Pipeline::new(seed, 2);
        let ids = all_params(&model);
        let (analytic, margin) = pipeline_grad(&model, &p, &ids);
        if margin < 10.0 * H {
            continue;
        }
        let numeric = pipeline_fd(&model, &p, &ids);
        let e = rel_err(&analytic, &numeric);
        assert!(e <= 1e-6, "{variant:?} seed {seed}: relative error {e:e}");
        worst = worst.max(e);
        accepted += 1;
        if accepted == CONFIGS {
            break;
        }
    }
    assert_eq!(accepted, CONFIGS, "{variant:?}: too many configurations near a kink");
    worst
}

/// Every single-op check.
pub fn op_checks() {
    matmul_both_operands();
    bias_add_both_operands();
    elementwise_ops();
    reductions_and_reshapes();
    broadcast_ops();
    convolution_operands();
    chamfer_op();
}
