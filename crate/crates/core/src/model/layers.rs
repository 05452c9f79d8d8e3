use rand::Rng;

use crate::error::Result;
use crate::numcore::{Conv2dSpec, Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights drawn in double
/// precision, then cast.
fn fan_in_uniform<T: Real, R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
}

/// `x @ W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), fan_in_uniform(vec![input, output], input, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![output]));
        Linear {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        let y = g.matmul(x, w)?;
        g.bias_add(y, b)
    }
}

/// Share-weight MLP: ReLU after every layer but the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, input: usize, widths: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut i = input;
        for (n, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.{n}"), i, w, rng));
            i = w;
        }
        Mlp { layers }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mut x: Var) -> Result<Var> {
        for (n, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if n + 1 < self.layers.len() {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}

/// 3x3 convolution (padding 1) followed by ReLU and 2x2 max pooling.
#[derive(Debug, Clone)]
pub struct ConvStage {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvStage {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let fan_in = input * 9;
        let weight = store.add(format!("{name}.weight"), fan_in_uniform(vec![output, input, 3, 3], fan_in, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![output]));
        ConvStage { weight, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        let y = g.conv2d(x, w, b, Conv2dSpec { stride: 1, padding: 1 })?;
        // max-pooling commutes with ReLU; pooling first keeps pooling ties
        // off the clamped zeros
        let y = g.max_pool2(y)?;
        g.relu(y)
    }
}
