use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub numeric: Vec<f64>,
}

/// Compares an analytic gradient against central differences of `f` at
/// `point` with step `h`.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    point: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<GradCheckReport> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    if analytic.len() != point.len() {
        return Err(Error::shape("grad_check", &[point.len()], &[analytic.len()]));
    }
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    let mut worst = (0.0f64, 0usize);
    for i in 0..point.len() {
        let x0 = x[i];
        x[i] = x0 + h;
        let fp = f(&x)?;
        x[i] = x0 - h;
        let fm = f(&x)?;
        x[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("grad_check evaluation at coordinate {i}")));
        }
        let n = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - n).abs() / analytic[i].abs().max(1.0);
        if err > worst.0 {
            worst = (err, i);
        }
        numeric.push(n);
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        numeric,
    })
}

/// Gradient check of a graph-built scalar function of one input tensor,
/// in double precision.
pub fn check_graph_fn(
    build: impl Fn(&mut Graph<f64>, Var) -> Result<Var>,
    point: &Tensor<f64>,
    h: f64,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let x = g.variable(point.clone())?;
    let root = build(&mut g, x)?;
    let grads = g.backward(root)?;
    let analytic = grads
        .wrt(x)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; point.len()]);
    let shape = point.shape().to_vec();
    grad_check(
        |xs| {
            let mut g = Graph::inference();
            let x = g.input(Tensor::new(shape.clone(), xs.to_vec())?)?;
            let root = build(&mut g, x)?;
            Ok(g.value(root).item())
        },
        point.data(),
        &analytic,
        h,
    )
}
