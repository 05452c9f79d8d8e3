//! Arena-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order and only ever reference earlier
//! nodes, so the recorded graph is acyclic by construction and backward is a
//! single reverse sweep over the arena.

use std::collections::HashMap;

use super::linalg::{gemm, MatRef};
use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{chamfer_value_grad, Backend};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Stride/padding of a 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec { stride: 1, padding: 0 }
    }
}

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    SelectRows(Var, Vec<usize>),
    TileAdd { bias: Var, codes: Var },
    TileConcat { grid: Var, codes: Var },
    Conv2d { input: Var, weight: Var, bias: Var, spec: Conv2dSpec },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Chamfer { pred: Var, local_grad: Tensor<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::BiasAdd(..) => "bias_add",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::SelectRows(..) => "select_rows",
            Op::TileAdd { .. } => "tile_add",
            Op::TileConcat { .. } => "tile_concat",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "max_pool2",
            Op::Chamfer { .. } => "chamfer",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    record: bool,
    checked: bool,
    // smallest |pre-activation| / pooling gap / pairing gap seen so far
    kink_margin: f64,
}

/// Result of [`Graph::backward`]: gradients of the root w.r.t. every leaf
/// that requires them.
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Add parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }
}

impl<T: Real> Graph<T> {
    /// A graph that records ops for backward.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            record: true,
            checked: false,
            kink_margin: f64::INFINITY,
        }
    }

    /// A graph for inference: values only, `backward` is unavailable.
    pub fn inference() -> Self {
        Graph {
            record: false,
            ..Self::new()
        }
    }

    /// In checked mode every op rejects non-finite inputs and outputs.
    pub fn checked(mut self, on: bool) -> Self {
        self.checked = on;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Distance of the current evaluation point from the nearest kink of a
    /// piecewise op (ReLU at zero, max-pool ties, Chamfer pairing switches).
    /// Finite differences are only meaningful when this is well above `h`.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad || matches!(op, Op::Param) { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check_inputs(&self, op: &'static str, inputs: &[Var]) -> Result<()> {
        if self.checked {
            for v in inputs {
                if !self.nodes[v.0].value.is_finite() {
                    return Err(Error::NonFinite(format!("input of {op}")));
                }
            }
        }
        Ok(())
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, &[])
    }

    /// Leaf whose gradient is reported by `backward`.
    pub fn variable(&mut self, value: Tensor<T>) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::NonFinite("variable".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: self.record,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf bound to a stored parameter; repeated calls reuse one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let p = store.get(id);
        if self.checked && !p.value.is_finite() {
            return Err(Error::NonFinite(format!("parameter {}", p.name)));
        }
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param,
            requires_grad: self.record && p.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        Ok(v)
    }

    /// `[n, k] @ [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_inputs("matmul", &[a, b])?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); n * m];
        gemm(
            T::one(),
            MatRef::row_major(self.value(a).data(), n, k),
            MatRef::row_major(self.value(b).data(), k, m),
            T::zero(),
            &mut out,
        );
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a `[m]` bias along the last axis of `x`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check_inputs("bias_add", &[x, b])?;
        let (sx, sb) = (self.shape(x), self.shape(b));
        let m = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != m || m == 0 {
            return Err(Error::shape("bias_add", sx, sb));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        for row in out.data_mut().chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        self.push(out, Op::BiasAdd(x, b), &[x, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_inputs("add", &[a, b])?;
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_inputs("mul", &[a, b])?;
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.check_inputs("scale", &[x])?;
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| a * s).collect())?;
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check_inputs("relu", &[x])?;
        let v = self.value(x);
        let mut margin = f64::INFINITY;
        let data = v
            .data()
            .iter()
            .map(|&a| {
                margin = margin.min(a.abs().as_f64());
                if a > T::zero() {
                    a
                } else {
                    T::zero()
                }
            })
            .collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        if self.record {
            self.kink_margin = self.kink_margin.min(margin);
        }
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_inputs("sum", &[x])?;
        let s = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check_inputs("mean", &[x])?;
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::invalid("mean of empty tensor"));
        }
        let s = v.data().iter().fold(T::zero(), |acc, &a| acc + a) / T::of(v.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape(x), &[x])
    }

    /// Flattens everything after the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let lead = s.first().copied().unwrap_or(1);
        let rest = s.iter().skip(1).product::<usize>();
        self.reshape(x, vec![lead, rest])
    }

    /// Gathers rows of the leading axis.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.is_empty() || rows.iter().any(|&r| r >= s[0]) {
            return Err(Error::invalid(format!("select_rows {rows:?} out of range for {s:?}")));
        }
        let width: usize = s[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(&v.data()[r * width..(r + 1) * width]);
        }
        let mut shape = s.to_vec();
        shape[0] = rows.len();
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::SelectRows(x, rows.to_vec()), &[x])
    }

    /// Broadcast sum `[M, K] + [B, K] -> [B*M, K]`; row `b*M + j` is
    /// `bias[j] + codes[b]`.
    pub fn tile_add(&mut self, bias: Var, codes: Var) -> Result<Var> {
        self.check_inputs("tile_add", &[bias, codes])?;
        let (sb, sc) = (self.shape(bias), self.shape(codes));
        if sb.len() != 2 || sc.len() != 2 || sb[1] != sc[1] {
            return Err(Error::shape("tile_add", sb, sc));
        }
        let (m, k, b) = (sb[0], sb[1], sc[0]);
        let (bd, cd) = (self.value(bias).data(), self.value(codes).data());
        let mut data = Vec::with_capacity(b * m * k);
        for bi in 0..b {
            let c = &cd[bi * k..(bi + 1) * k];
            for j in 0..m {
                data.extend(bd[j * k..(j + 1) * k].iter().zip(c).map(|(&x, &y)| x + y));
            }
        }
        let out = Tensor::new(vec![b * m, k], data)?;
        self.push(out, Op::TileAdd { bias, codes }, &[bias, codes])
    }

    /// Broadcast concatenation `[M, D] ++ [B, K] -> [B*M, D+K]`; row
    /// `b*M + j` is `[grid[j], codes[b]]`.
    pub fn tile_concat(&mut self, grid: Var, codes: Var) -> Result<Var> {
        self.check_inputs("tile_concat", &[grid, codes])?;
        let (sg, sc) = (self.shape(grid), self.shape(codes));
        if sg.len() != 2 || sc.len() != 2 {
            return Err(Error::shape("tile_concat", sg, sc));
        }
        let (m, d, b, k) = (sg[0], sg[1], sc[0], sc[1]);
        let (gd, cd) = (self.value(grid).data(), self.value(codes).data());
        let mut data = Vec::with_capacity(b * m * (d + k));
        for bi in 0..b {
            for j in 0..m {
                data.extend_from_slice(&gd[j * d..(j + 1) * d]);
                data.extend_from_slice(&cd[bi * k..(bi + 1) * k]);
            }
        }
        let out = Tensor::new(vec![b * m, d + k], data)?;
        self.push(out, Op::TileConcat { grid, codes }, &[grid, codes])
    }

    /// NCHW convolution with an `[O, C, kh, kw]` kernel and `[O]` bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: Conv2dSpec) -> Result<Var> {
        self.check_inputs("conv2d", &[input, weight, bias])?;
        let (sx, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(Error::shape("conv2d", sx, sw));
        }
        if spec.stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let geo = ConvGeom::new(sx, sw, spec)?;
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![T::zero(); geo.batch * geo.out_c * geo.out_hw()];
        let mut cols = vec![T::zero(); geo.ckk() * geo.out_hw()];
        for n in 0..geo.batch {
            geo.unfold(&x[n * geo.in_len()..(n + 1) * geo.in_len()], &mut cols);
            let o = &mut out[n * geo.out_len()..(n + 1) * geo.out_len()];
            gemm(
                T::one(),
                MatRef::row_major(w, geo.out_c, geo.ckk()),
                MatRef::row_major(&cols, geo.ckk(), geo.out_hw()),
                T::zero(),
                o,
            );
            for (oc, row) in o.chunks_mut(geo.out_hw()).enumerate() {
                row.iter_mut().for_each(|v| *v += b[oc]);
            }
        }
        let shape = vec![geo.batch, geo.out_c, geo.out_h, geo.out_w];
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            &[input, weight, bias],
        )
    }

    /// 2x2 max pooling with stride 2 over NCHW input (odd trailing rows and
    /// columns are dropped). Ties go to the first element in scan order.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        self.check_inputs("max_pool2", &[input])?;
        let s = self.shape(input).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::shape("max_pool2", &s, &[2, 2]));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(nc * oh * ow);
        let mut argmax = Vec::with_capacity(nc * oh * ow);
        let mut margin = f64::INFINITY;
        for plane in 0..nc {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let cand = [
                        base + 2 * oy * w + 2 * ox,
                        base + 2 * oy * w + 2 * ox + 1,
                        base + (2 * oy + 1) * w + 2 * ox,
                        base + (2 * oy + 1) * w + 2 * ox + 1,
                    ];
                    let mut best = cand[0];
                    for &c in &cand[1..] {
                        if x[c] > x[best] {
                            best = c;
                        }
                    }
                    for &c in &cand {
                        if c != best {
                            margin = margin.min((x[best] - x[c]).as_f64());
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        if self.record {
            self.kink_margin = self.kink_margin.min(margin);
        }
        let out = Tensor::new(vec![s[0], s[1], oh, ow], out)?;
        self.push(out, Op::MaxPool2 { input, argmax }, &[input])
    }

    /// Weighted sum of per-sample Chamfer distances.
    ///
    /// `pred` is `[S*M, 3]`, holding `S` consecutive predicted clouds of `M`
    /// points; `targets[s]` is the ground truth for sample `s`. Returns the
    /// scalar `weight * sum_s chamfer(pred_s, targets[s])` and the unweighted
    /// per-sample values. Nearest-neighbour pairings are held fixed in
    /// backward.
    pub fn chamfer(
        &mut self,
        pred: Var,
        targets: &[&[[T; 3]]],
        weight: T,
        backend: Backend,
    ) -> Result<(Var, Vec<T>)> {
        self.check_inputs("chamfer", &[pred])?;
        let s = self.shape(pred).to_vec();
        let samples = targets.len();
        if s.len() != 2 || s[1] != 3 || samples == 0 || s[0] % samples != 0 || s[0] == 0 {
            return Err(Error::shape("chamfer", &s, &[samples, 3]));
        }
        let m = s[0] / samples;
        let points: &[[T; 3]] = as_points(self.value(pred).data());
        let mut total = T::zero();
        let mut values = Vec::with_capacity(samples);
        let mut local = Vec::with_capacity(s[0] * 3);
        let mut margin = f64::INFINITY;
        for (i, tgt) in targets.iter().enumerate() {
            let r = chamfer_value_grad(&points[i * m..(i + 1) * m], tgt, backend)?;
            margin = margin.min(r.pairing_margin);
            total += r.value;
            values.push(r.value);
            local.extend(r.grad.iter().flat_map(|g| g.map(|c| c * weight)));
        }
        if self.record {
            self.kink_margin = self.kink_margin.min(margin);
        }
        let local_grad = Tensor::new(s.clone(), local)?;
        let v = self.push(
            Tensor::scalar(total * weight),
            Op::Chamfer { pred, local_grad },
            &[pred],
        )?;
        Ok((v, values))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Gradients of a scalar `root` w.r.t. all leaves that require them.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if !self.record {
            return Err(Error::NotRecording);
        }
        let rs = self.shape(root);
        if self.value(root).len() != 1 {
            return Err(Error::NonScalarRoot(rs.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rs.to_vec(), T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort();
        // Keep leaf gradients only.
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf | Op::Param) {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            by_node: grads,
            params,
        })
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let dy = MatRef::row_major(g.data(), n, m);
                if needs(a) {
                    let mut da = vec![T::zero(); n * k];
                    gemm(T::one(), dy, MatRef::row_major(self.value(*b).data(), k, m).t(), T::zero(), &mut da);
                    accumulate(grads, *a, Tensor::new(vec![n, k], da)?)?;
                }
                if needs(b) {
                    let mut db = vec![T::zero(); k * m];
                    gemm(T::one(), MatRef::row_major(self.value(*a).data(), n, k).t(), dy, T::zero(), &mut db);
                    accumulate(grads, *b, Tensor::new(vec![k, m], db)?)?;
                }
            }
            Op::BiasAdd(x, b) => {
                if needs(x) {
                    accumulate(grads, *x, g.clone())?;
                }
                if needs(b) {
                    let m = self.shape(*b)[0];
                    let mut db = vec![T::zero(); m];
                    for row in g.data().chunks(m) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, Tensor::from_vec(db))?;
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if needs(b) {
                    accumulate(grads, *b, g.clone())?;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(a) {
                    let d = zip_map(g.data(), vb.data(), |x, y| x * y);
                    accumulate(grads, *a, Tensor::new(va.shape().to_vec(), d)?)?;
                }
                if needs(b) {
                    let d = zip_map(g.data(), va.data(), |x, y| x * y);
                    accumulate(grads, *b, Tensor::new(vb.shape().to_vec(), d)?)?;
                }
            }
            Op::Scale(x, s) => {
                let d = g.data().iter().map(|&v| v * *s).collect();
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?)?;
            }
            Op::Relu(x) => {
                let d = zip_map(g.data(), self.value(*x).data(), |gv, xv| {
                    if xv > T::zero() {
                        gv
                    } else {
                        T::zero()
                    }
                });
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?)?;
            }
            Op::Sum(x) => {
                let s = self.shape(*x).to_vec();
                accumulate(grads, *x, Tensor::full(s, g.item()))?;
            }
            Op::Mean(x) => {
                let v = self.value(*x);
                let each = g.item() / T::of(v.len() as f64);
                accumulate(grads, *x, Tensor::full(v.shape().to_vec(), each))?;
            }
            Op::Reshape(x) => {
                let s = self.shape(*x).to_vec();
                accumulate(grads, *x, g.clone().reshape(s)?)?;
            }
            Op::SelectRows(x, rows) => {
                let s = self.shape(*x).to_vec();
                let width: usize = s[1..].iter().product();
                let mut d = Tensor::zeros(s);
                let dd = d.data_mut();
                for (k, &r) in rows.iter().enumerate() {
                    for (o, &v) in dd[r * width..(r + 1) * width]
                        .iter_mut()
                        .zip(&g.data()[k * width..(k + 1) * width])
                    {
                        *o += v;
                    }
                }
                accumulate(grads, *x, d)?;
            }
            Op::TileAdd { bias, codes } => {
                let (m, k) = (self.shape(*bias)[0], self.shape(*bias)[1]);
                let b = self.shape(*codes)[0];
                let gd = g.data();
                if needs(bias) {
                    let mut d = vec![T::zero(); m * k];
                    for bi in 0..b {
                        for (o, &v) in d.iter_mut().zip(&gd[bi * m * k..(bi + 1) * m * k]) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *bias, Tensor::new(vec![m, k], d)?)?;
                }
                if needs(codes) {
                    let mut d = vec![T::zero(); b * k];
                    for bi in 0..b {
                        let dst = &mut d[bi * k..(bi + 1) * k];
                        for row in gd[bi * m * k..(bi + 1) * m * k].chunks(k) {
                            for (o, &v) in dst.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                    accumulate(grads, *codes, Tensor::new(vec![b, k], d)?)?;
                }
            }
            Op::TileConcat { grid, codes } => {
                let (m, dg) = (self.shape(*grid)[0], self.shape(*grid)[1]);
                let (b, k) = (self.shape(*codes)[0], self.shape(*codes)[1]);
                let w = dg + k;
                let gd = g.data();
                if needs(grid) {
                    let mut d = vec![T::zero(); m * dg];
                    for bi in 0..b {
                        for j in 0..m {
                            let row = &gd[(bi * m + j) * w..(bi * m + j) * w + dg];
                            for (o, &v) in d[j * dg..(j + 1) * dg].iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                    accumulate(grads, *grid, Tensor::new(vec![m, dg], d)?)?;
                }
                if needs(codes) {
                    let mut d = vec![T::zero(); b * k];
                    for bi in 0..b {
                        for j in 0..m {
                            let row = &gd[(bi * m + j) * w + dg..(bi * m + j + 1) * w];
                            for (o, &v) in d[bi * k..(bi + 1) * k].iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                    accumulate(grads, *codes, Tensor::new(vec![b, k], d)?)?;
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let geo = ConvGeom::new(self.shape(*input), self.shape(*weight), *spec)?;
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                let gd = g.data();
                let mut dx = needs(input).then(|| vec![T::zero(); x.len()]);
                let mut dw = needs(weight).then(|| vec![T::zero(); w.len()]);
                let mut cols = vec![T::zero(); geo.ckk() * geo.out_hw()];
                let mut dcols = vec![T::zero(); geo.ckk() * geo.out_hw()];
                for n in 0..geo.batch {
                    let dy = MatRef::row_major(&gd[n * geo.out_len()..(n + 1) * geo.out_len()], geo.out_c, geo.out_hw());
                    if let Some(dw) = dw.as_mut() {
                        geo.unfold(&x[n * geo.in_len()..(n + 1) * geo.in_len()], &mut cols);
                        gemm(T::one(), dy, MatRef::row_major(&cols, geo.ckk(), geo.out_hw()).t(), T::one(), dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(T::one(), MatRef::row_major(w, geo.out_c, geo.ckk()).t(), dy, T::zero(), &mut dcols);
                        geo.fold(&dcols, &mut dx[n * geo.in_len()..(n + 1) * geo.in_len()]);
                    }
                }
                if let Some(dx) = dx {
                    accumulate(grads, *input, Tensor::new(self.shape(*input).to_vec(), dx)?)?;
                }
                if let Some(dw) = dw {
                    accumulate(grads, *weight, Tensor::new(self.shape(*weight).to_vec(), dw)?)?;
                }
                if needs(bias) {
                    let mut db = vec![T::zero(); geo.out_c];
                    for n in 0..geo.batch {
                        let img = &gd[n * geo.out_len()..(n + 1) * geo.out_len()];
                        for (oc, row) in img.chunks(geo.out_hw()).enumerate() {
                            db[oc] += row.iter().fold(T::zero(), |a, &v| a + v);
                        }
                    }
                    accumulate(grads, *bias, Tensor::from_vec(db))?;
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut d = Tensor::zeros(self.shape(*input).to_vec());
                let dd = d.data_mut();
                for (&src, &v) in argmax.iter().zip(g.data()) {
                    dd[src] += v;
                }
                accumulate(grads, *input, d)?;
            }
            Op::Chamfer { pred, local_grad } => {
                let s = g.item();
                let d = local_grad.data().iter().map(|&v| v * s).collect();
                accumulate(grads, *pred, Tensor::new(local_grad.shape().to_vec(), d)?)?;
            }
        }
        Ok(())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Views a flat `[N*3]` buffer as `N` points.
pub(crate) fn as_points<T>(data: &[T]) -> &[[T; 3]] {
    assert_eq!(data.len() % 3, 0);
    // SAFETY: [T; 3] has the same layout as three consecutive T.
    unsafe { std::slice::from_raw_parts(data.as_ptr() as *const [T; 3], data.len() / 3) }
}

struct ConvGeom {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    spec: Conv2dSpec,
}

impl ConvGeom {
    fn new(sx: &[usize], sw: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let (kh, kw) = (sw[2], sw[3]);
        let ph = sx[2] + 2 * spec.padding;
        let pw = sx[3] + 2 * spec.padding;
        if kh == 0 || kw == 0 || ph < kh || pw < kw {
            return Err(Error::shape("conv2d", sx, sw));
        }
        Ok(ConvGeom {
            batch: sx[0],
            in_c: sx[1],
            in_h: sx[2],
            in_w: sx[3],
            out_c: sw[0],
            kh,
            kw,
            out_h: (ph - kh) / spec.stride + 1,
            out_w: (pw - kw) / spec.stride + 1,
            spec,
        })
    }

    fn ckk(&self) -> usize {
        self.in_c * self.kh * self.kw
    }
    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }
    fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }
    fn out_len(&self) -> usize {
        self.out_c * self.out_hw()
    }

    /// Source index for (channel, ky, kx, oy, ox), or None in the padding.
    #[inline]
    fn src(&self, c: usize, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.spec.stride + ky) as isize - self.spec.padding as isize;
        let x = (ox * self.spec.stride + kx) as isize - self.spec.padding as isize;
        if y < 0 || x < 0 || y >= self.in_h as isize || x >= self.in_w as isize {
            return None;
        }
        Some((c * self.in_h + y as usize) * self.in_w + x as usize)
    }

    /// im2col: `[C*kh*kw, out_h*out_w]`.
    fn unfold<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let hw = self.out_hw();
        for c in 0..self.in_c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * hw;
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            cols[row + oy * self.out_w + ox] = match self.src(c, ky, kx, oy, ox) {
                                Some(i) => x[i],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `unfold`: scatter-add columns back into the image.
    fn fold<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let hw = self.out_hw();
        for c in 0..self.in_c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * hw;
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some(i) = self.src(c, ky, kx, oy, ox) {
                                dx[i] += cols[row + oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}
